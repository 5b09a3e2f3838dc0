//! Episode metrics and their aggregation over episodes and seeds.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::agent::EpisodeTrace;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub len: usize,
    pub r_each: f64,
    pub r_traj: f64,
}

impl EpisodeMetrics {
    pub fn from_rewards(rewards: &[f64]) -> Self {
        let r_traj: f64 = rewards.iter().sum();
        let len = rewards.len();
        let r_each = if len == 0 { 0.0 } else { r_traj / len as f64 };
        Self { len, r_each, r_traj }
    }

    pub fn from_trace(trace: &EpisodeTrace) -> Self {
        Self::from_rewards(&trace.steps.iter().map(|s| s.reward).collect::<Vec<_>>())
    }
}

/// `|len * r_each - r_traj| / r_traj`: how far a reported row is from
/// satisfying the metric identity.
pub fn identity_gap(len: f64, r_each: f64, r_traj: f64) -> f64 {
    (len * r_each - r_traj).abs() / r_traj.abs()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedMetrics {
    pub seed: u64,
    pub n_episodes: usize,
    pub n_aborted: usize,
    pub len: f64,
    pub r_each: f64,
    pub r_traj: f64,
    pub episodes: Vec<EpisodeMetrics>,
}

fn mean(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = xs.clone().count();
    if n == 0 { 0.0 } else { xs.sum::<f64>() / n as f64 }
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let m = mean(xs.iter().copied());
    let var = mean(xs.iter().map(|x| (x - m) * (x - m)));
    (m, var.sqrt())
}

/// Episode means per seed, then mean and population std across seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub len_mean: f64,
    pub len_std: f64,
    pub r_each_mean: f64,
    pub r_each_std: f64,
    pub r_traj_mean: f64,
    pub r_traj_std: f64,
    pub n_episodes: usize,
    pub n_seeds: usize,
    pub n_aborted: usize,
    pub per_seed: Vec<SeedMetrics>,
}

impl MetricsReport {
    /// Aborted episodes are counted but left out of the means. Seeds with
    /// no completed episode are left out of the cross-seed statistics.
    pub fn from_traces(runs: &[(u64, &[EpisodeTrace])]) -> Self {
        let seeds = runs
            .iter()
            .map(|(seed, traces)| {
                let done: Vec<EpisodeMetrics> =
                    traces.iter().filter(|t| t.aborted.is_none()).map(EpisodeMetrics::from_trace).collect();
                (*seed, done, traces.iter().filter(|t| t.aborted.is_some()).count())
            })
            .collect::<Vec<_>>();
        Self::from_episodes(seeds)
    }

    pub fn from_episodes(runs: Vec<(u64, Vec<EpisodeMetrics>, usize)>) -> Self {
        let per_seed: Vec<SeedMetrics> = runs
            .into_iter()
            .map(|(seed, episodes, n_aborted)| SeedMetrics {
                seed,
                n_episodes: episodes.len(),
                n_aborted,
                len: mean(episodes.iter().map(|e| e.len as f64)),
                r_each: mean(episodes.iter().map(|e| e.r_each)),
                r_traj: mean(episodes.iter().map(|e| e.r_traj)),
                episodes,
            })
            .collect();
        let counted: Vec<&SeedMetrics> = per_seed.iter().filter(|s| s.n_episodes > 0).collect();
        let col = |f: fn(&SeedMetrics) -> f64| mean_std(&counted.iter().map(|s| f(s)).collect::<Vec<_>>());
        let (len_mean, len_std) = col(|s| s.len);
        let (r_each_mean, r_each_std) = col(|s| s.r_each);
        let (r_traj_mean, r_traj_std) = col(|s| s.r_traj);
        Self {
            len_mean,
            len_std,
            r_each_mean,
            r_each_std,
            r_traj_mean,
            r_traj_std,
            n_episodes: per_seed.iter().map(|s| s.n_episodes).sum(),
            n_seeds: counted.len(),
            n_aborted: per_seed.iter().map(|s| s.n_aborted).sum(),
            per_seed,
        }
    }

    pub fn table_row(&self, label: &str) -> String {
        format!(
            "{label:<14} {:>8.3} ± {:<7.3} {:>7.3} ± {:<7.3} {:>8.3} ± {:<7.3} {:>5} {:>3}",
            self.len_mean,
            self.len_std,
            self.r_each_mean,
            self.r_each_std,
            self.r_traj_mean,
            self.r_traj_std,
            self.n_episodes,
            self.n_aborted
        )
    }

    pub fn table_header() -> String {
        format!(
            "{:<14} {:>18} {:>17} {:>18} {:>5} {:>3}",
            "policy", "Len", "R_each", "R_traj", "eps", "ab"
        )
    }

    pub fn to_text(&self, label: &str) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{}", Self::table_header());
        let _ = writeln!(out, "{}", self.table_row(label));
        for s in &self.per_seed {
            let _ = writeln!(
                out,
                "  seed {:<20} Len {:.3}  R_each {:.3}  R_traj {:.3}  ({} episodes, {} aborted)",
                s.seed, s.len, s.r_each, s.r_traj, s.n_episodes, s.n_aborted
            );
        }
        out
    }
}
