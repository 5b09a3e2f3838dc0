//! Monte-Carlo state values and the Critic variance study.

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::agent::{Agent, CallSeeds, FrozenActor, Policy};
use crate::env::{Environment, State};
use crate::memory::Memories;
use crate::parallel::{derive_seed, map_range, stream, Execution};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub samples: Vec<f64>,
    pub mean: f64,
    /// Unbiased sample variance; 0 for a single sample.
    pub variance: f64,
}

impl McEstimate {
    pub fn from_samples(samples: Vec<f64>) -> Self {
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let variance =
            if samples.len() > 1 { samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0) } else { 0.0 };
        Self { samples, mean, variance }
    }
}

fn rollout<P: Policy>(env: &Environment, policy: &P, state: &State, gamma: f64, seed: u64) -> Result<f64, HarnessError> {
    let mut s = state.clone();
    let mut ret = 0.0;
    let mut discount = 1.0;
    let mut k = 0u64;
    while !s.done {
        let action = policy.choose(env, &s, derive_seed(seed, stream::ROLLOUT, k))?;
        let out = env.step(&s, &action)?;
        ret += discount * out.reward;
        discount *= gamma;
        k += 1;
        s = out.next_state;
    }
    Ok(ret)
}

/// `n` rollouts of `policy` from `state`, each returning `Σ γ^k r_k`.
pub fn mc_state_value<P: Policy>(
    env: &Environment,
    policy: &P,
    state: &State,
    n: usize,
    gamma: f64,
    seed: u64,
    exec: Execution,
) -> Result<McEstimate, HarnessError> {
    if n == 0 {
        return Err(HarnessError::Invalid("need at least one rollout".into()));
    }
    let samples = map_range(exec, n, |i| rollout(env, policy, state, gamma, derive_seed(seed, stream::ROLLOUT, i as u64)))
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    Ok(McEstimate::from_samples(samples))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub user_id: String,
    pub state_digest: String,
    pub step_index: usize,
    pub mc_mean: f64,
    /// Variance of a single rollout's return.
    pub mc_variance: f64,
    pub critic_mean: f64,
    /// Variance across repeated Critic estimates.
    pub critic_variance: f64,
    pub bias: f64,
    /// `bias / mc_mean`; 0 when the MC mean is 0.
    pub relative_bias: f64,
    pub n_mc: usize,
    pub n_critic: usize,
}

/// For each probe state, the MC return distribution under the agent's own
/// frozen policy against `n_critic` repeated Critic estimates.
#[allow(clippy::too_many_arguments)]
pub fn critic_variance_study(
    env: &Environment,
    agent: &Agent,
    memories: &Memories,
    probes: &[State],
    n_mc: usize,
    n_critic: usize,
    seed: u64,
    exec: Execution,
) -> Result<Vec<ProbeReport>, HarnessError> {
    if probes.is_empty() || n_critic == 0 {
        return Err(HarnessError::Invalid("need at least one probe state and one critic estimate".into()));
    }
    let policy = FrozenActor { agent, memories };
    probes
        .iter()
        .enumerate()
        .map(|(p, state)| {
            let probe_seed = derive_seed(seed, stream::CRITIC_REPEAT, p as u64);
            let mc = mc_state_value(env, &policy, state, n_mc, agent.config().gamma, probe_seed, exec)?;
            let values = map_range(exec, n_critic, |j| {
                let mut seeds = CallSeeds::new(derive_seed(probe_seed, stream::CRITIC_REPEAT, j as u64));
                agent.estimate_value(env, memories, state, &mut seeds).map(|(v, _)| v)
            })
            .into_iter()
            .collect::<Result<Vec<_>, _>>()?;
            let critic = McEstimate::from_samples(values);
            let bias = critic.mean - mc.mean;
            Ok(ProbeReport {
                user_id: state.user_id.clone(),
                state_digest: state.digest(),
                step_index: state.step_index,
                mc_mean: mc.mean,
                mc_variance: mc.variance,
                critic_mean: critic.mean,
                critic_variance: critic.variance,
                bias,
                relative_bias: if mc.mean == 0.0 { 0.0 } else { bias / mc.mean },
                n_mc,
                n_critic,
            })
        })
        .collect()
}
