//! `bilevel` command-line entry point.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use super::{
    build_agent, critic_variance_study, mc_state_value, popularity_analysis, run_ablation, run_experiment,
    seed_list, sweep_window, write_report, ExperimentConfig, ExperimentRun, HarnessError, MetricsReport, ShareMode,
    Variant, World,
};
use crate::agent::{EpisodeTrace, FrozenActor};
use crate::catalog::{prepare_dataset, write_split_index, DatasetManifest};
use crate::env::{write_jsonl, TraceStep};
use crate::llm::AuditLog;
use crate::memory::Memories;

#[derive(Debug, Parser)]
#[command(name = "bilevel", version, about = "Bilevel LLM-agent recommender experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override a config value, e.g. `--set run.seeds=1`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct Seeded {
    #[command(flatten)]
    common: Common,
    /// Base seed; runs use this and the following `run.seeds - 1` values.
    #[arg(long)]
    seed: u64,
    /// Directory with scorer snapshots from `train-scorer`.
    #[arg(long)]
    world: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct WithMemory {
    #[command(flatten)]
    seeded: Seeded,
    /// Directory holding `memory/seed-<n>/` from `train`; defaults to `--out`.
    #[arg(long)]
    memory: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Load, filter and split the dataset; write split index files.
    Ingest(Common),
    /// Fit the train and test scorers and save the worlds.
    TrainScorer(Seeded),
    /// Run training episodes and save memories and traces.
    Train(Seeded),
    /// Evaluate with frozen memories.
    Eval(WithMemory),
    /// Train and evaluate BiLLP, w/o Macro, w/o Micro and ActOnly.
    Ablate(Seeded),
    /// Monte-Carlo value of a user's initial state under the agent policy.
    McOracle {
        #[command(flatten)]
        args: WithMemory,
        #[arg(long)]
        user: Option<String>,
        #[arg(long, default_value_t = 1000)]
        rollouts: usize,
    },
    /// Critic estimates against Monte-Carlo returns on probe states.
    VarianceStudy {
        #[command(flatten)]
        args: WithMemory,
        #[arg(long, default_value_t = 3)]
        probes: usize,
        #[arg(long, default_value_t = 1000)]
        mc: usize,
        #[arg(long, default_value_t = 100)]
        critic: usize,
    },
    /// Share of recommendations per popularity bucket.
    Popularity {
        #[command(flatten)]
        common: Common,
        /// `label=path` of a step trace file. Repeatable.
        #[arg(long = "traces", value_name = "LABEL=PATH", required = true)]
        traces: Vec<String>,
        /// Count distinct items instead of recommendation events.
        #[arg(long)]
        distinct: bool,
        /// Popularity from the train split only.
        #[arg(long)]
        train_only: bool,
    },
    /// Evaluate under several quit windows.
    Sweep {
        #[command(flatten)]
        args: WithMemory,
        #[arg(long, value_delimiter = ',', default_values_t = [1usize, 2, 4, 8])]
        windows: Vec<usize>,
    },
}

/// Runs the CLI and returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.exit_code() == 2 {
                eprintln!("run `bilevel --help` for usage");
            }
            e.exit_code()
        }
    }
}

fn load(common: &Common) -> Result<ExperimentConfig, HarnessError> {
    ExperimentConfig::load(&common.config, &common.overrides)
}

fn mkdir(p: &Path) -> Result<(), HarnessError> {
    std::fs::create_dir_all(p).map_err(|e| HarnessError::io(p, e))
}

fn write_traces(dir: &Path, name: &str, traces: &[EpisodeTrace]) -> Result<(), HarnessError> {
    mkdir(dir)?;
    let steps: Vec<&TraceStep> = traces.iter().flat_map(|t| &t.steps).collect();
    for (file, res) in [
        (format!("{name}.steps.jsonl"), write_file(&dir.join(format!("{name}.steps.jsonl")), &steps)),
        (format!("{name}.episodes.jsonl"), write_file(&dir.join(format!("{name}.episodes.jsonl")), traces)),
    ] {
        res.map_err(|e| HarnessError::io(&dir.join(file), e))?;
    }
    Ok(())
}

fn write_file<T: Serialize>(path: &Path, rows: &[T]) -> std::io::Result<()> {
    write_jsonl(BufWriter::new(File::create(path)?), rows)
}

fn memory_dir(root: &Path, seed: u64) -> PathBuf {
    root.join("memory").join(format!("seed-{seed}"))
}

fn load_memories(root: &Path, seeds: &[u64], dim: usize) -> Result<BTreeMap<u64, Memories>, HarnessError> {
    let mut out = BTreeMap::new();
    for &s in seeds {
        let dir = memory_dir(root, s);
        if dir.join("planner.mem").exists() {
            out.insert(s, Memories::load_dir(&dir)?);
        } else {
            log::warn!("no memory snapshot in {}; evaluating seed {s} with empty memories", dir.display());
            eprintln!("warning: no memory snapshot for seed {s} in {}; using empty memories", dir.display());
            out.insert(s, Memories::new(dim));
        }
    }
    Ok(out)
}

fn metrics_text(label: &str, m: &MetricsReport) -> String {
    m.to_text(label)
}

fn save_run(out: &Path, phase: &str, run: &ExperimentRun, save_memory: bool) -> Result<(), HarnessError> {
    for r in &run.runs {
        if save_memory {
            r.memories.snapshot_dir(&memory_dir(out, r.seed))?;
        }
        let traces = if phase == "train" { &r.train_traces } else { &r.eval_traces };
        write_traces(&out.join("traces"), &format!("{phase}-seed-{}", r.seed), traces)?;
    }
    Ok(())
}

fn dispatch(cmd: Command) -> Result<(), HarnessError> {
    match cmd {
        Command::Ingest(common) => {
            let cfg = load(&common)?;
            let manifest = DatasetManifest::load(&cfg.resolve(&cfg.manifest))?;
            let data = prepare_dataset(&manifest)?;
            let dir = common.out.join("split");
            mkdir(&dir)?;
            write_split_index(&dir.join("train.idx"), &data.train_indices)?;
            write_split_index(&dir.join("test.idx"), &data.test_indices)?;
            #[derive(Serialize)]
            struct Stats {
                records: usize,
                malformed: usize,
                users: usize,
                items: usize,
                train: usize,
                test: usize,
            }
            let users: std::collections::BTreeSet<&str> = data.log.records.iter().map(|r| r.user_id.as_str()).collect();
            let items: std::collections::BTreeSet<&str> = data.log.records.iter().map(|r| r.item_id.as_str()).collect();
            let stats = Stats {
                records: data.log.records.len(),
                malformed: data.log.malformed.len(),
                users: users.len(),
                items: items.len(),
                train: data.split.train.len(),
                test: data.split.test.len(),
            };
            let text = format!(
                "records {} (malformed {}), users {}, items {}, train {}, test {}\n",
                stats.records, stats.malformed, stats.users, stats.items, stats.train, stats.test
            );
            write_report(&common.out, "ingest", "ingest", 0, &cfg.hash(), &stats, &text)
        }
        Command::TrainScorer(a) => {
            let cfg = load(&a.common)?;
            let world = World::build(&cfg, a.seed, a.world.as_deref())?;
            world.save(&a.common.out.join("world"))?;
            let text = match &world.scorer_reports {
                Some((tr, te)) => format!(
                    "train scorer RMSE {:.4} -> {:.4} ({} rejected epochs)\ntest scorer RMSE {:.4} -> {:.4} ({} rejected epochs)\n",
                    tr.rmse_per_epoch[0],
                    tr.rmse_per_epoch.last().copied().unwrap_or(f64::NAN),
                    tr.rejected_epochs,
                    te.rmse_per_epoch[0],
                    te.rmse_per_epoch.last().copied().unwrap_or(f64::NAN),
                    te.rejected_epochs
                ),
                None => "scorers loaded from snapshots\n".into(),
            };
            write_report(&a.common.out, "train-scorer", "train-scorer", a.seed, &cfg.hash(), &world.scorer_reports, &text)
        }
        Command::Train(a) => {
            let cfg = load(&a.common)?;
            let world = World::build(&cfg, a.seed, a.world.as_deref())?;
            let seeds = seed_list(a.seed, cfg.run.seeds);
            let audit = Arc::new(AuditLog::new());
            let mut cfg_train = cfg.clone();
            cfg_train.run.eval_episodes = 0;
            let run = run_experiment(&cfg_train, &world, &seeds, audit.clone(), None)?;
            save_run(&a.common.out, "train", &run, true)?;
            write_file(&a.common.out.join("audit-train.jsonl"), &audit.records())
                .map_err(|e| HarnessError::io(&a.common.out, e))?;
            let per: Vec<(u64, &[EpisodeTrace])> = run.runs.iter().map(|r| (r.seed, r.train_traces.as_slice())).collect();
            let m = MetricsReport::from_traces(&per);
            write_report(&a.common.out, "train", "train", a.seed, &cfg.hash(), &m, &metrics_text("train", &m))
        }
        Command::Eval(a) => {
            let cfg = load(&a.seeded.common)?;
            let out = &a.seeded.common.out;
            let world = World::build(&cfg, a.seeded.seed, a.seeded.world.as_deref())?;
            let seeds = seed_list(a.seeded.seed, cfg.run.seeds);
            let mems = load_memories(a.memory.as_deref().unwrap_or(out), &seeds, cfg.run.encoder_dim)?;
            let audit = Arc::new(AuditLog::new());
            let run = run_experiment(&cfg, &world, &seeds, audit.clone(), Some(&mems))?;
            save_run(out, "eval", &run, false)?;
            write_file(&out.join("audit-eval.jsonl"), &audit.sorted_records()).map_err(|e| HarnessError::io(out, e))?;
            let label = if cfg.agent == Variant::Billp.apply(&cfg.agent) { "BiLLP" } else { "agent" };
            write_report(out, "eval", "eval", a.seeded.seed, &cfg.hash(), &run.metrics, &metrics_text(label, &run.metrics))
        }
        Command::Ablate(a) => {
            let cfg = load(&a.common)?;
            let world = World::build(&cfg, a.seed, a.world.as_deref())?;
            let seeds = seed_list(a.seed, cfg.run.seeds);
            let results = run_ablation(&cfg, &world, &seeds, &Variant::ABLATION)?;
            let mut text = format!("{}\n", MetricsReport::table_header());
            for (entry, run, audit) in &results {
                let dir = a.common.out.join(entry.variant.slug());
                save_run(&dir, "eval", run, true)?;
                write_file(&dir.join("audit.jsonl"), &audit.sorted_records())
                    .map_err(|e| HarnessError::io(&dir, e))?;
                write_report(
                    &a.common.out,
                    &format!("ablate-{}", entry.variant.slug()),
                    "ablate",
                    a.seed,
                    &cfg.hash(),
                    entry,
                    &metrics_text(entry.variant.label(), &entry.metrics),
                )?;
                text.push_str(&entry.metrics.table_row(entry.variant.label()));
                text.push_str(&format!(
                    "   memory {:?}  calls {:?}\n",
                    entry.memory_sizes,
                    entry.llm_calls.iter().map(|(k, v)| format!("{}={v}", k.name())).collect::<Vec<_>>()
                ));
            }
            let entries: Vec<_> = results.iter().map(|(e, _, _)| e).collect();
            write_report(&a.common.out, "ablate", "ablate", a.seed, &cfg.hash(), &entries, &text)
        }
        Command::McOracle { args, user, rollouts } => {
            let cfg = load(&args.seeded.common)?;
            let out = &args.seeded.common.out;
            let seed = args.seeded.seed;
            let world = World::build(&cfg, seed, args.seeded.world.as_deref())?;
            let mems = load_memories(args.memory.as_deref().unwrap_or(out), &[seed], cfg.run.encoder_dim)?;
            let agent = build_agent(&cfg, &world.test, seed, Arc::new(AuditLog::new()))?;
            let warm = cfg.agent.warm_start_len;
            let user = match user {
                Some(u) => u,
                None => world
                    .test
                    .eligible_users(warm)
                    .into_iter()
                    .next()
                    .ok_or_else(|| HarnessError::Invalid("no eligible user".into()))?,
            };
            let state = world.test.reset(&user, warm)?;
            let policy = FrozenActor { agent: &agent, memories: &mems[&seed] };
            let est = mc_state_value(&world.test, &policy, &state, rollouts, cfg.agent.gamma, seed, cfg.run.execution)?;
            let text = format!(
                "user {user}: V = {:.4} (sample variance {:.4}, {} rollouts)\n",
                est.mean, est.variance, rollouts
            );
            write_report(out, "mc-oracle", "mc-oracle", seed, &cfg.hash(), &est, &text)
        }
        Command::VarianceStudy { args, probes, mc, critic } => {
            let cfg = load(&args.seeded.common)?;
            let out = &args.seeded.common.out;
            let seed = args.seeded.seed;
            let world = World::build(&cfg, seed, args.seeded.world.as_deref())?;
            let mems = load_memories(args.memory.as_deref().unwrap_or(out), &[seed], cfg.run.encoder_dim)?;
            let agent = build_agent(&cfg, &world.test, seed, Arc::new(AuditLog::new()))?;
            let warm = cfg.agent.warm_start_len;
            let states = world
                .test
                .eligible_users(warm)
                .into_iter()
                .take(probes)
                .map(|u| world.test.reset(&u, warm))
                .collect::<Result<Vec<_>, _>>()?;
            let rows =
                critic_variance_study(&world.test, &agent, &mems[&seed], &states, mc, critic, seed, cfg.run.execution)?;
            let mut text = String::from("user            MC mean   MC var   critic mean  critic var   rel.bias\n");
            for r in &rows {
                text.push_str(&format!(
                    "{:<14} {:>8.3} {:>8.3} {:>12.3} {:>11.3} {:>10.3}\n",
                    r.user_id, r.mc_mean, r.mc_variance, r.critic_mean, r.critic_variance, r.relative_bias
                ));
            }
            write_report(out, "variance-study", "variance-study", seed, &cfg.hash(), &rows, &text)
        }
        Command::Popularity { common, traces, distinct, train_only } => {
            let cfg = load(&common)?;
            let manifest = DatasetManifest::load(&cfg.resolve(&cfg.manifest))?;
            let data = prepare_dataset(&manifest)?;
            let records = if train_only { data.split.train.clone() } else { data.log.records.clone() };
            let items: Vec<String> = data.log.items.keys().cloned().collect();
            let mut policies = Vec::new();
            for t in &traces {
                let (label, path) = t
                    .split_once('=')
                    .ok_or_else(|| HarnessError::Config(format!("--traces `{t}` is not label=path")))?;
                policies.push((label.to_string(), read_actions(Path::new(path))?));
            }
            let mode = if distinct { ShareMode::DistinctItems } else { ShareMode::Events };
            let report = popularity_analysis(&items, &records, &policies, mode)?;
            write_report(&common.out, "popularity", "popularity", 0, &cfg.hash(), &report, &report.to_text())
        }
        Command::Sweep { args, windows } => {
            let cfg = load(&args.seeded.common)?;
            let out = &args.seeded.common.out;
            let seed = args.seeded.seed;
            let world = World::build(&cfg, seed, args.seeded.world.as_deref())?;
            let seeds = seed_list(seed, cfg.run.seeds);
            let mems = load_memories(args.memory.as_deref().unwrap_or(out), &seeds, cfg.run.encoder_dim)?;
            let agent = build_agent(&cfg, &world.test, seed, Arc::new(AuditLog::new()))?;
            let mems: Vec<(u64, Memories)> = mems.into_iter().collect();
            let rows = sweep_window(&agent, &world.test, &mems, &windows, cfg.run.eval_episodes, cfg.run.execution)?;
            let mut text = format!("{}\n", MetricsReport::table_header());
            for (w, m) in &rows {
                text.push_str(&m.table_row(&format!("W={w}")));
                text.push('\n');
            }
            write_report(out, "sweep", "sweep", seed, &cfg.hash(), &rows, &text)
        }
    }
}

fn read_actions(path: &Path) -> Result<Vec<String>, HarnessError> {
    let f = File::open(path).map_err(|e| HarnessError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| HarnessError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let step: TraceStep = serde_json::from_str(&line)
            .map_err(|e| HarnessError::Invalid(format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.push(step.action);
    }
    Ok(out)
}
