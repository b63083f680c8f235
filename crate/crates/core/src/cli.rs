//! `seqcf` command-line harness: experiment configs, log simulation,
//! training sweeps and evaluation.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::write_atomic;
use crate::error::{Error, Result};
use crate::objectives::{value_brute_force, value_monte_carlo};
use crate::policy::{FeatureMap, InputContext, Sequence, SequencePolicy};
use crate::simkit::{generate_log, FeedbackChannel, InteractionLog, LogOptions, LoggedInteraction, LoggingMode, TaskSpec};
use crate::trainer::{check_objective, train, GradCheckReport, TrainConfig};

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

/// Monte Carlo sample count used when the output space cannot be enumerated.
pub const EVAL_SAMPLES: usize = 10_000;

/// Where a policy comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum PolicySource {
    Uniform {
        #[serde(default)]
        feature_map: FeatureMap,
    },
    Checkpoint {
        path: PathBuf,
    },
    /// Maximum likelihood on the task references, starting from uniform.
    Pretrained {
        lr: f64,
        epochs: usize,
        #[serde(default)]
        feature_map: FeatureMap,
    },
}

impl Default for PolicySource {
    fn default() -> Self {
        PolicySource::Uniform { feature_map: FeatureMap::Tabular }
    }
}

impl PolicySource {
    pub fn build(&self, task: &TaskSpec) -> Result<SequencePolicy> {
        match self {
            PolicySource::Uniform { feature_map } => {
                SequencePolicy::with_feature_map(task.vocab(), task.max_len, *feature_map)
            }
            PolicySource::Checkpoint { path } => {
                let p = SequencePolicy::load(path)?;
                if p.vocab() != task.vocab() || p.max_len() != task.max_len {
                    return Err(Error::InvalidConfig(format!(
                        "checkpoint {} does not match the task's vocab_size/max_len",
                        path.display()
                    )));
                }
                Ok(p)
            }
            PolicySource::Pretrained { lr, epochs, feature_map } => {
                let init = SequencePolicy::with_feature_map(task.vocab(), task.max_len, *feature_map)?;
                let records: Vec<LoggedInteraction> = task
                    .references
                    .iter()
                    .map(|(id, y)| Ok(LoggedInteraction::new(task.input(*id)?.clone(), y.clone(), 1.0, 1.0)))
                    .collect::<Result<_>>()?;
                if records.is_empty() {
                    return Err(Error::InvalidConfig("pretrained policy needs task.references".into()));
                }
                let cfg = TrainConfig::full_batch(crate::objectives::ObjectiveKind::Mle, *lr, *epochs);
                Ok(train(&init, &InteractionLog::from_records(records), task, &cfg)?.0)
            }
        }
    }
}

/// One training configuration of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Arm {
    pub name: String,
    pub train: TrainConfig,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub task: TaskSpec,
    #[serde(default)]
    pub logging_policy: PolicySource,
    /// Starting point of every arm; defaults to the logging policy.
    #[serde(default)]
    pub init_policy: Option<PolicySource>,
    pub channel: FeedbackChannel,
    pub num_records: usize,
    pub logging_mode: LoggingMode,
    #[serde(default = "one")]
    pub repeats: usize,
    /// Seed of log simulation and Monte Carlo evaluation.
    #[serde(default)]
    pub seed: u64,
    /// Replicate seeds; each arm is trained once per seed.
    pub seeds: Vec<u64>,
    pub arms: Vec<Arm>,
    pub out_dir: PathBuf,
    /// Defaults to `<out_dir>/log.jsonl`.
    #[serde(default)]
    pub log_path: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidConfig(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.task.validate()?;
        self.channel.validate()?;
        if self.num_records == 0 {
            return Err(Error::InvalidConfig("num_records must be >= 1".into()));
        }
        if self.repeats == 0 {
            return Err(Error::InvalidConfig("repeats must be >= 1".into()));
        }
        if self.arms.is_empty() {
            return Err(Error::InvalidConfig("arms must be non-empty".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::InvalidConfig("seeds must be non-empty".into()));
        }
        let mut names = std::collections::BTreeSet::new();
        for arm in &self.arms {
            if arm.name.is_empty() || arm.name.contains(['/', '\\']) {
                return Err(Error::InvalidConfig(format!("arms: invalid name {:?}", arm.name)));
            }
            if !names.insert(&arm.name) {
                return Err(Error::InvalidConfig(format!("arms: duplicate name {:?}", arm.name)));
            }
            arm.train
                .validate()
                .map_err(|e| Error::InvalidConfig(format!("arms.{}.train: {e}", arm.name)))?;
        }
        for source in std::iter::once(&self.logging_policy).chain(self.init_policy.as_ref()) {
            match source {
                PolicySource::Checkpoint { path } if !path.exists() => {
                    return Err(Error::InvalidConfig(format!(
                        "policy checkpoint {} does not exist",
                        path.display()
                    )));
                }
                PolicySource::Pretrained { lr, .. } if !(lr.is_finite() && *lr >= 0.0) => {
                    return Err(Error::InvalidConfig(format!("pretrained.lr must be >= 0, got {lr}")));
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn log_path(&self) -> PathBuf {
        self.log_path.clone().unwrap_or_else(|| self.out_dir.join("log.jsonl"))
    }

    pub fn summary_path(&self) -> PathBuf {
        self.out_dir.join("summary.csv")
    }

    pub fn trace_path(&self, arm: &str, seed: u64) -> PathBuf {
        self.out_dir.join(format!("{arm}_seed{seed}.trace.csv"))
    }

    pub fn checkpoint_path(&self, arm: &str, seed: u64) -> PathBuf {
        self.out_dir.join(format!("{arm}_seed{seed}.policy.json"))
    }
}

/// Generates and writes the interaction log of `cfg`.
pub fn cmd_simulate_log(cfg: &ExperimentConfig) -> Result<InteractionLog> {
    let policy = cfg.logging_policy.build(&cfg.task)?;
    let mut opts = LogOptions::new(cfg.num_records, cfg.logging_mode, cfg.seed);
    opts.repeats = cfg.repeats;
    let log = generate_log(&cfg.task, &policy, &cfg.channel, &opts)?;
    log.write(&cfg.log_path())?;
    Ok(log)
}

/// Final state of one (arm, seed) run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub arm: String,
    pub objective: String,
    pub seed: u64,
    pub final_step: usize,
    pub final_loss: f64,
    pub final_oracle_value: Option<f64>,
    pub final_snips_value: Option<f64>,
    pub final_logged_mass: f64,
}

fn run_one(cfg: &ExperimentConfig, init: &SequencePolicy, log: &InteractionLog, arm: &Arm, seed: u64) -> Result<RunSummary> {
    let mut train_cfg = arm.train.clone();
    train_cfg.seed = seed;
    let (policy, trace) = train(init, log, &cfg.task, &train_cfg)?;
    trace.write_csv(&cfg.trace_path(&arm.name, seed))?;
    policy.save(&cfg.checkpoint_path(&arm.name, seed))?;
    let last = trace.returned().or(trace.last()).expect("trace has the initial snapshot");
    Ok(RunSummary {
        arm: arm.name.clone(),
        objective: arm.train.objective.name().to_string(),
        seed,
        final_step: last.step,
        final_loss: last.loss,
        final_oracle_value: last.oracle_value,
        final_snips_value: last.snips_value,
        final_logged_mass: last.logged_mass,
    })
}

/// Trains every (arm, seed) pair on the log at `cfg.log_path()` and writes
/// traces, checkpoints and `summary.csv`. Runs execute in parallel; the
/// summary is ordered by arm, then seed.
pub fn cmd_train(cfg: &ExperimentConfig) -> Result<Vec<RunSummary>> {
    let path = cfg.log_path();
    if !path.exists() {
        return Err(Error::InvalidLog(format!("log file {} does not exist", path.display())));
    }
    let log = InteractionLog::read(&path)?;
    for r in &log.records {
        cfg.task.input(r.input.id)?;
        r.output.validate(cfg.task.vocab(), cfg.task.max_len)?;
    }
    let init = cfg.init_policy.as_ref().unwrap_or(&cfg.logging_policy).build(&cfg.task)?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    let jobs: Vec<(&Arm, u64)> = cfg
        .arms
        .iter()
        .flat_map(|a| cfg.seeds.iter().map(move |&s| (a, s)))
        .collect();
    let summaries = jobs
        .par_iter()
        .map(|(arm, seed)| run_one(cfg, &init, &log, arm, *seed))
        .collect::<Result<Vec<_>>>()?;
    let mut w = csv::Writer::from_writer(Vec::new());
    for s in &summaries {
        w.serialize(s)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    write_atomic(&cfg.summary_path(), &bytes)?;
    Ok(summaries)
}

/// Simulates the log, then trains.
pub fn cmd_sweep(cfg: &ExperimentConfig) -> Result<(InteractionLog, Vec<RunSummary>)> {
    let log = cmd_simulate_log(cfg)?;
    let summaries = cmd_train(cfg)?;
    Ok((log, summaries))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum ValueEstimate {
    Exact(f64),
    MonteCarlo { mean: f64, std_error: f64, samples: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InputReport {
    pub input: u32,
    pub greedy: Sequence,
    pub reference: Option<Sequence>,
    pub reference_probability: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub value: ValueEstimate,
    pub inputs: Vec<InputReport>,
}

/// Oracle value (exact, or Monte Carlo when the output space is too large),
/// greedy decodes and reference probabilities of `policy` on `task`.
pub fn cmd_evaluate(policy: &SequencePolicy, task: &TaskSpec, seed: u64) -> Result<EvalReport> {
    if policy.vocab() != task.vocab() || policy.max_len() != task.max_len {
        return Err(Error::InvalidConfig("checkpoint does not match the task's vocab_size/max_len".into()));
    }
    let value = match value_brute_force(policy, task) {
        Ok(v) => ValueEstimate::Exact(v),
        Err(Error::SpaceTooLarge { .. }) => {
            let (mean, std_error) = value_monte_carlo(policy, task, EVAL_SAMPLES, seed)?;
            ValueEstimate::MonteCarlo { mean, std_error, samples: EVAL_SAMPLES }
        }
        Err(e) => return Err(e),
    };
    let inputs = task
        .input_contexts()
        .into_iter()
        .map(|x: InputContext| {
            let reference = task.references.get(&x.id).cloned();
            let reference_probability = reference
                .as_ref()
                .map(|y| policy.sequence_probability(&x, y))
                .transpose()?;
            Ok(InputReport { input: x.id, greedy: policy.greedy_decode(&x), reference, reference_probability })
        })
        .collect::<Result<_>>()?;
    Ok(EvalReport { value, inputs })
}

/// Finite-difference check of every arm's objective on the log, at the
/// initial policy.
pub fn cmd_grad_check(cfg: &ExperimentConfig, h: f64, tolerance: f64) -> Result<Vec<(String, GradCheckReport)>> {
    let path = cfg.log_path();
    if !path.exists() {
        return Err(Error::InvalidLog(format!("log file {} does not exist", path.display())));
    }
    let log = InteractionLog::read(&path)?;
    let policy = cfg.init_policy.as_ref().unwrap_or(&cfg.logging_policy).build(&cfg.task)?;
    cfg.arms
        .iter()
        .map(|arm| {
            let r = check_objective(&arm.train.objective, &policy, &log.records, &cfg.task, h, tolerance)?;
            Ok((arm.name.clone(), r))
        })
        .collect()
}

#[derive(Debug, Parser)]
#[command(name = "seqcf", version, about = "Counterfactual learning of sequence policies from logged bandit feedback")]
pub struct Cli {
    /// Suppress progress output.
    #[arg(long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides `out_dir` (and with it the default log location).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides the log seed for simulate-log, and the replicate seeds for train.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the logging policy and write the interaction log.
    SimulateLog(CommonArgs),
    /// Train every arm and seed on the logged data.
    Train(CommonArgs),
    /// Report oracle value, greedy outputs and reference probabilities.
    Evaluate {
        #[command(flatten)]
        common: CommonArgs,
        /// Policy checkpoint to evaluate.
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Finite-difference check of each arm's gradient.
    GradCheck {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, default_value_t = 1e-5)]
        h: f64,
        #[arg(long, default_value_t = 1e-5)]
        tolerance: f64,
    },
    /// simulate-log followed by train.
    Sweep(CommonArgs),
}

/// Exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidConfig(_) | Error::SpaceTooLarge { .. } => EXIT_CONFIG,
        Error::NonFinite { .. } | Error::DegenerateDenominator(_) => EXIT_NUMERICAL,
        _ => EXIT_DATA,
    }
}

fn load_config(args: &CommonArgs, seed_overrides_replicates: bool) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(out) = &args.out {
        cfg.out_dir = out.clone();
    }
    if let Some(seed) = args.seed {
        if seed_overrides_replicates {
            cfg.seeds = vec![seed];
        } else {
            cfg.seed = seed;
        }
    }
    Ok(cfg)
}

fn print_summaries(out: &mut impl std::io::Write, summaries: &[RunSummary]) -> std::io::Result<()> {
    for s in summaries {
        let v = s.final_oracle_value.map_or_else(|| "n/a".to_string(), |v| format!("{v:.6}"));
        writeln!(out, "{:<16} seed {:<6} step {:<7} V {v}", s.arm, s.seed, s.final_step)?;
    }
    Ok(())
}

/// Runs a parsed command, writing human-readable output to `out`.
pub fn run(cli: &Cli, out: &mut impl std::io::Write) -> Result<i32> {
    let quiet = cli.quiet;
    match &cli.command {
        Command::SimulateLog(args) => {
            let cfg = load_config(args, false)?;
            let log = cmd_simulate_log(&cfg)?;
            if !quiet {
                writeln!(out, "records: {}", log.len())?;
                writeln!(out, "mean reward: {:.6}", log.mean_reward())?;
                writeln!(out, "wrote {}", cfg.log_path().display())?;
            }
        }
        Command::Train(args) => {
            let cfg = load_config(args, true)?;
            let summaries = cmd_train(&cfg)?;
            if !quiet {
                print_summaries(out, &summaries)?;
                writeln!(out, "wrote {}", cfg.summary_path().display())?;
            }
        }
        Command::Sweep(args) => {
            let cfg = load_config(args, true)?;
            let (log, summaries) = cmd_sweep(&cfg)?;
            if !quiet {
                writeln!(out, "records: {} mean reward: {:.6}", log.len(), log.mean_reward())?;
                print_summaries(out, &summaries)?;
                writeln!(out, "wrote {}", cfg.summary_path().display())?;
            }
        }
        Command::Evaluate { common, checkpoint } => {
            let cfg = load_config(common, false)?;
            let policy = SequencePolicy::load(checkpoint)?;
            let report = cmd_evaluate(&policy, &cfg.task, cfg.seed)?;
            if !quiet {
                match report.value {
                    ValueEstimate::Exact(v) => writeln!(out, "V = {v:.10}")?,
                    ValueEstimate::MonteCarlo { mean, std_error, samples } => {
                        writeln!(out, "V ≈ {mean:.6} ± {std_error:.6} (Monte Carlo, {samples} samples)")?
                    }
                }
                for r in &report.inputs {
                    write!(out, "input {}: greedy {}", r.input, r.greedy)?;
                    if let (Some(y), Some(p)) = (&r.reference, r.reference_probability) {
                        write!(out, "  π(reference {y}) = {p:.6}")?;
                    }
                    writeln!(out)?;
                }
            }
        }
        Command::GradCheck { common, h, tolerance } => {
            let cfg = load_config(common, false)?;
            let reports = cmd_grad_check(&cfg, *h, *tolerance)?;
            let mut ok = true;
            for (arm, r) in &reports {
                ok &= r.passed;
                if !quiet {
                    let status = if r.passed { "ok" } else { "FAILED" };
                    writeln!(
                        out,
                        "{arm:<16} {status:<6} max rel err {:.3e} over {} features",
                        r.max_rel_error, r.checked
                    )?;
                }
            }
            if !ok {
                return Ok(EXIT_NUMERICAL);
            }
        }
    }
    Ok(0)
}

/// Entry point of the binary: parses `std::env::args`, runs, and returns
/// the process exit code.
pub fn main() -> i32 {
    let cli = Cli::parse();
    let stdout = std::io::stdout();
    match run(&cli, &mut stdout.lock()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
