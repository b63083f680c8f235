//! Interaction logs: generation under a logging policy, and the JSON-lines
//! file format.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::feedback::{FeedbackChannel, FeedbackSession};
use super::task::TaskSpec;
use crate::checkpoint::write_atomic;
use crate::error::{Error, Result};
use crate::policy::{InputContext, Sequence, SequencePolicy};

/// One logged interaction `(x, ỹ, δ, μ)` plus the optional rater.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "RecordLine", try_from = "RecordLine")]
pub struct LoggedInteraction {
    pub input: InputContext,
    pub output: Sequence,
    pub reward: f64,
    pub propensity: f64,
    pub rater: Option<String>,
}

impl LoggedInteraction {
    pub fn new(input: InputContext, output: Sequence, reward: f64, propensity: f64) -> Self {
        Self { input, output, reward, propensity, rater: None }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.reward) {
            return Err(Error::InvalidLog(format!("reward {} outside [0, 1]", self.reward)));
        }
        if !(self.propensity > 0.0 && self.propensity <= 1.0) {
            return Err(Error::InvalidLog(format!("propensity {} outside (0, 1]", self.propensity)));
        }
        if self.output.is_empty() {
            return Err(Error::InvalidLog("empty output".into()));
        }
        Ok(())
    }
}

/// On-disk shape of a record: `{"x":0,"y":[0,1],"delta":0.5,"mu":1.0,"rater":"a"}`.
#[derive(Serialize, Deserialize)]
struct RecordLine {
    x: u32,
    y: Vec<u32>,
    delta: f64,
    mu: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rater: Option<String>,
}

impl From<LoggedInteraction> for RecordLine {
    fn from(r: LoggedInteraction) -> Self {
        Self { x: r.input.id, y: r.output.0, delta: r.reward, mu: r.propensity, rater: r.rater }
    }
}

impl TryFrom<RecordLine> for LoggedInteraction {
    type Error = Error;
    fn try_from(l: RecordLine) -> Result<Self> {
        let rec = LoggedInteraction {
            input: InputContext::new(l.x),
            output: Sequence(l.y),
            reward: l.delta,
            propensity: l.mu,
            rater: l.rater,
        };
        rec.validate()?;
        Ok(rec)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoggingMode {
    /// Greedy output, propensity recorded as exactly 1.
    Deterministic,
    /// Sampled output with its true propensity.
    Stochastic,
}

/// `D_log`: ordered records. Order matters for the running-average baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionLog {
    pub records: Vec<LoggedInteraction>,
    pub mode: LoggingMode,
    pub seed: Option<u64>,
}

impl InteractionLog {
    /// Wraps records, inferring the mode from the propensities.
    pub fn from_records(records: Vec<LoggedInteraction>) -> Self {
        let mode = if records.iter().all(|r| r.propensity == 1.0) {
            LoggingMode::Deterministic
        } else {
            LoggingMode::Stochastic
        };
        Self { records, mode, seed: None }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn mean_reward(&self) -> f64 {
        if self.records.is_empty() {
            return 0.0;
        }
        self.records.iter().map(|r| r.reward).sum::<f64>() / self.records.len() as f64
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let records = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str::<LoggedInteraction>(l)
                    .map_err(|e| Error::InvalidLog(format!("line {}: {e}", i + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_records(records))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_jsonl()?.as_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_jsonl(&fs::read_to_string(path)?)
    }
}

/// Options for [`generate_log`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogOptions {
    pub num_records: usize,
    pub mode: LoggingMode,
    pub seed: u64,
    /// Each drawn interaction is rated and logged this many times in a row.
    #[serde(default = "one")]
    pub repeats: usize,
}

fn one() -> usize {
    1
}

impl LogOptions {
    pub fn new(num_records: usize, mode: LoggingMode, seed: u64) -> Self {
        Self { num_records, mode, seed, repeats: 1 }
    }
}

/// Runs the logging policy on `num_records` inputs and records feedback.
///
/// Inputs and outputs come from one random stream and feedback from another,
/// so two channels with the same seed log the same outputs. Rater pools are
/// assigned round-robin per drawn interaction; all repeats of an interaction
/// go to the same rater.
pub fn generate_log(
    task: &TaskSpec,
    logging_policy: &SequencePolicy,
    channel: &FeedbackChannel,
    options: &LogOptions,
) -> Result<InteractionLog> {
    if options.num_records == 0 {
        return Err(Error::InvalidConfig("num_records must be at least 1".into()));
    }
    if options.repeats == 0 {
        return Err(Error::InvalidConfig("repeats must be at least 1".into()));
    }
    if logging_policy.vocab() != task.vocab() || logging_policy.max_len() != task.max_len {
        return Err(Error::InvalidConfig(
            "logging policy vocabulary/length does not match the task".into(),
        ));
    }
    channel.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut feedback_rng = ChaCha8Rng::seed_from_u64(options.seed);
    feedback_rng.set_stream(1);
    let mut session = FeedbackSession::new(channel, feedback_rng);
    let raters = channel.raters();

    let mut records = Vec::with_capacity(options.num_records * options.repeats);
    for t in 0..options.num_records {
        let x = task.sample_input(&mut rng).clone();
        let (y, mu) = match options.mode {
            LoggingMode::Deterministic => (logging_policy.greedy_decode(&x), 1.0),
            LoggingMode::Stochastic => logging_policy.sample_sequence(&x, &mut rng),
        };
        let truth = task.true_reward(&x, &y)?;
        let rater_slot = if raters.is_empty() { 0 } else { t % raters.len() };
        for _ in 0..options.repeats {
            let delta = session.rate(&x, &y, truth, rater_slot)?;
            records.push(LoggedInteraction {
                input: x.clone(),
                output: y.clone(),
                reward: delta,
                propensity: mu,
                rater: raters.get(rater_slot).map(|r| r.id.clone()),
            });
        }
    }
    Ok(InteractionLog { records, mode: options.mode, seed: Some(options.seed) })
}
