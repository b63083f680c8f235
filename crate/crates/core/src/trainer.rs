//! Optimization loop, early stopping, gradient checking and the
//! pretrain-then-bandit pipeline.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::write_atomic;
use crate::error::{Error, Result};
use crate::features::{FeatureId, Gradient};
use crate::objectives::{
    baseline_center, dr_loss, dpm_loss, ips_loss, ips_loss_clipped, logged_mass, mle_loss,
    osl_denominator, osl_loss_with_denominator, value_brute_force, value_self_normalized,
    weighted_probability_loss, DirectTerm, EstimatorSource, LossReport, ObjectiveKind,
};
use crate::policy::{InputContext, Sequence, SequencePolicy};
use crate::reward_model::{fit, ConstantReward, RewardModel, RewardSample};
use crate::simkit::{InteractionLog, LoggedInteraction, TaskSpec};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Optimizer {
    #[default]
    Sgd,
    Adam {
        #[serde(default = "beta1")]
        beta1: f64,
        #[serde(default = "beta2")]
        beta2: f64,
        #[serde(default = "adam_eps")]
        eps: f64,
    },
}

fn beta1() -> f64 {
    0.9
}
fn beta2() -> f64 {
    0.999
}
fn adam_eps() -> f64 {
    1e-8
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam { beta1: beta1(), beta2: beta2(), eps: adam_eps() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopMetric {
    /// Self-normalized value estimate on the training log.
    SnipsValue,
    /// Exact expected reward from the task oracle.
    OracleValue,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EarlyStop {
    #[default]
    None,
    OnMetric { patience: usize, metric: StopMetric },
}

fn default_eval_every() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub objective: ObjectiveKind,
    pub lr: f64,
    #[serde(default)]
    pub optimizer: Optimizer,
    pub epochs: usize,
    /// `None` trains full-batch.
    #[serde(default)]
    pub batch_size: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub early_stop: EarlyStop,
    /// Steps between trace snapshots.
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
}

impl TrainConfig {
    /// Full-batch SGD for `epochs` steps.
    pub fn full_batch(objective: ObjectiveKind, lr: f64, epochs: usize) -> Self {
        Self {
            objective,
            lr,
            optimizer: Optimizer::Sgd,
            epochs,
            batch_size: None,
            seed: 0,
            early_stop: EarlyStop::None,
            eval_every: default_eval_every(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.objective.validate()?;
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::InvalidConfig(format!("lr must be >= 0, got {}", self.lr)));
        }
        if self.batch_size == Some(0) {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::InvalidConfig("eval_every must be >= 1".into()));
        }
        if let EarlyStop::OnMetric { patience: 0, .. } = self.early_stop {
            return Err(Error::InvalidConfig("early_stop.patience must be >= 1".into()));
        }
        if let Optimizer::Adam { beta1, beta2, eps } = self.optimizer {
            if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || !(eps > 0.0) {
                return Err(Error::InvalidConfig("adam needs beta1, beta2 in [0, 1) and eps > 0".into()));
            }
        }
        Ok(())
    }
}

/// One evaluation point of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub step: usize,
    pub loss: f64,
    pub oracle_value: Option<f64>,
    pub snips_value: Option<f64>,
    pub logged_mass: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunTrace {
    pub snapshots: Vec<Snapshot>,
    /// Step of the returned policy.
    pub returned_step: usize,
    pub stopped_early: bool,
}

impl RunTrace {
    pub fn last(&self) -> Option<&Snapshot> {
        self.snapshots.last()
    }

    /// Snapshot of the policy the run returned.
    pub fn returned(&self) -> Option<&Snapshot> {
        self.snapshots.iter().find(|s| s.step == self.returned_step)
    }

    /// CSV with header `step,loss,oracle_value,snips_value,logged_mass`;
    /// missing values are empty fields.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for s in &self.snapshots {
            w.serialize(s)?;
        }
        if self.snapshots.is_empty() {
            w.write_record(["step", "loss", "oracle_value", "snips_value", "logged_mass"])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_csv()?.as_bytes())
    }
}

/// An objective bound to its training log: precomputed baseline
/// coefficients, reward estimator, and the current OSL denominator.
pub struct PreparedObjective<'a> {
    kind: ObjectiveKind,
    log: &'a [LoggedInteraction],
    centered: Vec<f64>,
    estimator: Option<Box<dyn RewardModel + 'a>>,
    denominator: Option<f64>,
}

impl<'a> PreparedObjective<'a> {
    pub fn new(kind: &ObjectiveKind, log: &'a [LoggedInteraction], task: &'a TaskSpec) -> Result<Self> {
        kind.validate()?;
        if log.is_empty() {
            return Err(Error::InsufficientData("training log is empty".into()));
        }
        let rewards: Vec<f64> = log.iter().map(|r| r.reward).collect();
        let centered = match kind {
            ObjectiveKind::DpmBaseline | ObjectiveKind::IpsBaseline => baseline_center(&rewards),
            _ => Vec::new(),
        };
        let estimator: Option<Box<dyn RewardModel + 'a>> = match kind {
            ObjectiveKind::Dr { estimator, .. } => Some(match estimator {
                EstimatorSource::Zero => Box::new(ConstantReward(0.0)),
                EstimatorSource::Oracle => Box::new(task.clone()),
                EstimatorSource::Fit(cfg) => {
                    let samples: Vec<RewardSample> = log.iter().map(RewardSample::from).collect();
                    Box::new(fit(&samples, task.vocab(), task.max_len, cfg)?.estimator)
                }
            }),
            _ => None,
        };
        Ok(Self { kind: kind.clone(), log, centered, estimator, denominator: None })
    }

    pub fn kind(&self) -> &ObjectiveKind {
        &self.kind
    }

    /// Recomputes the OSL denominator from the snapshot `stale`.
    pub fn refresh(&mut self, stale: &SequencePolicy) -> Result<()> {
        if matches!(self.kind, ObjectiveKind::Osl { .. }) {
            self.denominator = Some(osl_denominator(stale, self.log)?);
        }
        Ok(())
    }

    /// Loss and gradient on the records at `indices` (in that order).
    pub fn evaluate(&self, policy: &SequencePolicy, indices: &[usize], seed: u64) -> Result<LossReport> {
        let batch: Vec<LoggedInteraction> = indices.iter().map(|&i| self.log[i].clone()).collect();
        match &self.kind {
            ObjectiveKind::Mle => {
                let pairs: Vec<(InputContext, Sequence)> =
                    batch.iter().map(|r| (r.input.clone(), r.output.clone())).collect();
                mle_loss(policy, &pairs)
            }
            ObjectiveKind::Ips { clip: None } => ips_loss(policy, &batch),
            ObjectiveKind::Ips { clip: Some(c) } => ips_loss_clipped(policy, &batch, *c),
            ObjectiveKind::Dpm => dpm_loss(policy, &batch),
            ObjectiveKind::Osl { .. } => {
                let d = self
                    .denominator
                    .ok_or_else(|| Error::InvalidConfig("OSL denominator not initialized".into()))?;
                osl_loss_with_denominator(policy, &batch, d)
            }
            ObjectiveKind::DpmBaseline => {
                let c: Vec<f64> = indices.iter().map(|&i| self.centered[i]).collect();
                weighted_probability_loss(policy, &batch, &c)
            }
            ObjectiveKind::IpsBaseline => {
                if let Some(r) = batch.iter().find(|r| !(r.propensity > 0.0)) {
                    return Err(Error::InvalidLog(format!("propensity {}", r.propensity)));
                }
                let c: Vec<f64> = indices
                    .iter()
                    .map(|&i| self.centered[i] / self.log[i].propensity)
                    .collect();
                weighted_probability_loss(policy, &batch, &c)
            }
            ObjectiveKind::Dr { enumeration_limit, samples, .. } => dr_loss(
                policy,
                &batch,
                self.estimator.as_deref().expect("DR objective has an estimator"),
                DirectTerm { enumeration_limit: *enumeration_limit, samples: *samples, seed },
            ),
        }
    }

    /// Loss and gradient on the whole log.
    pub fn evaluate_full(&self, policy: &SequencePolicy, seed: u64) -> Result<LossReport> {
        let all: Vec<usize> = (0..self.log.len()).collect();
        self.evaluate(policy, &all, seed)
    }
}

struct OptimizerState {
    kind: Optimizer,
    lr: f64,
    t: i32,
    m: BTreeMap<FeatureId, f64>,
    v: BTreeMap<FeatureId, f64>,
}

impl OptimizerState {
    fn new(kind: Optimizer, lr: f64) -> Self {
        Self { kind, lr, t: 0, m: BTreeMap::new(), v: BTreeMap::new() }
    }

    /// Descent step for `grad`. Adam state is kept only for features that
    /// have appeared in a gradient.
    fn step(&mut self, grad: &Gradient) -> Gradient {
        match self.kind {
            Optimizer::Sgd => grad.iter().map(|(f, g)| (f, -self.lr * g)).collect(),
            Optimizer::Adam { beta1, beta2, eps } => {
                self.t += 1;
                let c1 = 1.0 - beta1.powi(self.t);
                let c2 = 1.0 - beta2.powi(self.t);
                grad.iter()
                    .map(|(f, g)| {
                        let m = self.m.entry(f).or_insert(0.0);
                        *m = beta1 * *m + (1.0 - beta1) * g;
                        let v = self.v.entry(f).or_insert(0.0);
                        *v = beta2 * *v + (1.0 - beta2) * g * g;
                        let m_hat = *m / c1;
                        let v_hat = *v / c2;
                        (f, -self.lr * m_hat / (v_hat.sqrt() + eps))
                    })
                    .collect()
            }
        }
    }
}

fn snapshot(
    objective: &PreparedObjective<'_>,
    policy: &SequencePolicy,
    task: &TaskSpec,
    step: usize,
    seed: u64,
) -> Result<Snapshot> {
    let report = objective.evaluate_full(policy, seed)?;
    if !report.loss.is_finite() {
        return Err(Error::NonFinite { step, what: format!("loss {}", report.loss) });
    }
    let oracle_value = match value_brute_force(policy, task) {
        Ok(v) => Some(v),
        Err(Error::SpaceTooLarge { .. }) => None,
        Err(e) => return Err(e),
    };
    Ok(Snapshot {
        step,
        loss: report.loss,
        oracle_value,
        snips_value: value_self_normalized(policy, objective.log).ok(),
        logged_mass: logged_mass(policy, objective.log)?,
    })
}

fn metric_of(s: &Snapshot, metric: StopMetric) -> Result<f64> {
    match metric {
        StopMetric::OracleValue => s
            .oracle_value
            .ok_or_else(|| Error::InvalidConfig("oracle early stopping needs an enumerable task".into())),
        StopMetric::SnipsValue => s
            .snips_value
            .ok_or_else(|| Error::InvalidConfig("self-normalized value is undefined on this log".into())),
    }
}

/// Minibatch optimization of `config.objective` on `log`, starting from
/// `init`. The task is used only for oracle evaluation and the DR oracle
/// estimator.
///
/// With early stopping, the policy of the best snapshot is returned.
pub fn train(
    init: &SequencePolicy,
    log: &InteractionLog,
    task: &TaskSpec,
    config: &TrainConfig,
) -> Result<(SequencePolicy, RunTrace)> {
    config.validate()?;
    if log.is_empty() {
        return Err(Error::InsufficientData("training log is empty".into()));
    }
    let n = log.len();
    if matches!(config.objective, ObjectiveKind::Osl { .. }) && config.batch_size.is_some_and(|b| b > n) {
        return Err(Error::InvalidConfig(format!(
            "OSL batch size {} exceeds log size {n}",
            config.batch_size.unwrap()
        )));
    }
    let batch = config.batch_size.unwrap_or(n).min(n);
    let refresh_every = match config.objective {
        ObjectiveKind::Osl { refresh_every } => refresh_every,
        _ => usize::MAX,
    };

    let mut objective = PreparedObjective::new(&config.objective, &log.records, task)?;
    let mut policy = init.clone();
    let mut opt = OptimizerState::new(config.optimizer, config.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let step_seed = |step: usize| config.seed.wrapping_mul(0x9e37_79b9).wrapping_add(step as u64);

    objective.refresh(&policy)?;
    let mut trace = RunTrace::default();
    let first = snapshot(&objective, &policy, task, 0, step_seed(0))?;
    let mut best = match config.early_stop {
        EarlyStop::OnMetric { metric, .. } => Some((metric_of(&first, metric)?, policy.clone(), 0usize)),
        EarlyStop::None => None,
    };
    trace.snapshots.push(first);
    let mut since_best = 0usize;
    let mut step = 0usize;

    'epochs: for epoch in 0..config.epochs {
        if epoch > 0 && epoch % refresh_every == 0 {
            objective.refresh(&policy)?;
        }
        if batch < n {
            order.shuffle(&mut rng);
        }
        for chunk in order.chunks(batch) {
            step += 1;
            let report = objective.evaluate(&policy, chunk, step_seed(step))?;
            if !report.loss.is_finite() || !report.gradient.is_finite() {
                return Err(Error::NonFinite {
                    step,
                    what: format!("loss {} / gradient max {}", report.loss, report.gradient.max_abs()),
                });
            }
            policy.apply_step(&opt.step(&report.gradient));

            let last_step = epoch + 1 == config.epochs && chunk.as_ptr_range().end == order.as_ptr_range().end;
            if step.is_multiple_of(config.eval_every) || last_step {
                let snap = snapshot(&objective, &policy, task, step, step_seed(step))?;
                if let (EarlyStop::OnMetric { patience, metric }, Some(b)) = (config.early_stop, best.as_mut()) {
                    let m = metric_of(&snap, metric)?;
                    if m > b.0 {
                        *b = (m, policy.clone(), step);
                        since_best = 0;
                    } else {
                        since_best += 1;
                    }
                    trace.snapshots.push(snap);
                    if since_best >= patience {
                        trace.stopped_early = true;
                        break 'epochs;
                    }
                } else {
                    trace.snapshots.push(snap);
                }
            }
        }
    }

    match best {
        Some((_, best_policy, best_step)) => {
            trace.returned_step = best_step;
            Ok((best_policy, trace))
        }
        None => {
            trace.returned_step = trace.snapshots.last().map_or(0, |s| s.step);
            Ok((policy, trace))
        }
    }
}

/// Outcome of a finite-difference gradient check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst_feature: Option<FeatureId>,
    pub tolerance: f64,
    pub passed: bool,
}

/// Gradient magnitudes below this are compared on an absolute scale.
pub const GRAD_CHECK_FLOOR: f64 = 1e-4;

/// Compares the analytic gradient of `loss_fn` at `policy` with central
/// differences `(L(w + h) - L(w - h)) / 2h` on every feature the analytic
/// gradient touches. The error of one feature is
/// `|analytic - numeric| / max(|analytic|, |numeric|, GRAD_CHECK_FLOOR)`.
pub fn gradient_check<F>(loss_fn: F, policy: &SequencePolicy, h: f64, tolerance: f64) -> Result<GradCheckReport>
where
    F: Fn(&SequencePolicy) -> Result<LossReport>,
{
    if !(h > 0.0) {
        return Err(Error::InvalidConfig(format!("finite-difference step must be > 0, got {h}")));
    }
    let analytic = loss_fn(policy)?.gradient;
    let mut probe = policy.clone();
    let mut max_rel_error: f64 = 0.0;
    let mut worst_feature = None;
    for (f, a) in analytic.iter() {
        let w = policy.weight(f);
        probe.set_weight(f, w + h);
        let plus = loss_fn(&probe)?.loss;
        probe.set_weight(f, w - h);
        let minus = loss_fn(&probe)?.loss;
        probe.set_weight(f, w);
        let numeric = (plus - minus) / (2.0 * h);
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR);
        if err > max_rel_error || worst_feature.is_none() {
            max_rel_error = max_rel_error.max(err);
            worst_feature = Some(f);
        }
    }
    Ok(GradCheckReport {
        checked: analytic.len(),
        max_rel_error,
        worst_feature,
        tolerance,
        passed: max_rel_error <= tolerance,
    })
}

/// Gradient check of a configured objective on `log`. OSL holds the
/// snapshot `θ'` fixed at `policy`.
pub fn check_objective(
    kind: &ObjectiveKind,
    policy: &SequencePolicy,
    log: &[LoggedInteraction],
    task: &TaskSpec,
    h: f64,
    tolerance: f64,
) -> Result<GradCheckReport> {
    let mut objective = PreparedObjective::new(kind, log, task)?;
    objective.refresh(policy)?;
    gradient_check(|p| objective.evaluate_full(p, 0), policy, h, tolerance)
}

/// Traces of a supervised phase followed by a bandit phase.
#[derive(Debug, Clone)]
pub struct PretrainResult {
    pub pretrained: SequencePolicy,
    pub policy: SequencePolicy,
    pub pretrain: RunTrace,
    pub bandit: RunTrace,
}

/// Maximum likelihood on `sup_pairs`, then `bandit_config` on `log` starting
/// from the pretrained policy.
pub fn pretrain_then_bandit(
    init: &SequencePolicy,
    task: &TaskSpec,
    sup_pairs: &[(InputContext, Sequence)],
    log: &InteractionLog,
    pretrain_config: &TrainConfig,
    bandit_config: &TrainConfig,
) -> Result<PretrainResult> {
    if sup_pairs.is_empty() {
        return Err(Error::InsufficientData("supervised data is empty".into()));
    }
    if pretrain_config.objective != ObjectiveKind::Mle {
        return Err(Error::InvalidConfig("pretraining must use the mle objective".into()));
    }
    let sup_log = InteractionLog::from_records(
        sup_pairs
            .iter()
            .map(|(x, y)| LoggedInteraction::new(x.clone(), y.clone(), 1.0, 1.0))
            .collect(),
    );
    let (pretrained, pretrain) = train(init, &sup_log, task, pretrain_config)?;
    let (policy, bandit) = train(&pretrained, log, task, bandit_config)?;
    Ok(PretrainResult { pretrained, policy, pretrain, bandit })
}
