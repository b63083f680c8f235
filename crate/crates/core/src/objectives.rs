//! Training objectives over logged feedback and value estimators.
//!
//! Every loss returns a [`LossReport`] with its analytic gradient. The
//! bandit losses share one shape, `L = -(1/n) Σ c_t π(ỹ_t|x_t)`, and differ
//! only in the per-record coefficient `c_t`:
//!
//! | objective     | `c_t`                         |
//! |---------------|-------------------------------|
//! | IPS           | `δ_t / μ_t`                   |
//! | DPM           | `δ_t`                         |
//! | OSL           | `δ_t / mean_t π_θ'(ỹ_t|x_t)`  |
//! | DPM+baseline  | `δ_t - running mean of δ`     |
//! | IPS+baseline  | `(δ_t - running mean) / μ_t`  |
//!
//! Their gradient uses `∇π = π ∇log π`.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::Gradient;
use crate::policy::{enumerate_sequences, output_space_len, InputContext, Sequence, SequencePolicy};
use crate::reward_model::{FitConfig, RewardModel};
use crate::simkit::{LoggedInteraction, TaskSpec};

/// Largest output space the brute-force oracle will enumerate per input.
pub const ENUMERATION_LIMIT: usize = 100_000;

/// Smallest admissible self-normalization denominator.
pub const MIN_DENOMINATOR: f64 = 1e-300;

/// Loss value, gradient and the per-record coefficients that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub loss: f64,
    pub gradient: Gradient,
    pub weights: Vec<f64>,
}

/// Where the doubly robust objective gets `δ̂` from.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EstimatorSource {
    /// `δ̂ ≡ 0`.
    #[default]
    Zero,
    /// The task's ground-truth reward (simulation only).
    Oracle,
    /// Fit on the training log before optimization.
    Fit(FitConfig),
}

fn default_refresh() -> usize {
    1
}

fn default_enumeration_limit() -> usize {
    ENUMERATION_LIMIT
}

fn default_samples() -> usize {
    16
}

/// Which loss to optimize, with its options.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ObjectiveKind {
    /// Maximum likelihood of the logged outputs, ignoring rewards.
    Mle,
    Ips {
        /// Optional cap on `1/μ`; biased, off by default.
        #[serde(default)]
        clip: Option<f64>,
    },
    Dpm,
    Osl {
        /// Epochs between refreshes of the stale snapshot `θ'`.
        #[serde(default = "default_refresh")]
        refresh_every: usize,
    },
    DpmBaseline,
    IpsBaseline,
    Dr {
        #[serde(default)]
        estimator: EstimatorSource,
        #[serde(default = "default_enumeration_limit")]
        enumeration_limit: usize,
        #[serde(default = "default_samples")]
        samples: usize,
    },
}

impl ObjectiveKind {
    pub fn name(&self) -> &'static str {
        match self {
            ObjectiveKind::Mle => "mle",
            ObjectiveKind::Ips { .. } => "ips",
            ObjectiveKind::Dpm => "dpm",
            ObjectiveKind::Osl { .. } => "osl",
            ObjectiveKind::DpmBaseline => "dpm_baseline",
            ObjectiveKind::IpsBaseline => "ips_baseline",
            ObjectiveKind::Dr { .. } => "dr",
        }
    }

    pub fn dr_default() -> Self {
        ObjectiveKind::Dr {
            estimator: EstimatorSource::Zero,
            enumeration_limit: ENUMERATION_LIMIT,
            samples: default_samples(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ObjectiveKind::Ips { clip: Some(c) } if !(*c > 0.0) => {
                Err(Error::InvalidConfig(format!("objective.clip must be > 0, got {c}")))
            }
            ObjectiveKind::Osl { refresh_every: 0 } => {
                Err(Error::InvalidConfig("objective.refresh_every must be >= 1".into()))
            }
            ObjectiveKind::Dr { samples: 0, .. } => {
                Err(Error::InvalidConfig("objective.samples must be >= 1".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn requires_propensities(&self) -> bool {
        matches!(self, ObjectiveKind::Ips { .. } | ObjectiveKind::IpsBaseline)
    }
}

fn check_non_empty<T>(items: &[T], what: &str) -> Result<()> {
    if items.is_empty() {
        return Err(Error::InsufficientData(format!("{what} must not be empty")));
    }
    Ok(())
}

fn check_propensities(records: &[LoggedInteraction]) -> Result<()> {
    if let Some((t, r)) = records.iter().enumerate().find(|(_, r)| !(r.propensity > 0.0)) {
        return Err(Error::InvalidLog(format!("record {t} has propensity {}", r.propensity)));
    }
    Ok(())
}

/// `L = -(1/n) Σ c_t π(ỹ_t|x_t)` for arbitrary coefficients.
pub fn weighted_probability_loss(
    policy: &SequencePolicy,
    records: &[LoggedInteraction],
    coefficients: &[f64],
) -> Result<LossReport> {
    check_non_empty(records, "records")?;
    if coefficients.len() != records.len() {
        return Err(Error::InvalidConfig(format!(
            "{} coefficients for {} records",
            coefficients.len(),
            records.len()
        )));
    }
    let n = records.len() as f64;
    let mut loss = 0.0;
    let mut gradient = Gradient::new();
    for (r, &c) in records.iter().zip(coefficients) {
        let p = policy.sequence_probability(&r.input, &r.output)?;
        loss -= c * p;
        policy.accumulate_log_prob_gradient(&r.input, &r.output, -c * p / n, &mut gradient)?;
    }
    Ok(LossReport { loss: loss / n, gradient, weights: coefficients.to_vec() })
}

/// Negative mean log-likelihood of supervised pairs.
pub fn mle_loss(policy: &SequencePolicy, pairs: &[(InputContext, Sequence)]) -> Result<LossReport> {
    check_non_empty(pairs, "pairs")?;
    let n = pairs.len() as f64;
    let mut loss = 0.0;
    let mut gradient = Gradient::new();
    for (x, y) in pairs {
        loss -= policy.sequence_log_probability(x, y)?;
        policy.accumulate_log_prob_gradient(x, y, -1.0 / n, &mut gradient)?;
    }
    Ok(LossReport { loss: loss / n, gradient, weights: vec![1.0; pairs.len()] })
}

/// Inverse propensity scoring: `-(1/T) Σ δ_t π(ỹ_t|x_t) / μ_t`.
pub fn ips_loss(policy: &SequencePolicy, records: &[LoggedInteraction]) -> Result<LossReport> {
    check_propensities(records)?;
    let c: Vec<f64> = records.iter().map(|r| r.reward / r.propensity).collect();
    weighted_probability_loss(policy, records, &c)
}

/// IPS with `1/μ_t` capped at `max_inverse_propensity`. Biased whenever the
/// cap binds.
pub fn ips_loss_clipped(
    policy: &SequencePolicy,
    records: &[LoggedInteraction],
    max_inverse_propensity: f64,
) -> Result<LossReport> {
    check_propensities(records)?;
    let c: Vec<f64> = records
        .iter()
        .map(|r| r.reward * (1.0 / r.propensity).min(max_inverse_propensity))
        .collect();
    weighted_probability_loss(policy, records, &c)
}

/// Deterministic propensity matching: IPS with every `μ` taken as 1.
pub fn dpm_loss(policy: &SequencePolicy, records: &[LoggedInteraction]) -> Result<LossReport> {
    let c: Vec<f64> = records.iter().map(|r| r.reward).collect();
    weighted_probability_loss(policy, records, &c)
}

/// `(1/T) Σ_t π_stale(ỹ_t|x_t)` over the full log.
pub fn osl_denominator(stale: &SequencePolicy, full_log: &[LoggedInteraction]) -> Result<f64> {
    check_non_empty(full_log, "log")?;
    let mut total = 0.0;
    for r in full_log {
        total += stale.sequence_probability(&r.input, &r.output)?;
    }
    let d = total / full_log.len() as f64;
    if !(d >= MIN_DENOMINATOR) {
        return Err(Error::DegenerateDenominator(d));
    }
    Ok(d)
}

/// One-step-late reweighted loss with a precomputed denominator, which is a
/// constant for the gradient.
pub fn osl_loss_with_denominator(
    policy: &SequencePolicy,
    batch: &[LoggedInteraction],
    denominator: f64,
) -> Result<LossReport> {
    if !(denominator >= MIN_DENOMINATOR) {
        return Err(Error::DegenerateDenominator(denominator));
    }
    let c: Vec<f64> = batch.iter().map(|r| r.reward / denominator).collect();
    weighted_probability_loss(policy, batch, &c)
}

/// `-[(1/B) Σ_batch δ_b π_θ(ỹ_b|x_b)] / [(1/T) Σ_log π_θ'(ỹ_t|x_t)]`.
pub fn osl_loss(
    policy: &SequencePolicy,
    batch: &[LoggedInteraction],
    full_log: &[LoggedInteraction],
    stale: &SequencePolicy,
) -> Result<LossReport> {
    if batch.len() > full_log.len() {
        return Err(Error::InvalidConfig(format!(
            "batch of {} exceeds log of {}",
            batch.len(),
            full_log.len()
        )));
    }
    let d = osl_denominator(stale, full_log)?;
    osl_loss_with_denominator(policy, batch, d)
}

/// `δ_t - (1/t) Σ_{t' ≤ t} δ_t'`, with the running mean including record `t`.
pub fn baseline_center(rewards: &[f64]) -> Vec<f64> {
    let mut mean = 0.0;
    rewards
        .iter()
        .enumerate()
        .map(|(i, &d)| {
            mean += (d - mean) / (i + 1) as f64;
            d - mean
        })
        .collect()
}

/// DPM with running-mean centered rewards.
pub fn dpm_baseline_loss(policy: &SequencePolicy, records: &[LoggedInteraction]) -> Result<LossReport> {
    let rewards: Vec<f64> = records.iter().map(|r| r.reward).collect();
    weighted_probability_loss(policy, records, &baseline_center(&rewards))
}

/// IPS with running-mean centered rewards.
pub fn ips_baseline_loss(policy: &SequencePolicy, records: &[LoggedInteraction]) -> Result<LossReport> {
    check_propensities(records)?;
    let rewards: Vec<f64> = records.iter().map(|r| r.reward).collect();
    let c: Vec<f64> = baseline_center(&rewards)
        .into_iter()
        .zip(records)
        .map(|(d, r)| d / r.propensity)
        .collect();
    weighted_probability_loss(policy, records, &c)
}

/// How the doubly robust direct term `Σ_y' δ̂(x, y') π(y'|x)` is computed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirectTerm {
    /// Enumerate the output space when `|Y|^M` is at most this.
    pub enumeration_limit: usize,
    /// Monte Carlo sample count otherwise.
    pub samples: usize,
    pub seed: u64,
}

impl Default for DirectTerm {
    fn default() -> Self {
        Self { enumeration_limit: ENUMERATION_LIMIT, samples: default_samples(), seed: 0 }
    }
}

fn clamped(model: &dyn RewardModel, x: &InputContext, y: &Sequence) -> Result<f64> {
    Ok(model.predict(x, y)?.clamp(0.0, 1.0))
}

/// Doubly robust loss:
/// `-(1/T) Σ_t [(δ_t - δ̂(x_t, ỹ_t)) π(ỹ_t|x_t) + Σ_y' δ̂(x_t, y') π(y'|x_t)]`.
///
/// The direct term is an exact expectation when the output space is small
/// enough, otherwise the mean of `δ̂` over `samples` draws from the policy
/// with a score-function gradient. Estimator outputs are clamped to `[0, 1]`.
/// Per-record weights are the residuals `δ_t - δ̂`.
pub fn dr_loss(
    policy: &SequencePolicy,
    records: &[LoggedInteraction],
    model: &dyn RewardModel,
    direct: DirectTerm,
) -> Result<LossReport> {
    check_non_empty(records, "records")?;
    let n = records.len() as f64;
    let enumerate = output_space_len(policy.vocab(), policy.max_len()) <= direct.enumeration_limit as f64;
    if !enumerate && direct.samples == 0 {
        return Err(Error::InvalidConfig("DR needs at least one Monte Carlo sample".into()));
    }

    let mut loss = 0.0;
    let mut gradient = Gradient::new();
    let mut residuals = Vec::with_capacity(records.len());
    let mut exact_cache: HashMap<u32, (f64, Gradient)> = HashMap::new();
    let mut rng = ChaCha8Rng::seed_from_u64(direct.seed);

    for r in records {
        let p = policy.sequence_probability(&r.input, &r.output)?;
        let residual = r.reward - clamped(model, &r.input, &r.output)?;
        residuals.push(residual);
        loss -= residual * p;
        policy.accumulate_log_prob_gradient(&r.input, &r.output, -residual * p / n, &mut gradient)?;

        if enumerate {
            if let std::collections::hash_map::Entry::Vacant(slot) = exact_cache.entry(r.input.id) {
                let mut value = 0.0;
                let mut g = Gradient::new();
                for y in enumerate_sequences(policy.vocab(), policy.max_len()) {
                    let q = policy.sequence_probability(&r.input, &y)?;
                    let d = clamped(model, &r.input, &y)?;
                    value += d * q;
                    policy.accumulate_log_prob_gradient(&r.input, &y, d * q, &mut g)?;
                }
                slot.insert((value, g));
            }
            let (value, g) = &exact_cache[&r.input.id];
            loss -= value;
            gradient.add_scaled(g, -1.0 / n);
        } else {
            let k = direct.samples as f64;
            for _ in 0..direct.samples {
                let (y, _) = policy.sample_sequence(&r.input, &mut rng);
                let d = clamped(model, &r.input, &y)?;
                loss -= d / k;
                policy.accumulate_log_prob_gradient(&r.input, &y, -d / (k * n), &mut gradient)?;
            }
        }
    }
    Ok(LossReport { loss: loss / n, gradient, weights: residuals })
}

/// Exact `V(π) = Σ_x p(x) Σ_y π(y|x) δ*(x, y)` by enumeration.
pub fn value_brute_force(policy: &SequencePolicy, task: &TaskSpec) -> Result<f64> {
    let size = output_space_len(task.vocab(), task.max_len);
    if size > ENUMERATION_LIMIT as f64 {
        return Err(Error::SpaceTooLarge { size, limit: ENUMERATION_LIMIT });
    }
    let mut v = 0.0;
    for w in &task.inputs {
        if w.weight == 0.0 {
            continue;
        }
        let mut vx = 0.0;
        for y in enumerate_sequences(task.vocab(), task.max_len) {
            vx += policy.sequence_probability(&w.input, &y)? * task.true_reward(&w.input, &y)?;
        }
        v += w.weight * vx;
    }
    Ok(v)
}

/// Monte Carlo estimate of `V(π)` with its standard error.
pub fn value_monte_carlo(policy: &SequencePolicy, task: &TaskSpec, samples: usize, seed: u64) -> Result<(f64, f64)> {
    if samples < 2 {
        return Err(Error::InvalidConfig("Monte Carlo value needs at least 2 samples".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draws: Vec<f64> = (0..samples)
        .map(|_| {
            let x = task.sample_input(&mut rng).clone();
            let (y, _) = policy.sample_sequence(&x, &mut rng);
            task.true_reward(&x, &y)
        })
        .collect::<Result<_>>()?;
    let n = samples as f64;
    let mean = draws.iter().sum::<f64>() / n;
    let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((mean, (var / n).sqrt()))
}

/// Self-normalized estimate `Σ δ_t w_t / Σ w_t`, `w_t = π(ỹ_t|x_t) / μ_t`.
pub fn value_self_normalized(policy: &SequencePolicy, records: &[LoggedInteraction]) -> Result<f64> {
    check_non_empty(records, "records")?;
    check_propensities(records)?;
    let mut num = 0.0;
    let mut den = 0.0;
    for r in records {
        let w = policy.sequence_probability(&r.input, &r.output)? / r.propensity;
        num += r.reward * w;
        den += w;
    }
    if !(den >= MIN_DENOMINATOR) {
        return Err(Error::DegenerateDenominator(den));
    }
    Ok(num / den)
}

/// `Σ_t π(ỹ_t|x_t)`: probability mass the policy puts on the logged outputs.
pub fn logged_mass(policy: &SequencePolicy, records: &[LoggedInteraction]) -> Result<f64> {
    records
        .iter()
        .map(|r| policy.sequence_probability(&r.input, &r.output))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{StepContext, Vocabulary};
    use crate::reward_model::ConstantReward;
    use approx::assert_relative_eq;

    fn desk() -> SequencePolicy {
        SequencePolicy::uniform(Vocabulary::new(3).unwrap(), 2).unwrap()
    }

    fn rec(y: &[u32], delta: f64, mu: f64) -> LoggedInteraction {
        LoggedInteraction::new(InputContext::new(0), Sequence(y.to_vec()), delta, mu)
    }

    /// Single-step policy over 3 tokens with `π(0) = p0`.
    fn one_step_with(p0: f64) -> SequencePolicy {
        let mut p = SequencePolicy::uniform(Vocabulary::new(3).unwrap(), 1).unwrap();
        let x = InputContext::new(0);
        let ctx = StepContext { input: &x, position: 0, prev: None };
        let mut ids = Vec::new();
        p.feature_map().features(&ctx, 0, &mut ids);
        // softmax(s, 0, 0)[0] = p0  =>  s = ln(2 p0 / (1 - p0))
        p.set_weight(ids[0], (2.0 * p0 / (1.0 - p0)).ln());
        p
    }

    #[test]
    fn mle_uniform_is_log9() {
        let pairs = vec![(InputContext::new(0), Sequence(vec![0, 1]))];
        let r = mle_loss(&desk(), &pairs).unwrap();
        assert_relative_eq!(r.loss, 9f64.ln(), max_relative = 1e-14);
    }

    #[test]
    fn ips_and_dpm_formula() {
        let p = one_step_with(0.2);
        let log = vec![LoggedInteraction::new(InputContext::new(0), Sequence(vec![0]), 0.5, 0.4)];
        assert_relative_eq!(ips_loss(&p, &log).unwrap().loss, -0.25, max_relative = 1e-12);
        assert_relative_eq!(dpm_loss(&p, &log).unwrap().loss, -0.1, max_relative = 1e-12);
        assert_eq!(ips_loss(&p, &log).unwrap().weights, vec![0.5 / 0.4]);
    }

    #[test]
    fn ips_rejects_bad_propensity() {
        let log = vec![rec(&[0, 0], 0.5, 0.0)];
        assert!(matches!(ips_loss(&desk(), &log), Err(Error::InvalidLog(_))));
    }

    #[test]
    fn ips_with_matching_propensities_is_mean_reward() {
        let mut p = desk();
        p.set_weight(123, 0.0);
        let x = InputContext::new(0);
        let ctx = StepContext { input: &x, position: 0, prev: None };
        let mut ids = Vec::new();
        p.feature_map().features(&ctx, 1, &mut ids);
        p.set_weight(ids[0], 0.8);
        let outs = [[1u32, 0], [2, 2], [0, 1]];
        let deltas = [0.3, 0.9, 0.6];
        let log: Vec<_> = outs
            .iter()
            .zip(deltas)
            .map(|(y, d)| {
                let y = Sequence(y.to_vec());
                let mu = p.sequence_probability(&x, &y).unwrap();
                LoggedInteraction::new(x.clone(), y, d, mu)
            })
            .collect();
        assert_relative_eq!(ips_loss(&p, &log).unwrap().loss, -0.6, max_relative = 1e-12);
    }

    #[test]
    fn dpm_ignores_zero_rewards() {
        let log = vec![rec(&[0, 0], 0.0, 1.0), rec(&[1, 2], 0.0, 1.0)];
        let r = dpm_loss(&desk(), &log).unwrap();
        assert_eq!(r.loss, 0.0);
        assert_eq!(r.gradient.max_abs(), 0.0);
    }

    #[test]
    fn dpm_equals_ips_with_unit_propensities() {
        let log = vec![rec(&[0, 0], 0.4, 1.0), rec(&[1, 2], 0.9, 1.0)];
        assert_eq!(dpm_loss(&desk(), &log).unwrap(), ips_loss(&desk(), &log).unwrap());
    }

    #[test]
    fn osl_formula() {
        // π_θ = (0.2, 0.3) on two single-step outputs; stale policy uniform
        // over 4 tokens gives denominator terms (0.25, 0.25)
        let mut p = SequencePolicy::uniform(Vocabulary::new(4).unwrap(), 1).unwrap();
        let x = InputContext::new(0);
        let ctx = StepContext { input: &x, position: 0, prev: None };
        // softmax(a, b, 0, 0) = (0.2, 0.3, 0.25, 0.25): exp(a) = 0.2/0.25 * 1
        let mut ids = Vec::new();
        p.feature_map().features(&ctx, 0, &mut ids);
        p.set_weight(ids[0], (0.8f64).ln());
        ids.clear();
        p.feature_map().features(&ctx, 1, &mut ids);
        p.set_weight(ids[0], (1.2f64).ln());
        let stale = SequencePolicy::uniform(Vocabulary::new(4).unwrap(), 1).unwrap();
        let log = vec![
            LoggedInteraction::new(x.clone(), Sequence(vec![0]), 1.0, 1.0),
            LoggedInteraction::new(x.clone(), Sequence(vec![1]), 0.0, 1.0),
        ];
        let r = osl_loss(&p, &log, &log, &stale).unwrap();
        assert_relative_eq!(r.loss, -0.4, max_relative = 1e-12);
    }

    #[test]
    fn osl_with_current_snapshot_is_scaled_dpm() {
        let mut p = desk();
        for (i, id) in p.active_features(&[InputContext::new(0)]).into_iter().enumerate() {
            p.set_weight(id, (i as f64).cos());
        }
        let log = vec![rec(&[0, 0], 0.4, 1.0), rec(&[1, 2], 0.9, 1.0), rec(&[2, 1], 0.1, 1.0)];
        let mean_p = logged_mass(&p, &log).unwrap() / 3.0;
        let osl = osl_loss(&p, &log, &log, &p).unwrap();
        let dpm = dpm_loss(&p, &log).unwrap();
        assert_relative_eq!(osl.loss, dpm.loss / mean_p, max_relative = 1e-12);
    }

    #[test]
    fn osl_degenerate_denominator() {
        assert!(matches!(
            osl_loss_with_denominator(&desk(), &[rec(&[0, 0], 1.0, 1.0)], 0.0),
            Err(Error::DegenerateDenominator(_))
        ));
    }

    #[test]
    fn baseline_examples() {
        let c = baseline_center(&[0.2, 0.8]);
        assert_eq!(c[0], 0.0);
        assert_relative_eq!(c[1], 0.3, epsilon = 1e-15);
        assert!(baseline_center(&[0.7; 5]).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dr_with_zero_estimator_is_dpm() {
        let log = vec![rec(&[0, 0], 0.4, 1.0), rec(&[1, 2], 0.9, 1.0)];
        let dr = dr_loss(&desk(), &log, &ConstantReward(0.0), DirectTerm::default()).unwrap();
        let dpm = dpm_loss(&desk(), &log).unwrap();
        assert_eq!(dr.loss, dpm.loss);
    }

    #[test]
    fn dr_with_oracle_on_uniform_desk_is_minus_one_third() {
        let task = TaskSpec::desk();
        let log = vec![rec(&[0, 0], 0.5, 1.0), rec(&[2, 2], 0.0, 1.0)];
        let dr = dr_loss(&desk(), &log, &task, DirectTerm::default()).unwrap();
        assert_relative_eq!(dr.loss, -1.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn dr_monte_carlo_fallback_is_seeded() {
        let task = TaskSpec::desk();
        let log = vec![rec(&[0, 0], 0.5, 1.0)];
        let mc = DirectTerm { enumeration_limit: 1, samples: 4000, seed: 3 };
        let a = dr_loss(&desk(), &log, &task, mc).unwrap();
        let b = dr_loss(&desk(), &log, &task, mc).unwrap();
        assert_eq!(a, b);
        assert!((a.loss + 1.0 / 3.0).abs() < 0.03);
    }

    #[test]
    fn brute_force_values() {
        let task = TaskSpec::desk();
        assert_relative_eq!(value_brute_force(&desk(), &task).unwrap(), 1.0 / 3.0, epsilon = 1e-15);
        let mut big = task.clone();
        big.vocab_size = Vocabulary::new(10).unwrap();
        big.max_len = 6;
        big.references.insert(0, Sequence(vec![0; 6]));
        let p = SequencePolicy::uniform(big.vocab(), 6).unwrap();
        assert!(matches!(value_brute_force(&p, &big), Err(Error::SpaceTooLarge { .. })));
        let (v, se) = value_monte_carlo(&p, &big, 2000, 1).unwrap();
        assert!((v - 0.1).abs() < 5.0 * se);
    }

    #[test]
    fn self_normalized_simple_cases() {
        let log = vec![rec(&[0, 0], 0.2, 1.0), rec(&[1, 1], 0.6, 1.0)];
        assert_relative_eq!(value_self_normalized(&desk(), &log).unwrap(), 0.4, epsilon = 1e-15);
        assert_eq!(value_self_normalized(&desk(), &log[..1]).unwrap(), 0.2);
    }
}
