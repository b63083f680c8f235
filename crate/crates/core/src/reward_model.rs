//! Learned reward estimator `δ̂(x, y)` for the doubly robust objective.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, ModelKind};
use crate::error::{Error, Result};
use crate::features::{feature_key, FeatureId, Gradient};
use crate::policy::{InputContext, Sequence, Vocabulary};
use crate::simkit::{LoggedInteraction, TaskSpec};

/// Anything that scores an `(input, output)` pair.
pub trait RewardModel {
    fn predict(&self, x: &InputContext, y: &Sequence) -> Result<f64>;
}

/// `δ̂ ≡ c`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantReward(pub f64);

impl RewardModel for ConstantReward {
    fn predict(&self, _x: &InputContext, _y: &Sequence) -> Result<f64> {
        Ok(self.0)
    }
}

/// The task's ground-truth reward used as an estimator.
impl RewardModel for TaskSpec {
    fn predict(&self, x: &InputContext, y: &Sequence) -> Result<f64> {
        self.true_reward(x, y)
    }
}

const TAG_UNIGRAM: u64 = 11;
const TAG_BIGRAM: u64 = 12;
const TAG_TABULAR: u64 = 13;

/// Sequence-level features for the estimator.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum RewardFeatureMap {
    /// `(input, position, token)` indicators plus
    /// `(input, position, token, next token)` bigram indicators.
    #[default]
    Ngram,
    /// One indicator per distinct `(input, output)` pair.
    Tabular,
}

impl RewardFeatureMap {
    pub fn features(&self, x: &InputContext, y: &Sequence) -> Vec<FeatureId> {
        let xid = u64::from(x.id);
        let t = y.tokens();
        match self {
            RewardFeatureMap::Ngram => {
                let mut out = Vec::with_capacity(2 * t.len());
                for (j, &tok) in t.iter().enumerate() {
                    out.push(feature_key(TAG_UNIGRAM, &[xid, j as u64, u64::from(tok)]));
                }
                for (j, w) in t.windows(2).enumerate() {
                    out.push(feature_key(
                        TAG_BIGRAM,
                        &[xid, j as u64, u64::from(w[0]), u64::from(w[1])],
                    ));
                }
                out
            }
            RewardFeatureMap::Tabular => {
                let mut parts = vec![xid, t.len() as u64];
                parts.extend(t.iter().map(|&tok| u64::from(tok)));
                vec![feature_key(TAG_TABULAR, &parts)]
            }
        }
    }
}

/// One regression target `(x, y, δ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardSample {
    pub input: InputContext,
    pub output: Sequence,
    pub reward: f64,
}

impl From<&LoggedInteraction> for RewardSample {
    fn from(r: &LoggedInteraction) -> Self {
        Self { input: r.input.clone(), output: r.output.clone(), reward: r.reward }
    }
}

/// Linear reward estimator; predictions are clamped to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardEstimator {
    weights: BTreeMap<FeatureId, f64>,
    feature_map: RewardFeatureMap,
    vocab: Vocabulary,
    max_len: usize,
}

impl RewardEstimator {
    pub fn zero(vocab: Vocabulary, max_len: usize, feature_map: RewardFeatureMap) -> Self {
        Self { weights: BTreeMap::new(), feature_map, vocab, max_len }
    }

    pub fn weights(&self) -> &BTreeMap<FeatureId, f64> {
        &self.weights
    }

    pub fn set_weight(&mut self, id: FeatureId, value: f64) {
        self.weights.insert(id, value);
    }

    pub fn feature_map(&self) -> RewardFeatureMap {
        self.feature_map
    }

    /// Unclamped linear score.
    pub fn score(&self, x: &InputContext, y: &Sequence) -> f64 {
        self.feature_map
            .features(x, y)
            .iter()
            .map(|f| self.weights.get(f).copied().unwrap_or(0.0))
            .sum()
    }

    pub fn predict(&self, x: &InputContext, y: &Sequence) -> f64 {
        self.score(x, y).clamp(0.0, 1.0)
    }

    pub fn to_checkpoint(&self) -> Checkpoint<RewardFeatureMap> {
        Checkpoint {
            kind: ModelKind::RewardModel,
            vocab_size: self.vocab.size(),
            max_len: self.max_len,
            feature_map: self.feature_map,
            weights: self.weights.clone(),
        }
    }

    pub fn from_checkpoint(ckpt: Checkpoint<RewardFeatureMap>) -> Result<Self> {
        if ckpt.kind != ModelKind::RewardModel {
            return Err(Error::Checkpoint("not a reward model checkpoint".into()));
        }
        let vocab = Vocabulary::new(ckpt.vocab_size).map_err(|e| Error::Checkpoint(e.to_string()))?;
        Ok(Self { weights: ckpt.weights, feature_map: ckpt.feature_map, vocab, max_len: ckpt.max_len })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(Checkpoint::load(path, ModelKind::RewardModel)?)
    }
}

impl RewardModel for RewardEstimator {
    fn predict(&self, x: &InputContext, y: &Sequence) -> Result<f64> {
        Ok(RewardEstimator::predict(self, x, y))
    }
}

/// Training-set mean squared error `1/N Σ (score - δ)^2` and its gradient
/// with respect to the weights.
pub fn mse_loss(estimator: &RewardEstimator, samples: &[RewardSample]) -> (f64, Gradient) {
    let n = samples.len() as f64;
    let mut loss = 0.0;
    let mut grad = Gradient::new();
    for s in samples {
        let r = estimator.score(&s.input, &s.output) - s.reward;
        loss += r * r;
        for f in estimator.feature_map.features(&s.input, &s.output) {
            grad.add(f, 2.0 * r / n);
        }
    }
    (loss / n, grad)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub epochs: usize,
    pub lr: f64,
    #[serde(default)]
    pub seed: u64,
    /// `None` for full-batch gradient descent.
    #[serde(default)]
    pub batch_size: Option<usize>,
    #[serde(default)]
    pub feature_map: RewardFeatureMap,
}

impl FitConfig {
    pub fn full_batch(epochs: usize, lr: f64) -> Self {
        Self { epochs, lr, seed: 0, batch_size: None, feature_map: RewardFeatureMap::default() }
    }
}

/// Fitted estimator plus the training MSE before the first epoch and after
/// every epoch.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub estimator: RewardEstimator,
    pub trace: Vec<f64>,
}

/// Fits the estimator by gradient descent on squared error, starting from
/// zero weights.
pub fn fit(
    samples: &[RewardSample],
    vocab: Vocabulary,
    max_len: usize,
    config: &FitConfig,
) -> Result<FitResult> {
    if samples.is_empty() {
        return Err(Error::InsufficientData("reward model needs at least one record".into()));
    }
    if !(config.lr.is_finite() && config.lr >= 0.0) {
        return Err(Error::InvalidConfig(format!("fit lr must be >= 0, got {}", config.lr)));
    }
    for s in samples {
        s.output.validate(vocab, max_len)?;
    }

    // dense indexing over the features the data touches
    let mut index: BTreeMap<FeatureId, usize> = BTreeMap::new();
    let rows: Vec<Vec<usize>> = samples
        .iter()
        .map(|s| {
            config
                .feature_map
                .features(&s.input, &s.output)
                .into_iter()
                .map(|f| {
                    let next = index.len();
                    *index.entry(f).or_insert(next)
                })
                .collect()
        })
        .collect();
    let targets: Vec<f64> = samples.iter().map(|s| s.reward).collect();
    let mut w = vec![0.0; index.len()];

    let mse = |w: &[f64]| -> f64 {
        rows.iter()
            .zip(&targets)
            .map(|(row, t)| {
                let r = row.iter().map(|&i| w[i]).sum::<f64>() - t;
                r * r
            })
            .sum::<f64>()
            / rows.len() as f64
    };

    let mut order: Vec<usize> = (0..rows.len()).collect();
    let batch = config.batch_size.unwrap_or(rows.len()).clamp(1, rows.len());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut trace = Vec::with_capacity(config.epochs + 1);
    trace.push(mse(&w));
    let mut grad = vec![0.0; w.len()];
    for _ in 0..config.epochs {
        if batch < rows.len() {
            order.shuffle(&mut rng);
        }
        for chunk in order.chunks(batch) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let scale = 2.0 / chunk.len() as f64;
            for &i in chunk {
                let r = rows[i].iter().map(|&k| w[k]).sum::<f64>() - targets[i];
                for &k in &rows[i] {
                    grad[k] += scale * r;
                }
            }
            for (wk, gk) in w.iter_mut().zip(&grad) {
                *wk -= config.lr * gk;
            }
        }
        trace.push(mse(&w));
    }
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { step: config.epochs, what: "reward model weights".into() });
    }

    let mut estimator = RewardEstimator::zero(vocab, max_len, config.feature_map);
    for (f, i) in index {
        estimator.weights.insert(f, w[i]);
    }
    Ok(FitResult { estimator, trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::enumerate_sequences;

    fn desk_samples() -> Vec<RewardSample> {
        let task = TaskSpec::desk();
        let x = InputContext::new(0);
        enumerate_sequences(task.vocab(), 2)
            .map(|y| RewardSample { reward: task.true_reward(&x, &y).unwrap(), input: x.clone(), output: y })
            .collect()
    }

    #[test]
    fn zero_estimator_predicts_zero() {
        let e = RewardEstimator::zero(Vocabulary::new(3).unwrap(), 2, RewardFeatureMap::Ngram);
        for s in desk_samples() {
            assert_eq!(e.predict(&s.input, &s.output), 0.0);
        }
    }

    #[test]
    fn predictions_are_clamped() {
        let mut e = RewardEstimator::zero(Vocabulary::new(3).unwrap(), 2, RewardFeatureMap::Ngram);
        let s = &desk_samples()[4];
        for (i, f) in e.feature_map().features(&s.input, &s.output).into_iter().enumerate() {
            e.set_weight(f, if i == 0 { 5.0 } else { 1.0 });
        }
        assert_eq!(e.predict(&s.input, &s.output), 1.0);
        for f in e.feature_map().features(&s.input, &s.output) {
            e.set_weight(f, -2.0);
        }
        assert_eq!(e.predict(&s.input, &s.output), 0.0);
    }

    #[test]
    fn single_record_regression() {
        let sample = RewardSample { input: InputContext::new(0), output: Sequence(vec![2, 1]), reward: 0.7 };
        for fm in [RewardFeatureMap::Tabular, RewardFeatureMap::Ngram] {
            let cfg = FitConfig { feature_map: fm, ..FitConfig::full_batch(500, 0.3) };
            let fit = fit(std::slice::from_ref(&sample), Vocabulary::new(3).unwrap(), 2, &cfg).unwrap();
            assert!((fit.estimator.predict(&sample.input, &sample.output) - 0.7).abs() < 1e-6);
        }
    }

    #[test]
    fn noiseless_desk_fit() {
        let samples = desk_samples();
        let fit = fit(&samples, Vocabulary::new(3).unwrap(), 2, &FitConfig::full_batch(3000, 0.3)).unwrap();
        assert!(*fit.trace.last().unwrap() < 1e-6);
        for s in &samples {
            assert!((fit.estimator.predict(&s.input, &s.output) - s.reward).abs() < 1e-3);
        }
        // below ε² the trace is rounding noise of unit-scale targets
        for w in fit.trace.windows(2) {
            assert!(w[1] <= w[0] + f64::EPSILON.powi(2), "{} > {}", w[1], w[0]);
        }
    }

    #[test]
    fn minibatch_fit_is_seed_deterministic() {
        let samples = desk_samples();
        let cfg = FitConfig { batch_size: Some(2), seed: 8, ..FitConfig::full_batch(50, 0.1) };
        let a = fit(&samples, Vocabulary::new(3).unwrap(), 2, &cfg).unwrap();
        let b = fit(&samples, Vocabulary::new(3).unwrap(), 2, &cfg).unwrap();
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.estimator, b.estimator);
    }

    #[test]
    fn empty_records_rejected() {
        assert!(fit(&[], Vocabulary::new(3).unwrap(), 2, &FitConfig::full_batch(1, 0.1)).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let samples = desk_samples();
        let fit = fit(&samples, Vocabulary::new(3).unwrap(), 2, &FitConfig::full_batch(20, 0.3)).unwrap();
        let text = fit.estimator.to_checkpoint().to_json().unwrap();
        let back = RewardEstimator::from_checkpoint(Checkpoint::from_json(&text, ModelKind::RewardModel).unwrap())
            .unwrap();
        assert_eq!(back, fit.estimator);
    }
}
