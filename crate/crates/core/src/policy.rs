//! Locally normalized left-to-right sequence policy.
//!
//! The probability of an output factorizes over positions,
//! `π(y|x) = ∏_j π(y_j | y_<j, x)`, and each step distribution is a softmax
//! over linear scores `s(tok) = Σ w[f]` for the features `f` active on
//! `(step context, tok)`. Sequences have a fixed length `M` (no end token),
//! so the output space has exactly `|Y|^M` members.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, ModelKind};
use crate::error::{Error, Result};
use crate::features::{feature_key, FeatureId, Gradient};

/// Output vocabulary with dense token ids `0..size`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "usize", into = "usize")]
pub struct Vocabulary {
    size: usize,
}

impl Vocabulary {
    pub fn new(size: usize) -> Result<Self> {
        if size < 2 {
            return Err(Error::InvalidConfig(format!(
                "vocabulary needs at least 2 tokens, got {size}"
            )));
        }
        if size > u32::MAX as usize {
            return Err(Error::InvalidConfig(format!("vocabulary too large: {size}")));
        }
        Ok(Self { size })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn tokens(&self) -> impl Iterator<Item = u32> {
        0..self.size as u32
    }
}

impl TryFrom<usize> for Vocabulary {
    type Error = Error;
    fn try_from(size: usize) -> Result<Self> {
        Vocabulary::new(size)
    }
}

impl From<Vocabulary> for usize {
    fn from(v: Vocabulary) -> usize {
        v.size
    }
}

/// An output sequence of token ids.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Sequence(pub Vec<u32>);

impl Sequence {
    pub fn new(tokens: Vec<u32>) -> Self {
        Self(tokens)
    }

    pub fn tokens(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Checks `1 <= len <= max_len` and that every id is in the vocabulary.
    pub fn validate(&self, vocab: Vocabulary, max_len: usize) -> Result<()> {
        if self.0.is_empty() || self.0.len() > max_len {
            return Err(Error::InvalidSequence(format!(
                "length {} not in 1..={max_len}",
                self.0.len()
            )));
        }
        if let Some(&t) = self.0.iter().find(|&&t| t as usize >= vocab.size()) {
            return Err(Error::InvalidSequence(format!(
                "token {t} not in vocabulary of size {}",
                vocab.size()
            )));
        }
        Ok(())
    }
}

impl From<Vec<u32>> for Sequence {
    fn from(v: Vec<u32>) -> Self {
        Self(v)
    }
}

impl std::fmt::Display for Sequence {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "(")?;
        for (i, t) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{t}")?;
        }
        write!(f, ")")
    }
}

/// The input `x`. The id keys feature lookup and must be stable within a run.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct InputContext {
    pub id: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tokens: Option<Vec<u32>>,
}

impl InputContext {
    pub fn new(id: u32) -> Self {
        Self { id, tokens: None }
    }
}

/// Conditioning set for one generation step: the input, the 0-based
/// position, and the previous output token (`None` at the first position).
#[derive(Debug, Clone, Copy)]
pub struct StepContext<'a> {
    pub input: &'a InputContext,
    pub position: usize,
    pub prev: Option<u32>,
}

const TAG_TABULAR: u64 = 1;
const TAG_UNIGRAM: u64 = 2;
const TAG_BIGRAM: u64 = 3;
const TAG_INPUT_TOKEN: u64 = 4;
const BOS: u64 = u64::MAX;

/// Maps `(step context, candidate token)` to the active feature ids.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum FeatureMap {
    /// One indicator per `(input id, position, previous token, token)`.
    #[default]
    Tabular,
    /// Token unigram, `(previous, token)` bigram and `(input, position, token)`
    /// indicators, hashed into `buckets` shared weights.
    HashedNgram { buckets: u64 },
}

impl FeatureMap {
    /// Appends the active features of `tok` in `ctx` to `out`. A hashed map
    /// may emit the same id twice; scores and gradients count multiplicity.
    pub fn features(&self, ctx: &StepContext<'_>, tok: u32, out: &mut Vec<FeatureId>) {
        let prev = ctx.prev.map_or(BOS, u64::from);
        let x = u64::from(ctx.input.id);
        let pos = ctx.position as u64;
        let tok = u64::from(tok);
        match *self {
            FeatureMap::Tabular => out.push(feature_key(TAG_TABULAR, &[x, pos, prev, tok])),
            FeatureMap::HashedNgram { buckets } => {
                let b = buckets.max(1);
                out.push(feature_key(TAG_UNIGRAM, &[tok]) % b);
                out.push(feature_key(TAG_BIGRAM, &[prev, tok]) % b);
                out.push(feature_key(TAG_INPUT_TOKEN, &[x, pos, tok]) % b);
            }
        }
    }
}

/// `π_θ`: a linear-softmax policy over fixed-length sequences.
///
/// Weights absent from the table are zero, so a fresh policy is uniform.
#[derive(Debug, Clone, PartialEq)]
pub struct SequencePolicy {
    weights: BTreeMap<FeatureId, f64>,
    feature_map: FeatureMap,
    vocab: Vocabulary,
    max_len: usize,
}

impl SequencePolicy {
    pub fn uniform(vocab: Vocabulary, max_len: usize) -> Result<Self> {
        Self::with_feature_map(vocab, max_len, FeatureMap::Tabular)
    }

    pub fn with_feature_map(vocab: Vocabulary, max_len: usize, feature_map: FeatureMap) -> Result<Self> {
        if max_len == 0 {
            return Err(Error::InvalidConfig("length bound must be at least 1".into()));
        }
        if let FeatureMap::HashedNgram { buckets: 0 } = feature_map {
            return Err(Error::InvalidConfig("hashed feature map needs buckets >= 1".into()));
        }
        Ok(Self {
            weights: BTreeMap::new(),
            feature_map,
            vocab,
            max_len,
        })
    }

    pub fn vocab(&self) -> Vocabulary {
        self.vocab
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn feature_map(&self) -> FeatureMap {
        self.feature_map
    }

    pub fn weights(&self) -> &BTreeMap<FeatureId, f64> {
        &self.weights
    }

    pub fn weight(&self, id: FeatureId) -> f64 {
        self.weights.get(&id).copied().unwrap_or(0.0)
    }

    pub fn set_weight(&mut self, id: FeatureId, value: f64) {
        self.weights.insert(id, value);
    }

    /// `w[f] += step[f]` for every nonzero entry of `step`.
    pub fn apply_step(&mut self, step: &Gradient) {
        for (id, delta) in step.iter().filter(|(_, d)| *d != 0.0) {
            *self.weights.entry(id).or_insert(0.0) += delta;
        }
    }

    /// Every feature id any step of any sequence for `inputs` can touch.
    pub fn active_features(&self, inputs: &[InputContext]) -> Vec<FeatureId> {
        let mut ids = Vec::new();
        let mut buf = Vec::new();
        for x in inputs {
            for position in 0..self.max_len {
                let prevs: Vec<Option<u32>> = if position == 0 {
                    vec![None]
                } else {
                    self.vocab.tokens().map(Some).collect()
                };
                for prev in prevs {
                    let ctx = StepContext { input: x, position, prev };
                    for tok in self.vocab.tokens() {
                        buf.clear();
                        self.feature_map.features(&ctx, tok, &mut buf);
                        ids.extend_from_slice(&buf);
                    }
                }
            }
        }
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    fn check_position(&self, ctx: &StepContext<'_>) -> Result<()> {
        if ctx.position >= self.max_len {
            return Err(Error::PositionOutOfRange {
                position: ctx.position,
                max_len: self.max_len,
            });
        }
        Ok(())
    }

    fn scores_unchecked(&self, ctx: &StepContext<'_>, buf: &mut Vec<FeatureId>) -> Vec<f64> {
        self.vocab
            .tokens()
            .map(|tok| {
                buf.clear();
                self.feature_map.features(ctx, tok, buf);
                buf.iter().map(|&f| self.weight(f)).sum()
            })
            .collect()
    }

    /// Per-token scores `s(tok)` at `ctx`.
    pub fn scores(&self, ctx: &StepContext<'_>) -> Result<Vec<f64>> {
        self.check_position(ctx)?;
        Ok(self.scores_unchecked(ctx, &mut Vec::new()))
    }

    /// Log-probabilities of every token at `ctx`.
    pub fn token_log_distribution(&self, ctx: &StepContext<'_>) -> Result<Vec<f64>> {
        self.check_position(ctx)?;
        Ok(log_softmax(self.scores_unchecked(ctx, &mut Vec::new())))
    }

    /// Probability vector over the vocabulary at `ctx`.
    pub fn token_distribution(&self, ctx: &StepContext<'_>) -> Result<Vec<f64>> {
        let mut lp = self.token_log_distribution(ctx)?;
        for v in &mut lp {
            *v = v.exp();
        }
        Ok(lp)
    }

    pub fn validate(&self, y: &Sequence) -> Result<()> {
        y.validate(self.vocab, self.max_len)
    }

    /// `log π(y|x)`, summed over positions in log space.
    pub fn sequence_log_probability(&self, x: &InputContext, y: &Sequence) -> Result<f64> {
        self.validate(y)?;
        let mut buf = Vec::new();
        let mut prev = None;
        let mut total = 0.0;
        for (position, &tok) in y.tokens().iter().enumerate() {
            let ctx = StepContext { input: x, position, prev };
            let lp = log_softmax(self.scores_unchecked(&ctx, &mut buf));
            total += lp[tok as usize];
            prev = Some(tok);
        }
        Ok(total)
    }

    /// `π(y|x)`.
    pub fn sequence_probability(&self, x: &InputContext, y: &Sequence) -> Result<f64> {
        Ok(self.sequence_log_probability(x, y)?.exp())
    }

    /// Length-`M` output taking the per-step argmax; ties go to the lowest id.
    ///
    /// This is the per-step greedy approximation of the most likely output,
    /// which can differ from the exact mode of `π(·|x)`.
    pub fn greedy_decode(&self, x: &InputContext) -> Sequence {
        let mut buf = Vec::new();
        let mut tokens = Vec::with_capacity(self.max_len);
        let mut prev = None;
        for position in 0..self.max_len {
            let ctx = StepContext { input: x, position, prev };
            let scores = self.scores_unchecked(&ctx, &mut buf);
            let mut best = 0;
            for (i, &s) in scores.iter().enumerate().skip(1) {
                if s > scores[best] {
                    best = i;
                }
            }
            tokens.push(best as u32);
            prev = Some(best as u32);
        }
        Sequence(tokens)
    }

    /// Draws a length-`M` sequence step by step and returns it with its
    /// propensity `π(y|x)`.
    pub fn sample_sequence<R: Rng + ?Sized>(&self, x: &InputContext, rng: &mut R) -> (Sequence, f64) {
        let mut buf = Vec::new();
        let mut tokens = Vec::with_capacity(self.max_len);
        let mut prev = None;
        for position in 0..self.max_len {
            let ctx = StepContext { input: x, position, prev };
            let lp = log_softmax(self.scores_unchecked(&ctx, &mut buf));
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut chosen = lp.len() - 1;
            for (i, l) in lp.iter().enumerate() {
                acc += l.exp();
                if u < acc {
                    chosen = i;
                    break;
                }
            }
            tokens.push(chosen as u32);
            prev = Some(chosen as u32);
        }
        let y = Sequence(tokens);
        let propensity = self
            .sequence_probability(x, &y)
            .expect("sampled sequence is valid by construction");
        (y, propensity)
    }

    /// [`sample_sequence`](Self::sample_sequence) with a fresh generator seeded by `seed`.
    pub fn sample_sequence_seeded(&self, x: &InputContext, seed: u64) -> (Sequence, f64) {
        self.sample_sequence(x, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    /// `∇_w log π(y|x)`.
    pub fn log_prob_gradient(&self, x: &InputContext, y: &Sequence) -> Result<Gradient> {
        let mut g = Gradient::new();
        self.accumulate_log_prob_gradient(x, y, 1.0, &mut g)?;
        Ok(g)
    }

    /// `out += scale * ∇_w log π(y|x)`. Every feature touched at a visited
    /// step gets an entry, even when its contribution is zero.
    pub fn accumulate_log_prob_gradient(
        &self,
        x: &InputContext,
        y: &Sequence,
        scale: f64,
        out: &mut Gradient,
    ) -> Result<()> {
        self.validate(y)?;
        let mut buf = Vec::new();
        let mut prev = None;
        for (position, &chosen) in y.tokens().iter().enumerate() {
            let ctx = StepContext { input: x, position, prev };
            let lp = log_softmax(self.scores_unchecked(&ctx, &mut buf));
            for tok in self.vocab.tokens() {
                let indicator = if tok == chosen { 1.0 } else { 0.0 };
                let coeff = scale * (indicator - lp[tok as usize].exp());
                buf.clear();
                self.feature_map.features(&ctx, tok, &mut buf);
                for &f in &buf {
                    out.add(f, coeff);
                }
            }
            prev = Some(chosen);
        }
        Ok(())
    }

    pub fn to_checkpoint(&self) -> Checkpoint<FeatureMap> {
        Checkpoint {
            kind: ModelKind::Policy,
            vocab_size: self.vocab.size(),
            max_len: self.max_len,
            feature_map: self.feature_map,
            weights: self.weights.clone(),
        }
    }

    pub fn from_checkpoint(ckpt: Checkpoint<FeatureMap>) -> Result<Self> {
        if ckpt.kind != ModelKind::Policy {
            return Err(Error::Checkpoint("not a policy checkpoint".into()));
        }
        let vocab = Vocabulary::new(ckpt.vocab_size).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let mut policy = Self::with_feature_map(vocab, ckpt.max_len, ckpt.feature_map)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        policy.weights = ckpt.weights;
        Ok(policy)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(Checkpoint::load(path, ModelKind::Policy)?)
    }
}

/// Numerically stable log-softmax.
pub fn log_softmax(mut scores: Vec<f64>) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_z = max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
    for s in &mut scores {
        *s -= log_z;
    }
    scores
}

/// All `|Y|^M` sequences of length `max_len`, in lexicographic order.
pub fn enumerate_sequences(vocab: Vocabulary, max_len: usize) -> impl Iterator<Item = Sequence> {
    let v = vocab.size() as u32;
    let mut current: Option<Vec<u32>> = if max_len == 0 { None } else { Some(vec![0; max_len]) };
    std::iter::from_fn(move || {
        let out = current.clone()?;
        let next = current.as_mut().unwrap();
        let mut i = max_len;
        loop {
            if i == 0 {
                current = None;
                break;
            }
            i -= 1;
            next[i] += 1;
            if next[i] < v {
                break;
            }
            next[i] = 0;
        }
        Some(Sequence(out))
    })
}

/// Number of length-`max_len` sequences, as a float (it can be astronomically large).
pub fn output_space_len(vocab: Vocabulary, max_len: usize) -> f64 {
    (vocab.size() as f64).powi(max_len as i32)
}
