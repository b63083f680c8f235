use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{enumerate_sequences, InputContext, Sequence, Vocabulary};

/// An input together with its sampling weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedInput {
    #[serde(flatten)]
    pub input: InputContext,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardEntry {
    pub input: u32,
    pub output: Sequence,
    pub reward: f64,
}

/// Ground-truth reward `δ*`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RewardKind {
    /// Fraction of positions that match the reference.
    PositionMatch,
    /// 1 for the reference, 0 for everything else.
    ExactMatch,
    /// Explicit rewards for listed `(input, output)` pairs, 0 elsewhere.
    Table { entries: Vec<RewardEntry> },
}

/// A synthetic task: vocabulary, length bound, weighted inputs, reference
/// outputs and a ground-truth reward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub vocab_size: Vocabulary,
    pub max_len: usize,
    pub inputs: Vec<WeightedInput>,
    #[serde(default)]
    pub references: BTreeMap<u32, Sequence>,
    pub reward: RewardKind,
}

impl TaskSpec {
    /// Default desk-scale task: `|Y| = 3`, `M = 2`, a single input with
    /// reference `(0, 1)` and position-match reward.
    pub fn desk() -> Self {
        Self {
            vocab_size: Vocabulary::new(3).unwrap(),
            max_len: 2,
            inputs: vec![WeightedInput { input: InputContext::new(0), weight: 1.0 }],
            references: BTreeMap::from([(0, Sequence(vec![0, 1]))]),
            reward: RewardKind::PositionMatch,
        }
    }

    /// Desk task whose reward is given by an explicit table for input 0.
    pub fn desk_with_rewards(entries: &[(Sequence, f64)]) -> Result<Self> {
        let mut task = Self::desk();
        task.reward = RewardKind::Table {
            entries: entries
                .iter()
                .map(|(y, r)| RewardEntry { input: 0, output: y.clone(), reward: *r })
                .collect(),
        };
        task.validate()?;
        Ok(task)
    }

    pub fn vocab(&self) -> Vocabulary {
        self.vocab_size
    }

    pub fn input_contexts(&self) -> Vec<InputContext> {
        self.inputs.iter().map(|w| w.input.clone()).collect()
    }

    pub fn input(&self, id: u32) -> Result<&InputContext> {
        self.inputs
            .iter()
            .map(|w| &w.input)
            .find(|x| x.id == id)
            .ok_or(Error::UnknownInput(id))
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_len == 0 {
            return Err(Error::InvalidConfig("task.max_len must be at least 1".into()));
        }
        if self.inputs.is_empty() {
            return Err(Error::InvalidConfig("task.inputs must not be empty".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for w in &self.inputs {
            if !seen.insert(w.input.id) {
                return Err(Error::InvalidConfig(format!("task.inputs: duplicate id {}", w.input.id)));
            }
            if !(w.weight.is_finite() && w.weight >= 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "task.inputs: weight of input {} must be non-negative",
                    w.input.id
                )));
            }
        }
        let total: f64 = self.inputs.iter().map(|w| w.weight).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!(
                "task.inputs: weights sum to {total}, expected 1"
            )));
        }
        for (id, y) in &self.references {
            y.validate(self.vocab_size, self.max_len)
                .map_err(|e| Error::InvalidConfig(format!("task.references[{id}]: {e}")))?;
        }
        match &self.reward {
            RewardKind::PositionMatch | RewardKind::ExactMatch => {
                for w in &self.inputs {
                    if !self.references.contains_key(&w.input.id) {
                        return Err(Error::InvalidConfig(format!(
                            "task.references: missing reference for input {}",
                            w.input.id
                        )));
                    }
                }
            }
            RewardKind::Table { entries } => {
                for e in entries {
                    e.output
                        .validate(self.vocab_size, self.max_len)
                        .map_err(|err| Error::InvalidConfig(format!("task.reward.entries: {err}")))?;
                    if !(0.0..=1.0).contains(&e.reward) {
                        return Err(Error::InvalidConfig(format!(
                            "task.reward.entries: reward {} outside [0, 1]",
                            e.reward
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Ground-truth reward of `y` for input `x`.
    pub fn true_reward(&self, x: &InputContext, y: &Sequence) -> Result<f64> {
        y.validate(self.vocab_size, self.max_len)?;
        match &self.reward {
            RewardKind::PositionMatch | RewardKind::ExactMatch => {
                let reference = self.references.get(&x.id).ok_or(Error::UnknownInput(x.id))?;
                if matches!(self.reward, RewardKind::ExactMatch) {
                    return Ok(if y == reference { 1.0 } else { 0.0 });
                }
                let hits = y
                    .tokens()
                    .iter()
                    .zip(reference.tokens())
                    .filter(|(a, b)| a == b)
                    .count();
                Ok(hits as f64 / self.max_len as f64)
            }
            RewardKind::Table { entries } => {
                self.input(x.id)?;
                Ok(entries
                    .iter()
                    .find(|e| e.input == x.id && &e.output == y)
                    .map_or(0.0, |e| e.reward))
            }
        }
    }

    /// Draws an input according to the task weights.
    pub fn sample_input<R: Rng + ?Sized>(&self, rng: &mut R) -> &InputContext {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for w in &self.inputs {
            acc += w.weight;
            if u < acc {
                return &w.input;
            }
        }
        // rounding left u above the cumulative total; take the last weighted input
        &self
            .inputs
            .iter()
            .rev()
            .find(|w| w.weight > 0.0)
            .unwrap_or(&self.inputs[self.inputs.len() - 1])
            .input
    }

    /// All outputs of the task with their true rewards for input `x`.
    pub fn enumerate_rewards(&self, x: &InputContext) -> Result<Vec<(Sequence, f64)>> {
        enumerate_sequences(self.vocab_size, self.max_len)
            .map(|y| {
                let r = self.true_reward(x, &y)?;
                Ok((y, r))
            })
            .collect()
    }
}

/// `log10(|Y|^M)`: order of magnitude of the output space.
pub fn output_space_size(vocab_size: usize, max_len: usize) -> Result<f64> {
    if vocab_size < 2 || max_len < 1 {
        return Err(Error::InvalidConfig(format!(
            "need vocab_size >= 2 and max_len >= 1, got ({vocab_size}, {max_len})"
        )));
    }
    Ok(max_len as f64 * (vocab_size as f64).log10())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn position_and_exact_match() {
        let mut task = TaskSpec::desk();
        let x = InputContext::new(0);
        assert_eq!(task.true_reward(&x, &Sequence(vec![0, 1])).unwrap(), 1.0);
        assert_eq!(task.true_reward(&x, &Sequence(vec![0, 2])).unwrap(), 0.5);
        task.reward = RewardKind::ExactMatch;
        assert_eq!(task.true_reward(&x, &Sequence(vec![0, 2])).unwrap(), 0.0);
        assert_eq!(task.true_reward(&x, &Sequence(vec![0, 1])).unwrap(), 1.0);
    }

    #[test]
    fn unknown_input_is_an_error() {
        let task = TaskSpec::desk();
        assert!(matches!(
            task.true_reward(&InputContext::new(9), &Sequence(vec![0, 1])),
            Err(Error::UnknownInput(9))
        ));
    }

    #[test]
    fn desk_reward_multiset() {
        let task = TaskSpec::desk();
        let rewards = task.enumerate_rewards(&InputContext::new(0)).unwrap();
        let count = |v: f64| rewards.iter().filter(|(_, r)| *r == v).count();
        assert_eq!((count(1.0), count(0.5), count(0.0)), (1, 4, 4));
        let mean: f64 = rewards.iter().map(|(_, r)| r).sum::<f64>() / 9.0;
        assert_relative_eq!(mean, 1.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn table_rewards() {
        let task = TaskSpec::desk_with_rewards(&[(Sequence(vec![2, 2]), 0.3)]).unwrap();
        let x = InputContext::new(0);
        assert_eq!(task.true_reward(&x, &Sequence(vec![2, 2])).unwrap(), 0.3);
        assert_eq!(task.true_reward(&x, &Sequence(vec![0, 1])).unwrap(), 0.0);
        assert!(TaskSpec::desk_with_rewards(&[(Sequence(vec![2, 2]), 1.3)]).is_err());
    }

    #[test]
    fn validation_catches_bad_weights_and_references() {
        let mut task = TaskSpec::desk();
        task.inputs[0].weight = 0.5;
        assert!(task.validate().is_err());
        let mut task = TaskSpec::desk();
        task.references.insert(0, Sequence(vec![0, 5]));
        assert!(task.validate().is_err());
        let mut task = TaskSpec::desk();
        task.references.clear();
        assert!(task.validate().is_err());
    }

    #[test]
    fn output_space_magnitudes() {
        assert_relative_eq!(output_space_size(30000, 100).unwrap(), 447.712125471966, epsilon = 1e-9);
        assert_relative_eq!(output_space_size(10, 1).unwrap(), 1.0);
        assert_relative_eq!(output_space_size(3, 2).unwrap(), 9f64.log10(), epsilon = 1e-15);
        assert!(output_space_size(1, 3).is_err());
    }

    #[test]
    fn task_json_round_trip() {
        let task = TaskSpec::desk_with_rewards(&[(Sequence(vec![1, 1]), 0.6)]).unwrap();
        let text = serde_json::to_string(&task).unwrap();
        let back: TaskSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(back, task);
    }
}
