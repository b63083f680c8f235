//! Feedback channels that turn a true reward into a logged reward.

use std::collections::HashMap;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{InputContext, Sequence};

pub const LIKERT_LEVELS: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

/// Maps `r ∈ [0, 1]` to the nearest 5-point Likert level; exact midpoints
/// round up.
pub fn likert_quantize(r: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&r) {
        return Err(Error::OutOfUnitInterval { value: r });
    }
    Ok((r * 4.0 + 0.5).floor() / 4.0)
}

fn clamp_unit(v: f64) -> f64 {
    v.clamp(0.0, 1.0)
}

/// A simulated human rater.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rater {
    pub id: String,
    #[serde(default)]
    pub bias: f64,
    #[serde(default)]
    pub noise_sigma: f64,
    /// Probability of reusing the first noise draw when re-rating an item.
    pub consistency: f64,
}

/// How a true reward becomes the logged `δ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeedbackChannel {
    Exact,
    /// Optional Gaussian noise, then clamping and Likert quantization.
    Likert5 {
        #[serde(default)]
        noise_sigma: f64,
    },
    /// `clamp(r + N(0, σ), 0, 1)`.
    Gaussian { noise_sigma: f64 },
    /// Raters apply bias, noise and Likert quantization.
    RaterPool { raters: Vec<Rater> },
}

impl FeedbackChannel {
    pub fn validate(&self) -> Result<()> {
        let check_sigma = |s: f64| {
            if s.is_finite() && s >= 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidConfig(format!("channel.noise_sigma must be >= 0, got {s}")))
            }
        };
        match self {
            FeedbackChannel::Exact => Ok(()),
            FeedbackChannel::Likert5 { noise_sigma } | FeedbackChannel::Gaussian { noise_sigma } => {
                check_sigma(*noise_sigma)
            }
            FeedbackChannel::RaterPool { raters } => {
                if raters.is_empty() {
                    return Err(Error::InvalidConfig("channel.raters must not be empty".into()));
                }
                for r in raters {
                    check_sigma(r.noise_sigma)?;
                    if !(0.0..=1.0).contains(&r.consistency) {
                        return Err(Error::InvalidConfig(format!(
                            "channel.raters[{}].consistency must be in [0, 1]",
                            r.id
                        )));
                    }
                    if !r.bias.is_finite() {
                        return Err(Error::InvalidConfig(format!("channel.raters[{}].bias", r.id)));
                    }
                }
                Ok(())
            }
        }
    }

    pub fn raters(&self) -> &[Rater] {
        match self {
            FeedbackChannel::RaterPool { raters } => raters,
            _ => &[],
        }
    }
}

/// Stateful application of a channel: rater pools remember their first noise
/// draw per item so repeats can be re-rated consistently.
pub struct FeedbackSession<'a, R> {
    channel: &'a FeedbackChannel,
    rng: R,
    memory: HashMap<(usize, u32, Sequence), f64>,
}

impl<'a, R: Rng> FeedbackSession<'a, R> {
    pub fn new(channel: &'a FeedbackChannel, rng: R) -> Self {
        Self {
            channel,
            rng,
            memory: HashMap::new(),
        }
    }

    fn normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// Logged reward for `(x, y)` with true reward `truth`. `rater` selects
    /// the pool member and is ignored by other channels.
    pub fn rate(&mut self, x: &InputContext, y: &Sequence, truth: f64, rater: usize) -> Result<f64> {
        if !(0.0..=1.0).contains(&truth) {
            return Err(Error::OutOfUnitInterval { value: truth });
        }
        match self.channel {
            FeedbackChannel::Exact => Ok(truth),
            FeedbackChannel::Gaussian { noise_sigma } => {
                let z = self.normal();
                Ok(clamp_unit(truth + noise_sigma * z))
            }
            FeedbackChannel::Likert5 { noise_sigma } => {
                let z = self.normal();
                likert_quantize(clamp_unit(truth + noise_sigma * z))
            }
            FeedbackChannel::RaterPool { raters } => {
                let r = &raters[rater % raters.len()];
                let key = (rater % raters.len(), x.id, y.clone());
                let z = match self.memory.get(&key).copied() {
                    None => {
                        let z = self.normal();
                        self.memory.insert(key, z);
                        z
                    }
                    Some(first) => {
                        let u: f64 = self.rng.random();
                        if u < r.consistency {
                            first
                        } else {
                            self.normal()
                        }
                    }
                };
                likert_quantize(clamp_unit(truth + r.bias + r.noise_sigma * z))
            }
        }
    }
}
