//! Counterfactual learning of sequence-to-sequence policies from logged
//! bandit feedback, at a scale where every quantity can be checked against
//! an exact oracle.
//!
//! - [`policy`]: log-linear locally normalized sequence policies.
//! - [`simkit`]: synthetic tasks, feedback channels, logging and filters.
//! - [`objectives`]: IPS, DPM, OSL, baseline and doubly robust losses.
//! - [`reward_model`]: regression reward estimators.
//! - [`trainer`]: optimization loop and gradient checks.
//! - [`cli`]: the `seqcf` binary.

// `!(x > 0.0)` rejects NaN along with non-positive values
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod cli;
pub mod error;
pub mod features;
pub mod objectives;
pub mod policy;
pub mod reward_model;
pub mod simkit;
pub mod trainer;

pub use error::{Error, Result};
pub use features::{feature_key, FeatureId, Gradient};
pub use objectives::{LossReport, ObjectiveKind};
pub use policy::{FeatureMap, InputContext, Sequence, SequencePolicy, Vocabulary};
pub use simkit::{FeedbackChannel, InteractionLog, LoggedInteraction, TaskSpec};
pub use trainer::{train, RunTrace, TrainConfig};
