//! Synthetic tasks, feedback channels, logging-policy execution, log
//! filters and reliability statistics.

pub mod feedback;
pub mod filter;
pub mod log;
pub mod reliability;
pub mod task;

pub use feedback::{likert_quantize, FeedbackChannel, FeedbackSession, Rater, LIKERT_LEVELS};
pub use filter::{filter_high_variance_outputs, filter_raters, rater_agreements, RaterAgreement, RaterReport};
pub use log::{generate_log, InteractionLog, LogOptions, LoggedInteraction, LoggingMode};
pub use reliability::{krippendorff_alpha, rating_table_from_log, RatingTable};
pub use task::{output_space_size, RewardEntry, RewardKind, TaskSpec, WeightedInput};
