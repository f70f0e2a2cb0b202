//! Desk-scale engine for unsupervised post-training: policy-gradient
//! training where rewards come from majority voting over a group of sampled
//! responses instead of labels.
//!
//! The crate is organized around the training pipeline:
//!
//! - [`answer`]: rule-based extraction of canonical final answers and the
//!   equivalence relation on them.
//! - [`voting`]: majority voting over a group's answers and reward
//!   assignment (pseudo-rewards from the vote, or supervised rewards).
//! - [`policy`]: the policy contract plus two log-linear toy policies with
//!   exact gradients, and the checkpoint format.
//! - [`grpo`]: group-normalized advantages, the clipped token-level
//!   surrogate with a KL penalty, and the optimizer step.
//! - [`tasks`]: synthetic question templates and the two question-synthesis
//!   strategies.
//! - [`metrics`]: semantic entropy, the binomial majority-vote analysis,
//!   and evaluation accuracy.
//! - [`runner`]: the training loop, experiment configuration, metric
//!   logging, and the built-in experiment suites.

pub mod answer;
pub mod error;
pub mod grpo;
pub mod metrics;
pub mod policy;
pub mod runner;
pub mod tasks;
pub mod voting;

pub use error::{Error, Result};
