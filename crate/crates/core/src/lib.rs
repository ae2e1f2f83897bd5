//! Training-data valuation and pruning.
//!
//! The crate trains small differentiable text classifiers while logging
//! per-example artifacts (embedding-output gradients, layer gradients,
//! logits, prediction traces), turns those artifacts into influence scores
//! (VoG, EL2N, forgetting, PVI, TracIn self-influence), builds pruning plans
//! from the scores, and evaluates the accuracy/efficiency trade-off.
//!
//! Module map:
//!
//! - [`dataset`]: examples, JSONL ingestion, synthetic generation, label noise,
//!   slot annotations.
//! - [`trainer`]: embedding + MLP classifier / tagger with hand-written
//!   reverse-mode gradients.
//! - [`artifacts`]: on-disk store of per-checkpoint training artifacts.
//! - [`scores`]: influence scores and normalization.
//! - [`sampling`]: pruning plans and label-trail entropy.
//! - [`evalmetrics`]: error rates, relative deltas, data-score efficiency.
//! - [`experiment`]: config-driven orchestration used by the CLI.

pub mod artifacts;
pub mod dataset;
pub mod error;
pub mod evalmetrics;
pub mod experiment;
pub mod sampling;
pub mod scores;
pub mod trainer;
mod util;

pub use error::{Error, Result};
