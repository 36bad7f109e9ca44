//! Action concept discovery from weakly labeled image–sentence corpora.
//!
//! The crate turns pre-parsed captions plus precomputed image features and
//! word embeddings into clusters of human-action concepts, per-cluster
//! linear classifiers, and boosted per-tag ensembles:
//!
//! 1. [`corpus`] extracts human-subject verb–object pairs and builds the
//!    frequency-filtered candidate table.
//! 2. [`verify`] drops candidates that a linear classifier cannot separate
//!    from random images under 2-fold cross-validation.
//! 3. [`represent`] fuses aggregated image features with verb/object
//!    embeddings and computes the cosine similarity matrix.
//! 4. [`nncluster`] groups concepts with the mutual-rank nearest-neighbor
//!    clustering and pools clusters across fusion weights.
//! 5. [`ensemble`] trains per-cluster classifiers and combines the ones
//!    related to a query tag with AdaBoost.
//! 6. [`eval`] holds the ranking metrics and parameter sweeps.
//!
//! [`pipeline`] wires the stages together behind the `acd` binary, and
//! [`synth`] generates planted synthetic corpora for desk-scale runs.

pub mod config;
pub mod corpus;
pub mod ensemble;
pub mod error;
pub mod eval;
pub mod features;
pub mod linsvm;
pub mod nncluster;
pub mod pipeline;
pub mod represent;
pub mod seed;
pub mod synth;
pub mod verify;

pub use error::{Error, Result};
