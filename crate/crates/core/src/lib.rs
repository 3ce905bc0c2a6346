//! Selection of the best heterogeneous treatment effect (CATE) estimator from a
//! candidate set without access to ground-truth effects.
//!
//! The pipeline is:
//!
//! 1. [`datagen`] produces (or ingests) a dataset plus a [`datagen::CandidateSet`]
//!    of per-unit CATE predictions.
//! 2. [`nuisance`] fits outcome regressions and a propensity model on held-out folds.
//! 3. [`scores`] turns those into per-unit pairwise relative-error scores.
//! 4. [`selectors`] maps the scores to an accepted set that contains the true
//!    winner with probability at least `1 - alpha` asymptotically.
//! 5. [`harness`] repeats all of that under simulation and reports FWER / ANWS.
//!
//! Heavy loops run on rayon when the `parallel` feature is enabled (default);
//! results are bitwise identical either way because every random stream is
//! derived from `(seed, task index)` rather than from scheduling order.

pub mod datagen;
pub mod error;
pub mod harness;
pub mod nuisance;
pub mod par;
pub mod rng;
pub mod scores;
pub mod selectors;
pub mod stats;

pub use error::{Error, Result};
