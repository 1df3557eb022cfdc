//! Markov clustering topic model for video surveillance event streams.
//!
//! Words are quantised motion events, topics are co-occurring activities and
//! a Markov chain over behaviours links successive clips. Three learners are
//! provided (EM, variational Bayes and collapsed Gibbs), along with online
//! anomaly scoring and localisation.

// NaN must fail range checks, so several guards are written as `!(x >= 0.0)`.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod anomaly;
pub mod cli;
pub mod em;
pub mod error;
pub mod evaluation;
pub mod forward_backward;
pub mod generative;
pub mod gibbs;
pub mod ingest;
pub mod io;
pub mod model;
pub mod rng;
pub mod sampling;
pub mod special;
pub mod vb;

pub use error::{MctmError, Result};
pub use model::{
    make_prior, Corpus, CountMode, Document, Hyperparams, ModelParams, ModelSpec, PriorKind,
    SufficientCounts, WordId,
};
