//! Minimax filters: learned feature transformations that keep a target task
//! predictable while driving an adversary's inference of a private attribute
//! toward chance, plus a locally differentially private noisy variant and an
//! evaluation harness.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod closed_form;
pub mod dataset;
pub mod dp;
pub mod error;
pub mod experiment;
pub mod filters;
pub mod heads;
pub mod linalg;
pub mod minimax;
pub mod optim;
pub mod record;
pub mod rng;

pub use dataset::Dataset;
pub use error::{Error, Result};
pub use filters::{FilterKind, FilterState};
pub use minimax::{train_minimax, TradeoffConfig, TrainReport};
