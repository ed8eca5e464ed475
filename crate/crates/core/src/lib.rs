//! Likelihood-ratio scoring for imbalanced binary classification with
//! online prior adaptation.
//!
//! Scorers are trained with losses whose population minimiser is
//! `2P(y=1|x) - 1`, so their outputs convert to likelihood ratios that can
//! be combined with any prior and cost structure at decision time.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adapter;
pub mod baselines;
pub mod bayes;
pub mod codec;
pub mod dataset;
pub mod ensemble;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod mlp;
pub mod resampling;
pub mod shift_sim;

pub use error::{ObilError, Result};
