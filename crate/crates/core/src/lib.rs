//! Survey-table satisfaction modelling and causal effect estimation.
//!
//! The crate covers two stages that share one data path:
//!
//! * supervised classification of a binary satisfaction target with
//!   from-scratch tree, forest, boosting, nearest-neighbour and logistic
//!   models, tuned by k-fold grid search ([`learners`], [`evaluation`]);
//! * inverse-propensity weighting with the within-group ratio
//!   (Horvitz-Thompson/Hájek) estimator of potential-outcome means, plus
//!   covariate balance diagnostics ([`causal`]).
//!
//! [`synth`] produces confounded data with a known treatment effect so the
//! causal stage can be checked against ground truth, and [`pipeline`] ties
//! everything into a reproducible batch run.
//!
//! Data-parallel loops go through [`par`]; disabling the default `parallel`
//! feature swaps rayon for plain iterators with identical results.

// `!(x > 0.0)` style checks are meant to reject NaN as well
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attribution;
pub mod causal;
pub mod error;
pub mod evaluation;
pub mod learners;
pub mod matrix;
pub mod par;
pub mod pipeline;
pub mod preprocess;
pub mod seed;
pub mod stats;
pub mod synth;
pub mod tabular;

pub use error::{Error, Result};
pub use matrix::Matrix;
