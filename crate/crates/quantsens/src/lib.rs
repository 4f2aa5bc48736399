//! Monte-Carlo sensitivities of quantile-based risk measures for loss models with
//! default-type indicator jumps.

// Matrix code walks several arrays with one index; `!(x > 0.0)` also rejects NaN.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod casestudy;
pub mod copula;
pub mod distributions;
pub mod error;
pub mod estimators;
pub mod model;
pub mod oracle;
pub mod rng;
pub mod special;
pub mod stress;

pub use error::{Error, Result};
