//! Factor-augmented quantile autoregression forecasting with frequentist
//! model averaging.

// `!(x > 0.0)` is used on purpose to reject NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod data;
pub mod error;
pub mod evaluate;
pub mod factors;
pub mod forecast;
pub mod lp;
pub mod models;
pub mod pipeline;
pub mod quantreg;
pub mod synth;
pub mod weights;

pub use error::{Error, Result};
