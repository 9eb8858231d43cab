//! Probabilistic time-series forecasting with a lag-feature decoder-only
//! transformer and a Student-t output head.

pub mod analysis;
pub mod data;
pub mod distribution;
pub mod error;
pub mod eval;
pub mod forecast;
pub mod featurize;
pub mod model;
pub mod registry;
pub mod train;

pub use error::{Error, Result};
