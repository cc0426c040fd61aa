//! Prior over temporal structural causal models that emits paired
//! observational and interventional multivariate time series.

pub mod analysis;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod prior;
pub mod scm;
pub mod simulate;

pub use error::{Error, Result};
