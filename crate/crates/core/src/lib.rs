//! Fair binary classification under covariate shift when the protected
//! attribute is unavailable at training time.
//!
//! Source-domain rows are reweighted by estimated density ratios
//! ([`density`]), and a correlation penalty between model outputs and
//! domain-expert "related features" on the target domain stands in for the
//! missing attribute ([`losses`]). The [`experiment`] module wires the five
//! compared approaches into a resumable sweep, and [`report`] renders tables
//! and tradeoff charts.

pub mod data;
pub mod density;
pub mod error;
pub mod experiment;
pub mod losses;
pub mod matrix;
pub mod metrics;
pub mod mlp;
pub mod report;
pub mod synthetic;
pub mod trainer;

pub use error::{Error, Result};
pub use matrix::Matrix;
