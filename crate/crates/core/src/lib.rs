//! Sparsely-gated mixture-of-experts Conformer speech separation.

pub mod bench;
mod class;
pub mod config;
pub mod conformer;
pub mod css;
pub mod dsp;
pub mod error;
pub mod metrics;
pub mod mixsim;
pub mod moe;
pub mod nn;
pub mod train;

pub use class::OverlapClass;
pub use error::{Error, Result};
