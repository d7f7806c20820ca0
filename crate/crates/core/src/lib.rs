#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(v > 0.0)` is how NaN fails parameter checks

pub mod cli;
pub mod error;
pub mod fock_oracle;
pub mod metrics;
pub mod noise;
pub mod optical_source;
pub mod phase_space;
pub mod protocol;
pub mod qnd_core;
pub mod validation;

pub use error::{Error, Result};
