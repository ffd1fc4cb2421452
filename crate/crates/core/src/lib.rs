pub mod combiners;
pub mod diagnostics;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod numkit;
pub mod problems;

pub use error::{Error, Result};
