//! Speaker-attributed multi-talker recognition with serialized output
//! training.

pub mod cli;
pub mod decode;
mod error;
pub mod features;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod simkit;
pub mod sot;
pub mod train;

pub use error::{exit, Error, Result};

#[cfg(test)]
mod testutil;
