//! Files and command-line plumbing around `sgncap-core`: checkpoints,
//! dataset directories, `key=value` configs and evaluation inputs.

pub mod checkpoint;
pub mod commands;
pub mod dataset;
mod error;
pub mod evalio;
pub mod kv;

pub use error::{Error, Result};
