//! Attention-based image captioning with a sequential guiding network.
//!
//! The decoder is an LSTM wrapped with Luong "general" attention over a set
//! of region annotations. A second LSTM (the guiding network) produces a
//! guiding vector at every step from the previous attention vector and a
//! high-level attribute vector; that guiding vector is mixed into the
//! decoder input. Two ablations drop the guiding network: one feeds the raw
//! attributes in its place, the other feeds nothing.
//!
//! The crate is `no_std` and only needs `alloc`. File formats and the
//! command-line front end live in the `sgncap` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod attention;
pub mod data;
mod error;
pub mod inference;
pub mod metrics;
pub mod model;
pub mod params;
pub mod recurrent;
pub mod tape;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tape::{Tape, Var};
pub use tensor::Tensor;
