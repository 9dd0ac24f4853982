//! Fault injection and mitigation for graph neural network inference.
//!
//! This crate is `no_std` and only needs `alloc`. It holds everything that is
//! pure computation:
//!
//! * [`graph`]: compressed sparse graphs, normalization operators and splits.
//! * [`model`]: the GCN, GAT, Chebyshev and SGC forward passes, with a
//!   layer-boundary interception hook for activation outputs.
//! * [`train`]: a small full-batch trainer with hand-written gradients.
//! * [`inject`]: IEEE-754 bit-flip error maps applied to weights or activations.
//! * [`mitigation`]: masking, range clipping and topology-aware filtering.
//! * [`trial`]: the end-to-end inject → mitigate → evaluate pipeline.
//!
//! File formats, dataset loading, sweeps and the command line live in the
//! `gnnfi` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod bits;
pub mod error;
pub mod graph;
pub mod inject;
pub mod mitigation;
pub mod model;
pub mod synthetic;
pub mod tensor;
pub mod train;
pub mod trial;

pub use error::{Error, Result};
