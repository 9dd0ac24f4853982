//! Dataset loading, file formats, sweeps and the command line for the
//! bit-flip fault-injection lab built on [`gnnfi_core`].

pub mod campaign;
pub mod cli;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod error_map;
pub mod oracles;
pub mod planetoid;
pub mod profile;
pub mod report;
pub mod svg;

pub use error::{Error, Result};
