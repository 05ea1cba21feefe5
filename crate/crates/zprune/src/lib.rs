//! File formats, checkpoint handling, reports and the command-line driver
//! around `zprune-core`.

pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod error;
pub mod report;
pub mod sweep;
pub mod ztf;

pub use error::{Result, ZpruneError};
