//! Post-training unstructured pruning with z-score weight importance.
//!
//! This crate is `no_std` (it needs `alloc`) and holds all of the numeric
//! machinery: the dense [`Matrix`] carrier, the statistical importance
//! pipeline, activation-aware scaling, mask construction, a small decoder-only
//! language model used for calibration, and the evaluation metrics. File
//! formats, reports and the command line live in the `zprune` crate.
//!
//! The typical flow for one weight matrix:
//!
//! ```
//! use zprune_core::{
//!     activation::{collect_feature_norms, ScalingParams},
//!     pruning::{prune_layer, Method, PruneMode, PruneRequest},
//!     Matrix,
//! };
//!
//! let w = Matrix::new(2, 3, vec![0.3, -1.2, 0.5, 2.0, 0.1, -0.7]).unwrap();
//! let acts = Matrix::new(4, 3, vec![1.0; 12]).unwrap();
//! let stats = collect_feature_norms(&acts, "demo").unwrap();
//! let req = PruneRequest::new(Method::ZPruner, 0.5, PruneMode::PerNeuron, ScalingParams::llama());
//! let (pruned, mask) = prune_layer(&w, &stats, &req).unwrap();
//! assert_eq!(mask.dropped(), 2);
//! assert_eq!(pruned.count_zeros(), 2);
//! ```

#![no_std]
#![deny(unsafe_code)]

extern crate alloc;

pub mod activation;
pub mod corpus;
mod error;
pub mod eval;
pub mod importance;
mod matrix;
mod nn;
pub mod model;
pub mod pruning;
pub mod train;

pub use error::{Error, Result};
pub use matrix::{matrix_sparsity, Matrix};

/// Crate version, embedded in reports for provenance.
pub const ENGINE_VERSION: &str = env!("CARGO_PKG_VERSION");
