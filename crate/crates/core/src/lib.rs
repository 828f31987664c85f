//! Full-graph GNN recommender training on generalized SDDMM/SpMM kernels.

pub mod cli;
pub mod config;
pub mod error;
pub mod eval;
pub mod graph;
pub mod kernels;
pub mod kron;
pub mod membench;
pub mod models;
pub mod redundancy;
pub mod scalar;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
