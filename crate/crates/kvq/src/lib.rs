//! Vector-quantisation codebook learning with Kohonen self-organising map
//! rules and the EMA-VQ baseline, plus a desk-scale straight-through VQ
//! autoencoder for experiments.
//!
//! Batch assignment and the batch metrics are data-parallel via rayon when
//! the default `parallel` feature is enabled; disabling it falls back to
//! identical sequential code paths.

pub mod codebook;
pub mod data;
pub mod error;
pub mod grid;
pub mod metrics;
pub mod neighborhood;
pub mod quantizer;
pub mod vqlayer;

pub use codebook::{AssignmentBatch, Codebook, InitScheme, Metric};
pub use error::{KvqError, Result};
pub use grid::GridTopology;
pub use neighborhood::{NeighborhoodKind, NeighborhoodSchedule};
pub use quantizer::{Algorithm, EmaParams, EmaState, Quantizer};
