//! Interpretable unsupervised graph and node embeddings through learned
//! edge-dropping augmentation.
//!
//! The crate is organised bottom-up:
//!
//! - [`autodiff`]: reverse-mode differentiation over dense 2-D tensors,
//!   including the context-switched batch normalisation.
//! - [`graph`]: graphs, batches, Laplacian spectra and neighbourhoods.
//! - [`datasets`]: synthetic motif benchmarks, the JSON format and splits.
//! - [`model`]: the GIN encoder, the edge-selection network, the watchman
//!   head, Gumbel sampling and triplet construction.
//! - [`losses`]: the contrastive, negative, information and watchman terms.
//! - [`training`]: Adam, the prior schedule, the epoch loop, checkpoints.
//! - [`evaluation`]: downstream accuracy and the interpretability metrics.
//! - [`report`]: CSV/JSON emission of metric reports.

pub mod autodiff;
pub mod datasets;
pub mod error;
pub mod evaluation;
pub mod graph;
pub mod losses;
pub mod model;
pub mod report;
pub mod training;

pub use error::{Error, Result};
