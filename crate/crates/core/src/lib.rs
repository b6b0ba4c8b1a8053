//! Contrastive graph clustering with a learnable, reversible
//! perturb/recover augmentation.
//!
//! The crate is a self-contained numerical engine: dense/sparse matrices,
//! hand-written MLP backpropagation with Adam, the three training objectives,
//! K-means with high-confidence pseudo-label selection, clustering metrics
//! with exact Hungarian matching, and the end-to-end training pipeline.

// index loops over multiple same-length buffers read better than zips here
#![allow(clippy::needless_range_loop)]

pub mod augment;
pub mod checkpoint;
pub mod cluster;
pub mod dense;
pub mod error;
pub mod graph;
pub mod loss;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod rng;
pub mod sparse;
pub mod synth;

pub use augment::AugmentationSpec;
pub use dense::DenseMatrix;
pub use error::{Error, Result};
pub use graph::{AttributedGraph, FilterConfig};
pub use nn::{Mlp, NetworkBundle};
pub use rng::RngState;
pub use sparse::SparseMatrix;
pub use synth::SbmConfig;
