//! Graph classification with structure-aware node embeddings.
//!
//! The pipeline: synthesize or load labeled graph datasets, embed each
//! graph's nodes with skip-gram over random walks, train a graph
//! convolutional classifier whose inputs concatenate node labels with the
//! embedding coordinates, and optionally insert a farthest-point-sampling
//! pooling stage between convolution blocks.

pub mod autodiff;
pub mod clustering;
pub mod embedding;
pub mod error;
pub mod graph;
pub mod model;
pub mod pooling;
pub mod seeding;
pub mod synth;
pub mod train;
pub mod tu;

pub use error::{Error, Result};
