//! Crate-wide error type.

use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by graph construction, corpus I/O, and the training
/// pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("self-loop at node {node}")]
    SelfLoop { node: usize },

    #[error("edge endpoint {node} out of range for a graph with {n} nodes")]
    EndpointOutOfRange { node: usize, n: usize },

    #[error("node label list has length {got}, expected {expected}")]
    LabelLengthMismatch { got: usize, expected: usize },

    #[error("node label {label} is not in the alphabet")]
    LabelOutsideAlphabet { label: u32 },

    #[error("reachability radius must be at least 1, got {radius}")]
    InvalidRadius { radius: usize },

    #[error("duplicate index {index} in selection")]
    DuplicateIndex { index: usize },

    #[error("index {index} out of range for {n} nodes")]
    IndexOutOfRange { index: usize, n: usize },

    #[error("cluster size {size} must exceed intra-cluster degree {degree}")]
    ClusterTooSmall { size: usize, degree: usize },

    #[error("bridge width {width} exceeds a cluster of size {size}")]
    BridgeTooWide { width: usize, size: usize },

    #[error("bridged clusters overlap at node {node}")]
    ClustersOverlap { node: usize },

    #[error("dataset size {size} is smaller than the class count {classes}")]
    DatasetTooSmall { size: usize, classes: usize },

    #[error("class {class} has {got} graphs, need at least {folds} for {folds}-fold splits")]
    ClassTooSmall {
        class: usize,
        got: usize,
        folds: usize,
    },

    #[error("empty sample set")]
    EmptySampleSet,

    #[error("sample count {m} out of range for {n} nodes")]
    SampleCountOutOfRange { m: usize, n: usize },

    #[error("mixing weight {lambda} outside [0, 1]")]
    InvalidMixing { lambda: f64 },

    #[error("shape mismatch: {context} expected {expected}, got {got}")]
    ShapeMismatch {
        context: &'static str,
        expected: String,
        got: String,
    },

    #[error("non-finite values in {context} output")]
    NonFinite { context: &'static str },

    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),

    #[error("missing file {path}")]
    MissingFile { path: PathBuf },

    #[error("{path}:{line}: {message}")]
    Corpus {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
