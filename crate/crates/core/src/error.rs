//! Error type shared by every module in the crate.

use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A constructor was handed values that violate a type invariant.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// Feature/parameter width does not match the model at a specific layer.
    #[error("dimension mismatch at layer {layer}: expected {expected} {what}, got {got}")]
    LayerMismatch {
        layer: usize,
        what: &'static str,
        expected: usize,
        got: usize,
    },

    /// Two objects that must share a shape do not.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// An operation that needs at least one sample got none.
    #[error("empty batch: {0}")]
    EmptyBatch(&'static str),

    /// A loss or gradient stopped being a finite number.
    #[error("non-finite value in {term}; the optimization has diverged")]
    NonFinite { term: &'static str },

    /// The unlearning loop tripped its loss-magnitude guard.
    #[error("unlearning loss magnitude {loss:.3e} exceeds guard; lower the learning rate or raise lambda")]
    Diverged { loss: f64 },

    /// Aggregation weights must sum to one.
    #[error("client weights sum to {sum} (expected 1 within {tolerance})")]
    WeightSum { sum: f64, tolerance: f64 },

    /// Debiasing annihilated the whole label row.
    #[error("debias produced an all-zero label (degenerate teacher output)")]
    DegenerateLabel,

    /// The requested class has no samples where it was expected.
    #[error("class {class} is not present in client {client}'s data")]
    ClassMissing { class: usize, client: usize },

    /// More clients than samples.
    #[error("cannot split {samples} samples across {clients} clients")]
    PartitionTooFine { samples: usize, clients: usize },

    /// An IDX file starts with the wrong magic number.
    #[error("{path}: bad IDX magic 0x{got:08x} (expected 0x{expected:08x})")]
    IdxBadMagic {
        path: PathBuf,
        expected: u32,
        got: u32,
    },

    /// An IDX file ends before its header says it should.
    #[error("{path}: truncated IDX payload (expected {expected} bytes, found {found})")]
    IdxTruncated {
        path: PathBuf,
        expected: usize,
        found: usize,
    },

    /// Image and label files disagree on the sample count.
    #[error("IDX count mismatch: {images} images vs {labels} labels")]
    IdxCountMismatch { images: usize, labels: usize },

    /// A label byte outside the supported class range.
    #[error("IDX label {value} out of range (class count {class_count})")]
    IdxBadLabel { value: u8, class_count: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
