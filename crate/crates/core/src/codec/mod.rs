//! The VQ pipeline: split tensors into sub-vectors, cluster them into
//! codebooks, replace each sub-vector by the index of its nearest entry
//! (repeating on the residuals), pack the indices, and reconstruct.

mod codebook;
mod config;
pub mod container;
pub mod kmeans;
mod pack;
mod quant;

pub use codebook::Codebook;
pub use config::{compression_ratio, RegionGrid, Sharing, VQConfig};
pub use pack::PackedCodes;
pub use quant::{
    dequantize, quantize, train_codebooks, train_codebooks_with, QuantizedTensor, TrainOptions,
    Training,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("codebook mismatch: {0}")]
    CodebookMismatch(String),
    #[error(
        "code out of range: code {code} at position {position} but codebook has {entries} entries"
    )]
    CodeOutOfRange {
        position: usize,
        code: u32,
        entries: usize,
    },
    #[error("code {code} does not fit in {bits} bits")]
    CodeTooWide { code: u32, bits: u32 },
    #[error("malformed container: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
