//! Vector-quantization codec plus fused-kernel planning for VQ-compressed
//! weights and KV caches, with a deterministic simulated GPU executor.
//!
//! The crate is organised bottom-up:
//!
//! * [`codec`]: sub-vector splitting, k-means codebooks, residual
//!   quantization, bit-packed index streams and the `VQLF` container.
//! * [`presets`]: the built-in algorithm configurations.
//! * [`profile`]: entry access histograms and frequency reordering.
//! * [`cache`]: GPU occupancy model, resource slack and the three-level
//!   codebook cache (registers / shared / global).
//! * [`dataflow`]: switch/reduce axis analysis and the split-factor solver.
//! * [`fusion`]: mini-warp thread mapping and xor-shuffle schedules.
//! * [`sim`]: warps, shared-memory banks, traffic counters and the fused and
//!   baseline kernels.
//! * [`pipeline`]: run specifications, variant ladders, bench and verify.

pub mod cache;
pub mod codec;
pub mod dataflow;
pub mod error;
pub mod fusion;
pub mod pipeline;
pub mod presets;
pub mod profile;
pub mod sim;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
