//! The codebook cache: an occupancy model for a GPU, the resource slack a
//! kernel leaves unused, and the register / shared / global placement of
//! frequency-ordered codebook entries.

mod gpu;
mod handle;
mod plan;
mod slack;

pub use gpu::{GpuModel, KernelUsage, MODEL_DIR_ENV};
pub use handle::{cache_access, cache_load, cache_switch, CacheCounters, CachedCodebook};
pub use plan::{level_of, plan_cache, CachePlan, Level};
pub use slack::{compute_slack, Slack};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CacheError {
    #[error("GPU model: {0}")]
    Model(String),
    #[error("infeasible kernel: {0}")]
    Infeasible(String),
    #[error("invalid cache plan: {0}")]
    Plan(String),
    #[error("capacity exceeded: {0}")]
    Capacity(String),
    #[error("entry index {index} out of range for {entries} entries")]
    IndexOutOfRange { index: usize, entries: usize },
}
