//! A deterministic GPU model that executes fused VQ kernels numerically and
//! counts what the hardware would do: codebook loads, per-level hits,
//! shared-memory bank conflicts, staging and reduction traffic.
//!
//! Blocks run one after another and warps in lock step, so identical inputs
//! give bit-identical outputs and counters. No timing is modeled.

pub mod bank;
mod kernel;
mod reference;
mod report;

pub use bank::{stream_conflicts, BankModel};
pub use kernel::{
    base_usage, plan_kernel, run_baseline_kernel, run_config, run_dense_kernel, run_fused_kernel,
    run_variant, CacheMode, FusionMode, KernelPlans, PhaseFusion, SimConfig, Variant, Workload,
};
pub use reference::reference_compute;
pub use report::{SimExtras, SimReport, CSV_COLUMNS, REPORT_SCHEMA_VERSION};

use thiserror::Error;

use crate::cache::CacheError;
use crate::codec::CodecError;
use crate::dataflow::DataflowError;
use crate::fusion::FusionError;
use crate::profile::ProfileError;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("plan does not fit the workload: {0}")]
    Plan(String),
    #[error("capacity exceeded: {0}")]
    Capacity(String),
    #[error("shared memory access: {0}")]
    Access(String),
    #[error(transparent)]
    Cache(#[from] CacheError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Dataflow(#[from] DataflowError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Profile(#[from] ProfileError),
}
