use thiserror::Error;

use crate::cache::CacheError;
use crate::codec::CodecError;
use crate::dataflow::DataflowError;
use crate::fusion::FusionError;
use crate::presets::PresetError;
use crate::profile::ProfileError;
use crate::sim::SimError;

/// Any failure surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Preset(#[from] PresetError),
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error(transparent)]
    Cache(#[from] CacheError),
    #[error(transparent)]
    Dataflow(#[from] DataflowError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("invalid run spec: {0}")]
    Spec(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
