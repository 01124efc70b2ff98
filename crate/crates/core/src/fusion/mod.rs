//! Hierarchical fusion of dequantization with compute.
//!
//! Dequantization leaves `src = vector_size` contiguous elements per lane;
//! compute primitives want `dst` per lane. Register-level fusion remaps
//! which lane dequantizes which sub-vector so every exchange stays inside a
//! mini-warp of `src/dst` lanes, then runs `src/dst - 1` in-place xor
//! shuffles. When that would take too many shuffles the values are relayed
//! through shared memory instead.

mod layout;
mod mapping;
mod schedule;
mod shared;

pub use layout::{ComputeLayout, WarpTile, WARP};
pub use mapping::{build_thread_mapping, ThreadMapping};
pub use schedule::{build_shuffle_schedule, Exchange, ShuffleSchedule};
pub use shared::{shared_fusion, stage_through, staging_cost, StagingCost};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("invalid layouts: {0}")]
    Layout(String),
    #[error("no in-place register mapping: {0}")]
    Mapping(String),
    #[error("staging buffer needs {need} bytes, {capacity} available")]
    Capacity { need: usize, capacity: usize },
}

/// Default shuffle count at which shared-memory fusion wins.
pub const DEFAULT_SHUFFLE_THRESHOLD: usize = 5;

/// Elements per lane produced by dequantization (`src`) and required by the
/// compute (`dst`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayoutPair {
    pub src: usize,
    pub dst: usize,
}

impl LayoutPair {
    pub fn new(src: usize, dst: usize) -> Result<Self, FusionError> {
        if !src.is_power_of_two() || !dst.is_power_of_two() || src < dst {
            return Err(FusionError::Layout(format!(
                "need powers of two with src >= dst, got {src} -> {dst}"
            )));
        }
        Ok(Self { src, dst })
    }

    pub fn iters(&self) -> usize {
        self.src / self.dst
    }

    pub fn n_shuffle(&self) -> usize {
        self.iters() - 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionLevel {
    Register,
    Shared,
}

/// Register fusion iff fewer than `threshold` shuffles are needed.
pub fn choose_fusion_level(layouts: LayoutPair, threshold: usize) -> FusionLevel {
    if layouts.n_shuffle() < threshold {
        FusionLevel::Register
    } else {
        FusionLevel::Shared
    }
}

/// Everything a kernel needs to fuse one warp tile shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionPlan {
    pub tile: WarpTile,
    pub level: FusionLevel,
    pub n_shuffle: usize,
    /// Present for register fusion.
    pub schedule: Option<ShuffleSchedule>,
    /// Tile coordinates of `[lane * src + i]` after fusion.
    #[serde(skip)]
    pub positions: Vec<(usize, usize)>,
}

impl FusionPlan {
    /// Adaptive choice; falls back to shared fusion when no in-place
    /// mapping exists for the tile.
    pub fn adaptive(tile: WarpTile, threshold: usize) -> Self {
        if tile.src() == tile.dst() {
            return Self::register(tile, ShuffleSchedule::for_tile(&tile).expect("identity"));
        }
        if choose_fusion_level(tile.layouts, threshold) == FusionLevel::Register {
            if let Ok(s) = ShuffleSchedule::for_tile(&tile) {
                return Self::register(tile, s);
            }
        }
        Self::shared(tile)
    }

    /// Shared-memory fusion regardless of the shuffle count (equal layouts
    /// still need no staging).
    pub fn shared_only(tile: WarpTile) -> Self {
        if tile.src() == tile.dst() {
            return Self::register(tile, ShuffleSchedule::for_tile(&tile).expect("identity"));
        }
        Self::shared(tile)
    }

    fn register(tile: WarpTile, schedule: ShuffleSchedule) -> Self {
        let positions = schedule.track(&tile);
        debug_assert!(schedule.verify(&tile).is_ok());
        Self {
            tile,
            level: FusionLevel::Register,
            n_shuffle: schedule.len(),
            schedule: Some(schedule),
            positions,
        }
    }

    fn shared(tile: WarpTile) -> Self {
        let positions = tile.ownership().into_iter().flatten().collect();
        Self {
            tile,
            level: FusionLevel::Shared,
            n_shuffle: tile.layouts.n_shuffle(),
            schedule: None,
            positions,
        }
    }

    /// Whether values move between lanes at all.
    pub fn stages(&self) -> bool {
        self.level == FusionLevel::Shared && self.tile.src() != self.tile.dst()
    }
}
