use serde::{Deserialize, Serialize};

use super::layout::{WarpTile, WARP};
use super::mapping::{build_thread_mapping, ThreadMapping};
use super::{FusionError, LayoutPair};

/// Remapped dequantization plus the in-place xor exchanges that turn the
/// dequantized layout into the compute layout.
///
/// At step `off`, lane `t` swaps register slot `(t ^ off) mod iters` with
/// the same-numbered partner slot of lane `t ^ off`. Slot `p` holds elements
/// `[p*dst, (p+1)*dst)` of the lane's sub-vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShuffleSchedule {
    pub mini_warp_size: usize,
    pub remap: Vec<usize>,
    pub offsets: Vec<usize>,
}

/// Offsets `1..iters` for the given layouts, with an identity remap. Use
/// [`ShuffleSchedule::for_tile`] to attach a tile's thread mapping.
pub fn build_shuffle_schedule(layouts: LayoutPair) -> ShuffleSchedule {
    let iters = layouts.iters();
    ShuffleSchedule {
        mini_warp_size: iters,
        remap: (0..WARP).collect(),
        offsets: (1..iters).collect(),
    }
}

/// One register exchange: `(lane, slot)` pairs swapped by a step.
pub type Exchange = ((usize, usize), (usize, usize));

impl ShuffleSchedule {
    pub fn for_tile(tile: &WarpTile) -> Result<Self, FusionError> {
        let mapping = build_thread_mapping(tile)?;
        Ok(Self::with_mapping(tile.layouts, &mapping))
    }

    pub fn with_mapping(layouts: LayoutPair, mapping: &ThreadMapping) -> Self {
        Self {
            remap: mapping.remap.clone(),
            ..build_shuffle_schedule(layouts)
        }
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    #[inline]
    fn slot_for(&self, lane: usize, off: usize) -> usize {
        (lane ^ off) % self.mini_warp_size
    }

    /// Exchanges of one step among `lanes` (each pair listed once, lower
    /// lane first).
    pub fn exchanges(&self, step: usize, lanes: std::ops::Range<usize>) -> Vec<Exchange> {
        let off = self.offsets[step];
        lanes
            .clone()
            .filter(|&t| t < t ^ off && lanes.contains(&(t ^ off)))
            .map(|t| {
                let u = t ^ off;
                ((t, self.slot_for(t, off)), (u, self.slot_for(u, off)))
            })
            .collect()
    }

    /// Runs every step on per-lane registers laid out as `regs[lane * src +
    /// element]`, `dst` elements per slot. Lanes move in lock step.
    pub fn apply<T: Copy>(&self, regs: &mut [T], src: usize, dst: usize) {
        debug_assert_eq!(regs.len(), WARP * src);
        for &off in &self.offsets {
            for t in 0..WARP {
                let u = t ^ off;
                if t < u {
                    let (st, su) = (self.slot_for(t, off), self.slot_for(u, off));
                    for e in 0..dst {
                        regs.swap(t * src + st * dst + e, u * src + su * dst + e);
                    }
                }
            }
        }
    }

    /// Tile coordinates held in every register after dequantization under
    /// the remap and all exchanges: `[lane * src + element] -> (row, col)`.
    pub fn track(&self, tile: &WarpTile) -> Vec<(usize, usize)> {
        let src = tile.src();
        let mut regs = Vec::with_capacity(WARP * src);
        for lane in 0..WARP {
            let (r, k) = tile.subvector_of(self.remap[lane]);
            regs.extend((0..src).map(|e| (r, k * src + e)));
        }
        self.apply(&mut regs, src, tile.dst());
        regs
    }

    /// Checks that every lane ends up holding exactly the elements the
    /// compute layout assigns it.
    pub fn verify(&self, tile: &WarpTile) -> Result<(), FusionError> {
        let held = self.track(tile);
        let owned = tile.ownership();
        let src = tile.src();
        for lane in 0..WARP {
            let mut have = held[lane * src..(lane + 1) * src].to_vec();
            have.sort();
            if have != owned[lane] {
                return Err(FusionError::Mapping(format!(
                    "lane {lane} holds {have:?} but the compute layout assigns {:?}",
                    owned[lane]
                )));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("schedules serialize")
    }
}
