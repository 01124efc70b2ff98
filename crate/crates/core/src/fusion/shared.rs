use serde::{Deserialize, Serialize};

use super::layout::{WarpTile, WARP};
use super::FusionError;
use crate::sim::bank::BankModel;

/// Cost of relaying one warp tile through shared memory.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StagingCost {
    /// Bytes read back into registers (2 bytes per element).
    pub staged_bytes: u64,
    pub bank_conflicts: u64,
}

/// Staging cost of a tile: lanes write their sub-vectors row-major into a
/// 16-bit buffer, then read their compute-layout elements `dst` at a time.
pub fn staging_cost(tile: &WarpTile, banks: &BankModel) -> StagingCost {
    if tile.src() == tile.dst() {
        return StagingCost::default();
    }
    let (src, dst) = (tile.src(), tile.dst());
    let word = |r: usize, c: usize| (r * tile.cols + c) * 2 / banks.bank_width;
    let mut conflicts = 0;
    // Writes: one access per word of the sub-vector.
    let words_per_lane = (src * 2).div_ceil(banks.bank_width);
    for w in 0..words_per_lane {
        let words: Vec<usize> = (0..WARP)
            .map(|lane| {
                let (r, k) = tile.subvector_of(lane);
                word(r, k * src) + w
            })
            .collect();
        conflicts += banks.conflicts_of_words(&words);
    }
    // Reads: the j-th dst-wide chunk of every lane's owned elements.
    let owned = tile.ownership();
    for j in 0..tile.layouts.iters() {
        let words: Vec<usize> = owned
            .iter()
            .map(|o| {
                let (r, c) = o[j * dst];
                word(r, c)
            })
            .collect();
        conflicts += banks.conflicts_of_words(&words);
    }
    StagingCost {
        staged_bytes: (tile.elements() * 2) as u64,
        bank_conflicts: conflicts,
    }
}

/// Relays dequantized values (`produced[lane * src + e]`, sequential lane
/// mapping) through a staging buffer of `capacity` bytes and returns each
/// lane's compute-layout elements (`[lane * src + i]`, in the order of
/// [`WarpTile::ownership`]).
pub fn shared_fusion(
    tile: &WarpTile,
    produced: &[f32],
    capacity: usize,
) -> Result<Vec<f32>, FusionError> {
    let need = tile.elements() * 2;
    if need > capacity {
        return Err(FusionError::Capacity { need, capacity });
    }
    let positions: Vec<(usize, usize)> = tile.ownership().into_iter().flatten().collect();
    let mut staging = vec![0f32; tile.elements()];
    let mut out = vec![0f32; tile.elements()];
    stage_through(tile, &positions, produced, &mut staging, &mut out);
    Ok(out)
}

/// Allocation-free core of [`shared_fusion`]: writes every lane's
/// sub-vector into `staging` (row-major tile) and gathers `positions` into
/// `out`.
pub fn stage_through(
    tile: &WarpTile,
    positions: &[(usize, usize)],
    produced: &[f32],
    staging: &mut [f32],
    out: &mut [f32],
) {
    let src = tile.src();
    for lane in 0..WARP {
        let (r, k) = tile.subvector_of(lane);
        let at = r * tile.cols + k * src;
        staging[at..at + src].copy_from_slice(&produced[lane * src..(lane + 1) * src]);
    }
    for (o, &(r, c)) in out.iter_mut().zip(positions) {
        *o = staging[r * tile.cols + c];
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::{ComputeLayout, LayoutPair};

    #[test]
    fn identity_stages_nothing() {
        let tile = WarpTile::select(LayoutPair::new(4, 4).unwrap(), 128);
        assert_eq!(
            staging_cost(&tile, &BankModel::default()),
            StagingCost::default()
        );
    }

    #[test]
    fn staged_bytes_are_two_per_element() {
        let tile = WarpTile::select(LayoutPair::new(4, 1).unwrap(), 4);
        let c = staging_cost(&tile, &BankModel::default());
        assert_eq!(c.staged_bytes, 128 * 2);
    }

    #[test]
    fn relayout_matches_ownership() {
        let tile =
            WarpTile::new(16, 16, LayoutPair::new(8, 2).unwrap(), ComputeLayout::Mma).unwrap();
        let produced: Vec<f32> = (0..256)
            .map(|i| {
                let (lane, e) = (i / 8, i % 8);
                let (r, k) = tile.subvector_of(lane);
                (r * 16 + k * 8 + e) as f32
            })
            .collect();
        let out = shared_fusion(&tile, &produced, 1 << 10).unwrap();
        for (lane, owned) in tile.ownership().iter().enumerate() {
            for (i, &(r, c)) in owned.iter().enumerate() {
                assert_eq!(out[lane * 8 + i], (r * 16 + c) as f32);
            }
        }
        assert!(shared_fusion(&tile, &produced, 256).is_err());
    }
}
