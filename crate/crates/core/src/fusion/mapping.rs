use serde::{Deserialize, Serialize};

use super::layout::{WarpTile, WARP};
use super::FusionError;

/// Dequantization thread mapping that confines all exchanges to mini-warps.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThreadMapping {
    pub mini_warp_size: usize,
    /// `remap[lane]` is the sequential lane whose sub-vector `lane`
    /// dequantizes instead.
    pub remap: Vec<usize>,
    /// Sequential lanes grouped by the consumers of their data.
    pub mini_warps: Vec<Vec<usize>>,
}

impl ThreadMapping {
    pub fn identity() -> Self {
        Self {
            mini_warp_size: 1,
            remap: (0..WARP).collect(),
            mini_warps: (0..WARP).map(|l| vec![l]).collect(),
        }
    }

    pub fn is_identity(&self) -> bool {
        self.remap.iter().enumerate().all(|(i, &r)| i == r)
    }
}

/// Groups dequantizing lanes by the ordered tuple of lanes that consume
/// their `dst`-wide chunks, then hands the i-th member of each group to the
/// group's i-th consumer.
///
/// Fails when a consumer tuple is not an aligned run of `iters` lanes, since
/// the xor schedule could then not deliver the data in place.
pub fn build_thread_mapping(tile: &WarpTile) -> Result<ThreadMapping, FusionError> {
    let (src, dst, iters) = (tile.src(), tile.dst(), tile.layouts.iters());
    let mut groups: Vec<(Vec<usize>, Vec<usize>)> = Vec::new();
    for lane in 0..WARP {
        let (r, k) = tile.subvector_of(lane);
        let mut consumers = Vec::with_capacity(iters);
        for p in 0..iters {
            let c0 = k * src + p * dst;
            let owner = tile.consumer(r, c0);
            if (c0..c0 + dst).any(|c| tile.consumer(r, c) != owner) {
                return Err(FusionError::Mapping(format!(
                    "chunk {p} of lane {lane} is split across consumers"
                )));
            }
            consumers.push(owner);
        }
        match groups.iter_mut().find(|(key, _)| *key == consumers) {
            Some((_, members)) => members.push(lane),
            None => groups.push((consumers, vec![lane])),
        }
    }
    let mut remap = vec![usize::MAX; WARP];
    for (consumers, members) in &groups {
        let base = consumers[0];
        let aligned =
            base % iters == 0 && consumers.iter().enumerate().all(|(i, &c)| c == base + i);
        if !aligned || members.len() != iters {
            return Err(FusionError::Mapping(format!(
                "lanes {members:?} feed consumers {consumers:?}, which is not an aligned mini-warp of {iters}"
            )));
        }
        for (i, &m) in members.iter().enumerate() {
            remap[consumers[i]] = m;
        }
    }
    Ok(ThreadMapping {
        mini_warp_size: iters,
        remap,
        mini_warps: groups.into_iter().map(|(_, m)| m).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::{ComputeLayout, LayoutPair};

    #[test]
    fn mma_mini_warps() {
        let tile =
            WarpTile::new(16, 16, LayoutPair::new(8, 2).unwrap(), ComputeLayout::Mma).unwrap();
        let m = build_thread_mapping(&tile).unwrap();
        assert_eq!(m.mini_warp_size, 4);
        assert_eq!(m.mini_warps[0], vec![0, 1, 16, 17]);
        assert_eq!(&m.remap[..4], &[0, 1, 16, 17]);
        let mut seen = m.remap.clone();
        seen.sort();
        assert_eq!(seen, (0..32).collect::<Vec<_>>());
    }

    #[test]
    fn equal_layouts_map_to_identity() {
        let tile = WarpTile::select(LayoutPair::new(4, 4).unwrap(), 128);
        assert!(build_thread_mapping(&tile).unwrap().is_identity());
    }

    #[test]
    fn wide_vectors_cannot_feed_mma_in_place() {
        let tile =
            WarpTile::new(16, 32, LayoutPair::new(16, 2).unwrap(), ComputeLayout::Mma).unwrap();
        assert!(build_thread_mapping(&tile).is_err());
    }
}
