use serde::{Deserialize, Serialize};

use super::{FusionError, LayoutPair};

/// Which lane a compute primitive expects to hold each element of a warp
/// tile.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ComputeLayout {
    /// The compute consumes data where dequantization left it.
    Identity,
    /// mma A-fragment: lane `4g + c` holds the pairs at rows `g`, `g + 8`
    /// and columns `2c + 8j`, over a `16 x 2*src` tile.
    Mma,
    /// Column ownership: the tile is cut into bands of `iters` rows, and in
    /// each band lane `band * (width/dst) + col/dst` owns a `dst`-wide column
    /// slice for all the band's rows.
    ColumnUnits,
}

/// A warp-sized tile of a quantized matrix: 32 sub-vectors, dequantized one
/// per lane, consumed under a compute layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WarpTile {
    pub rows: usize,
    pub cols: usize,
    pub layouts: LayoutPair,
    pub layout: ComputeLayout,
}

pub const WARP: usize = 32;

impl WarpTile {
    pub fn new(
        rows: usize,
        cols: usize,
        layouts: LayoutPair,
        layout: ComputeLayout,
    ) -> Result<Self, FusionError> {
        let (src, dst) = (layouts.src, layouts.dst);
        let bad = |why: &str| {
            Err(FusionError::Layout(format!(
                "{rows}x{cols} tile with layouts {src}->{dst} under {layout:?}: {why}"
            )))
        };
        if rows * cols != WARP * src || !cols.is_multiple_of(src) {
            return bad("tile must hold one sub-vector per lane");
        }
        match layout {
            ComputeLayout::Identity => {}
            ComputeLayout::Mma => {
                if dst != 2 || src < 4 || rows != 16 || cols != 2 * src {
                    return bad("mma fragments need dst 2, src >= 4 and a 16 x 2*src tile");
                }
            }
            ComputeLayout::ColumnUnits => {
                if !cols.is_multiple_of(dst)
                    || !(WARP * dst).is_multiple_of(cols)
                    || rows != (WARP * dst / cols) * layouts.iters()
                {
                    return bad("column units need width dividing 32*dst and bands of iters rows");
                }
            }
        }
        Ok(Self {
            rows,
            cols,
            layouts,
            layout,
        })
    }

    /// Tile used for a region segment `seg_width` columns wide.
    pub fn select(layouts: LayoutPair, seg_width: usize) -> Self {
        let (src, dst) = (layouts.src, layouts.dst);
        // Widest power-of-two multiple of src that divides the segment and
        // keeps the geometry valid.
        let widest = |limit: usize| {
            let mut w = src;
            while w * 2 <= limit && seg_width.is_multiple_of(w * 2) {
                w *= 2;
            }
            w
        };
        if src == dst {
            let w = widest(WARP * src);
            return Self::new(WARP * src / w, w, layouts, ComputeLayout::Identity).expect("valid");
        }
        if dst == 2 && src >= 4 && seg_width.is_multiple_of(2 * src) {
            return Self::new(16, 2 * src, layouts, ComputeLayout::Mma).expect("valid");
        }
        let w = widest(WARP * dst);
        Self::new(WARP * src / w, w, layouts, ComputeLayout::ColumnUnits).expect("valid")
    }

    pub fn src(&self) -> usize {
        self.layouts.src
    }

    pub fn dst(&self) -> usize {
        self.layouts.dst
    }

    pub fn elements(&self) -> usize {
        self.rows * self.cols
    }

    /// Sub-vectors per tile row.
    pub fn per_row(&self) -> usize {
        self.cols / self.layouts.src
    }

    /// Lane that dequantizes sub-vector `(r, k)` under the sequential mapping.
    #[inline]
    pub fn producer(&self, r: usize, k: usize) -> usize {
        r * self.per_row() + k
    }

    /// Sub-vector `(row, k)` handled by sequential lane `lane`.
    #[inline]
    pub fn subvector_of(&self, lane: usize) -> (usize, usize) {
        (lane / self.per_row(), lane % self.per_row())
    }

    /// Lane that consumes element `(r, c)`.
    pub fn consumer(&self, r: usize, c: usize) -> usize {
        match self.layout {
            ComputeLayout::Identity => self.producer(r, c / self.layouts.src),
            ComputeLayout::Mma => 4 * (r % 8) + (c % 8) / 2,
            ComputeLayout::ColumnUnits => {
                let band = r / self.layouts.iters();
                band * (self.cols / self.layouts.dst) + c / self.layouts.dst
            }
        }
    }

    /// Elements each lane must hold for the compute, in row-major order.
    pub fn ownership(&self) -> Vec<Vec<(usize, usize)>> {
        let mut owned = vec![Vec::new(); WARP];
        for r in 0..self.rows {
            for c in 0..self.cols {
                owned[self.consumer(r, c)].push((r, c));
            }
        }
        owned
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mma_tile_ownership() {
        let t = WarpTile::new(16, 16, LayoutPair::new(8, 2).unwrap(), ComputeLayout::Mma).unwrap();
        let own = t.ownership();
        assert!(own.iter().all(|o| o.len() == 8));
        assert_eq!(
            own[0],
            vec![
                (0, 0),
                (0, 1),
                (0, 8),
                (0, 9),
                (8, 0),
                (8, 1),
                (8, 8),
                (8, 9)
            ]
        );
        assert_eq!(t.producer(8, 0), 16);
    }

    #[test]
    fn column_units_ownership() {
        let t = WarpTile::select(LayoutPair::new(4, 1).unwrap(), 4);
        assert_eq!(
            (t.rows, t.cols, t.layout),
            (32, 4, ComputeLayout::ColumnUnits)
        );
        let own = t.ownership();
        // Lane 1 owns column 1 of rows 0..4.
        assert_eq!(own[1], vec![(0, 1), (1, 1), (2, 1), (3, 1)]);
        assert_eq!(own[4], vec![(4, 0), (5, 0), (6, 0), (7, 0)]);
    }

    #[test]
    fn selection() {
        let p = |s, d| LayoutPair::new(s, d).unwrap();
        assert_eq!(WarpTile::select(p(8, 2), 4096).layout, ComputeLayout::Mma);
        assert_eq!(
            WarpTile::select(p(4, 2), 4).layout,
            ComputeLayout::ColumnUnits
        );
        assert_eq!(
            WarpTile::select(p(2, 2), 4096).layout,
            ComputeLayout::Identity
        );
        let t = WarpTile::select(p(8, 1), 128);
        assert_eq!((t.rows, t.cols), (8, 32));
        let t = WarpTile::select(p(2, 1), 2);
        assert_eq!((t.rows, t.cols), (32, 2));
    }

    #[test]
    fn rejects_bad_geometry() {
        let p = LayoutPair::new(8, 2).unwrap();
        assert!(WarpTile::new(8, 32, p, ComputeLayout::Mma).is_err());
        assert!(WarpTile::new(16, 15, p, ComputeLayout::Identity).is_err());
    }
}
