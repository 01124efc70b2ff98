use serde::{Deserialize, Serialize};

use super::CodecError;

/// Which part of a tensor a codebook serves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Sharing {
    /// One codebook per residual level for the whole tensor.
    WholeTensor,
    /// One codebook per `rows x cols` tile of the matrix view. The last tile
    /// along each axis may be short.
    PerTile { rows: usize, cols: usize },
    /// One codebook per group of `group_width` consecutive columns.
    ChannelGroup { group_width: usize },
}

/// `VQ<vector_size, log2_entries, residuals>` plus the sharing granularity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct VQConfig {
    pub vector_size: usize,
    pub log2_entries: u32,
    pub residuals: usize,
    pub sharing: Sharing,
}

impl VQConfig {
    pub fn new(
        vector_size: usize,
        log2_entries: u32,
        residuals: usize,
        sharing: Sharing,
    ) -> Result<Self, CodecError> {
        let config = Self {
            vector_size,
            log2_entries,
            residuals,
            sharing,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), CodecError> {
        if ![2, 4, 8, 16].contains(&self.vector_size) {
            return Err(CodecError::Config(format!(
                "vector_size must be one of 2, 4, 8, 16 (got {})",
                self.vector_size
            )));
        }
        if !(1..=16).contains(&self.log2_entries) {
            return Err(CodecError::Config(format!(
                "log2_entries must be in 1..=16 (got {})",
                self.log2_entries
            )));
        }
        if self.residuals == 0 {
            return Err(CodecError::Config("residuals must be at least 1".into()));
        }
        match self.sharing {
            Sharing::WholeTensor => {}
            Sharing::PerTile { rows, cols } => {
                if rows == 0 || cols == 0 || cols % self.vector_size != 0 {
                    return Err(CodecError::Config(format!(
                        "tile ({rows}, {cols}) must be non-empty with cols a multiple of {}",
                        self.vector_size
                    )));
                }
            }
            Sharing::ChannelGroup { group_width } => {
                if group_width == 0 || group_width % self.vector_size != 0 {
                    return Err(CodecError::Config(format!(
                        "group width {group_width} must be a positive multiple of {}",
                        self.vector_size
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn entries(&self) -> usize {
        1 << self.log2_entries
    }

    /// Equivalent bits per tensor element.
    pub fn bits_per_element(&self) -> f64 {
        (self.residuals as f64 * f64::from(self.log2_entries)) / self.vector_size as f64
    }

    /// Bytes of one entry at 16-bit element width.
    pub fn entry_bytes(&self) -> usize {
        self.vector_size * 2
    }

    /// Bytes of one full codebook at 16-bit element width.
    pub fn codebook_bytes(&self) -> usize {
        self.entries() * self.entry_bytes()
    }

    pub fn region_grid(&self, rows: usize, cols: usize) -> Result<RegionGrid, CodecError> {
        RegionGrid::new(self, rows, cols)
    }
}

/// Size of the quantized form relative to 16-bit storage.
pub fn compression_ratio(config: &VQConfig) -> f64 {
    (config.residuals as f64 * f64::from(config.log2_entries)) / (config.vector_size as f64 * 16.0)
}

/// Partition of a matrix into codebook regions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionGrid {
    pub rows: usize,
    pub cols: usize,
    pub tile_rows: usize,
    pub tile_cols: usize,
    pub grid_rows: usize,
    pub grid_cols: usize,
}

impl RegionGrid {
    fn new(config: &VQConfig, rows: usize, cols: usize) -> Result<Self, CodecError> {
        if rows == 0 || cols == 0 {
            return Err(CodecError::Shape("empty matrix".into()));
        }
        if !cols.is_multiple_of(config.vector_size) {
            return Err(CodecError::Shape(format!(
                "{cols} columns are not divisible by vector size {}",
                config.vector_size
            )));
        }
        let (tile_rows, tile_cols) = match config.sharing {
            Sharing::WholeTensor => (rows, cols),
            Sharing::PerTile { rows: tr, cols: tc } => (tr.min(rows), tc.min(cols)),
            Sharing::ChannelGroup { group_width } => {
                if !cols.is_multiple_of(group_width) {
                    return Err(CodecError::Shape(format!(
                        "{cols} columns are not divisible by channel group {group_width}"
                    )));
                }
                (rows, group_width)
            }
        };
        Ok(Self {
            rows,
            cols,
            tile_rows,
            tile_cols,
            grid_rows: rows.div_ceil(tile_rows),
            grid_cols: cols.div_ceil(tile_cols),
        })
    }

    pub fn regions(&self) -> usize {
        self.grid_rows * self.grid_cols
    }

    pub fn region_of(&self, row: usize, col: usize) -> usize {
        (row / self.tile_rows) * self.grid_cols + col / self.tile_cols
    }

    /// Row and column ranges covered by a region.
    pub fn bounds(&self, region: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let gr = region / self.grid_cols;
        let gc = region % self.grid_cols;
        let r0 = gr * self.tile_rows;
        let c0 = gc * self.tile_cols;
        (
            r0..(r0 + self.tile_rows).min(self.rows),
            c0..(c0 + self.tile_cols).min(self.cols),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_range_fields() {
        assert!(VQConfig::new(3, 8, 1, Sharing::WholeTensor).is_err());
        assert!(VQConfig::new(4, 0, 1, Sharing::WholeTensor).is_err());
        assert!(VQConfig::new(4, 17, 1, Sharing::WholeTensor).is_err());
        assert!(VQConfig::new(4, 8, 0, Sharing::WholeTensor).is_err());
        assert!(VQConfig::new(4, 8, 1, Sharing::ChannelGroup { group_width: 6 }).is_err());
        assert!(VQConfig::new(4, 8, 1, Sharing::PerTile { rows: 8, cols: 6 }).is_err());
    }

    #[test]
    fn ratios_follow_bits_per_element() {
        let c = VQConfig::new(8, 12, 2, Sharing::WholeTensor).unwrap();
        assert_eq!(c.bits_per_element(), 3.0);
        assert_eq!(compression_ratio(&c), 0.1875);
        assert_eq!(compression_ratio(&c), c.bits_per_element() / 16.0);
    }

    #[test]
    fn tiles_allow_short_edge() {
        let c = VQConfig::new(
            4,
            8,
            1,
            Sharing::PerTile {
                rows: 256,
                cols: 256,
            },
        )
        .unwrap();
        let g = c.region_grid(300, 512).unwrap();
        assert_eq!((g.grid_rows, g.grid_cols), (2, 2));
        assert_eq!(g.region_of(299, 300), 3);
        assert_eq!(g.bounds(3), (256..300, 256..512));
    }

    #[test]
    fn channel_groups_must_divide_columns() {
        let c = VQConfig::new(4, 8, 1, Sharing::ChannelGroup { group_width: 8 }).unwrap();
        assert!(c.region_grid(4, 12).is_err());
        let g = c.region_grid(4, 16).unwrap();
        assert_eq!(g.regions(), 2);
        assert_eq!(g.region_of(3, 9), 1);
    }

    #[test]
    fn sharing_toml_round_trip() {
        let c = VQConfig::new(4, 8, 1, Sharing::ChannelGroup { group_width: 4 }).unwrap();
        let text = toml::to_string(&c).unwrap();
        assert!(text.contains("kind = \"channel_group\""));
        let back: VQConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, c);
    }
}
