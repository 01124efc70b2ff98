use log::warn;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::kmeans::kmeans;
use super::{Codebook, CodecError, PackedCodes, RegionGrid, VQConfig};
use crate::Tensor;

/// Codes plus everything needed to reconstruct the tensor.
///
/// Codes are stored level-major: the code of sub-vector `s` (row-major over
/// the matrix view) at residual level `r` sits at stream position
/// `r * subvector_count + s`. Codebooks are ordered by
/// `region * residuals + level`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizedTensor {
    codes: PackedCodes,
    shape: Vec<usize>,
    config: VQConfig,
    codebooks: Vec<Codebook>,
}

impl QuantizedTensor {
    /// Assembles a quantized tensor, checking the structure but not the code
    /// values (see [`QuantizedTensor::validate_codes`]).
    pub fn from_parts(
        codes: PackedCodes,
        shape: Vec<usize>,
        config: VQConfig,
        codebooks: Vec<Codebook>,
    ) -> Result<Self, CodecError> {
        config.validate()?;
        if shape.is_empty() || shape.contains(&0) {
            return Err(CodecError::Shape(format!("invalid shape {shape:?}")));
        }
        let cols = *shape.last().expect("non-empty shape");
        let elements: usize = shape.iter().product();
        let grid = config.region_grid(elements / cols, cols)?;
        check_codebooks(&config, &grid, &codebooks)?;
        if codes.bits() != config.log2_entries {
            return Err(CodecError::Format(format!(
                "code width {} differs from log2_entries {}",
                codes.bits(),
                config.log2_entries
            )));
        }
        let expected = elements / config.vector_size * config.residuals;
        if codes.len() != expected {
            return Err(CodecError::Format(format!(
                "expected {expected} codes, found {}",
                codes.len()
            )));
        }
        Ok(Self {
            codes,
            shape,
            config,
            codebooks,
        })
    }

    pub fn codes(&self) -> &PackedCodes {
        &self.codes
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn config(&self) -> &VQConfig {
        &self.config
    }

    pub fn codebooks(&self) -> &[Codebook] {
        &self.codebooks
    }

    pub fn rows(&self) -> usize {
        self.shape[..self.shape.len() - 1].iter().product()
    }

    pub fn cols(&self) -> usize {
        *self.shape.last().expect("non-empty shape")
    }

    pub fn subvectors_per_row(&self) -> usize {
        self.cols() / self.config.vector_size
    }

    pub fn subvector_count(&self) -> usize {
        self.rows() * self.subvectors_per_row()
    }

    pub fn code_count(&self) -> usize {
        self.codes.len()
    }

    pub fn grid(&self) -> RegionGrid {
        self.config
            .region_grid(self.rows(), self.cols())
            .expect("validated at construction")
    }

    pub fn codebook_index(&self, region: usize, level: usize) -> usize {
        region * self.config.residuals + level
    }

    pub fn codebook(&self, region: usize, level: usize) -> &Codebook {
        &self.codebooks[self.codebook_index(region, level)]
    }

    /// Code of sub-vector `(row, k)` (k-th sub-vector of the row) at `level`.
    #[inline]
    pub fn code(&self, level: usize, row: usize, k: usize) -> u32 {
        let sub = row * self.subvectors_per_row() + k;
        self.codes.get(level * self.subvector_count() + sub)
    }

    /// Region of sub-vector `(row, k)`.
    #[inline]
    pub fn region_of(&self, grid: &RegionGrid, row: usize, k: usize) -> usize {
        grid.region_of(row, k * self.config.vector_size)
    }

    /// Fails on the first code that indexes past its codebook.
    pub fn validate_codes(&self) -> Result<(), CodecError> {
        let grid = self.grid();
        let spr = self.subvectors_per_row();
        let nsub = self.subvector_count();
        for level in 0..self.config.residuals {
            for sub in 0..nsub {
                let (row, k) = (sub / spr, sub % spr);
                let position = level * nsub + sub;
                let code = self.codes.get(position);
                let entries = self.codebook(self.region_of(&grid, row, k), level).len();
                if code as usize >= entries {
                    return Err(CodecError::CodeOutOfRange {
                        position,
                        code,
                        entries,
                    });
                }
            }
        }
        Ok(())
    }

    /// Replaces codebooks and codes, keeping shape and config.
    pub(crate) fn with_parts(&self, codes: PackedCodes, codebooks: Vec<Codebook>) -> Self {
        Self {
            codes,
            shape: self.shape.clone(),
            config: self.config,
            codebooks,
        }
    }
}

fn check_codebooks(
    config: &VQConfig,
    grid: &RegionGrid,
    codebooks: &[Codebook],
) -> Result<(), CodecError> {
    let expected = grid.regions() * config.residuals;
    if codebooks.len() != expected {
        return Err(CodecError::CodebookMismatch(format!(
            "expected {expected} codebooks ({} regions x {} levels), found {}",
            grid.regions(),
            config.residuals,
            codebooks.len()
        )));
    }
    for (i, cb) in codebooks.iter().enumerate() {
        let (region, level) = (i / config.residuals, i % config.residuals);
        if cb.vector_size() != config.vector_size {
            return Err(CodecError::CodebookMismatch(format!(
                "codebook {i} has width {}, config wants {}",
                cb.vector_size(),
                config.vector_size
            )));
        }
        if cb.len() > config.entries() {
            return Err(CodecError::CodebookMismatch(format!(
                "codebook {i} has {} entries, more than 2^{}",
                cb.len(),
                config.log2_entries
            )));
        }
        if cb.region_id != region || cb.residual_level != level {
            return Err(CodecError::CodebookMismatch(format!(
                "codebook {i} is tagged (region {}, level {}), expected ({region}, {level})",
                cb.region_id, cb.residual_level
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub seed: u64,
    pub max_iters: usize,
    /// Codebooks whose entries seed the new ones (nested initialization).
    pub warm_start: Option<Vec<Codebook>>,
}

impl TrainOptions {
    pub fn seeded(seed: u64) -> Self {
        Self {
            seed,
            max_iters: 25,
            warm_start: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Training {
    pub codebooks: Vec<Codebook>,
    pub warnings: Vec<String>,
}

/// Trains one codebook per (region, residual level) with default options.
pub fn train_codebooks(
    data: &Tensor,
    config: &VQConfig,
    seed: u64,
) -> Result<Vec<Codebook>, CodecError> {
    train_codebooks_with(data, config, &TrainOptions::seeded(seed)).map(|t| t.codebooks)
}

pub fn train_codebooks_with(
    data: &Tensor,
    config: &VQConfig,
    options: &TrainOptions,
) -> Result<Training, CodecError> {
    config.validate()?;
    let grid = config.region_grid(data.rows(), data.cols())?;
    let vs = config.vector_size;
    let mut codebooks = Vec::with_capacity(grid.regions() * config.residuals);
    let mut warnings = Vec::new();

    for region in 0..grid.regions() {
        let (rows, cols) = grid.bounds(region);
        let mut residual = Vec::with_capacity(rows.len() * cols.len());
        for r in rows {
            residual.extend_from_slice(&data.row(r)[cols.clone()]);
        }
        for level in 0..config.residuals {
            let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
            rng.set_stream(((region as u64) << 8) | level as u64);
            let warm = options
                .warm_start
                .as_ref()
                .and_then(|w| w.get(region * config.residuals + level))
                .filter(|cb| cb.vector_size() == vs)
                .map(|cb| cb.values())
                .unwrap_or(&[]);
            let result = kmeans(
                &residual,
                vs,
                config.entries(),
                warm,
                options.max_iters,
                &mut rng,
            );
            if result.duplicates > 0 {
                let msg = format!(
                    "region {region} level {level}: {} of {} entries duplicate existing centroids \
                     (fewer distinct sub-vectors than entries)",
                    result.duplicates,
                    config.entries()
                );
                warn!("{msg}");
                warnings.push(msg);
            }
            let cb = Codebook::new(result.centroids, vs, level, region)?;
            for p in residual.chunks_exact_mut(vs) {
                let (idx, _) = cb.nearest(p);
                for (x, c) in p.iter_mut().zip(cb.entry(idx)) {
                    *x -= c;
                }
            }
            codebooks.push(cb);
        }
    }
    Ok(Training {
        codebooks,
        warnings,
    })
}

/// Greedy residual quantization against trained codebooks.
pub fn quantize(
    data: &Tensor,
    codebooks: &[Codebook],
    config: &VQConfig,
) -> Result<QuantizedTensor, CodecError> {
    config.validate()?;
    let grid = config.region_grid(data.rows(), data.cols())?;
    check_codebooks(config, &grid, codebooks)?;
    let vs = config.vector_size;
    let spr = data.cols() / vs;
    let nsub = data.rows() * spr;
    let mut codes = PackedCodes::zeroed(config.log2_entries, nsub * config.residuals);
    let mut residual = vec![0f32; vs];

    for row in 0..data.rows() {
        for k in 0..spr {
            let region = grid.region_of(row, k * vs);
            residual.copy_from_slice(&data.row(row)[k * vs..(k + 1) * vs]);
            for level in 0..config.residuals {
                let cb = &codebooks[region * config.residuals + level];
                let (idx, _) = cb.nearest(&residual);
                codes.set(level * nsub + row * spr + k, idx as u32)?;
                for (x, c) in residual.iter_mut().zip(cb.entry(idx)) {
                    *x -= c;
                }
            }
        }
    }
    QuantizedTensor::from_parts(codes, data.shape().to_vec(), *config, codebooks.to_vec())
}

/// Sum of looked-up entries over residual levels, concatenated across
/// sub-spaces.
pub fn dequantize(q: &QuantizedTensor) -> Result<Tensor, CodecError> {
    let vs = q.config().vector_size;
    let grid = q.grid();
    let spr = q.subvectors_per_row();
    let nsub = q.subvector_count();
    let mut out = vec![0f32; q.rows() * q.cols()];
    for row in 0..q.rows() {
        for k in 0..spr {
            let region = grid.region_of(row, k * vs);
            let dst = &mut out[row * q.cols() + k * vs..row * q.cols() + (k + 1) * vs];
            for level in 0..q.config().residuals {
                let position = level * nsub + row * spr + k;
                let code = q.codes().get(position);
                let cb = q.codebook(region, level);
                if code as usize >= cb.len() {
                    return Err(CodecError::CodeOutOfRange {
                        position,
                        code,
                        entries: cb.len(),
                    });
                }
                for (d, c) in dst.iter_mut().zip(cb.entry(code as usize)) {
                    *d += c;
                }
            }
        }
    }
    Tensor::new(q.shape().to_vec(), out)
}
