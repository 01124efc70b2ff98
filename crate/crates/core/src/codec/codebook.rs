use serde::{Deserialize, Serialize};

use super::CodecError;

/// Centroid table for one (region, residual level) pair. Entries are stored
/// row-major as 32-bit reals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Codebook {
    entries: Vec<f32>,
    vector_size: usize,
    pub residual_level: usize,
    pub region_id: usize,
}

impl Codebook {
    pub fn new(
        entries: Vec<f32>,
        vector_size: usize,
        residual_level: usize,
        region_id: usize,
    ) -> Result<Self, CodecError> {
        if vector_size == 0 || entries.is_empty() || !entries.len().is_multiple_of(vector_size) {
            return Err(CodecError::CodebookMismatch(format!(
                "{} values do not form entries of width {vector_size}",
                entries.len()
            )));
        }
        Ok(Self {
            entries,
            vector_size,
            residual_level,
            region_id,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len() / self.vector_size
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn vector_size(&self) -> usize {
        self.vector_size
    }

    pub fn entry(&self, index: usize) -> &[f32] {
        &self.entries[index * self.vector_size..(index + 1) * self.vector_size]
    }

    pub fn values(&self) -> &[f32] {
        &self.entries
    }

    /// Nearest entry by squared Euclidean distance; ties go to the lowest index.
    pub fn nearest(&self, v: &[f32]) -> (usize, f32) {
        nearest_centroid(&self.entries, self.vector_size, v)
    }

    /// Codebook whose entry `new` is this codebook's entry `inverse[new]`.
    pub fn permuted(&self, inverse: &[usize]) -> Self {
        let mut entries = Vec::with_capacity(self.entries.len());
        for &old in inverse {
            entries.extend_from_slice(self.entry(old));
        }
        Self {
            entries,
            vector_size: self.vector_size,
            residual_level: self.residual_level,
            region_id: self.region_id,
        }
    }
}

pub(crate) fn nearest_centroid(centroids: &[f32], dim: usize, v: &[f32]) -> (usize, f32) {
    let mut best = 0;
    let mut best_d = f32::INFINITY;
    for (i, c) in centroids.chunks_exact(dim).enumerate() {
        let d = sq_dist(c, v);
        if d < best_d {
            best = i;
            best_d = d;
        }
    }
    (best, best_d)
}

#[inline]
pub(crate) fn sq_dist(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}
