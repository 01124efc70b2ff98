//! Offline access-frequency profiling of codebook entries and the
//! descending-frequency relabeling that the codebook cache relies on.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{CodecError, QuantizedTensor};

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("histogram has {histogram} bins but the codebook has {codebook} entries")]
    SizeMismatch { histogram: usize, codebook: usize },
    #[error("codebook index {0} out of range")]
    NoSuchCodebook(usize),
    #[error("tile spec {rows}x{cols} does not tile a {tensor_rows}x{tensor_cols} matrix")]
    BadTiles {
        rows: usize,
        cols: usize,
        tensor_rows: usize,
        tensor_cols: usize,
    },
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Per-entry access counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessHistogram {
    counts: Vec<u64>,
}

impl AccessHistogram {
    pub fn new(entries: usize) -> Self {
        Self {
            counts: vec![0; entries],
        }
    }

    pub fn from_counts(counts: Vec<u64>) -> Self {
        Self { counts }
    }

    /// Counts the codes of a plain index stream.
    pub fn from_codes(entries: usize, codes: impl IntoIterator<Item = u32>) -> Self {
        let mut h = Self::new(entries);
        for c in codes {
            h.counts[c as usize] += 1;
        }
        h
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Mean count over all entries, unused ones included.
    pub fn mean(&self) -> f64 {
        self.total() as f64 / self.counts.len() as f64
    }

    /// Population standard deviation over all entries.
    pub fn stddev(&self) -> f64 {
        let mu = self.mean();
        let var = self
            .counts
            .iter()
            .map(|&c| (c as f64 - mu).powi(2))
            .sum::<f64>()
            / self.counts.len() as f64;
        var.sqrt()
    }

    /// `mean + 3 * stddev`.
    pub fn hot_threshold(&self) -> f64 {
        self.mean() + 3.0 * self.stddev()
    }

    /// Entries accessed more often than `mean + 3 * stddev`, ascending.
    pub fn hot_set(&self) -> Vec<usize> {
        let t = self.hot_threshold();
        (0..self.counts.len())
            .filter(|&i| self.counts[i] as f64 > t)
            .collect()
    }

    #[inline]
    pub fn record(&mut self, index: usize) {
        self.counts[index] += 1;
    }

    /// Adds another histogram over the same entries.
    pub fn merge(&mut self, other: &AccessHistogram) {
        assert_eq!(
            self.counts.len(),
            other.counts.len(),
            "merging histograms of different sizes"
        );
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }

    /// Whether counts never increase with the index.
    pub fn is_sorted_descending(&self) -> bool {
        self.counts.windows(2).all(|w| w[0] >= w[1])
    }
}

/// Relabeling of codebook entries: `perm[old] = new`, `inverse[new] = old`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntryPermutation {
    perm: Vec<u32>,
    inverse: Vec<u32>,
}

impl EntryPermutation {
    pub fn identity(n: usize) -> Self {
        let v: Vec<u32> = (0..n as u32).collect();
        Self {
            perm: v.clone(),
            inverse: v,
        }
    }

    /// Builds the permutation from the new order (`inverse[new] = old`).
    pub fn from_inverse(inverse: Vec<u32>) -> Self {
        let mut perm = vec![u32::MAX; inverse.len()];
        for (new, &old) in inverse.iter().enumerate() {
            assert_eq!(perm[old as usize], u32::MAX, "not a bijection");
            perm[old as usize] = new as u32;
        }
        Self { perm, inverse }
    }

    /// Sorts entries by descending count, ties by ascending original index.
    pub fn by_frequency(hist: &AccessHistogram) -> Self {
        let mut order: Vec<u32> = (0..hist.len() as u32).collect();
        order.sort_by(|&a, &b| {
            hist.counts[b as usize]
                .cmp(&hist.counts[a as usize])
                .then(a.cmp(&b))
        });
        Self::from_inverse(order)
    }

    #[inline]
    pub fn new_index(&self, old: u32) -> u32 {
        self.perm[old as usize]
    }

    #[inline]
    pub fn old_index(&self, new: u32) -> u32 {
        self.inverse[new as usize]
    }

    pub fn forward(&self) -> &[u32] {
        &self.perm
    }

    pub fn inverse(&self) -> &[u32] {
        &self.inverse
    }

    pub fn len(&self) -> usize {
        self.perm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perm.is_empty()
    }

    pub fn is_identity(&self) -> bool {
        self.perm.iter().enumerate().all(|(i, &p)| p as usize == i)
    }

    pub fn apply(&self, hist: &AccessHistogram) -> AccessHistogram {
        let mut counts = vec![0; hist.len()];
        for (old, &c) in hist.counts.iter().enumerate() {
            counts[self.perm[old] as usize] = c;
        }
        AccessHistogram { counts }
    }
}

/// Granularity of [`profile_accesses`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Granularity {
    Tensor,
    /// Rectangular tiles of the matrix view, as thread blocks would see it.
    BlockTile {
        rows: usize,
        cols: usize,
    },
}

/// Histogram of one codebook restricted to one tile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileHistogram {
    /// Tile index (row-major over the tile grid); 0 for tensor granularity.
    pub tile: usize,
    /// Index into the tensor's codebook list.
    pub codebook: usize,
    pub histogram: AccessHistogram,
}

fn check_tiles(q: &QuantizedTensor, rows: usize, cols: usize) -> Result<(), ProfileError> {
    let ok = rows > 0
        && cols > 0
        && q.rows().is_multiple_of(rows)
        && q.cols().is_multiple_of(cols)
        && cols.is_multiple_of(q.config().vector_size);
    if ok {
        Ok(())
    } else {
        Err(ProfileError::BadTiles {
            rows,
            cols,
            tensor_rows: q.rows(),
            tensor_cols: q.cols(),
        })
    }
}

/// Walks every code as `(tile, codebook index, code)`.
fn for_each_code(
    q: &QuantizedTensor,
    tile: Option<(usize, usize)>,
    mut f: impl FnMut(usize, usize, u32),
) {
    let vs = q.config().vector_size;
    let grid = q.grid();
    let spr = q.subvectors_per_row();
    let nsub = q.subvector_count();
    let residuals = q.config().residuals;
    let tiles_per_row = tile.map_or(1, |(_, tc)| q.cols() / tc);
    for level in 0..residuals {
        for row in 0..q.rows() {
            for k in 0..spr {
                let col = k * vs;
                let cb = grid.region_of(row, col) * residuals + level;
                let t = tile.map_or(0, |(tr, tc)| (row / tr) * tiles_per_row + col / tc);
                f(t, cb, q.codes().get(level * nsub + row * spr + k));
            }
        }
    }
}

/// One histogram per codebook (tensor granularity), or per tile and
/// codebook touched by the tile.
pub fn profile_accesses(
    q: &QuantizedTensor,
    granularity: Granularity,
) -> Result<Vec<TileHistogram>, ProfileError> {
    let entries = q.config().entries();
    let ncb = q.codebooks().len();
    let (ntiles, tile) = match granularity {
        Granularity::Tensor => (1, None),
        Granularity::BlockTile { rows, cols } => {
            check_tiles(q, rows, cols)?;
            ((q.rows() / rows) * (q.cols() / cols), Some((rows, cols)))
        }
    };
    let mut hists: Vec<Option<AccessHistogram>> = vec![None; ntiles * ncb];
    for_each_code(q, tile, |t, cb, code| {
        hists[t * ncb + cb]
            .get_or_insert_with(|| AccessHistogram::new(entries))
            .record(code as usize);
    });
    Ok(hists
        .into_iter()
        .enumerate()
        .filter_map(|(i, h)| {
            h.map(|histogram| TileHistogram {
                tile: i / ncb,
                codebook: i % ncb,
                histogram,
            })
        })
        .collect())
}

/// Tensor-level histogram of one codebook.
pub fn profile_codebook(
    q: &QuantizedTensor,
    codebook: usize,
) -> Result<AccessHistogram, ProfileError> {
    if codebook >= q.codebooks().len() {
        return Err(ProfileError::NoSuchCodebook(codebook));
    }
    let mut h = AccessHistogram::new(q.config().entries());
    for_each_code(q, None, |_, cb, code| {
        if cb == codebook {
            h.record(code as usize);
        }
    });
    Ok(h)
}

/// Relabels one codebook so entry 0 is the most frequent, rewriting every
/// code that refers to it. Dequantization is unchanged bit for bit.
pub fn reorder_by_frequency(
    q: &QuantizedTensor,
    codebook: usize,
    histogram: &AccessHistogram,
) -> Result<(QuantizedTensor, EntryPermutation), ProfileError> {
    let book = q
        .codebooks()
        .get(codebook)
        .ok_or(ProfileError::NoSuchCodebook(codebook))?;
    if histogram.len() != book.len() {
        return Err(ProfileError::SizeMismatch {
            histogram: histogram.len(),
            codebook: book.len(),
        });
    }
    let perm = EntryPermutation::by_frequency(histogram);
    let mut perms: Vec<Option<&EntryPermutation>> = vec![None; q.codebooks().len()];
    perms[codebook] = Some(&perm);
    let out = relabel(q, &perms)?;
    Ok((out, perm))
}

/// Reorders every codebook of the tensor by its own tensor-level histogram.
pub fn reorder_all(
    q: &QuantizedTensor,
) -> Result<(QuantizedTensor, Vec<EntryPermutation>), ProfileError> {
    let hists = profile_accesses(q, Granularity::Tensor)?;
    let mut perms: Vec<EntryPermutation> = (0..q.codebooks().len())
        .map(|i| EntryPermutation::identity(q.codebooks()[i].len()))
        .collect();
    for th in &hists {
        if th.histogram.len() == q.codebooks()[th.codebook].len() {
            perms[th.codebook] = EntryPermutation::by_frequency(&th.histogram);
        } else {
            return Err(ProfileError::SizeMismatch {
                histogram: th.histogram.len(),
                codebook: q.codebooks()[th.codebook].len(),
            });
        }
    }
    let refs: Vec<Option<&EntryPermutation>> = perms.iter().map(Some).collect();
    Ok((relabel(q, &refs)?, perms))
}

fn relabel(
    q: &QuantizedTensor,
    perms: &[Option<&EntryPermutation>],
) -> Result<QuantizedTensor, ProfileError> {
    let codebooks = q
        .codebooks()
        .iter()
        .zip(perms)
        .map(|(cb, p)| match p {
            Some(p) => cb.permuted(&p.inverse().iter().map(|&i| i as usize).collect::<Vec<_>>()),
            None => cb.clone(),
        })
        .collect();
    let mut codes = q.codes().clone();
    let mut pos = 0;
    let mut err = None;
    for_each_code(q, None, |_, cb, code| {
        if let Some(p) = perms[cb] {
            if let Err(e) = codes.set(pos, p.new_index(code)) {
                err.get_or_insert(e);
            }
        }
        pos += 1;
    });
    if let Some(e) = err {
        return Err(e.into());
    }
    Ok(q.with_parts(codes, codebooks))
}

/// Per-tile access frequencies of one codebook: row `t` holds tile `t`'s
/// counts over all entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HotnessMap {
    pub tile_rows: usize,
    pub tile_cols: usize,
    pub codebook: usize,
    pub counts: Vec<Vec<u64>>,
}

impl HotnessMap {
    pub fn tiles(&self) -> usize {
        self.counts.len()
    }

    /// Spearman rank correlation of every tile against the whole-tensor
    /// profile, in tile order.
    pub fn rank_correlations(&self) -> Vec<f64> {
        let mut total = vec![0u64; self.counts.first().map_or(0, Vec::len)];
        for row in &self.counts {
            for (t, c) in total.iter_mut().zip(row) {
                *t += c;
            }
        }
        self.counts
            .iter()
            .map(|row| spearman(row, &total))
            .collect()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), ProfileError> {
        let mut out = csv::Writer::from_writer(w);
        let entries = self.counts.first().map_or(0, Vec::len);
        let mut header = vec!["tile".to_string()];
        header.extend((0..entries).map(|e| format!("e{e}")));
        out.write_record(&header)?;
        for (t, row) in self.counts.iter().enumerate() {
            let mut rec = vec![t.to_string()];
            rec.extend(row.iter().map(u64::to_string));
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Tile-by-entry frequency matrix for one codebook.
pub fn tile_hotness_map(
    q: &QuantizedTensor,
    codebook: usize,
    tile_rows: usize,
    tile_cols: usize,
) -> Result<HotnessMap, ProfileError> {
    if codebook >= q.codebooks().len() {
        return Err(ProfileError::NoSuchCodebook(codebook));
    }
    check_tiles(q, tile_rows, tile_cols)?;
    let ntiles = (q.rows() / tile_rows) * (q.cols() / tile_cols);
    let mut counts = vec![vec![0u64; q.config().entries()]; ntiles];
    for_each_code(q, Some((tile_rows, tile_cols)), |t, cb, code| {
        if cb == codebook {
            counts[t][code as usize] += 1;
        }
    });
    Ok(HotnessMap {
        tile_rows,
        tile_cols,
        codebook,
        counts,
    })
}

/// Average ranks (1-based), ties sharing their mean rank.
fn ranks(values: &[u64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by_key(|&i| values[i]);
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation; 0 when either side is constant.
pub fn spearman(a: &[u64], b: &[u64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let (ra, rb) = (ranks(a), ranks(b));
    let n = ra.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - ma) * (y - mb);
        va += (x - ma).powi(2);
        vb += (y - mb).powi(2);
    }
    if va == 0.0 || vb == 0.0 {
        0.0
    } else {
        cov / (va * vb).sqrt()
    }
}

/// Writes histograms as `tile,codebook,entry,count` rows.
pub fn write_histograms_csv<W: Write>(hists: &[TileHistogram], w: W) -> Result<(), ProfileError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["tile", "codebook", "entry", "count"])?;
    for th in hists {
        for (e, c) in th.histogram.counts().iter().enumerate() {
            out.write_record(&[
                th.tile.to_string(),
                th.codebook.to_string(),
                e.to_string(),
                c.to_string(),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Summary row for reports: hot-set size and statistics per histogram.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramSummary {
    pub tile: usize,
    pub codebook: usize,
    pub total: u64,
    pub mean: f64,
    pub stddev: f64,
    pub hot_set: Vec<usize>,
}

pub fn summarize(hists: &[TileHistogram]) -> Vec<HistogramSummary> {
    hists
        .iter()
        .map(|th| HistogramSummary {
            tile: th.tile,
            codebook: th.codebook,
            total: th.histogram.total(),
            mean: th.histogram.mean(),
            stddev: th.histogram.stddev(),
            hot_set: th.histogram.hot_set(),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{dequantize, Codebook, PackedCodes, Sharing, VQConfig};

    fn tensor_with_codes(codes: &[u32], rows: usize, cols: usize, log2: u32) -> QuantizedTensor {
        let config = VQConfig::new(2, log2, 1, Sharing::WholeTensor).unwrap();
        let n = 1usize << log2;
        let cb = Codebook::new((0..2 * n).map(|i| i as f32 * 0.5).collect(), 2, 0, 0).unwrap();
        QuantizedTensor::from_parts(
            PackedCodes::from_codes(codes, log2).unwrap(),
            vec![rows, cols],
            config,
            vec![cb],
        )
        .unwrap()
    }

    #[test]
    fn counts_codes() {
        let h = AccessHistogram::from_codes(2, [0, 0, 1]);
        assert_eq!(h.counts(), &[2, 1]);
        assert_eq!(h.total(), 3);
    }

    #[test]
    fn uniform_codes_have_no_hot_set() {
        let codes: Vec<u32> = (0..64).map(|i| i % 16).collect();
        let q = tensor_with_codes(&codes, 8, 16, 4);
        let h = profile_codebook(&q, 0).unwrap();
        assert!(h.counts().iter().all(|&c| c == 4));
        assert_eq!(h.stddev(), 0.0);
        assert!(h.hot_set().is_empty());
    }

    #[test]
    fn spike_is_hot() {
        let mut counts = vec![1u64; 100];
        counts[7] = 500;
        let h = AccessHistogram::from_counts(counts);
        assert_eq!(h.hot_set(), vec![7]);
    }

    #[test]
    fn swap_two_entries() {
        let q = tensor_with_codes(&[1, 1, 0, 1, 1, 1], 3, 4, 1);
        let h = AccessHistogram::from_counts(vec![1, 5]);
        let (r, perm) = reorder_by_frequency(&q, 0, &h).unwrap();
        assert_eq!(perm.forward(), &[1, 0]);
        assert_eq!(r.codes().to_vec(), vec![0, 0, 1, 0, 0, 0]);
        assert_eq!(dequantize(&r).unwrap(), dequantize(&q).unwrap());
    }

    #[test]
    fn sorted_counts_give_identity() {
        let h = AccessHistogram::from_counts(vec![9, 5, 5, 1, 0]);
        assert!(EntryPermutation::by_frequency(&h).is_identity());
    }

    #[test]
    fn ties_keep_original_order() {
        let h = AccessHistogram::from_counts(vec![1, 3, 1, 3]);
        let p = EntryPermutation::by_frequency(&h);
        assert_eq!(p.inverse(), &[1, 3, 0, 2]);
        assert!(p.apply(&h).is_sorted_descending());
    }

    #[test]
    fn size_mismatch_rejected() {
        let q = tensor_with_codes(&[0, 1], 1, 4, 1);
        let h = AccessHistogram::from_counts(vec![1, 2, 3]);
        assert!(matches!(
            reorder_by_frequency(&q, 0, &h),
            Err(ProfileError::SizeMismatch { .. })
        ));
    }

    #[test]
    fn single_tile_equals_tensor_profile() {
        let codes: Vec<u32> = (0..32).map(|i| (i * i) % 8).collect();
        let q = tensor_with_codes(&codes, 4, 16, 3);
        let map = tile_hotness_map(&q, 0, 4, 16).unwrap();
        assert_eq!(map.tiles(), 1);
        assert_eq!(map.counts[0], profile_codebook(&q, 0).unwrap().counts());
        let tiles = profile_accesses(&q, Granularity::BlockTile { rows: 4, cols: 16 }).unwrap();
        assert_eq!(tiles.len(), 1);
    }

    #[test]
    fn identical_tiles_give_identical_rows() {
        let half: Vec<u32> = (0..16).map(|i| (i * 5) % 8).collect();
        let codes: Vec<u32> = half.iter().chain(&half).copied().collect();
        let q = tensor_with_codes(&codes, 4, 16, 3);
        let map = tile_hotness_map(&q, 0, 2, 16).unwrap();
        assert_eq!(map.counts[0], map.counts[1]);
        assert!(tile_hotness_map(&q, 0, 3, 16).is_err());
        assert!(tile_hotness_map(&q, 0, 2, 3).is_err());
    }

    #[test]
    fn merge_is_addition() {
        let mut a = AccessHistogram::from_counts(vec![1, 2]);
        a.merge(&AccessHistogram::from_counts(vec![3, 0]));
        assert_eq!(a.counts(), &[4, 2]);
    }

    #[test]
    fn spearman_basics() {
        assert!((spearman(&[1, 2, 3], &[10, 20, 30]) - 1.0).abs() < 1e-12);
        assert!((spearman(&[1, 2, 3], &[3, 2, 1]) + 1.0).abs() < 1e-12);
        assert_eq!(spearman(&[1, 1, 1], &[1, 2, 3]), 0.0);
    }

    #[test]
    fn csv_export() {
        let q = tensor_with_codes(&[0, 1, 1, 1], 2, 4, 1);
        let hists = profile_accesses(&q, Granularity::Tensor).unwrap();
        let mut buf = Vec::new();
        write_histograms_csv(&hists, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "tile,codebook,entry,count\n0,0,0,1\n0,0,1,3\n");
    }
}
