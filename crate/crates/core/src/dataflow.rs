//! Codebook-centric dataflow planning.
//!
//! A codebook-switch axis is a tensor dimension along which the active
//! codebook changes. When a switch axis is also a reduce axis, the naive
//! tiling (blocks own a slice of a parallel axis and walk the whole reduce
//! range) makes every block load every codebook. The codebook-centric plan
//! instead hands each block a contiguous range of codebook "units" and a
//! proportionally larger slice of a parallel axis along which codebooks do
//! not change, and sums the partial results in a global reduction. The
//! split factor trades duplicated codebook loads against that reduction.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cache::GpuModel;
use crate::codec::{Sharing, VQConfig};

#[derive(Debug, Error)]
pub enum DataflowError {
    #[error("unknown op '{0}' (expected gemm, gemv or attn-decode)")]
    UnknownOp(String),
    #[error("invalid op shape: {0}")]
    Shape(String),
    #[error("split factor {factor} does not divide the splittable extent {extent}")]
    SplitFactor { factor: usize, extent: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    Gemm,
    Gemv,
    AttentionDecode,
}

impl OpKind {
    pub const ALL: [OpKind; 3] = [OpKind::Gemm, OpKind::Gemv, OpKind::AttentionDecode];

    /// Contiguous elements one thread must hold for the compute primitive:
    /// 2 for mma fragments, 1 for element-wise accumulation.
    pub fn required_layout(self) -> usize {
        match self {
            OpKind::Gemm => 2,
            OpKind::Gemv | OpKind::AttentionDecode => 1,
        }
    }

    pub fn cli_name(self) -> &'static str {
        match self {
            OpKind::Gemm => "gemm",
            OpKind::Gemv => "gemv",
            OpKind::AttentionDecode => "attn-decode",
        }
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.cli_name())
    }
}

impl FromStr for OpKind {
    type Err = DataflowError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "gemm" => Ok(OpKind::Gemm),
            "gemv" => Ok(OpKind::Gemv),
            "attn-decode" | "attention-decode" | "attention" | "attn" => {
                Ok(OpKind::AttentionDecode)
            }
            _ => Err(DataflowError::UnknownOp(s.to_string())),
        }
    }
}

/// Named tensor dimensions. `S` is the activation-row axis of GeMM (1 for
/// GeMV); weights are stored `[N, M]` with `M` reduced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Axis {
    M,
    N,
    R,
    S,
    B,
    H,
    T,
    C,
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

/// Which quantized operand a kernel phase reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Weight,
    KCache,
    VCache,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ComputeOp {
    /// `out[s, n] = sum_m x[s, m] * w[n, m]`.
    Gemm { s: usize, n: usize, m: usize },
    /// `out[n] = sum_m w[n, m] * x[m]`.
    Gemv { n: usize, m: usize },
    /// One decode step: `q [B, H, C]` against K/V caches `[B, T, H*C]`.
    AttentionDecode {
        b: usize,
        h: usize,
        t: usize,
        c: usize,
    },
}

impl ComputeOp {
    pub fn gemm(s: usize, n: usize, m: usize) -> Self {
        ComputeOp::Gemm { s, n, m }
    }

    pub fn gemv(n: usize, m: usize) -> Self {
        ComputeOp::Gemv { n, m }
    }

    pub fn attention(b: usize, h: usize, t: usize, c: usize) -> Self {
        ComputeOp::AttentionDecode { b, h, t, c }
    }

    pub fn kind(&self) -> OpKind {
        match self {
            ComputeOp::Gemm { .. } => OpKind::Gemm,
            ComputeOp::Gemv { .. } => OpKind::Gemv,
            ComputeOp::AttentionDecode { .. } => OpKind::AttentionDecode,
        }
    }

    pub fn required_layout(&self) -> usize {
        self.kind().required_layout()
    }

    pub fn validate(&self) -> Result<(), DataflowError> {
        let dims: Vec<usize> = match *self {
            ComputeOp::Gemm { s, n, m } => vec![s, n, m],
            ComputeOp::Gemv { n, m } => vec![n, m],
            ComputeOp::AttentionDecode { b, h, t, c } => vec![b, h, t, c],
        };
        if dims.contains(&0) {
            return Err(DataflowError::Shape(format!("{self:?} has an empty axis")));
        }
        Ok(())
    }

    /// Activation rows: `S` for GeMM, 1 otherwise.
    pub fn s(&self) -> usize {
        match *self {
            ComputeOp::Gemm { s, .. } => s,
            _ => 1,
        }
    }

    pub fn phases(&self) -> &'static [Phase] {
        match self {
            ComputeOp::AttentionDecode { .. } => &[Phase::KCache, Phase::VCache],
            _ => &[Phase::Weight],
        }
    }

    /// Shape of the quantized operand(s): `[N, M]` or `[B, T, H*C]`.
    pub fn quantized_shape(&self) -> Vec<usize> {
        match *self {
            ComputeOp::Gemm { n, m, .. } | ComputeOp::Gemv { n, m } => vec![n, m],
            ComputeOp::AttentionDecode { b, h, t, c } => vec![b, t, h * c],
        }
    }

    /// All axes with extents; `R` is listed for weights always and for
    /// attention when there is more than one residual level.
    pub fn axes(&self, residuals: usize) -> Vec<(Axis, usize)> {
        match *self {
            ComputeOp::Gemm { s, n, m } => {
                vec![
                    (Axis::M, m),
                    (Axis::N, n),
                    (Axis::R, residuals),
                    (Axis::S, s),
                ]
            }
            ComputeOp::Gemv { n, m } => vec![(Axis::M, m), (Axis::N, n), (Axis::R, residuals)],
            ComputeOp::AttentionDecode { b, h, t, c } => {
                let mut v = vec![(Axis::B, b), (Axis::H, h), (Axis::T, t), (Axis::C, c)];
                if residuals > 1 {
                    v.push((Axis::R, residuals));
                }
                v
            }
        }
    }

    /// Reduce axes of one phase. Residual levels are summed, so `R` reduces
    /// wherever it exists.
    pub fn reduce_axes(&self, phase: Phase, residuals: usize) -> Vec<Axis> {
        let mut v = match phase {
            Phase::Weight => vec![Axis::M, Axis::R],
            Phase::KCache => vec![Axis::C],
            Phase::VCache => vec![Axis::T],
        };
        if phase != Phase::Weight && residuals > 1 {
            v.push(Axis::R);
        }
        v.sort();
        v
    }
}

/// Axes along which the codebook changes for `op` under `config`.
///
/// Derived from the sharing granularity: per-tile sharing switches along both
/// matrix axes, channel groups along the column axes (for KV caches `H`, and
/// `C` too when a group is narrower than a head), and several residual levels
/// switch along `R`.
pub fn switch_axes_of(config: &VQConfig, op: &ComputeOp) -> Vec<Axis> {
    let mut axes = Vec::new();
    let attention = matches!(op, ComputeOp::AttentionDecode { .. });
    let head = match *op {
        ComputeOp::AttentionDecode { c, .. } => c,
        _ => 0,
    };
    let col_axes = |width: usize, axes: &mut Vec<Axis>| {
        if attention {
            axes.push(Axis::H);
            if width < head {
                axes.push(Axis::C);
            }
        } else {
            axes.push(Axis::M);
        }
    };
    match config.sharing {
        Sharing::WholeTensor => {}
        Sharing::PerTile { cols, .. } => {
            if attention {
                axes.extend([Axis::B, Axis::T]);
            } else {
                axes.push(Axis::N);
            }
            col_axes(cols, &mut axes);
        }
        Sharing::ChannelGroup { group_width } => col_axes(group_width, &mut axes),
    }
    if config.residuals > 1 {
        axes.push(Axis::R);
    }
    axes.sort();
    axes.dedup();
    axes
}

/// Divisors of `n` in ascending order.
pub fn divisors(n: usize) -> Vec<usize> {
    let mut small = Vec::new();
    let mut large = Vec::new();
    let mut d = 1;
    while d * d <= n {
        if n.is_multiple_of(d) {
            small.push(d);
            if d * d != n {
                large.push(n / d);
            }
        }
        d += 1;
    }
    small.extend(large.into_iter().rev());
    small
}

/// Exact comparison of `f*out + cb/f` between two factors.
fn cheaper(a: usize, b: usize, out: u64, cb: u64) -> std::cmp::Ordering {
    // Multiply both sides by a*b to stay in integers.
    let (a, b, out, cb) = (a as u128, b as u128, out as u128, cb as u128);
    (a * a * out * b + cb * b).cmp(&(b * b * out * a + cb * a))
}

/// Like [`solve_split_factor`] over a precomputed ascending divisor list.
pub fn solve_split_factor_with(
    output_size: u64,
    codebook_traffic: u64,
    divisors: &[usize],
) -> usize {
    debug_assert!(!divisors.is_empty() && divisors[0] == 1);
    if codebook_traffic == 0 {
        return 1;
    }
    // First divisor at or above the continuous optimum sqrt(cb/out):
    // f*f*out >= cb.
    let above = divisors.partition_point(|&f| {
        (f as u128 * f as u128 * output_size as u128) < codebook_traffic as u128
    });
    let mut best = None;
    for i in [above.checked_sub(1), Some(above)].into_iter().flatten() {
        if let Some(&f) = divisors.get(i) {
            best = match best {
                None => Some(f),
                Some(b) if cheaper(f, b, output_size, codebook_traffic).is_lt() => Some(f),
                keep => keep,
            };
        }
    }
    best.unwrap_or(1)
}

/// Divisor `f` of `extent` minimising `f * output_size + codebook_traffic / f`
/// (ties to the smaller factor).
pub fn solve_split_factor(output_size: u64, codebook_traffic: u64, extent: usize) -> usize {
    solve_split_factor_with(output_size, codebook_traffic, &divisors(extent.max(1)))
}

/// Column segments of the quantized matrix that a block of `op` reduces
/// over, split at codebook region boundaries: `[0, M)` for weights, the
/// head's channels for attention (offsets relative to the head).
pub fn column_segments(config: &VQConfig, op: &ComputeOp) -> Vec<Range<usize>> {
    let (start, width) = match *op {
        ComputeOp::Gemm { m, .. } | ComputeOp::Gemv { m, .. } => (0, m),
        // Every head starts at a multiple of c; segments are the same for
        // all heads whenever c is a multiple of the region width, and for
        // whole-head regions the head is one segment.
        ComputeOp::AttentionDecode { c, .. } => (0, c),
    };
    let region = match config.sharing {
        Sharing::WholeTensor => usize::MAX,
        Sharing::PerTile { cols, .. } => cols,
        Sharing::ChannelGroup { group_width } => group_width,
    };
    let mut segs = Vec::new();
    let mut lo = start;
    while lo < start + width {
        let hi = if region == usize::MAX {
            start + width
        } else {
            ((lo / region + 1) * region).min(start + width)
        };
        segs.push(lo - start..hi - start);
        lo = hi;
    }
    segs
}

/// How a kernel is tiled into thread blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataflowPlan {
    pub op: ComputeOp,
    /// Codebook-centric (true) or the naive reduce-axis tiling.
    pub centric: bool,
    pub switch_axes: Vec<Axis>,
    /// Reduce axes of the primary phase (weights or K cache).
    pub reduce_axes: Vec<Axis>,
    pub global_reduce_axes: Vec<Axis>,
    pub split_factor: usize,
    /// Extent the split factor must divide.
    pub split_extent: usize,
    /// Codebook units (residual level x column segment) per block row.
    pub units: usize,
    pub column_segments: Vec<Range<usize>>,
    /// Parallel axis whose chunk grows with the split factor.
    pub reuse_axis: Option<Axis>,
    /// Rows (weights: N; attention: T) per block.
    pub row_chunk: usize,
    /// Activation rows per block (GeMM only, otherwise 1).
    pub s_chunk: usize,
    /// Baseline block loads divided by aligned block loads along a
    /// switching parallel axis (codebook tiles straddled by task tiles).
    pub alignment_gain: usize,
    pub output_bytes_per_block: u64,
    pub codebook_bytes_per_block: u64,
    /// Chunk size per axis, for inspection.
    pub tiling: BTreeMap<String, usize>,
}

/// One thread block's share of the work.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockTask {
    pub batch: usize,
    pub head: usize,
    /// Rows of the quantized operand within the batch (N or T).
    pub rows: Range<usize>,
    /// Activation rows (GeMM).
    pub s: Range<usize>,
    /// Unit indices `level * segments + segment`.
    pub units: Range<usize>,
}

const WEIGHT_ROW_CHUNK: usize = 128;
const GEMM_S_CHUNK: usize = 128;

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

impl DataflowPlan {
    /// Naive tiling: blocks own a parallel slice and walk every unit.
    pub fn naive(
        config: &VQConfig,
        op: &ComputeOp,
        model: &GpuModel,
    ) -> Result<Self, DataflowError> {
        Self::build(config, op, model, false, None)
    }

    /// Codebook-centric tiling with the solved split factor.
    pub fn centric(
        config: &VQConfig,
        op: &ComputeOp,
        model: &GpuModel,
    ) -> Result<Self, DataflowError> {
        Self::build(config, op, model, true, None)
    }

    /// Codebook-centric tiling with a caller-chosen split factor.
    pub fn centric_with_factor(
        config: &VQConfig,
        op: &ComputeOp,
        model: &GpuModel,
        factor: usize,
    ) -> Result<Self, DataflowError> {
        Self::build(config, op, model, true, Some(factor))
    }

    fn build(
        config: &VQConfig,
        op: &ComputeOp,
        model: &GpuModel,
        centric: bool,
        factor: Option<usize>,
    ) -> Result<Self, DataflowError> {
        op.validate()?;
        let switch_axes = switch_axes_of(config, op);
        let primary = op.phases()[0];
        let reduce_axes = op.reduce_axes(primary, config.residuals);
        let segments = column_segments(config, op);
        let units = config.residuals * segments.len();

        let (row_extent, base_row) = match *op {
            ComputeOp::Gemm { n, .. } | ComputeOp::Gemv { n, .. } => (n, WEIGHT_ROW_CHUNK.min(n)),
            ComputeOp::AttentionDecode { t, .. } => (t, model.warp_size.min(t)),
        };
        let s_extent = op.s();
        let base_s = GEMM_S_CHUNK.min(s_extent);
        let row_axis = match op {
            ComputeOp::AttentionDecode { .. } => Axis::T,
            _ => Axis::N,
        };
        let rows_switch = switch_axes.contains(&row_axis);

        // Align task rows with codebook tiles along a switching row axis.
        let mut row_chunk = base_row;
        let mut alignment_gain = 1;
        if centric && rows_switch && !matches!(op, ComputeOp::AttentionDecode { .. }) {
            if let Sharing::PerTile { rows, .. } = config.sharing {
                if rows > base_row && rows % base_row == 0 && rows <= row_extent {
                    alignment_gain = rows / base_row;
                    row_chunk = rows;
                }
            }
        }

        let global_reduce_axes: Vec<Axis> = if centric {
            reduce_axes
                .iter()
                .copied()
                .filter(|a| switch_axes.contains(a))
                .collect()
        } else {
            Vec::new()
        };

        let reuse_axis = if !centric || global_reduce_axes.is_empty() {
            None
        } else if !rows_switch {
            Some(row_axis)
        } else if s_extent > base_s {
            Some(Axis::S)
        } else {
            None
        };
        let n_par = match reuse_axis {
            Some(Axis::S) => s_extent / base_s,
            Some(_) => row_extent / row_chunk,
            None => 1,
        };
        let split_extent = gcd(units, n_par.max(1)).max(1);

        let output_bytes_per_block = (row_chunk * base_s * 2) as u64;
        let codebook_bytes_per_block = (units * config.codebook_bytes()) as u64;
        let split_factor = match factor {
            Some(f) => {
                if f == 0 || !split_extent.is_multiple_of(f) {
                    return Err(DataflowError::SplitFactor {
                        factor: f,
                        extent: split_extent,
                    });
                }
                f
            }
            None if reuse_axis.is_some() => solve_split_factor(
                output_bytes_per_block,
                codebook_bytes_per_block,
                split_extent,
            ),
            None => 1,
        };
        let (row_chunk, s_chunk) = match reuse_axis {
            Some(Axis::S) => (row_chunk, base_s * split_factor),
            Some(_) => (row_chunk * split_factor, base_s),
            None => (row_chunk, base_s),
        };

        let mut tiling = BTreeMap::new();
        tiling.insert(row_axis.to_string(), row_chunk);
        if matches!(op, ComputeOp::Gemm { .. }) {
            tiling.insert(Axis::S.to_string(), s_chunk);
        }
        tiling.insert("units".into(), units / split_factor);
        if let ComputeOp::AttentionDecode { .. } = op {
            tiling.insert(Axis::B.to_string(), 1);
            tiling.insert(Axis::H.to_string(), 1);
        }

        Ok(Self {
            op: *op,
            centric,
            switch_axes,
            reduce_axes,
            global_reduce_axes,
            split_factor,
            split_extent,
            units,
            column_segments: segments,
            reuse_axis,
            row_chunk,
            s_chunk,
            alignment_gain,
            output_bytes_per_block,
            codebook_bytes_per_block,
            tiling,
        })
    }

    pub fn global_reduce(&self) -> bool {
        !self.global_reduce_axes.is_empty()
    }

    /// Units per block.
    pub fn units_per_block(&self) -> usize {
        self.units / self.split_factor
    }

    /// Every block of the kernel, in a fixed order.
    pub fn blocks(&self) -> Vec<BlockTask> {
        let (batches, heads, rows) = match self.op {
            ComputeOp::Gemm { n, .. } | ComputeOp::Gemv { n, .. } => (1, 1, n),
            ComputeOp::AttentionDecode { b, h, t, .. } => (b, h, t),
        };
        let s = self.op.s();
        let per = self.units_per_block();
        let mut out = Vec::new();
        for batch in 0..batches {
            for head in 0..heads {
                for r0 in (0..rows).step_by(self.row_chunk) {
                    for s0 in (0..s).step_by(self.s_chunk) {
                        for u0 in (0..self.units).step_by(per) {
                            out.push(BlockTask {
                                batch,
                                head,
                                rows: r0..(r0 + self.row_chunk).min(rows),
                                s: s0..(s0 + self.s_chunk).min(s),
                                units: u0..u0 + per,
                            });
                        }
                    }
                }
            }
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plans serialize")
    }
}

/// Codebook-centric plan for `op` (the solved split factor attached).
pub fn build_dataflow(
    config: &VQConfig,
    op: &ComputeOp,
    model: &GpuModel,
) -> Result<DataflowPlan, DataflowError> {
    DataflowPlan::centric(config, op, model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets::load_preset;

    fn rtx() -> GpuModel {
        GpuModel::load_from("rtx4090", None).unwrap()
    }

    fn cfg(name: &str) -> VQConfig {
        load_preset(name).unwrap().config
    }

    #[test]
    fn table_of_switch_axes() {
        let attn = ComputeOp::attention(1, 32, 1024, 128);
        assert_eq!(switch_axes_of(&cfg("cq2"), &attn), vec![Axis::H, Axis::C]);
        assert_eq!(switch_axes_of(&cfg("cq4"), &attn), vec![Axis::H, Axis::C]);
        let gemv = ComputeOp::gemv(4096, 4096);
        assert_eq!(switch_axes_of(&cfg("quip4"), &gemv), vec![Axis::R]);
        assert_eq!(switch_axes_of(&cfg("aqlm3"), &gemv), vec![Axis::R]);
        assert_eq!(
            switch_axes_of(&cfg("gptvq2"), &gemv),
            vec![Axis::M, Axis::N]
        );
        let whole = VQConfig::new(4, 8, 1, Sharing::WholeTensor).unwrap();
        assert!(switch_axes_of(&whole, &gemv).is_empty());
    }

    #[test]
    fn cq2_k_cache_reduce_intersects_switch() {
        let op = ComputeOp::attention(1, 2, 64, 128);
        let plan = build_dataflow(&cfg("cq2"), &op, &rtx()).unwrap();
        assert_eq!(plan.reduce_axes, vec![Axis::C]);
        assert_eq!(plan.global_reduce_axes, vec![Axis::C]);
        assert_eq!(op.reduce_axes(Phase::VCache, 1), vec![Axis::T]);
    }

    #[test]
    fn split_factor_examples() {
        assert_eq!(solve_split_factor(64 << 10, 1 << 10, 32), 1);
        assert_eq!(solve_split_factor(1 << 10, 64 << 10, 32), 8);
        assert_eq!(solve_split_factor(4096, 4096, 64), 1);
        assert_eq!(solve_split_factor(1, 1 << 20, 1), 1);
        assert_eq!(solve_split_factor(0, 100, 12), 12);
        assert_eq!(solve_split_factor(100, 0, 12), 1);
    }

    #[test]
    fn split_factor_matches_enumeration() {
        for extent in 1..=200 {
            let divs = divisors(extent);
            for (out, cb) in [
                (1u64, 1u64),
                (3, 1000),
                (1000, 3),
                (7, 7 * 49),
                (256, 65536),
                (2, 5),
            ] {
                let best = divs
                    .iter()
                    .copied()
                    .min_by(|&a, &b| cheaper(a, b, out, cb).then(a.cmp(&b)))
                    .unwrap();
                assert_eq!(
                    solve_split_factor(out, cb, extent),
                    best,
                    "{extent} {out} {cb}"
                );
            }
        }
    }

    #[test]
    fn divisor_lists() {
        assert_eq!(divisors(1), vec![1]);
        assert_eq!(divisors(12), vec![1, 2, 3, 4, 6, 12]);
        assert_eq!(divisors(49), vec![1, 7, 49]);
    }

    #[test]
    fn cq2_attention_has_32_groups_per_head() {
        let op = ComputeOp::attention(8, 2, 4096, 128);
        let plan = build_dataflow(&cfg("cq2"), &op, &rtx()).unwrap();
        assert_eq!(plan.units, 32);
        assert_eq!(plan.reuse_axis, Some(Axis::T));
        assert_eq!(plan.split_extent, 32);
        assert_eq!(plan.row_chunk, 32 * plan.split_factor);
        assert_eq!(plan.blocks().len(), 8 * 2 * (4096 / 32));
    }

    #[test]
    fn whole_tensor_degenerates_to_baseline() {
        let whole = VQConfig::new(4, 8, 1, Sharing::WholeTensor).unwrap();
        let op = ComputeOp::gemv(1024, 1024);
        let plan = build_dataflow(&whole, &op, &rtx()).unwrap();
        let naive = DataflowPlan::naive(&whole, &op, &rtx()).unwrap();
        assert!(!plan.global_reduce());
        assert_eq!(plan.split_factor, 1);
        assert_eq!(plan.blocks(), naive.blocks());
    }

    #[test]
    fn gptvq_tiles_align_with_codebook_tiles() {
        let op = ComputeOp::gemm(256, 256, 256);
        let naive = DataflowPlan::naive(&cfg("gptvq2"), &op, &rtx()).unwrap();
        let plan = build_dataflow(&cfg("gptvq2"), &op, &rtx()).unwrap();
        assert_eq!(naive.row_chunk, 128);
        assert_eq!(plan.alignment_gain, 2);
        assert_eq!(plan.row_chunk % 256, 0);
    }

    #[test]
    fn aqlm_gemv_splits_residual_levels() {
        let op = ComputeOp::gemv(4096, 4096);
        let plan = build_dataflow(&cfg("aqlm3"), &op, &rtx()).unwrap();
        assert_eq!(plan.units, 2);
        assert_eq!(plan.split_factor, 2);
        assert_eq!(plan.units_per_block(), 1);
        assert_eq!(plan.global_reduce_axes, vec![Axis::R]);
    }

    #[test]
    fn overridden_factor_must_divide() {
        let op = ComputeOp::attention(1, 1, 64, 128);
        assert!(DataflowPlan::centric_with_factor(&cfg("cq2"), &op, &rtx(), 3).is_err());
        let p = DataflowPlan::centric_with_factor(&cfg("cq2"), &op, &rtx(), 2).unwrap();
        assert_eq!(p.units_per_block(), 16);
    }

    #[test]
    fn column_segments_follow_regions() {
        let segs = column_segments(&cfg("gptvq2"), &ComputeOp::gemv(512, 600));
        assert_eq!(segs, vec![0..256, 256..512, 512..600]);
        let segs = column_segments(&cfg("quip4"), &ComputeOp::gemv(512, 600));
        assert_eq!(segs, vec![0..600]);
    }

    #[test]
    fn plan_json_has_axes_and_factor() {
        let op = ComputeOp::attention(1, 2, 64, 128);
        let json = build_dataflow(&cfg("cq2"), &op, &rtx()).unwrap().to_json();
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v["switch_axes"], serde_json::json!(["H", "C"]));
        assert!(v["split_factor"].as_u64().unwrap() >= 1);
        assert!(v["tiling"]["T"].as_u64().is_some());
    }
}
