use std::collections::BTreeSet;
use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::bank::BankModel;
use super::{reference_compute, SimError, SimReport};
use crate::cache::{
    cache_load, compute_slack, plan_cache, CacheCounters, CachePlan, CachedCodebook, GpuModel,
    KernelUsage, Level, Slack,
};
use crate::codec::{dequantize, Codebook, QuantizedTensor, RegionGrid, VQConfig};
use crate::dataflow::{BlockTask, ComputeOp, DataflowPlan, OpKind, Phase};
use crate::fusion::{
    stage_through, staging_cost, FusionLevel, FusionPlan, LayoutPair, StagingCost, WarpTile,
    DEFAULT_SHUFFLE_THRESHOLD, WARP,
};
use crate::profile::reorder_all;
use crate::Tensor;

/// Quantized operands of one kernel launch plus its dense activation.
#[derive(Debug, Clone)]
pub struct Workload {
    pub op: ComputeOp,
    /// The weight, or the K and V caches.
    pub operands: Vec<QuantizedTensor>,
    /// `x` (`[S, M]` or `[M]`) or the decode queries (`[B, H, C]`).
    pub activation: Tensor,
    /// Entries actually addressed by the codes, when only a prefix is.
    pub working_set: Option<usize>,
}

impl Workload {
    pub fn new(
        op: ComputeOp,
        operands: Vec<QuantizedTensor>,
        activation: Tensor,
    ) -> Result<Self, SimError> {
        op.validate()?;
        if operands.len() != op.phases().len() {
            return Err(SimError::Shape(format!(
                "{:?} takes {} quantized operands, got {}",
                op.kind(),
                op.phases().len(),
                operands.len()
            )));
        }
        let (rows, cols, act) = match op {
            ComputeOp::Gemm { s, n, m } => (n, m, s * m),
            ComputeOp::Gemv { n, m } => (n, m, m),
            ComputeOp::AttentionDecode { b, h, t, c } => (b * t, h * c, b * h * c),
        };
        for q in &operands {
            if q.rows() != rows || q.cols() != cols {
                return Err(SimError::Shape(format!(
                    "quantized operand is {}x{}, {op:?} needs {rows}x{cols}",
                    q.rows(),
                    q.cols()
                )));
            }
            if q.config() != operands[0].config() {
                return Err(SimError::Shape(
                    "K and V caches must share one VQ config".into(),
                ));
            }
            q.validate_codes()?;
        }
        if activation.len() != act {
            return Err(SimError::Shape(format!(
                "activation has {} elements, {op:?} needs {act}",
                activation.len()
            )));
        }
        Ok(Self {
            op,
            operands,
            activation,
            working_set: None,
        })
    }

    pub fn config(&self) -> &VQConfig {
        self.operands[0].config()
    }

    pub fn dense_operands(&self) -> Result<Vec<Tensor>, SimError> {
        self.operands
            .iter()
            .map(|q| dequantize(q).map_err(SimError::from))
            .collect()
    }

    /// Dequantize, then run the dense reference.
    pub fn reference(&self) -> Result<Tensor, SimError> {
        reference_compute(&self.op, &self.dense_operands()?, &self.activation)
    }

    /// New-token quantizations a decode step performs (one per token per
    /// cache tensor).
    pub fn quant_invocations(&self) -> u64 {
        match self.op {
            ComputeOp::AttentionDecode { b, t, .. } => (2 * b * t) as u64,
            _ => 0,
        }
    }

    /// The same workload with every codebook reordered by access frequency.
    pub fn reordered(&self) -> Result<Self, SimError> {
        let operands = self
            .operands
            .iter()
            .map(|q| reorder_all(q).map(|(r, _)| r))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            op: self.op,
            operands,
            activation: self.activation.clone(),
            working_set: self.working_set,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CacheMode {
    /// Every entry read from global memory.
    Global,
    /// Every entry (or the working set) copied into shared memory.
    Shared,
    /// Frequency-ordered entries split over registers, shared and global
    /// memory within the occupancy-preserving slack.
    Hierarchical { registers: bool },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FusionMode {
    SharedOnly,
    Adaptive { threshold: usize },
}

/// Three independent switches that make up a kernel variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimConfig {
    pub cache: CacheMode,
    pub centric: bool,
    pub fusion: FusionMode,
}

/// The optimization ladder, from the naive kernel to full fusion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Gc,
    Sc,
    O1,
    O2,
    O3,
    O4,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Gc,
        Variant::Sc,
        Variant::O1,
        Variant::O2,
        Variant::O3,
        Variant::O4,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Variant::Gc => "GC",
            Variant::Sc => "SC",
            Variant::O1 => "O1",
            Variant::O2 => "O2",
            Variant::O3 => "O3",
            Variant::O4 => "O4",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            Variant::Gc => "codebooks in global memory",
            Variant::Sc => "all entries cached in shared memory",
            Variant::O1 => "shared-memory caching of frequent entries",
            Variant::O2 => "+ register caching of the hottest entries",
            Variant::O3 => "+ codebook-centric dataflow",
            Variant::O4 => "+ adaptive register/shared fusion",
        }
    }

    pub fn config(self) -> SimConfig {
        let cache = match self {
            Variant::Gc => CacheMode::Global,
            Variant::Sc => CacheMode::Shared,
            Variant::O1 => CacheMode::Hierarchical { registers: false },
            _ => CacheMode::Hierarchical { registers: true },
        };
        SimConfig {
            cache,
            centric: matches!(self, Variant::O3 | Variant::O4),
            fusion: if self == Variant::O4 {
                FusionMode::Adaptive {
                    threshold: DEFAULT_SHUFFLE_THRESHOLD,
                }
            } else {
                FusionMode::SharedOnly
            },
        }
    }

    pub fn from_config(config: &SimConfig) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.config() == *config)
    }

    pub fn is_baseline(self) -> bool {
        matches!(self, Variant::Gc | Variant::Sc)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|v| v.label().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown variant {s:?} (expected gc, sc, o1, o2, o3 or o4)"))
    }
}

/// Resources of the kernel body before any codebook is cached:
/// a 128x128 mma tile pipeline for GeMM, a streaming GeMV and a
/// flash-decoding step.
pub fn base_usage(kind: OpKind) -> KernelUsage {
    match kind {
        OpKind::Gemm => KernelUsage::new(24 << 10, 96, 256),
        OpKind::Gemv => KernelUsage::new(1 << 10, 32, 128),
        OpKind::AttentionDecode => KernelUsage::new(4 << 10, 24, 128),
    }
}

/// Fusion plans of one phase, one per column-segment width.
#[derive(Debug, Clone)]
pub struct PhaseFusion {
    pub phase: Phase,
    pub layouts: LayoutPair,
    pub plans: Vec<(usize, FusionPlan, StagingCost)>,
}

impl PhaseFusion {
    fn for_width(&self, width: usize) -> (&FusionPlan, StagingCost) {
        let (_, p, c) = self
            .plans
            .iter()
            .find(|(w, _, _)| *w == width)
            .expect("a plan exists for every segment width");
        (p, *c)
    }

    pub fn stages(&self) -> bool {
        self.plans.iter().any(|(_, p, _)| p.stages())
    }
}

/// Everything needed to execute one kernel variant.
#[derive(Debug, Clone)]
pub struct KernelPlans {
    pub config: SimConfig,
    pub dataflow: DataflowPlan,
    pub cache: CachePlan,
    pub fusion: Vec<PhaseFusion>,
    /// Kernel body plus fusion staging.
    pub base_usage: KernelUsage,
    /// With cached codebook entries.
    pub usage: KernelUsage,
    pub occupancy: usize,
    pub slack: Option<Slack>,
}

fn row_bands(grid: &RegionGrid, rows: Range<usize>) -> impl Iterator<Item = Range<usize>> + '_ {
    let tile = grid.tile_rows.max(1);
    let mut start = rows.start;
    std::iter::from_fn(move || {
        if start >= rows.end {
            return None;
        }
        let end = ((start / tile + 1) * tile).min(rows.end);
        let band = start..end;
        start = end;
        Some(band)
    })
}

/// Matrix rows of a block (attention rows are offset by the batch).
fn matrix_rows(op: &ComputeOp, batch: usize, rows: &Range<usize>) -> Range<usize> {
    match *op {
        ComputeOp::AttentionDecode { t, .. } => batch * t + rows.start..batch * t + rows.end,
        _ => rows.clone(),
    }
}

fn max_codebooks_per_block(w: &Workload, df: &DataflowPlan) -> usize {
    let grid = w.operands[0].grid();
    df.blocks()
        .iter()
        .map(|b| row_bands(&grid, matrix_rows(&w.op, b.batch, &b.rows)).count() * b.units.len())
        .max()
        .unwrap_or(0)
}

/// Chooses dataflow, cache boundaries and fusion for `config`.
pub fn plan_kernel(
    w: &Workload,
    config: SimConfig,
    model: &GpuModel,
) -> Result<KernelPlans, SimError> {
    let cfg = *w.config();
    let op = &w.op;
    let dataflow = if config.centric {
        DataflowPlan::centric(&cfg, op, model)?
    } else {
        DataflowPlan::naive(&cfg, op, model)?
    };
    let vs = cfg.vector_size;
    let widths: BTreeSet<usize> = dataflow.column_segments.iter().map(|r| r.len()).collect();
    if let Some(bad) = widths.iter().find(|&&w| w % vs != 0) {
        return Err(SimError::Shape(format!(
            "codebook region of {bad} columns does not hold whole {vs}-element sub-vectors"
        )));
    }

    let mut fusion = Vec::new();
    for &phase in op.phases() {
        let dst = match phase {
            Phase::KCache => vs,
            _ => op.required_layout().min(vs),
        };
        let layouts = LayoutPair::new(vs, dst)?;
        let plans = widths
            .iter()
            .map(|&width| {
                let tile = WarpTile::select(layouts, width);
                let plan = match config.fusion {
                    FusionMode::SharedOnly => FusionPlan::shared_only(tile),
                    FusionMode::Adaptive { threshold } => FusionPlan::adaptive(tile, threshold),
                };
                let cost = if plan.stages() {
                    staging_cost(&tile, &BankModel::new(model.banks, model.bank_width))
                } else {
                    StagingCost::default()
                };
                (width, plan, cost)
            })
            .collect();
        fusion.push(PhaseFusion {
            phase,
            layouts,
            plans,
        });
    }

    let mut base = base_usage(op.kind());
    if fusion.iter().any(PhaseFusion::stages) {
        base.shared_bytes += base.threads_per_block * vs * 2;
    }
    let (entries, entry_bytes) = (cfg.entries(), cfg.entry_bytes());
    let mut usage = base;
    let mut slack = None;
    let cache = match config.cache {
        CacheMode::Global => CachePlan::all_global(entries, entry_bytes),
        CacheMode::Shared => {
            let n = w.working_set.unwrap_or(entries).min(entries);
            let plan = CachePlan::new(0, n, entries, entry_bytes)?;
            let one = plan.shared_bytes();
            let all = one * max_codebooks_per_block(w, &dataflow);
            // Keep all of a block's codebooks resident when they fit,
            // otherwise reuse one buffer.
            let extra = if base.shared_bytes + all <= model.max_shared_per_block {
                all
            } else {
                one
            };
            if base.shared_bytes + extra > model.max_shared_per_block {
                return Err(SimError::Capacity(format!(
                    "a {one} B codebook plus {} B of kernel state exceed the {} B per-block limit of {}",
                    base.shared_bytes, model.max_shared_per_block, model.name
                )));
            }
            usage.shared_bytes += extra;
            plan
        }
        CacheMode::Hierarchical { registers } => {
            let mut s = compute_slack(&base, model)?;
            if !registers {
                s.reg_bytes_per_thread = 0;
            }
            slack = Some(s);
            let plan = plan_cache(&w.operands[0].codebooks()[0], None, &s);
            usage.shared_bytes += plan.shared_bytes();
            usage.regs_per_thread += plan.reg_bytes_per_thread().div_ceil(4);
            plan
        }
    };
    let occupancy = model.occupancy(&usage);
    if occupancy == 0 {
        return Err(SimError::Capacity(format!(
            "{} B shared and {} registers per thread cannot launch on {}",
            usage.shared_bytes, usage.regs_per_thread, model.name
        )));
    }
    Ok(KernelPlans {
        config,
        dataflow,
        cache,
        fusion,
        base_usage: base,
        usage,
        occupancy,
        slack,
    })
}

/// One block's view of the codebook cache: a single handle, loaded on first
/// use and switched whenever a different codebook is needed.
struct BlockCache<'q> {
    handle: Option<CachedCodebook<'q>>,
    key: (usize, usize),
}

impl<'q> BlockCache<'q> {
    fn new() -> Self {
        Self {
            handle: None,
            key: (usize::MAX, usize::MAX),
        }
    }

    fn bind(
        &mut self,
        key: (usize, usize),
        codebook: &'q Codebook,
        exec: &Exec<'_>,
    ) -> Result<&mut CachedCodebook<'q>, SimError> {
        match &mut self.handle {
            None => {
                let mut h = cache_load(codebook, &exec.plans.cache, exec.model, exec.threads)?;
                h.set_shared_base(exec.staging_bytes);
                self.handle = Some(h);
            }
            Some(h) if self.key != key => h.switch(codebook)?,
            Some(_) => {}
        }
        self.key = key;
        Ok(self.handle.as_mut().expect("bound"))
    }

    fn finish(self) -> CacheCounters {
        self.handle
            .map(|mut h| h.take_counters())
            .unwrap_or_default()
    }
}

struct Exec<'p> {
    model: &'p GpuModel,
    plans: &'p KernelPlans,
    bank: BankModel,
    threads: usize,
    staging_bytes: usize,
    counters: CacheCounters,
    report: SimReport,
    regs: Vec<f32>,
    staging: Vec<f32>,
    fused: Vec<f32>,
    starts: Vec<usize>,
}

/// Region of one dequantization pass: a band of rows sharing a codebook and
/// one column segment.
struct Span {
    level: usize,
    rows: Range<usize>,
    cols: Range<usize>,
}

impl<'p> Exec<'p> {
    /// Dequantizes every warp tile of `span`, fuses it into the compute
    /// layout and hands each owned element to `sink(row, col, value)`.
    fn run_span(
        &mut self,
        q: &QuantizedTensor,
        handle: &mut CachedCodebook<'_>,
        span: &Span,
        fusion: (&FusionPlan, StagingCost),
        mut sink: impl FnMut(usize, usize, f32),
    ) -> Result<(), SimError> {
        let (fp, cost) = fusion;
        let tile = &fp.tile;
        let (src, dst) = (tile.src(), tile.dst());
        let entry_bytes = self.plans.cache.entry_bytes;
        let remap = fp.schedule.as_ref().map(|s| s.remap.as_slice());
        let spr = q.subvectors_per_row();
        let nsub = q.subvector_count();
        let codes = q.codes();
        for r0 in span.rows.clone().step_by(tile.rows) {
            for c0 in span.cols.clone().step_by(tile.cols) {
                self.starts.clear();
                for lane in 0..WARP {
                    let (r, k) = tile.subvector_of(remap.map_or(lane, |m| m[lane]));
                    let (row, col) = (r0 + r, c0 + k * src);
                    let regs = &mut self.regs[lane * src..(lane + 1) * src];
                    if row < span.rows.end && col < span.cols.end {
                        let code = codes.get(span.level * nsub + row * spr + col / src) as usize;
                        if handle.record(code) == Level::Shared {
                            self.starts.push(handle.shared_address(code));
                        }
                        regs.copy_from_slice(handle.codebook().entry(code));
                    } else {
                        regs.fill(0.0);
                    }
                }
                self.report.extras.codebook_bank_conflicts +=
                    self.bank.entry_access_conflicts(&self.starts, entry_bytes);

                let values: &[f32] = match fp.level {
                    FusionLevel::Register => {
                        if let Some(s) = fp.schedule.as_ref().filter(|s| !s.is_empty()) {
                            s.apply(&mut self.regs, src, dst);
                            self.report.extras.shuffles += s.len() as u64;
                        }
                        &self.regs
                    }
                    FusionLevel::Shared => {
                        stage_through(
                            tile,
                            &fp.positions,
                            &self.regs,
                            &mut self.staging,
                            &mut self.fused,
                        );
                        self.report.extras.dequant_staging_bytes += cost.staged_bytes;
                        self.report.extras.staging_bank_conflicts += cost.bank_conflicts;
                        &self.fused
                    }
                };
                for (&(r, c), &v) in fp.positions.iter().zip(values) {
                    let (row, col) = (r0 + r, c0 + c);
                    if row < span.rows.end && col < span.cols.end {
                        sink(row, col, v);
                    }
                }
            }
        }
        Ok(())
    }

    fn end_block(&mut self, cache: BlockCache<'_>) {
        self.counters.merge(&cache.finish());
        self.report.extras.blocks += 1;
    }

    fn run_weights(&mut self, w: &Workload) -> Result<Tensor, SimError> {
        let plans = self.plans;
        let df = &plans.dataflow;
        let q = &w.operands[0];
        let grid = q.grid();
        let (s_total, n, m, shape) = match w.op {
            ComputeOp::Gemm { s, n, m } => (s, n, m, vec![s, n]),
            ComputeOp::Gemv { n, m } => (1, n, m, vec![n]),
            ComputeOp::AttentionDecode { .. } => unreachable!("weights only"),
        };
        let x = w.activation.data();
        let segs = &df.column_segments;
        let pf = &plans.fusion[0];
        let mut out = vec![0f32; s_total * n];
        for block in df.blocks() {
            let (r_lo, s_lo) = (block.rows.start, block.s.start);
            let ns = block.s.len();
            let mut partial = vec![0f32; block.rows.len() * ns];
            let mut cache = BlockCache::new();
            for u in block.units.clone() {
                let (level, seg) = (u / segs.len(), segs[u % segs.len()].clone());
                let fusion = pf.for_width(seg.len());
                for band in row_bands(&grid, block.rows.clone()) {
                    let region = grid.region_of(band.start, seg.start);
                    let idx = q.codebook_index(region, level);
                    let handle = cache.bind((0, idx), &q.codebooks()[idx], self)?;
                    let span = Span {
                        level,
                        rows: band,
                        cols: seg.clone(),
                    };
                    self.run_span(q, handle, &span, fusion, |row, col, v| {
                        let p = &mut partial[(row - r_lo) * ns..][..ns];
                        for (si, acc) in p.iter_mut().enumerate() {
                            *acc += x[(s_lo + si) * m + col] * v;
                        }
                    })?;
                }
            }
            for (ri, row) in block.rows.clone().enumerate() {
                for (si, s) in block.s.clone().enumerate() {
                    out[s * n + row] += partial[ri * ns + si];
                }
            }
            if df.global_reduce() {
                self.report.reduce_bytes += (partial.len() * 2) as u64;
            }
            self.end_block(cache);
        }
        Ok(Tensor::new(shape, out)?)
    }

    /// Runs one attention operand (0 = K, 1 = V) over `block`'s units;
    /// `sink` gets (row within the block, channel within the head, value).
    /// Returns the number of head channels the block's units cover.
    fn attention_pass<'a>(
        &mut self,
        w: &'a Workload,
        cache: &mut BlockCache<'a>,
        operand: usize,
        block: &BlockTask,
        mut sink: impl FnMut(usize, usize, f32),
    ) -> Result<usize, SimError> {
        let plans = self.plans;
        let segs = &plans.dataflow.column_segments;
        let pf = &plans.fusion[operand];
        let qt = &w.operands[operand];
        let grid = qt.grid();
        let ComputeOp::AttentionDecode { c, .. } = w.op else {
            unreachable!("attention only")
        };
        let head0 = block.head * c;
        let rows = matrix_rows(&w.op, block.batch, &block.rows);
        let mut covered = BTreeSet::new();
        for u in block.units.clone() {
            let (level, seg) = (u / segs.len(), segs[u % segs.len()].clone());
            covered.insert(seg.start);
            let cols = head0 + seg.start..head0 + seg.end;
            let fusion = pf.for_width(seg.len());
            for band in row_bands(&grid, rows.clone()) {
                let idx = qt.codebook_index(grid.region_of(band.start, cols.start), level);
                let handle = cache.bind((operand, idx), &qt.codebooks()[idx], self)?;
                let span = Span {
                    level,
                    rows: band,
                    cols: cols.clone(),
                };
                self.run_span(qt, handle, &span, fusion, |row, col, v| {
                    sink(row - rows.start, col - head0, v)
                })?;
            }
        }
        Ok(segs
            .iter()
            .filter(|s| covered.contains(&s.start))
            .map(|s| s.len())
            .sum())
    }

    fn run_attention<'a>(&mut self, w: &'a Workload) -> Result<Tensor, SimError> {
        let plans = self.plans;
        let df = &plans.dataflow;
        let ComputeOp::AttentionDecode { b, h, t, c } = w.op else {
            unreachable!("attention only")
        };
        let q = w.activation.data();
        let scale = 1.0 / (c as f32).sqrt();
        let mut out = vec![0f32; b * h * c];

        // Partial logits of `block` (unscaled) over its units.
        let logits_of = |exec: &mut Self,
                         cache: &mut BlockCache<'a>,
                         block: &BlockTask|
         -> Result<Vec<f32>, SimError> {
            let qh = &q[(block.batch * h + block.head) * c..][..c];
            let mut partial = vec![0f32; block.rows.len()];
            exec.attention_pass(w, cache, 0, block, |ri, ch, v| partial[ri] += qh[ch] * v)?;
            Ok(partial)
        };
        // Probability-weighted V rows of `block` over its units, indexed by
        // channel within the head, plus the number of channels covered.
        let values_of = |exec: &mut Self,
                         cache: &mut BlockCache<'a>,
                         block: &BlockTask,
                         weights: &[f32]|
         -> Result<(Vec<f32>, usize), SimError> {
            let mut acc = vec![0f32; c];
            let width =
                exec.attention_pass(w, cache, 1, block, |ri, ch, v| acc[ch] += weights[ri] * v)?;
            Ok((acc, width))
        };

        if df.centric {
            let blocks = df.blocks();
            let mut logits = vec![0f32; b * h * t];
            for block in &blocks {
                let mut cache = BlockCache::new();
                let partial = logits_of(self, &mut cache, block)?;
                let base = (block.batch * h + block.head) * t + block.rows.start;
                for (l, p) in logits[base..].iter_mut().zip(&partial) {
                    *l += p;
                }
                if df.global_reduce() {
                    self.report.reduce_bytes += (partial.len() * 2) as u64;
                }
                self.end_block(cache);
            }
            // One softmax per (batch, head) after the reduction.
            for row in logits.chunks_mut(t) {
                let max = row.iter().fold(f32::NEG_INFINITY, |a, &l| a.max(l * scale));
                let mut total = 0f32;
                for l in row.iter_mut() {
                    *l = (*l * scale - max).exp();
                    total += *l;
                }
                for l in row.iter_mut() {
                    *l /= total;
                }
            }
            let switch = &df.switch_axes;
            let v_global =
                w.op.reduce_axes(Phase::VCache, w.config().residuals)
                    .iter()
                    .any(|a| switch.contains(a));
            for block in &blocks {
                let mut cache = BlockCache::new();
                let base = (block.batch * h + block.head) * t;
                let p = &logits[base + block.rows.start..base + block.rows.end];
                let (acc, width) = values_of(self, &mut cache, block, p)?;
                let o = &mut out[(block.batch * h + block.head) * c..][..c];
                for (o, a) in o.iter_mut().zip(&acc) {
                    *o += a;
                }
                let bytes = (width * 2) as u64;
                if v_global {
                    self.report.reduce_bytes += bytes;
                } else {
                    self.report.extras.combine_bytes += bytes;
                }
                self.end_block(cache);
            }
        } else {
            // Flash decoding: every block owns a token chunk of one head and
            // keeps a running max and sum; chunks are merged with rescaling.
            let mut state = vec![(f32::NEG_INFINITY, 0f32); b * h];
            for block in df.blocks() {
                let mut cache = BlockCache::new();
                let mut e = logits_of(self, &mut cache, &block)?;
                let local_max = e.iter().fold(f32::NEG_INFINITY, |a, &l| a.max(l * scale));
                let mut local_sum = 0f32;
                for l in e.iter_mut() {
                    *l = (*l * scale - local_max).exp();
                    local_sum += *l;
                }
                let (acc, _) = values_of(self, &mut cache, &block, &e)?;
                let bh = block.batch * h + block.head;
                let (max, sum) = state[bh];
                let new_max = max.max(local_max);
                let (a, b_) = ((max - new_max).exp(), (local_max - new_max).exp());
                let o = &mut out[bh * c..][..c];
                for (o, x) in o.iter_mut().zip(&acc) {
                    *o = *o * a + x * b_;
                }
                state[bh] = (new_max, sum * a + local_sum * b_);
                self.report.extras.combine_bytes += ((c + 2) * 2) as u64;
                self.end_block(cache);
            }
            for (bh, (_, sum)) in state.iter().enumerate() {
                for o in &mut out[bh * c..][..c] {
                    *o /= sum;
                }
            }
        }
        Ok(Tensor::new(vec![b, h, c], out)?)
    }
}

fn check_plans(w: &Workload, plans: &KernelPlans) -> Result<(), SimError> {
    let cfg = w.config();
    if plans.dataflow.op != w.op {
        return Err(SimError::Plan(format!(
            "dataflow was planned for {:?}, workload is {:?}",
            plans.dataflow.op, w.op
        )));
    }
    if plans.cache.entries != cfg.entries() || plans.cache.entry_bytes != cfg.entry_bytes() {
        return Err(SimError::Plan(format!(
            "cache plan covers {} entries of {} B, codebooks have {} of {} B",
            plans.cache.entries,
            plans.cache.entry_bytes,
            cfg.entries(),
            cfg.entry_bytes()
        )));
    }
    if plans.fusion.len() != w.op.phases().len()
        || plans
            .fusion
            .iter()
            .any(|f| f.layouts.src != cfg.vector_size)
    {
        return Err(SimError::Plan(
            "fusion plans do not match the operands".into(),
        ));
    }
    Ok(())
}

/// Executes a planned kernel block by block and returns its output and
/// counters.
pub fn run_fused_kernel(
    w: &Workload,
    plans: &KernelPlans,
    model: &GpuModel,
) -> Result<(Tensor, SimReport), SimError> {
    check_plans(w, plans)?;
    let label = Variant::from_config(&plans.config).map_or("custom", Variant::label);
    let stages = plans.fusion.iter().any(PhaseFusion::stages);
    let mut exec = Exec {
        model,
        plans,
        bank: BankModel::new(model.banks, model.bank_width),
        threads: plans.usage.threads_per_block,
        staging_bytes: if stages {
            plans.usage.threads_per_block * w.config().vector_size * 2
        } else {
            0
        },
        counters: CacheCounters::default(),
        report: SimReport::new(label, w.op.kind().cli_name(), &model.name),
        regs: vec![0.0; WARP * w.config().vector_size],
        staging: vec![0.0; WARP * w.config().vector_size],
        fused: vec![0.0; WARP * w.config().vector_size],
        starts: Vec::with_capacity(WARP),
    };
    let out = match w.op {
        ComputeOp::AttentionDecode { .. } => exec.run_attention(w)?,
        _ => exec.run_weights(w)?,
    };
    let c = exec.counters;
    let mut r = exec.report;
    r.global_to_shared_bytes = c.global_to_shared_bytes;
    r.shared_to_reg_bytes = c.shared_to_reg_bytes + r.extras.dequant_staging_bytes;
    r.global_bytes = c.global_access_bytes + c.register_fill_bytes;
    r.bank_conflicts = r.extras.codebook_bank_conflicts + r.extras.staging_bank_conflicts;
    r.occupancy = plans.occupancy as u64;
    r.quant_invocations = w.quant_invocations();
    r.extras.codebook_loads = c.loads;
    r.extras.reg_hits = c.reg_hits;
    r.extras.shared_hits = c.shared_hits;
    r.extras.global_hits = c.global_hits;
    r.extras.split_factor = plans.dataflow.split_factor as u64;
    r.extras.n_reg = plans.cache.n_reg as u64;
    r.extras.n_shared = plans.cache.n_shared as u64;
    Ok((out, r))
}

/// Plans and runs `config`; hierarchical caches first reorder every
/// codebook by access frequency.
pub fn run_config(
    w: &Workload,
    config: SimConfig,
    model: &GpuModel,
) -> Result<(Tensor, SimReport), SimError> {
    let reordered;
    let w = if matches!(config.cache, CacheMode::Hierarchical { .. }) {
        reordered = w.reordered()?;
        &reordered
    } else {
        w
    };
    let plans = plan_kernel(w, config, model)?;
    run_fused_kernel(w, &plans, model)
}

pub fn run_variant(
    w: &Workload,
    variant: Variant,
    model: &GpuModel,
) -> Result<(Tensor, SimReport), SimError> {
    run_config(w, variant.config(), model)
}

/// The naive kernels: reduce-axis tiling, shared-memory fusion and either
/// all-global (`GC`) or all-shared (`SC`) codebooks.
pub fn run_baseline_kernel(
    w: &Workload,
    variant: Variant,
    model: &GpuModel,
) -> Result<(Tensor, SimReport), SimError> {
    if !variant.is_baseline() {
        return Err(SimError::Plan(format!(
            "{variant} is not a baseline variant"
        )));
    }
    run_variant(w, variant, model)
}

/// Unquantized kernel: dense operands, no codebook traffic.
pub fn run_dense_kernel(
    op: &ComputeOp,
    operands: &[Tensor],
    activation: &Tensor,
    model: &GpuModel,
) -> Result<(Tensor, SimReport), SimError> {
    let out = reference_compute(op, operands, activation)?;
    let mut report = SimReport::new("FP16", op.kind().cli_name(), &model.name);
    report.occupancy = model.occupancy(&base_usage(op.kind())) as u64;
    Ok((out, report))
}
