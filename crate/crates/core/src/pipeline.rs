//! End-to-end runs: a [`RunSpec`] names a preset, an operator shape, a GPU
//! model and a set of kernel variants; [`bench`] simulates each variant on
//! seeded synthetic data and [`verify`] runs the oracle suite.

use std::fmt::Write as _;
use std::io::Cursor;

use serde::{Deserialize, Serialize};

use crate::cache::{GpuModel, KernelUsage, Slack};
use crate::codec::container::{read_quantized, write_quantized};
use crate::codec::{dequantize, quantize, QuantizedTensor};
use crate::dataflow::{ComputeOp, Phase};
use crate::fusion::{FusionLevel, FusionPlan, LayoutPair, ShuffleSchedule, StagingCost, WarpTile};
use crate::presets::{resolve_preset, Preset};
use crate::sim::{
    plan_kernel, run_fused_kernel, run_variant, KernelPlans, SimReport, Variant, Workload,
};
use crate::synth::synth_workload;
use crate::{Error, Result, Tensor};

/// Relative tolerance of fused outputs against the dense reference
/// (max-norm of the error over max-norm of the reference).
pub const NUMERIC_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    /// Built-in preset name or path to a preset TOML file.
    pub preset: String,
    pub op: ComputeOp,
    /// Built-in model name, a name under `$FORGE_MODEL_DIR`, or a TOML path.
    pub model: String,
    pub variants: Vec<Variant>,
    pub seed: u64,
}

impl RunSpec {
    pub fn new(preset: &str, op: ComputeOp) -> Self {
        Self {
            preset: preset.into(),
            op,
            model: "rtx4090".into(),
            variants: Variant::ALL.to_vec(),
            seed: 0,
        }
    }

    /// Loads the preset and model and checks the shape against the preset.
    pub fn resolve(&self) -> Result<(Preset, GpuModel)> {
        let preset = resolve_preset(&self.preset)?;
        let model = GpuModel::load(&self.model)?;
        self.op.validate()?;
        let cols = *self.op.quantized_shape().last().expect("non-empty shape");
        let vs = preset.config.vector_size;
        if !cols.is_multiple_of(vs) {
            return Err(Error::Spec(format!(
                "the quantized operand has {cols} columns, not a multiple of {}'s vector size {vs}",
                preset.name
            )));
        }
        if let ComputeOp::AttentionDecode { c, .. } = self.op {
            if c % vs != 0 {
                return Err(Error::Spec(format!(
                    "head dimension {c} is not a multiple of vector size {vs}"
                )));
            }
        }
        if self.variants.is_empty() {
            return Err(Error::Spec("no variants selected".into()));
        }
        Ok((preset, model))
    }

    pub fn workload(&self, preset: &Preset) -> Result<Workload> {
        Ok(synth_workload(preset, &self.op, self.seed)?)
    }
}

/// `‖got − want‖∞ / ‖want‖∞`.
pub fn max_rel_error(got: &Tensor, want: &Tensor) -> f64 {
    if got.shape() != want.shape() {
        return f64::INFINITY;
    }
    let scale = want
        .data()
        .iter()
        .fold(0f64, |a, &x| a.max(f64::from(x).abs()));
    let diff = got
        .data()
        .iter()
        .zip(want.data())
        .fold(0f64, |a, (&g, &w)| {
            a.max((f64::from(g) - f64::from(w)).abs())
        });
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub report: SimReport,
    pub max_rel_error: f64,
}

/// Counters compared across variants in the delta table.
pub const DELTA_COUNTERS: [&str; 7] = [
    "occupancy",
    "bank_conflicts",
    "global_to_shared_bytes",
    "shared_to_reg_bytes",
    "global_bytes",
    "reduce_bytes",
    "dequant_staging_bytes",
];

fn counter(r: &SimReport, name: &str) -> u64 {
    match name {
        "occupancy" => r.occupancy,
        "bank_conflicts" => r.bank_conflicts,
        "global_to_shared_bytes" => r.global_to_shared_bytes,
        "shared_to_reg_bytes" => r.shared_to_reg_bytes,
        "global_bytes" => r.global_bytes,
        "reduce_bytes" => r.reduce_bytes,
        "dequant_staging_bytes" => r.extras.dequant_staging_bytes,
        _ => unreachable!("unknown counter {name}"),
    }
}

/// Reference of one delta-table column: the earliest variant on the ladder
/// (GC, SC, O1..O4) with a non-zero value of the counter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaColumn {
    pub counter: String,
    pub reference: Option<String>,
}

/// One variant's counters, absolute and relative to each column's reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaRow {
    pub variant: String,
    pub values: Vec<u64>,
    pub ratios: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub schema_version: u32,
    pub preset: String,
    pub op: ComputeOp,
    pub model: String,
    pub seed: u64,
    pub rows: Vec<BenchRow>,
    pub delta_columns: Vec<DeltaColumn>,
    pub deltas: Vec<DeltaRow>,
}

impl BenchReport {
    pub fn reports(&self) -> Vec<SimReport> {
        self.rows.iter().map(|r| r.report.clone()).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("bench reports serialize")
    }

    /// Plain-text delta table: one row per variant, each cell the absolute
    /// counter and its ratio to the column reference.
    pub fn delta_table(&self) -> String {
        let mut s = String::new();
        let _ = write!(s, "{:<8}", "variant");
        for c in &self.delta_columns {
            let _ = write!(s, " {:>24}", c.counter);
        }
        s.push('\n');
        let _ = write!(s, "{:<8}", "");
        for c in &self.delta_columns {
            let r = c.reference.as_deref().unwrap_or("-");
            let _ = write!(s, " {:>24}", format!("(vs {r})"));
        }
        s.push('\n');
        for d in &self.deltas {
            let _ = write!(s, "{:<8}", d.variant);
            for (v, r) in d.values.iter().zip(&d.ratios) {
                let cell = match r {
                    Some(x) => format!("{v} ({x:.3}x)"),
                    None => v.to_string(),
                };
                let _ = write!(s, " {cell:>24}");
            }
            s.push('\n');
        }
        s
    }
}

fn ladder_rank(label: &str) -> usize {
    Variant::ALL
        .iter()
        .position(|v| v.label() == label)
        .unwrap_or(Variant::ALL.len())
}

fn deltas(reports: &[SimReport]) -> (Vec<DeltaColumn>, Vec<DeltaRow>) {
    let mut ladder: Vec<&SimReport> = reports.iter().collect();
    ladder.sort_by_key(|r| ladder_rank(&r.variant));
    let references: Vec<Option<&SimReport>> = DELTA_COUNTERS
        .iter()
        .map(|&c| ladder.iter().copied().find(|r| counter(r, c) != 0))
        .collect();
    let columns = DELTA_COUNTERS
        .iter()
        .zip(&references)
        .map(|(&c, r)| DeltaColumn {
            counter: c.to_string(),
            reference: r.map(|r| r.variant.clone()),
        })
        .collect();
    let rows = reports
        .iter()
        .map(|r| {
            let values: Vec<u64> = DELTA_COUNTERS.iter().map(|&c| counter(r, c)).collect();
            let ratios = DELTA_COUNTERS
                .iter()
                .zip(&references)
                .map(|(&c, base)| base.map(|b| counter(r, c) as f64 / counter(b, c) as f64))
                .collect();
            DeltaRow {
                variant: r.variant.clone(),
                values,
                ratios,
            }
        })
        .collect();
    (columns, rows)
}

/// Simulates one variant and checks it against the reference.
pub fn run(spec: &RunSpec, variant: Variant) -> Result<BenchRow> {
    let (preset, model) = spec.resolve()?;
    let w = spec.workload(&preset)?;
    let want = w.reference()?;
    let (got, report) = run_variant(&w, variant, &model)?;
    Ok(BenchRow {
        max_rel_error: max_rel_error(&got, &want),
        report,
    })
}

/// Simulates every variant of `spec` on one synthetic workload.
pub fn bench(spec: &RunSpec) -> Result<BenchReport> {
    let (preset, model) = spec.resolve()?;
    let w = spec.workload(&preset)?;
    let want = w.reference()?;
    let mut rows = Vec::new();
    for &v in &spec.variants {
        log::info!("simulating {v} for {} {}", preset.name, spec.op.kind());
        let (got, report) = run_variant(&w, v, &model)?;
        rows.push(BenchRow {
            max_rel_error: max_rel_error(&got, &want),
            report,
        });
    }
    let (delta_columns, deltas) =
        deltas(&rows.iter().map(|r| r.report.clone()).collect::<Vec<_>>());
    Ok(BenchReport {
        schema_version: crate::sim::REPORT_SCHEMA_VERSION,
        preset: preset.name,
        op: spec.op,
        model: model.name,
        seed: spec.seed,
        rows,
        delta_columns,
        deltas,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VerifySummary {
    pub checks: Vec<Check>,
}

impl VerifySummary {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }

    fn push(&mut self, name: impl Into<String>, outcome: std::result::Result<String, String>) {
        let (passed, detail) = match outcome {
            Ok(d) => (true, d),
            Err(d) => (false, d),
        };
        self.checks.push(Check {
            name: name.into(),
            passed,
            detail,
        });
    }

    pub fn merge(&mut self, other: VerifySummary) {
        self.checks.extend(other.checks);
    }

    /// One line per check (only failures unless `all`), then a count.
    pub fn render(&self, all: bool) -> String {
        let mut s = String::new();
        for c in self.checks.iter().filter(|c| all || !c.passed) {
            let _ = writeln!(
                s,
                "{} {}: {}",
                if c.passed { "PASS" } else { "FAIL" },
                c.name,
                c.detail
            );
        }
        let failed = self.failures().count();
        let _ = writeln!(s, "{} checks, {failed} failed", self.checks.len());
        s
    }
}

/// Codec oracles on one quantized tensor: code range, container round trip,
/// dequantization against a direct lookup, and (single-level codes)
/// requantization idempotence.
pub fn verify_quantized(q: &QuantizedTensor, label: &str) -> VerifySummary {
    let mut out = VerifySummary::default();
    if let Err(e) = q.validate_codes() {
        out.push(format!("{label}: code range"), Err(e.to_string()));
        return out;
    }
    out.push(
        format!("{label}: code range"),
        Ok(format!("{} codes", q.code_count())),
    );

    let mut buf = Vec::new();
    let container = write_quantized(&mut buf, q)
        .and_then(|_| read_quantized(&mut Cursor::new(&buf)))
        .map_err(|e| e.to_string())
        .and_then(|back| {
            if back == *q {
                Ok(format!("{} bytes", buf.len()))
            } else {
                Err("container round trip changed the tensor".into())
            }
        });
    out.push(format!("{label}: container round trip"), container);

    let dense = match dequantize(q) {
        Ok(d) => d,
        Err(e) => {
            out.push(format!("{label}: dequantize"), Err(e.to_string()));
            return out;
        }
    };
    let grid = q.grid();
    let vs = q.config().vector_size;
    let mut worst = 0f32;
    for row in 0..q.rows() {
        for k in 0..q.subvectors_per_row() {
            let region = q.region_of(&grid, row, k);
            for e in 0..vs {
                let want: f32 = (0..q.config().residuals)
                    .map(|l| q.codebook(region, l).entry(q.code(l, row, k) as usize)[e])
                    .sum();
                worst = worst.max((dense.at(row, k * vs + e) - want).abs());
            }
        }
    }
    out.push(
        format!("{label}: dequantize vs lookup"),
        if worst <= 1e-6 {
            Ok(format!("max deviation {worst:e}"))
        } else {
            Err(format!("max deviation {worst:e}"))
        },
    );

    if q.config().residuals == 1 {
        let again = quantize(&dense, q.codebooks(), q.config())
            .and_then(|r| dequantize(&r))
            .map_err(|e| e.to_string())
            .and_then(|d| {
                if d.data() == dense.data() {
                    Ok("stable".to_string())
                } else {
                    Err(format!("requantized MSE {:e}", d.mse(&dense)))
                }
            });
        out.push(format!("{label}: requantization idempotence"), again);
    }
    out
}

fn check<T: std::fmt::Display>(ok: bool, detail: T) -> std::result::Result<String, String> {
    if ok {
        Ok(detail.to_string())
    } else {
        Err(detail.to_string())
    }
}

/// Every `(src, dst)` layout pair and tile geometry the planner can pick:
/// exhaustive element tracking against the compute layout.
fn verify_schedules(layouts: &[LayoutPair]) -> std::result::Result<String, String> {
    let mut tiles = 0;
    for &l in layouts {
        for width in [l.src, 2 * l.src, 4 * l.src, 256] {
            let tile = WarpTile::select(l, width);
            match ShuffleSchedule::for_tile(&tile) {
                Ok(s) => s.verify(&tile).map_err(|e| e.to_string())?,
                // No in-place mapping; shared fusion handles these tiles.
                Err(_) => continue,
            }
            tiles += 1;
        }
    }
    Ok(format!("{tiles} tiles verified"))
}

/// Counter identities between the O2 (naive) and O3 (codebook-centric)
/// plans, which differ only in dataflow.
fn verify_counters(
    w: &Workload,
    o2: &SimReport,
    o3: &SimReport,
    plans: &KernelPlans,
) -> std::result::Result<String, String> {
    let df = &plans.dataflow;
    let f = df.split_factor as u64;
    let gain = (df.split_factor * df.alignment_gain) as f64;
    let rows = match w.op {
        ComputeOp::Gemm { n, .. } | ComputeOp::Gemv { n, .. } => n,
        ComputeOp::AttentionDecode { t, .. } => t,
    };
    let row_blocks = rows.div_ceil(df.row_chunk).max(1);
    if o3.global_to_shared_bytes > 0 {
        let ratio = o2.global_to_shared_bytes as f64 / o3.global_to_shared_bytes as f64;
        // One partial tile of rounding along the row axis.
        let slack = gain / row_blocks as f64;
        if (ratio - gain).abs() > slack + 1e-9 {
            return Err(format!(
                "naive/centric shared loads {ratio:.3}, expected {gain} (split {f} x alignment {})",
                df.alignment_gain
            ));
        }
    }
    let split = if df.global_reduce() { f } else { 0 };
    let expected_reduce = match w.op {
        ComputeOp::Gemm { s, n, .. } => split * (s * n * 2) as u64,
        ComputeOp::Gemv { n, .. } => split * (n * 2) as u64,
        ComputeOp::AttentionDecode { b, h, t, c } => {
            let v_global =
                w.op.reduce_axes(Phase::VCache, w.config().residuals)
                    .iter()
                    .any(|a| df.switch_axes.contains(a));
            // Every block writes the head channels its units touch.
            let segs = &df.column_segments;
            let per = df.units_per_block();
            let covered: usize = (0..df.units)
                .step_by(per)
                .map(|u0| {
                    let mut seen = vec![false; segs.len()];
                    (u0..u0 + per).for_each(|u| seen[u % segs.len()] = true);
                    segs.iter()
                        .zip(&seen)
                        .filter(|(_, &s)| s)
                        .map(|(r, _)| r.len())
                        .sum::<usize>()
                })
                .sum();
            debug_assert!(covered >= c);
            let v = if v_global {
                (b * h * row_blocks * covered * 2) as u64
            } else {
                0
            };
            split * (b * h * t * 2) as u64 + v
        }
    };
    if o3.reduce_bytes != expected_reduce {
        return Err(format!(
            "reduce bytes {} != expected {expected_reduce}",
            o3.reduce_bytes
        ));
    }
    Ok(format!(
        "shared loads / {gain}, reduce bytes {} (split {f})",
        o3.reduce_bytes
    ))
}

/// The full oracle suite for one spec: codec checks, schedule ownership,
/// numeric equivalence of every variant, occupancy preservation and the
/// dataflow and fusion counter identities.
pub fn verify(spec: &RunSpec) -> Result<VerifySummary> {
    let (preset, model) = spec.resolve()?;
    let w = spec.workload(&preset)?;
    let tag = format!("{} {}", preset.name, spec.op.kind());
    let mut out = VerifySummary::default();
    for (i, q) in w.operands.iter().enumerate() {
        out.merge(verify_quantized(q, &format!("{tag} operand {i}")));
    }

    let vs = preset.config.vector_size;
    let layouts: Vec<LayoutPair> = [1, 2, 4, 8, 16]
        .into_iter()
        .filter(|&d| d <= vs)
        .filter_map(|d| LayoutPair::new(vs, d).ok())
        .collect();
    out.push(
        format!("{tag}: schedule ownership"),
        verify_schedules(&layouts),
    );

    let want = w.reference()?;
    let mut reports = Vec::new();
    for &v in &spec.variants {
        let name = format!("{tag} {v}");
        let w_v = if v.is_baseline() {
            w.clone()
        } else {
            w.reordered()?
        };
        let plans = match plan_kernel(&w_v, v.config(), &model) {
            Ok(p) => p,
            Err(e) => {
                out.push(format!("{name}: plan"), Err(e.to_string()));
                continue;
            }
        };
        let (got, report) = run_fused_kernel(&w_v, &plans, &model)?;
        let err = max_rel_error(&got, &want);
        out.push(
            format!("{name}: numeric equivalence"),
            check(
                err <= NUMERIC_TOLERANCE,
                format!("max relative error {err:.2e}"),
            ),
        );
        if !v.is_baseline() {
            let base = model.occupancy(&plans.base_usage);
            out.push(
                format!("{name}: occupancy preserved"),
                check(
                    plans.occupancy == base,
                    format!(
                        "{} blocks/SM with n_reg {} n_shared {} (baseline {base})",
                        plans.occupancy, plans.cache.n_reg, plans.cache.n_shared
                    ),
                ),
            );
            if plans.cache.n_shared == 0 {
                let all_global = report.extras.reg_hits == 0 && report.extras.shared_hits == 0;
                out.push(
                    format!("{name}: all-global cache"),
                    check(
                        all_global,
                        "no slack, every entry served from global memory",
                    ),
                );
            }
        }
        let register_only = plans.fusion.iter().all(|f| {
            f.plans
                .iter()
                .all(|(_, p, _)| p.level == FusionLevel::Register)
        });
        if register_only {
            out.push(
                format!("{name}: register fusion stages nothing"),
                check(
                    report.extras.dequant_staging_bytes == 0,
                    format!("{} staged bytes", report.extras.dequant_staging_bytes),
                ),
            );
        }
        reports.push((v, report, plans));
    }

    let find = |v: Variant| reports.iter().find(|(x, _, _)| *x == v);
    if let (Some((_, o2, _)), Some((_, o3, plans))) = (find(Variant::O2), find(Variant::O3)) {
        out.push(
            format!("{tag}: dataflow counter identities"),
            verify_counters(&w, o2, o3, plans),
        );
    }
    if let (Some((_, o3, _)), Some((_, o4, plans))) = (find(Variant::O3), find(Variant::O4)) {
        let staged_before = o3.extras.dequant_staging_bytes;
        let registers = plans.fusion.iter().any(|f| {
            f.plans
                .iter()
                .any(|(_, p, _)| p.level == FusionLevel::Register && p.n_shuffle > 0)
        });
        if registers {
            out.push(
                format!("{tag}: fusion staging"),
                check(
                    o4.extras.dequant_staging_bytes < staged_before,
                    format!(
                        "staged bytes {staged_before} -> {}",
                        o4.extras.dequant_staging_bytes
                    ),
                ),
            );
        }
    }
    Ok(out)
}

/// Kernel plans of one variant on the spec's synthetic workload.
pub fn plan(spec: &RunSpec, variant: Variant) -> Result<(Preset, GpuModel, KernelPlans)> {
    let (preset, model) = spec.resolve()?;
    let mut w = spec.workload(&preset)?;
    if !variant.is_baseline() {
        w = w.reordered()?;
    }
    let plans = plan_kernel(&w, variant.config(), &model)?;
    Ok((preset, model, plans))
}

/// Cache boundaries with the resource budget they were derived from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CachePlanView {
    pub preset: String,
    pub op: ComputeOp,
    pub model: String,
    pub variant: String,
    pub base_usage: KernelUsage,
    pub slack: Option<Slack>,
    pub usage: KernelUsage,
    pub baseline_occupancy: usize,
    pub occupancy: usize,
    pub n_reg: usize,
    pub n_shared: usize,
    pub entries: usize,
    pub entry_bytes: usize,
}

pub fn cache_plan_view(spec: &RunSpec, variant: Variant) -> Result<CachePlanView> {
    let (preset, model, plans) = plan(spec, variant)?;
    Ok(CachePlanView {
        preset: preset.name,
        op: spec.op,
        baseline_occupancy: model.occupancy(&plans.base_usage),
        model: model.name,
        variant: variant.label().into(),
        base_usage: plans.base_usage,
        slack: plans.slack,
        usage: plans.usage,
        occupancy: plans.occupancy,
        n_reg: plans.cache.n_reg,
        n_shared: plans.cache.n_shared,
        entries: plans.cache.entries,
        entry_bytes: plans.cache.entry_bytes,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionTileView {
    /// Column-segment width the tile covers.
    pub width: usize,
    pub plan: FusionPlan,
    pub staging: StagingCost,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionView {
    pub phase: Phase,
    pub layouts: LayoutPair,
    pub n_shuffle: usize,
    pub expected_shuffles: Option<usize>,
    pub tiles: Vec<FusionTileView>,
}

/// Fusion decisions of the fully optimized kernel, one entry per phase.
pub fn fusion_view(spec: &RunSpec) -> Result<Vec<FusionView>> {
    let (preset, _, plans) = plan(spec, Variant::O4)?;
    Ok(plans
        .fusion
        .into_iter()
        .map(|f| FusionView {
            phase: f.phase,
            layouts: f.layouts,
            n_shuffle: f.layouts.n_shuffle(),
            expected_shuffles: match f.phase {
                Phase::KCache => None,
                _ => preset.expected_shuffles.get(spec.op.kind()),
            },
            tiles: f
                .plans
                .into_iter()
                .map(|(width, plan, staging)| FusionTileView {
                    width,
                    plan,
                    staging,
                })
                .collect(),
        })
        .collect())
}

/// Small shapes of each operator, quick enough for the whole oracle suite.
pub fn smoke_ops() -> [ComputeOp; 3] {
    [
        ComputeOp::gemm(16, 64, 512),
        ComputeOp::gemv(256, 512),
        ComputeOp::attention(1, 2, 64, 128),
    ]
}

/// [`smoke_ops`] for every built-in preset.
pub fn smoke_specs(model: &str, seed: u64) -> Vec<RunSpec> {
    crate::presets::BUILTIN_NAMES
        .iter()
        .flat_map(|p| {
            smoke_ops().into_iter().map(move |op| RunSpec {
                model: model.into(),
                seed,
                ..RunSpec::new(p, op)
            })
        })
        .collect()
}
