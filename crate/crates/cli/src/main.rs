//! `forge`: quantize tensors, profile codebook accesses, inspect kernel
//! plans and run the simulated kernels.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use log::info;

use vqforge::cache::CacheError;
use vqforge::codec::container::{load_quantized, load_tensor, save_quantized, save_tensor};
use vqforge::codec::{compression_ratio, dequantize, quantize, train_codebooks_with, TrainOptions};
use vqforge::dataflow::{ComputeOp, DataflowPlan, OpKind};
use vqforge::pipeline::{
    self, bench, cache_plan_view, fusion_view, verify, verify_quantized, RunSpec, VerifySummary,
};
use vqforge::presets::{resolve_preset, PresetError, BUILTIN_NAMES};
use vqforge::profile::{
    profile_accesses, reorder_all, summarize, tile_hotness_map, write_histograms_csv, Granularity,
};
use vqforge::sim::{SimReport, Variant};
use vqforge::synth::random_tensor;
use vqforge::Error;

#[derive(Parser)]
#[command(
    name = "forge",
    version,
    about = "VQ codec, kernel planners and simulated GPU kernels"
)]
struct Cli {
    /// Log progress (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train codebooks for a tensor file and write a VQLF container.
    Quantize(QuantizeArgs),
    /// Entry access histograms and hot sets of a quantized tensor.
    Profile(ProfileArgs),
    /// Register/shared/global cache boundaries for a preset and kernel.
    PlanCache(PlanArgs),
    /// Codebook-centric dataflow plan (axes, split factor, tiling).
    PlanDataflow(DataflowArgs),
    /// Fusion level and shuffle schedule per phase.
    PlanFusion(PlanArgs),
    /// Simulate one kernel variant.
    Run(RunArgs),
    /// Simulate a set of variants and compare their counters.
    Bench(BenchArgs),
    /// Run the oracle suite; exits 1 when any check fails (`-v` lists every check).
    Verify(VerifyArgs),
    /// Write a seeded random tensor file.
    Synth(SynthArgs),
}

#[derive(Args)]
struct QuantizeArgs {
    /// Preset name or preset TOML file.
    #[arg(long, alias = "vq")]
    config: String,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// k-means iterations per codebook.
    #[arg(long, default_value_t = 25)]
    iters: usize,
}

#[derive(Args)]
struct ProfileArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Block tile as ROWSxCOLS; whole-tensor histograms when omitted.
    #[arg(long, value_parser = parse_tiles)]
    tiles: Option<(usize, usize)>,
    /// Histograms as `tile,codebook,entry,count` CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Summaries (totals, hot sets) as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
    /// Tile-by-entry hotness map of `--codebook` as CSV (needs `--tiles`).
    #[arg(long)]
    hotness: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    codebook: usize,
    /// Write a copy with every codebook reordered by access frequency.
    #[arg(long)]
    reorder: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct OpArgs {
    /// Preset name or preset TOML file.
    #[arg(long, alias = "config", default_value = "cq2")]
    vq: String,
    /// gemm, gemv or attn-decode.
    #[arg(long, alias = "kernel", value_parser = parse_op_kind, default_value = "attn-decode")]
    op: OpKind,
    /// GeMM activation rows.
    #[arg(long)]
    s: Option<usize>,
    /// Weight rows (output features).
    #[arg(long)]
    n: Option<usize>,
    /// Weight columns (input features).
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    /// Cached tokens.
    #[arg(long)]
    seq: Option<usize>,
    /// Head dimension.
    #[arg(long)]
    dim: Option<usize>,
    /// GPU model name, name under $FORGE_MODEL_DIR, or TOML file.
    #[arg(long, default_value = "rtx4090")]
    model: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl OpArgs {
    fn compute_op(&self) -> ComputeOp {
        match self.op {
            OpKind::Gemm => ComputeOp::gemm(
                self.s.unwrap_or(256),
                self.n.unwrap_or(256),
                self.m.unwrap_or(256),
            ),
            OpKind::Gemv => ComputeOp::gemv(self.n.unwrap_or(4096), self.m.unwrap_or(4096)),
            OpKind::AttentionDecode => ComputeOp::attention(
                self.batch.unwrap_or(1),
                self.heads.unwrap_or(4),
                self.seq.unwrap_or(1024),
                self.dim.unwrap_or(128),
            ),
        }
    }

    fn spec(&self, variants: Vec<Variant>) -> RunSpec {
        RunSpec {
            preset: self.vq.clone(),
            op: self.compute_op(),
            model: self.model.clone(),
            variants,
            seed: self.seed,
        }
    }
}

#[derive(Args)]
struct PlanArgs {
    #[command(flatten)]
    op: OpArgs,
    #[arg(long, value_parser = parse_variant, default_value = "o4")]
    variant: Variant,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DataflowArgs {
    #[command(flatten)]
    op: OpArgs,
    /// Plan the naive (reduce-axis tiled) dataflow instead.
    #[arg(long)]
    naive: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    op: OpArgs,
    #[arg(long, value_parser = parse_variant, default_value = "o4")]
    variant: Variant,
    /// SimReport as JSON.
    #[arg(long)]
    report: Option<PathBuf>,
    /// SimReport as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    op: OpArgs,
    /// Variants to run (repeatable); the full ladder when omitted.
    #[arg(long = "variant", value_parser = parse_variant)]
    variants: Vec<Variant>,
    /// Bench report (all variants plus deltas) as JSON.
    #[arg(long)]
    report: Option<PathBuf>,
    /// One CSV row per variant.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    /// Verify one spec instead of every preset on small shapes.
    #[arg(long)]
    vq: Option<String>,
    #[arg(long, value_parser = parse_op_kind)]
    op: Option<OpKind>,
    #[arg(long, default_value = "rtx4090")]
    model: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long = "variant", value_parser = parse_variant)]
    variants: Vec<Variant>,
    /// Check a VQLF container instead of synthetic workloads.
    #[arg(long = "in", conflicts_with_all = ["vq", "op"])]
    input: Option<PathBuf>,
    /// Summary as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    /// Shape as DIMxDIMx...
    #[arg(long, value_parser = parse_shape)]
    shape: Shape,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse::<Variant>().map_err(|e| e.to_string())
}

fn parse_op_kind(s: &str) -> Result<OpKind, String> {
    s.parse::<OpKind>().map_err(|e| e.to_string())
}

#[derive(Clone)]
struct Shape(Vec<usize>);

fn parse_shape(s: &str) -> Result<Shape, String> {
    s.split(['x', 'X', ','])
        .map(|d| d.trim().parse::<usize>().map_err(|e| format!("{d:?}: {e}")))
        .collect::<Result<_, _>>()
        .map(Shape)
}

fn parse_tiles(s: &str) -> Result<(usize, usize), String> {
    match parse_shape(s)?.0.as_slice() {
        [r, c] => Ok((*r, *c)),
        _ => Err(format!("expected ROWSxCOLS, got {s:?}")),
    }
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    let mut w = create(path)?;
    w.write_all(text.as_bytes())?;
    if !text.ends_with('\n') {
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Writes to `out` when given, stdout otherwise.
fn emit(out: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match out {
        Some(p) => write_text(p, text),
        None => {
            let mut out = io::stdout().lock();
            match writeln!(out, "{text}") {
                Err(e) if e.kind() == io::ErrorKind::BrokenPipe => Ok(()),
                r => Ok(r?),
            }
        }
    }
}

fn cmd_quantize(a: &QuantizeArgs) -> anyhow::Result<()> {
    let preset = resolve_preset(&a.config)?;
    let data = load_tensor(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let mut opts = TrainOptions::seeded(a.seed);
    opts.max_iters = a.iters;
    let training = train_codebooks_with(&data, &preset.config, &opts)?;
    let q = quantize(&data, &training.codebooks, &preset.config)?;
    let mse = dequantize(&q)?.mse(&data);
    save_quantized(&a.out, &q)?;
    println!(
        "{} {:?}: {} codebooks, mse {mse:.6e}, {:.2}% of fp16 -> {}",
        preset.name,
        q.shape(),
        q.codebooks().len(),
        compression_ratio(&preset.config) * 100.0,
        a.out.display()
    );
    Ok(())
}

fn cmd_profile(a: &ProfileArgs) -> anyhow::Result<()> {
    let q = load_quantized(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let granularity = match a.tiles {
        Some((rows, cols)) => Granularity::BlockTile { rows, cols },
        None => Granularity::Tensor,
    };
    let hists = profile_accesses(&q, granularity)?;
    let summaries = summarize(&hists);
    for s in summaries.iter().filter(|s| s.tile == 0) {
        println!(
            "codebook {}: {} accesses, mean {:.2}, stddev {:.2}, {} hot entries",
            s.codebook,
            s.total,
            s.mean,
            s.stddev,
            s.hot_set.len()
        );
    }
    if let Some(p) = &a.csv {
        write_histograms_csv(&hists, create(p)?)?;
    }
    if let Some(p) = &a.json {
        write_text(p, &serde_json::to_string_pretty(&summaries)?)?;
    }
    if let Some(p) = &a.hotness {
        let Some((rows, cols)) = a.tiles else {
            bail!("--hotness needs --tiles");
        };
        let map = tile_hotness_map(&q, a.codebook, rows, cols)?;
        let corr = map.rank_correlations();
        let mean = corr.iter().sum::<f64>() / corr.len().max(1) as f64;
        println!(
            "codebook {} over {} tiles: mean rank correlation with the tensor profile {mean:.3}",
            a.codebook,
            map.tiles()
        );
        map.write_csv(create(p)?)?;
    }
    if let Some(p) = &a.reorder {
        let (r, _) = reorder_all(&q)?;
        save_quantized(p, &r)?;
        info!("wrote reordered tensor to {}", p.display());
    }
    Ok(())
}

fn cmd_plan_cache(a: &PlanArgs) -> anyhow::Result<()> {
    let view = cache_plan_view(&a.op.spec(vec![a.variant]), a.variant)?;
    emit(a.out.as_deref(), &serde_json::to_string_pretty(&view)?)
}

fn cmd_plan_dataflow(a: &DataflowArgs) -> anyhow::Result<()> {
    let spec = a.op.spec(vec![Variant::O4]);
    let (preset, model) = spec.resolve()?;
    let plan = if a.naive {
        DataflowPlan::naive(&preset.config, &spec.op, &model)?
    } else {
        DataflowPlan::centric(&preset.config, &spec.op, &model)?
    };
    emit(a.out.as_deref(), &plan.to_json())
}

fn cmd_plan_fusion(a: &PlanArgs) -> anyhow::Result<()> {
    let views = fusion_view(&a.op.spec(vec![Variant::O4]))?;
    for v in &views {
        eprintln!(
            "{:?}: {} -> {} elements per thread, {} shuffles{}",
            v.phase,
            v.layouts.src,
            v.layouts.dst,
            v.n_shuffle,
            v.expected_shuffles
                .map_or(String::new(), |e| format!(" (preset expects {e})"))
        );
    }
    emit(a.out.as_deref(), &serde_json::to_string_pretty(&views)?)
}

fn write_reports(
    reports: &[SimReport],
    json: Option<&Path>,
    csv: Option<&Path>,
) -> anyhow::Result<()> {
    if let Some(p) = csv {
        SimReport::write_csv(reports, create(p)?)?;
    }
    if let (Some(p), [one]) = (json, reports) {
        write_text(p, &one.to_json())?;
    }
    Ok(())
}

fn cmd_run(a: &RunArgs) -> anyhow::Result<()> {
    let spec = a.op.spec(vec![a.variant]);
    let row = pipeline::run(&spec, a.variant)?;
    let r = &row.report;
    println!(
        "{} {} on {}: occupancy {}, conflicts {}, G->S {} B, S->R {} B, global {} B, reduce {} B, max rel err {:.2e}",
        r.variant,
        r.op,
        r.model,
        r.occupancy,
        r.bank_conflicts,
        r.global_to_shared_bytes,
        r.shared_to_reg_bytes,
        r.global_bytes,
        r.reduce_bytes,
        row.max_rel_error
    );
    write_reports(
        std::slice::from_ref(r),
        a.report.as_deref(),
        a.csv.as_deref(),
    )
}

fn cmd_bench(a: &BenchArgs) -> anyhow::Result<()> {
    let variants = if a.variants.is_empty() {
        Variant::ALL.to_vec()
    } else {
        a.variants.clone()
    };
    let report = bench(&a.op.spec(variants))?;
    print!("{}", report.delta_table());
    for row in &report.rows {
        println!(
            "{}: max relative error {:.2e}",
            row.report.variant, row.max_rel_error
        );
    }
    if let Some(p) = &a.report {
        write_text(p, &report.to_json())?;
    }
    if let Some(p) = &a.csv {
        SimReport::write_csv(&report.reports(), create(p)?)?;
    }
    Ok(())
}

fn cmd_verify(a: &VerifyArgs, verbose: bool) -> anyhow::Result<bool> {
    let summary = if let Some(p) = &a.input {
        let q = load_quantized(p).with_context(|| format!("reading {}", p.display()))?;
        verify_quantized(&q, &p.display().to_string())
    } else {
        let presets: Vec<String> = match &a.vq {
            Some(v) => vec![v.clone()],
            None => BUILTIN_NAMES.map(String::from).to_vec(),
        };
        let ops: Vec<ComputeOp> = pipeline::smoke_ops()
            .into_iter()
            .filter(|op| a.op.is_none_or(|k| op.kind() == k))
            .collect();
        let mut specs: Vec<RunSpec> = presets
            .iter()
            .flat_map(|p| {
                ops.iter().map(move |&op| RunSpec {
                    model: a.model.clone(),
                    seed: a.seed,
                    ..RunSpec::new(p, op)
                })
            })
            .collect();
        if !a.variants.is_empty() {
            for s in &mut specs {
                s.variants = a.variants.clone();
            }
        }
        let mut all = VerifySummary::default();
        for spec in &specs {
            info!("verifying {} {}", spec.preset, spec.op.kind());
            all.merge(verify(spec)?);
        }
        all
    };
    print!("{}", summary.render(verbose));
    if let Some(p) = &a.json {
        write_text(p, &serde_json::to_string_pretty(&summary)?)?;
    }
    Ok(summary.passed())
}

fn cmd_synth(a: &SynthArgs) -> anyhow::Result<()> {
    let shape = a.shape.0.clone();
    if shape.is_empty() || shape.contains(&0) {
        bail!("shape must have non-zero dimensions");
    }
    let t = random_tensor(shape, a.seed);
    save_tensor(&a.out, &t)?;
    println!("{:?} -> {}", t.shape(), a.out.display());
    Ok(())
}

/// Usage errors exit 2: unknown names, bad shapes and missing files.
fn is_usage_error(e: &anyhow::Error) -> bool {
    e.chain().any(|c| {
        matches!(
            c.downcast_ref::<Error>(),
            Some(Error::Spec(_) | Error::Preset(_) | Error::Dataflow(_))
        ) || matches!(
            c.downcast_ref::<PresetError>(),
            Some(PresetError::Unknown(_))
        ) || matches!(c.downcast_ref::<CacheError>(), Some(CacheError::Model(_)))
            || c.downcast_ref::<io::Error>()
                .is_some_and(|e| e.kind() == io::ErrorKind::NotFound)
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let outcome = match &cli.command {
        Command::Quantize(a) => cmd_quantize(a).map(|_| true),
        Command::Profile(a) => cmd_profile(a).map(|_| true),
        Command::PlanCache(a) => cmd_plan_cache(a).map(|_| true),
        Command::PlanDataflow(a) => cmd_plan_dataflow(a).map(|_| true),
        Command::PlanFusion(a) => cmd_plan_fusion(a).map(|_| true),
        Command::Run(a) => cmd_run(a).map(|_| true),
        Command::Bench(a) => cmd_bench(a).map(|_| true),
        Command::Verify(a) => cmd_verify(a, cli.verbose > 0),
        Command::Synth(a) => cmd_synth(a).map(|_| true),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if is_usage_error(&e) { 2 } else { 1 })
        }
    }
}
