//! Seeded synthetic data: dense tensors, random codebooks and Zipf-skewed
//! code streams, so kernels can be exercised at full size without training
//! codebooks first.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::codec::{Codebook, CodecError, PackedCodes, QuantizedTensor, VQConfig};
use crate::dataflow::ComputeOp;
use crate::presets::Preset;
use crate::sim::{SimError, Workload};
use crate::Tensor;

/// Skew used when nothing else is asked for.
pub const DEFAULT_ZIPF_S: f64 = 1.2;

pub fn random_tensor(shape: Vec<usize>, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-1.0f32..1.0)).collect();
    Tensor::new(shape, data).expect("shape matches data")
}

/// `P(rank = i) ∝ 1 / (i + 1)^s`.
pub fn zipf_probabilities(entries: usize, s: f64) -> Vec<f64> {
    let w: Vec<f64> = (1..=entries).map(|i| (i as f64).powf(-s)).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| x / total).collect()
}

/// Entries whose expected count exceeds mean + 3 standard deviations of the
/// expected per-entry counts (independent of the stream length).
pub fn expected_hot_count(entries: usize, s: f64) -> usize {
    let p = zipf_probabilities(entries, s);
    let mean = 1.0 / entries as f64;
    let var = p.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / entries as f64;
    let threshold = mean + 3.0 * var.sqrt();
    p.iter().filter(|&&x| x > threshold).count()
}

/// Zipf sampler over `entries` indices; rank `i` maps to a seeded random
/// index so the hot entries are scattered over the codebook.
pub struct ZipfCodes {
    dist: WeightedIndex<f64>,
    rank_to_index: Vec<u32>,
}

impl ZipfCodes {
    pub fn new(entries: usize, s: f64, rng: &mut impl Rng) -> Self {
        let dist = WeightedIndex::new(zipf_probabilities(entries, s)).expect("positive weights");
        let mut rank_to_index: Vec<u32> = (0..entries as u32).collect();
        rank_to_index.shuffle(rng);
        Self {
            dist,
            rank_to_index,
        }
    }

    pub fn sample(&self, rng: &mut impl Rng) -> u32 {
        self.rank_to_index[self.dist.sample(rng)]
    }

    /// Index of the `rank`-th most likely entry.
    pub fn index_of_rank(&self, rank: usize) -> u32 {
        self.rank_to_index[rank]
    }
}

pub fn zipf_stream(entries: usize, len: usize, s: f64, seed: u64) -> Vec<u32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let zipf = ZipfCodes::new(entries, s, &mut rng);
    (0..len).map(|_| zipf.sample(&mut rng)).collect()
}

/// Uniform random codebooks for every (region, level); deeper residual levels are
/// scaled down by 4x per level.
pub fn random_codebooks(config: &VQConfig, regions: usize, rng: &mut impl Rng) -> Vec<Codebook> {
    let entries = config.entries();
    let mut out = Vec::with_capacity(regions * config.residuals);
    for region in 0..regions {
        for level in 0..config.residuals {
            let scale = 0.25f32.powi(level as i32);
            let values = (0..entries * config.vector_size)
                .map(|_| scale * rng.random_range(-1.0f32..1.0))
                .collect();
            out.push(Codebook::new(values, config.vector_size, level, region).expect("non-empty"));
        }
    }
    out
}

#[derive(Debug, Clone, Copy)]
pub struct SynthOptions {
    pub seed: u64,
    pub zipf_s: f64,
    /// Restrict codes to the first `n` entries (lattice working sets).
    pub active_entries: Option<usize>,
}

impl SynthOptions {
    pub fn seeded(seed: u64) -> Self {
        Self {
            seed,
            zipf_s: DEFAULT_ZIPF_S,
            active_entries: None,
        }
    }
}

/// A quantized tensor with random codebooks and Zipf codes. Every residual
/// level has its own hot entries, shared by all regions.
pub fn synth_quantized(
    config: &VQConfig,
    shape: Vec<usize>,
    opts: &SynthOptions,
) -> Result<QuantizedTensor, CodecError> {
    config.validate()?;
    let cols = *shape
        .last()
        .ok_or_else(|| CodecError::Shape("empty shape".into()))?;
    let elements: usize = shape.iter().product();
    if cols == 0 || cols % config.vector_size != 0 {
        return Err(CodecError::Shape(format!(
            "last dimension {cols} is not a multiple of vector_size {}",
            config.vector_size
        )));
    }
    let grid = config.region_grid(elements / cols, cols)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let codebooks = random_codebooks(config, grid.regions(), &mut rng);
    let active = opts
        .active_entries
        .unwrap_or(config.entries())
        .clamp(1, config.entries());
    let nsub = elements / config.vector_size;
    let mut codes = PackedCodes::zeroed(config.log2_entries, nsub * config.residuals);
    for level in 0..config.residuals {
        let zipf = ZipfCodes::new(active, opts.zipf_s, &mut rng);
        for sub in 0..nsub {
            codes.set(level * nsub + sub, zipf.sample(&mut rng))?;
        }
    }
    QuantizedTensor::from_parts(codes, shape, *config, codebooks)
}

/// Operands for `op` quantized under `preset`, plus a random activation.
pub fn synth_workload(preset: &Preset, op: &ComputeOp, seed: u64) -> Result<Workload, SimError> {
    op.validate()?;
    let opts = SynthOptions {
        active_entries: preset.working_set,
        ..SynthOptions::seeded(seed)
    };
    let shape = op.quantized_shape();
    let mut operands = Vec::new();
    for (i, _) in op.phases().iter().enumerate() {
        let o = SynthOptions {
            seed: seed.wrapping_add(1 + i as u64),
            ..opts
        };
        operands.push(synth_quantized(&preset.config, shape.clone(), &o)?);
    }
    let activation_shape = match *op {
        ComputeOp::Gemm { s, m, .. } => vec![s, m],
        ComputeOp::Gemv { m, .. } => vec![m],
        ComputeOp::AttentionDecode { b, h, c, .. } => vec![b, h, c],
    };
    let activation = random_tensor(activation_shape, seed.wrapping_add(1000));
    let mut w = Workload::new(*op, operands, activation)?;
    w.working_set = preset.working_set;
    Ok(w)
}
