//! Codec checks against independent scalar implementations.

use proptest::prelude::*;
use vqforge::codec::container::{read_quantized, write_quantized};
use vqforge::codec::{
    compression_ratio, dequantize, quantize, train_codebooks, train_codebooks_with, Codebook,
    QuantizedTensor, Sharing, TrainOptions, VQConfig,
};
use vqforge::presets::builtin_presets;
use vqforge::synth::random_tensor;
use vqforge::Tensor;

fn dist2(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (f64::from(x) - f64::from(y)).powi(2))
        .sum()
}

/// Index of the closest entry by exhaustive scan; lowest index on ties.
fn brute_nearest(cb: &Codebook, v: &[f32]) -> usize {
    let mut best = (0, f64::INFINITY);
    for i in 0..cb.len() {
        let d = dist2(cb.entry(i), v);
        if d < best.1 {
            best = (i, d);
        }
    }
    best.0
}

/// Greedy residual assignment, one sub-vector at a time.
fn greedy_codes(data: &Tensor, codebooks: &[Codebook], cfg: &VQConfig) -> Vec<Vec<u32>> {
    let vs = cfg.vector_size;
    let grid = cfg.region_grid(data.rows(), data.cols()).unwrap();
    let mut out = vec![Vec::new(); cfg.residuals];
    for r in 0..data.rows() {
        for k in 0..data.cols() / vs {
            let region = grid.region_of(r, k * vs);
            let mut residual = data.row(r)[k * vs..(k + 1) * vs].to_vec();
            for (level, codes) in out.iter_mut().enumerate() {
                let cb = &codebooks[region * cfg.residuals + level];
                let idx = brute_nearest(cb, &residual);
                codes.push(idx as u32);
                for (x, c) in residual.iter_mut().zip(cb.entry(idx)) {
                    *x -= c;
                }
            }
        }
    }
    out
}

fn codes_by_level(q: &QuantizedTensor) -> Vec<Vec<u32>> {
    let spr = q.subvectors_per_row();
    (0..q.config().residuals)
        .map(|l| {
            (0..q.rows())
                .flat_map(|r| (0..spr).map(move |k| (r, k)))
                .map(|(r, k)| q.code(l, r, k))
                .collect()
        })
        .collect()
}

/// Reconstruction by direct lookup and summation.
fn scalar_dequantize(q: &QuantizedTensor) -> Vec<f32> {
    let vs = q.config().vector_size;
    let grid = q.grid();
    let mut out = Vec::with_capacity(q.rows() * q.cols());
    for r in 0..q.rows() {
        for k in 0..q.subvectors_per_row() {
            let region = grid.region_of(r, k * vs);
            for e in 0..vs {
                let mut x = 0f32;
                for l in 0..q.config().residuals {
                    x += q.codebook(region, l).entry(q.code(l, r, k) as usize)[e];
                }
                out.push(x);
            }
        }
    }
    out
}

fn mse(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (f64::from(x) - f64::from(y)).powi(2))
        .sum::<f64>()
        / a.len() as f64
}

#[test]
fn assignment_matches_brute_force_nearest() {
    let cfg = VQConfig::new(4, 8, 1, Sharing::WholeTensor).unwrap();
    let data = random_tensor(vec![64, 16], 11);
    let cbs = train_codebooks(&data, &cfg, 5).unwrap();
    let q = quantize(&data, &cbs, &cfg).unwrap();
    assert_eq!(codes_by_level(&q), greedy_codes(&data, &cbs, &cfg));
}

#[test]
fn two_level_codes_match_greedy_oracle() {
    let cfg = VQConfig::new(8, 4, 2, Sharing::WholeTensor).unwrap();
    let data = random_tensor(vec![32, 8], 12);
    let cbs = train_codebooks(&data, &cfg, 6).unwrap();
    let q = quantize(&data, &cbs, &cfg).unwrap();
    assert_eq!(codes_by_level(&q), greedy_codes(&data, &cbs, &cfg));
}

#[test]
fn reconstruction_mse_matches_scalar_oracle() {
    let cfg = VQConfig::new(4, 8, 1, Sharing::WholeTensor).unwrap();
    let data = random_tensor(vec![128, 32], 13);
    let cbs = train_codebooks(&data, &cfg, 7).unwrap();
    let q = quantize(&data, &cbs, &cfg).unwrap();
    let fast = dequantize(&q).unwrap();
    let slow = scalar_dequantize(&q);
    assert_eq!(fast.data(), &slow[..]);
    let want = mse(&slow, data.data());
    assert!((fast.mse(&data) - want).abs() <= 1e-12 * want.max(1.0));
}

#[test]
fn packed_length_is_exact_for_presets() {
    for p in builtin_presets() {
        let c = p.config;
        let data = random_tensor(vec![256, 256], 1);
        // Random codebooks are enough: only the stream length matters.
        let grid = c.region_grid(256, 256).unwrap();
        let cbs: Vec<Codebook> = (0..grid.regions())
            .flat_map(|r| (0..c.residuals).map(move |l| (r, l)))
            .map(|(r, l)| {
                let values =
                    random_tensor(vec![4.min(c.entries()) * c.vector_size], (r * 7 + l) as u64);
                Codebook::new(values.into_data(), c.vector_size, l, r).unwrap()
            })
            .collect();
        let q = quantize(&data, &cbs, &c).unwrap();
        let codes = 256 * 256 / c.vector_size * c.residuals;
        assert_eq!(
            q.codes().as_bytes().len(),
            (codes * c.log2_entries as usize).div_ceil(8)
        );
        // Bits per weight element, as a fraction of 16.
        let ratio = (c.residuals * c.log2_entries as usize) as f64 / (c.vector_size * 16) as f64;
        assert_eq!(compression_ratio(&c), ratio, "{}", p.name);
    }
}

fn nested_mse(data: &Tensor, cfgs: &[VQConfig], seed: u64) -> Vec<f64> {
    let mut warm: Option<Vec<Codebook>> = None;
    cfgs.iter()
        .map(|cfg| {
            let opts = TrainOptions {
                warm_start: warm.take(),
                ..TrainOptions::seeded(seed)
            };
            let cbs = train_codebooks_with(data, cfg, &opts).unwrap().codebooks;
            let q = quantize(data, &cbs, cfg).unwrap();
            warm = Some(cbs);
            dequantize(&q).unwrap().mse(data)
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn mse_non_increasing_in_residuals(seed in 0u64..1000) {
        let data = random_tensor(vec![64, 16], seed);
        let cfgs: Vec<VQConfig> = (1..=3)
            .map(|r| VQConfig::new(4, 4, r, Sharing::WholeTensor).unwrap())
            .collect();
        let m = nested_mse(&data, &cfgs, seed);
        prop_assert!(m[1] <= m[0] && m[2] <= m[1], "{m:?}");
    }

    #[test]
    fn mse_non_increasing_in_entries(seed in 0u64..1000) {
        let data = random_tensor(vec![128, 16], seed);
        let cfgs: Vec<VQConfig> = [4, 6, 8]
            .into_iter()
            .map(|b| VQConfig::new(4, b, 1, Sharing::WholeTensor).unwrap())
            .collect();
        let m = nested_mse(&data, &cfgs, seed);
        prop_assert!(m[1] <= m[0] && m[2] <= m[1], "{m:?}");
    }

    #[test]
    fn nearest_assignment_on_small_instances(
        rows in 1usize..32,
        spr in 1usize..8,
        vs in prop::sample::select(vec![2usize, 4, 8]),
        bits in 1u32..6,
        seed in any::<u64>(),
    ) {
        let cfg = VQConfig::new(vs, bits, 1, Sharing::WholeTensor).unwrap();
        let data = random_tensor(vec![rows, spr * vs], seed);
        let cb = Codebook::new(
            random_tensor(vec![cfg.entries() * vs], seed ^ 1).into_data(), vs, 0, 0,
        ).unwrap();
        let q = quantize(&data, std::slice::from_ref(&cb), &cfg).unwrap();
        prop_assert_eq!(codes_by_level(&q), greedy_codes(&data, &[cb], &cfg));
    }

    #[test]
    fn requantizing_a_reconstruction_is_stable(seed in any::<u64>(), bits in 2u32..7) {
        let cfg = VQConfig::new(2, bits, 1, Sharing::ChannelGroup { group_width: 4 }).unwrap();
        let data = random_tensor(vec![16, 8], seed);
        let cbs = train_codebooks(&data, &cfg, seed).unwrap();
        let once = dequantize(&quantize(&data, &cbs, &cfg).unwrap()).unwrap();
        let twice = dequantize(&quantize(&once, &cbs, &cfg).unwrap()).unwrap();
        prop_assert_eq!(once.data(), twice.data());
    }

    #[test]
    fn container_round_trip(seed in any::<u64>(), residuals in 1usize..3, bits in 1u32..13) {
        let cfg = VQConfig::new(2, bits, residuals, Sharing::PerTile { rows: 3, cols: 4 }).unwrap();
        let data = random_tensor(vec![5, 8], seed);
        let cbs = train_codebooks(&data, &cfg, seed).unwrap();
        let q = quantize(&data, &cbs, &cfg).unwrap();
        let mut buf = Vec::new();
        write_quantized(&mut buf, &q).unwrap();
        let back = read_quantized(&mut buf.as_slice()).unwrap();
        prop_assert_eq!(back, q);
    }
}
