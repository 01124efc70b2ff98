//! Invariants of profiling, cache planning, bank simulation and fusion.

use proptest::prelude::*;
use vqforge::cache::{compute_slack, level_of, CachePlan, GpuModel, KernelUsage, Level};
use vqforge::codec::{dequantize, Codebook, PackedCodes, QuantizedTensor, Sharing, VQConfig};
use vqforge::dataflow::ComputeOp;
use vqforge::fusion::{LayoutPair, ShuffleSchedule, WarpTile};
use vqforge::presets::load_preset;
use vqforge::profile::{profile_accesses, reorder_all, Granularity};
use vqforge::sim::{run_variant, stream_conflicts, BankModel, Variant};
use vqforge::synth::{random_tensor, synth_workload};

fn tensor_with_codes(codes: &[u32], log2: u32, seed: u64) -> QuantizedTensor {
    let cfg = VQConfig::new(2, log2, 1, Sharing::WholeTensor).unwrap();
    let n = 1usize << log2;
    let cb = Codebook::new(random_tensor(vec![2 * n], seed).into_data(), 2, 0, 0).unwrap();
    let mut packed = PackedCodes::zeroed(log2, codes.len());
    for (i, &c) in codes.iter().enumerate() {
        packed.set(i, c).unwrap();
    }
    QuantizedTensor::from_parts(packed, vec![codes.len(), 2], cfg, vec![cb]).unwrap()
}

fn models() -> Vec<GpuModel> {
    GpuModel::builtin()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn reordering_is_a_pure_relabeling(
        codes in prop::collection::vec(0u32..16, 1..200),
        seed in any::<u64>(),
    ) {
        let q = tensor_with_codes(&codes, 4, seed);
        let (r, perms) = reorder_all(&q).unwrap();
        let (dr, dq) = (dequantize(&r).unwrap(), dequantize(&q).unwrap());
        prop_assert_eq!(dr.data(), dq.data());

        let before = &profile_accesses(&q, Granularity::Tensor).unwrap()[0].histogram;
        let after = &profile_accesses(&r, Granularity::Tensor).unwrap()[0].histogram;
        prop_assert!(after.is_sorted_descending());
        let mut mapped: Vec<usize> = before
            .hot_set()
            .into_iter()
            .map(|i| perms[0].new_index(i as u32) as usize)
            .collect();
        mapped.sort_unstable();
        let mut hot = after.hot_set();
        hot.sort_unstable();
        prop_assert_eq!(mapped, hot);
    }

    #[test]
    fn level_is_a_function_of_boundaries(index in 0usize..512, a in 0usize..512, b in 0usize..512) {
        let (n_reg, n_shared) = (a.min(b), a.max(b));
        let want = if index < n_reg {
            Level::Register
        } else if index < n_shared {
            Level::Shared
        } else {
            Level::Global
        };
        prop_assert_eq!(level_of(index, n_reg, n_shared), want);
    }

    #[test]
    fn cache_plans_keep_occupancy(
        shared in 0usize..48 << 10,
        regs in 8usize..128,
        threads in prop::sample::select(vec![32usize, 64, 128, 256, 512]),
        entries in prop::sample::select(vec![256usize, 4096, 65536]),
        vs in prop::sample::select(vec![2usize, 4, 8]),
    ) {
        for m in models() {
            let usage = KernelUsage::new(shared, regs, threads);
            let Ok(slack) = compute_slack(&usage, &m) else { continue };
            let plan = CachePlan::from_slack(entries, vs * 2, &slack);
            prop_assert!(plan.fits(&slack));
            let grown = KernelUsage::new(
                shared + plan.shared_bytes(),
                regs + plan.reg_bytes_per_thread().div_ceil(4),
                threads,
            );
            prop_assert_eq!(m.occupancy(&grown), m.occupancy(&usage), "{}", m.name);
        }
    }

    #[test]
    fn more_register_entries_never_add_conflicts(
        stream in prop::collection::vec(0u32..64, 32..400),
        eb in prop::sample::select(vec![4usize, 8, 16]),
    ) {
        let banks = BankModel::default();
        let mut prev = u64::MAX;
        for n_reg in 0..=64 {
            let c = stream_conflicts(&stream, n_reg, 64, eb, &banks);
            prop_assert!(c <= prev, "n_reg {}: {} > {}", n_reg, c, prev);
            prev = c;
        }
        prop_assert_eq!(prev, 0);
    }

    #[test]
    fn schedules_undo_themselves(
        vs in prop::sample::select(vec![2usize, 4, 8, 16]),
        dst in prop::sample::select(vec![1usize, 2, 4, 8]),
        width_mult in 1usize..5,
    ) {
        prop_assume!(dst <= vs);
        let layouts = LayoutPair::new(vs, dst).unwrap();
        let tile = WarpTile::select(layouts, vs * width_mult);
        let Ok(s) = ShuffleSchedule::for_tile(&tile) else { return Ok(()) };
        let start: Vec<u32> = (0..32 * vs as u32).collect();
        let mut regs = start.clone();
        s.apply(&mut regs, vs, dst);
        s.apply(&mut regs, vs, dst);
        prop_assert_eq!(regs, start);
    }
}

#[test]
fn simulation_is_deterministic() {
    let preset = load_preset("cq2").unwrap();
    let m = GpuModel::load("rtx4090").unwrap();
    let op = ComputeOp::attention(1, 2, 64, 128);
    for v in Variant::ALL {
        let a = run_variant(&synth_workload(&preset, &op, 4).unwrap(), v, &m).unwrap();
        let b = run_variant(&synth_workload(&preset, &op, 4).unwrap(), v, &m).unwrap();
        assert_eq!(a.0.data(), b.0.data());
        assert_eq!(a.1, b.1);
    }
}
