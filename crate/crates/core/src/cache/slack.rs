use serde::{Deserialize, Serialize};

use super::{CacheError, GpuModel, KernelUsage};

/// Extra resources a kernel can take without losing resident blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Slack {
    pub shared_bytes: usize,
    /// Register bytes available to every thread.
    pub reg_bytes_per_thread: usize,
    pub threads_per_block: usize,
}

impl Slack {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn reg_bytes_per_block(&self) -> usize {
        self.reg_bytes_per_thread * self.threads_per_block
    }
}

/// Largest `x` in `0..=limit` with `keep(x)`, given `keep` holds at 0 and is
/// monotone (true then false).
fn largest_keeping(limit: usize, keep: impl Fn(usize) -> bool) -> usize {
    let (mut lo, mut hi) = (0, limit);
    while lo < hi {
        let mid = lo + (hi - lo).div_ceil(2);
        if keep(mid) {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    lo
}

/// Maximal extra shared bytes and per-thread register bytes that leave the
/// occupancy of `usage` unchanged.
///
/// Each resource is searched on its own; the combination is then checked and
/// the register share trimmed if the two interact.
pub fn compute_slack(usage: &KernelUsage, model: &GpuModel) -> Result<Slack, CacheError> {
    let base = model.occupancy(usage);
    if base == 0 {
        return Err(CacheError::Infeasible(format!(
            "{} B shared, {} regs/thread, {} threads cannot launch on {}",
            usage.shared_bytes, usage.regs_per_thread, usage.threads_per_block, model.name
        )));
    }
    let with = |shared: usize, regs: usize| {
        model.occupancy(&KernelUsage {
            shared_bytes: usage.shared_bytes + shared,
            regs_per_thread: usage.regs_per_thread + regs,
            threads_per_block: usage.threads_per_block,
        })
    };
    let shared = largest_keeping(model.max_shared_per_block - usage.shared_bytes, |s| {
        with(s, 0) == base
    });
    let mut regs = largest_keeping(model.max_regs_per_thread - usage.regs_per_thread, |r| {
        with(0, r) == base
    });
    while regs > 0 && with(shared, regs) != base {
        regs -= 1;
    }
    Ok(Slack {
        shared_bytes: shared,
        reg_bytes_per_thread: regs * 4,
        threads_per_block: usage.threads_per_block,
    })
}
