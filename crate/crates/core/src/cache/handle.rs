use serde::{Deserialize, Serialize};

use super::{CacheError, CachePlan, GpuModel, Level};
use crate::codec::Codebook;

/// Traffic and hit counts recorded by a [`CachedCodebook`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheCounters {
    pub loads: u64,
    pub global_to_shared_bytes: u64,
    /// Global bytes read to fill per-thread register copies.
    pub register_fill_bytes: u64,
    pub reg_hits: u64,
    pub shared_hits: u64,
    pub global_hits: u64,
    pub shared_to_reg_bytes: u64,
    /// Entry bytes served straight from global memory.
    pub global_access_bytes: u64,
}

impl CacheCounters {
    pub fn merge(&mut self, other: &CacheCounters) {
        self.loads += other.loads;
        self.global_to_shared_bytes += other.global_to_shared_bytes;
        self.register_fill_bytes += other.register_fill_bytes;
        self.reg_hits += other.reg_hits;
        self.shared_hits += other.shared_hits;
        self.global_hits += other.global_hits;
        self.shared_to_reg_bytes += other.shared_to_reg_bytes;
        self.global_access_bytes += other.global_access_bytes;
    }
}

/// A codebook placed by a [`CachePlan`] for one thread block.
#[derive(Debug, Clone)]
pub struct CachedCodebook<'a> {
    codebook: &'a Codebook,
    plan: CachePlan,
    threads: usize,
    shared_base: usize,
    counters: CacheCounters,
}

/// Places `codebook` according to `plan` and charges the load: the shared
/// span is copied from global memory once, register entries once per thread.
pub fn cache_load<'a>(
    codebook: &'a Codebook,
    plan: &CachePlan,
    model: &GpuModel,
    threads: usize,
) -> Result<CachedCodebook<'a>, CacheError> {
    if plan.entries != codebook.len() || plan.entry_bytes != codebook.vector_size() * 2 {
        return Err(CacheError::Plan(format!(
            "plan for {} entries of {} B does not match codebook with {} entries of {} B",
            plan.entries,
            plan.entry_bytes,
            codebook.len(),
            codebook.vector_size() * 2
        )));
    }
    if plan.shared_bytes() > model.max_shared_per_block {
        return Err(CacheError::Capacity(format!(
            "{} B of shared entries exceed the {} B block limit of {}",
            plan.shared_bytes(),
            model.max_shared_per_block,
            model.name
        )));
    }
    if plan.reg_bytes_per_thread() > model.max_regs_per_thread * 4 {
        return Err(CacheError::Capacity(format!(
            "{} B of register entries per thread exceed {} registers",
            plan.reg_bytes_per_thread(),
            model.max_regs_per_thread
        )));
    }
    let mut handle = CachedCodebook {
        codebook,
        plan: plan.clone(),
        threads,
        shared_base: 0,
        counters: CacheCounters::default(),
    };
    handle.charge_load();
    Ok(handle)
}

/// Entry values and the level they were served from.
pub fn cache_access<'h>(
    handle: &'h mut CachedCodebook<'_>,
    index: usize,
) -> Result<(&'h [f32], Level), CacheError> {
    handle.access(index)
}

/// Replaces the cached codebook and charges a full reload.
pub fn cache_switch<'a>(
    mut handle: CachedCodebook<'a>,
    new_codebook: &'a Codebook,
) -> Result<CachedCodebook<'a>, CacheError> {
    handle.switch(new_codebook)?;
    Ok(handle)
}

impl<'a> CachedCodebook<'a> {
    fn charge_load(&mut self) {
        self.counters.loads += 1;
        self.counters.global_to_shared_bytes += self.plan.shared_bytes() as u64;
        self.counters.register_fill_bytes +=
            (self.plan.reg_bytes_per_thread() * self.threads) as u64;
    }

    pub fn plan(&self) -> &CachePlan {
        &self.plan
    }

    pub fn codebook(&self) -> &'a Codebook {
        self.codebook
    }

    pub fn counters(&self) -> &CacheCounters {
        &self.counters
    }

    pub fn take_counters(&mut self) -> CacheCounters {
        std::mem::take(&mut self.counters)
    }

    /// Byte offset of the shared span inside the block's shared memory.
    pub fn set_shared_base(&mut self, base: usize) {
        self.shared_base = base;
    }

    pub fn boundaries(&self) -> (usize, usize) {
        (self.plan.n_reg, self.plan.n_shared)
    }

    #[inline]
    pub fn level(&self, index: usize) -> Level {
        self.plan.level(index)
    }

    /// Shared byte address of a shared-resident entry.
    #[inline]
    pub fn shared_address(&self, index: usize) -> usize {
        debug_assert_eq!(self.level(index), Level::Shared);
        self.shared_base + (index - self.plan.n_reg) * self.plan.entry_bytes
    }

    pub fn access(&mut self, index: usize) -> Result<(&[f32], Level), CacheError> {
        if index >= self.codebook.len() {
            return Err(CacheError::IndexOutOfRange {
                index,
                entries: self.codebook.len(),
            });
        }
        let level = self.record(index);
        Ok((self.codebook.entry(index), level))
    }

    /// Counts one access without returning the values.
    #[inline]
    pub fn record(&mut self, index: usize) -> Level {
        let level = self.plan.level(index);
        let bytes = self.plan.entry_bytes as u64;
        match level {
            Level::Register => self.counters.reg_hits += 1,
            Level::Shared => {
                self.counters.shared_hits += 1;
                self.counters.shared_to_reg_bytes += bytes;
            }
            Level::Global => {
                self.counters.global_hits += 1;
                self.counters.global_access_bytes += bytes;
            }
        }
        level
    }

    pub fn switch(&mut self, new_codebook: &'a Codebook) -> Result<(), CacheError> {
        if new_codebook.len() != self.codebook.len()
            || new_codebook.vector_size() != self.codebook.vector_size()
        {
            return Err(CacheError::Plan(format!(
                "cannot switch from {}x{} to {}x{} codebook",
                self.codebook.len(),
                self.codebook.vector_size(),
                new_codebook.len(),
                new_codebook.vector_size()
            )));
        }
        self.codebook = new_codebook;
        self.charge_load();
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn book(n: usize, vs: usize, tag: f32) -> Codebook {
        Codebook::new((0..n * vs).map(|i| i as f32 + tag).collect(), vs, 0, 0).unwrap()
    }

    fn rtx() -> GpuModel {
        GpuModel::load_from("rtx4090", None).unwrap()
    }

    #[test]
    fn load_charges_shared_span_and_register_copies() {
        let cb = book(256, 4, 0.0);
        let plan = CachePlan::new(8, 200, 256, 8).unwrap();
        let h = cache_load(&cb, &plan, &rtx(), 128).unwrap();
        assert_eq!(h.counters().global_to_shared_bytes, 192 * 8);
        assert_eq!(h.counters().register_fill_bytes, 8 * 8 * 128);
        assert_eq!(h.counters().loads, 1);
    }

    #[test]
    fn access_levels_follow_boundaries() {
        let cb = book(16, 2, 0.0);
        let plan = CachePlan::new(4, 10, 16, 4).unwrap();
        let mut h = cache_load(&cb, &plan, &rtx(), 32).unwrap();
        assert_eq!(
            cache_access(&mut h, 0).unwrap(),
            (&[0.0, 1.0][..], Level::Register)
        );
        assert_eq!(cache_access(&mut h, 4).unwrap().1, Level::Shared);
        assert_eq!(cache_access(&mut h, 10).unwrap().1, Level::Global);
        assert_eq!(cache_access(&mut h, 15).unwrap().1, Level::Global);
        assert!(cache_access(&mut h, 16).is_err());
        let c = h.counters();
        assert_eq!((c.reg_hits, c.shared_hits, c.global_hits), (1, 1, 2));
        assert_eq!(c.shared_to_reg_bytes, 4);
        assert_eq!(c.global_access_bytes, 8);
        assert_eq!(h.shared_address(4), 0);
        assert_eq!(h.shared_address(9), 20);
    }

    #[test]
    fn switches_reload_the_resident_span() {
        let a = book(64, 4, 0.0);
        let b = book(64, 4, 1.0);
        let plan = CachePlan::new(2, 40, 64, 8).unwrap();
        let mut h = cache_load(&a, &plan, &rtx(), 64).unwrap();
        let one = h.counters().global_to_shared_bytes + h.counters().register_fill_bytes;
        h = cache_switch(h, &a).unwrap();
        for _ in 0..3 {
            h = cache_switch(h, &b).unwrap();
        }
        let c = h.counters();
        assert_eq!(c.loads, 5);
        assert_eq!(c.global_to_shared_bytes + c.register_fill_bytes, 5 * one);
        assert_eq!(h.access(0).unwrap().0, &[1.0, 2.0, 3.0, 4.0]);
        assert!(cache_switch(h, &book(32, 4, 0.0)).is_err());
    }

    #[test]
    fn oversized_plan_rejected() {
        let cb = book(65536, 8, 0.0);
        let plan = CachePlan::new(0, 65536, 65536, 16).unwrap();
        assert!(matches!(
            cache_load(&cb, &plan, &rtx(), 128),
            Err(CacheError::Capacity(_))
        ));
    }
}
