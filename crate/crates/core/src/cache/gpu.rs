use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::CacheError;

/// Per-SM resource limits of a GPU.
///
/// Occupancy is derived from these limits the way CUDA's occupancy
/// calculator does it, which yields a piecewise-constant table in each
/// resource.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GpuModel {
    pub name: String,
    #[serde(default = "default_sm_count")]
    pub sm_count: usize,
    #[serde(default = "default_32")]
    pub warp_size: usize,
    #[serde(default = "default_32")]
    pub banks: usize,
    #[serde(default = "default_4")]
    pub bank_width: usize,
    pub shared_per_sm: usize,
    pub max_shared_per_block: usize,
    #[serde(default = "default_1k")]
    pub shared_granularity: usize,
    #[serde(default = "default_1k")]
    pub reserved_shared_per_block: usize,
    /// 4-byte registers.
    pub regs_per_sm: usize,
    /// Registers are allocated per warp in multiples of this.
    #[serde(default = "default_256")]
    pub reg_granularity: usize,
    #[serde(default = "default_255")]
    pub max_regs_per_thread: usize,
    pub max_threads_per_sm: usize,
    #[serde(default = "default_1024")]
    pub max_threads_per_block: usize,
    pub max_blocks_per_sm: usize,
}

fn default_sm_count() -> usize {
    1
}
fn default_32() -> usize {
    32
}
fn default_4() -> usize {
    4
}
fn default_1k() -> usize {
    1024
}
fn default_256() -> usize {
    256
}
fn default_255() -> usize {
    255
}
fn default_1024() -> usize {
    1024
}

/// Resources one thread block of a kernel asks for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KernelUsage {
    pub shared_bytes: usize,
    pub regs_per_thread: usize,
    pub threads_per_block: usize,
}

impl KernelUsage {
    pub fn new(shared_bytes: usize, regs_per_thread: usize, threads_per_block: usize) -> Self {
        Self {
            shared_bytes,
            regs_per_thread,
            threads_per_block,
        }
    }
}

const BUILTIN_MODELS: [(&str, &str); 2] = [
    ("rtx4090", include_str!("../../../../models/rtx4090.toml")),
    ("a40", include_str!("../../../../models/a40.toml")),
];

pub const MODEL_DIR_ENV: &str = "FORGE_MODEL_DIR";

impl GpuModel {
    pub fn from_toml_str(text: &str) -> Result<Self, CacheError> {
        let model: GpuModel = toml::from_str(text).map_err(|e| CacheError::Model(e.to_string()))?;
        model.validate()?;
        Ok(model)
    }

    pub fn from_file(path: &Path) -> Result<Self, CacheError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CacheError::Model(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    /// Looks the model up in `$FORGE_MODEL_DIR/<name>.toml` first, then among
    /// the built-in files. A path to a `.toml` file is accepted as well.
    pub fn load(name: &str) -> Result<Self, CacheError> {
        Self::load_from(name, std::env::var_os(MODEL_DIR_ENV).map(PathBuf::from))
    }

    pub fn load_from(name: &str, dir: Option<PathBuf>) -> Result<Self, CacheError> {
        if name.ends_with(".toml") {
            return Self::from_file(Path::new(name));
        }
        if let Some(dir) = dir {
            let path = dir.join(format!("{name}.toml"));
            if path.is_file() {
                return Self::from_file(&path);
            }
        }
        BUILTIN_MODELS
            .iter()
            .find(|(n, _)| n.eq_ignore_ascii_case(name))
            .map(|(_, text)| Self::from_toml_str(text))
            .unwrap_or_else(|| {
                Err(CacheError::Model(format!(
                    "unknown GPU model '{name}' (built-ins: rtx4090, a40; or set {MODEL_DIR_ENV})"
                )))
            })
    }

    pub fn builtin() -> Vec<Self> {
        BUILTIN_MODELS
            .iter()
            .map(|(_, text)| Self::from_toml_str(text).expect("built-in model"))
            .collect()
    }

    pub fn validate(&self) -> Result<(), CacheError> {
        let positive = [
            ("warp_size", self.warp_size),
            ("banks", self.banks),
            ("bank_width", self.bank_width),
            ("shared_granularity", self.shared_granularity),
            ("regs_per_sm", self.regs_per_sm),
            ("reg_granularity", self.reg_granularity),
            ("max_regs_per_thread", self.max_regs_per_thread),
            ("max_threads_per_sm", self.max_threads_per_sm),
            ("max_threads_per_block", self.max_threads_per_block),
            ("max_blocks_per_sm", self.max_blocks_per_sm),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(CacheError::Model(format!("{field} must be positive")));
            }
        }
        if self.max_shared_per_block > self.shared_per_sm {
            return Err(CacheError::Model(
                "max_shared_per_block exceeds shared_per_sm".into(),
            ));
        }
        Ok(())
    }

    fn shared_alloc(&self, shared_bytes: usize) -> usize {
        (shared_bytes + self.reserved_shared_per_block).next_multiple_of(self.shared_granularity)
    }

    fn regs_per_block(&self, usage: &KernelUsage) -> usize {
        let warps = usage.threads_per_block.div_ceil(self.warp_size);
        let per_warp =
            (usage.regs_per_thread * self.warp_size).next_multiple_of(self.reg_granularity);
        warps * per_warp
    }

    /// Resident blocks per SM; 0 when the block cannot launch at all.
    pub fn occupancy(&self, usage: &KernelUsage) -> usize {
        if usage.threads_per_block == 0
            || usage.threads_per_block > self.max_threads_per_block
            || usage.shared_bytes > self.max_shared_per_block
            || usage.regs_per_thread > self.max_regs_per_thread
        {
            return 0;
        }
        let warps = usage.threads_per_block.div_ceil(self.warp_size);
        let by_threads = self.max_threads_per_sm / (warps * self.warp_size);
        let by_shared = self.shared_per_sm / self.shared_alloc(usage.shared_bytes);
        let by_regs = match self.regs_per_block(usage) {
            0 => usize::MAX,
            r => self.regs_per_sm / r,
        };
        by_threads
            .min(by_shared)
            .min(by_regs)
            .min(self.max_blocks_per_sm)
    }

    /// Distinct occupancy steps along the shared-memory axis for fixed
    /// registers and threads: `(first shared byte count, blocks per SM)`.
    pub fn shared_steps(&self, regs_per_thread: usize, threads: usize) -> Vec<(usize, usize)> {
        let mut steps = Vec::new();
        let mut last = usize::MAX;
        let mut bytes = 0;
        while bytes <= self.max_shared_per_block {
            let occ = self.occupancy(&KernelUsage::new(bytes, regs_per_thread, threads));
            if occ != last {
                steps.push((bytes, occ));
                last = occ;
            }
            bytes += self.shared_granularity;
        }
        steps
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rtx() -> GpuModel {
        GpuModel::load_from("rtx4090", None).unwrap()
    }

    #[test]
    fn builtins_load() {
        let models = GpuModel::builtin();
        assert_eq!(models.len(), 2);
        assert_eq!(rtx().max_blocks_per_sm, 24);
        assert_eq!(
            GpuModel::load_from("A40", None).unwrap().max_blocks_per_sm,
            16
        );
        assert!(GpuModel::load_from("h100", None).is_err());
    }

    #[test]
    fn model_dir_overrides_builtins() {
        let dir = std::env::temp_dir().join(format!("forge-models-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let text = include_str!("../../../../models/rtx4090.toml")
            .replace("max_blocks_per_sm = 24", "max_blocks_per_sm = 1");
        std::fs::write(dir.join("rtx4090.toml"), text).unwrap();
        let m = GpuModel::load_from("rtx4090", Some(dir.clone())).unwrap();
        assert_eq!(m.max_blocks_per_sm, 1);
        std::fs::remove_dir_all(dir).unwrap();
    }

    #[test]
    fn occupancy_limits() {
        let m = rtx();
        // 256 threads, 96 regs: 8 warps x 3072 regs = 24576 per block -> 2.
        assert_eq!(m.occupancy(&KernelUsage::new(32 << 10, 96, 256)), 2);
        // 128 threads, 24 regs: thread-limited at 12.
        assert_eq!(m.occupancy(&KernelUsage::new(5 << 10, 24, 128)), 12);
        // 32 KB + 1 KB reserve = 33 KB -> 3 blocks in 100 KB, 34 KB -> 2.
        assert_eq!(m.occupancy(&KernelUsage::new(32 << 10, 16, 64)), 3);
        assert_eq!(m.occupancy(&KernelUsage::new(33 << 10, 16, 64)), 2);
        assert_eq!(m.occupancy(&KernelUsage::new(100 << 10, 16, 64)), 0);
        assert_eq!(m.occupancy(&KernelUsage::new(0, 256, 64)), 0);
    }

    #[test]
    fn occupancy_is_monotone_in_each_resource() {
        let m = rtx();
        for threads in [32, 64, 128, 256, 512, 1024] {
            for regs in (8..=255).step_by(7) {
                let mut prev = usize::MAX;
                for shared in (0..=m.max_shared_per_block).step_by(512) {
                    let o = m.occupancy(&KernelUsage::new(shared, regs, threads));
                    assert!(o <= prev);
                    prev = o;
                }
            }
            for shared in (0..=m.max_shared_per_block).step_by(4096) {
                let mut prev = usize::MAX;
                for regs in 1..=255 {
                    let o = m.occupancy(&KernelUsage::new(shared, regs, threads));
                    assert!(o <= prev);
                    prev = o;
                }
            }
        }
    }

    #[test]
    fn shared_steps_are_decreasing() {
        let steps = rtx().shared_steps(24, 128);
        assert_eq!(steps[0], (0, 12));
        assert!(steps.windows(2).all(|w| w[0].1 > w[1].1));
        assert_eq!(steps.last().unwrap().1, 1);
    }
}
