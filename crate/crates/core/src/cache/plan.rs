use serde::{Deserialize, Serialize};

use super::{CacheError, Slack};
use crate::codec::Codebook;
use crate::profile::{AccessHistogram, EntryPermutation};

/// Where a codebook entry lives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Register,
    Shared,
    Global,
}

/// Placement of entry `index` under the boundaries `n_reg <= n_shared`.
#[inline]
pub fn level_of(index: usize, n_reg: usize, n_shared: usize) -> Level {
    if index < n_reg {
        Level::Register
    } else if index < n_shared {
        Level::Shared
    } else {
        Level::Global
    }
}

/// Three-level placement of a frequency-ordered codebook: entries
/// `[0, n_reg)` in registers, `[n_reg, n_shared)` in shared memory, the rest
/// in global memory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CachePlan {
    pub n_reg: usize,
    pub n_shared: usize,
    pub entries: usize,
    pub entry_bytes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perm: Option<EntryPermutation>,
}

impl CachePlan {
    pub fn new(
        n_reg: usize,
        n_shared: usize,
        entries: usize,
        entry_bytes: usize,
    ) -> Result<Self, CacheError> {
        if n_reg > n_shared || n_shared > entries {
            return Err(CacheError::Plan(format!(
                "boundaries must satisfy 0 <= n_reg ({n_reg}) <= n_shared ({n_shared}) <= entries ({entries})"
            )));
        }
        Ok(Self {
            n_reg,
            n_shared,
            entries,
            entry_bytes,
            perm: None,
        })
    }

    /// Everything in global memory.
    pub fn all_global(entries: usize, entry_bytes: usize) -> Self {
        Self::new(0, 0, entries, entry_bytes).expect("valid")
    }

    /// Boundaries from resource slack.
    pub fn from_slack(entries: usize, entry_bytes: usize, slack: &Slack) -> Self {
        let n_reg = (slack.reg_bytes_per_thread / entry_bytes).min(entries);
        let n_shared = (n_reg + slack.shared_bytes / entry_bytes).min(entries);
        Self::new(n_reg, n_shared, entries, entry_bytes).expect("clamped boundaries")
    }

    pub fn with_perm(mut self, perm: EntryPermutation) -> Self {
        self.perm = Some(perm);
        self
    }

    #[inline]
    pub fn level(&self, index: usize) -> Level {
        level_of(index, self.n_reg, self.n_shared)
    }

    pub fn shared_entries(&self) -> usize {
        self.n_shared - self.n_reg
    }

    /// Shared bytes one resident codebook occupies.
    pub fn shared_bytes(&self) -> usize {
        self.shared_entries() * self.entry_bytes
    }

    /// Register bytes per thread.
    pub fn reg_bytes_per_thread(&self) -> usize {
        self.n_reg * self.entry_bytes
    }

    /// Whether this plan fits in `slack`.
    pub fn fits(&self, slack: &Slack) -> bool {
        self.reg_bytes_per_thread() <= slack.reg_bytes_per_thread
            && self.shared_bytes() <= slack.shared_bytes
    }
}

/// Boundaries for a frequency-reordered codebook.
///
/// `histogram` is only consulted to warn when the codebook does not look
/// reordered; the boundaries follow from the slack alone.
pub fn plan_cache(
    codebook: &Codebook,
    histogram: Option<&AccessHistogram>,
    slack: &Slack,
) -> CachePlan {
    if let Some(h) = histogram {
        if h.counts().windows(2).any(|w| w[0] < w[1]) {
            log::warn!("planning a cache for a codebook that is not frequency-ordered");
        }
    }
    CachePlan::from_slack(codebook.len(), codebook.vector_size() * 2, slack)
}
