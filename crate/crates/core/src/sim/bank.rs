//! Shared-memory bank model: 32 banks of 4-byte words. Lanes of one warp
//! access that touch distinct words in the same bank serialize; lanes that
//! read the same word are served by one broadcast.

use super::SimError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BankModel {
    pub banks: usize,
    pub bank_width: usize,
}

impl Default for BankModel {
    fn default() -> Self {
        Self {
            banks: 32,
            bank_width: 4,
        }
    }
}

impl BankModel {
    pub fn new(banks: usize, bank_width: usize) -> Self {
        assert!(banks > 0 && banks <= 64 && bank_width > 0);
        Self { banks, bank_width }
    }

    /// Extra serialized wavefronts of one warp access given the word indices
    /// the active lanes touch: for every bank, distinct words minus one.
    pub fn conflicts_of_words(&self, words: &[usize]) -> u64 {
        let mut sorted = [0usize; 64];
        let n = words.len().min(64);
        sorted[..n].copy_from_slice(&words[..n]);
        let sorted = &mut sorted[..n];
        sorted.sort_unstable();
        let mut per_bank = [0u32; 64];
        let mut prev = None;
        for &w in sorted.iter() {
            if prev != Some(w) {
                per_bank[w % self.banks] += 1;
                prev = Some(w);
            }
        }
        per_bank[..self.banks]
            .iter()
            .map(|&c| u64::from(c.saturating_sub(1)))
            .sum()
    }

    /// Conflicts of one warp access to byte addresses within `span` bytes.
    pub fn simulate_warp_access(&self, addresses: &[usize], span: usize) -> Result<u64, SimError> {
        if addresses.len() > 64 {
            return Err(SimError::Access(format!(
                "{} lanes in one access",
                addresses.len()
            )));
        }
        if let Some(&a) = addresses.iter().find(|&&a| a >= span) {
            return Err(SimError::Access(format!(
                "shared address {a} outside the {span}-byte span"
            )));
        }
        let words: Vec<usize> = addresses.iter().map(|a| a / self.bank_width).collect();
        Ok(self.conflicts_of_words(&words))
    }

    /// Conflicts of lanes reading whole entries of `entry_bytes` starting at
    /// the given byte addresses, one access per word of the entry.
    pub fn entry_access_conflicts(&self, starts: &[usize], entry_bytes: usize) -> u64 {
        let words_per_entry = entry_bytes.div_ceil(self.bank_width);
        let mut words = [0usize; 64];
        let mut total = 0;
        for w in 0..words_per_entry {
            for (slot, &s) in words.iter_mut().zip(starts) {
                *slot = s / self.bank_width + w;
            }
            total += self.conflicts_of_words(&words[..starts.len()]);
        }
        total
    }
}

/// Bank conflicts of an index stream read a warp (32 indices) at a time from
/// a codebook whose entries `[n_reg, n_shared)` sit contiguously in shared
/// memory; register and global hits do not touch banks.
pub fn stream_conflicts(
    stream: &[u32],
    n_reg: usize,
    n_shared: usize,
    entry_bytes: usize,
    banks: &BankModel,
) -> u64 {
    let mut starts = Vec::with_capacity(32);
    let mut total = 0;
    for warp in stream.chunks(32) {
        starts.clear();
        for &i in warp {
            let i = i as usize;
            if i >= n_reg && i < n_shared {
                starts.push((i - n_reg) * entry_bytes);
            }
        }
        total += banks.entry_access_conflicts(&starts, entry_bytes);
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcast_is_free() {
        let b = BankModel::default();
        assert_eq!(b.simulate_warp_access(&[128; 32], 4096).unwrap(), 0);
    }

    #[test]
    fn consecutive_words_are_free() {
        let b = BankModel::default();
        let a: Vec<usize> = (0..32).map(|i| i * 4).collect();
        assert_eq!(b.simulate_warp_access(&a, 4096).unwrap(), 0);
    }

    #[test]
    fn same_bank_stride_serializes() {
        let b = BankModel::default();
        let a: Vec<usize> = (0..32).map(|i| i * 128).collect();
        assert_eq!(b.simulate_warp_access(&a, 4096).unwrap(), 31);
    }

    #[test]
    fn out_of_span_rejected() {
        let b = BankModel::default();
        assert!(b.simulate_warp_access(&[0, 4096], 4096).is_err());
    }

    #[test]
    fn multi_word_entries_touch_several_banks() {
        let b = BankModel::default();
        // Entries of 16 bytes: lanes 0 and 8 read entries 0 and 8, which
        // share banks 0..4 in different rows: one conflict per word.
        assert_eq!(b.entry_access_conflicts(&[0, 128], 16), 4);
        // 8 consecutive 16-byte entries cover all 32 banks exactly once.
        let starts: Vec<usize> = (0..8).map(|i| i * 16).collect();
        assert_eq!(b.entry_access_conflicts(&starts, 16), 0);
    }

    #[test]
    fn register_hits_skip_banks() {
        let b = BankModel::default();
        let stream = vec![0u32, 32, 64, 96];
        // With 4-byte entries all four map to bank 0.
        assert_eq!(stream_conflicts(&stream, 0, 128, 4, &b), 3);
        // Entry 0 moves to a register; the other three shift to bank 31
        // together.
        assert_eq!(stream_conflicts(&stream, 1, 128, 4, &b), 2);
        assert_eq!(stream_conflicts(&stream, 1, 1, 4, &b), 0);
    }
}
