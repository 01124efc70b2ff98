use std::io::Write;

use serde::{Deserialize, Serialize};

/// Bumped whenever a field is renamed or its meaning changes.
pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Counters of one simulated kernel. Byte counts are codebook or staging
/// traffic; dequantized values count 2 bytes each.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub schema_version: u32,
    /// Variant label (`GC`, `SC`, `O1`..`O4`, `FP16` or `custom`).
    pub variant: String,
    pub op: String,
    pub model: String,
    pub bank_conflicts: u64,
    pub global_to_shared_bytes: u64,
    /// Codebook entries read from shared memory plus staged dequantized data.
    pub shared_to_reg_bytes: u64,
    /// Codebook bytes read straight from global memory, register fills
    /// included.
    pub global_bytes: u64,
    /// Resident blocks per SM.
    pub occupancy: u64,
    /// Partial outputs written for a global reduction over switch axes.
    pub reduce_bytes: u64,
    /// Token quantizations needed to append to a quantized KV cache.
    pub quant_invocations: u64,
    pub extras: SimExtras,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimExtras {
    /// Dequantized data relayed through shared memory for fusion.
    pub dequant_staging_bytes: u64,
    pub staging_bank_conflicts: u64,
    pub codebook_bank_conflicts: u64,
    /// Warp-wide shuffle instructions.
    pub shuffles: u64,
    pub codebook_loads: u64,
    pub reg_hits: u64,
    pub shared_hits: u64,
    pub global_hits: u64,
    /// Partials merged outside a switch-axis reduction (token chunks of a
    /// decode step).
    pub combine_bytes: u64,
    pub blocks: u64,
    pub split_factor: u64,
    pub n_reg: u64,
    pub n_shared: u64,
}

/// CSV columns, in order.
pub const CSV_COLUMNS: [&str; 23] = [
    "variant",
    "op",
    "model",
    "occupancy",
    "bank_conflicts",
    "global_to_shared_bytes",
    "shared_to_reg_bytes",
    "global_bytes",
    "reduce_bytes",
    "quant_invocations",
    "dequant_staging_bytes",
    "staging_bank_conflicts",
    "codebook_bank_conflicts",
    "shuffles",
    "codebook_loads",
    "reg_hits",
    "shared_hits",
    "global_hits",
    "combine_bytes",
    "blocks",
    "split_factor",
    "n_reg",
    "n_shared",
];

impl SimReport {
    pub fn new(variant: &str, op: &str, model: &str) -> Self {
        Self {
            schema_version: REPORT_SCHEMA_VERSION,
            variant: variant.into(),
            op: op.into(),
            model: model.into(),
            ..Self::default()
        }
    }

    /// Adds the additive counters of `other`; occupancy and plan parameters
    /// are kept.
    pub fn merge(&mut self, other: &SimReport) {
        self.bank_conflicts += other.bank_conflicts;
        self.global_to_shared_bytes += other.global_to_shared_bytes;
        self.shared_to_reg_bytes += other.shared_to_reg_bytes;
        self.global_bytes += other.global_bytes;
        self.reduce_bytes += other.reduce_bytes;
        self.quant_invocations += other.quant_invocations;
        let (e, o) = (&mut self.extras, &other.extras);
        e.dequant_staging_bytes += o.dequant_staging_bytes;
        e.staging_bank_conflicts += o.staging_bank_conflicts;
        e.codebook_bank_conflicts += o.codebook_bank_conflicts;
        e.shuffles += o.shuffles;
        e.codebook_loads += o.codebook_loads;
        e.reg_hits += o.reg_hits;
        e.shared_hits += o.shared_hits;
        e.global_hits += o.global_hits;
        e.combine_bytes += o.combine_bytes;
        e.blocks += o.blocks;
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize")
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }

    fn csv_record(&self) -> Vec<String> {
        let e = &self.extras;
        let mut row = vec![self.variant.clone(), self.op.clone(), self.model.clone()];
        row.extend(
            [
                self.occupancy,
                self.bank_conflicts,
                self.global_to_shared_bytes,
                self.shared_to_reg_bytes,
                self.global_bytes,
                self.reduce_bytes,
                self.quant_invocations,
                e.dequant_staging_bytes,
                e.staging_bank_conflicts,
                e.codebook_bank_conflicts,
                e.shuffles,
                e.codebook_loads,
                e.reg_hits,
                e.shared_hits,
                e.global_hits,
                e.combine_bytes,
                e.blocks,
                e.split_factor,
                e.n_reg,
                e.n_shared,
            ]
            .iter()
            .map(u64::to_string),
        );
        row
    }

    /// Writes `reports` as CSV with the [`CSV_COLUMNS`] header.
    pub fn write_csv<W: Write>(reports: &[SimReport], w: W) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(CSV_COLUMNS)?;
        for r in reports {
            out.write_record(r.csv_record())?;
        }
        out.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip() {
        let mut r = SimReport::new("O4", "attn-decode", "rtx4090");
        r.bank_conflicts = 7;
        r.extras.shuffles = 3;
        let back = SimReport::from_json(&r.to_json()).unwrap();
        assert_eq!(back, r);
        assert_eq!(back.schema_version, REPORT_SCHEMA_VERSION);
    }

    #[test]
    fn merge_adds_counters() {
        let mut a = SimReport::new("GC", "gemv", "a40");
        a.global_bytes = 10;
        a.occupancy = 4;
        let mut b = a.clone();
        b.occupancy = 9;
        a.merge(&b);
        assert_eq!(a.global_bytes, 20);
        assert_eq!(a.occupancy, 4);
    }

    #[test]
    fn csv_has_fixed_columns() {
        let mut buf = Vec::new();
        SimReport::write_csv(&[SimReport::new("SC", "gemm", "rtx4090")], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), CSV_COLUMNS.join(","));
        assert_eq!(lines.next().unwrap().split(',').count(), CSV_COLUMNS.len());
    }
}
