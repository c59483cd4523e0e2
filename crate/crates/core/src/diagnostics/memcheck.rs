use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::memory::codec::{parse, BANK_HEADER_LEN};
use crate::memory::{
    deserialize_with, record_size, serialize, BankConfig, FeatureRecord, MemoryBank, METADATA_BYTES, VALUE_BYTES,
};

/// One failed invariant. `record` is the position in wire order (short-term
/// records first).
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub record: Option<usize>,
    pub offset: Option<usize>,
    pub message: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if let Some(i) = self.record {
            write!(f, "record {i}: ")?;
        }
        if let Some(o) = self.offset {
            write!(f, "byte offset {o}: ")?;
        }
        f.write_str(&self.message)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemcheckReport {
    pub code_dim: usize,
    pub record_size: usize,
    pub stm_records: usize,
    pub ltm_records: usize,
    pub stm_capacity: usize,
    pub ltm_capacity: usize,
    pub budget_bytes: usize,
    pub file_bytes: usize,
    pub violations: Vec<Violation>,
}

impl MemcheckReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn records(&self) -> usize {
        self.stm_records + self.ltm_records
    }

    /// Payload bytes, header excluded.
    pub fn total_bytes(&self) -> usize {
        self.records() * self.record_size
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("field            bytes\n");
        for (name, bytes) in byte_layout(self.code_dim) {
            let _ = writeln!(s, "{name:<16} {bytes:>5}");
        }
        let _ = writeln!(s, "{:<16} {:>5}\n", "record", self.record_size);
        let rows = [
            ("short-term", self.stm_records, self.stm_capacity),
            ("long-term", self.ltm_records, self.ltm_capacity),
        ];
        let _ = writeln!(s, "store        records  capacity       bytes");
        for (name, n, cap) in rows {
            let _ = writeln!(s, "{name:<12} {n:>7} {cap:>9} {:>11}", n * self.record_size);
        }
        let _ = writeln!(
            s,
            "{:<12} {:>7} {:>9} {:>11}",
            "total",
            self.records(),
            "",
            self.total_bytes()
        );
        let _ = writeln!(
            s,
            "budget {} bytes ({} records), headroom {} bytes",
            self.budget_bytes,
            self.budget_bytes / self.record_size,
            self.budget_bytes as i64 - self.total_bytes() as i64
        );
        let _ = writeln!(s, "file {} bytes ({BANK_HEADER_LEN}-byte header)", self.file_bytes);
        for v in &self.violations {
            let _ = writeln!(s, "VIOLATION {v}");
        }
        s.push_str(if self.passed() { "PASS\n" } else { "FAIL\n" });
        s
    }
}

/// Wire layout of one record as `(field, bytes)`.
pub fn byte_layout(code_dim: usize) -> Vec<(String, usize)> {
    vec![
        (format!("code (f32 x {code_dim})"), code_dim * VALUE_BYTES),
        ("class id".into(), 4),
        ("box".into(), 16),
        ("task id".into(), 4),
        ("importance".into(), 4),
        ("uncertainty".into(), 4),
        ("difficulty".into(), 4),
        ("age".into(), 4),
        ("reserved".into(), 8),
    ]
}

/// Checks a bank file against `config` (whose code dim is taken from the file).
pub fn memcheck_bytes(bytes: &[u8], config: BankConfig) -> MemcheckReport {
    let mut report = MemcheckReport {
        code_dim: config.code_dim,
        record_size: record_size(config.code_dim),
        stm_records: 0,
        ltm_records: 0,
        stm_capacity: config.stm_capacity,
        ltm_capacity: config.ltm_capacity,
        budget_bytes: config.budget_bytes,
        file_bytes: bytes.len(),
        violations: Vec::new(),
    };
    let file = match parse(bytes) {
        Ok(f) => f,
        Err(Error::Decode { offset, reason }) => {
            let record = offset.checked_sub(BANK_HEADER_LEN).and_then(|o| {
                let size = header_record_size(bytes)?;
                Some(o / size)
            });
            report.violations.push(Violation {
                record,
                offset: Some(offset),
                message: reason,
            });
            return report;
        }
        Err(e) => {
            report.violations.push(Violation {
                record: None,
                offset: None,
                message: e.to_string(),
            });
            return report;
        }
    };
    let size = record_size(file.code_dim);
    report.code_dim = file.code_dim;
    report.record_size = size;
    report.stm_records = file.stm.len();
    report.ltm_records = file.ltm.len();
    let v = &mut report.violations;

    let layout: usize = byte_layout(file.code_dim).iter().map(|(_, b)| b).sum();
    if layout != size || size != file.code_dim * VALUE_BYTES + METADATA_BYTES {
        v.push(Violation {
            record: None,
            offset: None,
            message: format!("layout sums to {layout}, record size is {size}"),
        });
    }
    for (i, r) in file.stm.iter().chain(&file.ltm).enumerate() {
        let mut wire = Vec::with_capacity(size);
        r.write_to(&mut wire);
        if wire.len() != size {
            v.push(Violation {
                record: Some(i),
                offset: Some(file.record_offset(i)),
                message: format!("serialises to {} bytes, expected {size}", wire.len()),
            });
        }
    }
    if file.stm.len() > config.stm_capacity {
        let i = config.stm_capacity;
        v.push(Violation {
            record: Some(i),
            offset: Some(file.record_offset(i)),
            message: format!(
                "short-term store holds {} records, capacity {}",
                file.stm.len(),
                config.stm_capacity
            ),
        });
    }
    if file.ltm.len() > config.ltm_capacity {
        let i = file.stm.len() + config.ltm_capacity;
        v.push(Violation {
            record: Some(i),
            offset: Some(file.record_offset(i)),
            message: format!(
                "long-term store holds {} records, capacity {}",
                file.ltm.len(),
                config.ltm_capacity
            ),
        });
    }
    let total = report.stm_records + report.ltm_records;
    if total * size > config.budget_bytes {
        let i = config.budget_bytes / size;
        v.push(Violation {
            record: Some(i),
            offset: Some(file.record_offset(i)),
            message: format!(
                "{} payload bytes exceed the {}-byte budget",
                total * size,
                config.budget_bytes
            ),
        });
    }
    if let Some(i) = file.ltm.windows(2).position(|w| w[0].importance < w[1].importance) {
        let i = file.stm.len() + i + 1;
        v.push(Violation {
            record: Some(i),
            offset: Some(file.record_offset(i)),
            message: "long-term store is not in descending importance".into(),
        });
    }
    if v.is_empty() {
        match deserialize_with(bytes, config) {
            Ok(bank) => {
                let again = serialize(&bank);
                if again != bytes {
                    let offset = again
                        .iter()
                        .zip(bytes)
                        .position(|(a, b)| a != b)
                        .unwrap_or(again.len().min(bytes.len()));
                    v.push(Violation {
                        record: offset.checked_sub(BANK_HEADER_LEN).map(|o| o / size),
                        offset: Some(offset),
                        message: "round trip is not bit-exact".into(),
                    });
                }
            }
            Err(e) => v.push(Violation {
                record: None,
                offset: None,
                message: e.to_string(),
            }),
        }
    }
    report
}

fn header_record_size(bytes: &[u8]) -> Option<usize> {
    let d = u32::from_le_bytes(bytes.get(8..12)?.try_into().ok()?) as usize;
    (d > 0).then(|| record_size(d))
}

/// Serialises `bank` and checks the result against its own configuration.
pub fn memcheck_bank(bank: &MemoryBank) -> MemcheckReport {
    memcheck_bytes(&serialize(bank), *bank.config())
}

/// Fills a bank with `inserts` random records, consolidating every hundred
/// inserts so both stores fill up. The budget caps what survives.
pub fn synthetic_bank(config: BankConfig, inserts: usize, seed: u64) -> Result<MemoryBank> {
    let mut bank = MemoryBank::new(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..inserts {
        let code = (0..config.code_dim).map(|_| rng.random_range(-3.0f32..3.0)).collect();
        let r = FeatureRecord::new(
            code,
            rng.random_range(0..10),
            (i / 500) as u32,
            rng.random(),
            rng.random(),
        );
        bank.stm_insert(r)?;
        bank.tick_age();
        if i % 100 == 99 {
            bank.consolidate();
        }
    }
    Ok(bank)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn saturated_default_bank() {
        let bank = synthetic_bank(BankConfig::default(), 3000, 0).unwrap();
        let r = memcheck_bank(&bank);
        assert!(r.passed(), "{}", r.to_text());
        assert_eq!(r.record_size, 88);
        assert_eq!(r.records(), 1163);
        assert_eq!(r.total_bytes(), 102_344);
        assert!(r.ltm_records > 0 && r.stm_records > 0);
        assert!(r.to_text().contains("record              88"));
    }

    #[test]
    fn truncation_names_offset_and_record() {
        let bytes = serialize(&synthetic_bank(BankConfig::default(), 50, 1).unwrap());
        let cut = 20 + 88 * 7 + 30;
        let r = memcheck_bytes(&bytes[..cut], BankConfig::default());
        assert!(!r.passed());
        assert_eq!(r.violations[0].offset, Some(cut));
        assert_eq!(r.violations[0].record, Some(7));
    }

    #[test]
    fn bad_field_names_record() {
        let mut bytes = serialize(&synthetic_bank(BankConfig::default(), 50, 2).unwrap());
        // Uncertainty of record 3.
        let at = 20 + 88 * 3 + 40 + 28;
        bytes[at..at + 4].copy_from_slice(&2.0f32.to_le_bytes());
        let r = memcheck_bytes(&bytes, BankConfig::default());
        assert_eq!(r.violations[0].record, Some(3));
        assert_eq!(r.violations[0].offset, Some(at));
    }

    #[test]
    fn capacity_and_budget_breaches() {
        let bytes = serialize(&synthetic_bank(BankConfig::default(), 50, 3).unwrap());
        let tight = BankConfig {
            stm_capacity: 10,
            budget_bytes: 88 * 20,
            ..Default::default()
        };
        let r = memcheck_bytes(&bytes, tight);
        let records: Vec<_> = r.violations.iter().map(|v| v.record).collect();
        assert!(
            records.contains(&Some(10)) && records.contains(&Some(20)),
            "{:?}",
            r.violations
        );
    }

    #[test]
    fn ltm_order_is_checked() {
        let bank = synthetic_bank(BankConfig::default(), 400, 4).unwrap();
        assert!(bank.ltm_len() >= 2);
        let mut bytes = serialize(&bank);
        let first = 20 + 88 * bank.stm_len();
        let (a, b) = bytes[first..].split_at_mut(88);
        a.swap_with_slice(&mut b[..88]);
        let r = memcheck_bytes(&bytes, BankConfig::default());
        assert!(!r.passed());
    }
}
