//! Bank file format (little-endian):
//!
//! ```text
//! offset  size  field
//! 0       4     magic "AHCM"
//! 4       4     version (u32) = 1
//! 8       4     code dim d (u32)
//! 12      4     short-term record count (u32)
//! 16      4     long-term record count (u32)
//! 20      ...   short-term records, oldest first
//!         ...   long-term records, descending importance
//! ```
//!
//! Each record is `4·d + 48` bytes: codes, class id, box, task id,
//! importance, uncertainty, difficulty, age, eight zero bytes.

use crate::error::{Error, Result};

use super::bank::{BankConfig, MemoryBank};
use super::record::{record_size, FeatureRecord};

pub const BANK_MAGIC: &[u8; 4] = b"AHCM";
pub const BANK_VERSION: u32 = 1;
pub const BANK_HEADER_LEN: usize = 20;

pub fn serialize(bank: &MemoryBank) -> Vec<u8> {
    let mut out = Vec::with_capacity(BANK_HEADER_LEN + bank.memory_bytes());
    out.extend_from_slice(BANK_MAGIC);
    out.extend_from_slice(&BANK_VERSION.to_le_bytes());
    out.extend_from_slice(&(bank.config().code_dim as u32).to_le_bytes());
    out.extend_from_slice(&(bank.stm_len() as u32).to_le_bytes());
    out.extend_from_slice(&(bank.ltm_len() as u32).to_le_bytes());
    for r in bank.records() {
        r.write_to(&mut out);
    }
    out
}

/// A bank file parsed at the format level only.
#[derive(Debug, Clone, PartialEq)]
pub struct BankFile {
    pub code_dim: usize,
    pub stm: Vec<FeatureRecord>,
    pub ltm: Vec<FeatureRecord>,
}

impl BankFile {
    /// Byte offset of the `i`-th record in the file (short-term first).
    pub fn record_offset(&self, i: usize) -> usize {
        BANK_HEADER_LEN + i * record_size(self.code_dim)
    }
}

pub fn parse(bytes: &[u8]) -> Result<BankFile> {
    if bytes.len() < BANK_HEADER_LEN {
        return Err(Error::Decode {
            offset: bytes.len(),
            reason: format!("truncated header ({} of {BANK_HEADER_LEN} bytes)", bytes.len()),
        });
    }
    if &bytes[0..4] != BANK_MAGIC {
        return Err(Error::Decode {
            offset: 0,
            reason: format!("bad magic {:?}", String::from_utf8_lossy(&bytes[0..4])),
        });
    }
    let word = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    if word(4) != BANK_VERSION {
        return Err(Error::Decode {
            offset: 4,
            reason: format!("unsupported version {}", word(4)),
        });
    }
    let code_dim = word(8) as usize;
    if code_dim == 0 {
        return Err(Error::Decode {
            offset: 8,
            reason: "code dim must be positive".into(),
        });
    }
    let (n_stm, n_ltm) = (word(12) as usize, word(16) as usize);
    let size = record_size(code_dim);
    let expected = BANK_HEADER_LEN + (n_stm + n_ltm) * size;
    if bytes.len() > expected {
        return Err(Error::Decode {
            offset: expected,
            reason: format!("{} trailing bytes", bytes.len() - expected),
        });
    }
    let mut records = Vec::with_capacity(n_stm + n_ltm);
    for i in 0..n_stm + n_ltm {
        let start = BANK_HEADER_LEN + i * size;
        let end = (start + size).min(bytes.len());
        if start > bytes.len() {
            return Err(Error::Decode {
                offset: bytes.len(),
                reason: format!("truncated before record {i}"),
            });
        }
        records.push(FeatureRecord::read_from(&bytes[start..end], code_dim, start)?);
    }
    let ltm = records.split_off(n_stm);
    Ok(BankFile {
        code_dim,
        stm: records,
        ltm,
    })
}

/// Parses a bank file into a bank with `config` (whose code dim is taken
/// from the file).
pub fn deserialize_with(bytes: &[u8], config: BankConfig) -> Result<MemoryBank> {
    let file = parse(bytes)?;
    let config = BankConfig {
        code_dim: file.code_dim,
        ..config
    };
    MemoryBank::from_parts(config, file.stm, file.ltm)
}

/// Parses a bank file using default capacities, weights and budget.
pub fn deserialize(bytes: &[u8]) -> Result<MemoryBank> {
    deserialize_with(bytes, BankConfig::default())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn populated() -> MemoryBank {
        let mut bank = MemoryBank::new(BankConfig::default()).unwrap();
        for i in 0..30u32 {
            let r = FeatureRecord::new(
                vec![i as f32 * 0.25; 10],
                i % 4,
                i / 10,
                (i % 7) as f32 / 7.0,
                (i % 5) as f32 / 5.0,
            );
            bank.stm_insert(r).unwrap();
            bank.tick_age();
        }
        bank.consolidate();
        bank
    }

    #[test]
    fn empty_bank_is_header_only() {
        let bank = MemoryBank::new(BankConfig::default()).unwrap();
        let bytes = serialize(&bank);
        assert_eq!(bytes.len(), 20);
        assert!(deserialize(&bytes).unwrap().is_empty());
    }

    #[test]
    fn round_trip() {
        let bank = populated();
        assert!(bank.ltm_len() > 0 && bank.stm_len() > 0);
        let bytes = serialize(&bank);
        assert_eq!(bytes.len(), 20 + 88 * bank.len());
        let back = deserialize(&bytes).unwrap();
        assert!(back.same_contents(&bank));
        assert_eq!(serialize(&back), bytes);
    }

    #[test]
    fn corrupted_headers_are_rejected() {
        let bytes = serialize(&populated());
        let mut bad = bytes.clone();
        bad[1] = b'X';
        assert!(matches!(deserialize(&bad), Err(Error::Decode { offset: 0, .. })));
        let mut bad = bytes.clone();
        bad[4] = 2;
        assert!(matches!(deserialize(&bad), Err(Error::Decode { offset: 4, .. })));
        assert!(matches!(
            deserialize(&bytes[..12]),
            Err(Error::Decode { offset: 12, .. })
        ));
        let cut = bytes.len() - 5;
        assert!(matches!(deserialize(&bytes[..cut]), Err(Error::Decode { offset, .. }) if offset == cut));
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(deserialize(&long), Err(Error::Decode { offset, .. }) if offset == bytes.len()));
    }

    #[test]
    fn over_budget_file_is_rejected() {
        let bytes = serialize(&populated());
        let tight = BankConfig {
            budget_bytes: 88,
            ..Default::default()
        };
        assert!(deserialize_with(&bytes, tight).is_err());
    }
}
