use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bytes of per-record metadata: class id, box, task id, three scores, age
/// and eight reserved zero bytes.
pub const METADATA_BYTES: usize = 48;

/// Bytes per stored value.
pub const VALUE_BYTES: usize = 4;

pub const fn record_size(code_dim: usize) -> usize {
    code_dim * VALUE_BYTES + METADATA_BYTES
}

/// One stored exemplar: a compressed pooled feature plus metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRecord {
    pub code: Vec<f32>,
    pub class_id: u32,
    /// `x1, y1, x2, y2`, normalised to `[0, 1]`.
    pub bbox: [f32; 4],
    pub task_id: u32,
    pub importance: f32,
    pub uncertainty: f32,
    pub difficulty: f32,
    pub age: u32,
}

pub const UNIT_BOX: [f32; 4] = [0.0, 0.0, 1.0, 1.0];

impl FeatureRecord {
    pub fn new(code: Vec<f32>, class_id: u32, task_id: u32, uncertainty: f32, difficulty: f32) -> Self {
        Self {
            code,
            class_id,
            bbox: UNIT_BOX,
            task_id,
            importance: 0.0,
            uncertainty,
            difficulty,
            age: 0,
        }
    }

    pub fn byte_size(&self) -> usize {
        record_size(self.code.len())
    }

    pub fn validate(&self, code_dim: usize) -> Result<()> {
        if self.code.len() != code_dim {
            return Err(Error::DimMismatch {
                op: "FeatureRecord",
                expected: code_dim,
                got: self.code.len(),
            });
        }
        if self.code.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                op: "FeatureRecord code",
            });
        }
        for (name, v) in [("uncertainty", self.uncertainty), ("difficulty", self.difficulty)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidArgument(format!("{name} {v} outside [0, 1]")));
            }
        }
        let [x1, y1, x2, y2] = self.bbox;
        if !(self.bbox.iter().all(|v| (0.0..=1.0).contains(v)) && x1 <= x2 && y1 <= y2) {
            return Err(Error::InvalidArgument(format!("malformed box {:?}", self.bbox)));
        }
        Ok(())
    }

    /// Appends the little-endian wire form (`record_size(d)` bytes).
    pub fn write_to(&self, out: &mut Vec<u8>) {
        for v in &self.code {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&self.class_id.to_le_bytes());
        for v in &self.bbox {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&self.task_id.to_le_bytes());
        out.extend_from_slice(&self.importance.to_le_bytes());
        out.extend_from_slice(&self.uncertainty.to_le_bytes());
        out.extend_from_slice(&self.difficulty.to_le_bytes());
        out.extend_from_slice(&self.age.to_le_bytes());
        out.extend_from_slice(&[0u8; 8]);
    }

    /// Parses one record starting at `base` (an absolute offset used for
    /// diagnostics) from `bytes`, which must hold exactly one record.
    pub fn read_from(bytes: &[u8], code_dim: usize, base: usize) -> Result<Self> {
        let size = record_size(code_dim);
        if bytes.len() < size {
            return Err(Error::Decode {
                offset: base + bytes.len(),
                reason: format!("truncated record ({} of {size} bytes)", bytes.len()),
            });
        }
        let word = |o: usize| -> [u8; 4] { bytes[o..o + 4].try_into().unwrap() };
        let code = (0..code_dim)
            .map(|i| f32::from_le_bytes(word(4 * i)))
            .collect::<Vec<_>>();
        let m = 4 * code_dim;
        if let Some(i) = code.iter().position(|v| !v.is_finite()) {
            return Err(Error::Decode {
                offset: base + 4 * i,
                reason: "non-finite code value".into(),
            });
        }
        let f = |o: usize| f32::from_le_bytes(word(m + o));
        let u = |o: usize| u32::from_le_bytes(word(m + o));
        let rec = Self {
            code,
            class_id: u(0),
            bbox: [f(4), f(8), f(12), f(16)],
            task_id: u(20),
            importance: f(24),
            uncertainty: f(28),
            difficulty: f(32),
            age: u(36),
        };
        if let Some(i) = bytes[m + 40..m + 48].iter().position(|b| *b != 0) {
            return Err(Error::Decode {
                offset: base + m + 40 + i,
                reason: "reserved byte is not zero".into(),
            });
        }
        let field_checks = [
            (
                4,
                rec.bbox.iter().all(|v| (0.0..=1.0).contains(v))
                    && rec.bbox[0] <= rec.bbox[2]
                    && rec.bbox[1] <= rec.bbox[3],
                "malformed box",
            ),
            (24, rec.importance.is_finite(), "non-finite importance"),
            (28, (0.0..=1.0).contains(&rec.uncertainty), "uncertainty outside [0, 1]"),
            (32, (0.0..=1.0).contains(&rec.difficulty), "difficulty outside [0, 1]"),
        ];
        for (o, ok, reason) in field_checks {
            if !ok {
                return Err(Error::Decode {
                    offset: base + m + o,
                    reason: reason.into(),
                });
            }
        }
        Ok(rec)
    }
}
