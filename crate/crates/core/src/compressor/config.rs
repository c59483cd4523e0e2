use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Feature-pyramid level a compressor is attached to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Scale {
    P3,
    P4,
    P5,
}

impl Scale {
    pub const ALL: [Scale; 3] = [Scale::P3, Scale::P4, Scale::P5];

    /// Canonical code width: 64→8, 64→10, 64→16.
    pub fn code_dim(self) -> usize {
        match self {
            Scale::P3 => 8,
            Scale::P4 => 10,
            Scale::P5 => 16,
        }
    }
}

impl std::fmt::Display for Scale {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{self:?}")
    }
}

/// Channel width of every pyramid level.
pub const FEATURE_DIM: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleConfig {
    pub scale: Scale,
    pub input_dim: usize,
    pub code_dim: usize,
}

impl ScaleConfig {
    pub fn canonical(scale: Scale) -> Self {
        Self {
            scale,
            input_dim: FEATURE_DIM,
            code_dim: scale.code_dim(),
        }
    }

    pub fn ratio(&self) -> f64 {
        self.input_dim as f64 / self.code_dim as f64
    }
}

/// Layer layout of an encoder/decoder pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompressorShape {
    pub input_dim: usize,
    pub code_dim: usize,
    /// 1: single linear map each way. 2: linear-ReLU-linear each way.
    pub depth: usize,
    pub hidden: usize,
}

pub const DEFAULT_HIDDEN: usize = 32;

impl CompressorShape {
    pub fn new(input_dim: usize, code_dim: usize, depth: usize) -> Result<Self> {
        if input_dim == 0 || code_dim == 0 {
            return Err(Error::InvalidArgument("compressor dims must be positive".into()));
        }
        if code_dim >= input_dim {
            return Err(Error::InvalidArgument(format!(
                "code dim {code_dim} must be smaller than input dim {input_dim}"
            )));
        }
        if depth != 1 && depth != 2 {
            return Err(Error::InvalidArgument(format!("depth must be 1 or 2, got {depth}")));
        }
        Ok(Self {
            input_dim,
            code_dim,
            depth,
            hidden: DEFAULT_HIDDEN,
        })
    }

    pub fn from_scale(cfg: &ScaleConfig, depth: usize) -> Result<Self> {
        Self::new(cfg.input_dim, cfg.code_dim, depth)
    }

    /// Layer specs in flat order: encoder layers, then decoder layers.
    pub(crate) fn layers(&self) -> Vec<DenseSpec> {
        let dims: Vec<(usize, usize)> = match self.depth {
            1 => vec![(self.input_dim, self.code_dim), (self.code_dim, self.input_dim)],
            _ => vec![
                (self.input_dim, self.hidden),
                (self.hidden, self.code_dim),
                (self.code_dim, self.hidden),
                (self.hidden, self.input_dim),
            ],
        };
        let mut offset = 0;
        dims.into_iter()
            .map(|(input, output)| {
                let spec = DenseSpec {
                    input,
                    output,
                    w_off: offset,
                    b_off: offset + input * output,
                };
                offset += input * output + output;
                spec
            })
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.layers().iter().map(|l| l.input * l.output + l.output).sum()
    }

    pub(crate) fn encoder_layers(&self) -> usize {
        self.depth
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct DenseSpec {
    pub input: usize,
    pub output: usize,
    pub w_off: usize,
    pub b_off: usize,
}

/// Inner/outer loop hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MamlConfig {
    pub inner_steps: usize,
    pub inner_lr: f64,
    pub meta_lr: f64,
    pub second_order: bool,
}

impl Default for MamlConfig {
    fn default() -> Self {
        Self {
            inner_steps: 5,
            inner_lr: 0.01,
            meta_lr: 5e-4,
            second_order: true,
        }
    }
}

impl MamlConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.inner_lr >= 0.0 && self.inner_lr.is_finite()) {
            return Err(Error::Config {
                field: "maml.inner_lr",
                reason: format!("must be finite and non-negative, got {}", self.inner_lr),
            });
        }
        if !(self.meta_lr >= 0.0 && self.meta_lr.is_finite()) {
            return Err(Error::Config {
                field: "maml.meta_lr",
                reason: format!("must be finite and non-negative, got {}", self.meta_lr),
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_ratios() {
        let p3 = ScaleConfig::canonical(Scale::P3);
        let p4 = ScaleConfig::canonical(Scale::P4);
        let p5 = ScaleConfig::canonical(Scale::P5);
        assert_eq!((p3.input_dim, p3.code_dim), (64, 8));
        assert_eq!((p4.input_dim, p4.code_dim), (64, 10));
        assert_eq!((p5.input_dim, p5.code_dim), (64, 16));
        assert_eq!(p3.ratio(), 8.0);
        assert!((p4.ratio() - 6.4).abs() < 1e-12);
        assert_eq!(p5.ratio(), 4.0);
    }

    #[test]
    fn layout_offsets_are_contiguous() {
        for depth in [1, 2] {
            let s = CompressorShape::new(64, 10, depth).unwrap();
            let layers = s.layers();
            let mut expected = 0;
            for l in &layers {
                assert_eq!(l.w_off, expected);
                expected = l.b_off + l.output;
            }
            assert_eq!(expected, s.num_params());
            assert_eq!(layers.first().unwrap().input, 64);
            assert_eq!(layers[s.encoder_layers() - 1].output, 10);
            assert_eq!(layers.last().unwrap().output, 64);
        }
        assert_eq!(CompressorShape::new(64, 10, 1).unwrap().num_params(), 2 * 640 + 74);
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(CompressorShape::new(8, 8, 1).is_err());
        assert!(CompressorShape::new(8, 2, 3).is_err());
        assert!(CompressorShape::new(0, 0, 1).is_err());
    }
}
