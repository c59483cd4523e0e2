use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::ndcore::{check_len, Tensors, Vector};

use super::config::{CompressorShape, DEFAULT_HIDDEN};
use super::kernel::{recon_loss_and_grad, relu_margin, stack_backward, stack_forward, Stacks};

/// Encoder and decoder weights stored as one flat buffer in layer order
/// (`W` row-major, then `b`, for each layer).
#[derive(Debug, Clone, PartialEq)]
pub struct CompressorParams {
    shape: CompressorShape,
    flat: Vec<f64>,
}

impl CompressorParams {
    pub fn zeros(shape: CompressorShape) -> Self {
        Self {
            flat: vec![0.0; shape.num_params()],
            shape,
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init(shape: CompressorShape, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Self::zeros(shape);
        for spec in shape.layers() {
            let limit = (6.0 / (spec.input + spec.output) as f64).sqrt();
            for w in &mut p.flat[spec.w_off..spec.b_off] {
                *w = rng.random_range(-limit..limit);
            }
        }
        p
    }

    pub fn from_flat(shape: CompressorShape, flat: Vec<f64>) -> Result<Self> {
        check_len("CompressorParams::from_flat", shape.num_params(), flat.len())?;
        if flat.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                op: "CompressorParams::from_flat",
            });
        }
        Ok(Self { shape, flat })
    }

    pub fn shape(&self) -> &CompressorShape {
        &self.shape
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.flat
    }

    #[cfg(test)]
    pub(crate) fn as_flat_mut(&mut self) -> &mut [f64] {
        &mut self.flat
    }

    pub fn input_dim(&self) -> usize {
        self.shape.input_dim
    }

    pub fn code_dim(&self) -> usize {
        self.shape.code_dim
    }

    /// Feature → code.
    pub fn encode(&self, f: &Vector) -> Result<Vector> {
        check_len("encode", self.shape.input_dim, f.len())?;
        let stacks = Stacks::of(&self.shape);
        let trace = stack_forward(&stacks.encoder, &self.flat, f.as_slice());
        Ok(Vector::from(trace.output().to_vec()))
    }

    /// Code → reconstructed feature.
    pub fn decode(&self, z: &Vector) -> Result<Vector> {
        check_len("decode", self.shape.code_dim, z.len())?;
        let stacks = Stacks::of(&self.shape);
        let trace = stack_forward(&stacks.decoder, &self.flat, z.as_slice());
        Ok(Vector::from(trace.output().to_vec()))
    }

    pub fn reconstruct(&self, f: &Vector) -> Result<Vector> {
        self.decode(&self.encode(f)?)
    }

    /// Accumulates `(∂code/∂params)ᵀ · grad_code` into `grad`, i.e. the
    /// parameter gradient of any loss whose gradient w.r.t. `encode(f)` is
    /// `grad_code`.
    pub fn encoder_vjp(&self, f: &Vector, grad_code: &[f64], grad: &mut CompressorParams) -> Result<()> {
        check_len("encoder_vjp", self.shape.input_dim, f.len())?;
        check_len("encoder_vjp", self.shape.code_dim, grad_code.len())?;
        check_len("encoder_vjp", self.flat.len(), grad.flat.len())?;
        let stacks = Stacks::of(&self.shape);
        let trace = stack_forward(&stacks.encoder, &self.flat, f.as_slice());
        stack_backward(&stacks.encoder, &self.flat, &trace, grad_code, &mut grad.flat);
        Ok(())
    }

    /// Mean reconstruction MSE over `batch`.
    pub fn recon_loss(&self, batch: &[Vector]) -> Result<f64> {
        self.check_batch("recon_loss", batch)?;
        Ok(recon_loss_and_grad(&self.shape, &self.flat, batch, None))
    }

    /// Reconstruction loss and its gradient w.r.t. every parameter.
    pub fn recon_loss_grad(&self, batch: &[Vector]) -> Result<(f64, CompressorParams)> {
        self.check_batch("recon_grad", batch)?;
        let mut grad = self.zeros_like();
        let loss = recon_loss_and_grad(&self.shape, &self.flat, batch, Some(&mut grad.flat));
        Ok((loss, grad))
    }

    /// Distance of the nearest rectified pre-activation from its kink over
    /// `batch`; `None` for linear compressors.
    pub fn relu_margin(&self, batch: &[Vector]) -> Option<f64> {
        relu_margin(&self.shape, &self.flat, batch)
    }

    pub(crate) fn check_batch(&self, op: &'static str, batch: &[Vector]) -> Result<()> {
        if batch.is_empty() {
            return Err(Error::Empty { op });
        }
        for f in batch {
            check_len(op, self.shape.input_dim, f.len())?;
        }
        Ok(())
    }

    /// Serializes to the checkpoint blob: `"AHCP"`, version, D, d (u32 LE),
    /// then every parameter as f32 LE in flat order.
    pub fn to_blob(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(PARAMS_HEADER_LEN + 4 * self.flat.len());
        out.extend_from_slice(PARAMS_MAGIC);
        out.extend_from_slice(&PARAMS_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.shape.input_dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.shape.code_dim as u32).to_le_bytes());
        for v in &self.flat {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        out
    }

    /// Parses a checkpoint blob. The depth is recovered from the payload length.
    pub fn from_blob(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < PARAMS_HEADER_LEN {
            return Err(Error::Decode {
                offset: bytes.len(),
                reason: format!("truncated header ({} of {PARAMS_HEADER_LEN} bytes)", bytes.len()),
            });
        }
        if &bytes[0..4] != PARAMS_MAGIC {
            return Err(Error::Decode {
                offset: 0,
                reason: "bad magic".into(),
            });
        }
        let word = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        if word(4) != PARAMS_VERSION {
            return Err(Error::Decode {
                offset: 4,
                reason: format!("unsupported version {}", word(4)),
            });
        }
        let (input, code) = (word(8) as usize, word(12) as usize);
        let payload = bytes.len() - PARAMS_HEADER_LEN;
        let shape = [1usize, 2]
            .iter()
            .filter_map(|&depth| CompressorShape::new(input, code, depth).ok())
            .find(|s| s.num_params() * 4 == payload)
            .ok_or_else(|| Error::Decode {
                offset: PARAMS_HEADER_LEN,
                reason: format!(
                    "payload of {payload} bytes matches no {input}->{code} layout (hidden width {DEFAULT_HIDDEN})"
                ),
            })?;
        let flat = bytes[PARAMS_HEADER_LEN..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        Self::from_flat(shape, flat).map_err(|_| Error::Decode {
            offset: PARAMS_HEADER_LEN,
            reason: "non-finite parameter".into(),
        })
    }
}

pub const PARAMS_MAGIC: &[u8; 4] = b"AHCP";
pub const PARAMS_VERSION: u32 = 1;
pub const PARAMS_HEADER_LEN: usize = 16;

impl Tensors for CompressorParams {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for spec in self.shape.layers() {
            out.push(&self.flat[spec.w_off..spec.b_off]);
            out.push(&self.flat[spec.b_off..spec.b_off + spec.output]);
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        let mut rest: &mut [f64] = &mut self.flat;
        for spec in self.shape.layers() {
            let (w, tail) = rest.split_at_mut(spec.input * spec.output);
            let (b, tail) = tail.split_at_mut(spec.output);
            out.push(w);
            out.push(b);
            rest = tail;
        }
        out
    }

    fn tensor_names(&self) -> Vec<String> {
        let enc = self.shape.encoder_layers();
        let mut names = Vec::new();
        for (i, _) in self.shape.layers().iter().enumerate() {
            let (stack, idx) = if i < enc { ("enc", i) } else { ("dec", i - enc) };
            names.push(format!("{stack}.{idx}.w"));
            names.push(format!("{stack}.{idx}.b"));
        }
        names
    }

    fn flatten(&self) -> Vec<f64> {
        self.flat.clone()
    }
}
