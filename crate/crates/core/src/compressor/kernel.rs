//! Forward and backward passes of the encoder/decoder stacks, generic over the
//! scalar so the same code yields values, gradients and (with duals)
//! Hessian-vector products.

use crate::ndcore::{Real, Vector};

use super::config::{CompressorShape, DenseSpec};

/// Activations recorded during a forward pass through one stack.
pub(crate) struct StackTrace<T> {
    /// Input to each layer.
    inputs: Vec<Vec<T>>,
    /// Pre-activation output of each layer.
    pre: Vec<Vec<T>>,
}

impl<T: Real> StackTrace<T> {
    pub fn output(&self) -> &[T] {
        self.pre.last().expect("stack has at least one layer")
    }
}

fn dense<T: Real>(spec: &DenseSpec, theta: &[T], x: &[T]) -> Vec<T> {
    let w = &theta[spec.w_off..spec.w_off + spec.input * spec.output];
    let b = &theta[spec.b_off..spec.b_off + spec.output];
    (0..spec.output)
        .map(|i| {
            let row = &w[i * spec.input..(i + 1) * spec.input];
            let mut acc = b[i];
            for (a, v) in row.iter().zip(x) {
                acc += *a * *v;
            }
            acc
        })
        .collect()
}

/// Runs `x` through `specs`, with ReLU between (not after) layers.
pub(crate) fn stack_forward<T: Real>(specs: &[DenseSpec], theta: &[T], x: &[T]) -> StackTrace<T> {
    let mut inputs = Vec::with_capacity(specs.len());
    let mut pre = Vec::with_capacity(specs.len());
    let mut current: Vec<T> = x.to_vec();
    for (i, spec) in specs.iter().enumerate() {
        let out = dense(spec, theta, &current);
        inputs.push(current);
        current = if i + 1 < specs.len() {
            out.iter().map(|v| v.relu()).collect()
        } else {
            out.clone()
        };
        pre.push(out);
    }
    StackTrace { inputs, pre }
}

/// Backpropagates `grad_out` (w.r.t. the stack output), accumulating parameter
/// gradients into `grad_theta`. Returns the gradient w.r.t. the stack input.
pub(crate) fn stack_backward<T: Real>(
    specs: &[DenseSpec],
    theta: &[T],
    trace: &StackTrace<T>,
    grad_out: &[T],
    grad_theta: &mut [T],
) -> Vec<T> {
    let mut g: Vec<T> = grad_out.to_vec();
    for (i, spec) in specs.iter().enumerate().rev() {
        if i + 1 < specs.len() {
            for (gv, p) in g.iter_mut().zip(&trace.pre[i]) {
                if p.value() <= 0.0 {
                    *gv = T::zero();
                }
            }
        }
        let input = &trace.inputs[i];
        for (r, gr) in g.iter().enumerate() {
            let row = spec.w_off + r * spec.input;
            for (c, xv) in input.iter().enumerate() {
                grad_theta[row + c] += *gr * *xv;
            }
            grad_theta[spec.b_off + r] += *gr;
        }
        let mut gin = vec![T::zero(); spec.input];
        for (r, gr) in g.iter().enumerate() {
            let row = &theta[spec.w_off + r * spec.input..spec.w_off + (r + 1) * spec.input];
            for (c, w) in row.iter().enumerate() {
                gin[c] += *w * *gr;
            }
        }
        g = gin;
    }
    g
}

/// Smallest `|pre-activation|` of any rectified unit over `batch`, or `None`
/// when the shape has no rectifiers.
pub(crate) fn relu_margin(shape: &CompressorShape, theta: &[f64], batch: &[Vector]) -> Option<f64> {
    let stacks = Stacks::of(shape);
    let mut margin: Option<f64> = None;
    for f in batch {
        let enc = stack_forward(&stacks.encoder, theta, f.as_slice());
        let dec = stack_forward(&stacks.decoder, theta, enc.output());
        for trace in [&enc, &dec] {
            for layer in &trace.pre[..trace.pre.len() - 1] {
                for v in layer {
                    margin = Some(margin.map_or(v.abs(), |m: f64| m.min(v.abs())));
                }
            }
        }
    }
    margin
}

pub(crate) struct Stacks {
    pub encoder: Vec<DenseSpec>,
    pub decoder: Vec<DenseSpec>,
}

impl Stacks {
    pub fn of(shape: &CompressorShape) -> Self {
        let mut layers = shape.layers();
        let decoder = layers.split_off(shape.encoder_layers());
        Self {
            encoder: layers,
            decoder,
        }
    }
}

/// Mean over the batch of the per-sample reconstruction MSE; when `grad` is
/// given, its gradient w.r.t. `theta` is accumulated into it.
pub(crate) fn recon_loss_and_grad<T: Real>(
    shape: &CompressorShape,
    theta: &[T],
    batch: &[Vector],
    mut grad: Option<&mut [T]>,
) -> T {
    let stacks = Stacks::of(shape);
    let n = batch.len() as f64;
    let dim = shape.input_dim as f64;
    let mut loss = T::zero();
    for f in batch {
        let x: Vec<T> = f.iter().map(|v| T::from_f64(*v)).collect();
        let enc = stack_forward(&stacks.encoder, theta, &x);
        let dec = stack_forward(&stacks.decoder, theta, enc.output());
        let recon = dec.output();
        let mut sample = T::zero();
        let mut gout = Vec::with_capacity(recon.len());
        for (r, xv) in recon.iter().zip(&x) {
            let diff = *r - *xv;
            sample += diff * diff;
            gout.push(diff * T::from_f64(2.0 / (dim * n)));
        }
        loss += sample * T::from_f64(1.0 / (dim * n));
        if let Some(g) = grad.as_deref_mut() {
            let gz = stack_backward(&stacks.decoder, theta, &dec, &gout, g);
            stack_backward(&stacks.encoder, theta, &enc, &gz, g);
        }
    }
    loss
}
