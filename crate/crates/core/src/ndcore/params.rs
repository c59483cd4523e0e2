//! Parameter collections: anything exposing an ordered list of named tensors.
//!
//! Gradients share the type of the parameters they differentiate, so the pure
//! update rules below work on any model in the crate.

use crate::error::{Error, Result};

/// An ordered collection of flat parameter tensors (one per layer).
pub trait Tensors: Clone {
    fn tensors(&self) -> Vec<&[f64]>;
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;
    fn tensor_names(&self) -> Vec<String>;

    fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    fn shape_signature(&self) -> Vec<usize> {
        self.tensors().iter().map(|t| t.len()).collect()
    }

    fn flatten(&self) -> Vec<f64> {
        self.tensors().concat()
    }

    /// Overwrites every entry from a flat slice in tensor order.
    fn load_flat(&mut self, flat: &[f64]) -> Result<()> {
        let n = self.num_params();
        if flat.len() != n {
            return Err(Error::DimMismatch {
                op: "load_flat",
                expected: n,
                got: flat.len(),
            });
        }
        let mut offset = 0;
        for t in self.tensors_mut() {
            let len = t.len();
            t.copy_from_slice(&flat[offset..offset + len]);
            offset += len;
        }
        Ok(())
    }

    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

pub fn check_same_shape<P: Tensors>(op: &'static str, a: &P, b: &P) -> Result<()> {
    let (sa, sb) = (a.shape_signature(), b.shape_signature());
    if sa.len() != sb.len() {
        return Err(Error::DimMismatch {
            op,
            expected: sa.len(),
            got: sb.len(),
        });
    }
    for (x, y) in sa.iter().zip(&sb) {
        if x != y {
            return Err(Error::DimMismatch {
                op,
                expected: *x,
                got: *y,
            });
        }
    }
    Ok(())
}

/// Pure gradient step `p - lr * g`; neither input is modified.
pub fn sgd_step<P: Tensors>(params: &P, grads: &P, lr: f64) -> Result<P> {
    if !(lr >= 0.0 && lr.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "learning rate must be finite and non-negative, got {lr}"
        )));
    }
    axpy(params, grads, -lr)
}

/// `a + scale * b` as a new collection.
pub fn axpy<P: Tensors>(a: &P, b: &P, scale: f64) -> Result<P> {
    check_same_shape("axpy", a, b)?;
    let mut out = a.clone();
    for (o, g) in out.tensors_mut().into_iter().zip(b.tensors()) {
        for (x, y) in o.iter_mut().zip(g) {
            *x += scale * y;
        }
    }
    Ok(out)
}

/// In-place `a += scale * b`.
pub fn add_scaled<P: Tensors>(a: &mut P, b: &P, scale: f64) -> Result<()> {
    check_same_shape("add_scaled", a, b)?;
    for (o, g) in a.tensors_mut().into_iter().zip(b.tensors()) {
        for (x, y) in o.iter_mut().zip(g) {
            *x += scale * y;
        }
    }
    Ok(())
}

pub fn dot<P: Tensors>(a: &P, b: &P) -> Result<f64> {
    check_same_shape("dot", a, b)?;
    Ok(a.tensors()
        .iter()
        .zip(b.tensors())
        .map(|(x, y)| x.iter().zip(y).map(|(u, v)| u * v).sum::<f64>())
        .sum())
}

pub fn l2_norm<P: Tensors>(a: &P) -> f64 {
    a.tensors()
        .iter()
        .map(|t| t.iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        .sqrt()
}

/// A single flat tensor; handy for oracles and toy objectives.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatParams(pub Vec<f64>);

impl Tensors for FlatParams {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![&self.0]
    }
    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![&mut self.0]
    }
    fn tensor_names(&self) -> Vec<String> {
        vec!["flat".to_string()]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_lr_or_zero_grad_leaves_params() {
        let p = FlatParams(vec![1.0, -2.0, 3.5]);
        let g = FlatParams(vec![0.3, 0.1, -9.0]);
        assert_eq!(sgd_step(&p, &g, 0.0).unwrap(), p);
        assert_eq!(sgd_step(&p, &p.zeros_like(), 0.5).unwrap(), p);
    }

    #[test]
    fn hand_arithmetic() {
        let p = FlatParams(vec![1.0]);
        let g = FlatParams(vec![0.5]);
        let out = sgd_step(&p, &g, 0.01).unwrap();
        assert!((out.0[0] - 0.995).abs() < 1e-15);
        // inputs untouched and the update is repeatable
        assert_eq!(p.0, vec![1.0]);
        assert_eq!(sgd_step(&p, &g, 0.01).unwrap(), out);
    }

    #[test]
    fn shape_mismatch() {
        let p = FlatParams(vec![1.0, 2.0]);
        let g = FlatParams(vec![1.0]);
        assert!(matches!(sgd_step(&p, &g, 0.1), Err(Error::DimMismatch { .. })));
    }

    #[test]
    fn flat_round_trip() {
        let p = FlatParams(vec![1.0, 2.0, 3.0]);
        let mut q = p.zeros_like();
        q.load_flat(&p.flatten()).unwrap();
        assert_eq!(p, q);
        assert!(q.load_flat(&[1.0]).is_err());
    }
}
