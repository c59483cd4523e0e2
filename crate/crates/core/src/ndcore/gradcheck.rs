//! Central finite differences, the reference every analytic gradient is
//! checked against.

use crate::error::{Error, Result};

use super::tensor::Vector;

/// Default step for double-precision checks.
pub const DEFAULT_STEP: f64 = 1e-4;

/// Coordinates where both gradients are below this magnitude are skipped.
pub const NEGLIGIBLE: f64 = 1e-8;

/// Central-difference gradient of `f` at `p`.
pub fn finite_diff_grad<F>(mut f: F, p: &Vector, h: f64) -> Result<Vector>
where
    F: FnMut(&Vector) -> f64,
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidArgument(format!("step must be positive, got {h}")));
    }
    let mut probe = p.clone();
    let mut grad = Vec::with_capacity(p.len());
    for i in 0..p.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let fp = f(&probe);
        probe[i] = orig - h;
        let fm = f(&probe);
        probe[i] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::NonFiniteAtCoordinate { coordinate: i });
        }
        grad.push((fp - fm) / (2.0 * h));
    }
    Ok(Vector::from(grad))
}

/// Outcome of comparing an analytic gradient against a numerical one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradComparison {
    pub worst_rel_err: f64,
    pub worst_index: Option<usize>,
    pub compared: usize,
}

impl GradComparison {
    pub fn within(&self, tol: f64) -> bool {
        self.worst_rel_err <= tol
    }
}

/// Relative error `|a - n| / max(|a|, |n|)` per coordinate, skipping
/// coordinates where both are below [`NEGLIGIBLE`].
pub fn compare_gradients(analytic: &[f64], numeric: &[f64]) -> Result<GradComparison> {
    if analytic.len() != numeric.len() {
        return Err(Error::DimMismatch {
            op: "compare_gradients",
            expected: analytic.len(),
            got: numeric.len(),
        });
    }
    let mut out = GradComparison {
        worst_rel_err: 0.0,
        worst_index: None,
        compared: 0,
    };
    for (i, (a, n)) in analytic.iter().zip(numeric).enumerate() {
        let scale = a.abs().max(n.abs());
        if scale < NEGLIGIBLE {
            continue;
        }
        out.compared += 1;
        let rel = (a - n).abs() / scale;
        if out.worst_index.is_none() || rel > out.worst_rel_err {
            out.worst_rel_err = rel;
            out.worst_index = Some(i);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_function_has_zero_gradient() {
        let p = Vector::from(vec![0.3, -1.0, 4.0]);
        let g = finite_diff_grad(|_| 2.5, &p, 1e-4).unwrap();
        assert!(g.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn half_squared_norm() {
        let p = Vector::from(vec![1.0, -2.0]);
        let g = finite_diff_grad(|x| 0.5 * x.dot(x).unwrap(), &p, 1e-4).unwrap();
        assert!((g[0] - 1.0).abs() < 1e-8);
        assert!((g[1] + 2.0).abs() < 1e-8);
    }

    #[test]
    fn reports_offending_coordinate() {
        let p = Vector::from(vec![1.0, 0.0]);
        let err = finite_diff_grad(|x| if x[1] > 0.0 { f64::NAN } else { 0.0 }, &p, 1e-3).unwrap_err();
        assert_eq!(err, Error::NonFiniteAtCoordinate { coordinate: 1 });
    }

    #[test]
    fn comparison_skips_negligible_coordinates() {
        let cmp = compare_gradients(&[1.0, 1e-12, 2.0], &[1.0, -1e-12, 2.2]).unwrap();
        assert_eq!(cmp.compared, 2);
        assert_eq!(cmp.worst_index, Some(2));
        assert!((cmp.worst_rel_err - 0.2 / 2.2).abs() < 1e-12);
    }
}
