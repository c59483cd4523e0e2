//! Forward-mode dual numbers.
//!
//! Kernels written against [`Real`] run on plain `f64` for values and
//! gradients, and on [`Dual`] to push a tangent through a backward pass.
//! Seeding the parameters with a direction `v` and reading the tangent of the
//! gradient yields the exact Hessian-vector product `H v`.

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};

pub trait Real:
    Copy
    + Debug
    + PartialEq
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
{
    fn from_f64(v: f64) -> Self;
    fn value(self) -> f64;

    fn zero() -> Self {
        Self::from_f64(0.0)
    }

    fn relu(self) -> Self {
        if self.value() > 0.0 {
            self
        } else {
            Self::zero()
        }
    }
}

impl Real for f64 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn value(self) -> f64 {
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Dual {
    pub re: f64,
    pub eps: f64,
}

impl Dual {
    pub fn new(re: f64, eps: f64) -> Self {
        Self { re, eps }
    }
}

impl Add for Dual {
    type Output = Dual;
    #[inline]
    fn add(self, o: Dual) -> Dual {
        Dual::new(self.re + o.re, self.eps + o.eps)
    }
}

impl Sub for Dual {
    type Output = Dual;
    #[inline]
    fn sub(self, o: Dual) -> Dual {
        Dual::new(self.re - o.re, self.eps - o.eps)
    }
}

impl Mul for Dual {
    type Output = Dual;
    #[inline]
    fn mul(self, o: Dual) -> Dual {
        Dual::new(self.re * o.re, self.re * o.eps + self.eps * o.re)
    }
}

impl Div for Dual {
    type Output = Dual;
    #[inline]
    fn div(self, o: Dual) -> Dual {
        Dual::new(self.re / o.re, (self.eps * o.re - self.re * o.eps) / (o.re * o.re))
    }
}

impl Neg for Dual {
    type Output = Dual;
    #[inline]
    fn neg(self) -> Dual {
        Dual::new(-self.re, -self.eps)
    }
}

impl AddAssign for Dual {
    #[inline]
    fn add_assign(&mut self, o: Dual) {
        self.re += o.re;
        self.eps += o.eps;
    }
}

impl Real for Dual {
    #[inline]
    fn from_f64(v: f64) -> Self {
        Dual::new(v, 0.0)
    }
    #[inline]
    fn value(self) -> f64 {
        self.re
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn product_and_quotient_rules() {
        // f(x) = x^3 / (1 + x) at x = 2: f' = (3x^2 (1+x) - x^3) / (1+x)^2
        let x = Dual::new(2.0, 1.0);
        let f = x * x * x / (Dual::from_f64(1.0) + x);
        assert!((f.re - 8.0 / 3.0).abs() < 1e-15);
        assert!((f.eps - (12.0 * 3.0 - 8.0) / 9.0).abs() < 1e-14);
    }

    #[test]
    fn relu_masks_tangent() {
        assert_eq!(Dual::new(-1.0, 5.0).relu(), Dual::new(0.0, 0.0));
        assert_eq!(Dual::new(1.0, 5.0).relu(), Dual::new(1.0, 5.0));
    }
}
