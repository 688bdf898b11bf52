//! First-order forward-mode numbers over any [`Real`] base.

use std::ops::{Add, Div, Mul, Neg, Sub};

use super::real::Real;

/// `re + eps·ε` with `ε² = 0`.
#[derive(Clone, Debug)]
pub struct Dual<S> {
    pub re: S,
    pub eps: S,
}

impl<S: Real> Dual<S> {
    pub fn new(re: S, eps: S) -> Self {
        Self { re, eps }
    }

    pub fn constant(re: S) -> Self {
        let eps = re.zero_like();
        Self { re, eps }
    }

    fn chain(&self, value: S, deriv: S) -> Self {
        Self {
            re: value,
            eps: deriv * self.eps.clone(),
        }
    }
}

impl<S: Real> Add for Dual<S> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Self::new(self.re + rhs.re, self.eps + rhs.eps)
    }
}

impl<S: Real> Sub for Dual<S> {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        Self::new(self.re - rhs.re, self.eps - rhs.eps)
    }
}

impl<S: Real> Mul for Dual<S> {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        let eps = self.re.clone() * rhs.eps + self.eps * rhs.re.clone();
        Self::new(self.re * rhs.re, eps)
    }
}

impl<S: Real> Div for Dual<S> {
    type Output = Self;
    fn div(self, rhs: Self) -> Self {
        let inv = rhs.re.recip();
        let re = self.re * inv.clone();
        let eps = (self.eps - re.clone() * rhs.eps) * inv;
        Self::new(re, eps)
    }
}

impl<S: Real> Neg for Dual<S> {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.re, -self.eps)
    }
}

impl<S: Real> Add<f64> for Dual<S> {
    type Output = Self;
    fn add(self, rhs: f64) -> Self {
        Self::new(self.re + rhs, self.eps)
    }
}

impl<S: Real> Sub<f64> for Dual<S> {
    type Output = Self;
    fn sub(self, rhs: f64) -> Self {
        Self::new(self.re - rhs, self.eps)
    }
}

impl<S: Real> Mul<f64> for Dual<S> {
    type Output = Self;
    fn mul(self, rhs: f64) -> Self {
        Self::new(self.re * rhs, self.eps * rhs)
    }
}

impl<S: Real> Div<f64> for Dual<S> {
    type Output = Self;
    fn div(self, rhs: f64) -> Self {
        Self::new(self.re / rhs, self.eps / rhs)
    }
}

impl<S: Real> Real for Dual<S> {
    fn constant_like(&self, c: f64) -> Self {
        Self::constant(self.re.constant_like(c))
    }
    fn sqrt(&self) -> Self {
        let y = self.re.sqrt();
        let d = (y.clone() * 2.0).recip();
        self.chain(y, d)
    }
    fn powf(&self, p: f64) -> Self {
        let d = self.re.powf(p - 1.0) * p;
        self.chain(self.re.powf(p), d)
    }
    fn abs(&self) -> Self {
        // sign(x) = |x| / x away from zero
        let a = self.re.abs();
        let sign = a.clone() / self.re.clone();
        self.chain(a, sign)
    }
    fn sin(&self) -> Self {
        self.chain(self.re.sin(), self.re.cos())
    }
    fn cos(&self) -> Self {
        self.chain(self.re.cos(), -self.re.sin())
    }
    fn tanh(&self) -> Self {
        let y = self.re.tanh();
        let d = -(y.clone() * y.clone()) + 1.0;
        self.chain(y, d)
    }
    fn exp(&self) -> Self {
        let y = self.re.exp();
        self.chain(y.clone(), y)
    }
    fn ln(&self) -> Self {
        self.chain(self.re.ln(), self.re.recip())
    }
    fn max_const(&self, c: f64) -> Self {
        Self::new(self.re.max_const(c), self.eps.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derivative_of_composite_matches_closed_form() {
        let x = Dual::new(0.7_f64, 1.0);
        let y = (x.clone() * x.clone()).sin() / (x.clone().exp() + 1.0) + x.sqrt().ln();
        let v: f64 = 0.7;
        let expected = 2.0 * v * (v * v).cos() / (v.exp() + 1.0)
            - (v * v).sin() * v.exp() / (v.exp() + 1.0).powi(2)
            + 0.5 / v;
        assert!((y.eps - expected).abs() < 1e-12);
    }

    #[test]
    fn max_const_clips_value_only() {
        let x = Dual::new(0.01_f64, 3.0);
        let y = x.max_const(0.1);
        assert_eq!(y.re, 0.1);
        assert_eq!(y.eps, 3.0);
    }
}
