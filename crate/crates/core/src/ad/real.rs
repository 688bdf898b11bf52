//! Scalar abstraction shared by plain `f64` evaluation, batched tape
//! columns and forward-mode duals, plus a tiny dense matrix over it.
//!
//! Curvature formulas are written once against [`Real`] and then run on
//! whichever representation a caller needs.

use std::ops::{Add, Div, Mul, Neg, Sub};

use super::tape::Var;

pub trait Real:
    Clone
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    /// A constant living in the same context as `self`.
    fn constant_like(&self, c: f64) -> Self;
    fn sqrt(&self) -> Self;
    fn powf(&self, p: f64) -> Self;
    fn abs(&self) -> Self;
    fn sin(&self) -> Self;
    fn cos(&self) -> Self;
    fn tanh(&self) -> Self;
    fn exp(&self) -> Self;
    fn ln(&self) -> Self;
    /// `max(self, c)` on the value. Derivative information carried alongside
    /// the value is left untouched by the dual implementation.
    fn max_const(&self, c: f64) -> Self;

    fn square(&self) -> Self {
        self.clone() * self.clone()
    }

    fn recip(&self) -> Self {
        self.constant_like(1.0) / self.clone()
    }

    fn zero_like(&self) -> Self {
        self.constant_like(0.0)
    }
}

impl Real for f64 {
    fn constant_like(&self, c: f64) -> Self {
        c
    }
    fn sqrt(&self) -> Self {
        f64::sqrt(*self)
    }
    fn powf(&self, p: f64) -> Self {
        f64::powf(*self, p)
    }
    fn abs(&self) -> Self {
        f64::abs(*self)
    }
    fn sin(&self) -> Self {
        f64::sin(*self)
    }
    fn cos(&self) -> Self {
        f64::cos(*self)
    }
    fn tanh(&self) -> Self {
        f64::tanh(*self)
    }
    fn exp(&self) -> Self {
        f64::exp(*self)
    }
    fn ln(&self) -> Self {
        f64::ln(*self)
    }
    fn max_const(&self, c: f64) -> Self {
        self.max(c)
    }
    fn square(&self) -> Self {
        self * self
    }
    fn recip(&self) -> Self {
        1.0 / self
    }
}

impl Real for Var {
    fn constant_like(&self, c: f64) -> Self {
        self.tape().scalar(c)
    }
    fn sqrt(&self) -> Self {
        Var::sqrt(self)
    }
    fn powf(&self, p: f64) -> Self {
        Var::powf(self, p)
    }
    fn abs(&self) -> Self {
        Var::abs(self)
    }
    fn sin(&self) -> Self {
        Var::sin(self)
    }
    fn cos(&self) -> Self {
        Var::cos(self)
    }
    fn tanh(&self) -> Self {
        Var::tanh(self)
    }
    fn exp(&self) -> Self {
        Var::exp(self)
    }
    fn ln(&self) -> Self {
        Var::ln(self)
    }
    fn max_const(&self, c: f64) -> Self {
        self.clamp_min(c)
    }
    fn square(&self) -> Self {
        Var::square(self)
    }
    fn recip(&self) -> Self {
        Var::recip(self)
    }
}

/// Row-major dense matrix over a [`Real`] scalar. Intended for the small
/// `d x d` and `D x d` blocks that appear in chart computations.
#[derive(Clone, Debug)]
pub struct Mat<S> {
    rows: usize,
    cols: usize,
    data: Vec<S>,
}

impl<S: Real> Mat<S> {
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> S) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<S>) -> Self {
        assert_eq!(data.len(), rows * cols, "Mat::from_vec size mismatch");
        Self { rows, cols, data }
    }

    pub fn identity(n: usize, like: &S) -> Self {
        Self::from_fn(n, n, |i, j| like.constant_like(if i == j { 1.0 } else { 0.0 }))
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> &S {
        &self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: S) {
        self.data[i * self.cols + j] = v;
    }

    pub fn entries(&self) -> &[S] {
        &self.data
    }

    pub fn map(&self, f: impl Fn(&S) -> S) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(f).collect(),
        }
    }

    pub fn zip(&self, other: &Self, f: impl Fn(&S, &S) -> S) -> Self {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| f(a, b)).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        self.zip(other, |a, b| a.clone() + b.clone())
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.zip(other, |a, b| a.clone() - b.clone())
    }

    pub fn scale(&self, c: &S) -> Self {
        self.map(|a| a.clone() * c.clone())
    }

    pub fn scale_f64(&self, c: f64) -> Self {
        self.map(|a| a.clone() * c)
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i).clone())
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows, "Mat::matmul shape mismatch");
        Self::from_fn(self.rows, other.cols, |i, j| {
            let mut acc = self.get(i, 0).clone() * other.get(0, j).clone();
            for k in 1..self.cols {
                acc = acc + self.get(i, k).clone() * other.get(k, j).clone();
            }
            acc
        })
    }

    pub fn trace(&self) -> S {
        let mut acc = self.get(0, 0).clone();
        for i in 1..self.rows.min(self.cols) {
            acc = acc + self.get(i, i).clone();
        }
        acc
    }

    /// Sum of all entries of the Hadamard product `self ∘ other`.
    pub fn frobenius_dot(&self, other: &Self) -> S {
        let mut it = self.data.iter().zip(&other.data);
        let (a, b) = it.next().expect("empty matrix");
        let mut acc = a.clone() * b.clone();
        for (a, b) in it {
            acc = acc + a.clone() * b.clone();
        }
        acc
    }

    pub fn frobenius_sq(&self) -> S {
        self.frobenius_dot(self)
    }

    fn minor(&self, skip_r: usize, skip_c: usize) -> Self {
        let mut data = Vec::with_capacity((self.rows - 1) * (self.cols - 1));
        for i in (0..self.rows).filter(|&i| i != skip_r) {
            for j in (0..self.cols).filter(|&j| j != skip_c) {
                data.push(self.get(i, j).clone());
            }
        }
        Self::from_vec(self.rows - 1, self.cols - 1, data)
    }

    /// Determinant by cofactor expansion; meant for `n <= 4`.
    pub fn det(&self) -> S {
        assert_eq!(self.rows, self.cols, "det of non-square matrix");
        match self.rows {
            1 => self.data[0].clone(),
            2 => {
                self.get(0, 0).clone() * self.get(1, 1).clone()
                    - self.get(0, 1).clone() * self.get(1, 0).clone()
            }
            n => {
                let mut acc: Option<S> = None;
                for j in 0..n {
                    let term = self.get(0, j).clone() * self.minor(0, j).det();
                    acc = Some(match acc {
                        None => term,
                        Some(a) if j % 2 == 0 => a + term,
                        Some(a) => a - term,
                    });
                }
                acc.unwrap()
            }
        }
    }

    /// Inverse through the adjugate. No pivoting; callers guard conditioning.
    pub fn inverse(&self) -> Self {
        let n = self.rows;
        assert_eq!(n, self.cols, "inverse of non-square matrix");
        let det = self.det();
        if n == 1 {
            return Self::from_vec(1, 1, vec![det.recip()]);
        }
        let inv_det = det.recip();
        Self::from_fn(n, n, |i, j| {
            let c = self.minor(j, i).det() * inv_det.clone();
            if (i + j) % 2 == 0 {
                c
            } else {
                -c
            }
        })
    }
}

impl Mat<f64> {
    pub fn to_nalgebra(&self) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }

    pub fn from_nalgebra(m: &nalgebra::DMatrix<f64>) -> Self {
        Self::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_and_det_match_nalgebra() {
        let m = Mat::from_vec(3, 3, vec![2.0, 0.3, -0.1, 0.3, 1.5, 0.2, -0.1, 0.2, 1.1]);
        let n = m.to_nalgebra();
        assert!((m.det() - n.determinant()).abs() < 1e-12);
        let inv = m.inverse().to_nalgebra();
        let expected = n.try_inverse().unwrap();
        assert!((inv - expected).abs().max() < 1e-12);
    }

    #[test]
    fn four_by_four_determinant() {
        let m = Mat::from_fn(4, 4, |i, j| 1.0 / (1.0 + i as f64 + j as f64) + if i == j { 1.0 } else { 0.0 });
        assert!((m.det() - m.to_nalgebra().determinant()).abs() < 1e-12);
    }
}
