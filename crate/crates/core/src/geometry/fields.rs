//! Analytic metric fields, scalar fields and immersions used as references
//! by the test suites and the `verify` command.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ImmersionJet, MetricField};

/// A metric given by a closure.
pub struct FnMetric<F> {
    pub d: usize,
    pub f: F,
}

impl<F: Fn(&[f64], f64) -> DMatrix<f64>> MetricField for FnMetric<F> {
    fn dim(&self) -> usize {
        self.d
    }
    fn metric(&self, u: &[f64], t: f64) -> DMatrix<f64> {
        (self.f)(u, t)
    }
}

/// A metric that is the same matrix everywhere.
pub struct ConstantMetric(pub DMatrix<f64>);

impl MetricField for ConstantMetric {
    fn dim(&self) -> usize {
        self.0.nrows()
    }
    fn metric(&self, _u: &[f64], _t: f64) -> DMatrix<f64> {
        self.0.clone()
    }
}

/// Round metric of radius `radius` in nested-sine coordinates.
pub struct SphereMetric {
    pub d: usize,
    pub radius: f64,
}

impl MetricField for SphereMetric {
    fn dim(&self) -> usize {
        self.d
    }
    fn metric(&self, u: &[f64], _t: f64) -> DMatrix<f64> {
        let diag = super::formulas::sphere_metric_diagonal(u, self.radius);
        DMatrix::from_diagonal(&DVector::from_vec(diag))
    }
}

/// `ψ(u,t)^{4/(d−2)} g₀(u,t)`.
pub struct ConformalMetric<'a> {
    pub base: &'a dyn MetricField,
    pub psi: &'a dyn Fn(&[f64], f64) -> f64,
}

impl MetricField for ConformalMetric<'_> {
    fn dim(&self) -> usize {
        self.base.dim()
    }
    fn metric(&self, u: &[f64], t: f64) -> DMatrix<f64> {
        let d = self.dim() as f64;
        self.base.metric(u, t) * (self.psi)(u, t).powf(4.0 / (d - 2.0))
    }
}

/// `e^{2κt} g₀(u)`: solves `∂_t g = 2κ g` for a constant `κ`.
pub struct ExponentialFlowMetric<'a> {
    pub base: &'a dyn MetricField,
    pub rate: f64,
}

impl MetricField for ExponentialFlowMetric<'_> {
    fn dim(&self) -> usize {
        self.base.dim()
    }
    fn metric(&self, u: &[f64], t: f64) -> DMatrix<f64> {
        self.base.metric(u, 0.0) * (2.0 * self.rate * t).exp()
    }
}

struct Wave {
    matrix: DMatrix<f64>,
    freq: Vec<f64>,
    speed: f64,
    phase: f64,
}

/// `g = GᵀG` with `G = I + Σ_k A_k sin(ω_k·u + c_k t + φ_k)`; a random but
/// smooth and well-conditioned metric with closed-form derivatives.
pub struct RandomSmoothMetric {
    d: usize,
    waves: Vec<Wave>,
}

impl RandomSmoothMetric {
    pub fn new(d: usize, seed: u64, amplitude: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let waves = (0..3)
            .map(|_| Wave {
                matrix: DMatrix::from_fn(d, d, |_, _| amplitude * rng.gen_range(-1.0..1.0)),
                freq: (0..d).map(|_| rng.gen_range(-1.5..1.5)).collect(),
                speed: rng.gen_range(-1.0..1.0),
                phase: rng.gen_range(0.0..std::f64::consts::TAU),
            })
            .collect();
        Self { d, waves }
    }

    fn arg(w: &Wave, u: &[f64], t: f64) -> f64 {
        w.freq.iter().zip(u).map(|(a, b)| a * b).sum::<f64>() + w.speed * t + w.phase
    }

    fn factor(&self, u: &[f64], t: f64) -> DMatrix<f64> {
        let mut g = DMatrix::identity(self.d, self.d);
        for w in &self.waves {
            g += &w.matrix * Self::arg(w, u, t).sin();
        }
        g
    }

    /// Derivative of the factor along `dir` (coordinate `k`, or time when `None`).
    fn factor_derivative(&self, u: &[f64], t: f64, dir: Option<usize>) -> DMatrix<f64> {
        let mut g = DMatrix::zeros(self.d, self.d);
        for w in &self.waves {
            let rate = match dir {
                Some(k) => w.freq[k],
                None => w.speed,
            };
            g += &w.matrix * (rate * Self::arg(w, u, t).cos());
        }
        g
    }

    fn product_rule(&self, u: &[f64], t: f64, dir: Option<usize>) -> DMatrix<f64> {
        let f = self.factor(u, t);
        let df = self.factor_derivative(u, t, dir);
        df.transpose() * &f + f.transpose() * df
    }
}

impl MetricField for RandomSmoothMetric {
    fn dim(&self) -> usize {
        self.d
    }
    fn metric(&self, u: &[f64], t: f64) -> DMatrix<f64> {
        let f = self.factor(u, t);
        f.transpose() * f
    }
    fn metric_du(&self, u: &[f64], t: f64) -> Vec<DMatrix<f64>> {
        (0..self.d).map(|k| self.product_rule(u, t, Some(k))).collect()
    }
    fn metric_dt(&self, u: &[f64], t: f64) -> DMatrix<f64> {
        self.product_rule(u, t, None)
    }
}

/// `1 + a Σ_k c_k sin(ω_k·u + s_k t + φ_k)`; positive for small `a`.
pub struct RandomSmoothScalar {
    amplitude: f64,
    terms: Vec<(f64, Vec<f64>, f64, f64)>,
}

impl RandomSmoothScalar {
    pub fn new(d: usize, seed: u64, amplitude: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let terms = (0..3)
            .map(|_| {
                (
                    rng.gen_range(-1.0..1.0),
                    (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect(),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(0.0..std::f64::consts::TAU),
                )
            })
            .collect();
        Self { amplitude, terms }
    }

    pub fn eval(&self, u: &[f64], t: f64) -> f64 {
        1.0 + self.amplitude
            * self
                .terms
                .iter()
                .map(|(c, w, s, p)| c * (w.iter().zip(u).map(|(a, b)| a * b).sum::<f64>() + s * t + p).sin())
                .sum::<f64>()
    }
}

/// An immersion given by a closure.
pub struct FnImmersion<F> {
    pub d: usize,
    pub extrinsic: usize,
    pub f: F,
}

impl<F: Fn(&[f64], f64) -> DVector<f64>> ImmersionJet for FnImmersion<F> {
    fn intrinsic_dim(&self) -> usize {
        self.d
    }
    fn extrinsic_dim(&self) -> usize {
        self.extrinsic
    }
    fn point(&self, u: &[f64], t: f64) -> DVector<f64> {
        (self.f)(u, t)
    }
}

/// `ℰ(u) = A u + b`.
pub struct AffineImmersion {
    pub matrix: DMatrix<f64>,
    pub offset: DVector<f64>,
}

impl AffineImmersion {
    /// ℝ^d into ℝ^D, padding with zeros.
    pub fn padded_identity(d: usize, extrinsic: usize) -> Self {
        Self {
            matrix: DMatrix::from_fn(extrinsic, d, |i, j| if i == j { 1.0 } else { 0.0 }),
            offset: DVector::zeros(extrinsic),
        }
    }
}

impl ImmersionJet for AffineImmersion {
    fn intrinsic_dim(&self) -> usize {
        self.matrix.ncols()
    }
    fn extrinsic_dim(&self) -> usize {
        self.matrix.nrows()
    }
    fn point(&self, u: &[f64], _t: f64) -> DVector<f64> {
        &self.matrix * DVector::from_column_slice(u) + &self.offset
    }
}

/// Round sphere of radius `radius` in ℝ^{d+1} via nested spherical angles:
/// `x₀ = r cos u₀`, `x₁ = r sin u₀ cos u₁`, …, `x_d = r sin u₀ ⋯ sin u_{d−1}`.
pub struct SphereImmersion {
    pub d: usize,
    pub radius: f64,
}

impl ImmersionJet for SphereImmersion {
    fn intrinsic_dim(&self) -> usize {
        self.d
    }
    fn extrinsic_dim(&self) -> usize {
        self.d + 1
    }
    fn point(&self, u: &[f64], _t: f64) -> DVector<f64> {
        let mut out = DVector::zeros(self.d + 1);
        let mut sines = self.radius;
        for k in 0..self.d {
            out[k] = sines * u[k].cos();
            sines *= u[k].sin();
        }
        out[self.d] = sines;
        out
    }
}
