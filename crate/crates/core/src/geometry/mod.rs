//! Differential geometry on the latent chart: metrics, Christoffel symbols,
//! curvature oracles and proxies, circulation estimates, extrinsic curvature
//! of immersions, conformal changes and round-sphere closed forms.
//!
//! The `f64` entry points in this module evaluate derivatives of fields by
//! centered finite differences unless a field supplies them. They are the
//! reference implementations the network-backed losses are checked against.

mod circulation;
mod conformal;
mod curvature;
mod extrinsic;
pub mod fields;
pub mod formulas;
mod sphere;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use circulation::{
    circulation_curvature_estimate, circulation_raw, curl_form_disc_integral, gauss_legendre, CirculationEstimate,
};
pub use conformal::conformal_scalar_curvature;
pub use curvature::{
    christoffel_second_kind, gaussian_curvature_direct, laplace_beltrami, riemann_oracle, volume_element,
    volume_element_rate, CurvatureReport,
};
pub use extrinsic::{
    h_flow_parts, h_flow_tensor, induced_metric, mean_curvature_proxy, metric_trace, second_fundamental_form_proxy,
    traceless_extrinsic_tensor, FlowTensorParts, SecondDerivativeMode,
};
pub use formulas::{Christoffel, DiagonalConvention};
pub use sphere::{sphere_metric, sphere_projection_encoder, sphere_radius, sphere_radius_ricci, RadiusMode};

/// Eigenvalue floor below which a metric is treated as singular.
pub const EPS_INV: f64 = 1e-10;
/// Centered finite-difference step in chart units.
pub const FD_STEP: f64 = 1e-4;
/// Minimum angular distance from sphere-chart poles.
pub const EPS_CHART: f64 = 1e-3;

/// A compact coordinate box `Σ ⊂ ℝ^d` together with the extrinsic dimension.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalChart {
    pub d: usize,
    pub extrinsic_dim: usize,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl LocalChart {
    /// Box `[lo, hi]^d` with the Whitney-style default `D = 2d − 1`.
    pub fn cube(d: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::new(vec![lo; d], vec![hi; d], 2 * d - 1)
    }

    pub fn new(lower: Vec<f64>, upper: Vec<f64>, extrinsic_dim: usize) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(Error::InvalidArgument("chart bounds must have matching nonzero length".into()));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l < u) || !l.is_finite() || !u.is_finite()) {
            return Err(Error::InvalidArgument("chart bounds must be finite and nonempty".into()));
        }
        Ok(Self {
            d: lower.len(),
            extrinsic_dim,
            lower,
            upper,
        })
    }

    /// The default symmetric chart `[−π+ε, π−ε]^d`.
    pub fn default_box(d: usize) -> Self {
        let e = std::f64::consts::PI - EPS_CHART;
        Self::cube(d, -e, e).expect("valid default chart")
    }

    pub fn contains(&self, u: &[f64]) -> bool {
        u.iter().zip(self.lower.iter().zip(&self.upper)).all(|(x, (l, h))| *l <= *x && *x <= *h)
    }

    /// Whether the closed ball `B_r(center)` lies inside the box.
    pub fn contains_ball(&self, center: &[f64], radius: f64) -> bool {
        center
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(x, (l, h))| *l <= *x - radius && *x + radius <= *h)
    }

    pub fn center(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(l, h)| 0.5 * (l + h)).collect()
    }

    pub fn half_width(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(l, h)| 0.5 * (h - l)).collect()
    }
}

fn shifted(u: &[f64], k: usize, h: f64) -> Vec<f64> {
    let mut v = u.to_vec();
    v[k] += h;
    v
}

/// A time-dependent Riemannian metric on a chart.
pub trait MetricField {
    fn dim(&self) -> usize;

    fn metric(&self, u: &[f64], t: f64) -> DMatrix<f64>;

    /// `∂_k g` for every coordinate `k`.
    fn metric_du(&self, u: &[f64], t: f64) -> Vec<DMatrix<f64>> {
        let h = FD_STEP;
        (0..self.dim())
            .map(|k| (self.metric(&shifted(u, k, h), t) - self.metric(&shifted(u, k, -h), t)) / (2.0 * h))
            .collect()
    }

    fn metric_dt(&self, u: &[f64], t: f64) -> DMatrix<f64> {
        let h = FD_STEP;
        (self.metric(u, t + h) - self.metric(u, t - h)) / (2.0 * h)
    }
}

impl<M: MetricField + ?Sized> MetricField for &M {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn metric(&self, u: &[f64], t: f64) -> DMatrix<f64> {
        (**self).metric(u, t)
    }
    fn metric_du(&self, u: &[f64], t: f64) -> Vec<DMatrix<f64>> {
        (**self).metric_du(u, t)
    }
    fn metric_dt(&self, u: &[f64], t: f64) -> DMatrix<f64> {
        (**self).metric_dt(u, t)
    }
}

/// A smooth map `ℰ(u, t) ∈ ℝ^D` with first and second chart derivatives.
pub trait ImmersionJet {
    fn intrinsic_dim(&self) -> usize;

    fn extrinsic_dim(&self) -> usize;

    fn point(&self, u: &[f64], t: f64) -> DVector<f64>;

    /// `D x d` Jacobian `∂ℰ/∂u`.
    fn jacobian(&self, u: &[f64], t: f64) -> DMatrix<f64> {
        let h = FD_STEP;
        let d = self.intrinsic_dim();
        let mut j = DMatrix::zeros(self.extrinsic_dim(), d);
        for k in 0..d {
            let col = (self.point(&shifted(u, k, h), t) - self.point(&shifted(u, k, -h), t)) / (2.0 * h);
            j.set_column(k, &col);
        }
        j
    }

    /// `∂_ij ℰ` stored at `i * d + j`.
    fn second_derivatives(&self, u: &[f64], t: f64) -> Vec<DVector<f64>> {
        let h = FD_STEP;
        let d = self.intrinsic_dim();
        let f0 = self.point(u, t);
        let mut out = vec![DVector::zeros(self.extrinsic_dim()); d * d];
        for i in 0..d {
            for j in i..d {
                let v = if i == j {
                    (self.point(&shifted(u, i, h), t) - &f0 * 2.0 + self.point(&shifted(u, i, -h), t)) / (h * h)
                } else {
                    let pp = self.point(&shifted(&shifted(u, i, h), j, h), t);
                    let pm = self.point(&shifted(&shifted(u, i, h), j, -h), t);
                    let mp = self.point(&shifted(&shifted(u, i, -h), j, h), t);
                    let mm = self.point(&shifted(&shifted(u, i, -h), j, -h), t);
                    (pp - pm - mp + mm) / (4.0 * h * h)
                };
                out[i * d + j] = v.clone();
                out[j * d + i] = v;
            }
        }
        out
    }
}

/// Inverse of a metric after checking its smallest eigenvalue.
pub fn checked_inverse(g: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let sym = (g + g.transpose()) * 0.5;
    let min_eigenvalue = sym.clone().symmetric_eigen().eigenvalues.min();
    if !(min_eigenvalue > EPS_INV) {
        return Err(Error::SingularMetric { min_eigenvalue });
    }
    sym.try_inverse().ok_or(Error::SingularMetric { min_eigenvalue })
}
