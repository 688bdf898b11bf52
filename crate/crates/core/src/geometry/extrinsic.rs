use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::curvature::{christoffel_second_kind, to_mat};
use super::formulas::{self, DiagonalConvention};
use super::{checked_inverse, ImmersionJet, MetricField};
use crate::ad::Mat;
use crate::{Error, Result};

/// Source of `∂_ij ℰ` for extrinsic proxies.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SecondDerivativeMode {
    /// True second derivatives.
    #[default]
    Exact,
    /// `∂_ij ℰ^a ≈ J^a_i J^a_j`, built from first derivatives only.
    GaussNewton,
}

/// `JᵀJ`.
pub fn induced_metric(jet: &dyn ImmersionJet, u: &[f64], t: f64) -> DMatrix<f64> {
    let j = jet.jacobian(u, t);
    j.transpose() * j
}

fn hessian_rows(jet: &dyn ImmersionJet, u: &[f64], t: f64, mode: SecondDerivativeMode) -> Vec<Vec<f64>> {
    let d = jet.intrinsic_dim();
    match mode {
        SecondDerivativeMode::Exact => jet
            .second_derivatives(u, t)
            .into_iter()
            .map(|v: DVector<f64>| v.iter().copied().collect())
            .collect(),
        SecondDerivativeMode::GaussNewton => {
            let j = jet.jacobian(u, t);
            (0..d * d)
                .map(|ij| {
                    let (i, k) = (ij / d, ij % d);
                    (0..j.nrows()).map(|a| j[(a, i)] * j[(a, k)]).collect()
                })
                .collect()
        }
    }
}

/// `Π_ij = ||∂_ijℰ − g^{kl}⟨∂_ijℰ, ∂_kℰ⟩∂_lℰ||` using the supplied metric.
pub fn second_fundamental_form_proxy(
    jet: &dyn ImmersionJet,
    metric: &dyn MetricField,
    u: &[f64],
    t: f64,
    mode: SecondDerivativeMode,
) -> Result<DMatrix<f64>> {
    let g_inv = checked_inverse(&metric.metric(u, t))?;
    let jac = to_mat(&jet.jacobian(u, t));
    let hess = hessian_rows(jet, u, t, mode);
    Ok(formulas::second_fundamental_form(&hess, &jac, &to_mat(&g_inv)).to_nalgebra())
}

/// `||Δ_g ℰ||`, the componentwise Laplace–Beltrami norm.
pub fn mean_curvature_proxy(
    jet: &dyn ImmersionJet,
    metric: &dyn MetricField,
    u: &[f64],
    t: f64,
    mode: SecondDerivativeMode,
) -> Result<f64> {
    let g_inv = checked_inverse(&metric.metric(u, t))?;
    let gamma = christoffel_second_kind(metric, u, t)?;
    let jac = to_mat(&jet.jacobian(u, t));
    let hess = hessian_rows(jet, u, t, mode);
    let lap = formulas::immersion_laplacian(&hess, &jac, &to_mat(&g_inv), &gamma);
    Ok(formulas::mean_curvature_from_laplacian(&lap))
}

/// `Ĥ = Π − (H/d) g`.
pub fn traceless_extrinsic_tensor(pi: &DMatrix<f64>, g: &DMatrix<f64>, mean_curvature: f64) -> Result<DMatrix<f64>> {
    if pi.shape() != g.shape() || !g.is_square() {
        return Err(Error::Shape(format!("Π is {:?} but g is {:?}", pi.shape(), g.shape())));
    }
    Ok(formulas::traceless(&to_mat(pi), &to_mat(g), &mean_curvature).to_nalgebra())
}

fn require_d3(d: usize) -> Result<()> {
    if d < 3 {
        return Err(Error::Dimension {
            expected: ">= 3",
            got: d,
        });
    }
    Ok(())
}

/// Contracted flow tensor `H_ij = g^{kl} H_{ikjl}`.
pub fn h_flow_tensor(
    g: &DMatrix<f64>,
    hhat: &DMatrix<f64>,
    ambient_scalar: f64,
    convention: DiagonalConvention,
) -> Result<DMatrix<f64>> {
    require_d3(g.nrows())?;
    let g_inv = checked_inverse(g)?;
    Ok(formulas::h_flow(&to_mat(g), &to_mat(&g_inv), &to_mat(hhat), ambient_scalar, convention).to_nalgebra())
}

/// The three pieces of `H_{ijkl}`, each stored `((i*d + j)*d + k)*d + l`.
#[derive(Clone, Debug)]
pub struct FlowTensorParts {
    pub d: usize,
    pub scalar: Vec<f64>,
    pub ricci: Vec<f64>,
    pub gamma: Vec<f64>,
}

impl FlowTensorParts {
    pub fn max_abs(part: &[f64]) -> f64 {
        part.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

/// `H_{ijkl}` split into its scalar-curvature, Ricci and diagonal (`Γ_{ijkl}`) parts.
pub fn h_flow_parts(g: &DMatrix<f64>, hhat: &DMatrix<f64>, ambient_scalar: f64) -> Result<FlowTensorParts> {
    let d = g.nrows();
    require_d3(d)?;
    let df = d as f64;
    let n = d * d * d * d;
    let (mut scalar, mut ricci, mut gamma) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for i in 0..d {
        for j in 0..d {
            for k in 0..d {
                for l in 0..d {
                    let idx = ((i * d + j) * d + k) * d + l;
                    scalar[idx] = -ambient_scalar / ((df - 1.0) * (df - 2.0)) * (g[(i, k)] * g[(j, l)] - g[(i, l)] * g[(j, k)]);
                    ricci[idx] = (g[(i, k)] * hhat[(j, l)] - g[(i, l)] * hhat[(j, k)] - g[(j, k)] * hhat[(i, l)]
                        + g[(j, l)] * hhat[(i, k)])
                        / (df - 2.0);
                    if i == j {
                        gamma[idx] = hhat[(i, j)] * g[(k, l)] / df;
                    }
                }
            }
        }
    }
    Ok(FlowTensorParts { d, scalar, ricci, gamma })
}

/// `g^{ij} A_ij` on nalgebra matrices.
pub fn metric_trace(g: &DMatrix<f64>, a: &DMatrix<f64>) -> Result<f64> {
    let inv = checked_inverse(g)?;
    Ok(formulas::g_trace(&to_mat(&inv), &Mat::from_nalgebra(a)))
}
