use nalgebra::DMatrix;

use super::formulas::{self, Christoffel};
use super::{checked_inverse, MetricField, EPS_INV, FD_STEP};
use crate::ad::Mat;
use crate::{Error, Result};

pub(crate) fn to_mat(m: &DMatrix<f64>) -> Mat<f64> {
    Mat::from_nalgebra(m)
}

fn shifted(u: &[f64], k: usize, h: f64) -> Vec<f64> {
    let mut v = u.to_vec();
    v[k] += h;
    v
}

/// `Γ_{ij}^k` at `(u, t)` from the field's metric derivatives.
pub fn christoffel_second_kind(metric: &dyn MetricField, u: &[f64], t: f64) -> Result<Christoffel<f64>> {
    let g = metric.metric(u, t);
    let g_inv = checked_inverse(&g)?;
    let dg: Vec<Mat<f64>> = metric.metric_du(u, t).iter().map(to_mat).collect();
    Ok(formulas::christoffel(&to_mat(&g_inv), &dg))
}

/// Full curvature at a point, computed directly from `Γ` and its finite
/// differences.
#[derive(Clone, Debug)]
pub struct CurvatureReport {
    pub d: usize,
    pub christoffel: Christoffel<f64>,
    /// Fully lowered `R_{ijkl}`, index `((i*d + j)*d + k)*d + l`.
    pub riemann: Vec<f64>,
    pub ricci: DMatrix<f64>,
    pub scalar: f64,
    /// `scalar / 2` when `d = 2`.
    pub gaussian: Option<f64>,
}

impl CurvatureReport {
    pub fn riemann(&self, i: usize, j: usize, k: usize, l: usize) -> f64 {
        let d = self.d;
        self.riemann[((i * d + j) * d + k) * d + l]
    }

    /// Largest violation of the Riemann symmetries
    /// `R_{ijkl} = −R_{jikl} = −R_{ijlk} = R_{klij}`.
    pub fn symmetry_defect(&self) -> f64 {
        let d = self.d;
        let mut worst = 0.0_f64;
        for i in 0..d {
            for j in 0..d {
                for k in 0..d {
                    for l in 0..d {
                        let r = self.riemann(i, j, k, l);
                        worst = worst
                            .max((r + self.riemann(j, i, k, l)).abs())
                            .max((r + self.riemann(i, j, l, k)).abs())
                            .max((r - self.riemann(k, l, i, j)).abs());
                    }
                }
            }
        }
        worst
    }
}

/// Brute-force curvature: `R^ρ_{σμν} = ∂_μΓ^ρ_{νσ} − ∂_νΓ^ρ_{μσ} + Γ^ρ_{μλ}Γ^λ_{νσ} − Γ^ρ_{νλ}Γ^λ_{μσ}`,
/// `Ric_{σν} = R^ρ_{σρν}`, `R = g^{σν}Ric_{σν}`.
pub fn riemann_oracle(metric: &dyn MetricField, u: &[f64], t: f64) -> Result<CurvatureReport> {
    let d = metric.dim();
    let g = metric.metric(u, t);
    let g_inv = checked_inverse(&g)?;
    let gamma = christoffel_second_kind(metric, u, t)?;
    let h = FD_STEP;
    let mut d_gamma = Vec::with_capacity(d);
    for m in 0..d {
        let plus = christoffel_second_kind(metric, &shifted(u, m, h), t)?;
        let minus = christoffel_second_kind(metric, &shifted(u, m, -h), t)?;
        let diff: Vec<f64> = plus
            .as_slice()
            .iter()
            .zip(minus.as_slice())
            .map(|(a, b)| (a - b) / (2.0 * h))
            .collect();
        d_gamma.push(diff);
    }
    let dg = |m: usize, rho: usize, i: usize, j: usize| d_gamma[m][(rho * d + i) * d + j];
    let gm = |rho: usize, i: usize, j: usize| *gamma.get(rho, i, j);

    // R^ρ_{σμν}
    let mut upper = vec![0.0; d * d * d * d];
    for rho in 0..d {
        for sigma in 0..d {
            for mu in 0..d {
                for nu in 0..d {
                    let mut v = dg(mu, rho, nu, sigma) - dg(nu, rho, mu, sigma);
                    for lam in 0..d {
                        v += gm(rho, mu, lam) * gm(lam, nu, sigma) - gm(rho, nu, lam) * gm(lam, mu, sigma);
                    }
                    upper[((rho * d + sigma) * d + mu) * d + nu] = v;
                }
            }
        }
    }
    let mut riemann = vec![0.0; d * d * d * d];
    for a in 0..d {
        for sigma in 0..d {
            for mu in 0..d {
                for nu in 0..d {
                    riemann[((a * d + sigma) * d + mu) * d + nu] =
                        (0..d).map(|rho| g[(a, rho)] * upper[((rho * d + sigma) * d + mu) * d + nu]).sum();
                }
            }
        }
    }
    let ricci = DMatrix::from_fn(d, d, |sigma, nu| (0..d).map(|rho| upper[((rho * d + sigma) * d + rho) * d + nu]).sum());
    let scalar = (0..d).flat_map(|i| (0..d).map(move |j| (i, j))).map(|(i, j)| g_inv[(i, j)] * ricci[(i, j)]).sum();
    Ok(CurvatureReport {
        d,
        christoffel: gamma,
        riemann,
        ricci,
        scalar,
        gaussian: (d == 2).then_some(scalar / 2.0),
    })
}

fn circulation_pair(metric: &dyn MetricField, u: &[f64], t: f64) -> Result<(f64, f64)> {
    let g = metric.metric(u, t);
    if g[(0, 0)] <= EPS_INV {
        return Err(Error::DegenerateChart(format!("g11 = {:e} at {u:?}", g[(0, 0)])));
    }
    let gamma = christoffel_second_kind(metric, u, t)?;
    Ok(formulas::circulation_coefficients(&to_mat(&g), &gamma))
}

/// `K = (1/√det g)(∂₂((√det g/g₁₁)Γ₁₁²) − ∂₁((√det g/g₁₁)Γ₁₂²))` by direct differentiation.
pub fn gaussian_curvature_direct(metric: &dyn MetricField, u: &[f64], t: f64) -> Result<f64> {
    if metric.dim() != 2 {
        return Err(Error::Dimension {
            expected: "2",
            got: metric.dim(),
        });
    }
    let h = FD_STEP;
    let (p_up, _) = circulation_pair(metric, &shifted(u, 1, h), t)?;
    let (p_dn, _) = circulation_pair(metric, &shifted(u, 1, -h), t)?;
    let (_, q_up) = circulation_pair(metric, &shifted(u, 0, h), t)?;
    let (_, q_dn) = circulation_pair(metric, &shifted(u, 0, -h), t)?;
    let sqrt_det = volume_element(metric, u, t);
    if sqrt_det <= 0.0 {
        return Err(Error::SingularMetric { min_eigenvalue: 0.0 });
    }
    Ok(((p_up - p_dn) - (q_up - q_dn)) / (2.0 * h) / sqrt_det)
}

/// `√det g`, with negative determinants clipped to zero.
pub fn volume_element(metric: &dyn MetricField, u: &[f64], t: f64) -> f64 {
    metric.metric(u, t).determinant().max(0.0).sqrt()
}

/// `∂_t √det g = ½ √det g · tr(g⁻¹ ∂_t g)` (Jacobi's formula); zero where `g` is singular.
pub fn volume_element_rate(metric: &dyn MetricField, u: &[f64], t: f64) -> f64 {
    let g = metric.metric(u, t);
    let vol = g.determinant().max(0.0).sqrt();
    match g.try_inverse() {
        Some(inv) if vol > 0.0 => 0.5 * vol * (inv * metric.metric_dt(u, t)).trace(),
        _ => 0.0,
    }
}

/// Divergence-form Laplace–Beltrami `(1/√g) ∂_i(√g g^{ij} ∂_j f)` by nested
/// centered differences.
pub fn laplace_beltrami(metric: &dyn MetricField, f: &dyn Fn(&[f64]) -> f64, u: &[f64], t: f64) -> Result<f64> {
    let d = metric.dim();
    let h = FD_STEP;
    let grad = |v: &[f64]| -> Vec<f64> {
        (0..d).map(|j| (f(&shifted(v, j, h)) - f(&shifted(v, j, -h))) / (2.0 * h)).collect()
    };
    let flux = |v: &[f64], i: usize| -> Result<f64> {
        let g = metric.metric(v, t);
        let inv = checked_inverse(&g)?;
        let vol = g.determinant().max(0.0).sqrt();
        let df = grad(v);
        Ok(vol * (0..d).map(|j| inv[(i, j)] * df[j]).sum::<f64>())
    };
    let mut div = 0.0;
    for i in 0..d {
        div += (flux(&shifted(u, i, h), i)? - flux(&shifted(u, i, -h), i)?) / (2.0 * h);
    }
    let vol = volume_element(metric, u, t);
    if vol <= 0.0 {
        return Err(Error::SingularMetric { min_eigenvalue: 0.0 });
    }
    Ok(div / vol)
}
