//! Path-integration loss for surfaces: a Hadamard-ratio flow term at sample
//! centers plus the circulation of `(√det g/g₁₁)(Γ₁₁² du¹ + Γ₁₂² du²)`
//! around small circles, which stands in for `∬ √det g K`.

use std::f64::consts::PI;

use ndarray::Array2;

use crate::ad::{Mat, Var};
use crate::geometry::formulas::{christoffel, circulation_coefficients};
use crate::geometry::LocalChart;
use crate::{Error, Result};

use super::fields::{channel_matrix, seed_chart_time, MetricModel};
use super::spec::CirculationSettings;

/// The gauss-path loss and its diagnostics.
pub struct GaussPathTerms {
    pub loss: Var,
    /// Batch mean of the ratio term.
    pub ratio: Var,
    /// Batch mean of the raw circulation.
    pub circulation: Var,
    /// Per-sample `K̃`, `n x 1`.
    pub curvature_estimate: Var,
    /// Fraction of denominator entries masked by the `ε_den` guard.
    pub mask_fraction: f64,
}

/// `K² ≈ 2K̃K − K̃²`, the first-order expansion about `K̃`.
pub fn taylor_surrogate(k: f64, k_tilde: f64) -> f64 {
    2.0 * k_tilde * k - k_tilde * k_tilde
}

/// Move each center so the closed ball of its radius fits in the chart.
pub fn clamp_centers(centers: &Array2<f64>, radii: &[f64], chart: &LocalChart) -> Result<Array2<f64>> {
    let mut out = centers.clone();
    for (mut row, &r) in out.rows_mut().into_iter().zip(radii) {
        let center = row.to_vec();
        for (k, x) in row.iter_mut().enumerate() {
            let (lo, hi) = (chart.lower[k] + r, chart.upper[k] - r);
            if lo > hi {
                return Err(Error::BallOutsideChart {
                    center,
                    radius: r,
                });
            }
            *x = x.clamp(lo, hi);
        }
    }
    Ok(out)
}

/// Per-sample `√det g Σ_ij (∂_tg∘∂_tg − K̃²g∘g)_ij / (∂_tg∘g − 2K̃g∘g)_ij`,
/// dropping entries whose denominator satisfies `|den| ≤ eps_den`. Returns
/// the `n x 1` terms and the masked fraction.
pub fn ratio_term(g: &Mat<Var>, dt_g: &Mat<Var>, k_tilde: &Var, eps_den: f64) -> (Var, f64) {
    let rows = k_tilde.rows();
    let tape = k_tilde.tape();
    let k_sq = k_tilde.square();
    let mut total: Option<Var> = None;
    let mut masked = 0usize;
    let entries = g.rows() * g.cols();
    for (gij, dij) in g.entries().iter().zip(dt_g.entries()) {
        let g_sq = gij.square();
        let num = &dij.square() - &(&k_sq * &g_sq);
        let den = &(dij * gij) - &(k_tilde * &g_sq).scale(2.0);
        let keep = den.with_value(|v| v.mapv(|x| if x.abs() > eps_den { 1.0 } else { 0.0 }));
        masked += keep.iter().filter(|&&k| k == 0.0).count();
        let keep = keep.into_shape_with_order((rows, 1)).expect("column");
        let fill = tape.constant(keep.mapv(|k| 1.0 - k));
        let keep = tape.constant(keep);
        let safe = &(&den * &keep) + &fill;
        let term = &(&num / &safe) * &keep;
        total = Some(match total {
            Some(acc) => &acc + &term,
            None => term,
        });
    }
    let sum = total.expect("nonempty metric");
    let out = &sum * &g.det().sqrt();
    (out, masked as f64 / (entries * rows) as f64)
}

/// Per-circle mean of `P·(−sin ω) + Q·cos ω` over `L` equally spaced
/// angles, for `n` circles at time `t` (`n x 1`). Returns `K̃` (`n x 1`).
pub fn circulation_estimates(
    metric: &dyn MetricModel,
    centers: &Array2<f64>,
    radii: &[f64],
    t: &Var,
    segments: usize,
) -> Result<Var> {
    if metric.dim() != 2 || centers.ncols() != 2 {
        return Err(Error::Dimension {
            expected: "2",
            got: centers.ncols(),
        });
    }
    let n = centers.nrows();
    let tape = t.tape();
    let m = n * segments;
    // rows are circle-major: row c * L + l is angle l of circle c
    let mut points = Array2::zeros((m, 2));
    let mut sin_w = Array2::zeros((m, 1));
    let mut cos_w = Array2::zeros((m, 1));
    let mut repeat = Array2::zeros((m, n));
    for c in 0..n {
        for l in 0..segments {
            let row = c * segments + l;
            let omega = 2.0 * PI * l as f64 / segments as f64;
            points[[row, 0]] = centers[[c, 0]] + radii[c] * omega.cos();
            points[[row, 1]] = centers[[c, 1]] + radii[c] * omega.sin();
            sin_w[[row, 0]] = -omega.sin();
            cos_w[[row, 0]] = omega.cos();
            repeat[[row, c]] = 1.0;
        }
    }
    // times are repeated per circle through a constant selection matrix
    let t_rep = tape.constant(repeat).matmul(t);
    let x = seed_chart_time(&tape.constant(points), &t_rep, &[&[0], &[1]]);
    let entries = metric.metric_jet(&x)?;
    let g = channel_matrix(&entries, 2, &[], m);
    let dg = [channel_matrix(&entries, 2, &[0], m), channel_matrix(&entries, 2, &[1], m)];
    let gamma = christoffel(&g.inverse(), &dg);
    let (p, q) = circulation_coefficients(&g, &gamma);
    let terms = &(&p * &tape.constant(sin_w)) + &(&q * &tape.constant(cos_w));
    Ok(terms.reshape(n, segments).sum_cols().scale(1.0 / segments as f64))
}

/// The full loss `(mean ratio + mean raw circulation)²` at `n` centers with
/// one circle each. Centers are clamped into the chart first.
pub fn loss_gauss_path(
    metric: &dyn MetricModel,
    centers: &Array2<f64>,
    radii: &[f64],
    t: &Var,
    chart: &LocalChart,
    settings: &CirculationSettings,
    eps_den: f64,
) -> Result<GaussPathTerms> {
    let n = centers.nrows();
    if radii.len() != n || t.rows() != n {
        return Err(Error::Shape(format!(
            "{n} centers, {} radii and {} times",
            radii.len(),
            t.rows()
        )));
    }
    let centers = clamp_centers(centers, radii, chart)?;
    let tape = t.tape();
    let k_tilde = circulation_estimates(metric, &centers, radii, t, settings.segments)?;
    let radius_col = tape.constant(Array2::from_shape_vec((n, 1), radii.to_vec()).expect("column"));
    let raw = (&k_tilde * &radius_col).scale(2.0 * PI);

    let x = seed_chart_time(&tape.constant(centers), t, &[&[2]]);
    let entries = metric.metric_jet(&x)?;
    let g = channel_matrix(&entries, 2, &[], n);
    let dt_g = channel_matrix(&entries, 2, &[2], n);
    let (ratio, mask_fraction) = ratio_term(&g, &dt_g, &k_tilde, eps_den);
    let ratio = ratio.mean();
    let circulation = raw.mean();
    let loss = (&ratio + &circulation).square();
    Ok(GaussPathTerms {
        loss,
        ratio,
        circulation,
        curvature_estimate: k_tilde,
        mask_fraction,
    })
}

/// `f64` convenience: the ratio term of a single sample.
pub fn ratio_term_f64(g: &[f64; 4], dt_g: &[f64; 4], k_tilde: f64, eps_den: f64) -> (f64, usize) {
    let det = g[0] * g[3] - g[1] * g[2];
    let mut sum = 0.0;
    let mut masked = 0;
    for e in 0..4 {
        let den = dt_g[e] * g[e] - 2.0 * k_tilde * g[e] * g[e];
        if den.abs() <= eps_den {
            masked += 1;
            continue;
        }
        sum += (dt_g[e] * dt_g[e] - k_tilde * k_tilde * g[e] * g[e]) / den;
    }
    (det.sqrt() * sum, masked)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ad::{Jet, Tape};
    use crate::geometry::{circulation_curvature_estimate, fields::FnMetric};
    use crate::losses::fields::FnMetricModel;
    use nalgebra::DMatrix;
    use ndarray::array;

    fn chart() -> LocalChart {
        LocalChart::cube(2, -1.0, 1.0).unwrap()
    }

    #[test]
    fn surrogate_exact_at_expansion_point() {
        for k in [-2.0, 0.0, 0.3, 5.0] {
            assert_eq!(taylor_surrogate(k, k), k * k);
        }
    }

    #[test]
    fn flat_static_metric_is_fully_masked_zero() {
        let tape = Tape::new();
        let flat = FnMetricModel {
            d: 2,
            f: |x: &Jet| {
                let c = |v: f64| Jet::constant(x.spec(), x.value().tape().scalar(v));
                vec![c(1.0), c(0.0), c(0.0), c(1.0)]
            },
        };
        let centers = array![[0.0, 0.0], [0.3, -0.2], [0.5, 0.5]];
        let t = tape.constant(array![[0.1], [0.4], [0.8]]);
        let s = CirculationSettings::default();
        let out = loss_gauss_path(&flat, &centers, &[0.1, 0.1, 0.2], &t, &chart(), &s, 1e-6).unwrap();
        assert_eq!(out.loss.item(), 0.0);
        assert!(out.circulation.item().abs() <= 1e-10);
        assert_eq!(out.mask_fraction, 1.0);
    }

    /// `g = e^{K̃t} g₀` satisfies `∂_tg = K̃g`, so every ratio numerator vanishes.
    #[test]
    fn ratio_vanishes_on_exact_flow() {
        let tape = Tape::new();
        for &kt in &[-0.7, 0.4, 2.0] {
            let g0 = [2.0, 0.3, 0.3, 1.5];
            let t: f64 = 0.6;
            let s = (kt * t).exp();
            let g: Vec<Var> = g0.iter().map(|v| tape.constant(array![[v * s]])).collect();
            let dg: Vec<Var> = g0.iter().map(|v| tape.constant(array![[kt * v * s]])).collect();
            let (r, frac) = ratio_term(
                &Mat::from_vec(2, 2, g),
                &Mat::from_vec(2, 2, dg),
                &tape.constant(array![[kt]]),
                1e-6,
            );
            assert!(r.item().abs() < 1e-6);
            assert_eq!(frac, 0.0);
        }
    }

    #[test]
    fn ratio_paths_agree() {
        let tape = Tape::new();
        let g = [1.3, 0.2, 0.2, 0.9];
        let dg = [0.4, -0.1, -0.1, 0.25];
        let k = 0.35;
        let (a, _) = ratio_term(
            &Mat::from_vec(2, 2, g.iter().map(|v| tape.constant(array![[*v]])).collect()),
            &Mat::from_vec(2, 2, dg.iter().map(|v| tape.constant(array![[*v]])).collect()),
            &tape.constant(array![[k]]),
            1e-6,
        );
        let (b, m) = ratio_term_f64(&g, &dg, k, 1e-6);
        assert_eq!(m, 0);
        assert!((a.item() - b).abs() < 1e-12);
    }

    fn bumpy(x: &Jet) -> Vec<Jet> {
        // g = diag(1 + 0.3u₀² + 0.1t, e^{0.4u₁ + 0.2u₀}) + 0.1 sin(u₀)(E₁₂ + E₂₁)
        let (u0, u1, t) = (x.col(0), x.col(1), x.col(2));
        let g00 = u0.square().scale(0.3).add(&t.scale(0.1)).add_scalar(1.0);
        let g11 = u1.scale(0.4).add(&u0.scale(0.2)).exp();
        let g01 = u0.sin().scale(0.1);
        vec![g00, g01.clone(), g01, g11]
    }

    #[test]
    fn estimates_match_the_finite_difference_estimator() {
        let tape = Tape::new();
        let model = FnMetricModel { d: 2, f: bumpy };
        let oracle = FnMetric {
            d: 2,
            f: |u: &[f64], t: f64| {
            let g01 = 0.1 * u[0].sin();
            DMatrix::from_row_slice(
                2,
                2,
                    &[1.0 + 0.3 * u[0] * u[0] + 0.1 * t, g01, g01, (0.4 * u[1] + 0.2 * u[0]).exp()],
                )
            },
        };
        let centers = array![[0.1, -0.2], [-0.4, 0.3]];
        let radii = [0.15, 0.1];
        let t = tape.constant(array![[0.2], [0.7]]);
        let k = circulation_estimates(&model, &centers, &radii, &t, 32).unwrap().value();
        for c in 0..2 {
            let ts = [0.2, 0.7][c];
            let e = circulation_curvature_estimate(&oracle, &chart(), &[centers[[c, 0]], centers[[c, 1]]], radii[c], ts, 32)
                .unwrap();
            assert!((k[[c, 0]] - e.estimate).abs() < 1e-6, "{} vs {}", k[[c, 0]], e.estimate);
        }
    }

    #[test]
    fn centers_are_clamped_into_the_chart() {
        let c = clamp_centers(&array![[0.95, -2.0]], &[0.1], &chart()).unwrap();
        assert_eq!(c, array![[0.9, -0.9]]);
        assert!(clamp_centers(&array![[0.0, 0.0]], &[1.5], &chart()).is_err());
    }
}
