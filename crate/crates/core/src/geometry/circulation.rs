use std::f64::consts::PI;

use super::curvature::{christoffel_second_kind, to_mat};
use super::formulas::{circulation_coefficients, circulation_term};
use super::{LocalChart, MetricField, EPS_INV, FD_STEP};
use crate::{Error, Result};

/// Circulation of `(√det g/g₁₁)(Γ₁₁² du¹ + Γ₁₂² du²)` around a circle.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CirculationEstimate {
    /// Mean of the integrand over the `L` angles: the line integral divided
    /// by the circle length.
    pub estimate: f64,
    /// The discretized line integral itself, `Σ r(...)Δω`.
    pub raw: f64,
    pub radius: f64,
    pub segments: usize,
}

fn coefficients_at(metric: &dyn MetricField, u: &[f64], t: f64) -> Result<(f64, f64)> {
    let g = metric.metric(u, t);
    if g[(0, 0)] <= EPS_INV {
        return Err(Error::DegenerateChart(format!("g11 = {:e} at {u:?}", g[(0, 0)])));
    }
    let gamma = christoffel_second_kind(metric, u, t)?;
    Ok(circulation_coefficients(&to_mat(&g), &gamma))
}

pub fn circulation_curvature_estimate(
    metric: &dyn MetricField,
    chart: &LocalChart,
    center: &[f64],
    radius: f64,
    t: f64,
    segments: usize,
) -> Result<CirculationEstimate> {
    if metric.dim() != 2 || center.len() != 2 {
        return Err(Error::Dimension {
            expected: "2",
            got: metric.dim(),
        });
    }
    if segments < 8 {
        return Err(Error::InvalidArgument(format!("need at least 8 segments, got {segments}")));
    }
    if !(radius > 0.0) || !chart.contains_ball(center, radius) {
        return Err(Error::BallOutsideChart {
            center: center.to_vec(),
            radius,
        });
    }
    let d_omega = 2.0 * PI / segments as f64;
    let mut mean = 0.0;
    for i in 0..segments {
        let omega = i as f64 * d_omega;
        let p = [center[0] + radius * omega.cos(), center[1] + radius * omega.sin()];
        let (pc, qc) = coefficients_at(metric, &p, t)?;
        mean += circulation_term(&pc, &qc, omega);
    }
    mean /= segments as f64;
    Ok(CirculationEstimate {
        estimate: mean,
        raw: mean * 2.0 * PI * radius,
        radius,
        segments,
    })
}

/// The raw line integral alone.
pub fn circulation_raw(
    metric: &dyn MetricField,
    chart: &LocalChart,
    center: &[f64],
    radius: f64,
    t: f64,
    segments: usize,
) -> Result<f64> {
    circulation_curvature_estimate(metric, chart, center, radius, t, segments).map(|c| c.raw)
}

/// Gauss–Legendre nodes and weights on `[−1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 0 { 1.0 } else { p1 };
            let pn1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (x * pn - pn1) / (x * x - 1.0);
            let step = pn / dp;
            x -= step;
            if step.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = x;
        weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

/// Dense polar quadrature of `∬_{B_r} (∂₁Q − ∂₂P) du` with `P, Q` the
/// circulation coefficients differentiated by centered differences. By
/// Green's theorem this equals the line integral of the estimator.
pub fn curl_form_disc_integral(
    metric: &dyn MetricField,
    center: &[f64],
    radius: f64,
    t: f64,
    radial_nodes: usize,
    angular_nodes: usize,
) -> Result<f64> {
    let h = FD_STEP;
    let (xs, ws) = gauss_legendre(radial_nodes);
    let mut total = 0.0;
    for (x, w) in xs.iter().zip(&ws) {
        let rho = 0.5 * radius * (x + 1.0);
        let w_rho = 0.5 * radius * w;
        for a in 0..angular_nodes {
            let omega = 2.0 * PI * a as f64 / angular_nodes as f64;
            let u = [center[0] + rho * omega.cos(), center[1] + rho * omega.sin()];
            let (_, q_p) = coefficients_at(metric, &[u[0] + h, u[1]], t)?;
            let (_, q_m) = coefficients_at(metric, &[u[0] - h, u[1]], t)?;
            let (p_p, _) = coefficients_at(metric, &[u[0], u[1] + h], t)?;
            let (p_m, _) = coefficients_at(metric, &[u[0], u[1] - h], t)?;
            let curl = (q_p - q_m) / (2.0 * h) - (p_p - p_m) / (2.0 * h);
            total += curl * rho * w_rho * (2.0 * PI / angular_nodes as f64);
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::fields::{ConstantMetric, RandomSmoothMetric, SphereMetric};
    use crate::geometry::{gaussian_curvature_direct, volume_element};
    use nalgebra::DMatrix;

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(6);
        let integral: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(10)).sum();
        assert!((integral - 2.0 / 11.0).abs() < 1e-13);
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-13);
    }

    #[test]
    fn flat_metric_circulation_vanishes() {
        let chart = LocalChart::cube(2, -3.0, 3.0).unwrap();
        let m = ConstantMetric(DMatrix::from_row_slice(2, 2, &[1.5, 0.2, 0.2, 0.8]));
        for (r, l) in [(0.05, 8), (0.2, 32), (1.0, 64)] {
            let c = circulation_curvature_estimate(&m, &chart, &[0.1, -0.3], r, 0.0, l).unwrap();
            assert!(c.estimate.abs() <= 1e-10 && c.raw.abs() <= 1e-10);
        }
    }

    #[test]
    fn green_theorem_on_sphere_and_random_metric() {
        let chart = LocalChart::cube(2, 0.1, 3.0).unwrap();
        let sphere = SphereMetric { d: 2, radius: 1.0 };
        let u0 = [PI / 2.0, 1.0];
        let c = circulation_curvature_estimate(&sphere, &chart, &u0, 0.05, 0.0, 64).unwrap();
        let disc = curl_form_disc_integral(&sphere, &u0, 0.05, 0.0, 12, 64).unwrap();
        let want = disc / (2.0 * PI * 0.05);
        assert!(((c.estimate - want) / want).abs() < 0.02, "{} vs {want}", c.estimate);
        // the curl form is −√g K; on the unit sphere equals −sin θ
        let area_avg = disc / (PI * 0.05 * 0.05);
        assert!((area_avg + 1.0).abs() < 1e-3);

        let rnd = RandomSmoothMetric::new(2, 21, 0.2);
        let chart = LocalChart::cube(2, -2.0, 2.0).unwrap();
        let u0 = [0.3, -0.2];
        let c = circulation_curvature_estimate(&rnd, &chart, &u0, 0.05, 0.5, 64).unwrap();
        let disc = curl_form_disc_integral(&rnd, &u0, 0.05, 0.5, 12, 64).unwrap();
        let want = disc / (2.0 * PI * 0.05);
        assert!(((c.estimate - want) / want).abs() < 0.02);
        let k = gaussian_curvature_direct(&rnd, &u0, 0.5).unwrap() * volume_element(&rnd, &u0, 0.5);
        assert!((area_avg_sign(disc, 0.05) + k).abs() < 0.05 * k.abs().max(1e-3));
    }

    fn area_avg_sign(disc: f64, r: f64) -> f64 {
        disc / (PI * r * r)
    }

    #[test]
    fn ball_must_fit_in_chart() {
        let chart = LocalChart::cube(2, 0.0, 1.0).unwrap();
        let m = ConstantMetric(DMatrix::identity(2, 2));
        let r = circulation_curvature_estimate(&m, &chart, &[0.95, 0.5], 0.1, 0.0, 32);
        assert!(matches!(r, Err(Error::BallOutsideChart { .. })));
    }
}
