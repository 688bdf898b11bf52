//! Curvature oracles, circulation, the Jacobi rate, the flow-tensor trace,
//! conformal curvature and the round-sphere closed forms.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{rng, Recorder};
use crate::geometry::fields::{ConformalMetric, ConstantMetric, RandomSmoothMetric, RandomSmoothScalar, SphereMetric};
use crate::geometry::{
    circulation_curvature_estimate, conformal_scalar_curvature, curl_form_disc_integral, gaussian_curvature_direct,
    h_flow_parts, h_flow_tensor, metric_trace, riemann_oracle, sphere_projection_encoder, sphere_radius_ricci,
    traceless_extrinsic_tensor, volume_element, volume_element_rate, DiagonalConvention, FlowTensorParts, LocalChart,
};
use crate::Result;

const CIRCLE_SEGMENTS: usize = 64;
const DISC_RADIAL: usize = 12;

pub(super) fn run(rec: &mut Recorder, seed: u64) {
    rec.record("sphere-scalar-curvature", 1e-5, sphere_scalar(&mut rng(seed, 1)));
    rec.record("gaussian-is-half-scalar", 1e-5, gaussian_half_scalar(&mut rng(seed, 2), seed));
    rec.record("riemann-symmetries", 1e-6, riemann_symmetries(&mut rng(seed, 3), seed));
    rec.record("circulation-flat", 1e-10, circulation_flat(&mut rng(seed, 4)));
    rec.record("circulation-sphere", 0.02, circulation_sphere(&mut rng(seed, 5)));
    rec.record("circulation-random-metric", 0.02, circulation_random(&mut rng(seed, 6), seed));
    rec.record("jacobi-volume-rate", 1e-5, jacobi(&mut rng(seed, 7), seed));
    rec.record("flow-trace-identity", 1e-8, trace_identity(&mut rng(seed, 8)));
    rec.record("umbilic-ricci-gamma-vanish", 1e-10, umbilic(&mut rng(seed, 9)));
    rec.record("conformal-vs-oracle", 1e-3, conformal(&mut rng(seed, 10), seed));
    rec.record("conformal-unit-factor", 1e-12, conformal_unit(&mut rng(seed, 11)));
    rec.record("ricci-radius-slope", 1e-12, radius_slope(&mut rng(seed, 12)));
    rec.record("projection-norm", 1e-8, projection_norm(&mut rng(seed, 13)));
}

/// Nested-sine angles kept `margin` away from the poles.
fn sphere_point(rng: &mut ChaCha8Rng, d: usize, margin: f64) -> Vec<f64> {
    (0..d).map(|_| rng.gen_range(margin..PI - margin)).collect()
}

fn box_point(rng: &mut ChaCha8Rng, d: usize, half: f64) -> Vec<f64> {
    (0..d).map(|_| rng.gen_range(-half..half)).collect()
}

/// `AᵀA + I/2` with entries of `A` uniform on `[−1, 1]`.
fn random_spd(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0));
    a.transpose() * a + DMatrix::identity(d, d) * 0.5
}

fn random_symmetric(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0));
    (&a + a.transpose()) * 0.5
}

fn sphere_scalar(rng: &mut ChaCha8Rng) -> Result<f64> {
    let mut worst = 0.0_f64;
    for d in [2, 3] {
        for radius in [1.0, 2.0] {
            let metric = SphereMetric { d, radius };
            let want = (d * (d - 1)) as f64 / (radius * radius);
            for _ in 0..5 {
                let u = sphere_point(rng, d, 0.5);
                worst = worst.max((riemann_oracle(&metric, &u, 0.0)?.scalar - want).abs());
            }
        }
    }
    Ok(worst)
}

fn gaussian_half_scalar(rng: &mut ChaCha8Rng, seed: u64) -> Result<f64> {
    let sphere = SphereMetric { d: 2, radius: 1.0 };
    let random = RandomSmoothMetric::new(2, seed, 0.2);
    let mut worst = 0.0_f64;
    for _ in 0..100 {
        let u = sphere_point(rng, 2, 0.3);
        let half = riemann_oracle(&sphere, &u, 0.0)?.scalar / 2.0;
        worst = worst.max((gaussian_curvature_direct(&sphere, &u, 0.0)? - half).abs());
        let u = box_point(rng, 2, 1.5);
        let t = rng.gen_range(0.0..1.0);
        let half = riemann_oracle(&random, &u, t)?.scalar / 2.0;
        worst = worst.max((gaussian_curvature_direct(&random, &u, t)? - half).abs());
    }
    Ok(worst)
}

fn riemann_symmetries(rng: &mut ChaCha8Rng, seed: u64) -> Result<f64> {
    let metric = RandomSmoothMetric::new(3, seed ^ 0x5eed, 0.2);
    let mut worst = 0.0_f64;
    for _ in 0..5 {
        let u = box_point(rng, 3, 1.0);
        worst = worst.max(riemann_oracle(&metric, &u, rng.gen_range(0.0..1.0))?.symmetry_defect());
    }
    Ok(worst)
}

fn circulation_flat(rng: &mut ChaCha8Rng) -> Result<f64> {
    let chart = LocalChart::cube(2, -3.0, 3.0)?;
    let mut worst = 0.0_f64;
    for _ in 0..10 {
        let metric = ConstantMetric(random_spd(rng, 2));
        let center = box_point(rng, 2, 1.0);
        let radius = rng.gen_range(0.01..0.5);
        let c = circulation_curvature_estimate(&metric, &chart, &center, radius, 0.0, 32)?;
        worst = worst.max(c.estimate.abs()).max(c.raw.abs());
    }
    Ok(worst)
}

/// Relative gap between the circle estimate and the disc integral of the
/// curl form divided by the circumference.
fn circulation_gap(
    metric: &dyn crate::geometry::MetricField,
    chart: &LocalChart,
    center: &[f64],
    radius: f64,
    t: f64,
) -> Result<f64> {
    let c = circulation_curvature_estimate(metric, chart, center, radius, t, CIRCLE_SEGMENTS)?;
    let disc = curl_form_disc_integral(metric, center, radius, t, DISC_RADIAL, CIRCLE_SEGMENTS)?;
    let want = disc / (2.0 * PI * radius);
    Ok((c.estimate - want).abs() / want.abs())
}

fn circulation_sphere(rng: &mut ChaCha8Rng) -> Result<f64> {
    let metric = SphereMetric { d: 2, radius: 1.0 };
    let chart = LocalChart::cube(2, 0.1, 3.0)?;
    let mut worst = 0.0_f64;
    for _ in 0..10 {
        let center = vec![rng.gen_range(0.5..PI - 0.5), rng.gen_range(0.5..2.5)];
        let radius = rng.gen_range(0.01..0.05);
        worst = worst.max(circulation_gap(&metric, &chart, &center, radius, 0.0)?);
    }
    Ok(worst)
}

fn circulation_random(rng: &mut ChaCha8Rng, seed: u64) -> Result<f64> {
    let metric = RandomSmoothMetric::new(2, seed.wrapping_add(21), 0.2);
    let chart = LocalChart::cube(2, -2.0, 2.0)?;
    let mut worst = 0.0_f64;
    for _ in 0..10 {
        let center = box_point(rng, 2, 1.0);
        let radius = rng.gen_range(0.01..0.05);
        let t = rng.gen_range(0.0..1.0);
        worst = worst.max(circulation_gap(&metric, &chart, &center, radius, t)?);
    }
    Ok(worst)
}

fn jacobi(rng: &mut ChaCha8Rng, seed: u64) -> Result<f64> {
    let h = 1e-4;
    let mut worst = 0.0_f64;
    for d in [2, 3] {
        let metric = RandomSmoothMetric::new(d, seed.wrapping_add(9), 0.25);
        for _ in 0..10 {
            let u = box_point(rng, d, 1.0);
            let t = rng.gen_range(0.0..1.0);
            let fd = (volume_element(&metric, &u, t + h) - volume_element(&metric, &u, t - h)) / (2.0 * h);
            worst = worst.max((volume_element_rate(&metric, &u, t) - fd).abs());
        }
    }
    Ok(worst)
}

/// `g^{ij}H_ij = −dR̄/(d−2) + Σ_i g^{ii}Ĥ_ii` with the signed diagonal term.
fn trace_identity(rng: &mut ChaCha8Rng) -> Result<f64> {
    let mut worst = 0.0_f64;
    for draw in 0..100 {
        let d = 3 + draw % 3;
        let g = random_spd(rng, d);
        let pi = random_symmetric(rng, d);
        let hhat = traceless_extrinsic_tensor(&pi, &g, metric_trace(&g, &pi)?)?;
        let rbar = rng.gen_range(-3.0..3.0);
        let flow = h_flow_tensor(&g, &hhat, rbar, DiagonalConvention::Signed)?;
        let g_inv = g.clone().try_inverse().expect("positive definite");
        let df = d as f64;
        let diagonal: f64 = (0..d).map(|i| g_inv[(i, i)] * hhat[(i, i)]).sum();
        let want = -df * rbar / (df - 2.0) + diagonal;
        worst = worst.max((metric_trace(&g, &flow)? - want).abs());
    }
    Ok(worst)
}

/// `Π = κg` gives `Ĥ = 0`, so only the scalar part of `H_{ijkl}` survives.
fn umbilic(rng: &mut ChaCha8Rng) -> Result<f64> {
    let mut worst = 0.0_f64;
    for draw in 0..20 {
        let d = 3 + draw % 2;
        let g = random_spd(rng, d);
        let kappa = rng.gen_range(-2.0..2.0);
        let pi = &g * kappa;
        let hhat = traceless_extrinsic_tensor(&pi, &g, metric_trace(&g, &pi)?)?;
        let parts = h_flow_parts(&g, &hhat, rng.gen_range(-3.0..3.0))?;
        worst = worst
            .max(FlowTensorParts::max_abs(&parts.ricci))
            .max(FlowTensorParts::max_abs(&parts.gamma));
    }
    Ok(worst)
}

fn conformal(rng: &mut ChaCha8Rng, seed: u64) -> Result<f64> {
    let flat = ConstantMetric(DMatrix::identity(3, 3));
    let sphere = SphereMetric { d: 3, radius: 1.0 };
    let mut worst = 0.0_f64;
    for k in 0..20u64 {
        let field = RandomSmoothScalar::new(3, seed.wrapping_mul(31).wrapping_add(k), 0.1);
        let psi = |u: &[f64], t: f64| field.eval(u, t);
        let t = rng.gen_range(0.0..1.0);
        let (base, u): (&dyn crate::geometry::MetricField, Vec<f64>) = if k % 2 == 0 {
            (&flat, box_point(rng, 3, 1.0))
        } else {
            (&sphere, sphere_point(rng, 3, 0.5))
        };
        let formula = conformal_scalar_curvature(base, &psi, &u, t, 0.1)?;
        let changed = ConformalMetric { base, psi: &psi };
        let oracle = riemann_oracle(&changed, &u, t)?.scalar;
        worst = worst.max((formula - oracle).abs());
    }
    Ok(worst)
}

fn conformal_unit(rng: &mut ChaCha8Rng) -> Result<f64> {
    let sphere = SphereMetric { d: 3, radius: 1.0 };
    let one = |_: &[f64], _: f64| 1.0;
    let mut worst = 0.0_f64;
    for _ in 0..5 {
        let u = sphere_point(rng, 3, 0.5);
        let formula = conformal_scalar_curvature(&sphere, &one, &u, 0.0, 0.1)?;
        worst = worst.max((formula - riemann_oracle(&sphere, &u, 0.0)?.scalar).abs());
    }
    Ok(worst)
}

/// Finite differences of `r(t)²` against `−2(d − 1)`.
fn radius_slope(rng: &mut ChaCha8Rng) -> Result<f64> {
    let mut worst = 0.0_f64;
    for d in 2..=5 {
        let r0: f64 = rng.gen_range(0.5..3.0);
        let extinction = r0 * r0 / (2.0 * (d as f64 - 1.0));
        let mut times: Vec<f64> = (0..8).map(|_| rng.gen_range(0.0..0.9 * extinction)).collect();
        times.sort_by(f64::total_cmp);
        let slope = -2.0 * (d as f64 - 1.0);
        for pair in times.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            if b - a < 1e-2 * extinction {
                continue;
            }
            let fd = (sphere_radius_ricci(r0, d, b)?.powi(2) - sphere_radius_ricci(r0, d, a)?.powi(2)) / (b - a);
            worst = worst.max((fd - slope).abs() / slope.abs());
        }
    }
    Ok(worst)
}

fn projection_norm(rng: &mut ChaCha8Rng) -> Result<f64> {
    let mut worst = 0.0_f64;
    for _ in 0..100 {
        let dim = rng.gen_range(2..8);
        let u: Vec<f64> = (0..dim).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let radius = rng.gen_range(0.1..50.0);
        let p = sphere_projection_encoder(&u, radius)?;
        let norm = p.iter().map(|x| x * x).sum::<f64>().sqrt();
        worst = worst.max((norm - radius).abs());
    }
    Ok(worst)
}
