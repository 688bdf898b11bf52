use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::formulas::sphere_metric_diagonal;
use super::EPS_CHART;
use crate::{Error, Result};

/// Radius law of a round sphere under a volume-monotone flow:
/// `√(R₀² − C(d−1)t)` when shrinking, `√(R₀² + C(d−1)t)` when expanding.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "constant", rename_all = "kebab-case")]
pub enum RadiusMode {
    Shrink(f64),
    Expand(f64),
}

impl Default for RadiusMode {
    /// Ricci flow: `C = 2`.
    fn default() -> Self {
        RadiusMode::Shrink(2.0)
    }
}

/// `r(t) = √(R₀² − 2(d−1)t)`, the Ricci-flow radius of a round `d`-sphere.
pub fn sphere_radius_ricci(initial_radius: f64, d: usize, t: f64) -> Result<f64> {
    sphere_radius(initial_radius, d, t, RadiusMode::Shrink(2.0))
}

pub fn sphere_radius(initial_radius: f64, d: usize, t: f64, mode: RadiusMode) -> Result<f64> {
    let slope = (d as f64 - 1.0)
        * match mode {
            RadiusMode::Shrink(c) => -c,
            RadiusMode::Expand(c) => c,
        };
    let sq = initial_radius * initial_radius + slope * t;
    if !(sq > 0.0) {
        return Err(Error::Extinction {
            extinction_time: initial_radius * initial_radius / slope.abs(),
        });
    }
    Ok(sq.sqrt())
}

/// `r · u / ||u||`.
pub fn sphere_projection_encoder(u: &[f64], radius: f64) -> Result<Vec<f64>> {
    let norm = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm <= 1e-8 {
        return Err(Error::InvalidArgument(format!("cannot project a point of norm {norm:e} onto the sphere")));
    }
    Ok(u.iter().map(|x| radius * x / norm).collect())
}

/// `r²(du₁² + sin²u₁(du₂² + sin²u₂(…)))`.
pub fn sphere_metric(d: usize, radius: f64, u: &[f64]) -> Result<DMatrix<f64>> {
    if u.len() != d || d == 0 {
        return Err(Error::Shape(format!("expected {d} angles, got {}", u.len())));
    }
    if let Some(k) = u.iter().take(d - 1).position(|x| x.sin().abs() < EPS_CHART) {
        return Err(Error::DegenerateChart(format!("angle u{} = {} is at a pole", k + 1, u[k])));
    }
    Ok(DMatrix::from_diagonal(&DVector::from_vec(sphere_metric_diagonal(u, radius))))
}
