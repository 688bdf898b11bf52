use std::f64::consts::PI;

use rand::Rng;

use super::SpaceTimeMesh;

/// Coefficients `α` of `Σ_i α_i cos^{2i-1}(2πx)`.
pub type IcCoefficients = [f64; 3];

pub fn evaluate_initial_condition(alpha: &IcCoefficients, mesh: &SpaceTimeMesh) -> Vec<f64> {
    mesh.xs()
        .into_iter()
        .map(|x| {
            let c = (2.0 * PI * x).cos();
            alpha[0] * c + alpha[1] * c.powi(3) + alpha[2] * c.powi(5)
        })
        .collect()
}

/// Draw `α_i ~ U[-1, 1]` and evaluate the initial condition on the mesh.
pub fn sample_initial_condition<R: Rng + ?Sized>(rng: &mut R, mesh: &SpaceTimeMesh) -> (Vec<f64>, IcCoefficients) {
    let alpha = [
        rng.gen_range(-1.0..=1.0),
        rng.gen_range(-1.0..=1.0),
        rng.gen_range(-1.0..=1.0),
    ];
    (evaluate_initial_condition(&alpha, mesh), alpha)
}
