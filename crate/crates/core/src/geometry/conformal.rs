use super::curvature::{laplace_beltrami, riemann_oracle};
use super::formulas::conformal_scalar;
use super::MetricField;
use crate::{Error, Result};

/// Scalar curvature of `ψ^{4/(d−2)} g₀` via
/// `(R(g₀)ψ − 4(d−1)/(d−2) Δ_{g₀}ψ) / ψ^{(d+2)/(d−2)}`, with `ψ` clipped
/// below at `psi_min` (derivatives are left unclipped).
pub fn conformal_scalar_curvature(
    base: &dyn MetricField,
    psi: &dyn Fn(&[f64], f64) -> f64,
    u: &[f64],
    t: f64,
    psi_min: f64,
) -> Result<f64> {
    let d = base.dim();
    if d < 3 {
        return Err(Error::Dimension {
            expected: ">= 3",
            got: d,
        });
    }
    let at_t = |v: &[f64]| psi(v, t);
    let lap = laplace_beltrami(base, &at_t, u, t)?;
    let base_scalar = riemann_oracle(base, u, t)?.scalar;
    let value = psi(u, t).max(psi_min);
    Ok(conformal_scalar(&lap, &value, &base_scalar, d))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::fields::{ConformalMetric, ConstantMetric, SphereMetric};
    use nalgebra::DMatrix;

    #[test]
    fn unit_factor_keeps_base_curvature() {
        let sphere = SphereMetric { d: 3, radius: 1.0 };
        let one = |_: &[f64], _: f64| 1.0;
        let r = conformal_scalar_curvature(&sphere, &one, &[1.0, 1.2, 0.3], 0.0, 0.1).unwrap();
        assert!((r - 6.0).abs() < 1e-5);
    }

    #[test]
    fn bump_on_flat_space_matches_oracle() {
        let flat = ConstantMetric(DMatrix::identity(3, 3));
        let psi = |u: &[f64], _: f64| 1.0 + 0.1 * (-u.iter().map(|x| x * x).sum::<f64>()).exp();
        let conf = ConformalMetric { base: &flat, psi: &psi };
        for u in [[0.1, 0.2, -0.3], [0.7, -0.5, 0.2]] {
            let formula = conformal_scalar_curvature(&flat, &psi, &u, 0.0, 0.1).unwrap();
            let oracle = riemann_oracle(&conf, &u, 0.0).unwrap().scalar;
            assert!((formula - oracle).abs() < 1e-3, "{formula} vs {oracle}");
        }
    }

    #[test]
    fn constant_factor_scaling_law() {
        let sphere = SphereMetric { d: 3, radius: 1.0 };
        let c = 1.7_f64;
        let psi = move |_: &[f64], _: f64| c;
        let r = conformal_scalar_curvature(&sphere, &psi, &[1.0, 1.3, 0.2], 0.0, 0.1).unwrap();
        assert!((r - 6.0 * c.powf(-4.0)).abs() < 1e-6 * 6.0);
    }

    #[test]
    fn requires_three_dimensions() {
        let flat = ConstantMetric(DMatrix::identity(2, 2));
        let one = |_: &[f64], _: f64| 1.0;
        assert!(matches!(
            conformal_scalar_curvature(&flat, &one, &[0.0, 0.0], 0.0, 0.1),
            Err(Error::Dimension { .. })
        ));
    }
}
