//! Conformal-factor flow: push the Monte-Carlo estimate of
//! `d/dt ∫ R(g) dV_g`, `g = ψ^{4/(d−2)} g₀`, toward a positive target.
//!
//! The time derivative is computed two independent ways: forward-mode duals
//! through the integrand, and the explicit product-rule expansion.

use crate::ad::{Dual, Mat, Real, Var};
use crate::geometry::formulas::{christoffel, conformal_coefficient, conformal_scalar, scalar_laplacian, Christoffel};
use crate::{Error, Result};

use super::fields::{channel_matrix, diagonal_metric_jets, seed_chart_time, sphere_diagonal_jets, time_var, ScalarModel};
use super::spec::{PerelmanIntegrand, PerelmanRoute};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PerelmanSettings {
    pub target_derivative: f64,
    pub psi_min: f64,
    pub integrand: PerelmanIntegrand,
    pub route: PerelmanRoute,
}

pub struct PerelmanTerms {
    /// `|target − mean rate|`.
    pub loss: Var,
    /// Per-sample `∂_t` of the integrand, `batch x 1`.
    pub rate: Var,
    /// Fraction of samples whose `ψ` was below the clip.
    pub clipped_fraction: f64,
}

/// Derivative channels of `ψ` and the round base metric at a batch.
struct Inputs {
    d: usize,
    psi: Var,
    psi_t: Var,
    grad: Vec<Var>,
    grad_t: Vec<Var>,
    hess: Mat<Var>,
    hess_t: Mat<Var>,
    base_inv: Mat<Var>,
    base_gamma: Christoffel<Var>,
    base_volume: Var,
    base_scalar: f64,
}

fn inputs(psi: &dyn ScalarModel, u: &Var, t: &Var) -> Result<Inputs> {
    let d = u.cols();
    if d < 3 {
        return Err(Error::Dimension {
            expected: ">= 3",
            got: d,
        });
    }
    let rows = u.rows();
    let tv = time_var(d);
    let mut wanted: Vec<Vec<u8>> = Vec::new();
    for i in 0..d as u8 {
        for j in i..d as u8 {
            wanted.push(vec![i, j, tv]);
        }
    }
    let refs: Vec<&[u8]> = wanted.iter().map(|m| m.as_slice()).collect();
    let x = seed_chart_time(u, t, &refs);
    let field = psi.scalar_jet(&x)?;
    let chan = |m: &[u8]| field.d(m).broadcast_to((rows, 1));
    let sorted = |i: usize, j: usize| if i <= j { [i as u8, j as u8] } else { [j as u8, i as u8] };

    let base = diagonal_metric_jets(&x, &sphere_diagonal_jets(&x, d, 1.0));
    let g0 = channel_matrix(&base, d, &[], rows);
    let dg0: Vec<Mat<Var>> = (0..d as u8).map(|k| channel_matrix(&base, d, &[k], rows)).collect();
    let base_inv = g0.inverse();
    let base_gamma = christoffel(&base_inv, &dg0);
    Ok(Inputs {
        d,
        psi: chan(&[]),
        psi_t: chan(&[tv]),
        grad: (0..d as u8).map(|i| chan(&[i])).collect(),
        grad_t: (0..d as u8).map(|i| chan(&[i, tv])).collect(),
        hess: Mat::from_fn(d, d, |i, j| chan(&sorted(i, j))),
        hess_t: Mat::from_fn(d, d, |i, j| {
            let [a, b] = sorted(i, j);
            chan(&[a, b, tv])
        }),
        base_volume: g0.det().sqrt(),
        base_inv,
        base_gamma,
        base_scalar: (d * (d - 1)) as f64,
    })
}

fn autodiff_rate(inp: &Inputs, settings: &PerelmanSettings) -> Var {
    let d = inp.d;
    let psi = Dual::new(inp.psi.clone(), inp.psi_t.clone()).max_const(settings.psi_min);
    let grad: Vec<Dual<Var>> = inp
        .grad
        .iter()
        .zip(&inp.grad_t)
        .map(|(g, gt)| Dual::new(g.clone(), gt.clone()))
        .collect();
    let hess = Mat::from_fn(d, d, |i, j| Dual::new(inp.hess.get(i, j).clone(), inp.hess_t.get(i, j).clone()));
    let base_inv = Mat::from_fn(d, d, |i, j| Dual::constant(inp.base_inv.get(i, j).clone()));
    let gamma = inp.base_gamma.map(|v| Dual::constant(v.clone()));
    let lap = scalar_laplacian(&grad, &hess, &base_inv, &gamma);
    let scalar0 = psi.constant_like(inp.base_scalar);
    let volume0 = Dual::constant(inp.base_volume.clone());
    let integrand = match settings.integrand {
        PerelmanIntegrand::Simplified => {
            (scalar0 * psi.clone() - lap * conformal_coefficient(d)) * psi * volume0
        }
        PerelmanIntegrand::Full => {
            let volume_power = 2.0 * d as f64 / (d as f64 - 2.0);
            conformal_scalar(&lap, &psi, &scalar0, d) * psi.powf(volume_power) * volume0
        }
    };
    integrand.eps
}

fn product_rule_rate(inp: &Inputs, settings: &PerelmanSettings) -> Var {
    let d = inp.d;
    let df = d as f64;
    let c = conformal_coefficient(d);
    let psi = inp.psi.clamp_min(settings.psi_min);
    let psi_t = &inp.psi_t;
    let lap = scalar_laplacian(&inp.grad, &inp.hess, &inp.base_inv, &inp.base_gamma);
    let lap_t = scalar_laplacian(&inp.grad_t, &inp.hess_t, &inp.base_inv, &inp.base_gamma);
    // A = R₀ψ − cΔψ
    let a = &psi.scale(inp.base_scalar) - &lap.scale(c);
    let a_t = &psi_t.scale(inp.base_scalar) - &lap_t.scale(c);
    match settings.integrand {
        PerelmanIntegrand::Simplified => {
            let rate = &(&a_t * &psi) + &(&a * psi_t);
            &rate * &inp.base_volume
        }
        PerelmanIntegrand::Full => {
            let p = (df + 2.0) / (df - 2.0);
            let scalar = &a / &psi.powf(p);
            let scalar_t = &(&a_t / &psi.powf(p)) - &(&(&a * psi_t) / &psi.powf(p + 1.0)).scale(p);
            let volume = &psi.powf(2.0 * df / (df - 2.0)) * &inp.base_volume;
            // Jacobi: ∂_t √det g = ½ √det g tr(g⁻¹∂_t g), tr(g⁻¹∂_t g) = 4d/(d−2) ψ_t/ψ
            let trace = (psi_t / &psi).scale(4.0 * df / (df - 2.0));
            let volume_t = (&volume * &trace).scale(0.5);
            &(&scalar_t * &volume) + &(&scalar * &volume_t)
        }
    }
}

/// Per-sample time derivative of the integrand by the selected route.
pub fn perelman_rate(psi: &dyn ScalarModel, u: &Var, t: &Var, settings: &PerelmanSettings) -> Result<(Var, f64)> {
    let inp = inputs(psi, u, t)?;
    let clipped = inp.psi.with_value(|v| v.iter().filter(|&&x| x < settings.psi_min).count());
    let clipped_fraction = clipped as f64 / u.rows() as f64;
    if clipped > 0 {
        log::debug!("conformal factor below clip on {clipped} of {} samples", u.rows());
    }
    let rate = match settings.route {
        PerelmanRoute::Autodiff => autodiff_rate(&inp, settings),
        PerelmanRoute::ProductRule => product_rule_rate(&inp, settings),
    };
    Ok((rate, clipped_fraction))
}

pub fn loss_perelman(psi: &dyn ScalarModel, u: &Var, t: &Var, settings: &PerelmanSettings) -> Result<PerelmanTerms> {
    let (rate, clipped_fraction) = perelman_rate(psi, u, t, settings)?;
    let loss = rate.mean().shift(-settings.target_derivative).abs();
    Ok(PerelmanTerms {
        loss,
        rate,
        clipped_fraction,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ad::{Jet, Tape};
    use crate::geometry::conformal_scalar_curvature;
    use crate::geometry::fields::SphereMetric;
    use crate::losses::fields::FnModel;
    use crate::nn::{Mlp, NetworkSpec, ParamStore};
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn settings(integrand: PerelmanIntegrand, route: PerelmanRoute) -> PerelmanSettings {
        PerelmanSettings {
            target_derivative: 0.5,
            psi_min: 0.1,
            integrand,
            route,
        }
    }

    fn chart_sample(tape: &Tape, rng: &mut ChaCha8Rng, n: usize) -> (Var, Var) {
        let u = Array2::from_shape_fn((n, 3), |_| rng.gen_range(0.5..2.6));
        let t = Array2::from_shape_fn((n, 1), |_| rng.gen_range(0.0..1.0));
        (tape.constant(u), tape.constant(t))
    }

    const ALL: [(PerelmanIntegrand, PerelmanRoute); 4] = [
        (PerelmanIntegrand::Simplified, PerelmanRoute::Autodiff),
        (PerelmanIntegrand::Simplified, PerelmanRoute::ProductRule),
        (PerelmanIntegrand::Full, PerelmanRoute::Autodiff),
        (PerelmanIntegrand::Full, PerelmanRoute::ProductRule),
    ];

    #[test]
    fn static_factor_leaves_the_target() {
        let tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (u, t) = chart_sample(&tape, &mut rng, 6);
        let psi = FnModel(|x: &Jet| x.col(0).sin().mul(&x.col(1)).scale(0.1).add_scalar(1.0));
        for (i, r) in ALL {
            let out = loss_perelman(&psi, &u, &t, &settings(i, r)).unwrap();
            assert!((out.loss.item() - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn round_sphere_curvature_enters() {
        // ψ = 1 + a t: integrand R₀ψ²√det g₀, rate 2R₀ψ a √det g₀ with R₀ = 6
        let a = 0.3;
        let tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (u, t) = chart_sample(&tape, &mut rng, 5);
        let psi = FnModel(move |x: &Jet| x.col(3).scale(a).add_scalar(1.0));
        let (uv, tv) = (u.value(), t.value());
        for (i, r) in ALL {
            let (rate, _) = perelman_rate(&psi, &u, &t, &settings(i, r)).unwrap();
            let rate = rate.value();
            for b in 0..5 {
                let vol = uv[[b, 0]].sin().powi(2) * uv[[b, 1]].sin();
                let want = 2.0 * 6.0 * (1.0 + a * tv[[b, 0]]) * a * vol;
                assert!((rate[[b, 0]] - want).abs() < 1e-12, "{i:?} {r:?}");
            }
        }
    }

    fn random_psi(seed: u64) -> (ParamStore, Mlp) {
        let mut store = ParamStore::new();
        let net = Mlp::new("psi", NetworkSpec::new(4, &[8, 8], 1, seed), &mut store).unwrap();
        (store, net)
    }

    #[test]
    fn routes_agree_on_random_networks() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for seed in 0..50 {
            let (store, net) = random_psi(seed);
            let tape = Tape::new();
            let p = store.bind(&tape);
            let (u, t) = chart_sample(&tape, &mut rng, 4);
            let psi = FnModel(|x: &Jet| net.forward_jet(&p, x).scale(0.2).add_scalar(1.0));
            for integrand in [PerelmanIntegrand::Simplified, PerelmanIntegrand::Full] {
                let a = perelman_rate(&psi, &u, &t, &settings(integrand, PerelmanRoute::Autodiff)).unwrap().0.value();
                let b = perelman_rate(&psi, &u, &t, &settings(integrand, PerelmanRoute::ProductRule))
                    .unwrap()
                    .0
                    .value();
                for (x, y) in a.iter().zip(b.iter()) {
                    assert!((x - y).abs() <= 1e-5 * (1.0 + y.abs()), "seed {seed}: {x} vs {y}");
                }
            }
        }
    }

    /// The rate equals a centered difference in `t` of `R(g)√det g` built
    /// from the finite-difference conformal-curvature oracle.
    #[test]
    fn rate_matches_oracle_difference_quotient() {
        let (store, net) = random_psi(7);
        let tape = Tape::new();
        let p = store.bind(&tape);
        let u0 = [1.1, 1.7, 0.4];
        let t0 = 0.35;
        let u = tape.constant(Array2::from_shape_vec((1, 3), u0.to_vec()).unwrap());
        let t = tape.constant(Array2::from_elem((1, 1), t0));
        let psi_jet = FnModel(|x: &Jet| net.forward_jet(&p, x).scale(0.2).add_scalar(1.0));
        let rate = perelman_rate(&psi_jet, &u, &t, &settings(PerelmanIntegrand::Full, PerelmanRoute::Autodiff))
            .unwrap()
            .0
            .item();
        let psi_f = |v: &[f64], s: f64| {
            let x = Array2::from_shape_vec((1, 4), vec![v[0], v[1], v[2], s]).unwrap();
            1.0 + 0.2 * net.forward_array(&store, &x)[[0, 0]]
        };
        let sphere = SphereMetric { d: 3, radius: 1.0 };
        let integrand = |s: f64| {
            let r = conformal_scalar_curvature(&sphere, &psi_f, &u0, s, 0.1).unwrap();
            let vol = psi_f(&u0, s).powf(6.0) * u0[0].sin().powi(2) * u0[1].sin();
            r * vol
        };
        let h = 1e-3;
        let fd = (integrand(t0 + h) - integrand(t0 - h)) / (2.0 * h);
        assert!((rate - fd).abs() < 1e-3 * (1.0 + fd.abs()), "{rate} vs {fd}");
    }

    #[test]
    fn clip_touches_values_only() {
        let tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (u, t) = chart_sample(&tape, &mut rng, 3);
        // ψ = 0.05 + 0.01 t is below the clip everywhere
        let psi = FnModel(|x: &Jet| x.col(3).scale(0.01).add_scalar(0.05));
        let s = settings(PerelmanIntegrand::Simplified, PerelmanRoute::Autodiff);
        let (rate, frac) = perelman_rate(&psi, &u, &t, &s).unwrap();
        assert_eq!(frac, 1.0);
        // with ψ_c = 0.1 and ψ_t = 0.01: rate = 2·6·0.1·0.01·√det g₀
        let uv = u.value();
        for b in 0..3 {
            let vol = uv[[b, 0]].sin().powi(2) * uv[[b, 1]].sin();
            assert!((rate.value()[[b, 0]] - 12.0 * 0.1 * 0.01 * vol).abs() < 1e-14);
        }
    }
}
