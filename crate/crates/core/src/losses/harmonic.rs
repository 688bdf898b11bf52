//! Harmonic-map energy flow: the time derivative of the Dirichlet energy
//! of `ψ(·, t)` is pushed toward a positive target while `ψ(·, 0)` is held
//! near a sphere of fixed radius.

use serde::{Deserialize, Serialize};

use crate::ad::{Mat, Var};
use crate::{Error, Result};

use super::fields::{channel_columns, channel_matrix, diagonal_metric_jets, seed_chart_time, sphere_diagonal_jets, time_var, ImmersionModel};

/// Static metric on the source chart.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HarmonicSource {
    /// `δ_ij` on chart coordinates.
    #[default]
    Euclidean,
    /// Unit round metric in nested-sine coordinates.
    Sphere,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HarmonicSettings {
    pub target_derivative: f64,
    pub anchor_radius: f64,
    pub source: HarmonicSource,
}

pub struct HarmonicTerms {
    pub loss: Var,
    /// Per-sample energy-density rate, `batch x 1`.
    pub rate: Var,
    /// Batch mean of `(||ψ(u, 0)|| − anchor)²`.
    pub anchor: Var,
}

/// `g^{ij}(⟨∂_t∂_iψ, ∂_jψ⟩ + ⟨∂_iψ, ∂_t∂_jψ⟩)√det g` per sample.
pub fn energy_rate(map: &dyn ImmersionModel, u: &Var, t: &Var, source: HarmonicSource) -> Result<Var> {
    let d = u.cols();
    let rows = u.rows();
    let tv = time_var(d);
    let wanted: Vec<[u8; 2]> = (0..d as u8).map(|i| [i, tv]).collect();
    let refs: Vec<&[u8]> = wanted.iter().map(|m| m.as_slice()).collect();
    let x = seed_chart_time(u, t, &refs);
    let field = map.immerse_jet(&x)?;
    let grad: Vec<Vec<Var>> = (0..d as u8).map(|i| channel_columns(&field, &[i], rows)).collect();
    let grad_t: Vec<Vec<Var>> = (0..d as u8).map(|i| channel_columns(&field, &[i, tv], rows)).collect();
    let inner = |a: &[Var], b: &[Var]| -> Var {
        a.iter().zip(b).map(|(x, y)| x * y).reduce(|s, v| &s + &v).expect("nonempty map")
    };
    // sym[i][j] = ⟨∂_t∂_iψ, ∂_jψ⟩ + ⟨∂_iψ, ∂_t∂_jψ⟩
    let sym = Mat::from_fn(d, d, |i, j| &inner(&grad_t[i], &grad[j]) + &inner(&grad[i], &grad_t[j]));
    match source {
        HarmonicSource::Euclidean => Ok(sym.trace()),
        HarmonicSource::Sphere => {
            let g = channel_matrix(&diagonal_metric_jets(&x, &sphere_diagonal_jets(&x, d, 1.0)), d, &[], rows);
            Ok(&g.inverse().frobenius_dot(&sym) * &g.det().sqrt())
        }
    }
}

/// `(target − |mean rate|)² + mean (||ψ(u, 0)|| − anchor)²`.
pub fn loss_harmonic(map: &dyn ImmersionModel, u: &Var, t: &Var, settings: &HarmonicSettings) -> Result<HarmonicTerms> {
    if u.rows() != t.rows() {
        return Err(Error::Shape(format!("{} chart points but {} times", u.rows(), t.rows())));
    }
    let rate = energy_rate(map, u, t, settings.source)?;
    let flow = rate.mean().abs().affine(-1.0, settings.target_derivative).square();
    let x0 = seed_chart_time(u, &u.tape().zeros(u.rows(), 1), &[]);
    let start = map.immerse_jet(&x0)?.value().clone();
    let norm = start.square().sum_cols().sqrt();
    let anchor = norm.shift(-settings.anchor_radius).square().mean();
    Ok(HarmonicTerms {
        loss: &flow + &anchor,
        rate,
        anchor,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ad::{Jet, Tape};
    use crate::losses::fields::FnModel;
    use crate::nn::{Mlp, NetworkSpec, ParamStore};
    use ndarray::{array, Array2};

    fn settings() -> HarmonicSettings {
        HarmonicSettings {
            target_derivative: 0.5,
            anchor_radius: 5.0,
            source: HarmonicSource::Euclidean,
        }
    }

    /// `ψ(u) = 5 u/|u|` in ℝ³ padded to ℝ⁵.
    fn radius_five(x: &Jet) -> Jet {
        let u = x.cols_range(0, 3);
        let inv = u.square().sum_cols().sqrt().recip();
        let p = u.mul(&inv).scale(5.0);
        let zero = Jet::constant(x.spec(), x.value().tape().zeros(x.rows(), 2));
        Jet::concat_cols(&[p, zero])
    }

    #[test]
    fn static_map_on_anchor_sphere() {
        let tape = Tape::new();
        let u = tape.constant(array![[0.3, -1.0, 0.2], [2.0, 0.5, -0.7]]);
        let t = tape.constant(array![[0.2], [0.8]]);
        let out = loss_harmonic(&FnModel(radius_five), &u, &t, &settings()).unwrap();
        assert!(out.anchor.item().abs() < 1e-24);
        assert!((out.loss.item() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn linear_growth_rate() {
        // ψ = (1 + t)u: energy density (1 + t)² d, rate 2(1 + t) d
        let tape = Tape::new();
        let u = tape.constant(array![[0.3, -1.0, 0.2]]);
        let t = tape.constant(array![[0.4]]);
        let map = FnModel(|x: &Jet| x.cols_range(0, 3).mul(&x.col(3).add_scalar(1.0)));
        let r = energy_rate(&map, &u, &t, HarmonicSource::Euclidean).unwrap().item();
        assert!((r - 2.0 * 1.4 * 3.0).abs() < 1e-12);
    }

    #[test]
    fn mixed_partials_commute() {
        let mut store = ParamStore::new();
        let net = Mlp::new("map", NetworkSpec::new(4, &[6, 6], 5, 11), &mut store).unwrap();
        let tape = Tape::new();
        let p = store.bind(&tape);
        let base = [0.4, -0.3, 0.9, 0.25];
        let x = tape.constant(Array2::from_shape_vec((1, 4), base.to_vec()).unwrap());
        let spec = crate::ad::JetSpec::new(4, &[&[0, 3], &[1, 3], &[2, 3]]);
        let jet = net.forward_jet(&p, &Jet::seed(&spec, &x));
        let h = 1e-5;
        for i in 0..3u8 {
            // ∂_i of the jet's ∂_tψ channel by central differences
            let dt_at = |s: f64| {
                let mut v = base;
                v[i as usize] += s;
                let xs = tape.constant(Array2::from_shape_vec((1, 4), v.to_vec()).unwrap());
                net.forward_jet(&p, &Jet::seed(&spec, &xs)).d(&[3]).value()
            };
            let fd = (dt_at(h) - dt_at(-h)) / (2.0 * h);
            let mixed = jet.d(&[i, 3]).value();
            for (a, b) in mixed.iter().zip(fd.iter()) {
                assert!((a - b).abs() < 1e-6, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn sphere_source_weights_by_volume() {
        let tape = Tape::new();
        let u = tape.constant(array![[1.1, 0.8, 0.3]]);
        let t = tape.constant(array![[0.4]]);
        let map = FnModel(|x: &Jet| x.cols_range(0, 3).mul(&x.col(3).add_scalar(1.0)));
        let r = energy_rate(&map, &u, &t, HarmonicSource::Sphere).unwrap().item();
        let (s0, s1) = (1.1f64.sin().powi(2), 0.8f64.sin().powi(2));
        let trace = 1.0 + 1.0 / s0 + 1.0 / (s0 * s1);
        let want = 2.0 * 1.4 * trace * (s0 * s0 * s1).sqrt();
        assert!((r - want).abs() < 1e-12);
    }
}
