use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::ad::Var;
use crate::nn::{Bound, ModelBundle};
use crate::{Error, Result};

use super::basic::{loss_kl, loss_metric_consistency, loss_reconstruction, metric_diag_mean};
use super::fields::Networks;
use super::gauss_path::loss_gauss_path;
use super::harmonic::{loss_harmonic, HarmonicSettings};
use super::lambda::loss_lambda_baseline;
use super::perelman::{loss_perelman, PerelmanSettings};
use super::second_ff::{loss_second_ff, SecondFfSettings};
use super::spec::{FlowKind, FlowLossSpec};

/// One minibatch of supervised pairs `(φ̃₀, t) ↦ φ̃_t`.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchSample {
    /// `n x n_x` initial conditions.
    pub ic: Array2<f64>,
    /// `n x 1` times, drawn uniformly on `[0, T]`.
    pub times: Array2<f64>,
    /// `n x n_x` states at those times.
    pub target: Array2<f64>,
    /// `n x code` standard-normal draws (variational models only).
    pub noise: Option<Array2<f64>>,
    /// Circle radii for the path-integration loss, one per flow row.
    pub circle_radii: Vec<f64>,
    /// `T`.
    pub horizon: f64,
}

/// Weighted terms of the objective. `total` is their sum.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub recon: f64,
    /// Unweighted reconstruction MSE.
    pub recon_mse: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub kl: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub metric: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub flow: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mask_fraction: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub metric_diag_mean: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub clipped_fraction: Option<f64>,
}

impl LossBreakdown {
    /// `(name, value)` of every weighted term present.
    pub fn terms(&self) -> Vec<(&'static str, f64)> {
        let mut out = vec![("recon", self.recon)];
        for (name, v) in [("kl", self.kl), ("metric", self.metric), ("flow", self.flow)] {
            if let Some(v) = v {
                out.push((name, v));
            }
        }
        out
    }
}

pub struct Objective {
    pub total: Var,
    pub breakdown: LossBreakdown,
}

/// The flow term alone, evaluated at detached chart points.
pub struct FlowTerm {
    pub loss: Var,
    pub mask_fraction: Option<f64>,
    pub clipped_fraction: Option<f64>,
}

pub fn flow_term(
    bundle: &ModelBundle,
    params: &Bound,
    spec: &FlowLossSpec,
    u: &Var,
    t: &Var,
    circle_radii: &[f64],
) -> Result<FlowTerm> {
    let nets = Networks { bundle, params };
    let c = &spec.constants;
    let plain = |loss| FlowTerm {
        loss,
        mask_fraction: None,
        clipped_fraction: None,
    };
    match spec.kind {
        FlowKind::Baseline | FlowKind::Sphere => Err(Error::InvalidArgument(format!("{} has no flow term", spec.kind))),
        FlowKind::GaussPath => {
            let terms = loss_gauss_path(
                &nets,
                &u.value(),
                circle_radii,
                t,
                &bundle.config.chart,
                &c.circulation,
                c.eps_den,
            )?;
            Ok(FlowTerm {
                loss: terms.loss,
                mask_fraction: Some(terms.mask_fraction),
                clipped_fraction: None,
            })
        }
        FlowKind::SecondFf => {
            let settings = SecondFfSettings {
                flow_constant: c.flow_constant,
                ambient_scalar: c.ambient_scalar,
                diagonal: c.diagonal,
                second_derivatives: c.second_derivatives,
            };
            loss_second_ff(&nets, &nets, u, t, &settings).map(plain)
        }
        FlowKind::Perelman => {
            let settings = PerelmanSettings {
                target_derivative: c.target_derivative,
                psi_min: c.psi_min,
                integrand: c.perelman_integrand,
                route: c.perelman_route,
            };
            let terms = loss_perelman(&nets, u, t, &settings)?;
            Ok(FlowTerm {
                loss: terms.loss,
                mask_fraction: None,
                clipped_fraction: Some(terms.clipped_fraction),
            })
        }
        FlowKind::Harmonic => {
            let settings = HarmonicSettings {
                target_derivative: c.target_derivative,
                anchor_radius: c.anchor_radius,
                source: c.harmonic_source,
            };
            Ok(plain(loss_harmonic(&nets, u, t, &settings)?.loss))
        }
        FlowKind::LambdaBaseline => loss_lambda_baseline(&nets, &nets, u, t).map(plain),
    }
}

/// Weighted reconstruction (+ KL) + metric consistency + flow. Geometric
/// terms use the first `flow_batch` rows with the chart points detached.
pub fn composite_loss(
    bundle: &ModelBundle,
    params: &Bound,
    spec: &FlowLossSpec,
    batch: &BatchSample,
    flow_batch: usize,
) -> Result<Objective> {
    if spec.kind != bundle.kind() {
        return Err(Error::InvalidArgument(format!(
            "loss is for {} but the model is {}",
            spec.kind,
            bundle.kind()
        )));
    }
    let n = batch.ic.nrows();
    if batch.times.dim() != (n, 1) || batch.target.nrows() != n {
        return Err(Error::Shape(format!(
            "batch of {n} initial conditions with times {:?} and targets {:?}",
            batch.times.dim(),
            batch.target.dim()
        )));
    }
    let tape = params.tape();
    let w = &spec.weights;
    let noise = batch.noise.as_ref().map(|z| tape.constant(z.clone()));
    let enc = bundle.encode(params, &tape.constant(batch.ic.clone()), noise.as_ref());
    let t = tape.constant(batch.times.clone());
    let point = bundle.immerse(params, &enc.u, &t)?;
    let prediction = bundle.decode(params, &point);
    let mse = loss_reconstruction(&prediction, &tape.constant(batch.target.clone()))?;
    let mut breakdown = LossBreakdown {
        recon_mse: mse.item(),
        ..Default::default()
    };
    let mut total = mse.scale(w.recon);
    breakdown.recon = total.item();

    if let Some(log_var) = &enc.log_var {
        let kl = loss_kl(&enc.mean_raw, log_var, w.kl_beta, batch.horizon)?;
        breakdown.kl = Some(kl.item());
        total = &total + &kl;
    }

    if spec.kind.has_flow() {
        let rows = flow_batch.min(n);
        let u = enc.u.rows_range(0, rows).detach();
        let tf = t.rows_range(0, rows);
        let nets = Networks { bundle, params };
        let metric = loss_metric_consistency(&nets, &nets, &u, &tf)?.scale(w.metric_consistency);
        breakdown.metric = Some(metric.item());
        let radii = batch.circle_radii.get(..rows).unwrap_or(&[]);
        let flow = flow_term(bundle, params, spec, &u, &tf, radii)?;
        let weighted = flow.loss.scale(w.flow);
        breakdown.flow = Some(weighted.item());
        breakdown.mask_fraction = flow.mask_fraction;
        breakdown.clipped_fraction = flow.clipped_fraction;
        breakdown.metric_diag_mean = Some(metric_diag_mean(&bundle.metric_matrix(params, &u, &tf)?));
        total = &(&total + &metric) + &weighted;
    }
    breakdown.total = total.item();
    Ok(Objective { total, breakdown })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ad::Tape;
    use crate::losses::LossWeights;
    use crate::nn::ModelConfig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn small(kind: FlowKind, variational: bool) -> ModelBundle {
        let mut cfg = ModelConfig::for_kind(kind, 6, 5);
        cfg.wide_hidden = vec![8];
        cfg.narrow_hidden = vec![8];
        cfg.variational = variational;
        ModelBundle::new(cfg).unwrap()
    }

    fn batch(bundle: &ModelBundle, seed: u64) -> BatchSample {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 5;
        let nx = bundle.config.n_x;
        BatchSample {
            ic: Array2::from_shape_fn((n, nx), |_| rng.gen_range(-1.0..1.0)),
            times: Array2::from_shape_fn((n, 1), |_| rng.gen_range(0.0..1.0)),
            target: Array2::from_shape_fn((n, nx), |_| rng.gen_range(-1.0..1.0)),
            noise: bundle
                .config
                .variational
                .then(|| Array2::from_shape_fn((n, bundle.code_dim()), |_| rng.sample(StandardNormal))),
            circle_radii: (0..n).map(|_| rng.gen_range(0.05..0.2)).collect(),
            horizon: 1.0,
        }
    }

    #[test]
    fn breakdown_sums_to_total() {
        for kind in FlowKind::ALL {
            for variational in [false, true] {
                let bundle = small(kind, variational);
                let spec = FlowLossSpec::new(kind);
                let tape = Tape::new();
                let p = bundle.store.bind(&tape);
                let out = composite_loss(&bundle, &p, &spec, &batch(&bundle, 1), 3).unwrap();
                let b = &out.breakdown;
                let sum: f64 = b.terms().iter().map(|(_, v)| v).sum();
                assert!((sum - b.total).abs() <= 1e-12 * b.total.abs().max(1.0), "{kind}");
                assert!(b.total.is_finite(), "{kind}");
                assert_eq!(b.kl.is_some(), variational);
                assert_eq!(b.flow.is_some(), kind.has_flow());
                let grads = out.total.backward();
                assert!(grads.params().all(|(_, g)| g.iter().all(|x| x.is_finite())), "{kind}");
            }
        }
    }

    #[test]
    fn sphere_is_reconstruction_only() {
        let bundle = small(FlowKind::Sphere, false);
        let spec = FlowLossSpec::new(FlowKind::Sphere);
        let tape = Tape::new();
        let p = bundle.store.bind(&tape);
        let out = composite_loss(&bundle, &p, &spec, &batch(&bundle, 2), 5).unwrap();
        assert_eq!(out.breakdown.total, out.breakdown.recon);
        assert_eq!(out.breakdown.recon, 10.0 * out.breakdown.recon_mse);
    }

    #[test]
    fn perfect_decoder_with_recon_only_weights() {
        // zero every decoder weight: the prediction is the bias, zero here,
        // and the targets are zero too
        let mut bundle = small(FlowKind::SecondFf, false);
        for &(wt, b) in bundle.decoder.layer_slots() {
            bundle.store.get_mut(wt).fill(0.0);
            bundle.store.get_mut(b).fill(0.0);
        }
        let mut spec = FlowLossSpec::new(FlowKind::SecondFf);
        spec.weights = LossWeights {
            recon: 1.0,
            kl_beta: 0.0,
            metric_consistency: 0.0,
            flow: 0.0,
        };
        let mut b = batch(&bundle, 3);
        b.target.fill(0.0);
        let tape = Tape::new();
        let p = bundle.store.bind(&tape);
        let out = composite_loss(&bundle, &p, &spec, &b, 5).unwrap();
        assert_eq!(out.breakdown.total, 0.0);
    }

    #[test]
    fn kind_mismatch_is_rejected() {
        let bundle = small(FlowKind::Perelman, false);
        let tape = Tape::new();
        let p = bundle.store.bind(&tape);
        let spec = FlowLossSpec::new(FlowKind::SecondFf);
        assert!(composite_loss(&bundle, &p, &spec, &batch(&bundle, 4), 5).is_err());
    }

    #[test]
    fn breakdown_json_skips_absent_terms() {
        let b = LossBreakdown {
            total: 1.0,
            recon: 1.0,
            recon_mse: 0.1,
            ..Default::default()
        };
        let json = serde_json::to_string(&b).unwrap();
        assert!(!json.contains("kl"));
        assert_eq!(serde_json::from_str::<LossBreakdown>(&json).unwrap(), b);
    }
}
