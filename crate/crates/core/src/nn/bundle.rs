use std::f64::consts::FRAC_PI_2;
use std::rc::Rc;

use ndarray::Array2;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::mlp::{Activation, Bound, Mlp, NetworkSpec, ParamStore};
use crate::ad::{Jet, JetSpec, Mat, Tape, Var};
use crate::geometry::{LocalChart, RadiusMode};
use crate::losses::FlowKind;
use crate::{Error, Result};

/// Added inside square roots of norms so `u/|u|` stays differentiable at 0.
const NORM_FLOOR: f64 = 1e-12;
/// Half-width of the sphere-chart box around `π/2`.
const SPHERE_BOX_HALF_WIDTH: f64 = 1.2;

/// Analytic metric at `t = 0` that the learned factor is ramped away from.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum MetricOverlay {
    None,
    /// `c · g_sphere` (unit nested-sine sphere metric).
    ScaledSphere { scale: f64 },
    /// `2I + cos(u¹)(du¹⊗du³ + du³⊗du¹)`.
    OffdiagCosine,
}

/// Everything needed to rebuild a [`ModelBundle`] from scratch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: FlowKind,
    pub intrinsic_dim: usize,
    pub extrinsic_dim: usize,
    pub n_x: usize,
    pub variational: bool,
    /// Hidden widths of the encoder and decoder.
    pub wide_hidden: Vec<usize>,
    /// Hidden widths of the immersion, metric, conformal, shift and Λ networks.
    pub narrow_hidden: Vec<usize>,
    pub activation: Activation,
    pub overlay: MetricOverlay,
    pub chart: LocalChart,
    /// `R₀` of the sphere kind.
    pub sphere_initial_radius: f64,
    pub radius_mode: RadiusMode,
    /// Radius of the harmonic source sphere.
    pub source_radius: f64,
    pub seed: u64,
}

/// `[π/2 − 1.2, π/2 + 1.2]^d`, away from the poles of the nested-sine chart.
pub fn sphere_chart(d: usize) -> LocalChart {
    LocalChart::cube(d, FRAC_PI_2 - SPHERE_BOX_HALF_WIDTH, FRAC_PI_2 + SPHERE_BOX_HALF_WIDTH).expect("valid sphere chart")
}

impl ModelConfig {
    /// Defaults for `kind` on data with `n_x` spatial points.
    pub fn for_kind(kind: FlowKind, n_x: usize, seed: u64) -> Self {
        let d = kind.default_intrinsic_dim();
        let overlay = match kind {
            FlowKind::GaussPath => MetricOverlay::ScaledSphere { scale: 1.0 },
            FlowKind::SecondFf => MetricOverlay::ScaledSphere { scale: 3.0 },
            _ => MetricOverlay::None,
        };
        let mut cfg = Self {
            kind,
            intrinsic_dim: d,
            extrinsic_dim: 2 * d - 1,
            n_x,
            variational: false,
            wide_hidden: vec![128; 4],
            narrow_hidden: vec![64; 3],
            activation: Activation::Tanh,
            overlay,
            chart: LocalChart::default_box(d),
            sphere_initial_radius: 2.0,
            radius_mode: RadiusMode::default(),
            source_radius: 2.0,
            seed,
        };
        cfg.set_intrinsic_dim(d);
        cfg
    }

    /// Change `d`, resetting `D = 2d − 1` and the chart box.
    pub fn set_intrinsic_dim(&mut self, d: usize) {
        self.intrinsic_dim = d;
        self.extrinsic_dim = (2 * d).saturating_sub(1).max(1);
        self.chart = if self.uses_sphere_chart() {
            sphere_chart(d)
        } else {
            LocalChart::default_box(d)
        };
    }

    /// Kinds whose metric is built from the nested-sine sphere metric.
    pub fn uses_sphere_chart(&self) -> bool {
        self.kind == FlowKind::Perelman || matches!(self.overlay, MetricOverlay::ScaledSphere { .. })
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.intrinsic_dim;
        self.kind.check_dim(d)?;
        if self.n_x == 0 {
            return Err(Error::InvalidArgument("n_x must be positive".into()));
        }
        if self.kind == FlowKind::Sphere && self.extrinsic_dim != d + 1 {
            return Err(Error::Dimension {
                expected: "D = d + 1 for the sphere kind",
                got: self.extrinsic_dim,
            });
        }
        if self.extrinsic_dim < d {
            return Err(Error::Dimension {
                expected: "D >= d",
                got: self.extrinsic_dim,
            });
        }
        if self.chart.d != d {
            return Err(Error::Dimension {
                expected: "chart dimension equal to d",
                got: self.chart.d,
            });
        }
        if self.overlay == MetricOverlay::OffdiagCosine && d < 3 {
            return Err(Error::Dimension {
                expected: ">= 3 for the off-diagonal cosine overlay",
                got: d,
            });
        }
        if !(self.sphere_initial_radius > 0.0 && self.source_radius > 0.0) {
            return Err(Error::InvalidArgument("radii must be positive".into()));
        }
        Ok(())
    }
}

/// Output of the encoder.
pub struct Encoded {
    /// Chart point used downstream (a reparameterized sample in variational mode).
    pub u: Var,
    /// Pre-squash mean.
    pub mean_raw: Var,
    /// Pre-squash log-variance, variational mode only.
    pub log_var: Option<Var>,
}

/// The networks of one model together with their parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelBundle {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub encoder: Mlp,
    pub decoder: Mlp,
    pub immersion: Option<Mlp>,
    pub metric: Option<Mlp>,
    pub psi: Option<Mlp>,
    pub shift: Option<Mlp>,
    pub lambda: Option<Mlp>,
}

impl ModelBundle {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let (d, big_d) = (config.intrinsic_dim, config.extrinsic_dim);
        let kind = config.kind;
        let mut seeds = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let mut net = |name: &str, input: usize, hidden: &[usize], output: usize, store: &mut ParamStore| {
            let mut spec = NetworkSpec::new(input, hidden, output, seeds.next_u64());
            spec.activation = config.activation;
            Mlp::new(name, spec, store)
        };
        let code = if kind == FlowKind::Sphere { big_d } else { d };
        let enc_out = if config.variational { 2 * code } else { code };
        let encoder = net("encoder", config.n_x, &config.wide_hidden, enc_out, &mut store)?;
        let decoder = net("decoder", big_d, &config.wide_hidden, config.n_x, &mut store)?;
        let narrow = config.narrow_hidden.clone();
        let immersion = match kind {
            FlowKind::Sphere | FlowKind::Harmonic => None,
            _ => Some(net("immersion", d + 1, &narrow, big_d, &mut store)?),
        };
        let metric = match kind {
            FlowKind::GaussPath | FlowKind::SecondFf | FlowKind::Harmonic | FlowKind::LambdaBaseline => {
                Some(net("metric", d + 1, &narrow, d * d, &mut store)?)
            }
            _ => None,
        };
        let psi = match kind {
            FlowKind::Perelman => Some(net("psi", d + 1, &narrow, 1, &mut store)?),
            FlowKind::Harmonic => Some(net("psi", d + 1, &narrow, big_d, &mut store)?),
            _ => None,
        };
        let shift = match kind {
            FlowKind::Sphere => Some(net("shift", 1, &narrow, big_d, &mut store)?),
            _ => None,
        };
        let lambda = match kind {
            FlowKind::LambdaBaseline => Some(net("lambda", d + 1, &narrow, d * d, &mut store)?),
            _ => None,
        };
        Ok(Self {
            config,
            store,
            encoder,
            decoder,
            immersion,
            metric,
            psi,
            shift,
            lambda,
        })
    }

    pub fn kind(&self) -> FlowKind {
        self.config.kind
    }

    pub fn intrinsic_dim(&self) -> usize {
        self.config.intrinsic_dim
    }

    pub fn extrinsic_dim(&self) -> usize {
        self.config.extrinsic_dim
    }

    /// Every network in a fixed order.
    pub fn networks(&self) -> Vec<&Mlp> {
        let mut out = vec![&self.encoder, &self.decoder];
        out.extend(
            [&self.immersion, &self.metric, &self.psi, &self.shift, &self.lambda]
                .into_iter()
                .flatten(),
        );
        out
    }

    fn need<'a>(net: &'a Option<Mlp>, what: &str) -> Result<&'a Mlp> {
        net.as_ref()
            .ok_or_else(|| Error::InvalidArgument(format!("this model kind has no {what} network")))
    }

    /// `center + half_width · tanh(raw)` per chart coordinate; the identity
    /// for the sphere kind, whose encoder lands directly in ℝ^D.
    pub fn squash(&self, raw: &Var) -> Var {
        if self.kind() == FlowKind::Sphere {
            return raw.clone();
        }
        let tape = raw.tape();
        let c = &self.config.chart;
        let center = tape.constant(Array2::from_shape_vec((1, c.d), c.center()).unwrap());
        let half = tape.constant(Array2::from_shape_vec((1, c.d), c.half_width()).unwrap());
        &(&raw.tanh() * &half) + &center
    }

    /// Encode a `batch x n_x` block of initial conditions. In variational
    /// mode `noise` (`batch x code`, standard normal) drives the
    /// reparameterized sample; without noise the mean is used.
    pub fn encode(&self, p: &Bound, ic: &Var, noise: Option<&Var>) -> Encoded {
        let out = self.encoder.forward(p, ic);
        if !self.config.variational {
            return Encoded {
                u: self.squash(&out),
                mean_raw: out,
                log_var: None,
            };
        }
        let code = out.cols() / 2;
        let mean_raw = out.cols_range(0, code);
        let log_var = out.cols_range(code, code);
        let raw = match noise {
            Some(xi) => &mean_raw + &(&log_var.scale(0.5).exp() * xi),
            None => mean_raw.clone(),
        };
        Encoded {
            u: self.squash(&raw),
            mean_raw,
            log_var: Some(log_var),
        }
    }

    /// Width of the encoder's sample (`d`, or `D` for the sphere kind).
    pub fn code_dim(&self) -> usize {
        if self.kind() == FlowKind::Sphere {
            self.extrinsic_dim()
        } else {
            self.intrinsic_dim()
        }
    }

    /// `r(t)` of the sphere kind on a `batch x 1` column of times.
    fn radius(&self, t: &Var) -> Result<Var> {
        let (r0, d) = (self.config.sphere_initial_radius, self.intrinsic_dim() as f64);
        let slope = (d - 1.0)
            * match self.config.radius_mode {
                RadiusMode::Shrink(c) => -c,
                RadiusMode::Expand(c) => c,
            };
        let sq = t.affine(slope, r0 * r0);
        let min = sq.with_value(|v| v.iter().copied().fold(f64::INFINITY, f64::min));
        if !(min > 0.0) {
            return Err(Error::Extinction {
                extinction_time: r0 * r0 / slope.abs(),
            });
        }
        Ok(sq.sqrt())
    }

    /// Additive sphere center `𝒮(t)` (`batch x D`).
    pub fn shift_center(&self, p: &Bound, t: &Var) -> Result<Var> {
        Ok(Self::need(&self.shift, "shift")?.forward(p, t))
    }

    /// `ℰ(u, t)` for `batch x d` chart points and `batch x 1` times.
    pub fn immerse(&self, p: &Bound, u: &Var, t: &Var) -> Result<Var> {
        match self.kind() {
            FlowKind::Sphere => {
                let norm = u.square().sum_cols().shift(NORM_FLOOR).sqrt();
                let r = self.radius(t)?;
                Ok(&(u * &(&r / &norm)) + &self.shift_center(p, t)?)
            }
            FlowKind::Harmonic => {
                let norm = u.square().sum_cols().shift(NORM_FLOOR).sqrt();
                let source = (u / &norm).scale(self.config.source_radius);
                Ok(Self::need(&self.psi, "psi")?.forward(p, &Var::concat_cols(&[source, t.clone()])))
            }
            _ => Ok(Self::need(&self.immersion, "immersion")?.forward(p, &Var::concat_cols(&[u.clone(), t.clone()]))),
        }
    }

    /// `ℰ` propagated as a jet; `x` is a jet over the `batch x (d+1)` input
    /// `[u, t]`.
    pub fn immerse_jet(&self, p: &Bound, x: &Jet) -> Result<Jet> {
        let d = self.intrinsic_dim();
        match self.kind() {
            FlowKind::Sphere => Err(Error::InvalidArgument("the sphere kind has no immersion jet".into())),
            FlowKind::Harmonic => {
                let u = x.cols_range(0, d);
                let inv_norm = u.square().sum_cols().add_scalar(NORM_FLOOR).sqrt().recip();
                let source = u.mul(&inv_norm).scale(self.config.source_radius);
                let input = Jet::concat_cols(&[source, x.col(d)]);
                Ok(Self::need(&self.psi, "psi")?.forward_jet(p, &input))
            }
            _ => Ok(Self::need(&self.immersion, "immersion")?.forward_jet(p, x)),
        }
    }

    pub fn decode(&self, p: &Bound, point: &Var) -> Var {
        self.decoder.forward(p, point)
    }

    /// Factor of the analytic overlay, `F₀ᵀF₀ = overlay`, as `d x d` jets
    /// (`None` entries are zero).
    fn overlay_factor(&self, x: &Jet) -> Vec<Option<Jet>> {
        let d = self.intrinsic_dim();
        let mut f: Vec<Option<Jet>> = vec![None; d * d];
        let constant = |c: f64| Jet::constant(x.spec(), x.value().tape().scalar(c));
        match self.config.overlay {
            MetricOverlay::None => {}
            MetricOverlay::ScaledSphere { scale } => {
                let mut acc = constant(scale.sqrt());
                f[0] = Some(acc.clone());
                for k in 1..d {
                    acc = acc.mul(&x.col(k - 1).sin());
                    f[k * d + k] = Some(acc.clone());
                }
            }
            MetricOverlay::OffdiagCosine => {
                // upper Cholesky factor of 2I + c(E13 + E31), c = cos u¹
                let s2 = 2f64.sqrt();
                let c = x.col(0).cos();
                for k in 0..d {
                    f[k * d + k] = Some(constant(s2));
                }
                f[2] = Some(c.scale(1.0 / s2));
                f[2 * d + 2] = Some(c.square().scale(-0.5).add_scalar(2.0).sqrt());
            }
        }
        f
    }

    /// Entries `𝒢_{ki}` of the metric factor, `𝒢 = F₀(u) + t·N(u, t)` with
    /// an overlay and `𝒢 = N(u, t)` without.
    fn metric_factor_jet(&self, p: &Bound, x: &Jet) -> Result<Vec<Jet>> {
        let d = self.intrinsic_dim();
        let n = Self::need(&self.metric, "metric")?.forward_jet(p, x);
        let overlay = self.overlay_factor(x);
        let ramp = self.config.overlay != MetricOverlay::None;
        let t = x.col(d);
        Ok((0..d * d)
            .map(|e| {
                let learned = n.col(e);
                if !ramp {
                    return learned;
                }
                let learned = learned.mul(&t);
                match &overlay[e] {
                    Some(f0) => f0.add(&learned),
                    None => learned,
                }
            })
            .collect())
    }

    /// Metric entries `g_ij` (row-major `d x d`) as jets over `[u, t]`.
    pub fn metric_jet(&self, p: &Bound, x: &Jet) -> Result<Vec<Jet>> {
        let d = self.intrinsic_dim();
        if self.kind() == FlowKind::Perelman {
            let psi = self.conformal_factor_jet(p, x)?;
            let power = psi.powf(4.0 / (d as f64 - 2.0));
            let mut out = Vec::with_capacity(d * d);
            let mut diag = Jet::constant(x.spec(), x.value().tape().scalar(1.0));
            let mut diags = vec![diag.clone()];
            for k in 1..d {
                diag = diag.mul(&x.col(k - 1).sin().square());
                diags.push(diag.clone());
            }
            for (i, diag_i) in diags.iter().enumerate() {
                for j in 0..d {
                    out.push(if i == j {
                        diag_i.mul(&power)
                    } else {
                        Jet::constant(x.spec(), x.value().tape().scalar(0.0))
                    });
                }
            }
            return Ok(out);
        }
        let f = self.metric_factor_jet(p, x)?;
        let mut out = Vec::with_capacity(d * d);
        for i in 0..d {
            for j in 0..d {
                let mut acc = f[i].mul(&f[j]);
                for k in 1..d {
                    acc = acc.add(&f[k * d + i].mul(&f[k * d + j]));
                }
                out.push(acc);
            }
        }
        Ok(out)
    }

    /// Metric values at `(u, t)` as a matrix of `batch x 1` columns.
    pub fn metric_matrix(&self, p: &Bound, u: &Var, t: &Var) -> Result<Mat<Var>> {
        let d = self.intrinsic_dim();
        let spec = JetSpec::new(d + 1, &[&[]]);
        let x = Jet::seed(&spec, &Var::concat_cols(&[u.clone(), t.clone()]));
        let entries = self.metric_jet(p, &x)?;
        let rows = u.rows();
        Ok(Mat::from_vec(
            d,
            d,
            entries.iter().map(|e| e.value().broadcast_to((rows, 1))).collect(),
        ))
    }

    /// `ψ = 1 + t·MLP(u, t)` for the Perelman kind (unclipped), so the
    /// metric at `t = 0` is the round sphere.
    pub fn conformal_factor_jet(&self, p: &Bound, x: &Jet) -> Result<Jet> {
        if self.kind() != FlowKind::Perelman {
            return Err(Error::InvalidArgument("only the perelman kind has a conformal factor".into()));
        }
        let t = x.col(self.intrinsic_dim());
        Ok(Self::need(&self.psi, "psi")?.forward_jet(p, x).mul(&t).add_scalar(1.0))
    }

    /// `Λ = LᵀL` from the Λ network, entries `batch x 1`.
    pub fn lambda_matrix(&self, p: &Bound, u: &Var, t: &Var) -> Result<Mat<Var>> {
        let d = self.intrinsic_dim();
        let l = Self::need(&self.lambda, "lambda")?.forward(p, &Var::concat_cols(&[u.clone(), t.clone()]));
        let cols: Vec<Var> = (0..d * d).map(|e| l.col(e)).collect();
        Ok(Mat::from_fn(d, d, |i, j| {
            let mut acc = &cols[i] * &cols[j];
            for k in 1..d {
                acc = &acc + &(&cols[k * d + i] * &cols[k * d + j]);
            }
            acc
        }))
    }

    /// Decoded predictions for every pair of IC row and time: returns one
    /// `n_ic x n_x` block per time. Variational models use the mean.
    pub fn predict(&self, ics: &Array2<f64>, times: &[f64]) -> Result<Vec<Array2<f64>>> {
        let tape = Tape::new();
        let p = self.store.bind(&tape);
        let enc = self.encode(&p, &tape.constant(ics.clone()), None);
        let u = enc.u.detach();
        let rows = ics.nrows();
        times
            .iter()
            .map(|&t| {
                let tc = tape.constant(Array2::from_elem((rows, 1), t));
                let point = self.immerse(&p, &u, &tc)?;
                Ok(self.decode(&p, &point).value())
            })
            .collect()
    }

    /// Chart points of the encoder mean for a block of initial conditions.
    pub fn encode_mean(&self, ics: &Array2<f64>) -> Array2<f64> {
        let tape = Tape::new();
        let p = self.store.bind(&tape);
        self.encode(&p, &tape.constant(ics.clone()), None).u.value()
    }
}

/// A jet spec over `d` chart coordinates plus time (variable `d`).
pub fn chart_time_spec(d: usize, wanted: &[&[u8]]) -> Rc<JetSpec> {
    JetSpec::new(d + 1, wanted)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ad::Tensor;
    use crate::geometry::{induced_metric, sphere_metric, ImmersionJet};
    use nalgebra::DMatrix;
    use ndarray::array;

    fn small(kind: FlowKind) -> ModelConfig {
        let mut cfg = ModelConfig::for_kind(kind, 7, 3);
        cfg.wide_hidden = vec![6];
        cfg.narrow_hidden = vec![5, 5];
        cfg
    }

    fn metric_at(bundle: &ModelBundle, u: &[f64], t: f64) -> Vec<f64> {
        let tape = Tape::new();
        let p = bundle.store.bind(&tape);
        let mut row = u.to_vec();
        row.push(t);
        let spec = chart_time_spec(u.len(), &[&[]]);
        let x = Jet::seed(&spec, &tape.constant(Array2::from_shape_vec((1, row.len()), row).unwrap()));
        bundle
            .metric_jet(&p, &x)
            .unwrap()
            .iter()
            .map(|e| e.value().item())
            .collect()
    }

    #[test]
    fn default_dimensions() {
        let b = ModelBundle::new(small(FlowKind::SecondFf)).unwrap();
        assert_eq!((b.intrinsic_dim(), b.extrinsic_dim()), (3, 5));
        let b = ModelBundle::new(small(FlowKind::GaussPath)).unwrap();
        assert_eq!((b.intrinsic_dim(), b.extrinsic_dim()), (2, 3));
        let cfg = ModelConfig::for_kind(FlowKind::Baseline, 201, 0);
        let b = ModelBundle::new(cfg).unwrap();
        assert_eq!(b.decoder.output_dim(), 201);
    }

    #[test]
    fn invalid_dimensions_rejected() {
        let mut cfg = small(FlowKind::GaussPath);
        cfg.set_intrinsic_dim(3);
        assert!(matches!(ModelBundle::new(cfg), Err(Error::Dimension { .. })));
        let mut cfg = small(FlowKind::SecondFf);
        cfg.set_intrinsic_dim(2);
        assert!(ModelBundle::new(cfg).is_err());
    }

    #[test]
    fn overlays_at_time_zero() {
        let b = ModelBundle::new(small(FlowKind::SecondFf)).unwrap();
        let u = [1.1, 1.9, 0.8];
        let g = metric_at(&b, &u, 0.0);
        let want = sphere_metric(3, 1.0, &u).unwrap() * 3.0;
        for i in 0..3 {
            for j in 0..3 {
                assert!((g[i * 3 + j] - want[(i, j)]).abs() < 1e-14);
            }
        }
        let mut cfg = small(FlowKind::SecondFf);
        cfg.overlay = MetricOverlay::OffdiagCosine;
        let b = ModelBundle::new(cfg).unwrap();
        let g = metric_at(&b, &u, 0.0);
        assert!((g[2] - u[0].cos()).abs() < 1e-14 && (g[6] - u[0].cos()).abs() < 1e-14);
        assert!((g[0] - 2.0).abs() < 1e-14 && g[1].abs() < 1e-14);
        // away from t = 0 the learned part contributes
        assert!((metric_at(&b, &u, 0.7)[0] - 2.0).abs() > 1e-6);
    }

    #[test]
    fn no_overlay_is_pure_factor_product() {
        let b = ModelBundle::new(small(FlowKind::LambdaBaseline)).unwrap();
        let x = array![[0.3, -0.1, 0.4, 0.6]];
        let n = b.metric.as_ref().unwrap().forward_array(&b.store, &x);
        let f = DMatrix::from_row_slice(3, 3, n.as_slice().unwrap());
        let want = f.transpose() * f;
        let g = metric_at(&b, &[0.3, -0.1, 0.4], 0.6);
        for e in 0..9 {
            assert!((g[e] - want[(e / 3, e % 3)]).abs() < 1e-13);
        }
    }

    #[test]
    fn chart_containment() {
        let mut b = ModelBundle::new(small(FlowKind::Perelman)).unwrap();
        // huge encoder output still lands in the box
        let (w, _) = b.encoder.layer_slots()[0];
        b.store.get_mut(w).mapv_inplace(|v| v * 1e4);
        let ics = Array2::from_shape_fn((5, 7), |(i, j)| ((i * 7 + j) as f64).sin() * 50.0);
        let u = b.encode_mean(&ics);
        for row in u.rows() {
            assert!(b.config.chart.contains(row.as_slice().unwrap()));
        }
    }

    #[test]
    fn variational_sample_collapses_to_mean() {
        let mut cfg = small(FlowKind::Baseline);
        cfg.variational = true;
        let b = ModelBundle::new(cfg).unwrap();
        let tape = Tape::new();
        let p = b.store.bind(&tape);
        let ic = tape.constant(Array2::from_elem((2, 7), 0.3));
        let noise = tape.constant(Array2::from_elem((2, 3), 0.0));
        let enc = b.encode(&p, &ic, Some(&noise));
        let mean = b.squash(&enc.mean_raw);
        assert_eq!(enc.u.value(), mean.value());
        assert!(enc.log_var.is_some());
        let det = ModelBundle::new(small(FlowKind::Baseline)).unwrap();
        let p = det.store.bind(&tape);
        assert!(det.encode(&p, &ic, None).log_var.is_none());
    }

    #[test]
    fn sphere_kind_lies_on_shifted_sphere() {
        let b = ModelBundle::new(small(FlowKind::Sphere)).unwrap();
        let tape = Tape::new();
        let p = b.store.bind(&tape);
        let u = tape.constant(array![[0.3, -1.0, 2.0], [1.0, 0.1, 0.0]]);
        let t = tape.constant(array![[0.25], [0.9]]);
        let pt = b.immerse(&p, &u, &t).unwrap().value();
        let s = b.shift_center(&p, &t).unwrap().value();
        for (row, tt) in [(0, 0.25), (1, 0.9)] {
            let r = (4.0 - 2.0_f64 * tt).sqrt();
            let n: f64 = (0..3).map(|k| (pt[[row, k]] - s[[row, k]]).powi(2)).sum::<f64>().sqrt();
            assert!((n - r).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_shift_is_origin_centered() {
        let mut b = ModelBundle::new(small(FlowKind::Sphere)).unwrap();
        for slot in b.shift.as_ref().unwrap().slots() {
            b.store.get_mut(slot).fill(0.0);
        }
        let tape = Tape::new();
        let p = b.store.bind(&tape);
        let t = tape.constant(array![[0.5]]);
        let pt = b.immerse(&p, &tape.constant(array![[0.0, 3.0, 4.0]]), &t).unwrap().value();
        let r = 3f64.sqrt();
        assert!((pt[[0, 1]] - 0.6 * r).abs() < 1e-12 && (pt[[0, 2]] - 0.8 * r).abs() < 1e-12);
    }

    struct NetImmersion<'a>(&'a ModelBundle, usize);

    impl ImmersionJet for NetImmersion<'_> {
        fn intrinsic_dim(&self) -> usize {
            self.1
        }
        fn extrinsic_dim(&self) -> usize {
            self.0.extrinsic_dim()
        }
        fn point(&self, u: &[f64], t: f64) -> nalgebra::DVector<f64> {
            let tape = Tape::new();
            let p = self.0.store.bind(&tape);
            let uu = tape.constant(Array2::from_shape_vec((1, u.len()), u.to_vec()).unwrap());
            let tt = tape.constant(array![[t]]);
            nalgebra::DVector::from_vec(self.0.immerse(&p, &uu, &tt).unwrap().value().into_raw_vec_and_offset().0)
        }
    }

    #[test]
    fn immersion_jet_matches_finite_differences() {
        for kind in [FlowKind::SecondFf, FlowKind::Harmonic] {
            let b = ModelBundle::new(small(kind)).unwrap();
            let u = [0.4, 1.3, -0.7];
            let tape = Tape::new();
            let p = b.store.bind(&tape);
            let spec = chart_time_spec(3, &[&[0], &[1], &[2], &[0, 1], &[2, 2]]);
            let x = Jet::seed(&spec, &tape.constant(array![[0.4, 1.3, -0.7, 0.3]]));
            let e = b.immerse_jet(&p, &x).unwrap();
            let fd = NetImmersion(&b, 3);
            let jac = fd.jacobian(&u, 0.3);
            let hess = fd.second_derivatives(&u, 0.3);
            for k in 0..3 {
                let col: Tensor = e.d(&[k as u8]).value();
                for a in 0..5 {
                    assert!((col[[0, a]] - jac[(a, k)]).abs() < 1e-4, "{kind} d{k}");
                }
            }
            let d01 = e.d(&[0, 1]).value();
            let d22 = e.d(&[2, 2]).value();
            for a in 0..5 {
                assert!((d01[[0, a]] - hess[1][a]).abs() < 1e-3 * (1.0 + hess[1][a].abs()));
                assert!((d22[[0, a]] - hess[8][a]).abs() < 1e-3 * (1.0 + hess[8][a].abs()));
            }
            let g = induced_metric(&fd, &u, 0.3);
            assert!(g.symmetric_eigen().eigenvalues.min() > -1e-10);
        }
    }

    #[test]
    fn metric_is_psd_everywhere_sampled() {
        let b = ModelBundle::new(small(FlowKind::Harmonic)).unwrap();
        for k in 0..20 {
            let s = k as f64;
            let u = [(s * 0.7).sin() * 3.0, (s * 1.3).cos() * 3.0, (s * 0.4).sin()];
            let g = metric_at(&b, &u, (s * 0.05) % 1.0);
            let m = DMatrix::from_row_slice(3, 3, &g);
            assert!(m.symmetric_eigen().eigenvalues.min() >= -1e-10);
        }
    }

    #[test]
    fn decoder_respects_lipschitz_bound() {
        let b = ModelBundle::new(small(FlowKind::Baseline)).unwrap();
        let bound = b.decoder.lipschitz_bound(&b.store);
        let x = array![[0.1, 0.2, -0.3, 0.4, 0.0]];
        let y0 = b.decoder.forward_array(&b.store, &x);
        for k in 0..10 {
            let mut xp = x.clone();
            let dx = 1e-3 * (k as f64 + 1.0);
            xp[[0, k % 5]] += dx;
            let y1 = b.decoder.forward_array(&b.store, &xp);
            let dy = (&y1 - &y0).mapv(|v| v * v).sum().sqrt();
            assert!(dy <= bound * dx * (1.0 + 1e-9));
        }
    }

    #[test]
    fn translation_keeps_induced_metric() {
        // a constant shift is a pure translation of the sphere kind
        let mut b = ModelBundle::new(small(FlowKind::Sphere)).unwrap();
        let (w_last, b_last) = *b.shift.as_ref().unwrap().layer_slots().last().unwrap();
        b.store.get_mut(w_last).fill(0.0);
        let mut moved = b.clone();
        moved.store.get_mut(b_last).fill(1.5);
        let jac = |bundle: &ModelBundle| {
            let tape = Tape::new();
            let p = bundle.store.bind(&tape);
            let u0 = [0.3, -0.4, 0.8];
            let h = 1e-5;
            (0..3)
                .map(|k| {
                    let mut a = u0;
                    let mut c = u0;
                    a[k] += h;
                    c[k] -= h;
                    let t = tape.constant(array![[0.2]]);
                    let pa = bundle.immerse(&p, &tape.constant(Array2::from_shape_vec((1, 3), a.to_vec()).unwrap()), &t).unwrap().value();
                    let pc = bundle.immerse(&p, &tape.constant(Array2::from_shape_vec((1, 3), c.to_vec()).unwrap()), &t).unwrap().value();
                    (pa - pc) / (2.0 * h)
                })
                .collect::<Vec<_>>()
        };
        let (j0, j1) = (jac(&b), jac(&moved));
        for k in 0..3 {
            assert!((&j0[k] - &j1[k]).iter().all(|v| v.abs() < 1e-9));
        }
    }
}
