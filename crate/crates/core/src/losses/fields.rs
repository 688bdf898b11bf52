//! Jet-valued sources of metrics, immersions and scalar fields consumed by
//! the losses. Network-backed sources wrap a [`ModelBundle`]; closure-backed
//! ones let tests feed analytic fields through exactly the same code.

use std::rc::Rc;

use crate::ad::{Jet, JetSpec, Mat, Var};
use crate::nn::{Bound, ModelBundle};
use crate::Result;

/// A metric `g(u, t)` whose entries (row-major `d x d`) can be evaluated as
/// jets over the input `[u, t]`.
pub trait MetricModel {
    fn dim(&self) -> usize;
    fn metric_jet(&self, x: &Jet) -> Result<Vec<Jet>>;
}

/// An immersion `ℰ(u, t)`, returning a `batch x D` jet.
pub trait ImmersionModel {
    fn immerse_jet(&self, x: &Jet) -> Result<Jet>;
}

/// A scalar field `ψ(u, t)`, returning a `batch x 1` jet.
pub trait ScalarModel {
    fn scalar_jet(&self, x: &Jet) -> Result<Jet>;
}

/// A matrix field `Λ(u, t)` with `batch x 1` entries.
pub trait MatrixModel {
    fn matrix(&self, u: &Var, t: &Var) -> Result<Mat<Var>>;
}

/// Closure-backed metric.
pub struct FnMetricModel<F> {
    pub d: usize,
    pub f: F,
}

impl<F: Fn(&Jet) -> Vec<Jet>> MetricModel for FnMetricModel<F> {
    fn dim(&self) -> usize {
        self.d
    }
    fn metric_jet(&self, x: &Jet) -> Result<Vec<Jet>> {
        Ok((self.f)(x))
    }
}

/// Closure-backed immersion, scalar or matrix field.
pub struct FnModel<F>(pub F);

impl<F: Fn(&Jet) -> Jet> ImmersionModel for FnModel<F> {
    fn immerse_jet(&self, x: &Jet) -> Result<Jet> {
        Ok((self.0)(x))
    }
}

impl<F: Fn(&Jet) -> Jet> ScalarModel for FnModel<F> {
    fn scalar_jet(&self, x: &Jet) -> Result<Jet> {
        Ok((self.0)(x))
    }
}

/// Closure-backed `Λ`.
pub struct FnMatrixModel<F>(pub F);

impl<F: Fn(&Var, &Var) -> Mat<Var>> MatrixModel for FnMatrixModel<F> {
    fn matrix(&self, u: &Var, t: &Var) -> Result<Mat<Var>> {
        Ok((self.0)(u, t))
    }
}

/// The networks of a bundle bound to a tape.
#[derive(Clone, Copy)]
pub struct Networks<'a> {
    pub bundle: &'a ModelBundle,
    pub params: &'a Bound,
}

impl MetricModel for Networks<'_> {
    fn dim(&self) -> usize {
        self.bundle.intrinsic_dim()
    }
    fn metric_jet(&self, x: &Jet) -> Result<Vec<Jet>> {
        self.bundle.metric_jet(self.params, x)
    }
}

impl ImmersionModel for Networks<'_> {
    fn immerse_jet(&self, x: &Jet) -> Result<Jet> {
        self.bundle.immerse_jet(self.params, x)
    }
}

impl ScalarModel for Networks<'_> {
    fn scalar_jet(&self, x: &Jet) -> Result<Jet> {
        self.bundle.conformal_factor_jet(self.params, x)
    }
}

impl MatrixModel for Networks<'_> {
    fn matrix(&self, u: &Var, t: &Var) -> Result<Mat<Var>> {
        self.bundle.lambda_matrix(self.params, u, t)
    }
}

/// Seed a jet over `[u, t]` (`batch x d` and `batch x 1`).
pub fn seed_chart_time(u: &Var, t: &Var, wanted: &[&[u8]]) -> Jet {
    let spec: Rc<JetSpec> = JetSpec::new(u.cols() + 1, wanted);
    Jet::seed(&spec, &Var::concat_cols(&[u.clone(), t.clone()]))
}

/// One derivative channel of a list of scalar jets as a `d x d` matrix of
/// `rows x 1` columns. Entries may be constants of shape `1 x 1`.
pub fn channel_matrix(entries: &[Jet], d: usize, m: &[u8], rows: usize) -> Mat<Var> {
    Mat::from_vec(d, d, entries.iter().map(|e| e.d(m).broadcast_to((rows, 1))).collect())
}

/// The columns of one channel of a `rows x D` jet.
pub fn channel_columns(jet: &Jet, m: &[u8], rows: usize) -> Vec<Var> {
    let v = jet.d(m).broadcast_to((rows, jet.cols()));
    (0..jet.cols()).map(|a| v.col(a)).collect()
}

/// Time variable index of a jet over `[u, t]` with `d` chart coordinates.
pub fn time_var(d: usize) -> u8 {
    d as u8
}

/// Diagonal of the nested-sine round metric of `radius` as jets of the
/// chart coordinates in `x`.
pub fn sphere_diagonal_jets(x: &Jet, d: usize, radius: f64) -> Vec<Jet> {
    let mut acc = Jet::constant(x.spec(), x.value().tape().scalar(radius * radius));
    let mut out = vec![acc.clone()];
    for k in 1..d {
        acc = acc.mul(&x.col(k - 1).sin().square());
        out.push(acc.clone());
    }
    out
}

/// Row-major `d x d` jets with `diag` on the diagonal and zeros elsewhere.
pub fn diagonal_metric_jets(x: &Jet, diag: &[Jet]) -> Vec<Jet> {
    let d = diag.len();
    let zero = Jet::constant(x.spec(), x.value().tape().scalar(0.0));
    (0..d * d)
        .map(|e| if e / d == e % d { diag[e / d].clone() } else { zero.clone() })
        .collect()
}
