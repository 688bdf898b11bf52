use crate::ad::{Mat, Var};
use crate::{Error, Result};

use super::fields::{channel_columns, channel_matrix, seed_chart_time, ImmersionModel, MetricModel};

/// Mean squared error over every entry.
pub fn loss_reconstruction(prediction: &Var, target: &Var) -> Result<Var> {
    if prediction.shape() != target.shape() {
        return Err(Error::Shape(format!(
            "prediction is {:?} but target is {:?}",
            prediction.shape(),
            target.shape()
        )));
    }
    Ok((prediction - target).square().mean())
}

/// `(β/T) · mean_batch ½ Σ (μ² + σ² − 1 − log σ²)`, the Gaussian KL against a
/// standard normal prior.
pub fn loss_kl(mean: &Var, log_var: &Var, beta: f64, horizon: f64) -> Result<Var> {
    if mean.shape() != log_var.shape() {
        return Err(Error::Shape(format!(
            "mean is {:?} but log-variance is {:?}",
            mean.shape(),
            log_var.shape()
        )));
    }
    if !(horizon > 0.0) {
        return Err(Error::InvalidArgument(format!("time horizon must be positive, got {horizon}")));
    }
    let per_entry = (&(&mean.square() + &log_var.exp()) - log_var).shift(-1.0);
    let per_sample = per_entry.sum_cols().scale(0.5);
    Ok(per_sample.mean().scale(beta / horizon))
}

/// Batch mean of `||g − JᵀJ||_F²` for `batch x 1` entry columns; `jac` is
/// `D x d`.
pub fn metric_consistency(g: &Mat<Var>, jac: &Mat<Var>) -> Var {
    let induced = jac.transpose().matmul(jac);
    g.sub(&induced).frobenius_sq().mean()
}

/// `g(u, t)` and the immersion Jacobian at a batch of points, then
/// [`metric_consistency`].
pub fn loss_metric_consistency(
    metric: &dyn MetricModel,
    immersion: &dyn ImmersionModel,
    u: &Var,
    t: &Var,
) -> Result<Var> {
    let d = u.cols();
    let rows = u.rows();
    let firsts: Vec<[u8; 1]> = (0..d as u8).map(|i| [i]).collect();
    let wanted: Vec<&[u8]> = firsts.iter().map(|m| m.as_slice()).collect();
    let x = seed_chart_time(u, t, &wanted);
    let g = channel_matrix(&metric.metric_jet(&x)?, d, &[], rows);
    let e = immersion.immerse_jet(&x)?;
    let big_d = e.cols();
    let cols: Vec<Vec<Var>> = (0..d as u8).map(|i| channel_columns(&e, &[i], rows)).collect();
    let jac = Mat::from_fn(big_d, d, |a, i| cols[i][a].clone());
    Ok(metric_consistency(&g, &jac))
}

/// Monte-Carlo estimate `mean(f · √det g)` of `∫ f dV` against the sampling
/// density of the batch. `f` is `batch x 1`; `g` has `batch x 1` entries.
pub fn monte_carlo_manifold_integral(f: &Var, g: &Mat<Var>) -> Var {
    (f * &g.det().sqrt()).mean()
}

/// `f64` counterpart of [`monte_carlo_manifold_integral`].
pub fn monte_carlo_integral_f64(values: &[f64], volume: &[f64]) -> f64 {
    assert_eq!(values.len(), volume.len());
    values.iter().zip(volume).map(|(f, v)| f * v).sum::<f64>() / values.len() as f64
}

/// Per-row `(1/d) Σ_i g_ii`, averaged over the batch.
pub fn metric_diag_mean(g: &Mat<Var>) -> f64 {
    let d = g.rows();
    let total: f64 = (0..d).map(|i| g.get(i, i).with_value(|v| v.mean().unwrap_or(0.0))).sum();
    total / d as f64
}
