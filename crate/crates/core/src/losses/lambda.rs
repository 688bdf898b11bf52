use crate::ad::Var;
use crate::Result;

use super::fields::{channel_matrix, seed_chart_time, time_var, MatrixModel, MetricModel};

/// Batch mean of `||∂_t g + Λ||_F²`.
pub fn loss_lambda_baseline(metric: &dyn MetricModel, lambda: &dyn MatrixModel, u: &Var, t: &Var) -> Result<Var> {
    let d = u.cols();
    let tv = time_var(d);
    let x = seed_chart_time(u, t, &[&[tv]]);
    let dt_g = channel_matrix(&metric.metric_jet(&x)?, d, &[tv], u.rows());
    let lam = lambda.matrix(u, t)?;
    Ok(dt_g.add(&lam).frobenius_sq().mean())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ad::{Jet, Mat, Tape};
    use crate::losses::fields::{FnMatrixModel, FnMetricModel};
    use ndarray::array;

    fn growing(x: &Jet) -> Vec<Jet> {
        // g = (1 + t u₀²) I₂
        let diag = x.col(2).mul(&x.col(0).square()).add_scalar(1.0);
        let zero = Jet::constant(x.spec(), x.value().tape().scalar(0.0));
        vec![diag.clone(), zero.clone(), zero, diag]
    }

    fn batch(tape: &Tape) -> (Var, Var) {
        (tape.constant(array![[0.5, 1.0], [-1.5, 0.2]]), tape.constant(array![[0.1], [0.7]]))
    }

    #[test]
    fn exact_negative_rate_gives_zero() {
        let tape = Tape::new();
        let (u, t) = batch(&tape);
        let g = FnMetricModel { d: 2, f: growing };
        let lam = FnMatrixModel(|u: &Var, _t: &Var| {
            let v = u.col(0).square().scale(-1.0);
            let z = u.tape().zeros(u.rows(), 1);
            Mat::from_vec(2, 2, vec![v.clone(), z.clone(), z, v])
        });
        assert_eq!(loss_lambda_baseline(&g, &lam, &u, &t).unwrap().item(), 0.0);
    }

    #[test]
    fn static_metric_cases() {
        let tape = Tape::new();
        let (u, t) = batch(&tape);
        let g = FnMetricModel {
            d: 2,
            f: |x: &Jet| {
                let c = |v: f64| Jet::constant(x.spec(), x.value().tape().scalar(v));
                vec![c(2.0), c(0.1), c(0.1), c(1.0)]
            },
        };
        let zero = FnMatrixModel(|u: &Var, _t: &Var| Mat::from_fn(2, 2, |_, _| u.tape().zeros(u.rows(), 1)));
        assert_eq!(loss_lambda_baseline(&g, &zero, &u, &t).unwrap().item(), 0.0);
        let eye = FnMatrixModel(|u: &Var, _t: &Var| {
            Mat::from_fn(2, 2, |i, j| u.tape().constant(ndarray::Array2::from_elem((u.rows(), 1), if i == j { 1.0 } else { 0.0 })))
        });
        assert_eq!(loss_lambda_baseline(&g, &eye, &u, &t).unwrap().item(), 2.0);
    }
}
