//! Extrinsic-curvature flow `∂_t g = c·H` with `H` contracted from the
//! second-fundamental-form proxy of the immersion.

use crate::ad::{Mat, Var};
use crate::geometry::formulas::{
    christoffel, h_flow, immersion_laplacian, mean_curvature_from_laplacian, second_fundamental_form, traceless,
};
use crate::geometry::{DiagonalConvention, SecondDerivativeMode};
use crate::{Error, Result};

use super::fields::{channel_columns, channel_matrix, seed_chart_time, time_var, ImmersionModel, MetricModel};

/// Constants of the second-ff residual.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SecondFfSettings {
    pub flow_constant: f64,
    pub ambient_scalar: f64,
    pub diagonal: DiagonalConvention,
    pub second_derivatives: SecondDerivativeMode,
}

/// `H_ij` of the learned metric and immersion at each sample, together with
/// `∂_t g`, as matrices of `batch x 1` columns.
pub struct FlowTensorField {
    pub metric: Mat<Var>,
    pub dt_metric: Mat<Var>,
    pub flow: Mat<Var>,
}

fn index_pairs(d: usize) -> Vec<[u8; 2]> {
    let mut out = Vec::new();
    for i in 0..d as u8 {
        for j in i..d as u8 {
            out.push([i, j]);
        }
    }
    out
}

pub fn flow_tensor_field(
    metric: &dyn MetricModel,
    immersion: &dyn ImmersionModel,
    u: &Var,
    t: &Var,
    settings: &SecondFfSettings,
) -> Result<FlowTensorField> {
    let d = u.cols();
    if d < 3 {
        return Err(Error::Dimension {
            expected: ">= 3",
            got: d,
        });
    }
    let rows = u.rows();
    let tv = time_var(d);

    let mut metric_wanted: Vec<Vec<u8>> = (0..d as u8).map(|i| vec![i]).collect();
    metric_wanted.push(vec![tv]);
    let wanted: Vec<&[u8]> = metric_wanted.iter().map(|m| m.as_slice()).collect();
    let xm = seed_chart_time(u, t, &wanted);
    let entries = metric.metric_jet(&xm)?;
    let g = channel_matrix(&entries, d, &[], rows);
    let dt_g = channel_matrix(&entries, d, &[tv], rows);
    let dg: Vec<Mat<Var>> = (0..d as u8).map(|i| channel_matrix(&entries, d, &[i], rows)).collect();

    let pairs = index_pairs(d);
    let firsts: Vec<[u8; 1]> = (0..d as u8).map(|i| [i]).collect();
    let wanted: Vec<&[u8]> = match settings.second_derivatives {
        SecondDerivativeMode::Exact => pairs.iter().map(|m| m.as_slice()).collect(),
        SecondDerivativeMode::GaussNewton => firsts.iter().map(|m| m.as_slice()).collect(),
    };
    let xe = seed_chart_time(u, t, &wanted);
    let e = immersion.immerse_jet(&xe)?;
    let big_d = e.cols();
    let jac_cols: Vec<Vec<Var>> = (0..d as u8).map(|i| channel_columns(&e, &[i], rows)).collect();
    let jac = Mat::from_fn(big_d, d, |a, i| jac_cols[i][a].clone());
    let mut hess: Vec<Vec<Var>> = vec![Vec::new(); d * d];
    for i in 0..d {
        for j in i..d {
            let col = match settings.second_derivatives {
                SecondDerivativeMode::Exact => channel_columns(&e, &[i as u8, j as u8], rows),
                SecondDerivativeMode::GaussNewton => {
                    (0..big_d).map(|a| &jac_cols[i][a] * &jac_cols[j][a]).collect()
                }
            };
            hess[j * d + i] = col.clone();
            hess[i * d + j] = col;
        }
    }

    let g_inv = g.inverse();
    let gamma = christoffel(&g_inv, &dg);
    let pi = second_fundamental_form(&hess, &jac, &g_inv);
    let lap = immersion_laplacian(&hess, &jac, &g_inv, &gamma);
    let mean_curvature = mean_curvature_from_laplacian(&lap);
    let hhat = traceless(&pi, &g, &mean_curvature);
    let flow = h_flow(&g, &g_inv, &hhat, settings.ambient_scalar, settings.diagonal);
    Ok(FlowTensorField {
        metric: g,
        dt_metric: dt_g,
        flow,
    })
}

/// Batch mean of `||∂_t g − c·H||_F²`.
pub fn loss_second_ff(
    metric: &dyn MetricModel,
    immersion: &dyn ImmersionModel,
    u: &Var,
    t: &Var,
    settings: &SecondFfSettings,
) -> Result<Var> {
    let field = flow_tensor_field(metric, immersion, u, t, settings)?;
    let residual = field.dt_metric.sub(&field.flow.scale_f64(settings.flow_constant));
    Ok(residual.frobenius_sq().mean())
}
