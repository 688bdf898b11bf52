//! Training objectives: reconstruction, KL, metric consistency and the
//! geometric-flow regularizers.

mod basic;
mod composite;
pub mod fields;
mod gauss_path;
mod harmonic;
mod lambda;
mod perelman;
mod second_ff;
mod spec;

pub use basic::{
    loss_kl, loss_metric_consistency, loss_reconstruction, metric_consistency, metric_diag_mean,
    monte_carlo_integral_f64, monte_carlo_manifold_integral,
};
pub use composite::{composite_loss, flow_term, BatchSample, FlowTerm, LossBreakdown, Objective};
pub use gauss_path::{
    circulation_estimates, clamp_centers, loss_gauss_path, ratio_term, ratio_term_f64, taylor_surrogate, GaussPathTerms,
};
pub use harmonic::{energy_rate, loss_harmonic, HarmonicSettings, HarmonicSource, HarmonicTerms};
pub use lambda::loss_lambda_baseline;
pub use perelman::{loss_perelman, perelman_rate, PerelmanSettings, PerelmanTerms};
pub use second_ff::{flow_tensor_field, loss_second_ff, FlowTensorField, SecondFfSettings};
pub use spec::{CirculationSettings, FlowConstants, FlowKind, FlowLossSpec, LossWeights, PerelmanIntegrand, PerelmanRoute};
