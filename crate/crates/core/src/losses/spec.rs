use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::geometry::{DiagonalConvention, SecondDerivativeMode};

use super::harmonic::HarmonicSource;
use crate::{Error, Result};

/// Which geometric-flow regularizer a model is trained with.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FlowKind {
    /// Extended encoder `𝒟∘ℰ∘u` with no geometric constraint.
    Baseline,
    /// Closed-form Ricci-flow sphere latent (hard constraint, no flow term).
    Sphere,
    GaussPath,
    SecondFf,
    Perelman,
    Harmonic,
    /// `∂_t g = −Λ`, the degenerate comparison flow.
    LambdaBaseline,
}

impl FlowKind {
    pub const ALL: [FlowKind; 7] = [
        FlowKind::Baseline,
        FlowKind::Sphere,
        FlowKind::GaussPath,
        FlowKind::SecondFf,
        FlowKind::Perelman,
        FlowKind::Harmonic,
        FlowKind::LambdaBaseline,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FlowKind::Baseline => "baseline",
            FlowKind::Sphere => "sphere",
            FlowKind::GaussPath => "gauss-path",
            FlowKind::SecondFf => "second-ff",
            FlowKind::Perelman => "perelman",
            FlowKind::Harmonic => "harmonic",
            FlowKind::LambdaBaseline => "lambda-baseline",
        }
    }

    pub fn default_intrinsic_dim(self) -> usize {
        match self {
            FlowKind::Sphere | FlowKind::GaussPath => 2,
            _ => 3,
        }
    }

    /// Kinds with a learned metric and a metric-consistency term.
    pub fn has_metric(self) -> bool {
        !matches!(self, FlowKind::Baseline | FlowKind::Sphere)
    }

    /// Kinds that contribute a flow term to the objective.
    pub fn has_flow(self) -> bool {
        self.has_metric()
    }

    /// The curvature-based flows (everything with a flow term except `−Λ`).
    pub fn is_curvature_flow(self) -> bool {
        matches!(
            self,
            FlowKind::GaussPath | FlowKind::SecondFf | FlowKind::Perelman | FlowKind::Harmonic
        )
    }

    /// Check an intrinsic dimension against the kind's requirements.
    pub fn check_dim(self, d: usize) -> Result<()> {
        let ok = match self {
            FlowKind::Sphere | FlowKind::GaussPath => d == 2,
            FlowKind::SecondFf | FlowKind::Perelman => d >= 3,
            _ => d >= 1,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Dimension {
                expected: match self {
                    FlowKind::Sphere | FlowKind::GaussPath => "2",
                    FlowKind::SecondFf | FlowKind::Perelman => ">= 3",
                    _ => ">= 1",
                },
                got: d,
            })
        }
    }
}

impl fmt::Display for FlowKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FlowKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FlowKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown flow kind `{s}`")))
    }
}

/// Circle sampling for the path-integration loss.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CirculationSettings {
    pub segments: usize,
    pub r_min: f64,
    pub r_max: f64,
    pub circles: usize,
}

impl Default for CirculationSettings {
    fn default() -> Self {
        Self {
            segments: 32,
            r_min: 0.05,
            r_max: 0.2,
            circles: 64,
        }
    }
}

/// Which algebraic form of the Perelman integrand to differentiate.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PerelmanIntegrand {
    /// `(R(g₀)ψ − cΔψ)ψ √det g₀`; equal to the full form in every dimension.
    #[default]
    Simplified,
    /// `R(ψ^{4/(d−2)}g₀) √det(ψ^{4/(d−2)}g₀)`.
    Full,
}

/// How the Perelman time derivative is obtained.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PerelmanRoute {
    /// Forward-mode differentiation of the integrand in `t`.
    #[default]
    Autodiff,
    /// The explicit product-rule expansion with Jacobi's formula.
    ProductRule,
}

/// Numerical constants of the flow losses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlowConstants {
    /// `c` in `∂_t g = c·H` (second-ff).
    pub flow_constant: f64,
    /// Positive target of the Perelman / harmonic time derivative.
    pub target_derivative: f64,
    /// Value clip of the conformal factor.
    pub psi_min: f64,
    /// Radius that `ψ(u, 0)` is pulled to in the harmonic loss.
    pub anchor_radius: f64,
    /// Ambient scalar curvature `R̄` fed to the flow tensor.
    pub ambient_scalar: f64,
    /// Denominator guard of the path-integration ratio term.
    pub eps_den: f64,
    pub circulation: CirculationSettings,
    pub diagonal: DiagonalConvention,
    pub second_derivatives: SecondDerivativeMode,
    pub perelman_integrand: PerelmanIntegrand,
    pub perelman_route: PerelmanRoute,
    pub harmonic_source: HarmonicSource,
}

impl Default for FlowConstants {
    fn default() -> Self {
        Self {
            flow_constant: 1.0,
            target_derivative: 0.5,
            psi_min: 0.1,
            anchor_radius: 5.0,
            ambient_scalar: 0.0,
            eps_den: 1e-6,
            circulation: CirculationSettings::default(),
            diagonal: DiagonalConvention::NonNegative,
            second_derivatives: SecondDerivativeMode::Exact,
            perelman_integrand: PerelmanIntegrand::Simplified,
            perelman_route: PerelmanRoute::Autodiff,
            harmonic_source: HarmonicSource::Euclidean,
        }
    }
}

/// Weights of the composite objective.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub recon: f64,
    pub kl_beta: f64,
    pub metric_consistency: f64,
    pub flow: f64,
}

impl LossWeights {
    pub fn for_mode(variational: bool) -> Self {
        Self {
            recon: if variational { 100.0 } else { 10.0 },
            kl_beta: 0.001,
            metric_consistency: 1.0,
            flow: 1.0,
        }
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        Self::for_mode(false)
    }
}

/// The full description of a training objective.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowLossSpec {
    pub kind: FlowKind,
    #[serde(default)]
    pub constants: FlowConstants,
    #[serde(default)]
    pub weights: LossWeights,
}

impl FlowLossSpec {
    pub fn new(kind: FlowKind) -> Self {
        Self {
            kind,
            constants: FlowConstants::default(),
            weights: LossWeights::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let c = &self.constants;
        if matches!(self.kind, FlowKind::Perelman | FlowKind::Harmonic) && !(c.target_derivative > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "target_derivative must be positive for {}, got {}",
                self.kind, c.target_derivative
            )));
        }
        if !(c.psi_min > 0.0) || !(c.eps_den > 0.0) {
            return Err(Error::InvalidArgument("psi_min and eps_den must be positive".into()));
        }
        let circ = &c.circulation;
        if circ.segments < 8 || !(0.0 < circ.r_min && circ.r_min <= circ.r_max) || circ.circles == 0 {
            return Err(Error::InvalidArgument(format!("bad circulation settings {circ:?}")));
        }
        let w = &self.weights;
        if [w.recon, w.kl_beta, w.metric_consistency, w.flow].iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(Error::InvalidArgument(format!("loss weights must be finite and nonnegative: {w:?}")));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kind_names_round_trip() {
        for k in FlowKind::ALL {
            assert_eq!(k.name().parse::<FlowKind>().unwrap(), k);
            let json = serde_json::to_string(&k).unwrap();
            assert_eq!(json, format!("\"{}\"", k.name()));
        }
        assert!("ricci".parse::<FlowKind>().is_err());
    }

    #[test]
    fn defaults() {
        let s = FlowLossSpec::new(FlowKind::Perelman);
        assert_eq!(s.weights.kl_beta, 0.001);
        assert_eq!(s.constants.target_derivative, 0.5);
        assert_eq!(LossWeights::for_mode(true).recon, 100.0);
        s.validate().unwrap();
        let mut bad = s.clone();
        bad.constants.target_derivative = 0.0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn dimension_rules() {
        assert!(FlowKind::GaussPath.check_dim(3).is_err());
        assert!(FlowKind::SecondFf.check_dim(2).is_err());
        assert!(FlowKind::Perelman.check_dim(3).is_ok());
        assert!(FlowKind::Sphere.check_dim(2).is_ok());
    }
}
