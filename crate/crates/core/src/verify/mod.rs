//! Runtime checks of the geometric identities and loss contracts, reported as
//! a pass/fail table. Random inputs are drawn from a seeded stream so a run
//! is reproducible from `(suite, seed)`.

mod geometry;
mod losses;

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use losses::{directional_gradient, DirectionalGradient, GRADIENT_STEP};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    Geometry,
    Losses,
    All,
}

impl Suite {
    pub fn name(self) -> &'static str {
        match self {
            Suite::Geometry => "geometry",
            Suite::Losses => "losses",
            Suite::All => "all",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "geometry" => Ok(Suite::Geometry),
            "losses" => Ok(Suite::Losses),
            "all" => Ok(Suite::All),
            other => Err(Error::InvalidArgument(format!("unknown suite `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyOptions {
    pub seed: u64,
    /// Multiplies every tolerance. Anything other than `1` is a test hook.
    pub tolerance_scale: f64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            tolerance_scale: 1.0,
        }
    }
}

/// One row of the table: the worst error seen and the bound it must meet.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub suite: Suite,
    pub name: String,
    pub measured: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub suite: Suite,
    pub options: VerifyOptions,
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }

    pub fn get(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    /// Fixed-width text table, one line per check.
    pub fn table(&self) -> String {
        let width = self.checks.iter().map(|c| c.name.len()).max().unwrap_or(5).max(5);
        let mut out = format!("{:<8}  {:<width$}  {:>12}  {:>12}  result\n", "suite", "check", "measured", "tolerance");
        for c in &self.checks {
            out.push_str(&format!(
                "{:<8}  {:<width$}  {:>12.3e}  {:>12.3e}  {}\n",
                c.suite.name(),
                c.name,
                c.measured,
                c.tolerance,
                if c.passed { "PASS" } else { "FAIL" }
            ));
        }
        let failed = self.failures().count();
        out.push_str(&format!("{} checks, {} failed\n", self.checks.len(), failed));
        out
    }
}

/// Collects checks for one suite.
pub(crate) struct Recorder {
    suite: Suite,
    scale: f64,
    checks: Vec<Check>,
}

impl Recorder {
    fn new(suite: Suite, scale: f64) -> Self {
        Self {
            suite,
            scale,
            checks: Vec::new(),
        }
    }

    /// Record `measured <= tolerance`. A NaN measurement fails.
    pub(crate) fn check(&mut self, name: &str, measured: f64, tolerance: f64) {
        let tolerance = tolerance * self.scale;
        self.checks.push(Check {
            suite: self.suite,
            name: name.to_string(),
            measured,
            tolerance,
            passed: measured <= tolerance,
        });
    }

    /// Record a check whose evaluation failed outright.
    pub(crate) fn record(&mut self, name: &str, tolerance: f64, measured: Result<f64>) {
        match measured {
            Ok(m) => self.check(name, m, tolerance),
            Err(e) => {
                log::warn!("check {name} errored: {e}");
                self.check(name, f64::INFINITY, tolerance);
            }
        }
    }
}

/// Stream `stream` of the run's generator.
pub(crate) fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn run_suite(suite: Suite, options: &VerifyOptions) -> Result<VerifyReport> {
    if !(options.tolerance_scale >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "tolerance scale must be nonnegative, got {}",
            options.tolerance_scale
        )));
    }
    let mut checks = Vec::new();
    if matches!(suite, Suite::Geometry | Suite::All) {
        let mut rec = Recorder::new(Suite::Geometry, options.tolerance_scale);
        geometry::run(&mut rec, options.seed);
        checks.extend(rec.checks);
    }
    if matches!(suite, Suite::Losses | Suite::All) {
        let mut rec = Recorder::new(Suite::Losses, options.tolerance_scale);
        losses::run(&mut rec, options.seed);
        checks.extend(rec.checks);
    }
    Ok(VerifyReport {
        suite,
        options: *options,
        checks,
    })
}
