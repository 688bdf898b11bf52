//! Burgers-equation trajectories on an equispaced space-time mesh: initial
//! condition sampling, the periodic solver, dataset assembly and storage, and
//! the nine out-of-distribution perturbation recipes.

mod burgers;
mod initial;
mod io;
mod ood;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use burgers::solve_burgers;
pub use initial::{evaluate_initial_condition, sample_initial_condition, IcCoefficients};
pub use io::{data_path, load_dataset, meta_path, save_dataset};
pub use ood::{apply_ood_scenario, LocationMask, OodScenario, Replacement};

/// Default viscosity used when none is given.
pub const DEFAULT_VISCOSITY: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpaceTimeMesh {
    pub n_x: usize,
    pub n_t: usize,
    pub x_min: f64,
    pub x_max: f64,
    pub t_max: f64,
}

impl Default for SpaceTimeMesh {
    fn default() -> Self {
        Self {
            n_x: 201,
            n_t: 201,
            x_min: 0.0,
            x_max: 1.0,
            t_max: 1.0,
        }
    }
}

impl SpaceTimeMesh {
    pub fn new(n_x: usize, n_t: usize, x_min: f64, x_max: f64, t_max: f64) -> Result<Self> {
        let mesh = Self {
            n_x,
            n_t,
            x_min,
            x_max,
            t_max,
        };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_x < 3 || self.n_t < 2 {
            return Err(Error::InvalidArgument(format!(
                "mesh needs n_x >= 3 and n_t >= 2, got {} x {}",
                self.n_x, self.n_t
            )));
        }
        if !(self.x_max > self.x_min) || !(self.t_max > 0.0) || !self.x_max.is_finite() || !self.t_max.is_finite() {
            return Err(Error::InvalidArgument("mesh bounds must be finite and nonempty".into()));
        }
        Ok(())
    }

    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / (self.n_x - 1) as f64
    }

    pub fn dt(&self) -> f64 {
        self.t_max / (self.n_t - 1) as f64
    }

    pub fn x(&self, j: usize) -> f64 {
        self.x_min + j as f64 * self.dx()
    }

    pub fn t(&self, j: usize) -> f64 {
        j as f64 * self.dt()
    }

    pub fn xs(&self) -> Vec<f64> {
        (0..self.n_x).map(|j| self.x(j)).collect()
    }

    pub fn ts(&self) -> Vec<f64> {
        (0..self.n_t).map(|j| self.t(j)).collect()
    }
}

/// One solution, stored row-major as `values[t * n_x + x]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub n_t: usize,
    pub n_x: usize,
    pub values: Vec<f64>,
    pub ic_coefficients: IcCoefficients,
}

impl Trajectory {
    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.n_x..(t + 1) * self.n_x]
    }

    pub fn initial(&self) -> &[f64] {
        self.row(0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryDataset {
    pub mesh: SpaceTimeMesh,
    pub trajectories: Vec<Trajectory>,
    pub viscosity: f64,
    pub seed: u64,
}

impl TrajectoryDataset {
    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }
}

/// Sample `n_traj` initial conditions from `seed` and solve each one.
pub fn build_dataset(n_traj: usize, mesh: SpaceTimeMesh, viscosity: f64, seed: u64) -> Result<TrajectoryDataset> {
    if n_traj == 0 {
        return Err(Error::InvalidArgument("n_traj must be at least 1".into()));
    }
    mesh.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ics: Vec<_> = (0..n_traj).map(|_| sample_initial_condition(&mut rng, &mesh)).collect();
    let mut trajectories = Vec::with_capacity(n_traj);
    for (i, (ic, alpha)) in ics.into_iter().enumerate() {
        let mut traj = solve_burgers(&ic, &mesh, viscosity)?;
        traj.ic_coefficients = alpha;
        log::debug!("solved trajectory {}/{}", i + 1, n_traj);
        trajectories.push(traj);
    }
    Ok(TrajectoryDataset {
        mesh,
        trajectories,
        viscosity,
        seed,
    })
}
