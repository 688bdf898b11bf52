use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::SpaceTimeMesh;
use crate::{Error, Result};

/// Spatial nodes that receive noise.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum LocationMask {
    All,
    /// The first `n` nodes (a contiguous block starting at `x_min`).
    First(usize),
}

impl LocationMask {
    pub fn indices(&self, n_x: usize) -> std::ops::Range<usize> {
        match *self {
            LocationMask::All => 0..n_x,
            LocationMask::First(n) => 0..n.min(n_x),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Replacement {
    /// `y_0 + 2π j Δx / N` with `y_0 = ic[0]` and `N = n_x`.
    Linear,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OodScenario {
    pub id: usize,
    pub noise_sigma: f64,
    pub location_mask: LocationMask,
    pub scale: f64,
    pub replacement: Option<Replacement>,
}

impl OodScenario {
    /// The nine robustness scenarios.
    pub fn table(id: usize) -> Result<Self> {
        use LocationMask::{All, First};
        let (noise_sigma, location_mask, scale, replacement) = match id {
            1 => (1.0, All, 1.0, None),
            2 => (1.5, All, 1.0, None),
            3 => (2.5, All, 1.0, None),
            4 => (2.0, First(31), 1.0, None),
            5 => (3.0, First(11), 1.0, None),
            6 => (0.25, All, 1.0, None),
            7 => (1.5, First(101), 1.4, None),
            8 => (0.0, All, 1.0, Some(Replacement::Linear)),
            9 => (3.0, First(11), 1.0, None),
            other => return Err(Error::UnknownScenario(other)),
        };
        Ok(Self {
            id,
            noise_sigma,
            location_mask,
            scale,
            replacement,
        })
    }

    pub fn all() -> Vec<Self> {
        (1..=9).map(|id| Self::table(id).unwrap()).collect()
    }

    /// Number of perturbed nodes on a mesh with `n_x` nodes.
    pub fn mask_count(&self, n_x: usize) -> usize {
        self.location_mask.indices(n_x).len()
    }
}

pub fn apply_ood_scenario<R: Rng + ?Sized>(
    ic: &[f64],
    scenario: &OodScenario,
    mesh: &SpaceTimeMesh,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if !(1..=9).contains(&scenario.id) {
        return Err(Error::UnknownScenario(scenario.id));
    }
    if ic.len() != mesh.n_x {
        return Err(Error::Shape(format!("initial condition has {} values, mesh has {}", ic.len(), mesh.n_x)));
    }
    if let Some(Replacement::Linear) = scenario.replacement {
        let y0 = ic[0];
        let n = mesh.n_x as f64;
        return Ok((0..mesh.n_x).map(|j| y0 + 2.0 * PI * j as f64 * mesh.dx() / n).collect());
    }
    let mut out: Vec<f64> = ic.iter().map(|v| scenario.scale * v).collect();
    if scenario.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, scenario.noise_sigma)
            .map_err(|e| Error::InvalidArgument(format!("noise sigma: {e}")))?;
        for j in scenario.location_mask.indices(mesh.n_x) {
            out[j] += normal.sample(rng);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mask_counts_follow_the_table() {
        let counts: Vec<usize> = OodScenario::all().iter().map(|s| s.mask_count(201)).collect();
        assert_eq!(counts, vec![201, 201, 201, 31, 11, 201, 101, 201, 11]);
    }

    #[test]
    fn identity_scenario_leaves_input_unchanged() {
        let mesh = SpaceTimeMesh::default();
        let ic: Vec<f64> = (0..201).map(|j| (j as f64 * 0.1).sin()).collect();
        let s = OodScenario {
            id: 1,
            noise_sigma: 0.0,
            location_mask: LocationMask::All,
            scale: 1.0,
            replacement: None,
        };
        let out = apply_ood_scenario(&ic, &s, &mesh, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(out, ic);
    }

    #[test]
    fn scenario_four_perturbs_exactly_31_nodes() {
        let mesh = SpaceTimeMesh::default();
        let ic = vec![0.5; 201];
        let s = OodScenario::table(4).unwrap();
        assert_eq!(s.noise_sigma, 2.0);
        let out = apply_ood_scenario(&ic, &s, &mesh, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let changed = out.iter().zip(&ic).filter(|(a, b)| a != b).count();
        assert_eq!(changed, 31);
        assert!(out[31..].iter().all(|&v| v == 0.5));
    }

    #[test]
    fn scenario_eight_is_the_linear_replacement() {
        let mesh = SpaceTimeMesh::default();
        let mut ic = vec![-0.2; 201];
        ic[0] = 0.3;
        let out = apply_ood_scenario(&ic, &OodScenario::table(8).unwrap(), &mesh, &mut ChaCha8Rng::seed_from_u64(2))
            .unwrap();
        for (j, v) in out.iter().enumerate() {
            let want = 0.3 + 2.0 * PI * j as f64 * 0.005 / 201.0;
            assert!((v - want).abs() < 1e-15);
        }
    }

    #[test]
    fn unknown_id_is_rejected() {
        assert!(matches!(OodScenario::table(10), Err(Error::UnknownScenario(10))));
        let mut s = OodScenario::table(1).unwrap();
        s.id = 0;
        let mesh = SpaceTimeMesh::default();
        let r = apply_ood_scenario(&vec![0.0; 201], &s, &mesh, &mut ChaCha8Rng::seed_from_u64(2));
        assert!(matches!(r, Err(Error::UnknownScenario(0))));
    }

    #[test]
    fn perturbations_are_seed_deterministic() {
        let mesh = SpaceTimeMesh::default();
        let ic = vec![0.1; 201];
        let s = OodScenario::table(7).unwrap();
        let a = apply_ood_scenario(&ic, &s, &mesh, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = apply_ood_scenario(&ic, &s, &mesh, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
        assert!((a[150] - 0.14).abs() < 1e-15);
    }
}
