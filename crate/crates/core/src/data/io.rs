//! `<stem>.f64bin` holds little-endian f64 values in (trajectory, time, space)
//! order; `<stem>.meta.json` describes the mesh and provenance.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{IcCoefficients, SpaceTimeMesh, Trajectory, TrajectoryDataset};
use crate::{Error, Result};

#[derive(Serialize, Deserialize)]
struct Meta {
    n_x: usize,
    n_t: usize,
    x_min: f64,
    x_max: f64,
    t_max: f64,
    viscosity: f64,
    seed: u64,
    n_traj: usize,
    ic_coefficients: Vec<IcCoefficients>,
}

fn with_suffix(stem: &Path, suffix: &str) -> PathBuf {
    let mut s: OsString = stem.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn data_path(stem: &Path) -> PathBuf {
    with_suffix(stem, ".f64bin")
}

pub fn meta_path(stem: &Path) -> PathBuf {
    with_suffix(stem, ".meta.json")
}

pub fn save_dataset(dataset: &TrajectoryDataset, stem: &Path) -> Result<()> {
    let m = &dataset.mesh;
    let meta = Meta {
        n_x: m.n_x,
        n_t: m.n_t,
        x_min: m.x_min,
        x_max: m.x_max,
        t_max: m.t_max,
        viscosity: dataset.viscosity,
        seed: dataset.seed,
        n_traj: dataset.len(),
        ic_coefficients: dataset.trajectories.iter().map(|t| t.ic_coefficients).collect(),
    };
    if let Some(parent) = stem.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let mut bytes = Vec::with_capacity(dataset.len() * m.n_t * m.n_x * 8);
    for traj in &dataset.trajectories {
        for v in &traj.values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let bin = data_path(stem);
    fs::write(&bin, bytes).map_err(|e| Error::io(&bin, e))?;
    let meta_file = meta_path(stem);
    let text = serde_json::to_string_pretty(&meta).map_err(|e| Error::json(&meta_file, e))?;
    fs::write(&meta_file, text).map_err(|e| Error::io(&meta_file, e))?;
    Ok(())
}

pub fn load_dataset(stem: &Path) -> Result<TrajectoryDataset> {
    let meta_file = meta_path(stem);
    let text = fs::read_to_string(&meta_file).map_err(|e| Error::io(&meta_file, e))?;
    let meta: Meta = serde_json::from_str(&text)
        .map_err(|e| Error::Shape(format!("unreadable header {}: {e}", meta_file.display())))?;
    let mesh = SpaceTimeMesh {
        n_x: meta.n_x,
        n_t: meta.n_t,
        x_min: meta.x_min,
        x_max: meta.x_max,
        t_max: meta.t_max,
    };
    mesh.validate()
        .map_err(|e| Error::Shape(format!("header describes an invalid mesh: {e}")))?;
    if meta.ic_coefficients.len() != meta.n_traj {
        return Err(Error::Shape(format!(
            "header lists {} coefficient triples for {} trajectories",
            meta.ic_coefficients.len(),
            meta.n_traj
        )));
    }
    let bin = data_path(stem);
    let bytes = fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
    let per_traj = meta.n_t * meta.n_x;
    let expected = meta.n_traj * per_traj * 8;
    if bytes.len() != expected {
        return Err(Error::Shape(format!(
            "{} holds {} bytes but the header implies {expected}",
            bin.display(),
            bytes.len()
        )));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let trajectories = values
        .chunks_exact(per_traj)
        .zip(meta.ic_coefficients)
        .map(|(v, alpha)| Trajectory {
            n_t: meta.n_t,
            n_x: meta.n_x,
            values: v.to_vec(),
            ic_coefficients: alpha,
        })
        .collect();
    Ok(TrajectoryDataset {
        mesh,
        trajectories,
        viscosity: meta.viscosity,
        seed: meta.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::build_dataset;

    fn small() -> TrajectoryDataset {
        let mesh = SpaceTimeMesh::new(33, 5, 0.0, 1.0, 0.05).unwrap();
        build_dataset(2, mesh, 0.02, 11).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("burgers.v1");
        let ds = small();
        save_dataset(&ds, &stem).unwrap();
        assert!(dir.path().join("burgers.v1.f64bin").exists());
        assert!(dir.path().join("burgers.v1.meta.json").exists());
        assert_eq!(load_dataset(&stem).unwrap(), ds);
    }

    #[test]
    fn corrupted_header_is_a_shape_error() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("d");
        save_dataset(&small(), &stem).unwrap();
        let text = fs::read_to_string(meta_path(&stem)).unwrap();
        fs::write(meta_path(&stem), text.replace("\"n_x\": 33", "\"n_x\": 34")).unwrap();
        assert!(matches!(load_dataset(&stem), Err(Error::Shape(_))));
        fs::write(meta_path(&stem), "{ not json").unwrap();
        assert!(matches!(load_dataset(&stem), Err(Error::Shape(_))));
    }

    #[test]
    fn missing_files_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_dataset(&dir.path().join("nope")), Err(Error::Missing(_))));
    }

    #[test]
    fn metadata_records_the_seed() {
        let dir = tempfile::tempdir().unwrap();
        let mesh = SpaceTimeMesh::new(33, 5, 0.0, 1.0, 0.05).unwrap();
        let a = build_dataset(1, mesh, 0.02, 1).unwrap();
        let b = build_dataset(1, mesh, 0.02, 2).unwrap();
        save_dataset(&b, &dir.path().join("b")).unwrap();
        let loaded = load_dataset(&dir.path().join("b")).unwrap();
        assert_eq!(loaded.seed, 2);
        assert_ne!(loaded.trajectories[0].values, a.trajectories[0].values);
    }
}
