//! Checkpoints: one little-endian `f64` blob per network plus an optimizer
//! blob, described by `manifest.json`.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::bundle::{ModelBundle, ModelConfig};
use super::mlp::{Activation, Adam, Mlp, ParamStore};
use crate::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
const OPTIMIZER_FILE: &str = "optimizer.bin";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkManifest {
    pub name: String,
    pub widths: Vec<usize>,
    pub activation: Activation,
    pub seed: u64,
    pub step: u64,
    pub file: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerManifest {
    pub file: String,
    pub step: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub step: u64,
    pub model: ModelConfig,
    pub networks: Vec<NetworkManifest>,
    pub optimizer: Option<OptimizerManifest>,
    /// Free-form payload (the training configuration).
    #[serde(default)]
    pub extra: serde_json::Value,
}

/// A restored checkpoint.
pub struct Checkpoint {
    pub bundle: ModelBundle,
    pub step: u64,
    pub optimizer: Option<Adam>,
    pub extra: serde_json::Value,
}

fn write_blob(path: &Path, tensors: &[&Array2<f64>]) -> Result<()> {
    let mut bytes = Vec::with_capacity(tensors.iter().map(|t| t.len() * 8).sum());
    for t in tensors {
        for v in t.iter() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Fill `targets` in order from a blob, checking the total size.
fn read_blob(path: &Path, targets: &mut [&mut Array2<f64>]) -> Result<()> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let want: usize = targets.iter().map(|t| t.len() * 8).sum();
    if bytes.len() != want {
        return Err(Error::Shape(format!(
            "{} holds {} bytes, expected {want}",
            path.display(),
            bytes.len()
        )));
    }
    let mut chunks = bytes.chunks_exact(8);
    for t in targets.iter_mut() {
        for v in t.iter_mut() {
            *v = f64::from_le_bytes(chunks.next().unwrap().try_into().unwrap());
        }
    }
    Ok(())
}

fn network_tensors<'a>(net: &Mlp, store: &'a ParamStore) -> Vec<&'a Array2<f64>> {
    net.slots().into_iter().map(|s| store.get(s)).collect()
}

pub fn save_checkpoint(
    dir: &Path,
    bundle: &ModelBundle,
    step: u64,
    optimizer: Option<&Adam>,
    extra: &serde_json::Value,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut networks = Vec::new();
    for net in bundle.networks() {
        let file = format!("{}.bin", net.name);
        write_blob(&dir.join(&file), &network_tensors(net, &bundle.store))?;
        networks.push(NetworkManifest {
            name: net.name.clone(),
            widths: net.spec.widths.clone(),
            activation: net.spec.activation,
            seed: net.spec.seed,
            step,
            file,
        });
    }
    let optimizer = match optimizer {
        Some(adam) => {
            let tensors: Vec<&Array2<f64>> = adam.first.iter().chain(&adam.second).collect();
            write_blob(&dir.join(OPTIMIZER_FILE), &tensors)?;
            Some(OptimizerManifest {
                file: OPTIMIZER_FILE.into(),
                step: adam.step,
                learning_rate: adam.learning_rate,
                beta1: adam.beta1,
                beta2: adam.beta2,
                eps: adam.eps,
            })
        }
        None => None,
    };
    let manifest = CheckpointManifest {
        step,
        model: bundle.config.clone(),
        networks,
        optimizer,
        extra: extra.clone(),
    };
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::json(&path, e))?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

pub fn read_manifest(dir: &Path) -> Result<CheckpointManifest> {
    let path: PathBuf = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(&path, e))
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let manifest = read_manifest(dir)?;
    let mut bundle = ModelBundle::new(manifest.model.clone())?;
    for entry in &manifest.networks {
        let net = bundle
            .networks()
            .into_iter()
            .find(|n| n.name == entry.name)
            .cloned()
            .ok_or_else(|| Error::Shape(format!("checkpoint network `{}` not in model", entry.name)))?;
        if net.spec.widths != entry.widths {
            return Err(Error::Shape(format!(
                "network `{}` widths {:?} differ from checkpoint {:?}",
                entry.name, net.spec.widths, entry.widths
            )));
        }
        let slots = net.slots();
        let mut owned: Vec<Array2<f64>> = slots.iter().map(|&s| bundle.store.get(s).clone()).collect();
        let mut refs: Vec<&mut Array2<f64>> = owned.iter_mut().collect();
        read_blob(&dir.join(&entry.file), &mut refs)?;
        for (slot, value) in slots.into_iter().zip(owned) {
            *bundle.store.get_mut(slot) = value;
        }
    }
    if manifest.networks.len() != bundle.networks().len() {
        return Err(Error::Shape("checkpoint is missing networks".into()));
    }
    let optimizer = match &manifest.optimizer {
        Some(m) => {
            let mut adam = Adam::new(&bundle.store, m.learning_rate);
            adam.step = m.step;
            adam.beta1 = m.beta1;
            adam.beta2 = m.beta2;
            adam.eps = m.eps;
            let mut refs: Vec<&mut Array2<f64>> = adam.first.iter_mut().chain(adam.second.iter_mut()).collect();
            read_blob(&dir.join(&m.file), &mut refs)?;
            Some(adam)
        }
        None => None,
    };
    Ok(Checkpoint {
        bundle,
        step: manifest.step,
        optimizer,
        extra: manifest.extra,
    })
}
