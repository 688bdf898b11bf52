//! The training loop: seeded minibatches of `(φ̃₀, t, φ̃_t)`, the composite
//! objective, Adam steps, JSON-lines logging and resumable checkpoints.

use std::collections::VecDeque;
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::ad::Tape;
use crate::data::TrajectoryDataset;
use crate::losses::{composite_loss, BatchSample, FlowKind, FlowLossSpec, LossBreakdown, LossWeights};
use crate::nn::{load_checkpoint, save_checkpoint, Adam, ModelBundle, ModelConfig};
use crate::{Error, Result};

pub const LOG_FILE: &str = "train.log.jsonl";
pub const CONFIG_FILE: &str = "train.config.json";
const HISTORY_LEN: usize = 100;
/// Steps averaged by the stopping rule.
pub const STOP_WINDOW: usize = 50;

fn default_batch() -> usize {
    256
}
fn default_times() -> usize {
    1
}
fn default_flow_batch() -> usize {
    64
}
fn default_lr() -> f64 {
    2e-4
}
fn default_log_every() -> u64 {
    100
}
fn default_recon_target() -> f64 {
    2e-4
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub spec: FlowLossSpec,
    /// Dataset stem (without the `.f64bin` / `.meta.json` suffix).
    pub dataset: PathBuf,
    /// Initial conditions per step.
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    /// Times drawn per initial condition.
    #[serde(default = "default_times")]
    pub times_per_ic: usize,
    /// Rows of the batch that enter the geometric terms; for gauss-path this
    /// is the number of circles.
    #[serde(default = "default_flow_batch")]
    pub flow_batch: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    pub steps: u64,
    pub seed: u64,
    #[serde(default)]
    pub variational: bool,
    #[serde(default = "default_log_every")]
    pub log_every: u64,
    /// `0` writes only the final checkpoint.
    #[serde(default)]
    pub checkpoint_every: u64,
    /// Stop once the reconstruction MSE, averaged over the last
    /// [`STOP_WINDOW`] steps, falls to this value.
    #[serde(default = "default_recon_target")]
    pub recon_target: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intrinsic_dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wide_hidden: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub narrow_hidden: Option<Vec<usize>>,
    /// Use only the first `n` trajectories of the dataset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_trajectories: Option<usize>,
}

impl TrainConfig {
    /// Defaults for `kind`, with loss weights matched to the mode.
    pub fn new(kind: FlowKind, dataset: impl Into<PathBuf>, variational: bool, steps: u64, seed: u64) -> Self {
        let mut spec = FlowLossSpec::new(kind);
        spec.weights = LossWeights::for_mode(variational);
        Self {
            spec,
            dataset: dataset.into(),
            batch_size: default_batch(),
            times_per_ic: default_times(),
            flow_batch: default_flow_batch(),
            learning_rate: default_lr(),
            steps,
            seed,
            variational,
            log_every: default_log_every(),
            checkpoint_every: 0,
            recon_target: default_recon_target(),
            intrinsic_dim: None,
            wide_hidden: None,
            narrow_hidden: None,
            max_trajectories: None,
        }
    }

    pub fn kind(&self) -> FlowKind {
        self.spec.kind
    }

    pub fn model_config(&self, n_x: usize) -> ModelConfig {
        let mut cfg = ModelConfig::for_kind(self.kind(), n_x, self.seed);
        if let Some(d) = self.intrinsic_dim {
            cfg.set_intrinsic_dim(d);
        }
        if let Some(w) = &self.wide_hidden {
            cfg.wide_hidden = w.clone();
        }
        if let Some(w) = &self.narrow_hidden {
            cfg.narrow_hidden = w.clone();
        }
        cfg.variational = self.variational;
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        self.kind().check_dim(self.intrinsic_dim.unwrap_or(self.kind().default_intrinsic_dim()))?;
        if self.batch_size == 0 || self.times_per_ic == 0 {
            return Err(Error::InvalidArgument("batch sizes must be positive".into()));
        }
        if self.kind().has_flow() && self.flow_batch == 0 {
            return Err(Error::InvalidArgument("flow_batch must be positive".into()));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidArgument(format!("bad learning rate {}", self.learning_rate)));
        }
        if self.log_every == 0 {
            return Err(Error::InvalidArgument("log_every must be positive".into()));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json(path, e))?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: u64,
    #[serde(flatten)]
    pub loss: LossBreakdown,
}

pub struct TrainState {
    /// Number of completed optimizer steps.
    pub step: u64,
    pub bundle: ModelBundle,
    pub optimizer: Adam,
    /// The most recent breakdowns, oldest first.
    pub history: VecDeque<LossBreakdown>,
}

impl TrainState {
    pub fn new(config: &TrainConfig, n_x: usize) -> Result<Self> {
        let bundle = ModelBundle::new(config.model_config(n_x))?;
        let optimizer = Adam::new(&bundle.store, config.learning_rate);
        Ok(Self {
            step: 0,
            bundle,
            optimizer,
            history: VecDeque::with_capacity(HISTORY_LEN),
        })
    }

    /// Restore from a checkpoint directory written by [`train`].
    pub fn from_checkpoint(dir: &Path) -> Result<Self> {
        let ckpt = load_checkpoint(dir)?;
        let optimizer = ckpt
            .optimizer
            .ok_or_else(|| Error::InvalidArgument(format!("checkpoint {} has no optimizer state", dir.display())))?;
        Ok(Self {
            step: ckpt.step,
            bundle: ckpt.bundle,
            optimizer,
            history: VecDeque::with_capacity(HISTORY_LEN),
        })
    }

    /// Mean reconstruction MSE over the last `window` steps.
    pub fn recent_recon(&self, window: usize) -> Option<f64> {
        let n = self.history.len().min(window);
        (n > 0).then(|| self.history.iter().rev().take(n).map(|l| l.recon_mse).sum::<f64>() / n as f64)
    }

    fn remember(&mut self, loss: &LossBreakdown) {
        if self.history.len() == HISTORY_LEN {
            self.history.pop_front();
        }
        self.history.push_back(loss.clone());
    }
}

/// Random stream for `step`: batches depend only on `(seed, step)`, which is
/// what makes a resumed run identical to an uninterrupted one.
pub fn step_rng(seed: u64, step: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step);
    rng
}

/// Draw `batch_size` trajectories and `times_per_ic` mesh times for each.
pub fn sample_batch<R: Rng + ?Sized>(
    dataset: &TrajectoryDataset,
    config: &TrainConfig,
    code_dim: Option<usize>,
    rng: &mut R,
) -> Result<BatchSample> {
    let available = config.max_trajectories.map_or(dataset.len(), |m| m.min(dataset.len()));
    if available == 0 {
        return Err(Error::InvalidArgument("cannot sample from an empty dataset".into()));
    }
    let mesh = &dataset.mesh;
    let n = config.batch_size * config.times_per_ic;
    let mut ic = Array2::zeros((n, mesh.n_x));
    let mut target = Array2::zeros((n, mesh.n_x));
    let mut times = Array2::zeros((n, 1));
    let mut row = 0;
    for _ in 0..config.batch_size {
        let traj = &dataset.trajectories[rng.gen_range(0..available)];
        for _ in 0..config.times_per_ic {
            let j = rng.gen_range(0..mesh.n_t);
            ic.row_mut(row).assign(&ndarray::aview1(traj.initial()));
            target.row_mut(row).assign(&ndarray::aview1(traj.row(j)));
            times[[row, 0]] = mesh.t(j);
            row += 1;
        }
    }
    let circ = &config.spec.constants.circulation;
    let circle_radii = if config.kind() == FlowKind::GaussPath {
        (0..config.flow_batch.min(n)).map(|_| rng.gen_range(circ.r_min..=circ.r_max)).collect()
    } else {
        Vec::new()
    };
    let noise = code_dim.map(|k| Array2::from_shape_fn((n, k), |_| rng.sample(StandardNormal)));
    Ok(BatchSample {
        ic,
        times,
        target,
        noise,
        circle_radii,
        horizon: mesh.t_max,
    })
}

fn slot_owner(bundle: &ModelBundle, slot: usize) -> String {
    bundle
        .networks()
        .into_iter()
        .find(|n| n.slots().contains(&slot))
        .map_or_else(|| format!("slot {slot}"), |n| n.name.clone())
}

/// One Adam step on the composite objective. Non-finite terms or gradients
/// abort before any parameter is touched.
pub fn train_step(state: &mut TrainState, config: &TrainConfig, batch: &BatchSample) -> Result<LossBreakdown> {
    let step = state.step as usize;
    let tape = Tape::new();
    let params = state.bundle.store.bind(&tape);
    let objective = composite_loss(&state.bundle, &params, &config.spec, batch, config.flow_batch)?;
    let loss = objective.breakdown;
    let mut terms = loss.terms();
    terms.push(("total", loss.total));
    if let Some((term, _)) = terms.iter().find(|(_, v)| !v.is_finite()) {
        log::error!("non-finite {term} at step {step}: {}", serde_json::to_string(&loss).unwrap_or_default());
        return Err(Error::NonFinite {
            term: (*term).to_string(),
            step,
        });
    }
    if let Some(fraction) = loss.mask_fraction.filter(|&m| m > 0.5) {
        return Err(Error::DegenerateFlow { fraction });
    }
    if let Some(c) = loss.clipped_fraction.filter(|&c| c > 0.0) {
        log::debug!("step {step}: conformal factor clipped on {:.1}% of samples", 100.0 * c);
    }
    let grads = objective.total.backward();
    let mut per_slot = vec![None; state.bundle.store.len()];
    for (slot, g) in grads.params() {
        if !g.iter().all(|v| v.is_finite()) {
            let owner = slot_owner(&state.bundle, slot);
            log::error!("non-finite gradient in {owner} at step {step}");
            return Err(Error::NonFinite {
                term: format!("gradient of {owner}"),
                step,
            });
        }
        per_slot[slot] = Some(g.clone());
    }
    drop(params);
    state.optimizer.update(&mut state.bundle.store, &per_slot);
    state.step += 1;
    state.remember(&loss);
    Ok(loss)
}

pub struct TrainOutcome {
    pub state: TrainState,
    pub log: Vec<LogRecord>,
    /// Whether the run stopped on the reconstruction target.
    pub converged: bool,
}

/// Where [`train`] writes its artifacts.
#[derive(Clone, Debug)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn log(&self) -> PathBuf {
        self.root.join(LOG_FILE)
    }

    pub fn checkpoint(&self, step: u64) -> PathBuf {
        self.root.join(format!("checkpoint-{step:06}"))
    }

    pub fn final_checkpoint(&self) -> PathBuf {
        self.root.join("final")
    }
}

/// Run from `state` until `config.steps` or the reconstruction target.
pub fn train_from(
    state: TrainState,
    config: &TrainConfig,
    dataset: &TrajectoryDataset,
    out: Option<&RunDir>,
) -> Result<TrainOutcome> {
    train_observed(state, config, dataset, out, &mut |_| {})
}

/// [`train_from`], calling `on_log` with every record as it is logged.
pub fn train_observed(
    mut state: TrainState,
    config: &TrainConfig,
    dataset: &TrajectoryDataset,
    out: Option<&RunDir>,
    on_log: &mut dyn FnMut(&LogRecord),
) -> Result<TrainOutcome> {
    config.validate()?;
    if dataset.mesh.n_x != state.bundle.config.n_x {
        return Err(Error::Shape(format!(
            "model expects n_x = {}, dataset has {}",
            state.bundle.config.n_x, dataset.mesh.n_x
        )));
    }
    let mut writer = match out {
        Some(dir) => {
            fs::create_dir_all(&dir.root).map_err(|e| Error::io(&dir.root, e))?;
            config.save(&dir.root.join(CONFIG_FILE))?;
            let path = dir.log();
            let file = if state.step == 0 {
                File::create(&path)
            } else {
                OpenOptions::new().append(true).create(true).open(&path)
            }
            .map_err(|e| Error::io(&path, e))?;
            Some((path, BufWriter::new(file)))
        }
        None => None,
    };
    let extra = serde_json::to_value(config).unwrap_or_default();
    let code_dim = config.variational.then(|| state.bundle.code_dim());
    let mut log = Vec::new();
    let mut converged = false;
    while state.step < config.steps {
        let mut rng = step_rng(config.seed, state.step);
        let batch = sample_batch(dataset, config, code_dim, &mut rng)?;
        let loss = train_step(&mut state, config, &batch)?;
        converged = state.recent_recon(STOP_WINDOW).is_some_and(|r| r <= config.recon_target);
        let done = converged || state.step == config.steps;
        if state.step.is_multiple_of(config.log_every) || done {
            let record = LogRecord { step: state.step, loss };
            if let Some((path, w)) = writer.as_mut() {
                let line = serde_json::to_string(&record).map_err(|e| Error::json(path.as_path(), e))?;
                writeln!(w, "{line}").map_err(|e| Error::io(path.as_path(), e))?;
            }
            log::info!(
                "step {} recon {:.3e} total {:.4e}",
                record.step,
                record.loss.recon_mse,
                record.loss.total
            );
            on_log(&record);
            log.push(record);
        }
        if let Some(dir) = out {
            if config.checkpoint_every > 0 && state.step.is_multiple_of(config.checkpoint_every) {
                save_checkpoint(&dir.checkpoint(state.step), &state.bundle, state.step, Some(&state.optimizer), &extra)?;
            }
        }
        if converged {
            log::info!("reconstruction target reached at step {}", state.step);
            break;
        }
    }
    if let Some((path, mut w)) = writer {
        w.flush().map_err(|e| Error::io(&path, e))?;
    }
    if let Some(dir) = out {
        save_checkpoint(&dir.final_checkpoint(), &state.bundle, state.step, Some(&state.optimizer), &extra)?;
    }
    Ok(TrainOutcome { state, log, converged })
}

/// Fresh run of `config` on `dataset`.
pub fn train(config: &TrainConfig, dataset: &TrajectoryDataset, out: Option<&RunDir>) -> Result<TrainOutcome> {
    config.validate()?;
    let state = TrainState::new(config, dataset.mesh.n_x)?;
    train_from(state, config, dataset, out)
}

/// Parse a JSON-lines training log.
pub fn read_log(path: &Path) -> Result<Vec<LogRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| Error::json(path, e)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_dataset, SpaceTimeMesh};

    fn tiny_data() -> TrajectoryDataset {
        let mesh = SpaceTimeMesh::new(16, 9, 0.0, 1.0, 0.2).unwrap();
        build_dataset(4, mesh, 0.05, 3).unwrap()
    }

    fn tiny_config(kind: FlowKind, steps: u64) -> TrainConfig {
        let mut c = TrainConfig::new(kind, "unused", false, steps, 9);
        c.batch_size = 6;
        c.flow_batch = 4;
        c.log_every = 1;
        c.learning_rate = 1e-3;
        c.recon_target = 0.0;
        c.wide_hidden = Some(vec![8]);
        c.narrow_hidden = Some(vec![8]);
        c
    }

    #[test]
    fn batch_of_one_is_a_trajectory_row() {
        let data = tiny_data();
        let mut c = tiny_config(FlowKind::Baseline, 1);
        c.batch_size = 1;
        let b = sample_batch(&data, &c, None, &mut step_rng(1, 0)).unwrap();
        assert_eq!(b.ic.dim(), (1, 16));
        let j = (b.times[[0, 0]] / data.mesh.dt()).round() as usize;
        let k = data.trajectories.iter().position(|t| t.initial() == b.ic.row(0).as_slice().unwrap()).unwrap();
        assert_eq!(b.target.row(0).as_slice().unwrap(), data.trajectories[k].row(j));
    }

    #[test]
    fn seeded_batches_repeat() {
        let data = tiny_data();
        let c = tiny_config(FlowKind::GaussPath, 1);
        let a = sample_batch(&data, &c, Some(2), &mut step_rng(4, 7)).unwrap();
        let b = sample_batch(&data, &c, Some(2), &mut step_rng(4, 7)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.circle_radii.len(), 4);
        let other = sample_batch(&data, &c, Some(2), &mut step_rng(4, 8)).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn empty_dataset_is_an_error() {
        let mut data = tiny_data();
        data.trajectories.clear();
        let c = tiny_config(FlowKind::Baseline, 1);
        assert!(sample_batch(&data, &c, None, &mut step_rng(0, 0)).is_err());
    }

    #[test]
    fn zero_learning_rate_leaves_parameters() {
        let data = tiny_data();
        let mut c = tiny_config(FlowKind::Perelman, 1);
        c.learning_rate = 0.0;
        let mut state = TrainState::new(&c, 16).unwrap();
        let before = state.bundle.store.clone();
        let batch = sample_batch(&data, &c, None, &mut step_rng(9, 0)).unwrap();
        train_step(&mut state, &c, &batch).unwrap();
        assert_eq!(state.bundle.store, before);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn zero_steps_returns_initial_state() {
        let data = tiny_data();
        let c = tiny_config(FlowKind::Baseline, 0);
        let out = train(&c, &data, None).unwrap();
        assert!(out.log.is_empty());
        assert_eq!(out.state.step, 0);
        let fresh = TrainState::new(&c, 16).unwrap();
        assert_eq!(out.state.bundle.store, fresh.bundle.store);
    }

    #[test]
    fn sphere_log_has_no_flow_column() {
        let data = tiny_data();
        let dir = tempfile::tempdir().unwrap();
        let run = RunDir::new(dir.path());
        train(&tiny_config(FlowKind::Sphere, 2), &data, Some(&run)).unwrap();
        let text = fs::read_to_string(run.log()).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(!text.contains("\"flow\""));
        let text_ff = {
            let d2 = tempfile::tempdir().unwrap();
            let r2 = RunDir::new(d2.path());
            train(&tiny_config(FlowKind::SecondFf, 1), &data, Some(&r2)).unwrap();
            fs::read_to_string(r2.log()).unwrap()
        };
        assert!(text_ff.contains("\"flow\"") && text_ff.contains("\"metric_diag_mean\""));
    }

    #[test]
    fn runs_are_deterministic_and_resumable() {
        let data = tiny_data();
        for kind in [FlowKind::Harmonic, FlowKind::GaussPath] {
            let c = tiny_config(kind, 6);
            let full = train(&c, &data, None).unwrap();
            let again = train(&c, &data, None).unwrap();
            assert_eq!(full.log, again.log);

            let dir = tempfile::tempdir().unwrap();
            let run = RunDir::new(dir.path());
            let mut first = c.clone();
            first.steps = 3;
            train(&first, &data, Some(&run)).unwrap();
            let resumed = TrainState::from_checkpoint(&run.final_checkpoint()).unwrap();
            let rest = train_from(resumed, &c, &data, Some(&run)).unwrap();
            assert_eq!(rest.log, full.log[3..].to_vec(), "{kind}");
            assert_eq!(read_log(&run.log()).unwrap(), full.log);
            assert_eq!(rest.state.bundle.store, full.state.bundle.store);
        }
    }

    #[test]
    fn stops_at_reconstruction_target() {
        let data = tiny_data();
        let mut c = tiny_config(FlowKind::Baseline, 50);
        c.recon_target = f64::INFINITY;
        let out = train(&c, &data, None).unwrap();
        assert!(out.converged);
        assert_eq!(out.state.step, 1);
    }

    #[test]
    fn invalid_dimensions_are_rejected() {
        let mut c = tiny_config(FlowKind::GaussPath, 1);
        c.intrinsic_dim = Some(3);
        assert!(c.validate().is_err());
        let mut c = tiny_config(FlowKind::SecondFf, 1);
        c.intrinsic_dim = Some(2);
        assert!(c.validate().is_err());
    }

    #[test]
    fn config_json_round_trip() {
        let c = tiny_config(FlowKind::Perelman, 10);
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<TrainConfig>(&text).unwrap(), c);
        let minimal = r#"{"spec": {"kind": "sphere"}, "dataset": "d", "steps": 5, "seed": 1}"#;
        let m: TrainConfig = serde_json::from_str(minimal).unwrap();
        assert_eq!(m.learning_rate, 2e-4);
        assert_eq!(m.batch_size, 256);
        assert!(serde_json::from_str::<TrainConfig>(r#"{"spec": {"kind": "sphere"}, "dataset": "d", "steps": 5, "seed": 1, "bogus": 0}"#).is_err());
    }
}
