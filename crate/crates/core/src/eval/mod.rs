//! Out-of-distribution robustness: perturb fresh initial conditions with the
//! nine scenarios, roll trained models forward, and pool relative-L1 errors
//! over (trajectory, time) pairs.

mod plots;

use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{apply_ood_scenario, OodScenario, TrajectoryDataset};
use crate::nn::ModelBundle;
use crate::{Error, Result};

pub use plots::{emit_plots, plot_overlay, Overlay};

/// Targets with `||target||₁` at or below this are excluded.
pub const EXCLUSION_EPS: f64 = 1e-8;
/// Every tenth point of the time mesh.
pub const DEFAULT_STRIDE: usize = 10;
pub const POOLING: &str = "pooled over (trajectory, time) pairs; population std";

/// `||prediction − target||₁ / ||target||₁`, or `None` when the target norm
/// is at most [`EXCLUSION_EPS`].
pub fn relative_l1(prediction: &[f64], target: &[f64]) -> Result<Option<f64>> {
    if prediction.len() != target.len() {
        return Err(Error::Shape(format!(
            "prediction has {} values, target {}",
            prediction.len(),
            target.len()
        )));
    }
    let norm: f64 = target.iter().map(|v| v.abs()).sum();
    if norm <= EXCLUSION_EPS {
        return Ok(None);
    }
    let diff: f64 = prediction.iter().zip(target).map(|(p, t)| (p - t).abs()).sum();
    Ok(Some(diff / norm))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioStats {
    pub scenario: usize,
    pub mean: f64,
    pub std: f64,
    /// Pooled values that entered the statistics.
    pub n: usize,
    pub excluded: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    /// Seed of the perturbation draws.
    pub seed: u64,
    /// Seed the evaluation initial conditions were generated from.
    pub data_seed: u64,
    pub n_trajectories: usize,
    pub stride: usize,
    pub time_indices: Vec<usize>,
    pub pooling: String,
    pub scenarios: Vec<ScenarioStats>,
}

impl EvalReport {
    pub fn get(&self, scenario: usize) -> Option<&ScenarioStats> {
        self.scenarios.iter().find(|s| s.scenario == scenario)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json(path, e))?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalSettings {
    pub scenarios: Vec<usize>,
    pub seed: u64,
    pub stride: usize,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            scenarios: (1..=9).collect(),
            seed: 0,
            stride: DEFAULT_STRIDE,
        }
    }
}

/// Perturbed copies of every initial condition in `data` under `scenario`.
/// Draws come from stream `scenario` of `seed`, in trajectory order.
pub fn perturbed_ics(data: &TrajectoryDataset, scenario: &OodScenario, seed: u64) -> Result<Array2<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(scenario.id as u64);
    let n_x = data.mesh.n_x;
    let mut out = Array2::zeros((data.len(), n_x));
    for (k, traj) in data.trajectories.iter().enumerate() {
        let ic = apply_ood_scenario(traj.initial(), scenario, &data.mesh, &mut rng)?;
        out.row_mut(k).assign(&ndarray::aview1(&ic));
    }
    Ok(out)
}

fn pooled_stats(scenario: usize, values: &[f64], excluded: usize) -> ScenarioStats {
    let n = values.len();
    let (mean, std) = if n == 0 {
        (f64::NAN, f64::NAN)
    } else {
        let mean = values.iter().sum::<f64>() / n as f64;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        (mean, var.sqrt())
    };
    ScenarioStats {
        scenario,
        mean,
        std,
        n,
        excluded,
    }
}

/// Run `model` on perturbed versions of `data`'s initial conditions and
/// compare against the clean trajectories at every `stride`-th time.
pub fn evaluate_scenarios(
    model: &ModelBundle,
    method: &str,
    data: &TrajectoryDataset,
    settings: &EvalSettings,
) -> Result<EvalReport> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("evaluation dataset is empty".into()));
    }
    if data.mesh.n_x != model.config.n_x {
        return Err(Error::Shape(format!(
            "model expects n_x = {}, evaluation data has {}",
            model.config.n_x, data.mesh.n_x
        )));
    }
    if settings.stride == 0 {
        return Err(Error::InvalidArgument("stride must be positive".into()));
    }
    let time_indices: Vec<usize> = (0..data.mesh.n_t).step_by(settings.stride).collect();
    let times: Vec<f64> = time_indices.iter().map(|&j| data.mesh.t(j)).collect();
    let mut scenarios = Vec::with_capacity(settings.scenarios.len());
    for &id in &settings.scenarios {
        let scenario = OodScenario::table(id)?;
        let ics = perturbed_ics(data, &scenario, settings.seed)?;
        let predictions = model.predict(&ics, &times)?;
        let mut values = Vec::with_capacity(data.len() * times.len());
        let mut excluded = 0;
        for (pred, &j) in predictions.iter().zip(&time_indices) {
            for (k, traj) in data.trajectories.iter().enumerate() {
                let row = pred.row(k);
                match relative_l1(row.as_slice().expect("standard layout"), traj.row(j))? {
                    Some(v) => values.push(v),
                    None => excluded += 1,
                }
            }
        }
        let stats = pooled_stats(id, &values, excluded);
        log::info!("{method} scenario {id}: {:.4} ± {:.4} (n = {})", stats.mean, stats.std, stats.n);
        scenarios.push(stats);
    }
    Ok(EvalReport {
        method: method.to_string(),
        seed: settings.seed,
        data_seed: data.seed,
        n_trajectories: data.len(),
        stride: settings.stride,
        time_indices,
        pooling: POOLING.into(),
        scenarios,
    })
}

/// One line of `report.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: String,
    pub scenario: usize,
    pub mean: f64,
    pub std: f64,
    pub n: usize,
    pub excluded: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Comparison {
    pub methods: Vec<String>,
    pub rows: Vec<ReportRow>,
    /// Per scenario, every method with the smallest mean (ties included).
    pub winners: Vec<(usize, Vec<String>)>,
}

/// Rank methods scenario by scenario. All reports must share seeds, data and
/// time subsampling.
pub fn compare_methods(reports: &[EvalReport]) -> Result<Comparison> {
    let first = reports
        .first()
        .ok_or_else(|| Error::InvalidArgument("no reports to compare".into()))?;
    for r in &reports[1..] {
        let same = (r.seed, r.data_seed, r.n_trajectories, &r.time_indices)
            == (first.seed, first.data_seed, first.n_trajectories, &first.time_indices);
        if !same {
            return Err(Error::SeedMismatch(format!(
                "{} (seed {}, data seed {}, {} trajectories) vs {} (seed {}, data seed {}, {} trajectories)",
                first.method, first.seed, first.data_seed, first.n_trajectories, r.method, r.seed, r.data_seed, r.n_trajectories
            )));
        }
    }
    let rows: Vec<ReportRow> = reports
        .iter()
        .flat_map(|r| {
            r.scenarios.iter().map(move |s| ReportRow {
                method: r.method.clone(),
                scenario: s.scenario,
                mean: s.mean,
                std: s.std,
                n: s.n,
                excluded: s.excluded,
            })
        })
        .collect();
    let mut ids: Vec<usize> = rows.iter().map(|r| r.scenario).collect();
    ids.sort_unstable();
    ids.dedup();
    let winners = ids
        .into_iter()
        .map(|id| {
            let here: Vec<&ReportRow> = rows.iter().filter(|r| r.scenario == id).collect();
            let best = here.iter().map(|r| r.mean).fold(f64::INFINITY, f64::min);
            let names = here.iter().filter(|r| r.mean == best).map(|r| r.method.clone()).collect();
            (id, names)
        })
        .collect();
    Ok(Comparison {
        methods: reports.iter().map(|r| r.method.clone()).collect(),
        rows,
        winners,
    })
}

impl Comparison {
    /// Scenarios on which `method`'s mean is at most `reference`'s.
    pub fn scenarios_at_most(&self, method: &str, reference: &str) -> Vec<usize> {
        self.rows
            .iter()
            .filter(|r| r.method == method)
            .filter(|r| {
                self.rows
                    .iter()
                    .any(|b| b.method == reference && b.scenario == r.scenario && r.mean <= b.mean)
            })
            .map(|r| r.scenario)
            .collect()
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in &self.rows {
            w.serialize(row).map_err(|e| Error::InvalidArgument(format!("csv: {e}")))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::InvalidArgument(format!("csv: {e}")))?;
        String::from_utf8(bytes).map_err(|e| Error::InvalidArgument(format!("csv: {e}")))
    }

    pub fn rows_from_csv(text: &str) -> Result<Vec<ReportRow>> {
        csv::Reader::from_reader(text.as_bytes())
            .deserialize()
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::InvalidArgument(format!("csv: {e}")))
    }

    /// Scenario-by-method table of `mean ± std`, winners in bold.
    pub fn to_markdown(&self) -> String {
        let mut out = format!("| Scenario | {} |\n", self.methods.join(" | "));
        out.push_str(&format!("|---|{}\n", "---|".repeat(self.methods.len())));
        for (id, winners) in &self.winners {
            let cells: Vec<String> = self
                .methods
                .iter()
                .map(|m| match self.rows.iter().find(|r| &r.method == m && r.scenario == *id) {
                    Some(r) if winners.contains(m) => format!("**{:.3} ± {:.3}**", r.mean, r.std),
                    Some(r) => format!("{:.3} ± {:.3}", r.mean, r.std),
                    None => "–".into(),
                })
                .collect();
            out.push_str(&format!("| {id} | {} |\n", cells.join(" | ")));
        }
        out
    }

    /// Write `report.csv`, `report.md` and `report.json` (the full reports)
    /// into `dir`.
    pub fn write(&self, reports: &[EvalReport], dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let csv_path = dir.join("report.csv");
        fs::write(&csv_path, self.to_csv()?).map_err(|e| Error::io(&csv_path, e))?;
        let md_path = dir.join("report.md");
        fs::write(&md_path, self.to_markdown()).map_err(|e| Error::io(&md_path, e))?;
        let json_path = dir.join("report.json");
        let text = serde_json::to_string_pretty(reports).map_err(|e| Error::json(&json_path, e))?;
        fs::write(&json_path, text).map_err(|e| Error::io(&json_path, e))
    }
}

/// Reports saved by [`Comparison::write`].
pub fn load_reports(path: &Path) -> Result<Vec<EvalReport>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_dataset, SpaceTimeMesh};
    use crate::losses::FlowKind;
    use crate::nn::ModelConfig;

    #[test]
    fn relative_l1_trivial_cases() {
        let t = [1.0, -2.0, 0.5];
        assert_eq!(relative_l1(&t, &t).unwrap(), Some(0.0));
        let twice: Vec<f64> = t.iter().map(|v| 2.0 * v).collect();
        assert_eq!(relative_l1(&twice, &t).unwrap(), Some(1.0));
        assert_eq!(relative_l1(&[0.0; 3], &t).unwrap(), Some(1.0));
        assert_eq!(relative_l1(&[1.0; 3], &[0.0; 3]).unwrap(), None);
        assert!(relative_l1(&[1.0], &t).is_err());
    }

    fn fixture() -> (ModelBundle, TrajectoryDataset) {
        let mesh = SpaceTimeMesh::new(16, 21, 0.0, 1.0, 0.2).unwrap();
        let data = build_dataset(3, mesh, 0.05, 5).unwrap();
        let mut cfg = ModelConfig::for_kind(FlowKind::Baseline, 16, 2);
        cfg.wide_hidden = vec![8];
        cfg.narrow_hidden = vec![8];
        (ModelBundle::new(cfg).unwrap(), data)
    }

    #[test]
    fn report_is_deterministic_and_pooled() {
        let (model, data) = fixture();
        let settings = EvalSettings::default();
        let a = evaluate_scenarios(&model, "baseline", &data, &settings).unwrap();
        let b = evaluate_scenarios(&model, "baseline", &data, &settings).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.time_indices, vec![0, 10, 20]);
        assert_eq!(a.scenarios.len(), 9);
        for s in &a.scenarios {
            assert_eq!(s.n + s.excluded, 3 * 3);
            assert!(s.mean >= 0.0 && s.std >= 0.0);
        }
    }

    #[test]
    fn pooled_statistics_match_direct_computation() {
        let (model, data) = fixture();
        let settings = EvalSettings {
            scenarios: vec![6],
            ..Default::default()
        };
        let report = evaluate_scenarios(&model, "m", &data, &settings).unwrap();
        let ics = perturbed_ics(&data, &OodScenario::table(6).unwrap(), 0).unwrap();
        let mut vals = Vec::new();
        for &j in &report.time_indices {
            for k in 0..data.len() {
                let pred = model.predict(&ics.slice(ndarray::s![k..k + 1, ..]).to_owned(), &[data.mesh.t(j)]).unwrap();
                let target = data.trajectories[k].row(j);
                let num: f64 = pred[0].iter().zip(target).map(|(p, t)| (p - t).abs()).sum();
                vals.push(num / target.iter().map(|v| v.abs()).sum::<f64>());
            }
        }
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let std = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64).sqrt();
        let s = &report.scenarios[0];
        assert!((s.mean - mean).abs() < 1e-12 && (s.std - std).abs() < 1e-12);
    }

    #[test]
    fn duplicated_method_ties_everywhere() {
        let (model, data) = fixture();
        let r = evaluate_scenarios(&model, "a", &data, &EvalSettings::default()).unwrap();
        let mut r2 = r.clone();
        r2.method = "b".into();
        let cmp = compare_methods(&[r, r2]).unwrap();
        assert_eq!(cmp.rows.len(), 18);
        assert!(cmp.winners.iter().all(|(_, w)| w.len() == 2));
        assert_eq!(cmp.scenarios_at_most("a", "b").len(), 9);
    }

    #[test]
    fn mismatched_seeds_are_refused() {
        let (model, data) = fixture();
        let settings = EvalSettings {
            scenarios: vec![1],
            ..Default::default()
        };
        let a = evaluate_scenarios(&model, "a", &data, &settings).unwrap();
        let mut b = a.clone();
        b.seed = 1;
        assert!(matches!(compare_methods(&[a, b]), Err(Error::SeedMismatch(_))));
    }

    #[test]
    fn csv_round_trips() {
        let (model, data) = fixture();
        let r = evaluate_scenarios(&model, "a", &data, &EvalSettings::default()).unwrap();
        let cmp = compare_methods(&[r]).unwrap();
        let text = cmp.to_csv().unwrap();
        assert!(text.starts_with("method,scenario,mean,std,n,excluded"));
        assert_eq!(Comparison::rows_from_csv(&text).unwrap(), cmp.rows);
        assert!(cmp.to_markdown().contains("| 9 |"));
    }
}
