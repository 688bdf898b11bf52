use std::fs;
use std::path::{Path, PathBuf};

use plotters::prelude::*;

use crate::data::{OodScenario, TrajectoryDataset};
use crate::nn::ModelBundle;
use crate::{Error, Result};

use super::{perturbed_ics, EvalReport};

const SIZE: (u32, u32) = (800, 500);
const PALETTE: [RGBColor; 6] = [
    RGBColor(31, 119, 180),
    RGBColor(255, 127, 14),
    RGBColor(44, 160, 44),
    RGBColor(214, 39, 40),
    RGBColor(148, 103, 189),
    RGBColor(140, 86, 75),
];

fn plot_err<E: std::fmt::Display>(e: E) -> Error {
    Error::Plot(e.to_string())
}

fn color(i: usize) -> RGBColor {
    PALETTE[i % PALETTE.len()]
}

/// Mean ± std bars of every method for one scenario.
fn scenario_plot(reports: &[EvalReport], scenario: usize, path: &Path) -> Result<()> {
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let entries: Vec<(usize, f64, f64)> = reports
        .iter()
        .enumerate()
        .filter_map(|(i, r)| r.get(scenario).map(|s| (i, s.mean, s.std)))
        .collect();
    let top = entries.iter().map(|(_, m, s)| m + s).fold(0.0, f64::max).max(1e-3) * 1.1;
    let mut chart = ChartBuilder::on(&root)
        .caption(format!("Scenario {scenario}: relative L1 error"), ("sans-serif", 22))
        .margin(15)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(-0.5f64..reports.len() as f64 - 0.5, 0f64..top)
        .map_err(plot_err)?;
    let names: Vec<String> = reports.iter().map(|r| r.method.clone()).collect();
    chart
        .configure_mesh()
        .disable_x_mesh()
        .x_labels(reports.len())
        .x_label_formatter(&|x| {
            let i = x.round();
            if (x - i).abs() < 1e-9 && i >= 0.0 {
                names.get(i as usize).cloned().unwrap_or_default()
            } else {
                String::new()
            }
        })
        .y_desc("mean ± std")
        .draw()
        .map_err(plot_err)?;
    for (i, mean, std) in entries {
        let x = i as f64;
        let c = color(i);
        chart
            .draw_series([Rectangle::new([(x - 0.3, 0.0), (x + 0.3, mean)], c.mix(0.6).filled())])
            .map_err(plot_err)?;
        let (lo, hi) = ((mean - std).max(0.0), mean + std);
        chart
            .draw_series([
                PathElement::new(vec![(x, lo), (x, hi)], BLACK.stroke_width(2)),
                PathElement::new(vec![(x - 0.1, lo), (x + 0.1, lo)], BLACK.stroke_width(2)),
                PathElement::new(vec![(x - 0.1, hi), (x + 0.1, hi)], BLACK.stroke_width(2)),
            ])
            .map_err(plot_err)?;
    }
    root.present().map_err(plot_err)
}

/// Mean error per scenario, one line per method.
fn summary_plot(reports: &[EvalReport], scenarios: &[usize], path: &Path) -> Result<()> {
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let top = reports
        .iter()
        .flat_map(|r| r.scenarios.iter().map(|s| s.mean))
        .filter(|m| m.is_finite())
        .fold(0.0, f64::max)
        .max(1e-3)
        * 1.15;
    let lo = *scenarios.first().unwrap_or(&1) as f64 - 0.5;
    let hi = *scenarios.last().unwrap_or(&9) as f64 + 0.5;
    let mut chart = ChartBuilder::on(&root)
        .caption("Mean relative L1 error by scenario", ("sans-serif", 22))
        .margin(15)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(lo..hi, 0f64..top)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc("scenario")
        .y_desc("mean")
        .x_label_formatter(&|x| format!("{x:.0}"))
        .draw()
        .map_err(plot_err)?;
    for (i, r) in reports.iter().enumerate() {
        let c = color(i);
        let pts: Vec<(f64, f64)> = r.scenarios.iter().map(|s| (s.scenario as f64, s.mean)).collect();
        chart
            .draw_series(LineSeries::new(pts.clone(), c.stroke_width(2)))
            .map_err(plot_err)?
            .label(r.method.clone())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], c.stroke_width(2)));
        chart
            .draw_series(pts.into_iter().map(|p| Circle::new(p, 4, c.filled())))
            .map_err(plot_err)?;
    }
    chart
        .configure_series_labels()
        .border_style(BLACK)
        .background_style(WHITE.mix(0.8))
        .draw()
        .map_err(plot_err)?;
    root.present().map_err(plot_err)
}

/// `scenario_<k>.svg` for every scenario present plus `summary.svg`. An
/// empty report list writes nothing.
pub fn emit_plots(reports: &[EvalReport], out: &Path) -> Result<Vec<PathBuf>> {
    let mut scenarios: Vec<usize> = reports.iter().flat_map(|r| r.scenarios.iter().map(|s| s.scenario)).collect();
    scenarios.sort_unstable();
    scenarios.dedup();
    if scenarios.is_empty() {
        log::warn!("no scenarios to plot");
        return Ok(Vec::new());
    }
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut files = Vec::new();
    for &k in &scenarios {
        let path = out.join(format!("scenario_{k}.svg"));
        scenario_plot(reports, k, &path)?;
        files.push(path);
    }
    let path = out.join("summary.svg");
    summary_plot(reports, &scenarios, &path)?;
    files.push(path);
    Ok(files)
}

/// Prediction against truth for one trajectory under one scenario.
#[derive(Clone, Debug, PartialEq)]
pub struct Overlay {
    pub method: String,
    pub scenario: usize,
    pub xs: Vec<f64>,
    pub perturbed_ic: Vec<f64>,
    /// `(t, truth, prediction)` per selected time.
    pub snapshots: Vec<(f64, Vec<f64>, Vec<f64>)>,
}

impl Overlay {
    /// Trajectory `index` of `data`, perturbed exactly as in the evaluation
    /// run with the same `seed`.
    pub fn build(
        model: &ModelBundle,
        method: &str,
        data: &TrajectoryDataset,
        scenario: usize,
        seed: u64,
        index: usize,
        time_indices: &[usize],
    ) -> Result<Self> {
        let traj = data
            .trajectories
            .get(index)
            .ok_or_else(|| Error::InvalidArgument(format!("no trajectory {index}")))?;
        let ics = perturbed_ics(data, &OodScenario::table(scenario)?, seed)?;
        let ic = ics.row(index).to_owned().insert_axis(ndarray::Axis(0));
        let times: Vec<f64> = time_indices.iter().map(|&j| data.mesh.t(j)).collect();
        let preds = model.predict(&ic, &times)?;
        let snapshots = time_indices
            .iter()
            .zip(&times)
            .zip(preds)
            .map(|((&j, &t), p)| (t, traj.row(j).to_vec(), p.row(0).to_vec()))
            .collect();
        Ok(Self {
            method: method.into(),
            scenario,
            xs: data.mesh.xs(),
            perturbed_ic: ics.row(index).to_vec(),
            snapshots,
        })
    }
}

/// `overlay_<method>_scenario_<k>.svg`: perturbed input, truth (solid) and
/// prediction (crosses) at each snapshot time.
pub fn plot_overlay(overlay: &Overlay, out: &Path) -> Result<PathBuf> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let path = out.join(format!("overlay_{}_scenario_{}.svg", overlay.method, overlay.scenario));
    draw_overlay(overlay, &path)?;
    Ok(path)
}

fn draw_overlay(overlay: &Overlay, path: &Path) -> Result<()> {
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let all = overlay
        .snapshots
        .iter()
        .flat_map(|(_, a, b)| a.iter().chain(b))
        .chain(&overlay.perturbed_ic)
        .copied()
        .filter(|v| v.is_finite());
    let (lo, hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)));
    let pad = ((hi - lo) * 0.05).max(1e-3);
    let x0 = overlay.xs.first().copied().unwrap_or(0.0);
    let x1 = overlay.xs.last().copied().unwrap_or(1.0);
    let mut chart = ChartBuilder::on(&root)
        .caption(
            format!("{}: scenario {}", overlay.method, overlay.scenario),
            ("sans-serif", 22),
        )
        .margin(15)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(x0..x1, (lo - pad)..(hi + pad))
        .map_err(plot_err)?;
    chart.configure_mesh().x_desc("x").draw().map_err(plot_err)?;
    let input: Vec<(f64, f64)> = overlay.xs.iter().copied().zip(overlay.perturbed_ic.iter().copied()).collect();
    chart
        .draw_series(LineSeries::new(input, BLACK.mix(0.4)))
        .map_err(plot_err)?
        .label("perturbed input")
        .legend(|(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], BLACK.mix(0.4)));
    for (i, (t, truth, pred)) in overlay.snapshots.iter().enumerate() {
        let c = color(i);
        let truth: Vec<(f64, f64)> = overlay.xs.iter().copied().zip(truth.iter().copied()).collect();
        let pred: Vec<(f64, f64)> = overlay.xs.iter().copied().zip(pred.iter().copied()).collect();
        chart
            .draw_series(LineSeries::new(truth, c.stroke_width(2)))
            .map_err(plot_err)?
            .label(format!("t = {t:.2}"))
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], c.stroke_width(2)));
        chart
            .draw_series(pred.into_iter().step_by(4).map(|p| Cross::new(p, 3, c)))
            .map_err(plot_err)?;
    }
    chart
        .configure_series_labels()
        .border_style(BLACK)
        .background_style(WHITE.mix(0.8))
        .draw()
        .map_err(plot_err)?;
    root.present().map_err(plot_err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{apply_ood_scenario, build_dataset, SpaceTimeMesh};
    use crate::eval::{evaluate_scenarios, EvalSettings};
    use crate::losses::FlowKind;
    use crate::nn::ModelConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn fixture() -> (ModelBundle, TrajectoryDataset) {
        let mesh = SpaceTimeMesh::new(16, 11, 0.0, 1.0, 0.2).unwrap();
        let data = build_dataset(2, mesh, 0.05, 5).unwrap();
        let mut cfg = ModelConfig::for_kind(FlowKind::Baseline, 16, 2);
        cfg.wide_hidden = vec![8];
        cfg.narrow_hidden = vec![8];
        (ModelBundle::new(cfg).unwrap(), data)
    }

    #[test]
    fn empty_report_writes_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("plots");
        assert!(emit_plots(&[], &out).unwrap().is_empty());
        assert!(!out.exists());
    }

    #[test]
    fn one_method_nine_scenarios_gives_ten_files() {
        let (model, data) = fixture();
        let report = evaluate_scenarios(&model, "baseline", &data, &EvalSettings::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let files = emit_plots(&[report], dir.path()).unwrap();
        assert_eq!(files.len(), 10);
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 10);
        let text = fs::read_to_string(dir.path().join("scenario_3.svg")).unwrap();
        assert!(text.starts_with("<svg"));
    }

    #[test]
    fn unwritable_directory_is_an_error() {
        let (model, data) = fixture();
        let report = evaluate_scenarios(&model, "b", &data, &EvalSettings::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        fs::write(&blocker, "x").unwrap();
        assert!(emit_plots(&[report], &blocker.join("sub")).is_err());
    }

    #[test]
    fn overlay_shows_the_perturbed_input() {
        let (model, data) = fixture();
        let ov = Overlay::build(&model, "baseline", &data, 2, 7, 1, &[0, 5, 10]).unwrap();
        // replay the evaluation stream: trajectory 0 first, then 1
        let s = OodScenario::table(2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        rng.set_stream(2);
        apply_ood_scenario(data.trajectories[0].initial(), &s, &data.mesh, &mut rng).unwrap();
        let want = apply_ood_scenario(data.trajectories[1].initial(), &s, &data.mesh, &mut rng).unwrap();
        assert_eq!(ov.perturbed_ic, want);
        assert_eq!(ov.snapshots[0].1, data.trajectories[1].initial());
        let dir = tempfile::tempdir().unwrap();
        assert!(plot_overlay(&ov, dir.path()).unwrap().exists());
    }
}
