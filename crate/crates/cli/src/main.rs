//! `geoflow`: generate Burgers data, train flow-regularized surrogates,
//! check the geometric invariants, evaluate robustness and plot reports.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, CommandFactory, Parser, Subcommand};
use serde_json::{json, Value};

use geoflow::data::{build_dataset, data_path, load_dataset, meta_path, save_dataset, SpaceTimeMesh, DEFAULT_VISCOSITY};
use geoflow::eval::{compare_methods, emit_plots, evaluate_scenarios, load_reports, EvalReport, EvalSettings, DEFAULT_STRIDE};
use geoflow::losses::{FlowKind, LossWeights};
use geoflow::nn::load_checkpoint;
use geoflow::train::{train_observed, LogRecord, RunDir, TrainConfig, TrainState};
use geoflow::verify::{run_suite, Suite, VerifyOptions};
use geoflow::Error;

/// Default output root when `--out` is not given.
const OUT_ENV: &str = "GEOFLOW_OUT";
const MANIFEST_SUFFIX: &str = ".manifest.json";

#[derive(Parser, Debug)]
#[command(name = "geoflow", version, about = "Geometric-flow latent surrogates for 1D Burgers dynamics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample initial conditions and solve Burgers' equation for each.
    GenerateData(GenerateArgs),
    /// Train one model from a JSON config; flags override config keys.
    Train(TrainArgs),
    /// Check curvature formulas and loss contracts against oracles.
    Verify(VerifyArgs),
    /// Evaluate checkpoints on the out-of-distribution scenarios.
    Evaluate(EvaluateArgs),
    /// Plot an evaluation report.
    Plot(PlotArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::GenerateData(_) => "generate-data",
            Command::Train(_) => "train",
            Command::Verify(_) => "verify",
            Command::Evaluate(_) => "evaluate",
            Command::Plot(_) => "plot",
        }
    }
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[arg(long, default_value_t = 300)]
    n_traj: usize,
    #[arg(long, default_value_t = 201)]
    nx: usize,
    #[arg(long, default_value_t = 201)]
    nt: usize,
    #[arg(long, default_value_t = DEFAULT_VISCOSITY)]
    viscosity: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output stem; `<stem>.f64bin` and `<stem>.meta.json` are written.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Training configuration (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    kind: Option<FlowKind>,
    /// Dataset stem.
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    log_every: Option<u64>,
    #[arg(long)]
    checkpoint_every: Option<u64>,
    #[arg(long)]
    recon_target: Option<f64>,
    #[arg(long)]
    intrinsic_dim: Option<usize>,
    #[arg(long)]
    max_trajectories: Option<usize>,
    #[arg(long)]
    variational: Option<bool>,
    /// Run directory for the log, checkpoints and manifest.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    #[arg(long, default_value = "all")]
    suite: Suite,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Multiplies every tolerance (test hook).
    #[arg(long, default_value_t = 1.0, hide = true)]
    tolerance_scale: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    /// Checkpoint directories, one per method.
    #[arg(long, num_args = 1.., required = true)]
    checkpoints: Vec<PathBuf>,
    /// Stem of the evaluation dataset.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5,6,7,8,9")]
    scenarios: Vec<usize>,
    /// Perturbation seed; one for all checkpoints or one per checkpoint.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    seed: Vec<u64>,
    #[arg(long, default_value_t = DEFAULT_STRIDE)]
    stride: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PlotArgs {
    /// `report.json`, or the directory holding it.
    #[arg(long)]
    report: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Errors the CLI itself raises on top of the library's.
#[derive(Debug)]
enum Failure {
    /// Bad flag values; the subcommand's usage line is printed with it.
    Usage(String),
    /// `verify` ran and some checks did not pass.
    Checks(usize),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Checks(_) => 1,
            Failure::Lib(e) => match e {
                Error::NonFinite { .. }
                | Error::DegenerateFlow { .. }
                | Error::SingularMetric { .. }
                | Error::DegenerateChart(_)
                | Error::Extinction { .. } => 3,
                Error::Io { .. } | Error::Plot(_) => 1,
                _ => 2,
            },
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(msg) => f.write_str(msg),
            Failure::Checks(n) => write!(f, "{n} verification checks failed"),
            Failure::Lib(e) => write!(f, "{e}"),
        }
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn out_root() -> PathBuf {
    std::env::var_os(OUT_ENV).map_or_else(|| PathBuf::from("runs"), PathBuf::from)
}

fn write_manifest(path: &Path, command: &str, resolved: Value) -> CliResult<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::Io {
            path: parent.to_path_buf(),
            source: e,
        })?;
    }
    let manifest = json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "config": resolved,
    });
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(path, text).map_err(|e| {
        Failure::Lib(Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
    })
}

fn generate(args: GenerateArgs) -> CliResult<()> {
    let stem = args.out.unwrap_or_else(|| out_root().join("data").join("burgers"));
    let mesh = SpaceTimeMesh::new(args.nx, args.nt, 0.0, 1.0, 1.0)?;
    let n_traj = args.n_traj;
    if n_traj == 0 {
        return Err(Failure::Usage("--n-traj must be at least 1".into()));
    }
    let resolved = json!({
        "n_traj": n_traj,
        "mesh": mesh,
        "viscosity": args.viscosity,
        "seed": args.seed,
        "out": stem,
    });
    if let Some(parent) = stem.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::Io {
            path: parent.to_path_buf(),
            source: e,
        })?;
    }
    let dataset = build_dataset(n_traj, mesh, args.viscosity, args.seed)?;
    save_dataset(&dataset, &stem)?;
    write_manifest(&with_suffix(&stem, MANIFEST_SUFFIX), "generate-data", resolved)?;
    println!(
        "wrote {} trajectories ({}x{}) to {} and {}",
        dataset.len(),
        mesh.n_t,
        mesh.n_x,
        data_path(&stem).display(),
        meta_path(&stem).display()
    );
    Ok(())
}

fn with_suffix(stem: &Path, suffix: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Config file merged with flag overrides.
fn resolve_train_config(args: &TrainArgs) -> CliResult<TrainConfig> {
    let mut config = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| match e.kind() {
                std::io::ErrorKind::NotFound => Error::Missing(path.clone()),
                _ => Error::Io {
                    path: path.clone(),
                    source: e,
                },
            })?;
            let raw: Value = serde_json::from_str(&text).map_err(|e| Error::Json {
                path: path.clone(),
                source: e,
            })?;
            let has_weights = raw.pointer("/spec/weights").is_some();
            let mut config: TrainConfig = serde_json::from_value(raw).map_err(|e| Error::Json {
                path: path.clone(),
                source: e,
            })?;
            if !has_weights {
                config.spec.weights = LossWeights::for_mode(config.variational);
            }
            config
        }
        None => {
            let (Some(kind), Some(dataset)) = (args.kind, args.dataset.clone()) else {
                return Err(Failure::Usage("train needs --config, or both --kind and --dataset".into()));
            };
            let variational = args.variational.unwrap_or(false);
            TrainConfig::new(kind, dataset, variational, args.steps.unwrap_or(5000), args.seed.unwrap_or(0))
        }
    };
    if let Some(kind) = args.kind {
        if kind != config.kind() {
            config.spec.kind = kind;
        }
    }
    if let Some(v) = args.variational {
        if v != config.variational {
            config.variational = v;
            config.spec.weights = LossWeights::for_mode(v);
        }
    }
    if let Some(d) = &args.dataset {
        config.dataset = d.clone();
    }
    if let Some(v) = args.steps {
        config.steps = v;
    }
    if let Some(v) = args.seed {
        config.seed = v;
    }
    if let Some(v) = args.batch_size {
        config.batch_size = v;
    }
    if let Some(v) = args.learning_rate {
        config.learning_rate = v;
    }
    if let Some(v) = args.log_every {
        config.log_every = v;
    }
    if let Some(v) = args.checkpoint_every {
        config.checkpoint_every = v;
    }
    if let Some(v) = args.recon_target {
        config.recon_target = v;
    }
    if let Some(v) = args.intrinsic_dim {
        config.intrinsic_dim = Some(v);
    }
    if let Some(v) = args.max_trajectories {
        config.max_trajectories = Some(v);
    }
    config.validate()?;
    Ok(config)
}

fn breakdown_line(record: &LogRecord) -> String {
    let l = &record.loss;
    let mut line = format!("step {:>7}  total {:.6e}", record.step, l.total);
    for (name, v) in l.terms() {
        line.push_str(&format!("  {name} {v:.6e}"));
    }
    line.push_str(&format!("  recon_mse {:.6e}", l.recon_mse));
    if let Some(d) = l.metric_diag_mean {
        line.push_str(&format!("  diag {d:.4e}"));
    }
    line
}

fn train(args: TrainArgs) -> CliResult<()> {
    let config = resolve_train_config(&args)?;
    let dir = RunDir::new(
        args.out
            .clone()
            .unwrap_or_else(|| out_root().join(format!("train-{}-seed{}", config.kind(), config.seed))),
    );
    write_manifest(
        &dir.root.join(format!("train{MANIFEST_SUFFIX}")),
        "train",
        serde_json::to_value(&config).expect("config serializes"),
    )?;
    let dataset = load_dataset(&config.dataset)?;
    let state = TrainState::new(&config, dataset.mesh.n_x)?;
    let outcome = train_observed(state, &config, &dataset, Some(&dir), &mut |r| println!("{}", breakdown_line(r)))?;
    println!(
        "stopped at step {} ({}); checkpoint at {}",
        outcome.state.step,
        if outcome.converged { "reconstruction target reached" } else { "step budget used" },
        dir.final_checkpoint().display()
    );
    Ok(())
}

fn verify(args: VerifyArgs) -> CliResult<()> {
    let options = VerifyOptions {
        seed: args.seed,
        tolerance_scale: args.tolerance_scale,
    };
    let out = args.out.unwrap_or_else(|| out_root().join("verify"));
    write_manifest(
        &out.join(format!("verify{MANIFEST_SUFFIX}")),
        "verify",
        json!({ "suite": args.suite, "options": options }),
    )?;
    let report = run_suite(args.suite, &options)?;
    print!("{}", report.table());
    let path = out.join("verify.report.json");
    let text = serde_json::to_string_pretty(&report).expect("report serializes");
    fs::write(&path, text).map_err(|e| Error::Io { path, source: e })?;
    if report.all_passed() {
        Ok(())
    } else {
        Err(Failure::Checks(report.failures().count()))
    }
}

/// Method label for a checkpoint: its kind, disambiguated by directory when
/// two checkpoints share a kind.
fn method_names(kinds: &[FlowKind], dirs: &[PathBuf]) -> Vec<String> {
    kinds
        .iter()
        .zip(dirs)
        .map(|(kind, dir)| {
            if kinds.iter().filter(|k| *k == kind).count() > 1 {
                let label = dir
                    .components()
                    .rev()
                    .map(|c| c.as_os_str().to_string_lossy().into_owned())
                    .find(|c| c != "final" && c != "." && !c.is_empty())
                    .unwrap_or_default();
                format!("{kind}@{label}")
            } else {
                kind.to_string()
            }
        })
        .collect()
}

fn evaluate(args: EvaluateArgs) -> CliResult<()> {
    let seeds = match args.seed.len() {
        1 => vec![args.seed[0]; args.checkpoints.len()],
        n if n == args.checkpoints.len() => args.seed.clone(),
        n => {
            return Err(Failure::Usage(format!(
                "--seed takes one value or one per checkpoint ({} checkpoints, {n} seeds)",
                args.checkpoints.len()
            )))
        }
    };
    let out = args.out.unwrap_or_else(|| out_root().join("evaluate"));
    write_manifest(
        &out.join(format!("evaluate{MANIFEST_SUFFIX}")),
        "evaluate",
        json!({
            "checkpoints": args.checkpoints,
            "data": args.data,
            "scenarios": args.scenarios,
            "seeds": seeds,
            "stride": args.stride,
        }),
    )?;
    if seeds.iter().any(|&s| s != seeds[0]) {
        return Err(Error::SeedMismatch(format!("evaluation seeds differ across checkpoints: {seeds:?}")).into());
    }
    let data = load_dataset(&args.data)?;
    let checkpoints = args
        .checkpoints
        .iter()
        .map(|dir| load_checkpoint(dir))
        .collect::<geoflow::Result<Vec<_>>>()?;
    let kinds: Vec<FlowKind> = checkpoints.iter().map(|c| c.bundle.config.kind).collect();
    let names = method_names(&kinds, &args.checkpoints);
    let mut reports: Vec<EvalReport> = Vec::with_capacity(checkpoints.len());
    for ((ckpt, name), &seed) in checkpoints.iter().zip(&names).zip(&seeds) {
        let settings = EvalSettings {
            scenarios: args.scenarios.clone(),
            seed,
            stride: args.stride,
        };
        let report = evaluate_scenarios(&ckpt.bundle, name, &data, &settings)?;
        report.save(&out.join(format!("{}.report.json", name.replace(['/', '@'], "_"))))?;
        reports.push(report);
    }
    let comparison = compare_methods(&reports)?;
    comparison.write(&reports, &out)?;
    print!("{}", comparison.to_markdown());
    Ok(())
}

fn plot(args: PlotArgs) -> CliResult<()> {
    let path = if args.report.is_dir() {
        args.report.join("report.json")
    } else {
        args.report.clone()
    };
    let out = args.out.unwrap_or_else(|| out_root().join("plots"));
    write_manifest(
        &with_suffix(&out, MANIFEST_SUFFIX),
        "plot",
        json!({ "report": path, "out": out }),
    )?;
    let reports = load_reports(&path)?;
    let files = emit_plots(&reports, &out)?;
    for f in &files {
        println!("{}", f.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let name = cli.command.name();
    let result = match cli.command {
        Command::GenerateData(a) => generate(a),
        Command::Train(a) => train(a),
        Command::Verify(a) => verify(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Plot(a) => plot(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let Failure::Usage(_) = e {
                if let Some(sub) = Cli::command().find_subcommand(name) {
                    eprintln!("\n{}", sub.clone().bin_name(format!("geoflow {name}")).render_usage());
                }
            }
            ExitCode::from(e.exit_code())
        }
    }
}
