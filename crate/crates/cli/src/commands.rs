use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use sympler::eval::{self, SplitSpec};
use sympler::io::{self, DatasetSchema, PredictionRow, Snapshot, StandardizationStats};
use sympler::pendulum::{self, PendulumConfig};
use sympler::vc_bounds;
use sympler::{LearnerConfig, Selection};

#[derive(Debug, Parser)]
#[command(
    name = "sympler",
    version,
    about = "Piecewise-linear continual learning for time series"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Minimum training sizes from the VC bound, as CSV `h,l_star,l_rule`.
    VcTable(VcTableArgs),
    /// Train on two simulated pendulum cycles and compare with Taylor lines.
    PendulumTrain(PendulumTrainArgs),
    /// Closed-loop long-term forecast against the linearized pendulum.
    PendulumForecast(PendulumForecastArgs),
    /// Rod-length change mid-stream with error-based selection.
    PendulumDrift(PendulumDriftArgs),
    /// Spurious standard-normal input dimensions.
    PendulumHighdim(PendulumHighdimArgs),
    /// Target noise versus ridge regularization.
    PendulumNoise(PendulumNoiseArgs),
    /// Warmup/update/evaluation protocol on a CSV time series.
    Evaluate(EvaluateArgs),
    /// Report the local model answering a query point.
    Explain(ExplainArgs),
    /// Batch inference from a snapshot.
    Predict(PredictArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
struct LearnerArgs {
    /// L2 regularization strength.
    #[arg(long, default_value_t = 1e-6)]
    lambda: f64,
    /// nearest, aggregated or error_based.
    #[arg(long, default_value = "nearest")]
    selection: String,
    /// Decay rate for aggregated selection.
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
}

impl LearnerArgs {
    fn config(&self) -> Result<LearnerConfig> {
        let cfg = LearnerConfig {
            lambda: self.lambda,
            selection: self.selection.parse::<Selection>()?,
            sigma: self.sigma,
            ..LearnerConfig::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Args, Serialize)]
struct PendulumArgs {
    /// Rod length in meters.
    #[arg(long, default_value_t = 0.5)]
    rod: f64,
    #[arg(long, default_value_t = 9.81)]
    g: f64,
    /// Sampling rate in Hz.
    #[arg(long, default_value_t = 200.0)]
    rate: f64,
    /// Initial angle in degrees.
    #[arg(long, default_value_t = 90.0)]
    theta0_deg: f64,
    /// Initial angular velocity in rad/s.
    #[arg(long, default_value_t = 0.0)]
    omega0: f64,
    /// Training duration in oscillation periods.
    #[arg(long, default_value_t = 2.0)]
    cycles: f64,
}

impl PendulumArgs {
    fn config(&self) -> Result<PendulumConfig> {
        if !(self.rate > 0.0) {
            bail!("--rate must be positive");
        }
        let cfg = PendulumConfig {
            rod: self.rod,
            g: self.g,
            dt: 1.0 / self.rate,
            theta0: self.theta0_deg.to_radians(),
            omega0: self.omega0,
            cycles: self.cycles,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Args, Serialize)]
struct RunArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long)]
    #[serde(skip)]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct VcTableArgs {
    #[arg(long, default_value_t = 100)]
    h_max: u32,
    #[arg(long, default_value_t = vc_bounds::DEFAULT_ETA)]
    eta: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output CSV path.
    #[arg(long)]
    #[serde(skip)]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct PendulumTrainArgs {
    #[command(flatten)]
    #[serde(flatten)]
    run: RunArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pendulum: PendulumArgs,
    #[command(flatten)]
    #[serde(flatten)]
    learner: LearnerArgs,
}

#[derive(Debug, Args, Serialize)]
struct PendulumForecastArgs {
    #[command(flatten)]
    #[serde(flatten)]
    run: RunArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pendulum: PendulumArgs,
    #[command(flatten)]
    #[serde(flatten)]
    learner: LearnerArgs,
    /// Forecast horizon in seconds.
    #[arg(long, default_value_t = 167.0)]
    duration: f64,
}

#[derive(Debug, Args, Serialize)]
struct PendulumDriftArgs {
    #[command(flatten)]
    #[serde(flatten)]
    run: RunArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pendulum: PendulumArgs,
    /// Rod length after the switch.
    #[arg(long, default_value_t = 1.0)]
    rod_after: f64,
    #[arg(long, default_value_t = 1e-6)]
    lambda: f64,
}

#[derive(Debug, Args, Serialize)]
struct PendulumHighdimArgs {
    #[command(flatten)]
    #[serde(flatten)]
    run: RunArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pendulum: PendulumArgs,
    #[command(flatten)]
    #[serde(flatten)]
    learner: LearnerArgs,
    /// Comma-separated numbers of spurious inputs.
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,5,10,20,50,100")]
    dims: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    reps: usize,
    /// Worker threads; results do not depend on it.
    #[arg(long, default_value_t = 1)]
    #[serde(skip)]
    jobs: usize,
}

#[derive(Debug, Args, Serialize)]
struct PendulumNoiseArgs {
    #[command(flatten)]
    #[serde(flatten)]
    run: RunArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pendulum: PendulumArgs,
    /// Comma-separated target noise standard deviations.
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "0,0.25,0.5,0.75,1,1.25,1.5,1.75,2"
    )]
    noise: Vec<f64>,
    /// Comma-separated regularization strengths.
    #[arg(long, value_delimiter = ',', default_value = "1e-6,0.01,0.1,1,5,10,15")]
    lambdas: Vec<f64>,
    #[arg(long, default_value_t = 30)]
    reps: usize,
    /// Worker threads; results do not depend on it.
    #[arg(long, default_value_t = 1)]
    #[serde(skip)]
    jobs: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
struct DataArgs {
    /// Input CSV with a header row.
    #[arg(long)]
    data: PathBuf,
    /// Target column (defaults to the last column).
    #[arg(long)]
    target: Option<String>,
    /// Comma-separated feature columns (defaults to all other columns).
    #[arg(long, value_delimiter = ',')]
    features: Option<Vec<String>>,
    /// Treat the first column as a timestamp.
    #[arg(long)]
    timestamp: bool,
}

impl DataArgs {
    fn schema(&self) -> Result<DatasetSchema> {
        let mut schema = DatasetSchema::infer(&self.data, self.target.as_deref(), self.timestamp)?;
        if let Some(f) = &self.features {
            schema.feature_columns = f.clone();
        }
        Ok(schema)
    }
}

#[derive(Debug, Args, Serialize)]
struct EvaluateArgs {
    #[command(flatten)]
    #[serde(flatten)]
    data: DataArgs,
    /// Number of warmup samples.
    #[arg(long)]
    warmup: usize,
    /// Number of update samples; the rest is evaluation data.
    #[arg(long)]
    update: usize,
    /// `column,mean,std` CSV used to standardize every column.
    #[arg(long)]
    stats: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    learner: LearnerArgs,
    #[command(flatten)]
    #[serde(flatten)]
    run: RunArgs,
}

#[derive(Debug, Args)]
struct ExplainArgs {
    #[arg(long)]
    snapshot: PathBuf,
    /// Comma-separated query point, in data units.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    x: Vec<f64>,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PredictArgs {
    #[arg(long)]
    snapshot: PathBuf,
    #[command(flatten)]
    data: PredictDataArgs,
    /// Output CSV `index,prediction`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct PredictDataArgs {
    #[arg(long)]
    data: PathBuf,
    /// Comma-separated feature columns (defaults to the first n columns).
    #[arg(long, value_delimiter = ',')]
    features: Option<Vec<String>>,
    #[arg(long)]
    timestamp: bool,
}

#[derive(Serialize)]
struct Manifest<'a, A: Serialize> {
    subcommand: &'a str,
    seed: u64,
    version: &'a str,
    args: &'a A,
}

fn write_manifest<A: Serialize>(path: &Path, subcommand: &str, seed: u64, args: &A) -> Result<()> {
    let m = Manifest {
        subcommand,
        seed,
        version: env!("CARGO_PKG_VERSION"),
        args,
    };
    io::write_json(path, &m)?;
    Ok(())
}

fn prepare_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::VcTable(a) => vc_table(a),
        Command::PendulumTrain(a) => pendulum_train(a),
        Command::PendulumForecast(a) => pendulum_forecast(a),
        Command::PendulumDrift(a) => pendulum_drift(a),
        Command::PendulumHighdim(a) => pendulum_highdim(a),
        Command::PendulumNoise(a) => pendulum_noise(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Explain(a) => explain(a),
        Command::Predict(a) => predict(a),
    }
}

fn vc_table(a: VcTableArgs) -> Result<()> {
    let rows = vc_bounds::bound_table(a.h_max, a.eta)?;
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        prepare_dir(parent)?;
    }
    io::write_trace(&a.out, &rows)?;
    let mut manifest = a.out.clone().into_os_string();
    manifest.push(".manifest.json");
    write_manifest(Path::new(&manifest), "vc-table", a.seed, &a)
}

fn pendulum_train(a: PendulumTrainArgs) -> Result<()> {
    let out = &a.run.out;
    prepare_dir(out)?;
    let report = pendulum::run_base_experiment(&a.pendulum.config()?, &a.learner.config()?)?;
    io::write_trace(out.join("trace.csv"), &report.trace)?;
    io::write_json(out.join("report.json"), &report)?;
    io::save_snapshot(&report.learner, out.join("snapshot.json"))?;
    write_manifest(&out.join("manifest.json"), "pendulum-train", a.run.seed, &a)
}

fn pendulum_forecast(a: PendulumForecastArgs) -> Result<()> {
    let out = &a.run.out;
    prepare_dir(out)?;
    let report =
        pendulum::run_forecast_experiment(&a.pendulum.config()?, &a.learner.config()?, a.duration)?;
    io::write_trace(out.join("forecast_sympler.csv"), &report.sympler)?;
    io::write_trace(out.join("forecast_linearized.csv"), &report.linearized)?;
    io::write_json(out.join("report.json"), &report)?;
    io::save_snapshot(&report.learner, out.join("snapshot.json"))?;
    write_manifest(
        &out.join("manifest.json"),
        "pendulum-forecast",
        a.run.seed,
        &a,
    )
}

fn pendulum_drift(a: PendulumDriftArgs) -> Result<()> {
    let out = &a.run.out;
    prepare_dir(out)?;
    let cfg = LearnerConfig::default()
        .with_lambda(a.lambda)
        .with_selection(Selection::ErrorBased);
    let report = pendulum::run_concept_drift(&a.pendulum.config()?, &cfg, a.rod_after)?;
    io::write_trace(out.join("trace.csv"), &report.trace)?;
    io::write_json(out.join("report.json"), &report)?;
    io::save_snapshot(&report.learner, out.join("snapshot.json"))?;
    write_manifest(&out.join("manifest.json"), "pendulum-drift", a.run.seed, &a)
}

fn pendulum_highdim(a: PendulumHighdimArgs) -> Result<()> {
    let out = &a.run.out;
    prepare_dir(out)?;
    let report = pendulum::run_high_dim(
        &a.pendulum.config()?,
        &a.learner.config()?,
        &a.dims,
        a.reps,
        a.run.seed,
        a.jobs,
    )?;
    io::write_trace(out.join("cells.csv"), &report.cells)?;
    io::write_json(out.join("report.json"), &report)?;
    write_manifest(
        &out.join("manifest.json"),
        "pendulum-highdim",
        a.run.seed,
        &a,
    )
}

fn pendulum_noise(a: PendulumNoiseArgs) -> Result<()> {
    let out = &a.run.out;
    prepare_dir(out)?;
    let report = pendulum::run_noise_study(
        &a.pendulum.config()?,
        &a.noise,
        &a.lambdas,
        a.reps,
        a.run.seed,
        a.jobs,
    )?;
    io::write_trace(out.join("cells.csv"), &report.cells)?;
    io::write_json(out.join("report.json"), &report)?;
    write_manifest(&out.join("manifest.json"), "pendulum-noise", a.run.seed, &a)
}

#[derive(Serialize)]
struct BaselineReport {
    offline_ridge: eval::EvaluationReport,
    naive_prediction_rmse: f64,
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let out = &a.run.out;
    prepare_dir(out)?;
    let schema = a.data.schema()?;
    let raw = io::load_csv(&a.data.data, &schema)?;
    let stats = a
        .stats
        .as_ref()
        .map(|p| io::read_stats_csv(p, &schema))
        .transpose()?;
    let stream = match &stats {
        Some(s) => eval::standardize(&raw, s)?,
        None => raw,
    };
    let scale = stats
        .as_ref()
        .map_or(1.0, StandardizationStats::target_divisor);
    let split = SplitSpec::from_lengths(stream.len(), a.warmup, a.update)?;
    let cfg = a.learner.config()?;

    let run = eval::run_clear_protocol(&stream, &split, &cfg)?;
    io::write_report(out.join("report.json"), &run.report.scaled(scale))?;

    let offline = eval::run_offline_protocol(&stream, &split, cfg.lambda)?.scaled(scale);
    let naive = eval::naive_rmse(&stream, split.eval.clone())? * scale;
    io::write_json(
        out.join("baselines.json"),
        &BaselineReport {
            offline_ridge: offline,
            naive_prediction_rmse: naive,
        },
    )?;

    let unscale = |v: f64| match &stats {
        Some(s) => v * s.target_divisor() + s.means[s.means.len() - 1],
        None => v,
    };
    let rows: Vec<PredictionRow> = run
        .fitted
        .predictions
        .iter()
        .zip(&run.fitted.targets)
        .enumerate()
        .map(|(i, (p, t))| (i, if i < a.warmup { "warmup" } else { "update" }, *p, *t))
        .chain(
            run.evaluated
                .predictions
                .iter()
                .zip(&run.evaluated.targets)
                .enumerate()
                .map(|(i, (p, t))| (split.eval.start + i, "eval", *p, *t)),
        )
        .map(|(index, phase, p, t)| PredictionRow {
            index,
            phase,
            target: unscale(t),
            prediction: unscale(p),
        })
        .collect();
    io::write_trace(out.join("predictions.csv"), &rows)?;

    Snapshot::from_learner(&run.final_learner, stats.as_ref()).write(out.join("snapshot.json"))?;
    Snapshot::from_learner(&run.warmup_learner, stats.as_ref())
        .write(out.join("warmup_snapshot.json"))?;
    write_manifest(&out.join("manifest.json"), "evaluate", a.run.seed, &a)
}

#[derive(Serialize)]
struct ExplainReport {
    query: Vec<f64>,
    model_index: usize,
    point: Vec<f64>,
    /// Slopes followed by the bias.
    weights: Vec<f64>,
    /// Distance in the space the learner selects in.
    distance: f64,
    original_units: bool,
}

fn explain(a: ExplainArgs) -> Result<()> {
    let snap = Snapshot::read(&a.snapshot)?;
    let learner = snap.to_learner()?;
    let query = match snap.stats() {
        Some(s) => s.scale_point(&a.x),
        None => a.x.clone(),
    };
    let e = learner.explain(&query)?;
    let (point, weights) = match snap.stats() {
        Some(s) => (s.unscale_point(&e.point), s.unscale_weights(&e.weights)),
        None => (e.point, e.weights),
    };
    let report = ExplainReport {
        query: a.x,
        model_index: e.model_index,
        point,
        weights,
        distance: e.distance,
        original_units: snap.stats().is_some(),
    };
    match &a.out {
        Some(p) => io::write_json(p, &report)?,
        None => {
            let mut stdout = std::io::stdout().lock();
            writeln!(stdout, "{}", serde_json::to_string_pretty(&report)?)?;
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct PredictionOut {
    index: usize,
    prediction: Option<f64>,
}

impl io::TraceRecord for PredictionOut {
    fn header() -> &'static [&'static str] {
        &["index", "prediction"]
    }

    fn fields(&self) -> Vec<String> {
        vec![
            self.index.to_string(),
            self.prediction.map(|p| p.to_string()).unwrap_or_default(),
        ]
    }
}

fn predict(a: PredictArgs) -> Result<()> {
    let snap = Snapshot::read(&a.snapshot)?;
    let learner = snap.to_learner()?;
    let n = learner.dim();
    let features = match &a.data.features {
        Some(f) => f.clone(),
        None => DatasetSchema::infer(&a.data.data, None, a.data.timestamp)?
            .columns()
            .into_iter()
            .take(n)
            .collect(),
    };
    if features.len() != n {
        bail!("snapshot expects {n} features, got {}", features.len());
    }
    let x = read_features(&a.data.data, &features, a.data.timestamp)?;
    let mut rows = Vec::with_capacity(x.len());
    for (index, row) in x.into_iter().enumerate() {
        let q = match snap.stats() {
            Some(s) => s.scale_point(&row),
            None => row,
        };
        let p = learner.predict(&q)?.map(|v| match snap.stats() {
            Some(s) => v * s.target_divisor() + s.means[s.means.len() - 1],
            None => v,
        });
        rows.push(PredictionOut {
            index,
            prediction: p,
        });
    }
    io::write_trace(&a.out, &rows)?;
    Ok(())
}

/// Reads only feature columns, so the file may lack a target column.
fn read_features(path: &Path, features: &[String], timestamp: bool) -> Result<Vec<Vec<f64>>> {
    // Reuse the sample loader by treating the first feature as a dummy target.
    let mut schema = DatasetSchema::new(&[], &features[0]);
    schema.has_timestamp = timestamp;
    schema.feature_columns = features[1..].to_vec();
    let samples = io::load_csv(path, &schema)?;
    Ok(samples
        .into_iter()
        .map(|s| {
            let mut x = vec![s.y];
            x.extend(s.x);
            x
        })
        .collect())
}
