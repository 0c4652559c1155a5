//! CSV ingestion, standardization statistics, model snapshots and traces.
//!
//! Reals are written with Rust's shortest round-trip formatting, so every
//! finite `f64` parses back to the identical value.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::EvaluationReport;
use crate::learner::{LearnerConfig, LocalModel, Sample, Selection, SymplerLearner};
use crate::pendulum::{ForecastPoint, HighDimCell, NoiseCell, StepTrace};
use crate::vc_bounds::BoundSolution;

/// Current snapshot format version.
pub const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSchema {
    pub feature_columns: Vec<String>,
    pub target_column: String,
    /// The first column is a timestamp and is never read as a feature.
    pub has_timestamp: bool,
}

impl DatasetSchema {
    pub fn new(features: &[&str], target: &str) -> Self {
        Self {
            feature_columns: features.iter().map(|s| s.to_string()).collect(),
            target_column: target.to_string(),
            has_timestamp: false,
        }
    }

    /// Uses every column except the target (and the timestamp column, if
    /// any) as a feature.
    pub fn infer(
        path: impl AsRef<Path>,
        target: Option<&str>,
        has_timestamp: bool,
    ) -> Result<Self> {
        let header = read_header(path.as_ref())?;
        let skip = usize::from(has_timestamp);
        let cols: Vec<String> = header.into_iter().skip(skip).collect();
        let target = match target {
            Some(t) => t.to_string(),
            None => cols.last().cloned().ok_or(Error::Empty("CSV header"))?,
        };
        Ok(Self {
            feature_columns: cols.into_iter().filter(|c| *c != target).collect(),
            target_column: target,
            has_timestamp,
        })
    }

    /// Feature names followed by the target name.
    pub fn columns(&self) -> Vec<String> {
        let mut c = self.feature_columns.clone();
        c.push(self.target_column.clone());
        c
    }

    fn validate(&self) -> Result<()> {
        if self.feature_columns.contains(&self.target_column) {
            return Err(Error::InvalidArgument(format!(
                "target `{}` is also listed as a feature",
                self.target_column
            )));
        }
        Ok(())
    }
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<File> {
    File::create(path).map_err(|e| Error::io(path, e))
}

fn read_header(path: &Path) -> Result<Vec<String>> {
    let mut rdr = csv::Reader::from_reader(BufReader::new(open(path)?));
    Ok(rdr
        .headers()?
        .iter()
        .map(|h| h.trim().to_string())
        .collect())
}

fn column_position(header: &[String], name: &str, skip: usize) -> Result<usize> {
    header
        .iter()
        .skip(skip)
        .position(|h| h == name)
        .map(|p| p + skip)
        .ok_or_else(|| Error::MissingColumn(name.to_string()))
}

/// Reads samples in file order. Rows are numbered from 1 after the header.
pub fn load_csv(path: impl AsRef<Path>, schema: &DatasetSchema) -> Result<Vec<Sample>> {
    schema.validate()?;
    let path = path.as_ref();
    let mut rdr = csv::Reader::from_reader(BufReader::new(open(path)?));
    let header: Vec<String> = rdr
        .headers()?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let skip = usize::from(schema.has_timestamp);
    let feature_pos = schema
        .feature_columns
        .iter()
        .map(|c| column_position(&header, c, skip))
        .collect::<Result<Vec<_>>>()?;
    let target_pos = column_position(&header, &schema.target_column, skip)?;

    let mut samples = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        let cell = |pos: usize| -> Result<f64> {
            let raw = rec.get(pos).unwrap_or("").trim();
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Parse {
                    row,
                    column: header[pos].clone(),
                    value: raw.to_string(),
                })
        };
        let x = feature_pos
            .iter()
            .map(|&p| cell(p))
            .collect::<Result<Vec<_>>>()?;
        let y = cell(target_pos)?;
        samples.push(Sample::new(x, y, i as u64));
    }
    Ok(samples)
}

/// Writes samples with the schema's feature and target names as header.
pub fn write_samples_csv(
    path: impl AsRef<Path>,
    samples: &[Sample],
    schema: &DatasetSchema,
) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_writer(BufWriter::new(create(path)?));
    w.write_record(schema.columns())?;
    for s in samples {
        let mut row: Vec<String> = s.x.iter().map(|v| v.to_string()).collect();
        row.push(s.y.to_string());
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Per-column mean and standard deviation; features first, target last.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizationStats {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl StandardizationStats {
    /// Divisor for column `j`; zero deviations are clamped to 1.
    pub fn divisor(&self, j: usize) -> f64 {
        let s = self.stds[j];
        if s == 0.0 {
            1.0
        } else {
            s
        }
    }

    pub fn target_divisor(&self) -> f64 {
        self.divisor(self.stds.len() - 1)
    }

    /// Maps a point from standardized feature space back to data units.
    pub fn unscale_point(&self, p: &[f64]) -> Vec<f64> {
        p.iter()
            .enumerate()
            .map(|(j, v)| v * self.divisor(j) + self.means[j])
            .collect()
    }

    /// Maps a point from data units into standardized feature space.
    pub fn scale_point(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(j, v)| (v - self.means[j]) / self.divisor(j))
            .collect()
    }

    /// Rewrites affine weights learned on standardized data (slopes then
    /// bias) as weights on the original units.
    pub fn unscale_weights(&self, w: &[f64]) -> Vec<f64> {
        let n = w.len() - 1;
        let sy = self.divisor(n);
        let my = self.means[n];
        let mut out: Vec<f64> = (0..n).map(|j| w[j] * sy / self.divisor(j)).collect();
        let shift: f64 = (0..n).map(|j| w[j] * self.means[j] / self.divisor(j)).sum();
        out.push(my + sy * (w[n] - shift));
        out
    }
}

/// Population mean and standard deviation of every feature and the target.
pub fn compute_stats(samples: &[Sample]) -> Result<StandardizationStats> {
    let first = samples
        .first()
        .ok_or(Error::Empty("samples for statistics"))?;
    let cols = first.x.len() + 1;
    let value = |s: &Sample, j: usize| if j + 1 == cols { s.y } else { s.x[j] };
    if let Some(s) = samples.iter().find(|s| s.x.len() + 1 != cols) {
        return Err(Error::DimensionMismatch {
            expected: cols - 1,
            got: s.x.len(),
        });
    }
    let m = samples.len() as f64;
    let means: Vec<f64> = (0..cols)
        .map(|j| samples.iter().map(|s| value(s, j)).sum::<f64>() / m)
        .collect();
    let stds = (0..cols)
        .map(|j| {
            let var = samples
                .iter()
                .map(|s| (value(s, j) - means[j]).powi(2))
                .sum::<f64>()
                / m;
            var.sqrt()
        })
        .collect();
    Ok(StandardizationStats { means, stds })
}

/// Writes stats as `column,mean,std` rows in schema order.
pub fn write_stats_csv(
    path: impl AsRef<Path>,
    stats: &StandardizationStats,
    schema: &DatasetSchema,
) -> Result<()> {
    let path = path.as_ref();
    let cols = schema.columns();
    if cols.len() != stats.means.len() {
        return Err(Error::DimensionMismatch {
            expected: cols.len(),
            got: stats.means.len(),
        });
    }
    let mut w = csv::Writer::from_writer(BufWriter::new(create(path)?));
    w.write_record(["column", "mean", "std"])?;
    for (j, c) in cols.iter().enumerate() {
        w.write_record([
            c.clone(),
            stats.means[j].to_string(),
            stats.stds[j].to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Reads a `column,mean,std` file, picking rows in schema order.
pub fn read_stats_csv(
    path: impl AsRef<Path>,
    schema: &DatasetSchema,
) -> Result<StandardizationStats> {
    #[derive(Deserialize)]
    struct Row {
        column: String,
        mean: f64,
        std: f64,
    }
    let path = path.as_ref();
    let mut rdr = csv::Reader::from_reader(BufReader::new(open(path)?));
    let rows: Vec<Row> = rdr.deserialize().collect::<std::result::Result<_, _>>()?;
    let mut stats = StandardizationStats {
        means: Vec::new(),
        stds: Vec::new(),
    };
    for c in schema.columns() {
        let r = rows
            .iter()
            .find(|r| r.column.trim() == c)
            .ok_or_else(|| Error::MissingColumn(c.clone()))?;
        if !(r.std >= 0.0) || !r.mean.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "bad statistics for column `{c}`"
            )));
        }
        stats.means.push(r.mean);
        stats.stds.push(r.std);
    }
    Ok(stats)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SnapshotModel {
    point: Vec<f64>,
    weights: Vec<f64>,
    created_at: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SnapshotSample {
    x: Vec<f64>,
    y: f64,
}

/// On-disk form of a frozen learner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    version: u32,
    n: usize,
    lambda: f64,
    selection: Selection,
    sigma: f64,
    models: Vec<SnapshotModel>,
    /// Latest observation; only error-based selection reads it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    last_sample: Option<SnapshotSample>,
    /// Statistics used to standardize the training data, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    stats: Option<StandardizationStats>,
}

impl Snapshot {
    pub fn from_learner(learner: &SymplerLearner, stats: Option<&StandardizationStats>) -> Self {
        let cfg = learner.config();
        Self {
            version: SNAPSHOT_VERSION,
            n: learner.dim(),
            lambda: cfg.lambda,
            selection: cfg.selection,
            sigma: cfg.sigma,
            models: learner
                .models()
                .iter()
                .map(|m| SnapshotModel {
                    point: m.point.clone(),
                    weights: m.weights.clone(),
                    created_at: m.created_at,
                })
                .collect(),
            last_sample: learner.last_sample().map(|s| SnapshotSample {
                x: s.x.clone(),
                y: s.y,
            }),
            stats: stats.cloned(),
        }
    }

    pub fn stats(&self) -> Option<&StandardizationStats> {
        self.stats.as_ref()
    }

    pub fn to_learner(&self) -> Result<SymplerLearner> {
        if self.version != SNAPSHOT_VERSION {
            return Err(Error::SnapshotVersion {
                found: self.version,
                expected: SNAPSHOT_VERSION,
            });
        }
        let cfg = LearnerConfig {
            lambda: self.lambda,
            selection: self.selection,
            sigma: self.sigma,
            ..LearnerConfig::default()
        };
        let models = self
            .models
            .iter()
            .map(|m| LocalModel {
                weights: m.weights.clone(),
                point: m.point.clone(),
                created_at: m.created_at,
                lambda_used: self.lambda,
            })
            .collect();
        let last = self
            .last_sample
            .as_ref()
            .map(|s| Sample::new(s.x.clone(), s.y, 0));
        SymplerLearner::from_models(self.n, cfg, models, last)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = BufWriter::new(create(path)?);
        serde_json::to_writer_pretty(&mut w, self)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let snap: Self = serde_json::from_reader(BufReader::new(open(path)?))?;
        // Validate eagerly so a bad file never yields a partial learner.
        snap.to_learner()?;
        Ok(snap)
    }
}

pub fn save_snapshot(learner: &SymplerLearner, path: impl AsRef<Path>) -> Result<()> {
    Snapshot::from_learner(learner, None).write(path)
}

pub fn load_snapshot(path: impl AsRef<Path>) -> Result<SymplerLearner> {
    Snapshot::read(path)?.to_learner()
}

/// Pretty-printed JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    let mut w = BufWriter::new(create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// A row type with a fixed CSV header.
pub trait TraceRecord {
    fn header() -> &'static [&'static str];
    fn fields(&self) -> Vec<String>;
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_trace<R: TraceRecord>(path: impl AsRef<Path>, records: &[R]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_writer(BufWriter::new(create(path)?));
    w.write_record(R::header())?;
    for r in records {
        w.write_record(r.fields())?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

impl TraceRecord for StepTrace {
    fn header() -> &'static [&'static str] {
        &["t", "theta", "err_sq", "model_count"]
    }

    fn fields(&self) -> Vec<String> {
        vec![
            self.t.to_string(),
            self.theta.to_string(),
            opt(self.sq_err),
            self.model_count.to_string(),
        ]
    }
}

impl TraceRecord for ForecastPoint {
    fn header() -> &'static [&'static str] {
        &["t", "theta_hat", "omega_hat", "theta_true"]
    }

    fn fields(&self) -> Vec<String> {
        vec![
            self.t.to_string(),
            self.theta_hat.to_string(),
            self.omega_hat.to_string(),
            self.theta_true.to_string(),
        ]
    }
}

impl TraceRecord for BoundSolution {
    fn header() -> &'static [&'static str] {
        &["h", "l_star", "l_rule"]
    }

    fn fields(&self) -> Vec<String> {
        vec![
            self.h.to_string(),
            self.l_star.to_string(),
            self.l_rule.to_string(),
        ]
    }
}

impl TraceRecord for HighDimCell {
    fn header() -> &'static [&'static str] {
        &[
            "extra_dims",
            "mean_model_count",
            "std_model_count",
            "mean_test_mse",
            "std_test_mse",
        ]
    }

    fn fields(&self) -> Vec<String> {
        vec![
            self.extra_dims.to_string(),
            self.mean_model_count.to_string(),
            self.std_model_count.to_string(),
            self.mean_test_mse.to_string(),
            self.std_test_mse.to_string(),
        ]
    }
}

impl TraceRecord for NoiseCell {
    fn header() -> &'static [&'static str] {
        &[
            "noise_sigma",
            "lambda",
            "mean_distance",
            "std_distance",
            "mean_model_count",
        ]
    }

    fn fields(&self) -> Vec<String> {
        vec![
            self.noise_sigma.to_string(),
            self.lambda.to_string(),
            self.mean_distance.to_string(),
            self.std_distance.to_string(),
            self.mean_model_count.to_string(),
        ]
    }
}

/// One frozen prediction in an evaluation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub index: usize,
    pub phase: &'static str,
    pub target: f64,
    pub prediction: f64,
}

impl TraceRecord for PredictionRow {
    fn header() -> &'static [&'static str] {
        &["index", "phase", "target", "prediction"]
    }

    fn fields(&self) -> Vec<String> {
        vec![
            self.index.to_string(),
            self.phase.to_string(),
            self.target.to_string(),
            self.prediction.to_string(),
        ]
    }
}

pub fn write_report(path: impl AsRef<Path>, report: &EvaluationReport) -> Result<()> {
    write_json(path, report)
}
