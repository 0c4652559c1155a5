//! The evolving committee of local linear models.
//!
//! Each step compares the committee's squared error with the naïve delayed
//! predictor. The first sample on which the committee loses opens a novelty
//! buffer; the buffer keeps growing while the committee's cumulative average
//! error over the buffered interval stays above the baseline's, and is
//! discarded as soon as it does not. A full buffer is turned into a new local
//! model by ridge regression, with the buffer input mean as its
//! approximation point. Models are never updated or removed afterwards.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::cholesky_solve;
use crate::vc_bounds::buffer_size;

/// Default L2 regularization strength.
pub const DEFAULT_LAMBDA: f64 = 1e-6;
/// Default decay rate for aggregated selection.
pub const DEFAULT_SIGMA: f64 = 1.0;

/// One observation of the stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub x: Vec<f64>,
    pub y: f64,
    pub index: u64,
}

impl Sample {
    pub fn new(x: Vec<f64>, y: f64, index: u64) -> Self {
        Self { x, y, index }
    }
}

/// A single hidden unit: an affine map valid around its approximation point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalModel {
    /// `n` slopes followed by the bias.
    pub weights: Vec<f64>,
    pub point: Vec<f64>,
    pub created_at: u64,
    pub lambda_used: f64,
}

impl LocalModel {
    pub fn dim(&self) -> usize {
        self.point.len()
    }

    pub fn slopes(&self) -> &[f64] {
        &self.weights[..self.dim()]
    }

    pub fn bias(&self) -> f64 {
        self.weights[self.dim()]
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim());
        let mut acc = self.bias();
        for (w, xi) in self.slopes().iter().zip(x) {
            acc += w * xi;
        }
        acc
    }

    pub fn distance(&self, x: &[f64]) -> f64 {
        euclidean(x, &self.point)
    }
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(u, v)| (u - v) * (u - v))
        .sum::<f64>()
        .sqrt()
}

fn check_finite(v: &[f64], what: &'static str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

/// Ridge fit over `samples` with a trailing bias column; the bias is
/// regularized along with the slopes.
///
/// Solves `(XᵀX + λI) w = XᵀY` directly. The approximation point is the mean
/// of the sample inputs and `created_at` is the index of the last sample.
pub fn fit_local_model(samples: &[Sample], lambda: f64) -> Result<LocalModel> {
    let first = samples.first().ok_or(Error::Empty("local model samples"))?;
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "lambda must be positive, got {lambda}"
        )));
    }
    let n = first.x.len();
    let d = n + 1;
    let mut gram = vec![0.0; d * d];
    let mut rhs = vec![0.0; d];
    let mut point = vec![0.0; n];
    let mut row = vec![1.0; d];

    for s in samples {
        if s.x.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: s.x.len(),
            });
        }
        check_finite(&s.x, "sample input")?;
        if !s.y.is_finite() {
            return Err(Error::NonFinite("sample target"));
        }
        row[..n].copy_from_slice(&s.x);
        for i in 0..d {
            rhs[i] += row[i] * s.y;
            for j in 0..=i {
                gram[i * d + j] += row[i] * row[j];
            }
        }
        for (p, xi) in point.iter_mut().zip(&s.x) {
            *p += xi;
        }
    }
    for i in 0..d {
        for j in 0..i {
            gram[j * d + i] = gram[i * d + j];
        }
        gram[i * d + i] += lambda;
    }
    cholesky_solve(&mut gram, &mut rhs)?;
    check_finite(&rhs, "fitted weights")?;

    let m = samples.len() as f64;
    point.iter_mut().for_each(|p| *p /= m);

    Ok(LocalModel {
        weights: rhs,
        point,
        created_at: samples.last().map(|s| s.index).unwrap_or(0),
        lambda_used: lambda,
    })
}

/// How the committee turns local models into one prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    /// Winner-take-all on Euclidean distance to the approximation points.
    Nearest,
    /// Convex combination with weights `∝ exp(-σ·d)`.
    Aggregated,
    /// The model with the smallest absolute error on the latest sample.
    ErrorBased,
}

impl Selection {
    pub fn as_str(self) -> &'static str {
        match self {
            Selection::Nearest => "nearest",
            Selection::Aggregated => "aggregated",
            Selection::ErrorBased => "error_based",
        }
    }
}

impl fmt::Display for Selection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Selection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "nearest" => Ok(Selection::Nearest),
            "aggregated" => Ok(Selection::Aggregated),
            "error_based" | "errorbased" => Ok(Selection::ErrorBased),
            other => Err(Error::InvalidArgument(format!(
                "unknown selection mode `{other}` (expected nearest, aggregated or error_based)"
            ))),
        }
    }
}

/// When the current sample's errors enter the buffer sums relative to the
/// discard test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscardOrder {
    /// Accumulate the current errors, then compare averages.
    #[default]
    AddThenCompare,
    /// Compare the averages of the already buffered interval, then accumulate.
    CompareThenAdd,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearnerConfig {
    pub lambda: f64,
    pub selection: Selection,
    pub sigma: f64,
    #[serde(default)]
    pub discard_order: DiscardOrder,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            lambda: DEFAULT_LAMBDA,
            selection: Selection::Nearest,
            sigma: DEFAULT_SIGMA,
            discard_order: DiscardOrder::AddThenCompare,
        }
    }
}

impl LearnerConfig {
    pub fn with_selection(mut self, selection: Selection) -> Self {
        self.selection = selection;
        self
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn with_sigma(mut self, sigma: f64) -> Self {
        self.sigma = sigma;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "lambda must be positive, got {}",
                self.lambda
            )));
        }
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "sigma must be positive, got {}",
                self.sigma
            )));
        }
        Ok(())
    }
}

/// Candidate training set for the next local model.
#[derive(Debug, Clone, PartialEq)]
pub struct NoveltyBuffer {
    samples: Vec<Sample>,
    sum_net_err: f64,
    sum_base_err: f64,
    capacity: usize,
}

impl NoveltyBuffer {
    fn new(capacity: usize) -> Self {
        Self {
            samples: Vec::with_capacity(capacity),
            sum_net_err: 0.0,
            sum_base_err: 0.0,
            capacity,
        }
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn sum_net_err(&self) -> f64 {
        self.sum_net_err
    }

    pub fn sum_base_err(&self) -> f64 {
        self.sum_base_err
    }

    fn clear(&mut self) {
        self.samples.clear();
        self.sum_net_err = 0.0;
        self.sum_base_err = 0.0;
    }

    // Both averages share the buffered count, so comparing sums is enough.
    fn network_still_worse(&self) -> bool {
        self.sum_net_err > self.sum_base_err
    }
}

/// What happened during one call to [`SymplerLearner::step`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    /// Committee prediction made before the target was revealed.
    pub prediction: Option<f64>,
    /// Naïve prediction (previous target).
    pub baseline: Option<f64>,
    pub model_added: bool,
    pub buffer_len: usize,
}

/// The local model that answers a query, in a form suitable for reporting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub model_index: usize,
    pub point: Vec<f64>,
    pub weights: Vec<f64>,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SymplerLearner {
    n: usize,
    models: Vec<LocalModel>,
    buffer: NoveltyBuffer,
    config: LearnerConfig,
    prev_y: Option<f64>,
    last_sample: Option<Sample>,
    seen: u64,
}

impl SymplerLearner {
    /// Fresh learner over `n` input features.
    pub fn new(n: usize, config: LearnerConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            n,
            models: Vec::new(),
            buffer: NoveltyBuffer::new(buffer_size(n)),
            config,
            prev_y: None,
            last_sample: None,
            seen: 0,
        })
    }

    /// Rebuilds a frozen learner from stored models.
    pub fn from_models(
        n: usize,
        config: LearnerConfig,
        models: Vec<LocalModel>,
        last_sample: Option<Sample>,
    ) -> Result<Self> {
        let mut learner = Self::new(n, config)?;
        for m in &models {
            if m.point.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: m.point.len(),
                });
            }
            if m.weights.len() != n + 1 {
                return Err(Error::DimensionMismatch {
                    expected: n + 1,
                    got: m.weights.len(),
                });
            }
            check_finite(&m.weights, "model weights")?;
            check_finite(&m.point, "model point")?;
        }
        if let Some(s) = &last_sample {
            learner.check_dim(&s.x)?;
        }
        learner.models = models;
        learner.last_sample = last_sample;
        Ok(learner)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn config(&self) -> &LearnerConfig {
        &self.config
    }

    pub fn models(&self) -> &[LocalModel] {
        &self.models
    }

    pub fn model_count(&self) -> usize {
        self.models.len()
    }

    pub fn buffer(&self) -> &NoveltyBuffer {
        &self.buffer
    }

    pub fn last_sample(&self) -> Option<&Sample> {
        self.last_sample.as_ref()
    }

    /// Number of samples consumed by [`step`](Self::step).
    pub fn samples_seen(&self) -> u64 {
        self.seen
    }

    /// Keeps only the first `k` models.
    pub fn truncate_models(&mut self, k: usize) {
        self.models.truncate(k);
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Index of the model whose point is closest to `x`; ties go to the
    /// oldest model.
    pub fn nearest_index(&self, x: &[f64]) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for (i, m) in self.models.iter().enumerate() {
            let d = m.distance(x);
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((i, d));
            }
        }
        best
    }

    /// Index of the model with the smallest absolute error on the latest
    /// observed sample; `None` before any sample has been observed.
    fn error_based_index(&self) -> Option<usize> {
        let last = self.last_sample.as_ref()?;
        let mut best: Option<(usize, f64)> = None;
        for (i, m) in self.models.iter().enumerate() {
            let e = (last.y - m.predict(&last.x)).abs();
            if best.is_none_or(|(_, be)| e < be) {
                best = Some((i, e));
            }
        }
        best.map(|(i, _)| i)
    }

    /// Normalized aggregation weights `exp(-σ·dᵢ) / Σⱼ exp(-σ·dⱼ)`.
    pub fn aggregation_weights(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        let dists: Vec<f64> = self.models.iter().map(|m| m.distance(x)).collect();
        let d_min = dists.iter().copied().fold(f64::INFINITY, f64::min);
        // Shifting by the minimum distance cancels in the normalization.
        let raw: Vec<f64> = dists
            .iter()
            .map(|d| (-self.config.sigma * (d - d_min)).exp())
            .collect();
        let total: f64 = raw.iter().sum();
        Ok(raw.into_iter().map(|r| r / total).collect())
    }

    /// Index of the model that would answer `x` under the configured mode.
    /// Aggregated mode reports its heaviest (nearest) member.
    pub fn selected_index(&self, x: &[f64]) -> Result<Option<usize>> {
        self.check_dim(x)?;
        Ok(match self.config.selection {
            Selection::Nearest | Selection::Aggregated => self.nearest_index(x).map(|(i, _)| i),
            Selection::ErrorBased => self
                .error_based_index()
                .or_else(|| self.nearest_index(x).map(|(i, _)| i)),
        })
    }

    /// Committee output for `x`, or `None` while the committee is empty.
    pub fn predict(&self, x: &[f64]) -> Result<Option<f64>> {
        self.check_dim(x)?;
        if self.models.is_empty() {
            return Ok(None);
        }
        match self.config.selection {
            Selection::Aggregated => {
                let alphas = self.aggregation_weights(x)?;
                let out = self
                    .models
                    .iter()
                    .zip(&alphas)
                    .map(|(m, a)| a * m.predict(x))
                    .sum();
                Ok(Some(out))
            }
            _ => Ok(self.selected_index(x)?.map(|i| self.models[i].predict(x))),
        }
    }

    /// Describes the model answering `x`.
    pub fn explain(&self, x: &[f64]) -> Result<Explanation> {
        let i = self.selected_index(x)?.ok_or(Error::NoModels)?;
        let m = &self.models[i];
        Ok(Explanation {
            model_index: i,
            point: m.point.clone(),
            weights: m.weights.clone(),
            distance: m.distance(x),
        })
    }

    /// Records `(x, y)` as the latest observation without learning from it.
    /// Only error-based selection depends on this state.
    pub fn observe(&mut self, x: &[f64], y: f64) -> Result<()> {
        self.check_dim(x)?;
        self.last_sample = Some(Sample::new(x.to_vec(), y, self.seen));
        Ok(())
    }

    /// Predicts, reveals `y`, and updates buffer and committee.
    pub fn step(&mut self, x: &[f64], y: f64) -> Result<StepOutcome> {
        self.check_dim(x)?;
        check_finite(x, "input")?;
        if !y.is_finite() {
            return Err(Error::NonFinite("target"));
        }
        let index = self.seen;
        self.seen += 1;

        let prediction = self.predict(x)?;
        let baseline = self.prev_y;
        let mut model_added = false;

        // The very first sample only seeds the naïve predictor.
        if let Some(base) = baseline {
            let e_base = (y - base).powi(2);
            let e_net = prediction.map(|p| (y - p).powi(2));
            // Without any model the network always loses; e_base + 1 keeps the
            // running sums finite.
            let net_worse = e_net.is_none_or(|e| e > e_base);
            let e_net_stored = e_net.unwrap_or(e_base + 1.0);
            let sample = Sample::new(x.to_vec(), y, index);

            if self.buffer.is_empty() {
                if net_worse {
                    self.buffer.sum_net_err = e_net_stored;
                    self.buffer.sum_base_err = e_base;
                    self.buffer.samples.push(sample);
                }
            } else {
                match self.config.discard_order {
                    DiscardOrder::AddThenCompare => {
                        self.buffer.sum_net_err += e_net_stored;
                        self.buffer.sum_base_err += e_base;
                        if self.buffer.network_still_worse() {
                            self.buffer.samples.push(sample);
                        } else {
                            self.buffer.clear();
                        }
                    }
                    DiscardOrder::CompareThenAdd => {
                        if self.buffer.network_still_worse() {
                            self.buffer.sum_net_err += e_net_stored;
                            self.buffer.sum_base_err += e_base;
                            self.buffer.samples.push(sample);
                        } else {
                            self.buffer.clear();
                        }
                    }
                }
            }

            if self.buffer.len() >= self.buffer.capacity {
                let model = fit_local_model(&self.buffer.samples, self.config.lambda)?;
                self.models.push(model);
                self.buffer.clear();
                model_added = true;
            }
        }

        self.prev_y = Some(y);
        self.last_sample = Some(Sample::new(x.to_vec(), y, index));

        Ok(StepOutcome {
            prediction,
            baseline,
            model_added,
            buffer_len: self.buffer.len(),
        })
    }
}
