//! Warmup / update / evaluation protocol for continual learners.
//!
//! The stream is cut into three consecutive phases. The learner is trained
//! online on warmup, frozen and replayed over warmup (`L_w^w`), trained on
//! update, frozen and replayed over warmup again (`L_w^u`) and over
//! warmup+update (fitting error), then replayed over the evaluation phase
//! (prediction error). No replay ever calls `step`.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::baselines::OfflineRidge;
use crate::error::{Error, Result};
use crate::io::StandardizationStats;
use crate::learner::{LearnerConfig, Sample, SymplerLearner};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub warmup: Range<usize>,
    pub update: Range<usize>,
    pub eval: Range<usize>,
}

impl SplitSpec {
    pub fn new(warmup: Range<usize>, update: Range<usize>, eval: Range<usize>) -> Result<Self> {
        let s = Self {
            warmup,
            update,
            eval,
        };
        s.validate()?;
        Ok(s)
    }

    /// `warmup` samples, then `update` samples, then the rest of `total`.
    pub fn from_lengths(total: usize, warmup: usize, update: usize) -> Result<Self> {
        if warmup + update >= total {
            return Err(Error::InvalidArgument(format!(
                "warmup ({warmup}) + update ({update}) leaves no evaluation data out of {total}"
            )));
        }
        Self::new(0..warmup, warmup..warmup + update, warmup + update..total)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.warmup.start == 0
            && !self.warmup.is_empty()
            && !self.update.is_empty()
            && !self.eval.is_empty()
            && self.warmup.end == self.update.start
            && self.update.end == self.eval.start;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "phases must be non-empty, contiguous and ordered from 0: {:?} {:?} {:?}",
                self.warmup, self.update, self.eval
            )))
        }
    }

    fn check_covers(&self, len: usize) -> Result<()> {
        if self.eval.end != len {
            return Err(Error::InvalidArgument(format!(
                "split ends at {} but the stream has {len} samples",
                self.eval.end
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub fitting_rmse: f64,
    pub prediction_rmse: f64,
    pub forgetting_ratio: f64,
    pub loss_ww: f64,
    pub loss_wu: f64,
    pub model_count: usize,
    /// Replayed inputs for which the committee had no prediction and the
    /// naïve value was used instead.
    pub sentinel_substitutions: usize,
}

impl EvaluationReport {
    /// Multiplies every RMSE by `scale`, e.g. to undo target standardization.
    /// The forgetting ratio is scale invariant.
    pub fn scaled(mut self, scale: f64) -> Self {
        let s = scale.abs();
        self.fitting_rmse *= s;
        self.prediction_rmse *= s;
        self.loss_ww *= s;
        self.loss_wu *= s;
        self
    }
}

pub fn rmse(predictions: &[f64], targets: &[f64]) -> Result<f64> {
    if predictions.len() != targets.len() {
        return Err(Error::DimensionMismatch {
            expected: targets.len(),
            got: predictions.len(),
        });
    }
    if targets.is_empty() {
        return Err(Error::Empty("rmse input"));
    }
    let sum: f64 = predictions
        .iter()
        .zip(targets)
        .map(|(p, t)| (p - t).powi(2))
        .sum();
    Ok((sum / targets.len() as f64).sqrt())
}

/// `max(0, loss_wu - loss_ww) / loss_ww`, and 0 when `loss_ww` is 0.
pub fn forgetting_ratio(loss_ww: f64, loss_wu: f64) -> f64 {
    if loss_ww == 0.0 {
        0.0
    } else {
        (loss_wu - loss_ww).max(0.0) / loss_ww
    }
}

/// Predictions of a frozen learner over `stream[range]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Replay {
    pub predictions: Vec<f64>,
    pub targets: Vec<f64>,
    pub substitutions: usize,
}

impl Replay {
    pub fn rmse(&self) -> Result<f64> {
        rmse(&self.predictions, &self.targets)
    }
}

/// Replays a copy of `learner` over `stream[range]` without training. Empty
/// committees fall back to the previous target (0 at the stream start).
pub fn frozen_replay(
    learner: &SymplerLearner,
    stream: &[Sample],
    range: Range<usize>,
) -> Result<Replay> {
    let mut frozen = learner.clone();
    let mut predictions = Vec::with_capacity(range.len());
    let mut targets = Vec::with_capacity(range.len());
    let mut substitutions = 0;
    for i in range {
        let s = &stream[i];
        let p = match frozen.predict(&s.x)? {
            Some(p) => p,
            None => {
                substitutions += 1;
                if i > 0 {
                    stream[i - 1].y
                } else {
                    0.0
                }
            }
        };
        predictions.push(p);
        targets.push(s.y);
        frozen.observe(&s.x, s.y)?;
    }
    Ok(Replay {
        predictions,
        targets,
        substitutions,
    })
}

/// Everything a protocol run produces.
#[derive(Debug, Clone)]
pub struct ClearRun {
    pub report: EvaluationReport,
    /// Learner frozen right after the warmup phase.
    pub warmup_learner: SymplerLearner,
    /// Learner frozen after the update phase.
    pub final_learner: SymplerLearner,
    /// Frozen replay of the final learner over warmup+update.
    pub fitted: Replay,
    /// Frozen replay of the final learner over the evaluation phase.
    pub evaluated: Replay,
}

pub fn run_clear_protocol(
    stream: &[Sample],
    split: &SplitSpec,
    learner_cfg: &LearnerConfig,
) -> Result<ClearRun> {
    split.validate()?;
    split.check_covers(stream.len())?;
    let n = stream[0].x.len();
    let mut learner = SymplerLearner::new(n, *learner_cfg)?;

    for s in &stream[split.warmup.clone()] {
        learner.step(&s.x, s.y)?;
    }
    let warmup_learner = learner.clone();
    let ww = frozen_replay(&warmup_learner, stream, split.warmup.clone())?;

    for s in &stream[split.update.clone()] {
        learner.step(&s.x, s.y)?;
    }
    let wu = frozen_replay(&learner, stream, split.warmup.clone())?;
    let fitted = frozen_replay(&learner, stream, split.warmup.start..split.update.end)?;
    let evaluated = frozen_replay(&learner, stream, split.eval.clone())?;

    let loss_ww = ww.rmse()?;
    let loss_wu = wu.rmse()?;
    let report = EvaluationReport {
        fitting_rmse: fitted.rmse()?,
        prediction_rmse: evaluated.rmse()?,
        forgetting_ratio: forgetting_ratio(loss_ww, loss_wu),
        loss_ww,
        loss_wu,
        model_count: learner.model_count(),
        sentinel_substitutions: ww.substitutions
            + wu.substitutions
            + fitted.substitutions
            + evaluated.substitutions,
    };
    Ok(ClearRun {
        report,
        warmup_learner,
        final_learner: learner,
        fitted,
        evaluated,
    })
}

/// The same protocol for an offline ridge model: fitted on warmup, then refit
/// from scratch on the update phase only.
pub fn run_offline_protocol(
    stream: &[Sample],
    split: &SplitSpec,
    lambda: f64,
) -> Result<EvaluationReport> {
    split.validate()?;
    split.check_covers(stream.len())?;
    let replay = |m: &OfflineRidge, r: Range<usize>| -> Result<f64> {
        let preds = stream[r.clone()]
            .iter()
            .map(|s| m.predict(&s.x))
            .collect::<Result<Vec<_>>>()?;
        let targets: Vec<f64> = stream[r].iter().map(|s| s.y).collect();
        rmse(&preds, &targets)
    };
    let warm = OfflineRidge::fit(&stream[split.warmup.clone()], lambda)?;
    let loss_ww = replay(&warm, split.warmup.clone())?;
    let refit = OfflineRidge::fit(&stream[split.update.clone()], lambda)?;
    let loss_wu = replay(&refit, split.warmup.clone())?;
    Ok(EvaluationReport {
        fitting_rmse: replay(&refit, split.warmup.start..split.update.end)?,
        prediction_rmse: replay(&refit, split.eval.clone())?,
        forgetting_ratio: forgetting_ratio(loss_ww, loss_wu),
        loss_ww,
        loss_wu,
        model_count: 1,
        sentinel_substitutions: 0,
    })
}

/// RMSE of the naïve delayed predictor over `stream[range]`; the first
/// sample of the stream has no predecessor and is skipped.
pub fn naive_rmse(stream: &[Sample], range: Range<usize>) -> Result<f64> {
    let start = range.start.max(1);
    let preds: Vec<f64> = (start..range.end).map(|i| stream[i - 1].y).collect();
    let targets: Vec<f64> = (start..range.end).map(|i| stream[i].y).collect();
    rmse(&preds, &targets)
}

fn check_stats(stream: &[Sample], stats: &StandardizationStats) -> Result<()> {
    let cols = stats.means.len();
    if stats.stds.len() != cols {
        return Err(Error::DimensionMismatch {
            expected: cols,
            got: stats.stds.len(),
        });
    }
    if let Some(s) = stream.iter().find(|s| s.x.len() + 1 != cols) {
        return Err(Error::DimensionMismatch {
            expected: cols,
            got: s.x.len() + 1,
        });
    }
    Ok(())
}

/// Z-scores features and target with external statistics. Zero-variance
/// columns are only centered.
pub fn standardize(stream: &[Sample], stats: &StandardizationStats) -> Result<Vec<Sample>> {
    check_stats(stream, stats)?;
    let n = stats.means.len() - 1;
    Ok(stream
        .iter()
        .map(|s| Sample {
            x: s.x
                .iter()
                .enumerate()
                .map(|(j, v)| (v - stats.means[j]) / stats.divisor(j))
                .collect(),
            y: (s.y - stats.means[n]) / stats.divisor(n),
            index: s.index,
        })
        .collect())
}

pub fn destandardize(stream: &[Sample], stats: &StandardizationStats) -> Result<Vec<Sample>> {
    check_stats(stream, stats)?;
    let n = stats.means.len() - 1;
    Ok(stream
        .iter()
        .map(|s| Sample {
            x: s.x
                .iter()
                .enumerate()
                .map(|(j, v)| v * stats.divisor(j) + stats.means[j])
                .collect(),
            y: s.y * stats.divisor(n) + stats.means[n],
            index: s.index,
        })
        .collect())
}
