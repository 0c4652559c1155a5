//! Undamped pendulum laboratory.
//!
//! The simulator integrates `θ̈ = -(g/rod)·sin θ` with classic RK4 and then
//! "measures" the signals the way a sensor pipeline would: velocity by a
//! backward difference and acceleration by a central second difference that
//! only becomes available one step late. The learner sees `θ(k)` and has to
//! predict the acceleration estimate at `k`.
//!
//! The experiment drivers reproduce the base identification run, closed-loop
//! long-term forecasting, a mid-stream rod change (concept drift), spurious
//! input dimensions and target noise.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::linearized_pendulum_accel;
use crate::error::{Error, Result};
use crate::eval::rmse;
use crate::learner::{LearnerConfig, LocalModel, Selection, SymplerLearner};

/// Upper bound on integration steps when searching for zero crossings.
const MAX_PERIOD_STEPS: usize = 50_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PendulumConfig {
    /// Rod length in meters.
    pub rod: f64,
    pub g: f64,
    /// Sampling / integration step in seconds.
    pub dt: f64,
    pub theta0: f64,
    pub omega0: f64,
    /// Duration measured in oscillation periods.
    pub cycles: f64,
}

impl Default for PendulumConfig {
    fn default() -> Self {
        Self {
            rod: 0.5,
            g: 9.81,
            dt: 1.0 / 200.0,
            theta0: std::f64::consts::FRAC_PI_2,
            omega0: 0.0,
            cycles: 2.0,
        }
    }
}

impl PendulumConfig {
    pub fn with_cycles(mut self, cycles: f64) -> Self {
        self.cycles = cycles;
        self
    }

    /// `g / rod`.
    pub fn stiffness(&self) -> f64 {
        self.g / self.rod
    }

    /// Period of small oscillations, `2π·sqrt(rod/g)`.
    pub fn small_angle_period(&self) -> f64 {
        2.0 * std::f64::consts::PI * (self.rod / self.g).sqrt()
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64, name: &str| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!(
                    "{name} must be positive, got {v}"
                )))
            }
        };
        positive(self.rod, "rod")?;
        positive(self.g, "g")?;
        positive(self.dt, "dt")?;
        positive(self.cycles, "cycles")?;
        if !self.theta0.is_finite() || !self.omega0.is_finite() {
            return Err(Error::NonFinite("initial state"));
        }
        if self.dt * 10.0 >= self.small_angle_period() {
            return Err(Error::InvalidArgument(format!(
                "dt = {} is too coarse for the oscillation period",
                self.dt
            )));
        }
        Ok(())
    }
}

/// One sampled instant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PendulumRecord {
    pub t: f64,
    pub theta: f64,
    pub omega: f64,
    /// `(θ(k) - θ(k-1)) / dt`.
    pub v_est: f64,
    /// `(θ(k+1) - 2θ(k) + θ(k-1)) / dt²`.
    pub a_est: f64,
}

/// First-order Taylor expansion of the pendulum acceleration at `theta0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaylorLine {
    pub theta0: f64,
    pub slope: f64,
    pub bias: f64,
}

impl TaylorLine {
    pub fn eval(&self, theta: f64) -> f64 {
        self.slope * theta + self.bias
    }
}

pub fn taylor_line(theta0: f64, cfg: &PendulumConfig) -> TaylorLine {
    let k = cfg.stiffness();
    TaylorLine {
        theta0,
        slope: -k * theta0.cos(),
        bias: -k * (theta0.sin() - theta0 * theta0.cos()),
    }
}

fn rk4_step(theta: f64, omega: f64, dt: f64, stiffness: f64) -> (f64, f64) {
    let accel = |th: f64| -stiffness * th.sin();
    let k1t = omega;
    let k1w = accel(theta);
    let k2t = omega + 0.5 * dt * k1w;
    let k2w = accel(theta + 0.5 * dt * k1t);
    let k3t = omega + 0.5 * dt * k2w;
    let k3w = accel(theta + 0.5 * dt * k2t);
    let k4t = omega + dt * k3w;
    let k4w = accel(theta + dt * k3t);
    (
        theta + dt / 6.0 * (k1t + 2.0 * k2t + 2.0 * k3t + k4t),
        omega + dt / 6.0 * (k1w + 2.0 * k2w + 2.0 * k3w + k4w),
    )
}

/// RK4 states `0..=steps`; `stiffness(k)` gives `g/rod` for the step from
/// `k` to `k+1`.
fn integrate(
    theta0: f64,
    omega0: f64,
    dt: f64,
    steps: usize,
    stiffness: impl Fn(usize) -> f64,
) -> Vec<(f64, f64)> {
    let mut states = Vec::with_capacity(steps + 1);
    let (mut th, mut om) = (theta0, omega0);
    states.push((th, om));
    for k in 0..steps {
        (th, om) = rk4_step(th, om, dt, stiffness(k));
        states.push((th, om));
    }
    states
}

/// Time of the first `count` sign changes of `signal`, linearly
/// interpolated between samples. A sample that is exactly zero at index 0 is
/// not counted.
fn zero_crossings(signal: impl Iterator<Item = f64>, dt: f64, count: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(count);
    let mut prev: Option<f64> = None;
    for (k, v) in signal.enumerate() {
        if let Some(p) = prev {
            if (p < 0.0 && v >= 0.0) || (p > 0.0 && v <= 0.0) {
                let frac = p / (p - v);
                out.push((k as f64 - 1.0 + frac) * dt);
                if out.len() == count {
                    break;
                }
            }
        }
        // Skip exact zeros so a crossing is counted once.
        if v != 0.0 {
            prev = Some(v);
        }
    }
    out
}

/// Oscillation period from the first two zero crossings of ω (half a period
/// apart), integrating from the configured initial state.
pub fn measure_period(cfg: &PendulumConfig) -> Result<f64> {
    cfg.validate()?;
    let k = cfg.stiffness();
    let (mut th, mut om) = (cfg.theta0, cfg.omega0);
    let omegas = std::iter::once(om).chain(std::iter::from_fn(move || {
        (th, om) = rk4_step(th, om, cfg.dt, k);
        Some(om)
    }));
    let crossings = zero_crossings(omegas.take(MAX_PERIOD_STEPS), cfg.dt, 2);
    match crossings.as_slice() {
        [a, b] => Ok(2.0 * (b - a)),
        _ => Err(Error::InvalidArgument(
            "pendulum does not oscillate (no velocity zero crossings)".into(),
        )),
    }
}

fn records_from_states(states: &[(f64, f64)], dt: f64) -> Vec<PendulumRecord> {
    states
        .windows(3)
        .enumerate()
        .map(|(i, w)| {
            let k = i + 1;
            PendulumRecord {
                t: k as f64 * dt,
                theta: w[1].0,
                omega: w[1].1,
                v_est: (w[1].0 - w[0].0) / dt,
                a_est: (w[2].0 - 2.0 * w[1].0 + w[0].0) / (dt * dt),
            }
        })
        .collect()
}

/// Simulated measurements for `ceil(cycles·T/dt)` steps. Records start at
/// `k = 1` and end at `k = steps - 1`, where both difference stencils are
/// defined.
pub fn simulate(cfg: &PendulumConfig) -> Result<Vec<PendulumRecord>> {
    let period = measure_period(cfg)?;
    let steps = (cfg.cycles * period / cfg.dt).ceil() as usize;
    let k = cfg.stiffness();
    let states = integrate(cfg.theta0, cfg.omega0, cfg.dt, steps, |_| k);
    Ok(records_from_states(&states, cfg.dt))
}

/// Acceleration as a function of angle, used in closed-loop forecasting.
pub trait AccelerationModel {
    fn acceleration(&self, theta: f64) -> Result<f64>;
}

impl AccelerationModel for SymplerLearner {
    fn acceleration(&self, theta: f64) -> Result<f64> {
        self.predict(&[theta])?.ok_or(Error::NoModels)
    }
}

/// Small-angle model `-(g/rod)·θ`.
#[derive(Debug, Clone, Copy)]
pub struct LinearizedPendulum {
    pub g: f64,
    pub rod: f64,
}

impl AccelerationModel for LinearizedPendulum {
    fn acceleration(&self, theta: f64) -> Result<f64> {
        linearized_pendulum_accel(theta, self.g, self.rod)
    }
}

/// The true dynamics, `-(g/rod)·sin θ`.
#[derive(Debug, Clone, Copy)]
pub struct ExactPendulum {
    pub g: f64,
    pub rod: f64,
}

impl AccelerationModel for ExactPendulum {
    fn acceleration(&self, theta: f64) -> Result<f64> {
        Ok(-(self.g / self.rod) * theta.sin())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForecastPoint {
    pub t: f64,
    pub theta_hat: f64,
    pub omega_hat: f64,
    pub theta_true: f64,
}

/// Closed-loop rollout from the configured initial state: each step the
/// model's acceleration at the previous predicted angle updates the velocity,
/// which then updates the angle. The RK4 truth is advanced alongside.
pub fn forecast_long_term(
    model: &dyn AccelerationModel,
    cfg: &PendulumConfig,
    duration_s: f64,
) -> Result<Vec<ForecastPoint>> {
    cfg.validate()?;
    if !(duration_s > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "forecast duration must be positive, got {duration_s}"
        )));
    }
    let steps = (duration_s / cfg.dt).round() as usize;
    let k = cfg.stiffness();
    let (mut th_hat, mut om_hat) = (cfg.theta0, cfg.omega0);
    let (mut th, mut om) = (cfg.theta0, cfg.omega0);
    let mut out = Vec::with_capacity(steps + 1);
    out.push(ForecastPoint {
        t: 0.0,
        theta_hat: th_hat,
        omega_hat: om_hat,
        theta_true: th,
    });
    for step in 1..=steps {
        let a = model.acceleration(th_hat)?;
        om_hat += a * cfg.dt;
        th_hat += om_hat * cfg.dt;
        (th, om) = rk4_step(th, om, cfg.dt, k);
        out.push(ForecastPoint {
            t: step as f64 * cfg.dt,
            theta_hat: th_hat,
            omega_hat: om_hat,
            theta_true: th,
        });
    }
    Ok(out)
}

/// Period of a trajectory from its first three zero crossings of θ.
pub fn trajectory_period(theta: &[f64], dt: f64) -> Option<f64> {
    let c = zero_crossings(theta.iter().copied(), dt, 3);
    (c.len() == 3).then(|| c[2] - c[0])
}

/// One row of a training trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepTrace {
    pub index: usize,
    pub t: f64,
    pub theta: f64,
    pub target: f64,
    pub prediction: Option<f64>,
    pub sq_err: Option<f64>,
    pub model_count: usize,
}

/// A learned local model next to the Taylor line at its approximation point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaylorCheck {
    pub point: f64,
    pub slope: f64,
    pub bias: f64,
    pub taylor_slope: f64,
    pub taylor_bias: f64,
    /// Time at which the model was created.
    pub created_t: f64,
}

impl TaylorCheck {
    fn new(m: &LocalModel, cfg: &PendulumConfig, created_t: f64) -> Self {
        let p = m.point[0];
        let line = taylor_line(p, cfg);
        Self {
            point: p,
            slope: m.weights[0],
            bias: m.weights[1],
            taylor_slope: line.slope,
            taylor_bias: line.bias,
            created_t,
        }
    }

    pub fn max_abs_diff(&self) -> f64 {
        (self.slope - self.taylor_slope)
            .abs()
            .max((self.bias - self.taylor_bias).abs())
    }

    pub fn distance(&self) -> f64 {
        ((self.slope - self.taylor_slope).powi(2) + (self.bias - self.taylor_bias).powi(2)).sqrt()
    }
}

/// Streams `(θ, a_est)` pairs through the learner, recording the trace.
fn train_on_records(
    learner: &mut SymplerLearner,
    records: &[PendulumRecord],
    target_noise: Option<&[f64]>,
) -> Result<Vec<StepTrace>> {
    records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let y = r.a_est + target_noise.map_or(0.0, |n| n[i]);
            let out = learner.step(&[r.theta], y)?;
            Ok(StepTrace {
                index: i,
                t: r.t,
                theta: r.theta,
                target: y,
                prediction: out.prediction,
                sq_err: out.prediction.map(|p| (y - p).powi(2)),
                model_count: learner.model_count(),
            })
        })
        .collect()
}

fn index_time(records: &[PendulumRecord], index: u64) -> f64 {
    records.get(index as usize).map_or(f64::NAN, |r| r.t)
}

#[derive(Debug, Clone, Serialize)]
pub struct BaseReport {
    pub period: f64,
    pub model_count: usize,
    /// Stream index at which the first model was added.
    pub first_model_index: Option<usize>,
    pub models_per_half_cycle: Vec<usize>,
    pub taylor: Vec<TaylorCheck>,
    #[serde(skip)]
    pub trace: Vec<StepTrace>,
    #[serde(skip)]
    pub learner: SymplerLearner,
}

impl BaseReport {
    pub fn max_taylor_discrepancy(&self) -> f64 {
        self.taylor
            .iter()
            .map(TaylorCheck::max_abs_diff)
            .fold(0.0, f64::max)
    }
}

/// Trains on `cfg.cycles` periods (two by default) of the simulated pendulum.
pub fn run_base_experiment(
    cfg: &PendulumConfig,
    learner_cfg: &LearnerConfig,
) -> Result<BaseReport> {
    let period = measure_period(cfg)?;
    let records = simulate(cfg)?;
    let mut learner = SymplerLearner::new(1, *learner_cfg)?;
    let trace = train_on_records(&mut learner, &records, None)?;

    let half = period / 2.0;
    let n_halves = (cfg.cycles * 2.0).ceil() as usize;
    let mut per_half = vec![0usize; n_halves.max(1)];
    let mut taylor = Vec::with_capacity(learner.model_count());
    for m in learner.models() {
        let t = index_time(&records, m.created_at);
        let bucket = ((t / half).floor() as usize).min(per_half.len() - 1);
        per_half[bucket] += 1;
        taylor.push(TaylorCheck::new(m, cfg, t));
    }
    let first_model_index = trace.iter().position(|s| s.model_count > 0);

    Ok(BaseReport {
        period,
        model_count: learner.model_count(),
        first_model_index,
        models_per_half_cycle: per_half,
        taylor,
        trace,
        learner,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ForecastReport {
    pub duration_s: f64,
    pub true_period: f64,
    pub model_count: usize,
    /// θ RMSE over the last two true periods.
    pub sympler_final_rmse: f64,
    pub linearized_final_rmse: f64,
    pub sympler_first_period: Option<f64>,
    pub linearized_first_period: Option<f64>,
    /// True period over the linearized rollout's first-cycle period.
    pub linearized_period_ratio: Option<f64>,
    #[serde(skip)]
    pub sympler: Vec<ForecastPoint>,
    #[serde(skip)]
    pub linearized: Vec<ForecastPoint>,
    #[serde(skip)]
    pub learner: SymplerLearner,
}

fn final_window_rmse(traj: &[ForecastPoint], window_s: f64) -> Result<f64> {
    let end = traj.last().map_or(0.0, |p| p.t);
    let (pred, truth): (Vec<f64>, Vec<f64>) = traj
        .iter()
        .filter(|p| p.t > end - window_s)
        .map(|p| (p.theta_hat, p.theta_true))
        .unzip();
    rmse(&pred, &truth)
}

/// Trains the base learner, freezes it and rolls it out in closed loop
/// against the linearized model.
pub fn run_forecast_experiment(
    cfg: &PendulumConfig,
    learner_cfg: &LearnerConfig,
    duration_s: f64,
) -> Result<ForecastReport> {
    let base = run_base_experiment(cfg, learner_cfg)?;
    let period = base.period;
    let learner = base.learner;
    let sympler = forecast_long_term(&learner, cfg, duration_s)?;
    let lin_model = LinearizedPendulum {
        g: cfg.g,
        rod: cfg.rod,
    };
    let linearized = forecast_long_term(&lin_model, cfg, duration_s)?;

    let first_period = |traj: &[ForecastPoint]| {
        let th: Vec<f64> = traj.iter().map(|p| p.theta_hat).collect();
        trajectory_period(&th, cfg.dt)
    };
    let lin_period = first_period(&linearized);
    Ok(ForecastReport {
        duration_s,
        true_period: period,
        model_count: learner.model_count(),
        sympler_final_rmse: final_window_rmse(&sympler, 2.0 * period)?,
        linearized_final_rmse: final_window_rmse(&linearized, 2.0 * period)?,
        sympler_first_period: first_period(&sympler),
        linearized_first_period: lin_period,
        linearized_period_ratio: lin_period.map(|p| period / p),
        sympler,
        linearized,
        learner,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct DriftReport {
    pub rod_before: f64,
    pub rod_after: f64,
    pub period_before: f64,
    pub period_after: f64,
    /// First stream index simulated with the new rod length.
    pub switch_index: usize,
    pub models_before_switch: usize,
    pub models_after_switch: usize,
    /// Approximation-point range of the models created before the switch.
    pub pre_switch_point_range: Option<(f64, f64)>,
    /// Post-switch models whose point lies inside that range.
    pub new_models_in_old_range: usize,
    /// Mean squared error over the second pre-switch cycle.
    pub pre_switch_settled_mse: f64,
    /// Largest squared error during the first post-switch cycle.
    pub post_switch_max_sq_err: f64,
    /// Mean squared error over the final half cycle.
    pub final_half_cycle_mse: f64,
    #[serde(skip)]
    pub trace: Vec<StepTrace>,
    #[serde(skip)]
    pub learner: SymplerLearner,
}

fn mean_sq_err<'a>(steps: impl Iterator<Item = &'a StepTrace>) -> f64 {
    let (sum, count) = steps
        .filter_map(|s| s.sq_err)
        .fold((0.0, 0usize), |(s, c), e| (s + e, c + 1));
    if count == 0 {
        f64::NAN
    } else {
        sum / count as f64
    }
}

/// Two periods with `cfg.rod`, then two periods with `rod_after`, with the
/// state carried across the instantaneous switch.
pub fn run_concept_drift(
    cfg: &PendulumConfig,
    learner_cfg: &LearnerConfig,
    rod_after: f64,
) -> Result<DriftReport> {
    if learner_cfg.selection != Selection::ErrorBased {
        return Err(Error::InvalidArgument(
            "concept drift runs require error_based selection".into(),
        ));
    }
    let period_before = measure_period(cfg)?;
    let steps_before = (2.0 * period_before / cfg.dt).ceil() as usize;
    let k_before = cfg.stiffness();
    let head = integrate(cfg.theta0, cfg.omega0, cfg.dt, steps_before, |_| k_before);
    let (th_sw, om_sw) = head[steps_before];

    let after_cfg = PendulumConfig {
        rod: rod_after,
        theta0: th_sw,
        omega0: om_sw,
        ..*cfg
    };
    let period_after = measure_period(&after_cfg)?;
    let steps_after = (2.0 * period_after / cfg.dt).ceil() as usize;
    let k_after = after_cfg.stiffness();
    let states = integrate(
        cfg.theta0,
        cfg.omega0,
        cfg.dt,
        steps_before + steps_after,
        |k| if k < steps_before { k_before } else { k_after },
    );
    let records = records_from_states(&states, cfg.dt);

    let mut learner = SymplerLearner::new(1, *learner_cfg)?;
    let trace = train_on_records(&mut learner, &records, None)?;

    let t_switch = steps_before as f64 * cfg.dt;
    let switch_index = records
        .iter()
        .position(|r| r.t >= t_switch)
        .unwrap_or(records.len());

    let (old, new): (Vec<&LocalModel>, Vec<&LocalModel>) = learner
        .models()
        .iter()
        .partition(|m| (m.created_at as usize) < switch_index);
    let pre_switch_point_range = old
        .iter()
        .map(|m| m.point[0])
        .fold(None, |acc, p| match acc {
            None => Some((p, p)),
            Some((lo, hi)) => Some((f64::min(lo, p), f64::max(hi, p))),
        });
    let new_models_in_old_range = pre_switch_point_range.map_or(0, |(lo, hi)| {
        new.iter()
            .filter(|m| (lo..=hi).contains(&m.point[0]))
            .count()
    });

    let pre_switch_settled_mse = mean_sq_err(
        trace
            .iter()
            .filter(|s| s.t >= period_before && s.t < t_switch),
    );
    let post_switch_max_sq_err = trace
        .iter()
        .filter(|s| s.t >= t_switch && s.t < t_switch + period_after)
        .filter_map(|s| s.sq_err)
        .fold(0.0, f64::max);
    let t_end = records.last().map_or(0.0, |r| r.t);
    let final_half_cycle_mse =
        mean_sq_err(trace.iter().filter(|s| s.t > t_end - period_after / 2.0));

    Ok(DriftReport {
        rod_before: cfg.rod,
        rod_after,
        period_before,
        period_after,
        switch_index,
        models_before_switch: old.len(),
        models_after_switch: new.len(),
        pre_switch_point_range,
        new_models_in_old_range,
        pre_switch_settled_mse,
        post_switch_max_sq_err,
        final_half_cycle_mse,
        trace,
        learner,
    })
}

/// Mean and population standard deviation.
fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Runs `f` over `0..count`, on `jobs` threads, returning results in index
/// order.
fn run_indexed<T: Send>(
    count: usize,
    jobs: usize,
    f: impl Fn(usize) -> Result<T> + Sync,
) -> Result<Vec<T>> {
    if jobs <= 1 {
        return (0..count).map(f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    pool.install(|| (0..count).into_par_iter().map(&f).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HighDimCell {
    pub extra_dims: usize,
    pub mean_model_count: f64,
    pub std_model_count: f64,
    pub mean_test_mse: f64,
    pub std_test_mse: f64,
    pub model_counts: Vec<usize>,
    pub test_mses: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HighDimReport {
    pub reps: usize,
    pub seed: u64,
    pub cells: Vec<HighDimCell>,
}

/// Pads every input with `extra_dims` standard-normal spurious features,
/// trains on two periods and scores the frozen learner on the third.
pub fn run_high_dim(
    cfg: &PendulumConfig,
    learner_cfg: &LearnerConfig,
    extra_dims: &[usize],
    reps: usize,
    seed: u64,
    jobs: usize,
) -> Result<HighDimReport> {
    if reps == 0 {
        return Err(Error::InvalidArgument("reps must be >= 1".into()));
    }
    let period = measure_period(cfg)?;
    let records = simulate(&cfg.with_cycles(3.0))?;
    let split = records
        .iter()
        .position(|r| r.t >= 2.0 * period)
        .unwrap_or(records.len());
    let (train, test) = records.split_at(split);

    let jobs_list: Vec<(usize, usize)> = (0..extra_dims.len())
        .flat_map(|c| (0..reps).map(move |r| (c, r)))
        .collect();
    let results = run_indexed(jobs_list.len(), jobs, |j| {
        let (cell, rep) = jobs_list[j];
        let dims = extra_dims[cell];
        let mut rng = rng_for(seed, (cell * reps + rep) as u64);
        high_dim_rep(train, test, learner_cfg, dims, &mut rng)
    })?;

    let cells = extra_dims
        .iter()
        .enumerate()
        .map(|(c, &dims)| {
            let slice = &results[c * reps..(c + 1) * reps];
            let counts: Vec<usize> = slice.iter().map(|r| r.0).collect();
            let mses: Vec<f64> = slice.iter().map(|r| r.1).collect();
            let (mc, sc) = mean_std(&counts.iter().map(|&c| c as f64).collect::<Vec<_>>());
            let (mm, sm) = mean_std(&mses);
            HighDimCell {
                extra_dims: dims,
                mean_model_count: mc,
                std_model_count: sc,
                mean_test_mse: mm,
                std_test_mse: sm,
                model_counts: counts,
                test_mses: mses,
            }
        })
        .collect();
    Ok(HighDimReport { reps, seed, cells })
}

fn high_dim_rep(
    train: &[PendulumRecord],
    test: &[PendulumRecord],
    learner_cfg: &LearnerConfig,
    dims: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(usize, f64)> {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let input = |theta: f64, rng: &mut ChaCha8Rng| {
        let mut x = Vec::with_capacity(dims + 1);
        x.push(theta);
        x.extend((0..dims).map(|_| normal.sample(rng)));
        x
    };
    let mut learner = SymplerLearner::new(dims + 1, *learner_cfg)?;
    for r in train {
        let x = input(r.theta, rng);
        learner.step(&x, r.a_est)?;
    }
    let mut prev = train.last().map_or(0.0, |r| r.a_est);
    let mut sq = 0.0;
    for r in test {
        let x = input(r.theta, rng);
        let p = learner.predict(&x)?.unwrap_or(prev);
        sq += (r.a_est - p).powi(2);
        learner.observe(&x, r.a_est)?;
        prev = r.a_est;
    }
    Ok((learner.model_count(), sq / test.len() as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseCell {
    pub noise_sigma: f64,
    pub lambda: f64,
    pub mean_distance: f64,
    pub std_distance: f64,
    pub mean_model_count: f64,
    pub distances: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseReport {
    pub reps: usize,
    pub seed: u64,
    pub cells: Vec<NoiseCell>,
}

/// Euclidean distance between the concatenated `(slope, bias)` vectors of
/// all local models and of the Taylor lines at their points, divided by the
/// number of models.
pub fn taylor_coefficient_distance(models: &[LocalModel], cfg: &PendulumConfig) -> f64 {
    if models.is_empty() {
        return f64::NAN;
    }
    let sq: f64 = models
        .iter()
        .map(|m| {
            let line = taylor_line(m.point[0], cfg);
            (m.weights[0] - line.slope).powi(2) + (m.weights[1] - line.bias).powi(2)
        })
        .sum();
    sq.sqrt() / models.len() as f64
}

/// Adds zero-mean Gaussian noise to the acceleration targets of two training
/// periods and measures how far the learned lines drift from the Taylor
/// lines. Each repetition reuses the same noise draw across all `lambdas`.
pub fn run_noise_study(
    cfg: &PendulumConfig,
    noise_sigmas: &[f64],
    lambdas: &[f64],
    reps: usize,
    seed: u64,
    jobs: usize,
) -> Result<NoiseReport> {
    if reps == 0 {
        return Err(Error::InvalidArgument("reps must be >= 1".into()));
    }
    if let Some(s) = noise_sigmas.iter().find(|s| !(**s >= 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "noise sigma must be nonnegative, got {s}"
        )));
    }
    let records = simulate(&cfg.with_cycles(2.0))?;
    let n_l = lambdas.len();
    let results = run_indexed(noise_sigmas.len() * n_l * reps, jobs, |j| {
        let rep = j % reps;
        let li = (j / reps) % n_l;
        let si = j / (reps * n_l);
        let mut rng = rng_for(seed, (si * reps + rep) as u64);
        let normal = Normal::new(0.0, noise_sigmas[si])
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let noise: Vec<f64> = records.iter().map(|_| normal.sample(&mut rng)).collect();
        let lc = LearnerConfig::default().with_lambda(lambdas[li]);
        let mut learner = SymplerLearner::new(1, lc)?;
        train_on_records(&mut learner, &records, Some(&noise))?;
        Ok((
            taylor_coefficient_distance(learner.models(), cfg),
            learner.model_count(),
        ))
    })?;

    let mut cells = Vec::with_capacity(noise_sigmas.len() * n_l);
    for (si, &noise_sigma) in noise_sigmas.iter().enumerate() {
        for (li, &lambda) in lambdas.iter().enumerate() {
            let base = (si * n_l + li) * reps;
            let slice = &results[base..base + reps];
            let distances: Vec<f64> = slice.iter().map(|r| r.0).collect();
            let (md, sd) = mean_std(&distances);
            let counts: Vec<f64> = slice.iter().map(|r| r.1 as f64).collect();
            cells.push(NoiseCell {
                noise_sigma,
                lambda,
                mean_distance: md,
                std_distance: sd,
                mean_model_count: mean_std(&counts).0,
                distances,
            });
        }
    }
    Ok(NoiseReport { reps, seed, cells })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn energy(cfg: &PendulumConfig, theta: f64, omega: f64) -> f64 {
        0.5 * (cfg.rod * omega).powi(2) - cfg.g * cfg.rod * theta.cos()
    }

    #[test]
    fn default_period_matches_elliptic_value() {
        let cfg = PendulumConfig::default();
        let t = measure_period(&cfg).unwrap();
        // 4·sqrt(rod/g)·K(sin 45°), K = 1.854074677301372.
        let exact = 4.0 * (cfg.rod / cfg.g).sqrt() * 1.854_074_677_301_372;
        assert_abs_diff_eq!(t, exact, epsilon = 1e-4);
        assert!((t - 1.67).abs() < 0.01);
        assert!((100.0 * t - 167.0).abs() < 1.0);
        let ratio = t / cfg.small_angle_period();
        assert!((ratio / 1.18 - 1.0).abs() < 0.01, "ratio {ratio}");
    }

    #[test]
    fn energy_is_conserved() {
        let cfg = PendulumConfig::default();
        let recs = simulate(&cfg).unwrap();
        let e0 = energy(&cfg, cfg.theta0, cfg.omega0);
        // E0 is ~0 when starting horizontal; compare on the g·rod scale.
        let scale = cfg.g * cfg.rod;
        for r in &recs {
            let e = energy(&cfg, r.theta, r.omega);
            assert!(((e - e0) / scale).abs() < 1e-6);
        }
    }

    #[test]
    fn stencils_exact_on_quadratic() {
        let dt = 0.01;
        let states: Vec<(f64, f64)> = (0..20)
            .map(|k| {
                let t = k as f64 * dt;
                (t * t, 2.0 * t)
            })
            .collect();
        for r in records_from_states(&states, dt) {
            assert_abs_diff_eq!(r.a_est, 2.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn acceleration_estimate_is_second_order_accurate() {
        let cfg = PendulumConfig::default();
        let recs = simulate(&cfg).unwrap();
        let worst = recs
            .iter()
            .map(|r| (r.a_est + cfg.stiffness() * r.theta.sin()).abs())
            .fold(0.0, f64::max);
        assert!(worst <= 1e-2, "worst {worst}");
    }

    #[test]
    fn rk4_is_fourth_order() {
        let cfg = PendulumConfig::default();
        let k = cfg.stiffness();
        let horizon = 1.0;
        let run = |dt: f64| {
            let steps = (horizon / dt).round() as usize;
            integrate(cfg.theta0, 0.0, dt, steps, |_| k)
        };
        let dt = 0.02;
        let reference = run(dt / 64.0);
        let err = |h: f64| {
            let states = run(h);
            let stride = (h / (dt / 64.0)).round() as usize;
            states
                .iter()
                .enumerate()
                .map(|(i, s)| (s.0 - reference[i * stride].0).abs())
                .fold(0.0, f64::max)
        };
        let ratio = err(dt) / err(dt / 2.0);
        assert!((8.0..=32.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn record_count_and_timing() {
        let cfg = PendulumConfig::default();
        let t = measure_period(&cfg).unwrap();
        let recs = simulate(&cfg).unwrap();
        let steps = (2.0 * t / cfg.dt).ceil() as usize;
        assert_eq!(recs.len(), steps - 1);
        assert_abs_diff_eq!(recs[0].t, cfg.dt, epsilon = 1e-15);
    }

    #[test]
    fn invalid_config_rejected() {
        let bad = PendulumConfig {
            rod: -1.0,
            ..Default::default()
        };
        assert!(simulate(&bad).is_err());
        let coarse = PendulumConfig {
            dt: 0.5,
            ..Default::default()
        };
        assert!(simulate(&coarse).is_err());
        let still = PendulumConfig {
            theta0: 0.0,
            ..Default::default()
        };
        assert!(measure_period(&still).is_err());
    }

    #[test]
    fn taylor_examples() {
        let cfg = PendulumConfig::default();
        let l = taylor_line(0.0, &cfg);
        assert_abs_diff_eq!(l.slope, -19.62, epsilon = 1e-12);
        assert_abs_diff_eq!(l.bias, 0.0, epsilon = 1e-12);
        let l = taylor_line(std::f64::consts::FRAC_PI_2, &cfg);
        assert_abs_diff_eq!(l.slope, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(l.bias, -19.62, epsilon = 1e-12);
        let l = taylor_line(0.44, &cfg);
        assert_abs_diff_eq!(l.slope, -17.75, epsilon = 0.01);
        assert_abs_diff_eq!(l.bias, -0.55, epsilon = 0.01);
        // Tangency: the line touches the true curve at theta0.
        assert_abs_diff_eq!(l.eval(0.44), -19.62 * 0.44f64.sin(), epsilon = 1e-12);
    }

    #[test]
    fn exact_model_tracks_truth() {
        let cfg = PendulumConfig::default();
        let t = measure_period(&cfg).unwrap();
        let exact = ExactPendulum {
            g: cfg.g,
            rod: cfg.rod,
        };
        let traj = forecast_long_term(&exact, &cfg, 10.0 * t).unwrap();
        let worst = traj
            .iter()
            .map(|p| (p.theta_hat - p.theta_true).abs())
            .fold(0.0, f64::max);
        assert!(worst < 0.05, "worst {worst}");
    }

    #[test]
    fn empty_learner_cannot_forecast() {
        let cfg = PendulumConfig::default();
        let l = SymplerLearner::new(1, LearnerConfig::default()).unwrap();
        assert!(matches!(
            forecast_long_term(&l, &cfg, 1.0),
            Err(Error::NoModels)
        ));
    }

    #[test]
    fn drift_requires_error_based() {
        let cfg = PendulumConfig::default();
        assert!(run_concept_drift(&cfg, &LearnerConfig::default(), 1.0).is_err());
    }

    #[test]
    fn distance_is_zero_for_taylor_models() {
        let cfg = PendulumConfig::default();
        let models: Vec<_> = [0.1, -0.7, 1.3]
            .iter()
            .map(|&p| {
                let l = taylor_line(p, &cfg);
                LocalModel {
                    weights: vec![l.slope, l.bias],
                    point: vec![p],
                    created_at: 0,
                    lambda_used: 1e-6,
                }
            })
            .collect();
        assert_eq!(taylor_coefficient_distance(&models, &cfg), 0.0);
    }
}
