//! Acceptance criteria, one PASS/FAIL line each.
//!
//! Runs as a plain binary so every line is printed regardless of outcome.
//! Criteria listed in `KNOWN_UNATTAINABLE` are still evaluated and reported.
//! Their failure does not fail the run, but only when the check shows the
//! failure is exactly the known gap and nothing else.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde_json::Value;

use sympler::eval::{self, SplitSpec};
use sympler::io::{self, DatasetSchema};
use sympler::pendulum::{self, PendulumConfig};
use sympler::vc_bounds;
use sympler::{fit_local_model, LearnerConfig, Sample, Selection};

/// 1: the fitted line is 1.35h + 11 but the bound itself gives l* = 138.7 at
/// h = 100, which is 7.3 below it.
/// 3: near θ = ±π/2 the Taylor slope moves by about 19.6 per radian, so a
/// model 0.04 rad from a reference row cannot be within 0.5 of both its own
/// Taylor line and that row.
const KNOWN_UNATTAINABLE: &[u32] = &[1, 3];

const VC_SMALL_TOL: f64 = 1.0;
const VC_LARGE_TOL: f64 = 2.0;
const VC_RUNTIME: Duration = Duration::from_secs(1);
const FIRST_MODEL_INDEX: usize = 14;
const TAYLOR_TOL: f64 = 0.5;
const TABLE_POINT_TOL: f64 = 0.05;
const TABLE_COEF_TOL: f64 = 0.5;
const BASE_RUNTIME: Duration = Duration::from_secs(5);
const MODEL_COUNT_RANGE: (usize, usize) = (9, 17);
const FORECAST_SECONDS: f64 = 167.0;
const FORECAST_RMSE_RATIO: f64 = 0.5;
const PERIOD_RATIO_RANGE: (f64, f64) = (1.12, 1.24);
const FORECAST_RUNTIME: Duration = Duration::from_secs(10);
const DRIFT_ROD_AFTER: f64 = 1.0;
const DRIFT_SPIKE_FACTOR: f64 = 10.0;
const DRIFT_RECOVERY_FACTOR: f64 = 3.0;
const HIGHDIM_REPS: usize = 5;
const NOISE_REPS: usize = 10;
const NOISE_HIGH_LAMBDA: f64 = 15.0;
const RIDGE_INSTANCES: usize = 100;
const RIDGE_REL_TOL: f64 = 1e-8;
const SYNTH_SEEDS: u64 = 5;

/// Reference rows: (θ₀, slope, bias).
const TABLE_ROWS: [(f64, f64, f64); 4] = [
    (1.55, -0.44, -18.91),
    (1.24, -6.42, -10.54),
    (0.44, -17.72, -0.49),
    (-1.52, -0.97, 18.10),
];

type Check = fn() -> Result<Outcome, String>;

struct Outcome {
    pass: bool,
    /// Every failing sub-check is one the exact solution fails as well.
    explained: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Result<Outcome, String> {
    Ok(Outcome {
        pass,
        explained: false,
        detail,
    })
}

fn main() {
    let criteria: [(u32, &str, Check); 12] = [
        (1, "vc-bound affine fits", c1_vc_bounds),
        (2, "buffer rule", c2_first_model),
        (3, "taylor coefficients", c3_taylor),
        (4, "model count", c4_model_count),
        (5, "long-term forecast", c5_forecast),
        (6, "concept drift", c6_drift),
        (7, "high-dimension study", c7_high_dim),
        (8, "noise study", c8_noise),
        (9, "ridge oracle", c9_ridge_oracle),
        (10, "protocol exactness", c10_protocol),
        (11, "synthetic evaluate pipeline", c11_synthetic),
        (12, "cli determinism", c12_determinism),
    ];
    let mut unexpected = 0;
    for (id, name, check) in criteria {
        let (pass, explained, detail) = match check() {
            Ok(o) => (o.pass, o.explained, o.detail),
            Err(e) => (false, false, format!("error: {e}")),
        };
        let known = KNOWN_UNATTAINABLE.contains(&id) && explained;
        let status = match (pass, known) {
            (true, _) => "PASS",
            (false, true) => "FAIL (known unattainable)",
            (false, false) => "FAIL",
        };
        if !pass && !known {
            unexpected += 1;
        }
        println!("criterion {id:>2} [{name}]: {status}: {detail}");
    }
    if unexpected > 0 {
        eprintln!("{unexpected} criteria failed");
        std::process::exit(1);
    }
}

fn c1_vc_bounds() -> Result<Outcome, String> {
    let start = Instant::now();
    let eta = vc_bounds::DEFAULT_ETA;
    let mut worst = Vec::new();
    let mut pass = true;
    let mut explained = true;
    for h in 1..=5u32 {
        let l = vc_bounds::min_training_size(h, eta).map_err(|e| e.to_string())?;
        let diff = (l - (2.0 * f64::from(h) + 7.0)).abs();
        if diff > VC_SMALL_TOL {
            pass = false;
            explained = false;
            worst.push(format!("h={h} l*={l:.2} off 2h+7 by {diff:.2}"));
        }
    }
    for h in [10u32, 20, 50, 100] {
        let l = vc_bounds::min_training_size(h, eta).map_err(|e| e.to_string())?;
        let diff = (l - (1.35 * f64::from(h) + 11.0)).abs();
        if diff > VC_LARGE_TOL {
            pass = false;
            explained &= h == 100;
            worst.push(format!("h={h} l*={l:.2} off 1.35h+11 by {diff:.2}"));
        }
    }
    for n in 0..=100usize {
        let l = vc_bounds::min_training_size(n as u32 + 1, eta).map_err(|e| e.to_string())?;
        if vc_bounds::buffer_size(n) as f64 <= l {
            pass = false;
            explained = false;
            worst.push(format!("buffer_size({n}) <= l*({})", n + 1));
        }
    }
    let elapsed = start.elapsed();
    pass &= elapsed < VC_RUNTIME;
    explained &= elapsed < VC_RUNTIME;
    let detail = if worst.is_empty() {
        format!("all fits within tolerance in {elapsed:?}")
    } else {
        format!("{} in {elapsed:?}", worst.join("; "))
    };
    Ok(Outcome {
        pass,
        explained,
        detail,
    })
}

fn base_report() -> Result<(pendulum::BaseReport, Duration), String> {
    let start = Instant::now();
    let r = pendulum::run_base_experiment(&PendulumConfig::default(), &LearnerConfig::default())
        .map_err(|e| e.to_string())?;
    Ok((r, start.elapsed()))
}

fn c2_first_model() -> Result<Outcome, String> {
    let (r, _) = base_report()?;
    let expected = vc_bounds::buffer_size(1);
    let pass = expected == FIRST_MODEL_INDEX && r.first_model_index == Some(FIRST_MODEL_INDEX);
    outcome(
        pass,
        format!(
            "first model at stream index {:?}, buffer size {expected}",
            r.first_model_index
        ),
    )
}

fn c3_taylor() -> Result<Outcome, String> {
    let (r, elapsed) = base_report()?;
    let worst = r.max_taylor_discrepancy();
    let mut pass = worst <= TAYLOR_TOL && elapsed < BASE_RUNTIME;
    let mut explained = pass;
    let mut matched = Vec::new();
    for (theta0, slope, bias) in TABLE_ROWS {
        for m in r
            .taylor
            .iter()
            .filter(|m| (m.point - theta0).abs() <= TABLE_POINT_TOL)
        {
            let ds = (m.slope - slope).abs();
            let db = (m.bias - bias).abs();
            if ds > TABLE_COEF_TOL || db > TABLE_COEF_TOL {
                pass = false;
                // The exact Taylor line at this point misses the row too.
                let exact_misses = (m.taylor_slope - slope).abs() > TABLE_COEF_TOL
                    || (m.taylor_bias - bias).abs() > TABLE_COEF_TOL;
                explained &= exact_misses;
                matched.push(format!(
                    "p={:.3} vs row {theta0} dslope={ds:.3} dbias={db:.3} (taylor at p: dslope={:.3} dbias={:.3})",
                    m.point,
                    (m.taylor_slope - slope).abs(),
                    (m.taylor_bias - bias).abs()
                ));
            } else {
                matched.push(format!("p={:.3} vs row {theta0} ok", m.point));
            }
        }
    }
    Ok(Outcome {
        pass,
        explained,
        detail: format!(
            "max taylor discrepancy {worst:.3} over {} models; table window [{}]; {elapsed:?}",
            r.model_count,
            matched.join(", ")
        ),
    })
}

fn c4_model_count() -> Result<Outcome, String> {
    let (r, _) = base_report()?;
    let per = &r.models_per_half_cycle;
    let first = per.first().copied().unwrap_or(0);
    let later = per.iter().skip(1).copied().max().unwrap_or(0);
    let pass =
        (MODEL_COUNT_RANGE.0..=MODEL_COUNT_RANGE.1).contains(&r.model_count) && first > later;
    outcome(
        pass,
        format!("{} models, per half cycle {per:?}", r.model_count),
    )
}

fn c5_forecast() -> Result<Outcome, String> {
    let start = Instant::now();
    let r = pendulum::run_forecast_experiment(
        &PendulumConfig::default(),
        &LearnerConfig::default(),
        FORECAST_SECONDS,
    )
    .map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let ratio = r.sympler_final_rmse / r.linearized_final_rmse;
    let period_ratio = r.linearized_period_ratio.unwrap_or(f64::NAN);
    let pass = ratio < FORECAST_RMSE_RATIO
        && (PERIOD_RATIO_RANGE.0..=PERIOD_RATIO_RANGE.1).contains(&period_ratio)
        && elapsed < FORECAST_RUNTIME;
    outcome(
        pass,
        format!(
            "rmse {:.4} vs linearized {:.4} (ratio {ratio:.3}), linearized period ratio {:.4}, {elapsed:?}",
            r.sympler_final_rmse, r.linearized_final_rmse, period_ratio
        ),
    )
}

fn c6_drift() -> Result<Outcome, String> {
    let cfg = LearnerConfig::default().with_selection(Selection::ErrorBased);
    let r = pendulum::run_concept_drift(&PendulumConfig::default(), &cfg, DRIFT_ROD_AFTER)
        .map_err(|e| e.to_string())?;
    let spike = r.post_switch_max_sq_err >= DRIFT_SPIKE_FACTOR * r.pre_switch_settled_mse;
    let reuse = r.new_models_in_old_range >= 1;
    let recovered = r.final_half_cycle_mse <= DRIFT_RECOVERY_FACTOR * r.pre_switch_settled_mse;
    outcome(
        spike && reuse && recovered,
        format!(
            "settled mse {:.5}, post-switch max {:.3}, new models in old range {}, final half-cycle mse {:.5}",
            r.pre_switch_settled_mse,
            r.post_switch_max_sq_err,
            r.new_models_in_old_range,
            r.final_half_cycle_mse
        ),
    )
}

fn c7_high_dim() -> Result<Outcome, String> {
    let r = pendulum::run_high_dim(
        &PendulumConfig::default(),
        &LearnerConfig::default(),
        &[0, 10, 100],
        HIGHDIM_REPS,
        0,
        4,
    )
    .map_err(|e| e.to_string())?;
    let [d0, d10, d100] = [&r.cells[0], &r.cells[1], &r.cells[2]];
    let pass = d10.mean_model_count > d0.mean_model_count
        && d100.mean_model_count < d10.mean_model_count
        && d100.mean_test_mse > d0.mean_test_mse;
    outcome(
        pass,
        format!(
            "models {:.1}/{:.1}/{:.1}, test mse {:.4}/{:.4} at 0/10/100 and 0/100 dims",
            d0.mean_model_count,
            d10.mean_model_count,
            d100.mean_model_count,
            d0.mean_test_mse,
            d100.mean_test_mse
        ),
    )
}

fn c8_noise() -> Result<Outcome, String> {
    let low = sympler::learner::DEFAULT_LAMBDA;
    let r = pendulum::run_noise_study(
        &PendulumConfig::default(),
        &[0.0, 2.0],
        &[low, NOISE_HIGH_LAMBDA],
        NOISE_REPS,
        0,
        4,
    )
    .map_err(|e| e.to_string())?;
    let cell = |sigma: f64, lambda: f64| {
        r.cells
            .iter()
            .find(|c| c.noise_sigma == sigma && c.lambda == lambda)
            .map(|c| c.mean_distance)
            .ok_or_else(|| format!("missing cell sigma={sigma} lambda={lambda}"))
    };
    let clean = cell(0.0, low)?;
    let noisy = cell(2.0, low)?;
    let shrunk = cell(0.0, NOISE_HIGH_LAMBDA)?;
    outcome(
        noisy > clean && shrunk > clean,
        format!("distance {clean:.4} clean, {noisy:.4} at sigma 2, {shrunk:.4} at lambda 15"),
    )
}

fn c9_ridge_oracle() -> Result<Outcome, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let lambdas = [1e-6, 1.0, 15.0];
    let mut worst = 0.0f64;
    for k in 0..RIDGE_INSTANCES {
        let m = rng.random_range(5..=30usize);
        let n = rng.random_range(1..=10usize);
        let lambda = lambdas[k % lambdas.len()];
        let samples: Vec<Sample> = (0..m)
            .map(|i| {
                let x: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
                Sample::new(x, rng.random_range(-10.0..10.0), i as u64)
            })
            .collect();
        let model = fit_local_model(&samples, lambda).map_err(|e| e.to_string())?;

        let x = DMatrix::from_fn(m, n + 1, |i, j| if j < n { samples[i].x[j] } else { 1.0 });
        let y = DVector::from_iterator(m, samples.iter().map(|s| s.y));
        let a = x.transpose() * &x + DMatrix::identity(n + 1, n + 1) * lambda;
        let inv = a.try_inverse().ok_or("oracle matrix is singular")?;
        let w = inv * x.transpose() * y;
        let got = DVector::from_column_slice(&model.weights);
        let rel = (&got - &w).norm() / w.norm().max(f64::MIN_POSITIVE);
        worst = worst.max(rel);
    }
    outcome(
        worst <= RIDGE_REL_TOL,
        format!("worst relative error {worst:.3e} over {RIDGE_INSTANCES} instances"),
    )
}

fn c10_protocol() -> Result<Outcome, String> {
    let mut pass = true;
    let pairs = [
        (2.0, 3.0, 0.5),
        (2.0, 2.0, 0.0),
        (2.0, 1.0, 0.0),
        (0.0, 5.0, 0.0),
        (0.0, 0.0, 0.0),
        (0.25, 1.0, 3.0),
    ];
    for (ww, wu, expected) in pairs {
        pass &= eval::forgetting_ratio(ww, wu) == expected;
    }

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = dir.path().join("stream.csv");
    let stream = write_synthetic(&data, 0)?;
    let split = SplitSpec::from_lengths(stream.len(), WARMUP, UPDATE).map_err(|e| e.to_string())?;
    let run = eval::run_clear_protocol(&stream, &split, &LearnerConfig::default())
        .map_err(|e| e.to_string())?;

    let warm_path = dir.path().join("warm.json");
    io::save_snapshot(&run.warmup_learner, &warm_path).map_err(|e| e.to_string())?;
    let warm = io::load_snapshot(&warm_path).map_err(|e| e.to_string())?;
    let replay = eval::frozen_replay(&warm, &stream, split.warmup.clone())
        .and_then(|r| r.rmse())
        .map_err(|e| e.to_string())?;
    let never_updated = eval::forgetting_ratio(run.report.loss_ww, replay);
    pass &= never_updated == 0.0;

    let final_path = dir.path().join("final.json");
    io::save_snapshot(&run.final_learner, &final_path).map_err(|e| e.to_string())?;
    let mut cut = io::load_snapshot(&final_path).map_err(|e| e.to_string())?;
    cut.truncate_models(run.warmup_learner.model_count());
    let restored = eval::frozen_replay(&cut, &stream, split.warmup.clone())
        .and_then(|r| r.rmse())
        .map_err(|e| e.to_string())?;
    pass &= restored == run.report.loss_ww;

    outcome(
        pass,
        format!(
            "formula cases checked; never-updated ratio {never_updated}; surgery L_w^w {restored} vs {}",
            run.report.loss_ww
        ),
    )
}

const STREAM_LEN: usize = 1200;
const WARMUP: usize = 300;
const UPDATE: usize = 300;

/// Two regimes joined at x = 1, with the input ramping up through warmup and
/// update and back down during evaluation.
fn synthetic_stream(seed: u64) -> Vec<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jitter = Normal::new(0.0, 0.02).unwrap();
    let noise = Normal::new(0.0, 0.1).unwrap();
    let half = (STREAM_LEN / 2) as f64;
    (0..STREAM_LEN)
        .map(|i| {
            let u = i as f64;
            let base = if u < half {
                u / WARMUP as f64
            } else {
                2.0 - (u - half) / WARMUP as f64
            };
            let x = base + jitter.sample(&mut rng);
            let f = if x < 1.0 { 2.0 * x } else { -3.0 * x + 5.0 };
            Sample::new(vec![x], f + noise.sample(&mut rng), i as u64)
        })
        .collect()
}

fn write_synthetic(path: &Path, seed: u64) -> Result<Vec<Sample>, String> {
    let stream = synthetic_stream(seed);
    io::write_samples_csv(path, &stream, &DatasetSchema::new(&["x"], "y"))
        .map_err(|e| e.to_string())?;
    io::load_csv(path, &DatasetSchema::new(&["x"], "y")).map_err(|e| e.to_string())
}

fn sympler() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sympler"))
}

fn run_cli(args: &[&str]) -> Result<(), String> {
    let out = sympler().args(args).output().map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!(
            "{args:?} exited with {}: {}",
            out.status,
            String::from_utf8_lossy(&out.stderr).trim()
        ))
    }
}

fn read_json(path: &Path) -> Result<Value, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| e.to_string())
}

fn number(v: &Value, pointer: &str) -> Result<f64, String> {
    v.pointer(pointer)
        .and_then(Value::as_f64)
        .ok_or_else(|| format!("missing {pointer}"))
}

fn c11_synthetic() -> Result<Outcome, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (mut fr, mut fr_off, mut rmse, mut rmse_naive) = (0.0, 0.0, 0.0, 0.0);
    for seed in 0..SYNTH_SEEDS {
        let data = dir.path().join(format!("stream{seed}.csv"));
        write_synthetic(&data, seed)?;
        let out = dir.path().join(format!("run{seed}"));
        run_cli(&[
            "evaluate",
            "--data",
            path_str(&data)?,
            "--warmup",
            &WARMUP.to_string(),
            "--update",
            &UPDATE.to_string(),
            "--out",
            path_str(&out)?,
        ])?;
        let report = read_json(&out.join("report.json"))?;
        let baselines = read_json(&out.join("baselines.json"))?;
        fr += number(&report, "/forgetting_ratio")?;
        rmse += number(&report, "/prediction_rmse")?;
        fr_off += number(&baselines, "/offline_ridge/forgetting_ratio")?;
        rmse_naive += number(&baselines, "/naive_prediction_rmse")?;
    }
    let k = SYNTH_SEEDS as f64;
    let (fr, fr_off, rmse, rmse_naive) = (fr / k, fr_off / k, rmse / k, rmse_naive / k);
    outcome(
        fr < fr_off && rmse < rmse_naive,
        format!(
            "forgetting {fr:.4} vs offline ridge {fr_off:.4}; prediction rmse {rmse:.4} vs naive {rmse_naive:.4}"
        ),
    )
}

fn path_str(p: &Path) -> Result<&str, String> {
    p.to_str()
        .ok_or_else(|| format!("non-utf8 path {}", p.display()))
}

fn dir_contents(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .map_err(|e| e.to_string())?
        .map(|entry| {
            let path: PathBuf = entry.map_err(|e| e.to_string())?.path();
            let bytes = fs::read(&path).map_err(|e| e.to_string())?;
            Ok((
                path.file_name().unwrap().to_string_lossy().into_owned(),
                bytes,
            ))
        })
        .collect::<Result<_, String>>()?;
    files.sort();
    Ok(files)
}

fn c12_determinism() -> Result<Outcome, String> {
    let root = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = root.path().join("stream.csv");
    write_synthetic(&data, 3)?;
    let data = path_str(&data)?.to_owned();
    let snap = root.path().join("eval-snap");
    run_cli(&[
        "evaluate",
        "--data",
        &data,
        "--warmup",
        "300",
        "--update",
        "300",
        "--out",
        path_str(&snap)?,
    ])?;
    let snapshot = path_str(&snap.join("snapshot.json"))?.to_owned();

    let runs: Vec<(&str, Vec<String>)> = vec![
        (
            "vc-table",
            vec![
                "--h-max".into(),
                "100".into(),
                "--out".into(),
                "{out}/t.csv".into(),
            ],
        ),
        (
            "pendulum-train",
            vec!["--seed".into(), "7".into(), "--out".into(), "{out}".into()],
        ),
        (
            "pendulum-forecast",
            vec!["--seed".into(), "7".into(), "--out".into(), "{out}".into()],
        ),
        (
            "pendulum-drift",
            vec!["--seed".into(), "7".into(), "--out".into(), "{out}".into()],
        ),
        (
            "pendulum-highdim",
            vec![
                "--seed", "7", "--reps", "3", "--dims", "0,5", "--jobs", "{jobs}", "--out", "{out}",
            ]
            .into_iter()
            .map(String::from)
            .collect(),
        ),
        (
            "pendulum-noise",
            vec![
                "--seed",
                "7",
                "--reps",
                "3",
                "--noise",
                "0,1",
                "--lambdas",
                "1e-6,1",
                "--jobs",
                "{jobs}",
                "--out",
                "{out}",
            ]
            .into_iter()
            .map(String::from)
            .collect(),
        ),
        (
            "evaluate",
            vec![
                "--data",
                &data,
                "--warmup",
                "300",
                "--update",
                "300",
                "--selection",
                "aggregated",
                "--seed",
                "7",
                "--out",
                "{out}",
            ]
            .into_iter()
            .map(String::from)
            .collect(),
        ),
        (
            "explain",
            vec![
                "--snapshot",
                &snapshot,
                "--x",
                "0.44",
                "--out",
                "{out}/explain.json",
            ]
            .into_iter()
            .map(String::from)
            .collect(),
        ),
        (
            "predict",
            vec![
                "--snapshot",
                &snapshot,
                "--data",
                &data,
                "--out",
                "{out}/pred.csv",
            ]
            .into_iter()
            .map(String::from)
            .collect(),
        ),
    ];

    let mut differing = Vec::new();
    let mut files = 0;
    for (cmd, args) in &runs {
        let mut outputs = Vec::new();
        for (run, jobs) in [(0, "1"), (1, "3")] {
            let out = root.path().join(format!("{cmd}-{run}"));
            fs::create_dir_all(&out).map_err(|e| e.to_string())?;
            let out_s = path_str(&out)?;
            let mut argv = vec![cmd.to_string()];
            argv.extend(
                args.iter()
                    .map(|a| a.replace("{out}", out_s).replace("{jobs}", jobs)),
            );
            let argv: Vec<&str> = argv.iter().map(String::as_str).collect();
            run_cli(&argv)?;
            outputs.push(dir_contents(&out)?);
        }
        if outputs[0].is_empty() || outputs[0] != outputs[1] {
            differing.push(*cmd);
        }
        files += outputs[0].len();
    }
    outcome(
        differing.is_empty(),
        if differing.is_empty() {
            format!(
                "{} subcommands, {files} files byte-identical across runs",
                runs.len()
            )
        } else {
            format!("outputs differ for {differing:?}")
        },
    )
}
