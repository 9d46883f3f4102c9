//! Experiment orchestration: seeded parallel trials over sweep points,
//! deterministic aggregation, and CSV/SVG output.
//!
//! Files written to the output directory:
//! - `resolved_config.txt`: the full experiment config as reloadable `key = value` text
//! - `trials.csv`: one row per trial, iteration and half-step; `iter = 0`,
//!   `half = init` holds the initial state
//! - `deterministic.csv`: the pure deterministic recursion from each trial's
//!   initial state
//! - `summary.csv`: per-iteration quantiles of the empirical ratio next to the
//!   deterministic and population curves
//! - `errors.csv`: trials that failed, with the error message
//! - `ratio_p<k>.svg` per sweep point when enabled

pub mod config;
pub mod fit;
pub mod format;
pub mod svg;

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;

pub use config::{link_from_name, ExperimentSpec, Sweep};
pub use fit::{
    band_containment, classify_model, estimate_floor, fit_rate, fit_rate_strided, floor_or_min, Classification, Quantiles,
};

use crate::am::{population, run_trajectory, Rules, Trajectory};
use crate::constants::{solve_c, ModelConstants};
use crate::predictor::{det_trajectory, model_floor, DetStep, StatePoint};
use crate::sampler::{init_in_band, make_truth, random_init, ProblemConfig};
use crate::{Error, Result};
use format::{real, CsvWriter};

pub const TRIALS_HEADER: [&str; 15] = [
    "experiment_id",
    "model",
    "d",
    "lambda",
    "sigma",
    "trial",
    "iter",
    "half",
    "alpha_emp",
    "beta_emp",
    "alpha_det",
    "beta_det_sq",
    "ratio_emp",
    "ratio_det",
    "alpha_pop",
];

/// Aggregates for one sweep point. Index `t` of the per-iteration series is the
/// state after `t` full iterations; index 0 is the initial state.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialSummary {
    pub trials_ok: usize,
    /// Empirical squared ratio across successful trials.
    pub ratio: Vec<Quantiles>,
    /// Pure deterministic recursion from the trial with the median initial ratio.
    pub ratio_det: Vec<f64>,
    /// Pure population recursion from the same initial state.
    pub ratio_pop: Vec<f64>,
    /// Trial whose initial state seeds `ratio_det` and `ratio_pop`.
    pub det_trial: u64,
    /// Median over trials of `|alpha_t - alpha_det_t|` (mu-half, one-step prediction); NaN at t = 0.
    pub dev_alpha: Vec<f64>,
    /// Median over trials of `|beta_t^2 - beta_det_t^2|`; NaN at t = 0.
    pub dev_beta_sq: Vec<f64>,
    /// Contraction factor fitted to the median ratio series; NaN when no fit window exists.
    pub fitted_rate: f64,
    /// Plateau of the median ratio series; NaN when it has not settled.
    pub floor_hat: f64,
    /// Random initial states outside `|alpha| >= 1/(50 sqrt d)`, `0.8 <= beta^2 <= 1.2`.
    pub init_out_of_band: usize,
}

#[derive(Debug, Clone)]
pub struct PointResult {
    pub config: ProblemConfig,
    pub constants: ModelConstants,
    /// Successful trials in trial order.
    pub trajectories: Vec<Trajectory>,
    /// Pure deterministic recursion per successful trial, same order.
    pub pure: Vec<Vec<DetStep>>,
    /// `(trial, message)` for failed trials.
    pub failures: Vec<(u64, String)>,
    pub summary: TrialSummary,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub points: Vec<PointResult>,
}

struct TrialRun {
    traj: Trajectory,
    pure: Vec<DetStep>,
}

fn one_trial(config: &ProblemConfig, mc: &ModelConstants, rules: &Rules, trial: u64) -> Result<TrialRun> {
    let truth = make_truth(config);
    let mu0 = random_init(config, trial);
    let traj = run_trajectory(config, (&truth.0, &truth.1), &mu0, mc, rules, trial)?;
    let pure = det_trajectory(traj.init, &config.psi, config.sigma, mc, &rules.one_d, &rules.three_d, config.iters)?;
    Ok(TrialRun { traj, pure })
}

fn summarize(config: &ProblemConfig, rules: &Rules, runs: &[TrialRun]) -> Result<TrialSummary> {
    let t_len = config.iters + 1;
    let ratio: Vec<Quantiles> = (0..t_len)
        .map(|t| {
            let v: Vec<f64> = runs
                .iter()
                .map(|r| if t == 0 { r.traj.init.ratio() } else { r.traj.iters[t - 1].ratio_emp() })
                .collect();
            Quantiles::of(&v).expect("at least one successful trial")
        })
        .collect();

    let mut by_init: Vec<(f64, usize)> = runs.iter().enumerate().map(|(i, r)| (r.traj.init.ratio(), i)).collect();
    by_init.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let pick = &runs[by_init[(by_init.len() - 1) / 2].1];
    let mut ratio_det = vec![pick.traj.init.ratio()];
    ratio_det.extend(pick.pure.iter().map(|s| s.mu_half.ratio()));
    let mut ratio_pop = vec![pick.traj.init.ratio()];
    let mut state = pick.traj.init;
    for _ in 0..config.iters {
        let nu = population(state, config, rules)?.state();
        state = population(nu, config, rules)?.state();
        ratio_pop.push(state.ratio());
    }

    let per_iter = |f: &dyn Fn(&TrialRun, usize) -> f64| -> Vec<f64> {
        let mut out = vec![f64::NAN];
        out.extend((0..config.iters).map(|t| fit::median(&runs.iter().map(|r| f(r, t)).collect::<Vec<_>>())));
        out
    };
    let dev_alpha = per_iter(&|r, t| r.traj.iters[t].mu.dev_alpha());
    let dev_beta_sq = per_iter(&|r, t| r.traj.iters[t].mu.dev_beta_sq());

    let medians: Vec<f64> = ratio.iter().map(|q| q.median).collect();
    let floor_hat = estimate_floor(&medians).unwrap_or(f64::NAN);
    let fitted_rate = fit_rate(&medians, floor_or_min(&medians)).unwrap_or(f64::NAN);
    let init_out_of_band = match config.init {
        crate::sampler::Init::RandomBall => runs.iter().filter(|r| !init_in_band(r.traj.init, config.d)).count(),
        crate::sampler::Init::Explicit { .. } => 0,
    };
    Ok(TrialSummary {
        trials_ok: runs.len(),
        ratio,
        ratio_det,
        ratio_pop,
        det_trial: pick.traj.trial,
        dev_alpha,
        dev_beta_sq,
        fitted_rate,
        floor_hat,
        init_out_of_band,
    })
}

/// Run every (sweep point, trial) pair without writing files.
///
/// Trials run on a pool of `spec.threads` workers; each result lands in a slot
/// keyed by its position, so output never depends on scheduling. A failed trial
/// is recorded and skipped; a point where every trial fails is an error.
pub fn simulate(spec: &ExperimentSpec) -> Result<ExperimentOutcome> {
    let points = spec.points()?;
    let rules = Rules::new(spec.order_1d, spec.order_3d).map_err(|e| Error::Config(e.to_string()))?;
    let mut constants: BTreeMap<u64, ModelConstants> = BTreeMap::new();
    for p in &points {
        if !constants.contains_key(&p.lambda.to_bits()) {
            constants.insert(p.lambda.to_bits(), solve_c(p.lambda, &rules.one_d)?);
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let jobs: Vec<(usize, u64)> = (0..points.len()).flat_map(|p| (0..spec.trials as u64).map(move |t| (p, t))).collect();
    let mut results: Vec<Result<TrialRun>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(p, t)| one_trial(&points[p], &constants[&points[p].lambda.to_bits()], &rules, t))
            .collect()
    });

    let mut out = Vec::with_capacity(points.len());
    for (idx, config) in points.into_iter().enumerate() {
        let mut runs = Vec::new();
        let mut failures = Vec::new();
        for (t, r) in results.drain(..spec.trials).enumerate() {
            match r {
                Ok(run) => runs.push(run),
                Err(e) => failures.push((t as u64, e.to_string())),
            }
        }
        if runs.is_empty() {
            return Err(Error::Numeric(format!(
                "all {} trials failed at sweep point {idx} ({}, d = {}, lambda = {}, sigma = {}); first: {}",
                spec.trials,
                config.psi.name(),
                config.d,
                config.lambda,
                config.sigma,
                failures[0].1
            )));
        }
        let summary = summarize(&config, &rules, &runs)?;
        let constants = constants[&config.lambda.to_bits()];
        let (trajectories, pure) = runs.into_iter().map(|r| (r.traj, r.pure)).unzip();
        out.push(PointResult { config, constants, trajectories, pure, failures, summary });
    }
    Ok(ExperimentOutcome { points: out })
}

/// [`simulate`], then write all output files to `spec.outputs`.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentOutcome> {
    let outcome = simulate(spec)?;
    write_outputs(spec, &outcome)?;
    Ok(outcome)
}

fn point_key(spec: &ExperimentSpec, c: &ProblemConfig) -> Vec<String> {
    vec![spec.experiment_id.clone(), c.psi.name().to_string(), c.d.to_string(), real(c.lambda), real(c.sigma)]
}

pub fn write_outputs(spec: &ExperimentSpec, outcome: &ExperimentOutcome) -> Result<()> {
    let dir = &spec.outputs;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let cfg_path = dir.join("resolved_config.txt");
    std::fs::write(&cfg_path, spec.resolved()).map_err(|e| Error::io(&cfg_path, e))?;

    write_trials(spec, outcome, &dir.join("trials.csv"))?;
    write_deterministic(spec, outcome, &dir.join("deterministic.csv"))?;
    write_summary(spec, outcome, &dir.join("summary.csv"))?;

    let mut errors = CsvWriter::create(&dir.join("errors.csv"), &["experiment_id", "model", "d", "lambda", "sigma", "trial", "message"])?;
    for p in &outcome.points {
        for (trial, msg) in &p.failures {
            let mut row = point_key(spec, &p.config);
            row.push(trial.to_string());
            row.push(format!("\"{}\"", msg.replace('"', "'")));
            errors.row(row)?;
        }
    }
    errors.finish()?;

    if spec.emit_svg {
        for (k, p) in outcome.points.iter().enumerate() {
            let c = &p.config;
            let title = format!("{}: {}, d = {}, lambda = {}, sigma = {}, {} trials", spec.experiment_id, c.psi.name(), c.d, c.lambda, c.sigma, p.summary.trials_ok);
            let s = &p.summary;
            let path = dir.join(format!("ratio_p{k}.svg"));
            std::fs::write(&path, svg::ratio_plot(&title, &s.ratio, &s.ratio_det, &s.ratio_pop)).map_err(|e| Error::io(&path, e))?;
        }
    }
    Ok(())
}

fn write_trials(spec: &ExperimentSpec, outcome: &ExperimentOutcome, path: &Path) -> Result<()> {
    let mut w = CsvWriter::create(path, &TRIALS_HEADER)?;
    for p in &outcome.points {
        let key = point_key(spec, &p.config);
        for traj in &p.trajectories {
            let head = |iter: usize, half: &str| {
                let mut row = key.clone();
                row.extend([traj.trial.to_string(), iter.to_string(), half.to_string()]);
                row
            };
            let mut row = head(0, "init");
            let s = traj.init;
            row.extend([real(s.alpha), real(s.beta), real(f64::NAN), real(f64::NAN), real(s.ratio()), real(f64::NAN), real(f64::NAN)]);
            w.row(row)?;
            for (t, rec) in traj.iters.iter().enumerate() {
                for (half, h) in [("nu", &rec.nu), ("mu", &rec.mu)] {
                    let mut row = head(t + 1, half);
                    row.extend([
                        real(h.state.alpha),
                        real(h.state.beta),
                        real(h.pred.alpha_det),
                        real(h.pred.beta_det_sq),
                        real(h.state.ratio()),
                        real(h.pred.ratio()),
                        real(h.pop.alpha_det),
                    ]);
                    w.row(row)?;
                }
            }
        }
    }
    w.finish()
}

fn write_deterministic(spec: &ExperimentSpec, outcome: &ExperimentOutcome, path: &Path) -> Result<()> {
    let header = ["experiment_id", "model", "d", "lambda", "sigma", "trial", "iter", "half", "alpha_det", "beta_det_sq", "ratio_det"];
    let mut w = CsvWriter::create(path, &header)?;
    for p in &outcome.points {
        let key = point_key(spec, &p.config);
        for (traj, pure) in p.trajectories.iter().zip(&p.pure) {
            let mut emit = |iter: usize, half: &str, alpha: f64, beta_sq: f64| {
                let mut row = key.clone();
                row.extend([traj.trial.to_string(), iter.to_string(), half.to_string()]);
                row.extend([real(alpha), real(beta_sq), real(StatePoint::new(alpha, beta_sq.sqrt()).ratio())]);
                w.row(row)
            };
            emit(0, "init", traj.init.alpha, traj.init.beta * traj.init.beta)?;
            for (t, step) in pure.iter().enumerate() {
                emit(t + 1, "nu", step.nu_half.alpha_det, step.nu_half.beta_det_sq)?;
                emit(t + 1, "mu", step.mu_half.alpha_det, step.mu_half.beta_det_sq)?;
            }
        }
    }
    w.finish()
}

fn write_summary(spec: &ExperimentSpec, outcome: &ExperimentOutcome, path: &Path) -> Result<()> {
    let header = [
        "experiment_id",
        "model",
        "d",
        "lambda",
        "sigma",
        "iter",
        "trials_ok",
        "ratio_min",
        "ratio_q25",
        "ratio_median",
        "ratio_q75",
        "ratio_max",
        "ratio_det",
        "ratio_pop",
        "dev_alpha_median",
        "dev_beta_sq_median",
        "fitted_rate",
        "floor_hat",
    ];
    let mut w = CsvWriter::create(path, &header)?;
    for p in &outcome.points {
        let s = &p.summary;
        for (t, q) in s.ratio.iter().enumerate() {
            let mut row = point_key(spec, &p.config);
            row.extend([t.to_string(), s.trials_ok.to_string()]);
            row.extend(
                [q.min, q.q25, q.median, q.q75, q.max, s.ratio_det[t], s.ratio_pop[t], s.dev_alpha[t], s.dev_beta_sq[t], s.fitted_rate, s.floor_hat]
                    .map(real),
            );
            w.row(row)?;
        }
    }
    w.finish()
}

/// Share of pre-floor iterations at which a curve sits inside the empirical
/// min-max band.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Containment {
    /// Floor of the deterministic recursion.
    pub model_floor: f64,
    pub deterministic: f64,
    pub population: f64,
    /// Iterations counted.
    pub window: usize,
}

/// Containment of the pure deterministic and population curves, with pre-floor
/// iterations judged on the deterministic curve. `None` for links without a
/// closed-form floor or when the curve starts at the floor.
pub fn containment(point: &PointResult, rule: &crate::quad::QuadratureRule) -> Result<Option<Containment>> {
    let Some(model) = point.config.psi.model() else { return Ok(None) };
    let floor = model_floor(model, point.config.sigma, &point.constants, rule)?;
    let s = &point.summary;
    let window = (1..s.ratio_det.len()).filter(|&t| s.ratio_det[t] > fit::PRE_FLOOR_FACTOR * floor).count();
    let det = band_containment(&s.ratio, &s.ratio_det, &s.ratio_det, floor);
    let pop = band_containment(&s.ratio, &s.ratio_pop, &s.ratio_det, floor);
    Ok(det.zip(pop).map(|(deterministic, population)| Containment { model_floor: floor, deterministic, population, window }))
}
