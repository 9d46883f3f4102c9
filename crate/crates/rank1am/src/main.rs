use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use rank1am::constants::{solve_c, ModelConstants};
use rank1am::harness::format::{parse_real, real};
use rank1am::harness::{self, classify_model, containment, link_from_name, ExperimentSpec, TRIALS_HEADER};
use rank1am::predictor::{det_trajectory, StatePoint};
use rank1am::quad::{build_folded_rule, QuadratureRule};
use rank1am::rmt::concentration_report;
use rank1am::{Error, Result};

/// Sample-split alternating minimization for rank-one matrix sensing and its
/// deterministic state evolution.
#[derive(Parser)]
#[command(name = "rank1am", version)]
struct Cli {
    /// Master seed (overrides the config file for `run`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory. Without it, `constants`, `predict`, `rmt` and `classify` print to stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (0 = one per CPU).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Print lambda, C(lambda), tau, C2, C3 as one CSV row.
    Constants {
        #[arg(long)]
        lambda: f64,
        #[command(flatten)]
        quad: Quad,
    },
    /// Deterministic trajectory from an explicit state.
    Predict {
        /// id, sign or tanh
        #[arg(long, default_value = "id")]
        model: String,
        #[arg(long)]
        lambda: f64,
        #[arg(long, default_value_t = 0.0)]
        sigma: f64,
        #[arg(long)]
        alpha0: f64,
        #[arg(long)]
        beta0: f64,
        #[arg(long, default_value_t = 10)]
        iters: usize,
        #[command(flatten)]
        quad: Quad,
    },
    /// Monte Carlo experiment from a key = value config.
    Run {
        /// Config file; every key can also be given with --set.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override a config key, e.g. `--set sigma=0.1`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        /// Also write SVG plots.
        #[arg(long)]
        svg: bool,
        /// Exit with 4 unless the deterministic curve stays inside the empirical
        /// band for 90% of pre-floor iterations and the population curve for under 20%.
        #[arg(long)]
        check: bool,
    },
    /// Concentration of tr((X^T G^2 X)^{-1}) around 1/C(n/d).
    Rmt {
        #[arg(long)]
        d: usize,
        /// Comma-separated oversampling ratios; n = round(lambda d).
        #[arg(long, value_delimiter = ',', required = true)]
        lambda_list: Vec<f64>,
        #[arg(long, default_value_t = 20)]
        trials: usize,
        /// Exit with 4 unless band_hits >= 0.9 (n >= 2000) and lambda_min/n >= 0.05 everywhere.
        #[arg(long)]
        check: bool,
        #[command(flatten)]
        quad: Quad,
    },
    /// Classify each trial of a trials.csv as identity or sign.
    Classify {
        #[arg(long)]
        input: PathBuf,
        /// Exit with 4 unless at least 90% of identity/sign trials are classified correctly.
        #[arg(long)]
        check: bool,
        #[command(flatten)]
        quad: Quad,
    },
}

#[derive(Args)]
struct Quad {
    /// One-dimensional quadrature order.
    #[arg(long, default_value_t = 256)]
    order: usize,
}

impl Quad {
    fn rule(&self) -> Result<QuadratureRule> {
        build_folded_rule(self.order).map_err(|e| Error::Config(e.to_string()))
    }
}

enum Outcome {
    Ok,
    CheckFailed(String),
}

fn emit(out: &Option<PathBuf>, file: &str, text: &str) -> Result<()> {
    match out {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
            let path = dir.join(file);
            std::fs::write(&path, text).map_err(|e| io_err(&path, e))
        }
        None => std::io::stdout().write_all(text.as_bytes()).map_err(|e| io_err(Path::new("<stdout>"), e)),
    }
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io { path: path.to_path_buf(), source }
}

fn constants(lambda: f64, quad: &Quad, out: &Option<PathBuf>) -> Result<Outcome> {
    let mc = solve_c(lambda, &quad.rule()?)?;
    let text = format!(
        "lambda,c_lambda,tau,c2,c3\n{}\n",
        [mc.lambda, mc.c_lambda, mc.tau, mc.c2, mc.c3].map(real).join(",")
    );
    emit(out, "constants.csv", &text)?;
    Ok(Outcome::Ok)
}

#[allow(clippy::too_many_arguments)]
fn predict(model: &str, lambda: f64, sigma: f64, alpha0: f64, beta0: f64, iters: usize, quad: &Quad, out: &Option<PathBuf>) -> Result<Outcome> {
    let psi = link_from_name(model)?;
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::Config(format!("sigma must be finite and >= 0, got {sigma}")));
    }
    if !(beta0 >= 0.0) {
        return Err(Error::Config(format!("beta0 must be >= 0, got {beta0}")));
    }
    let rule = quad.rule()?;
    let rule_3d = build_folded_rule(64)?;
    let mc = solve_c(lambda, &rule)?;
    let steps = det_trajectory(StatePoint::new(alpha0, beta0), &psi, sigma, &mc, &rule, &rule_3d, iters)?;
    let mut text = String::from("iter,half,alpha_det,beta_det_sq,ratio_det\n");
    let mut line = |iter: usize, half: &str, a: f64, b2: f64| {
        text.push_str(&format!("{iter},{half},{},{},{}\n", real(a), real(b2), real(StatePoint::new(a, b2.sqrt()).ratio())));
    };
    line(0, "init", alpha0, beta0 * beta0);
    for (t, s) in steps.iter().enumerate() {
        line(t + 1, "nu", s.nu_half.alpha_det, s.nu_half.beta_det_sq);
        line(t + 1, "mu", s.mu_half.alpha_det, s.mu_half.beta_det_sq);
    }
    emit(out, "predict.csv", &text)?;
    Ok(Outcome::Ok)
}

fn run(cli: &Cli, config: &Option<PathBuf>, set: &[String], svg: bool, check: bool) -> Result<Outcome> {
    let mut overrides = Vec::new();
    for s in set {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{s}`")))?;
        overrides.push((k.trim().to_string(), v.trim().to_string()));
    }
    if let Some(seed) = cli.seed {
        overrides.push(("seed".into(), seed.to_string()));
    }
    if let Some(t) = cli.threads {
        overrides.push(("threads".into(), t.to_string()));
    }
    if let Some(o) = &cli.out {
        overrides.push(("out".into(), o.display().to_string()));
    }
    if svg {
        overrides.push(("emit_svg".into(), "true".into()));
    }
    let spec = match config {
        Some(path) => ExperimentSpec::load(path, &overrides)?,
        None => ExperimentSpec::parse("", &overrides)?,
    };
    let outcome = harness::run_experiment(&spec)?;
    let rule = build_folded_rule(spec.order_1d)?;
    let mut failed = Vec::new();
    for p in &outcome.points {
        let c = &p.config;
        let s = &p.summary;
        let tag = format!("{} d={} lambda={} sigma={}", c.psi.name(), c.d, c.lambda, c.sigma);
        eprintln!(
            "{tag}: {}/{} trials ok, final median ratio {:.3e}, fitted rate {:.3e}, floor {:.3e}",
            s.trials_ok,
            spec.trials,
            s.ratio.last().map_or(f64::NAN, |q| q.median),
            s.fitted_rate,
            s.floor_hat
        );
        if s.init_out_of_band > 0 {
            eprintln!("{tag}: {} random initial states outside the initialization band", s.init_out_of_band);
        }
        if check {
            match containment(p, &rule)? {
                Some(ct) => {
                    eprintln!("{tag}: deterministic inside band {:.3}, population {:.3} over {} pre-floor iterations", ct.deterministic, ct.population, ct.window);
                    if ct.deterministic < 0.9 || ct.population >= 0.2 {
                        failed.push(tag);
                    }
                }
                None => eprintln!("{tag}: containment check not applicable"),
            }
        }
    }
    eprintln!("wrote {}", spec.outputs.display());
    Ok(if failed.is_empty() { Outcome::Ok } else { Outcome::CheckFailed(format!("containment failed for {}", failed.join("; "))) })
}

fn rmt(cli: &Cli, d: usize, lambdas: &[f64], trials: usize, check: bool, quad: &Quad) -> Result<Outcome> {
    let n_list: Vec<usize> = lambdas.iter().map(|l| (l * d as f64).round() as usize).collect();
    if n_list.iter().any(|&n| n <= d) || d < 1 {
        return Err(Error::Config(format!("every lambda must give n > d, got n = {n_list:?} at d = {d}")));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let rule = quad.rule()?;
    let rows = pool.install(|| concentration_report(&n_list, d, trials, cli.seed.unwrap_or(0), &rule))?;
    let mut text = String::from("n,d,lambda,tau,mean_abs_dev,std_abs_dev,band_hits,min_lambda_min_over_n,c90\n");
    let mut failed = Vec::new();
    for r in &rows {
        text.push_str(&format!(
            "{},{},{}\n",
            r.n,
            r.d,
            [r.n as f64 / r.d as f64, r.tau, r.mean_abs_dev, r.std_abs_dev, r.band_hits, r.min_lambda_min_over_n, r.c90].map(real).join(",")
        ));
        if (r.n >= 2000 && r.band_hits < 0.9) || r.min_lambda_min_over_n < 0.05 {
            failed.push(r.n.to_string());
        }
    }
    emit(&cli.out, "rmt.csv", &text)?;
    Ok(if check && !failed.is_empty() { Outcome::CheckFailed(format!("rmt bands violated at n = {}", failed.join(", "))) } else { Outcome::Ok })
}

struct Series {
    key: Vec<String>,
    sigma: f64,
    lambda: f64,
    ratios: BTreeMap<u64, f64>,
}

fn read_series(path: &Path) -> Result<Vec<Series>> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap_or("").split(',').collect();
    if header != TRIALS_HEADER {
        return Err(Error::Config(format!("{} does not have the trials.csv header", path.display())));
    }
    let col = |name: &str| TRIALS_HEADER.iter().position(|h| *h == name).expect("known column");
    let (c_iter, c_half, c_ratio) = (col("iter"), col("half"), col("ratio_emp"));
    let mut order: Vec<Series> = Vec::new();
    let mut index: HashMap<Vec<String>, usize> = HashMap::new();
    for (i, line) in lines.enumerate() {
        let f: Vec<&str> = line.split(',').collect();
        let bad = || Error::Config(format!("{} line {}: malformed row", path.display(), i + 2));
        if f.len() != TRIALS_HEADER.len() {
            return Err(bad());
        }
        if f[c_half] == "nu" {
            continue;
        }
        let key: Vec<String> = f[..6].iter().map(|s| s.to_string()).collect();
        let slot = *index.entry(key.clone()).or_insert_with(|| {
            order.push(Series { key, sigma: f64::NAN, lambda: f64::NAN, ratios: BTreeMap::new() });
            order.len() - 1
        });
        let s = &mut order[slot];
        s.lambda = parse_real(f[3]).ok_or_else(bad)?;
        s.sigma = parse_real(f[4]).ok_or_else(bad)?;
        let iter: u64 = f[c_iter].parse().map_err(|_| bad())?;
        s.ratios.insert(iter, parse_real(f[c_ratio]).ok_or_else(bad)?);
    }
    Ok(order)
}

fn classify(cli: &Cli, input: &Path, check: bool, quad: &Quad) -> Result<Outcome> {
    let rule = quad.rule()?;
    let series = read_series(input)?;
    let mut constants: HashMap<u64, ModelConstants> = HashMap::new();
    let mut text = String::from("experiment_id,model,d,lambda,sigma,trial,predicted,distance_identity,distance_sign,tie,window\n");
    let (mut correct, mut labelled) = (0usize, 0usize);
    for s in &series {
        let mc = match constants.get(&s.lambda.to_bits()) {
            Some(mc) => *mc,
            None => {
                let mc = solve_c(s.lambda, &rule)?;
                constants.insert(s.lambda.to_bits(), mc);
                mc
            }
        };
        let ratios: Vec<f64> = s.ratios.values().copied().collect();
        let truth = s.key[1].as_str();
        let labelled_row = truth == "identity" || truth == "sign";
        labelled += usize::from(labelled_row);
        match classify_model(&ratios, &mc, s.sigma, &rule) {
            Ok(c) => {
                correct += usize::from(labelled_row && truth == c.model.name());
                text.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    s.key.join(","),
                    c.model.name(),
                    real(c.distance_identity),
                    real(c.distance_sign),
                    c.tie,
                    c.window
                ));
            }
            // too few usable iterations for this trial; counted as a miss
            Err(Error::Window(msg)) => {
                eprintln!("trial {}: {msg}", s.key[5]);
                text.push_str(&format!("{},none,nan,nan,false,0\n", s.key.join(",")));
            }
            Err(e) => return Err(e),
        }
    }
    emit(&cli.out, "classify.csv", &text)?;
    if labelled > 0 {
        eprintln!("accuracy {correct}/{labelled}");
    }
    Ok(if check && (labelled == 0 || (correct as f64) < 0.9 * labelled as f64) {
        Outcome::CheckFailed(format!("classification accuracy {correct}/{labelled} below 90%"))
    } else {
        Outcome::Ok
    })
}

fn dispatch(cli: &Cli) -> Result<Outcome> {
    match &cli.cmd {
        Cmd::Constants { lambda, quad } => constants(*lambda, quad, &cli.out),
        Cmd::Predict { model, lambda, sigma, alpha0, beta0, iters, quad } => predict(model, *lambda, *sigma, *alpha0, *beta0, *iters, quad, &cli.out),
        Cmd::Run { config, set, svg, check } => run(cli, config, set, *svg, *check),
        Cmd::Rmt { d, lambda_list, trials, check, quad } => rmt(cli, *d, lambda_list, *trials, *check, quad),
        Cmd::Classify { input, check, quad } => classify(cli, input, *check, quad),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::CheckFailed(msg)) => {
            eprintln!("check failed: {msg}");
            ExitCode::from(4)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
