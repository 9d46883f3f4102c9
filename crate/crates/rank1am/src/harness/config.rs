//! Experiment description and its `key = value` file format.
//!
//! ```text
//! # comment
//! experiment_id = fig1
//! model = sign
//! d = 200
//! lambda = 50
//! sweep.sigma = 1e-5, 0.1
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::predictor::{Model, Nonlinearity};
use crate::sampler::{default_iters, Init, ProblemConfig};
use crate::{Error, Result};

/// Optional value lists; the run covers their Cartesian product.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Sweep {
    pub model: Option<Vec<String>>,
    pub d: Option<Vec<usize>>,
    pub lambda: Option<Vec<f64>>,
    pub sigma: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub experiment_id: String,
    /// Base problem; swept fields are substituted per point.
    pub problem: ProblemConfig,
    /// Use `2 ceil(log_lambda d) + 10` iterations at every sweep point.
    pub auto_iters: bool,
    pub trials: usize,
    pub sweep: Sweep,
    pub outputs: PathBuf,
    pub emit_svg: bool,
    /// Worker threads; 0 picks the number of CPUs.
    pub threads: usize,
    pub order_1d: usize,
    pub order_3d: usize,
}

/// Link functions accepted by name: `id`, `sign`, and the bounded custom link `tanh`.
pub fn link_from_name(name: &str) -> Result<Nonlinearity> {
    match name {
        "tanh" => Nonlinearity::custom("tanh", f64::tanh, 1.0),
        other => other.parse::<Model>().map(Nonlinearity::from).map_err(|_| {
            Error::Config(format!("unknown model `{other}` (expected id, sign or tanh)"))
        }),
    }
}

const KEYS: &[&str] = &[
    "experiment_id",
    "model",
    "d",
    "lambda",
    "sigma",
    "iters",
    "trials",
    "seed",
    "init",
    "alpha0",
    "beta0",
    "rotate_truth",
    "out",
    "emit_svg",
    "threads",
    "quad_order_1d",
    "quad_order_3d",
    "sweep.model",
    "sweep.d",
    "sweep.lambda",
    "sweep.sigma",
];

/// Parse `key = value` lines. Blank lines and `#` comments are skipped;
/// unknown or repeated keys are errors.
pub fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got `{raw}`", i + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if !KEYS.contains(&k) {
            return Err(Error::Config(format!("line {}: unknown key `{k}`", i + 1)));
        }
        if map.insert(k.to_string(), v.to_string()).is_some() {
            return Err(Error::Config(format!("line {}: key `{k}` given twice", i + 1)));
        }
    }
    Ok(map)
}

fn value<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config(format!("bad value for `{key}`: `{v}`")))
}

fn list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    let items: Vec<T> = v
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| value(key, s))
        .collect::<Result<_>>()?;
    if items.is_empty() {
        return Err(Error::Config(format!("`{key}` must list at least one value")));
    }
    Ok(items)
}

fn flag(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("bad value for `{key}`: `{v}` (expected true or false)"))),
    }
}

impl ExperimentSpec {
    /// Build from parsed pairs, with `overrides` applied on top.
    pub fn from_pairs(mut pairs: BTreeMap<String, String>, overrides: &[(String, String)]) -> Result<Self> {
        for (k, v) in overrides {
            if !KEYS.contains(&k.as_str()) {
                return Err(Error::Config(format!("unknown override key `{k}`")));
            }
            pairs.insert(k.clone(), v.clone());
        }
        let get = |k: &str| pairs.get(k).map(String::as_str);

        let experiment_id = get("experiment_id").unwrap_or("run").to_string();
        if experiment_id.is_empty() || !experiment_id.chars().all(|c| c.is_ascii_alphanumeric() || "_.-".contains(c)) {
            return Err(Error::Config(format!("experiment_id `{experiment_id}` must be nonempty [A-Za-z0-9_.-]")));
        }
        let psi = link_from_name(get("model").unwrap_or("id"))?;
        let d = value("d", get("d").unwrap_or("100"))?;
        let lambda = value("lambda", get("lambda").unwrap_or("20"))?;
        let sigma = value("sigma", get("sigma").unwrap_or("0"))?;
        let seed = value("seed", get("seed").unwrap_or("0"))?;
        let trials: usize = value("trials", get("trials").unwrap_or("10"))?;
        if trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        let init = match get("init").unwrap_or("random") {
            "random" => Init::RandomBall,
            "explicit" => Init::Explicit {
                alpha: value("alpha0", get("alpha0").ok_or_else(|| Error::Config("explicit init needs alpha0".into()))?)?,
                beta: value("beta0", get("beta0").ok_or_else(|| Error::Config("explicit init needs beta0".into()))?)?,
            },
            other => return Err(Error::Config(format!("bad value for `init`: `{other}` (expected random or explicit)"))),
        };
        let (auto_iters, iters) = match get("iters").unwrap_or("auto") {
            "auto" => (true, default_iters(d, lambda)),
            v => (false, value("iters", v)?),
        };
        let mut problem = ProblemConfig::new(d, lambda, sigma, psi, iters, seed, init)?;
        problem.rotate_truth = flag("rotate_truth", get("rotate_truth").unwrap_or("false"))?;

        let sweep = Sweep {
            model: get("sweep.model").map(|v| list("sweep.model", v)).transpose()?,
            d: get("sweep.d").map(|v| list("sweep.d", v)).transpose()?,
            lambda: get("sweep.lambda").map(|v| list("sweep.lambda", v)).transpose()?,
            sigma: get("sweep.sigma").map(|v| list("sweep.sigma", v)).transpose()?,
        };
        let spec = Self {
            experiment_id,
            problem,
            auto_iters,
            trials,
            sweep,
            outputs: PathBuf::from(get("out").unwrap_or("results")),
            emit_svg: flag("emit_svg", get("emit_svg").unwrap_or("false"))?,
            threads: value("threads", get("threads").unwrap_or("0"))?,
            order_1d: value("quad_order_1d", get("quad_order_1d").unwrap_or("256"))?,
            order_3d: value("quad_order_3d", get("quad_order_3d").unwrap_or("64"))?,
        };
        spec.points()?;
        Ok(spec)
    }

    pub fn parse(text: &str, overrides: &[(String, String)]) -> Result<Self> {
        Self::from_pairs(parse_pairs(text)?, overrides)
    }

    pub fn load(path: &Path, overrides: &[(String, String)]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, overrides)
    }

    /// One problem per sweep point, ordered by model, then d, lambda, sigma.
    pub fn points(&self) -> Result<Vec<ProblemConfig>> {
        let base = &self.problem;
        let models: Vec<Nonlinearity> = match &self.sweep.model {
            Some(names) => names.iter().map(|m| link_from_name(m)).collect::<Result<_>>()?,
            None => vec![base.psi.clone()],
        };
        let ds = self.sweep.d.clone().unwrap_or_else(|| vec![base.d]);
        let lambdas = self.sweep.lambda.clone().unwrap_or_else(|| vec![base.lambda]);
        let sigmas = self.sweep.sigma.clone().unwrap_or_else(|| vec![base.sigma]);
        let mut out = Vec::new();
        for psi in &models {
            for &d in &ds {
                for &lambda in &lambdas {
                    for &sigma in &sigmas {
                        let iters = if self.auto_iters { default_iters(d, lambda) } else { base.iters };
                        let mut p = ProblemConfig::new(d, lambda, sigma, psi.clone(), iters, base.master_seed, base.init)?;
                        p.rotate_truth = base.rotate_truth;
                        out.push(p);
                    }
                }
            }
        }
        Ok(out)
    }

    /// Reloadable `key = value` text describing this experiment exactly.
    pub fn resolved(&self) -> String {
        let p = &self.problem;
        let join = |v: Vec<String>| v.join(", ");
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("experiment_id", self.experiment_id.clone());
        kv("model", p.psi.name().to_string());
        kv("d", p.d.to_string());
        kv("lambda", p.lambda.to_string());
        kv("sigma", p.sigma.to_string());
        let swept_shape = self.sweep.d.is_some() || self.sweep.lambda.is_some();
        kv("iters", if self.auto_iters && swept_shape { "auto".into() } else { p.iters.to_string() });
        kv("trials", self.trials.to_string());
        kv("seed", p.master_seed.to_string());
        match p.init {
            Init::RandomBall => kv("init", "random".into()),
            Init::Explicit { alpha, beta } => {
                kv("init", "explicit".into());
                kv("alpha0", alpha.to_string());
                kv("beta0", beta.to_string());
            }
        }
        kv("rotate_truth", p.rotate_truth.to_string());
        kv("out", self.outputs.display().to_string());
        kv("emit_svg", self.emit_svg.to_string());
        kv("threads", self.threads.to_string());
        kv("quad_order_1d", self.order_1d.to_string());
        kv("quad_order_3d", self.order_3d.to_string());
        if let Some(v) = &self.sweep.model {
            kv("sweep.model", v.join(", "));
        }
        if let Some(v) = &self.sweep.d {
            kv("sweep.d", join(v.iter().map(|x| x.to_string()).collect()));
        }
        if let Some(v) = &self.sweep.lambda {
            kv("sweep.lambda", join(v.iter().map(|x| x.to_string()).collect()));
        }
        if let Some(v) = &self.sweep.sigma {
            kv("sweep.sigma", join(v.iter().map(|x| x.to_string()).collect()));
        }
        s
    }
}
