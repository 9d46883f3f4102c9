//! Statistics on squared-ratio series: quantiles, contraction-rate fits,
//! floor estimates and model selection.

use crate::constants::ModelConstants;
use crate::predictor::{ratio_trajectory, Model};
use crate::quad::QuadratureRule;
use crate::{Error, Result};

/// A ratio is pre-floor while it exceeds this multiple of the floor.
pub const PRE_FLOOR_FACTOR: f64 = 10.0;
/// Number of trailing values inspected by [`estimate_floor`].
pub const FLOOR_WINDOW: usize = 5;
/// Plateau test: max/min of the trailing window stays below this.
pub const PLATEAU_SPREAD: f64 = 1.5;
/// Distances closer than this count as a tie and resolve to identity.
pub const TIE_TOLERANCE: f64 = 1e-9;
/// Minimum classification window in full iterations.
pub const MIN_CLASSIFY_WINDOW: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quantiles {
    pub min: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub max: f64,
}

/// Linear interpolation between order statistics of a sorted slice.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = p * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    if lo == hi || sorted[lo] == sorted[hi] {
        return sorted[lo];
    }
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    quantile(&v, 0.5)
}

impl Quantiles {
    /// `None` for an empty sample. Infinite ratios sort to the top.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        Some(Self {
            min: v[0],
            q25: quantile(&v, 0.25),
            median: quantile(&v, 0.5),
            q75: quantile(&v, 0.75),
            max: v[v.len() - 1],
        })
    }

    pub fn contains(&self, x: f64) -> bool {
        self.min <= x && x <= self.max
    }
}

/// Fraction of pre-floor iterations `t >= 1` at which `curve[t]` lies in `band[t]`.
/// Pre-floor is judged on `reference[t] > 10 floor`. `None` when no iteration qualifies.
pub fn band_containment(band: &[Quantiles], curve: &[f64], reference: &[f64], floor: f64) -> Option<f64> {
    let len = band.len().min(curve.len()).min(reference.len());
    let idx: Vec<usize> = (1..len).filter(|&t| reference[t] > PRE_FLOOR_FACTOR * floor).collect();
    if idx.is_empty() {
        return None;
    }
    let hits = idx.iter().filter(|&&t| band[t].contains(curve[t])).count();
    Some(hits as f64 / idx.len() as f64)
}

/// Median of the last five values once they agree within 50%.
pub fn estimate_floor(series: &[f64]) -> Result<f64> {
    if series.len() < FLOOR_WINDOW {
        return Err(Error::Window(format!("need {FLOOR_WINDOW} values to estimate a floor, got {}", series.len())));
    }
    let tail = &series[series.len() - FLOOR_WINDOW..];
    if tail.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::NotConverged(format!("trailing ratios are not finite and nonnegative: {tail:?}")));
    }
    let lo = tail.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = tail.iter().copied().fold(0.0, f64::max);
    if !(hi < PLATEAU_SPREAD * lo) {
        return Err(Error::NotConverged(format!("no plateau: trailing ratios span [{lo:e}, {hi:e}]")));
    }
    Ok(median(tail))
}

/// [`estimate_floor`] when the series has plateaued, else its smallest finite value.
pub fn floor_or_min(series: &[f64]) -> f64 {
    estimate_floor(series)
        .unwrap_or_else(|_| series.iter().copied().filter(|v| v.is_finite()).fold(f64::INFINITY, f64::min))
}

/// Per-iteration contraction factor: `exp(slope)` of the least-squares line
/// through `ln(r_t - floor_hat)` over the leading pre-floor stretch.
pub fn fit_rate(series: &[f64], floor_hat: f64) -> Result<f64> {
    fit_rate_strided(series, floor_hat, 1)
}

/// As [`fit_rate`] for a series sampled `steps_per_iteration` times per iteration
/// (for example both half-steps); the per-step factor is raised to that power.
pub fn fit_rate_strided(series: &[f64], floor_hat: f64, steps_per_iteration: usize) -> Result<f64> {
    if !(floor_hat >= 0.0) || !floor_hat.is_finite() {
        return Err(Error::InvalidArgument(format!("floor estimate must be finite and >= 0, got {floor_hat}")));
    }
    if steps_per_iteration == 0 {
        return Err(Error::InvalidArgument("steps per iteration must be positive".into()));
    }
    let k = series
        .iter()
        .take_while(|r| r.is_finite() && **r > PRE_FLOOR_FACTOR * floor_hat && **r > 0.0)
        .count();
    if k < 3 {
        return Err(Error::Window(format!("need 3 pre-floor points above {:e}, got {k}", PRE_FLOOR_FACTOR * floor_hat)));
    }
    let ys: Vec<f64> = series[..k].iter().map(|r| (r - floor_hat).ln()).collect();
    let n = k as f64;
    let tbar = (n - 1.0) / 2.0;
    let ybar = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (t, y) in ys.iter().enumerate() {
        let dt = t as f64 - tbar;
        sxy += dt * (y - ybar);
        sxx += dt * dt;
    }
    let slope = sxy / sxx;
    if !(slope < 0.0) {
        return Err(Error::Window(format!("pre-floor window shows no decay (slope {slope:e})")));
    }
    Ok((slope * steps_per_iteration as f64).exp())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Classification {
    pub model: Model,
    /// Mean squared log-distance to the identity recursion.
    pub distance_identity: f64,
    pub distance_sign: f64,
    /// Distances agreed within [`TIE_TOLERANCE`].
    pub tie: bool,
    /// Iterations compared.
    pub window: usize,
}

impl Classification {
    /// `distance_sign - distance_identity`; positive favours identity.
    pub fn score(&self) -> f64 {
        self.distance_sign - self.distance_identity
    }
}

/// Pick the link whose deterministic ratio recursion best explains an observed
/// series `[x_0, x_1, ..., x_T]` of squared ratios after each full iteration.
///
/// Both recursions start from `x_0`. The window covers the leading iterations
/// still above ten times the observed floor, and at least five.
pub fn classify_model(series: &[f64], mc: &ModelConstants, sigma: f64, rule: &QuadratureRule) -> Result<Classification> {
    let x0 = *series.first().ok_or_else(|| Error::Window("empty ratio series".into()))?;
    let rest = &series[1..];
    let finite = rest.iter().filter(|v| v.is_finite() && **v > 0.0).count();
    if finite < MIN_CLASSIFY_WINDOW || !(x0.is_finite() && x0 > 0.0) {
        return Err(Error::Window(format!(
            "need a finite initial ratio and {MIN_CLASSIFY_WINDOW} finite iterations, got x0 = {x0}, {finite} finite"
        )));
    }
    let floor = floor_or_min(rest);
    let pre = rest.iter().take_while(|r| **r > PRE_FLOOR_FACTOR * floor).count();
    let window = pre.max(MIN_CLASSIFY_WINDOW).min(rest.len());

    let distance = |model: Model| -> Result<f64> {
        let det = ratio_trajectory(x0, model, sigma, mc, rule, window)?;
        let (mut sum, mut count) = (0.0, 0usize);
        for (r, p) in rest[..window].iter().zip(&det) {
            if r.is_finite() && *r > 0.0 {
                sum += (r.ln() - p.ln()).powi(2);
                count += 1;
            }
        }
        Ok(if count == 0 { f64::INFINITY } else { sum / count as f64 })
    };
    let d_id = distance(Model::Identity)?;
    let d_sg = distance(Model::Sign)?;
    if d_id.is_nan() || d_sg.is_nan() || (d_id.is_infinite() && d_sg.is_infinite()) {
        return Err(Error::Numeric(format!("classification distances undefined ({d_id}, {d_sg})")));
    }
    let tie = (d_id - d_sg).abs() < TIE_TOLERANCE;
    let model = if tie || d_id < d_sg { Model::Identity } else { Model::Sign };
    Ok(Classification { model, distance_identity: d_id, distance_sign: d_sg, tie, window })
}
