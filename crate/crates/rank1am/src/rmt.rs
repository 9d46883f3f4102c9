//! Monte Carlo checks on Gaussian-weighted Gram matrices `X^T G^2 X`:
//! the trace of the inverse concentrates around `1/C(n/d)` and the smallest
//! eigenvalue grows linearly in `n`.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;

use crate::am::gram;
use crate::constants::solve_c;
use crate::quad::QuadratureRule;
use crate::sampler::{NormalStream, STREAM_RMT};
use crate::{Error, Result};

const DOMAIN_GRAM: u64 = 0x9a4a;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GramSample {
    pub n: usize,
    pub d: usize,
    /// `tr((X^T G^2 X)^{-1})`
    pub trace_inv: f64,
    pub lambda_min_over_n: f64,
    pub lambda_max_over_n: f64,
    /// `max_i g_i^2`
    pub max_g_sq: f64,
    /// `lambda_max(X^T X) / n`
    pub lambda_max_xtx_over_n: f64,
}

impl GramSample {
    /// `d / (n max g^2 lambda_max(X^T X)/n) <= trace_inv <= d / lambda_min`.
    pub fn sandwich(&self) -> (f64, f64) {
        let d = self.d as f64;
        let n = self.n as f64;
        (d / (n * self.max_g_sq * self.lambda_max_xtx_over_n), d / (n * self.lambda_min_over_n))
    }
}

fn spectrum(m: DMatrix<f64>) -> Result<Vec<f64>> {
    let ev = SymmetricEigen::new(m).eigenvalues;
    let mut v: Vec<f64> = ev.iter().copied().collect();
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric("non-finite eigenvalue".into()));
    }
    v.sort_by(f64::total_cmp);
    Ok(v)
}

/// Draw `X` (n x d) and `G = diag(g)` with i.i.d. standard normal entries and
/// summarize the spectrum of `X^T G^2 X`.
pub fn sample_gram(n: usize, d: usize, seed: u64) -> Result<GramSample> {
    if d == 0 || n <= d {
        return Err(Error::InvalidArgument(format!("need n > d >= 1, got n = {n}, d = {d}")));
    }
    let mut xs = NormalStream::from_parts(&[DOMAIN_GRAM, seed, n as u64, d as u64, STREAM_RMT, 0]);
    let mut gs = NormalStream::from_parts(&[DOMAIN_GRAM, seed, n as u64, d as u64, STREAM_RMT, 1]);
    let mut data = vec![0.0; n * d];
    xs.fill(&mut data);
    let x = DMatrix::from_vec(n, d, data);
    let mut g = vec![0.0; n];
    gs.fill(&mut g);

    let mut gx = x.clone();
    for mut col in gx.column_iter_mut() {
        for (v, gi) in col.iter_mut().zip(&g) {
            *v *= gi;
        }
    }
    let ev = spectrum(gram(&gx))?;
    let ev_xtx = spectrum(gram(&x))?;
    let lo = ev[0];
    if !(lo > 0.0) {
        return Err(Error::Numeric(format!("weighted Gram not positive definite (seed {seed}, lambda_min = {lo:e})")));
    }
    let nf = n as f64;
    Ok(GramSample {
        n,
        d,
        trace_inv: ev.iter().map(|l| 1.0 / l).sum(),
        lambda_min_over_n: lo / nf,
        lambda_max_over_n: ev[d - 1] / nf,
        max_g_sq: g.iter().map(|v| v * v).fold(0.0, f64::max),
        lambda_max_xtx_over_n: ev_xtx[d - 1] / nf,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConcentrationRow {
    pub n: usize,
    pub d: usize,
    /// `1/C(n/d)`
    pub tau: f64,
    pub mean_abs_dev: f64,
    pub std_abs_dev: f64,
    /// Fraction of trials with `|tau_hat - tau| <= 5/sqrt(n)`.
    pub band_hits: f64,
    pub min_lambda_min_over_n: f64,
    /// Smallest `c` such that 90% of trials satisfy `|tau_hat - tau| <= c/sqrt(n)`.
    pub c90: f64,
    pub samples: Vec<GramSample>,
}

pub const BAND_CONSTANT: f64 = 5.0;

fn row(n: usize, d: usize, trials: usize, seed: u64, rule: &QuadratureRule) -> Result<ConcentrationRow> {
    let tau = solve_c(n as f64 / d as f64, rule)?.tau;
    let samples = (0..trials)
        .into_par_iter()
        .map(|t| sample_gram(n, d, seed.wrapping_add(t as u64)))
        .collect::<Result<Vec<_>>>()?;
    let devs: Vec<f64> = samples.iter().map(|s| (s.trace_inv - tau).abs()).collect();
    let k = devs.len() as f64;
    let mean = devs.iter().sum::<f64>() / k;
    let var = devs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0).max(1.0);
    let band = BAND_CONSTANT / (n as f64).sqrt();
    let hits = devs.iter().filter(|v| **v <= band).count() as f64 / k;
    let mut scaled: Vec<f64> = devs.iter().map(|v| v * (n as f64).sqrt()).collect();
    scaled.sort_by(f64::total_cmp);
    let idx = ((0.9 * k).ceil() as usize).clamp(1, scaled.len()) - 1;
    Ok(ConcentrationRow {
        n,
        d,
        tau,
        mean_abs_dev: mean,
        std_abs_dev: var.sqrt(),
        band_hits: hits,
        min_lambda_min_over_n: samples.iter().map(|s| s.lambda_min_over_n).fold(f64::INFINITY, f64::min),
        c90: scaled[idx],
        samples,
    })
}

/// Deviation statistics of `tau_hat` at fixed `d` for each `n`.
pub fn concentration_report(n_list: &[usize], d: usize, trials: usize, seed: u64, rule: &QuadratureRule) -> Result<Vec<ConcentrationRow>> {
    if trials == 0 {
        return Err(Error::InvalidArgument("need at least one trial".into()));
    }
    n_list.iter().map(|&n| row(n, d, trials, seed, rule)).collect()
}

/// Same report with `d = round(n / lambda)`, holding the aspect ratio fixed.
pub fn concentration_report_at_ratio(n_list: &[usize], lambda: f64, trials: usize, seed: u64, rule: &QuadratureRule) -> Result<Vec<ConcentrationRow>> {
    if trials == 0 {
        return Err(Error::InvalidArgument("need at least one trial".into()));
    }
    n_list
        .iter()
        .map(|&n| row(n, ((n as f64 / lambda).round() as usize).max(1), trials, seed, rule))
        .collect()
}
