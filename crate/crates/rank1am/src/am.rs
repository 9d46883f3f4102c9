//! Alternating minimization with sample splitting.
//!
//! The mu-half solves `min_mu sum_i (y_i - <x_i, mu> <z_i, nu>)^2`, i.e.
//! `mu = (X^T W^2 X)^{-1} X^T W y` with `W = diag(Z nu)`; the nu-half swaps
//! the roles of `X` and `Z`. Each half consumes its own fresh batch.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::constants::ModelConstants;
use crate::predictor::{self, Prediction, StatePoint};
use crate::quad::QuadratureRule;
use crate::sampler::{draw_batch, Batch, Half, ProblemConfig};
use crate::{Error, Result};

pub const MAX_CONDITION: f64 = 1e12;

/// Rows of `a` scaled by `w`.
fn scale_rows(a: &DMatrix<f64>, w: &DVector<f64>) -> DMatrix<f64> {
    let mut out = a.clone();
    for mut col in out.column_iter_mut() {
        col.component_mul_assign(w);
    }
    out
}

/// `B^T B` through the blocked kernel.
pub(crate) fn gram(b: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, d) = b.shape();
    let mut out = DMatrix::<f64>::zeros(d, d);
    // Column-major n x d viewed as its transpose: row stride n, column stride 1.
    unsafe {
        matrixmultiply::dgemm(
            d,
            n,
            d,
            1.0,
            b.as_ptr(),
            n as isize,
            1,
            b.as_ptr(),
            1,
            n as isize,
            0.0,
            out.as_mut_ptr(),
            1,
            d as isize,
        );
    }
    out
}

/// Solve the SPD system `gram x = rhs`, falling back to an eigen-decomposition
/// when Cholesky fails.
pub(crate) fn solve_spd(gram: DMatrix<f64>, rhs: &DVector<f64>, context: &str) -> Result<DVector<f64>> {
    if let Some(chol) = gram.clone().cholesky() {
        let l = chol.l_dirty();
        let diag = l.diagonal();
        let (lo, hi) = diag.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), v| (lo.min(v.abs()), hi.max(v.abs())));
        let cond = (hi / lo).powi(2);
        if cond > MAX_CONDITION || !cond.is_finite() {
            return Err(Error::Singular { context: context.to_string(), cond });
        }
        return Ok(chol.solve(rhs));
    }
    let eig = SymmetricEigen::new(gram);
    let (lo, hi) = eig.eigenvalues.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), v| (lo.min(*v), hi.max(v.abs())));
    let cond = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if cond > MAX_CONDITION {
        return Err(Error::Singular { context: context.to_string(), cond });
    }
    let coeffs = eig.eigenvectors.transpose() * rhs;
    let scaled = DVector::from_iterator(coeffs.len(), coeffs.iter().zip(eig.eigenvalues.iter()).map(|(c, l)| c / l));
    Ok(&eig.eigenvectors * scaled)
}

/// One weighted least-squares half-step.
pub fn wls_step(batch: &Batch, fixed: &DVector<f64>, solve_for: Half) -> Result<DVector<f64>> {
    let (design, other) = match solve_for {
        Half::Mu => (&batch.x, &batch.z),
        Half::Nu => (&batch.z, &batch.x),
    };
    let w = other * fixed;
    let wa = scale_rows(design, &w);
    let rhs = wa.tr_mul(&batch.y);
    solve_spd(gram(&wa), &rhs, &format!("{solve_for}-half"))
}

/// Leave-column-`k`-out projector `I - W X_k' (X_k'^T W^2 X_k')^{-1} X_k'^T W`
/// for the mu-half, with `X_k'` the design without column `k`. Dense `n x n`.
pub fn leave_one_out_projector(batch: &Batch, fixed: &DVector<f64>, k: usize) -> Result<DMatrix<f64>> {
    let (n, d) = batch.x.shape();
    if k >= d {
        return Err(Error::InvalidArgument(format!("coordinate {k} out of range for d = {d}")));
    }
    let w = &batch.z * fixed;
    let wx = scale_rows(&batch.x.clone().remove_column(k), &w);
    let inner = wx.tr_mul(&wx);
    let inv = inner
        .cholesky()
        .ok_or_else(|| Error::Singular { context: format!("leave-one-out Gram without column {k}"), cond: f64::INFINITY })?
        .inverse();
    Ok(DMatrix::identity(n, n) - &wx * inv * wx.transpose())
}

/// Coordinate `k` (zero-based) of the mu-half solution from the leave-one-out
/// characterization `<x_k, W S y> / <x_k, W S W x_k>`. Test oracle, O(n^2) memory.
pub fn per_coordinate_oracle(batch: &Batch, fixed: &DVector<f64>, k: usize) -> Result<f64> {
    let s = leave_one_out_projector(batch, fixed, k)?;
    let w = &batch.z * fixed;
    let wxk = batch.x.column(k).component_mul(&w);
    let num = wxk.dot(&(&s * &batch.y));
    let den = wxk.dot(&(&s * &wxk));
    Ok(num / den)
}

/// `(alpha, beta)` relative to a unit-norm truth.
pub fn extract_state(estimate: &DVector<f64>, truth: &DVector<f64>) -> StatePoint {
    let alpha = estimate.dot(truth);
    let beta = (estimate - truth * alpha).norm();
    StatePoint::new(alpha, beta)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HalfRecord {
    pub state: StatePoint,
    /// Prediction from the previous empirical state.
    pub pred: Prediction,
    /// Population update from the previous empirical state.
    pub pop: Prediction,
    /// Squared norm of the previous empirical state.
    pub prev_norm_sq: f64,
}

impl HalfRecord {
    pub fn dev_alpha(&self) -> f64 {
        (self.state.alpha - self.pred.alpha_det).abs()
    }

    pub fn dev_beta_sq(&self) -> f64 {
        (self.state.beta * self.state.beta - self.pred.beta_det_sq).abs()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub nu: HalfRecord,
    pub mu: HalfRecord,
}

impl IterationRecord {
    pub fn ratio_emp(&self) -> f64 {
        self.mu.state.ratio()
    }

    pub fn ratio_det(&self) -> f64 {
        self.mu.pred.ratio()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub trial: u64,
    pub init: StatePoint,
    pub iters: Vec<IterationRecord>,
}

impl Trajectory {
    /// Squared ratios after each full iteration.
    pub fn mu_ratios(&self) -> Vec<f64> {
        self.iters.iter().map(|r| r.ratio_emp()).collect()
    }

    /// `[init, nu_1, mu_1, nu_2, mu_2, ...]`.
    pub fn half_ratios(&self) -> Vec<f64> {
        let mut out = vec![self.init.ratio()];
        for r in &self.iters {
            out.push(r.nu.state.ratio());
            out.push(r.mu.state.ratio());
        }
        out
    }
}

/// Quadrature rules used by the predictions.
#[derive(Debug, Clone)]
pub struct Rules {
    pub one_d: QuadratureRule,
    pub three_d: QuadratureRule,
}

impl Rules {
    pub fn new(order_1d: usize, order_3d: usize) -> Result<Self> {
        Ok(Self {
            one_d: crate::quad::build_folded_rule(order_1d)?,
            three_d: crate::quad::build_folded_rule(order_3d)?,
        })
    }

    pub fn standard() -> Self {
        Self::new(256, 64).expect("static orders are valid")
    }
}

pub(crate) fn population(prev: StatePoint, config: &ProblemConfig, rules: &Rules) -> Result<Prediction> {
    use crate::predictor::Model;
    let s = prev.norm_sq();
    match config.psi.model() {
        Some(Model::Identity) => Ok(Prediction { alpha_det: prev.alpha / s, beta_det_sq: 0.0 }),
        Some(Model::Sign) => Ok(Prediction { alpha_det: 2.0 / std::f64::consts::PI * prev.alpha / s, beta_det_sq: 0.0 }),
        None => predictor::population_step(prev, &config.psi, &rules.three_d),
    }
}

/// Run AM for `config.iters` iterations from `mu0`, recording each half's
/// empirical state next to the predictions made from the preceding empirical state.
pub fn run_trajectory(
    config: &ProblemConfig,
    truth: (&DVector<f64>, &DVector<f64>),
    mu0: &DVector<f64>,
    mc: &ModelConstants,
    rules: &Rules,
    trial: u64,
) -> Result<Trajectory> {
    let init = extract_state(mu0, truth.0);
    if init.norm_sq() == 0.0 {
        return Err(Error::Domain("initial iterate is zero".into()));
    }
    let ctx = |t: usize, half: Half, e: Error| match e {
        Error::Singular { context, cond } => Error::Singular { context: format!("trial {trial}, iter {}, {context}", t + 1), cond },
        other => other.with_half(half),
    };

    let mut mu = mu0.clone();
    let mut mu_state = init;
    let mut iters = Vec::with_capacity(config.iters);
    for t in 0..config.iters {
        let record_half = |prev: StatePoint, est: &DVector<f64>, truth_vec: &DVector<f64>| -> Result<HalfRecord> {
            Ok(HalfRecord {
                state: extract_state(est, truth_vec),
                pred: predictor::predict(prev, &config.psi, config.sigma, mc, &rules.one_d, &rules.three_d)?,
                pop: population(prev, config, rules)?,
                prev_norm_sq: prev.norm_sq(),
            })
        };

        let batch = draw_batch(config, truth, trial, t as u64, Half::Nu);
        let nu = wls_step(&batch, &mu, Half::Nu).map_err(|e| ctx(t, Half::Nu, e))?;
        let nu_rec = record_half(mu_state, &nu, truth.1).map_err(|e| ctx(t, Half::Nu, e))?;

        let batch = draw_batch(config, truth, trial, t as u64, Half::Mu);
        mu = wls_step(&batch, &nu, Half::Mu).map_err(|e| ctx(t, Half::Mu, e))?;
        let mu_rec = record_half(nu_rec.state, &mu, truth.0).map_err(|e| ctx(t, Half::Mu, e))?;

        mu_state = mu_rec.state;
        iters.push(IterationRecord { nu: nu_rec, mu: mu_rec });
    }
    Ok(Trajectory { trial, init, iters })
}

trait WithHalf {
    fn with_half(self, half: Half) -> Self;
}

impl WithHalf for Error {
    fn with_half(self, half: Half) -> Self {
        match self {
            Error::Numeric(m) => Error::Numeric(format!("{half}-half: {m}")),
            Error::Domain(m) => Error::Domain(format!("{half}-half: {m}")),
            other => other,
        }
    }
}
