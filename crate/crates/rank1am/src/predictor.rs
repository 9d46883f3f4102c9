//! Deterministic one-step predictions of the state `(alpha, beta)`.
//!
//! Given the previous state `(a, b)` with `r = sqrt(a^2 + b^2)`, the next
//! state is predicted from expectations over independent standard Gaussians
//! `X, G, V` with `Y = psi((a/r) G X + (b/r) V X)` and `D = 1 + tau G^2`:
//!
//! ```text
//! alpha = E[G X Y / D] / (r E[G^2 / D])
//! beta^2 = (E[G^2 Y^2 / D^2] + sigma^2 E[G^2 / D^2]) / (r^2 K)
//!          - 2 alpha E[G^3 X Y / D^2] / (r K) + alpha^2 E[G^4 / D^2] / K
//! K = C E[G^2 / D^2]
//! ```
//!
//! For the identity and sign links the expectations reduce to closed forms
//! (`f_id`/`g_id`, `f_sgn`/`g_sgn`), and the squared ratio `beta^2/alpha^2`
//! evolves through a scalar map `h` applied once per half-step.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;
use std::sync::Arc;

use crate::constants::{phi_unchecked, ModelConstants};
use crate::quad::{expect1, expect3_many, QuadratureRule};
use crate::{Error, Result};

/// Parallel component and orthogonal norm of an estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StatePoint {
    pub alpha: f64,
    pub beta: f64,
}

impl StatePoint {
    pub fn new(alpha: f64, beta: f64) -> Self {
        Self { alpha, beta }
    }

    pub fn norm_sq(&self) -> f64 {
        self.alpha * self.alpha + self.beta * self.beta
    }

    /// `beta^2 / alpha^2`; infinite when alpha is zero.
    pub fn ratio(&self) -> f64 {
        squared_ratio(self.alpha, self.beta * self.beta)
    }

    fn check_nonzero(&self) -> Result<f64> {
        let s = self.norm_sq();
        if !(s > 0.0) || !s.is_finite() || self.beta < 0.0 {
            return Err(Error::Domain(format!("state ({}, {}) is not a valid nonzero state", self.alpha, self.beta)));
        }
        Ok(s)
    }
}

pub(crate) fn squared_ratio(alpha: f64, beta_sq: f64) -> f64 {
    if alpha == 0.0 {
        if beta_sq == 0.0 { f64::NAN } else { f64::INFINITY }
    } else {
        beta_sq / (alpha * alpha)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub alpha_det: f64,
    pub beta_det_sq: f64,
}

impl Prediction {
    pub fn state(&self) -> StatePoint {
        StatePoint::new(self.alpha_det, self.beta_det_sq.sqrt())
    }

    pub fn ratio(&self) -> f64 {
        squared_ratio(self.alpha_det, self.beta_det_sq)
    }
}

/// Models with closed-form maps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Model {
    Identity,
    Sign,
}

impl Model {
    pub fn name(&self) -> &'static str {
        match self {
            Model::Identity => "identity",
            Model::Sign => "sign",
        }
    }
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Model {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "id" | "identity" | "linear" => Ok(Model::Identity),
            "sign" | "sgn" | "onebit" => Ok(Model::Sign),
            other => Err(Error::Config(format!("unknown model `{other}` (expected id or sign)"))),
        }
    }
}

/// The link function `psi`.
#[derive(Clone)]
pub enum Nonlinearity {
    Identity,
    /// `sign(0) = 1`.
    Sign,
    Custom {
        name: String,
        f: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
        bound: f64,
    },
}

impl fmt::Debug for Nonlinearity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Nonlinearity::Custom { name, bound, .. } => write!(f, "Custom({name}, |psi| <= {bound})"),
            other => write!(f, "{}", other.name()),
        }
    }
}

impl From<Model> for Nonlinearity {
    fn from(m: Model) -> Self {
        match m {
            Model::Identity => Nonlinearity::Identity,
            Model::Sign => Nonlinearity::Sign,
        }
    }
}

impl Nonlinearity {
    /// A bounded link, spot-checked against `bound` on a grid of [-20, 20].
    pub fn custom(name: impl Into<String>, f: impl Fn(f64) -> f64 + Send + Sync + 'static, bound: f64) -> Result<Self> {
        if !(bound >= 0.0) || !bound.is_finite() {
            return Err(Error::InvalidArgument(format!("custom link bound must be finite and >= 0, got {bound}")));
        }
        for i in 0..=4000 {
            let x = -20.0 + 0.01 * i as f64;
            let v = f(x);
            if !v.is_finite() || v.abs() > bound {
                return Err(Error::InvalidArgument(format!("custom link gives {v} at {x}, bound {bound}")));
            }
        }
        Ok(Nonlinearity::Custom { name: name.into(), f: Arc::new(f), bound })
    }

    #[inline]
    pub fn apply(&self, x: f64) -> f64 {
        match self {
            Nonlinearity::Identity => x,
            Nonlinearity::Sign => {
                if x >= 0.0 { 1.0 } else { -1.0 }
            }
            Nonlinearity::Custom { f, .. } => f(x),
        }
    }

    pub fn name(&self) -> &str {
        match self {
            Nonlinearity::Identity => "identity",
            Nonlinearity::Sign => "sign",
            Nonlinearity::Custom { name, .. } => name,
        }
    }

    /// Constant of the bounded-or-linear class.
    pub fn bound_or_slope(&self) -> f64 {
        match self {
            Nonlinearity::Identity | Nonlinearity::Sign => 1.0,
            Nonlinearity::Custom { bound, .. } => *bound,
        }
    }

    pub fn model(&self) -> Option<Model> {
        match self {
            Nonlinearity::Identity => Some(Model::Identity),
            Nonlinearity::Sign => Some(Model::Sign),
            Nonlinearity::Custom { .. } => None,
        }
    }
}

fn finish(alpha_det: f64, beta_det_sq: f64) -> Result<Prediction> {
    if !alpha_det.is_finite() || !beta_det_sq.is_finite() {
        return Err(Error::Numeric(format!("non-finite prediction ({alpha_det}, {beta_det_sq})")));
    }
    let beta_det_sq = if beta_det_sq < 0.0 {
        if beta_det_sq > -1e-12 {
            0.0
        } else {
            return Err(Error::Numeric(format!("negative predicted beta^2 = {beta_det_sq:e}")));
        }
    } else {
        beta_det_sq
    };
    Ok(Prediction { alpha_det, beta_det_sq })
}

/// One-step prediction for an arbitrary link by three-dimensional quadrature.
///
/// The grid is laid out in rotated coordinates `U = (a G + b V)/r`,
/// `P = (-b G + a V)/r`, so that `Y = psi(X U)` and `G = (a U - b P)/r`.
/// Kinks of `psi` at the origin then sit on grid axes, which a folded rule
/// integrates to near machine precision.
pub fn predict_general(
    prev: StatePoint,
    psi: &Nonlinearity,
    sigma: f64,
    mc: &ModelConstants,
    rule: &QuadratureRule,
) -> Result<Prediction> {
    let s = prev.check_nonzero()?;
    let r = s.sqrt();
    let (ah, bh) = (prev.alpha / r, prev.beta / r);
    let tau = mc.tau;

    let [e_gxy_d, e_g2_d, e_g2y2_d2, e_g2_d2, e_g3xy_d2, e_g4_d2] = expect3_many(
        |u, x, p| {
            let g = ah * u - bh * p;
            let y = psi.apply(x * u);
            let g2 = g * g;
            let d = 1.0 + tau * g2;
            let d2 = d * d;
            let gxy = g * x * y;
            [gxy / d, g2 / d, g2 * y * y / d2, g2 / d2, g2 * gxy / d2, g2 * g2 / d2]
        },
        rule,
    )?;

    let k = mc.c_lambda * e_g2_d2;
    let alpha_det = e_gxy_d / e_g2_d / r;
    let beta_sq = (e_g2y2_d2 + sigma * sigma * e_g2_d2) / (s * k) - 2.0 * alpha_det * e_g3xy_d2 / (r * k)
        + alpha_det * alpha_det * e_g4_d2 / k;
    finish(alpha_det, beta_sq)
}

pub fn f_id(s: StatePoint) -> Result<f64> {
    let n = s.check_nonzero()?;
    Ok(s.alpha / n)
}

pub fn g_id(s: StatePoint, sigma: f64, mc: &ModelConstants) -> Result<f64> {
    let n = s.check_nonzero()?;
    let sig2 = sigma * sigma;
    let c = mc.c_lambda;
    Ok(((1.0 + sig2) * s.beta * s.beta + sig2 * s.alpha * s.alpha) / (c * n * n))
}

/// `E[|W| phi(c|W|) / (C + W^2)]` and `E[|W|^3 phi(c|W|) / (C + W^2)^2]`;
/// `c` may be infinite.
fn sign_moments(c: f64, mc: &ModelConstants, rule: &QuadratureRule) -> Result<(f64, f64)> {
    let cl = mc.c_lambda;
    let ph = |w: f64| {
        if c.is_infinite() {
            c.signum() * FRAC_PI_2.sqrt()
        } else {
            phi_unchecked(c * w)
        }
    };
    let e1 = expect1(|w| { let a = w.abs(); a * ph(a) / (cl + w * w) }, rule)?;
    let e3 = expect1(|w| { let a = w.abs(); a * a * a * ph(a) / (cl + w * w).powi(2) }, rule)?;
    Ok((e1, e3))
}

fn alpha_over_beta(s: StatePoint) -> f64 {
    if s.beta == 0.0 {
        if s.alpha >= 0.0 { f64::INFINITY } else { f64::NEG_INFINITY }
    } else {
        s.alpha / s.beta
    }
}

fn f_sgn_from(e1: f64, n: f64, mc: &ModelConstants) -> f64 {
    2.0 / PI * mc.lambda / n.sqrt() * e1
}

pub fn f_sgn(s: StatePoint, mc: &ModelConstants, rule: &QuadratureRule) -> Result<f64> {
    let n = s.check_nonzero()?;
    let (e1, _) = sign_moments(alpha_over_beta(s), mc, rule)?;
    Ok(f_sgn_from(e1, n, mc))
}

pub fn g_sgn(s: StatePoint, sigma: f64, mc: &ModelConstants, rule: &QuadratureRule) -> Result<f64> {
    let n = s.check_nonzero()?;
    let (e1, e3) = sign_moments(alpha_over_beta(s), mc, rule)?;
    Ok(g_sgn_from(f_sgn_from(e1, n, mc), e3, n, sigma, mc))
}

fn g_sgn_from(f: f64, e3: f64, n: f64, sigma: f64, mc: &ModelConstants) -> f64 {
    let c = mc.c_lambda;
    (1.0 + sigma * sigma) / (c * n) + f * f / c * mc.c3 / mc.c2 - 4.0 / PI * f / (c * n.sqrt()) * e3 / mc.c2
}

/// Closed-form prediction for identity or sign.
pub fn predict_closed(prev: StatePoint, model: Model, sigma: f64, mc: &ModelConstants, rule: &QuadratureRule) -> Result<Prediction> {
    let n = prev.check_nonzero()?;
    match model {
        Model::Identity => finish(f_id(prev)?, g_id(prev, sigma, mc)?),
        Model::Sign => {
            let (e1, e3) = sign_moments(alpha_over_beta(prev), mc, rule)?;
            let f = f_sgn_from(e1, n, mc);
            finish(f, g_sgn_from(f, e3, n, sigma, mc))
        }
    }
}

/// Closed form when available, quadrature otherwise.
pub fn predict(prev: StatePoint, psi: &Nonlinearity, sigma: f64, mc: &ModelConstants, rule_1d: &QuadratureRule, rule_3d: &QuadratureRule) -> Result<Prediction> {
    match psi.model() {
        Some(m) => predict_closed(prev, m, sigma, mc, rule_1d),
        None => predict_general(prev, psi, sigma, mc, rule_3d),
    }
}

/// Squared-ratio map for one half-step.
pub fn h(x: f64, model: Model, sigma: f64, mc: &ModelConstants, rule: &QuadratureRule) -> Result<f64> {
    if x.is_nan() || x < 0.0 {
        return Err(Error::Domain(format!("ratio map needs x >= 0, got {x}")));
    }
    let c = mc.c_lambda;
    let sig2 = sigma * sigma;
    match model {
        Model::Identity => Ok((1.0 + sig2) / c * x + sig2 / c),
        Model::Sign => {
            let (e1, e3) = sign_moments(1.0 / x.sqrt(), mc, rule)?;
            let l = mc.lambda;
            Ok(PI * PI / 4.0 * (1.0 + sig2) / (c * l * l) / (e1 * e1) + mc.c3 / (c * mc.c2)
                - 2.0 / (l * c * mc.c2) * e3 / e1)
        }
    }
}

/// Fixed point of `h_id`, defined when `C > 1 + sigma^2`.
pub fn identity_floor(sigma: f64, mc: &ModelConstants) -> Option<f64> {
    let sig2 = sigma * sigma;
    let gap = mc.c_lambda - 1.0 - sig2;
    (gap > 0.0).then(|| sig2 / gap)
}

/// Fixed point of the sign ratio map, by iteration from x0 = 1.
pub fn sign_floor(sigma: f64, mc: &ModelConstants, rule: &QuadratureRule) -> Result<f64> {
    let mut x = 1.0;
    for _ in 0..500 {
        let next = h(x, Model::Sign, sigma, mc, rule)?;
        if (next - x).abs() <= 1e-14 * x {
            return Ok(next);
        }
        x = next;
    }
    Err(Error::NotConverged("sign ratio map did not settle in 500 steps".into()))
}

/// Stationary squared ratio of the deterministic recursion.
pub fn model_floor(model: Model, sigma: f64, mc: &ModelConstants, rule: &QuadratureRule) -> Result<f64> {
    match model {
        Model::Identity => identity_floor(sigma, mc)
            .ok_or_else(|| Error::Domain(format!("no finite identity floor: C = {} <= 1 + sigma^2", mc.c_lambda))),
        Model::Sign => sign_floor(sigma, mc, rule),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetStep {
    pub nu_half: Prediction,
    pub mu_half: Prediction,
}

/// Pure deterministic recursion: the nu-half from the current mu-state, then
/// the mu-half from that prediction, `iters` times.
pub fn det_trajectory(
    init: StatePoint,
    psi: &Nonlinearity,
    sigma: f64,
    mc: &ModelConstants,
    rule_1d: &QuadratureRule,
    rule_3d: &QuadratureRule,
    iters: usize,
) -> Result<Vec<DetStep>> {
    if iters == 0 {
        return Err(Error::InvalidArgument("deterministic trajectory needs at least one iteration".into()));
    }
    init.check_nonzero()?;
    let mut state = init;
    let mut out = Vec::with_capacity(iters);
    for _ in 0..iters {
        let nu_half = predict(state, psi, sigma, mc, rule_1d, rule_3d)?;
        let mu_half = predict(nu_half.state(), psi, sigma, mc, rule_1d, rule_3d)?;
        state = mu_half.state();
        out.push(DetStep { nu_half, mu_half });
    }
    Ok(out)
}

/// Ratio sequence of the composed map `h o h`, starting after one full step from `x0`.
pub fn ratio_trajectory(x0: f64, model: Model, sigma: f64, mc: &ModelConstants, rule: &QuadratureRule, iters: usize) -> Result<Vec<f64>> {
    let mut x = x0;
    let mut out = Vec::with_capacity(iters);
    for _ in 0..iters {
        x = h(h(x, model, sigma, mc, rule)?, model, sigma, mc, rule)?;
        out.push(x);
    }
    Ok(out)
}

/// Infinite-sample update: exactly parallel to the truth, with
/// `alpha = E[G X Y] / r`.
pub fn population_step(prev: StatePoint, psi: &Nonlinearity, rule: &QuadratureRule) -> Result<Prediction> {
    let s = prev.check_nonzero()?;
    let r = s.sqrt();
    let (ah, bh) = (prev.alpha / r, prev.beta / r);
    let [e] = expect3_many(|u, x, p| [(ah * u - bh * p) * x * psi.apply(x * u)], rule)?;
    finish(e / r, 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constants::solve_c;
    use crate::quad::build_folded_rule;

    struct Fx {
        r1: QuadratureRule,
        r3: QuadratureRule,
    }

    fn fx() -> Fx {
        Fx { r1: build_folded_rule(256).unwrap(), r3: build_folded_rule(48).unwrap() }
    }

    #[test]
    fn identity_closed_forms() {
        let f = fx();
        let mc = solve_c(20.0, &f.r1).unwrap();
        assert_eq!(f_id(StatePoint::new(1.0, 0.0)).unwrap(), 1.0);
        assert!((f_id(StatePoint::new(0.6, 0.8)).unwrap() - 0.6).abs() < 1e-15);
        assert!((g_id(StatePoint::new(0.0, 1.0), 0.0, &mc).unwrap() - 1.0 / mc.c_lambda).abs() < 1e-15);
        assert!(matches!(f_id(StatePoint::new(0.0, 0.0)), Err(Error::Domain(_))));
    }

    #[test]
    fn general_matches_identity_closed_form() {
        let f = fx();
        let mc = solve_c(50.0, &f.r1).unwrap();
        for a in [0.2, 0.6, 1.0] {
            for b in [0.2, 0.6, 1.0] {
                let s = StatePoint::new(a, b);
                let p = predict_general(s, &Nonlinearity::Identity, 0.3, &mc, &f.r3).unwrap();
                assert!((p.alpha_det - f_id(s).unwrap()).abs() < 1e-8);
                assert!((p.beta_det_sq - g_id(s, 0.3, &mc).unwrap()).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn zero_link_gives_noise_only() {
        let f = fx();
        let mc = solve_c(10.0, &f.r1).unwrap();
        let zero = Nonlinearity::custom("zero", |_| 0.0, 1.0).unwrap();
        let p = predict_general(StatePoint::new(1.0, 0.0), &zero, 0.3, &mc, &f.r3).unwrap();
        assert!(p.alpha_det.abs() < 1e-15);
        assert!((p.beta_det_sq - 0.09 / mc.c_lambda).abs() < 1e-10);
    }

    #[test]
    fn general_matches_sign_closed_form() {
        let f = fx();
        let mc = solve_c(50.0, &f.r1).unwrap();
        let s = StatePoint::new(0.6, 0.8);
        let p = predict_general(s, &Nonlinearity::Sign, 0.1, &mc, &f.r3).unwrap();
        assert!((p.alpha_det - f_sgn(s, &mc, &f.r1).unwrap()).abs() < 2e-3);
        assert!((p.beta_det_sq - g_sgn(s, 0.1, &mc, &f.r1).unwrap()).abs() < 2e-3);
    }

    #[test]
    fn f_sgn_lower_bound_and_oddness() {
        let f = fx();
        let mc = solve_c(50.0, &f.r1).unwrap();
        for i in 1..=10 {
            for j in 1..=10 {
                let (a, b) = (i as f64 / 10.0, j as f64 / 10.0);
                let s = StatePoint::new(a, b);
                let v = f_sgn(s, &mc, &f.r1).unwrap();
                let lb = (a / b).min(1.0) / (2.0 * PI).sqrt() / s.norm_sq().sqrt();
                assert!(v >= lb, "({a}, {b}): {v} < {lb}");
                let neg = f_sgn(StatePoint::new(-a, b), &mc, &f.r1).unwrap();
                assert!((neg + v).abs() < 1e-14);
                let g = g_sgn(s, 0.1, &mc, &f.r1).unwrap();
                assert!((g_sgn(StatePoint::new(-a, b), 0.1, &mc, &f.r1).unwrap() - g).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn f_sgn_near_exact_recovery() {
        // Independent oracle: composite Simpson on [0, 40] of the half-normal integrand.
        let f = fx();
        let mc = solve_c(50.0, &f.r1).unwrap();
        let c = mc.c_lambda;
        let m = 400_000;
        let h = 40.0 / m as f64;
        let g = |w: f64| 2.0 * w / (c + w * w) * (-0.5 * w * w).exp() / (2.0 * PI).sqrt();
        let mut acc = g(0.0) + g(40.0);
        for k in 1..m {
            acc += if k % 2 == 1 { 4.0 } else { 2.0 } * g(k as f64 * h);
        }
        let e = acc * h / 3.0;
        let oracle = 2.0 / PI * 50.0 * FRAC_PI_2.sqrt() * e;
        assert!((oracle - 0.649_136_638_754_138_9).abs() < 1e-9);
        let v = f_sgn(StatePoint::new(1.0, 1e-12), &mc, &f.r1).unwrap();
        assert!((v - oracle).abs() < 1e-9);
        let at_zero_beta = f_sgn(StatePoint::new(1.0, 0.0), &mc, &f.r1).unwrap();
        assert!((at_zero_beta - oracle).abs() < 1e-9);
    }

    #[test]
    fn ratio_maps() {
        let f = fx();
        let mc = solve_c(50.0, &f.r1).unwrap();
        let c = mc.c_lambda;
        assert!((h(0.0, Model::Identity, 0.2, &mc, &f.r1).unwrap() - 0.04 / c).abs() < 1e-16);
        let xs = identity_floor(0.2, &mc).unwrap();
        assert!((h(xs, Model::Identity, 0.2, &mc, &f.r1).unwrap() - xs).abs() < 1e-15);
        for x in [1.0, 10.0, 99.0] {
            let v = h(x, Model::Sign, 0.1, &mc, &f.r1).unwrap();
            assert!(v > 0.0 && v <= 50.0 * PI * PI * 1.01 / c);
        }
        assert!(h(-1.0, Model::Sign, 0.1, &mc, &f.r1).is_err());
    }

    #[test]
    fn composition_matches_trajectory() {
        let f = fx();
        let mc = solve_c(50.0, &f.r1).unwrap();
        for (model, tol) in [(Model::Identity, 1e-10), (Model::Sign, 1e-6)] {
            let init = StatePoint::new(0.3, 0.9);
            let traj = det_trajectory(init, &model.into(), 0.1, &mc, &f.r1, &f.r3, 3).unwrap();
            let xs = ratio_trajectory(init.ratio(), model, 0.1, &mc, &f.r1, 3).unwrap();
            for (step, x) in traj.iter().zip(&xs) {
                assert!((step.mu_half.ratio() - x).abs() <= tol * x.max(1e-300), "{model}: {} vs {x}", step.mu_half.ratio());
            }
        }
    }

    #[test]
    fn noiseless_identity_contracts_by_c() {
        let f = fx();
        let mc = solve_c(20.0, &f.r1).unwrap();
        let traj = det_trajectory(StatePoint::new(0.5, 0.5), &Nonlinearity::Identity, 0.0, &mc, &f.r1, &f.r3, 1).unwrap();
        let c = mc.c_lambda;
        assert!((traj[0].mu_half.ratio() - 1.0 / (c * c)).abs() < 1e-14);
    }

    #[test]
    fn identity_converges_from_above() {
        let f = fx();
        let mc = solve_c(20.0, &f.r1).unwrap();
        let xs = identity_floor(0.1, &mc).unwrap();
        let seq = ratio_trajectory(5.0, Model::Identity, 0.1, &mc, &f.r1, 12).unwrap();
        assert!(seq.windows(2).all(|w| w[1] <= w[0] && w[1] >= xs * (1.0 - 1e-12)));
        assert!(seq[0] > seq[1] && seq[1] > seq[2]);
        assert!((seq[11] - xs).abs() < 1e-12);
    }

    #[test]
    fn sign_contracts_from_far_away() {
        let f = fx();
        let mc = solve_c(50.0, &f.r1).unwrap();
        let c = mc.c_lambda;
        let sigma = 0.1;
        let rho = ((1.0 + sigma * sigma) / c).powi(2);
        let floor = sign_floor(sigma, &mc, &f.r1).unwrap();
        let k = (1.0 + sigma * sigma) / c;
        let mut x = 1e4;
        let mut halves = 0;
        while x > 10.0 * floor {
            let next = h(x, Model::Sign, sigma, &mc, &f.r1).unwrap();
            if x >= 100.0 {
                let q = (next - 20.0 * k) / (k * x);
                assert!(q >= PI * PI / 8.0 && q <= PI * PI / 2.0, "half-step factor {q} at {x}");
            }
            assert!(next < x);
            x = next;
            halves += 1;
        }
        assert!(halves <= 8, "{halves} half-steps to reach the floor (rho = {rho:e})");
        assert!(floor > 0.1 * (1.0 + sigma * sigma) / c && floor < 10.0 * (1.0 + sigma * sigma) / c);
    }

    #[test]
    fn population_update() {
        let f = fx();
        for (a, b) in [(0.3, 0.95), (1.0, 0.0), (0.5, 2.0)] {
            let s = StatePoint::new(a, b);
            let p = population_step(s, &Nonlinearity::Identity, &f.r3).unwrap();
            assert!((p.alpha_det - a / s.norm_sq()).abs() < 1e-12);
            assert_eq!(p.beta_det_sq, 0.0);
        }
        // sign: cross-check with the one-dimensional conditioning formula
        let s = StatePoint::new(0.3, 0.95);
        let p = population_step(s, &Nonlinearity::Sign, &f.r3).unwrap();
        let c = s.alpha / s.beta;
        let e = expect1(|g| g.abs() * phi_unchecked(c * g.abs()), &f.r1).unwrap();
        let oracle = 2.0 / PI * e / s.norm_sq().sqrt();
        assert!((p.alpha_det - oracle).abs() < 1e-10);
        assert!((p.alpha_det - 2.0 / PI * 0.3 / s.norm_sq()).abs() < 1e-10);
    }

    #[test]
    fn custom_link_is_spot_checked() {
        assert!(Nonlinearity::custom("tanh", f64::tanh, 1.0).is_ok());
        assert!(Nonlinearity::custom("cube", |x| x * x * x, 10.0).is_err());
    }

    #[test]
    fn ratio_depends_only_on_ratio() {
        let f = fx();
        let mc = solve_c(20.0, &f.r1).unwrap();
        for model in [Model::Identity, Model::Sign] {
            for (a, b) in [(0.4, 0.7), (1.0, 0.1), (0.05, 1.0)] {
                let base = predict_closed(StatePoint::new(a, b), model, 0.1, &mc, &f.r1).unwrap().ratio();
                for c in [0.1, 3.0] {
                    let scaled = predict_closed(StatePoint::new(c * a, c * b), model, 0.1, &mc, &f.r1).unwrap().ratio();
                    assert!((scaled - base).abs() <= 1e-10 * base, "{model} ({a},{b}) c={c}");
                }
            }
        }
    }
}
