//! The oversampling constant `C(Lambda)` and the scalars derived from it.
//!
//! `C(Lambda)` is the unique root of `E[G^2 / (C + G^2)] = 1/Lambda`; it
//! behaves like `Lambda` for large oversampling and vanishes as
//! `Lambda -> 1`. `tau = 1/C` is the limit of the trace of the inverse of a
//! Gaussian-weighted Gram matrix.

use std::f64::consts::{FRAC_PI_2, SQRT_2};

use crate::quad::{expect1, QuadratureRule};
use crate::{Error, Result};

const BISECT_LO: f64 = 1e-12;
const BISECT_MAX_ITERS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConstants {
    pub lambda: f64,
    pub c_lambda: f64,
    pub tau: f64,
    /// E[W^2 / (C + W^2)^2]
    pub c2: f64,
    /// E[W^4 / (C + W^2)^2]
    pub c3: f64,
}

fn fixed_point_gap(c: f64, lambda: f64, rule: &QuadratureRule) -> Result<f64> {
    Ok(expect1(|g| g * g / (c + g * g), rule)? - 1.0 / lambda)
}

/// Solve the fixed-point equation by bisection on `[1e-12, Lambda]`.
pub fn solve_c(lambda: f64, rule: &QuadratureRule) -> Result<ModelConstants> {
    if !(lambda > 1.0) || !lambda.is_finite() {
        return Err(Error::Domain(format!("oversampling ratio must exceed 1, got {lambda}")));
    }
    let (mut lo, mut hi) = (BISECT_LO, lambda);
    if fixed_point_gap(lo, lambda, rule)? <= 0.0 {
        return Err(Error::Numeric(format!(
            "no sign change for Lambda = {lambda}: quadrature too coarse near C = 0"
        )));
    }
    for _ in 0..BISECT_MAX_ITERS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if fixed_point_gap(mid, lambda, rule)? > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let c = 0.5 * (lo + hi);
    let c2 = expect1(|w| w * w / (c + w * w).powi(2), rule)?;
    let c3 = expect1(|w| w.powi(4) / (c + w * w).powi(2), rule)?;
    Ok(ModelConstants { lambda, c_lambda: c, tau: 1.0 / c, c2, c3 })
}

impl ModelConstants {
    /// `E[G^2/(C+G^2)] - 1/Lambda` at the stored root.
    pub fn residual(&self, rule: &QuadratureRule) -> Result<f64> {
        fixed_point_gap(self.c_lambda, self.lambda, rule)
    }
}

/// `int_0^x exp(-t^2/2) dt`, odd, saturating at `sqrt(pi/2)`.
pub fn phi(x: f64) -> Result<f64> {
    if x.is_nan() {
        return Err(Error::InvalidArgument("phi of NaN".into()));
    }
    Ok(phi_unchecked(x))
}

#[inline]
pub(crate) fn phi_unchecked(x: f64) -> f64 {
    FRAC_PI_2.sqrt() * libm::erf(x / SQRT_2)
}

fn scaled_phi(x: f64, w: f64) -> f64 {
    if x.is_infinite() {
        FRAC_PI_2.sqrt()
    } else {
        phi_unchecked(x * w)
    }
}

fn check_nonneg(x: f64, name: &str) -> Result<()> {
    if x.is_nan() || x < 0.0 {
        return Err(Error::Domain(format!("{name} needs x >= 0, got {x}")));
    }
    Ok(())
}

/// `Lambda * E[|W| phi(x|W|) / (C + W^2)]`.
pub fn h1(x: f64, mc: &ModelConstants, rule: &QuadratureRule) -> Result<f64> {
    check_nonneg(x, "h1")?;
    let c = mc.c_lambda;
    Ok(mc.lambda * expect1(|w| w.abs() * scaled_phi(x, w.abs()) / (c + w * w), rule)?)
}

/// `E[|W|^3 phi(x|W|) / (C + W^2)^2] / C3`.
pub fn h2(x: f64, mc: &ModelConstants, rule: &QuadratureRule) -> Result<f64> {
    check_nonneg(x, "h2")?;
    let c = mc.c_lambda;
    let e = expect1(|w| w.abs().powi(3) * scaled_phi(x, w.abs()) / (c + w * w).powi(2), rule)?;
    Ok(e / mc.c3)
}
