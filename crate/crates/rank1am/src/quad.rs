//! Gaussian expectations by quadrature against the standard normal density.
//!
//! Two families of rules are provided. [`build_rule`] is the classical
//! Gauss–Hermite rule (probabilists' weight `exp(-g^2/2)/sqrt(2 pi)`), exact
//! for polynomials of degree `2*order - 1`. [`build_folded_rule`] mirrors a
//! Gauss rule for the half-normal law on `[0, inf)` onto both half-lines. It
//! is exact for the same even polynomials but also spectrally accurate for
//! integrands whose only kink sits at the origin (`|g|`, `sign(g x)`), where
//! Gauss–Hermite converges like `1/order`.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::{Error, Result};

pub const MIN_ORDER: usize = 2;
pub const MAX_ORDER: usize = 512;

#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub order: usize,
    /// Ascending, symmetric about zero.
    pub nodes: Vec<f64>,
    /// Nonnegative, summing to one.
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.nodes.iter().copied().zip(self.weights.iter().copied())
    }
}

fn check_order(order: usize) -> Result<()> {
    if !(MIN_ORDER..=MAX_ORDER).contains(&order) {
        return Err(Error::InvalidArgument(format!(
            "quadrature order {order} outside [{MIN_ORDER}, {MAX_ORDER}]"
        )));
    }
    Ok(())
}

/// Eigenvalues and squared first eigenvector components of the symmetric
/// tridiagonal matrix with diagonal `a` and off-diagonal `b`.
fn golub_welsch(a: &[f64], b: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let m = a.len();
    let mut jac = DMatrix::<f64>::zeros(m, m);
    for i in 0..m {
        jac[(i, i)] = a[i];
        if i + 1 < m {
            jac[(i, i + 1)] = b[i];
            jac[(i + 1, i)] = b[i];
        }
    }
    let eig = SymmetricEigen::new(jac);
    let mut pairs: Vec<(f64, f64)> = (0..m)
        .map(|k| (eig.eigenvalues[k], eig.eigenvectors[(0, k)].powi(2)))
        .collect();
    pairs.sort_by(|x, y| x.0.total_cmp(&y.0));
    pairs.into_iter().unzip()
}

/// Orthonormal Hermite recurrence at `x`. Returns `(p_n, p_{n-1}, ln sum_{k<n} p_k^2)`
/// where the first two share a common rescaling that cancels in ratios.
fn hermite_eval(n: usize, x: f64) -> (f64, f64, f64) {
    const BIG: f64 = 1e100;
    let mut prev = 0.0;
    let mut cur = 1.0;
    let mut sum = 0.0;
    let mut log_scale = 0.0;
    for k in 0..n {
        sum += cur * cur;
        let next = (x * cur - (k as f64).sqrt() * prev) / ((k + 1) as f64).sqrt();
        prev = cur;
        cur = next;
        if cur.abs() > BIG {
            cur /= BIG;
            prev /= BIG;
            sum /= BIG * BIG;
            log_scale += BIG.ln();
        }
    }
    (cur, prev, sum.ln() + 2.0 * log_scale)
}

/// Gauss–Hermite rule for the standard normal law.
pub fn build_rule(order: usize) -> Result<QuadratureRule> {
    check_order(order)?;
    let n = order;
    let diag = vec![0.0; n];
    let off: Vec<f64> = (1..n).map(|k| (k as f64).sqrt()).collect();
    let (mut nodes, _) = golub_welsch(&diag, &off);

    let sqrt_n = (n as f64).sqrt();
    let mut log_inv_w = vec![0.0; n];
    for (x, lw) in nodes.iter_mut().zip(log_inv_w.iter_mut()) {
        for _ in 0..3 {
            let (pn, pn1, _) = hermite_eval(n, *x);
            let step = pn / (sqrt_n * pn1);
            if !step.is_finite() {
                break;
            }
            *x -= step;
        }
        *lw = hermite_eval(n, *x).2;
    }

    // Symmetrize and normalize.
    let mut weights: Vec<f64> = log_inv_w.iter().map(|l| (-l).exp()).collect();
    for i in 0..n / 2 {
        let j = n - 1 - i;
        let x = 0.5 * (nodes[j] - nodes[i]);
        nodes[i] = -x;
        nodes[j] = x;
        let w = 0.5 * (weights[i] + weights[j]);
        weights[i] = w;
        weights[j] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);

    Ok(QuadratureRule { order, nodes, weights })
}

/// Composite Gauss–Legendre discretization of the half-normal density on [0, 40].
fn half_normal_discretization() -> (Vec<f64>, Vec<f64>) {
    const PANELS: usize = 400;
    const POINTS: usize = 20;
    const UPPER: f64 = 40.0;

    let diag = vec![0.0; POINTS];
    let off: Vec<f64> = (1..POINTS)
        .map(|k| {
            let k = k as f64;
            k / (4.0 * k * k - 1.0).sqrt()
        })
        .collect();
    let (t, wt) = golub_welsch(&diag, &off);
    // Legendre weights from eigenvectors carry mass 2 on [-1, 1].
    let wt: Vec<f64> = wt.iter().map(|w| 2.0 * w).collect();

    let h = UPPER / PANELS as f64;
    let dens = (2.0 / std::f64::consts::PI).sqrt();
    let mut xs = Vec::with_capacity(PANELS * POINTS);
    let mut ws = Vec::with_capacity(PANELS * POINTS);
    for p in 0..PANELS {
        let left = p as f64 * h;
        for (ti, wi) in t.iter().zip(&wt) {
            let x = left + 0.5 * h * (ti + 1.0);
            xs.push(x);
            ws.push(0.5 * h * wi * dens * (-0.5 * x * x).exp());
        }
    }
    (xs, ws)
}

/// Recurrence coefficients of the orthonormal polynomials for a discrete measure.
fn stieltjes(xs: &[f64], ws: &[f64], m: usize) -> (Vec<f64>, Vec<f64>) {
    let mass: f64 = ws.iter().sum();
    let mut a = vec![0.0; m];
    let mut b = vec![0.0; m.saturating_sub(1)];
    let mut prev = vec![0.0; xs.len()];
    let mut cur = vec![1.0 / mass.sqrt(); xs.len()];
    let mut beta_prev = 0.0;
    for k in 0..m {
        a[k] = xs.iter().zip(ws).zip(&cur).map(|((x, w), p)| w * x * p * p).sum();
        if k + 1 == m {
            break;
        }
        let mut next: Vec<f64> = (0..xs.len())
            .map(|i| (xs[i] - a[k]) * cur[i] - beta_prev * prev[i])
            .collect();
        let norm: f64 = next.iter().zip(ws).map(|(q, w)| w * q * q).sum::<f64>().sqrt();
        next.iter_mut().for_each(|q| *q /= norm);
        b[k] = norm;
        beta_prev = norm;
        prev = std::mem::replace(&mut cur, next);
    }
    (a, b)
}

/// Symmetric rule built from the Gauss rule of the half-normal law: nodes
/// `+-x_i`, weights `w_i / 2`. `order` must be even and at least 4.
pub fn build_folded_rule(order: usize) -> Result<QuadratureRule> {
    check_order(order)?;
    if order % 2 != 0 || order < 4 {
        return Err(Error::InvalidArgument(format!("folded rule needs an even order >= 4, got {order}")));
    }
    let m = order / 2;
    let (xs, ws) = half_normal_discretization();
    let (a, b) = stieltjes(&xs, &ws, m);
    let (half_nodes, half_w) = golub_welsch(&a, &b);
    let total: f64 = half_w.iter().sum();

    let mut nodes = Vec::with_capacity(order);
    let mut weights = Vec::with_capacity(order);
    for i in (0..m).rev() {
        nodes.push(-half_nodes[i]);
        weights.push(0.5 * half_w[i] / total);
    }
    for i in 0..m {
        nodes.push(half_nodes[i]);
        weights.push(0.5 * half_w[i] / total);
    }
    Ok(QuadratureRule { order, nodes, weights })
}

fn finite_or(v: f64, node: &[f64]) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite { node: node.to_vec() })
    }
}

/// E[f(G)].
pub fn expect1(f: impl Fn(f64) -> f64, rule: &QuadratureRule) -> Result<f64> {
    let mut acc = 0.0;
    for (g, w) in rule.iter() {
        acc += w * finite_or(f(g), &[g])?;
    }
    Ok(acc)
}

/// E[f(G, X)] on the tensor grid.
pub fn expect2(f: impl Fn(f64, f64) -> f64, rule: &QuadratureRule) -> Result<f64> {
    let mut acc = 0.0;
    for (g, wg) in rule.iter() {
        let mut inner = 0.0;
        for (x, wx) in rule.iter() {
            inner += wx * finite_or(f(g, x), &[g, x])?;
        }
        acc += wg * inner;
    }
    Ok(acc)
}

/// E[f(G, X, V)] on the tensor grid.
pub fn expect3(f: impl Fn(f64, f64, f64) -> f64, rule: &QuadratureRule) -> Result<f64> {
    let [v] = expect3_many(|g, x, v| [f(g, x, v)], rule)?;
    Ok(v)
}

/// Several expectations over the same three-dimensional grid in one sweep.
pub fn expect3_many<const K: usize>(
    f: impl Fn(f64, f64, f64) -> [f64; K],
    rule: &QuadratureRule,
) -> Result<[f64; K]> {
    let mut acc = [0.0; K];
    for (g, wg) in rule.iter() {
        let mut mid = [0.0; K];
        for (x, wx) in rule.iter() {
            let mut inner = [0.0; K];
            for (v, wv) in rule.iter() {
                let vals = f(g, x, v);
                for k in 0..K {
                    inner[k] += wv * finite_or(vals[k], &[g, x, v])?;
                }
            }
            for k in 0..K {
                mid[k] += wx * inner[k];
            }
        }
        for k in 0..K {
            acc[k] += wg * mid[k];
        }
    }
    Ok(acc)
}
