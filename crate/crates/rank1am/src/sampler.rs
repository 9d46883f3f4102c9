//! Problem configuration, ground truth, initialization and fresh batches.
//!
//! Every random quantity is drawn from its own ChaCha8 stream whose key is a
//! hash of `(master_seed, trial, iter, half, stream)`, so a batch can be
//! replayed in isolation and results never depend on scheduling.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::predictor::{Nonlinearity, StatePoint};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Uniform on the unit ball.
    RandomBall,
    /// `alpha e_1 + beta e_2`.
    Explicit { alpha: f64, beta: f64 },
}

#[derive(Debug, Clone)]
pub struct ProblemConfig {
    pub d: usize,
    pub lambda: f64,
    /// Samples per half-step, `round(lambda * d)`.
    pub n: usize,
    pub sigma: f64,
    pub psi: Nonlinearity,
    pub iters: usize,
    pub master_seed: u64,
    pub init: Init,
    /// Draw the truth at a random orientation instead of `e_1`.
    pub rotate_truth: bool,
}

/// `2 ceil(log_lambda d) + 10`.
pub fn default_iters(d: usize, lambda: f64) -> usize {
    let k = ((d as f64).ln() / lambda.ln()).ceil().max(0.0) as usize;
    2 * k + 10
}

impl ProblemConfig {
    pub fn new(d: usize, lambda: f64, sigma: f64, psi: Nonlinearity, iters: usize, master_seed: u64, init: Init) -> Result<Self> {
        if d < 2 {
            return Err(Error::Config(format!("dimension must be at least 2, got {d}")));
        }
        if !(lambda > 1.0) || !lambda.is_finite() {
            return Err(Error::Config(format!("oversampling ratio must exceed 1, got {lambda}")));
        }
        let n = (lambda * d as f64).round() as usize;
        if n <= d {
            return Err(Error::Config(format!("need n > d, got n = {n}, d = {d}")));
        }
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(Error::Config(format!("noise level must be finite and >= 0, got {sigma}")));
        }
        if iters == 0 {
            return Err(Error::Config("iteration count must be positive".into()));
        }
        if let Init::Explicit { alpha, beta } = init {
            if !(alpha.is_finite() && beta.is_finite() && beta >= 0.0) || alpha * alpha + beta * beta == 0.0 {
                return Err(Error::Config(format!("explicit init ({alpha}, {beta}) must be nonzero with beta >= 0")));
            }
        }
        Ok(Self { d, lambda, n, sigma, psi, iters, master_seed, init, rotate_truth: false })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Half {
    Nu,
    Mu,
}

impl Half {
    pub fn name(&self) -> &'static str {
        match self {
            Half::Nu => "nu",
            Half::Mu => "mu",
        }
    }

    fn tag(&self) -> u64 {
        match self {
            Half::Nu => 1,
            Half::Mu => 2,
        }
    }
}

impl fmt::Display for Half {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[inline]
fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// 256-bit ChaCha key derived from a tuple of stream coordinates.
pub fn stream_key(parts: &[u64]) -> [u8; 32] {
    let mut h = 0x6a09_e667_f3bc_c908u64;
    for &p in parts {
        h = splitmix64(h ^ splitmix64(p));
    }
    let mut key = [0u8; 32];
    for (i, chunk) in key.chunks_exact_mut(8).enumerate() {
        h = splitmix64(h.wrapping_add(i as u64));
        chunk.copy_from_slice(&h.to_le_bytes());
    }
    key
}

const STREAM_X: u64 = 1;
const STREAM_Z: u64 = 2;
const STREAM_NOISE: u64 = 3;
const STREAM_INIT: u64 = 4;
pub(crate) const STREAM_RMT: u64 = 5;
const DOMAIN_BATCH: u64 = 0xba7c;
const DOMAIN_INIT: u64 = 0x1417;
const DOMAIN_TRUTH: u64 = 0x7e07;

/// Standard normals from a keyed ChaCha8 stream (polar Box–Muller).
pub struct NormalStream {
    rng: ChaCha8Rng,
    spare: Option<f64>,
}

impl NormalStream {
    pub fn new(key: [u8; 32]) -> Self {
        Self { rng: ChaCha8Rng::from_seed(key), spare: None }
    }

    pub fn from_parts(parts: &[u64]) -> Self {
        Self::new(stream_key(parts))
    }

    /// Uniform on (0, 1) with 53 random bits.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        ((self.rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    #[inline]
    fn pair(&mut self) -> (f64, f64) {
        loop {
            let u = 2.0 * self.uniform() - 1.0;
            let v = 2.0 * self.uniform() - 1.0;
            let s = u * u + v * v;
            if s < 1.0 && s > 0.0 {
                let m = (-2.0 * s.ln() / s).sqrt();
                return (u * m, v * m);
            }
        }
    }

    #[inline]
    pub fn next(&mut self) -> f64 {
        if let Some(s) = self.spare.take() {
            return s;
        }
        let (a, b) = self.pair();
        self.spare = Some(b);
        a
    }

    /// Same values as repeated `next`, without the per-value spare check.
    pub fn fill(&mut self, out: &mut [f64]) {
        let rest = match (self.spare.take(), out.split_first_mut()) {
            (Some(s), Some((first, tail))) => {
                *first = s;
                tail
            }
            (spare, _) => {
                self.spare = spare;
                out
            }
        };
        let mut chunks = rest.chunks_exact_mut(2);
        for c in &mut chunks {
            (c[0], c[1]) = self.pair();
        }
        if let [last] = chunks.into_remainder() {
            *last = self.next();
        }
    }
}

fn unit_from_stream(d: usize, parts: &[u64], against: Option<&DVector<f64>>) -> DVector<f64> {
    let mut s = NormalStream::from_parts(parts);
    let mut v = DVector::zeros(d);
    s.fill(v.as_mut_slice());
    if let Some(u) = against {
        let c = v.dot(u);
        v.axpy(-c, u, 1.0);
    }
    let norm = v.norm();
    v / norm
}

fn basis(d: usize, k: usize) -> DVector<f64> {
    let mut e = DVector::zeros(d);
    e[k] = 1.0;
    e
}

/// Truth `(mu*, nu*)`: `e_1` for both, or independent uniform unit vectors when
/// `rotate_truth` is set.
pub fn make_truth(config: &ProblemConfig) -> (DVector<f64>, DVector<f64>) {
    if config.rotate_truth {
        let seed = config.master_seed;
        (
            unit_from_stream(config.d, &[DOMAIN_TRUTH, seed, 0], None),
            unit_from_stream(config.d, &[DOMAIN_TRUTH, seed, 1], None),
        )
    } else {
        (basis(config.d, 0), basis(config.d, 0))
    }
}

/// Initial iterate for a trial. Random draws are uniform on the unit ball and are
/// kept as drawn (not projected to the sphere). Explicit states are placed on
/// `mu*` and a fixed unit direction orthogonal to it.
pub fn random_init(config: &ProblemConfig, trial: u64) -> DVector<f64> {
    match config.init {
        Init::Explicit { alpha, beta } => {
            let (mu, _) = make_truth(config);
            let orth = if config.rotate_truth {
                unit_from_stream(config.d, &[DOMAIN_TRUTH, config.master_seed, 2], Some(&mu))
            } else {
                basis(config.d, 1)
            };
            mu * alpha + orth * beta
        }
        Init::RandomBall => {
            let mut s = NormalStream::from_parts(&[DOMAIN_INIT, config.master_seed, trial, STREAM_INIT]);
            let mut v = DVector::zeros(config.d);
            s.fill(v.as_mut_slice());
            let radius = s.uniform().powf(1.0 / config.d as f64);
            let norm = v.norm();
            v *= radius / norm;
            v
        }
    }
}

/// Whether a random initial state sits in the band the convergence theory asks for:
/// `|alpha| >= 1/(50 sqrt d)` and `0.8 <= beta^2 <= 1.2`.
pub fn init_in_band(s: StatePoint, d: usize) -> bool {
    s.alpha.abs() >= 1.0 / (50.0 * (d as f64).sqrt()) && (0.8..=1.2).contains(&(s.beta * s.beta))
}

#[derive(Debug, Clone)]
pub struct Batch {
    /// `n x d`, sensing vectors `x_i` as rows.
    pub x: DMatrix<f64>,
    pub z: DMatrix<f64>,
    pub y: DVector<f64>,
    pub noise: DVector<f64>,
}

fn gaussian_matrix(n: usize, d: usize, stream: &mut NormalStream) -> DMatrix<f64> {
    let mut data = vec![0.0; n * d];
    stream.fill(&mut data);
    DMatrix::from_vec(n, d, data)
}

/// Fresh batch for `(trial, iter, half)`; identical arguments give identical bits.
pub fn draw_batch(config: &ProblemConfig, truth: (&DVector<f64>, &DVector<f64>), trial: u64, iter: u64, half: Half) -> Batch {
    let key = |stream: u64| [DOMAIN_BATCH, config.master_seed, trial, iter, half.tag(), stream];
    let (n, d) = (config.n, config.d);
    let x = gaussian_matrix(n, d, &mut NormalStream::from_parts(&key(STREAM_X)));
    let z = gaussian_matrix(n, d, &mut NormalStream::from_parts(&key(STREAM_Z)));
    let mut noise = DVector::zeros(n);
    if config.sigma > 0.0 {
        NormalStream::from_parts(&key(STREAM_NOISE)).fill(noise.as_mut_slice());
        noise *= config.sigma;
    }
    let xm = &x * truth.0;
    let zn = &z * truth.1;
    let y = DVector::from_fn(n, |i, _| config.psi.apply(xm[i] * zn[i]) + noise[i]);
    Batch { x, z, y, noise }
}
