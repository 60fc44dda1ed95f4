//! Exact t-SNE: perplexity-calibrated Gaussian affinities and gradient
//! descent on KL(P‖Q) with a Student-t output kernel.
//!
//! Everything is O(N²) in time and memory; the embedding is always 2-D and
//! stored row-major as `[x0, y0, x1, y1, ..]`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Tolerance on `2^H` (equivalently `e^H` in nats) for the bandwidth search.
pub const PERPLEXITY_TOLERANCE: f64 = 1e-5;
const MAX_SEARCH_STEPS: usize = 200;
/// Relative spread below which a row's dissimilarities count as equal.
const EQUAL_TOLERANCE: f64 = 1e-9;
/// Momentum switches from 0.5 to 0.8 at this iteration.
pub const MOMENTUM_SWITCH: usize = 250;
const MIN_GAIN: f64 = 0.01;
/// KL divergence is recorded every this many iterations.
pub const KL_EVERY: usize = 50;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Euclidean,
    Cosine,
}

impl Metric {
    pub const ALL: [Metric; 2] = [Metric::Euclidean, Metric::Cosine];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Euclidean => "euclidean",
            Metric::Cosine => "cosine",
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| CoreError::InvalidParameter(format!("unknown distance metric `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TsneParams {
    pub perplexity: f64,
    pub iterations: usize,
    pub exaggeration_iters: usize,
    pub exaggeration_factor: f64,
    pub learning_rate: f64,
    pub update_every: usize,
    pub metric: Metric,
    pub seed: u64,
}

impl Default for TsneParams {
    fn default() -> Self {
        Self {
            perplexity: 30.0,
            iterations: 1000,
            exaggeration_iters: 250,
            exaggeration_factor: 4.0,
            learning_rate: 200.0,
            update_every: 10,
            metric: Metric::Euclidean,
            seed: 0,
        }
    }
}

impl TsneParams {
    /// Checks the parameters against a dataset of `n` items, including
    /// `perplexity < (n - 1) / 3`.
    pub fn validate(&self, n: usize) -> Result<()> {
        self.validate_basic()?;
        let limit = (n as f64 - 1.0) / 3.0;
        if self.perplexity >= limit {
            return Err(CoreError::InvalidParameter(format!(
                "perplexity {} must be below (N - 1) / 3 = {limit:.3} for N = {n}",
                self.perplexity
            )));
        }
        Ok(())
    }

    fn validate_basic(&self) -> Result<()> {
        let bad = |what: &str| Err(CoreError::InvalidParameter(what.to_string()));
        if !(self.perplexity.is_finite() && self.perplexity > 0.0) {
            return bad("perplexity must be positive");
        }
        if self.iterations == 0 {
            return bad("iterations must be positive");
        }
        if self.update_every == 0 {
            return bad("updateEvery must be at least 1");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning rate must be positive");
        }
        if !(self.exaggeration_factor.is_finite() && self.exaggeration_factor > 0.0) {
            return bad("exaggeration factor must be positive");
        }
        Ok(())
    }
}

/// Dissimilarity fed into the Gaussian kernel: squared distance for the
/// Euclidean metric, `1 - cos` for the cosine metric (1 when either vector is
/// zero).
pub fn dissimilarity(a: &[f64], b: &[f64], metric: Metric) -> f64 {
    match metric {
        Metric::Euclidean => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum(),
        Metric::Cosine => {
            let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
            for (x, y) in a.iter().zip(b) {
                dot += x * y;
                na += x * x;
                nb += y * y;
            }
            if na == 0.0 || nb == 0.0 {
                1.0
            } else {
                (1.0 - dot / (na.sqrt() * nb.sqrt())).max(0.0)
            }
        }
    }
}

/// Conditional distribution of one row for precision `beta`, and its
/// entropy in nats.
pub fn row_distribution(dissimilarities: &[f64], beta: f64) -> (Vec<f64>, f64) {
    let min = dissimilarities.iter().copied().fold(f64::INFINITY, f64::min);
    let mut p: Vec<f64> = dissimilarities.iter().map(|&d| (-beta * (d - min)).exp()).collect();
    let z: f64 = p.iter().sum();
    let mut weighted = 0.0;
    for (pi, &d) in p.iter_mut().zip(dissimilarities) {
        *pi /= z;
        weighted += *pi * (d - min);
    }
    (p, z.ln() + beta * weighted)
}

/// Binary search for the precision whose row distribution has perplexity
/// `perplexity`. Rows whose dissimilarities are all equal up to rounding
/// (duplicates included) get the uniform distribution and `beta = 0`.
pub fn calibrate_row(dissimilarities: &[f64], perplexity: f64) -> (Vec<f64>, f64) {
    let n = dissimilarities.len();
    if n == 0 {
        return (Vec::new(), 0.0);
    }
    let min = dissimilarities.iter().copied().fold(f64::INFINITY, f64::min);
    let max = dissimilarities.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max - min <= EQUAL_TOLERANCE * max.abs() {
        return (vec![1.0 / n as f64; n], 0.0);
    }
    let target = perplexity.ln();
    let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
    let mut beta = 1.0 / (max - min);
    let mut p = Vec::new();
    for _ in 0..MAX_SEARCH_STEPS {
        let (row, h) = row_distribution(dissimilarities, beta);
        p = row;
        if (h.exp() - perplexity).abs() < PERPLEXITY_TOLERANCE {
            break;
        }
        if h > target {
            lo = beta;
            beta = if hi.is_infinite() { beta * 2.0 } else { 0.5 * (beta + hi) };
        } else {
            hi = beta;
            beta = 0.5 * (beta + lo);
        }
    }
    let (row, _) = row_distribution(dissimilarities, beta);
    if row.iter().all(|x| x.is_finite()) {
        p = row;
    }
    (p, beta)
}

/// Row-stochastic conditional affinities (zero diagonal), N×N row-major,
/// plus the per-row precisions.
pub fn conditional_affinities(
    data: &[f64],
    n: usize,
    d: usize,
    perplexity: f64,
    metric: Metric,
) -> (Vec<f64>, Vec<f64>) {
    let mut cond = vec![0.0; n * n];
    let betas: Vec<f64> = cond
        .par_chunks_mut(n)
        .enumerate()
        .map(|(i, row)| {
            let xi = &data[i * d..(i + 1) * d];
            let dis: Vec<f64> = (0..n)
                .filter(|&j| j != i)
                .map(|j| dissimilarity(xi, &data[j * d..(j + 1) * d], metric))
                .collect();
            let (p, beta) = calibrate_row(&dis, perplexity);
            let mut it = p.into_iter();
            for (j, slot) in row.iter_mut().enumerate() {
                if j != i {
                    *slot = it.next().expect("one probability per neighbor");
                }
            }
            beta
        })
        .collect();
    (cond, betas)
}

/// Joint affinities `(P_j|i + P_i|j) / 2N`: symmetric, zero diagonal,
/// summing to one.
pub fn affinities(data: &[f64], n: usize, d: usize, perplexity: f64, metric: Metric) -> Vec<f64> {
    let (mut p, _) = conditional_affinities(data, n, d, perplexity, metric);
    let scale = 1.0 / (2.0 * n as f64);
    for i in 0..n {
        for j in i + 1..n {
            let s = (p[i * n + j] + p[j * n + i]) * scale;
            p[i * n + j] = s;
            p[j * n + i] = s;
        }
    }
    p
}

#[inline]
fn kernel(y: &[f64], i: usize, j: usize) -> (f64, f64, f64) {
    let dx = y[2 * i] - y[2 * j];
    let dy = y[2 * i + 1] - y[2 * j + 1];
    (1.0 / (1.0 + dx * dx + dy * dy), dx, dy)
}

fn normalizer(y: &[f64], n: usize) -> f64 {
    let rows: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| (0..n).filter(|&j| j != i).map(|j| kernel(y, i, j).0).sum())
        .collect();
    rows.iter().sum()
}

/// Exact gradient of KL(P‖Q) with respect to the embedding, with P scaled
/// by `exaggeration`.
pub fn gradient(p: &[f64], y: &[f64], n: usize, exaggeration: f64) -> Vec<f64> {
    // one pass: per row, the attractive sum Σ p·w·d, the repulsive sum
    // Σ w²·d and the row's share of Z; the repulsion is scaled by 1/Z after
    let rows: Vec<[f64; 5]> = (0..n)
        .into_par_iter()
        .map(|i| {
            let row = &p[i * n..(i + 1) * n];
            let (xi, yi) = (y[2 * i], y[2 * i + 1]);
            let mut acc = [0.0; 5];
            for j in 0..n {
                if j == i {
                    continue;
                }
                let dx = xi - y[2 * j];
                let dy = yi - y[2 * j + 1];
                let w = 1.0 / (1.0 + dx * dx + dy * dy);
                let pw = row[j] * w;
                let ww = w * w;
                acc[0] += pw * dx;
                acc[1] += pw * dy;
                acc[2] += ww * dx;
                acc[3] += ww * dy;
                acc[4] += w;
            }
            acc
        })
        .collect();
    let z: f64 = rows.iter().map(|r| r[4]).sum();
    let mut grad = vec![0.0; 2 * n];
    for (i, r) in rows.iter().enumerate() {
        grad[2 * i] = 4.0 * (exaggeration * r[0] - r[2] / z);
        grad[2 * i + 1] = 4.0 * (exaggeration * r[1] - r[3] / z);
    }
    grad
}

/// KL(P‖Q) in nats.
pub fn kl_divergence(p: &[f64], y: &[f64], n: usize) -> f64 {
    let z = normalizer(y, n);
    let rows: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut acc = 0.0;
            for j in 0..n {
                let pij = p[i * n + j];
                if j != i && pij > 0.0 {
                    let q = kernel(y, i, j).0 / z;
                    acc += pij * (pij / q).ln();
                }
            }
            acc
        })
        .collect();
    rows.iter().sum()
}

/// An optimization in progress.
#[derive(Clone, Debug)]
pub struct Tsne {
    n: usize,
    p: Vec<f64>,
    y: Vec<f64>,
    update: Vec<f64>,
    gains: Vec<f64>,
    iter: usize,
    params: TsneParams,
    kl_history: Vec<(usize, f64)>,
}

impl Tsne {
    /// Computes affinities for row-major `data` (N×D) and draws the initial
    /// embedding from an isotropic Gaussian with standard deviation 1e-4.
    ///
    /// Only the basic parameter checks apply here; callers that accept user
    /// input should also run [`TsneParams::validate`].
    pub fn new(data: &[f64], n: usize, d: usize, params: TsneParams) -> Result<Self> {
        params.validate_basic()?;
        if n < 2 {
            return Err(CoreError::InvalidParameter(format!("t-SNE needs at least 2 items, got {n}")));
        }
        if data.len() != n * d || d == 0 {
            return Err(CoreError::Shape(format!("{} values for {n}x{d}", data.len())));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::InvalidParameter("t-SNE input contains non-finite values".into()));
        }
        let p = affinities(data, n, d, params.perplexity, params.metric);
        Ok(Self::from_affinities(p, n, params))
    }

    pub fn from_affinities(p: Vec<f64>, n: usize, params: TsneParams) -> Self {
        assert_eq!(p.len(), n * n);
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let normal = Normal::new(0.0, 1e-4).expect("valid deviation");
        let y = (0..2 * n).map(|_| normal.sample(&mut rng)).collect();
        Self {
            n,
            p,
            y,
            update: vec![0.0; 2 * n],
            gains: vec![1.0; 2 * n],
            iter: 0,
            params,
            kl_history: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn affinities(&self) -> &[f64] {
        &self.p
    }

    pub fn embedding(&self) -> &[f64] {
        &self.y
    }

    pub fn iteration(&self) -> usize {
        self.iter
    }

    pub fn params(&self) -> &TsneParams {
        &self.params
    }

    /// `(iteration, KL)` pairs recorded every [`KL_EVERY`] iterations.
    pub fn kl_history(&self) -> &[(usize, f64)] {
        &self.kl_history
    }

    pub fn kl_divergence(&self) -> f64 {
        kl_divergence(&self.p, &self.y, self.n)
    }

    pub fn set_learning_rate(&mut self, rate: f64) -> Result<()> {
        if !(rate.is_finite() && rate > 0.0) {
            return Err(CoreError::InvalidParameter("learning rate must be positive".into()));
        }
        self.params.learning_rate = rate;
        Ok(())
    }

    pub fn set_exaggeration_factor(&mut self, factor: f64) -> Result<()> {
        if !(factor.is_finite() && factor > 0.0) {
            return Err(CoreError::InvalidParameter("exaggeration factor must be positive".into()));
        }
        self.params.exaggeration_factor = factor;
        Ok(())
    }

    /// One gradient-descent iteration. A non-finite gradient leaves the
    /// embedding untouched and fails.
    pub fn step(&mut self) -> Result<()> {
        let exaggeration = if self.iter < self.params.exaggeration_iters {
            self.params.exaggeration_factor
        } else {
            1.0
        };
        let momentum = if self.iter < MOMENTUM_SWITCH { 0.5 } else { 0.8 };
        let grad = gradient(&self.p, &self.y, self.n, exaggeration);
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(CoreError::Numerical(format!(
                "non-finite gradient at iteration {}",
                self.iter
            )));
        }
        let lr = self.params.learning_rate;
        for k in 0..2 * self.n {
            let g = grad[k];
            self.gains[k] = if (g > 0.0) != (self.update[k] > 0.0) {
                self.gains[k] + 0.2
            } else {
                self.gains[k] * 0.8
            }
            .max(MIN_GAIN);
            self.update[k] = momentum * self.update[k] - lr * self.gains[k] * g;
            self.y[k] += self.update[k];
        }
        let (mut mx, mut my) = (0.0, 0.0);
        for i in 0..self.n {
            mx += self.y[2 * i];
            my += self.y[2 * i + 1];
        }
        mx /= self.n as f64;
        my /= self.n as f64;
        for i in 0..self.n {
            self.y[2 * i] -= mx;
            self.y[2 * i + 1] -= my;
        }
        self.iter += 1;
        if self.iter % KL_EVERY == 0 {
            self.kl_history.push((self.iter, self.kl_divergence()));
        }
        Ok(())
    }

    pub fn run(&mut self, iterations: usize) -> Result<()> {
        (0..iterations).try_for_each(|_| self.step())
    }
}
