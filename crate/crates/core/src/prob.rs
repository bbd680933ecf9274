//! Wasserstein distances, Gaussian approximation of sums, matrix Cramér tails
//! and the Gaussian-to-full-dimension diagnostic.

use std::collections::BTreeMap;
use std::f64::consts::LN_2;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::factorial::ln_binomial;
use thiserror::Error;

use crate::cloud::PointCloud;
use crate::walk::stream_rng;

/// Largest equal sample size solved by exact assignment when d >= 2.
pub const ASSIGNMENT_MAX: usize = 2000;
pub const SLICES: usize = 128;
const SLICE_SEED: u64 = 0x51ce_d1e5;
pub const MIN_CELL_SAMPLES: usize = 32;
/// Mass fraction at which the Gaussian hypothesis counts as holding.
pub const MASS_THRESHOLD: f64 = 0.9;
pub const ENTROPY_SLACK: f64 = 0.1;
/// Chernoff exponent for `[0,1]`-valued sums with mean floor `a`: tilting at
/// `log 2` gives `log P[S <= na/2] <= -(1 - log 2)/2 * na`.
pub const CRAMER_C: f64 = (1.0 - LN_2) / 2.0;
pub const FRONTIER_C: [f64; 7] = [1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 100.0];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProbError {
    #[error("empty point cloud")]
    EmptyCloud,
    #[error("clouds have dimensions {0} and {1}")]
    DimensionMismatch(usize, usize),
    #[error("summand law needs at least one atom of a common dimension")]
    BadSummand,
    #[error("hypothesis cannot be certified: {0}")]
    HypothesisUnverifiable(String),
    #[error("too few samples: got {got}, need {need}")]
    TooFewSamples { got: usize, need: usize },
    #[error("bad parameter: {0}")]
    BadParameter(String),
}

/// SplitMix64 step, used to derive independent child seeds.
pub fn child_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

// ---------------------------------------------------------------------------
// Wasserstein-1

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum W1Method {
    Exact1d,
    Assignment,
    Sliced,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct W1Result {
    pub value: f64,
    pub method: W1Method,
    pub sample_sizes: (usize, usize),
    pub slices: Option<usize>,
}

fn check_pair(a: &PointCloud, b: &PointCloud) -> Result<(), ProbError> {
    if a.is_empty() || b.is_empty() {
        return Err(ProbError::EmptyCloud);
    }
    if a.dim() != b.dim() {
        return Err(ProbError::DimensionMismatch(a.dim(), b.dim()));
    }
    Ok(())
}

/// W1 between the empirical measures of two clouds.
///
/// d = 1 is exact for any sizes. For d >= 2, equal sizes up to
/// [`ASSIGNMENT_MAX`] are solved exactly; everything else falls back to
/// sliced W1, which is a lower bound.
pub fn empirical_w1(a: &PointCloud, b: &PointCloud) -> Result<W1Result, ProbError> {
    check_pair(a, b)?;
    let sample_sizes = (a.len(), b.len());
    if a.dim() == 1 {
        return Ok(W1Result {
            value: w1_sorted(a.data().to_vec(), b.data().to_vec()),
            method: W1Method::Exact1d,
            sample_sizes,
            slices: None,
        });
    }
    if a.len() == b.len() && a.len() <= ASSIGNMENT_MAX {
        return Ok(W1Result {
            value: w1_assignment(a, b)?,
            method: W1Method::Assignment,
            sample_sizes,
            slices: None,
        });
    }
    Ok(W1Result {
        value: sliced_w1(a, b, SLICES, SLICE_SEED)?,
        method: W1Method::Sliced,
        sample_sizes,
        slices: Some(SLICES),
    })
}

/// Exact 1-d W1 as the integral of `|F^-1 - G^-1|` over quantile levels.
pub fn w1_sorted(mut x: Vec<f64>, mut y: Vec<f64>) -> f64 {
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let (n, m) = (x.len() as u64, y.len() as u64);
    // Quantile levels are counted in units of 1/(n m).
    let (mut i, mut j, mut pos) = (0usize, 0usize, 0u64);
    let mut total = 0.0;
    while i < x.len() && j < y.len() {
        let next_i = (i as u64 + 1) * m;
        let next_j = (j as u64 + 1) * n;
        let next = next_i.min(next_j);
        total += (next - pos) as f64 * (x[i] - y[j]).abs();
        pos = next;
        if next == next_i {
            i += 1;
        }
        if next == next_j {
            j += 1;
        }
    }
    total / (n as f64 * m as f64)
}

fn euclid(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

/// Optimal assignment between two equal-size clouds. Returns the mean cost and
/// the column matched to each row.
pub fn optimal_assignment(a: &PointCloud, b: &PointCloud) -> Result<(f64, Vec<usize>), ProbError> {
    check_pair(a, b)?;
    if a.len() != b.len() {
        return Err(ProbError::BadParameter(format!(
            "assignment needs equal sizes, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    let mut cost = vec![0.0; n * n];
    for i in 0..n {
        let p = a.point(i);
        for j in 0..n {
            cost[i * n + j] = euclid(p, b.point(j));
        }
    }
    let assign = hungarian(&cost, n);
    let total: f64 = assign.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum();
    Ok((total / n as f64, assign))
}

pub fn w1_assignment(a: &PointCloud, b: &PointCloud) -> Result<f64, ProbError> {
    optimal_assignment(a, b).map(|(v, _)| v)
}

/// Shortest-augmenting-path Hungarian algorithm with potentials, O(n^3).
/// `cost` is row-major `n x n`; returns the column assigned to each row.
pub fn hungarian(cost: &[f64], n: usize) -> Vec<usize> {
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut minv = vec![inf; n + 1];
    let mut used = vec![false; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        minv.iter_mut().for_each(|x| *x = inf);
        used.iter_mut().for_each(|x| *x = false);
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let row = &cost[(i0 - 1) * n..i0 * n];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = row[j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![0; n];
    for j in 1..=n {
        out[p[j] - 1] = j - 1;
    }
    out
}

fn random_unit<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn project(c: &PointCloud, u: &[f64]) -> Vec<f64> {
    c.points().map(|p| p.iter().zip(u).map(|(a, b)| a * b).sum()).collect()
}

/// Mean of exact 1-d W1 over `slices` seeded random directions.
pub fn sliced_w1(a: &PointCloud, b: &PointCloud, slices: usize, seed: u64) -> Result<f64, ProbError> {
    check_pair(a, b)?;
    let d = a.dim();
    let per: Vec<f64> = (0..slices as u64)
        .into_par_iter()
        .map(|k| {
            let u = random_unit(d, &mut stream_rng(seed, k));
            w1_sorted(project(a, &u), project(b, &u))
        })
        .collect();
    Ok(per.iter().sum::<f64>() / slices.max(1) as f64)
}

// ---------------------------------------------------------------------------
// Gaussian fits and reference clouds

/// Sample mean and (n - 1)-normalized covariance.
pub fn fit_gaussian(cloud: &PointCloud) -> (DVector<f64>, DMatrix<f64>) {
    let d = cloud.dim();
    let mean = DVector::from_vec(cloud.mean());
    let mut cov = DMatrix::zeros(d, d);
    for p in cloud.points() {
        let x = DVector::from_column_slice(p) - &mean;
        cov += &x * x.transpose();
    }
    let denom = (cloud.len().max(2) - 1) as f64;
    (mean, cov / denom)
}

/// Symmetric square root of a PSD matrix; negative eigenvalues are clamped.
pub fn psd_sqrt(cov: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(cov.clone());
    let s = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&s) * eig.eigenvectors.transpose()
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    match m.nrows() {
        1 => m[(0, 0)],
        2 => {
            let (a, b, c) = (m[(0, 0)], 0.5 * (m[(0, 1)] + m[(1, 0)]), m[(1, 1)]);
            0.5 * (a + c) - (0.25 * (a - c) * (a - c) + b * b).sqrt()
        }
        _ => SymmetricEigen::new(m.clone()).eigenvalues.min(),
    }
}

/// `count` points standing in for `N(mean, cov)`.
///
/// In d = 1 these are the quantiles `Phi^-1((i + 1/2)/count)`, which removes
/// the sampling noise of the reference side. In higher dimension they are
/// seeded draws through the symmetric square root of `cov`.
pub fn gaussian_cloud(mean: &[f64], cov: &DMatrix<f64>, count: usize, seed: u64) -> PointCloud {
    let d = mean.len();
    if d == 1 {
        let sd = cov[(0, 0)].max(0.0).sqrt();
        let z = Normal::new(0.0, 1.0).expect("standard normal");
        let data = (0..count)
            .map(|i| mean[0] + sd * z.inverse_cdf((i as f64 + 0.5) / count as f64))
            .collect();
        return PointCloud::new(1, data);
    }
    let root = psd_sqrt(cov);
    let mut rng = stream_rng(seed, u64::MAX);
    let mut data = Vec::with_capacity(d * count);
    for _ in 0..count {
        let z = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let x = &root * z;
        data.extend((0..d).map(|k| mean[k] + x[k]));
    }
    PointCloud::new(d, data)
}

// ---------------------------------------------------------------------------
// Berry–Esseen

/// Uniform law on finitely many atoms in R^d.
#[derive(Debug, Clone, PartialEq)]
pub struct SummandSpec {
    d: usize,
    atoms: Vec<Vec<f64>>,
}

impl SummandSpec {
    pub fn new(atoms: Vec<Vec<f64>>) -> Result<Self, ProbError> {
        let d = atoms.first().map_or(0, Vec::len);
        if d == 0 || atoms.iter().any(|a| a.len() != d) {
            return Err(ProbError::BadSummand);
        }
        Ok(Self { d, atoms })
    }

    pub fn zero(d: usize) -> Self {
        Self {
            d,
            atoms: vec![vec![0.0; d]],
        }
    }

    /// `+-delta` with equal probability.
    pub fn rademacher(delta: f64) -> Self {
        Self {
            d: 1,
            atoms: vec![vec![delta], vec![-delta]],
        }
    }

    /// `+-v` with equal probability.
    pub fn two_point(v: Vec<f64>) -> Self {
        let neg = v.iter().map(|x| -x).collect();
        Self {
            d: v.len(),
            atoms: vec![v, neg],
        }
    }

    /// Independent signs `+-delta/sqrt(d)` in each coordinate (cube vertices).
    pub fn cube_signs(d: usize, delta: f64) -> Self {
        let s = delta / (d as f64).sqrt();
        let atoms = (0..1usize << d)
            .map(|mask| (0..d).map(|k| if mask >> k & 1 == 1 { s } else { -s }).collect())
            .collect();
        Self { d, atoms }
    }

    pub fn rotated(&self, rot: &DMatrix<f64>) -> Self {
        let atoms = self
            .atoms
            .iter()
            .map(|a| (rot * DVector::from_column_slice(a)).iter().copied().collect())
            .collect();
        Self { d: self.d, atoms }
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn atoms(&self) -> &[Vec<f64>] {
        &self.atoms
    }

    /// Almost-sure bound on `|X|`.
    pub fn delta(&self) -> f64 {
        self.atoms
            .iter()
            .map(|a| a.iter().map(|x| x * x).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    pub fn mean(&self) -> Vec<f64> {
        let k = self.atoms.len() as f64;
        (0..self.d)
            .map(|j| self.atoms.iter().map(|a| a[j]).sum::<f64>() / k)
            .collect()
    }

    /// Exact covariance of one summand.
    pub fn covariance(&self) -> DMatrix<f64> {
        let m = DVector::from_vec(self.mean());
        let mut cov = DMatrix::zeros(self.d, self.d);
        for a in &self.atoms {
            let x = DVector::from_column_slice(a) - &m;
            cov += &x * x.transpose();
        }
        cov / self.atoms.len() as f64
    }

    /// One draw of `X_1 + ... + X_n`, through multinomial atom counts.
    pub fn sample_sum<R: Rng + ?Sized>(&self, n: u64, rng: &mut R) -> Vec<f64> {
        let k = self.atoms.len();
        let mut out = vec![0.0; self.d];
        let mut remaining = n;
        for (t, atom) in self.atoms.iter().enumerate() {
            let count = if t + 1 == k {
                remaining
            } else {
                Binomial::new(remaining, 1.0 / (k - t) as f64)
                    .expect("valid binomial")
                    .sample(rng)
            };
            remaining -= count;
            for j in 0..self.d {
                out[j] += count as f64 * atom[j];
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BerryEsseenReport {
    pub n: u64,
    pub trials: usize,
    pub delta: f64,
    pub w1: W1Result,
    /// `W1 / delta`.
    pub ratio: f64,
}

/// Simulates `S = X_1 + ... + X_n` and compares it with `N(E S, n Cov X)`.
pub fn berry_esseen_check(
    spec: &SummandSpec,
    n: u64,
    trials: usize,
    seed: u64,
) -> Result<BerryEsseenReport, ProbError> {
    if trials == 0 {
        return Err(ProbError::EmptyCloud);
    }
    let sums: Vec<Vec<f64>> = (0..trials as u64)
        .into_par_iter()
        .map(|t| spec.sample_sum(n, &mut stream_rng(seed, t)))
        .collect();
    let s_cloud = PointCloud::new(spec.d, sums.into_iter().flatten().collect());
    let mean: Vec<f64> = spec.mean().iter().map(|m| m * n as f64).collect();
    let cov = spec.covariance() * n as f64;
    let g_cloud = gaussian_cloud(&mean, &cov, trials, child_seed(seed, 1));
    let w1 = empirical_w1(&s_cloud, &g_cloud)?;
    let delta = spec.delta();
    let ratio = if delta > 0.0 { w1.value / delta } else { 0.0 };
    Ok(BerryEsseenReport {
        n,
        trials,
        delta,
        w1,
        ratio,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BerryEsseenTrend {
    pub ns: Vec<u64>,
    pub ratios: Vec<f64>,
    pub stderr: Vec<f64>,
    /// OLS slope of the ratio against `log10 n`.
    pub slope: f64,
    pub slope_stderr: f64,
    /// Fitted constant: the largest observed ratio.
    pub bound: f64,
    pub non_increasing: bool,
}

/// Ratios over a ladder of `n`, with `trials_per_n * n` trials and
/// `replicates` independent seeds per rung. Scaling trials with `n` keeps the
/// Monte-Carlo part of the ratio at a fixed level across rungs.
pub fn berry_esseen_trend(
    spec: &SummandSpec,
    ns: &[u64],
    trials_per_n: usize,
    replicates: usize,
    seed: u64,
) -> Result<BerryEsseenTrend, ProbError> {
    if ns.len() < 2 || replicates < 2 {
        return Err(ProbError::BadParameter(
            "trend needs two rungs and two replicates".into(),
        ));
    }
    let mut ratios = Vec::new();
    let mut stderr = Vec::new();
    for (k, &n) in ns.iter().enumerate() {
        let trials = trials_per_n * n as usize;
        let mut vals = Vec::with_capacity(replicates);
        for r in 0..replicates {
            let s = child_seed(seed, (k * replicates + r) as u64 + 100);
            vals.push(berry_esseen_check(spec, n, trials, s)?.ratio);
        }
        let mean = vals.iter().sum::<f64>() / replicates as f64;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (replicates - 1) as f64;
        ratios.push(mean);
        stderr.push((var / replicates as f64).sqrt());
    }
    let x: Vec<f64> = ns.iter().map(|&n| (n as f64).log10()).collect();
    let xbar = x.iter().sum::<f64>() / x.len() as f64;
    let sxx: f64 = x.iter().map(|v| (v - xbar) * (v - xbar)).sum();
    let w: Vec<f64> = x.iter().map(|v| (v - xbar) / sxx).collect();
    let slope = w.iter().zip(&ratios).map(|(a, b)| a * b).sum::<f64>();
    let slope_stderr = w.iter().zip(&stderr).map(|(a, s)| a * a * s * s).sum::<f64>().sqrt();
    let bound = ratios.iter().copied().fold(0.0, f64::max);
    Ok(BerryEsseenTrend {
        ns: ns.to_vec(),
        ratios,
        stderr,
        slope,
        slope_stderr,
        bound,
        non_increasing: slope <= 2.0 * slope_stderr + 1e-12,
    })
}

// ---------------------------------------------------------------------------
// Matrix Cramér

/// Sequence of random PSD matrices `X_1, X_2, ...` with `0 <= X_i <= bI`.
pub trait PsdGenerator: Sync {
    fn dim(&self) -> usize;
    /// `b` with `X_i <= bI` surely.
    fn bound(&self) -> f64;
    /// A floor `m` with `E[X_i | X_1..X_{i-1}] >= mI` guaranteed by construction.
    fn certified_floor(&self, step: usize) -> Option<f64>;
    fn sample(&self, step: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64>;

    /// Exact `log P[lambda_min(sum) <= threshold]`, when known.
    fn exact_log_tail(&self, _n: usize, _threshold: f64) -> Option<f64> {
        None
    }

    /// Variance-reduced estimate `(p, stderr of p)` of the same tail.
    fn tail_estimate(&self, _n: usize, _threshold: f64, _trials: usize, _seed: u64) -> Option<(f64, f64)> {
        None
    }
}

/// `X_i = mI`.
#[derive(Debug, Clone, Copy)]
pub struct DeterministicPsd {
    pub d: usize,
    pub m: f64,
}

impl PsdGenerator for DeterministicPsd {
    fn dim(&self) -> usize {
        self.d
    }
    fn bound(&self) -> f64 {
        self.m
    }
    fn certified_floor(&self, _: usize) -> Option<f64> {
        Some(self.m)
    }
    fn sample(&self, _: usize, _: &mut ChaCha8Rng) -> DMatrix<f64> {
        DMatrix::identity(self.d, self.d) * self.m
    }
    fn exact_log_tail(&self, n: usize, threshold: f64) -> Option<f64> {
        Some(if n as f64 * self.m <= threshold {
            0.0
        } else {
            f64::NEG_INFINITY
        })
    }
}

/// Scalar `X_i ~ Bernoulli(p)` on `{0, 1}`.
#[derive(Debug, Clone, Copy)]
pub struct ScalarBernoulli {
    pub p: f64,
}

impl PsdGenerator for ScalarBernoulli {
    fn dim(&self) -> usize {
        1
    }
    fn bound(&self) -> f64 {
        1.0
    }
    fn certified_floor(&self, _: usize) -> Option<f64> {
        Some(self.p)
    }
    fn sample(&self, _: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, if rng.random::<f64>() < self.p { 1.0 } else { 0.0 })
    }

    fn exact_log_tail(&self, n: usize, threshold: f64) -> Option<f64> {
        let kmax = (threshold + 1e-9).floor();
        if kmax < 0.0 {
            return Some(f64::NEG_INFINITY);
        }
        let kmax = (kmax as usize).min(n);
        let terms: Vec<f64> = (0..=kmax)
            .map(|k| ln_binomial(n as u64, k as u64) + k as f64 * self.p.ln() + (n - k) as f64 * (1.0 - self.p).ln())
            .collect();
        Some(log_sum_exp(&terms))
    }

    /// Importance sampling from `Bernoulli(q)` with `q` tilted to the threshold.
    fn tail_estimate(&self, n: usize, threshold: f64, trials: usize, seed: u64) -> Option<(f64, f64)> {
        let p = self.p;
        let q = (threshold / n as f64).clamp(1.0 / n as f64, p);
        let lr1 = (p / q).ln();
        let lr0 = ((1.0 - p) / (1.0 - q)).ln();
        let weights: Vec<f64> = (0..trials as u64)
            .into_par_iter()
            .map(|t| {
                let k = Binomial::new(n as u64, q)
                    .expect("valid binomial")
                    .sample(&mut stream_rng(seed, t));
                if k as f64 <= threshold + 1e-9 {
                    (k as f64 * lr1 + (n as f64 - k as f64) * lr0).exp()
                } else {
                    0.0
                }
            })
            .collect();
        Some(mean_and_stderr(&weights))
    }
}

/// `X_i = mI + s R(theta) diag(1, -1) R(theta)^T` with uniform `theta`, in d = 2.
/// Requires `s <= m` so that `X_i` stays PSD.
#[derive(Debug, Clone, Copy)]
pub struct RotatingNoise {
    pub m: f64,
    pub s: f64,
}

impl PsdGenerator for RotatingNoise {
    fn dim(&self) -> usize {
        2
    }
    fn bound(&self) -> f64 {
        self.m + self.s
    }
    fn certified_floor(&self, _: usize) -> Option<f64> {
        (self.s <= self.m).then_some(self.m)
    }
    fn sample(&self, _: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let t = 2.0 * std::f64::consts::PI * rng.random::<f64>();
        let (c, s) = ((2.0 * t).cos(), (2.0 * t).sin());
        DMatrix::from_row_slice(
            2,
            2,
            &[self.m + self.s * c, self.s * s, self.s * s, self.m - self.s * c],
        )
    }
}

/// `X_i = d m v v^T` with `v` uniform on the unit sphere, so `E X_i = mI`.
#[derive(Debug, Clone, Copy)]
pub struct RankOneRandom {
    pub d: usize,
    pub m: f64,
}

impl PsdGenerator for RankOneRandom {
    fn dim(&self) -> usize {
        self.d
    }
    fn bound(&self) -> f64 {
        self.d as f64 * self.m
    }
    fn certified_floor(&self, _: usize) -> Option<f64> {
        Some(self.m)
    }
    fn sample(&self, _: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let v = DVector::from_vec(random_unit(self.d, rng));
        &v * v.transpose() * (self.d as f64 * self.m)
    }
}

/// A generator given only as a sampler; nothing about its conditional mean is known.
pub struct BlackBoxPsd<F> {
    pub d: usize,
    pub b: f64,
    pub draw: F,
}

impl<F: Fn(&mut ChaCha8Rng) -> DMatrix<f64> + Sync> PsdGenerator for BlackBoxPsd<F> {
    fn dim(&self) -> usize {
        self.d
    }
    fn bound(&self) -> f64 {
        self.b
    }
    fn certified_floor(&self, _: usize) -> Option<f64> {
        None
    }
    fn sample(&self, _: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        (self.draw)(rng)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum TailMethod {
    MonteCarlo,
    ImportanceSampling,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CramerCheck {
    pub n: usize,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    /// `na/4`; the event is `lambda_min(X_1 + ... + X_n) <= threshold`.
    pub threshold: f64,
    pub empirical_prob: f64,
    pub empirical_stderr: f64,
    pub empirical_log_prob: f64,
    pub exact_log_prob: Option<f64>,
    /// `-c (a/b) n + log |S|`, with `S` a `a/(8b)`-net of the unit sphere.
    pub bound_log_prob: f64,
    pub margin: f64,
    pub method: TailMethod,
    /// The empirical tail minus three standard errors is below the bound.
    pub holds: bool,
}

impl CramerCheck {
    /// Whether the estimate agrees with the exact tail within `k` standard errors.
    pub fn matches_exact(&self, k: f64) -> Option<bool> {
        self.exact_log_prob
            .map(|e| (self.empirical_prob - e.exp()).abs() <= k * self.empirical_stderr + 1e-300)
    }
}

/// `log |S|` for a net of the unit sphere in R^d at spacing `a/(8b)`.
pub fn net_log_size(d: usize, a: f64, b: f64) -> f64 {
    if d <= 1 {
        0.0
    } else {
        d as f64 * (1.0 + 16.0 * b / a).ln()
    }
}

pub fn cramer_bound(d: usize, a: f64, b: f64, n: usize, c: f64) -> f64 {
    -c * (a / b) * n as f64 + net_log_size(d, a, b)
}

/// Estimates `P[lambda_min(X_1 + ... + X_n) <= na/4]` and compares it with
/// the Cramér bound at constant [`CRAMER_C`].
pub fn cramer_check<G: PsdGenerator + ?Sized>(
    gen: &G,
    floors: &[f64],
    b: f64,
    n: usize,
    trials: usize,
    seed: u64,
) -> Result<CramerCheck, ProbError> {
    cramer_check_with(gen, floors, b, n, trials, seed, CRAMER_C)
}

pub fn cramer_check_with<G: PsdGenerator + ?Sized>(
    gen: &G,
    floors: &[f64],
    b: f64,
    n: usize,
    trials: usize,
    seed: u64,
    c: f64,
) -> Result<CramerCheck, ProbError> {
    if floors.len() != n || n == 0 || trials == 0 {
        return Err(ProbError::BadParameter(format!(
            "need n = {n} > 0 floors and trials > 0, got {} floors",
            floors.len()
        )));
    }
    if !(b >= gen.bound() - 1e-12) {
        return Err(ProbError::HypothesisUnverifiable(format!(
            "X_i <= bI fails: generator bound {} exceeds b = {b}",
            gen.bound()
        )));
    }
    for (i, &m) in floors.iter().enumerate() {
        let cert = gen
            .certified_floor(i)
            .ok_or_else(|| ProbError::HypothesisUnverifiable(format!("no certified floor at step {}", i + 1)))?;
        if m < 0.0 || m > cert + 1e-12 {
            return Err(ProbError::HypothesisUnverifiable(format!(
                "floor m_{} = {m} exceeds certified {cert}",
                i + 1
            )));
        }
    }
    let a = floors.iter().sum::<f64>() / n as f64;
    if a <= 0.0 {
        return Err(ProbError::BadParameter("a = sum(m_i)/n must be positive".into()));
    }
    let threshold = n as f64 * a / 4.0;
    let (p, se, method) = match gen.tail_estimate(n, threshold, trials, seed) {
        Some((p, se)) => (p, se, TailMethod::ImportanceSampling),
        None => {
            let hits: Vec<f64> = (0..trials as u64)
                .into_par_iter()
                .map(|t| {
                    let mut rng = stream_rng(seed, t);
                    let d = gen.dim();
                    let mut acc = DMatrix::zeros(d, d);
                    for i in 0..n {
                        acc += gen.sample(i, &mut rng);
                    }
                    if min_eigenvalue(&acc) <= threshold + 1e-9 * threshold.abs().max(1.0) {
                        1.0
                    } else {
                        0.0
                    }
                })
                .collect();
            let (p, se) = mean_and_stderr(&hits);
            (p, se, TailMethod::MonteCarlo)
        }
    };
    let bound = cramer_bound(gen.dim(), a, b, n, c);
    let log_p = p.ln();
    Ok(CramerCheck {
        n,
        a,
        b,
        c,
        threshold,
        empirical_prob: p,
        empirical_stderr: se,
        empirical_log_prob: log_p,
        exact_log_prob: gen.exact_log_tail(n, threshold),
        bound_log_prob: bound,
        margin: bound - log_p,
        method,
        holds: p - 3.0 * se <= bound.exp(),
    })
}

fn mean_and_stderr(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    if x.len() < 2 {
        return (mean, 0.0);
    }
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn log_sum_exp(x: &[f64]) -> f64 {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + x.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

// ---------------------------------------------------------------------------
// Gaussian cells to full dimension

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellStat {
    pub size: usize,
    pub mass: f64,
    /// `lambda_min(Sigma) / r^2` of the fitted covariance.
    pub sigma_floor: f64,
    /// `W1(cell, N(mean, Sigma)) / r`.
    pub w1_over_r: f64,
    pub w1_method: W1Method,
    /// Entropy between scales `r` and `2r` of the fitted Gaussian under
    /// Gaussian smoothing: `1/2 sum log((1 + l/r^2) / (1 + l/(4r^2)))`.
    pub entropy_gain: f64,
}

impl CellStat {
    pub fn qualifies(&self, c: f64) -> bool {
        self.sigma_floor >= c && self.w1_over_r < 1.0 / c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GaussianDimensionVerdict {
    pub d: usize,
    pub c: f64,
    pub r: f64,
    pub cells: Vec<CellStat>,
    /// Mass of cells where both `Sigma >= C r^2 I` and `W1 < r/C` hold.
    pub mass_fraction: f64,
    /// Mass in cells too small to fit.
    pub skipped_mass: f64,
    /// Mass-weighted entropy gain over qualifying cells.
    pub entropy_lower: f64,
    /// `d log 2`.
    pub entropy_target: f64,
    pub holds: bool,
    pub full_dimension: bool,
    /// `(C, mass fraction)` over [`FRONTIER_C`].
    pub frontier: Vec<(f64, f64)>,
}

/// Splits a cloud into the cells of the grid `side * Z^d`, ordered by cell index.
pub fn grid_disintegration(cloud: &PointCloud, side: f64) -> Vec<PointCloud> {
    let d = cloud.dim();
    let mut cells: BTreeMap<Vec<i64>, Vec<f64>> = BTreeMap::new();
    for p in cloud.points() {
        let key = p.iter().map(|x| (x / side).floor() as i64).collect();
        cells.entry(key).or_default().extend_from_slice(p);
    }
    cells.into_values().map(|data| PointCloud::new(d, data)).collect()
}

/// Checks the hypothesis `Sigma >= C r^2 I` and `W1(x | cell, N(x_0, Sigma)) < r / C`
/// cell by cell, weighting cells by their sample counts.
pub fn gaussian_dimension_check(
    cells: &[PointCloud],
    c: f64,
    r: f64,
    seed: u64,
) -> Result<GaussianDimensionVerdict, ProbError> {
    if !(c > 0.0 && r > 0.0) {
        return Err(ProbError::BadParameter(format!("need C > 0 and r > 0, got {c}, {r}")));
    }
    let total: usize = cells.iter().map(PointCloud::len).sum();
    let usable = cells.iter().filter(|x| x.len() >= MIN_CELL_SAMPLES).count();
    if usable == 0 {
        return Err(ProbError::TooFewSamples {
            got: total,
            need: MIN_CELL_SAMPLES,
        });
    }
    let d = cells.iter().find(|x| !x.is_empty()).map_or(1, PointCloud::dim);
    let mut stats = Vec::new();
    let mut skipped = 0.0;
    for (k, cell) in cells.iter().enumerate() {
        let mass = cell.len() as f64 / total as f64;
        if cell.len() < MIN_CELL_SAMPLES {
            skipped += mass;
            continue;
        }
        let cell = if d > 1 && cell.len() > ASSIGNMENT_MAX {
            let stride = cell.len() as f64 / ASSIGNMENT_MAX as f64;
            let pts: Vec<Vec<f64>> = (0..ASSIGNMENT_MAX)
                .map(|i| cell.point((i as f64 * stride) as usize).to_vec())
                .collect();
            PointCloud::from_points(&pts)
        } else {
            cell.clone()
        };
        let (mean, cov) = fit_gaussian(&cell);
        let reference = gaussian_cloud(mean.as_slice(), &cov, cell.len(), child_seed(seed, k as u64));
        let w1 = empirical_w1(&cell, &reference)?;
        let eig = SymmetricEigen::new(cov.clone()).eigenvalues;
        let r2 = r * r;
        let gain = 0.5
            * eig
                .iter()
                .map(|&l| {
                    let l = l.max(0.0);
                    ((1.0 + l / r2) / (1.0 + l / (4.0 * r2))).ln()
                })
                .sum::<f64>();
        stats.push(CellStat {
            size: cell.len(),
            mass,
            sigma_floor: eig.min() / r2,
            w1_over_r: w1.value / r,
            w1_method: w1.method,
            entropy_gain: gain,
        });
    }
    let fraction = |c: f64| stats.iter().filter(|s| s.qualifies(c)).map(|s| s.mass).sum::<f64>();
    let mass_fraction = fraction(c);
    let entropy_lower = stats
        .iter()
        .filter(|s| s.qualifies(c))
        .map(|s| s.mass * s.entropy_gain)
        .sum();
    let entropy_target = d as f64 * LN_2;
    let holds = mass_fraction >= MASS_THRESHOLD;
    Ok(GaussianDimensionVerdict {
        d,
        c,
        r,
        mass_fraction,
        skipped_mass: skipped,
        entropy_lower,
        entropy_target,
        holds,
        full_dimension: holds && entropy_lower >= entropy_target - ENTROPY_SLACK,
        frontier: FRONTIER_C.iter().map(|&k| (k, fraction(k))).collect(),
        cells: stats,
    })
}

/// Total variation between `X + A` and `Y + A` for `A ~ N(0, s^2)` in d = 1,
/// with `X, Y` the empirical measures of the clouds. The smoothed densities
/// are evaluated on `bins` midpoints.
pub fn smoothed_tv_1d(x: &PointCloud, y: &PointCloud, s: f64, bins: usize) -> Result<f64, ProbError> {
    check_pair(x, y)?;
    if x.dim() != 1 {
        return Err(ProbError::DimensionMismatch(x.dim(), 1));
    }
    let all = x.data().iter().chain(y.data());
    let lo = all.clone().copied().fold(f64::INFINITY, f64::min) - 8.0 * s;
    let hi = all.copied().fold(f64::NEG_INFINITY, f64::max) + 8.0 * s;
    let h = (hi - lo) / bins as f64;
    let norm = 1.0 / (s * (2.0 * std::f64::consts::PI).sqrt());
    let density = |c: &PointCloud, t: f64| {
        c.data()
            .iter()
            .map(|&p| (-0.5 * ((t - p) / s).powi(2)).exp())
            .sum::<f64>()
            * norm
            / c.len() as f64
    };
    let tv: f64 = (0..bins)
        .into_par_iter()
        .map(|i| {
            let t = lo + (i as f64 + 0.5) * h;
            (density(x, t) - density(y, t)).abs()
        })
        .collect::<Vec<_>>()
        .iter()
        .sum();
    Ok(0.5 * tv * h)
}

/// L1 modulus of the `N(0, s^2)` density: `int |f(x) - f(x - h)| dx <= c |h|`.
pub fn gaussian_density_lipschitz(s: f64) -> f64 {
    2.0 / (s * (2.0 * std::f64::consts::PI).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn line(xs: &[f64]) -> PointCloud {
        PointCloud::new(1, xs.to_vec())
    }

    fn random_cloud(d: usize, n: usize, seed: u64) -> PointCloud {
        let mut rng = stream_rng(seed, 0);
        PointCloud::new(d, (0..d * n).map(|_| rng.random::<f64>()).collect())
    }

    fn permutations(n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in permutations(n - 1) {
            for k in 0..=p.len() {
                let mut q = p.clone();
                q.insert(k, n - 1);
                out.push(q);
            }
        }
        out
    }

    #[test]
    fn identical_clouds_are_at_distance_zero() {
        let c = random_cloud(2, 50, 1);
        assert_eq!(empirical_w1(&c, &c).unwrap().value, 0.0);
        let c1 = random_cloud(1, 50, 1);
        assert_eq!(empirical_w1(&c1, &c1).unwrap().value, 0.0);
    }

    #[test]
    fn single_atoms() {
        let r = empirical_w1(&line(&[0.0]), &line(&[1.0])).unwrap();
        assert_eq!(r.value, 1.0);
        assert_eq!(r.method, W1Method::Exact1d);
    }

    #[test]
    fn uniform_grids_on_unit_and_double_interval() {
        let n = 1000;
        let a: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
        let b: Vec<f64> = a.iter().map(|x| 2.0 * x).collect();
        let r = empirical_w1(&line(&a), &line(&b)).unwrap();
        assert!((r.value - 0.5).abs() < 2e-3, "{}", r.value);
    }

    #[test]
    fn unequal_sizes_in_one_dimension() {
        // Quantile functions differ on [1/2, 2/3) by 1.
        let v = w1_sorted(vec![0.0, 1.0], vec![0.0, 0.0, 1.0]);
        assert_abs_diff_eq!(v, 1.0 / 6.0, epsilon = 1e-15);
    }

    #[test]
    fn exact_1d_and_assignment_agree() {
        for seed in 0..5 {
            let a = random_cloud(1, 40, seed);
            let b = random_cloud(1, 40, seed + 100);
            let exact = empirical_w1(&a, &b).unwrap().value;
            let assign = w1_assignment(&a, &b).unwrap();
            assert!((exact - assign).abs() < 1e-9, "{exact} vs {assign}");
        }
    }

    #[test]
    fn hungarian_matches_brute_force() {
        for seed in 0..20 {
            let n = 1 + (seed as usize % 6);
            let mut rng = stream_rng(seed, 3);
            let cost: Vec<f64> = (0..n * n).map(|_| rng.random::<f64>()).collect();
            let best = permutations(n)
                .iter()
                .map(|p| (0..n).map(|i| cost[i * n + p[i]]).sum::<f64>())
                .fold(f64::INFINITY, f64::min);
            let a = hungarian(&cost, n);
            let got: f64 = (0..n).map(|i| cost[i * n + a[i]]).sum();
            assert!((got - best).abs() < 1e-12, "n={n}: {got} vs {best}");
        }
    }

    #[test]
    fn sliced_is_below_assignment() {
        let a = random_cloud(3, 100, 5);
        let b = random_cloud(3, 100, 6).translated(&[0.3, 0.0, -0.1]);
        let exact = w1_assignment(&a, &b).unwrap();
        let sliced = sliced_w1(&a, &b, SLICES, 1).unwrap();
        assert!(sliced <= exact + 1e-12);
        let uneven = empirical_w1(&a, &b.slice(0, 90)).unwrap();
        assert_eq!(uneven.method, W1Method::Sliced);
        assert_eq!(uneven.slices, Some(SLICES));
    }

    #[test]
    fn empty_cloud_is_an_error() {
        let e = PointCloud::new(1, vec![]);
        assert_eq!(empirical_w1(&e, &line(&[1.0])), Err(ProbError::EmptyCloud));
    }

    #[test]
    fn gaussian_quantile_cloud_matches_moments() {
        let cov = DMatrix::from_element(1, 1, 4.0);
        let g = gaussian_cloud(&[1.0], &cov, 10_000, 0);
        let (m, s) = fit_gaussian(&g);
        assert_abs_diff_eq!(m[0], 1.0, epsilon = 1e-12);
        assert!((s[(0, 0)] - 4.0).abs() < 0.01);
    }

    #[test]
    fn single_step_two_point_ratio_is_at_most_two() {
        let r = berry_esseen_check(&SummandSpec::rademacher(0.25), 1, 10_000, 3).unwrap();
        assert!(r.ratio <= 2.0, "{}", r.ratio);
        // Both atoms sit at distance delta; the best Gaussian coupling moves
        // mass by E| |Z| - 1 | < 1 in units of delta.
        assert!(r.ratio > 0.3);
    }

    #[test]
    fn zero_summands_give_zero_distance() {
        let r = berry_esseen_check(&SummandSpec::zero(1), 50, 1000, 0).unwrap();
        assert_eq!(r.w1.value, 0.0);
        let r2 = berry_esseen_check(&SummandSpec::zero(2), 50, 100, 0).unwrap();
        assert_eq!(r2.w1.value, 0.0);
    }

    #[test]
    fn summand_moments_are_exact() {
        let s = SummandSpec::cube_signs(3, 2.0);
        assert_abs_diff_eq!(s.delta(), 2.0, epsilon = 1e-12);
        let cov = s.covariance();
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 4.0 / 3.0 } else { 0.0 };
                assert_abs_diff_eq!(cov[(i, j)], want, epsilon = 1e-12);
            }
        }
        let mut rng = stream_rng(1, 1);
        let sum = s.sample_sum(10, &mut rng);
        // Every coordinate is a sum of 10 signs of size 2/sqrt(3).
        for x in sum {
            let k = x / (2.0 / 3f64.sqrt());
            assert!((k - k.round()).abs() < 1e-9 && (k.round() as i64 - 10) % 2 == 0);
        }
    }

    #[test]
    fn rademacher_ratio_stays_bounded() {
        let t = berry_esseen_trend(&SummandSpec::rademacher(1.0), &[100, 1000], 100, 4, 11).unwrap();
        assert!(t.bound <= 2.0, "{:?}", t.ratios);
        assert!(t.non_increasing, "{t:?}");
    }

    #[test]
    fn ratio_is_rotation_invariant() {
        let spec = SummandSpec::cube_signs(2, 1.0);
        let rot = DMatrix::from_row_slice(2, 2, &[0.6, -0.8, 0.8, 0.6]);
        let base: Vec<f64> = (0..4)
            .map(|s| berry_esseen_check(&spec, 100, 800, s).unwrap().ratio)
            .collect();
        let turned: Vec<f64> = (0..4)
            .map(|s| berry_esseen_check(&spec.rotated(&rot), 100, 800, s).unwrap().ratio)
            .collect();
        let (mb, sb) = mean_and_stderr(&base);
        let (mt, st) = mean_and_stderr(&turned);
        assert!(
            (mb - mt).abs() <= 3.0 * (sb * sb + st * st).sqrt() + 0.05,
            "{base:?} {turned:?}"
        );
    }

    #[test]
    fn deterministic_generator_never_hits_the_tail() {
        let g = DeterministicPsd { d: 2, m: 0.5 };
        let c = cramer_check(&g, &[0.5; 20], 0.5, 20, 100, 0).unwrap();
        assert_eq!(c.empirical_prob, 0.0);
        assert_eq!(c.empirical_log_prob, f64::NEG_INFINITY);
        assert!(c.holds);
    }

    #[test]
    fn binomial_tail_is_exact() {
        let g = ScalarBernoulli { p: 0.5 };
        // Oracle: P[Bin(50, 1/2) <= 6] by direct pmf products.
        let mut p = 0.0;
        let mut coef = 1.0f64;
        for k in 0..=6u32 {
            if k > 0 {
                coef *= (50 - k + 1) as f64 / k as f64;
            }
            p += coef * 0.5f64.powi(50);
        }
        assert_abs_diff_eq!(g.exact_log_tail(50, 6.25).unwrap(), p.ln(), epsilon = 1e-10);
    }

    #[test]
    fn bernoulli_importance_sampling_matches_exact_tail() {
        let g = ScalarBernoulli { p: 0.5 };
        for n in [50usize, 200] {
            let c = cramer_check(&g, &vec![0.5; n], 1.0, n, 20_000, 7).unwrap();
            assert_eq!(c.method, TailMethod::ImportanceSampling);
            assert_eq!(c.matches_exact(3.0), Some(true), "{c:?}");
            assert!(c.holds && c.empirical_log_prob < c.bound_log_prob);
        }
    }

    #[test]
    fn two_dimensional_generators_respect_the_bound() {
        let g = RankOneRandom { d: 2, m: 0.5 };
        for n in [4usize, 8, 200] {
            let c = cramer_check(&g, &vec![0.5; n], 1.0, n, 5000, n as u64).unwrap();
            assert!(c.holds, "{c:?}");
        }
        let g = RotatingNoise { m: 0.5, s: 0.5 };
        let c = cramer_check(&g, &vec![0.5; 200], 1.0, 200, 2000, 1).unwrap();
        assert!(c.holds);
    }

    #[test]
    fn uncertified_generators_are_rejected() {
        let g = BlackBoxPsd {
            d: 1,
            b: 1.0,
            draw: |_: &mut ChaCha8Rng| DMatrix::from_element(1, 1, 0.5),
        };
        assert!(matches!(
            cramer_check(&g, &[0.5; 4], 1.0, 4, 10, 0),
            Err(ProbError::HypothesisUnverifiable(_))
        ));
        let g = ScalarBernoulli { p: 0.3 };
        assert!(matches!(
            cramer_check(&g, &[0.5; 4], 1.0, 4, 10, 0),
            Err(ProbError::HypothesisUnverifiable(_))
        ));
        assert!(matches!(
            cramer_check(&g, &[0.3; 4], 0.5, 4, 10, 0),
            Err(ProbError::HypothesisUnverifiable(_))
        ));
    }

    #[test]
    fn pure_gaussian_cloud_has_full_dimension() {
        let mut rng = stream_rng(5, 0);
        let data: Vec<f64> = (0..20_000).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let v = gaussian_dimension_check(&[PointCloud::new(1, data)], 10.0, 0.2, 1).unwrap();
        assert!(v.mass_fraction >= 0.9, "{v:?}");
        assert!(v.entropy_lower >= LN_2 - 0.1, "{v:?}");
        assert!(v.full_dimension);
        // Oracle: sigma = 1 gives 1/2 log((1 + 25)/(1 + 25/4)).
        assert!((v.entropy_lower - 0.5 * (26.0f64 / 7.25).ln()).abs() < 0.02);
    }

    #[test]
    fn point_mass_fails_the_covariance_floor() {
        let c = PointCloud::new(2, vec![0.3; 2 * 500]);
        let v = gaussian_dimension_check(&[c], 2.0, 0.1, 0).unwrap();
        assert_eq!(v.mass_fraction, 0.0);
        assert!(!v.holds && !v.full_dimension);
    }

    #[test]
    fn cantor_cells_are_not_gaussian() {
        let mut rng = stream_rng(9, 0);
        let data: Vec<f64> = (0..50_000)
            .map(|_| {
                (0..30)
                    .map(|k| {
                        if rng.random::<bool>() {
                            2.0 * 3f64.powi(-(k + 1))
                        } else {
                            0.0
                        }
                    })
                    .sum()
            })
            .collect();
        let cloud = PointCloud::new(1, data);
        let cells = grid_disintegration(&cloud, 1.0 / 9.0);
        assert_eq!(cells.len(), 4);
        // r = 3^-4 sits between the gap scales 3^-3 and 3^-5 of each cell.
        let v = gaussian_dimension_check(&cells, 2.0, 3f64.powi(-4), 0).unwrap();
        assert!(!v.holds && !v.full_dimension, "{v:?}");
    }

    #[test]
    fn too_few_samples() {
        let c = PointCloud::new(1, vec![0.0; 10]);
        assert!(matches!(
            gaussian_dimension_check(&[c], 1.0, 0.1, 0),
            Err(ProbError::TooFewSamples { .. })
        ));
    }

    #[test]
    fn smoothing_turns_w1_into_tv() {
        let s = 0.3;
        let c = gaussian_density_lipschitz(s);
        for seed in 0..4 {
            let x = random_cloud(1, 300, seed);
            let y = random_cloud(1, 300, seed + 50).scaled(1.5);
            let tv = smoothed_tv_1d(&x, &y, s, 4000).unwrap();
            let w1 = empirical_w1(&x, &y).unwrap().value;
            assert!(tv <= 0.5 * c * w1 + 1e-3, "tv {tv}, bound {}", 0.5 * c * w1);
        }
        // A pure shift by h is nearly tight: TV = 2 Phi(h / 2s) - 1.
        let x = line(&[0.0]);
        let y = line(&[0.01]);
        let tv = smoothed_tv_1d(&x, &y, s, 20_000).unwrap();
        assert!((tv - 0.5 * c * 0.01).abs() < 1e-4);
    }
}
