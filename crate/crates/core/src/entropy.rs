//! Entropy at a scale, entropy between scales and dimension estimates for point clouds.
//!
//! The main estimator uses the cube kernel `xi_r` (uniform on `[-r/2, r/2]^d`).
//! For it, `H(lambda * xi_r) - H(xi_r)` is the Shannon entropy of the masses of
//! a randomly shifted grid of side `r`, up to an `O(1)` phase term that we
//! average out over several phases.

use std::f64::consts::PI;

use kdtree::distance::squared_euclidean;
use kdtree::KdTree;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;
use statrs::function::gamma::{gamma_lr, ln_gamma};
use thiserror::Error;

use crate::cloud::PointCloud;
use crate::measure::MeasureProfile;
use crate::walk::stream_rng;

pub const MIN_GRID_SAMPLES: usize = 1_000;
pub const MIN_KNN_SAMPLES: usize = 10_000;
pub const DEFAULT_PHASES: usize = 4;
pub const JACKKNIFE_BLOCKS: usize = 8;
pub const MIN_SCALES: usize = 4;
/// Allowed excess of the fitted slope over the ambient dimension.
pub const SLOPE_SLACK: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EntropyError {
    #[error("{got} samples, need at least {need}")]
    TooFewSamples { got: usize, need: usize },
    #[error("{0} scales, need at least {MIN_SCALES}")]
    ScaleRangeTooNarrow(usize),
    #[error("scales must satisfy 0 < r_min < r_max")]
    BadScales,
    #[error("chi_mu = {0} is not negative")]
    NotContractingOnAverage(f64),
    #[error("phase window {0} must be finite and at least 1")]
    BadWindow(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SmoothingKind {
    /// Uniform on `[-r/2, r/2]^d`.
    Cube,
    /// Density proportional to `exp(-|x|^2 / 2 r^2)` on `|x| <= a r`.
    TruncatedGaussian {
        a: f64,
    },
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SmoothingSpec {
    pub kind: SmoothingKind,
    pub r: f64,
}

impl SmoothingSpec {
    pub fn cube(r: f64) -> Self {
        Self {
            kind: SmoothingKind::Cube,
            r,
        }
    }

    pub fn gaussian(r: f64) -> Self {
        Self {
            kind: SmoothingKind::Gaussian,
            r,
        }
    }

    pub fn truncated_gaussian(a: f64, r: f64) -> Self {
        assert!(a >= 1.0, "truncation multiple must be at least 1");
        Self {
            kind: SmoothingKind::TruncatedGaussian { a },
            r,
        }
    }

    pub fn at_scale(&self, r: f64) -> Self {
        Self { kind: self.kind, r }
    }

    /// Differential entropy of the kernel in `R^d`.
    pub fn kernel_entropy(&self, d: usize) -> f64 {
        let df = d as f64;
        match self.kind {
            SmoothingKind::Cube => df * self.r.ln(),
            SmoothingKind::Gaussian => 0.5 * df * (2.0 * PI * std::f64::consts::E * self.r * self.r).ln(),
            SmoothingKind::TruncatedGaussian { a } => truncated_gaussian_unit_entropy(d, a) + df * self.r.ln(),
        }
    }

    /// One draw of the kernel.
    pub fn sample<R: Rng + ?Sized>(&self, d: usize, rng: &mut R, out: &mut [f64]) {
        match self.kind {
            SmoothingKind::Cube => out.iter_mut().for_each(|x| *x = (rng.random::<f64>() - 0.5) * self.r),
            SmoothingKind::Gaussian => out.iter_mut().for_each(|x| {
                *x = self.r * {
                    let z: f64 = StandardNormal.sample(rng);
                    z
                }
            }),
            SmoothingKind::TruncatedGaussian { a } => loop {
                let mut norm2 = 0.0;
                for x in out.iter_mut().take(d) {
                    let z: f64 = StandardNormal.sample(rng);
                    *x = z;
                    norm2 += z * z;
                }
                if norm2 <= a * a {
                    out.iter_mut().for_each(|x| *x *= self.r);
                    break;
                }
            },
        }
    }
}

/// Entropy of the standard gaussian in `R^d` conditioned on `|x| <= a`.
///
/// With `P` the regularized lower incomplete gamma function, the normalizer is
/// `(2 pi)^{d/2} P(d/2, a^2/2)` and `E|x|^2 = d P(d/2 + 1, a^2/2) / P(d/2, a^2/2)`.
pub fn truncated_gaussian_unit_entropy(d: usize, a: f64) -> f64 {
    let h = d as f64 / 2.0;
    let x = a * a / 2.0;
    let p0 = gamma_lr(h, x);
    let p1 = gamma_lr(h + 1.0, x);
    h * (2.0 * PI).ln() + p0.ln() + h * p1 / p0
}

fn check_samples(got: usize, need: usize) -> Result<(), EntropyError> {
    if got < need {
        Err(EntropyError::TooFewSamples { got, need })
    } else {
        Ok(())
    }
}

/// Grid phases in `[0, 1)^d`, shared across scales.
pub fn grid_phases(d: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = stream_rng(seed, 0x5ca1e);
    (0..count)
        .map(|_| (0..d).map(|_| rng.random::<f64>()).collect())
        .collect()
}

/// Entropy of one grid and its leave-one-block-out versions.
struct GridPass {
    full: f64,
    loo: [f64; JACKKNIFE_BLOCKS],
    occupied: usize,
}

fn block_entropies(n: usize, runs: impl Iterator<Item = [usize; JACKKNIFE_BLOCKS]>) -> GridPass {
    let mut block_sizes = [0usize; JACKKNIFE_BLOCKS];
    for i in 0..n {
        block_sizes[i % JACKKNIFE_BLOCKS] += 1;
    }
    let mut sum_full = 0.0;
    let mut sum_loo = [0.0; JACKKNIFE_BLOCKS];
    let mut occupied = 0;
    let xlogx = |c: usize| if c == 0 { 0.0 } else { c as f64 * (c as f64).ln() };
    for counts in runs {
        let c: usize = counts.iter().sum();
        occupied += 1;
        sum_full += xlogx(c);
        for j in 0..JACKKNIFE_BLOCKS {
            sum_loo[j] += xlogx(c - counts[j]);
        }
    }
    // H = log N - (1/N) sum c log c.
    let ent = |total: usize, s: f64| (total as f64).ln() - s / total as f64;
    let mut loo = [0.0; JACKKNIFE_BLOCKS];
    for j in 0..JACKKNIFE_BLOCKS {
        loo[j] = ent(n - block_sizes[j], sum_loo[j]);
    }
    GridPass {
        full: ent(n, sum_full),
        loo,
        occupied,
    }
}

fn grid_pass(cloud: &PointCloud, r: f64, phase: &[f64]) -> GridPass {
    let d = cloud.dim();
    let n = cloud.len();
    let cell = |x: f64, k: usize| ((x / r) + phase[k]).floor() as i64;
    if d == 1 {
        let mut keys: Vec<(i64, u8)> = cloud
            .data()
            .par_iter()
            .enumerate()
            .map(|(i, &x)| (cell(x, 0), (i % JACKKNIFE_BLOCKS) as u8))
            .collect();
        keys.par_sort_unstable();
        let runs = keys.chunk_by(|a, b| a.0 == b.0).map(|run| {
            let mut c = [0usize; JACKKNIFE_BLOCKS];
            for &(_, b) in run {
                c[b as usize] += 1;
            }
            c
        });
        return block_entropies(n, runs);
    }
    let keys: Vec<i64> = cloud
        .data()
        .par_chunks(d)
        .flat_map_iter(|p| (0..d).map(move |k| cell(p[k], k)))
        .collect();
    let key = |i: usize| &keys[i * d..(i + 1) * d];
    let mut order: Vec<u32> = (0..n as u32).collect();
    order.par_sort_unstable_by(|&a, &b| key(a as usize).cmp(key(b as usize)).then(a.cmp(&b)));
    let runs = order.chunk_by(|&a, &b| key(a as usize) == key(b as usize)).map(|run| {
        let mut c = [0usize; JACKKNIFE_BLOCKS];
        for &i in run {
            c[i as usize % JACKKNIFE_BLOCKS] += 1;
        }
        c
    });
    block_entropies(n, runs)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScaleEntropy {
    pub r: f64,
    pub entropy: f64,
    /// Jackknife standard error over sample blocks.
    pub stderr: f64,
    /// Mean number of occupied cells over phases.
    pub occupied: f64,
}

/// Cube-kernel entropy at `r`, averaged over the given phases.
pub fn grid_entropy_with_phases(cloud: &PointCloud, r: f64, phases: &[Vec<f64>]) -> Result<ScaleEntropy, EntropyError> {
    check_samples(cloud.len(), MIN_GRID_SAMPLES)?;
    let passes: Vec<GridPass> = phases.iter().map(|p| grid_pass(cloud, r, p)).collect();
    let np = passes.len() as f64;
    let entropy = passes.iter().map(|p| p.full).sum::<f64>() / np;
    let loo: Vec<f64> = (0..JACKKNIFE_BLOCKS)
        .map(|j| passes.iter().map(|p| p.loo[j]).sum::<f64>() / np)
        .collect();
    let g = JACKKNIFE_BLOCKS as f64;
    let mean_loo = loo.iter().sum::<f64>() / g;
    let stderr = ((g - 1.0) / g * loo.iter().map(|v| (v - mean_loo).powi(2)).sum::<f64>()).sqrt();
    let occupied = passes.iter().map(|p| p.occupied as f64).sum::<f64>() / np;
    Ok(ScaleEntropy {
        r,
        entropy,
        stderr,
        occupied,
    })
}

/// `H^xi(lambda; r)` for the empirical measure of `cloud`.
pub fn grid_entropy_at_scale(cloud: &PointCloud, r: f64, seed: u64) -> Result<f64, EntropyError> {
    let phases = grid_phases(cloud.dim(), DEFAULT_PHASES, seed);
    Ok(grid_entropy_with_phases(cloud, r, &phases)?.entropy)
}

fn unit_ball_ln_volume(d: usize) -> f64 {
    let h = d as f64 / 2.0;
    h * PI.ln() - ln_gamma(h + 1.0)
}

fn digamma_int(n: usize) -> f64 {
    // psi(n) = -gamma + sum_{k < n} 1/k
    const EULER: f64 = 0.577_215_664_901_532_9;
    -EULER + (1..n).map(|k| 1.0 / k as f64).sum::<f64>()
}

/// Distance from each point to its nearest other point.
pub fn nearest_neighbor_distances(cloud: &PointCloud) -> Vec<f64> {
    let d = cloud.dim();
    let n = cloud.len();
    if d == 1 {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| cloud.data()[a].total_cmp(&cloud.data()[b]));
        let xs: Vec<f64> = order.iter().map(|&i| cloud.data()[i]).collect();
        let mut out = vec![f64::INFINITY; n];
        for (k, &i) in order.iter().enumerate() {
            let left = if k > 0 { xs[k] - xs[k - 1] } else { f64::INFINITY };
            let right = if k + 1 < n { xs[k + 1] - xs[k] } else { f64::INFINITY };
            out[i] = left.min(right);
        }
        return out;
    }
    let tree = build_tree(cloud);
    (0..n)
        .into_par_iter()
        .map(|i| {
            let hits = tree
                .nearest(cloud.point(i), 2, &squared_euclidean)
                .expect("finite points");
            hits.iter()
                .find(|(_, &j)| j != i)
                .map_or(f64::INFINITY, |(d2, _)| d2.sqrt())
        })
        .collect()
}

fn build_tree(cloud: &PointCloud) -> KdTree<f64, usize, &[f64]> {
    let mut tree = KdTree::with_capacity(cloud.dim(), cloud.len());
    for (i, p) in cloud.points().enumerate() {
        tree.add(p, i).expect("finite points");
    }
    tree
}

/// Kozachenko-Leonenko (k = 1) differential entropy.
pub fn kozachenko_leonenko(cloud: &PointCloud) -> f64 {
    let n = cloud.len();
    let d = cloud.dim() as f64;
    let dists = nearest_neighbor_distances(cloud);
    let mean_log = dists.iter().map(|e| e.max(f64::MIN_POSITIVE).ln()).sum::<f64>() / n as f64;
    digamma_int(n) - digamma_int(1) + unit_ball_ln_volume(cloud.dim()) + d * mean_log
}

/// `H(lambda * A_r) - H(A_r)` via nearest neighbours on kernel-jittered samples.
pub fn knn_smoothed_entropy(cloud: &PointCloud, spec: &SmoothingSpec, seed: u64) -> Result<f64, EntropyError> {
    check_samples(cloud.len(), MIN_KNN_SAMPLES)?;
    let d = cloud.dim();
    let mut data = cloud.data().to_vec();
    data.par_chunks_mut(d).enumerate().for_each(|(i, p)| {
        let mut rng = stream_rng(seed, i as u64);
        let mut z = vec![0.0; d];
        spec.sample(d, &mut rng, &mut z);
        for k in 0..d {
            p[k] += z[k];
        }
    });
    let jittered = PointCloud::new(d, data);
    Ok(kozachenko_leonenko(&jittered) - spec.kernel_entropy(d))
}

/// Which at-scale estimator to use.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Estimator {
    Grid,
    Knn(SmoothingKind),
}

pub fn entropy_at(cloud: &PointCloud, est: Estimator, r: f64, seed: u64) -> Result<f64, EntropyError> {
    match est {
        Estimator::Grid => grid_entropy_at_scale(cloud, r, seed),
        Estimator::Knn(kind) => knn_smoothed_entropy(cloud, &SmoothingSpec { kind, r }, seed),
    }
}

/// `H(lambda; r1 | r2) = H(lambda; r1) - H(lambda; r2)` on a shared cloud and seed.
pub fn entropy_between_scales(
    cloud: &PointCloud,
    est: Estimator,
    r1: f64,
    r2: f64,
    seed: u64,
) -> Result<f64, EntropyError> {
    if r1 == r2 {
        return Ok(0.0);
    }
    Ok(entropy_at(cloud, est, r1, seed)? - entropy_at(cloud, est, r2, seed)?)
}

/// `n` scales `r_max 2^{-k}`.
pub fn dyadic_scales(r_max: f64, n: usize) -> Vec<f64> {
    (0..n).map(|k| r_max * 0.5f64.powi(k as i32)).collect()
}

/// `n` geometrically spaced scales from `r_max` down to `r_min`.
pub fn geometric_scales(r_min: f64, r_max: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![r_max];
    }
    let ratio = (r_min / r_max).powf(1.0 / (n - 1) as f64);
    (0..n).map(|k| r_max * ratio.powi(k as i32)).collect()
}

#[derive(Debug, Clone, Default)]
pub struct DimensionOptions {
    pub seed: u64,
    /// Depth `kappa` used when sampling the cloud, for the truncation warning.
    pub sampling_kappa: Option<f64>,
    /// Size of the attractor (e.g. a radius bound) for the truncation warning.
    pub attractor_scale: Option<f64>,
    /// Predicted dimension to compare the slope against.
    pub predicted: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DimensionReport {
    pub scales: Vec<f64>,
    pub entropy_at_scale: Vec<f64>,
    pub stderr: Vec<f64>,
    pub slope: f64,
    pub slope_stderr: f64,
    /// `slope -+ 2 stderr`.
    pub band: (f64, f64),
    pub intercept: f64,
    pub predicted: Option<f64>,
    pub verdict: String,
    pub warnings: Vec<String>,
}

/// Ordinary least squares `y = a + b x`; returns `(b, a, stderr(b))`.
pub fn ols(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let se = if x.len() > 2 {
        (rss / (n - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    (slope, intercept, se)
}

/// Least-squares slope of `H^xi(lambda; r)` against `log(1/r)` over geometric scales.
pub fn estimate_dimension(
    cloud: &PointCloud,
    r_min: f64,
    r_max: f64,
    n_scales: usize,
    opts: &DimensionOptions,
) -> Result<DimensionReport, EntropyError> {
    check_samples(cloud.len(), MIN_GRID_SAMPLES)?;
    if !(r_min > 0.0 && r_min < r_max) {
        return Err(EntropyError::BadScales);
    }
    if n_scales < MIN_SCALES {
        return Err(EntropyError::ScaleRangeTooNarrow(n_scales));
    }
    let scales = geometric_scales(r_min, r_max, n_scales);
    let phases = grid_phases(cloud.dim(), DEFAULT_PHASES, opts.seed);
    let per_scale: Vec<ScaleEntropy> = scales
        .iter()
        .map(|&r| grid_entropy_with_phases(cloud, r, &phases))
        .collect::<Result<_, _>>()?;
    let x: Vec<f64> = scales.iter().map(|r| -r.ln()).collect();
    let y: Vec<f64> = per_scale.iter().map(|s| s.entropy).collect();
    let (slope, intercept, se_fit) = ols(&x, &y);
    let mx = x.iter().sum::<f64>() / x.len() as f64;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let se_mc = x
        .iter()
        .zip(&per_scale)
        .map(|(xi, s)| ((xi - mx) / sxx * s.stderr).powi(2))
        .sum::<f64>()
        .sqrt();
    let slope_stderr = se_fit.max(se_mc);

    let mut warnings = Vec::new();
    let d = cloud.dim() as f64;
    if let (Some(k), Some(a)) = (opts.sampling_kappa, opts.attractor_scale) {
        if k * (1.0 + a) > 0.1 * r_min {
            warnings.push(format!(
                "sampling depth kappa = {k:.3e} is not small against r_min = {r_min:.3e}; truncation bias possible"
            ));
        }
    }
    if let Some(last) = per_scale.last() {
        if (cloud.len() as f64) < 10.0 * last.occupied {
            warnings.push(format!(
                "only {:.1} samples per occupied cell at r_min; finest scales are undersampled",
                cloud.len() as f64 / last.occupied
            ));
        }
    }
    if slope < -SLOPE_SLACK || slope > d + SLOPE_SLACK {
        warnings.push(format!("slope {slope:.4} outside [0, d]"));
    }
    for w in y.windows(2) {
        if w[1] + 0.02 < w[0] {
            warnings.push("entropy decreases towards finer scales beyond phase noise".into());
            break;
        }
    }
    let verdict = match opts.predicted {
        None => "no prediction".to_string(),
        Some(p) if (slope - p).abs() <= 2.0 * slope_stderr + 0.05 => {
            format!("consistent: slope {slope:.4} vs predicted {p:.4}")
        }
        Some(p) => format!("inconsistent: slope {slope:.4} vs predicted {p:.4}"),
    };
    Ok(DimensionReport {
        stderr: per_scale.iter().map(|s| s.stderr).collect(),
        entropy_at_scale: y,
        scales,
        slope,
        slope_stderr,
        band: (slope - 2.0 * slope_stderr, slope + 2.0 * slope_stderr),
        intercept,
        predicted: opts.predicted,
        verdict,
        warnings,
    })
}

/// `r,H,stderr` rows.
pub fn scales_csv(report: &DimensionReport) -> String {
    let mut out = String::from("r,H,stderr\n");
    for ((r, h), s) in report.scales.iter().zip(&report.entropy_at_scale).zip(&report.stderr) {
        out.push_str(&format!("{r:.17e},{h:.17e},{s:.17e}\n"));
    }
    out
}

/// Whitespace-separated `log(1/r) H stderr fit` columns for gnuplot.
pub fn gnuplot_dat(report: &DimensionReport) -> String {
    let mut out = String::from("# log(1/r) H stderr fit\n");
    for ((r, h), s) in report.scales.iter().zip(&report.entropy_at_scale).zip(&report.stderr) {
        let x = -r.ln();
        out.push_str(&format!(
            "{x:.10e} {h:.10e} {s:.10e} {:.10e}\n",
            report.intercept + report.slope * x
        ));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Prediction {
    pub value: f64,
    /// The entropy rate used is an upper bound on `h_mu`, so `value` is an upper bound too.
    pub upper_bound: bool,
}

/// `min { d, h / |chi| }` with `h` the last computed entropy rate.
pub fn predicted_dimension(profile: &MeasureProfile, d: usize) -> Result<Prediction, EntropyError> {
    if profile.lyapunov >= 0.0 {
        return Err(EntropyError::NotContractingOnAverage(profile.lyapunov));
    }
    let h = profile.entropy_estimate().unwrap_or(0.0);
    Ok(Prediction {
        value: (d as f64).min(h / profile.lyapunov.abs()),
        upper_bound: true,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct LocalDimensionReport {
    pub radii: Vec<f64>,
    /// `ratios[k][i] = log lambda(B_{r_k}(x_i)) / log r_k`.
    pub ratios: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    /// Standard deviation of the ratios at each radius.
    pub spread: Vec<f64>,
}

/// Ball-mass ratios at the centres `centers` against the empirical measure of `cloud`.
pub fn local_dimension(
    cloud: &PointCloud,
    centers: &PointCloud,
    radii: &[f64],
) -> Result<LocalDimensionReport, EntropyError> {
    ball_ratios(cloud, centers, radii, &vec![1.0; centers.len()], |lm, rho, _| {
        lm / rho.ln()
    })
}

/// Like [`local_dimension`], but centre `i` measures the ball of radius
/// `r * window^(-u_i)`, with `u_i` uniform on `[0, 1)` and fixed across radii.
///
/// Self-similar measures have log-periodic ball masses, so at fixed radii the spread
/// oscillates. One random phase per centre makes the law of the centred log-mass
/// independent of `r`. With `anchor = Some(a)`, each log-mass is moved to the window's
/// geometric midpoint `r_mid` as `log m - a log(rho / r_mid)`, removing the coupling
/// between phase and denominator; the ratio is then `a + (log m - a log rho) / log r_mid`.
pub fn local_dimension_phased(
    cloud: &PointCloud,
    centers: &PointCloud,
    radii: &[f64],
    window: f64,
    anchor: Option<f64>,
    seed: u64,
) -> Result<LocalDimensionReport, EntropyError> {
    if !(window.is_finite() && window >= 1.0) {
        return Err(EntropyError::BadWindow(window));
    }
    let mut rng = stream_rng(seed, 0x10ca1);
    let factors: Vec<f64> = (0..centers.len()).map(|_| window.powf(-rng.random::<f64>())).collect();
    let mid = window.sqrt().recip();
    ball_ratios(cloud, centers, radii, &factors, |lm, rho, r| match anchor {
        Some(a) => a + (lm - a * rho.ln()) / (r * mid).ln(),
        None => lm / rho.ln(),
    })
}

fn ball_ratios(
    cloud: &PointCloud,
    centers: &PointCloud,
    radii: &[f64],
    factors: &[f64],
    ratio: impl Fn(f64, f64, f64) -> f64 + Sync,
) -> Result<LocalDimensionReport, EntropyError> {
    check_samples(cloud.len(), MIN_GRID_SAMPLES)?;
    let n = cloud.len() as f64;
    let counts: Vec<Vec<usize>> = if cloud.dim() == 1 {
        let mut xs = cloud.data().to_vec();
        xs.par_sort_unstable_by(f64::total_cmp);
        radii
            .iter()
            .map(|&r| {
                centers
                    .data()
                    .par_iter()
                    .zip(factors)
                    .map(|(&c, &f)| {
                        let r = r * f;
                        xs.partition_point(|&x| x <= c + r) - xs.partition_point(|&x| x < c - r)
                    })
                    .collect()
            })
            .collect()
    } else {
        let tree = build_tree(cloud);
        radii
            .iter()
            .map(|&r| {
                (0..centers.len())
                    .into_par_iter()
                    .map(|i| {
                        let r = r * factors[i];
                        tree.within_count(centers.point(i), r * r, &squared_euclidean)
                            .expect("finite")
                    })
                    .collect()
            })
            .collect()
    };
    let mut ratios = Vec::with_capacity(radii.len());
    let mut mean = Vec::with_capacity(radii.len());
    let mut spread = Vec::with_capacity(radii.len());
    for (k, &r) in radii.iter().enumerate() {
        // Empty balls get mass 1/(2N), half an atom, so the ratio stays finite.
        let row: Vec<f64> = counts[k]
            .iter()
            .zip(factors)
            .map(|(&c, &f)| ratio((if c == 0 { 0.5 } else { c as f64 } / n).ln(), r * f, r))
            .collect();
        let m = row.iter().sum::<f64>() / row.len() as f64;
        let var = row.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (row.len().max(2) - 1) as f64;
        ratios.push(row);
        mean.push(m);
        spread.push(var.sqrt());
    }
    Ok(LocalDimensionReport {
        radii: radii.to_vec(),
        ratios,
        mean,
        spread,
    })
}
