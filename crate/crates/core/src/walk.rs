//! Random walks `q_n = gamma_1 ... gamma_n`, stopping times and attractor samples.
//!
//! Every trial draws from its own ChaCha stream `(seed, trial)`, so results do
//! not depend on how trials are scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::cloud::PointCloud;
use crate::measure::{attractor_radius_bound, FiniteMeasure};
use crate::sim_group::SimElement;

pub const STOPPING_CAP: usize = 1_000_000;
/// Relative slack in `rho(q_n) <= kappa` so that exact powers stop on time.
pub const KAPPA_SLACK: f64 = 1e-12;
pub const TAIL_EPS: [f64; 5] = [0.05, 0.1, 0.2, 0.3, 0.5];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WalkError {
    #[error("stopping time exceeded {cap} steps (is the measure contracting on average?)")]
    StoppingCapExceeded { cap: usize },
    #[error("kappa must lie in (0, 1), got {0}")]
    BadKappa(f64),
}

/// RNG for trial `stream` under `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone)]
pub struct WalkPath {
    /// Atom indices of `gamma_1, ..., gamma_n`.
    pub indices: Vec<usize>,
    pub steps: Vec<SimElement>,
    /// `prefix[i] = q_i`, with `prefix[0]` the identity.
    pub prefix: Vec<SimElement>,
    pub seed: u64,
}

impl WalkPath {
    pub fn from_indices(mu: &FiniteMeasure, indices: Vec<usize>, seed: u64) -> Self {
        let steps: Vec<SimElement> = indices.iter().map(|&i| mu.atoms()[i].clone()).collect();
        let mut prefix = Vec::with_capacity(steps.len() + 1);
        prefix.push(SimElement::identity(mu.dim()));
        for g in &steps {
            let next = prefix.last().unwrap().compose(g);
            prefix.push(next);
        }
        Self {
            indices,
            steps,
            prefix,
            seed,
        }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn product(&self) -> &SimElement {
        self.prefix.last().expect("prefix holds the identity")
    }

    /// `gamma_{a+1} ... gamma_b` (one-based steps, half-open in zero-based terms).
    pub fn segment(&self, a: usize, b: usize) -> SimElement {
        let d = self.prefix[0].dim();
        self.steps[a..b]
            .iter()
            .fold(SimElement::identity(d), |acc, g| acc.compose(g))
    }
}

pub fn sample_walk(mu: &FiniteMeasure, n: usize, seed: u64) -> WalkPath {
    let mut rng = stream_rng(seed, 0);
    let indices = (0..n).map(|_| mu.sample_index(&mut rng)).collect();
    WalkPath::from_indices(mu, indices, seed)
}

/// Indices of a walk run until `rho(q_n) <= kappa`, or the cap.
fn stopped_indices(mu: &FiniteMeasure, log_kappa: f64, rng: &mut ChaCha8Rng) -> Result<Vec<usize>, WalkError> {
    let threshold = log_kappa + KAPPA_SLACK;
    let mut log_rho = 0.0;
    let mut out = Vec::new();
    while log_rho > threshold {
        if out.len() >= STOPPING_CAP {
            return Err(WalkError::StoppingCapExceeded { cap: STOPPING_CAP });
        }
        let i = mu.sample_index(rng);
        log_rho += mu.atoms()[i].log_rho();
        out.push(i);
    }
    Ok(out)
}

fn check_kappa(kappa: f64) -> Result<f64, WalkError> {
    if kappa > 0.0 && kappa < 1.0 {
        Ok(kappa.ln())
    } else {
        Err(WalkError::BadKappa(kappa))
    }
}

/// `(q_{tau_kappa}, tau_kappa)` with `tau_kappa = inf { n >= 0 : rho(q_n) <= kappa }`.
pub fn stopped_walk(mu: &FiniteMeasure, kappa: f64, seed: u64) -> Result<(SimElement, usize), WalkError> {
    let log_kappa = check_kappa(kappa)?;
    let mut rng = stream_rng(seed, 0);
    let idx = stopped_indices(mu, log_kappa, &mut rng)?;
    let path = WalkPath::from_indices(mu, idx, seed);
    let tau = path.len();
    Ok((path.product().clone(), tau))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "rule", content = "value", rename_all = "snake_case")]
pub enum StopRule {
    Fixed(usize),
    Kappa(f64),
}

impl std::fmt::Display for StopRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            StopRule::Fixed(n) => write!(f, "fixed={n}"),
            StopRule::Kappa(k) => write!(f, "kappa={k:e}"),
        }
    }
}

/// Independent samples `q x_0` with `x_0 = 0`, each `q` a walk stopped by `stop`.
pub fn sample_attractor(mu: &FiniteMeasure, count: usize, seed: u64, stop: StopRule) -> Result<PointCloud, WalkError> {
    let d = mu.dim();
    let log_kappa = match stop {
        StopRule::Kappa(k) => Some(check_kappa(k)?),
        StopRule::Fixed(_) => None,
    };
    let mut data = vec![0.0; count * d];
    data.par_chunks_mut(d)
        .enumerate()
        .try_for_each(|(i, out)| -> Result<(), WalkError> {
            let mut rng = stream_rng(seed, i as u64);
            let idx = match (stop, log_kappa) {
                (StopRule::Fixed(n), _) => (0..n).map(|_| mu.sample_index(&mut rng)).collect(),
                (_, Some(lk)) => stopped_indices(mu, lk, &mut rng)?,
                _ => unreachable!(),
            };
            // q x_0 = gamma_1(gamma_2(... gamma_tau(0))).
            let mut x = vec![0.0; d];
            let mut y = vec![0.0; d];
            for &j in idx.iter().rev() {
                mu.atoms()[j].apply_slice(&x, &mut y);
                std::mem::swap(&mut x, &mut y);
            }
            out.copy_from_slice(&x);
            Ok(())
        })?;
    Ok(PointCloud::new(d, data).with_meta(seed, stop.to_string()))
}

/// Largest `kappa` with `kappa (1 + p99 |q x_0|) <= resolution`, from a pilot run.
pub fn choose_kappa(mu: &FiniteMeasure, resolution: f64, pilot: usize, seed: u64) -> Result<f64, WalkError> {
    let pilot_kappa = resolution.clamp(1e-300, 0.5);
    let cloud = sample_attractor(
        mu,
        pilot.max(100),
        seed ^ 0x9e37_79b9_7f4a_7c15,
        StopRule::Kappa(pilot_kappa),
    )?;
    let mut norms = cloud.norms();
    norms.sort_by(f64::total_cmp);
    let p99 = norms[((norms.len() as f64 * 0.99).ceil() as usize).min(norms.len()) - 1];
    let scale = match attractor_radius_bound(mu) {
        r if r.is_finite() => p99.max(r),
        _ => p99,
    };
    Ok((resolution / (1.0 + scale)).min(0.5))
}

#[derive(Debug, Clone, Serialize)]
pub struct TauReport {
    pub kappa: f64,
    pub trials: usize,
    pub mean_tau: f64,
    pub var_tau: f64,
    /// `(eps, P[|tau - E tau| >= eps E tau])`.
    pub tail: Vec<(f64, f64)>,
    /// `mean_tau |chi_mu| / log(1/kappa)`.
    pub renewal_ratio: f64,
}

pub fn tau_statistics(mu: &FiniteMeasure, kappa: f64, trials: usize, seed: u64) -> Result<TauReport, WalkError> {
    let log_kappa = check_kappa(kappa)?;
    let taus: Vec<usize> = (0..trials)
        .into_par_iter()
        .map(|i| stopped_indices(mu, log_kappa, &mut stream_rng(seed, i as u64)).map(|v| v.len()))
        .collect::<Result<_, _>>()?;
    let n = taus.len().max(1) as f64;
    let mean = taus.iter().sum::<usize>() as f64 / n;
    let var = if taus.len() > 1 {
        taus.iter().map(|&t| (t as f64 - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    let tail = TAIL_EPS
        .iter()
        .map(|&eps| {
            let hits = taus.iter().filter(|&&t| (t as f64 - mean).abs() >= eps * mean).count();
            (eps, hits as f64 / n)
        })
        .collect();
    Ok(TauReport {
        kappa,
        trials,
        mean_tau: mean,
        var_tau: var,
        tail,
        renewal_ratio: mean * mu.lyapunov_exponent().abs() / -log_kappa,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim_group::metric_dist;
    use approx::assert_relative_eq;

    fn line(rho: f64, b: f64) -> SimElement {
        SimElement::line(rho, b).unwrap()
    }

    fn bernoulli(lambda: f64) -> FiniteMeasure {
        FiniteMeasure::uniform(vec![line(lambda, 1.0), line(lambda, -1.0)]).unwrap()
    }

    #[test]
    fn empty_and_deterministic_walks() {
        let mu = FiniteMeasure::uniform(vec![line(0.5, 1.0)]).unwrap();
        let p = sample_walk(&mu, 0, 1);
        assert!(p.is_empty());
        assert!(metric_dist(p.product(), &SimElement::identity(1)) == 0.0);
        let p = sample_walk(&mu, 5, 1);
        assert!(metric_dist(p.product(), &mu.atoms()[0].pow(5)) < 1e-14);
    }

    #[test]
    fn prefix_scales_multiply() {
        let mu = FiniteMeasure::uniform(vec![line(0.3, 1.0), line(1.7, -1.0), line(0.8, 0.0)]).unwrap();
        let p = sample_walk(&mu, 200, 9);
        let mut acc = 1.0;
        for (i, g) in p.steps.iter().enumerate() {
            acc *= g.rho();
            assert_relative_eq!(p.prefix[i + 1].rho(), acc, max_relative = 1e-12);
        }
    }

    #[test]
    fn step_frequencies_concentrate() {
        let p = sample_walk(&bernoulli(0.5), 100_000, 3);
        let ones = p.indices.iter().filter(|&&i| i == 0).count() as f64 / 1e5;
        assert!((0.495..=0.505).contains(&ones), "{ones}");
    }

    #[test]
    fn stopping_examples() {
        let mu = FiniteMeasure::uniform(vec![line(0.5, 0.0)]).unwrap();
        for k in 1..20 {
            assert_eq!(stopped_walk(&mu, 2f64.powi(-k), 1).unwrap().1, k as usize);
        }
        for s in 0..50 {
            let (q, tau) = stopped_walk(&bernoulli(1.0 / 3.0), 3f64.powi(-5), s).unwrap();
            assert_eq!(tau, 5);
            assert_relative_eq!(q.rho(), 3f64.powi(-5), max_relative = 1e-12);
        }
        let mu = FiniteMeasure::uniform(vec![line(0.5, 0.0), line(0.25, 1.0)]).unwrap();
        for s in 0..200 {
            let (q, tau) = stopped_walk(&mu, 0.125, s).unwrap();
            assert!(tau == 2 || tau == 3);
            assert!(q.rho() >= 0.125 / 4.0 * (1.0 - 1e-12) && q.rho() <= 0.125 * (1.0 + 1e-12));
        }
    }

    #[test]
    fn non_contracting_walk_hits_the_cap() {
        let mu = FiniteMeasure::uniform(vec![line(1.0, 0.0), line(1.0, 1.0)]).unwrap();
        assert_eq!(
            stopped_walk(&mu, 0.5, 0).unwrap_err(),
            WalkError::StoppingCapExceeded { cap: STOPPING_CAP }
        );
        assert!(matches!(stopped_walk(&mu, 1.5, 0), Err(WalkError::BadKappa(_))));
    }

    #[test]
    fn attractor_samples() {
        let mu = FiniteMeasure::uniform(vec![line(0.5, 0.0)]).unwrap();
        let c = sample_attractor(&mu, 100, 1, StopRule::Kappa(1e-6)).unwrap();
        assert!(c.data().iter().all(|&x| x == 0.0));

        let c = sample_attractor(&bernoulli(1.0 / 3.0), 10_000, 2, StopRule::Kappa(3f64.powi(-20))).unwrap();
        assert!(c.data().iter().all(|x| x.abs() <= 1.5));

        // nu is uniform on [-2, 2]: mean 0, variance 4/3.
        let n = 100_000;
        let c = sample_attractor(&bernoulli(0.5), n, 3, StopRule::Fixed(40)).unwrap();
        let mean = c.mean()[0];
        let sigma = (4.0f64 / 3.0 / n as f64).sqrt();
        assert!(mean.abs() <= 3.0 * sigma, "{mean}");
        assert!(c.data().iter().all(|x| x.abs() <= 2.0));
    }

    #[test]
    fn stopped_scale_stays_in_band() {
        let mu = FiniteMeasure::new(vec![line(0.2, 1.0), line(1.5, -1.0)], vec![0.5, 0.5]).unwrap();
        let min_rho = 0.2;
        for s in 0..300 {
            let (q, _) = stopped_walk(&mu, 1e-3, s).unwrap();
            assert!(q.rho() <= 1e-3 * (1.0 + 1e-12) && q.rho() >= 1e-3 * min_rho * (1.0 - 1e-12));
        }
    }

    #[test]
    fn samples_are_thread_count_invariant() {
        let mu = FiniteMeasure::new(
            vec![line(0.4, 1.0), line(1.3, -0.5), line(0.7, 0.2)],
            vec![0.4, 0.3, 0.3],
        )
        .unwrap();
        let run = |t| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build()
                .unwrap()
                .install(|| sample_attractor(&mu, 5000, 11, StopRule::Kappa(1e-8)).unwrap())
        };
        assert_eq!(run(1), run(6));
    }

    #[test]
    fn tau_statistics_examples() {
        let mu = FiniteMeasure::uniform(vec![line(0.5, 0.0)]).unwrap();
        let kappa = 1e-5;
        let r = tau_statistics(&mu, kappa, 100, 0).unwrap();
        assert_eq!(r.var_tau, 0.0);
        assert_eq!(r.mean_tau, (kappa.recip().ln() / 2f64.ln()).ceil());

        let kappa = 3f64.powi(-30);
        let r = tau_statistics(&bernoulli(1.0 / 3.0), kappa, 100, 0).unwrap();
        assert!((r.renewal_ratio - 1.0).abs() <= 1.0 / kappa.recip().ln());

        let mu = FiniteMeasure::uniform(vec![line(0.5, 0.0), line(0.25, 1.0)]).unwrap();
        let r = tau_statistics(&mu, 2f64.powi(-40), 10_000, 5).unwrap();
        assert!((r.renewal_ratio - 1.0).abs() <= 0.1, "{}", r.renewal_ratio);
        for w in r.tail.windows(2) {
            assert!(w[1].1 <= w[0].1);
            assert!((0.0..=1.0).contains(&w[0].1));
        }
    }

    #[test]
    fn kappa_choice_meets_resolution() {
        let mu = bernoulli(1.0 / 3.0);
        let k = choose_kappa(&mu, 1e-4, 1000, 1).unwrap();
        assert!(k * (1.0 + 1.5) <= 1e-4 * (1.0 + 1e-12));
        assert!(k > 1e-5);
    }
}
