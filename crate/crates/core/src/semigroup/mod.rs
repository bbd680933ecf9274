//! Enumeration of `supp(mu^{*n})` generation by generation.
//!
//! Generation `n` is built as `{ q g : q in generation n-1, g in supp mu }`,
//! then merged under the group metric. Elements are stored flat as
//! `[rho, log rho, U (row-major), b]` so that large generations stay compact.
//!
//! Minimal distances use a sweep over the key `log rho + b_0`. Since
//! `d(g, h) >= |log rho(g) - log rho(h)| + |b_0(g) - b_0(h)|`, the key gap is
//! a lower bound for the distance and the sweep is exact.

pub mod exact;

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::measure::FiniteMeasure;
use crate::sim_group::{operator_norm, SimElement};

pub const DEFAULT_DEDUP_TOL: f64 = 1e-9;
/// Pre-dedup products allowed in a single generation.
pub const DEFAULT_BUDGET: u64 = 20_000_000;
/// Pairs closer than this multiple of the dedup tolerance (but not merged) are ambiguous.
pub const AMBIGUITY_FACTOR: f64 = 10.0;
const PARENT_BLOCK: usize = 1 << 15;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SemigroupError {
    #[error("generation {next} needs {products} products, over the budget of {budget}; largest completed generation is {completed}")]
    BudgetExceeded {
        completed: usize,
        next: usize,
        products: u128,
        budget: u64,
    },
    #[error("generation {n}: two elements at distance {distance:.3e}, inside ({tol:.1e}, {factor} x tol]; the dedup tolerance may split a true collision")]
    AmbiguousDedup {
        n: usize,
        distance: f64,
        tol: f64,
        factor: f64,
    },
    #[error("exact mode needs d = 1 atoms with exact coefficients")]
    NotExact,
    #[error("invalid exact number {0:?}")]
    Parse(String),
    #[error("contraction ratio must be positive")]
    NonPositiveScale,
}

#[derive(Debug, Clone, Copy)]
pub struct EnumerationConfig {
    pub dedup_tol: f64,
    pub budget: u64,
}

impl Default for EnumerationConfig {
    fn default() -> Self {
        Self {
            dedup_tol: DEFAULT_DEDUP_TOL,
            budget: DEFAULT_BUDGET,
        }
    }
}

pub(crate) fn stride(d: usize) -> usize {
    2 + d * d + d
}

pub(crate) fn flatten(g: &SimElement, out: &mut Vec<f64>) {
    out.push(g.rho());
    out.push(g.log_rho());
    let d = g.dim();
    for i in 0..d {
        for j in 0..d {
            out.push(g.rot()[(i, j)]);
        }
    }
    out.extend(g.trans().iter());
}

fn unflatten(d: usize, s: &[f64]) -> SimElement {
    let rot = DMatrix::from_row_slice(d, d, &s[2..2 + d * d]);
    let trans = DVector::from_column_slice(&s[2 + d * d..]);
    SimElement::from_parts_unchecked(s[0], rot, trans)
}

/// `out = g h` on flat records.
fn compose_flat(d: usize, g: &[f64], h: &[f64], out: &mut [f64]) {
    out[0] = g[0] * h[0];
    out[1] = g[1] + h[1];
    let (gu, gb) = (&g[2..2 + d * d], &g[2 + d * d..]);
    let (hu, hb) = (&h[2..2 + d * d], &h[2 + d * d..]);
    for i in 0..d {
        for j in 0..d {
            let mut acc = 0.0;
            for k in 0..d {
                acc += gu[i * d + k] * hu[k * d + j];
            }
            out[2 + i * d + j] = acc;
        }
        let mut acc = 0.0;
        for k in 0..d {
            acc += gu[i * d + k] * hb[k];
        }
        out[2 + d * d + i] = g[0] * acc + gb[i];
    }
}

pub(crate) fn dist_flat(d: usize, g: &[f64], h: &[f64]) -> f64 {
    let scale = (g[1] - h[1]).abs();
    let (gu, hu) = (&g[2..2 + d * d], &h[2..2 + d * d]);
    let rot = match d {
        1 => (gu[0] - hu[0]).abs(),
        _ => {
            if gu == hu {
                0.0
            } else {
                operator_norm(&DMatrix::from_fn(d, d, |i, j| gu[i * d + j] - hu[i * d + j]))
            }
        }
    };
    let trans = g[2 + d * d..]
        .iter()
        .zip(&h[2 + d * d..])
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    scale + rot + trans
}

pub(crate) fn sweep_key(d: usize, s: &[f64]) -> f64 {
    s[1] + s[2 + d * d]
}

/// Deduplicated support of `mu^{*n}` with aggregated masses.
#[derive(Debug, Clone)]
pub struct WeightedElementSet {
    d: usize,
    n: usize,
    data: Vec<f64>,
    probs: Vec<f64>,
}

impl WeightedElementSet {
    pub fn identity(d: usize) -> Self {
        let mut data = Vec::with_capacity(stride(d));
        flatten(&SimElement::identity(d), &mut data);
        Self {
            d,
            n: 0,
            data,
            probs: vec![1.0],
        }
    }

    pub fn from_elements(n: usize, elements: &[SimElement], probs: Vec<f64>) -> Self {
        let d = elements[0].dim();
        let mut data = Vec::with_capacity(elements.len() * stride(d));
        for g in elements {
            flatten(g, &mut data);
        }
        Self { d, n, data, probs }
    }

    pub fn generation(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn element(&self, i: usize) -> SimElement {
        unflatten(self.d, self.record(i))
    }

    pub fn elements(&self) -> Vec<SimElement> {
        (0..self.len()).map(|i| self.element(i)).collect()
    }

    pub(crate) fn record(&self, i: usize) -> &[f64] {
        let s = stride(self.d);
        &self.data[i * s..(i + 1) * s]
    }

    pub fn total_mass(&self) -> f64 {
        self.probs.iter().sum()
    }
}

/// `-sum p log p` in nats.
pub fn shannon_entropy(set: &WeightedElementSet) -> f64 {
    entropy_of(set.probs())
}

pub(crate) fn entropy_of(probs: &[f64]) -> f64 {
    probs.iter().filter(|&&p| p > 0.0).map(|&p| -p * p.ln()).sum()
}

type CellKey = [i64; 4];

fn cell_of(d: usize, rec: &[f64], side: f64) -> CellKey {
    let mut key = [0i64; 4];
    key[0] = (rec[1] / side).floor() as i64;
    for k in 0..d.min(3) {
        key[k + 1] = (rec[2 + d * d + k] / side).floor() as i64;
    }
    key
}

fn neighbor_offsets(d: usize) -> Vec<CellKey> {
    let dims = 1 + d.min(3);
    let total = 3usize.pow(dims as u32);
    (0..total)
        .map(|mut t| {
            let mut off = [0i64; 4];
            for o in off.iter_mut().take(dims) {
                *o = (t % 3) as i64 - 1;
                t /= 3;
            }
            off
        })
        .collect()
}

/// One step of the generation recursion: `prev * mu`, merged under `tol`.
pub fn next_generation(
    prev: &WeightedElementSet,
    mu: &FiniteMeasure,
    cfg: &EnumerationConfig,
) -> Result<WeightedElementSet, SemigroupError> {
    let d = prev.d;
    let s = stride(d);
    let k = mu.len();
    let products = prev.len() as u128 * k as u128;
    if products > cfg.budget as u128 {
        return Err(SemigroupError::BudgetExceeded {
            completed: prev.n,
            next: prev.n + 1,
            products,
            budget: cfg.budget,
        });
    }
    let mut atoms = Vec::with_capacity(k * s);
    for g in mu.atoms() {
        flatten(g, &mut atoms);
    }
    let side = AMBIGUITY_FACTOR * cfg.dedup_tol;
    let offsets = neighbor_offsets(d);
    let mut index: HashMap<CellKey, Vec<u32>> = HashMap::new();
    let mut data: Vec<f64> = Vec::new();
    let mut probs: Vec<f64> = Vec::new();
    let mut buf = vec![0.0; PARENT_BLOCK.min(prev.len()) * k * s];
    for start in (0..prev.len()).step_by(PARENT_BLOCK) {
        let end = (start + PARENT_BLOCK).min(prev.len());
        let block = &mut buf[..(end - start) * k * s];
        block.par_chunks_mut(s).enumerate().for_each(|(t, out)| {
            let (i, j) = (start + t / k, t % k);
            compose_flat(d, prev.record(i), &atoms[j * s..(j + 1) * s], out);
        });
        for (t, rec) in block.chunks(s).enumerate() {
            let (i, j) = (start + t / k, t % k);
            let p = prev.probs[i] * mu.weights()[j];
            let cell = cell_of(d, rec, side);
            let mut merged: Option<u32> = None;
            for off in &offsets {
                let key = [cell[0] + off[0], cell[1] + off[1], cell[2] + off[2], cell[3] + off[3]];
                let Some(bucket) = index.get(&key) else { continue };
                for &idx in bucket {
                    let other = &data[idx as usize * s..(idx as usize + 1) * s];
                    let dist = dist_flat(d, rec, other);
                    if dist <= cfg.dedup_tol {
                        if merged.is_none_or(|m| idx < m) {
                            merged = Some(idx);
                        }
                    } else if dist <= side {
                        return Err(SemigroupError::AmbiguousDedup {
                            n: prev.n + 1,
                            distance: dist,
                            tol: cfg.dedup_tol,
                            factor: AMBIGUITY_FACTOR,
                        });
                    }
                }
            }
            match merged {
                Some(idx) => probs[idx as usize] += p,
                None => {
                    let idx = probs.len() as u32;
                    data.extend_from_slice(rec);
                    probs.push(p);
                    index.entry(cell).or_default().push(idx);
                }
            }
        }
    }
    Ok(WeightedElementSet {
        d,
        n: prev.n + 1,
        data,
        probs,
    })
}

/// `supp(mu^{*n})` with masses.
pub fn enumerate_convolution(
    mu: &FiniteMeasure,
    n: usize,
    cfg: &EnumerationConfig,
) -> Result<WeightedElementSet, SemigroupError> {
    let mut set = WeightedElementSet::identity(mu.dim());
    for _ in 0..n {
        set = next_generation(&set, mu, cfg)?;
    }
    Ok(set)
}

/// `H(mu^{*n}) / n` for `n = 1..=n_max`.
pub fn entropy_rate_bounds(
    mu: &FiniteMeasure,
    n_max: usize,
    cfg: &EnumerationConfig,
) -> Result<Vec<f64>, SemigroupError> {
    let mut set = WeightedElementSet::identity(mu.dim());
    let mut out = Vec::with_capacity(n_max);
    for n in 1..=n_max {
        set = next_generation(&set, mu, cfg)?;
        out.push(shannon_entropy(&set) / n as f64);
    }
    Ok(out)
}

/// Exact minimum over ordered-by-key records of `dist(i, j)` for `i != j`,
/// skipping pairs at distance `<= same_tol` (treated as one element).
pub(crate) fn sweep_min<F>(keys: &[(f64, usize)], same_tol: f64, dist: F) -> Option<f64>
where
    F: Fn(usize, usize) -> f64,
{
    let mut best = f64::INFINITY;
    for (a, &(ka, ia)) in keys.iter().enumerate() {
        for &(kb, ib) in &keys[a + 1..] {
            if kb - ka >= best {
                break;
            }
            let dd = dist(ia, ib);
            if dd > same_tol && dd < best {
                best = dd;
            }
        }
    }
    best.is_finite().then_some(best)
}

/// `Delta_n`: minimal distance between distinct elements of one generation.
pub fn delta_n(set: &WeightedElementSet) -> Option<f64> {
    let d = set.d;
    let mut keys: Vec<(f64, usize)> = (0..set.len()).map(|i| (sweep_key(d, set.record(i)), i)).collect();
    keys.par_sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    sweep_min(&keys, -1.0, |i, j| dist_flat(d, set.record(i), set.record(j)))
}

/// `M_n` over the union of the given generations (which should be `0..=n`).
pub fn m_n(sets: &[WeightedElementSet], n: usize, same_tol: f64) -> Option<f64> {
    let mut union = UnionIndex::new(sets[0].d, same_tol);
    let mut best = None;
    for set in sets.iter().take(n + 1) {
        best = union.insert_generation(set.data.clone(), set.len(), best);
    }
    best
}

/// Flat records of every generation seen so far, sorted by sweep key.
#[derive(Debug, Clone)]
pub(crate) struct UnionIndex {
    d: usize,
    same_tol: f64,
    data: Vec<f64>,
    sorted: Vec<(f64, usize)>,
}

impl UnionIndex {
    pub(crate) fn new(d: usize, same_tol: f64) -> Self {
        Self {
            d,
            same_tol,
            data: Vec::new(),
            sorted: Vec::new(),
        }
    }

    fn rec(&self, i: usize) -> &[f64] {
        let s = stride(self.d);
        &self.data[i * s..(i + 1) * s]
    }

    /// Adds `count` flat records and returns the updated union minimum given the previous one.
    pub(crate) fn insert_generation(&mut self, records: Vec<f64>, count: usize, prev_best: Option<f64>) -> Option<f64> {
        let d = self.d;
        let s = stride(d);
        let base = self.sorted.len();
        let mut fresh: Vec<(f64, usize)> = (0..count)
            .map(|t| (sweep_key(d, &records[t * s..(t + 1) * s]), base + t))
            .collect();
        self.data.extend_from_slice(&records);
        fresh.par_sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let within = sweep_min(&fresh, self.same_tol, |i, j| dist_flat(d, self.rec(i), self.rec(j)));
        let mut best = [prev_best, within].into_iter().flatten().fold(f64::INFINITY, f64::min);
        // Cross pairs between the new generation and everything before it.
        let old = &self.sorted;
        let cross = fresh
            .par_iter()
            .map(|&(k, i)| {
                let mut local = best;
                let lo = old.partition_point(|&(ko, _)| ko <= k - local);
                for &(ko, j) in &old[lo..] {
                    if ko - k >= local {
                        break;
                    }
                    let dd = dist_flat(d, self.rec(i), self.rec(j));
                    if dd > self.same_tol && dd < local {
                        local = dd;
                    }
                }
                local
            })
            .reduce(|| f64::INFINITY, f64::min);
        best = best.min(cross);
        let mut merged = Vec::with_capacity(self.sorted.len() + fresh.len());
        let (mut a, mut b) = (0, 0);
        while a < self.sorted.len() || b < fresh.len() {
            let take_old =
                b >= fresh.len() || (a < self.sorted.len() && self.sorted[a].0.total_cmp(&fresh[b].0).is_le());
            if take_old {
                merged.push(self.sorted[a]);
                a += 1;
            } else {
                merged.push(fresh[b]);
                b += 1;
            }
        }
        self.sorted = merged;
        best.is_finite().then_some(best)
    }
}

/// One row of the per-generation table.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct GenerationSummary {
    pub n: usize,
    pub support_size: usize,
    pub entropy: f64,
    pub delta_n: Option<f64>,
    pub m_n: Option<f64>,
    /// Exact value of `Delta_n` when it is attained by a pair with equal scale and sign.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta_exact: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m_exact: Option<String>,
}

impl GenerationSummary {
    pub fn entropy_rate(&self) -> f64 {
        self.entropy / self.n as f64
    }
}

/// Anything that produces successive generations of `mu^{*n}`.
pub trait GenerationSource {
    fn step(&mut self) -> Result<GenerationSummary, SemigroupError>;
}

/// Floating-point enumerator with an incremental union index for `M_n`.
pub struct Enumerator<'a> {
    mu: &'a FiniteMeasure,
    cfg: EnumerationConfig,
    current: WeightedElementSet,
    union: UnionIndex,
    m: Option<f64>,
}

impl<'a> Enumerator<'a> {
    pub fn new(mu: &'a FiniteMeasure, cfg: EnumerationConfig) -> Self {
        let current = WeightedElementSet::identity(mu.dim());
        let mut union = UnionIndex::new(mu.dim(), cfg.dedup_tol);
        let m = union.insert_generation(current.data.clone(), 1, None);
        Self {
            mu,
            cfg,
            current,
            union,
            m,
        }
    }

    pub fn current(&self) -> &WeightedElementSet {
        &self.current
    }
}

impl GenerationSource for Enumerator<'_> {
    fn step(&mut self) -> Result<GenerationSummary, SemigroupError> {
        let next = next_generation(&self.current, self.mu, &self.cfg)?;
        self.m = self.union.insert_generation(next.data.clone(), next.len(), self.m);
        let row = GenerationSummary {
            n: next.n,
            support_size: next.len(),
            entropy: shannon_entropy(&next),
            delta_n: delta_n(&next),
            m_n: self.m,
            delta_exact: None,
            m_exact: None,
        };
        self.current = next;
        Ok(row)
    }
}

/// Runs up to `n_max` generations; stops early on the first error and returns it.
pub fn run_generations<S: GenerationSource + ?Sized>(
    src: &mut S,
    n_max: usize,
) -> (Vec<GenerationSummary>, Option<SemigroupError>) {
    let mut rows = Vec::with_capacity(n_max);
    for _ in 0..n_max {
        match src.step() {
            Ok(row) => rows.push(row),
            Err(e) => return (rows, Some(e)),
        }
    }
    (rows, None)
}

pub const SEPARATION_LABEL: &str = "finite-range evidence, not an asymptotic certificate";

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct SeparationReport {
    pub n_max: usize,
    pub delta: Vec<Option<f64>>,
    pub m: Vec<Option<f64>>,
    /// Smallest `c` with `M_n >= e^{-c n}` at every computed `n`.
    pub fitted_c: Option<f64>,
    pub condition_exponential: bool,
    pub condition_weak: bool,
    /// Per-`n` result of `log M_n >= -n exp((log n)^{1/3 - eps})`.
    pub weak_pointwise: Vec<bool>,
    pub eps_used: f64,
    /// No generation has two distinct elements.
    pub vacuous: bool,
    pub label: &'static str,
}

/// Right-hand side of the weak separation condition at `n`.
pub fn weak_threshold(n: usize, eps: f64) -> f64 {
    let ln = (n as f64).ln().max(0.0);
    -(n as f64) * ln.powf(1.0 / 3.0 - eps).exp()
}

pub fn separation_report(rows: &[GenerationSummary], eps: f64) -> SeparationReport {
    let delta: Vec<Option<f64>> = rows.iter().map(|r| r.delta_n).collect();
    let m: Vec<Option<f64>> = rows.iter().map(|r| r.m_n).collect();
    let mut fitted_c: Option<f64> = None;
    let mut weak_pointwise = Vec::with_capacity(rows.len());
    let mut all_positive = true;
    for row in rows {
        match row.m_n {
            Some(v) if v > 0.0 => {
                let c = -v.ln() / row.n as f64;
                fitted_c = Some(fitted_c.map_or(c, |f| f.max(c)));
                weak_pointwise.push(v.ln() >= weak_threshold(row.n, eps));
            }
            Some(_) => {
                all_positive = false;
                weak_pointwise.push(false);
            }
            None => weak_pointwise.push(true),
        }
    }
    SeparationReport {
        n_max: rows.last().map_or(0, |r| r.n),
        vacuous: delta.iter().all(Option::is_none),
        delta,
        m,
        fitted_c,
        condition_exponential: all_positive,
        condition_weak: weak_pointwise.iter().all(|&b| b),
        weak_pointwise,
        eps_used: eps,
        label: SEPARATION_LABEL,
    }
}

pub fn separation_verdict(
    mu: &FiniteMeasure,
    n_max: usize,
    eps: f64,
    cfg: EnumerationConfig,
) -> Result<SeparationReport, SemigroupError> {
    let mut en = Enumerator::new(mu, cfg);
    let (rows, err) = run_generations(&mut en, n_max);
    match err {
        Some(e) => Err(e),
        None => Ok(separation_report(&rows, eps)),
    }
}

/// `n,support_size,entropy,delta_n,m_n` with empty fields for undefined minima.
pub fn generations_csv(rows: &[GenerationSummary]) -> String {
    let mut out = String::from("n,support_size,entropy,delta_n,m_n\n");
    let fmt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.17e}"));
    for r in rows {
        out.push_str(&format!(
            "{},{},{:.17e},{},{}\n",
            r.n,
            r.support_size,
            r.entropy,
            fmt(r.delta_n),
            fmt(r.m_n)
        ));
    }
    out
}
