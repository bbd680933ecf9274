//! Proper decompositions `gamma_1 ... gamma_{T_n} = f_1 exp(U_1) h_1 ... f_n exp(U_n) h_n`
//! built from walk paths by grid rounding, their axiom checks A1..A9,
//! concatenation, Taylor linearization error and trace-at-scale lower bounds.
//!
//! The sigma-algebra behind block `i` is realized as the rounding cell of `f_i`
//! together with `h_i` and everything before. Conditional covariances are
//! estimated from fresh replicates of the block drawn from the measure.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::measure::FiniteMeasure;
use crate::prob::{child_seed, min_eigenvalue};
use crate::sim_group::{
    algebra_dim, differential_psi, exp_map, log_map, log_rotation, metric_dist, rotation_2d, rotation_3d_xyz,
    LieVector, SimElement, SimError,
};
use crate::walk::{sample_walk, stopped_walk, stream_rng, WalkError, WalkPath, KAPPA_SLACK};

/// Largest log-ratio cell side; keeps `f^-1 F` well inside the log domain.
pub const LOG_RHO_CELL_CAP: f64 = 1.0;
/// Largest rotation cell side in radians.
pub const ROTATION_CELL_CAP: f64 = 0.5;
pub const RECONSTRUCTION_TOL: f64 = 1e-9;
pub const PRODUCT_TOL: f64 = 1e-8;
/// Longest f-block accepted while waiting for `rho(F) < 1`.
pub const F_BLOCK_CAP: usize = 10_000;
/// A9 slack is `A9_SLACK / sqrt(cell sample count)`.
pub const A9_SLACK: f64 = 3.0;
/// Safety factor on the Taylor constant fitted on a calibration batch.
pub const TAYLOR_SAFETY: f64 = 1.25;

const BUILD_TAG: u64 = 0xb1d;
const VALIDATE_TAG: u64 = 0xa9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DecompError {
    #[error("block plan infeasible: {0}")]
    BlockPlanInfeasible(String),
    #[error("precondition violated: {0}")]
    PreconditionViolation(String),
    #[error("scale mismatch: second decomposition must sit at r = {expected}, got {got}")]
    ScaleMismatch { expected: f64, got: f64 },
    #[error(transparent)]
    Rotation(#[from] SimError),
    #[error(transparent)]
    Walk(#[from] WalkError),
    #[error("bad parameter: {0}")]
    BadParameter(String),
}

// ---------------------------------------------------------------------------
// Grid rounding

/// Rounding cell of a group element.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum CellTag {
    /// No rounding: the element itself is known.
    Exact,
    Grid {
        log_rho: i64,
        orientation: i8,
        rot: Vec<i64>,
        trans: Vec<i64>,
    },
}

impl fmt::Display for CellTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CellTag::Exact => write!(f, "exact"),
            CellTag::Grid {
                log_rho,
                orientation,
                rot,
                trans,
            } => {
                write!(
                    f,
                    "grid logrho={log_rho} orient={orientation} rot={rot:?} trans={trans:?}"
                )
            }
        }
    }
}

fn flip_first_row(m: &mut DMatrix<f64>) {
    let mut row = m.row_mut(0);
    row.neg_mut();
}

/// Rounds `g` to its grid cell of side `side`: log-ratio cells of side
/// `min(side, 1)` rounded down (so `rho` only shrinks), rotation-logarithm
/// cells of side `min(side, 0.5)` and translation cells of side `side`, both
/// represented by their centres. Orientation is kept exactly. `side <= 0`
/// returns `g` itself.
pub fn round_element(g: &SimElement, side: f64) -> Result<(SimElement, CellTag), SimError> {
    if side <= 0.0 {
        return Ok((g.clone(), CellTag::Exact));
    }
    let d = g.dim();
    let s_rho = side.min(LOG_RHO_CELL_CAP);
    let k_rho = (g.log_rho() / s_rho).floor();
    let rho = (k_rho * s_rho).exp();
    let det = if d == 1 { g.rot()[(0, 0)] } else { g.rot().determinant() };
    let orientation: i8 = if det < 0.0 { -1 } else { 1 };
    let (rot, rot_key) = if d == 1 {
        (g.rot().clone(), Vec::new())
    } else {
        let mut proper = g.rot().clone();
        if orientation < 0 {
            flip_first_row(&mut proper);
        }
        let k = log_rotation(&proper)?;
        let s_rot = side.min(ROTATION_CELL_CAP);
        let mut key = Vec::new();
        let mut kr = DMatrix::zeros(d, d);
        for i in 0..d {
            for j in (i + 1)..d {
                let idx = (k[(i, j)] / s_rot).floor();
                key.push(idx as i64);
                let c = (idx + 0.5) * s_rot;
                kr[(i, j)] = c;
                kr[(j, i)] = -c;
            }
        }
        let mut r = exp_map(&LieVector::new(0.0, kr, DVector::zeros(d))?).rot().clone();
        if orientation < 0 {
            flip_first_row(&mut r);
        }
        (r, key)
    };
    let trans_key: Vec<i64> = g.trans().iter().map(|b| (b / side).floor() as i64).collect();
    let trans = DVector::from_iterator(d, trans_key.iter().map(|&k| (k as f64 + 0.5) * side));
    let tag = CellTag::Grid {
        log_rho: k_rho as i64,
        orientation,
        rot: rot_key,
        trans: trans_key,
    };
    Ok((SimElement::new(rho, rot, trans)?, tag))
}

// ---------------------------------------------------------------------------
// Decomposition data

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Zeroed {
    /// `|b(h_i)| > A`.
    A5,
    /// The rounded perturbation exceeded the A6 bound.
    A6,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockRecord {
    /// `S_i`: the f-block is steps `T_{i-1}+1 ..= S_i`.
    pub s: usize,
    /// `T_i`: the h-block is steps `S_i+1 ..= T_i`.
    pub t: usize,
    /// Leading steps of the f-block carried in `lead` (set by concatenation).
    pub lead_len: usize,
    pub lead: Option<SimElement>,
    pub f: SimElement,
    pub u: LieVector,
    pub h: SimElement,
    pub cell: CellTag,
    pub cell_side: f64,
    /// `rho(prefix)^-1 r` when the block was built. Replicates are zeroed when
    /// `|U| > zero_scale / rho(round(F))`.
    pub zero_scale: f64,
    pub zeroed: Option<Zeroed>,
    pub m: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FloorOptions {
    pub f_reps: usize,
    pub h_reps: usize,
    pub bootstrap: usize,
    /// Bootstrap quantile taken as the floor.
    pub quantile: f64,
}

impl Default for FloorOptions {
    fn default() -> Self {
        Self {
            f_reps: 128,
            h_reps: 8,
            bootstrap: 100,
            quantile: 0.05,
        }
    }
}

/// Block lengths: each f-block has at least `f_min` steps and is extended
/// until its ratio drops below 1; each h-block has exactly `h_len` steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct BlockPlan {
    pub n: usize,
    pub k: usize,
    pub f_min: usize,
    pub h_len: usize,
}

impl BlockPlan {
    /// `n` blocks with `f_min = h_len = K`.
    pub fn equal(n: usize, k: usize) -> Self {
        Self {
            n,
            k,
            f_min: k.max(1),
            h_len: k,
        }
    }

    pub fn min_steps(&self) -> usize {
        self.n * (self.f_min + self.h_len)
    }

    pub fn validate(&self, available: usize) -> Result<(), DecompError> {
        if self.f_min < self.k.max(1) || self.h_len < self.k {
            return Err(DecompError::BlockPlanInfeasible(format!(
                "block lengths f_min = {}, h_len = {} must be at least K = {} (and f_min >= 1)",
                self.f_min, self.h_len, self.k
            )));
        }
        if self.min_steps() > available {
            return Err(DecompError::BlockPlanInfeasible(format!(
                "plan needs at least {} steps, path has {available}",
                self.min_steps()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ProperDecomposition {
    pub k: usize,
    pub a: f64,
    pub r: f64,
    pub grid_step: f64,
    pub f_min: usize,
    pub blocks: Vec<BlockRecord>,
    pub seed: u64,
    pub measure: FiniteMeasure,
    pub floor_options: FloorOptions,
}

impl ProperDecomposition {
    /// The decomposition with no blocks.
    pub fn empty(measure: FiniteMeasure, k: usize, a: f64, r: f64, seed: u64) -> Self {
        Self {
            k,
            a,
            r,
            grid_step: 0.0,
            f_min: k.max(1),
            blocks: Vec::new(),
            seed,
            measure,
            floor_options: FloorOptions::default(),
        }
    }

    pub fn n(&self) -> usize {
        self.blocks.len()
    }

    pub fn f(&self) -> Vec<&SimElement> {
        self.blocks.iter().map(|b| &b.f).collect()
    }

    pub fn h(&self) -> Vec<&SimElement> {
        self.blocks.iter().map(|b| &b.h).collect()
    }

    pub fn u(&self) -> Vec<&LieVector> {
        self.blocks.iter().map(|b| &b.u).collect()
    }

    pub fn s(&self) -> Vec<usize> {
        self.blocks.iter().map(|b| b.s).collect()
    }

    pub fn t(&self) -> Vec<usize> {
        self.blocks.iter().map(|b| b.t).collect()
    }

    pub fn m(&self) -> Vec<f64> {
        self.blocks.iter().map(|b| b.m).collect()
    }

    /// Rounding cells of the f's, one per block.
    pub fn conditioning_tag(&self) -> Vec<String> {
        self.blocks.iter().map(|b| b.cell.to_string()).collect()
    }

    /// `rho(f_1 h_1 ... f_i h_i)` for `i = 0..=n`.
    pub fn prefix_rhos(&self) -> Vec<f64> {
        let mut out = vec![1.0];
        for b in &self.blocks {
            let last = *out.last().unwrap();
            out.push(last * b.f.rho() * b.h.rho());
        }
        out
    }

    /// `rho(f_1 h_1 ... f_n h_n)`.
    pub fn kappa(&self) -> f64 {
        *self.prefix_rhos().last().unwrap()
    }

    /// Last step covered, `T_n` (0 when empty).
    pub fn end(&self) -> usize {
        self.blocks.last().map_or(0, |b| b.t)
    }

    /// The same data read at scale `r_new`: every floor picks up `(r / r_new)^2`
    /// from the A9 normalization.
    pub fn with_scale(&self, r_new: f64) -> Self {
        let mut out = self.clone();
        let factor = (self.r / r_new).powi(2);
        for b in &mut out.blocks {
            b.m *= factor;
        }
        out.r = r_new;
        out
    }

    /// Structured text dump, one record per block.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "# proper decomposition n={} K={} A={} r={} grid_step={} seed={}",
            self.n(),
            self.k,
            self.a,
            self.r,
            self.grid_step,
            self.seed
        );
        for (i, b) in self.blocks.iter().enumerate() {
            let _ = writeln!(s, "block {}", i + 1);
            let _ = writeln!(s, "  S {}", b.s);
            let _ = writeln!(s, "  T {}", b.t);
            let _ = writeln!(s, "  lead_len {}", b.lead_len);
            let _ = writeln!(s, "  f {}", fmt_element(&b.f));
            let _ = writeln!(s, "  h {}", fmt_element(&b.h));
            let _ = writeln!(s, "  U {:?}", b.u.coords().as_slice());
            let _ = writeln!(s, "  cell {}", b.cell);
            let _ = writeln!(s, "  cell_side {}", b.cell_side);
            let zeroed = b.zeroed.map_or("none".to_string(), |z| format!("{z:?}"));
            let _ = writeln!(s, "  zeroed {zeroed}");
            let _ = writeln!(s, "  m {}", b.m);
        }
        s
    }
}

fn fmt_element(g: &SimElement) -> String {
    format!(
        "rho={} rot={:?} b={:?}",
        g.rho(),
        g.rot().transpose().as_slice(),
        g.trans().as_slice()
    )
}

// ---------------------------------------------------------------------------
// Construction

fn fresh_f_block<R: Rng + ?Sized>(mu: &FiniteMeasure, f_min: usize, rng: &mut R) -> Option<SimElement> {
    let mut g = SimElement::identity(mu.dim());
    let mut len = 0;
    while len < f_min || g.rho() >= 1.0 {
        if len >= F_BLOCK_CAP {
            return None;
        }
        g = g.compose(&mu.atoms()[mu.sample_index(rng)]);
        len += 1;
    }
    Some(g)
}

fn fresh_h_block<R: Rng + ?Sized>(mu: &FiniteMeasure, h_len: usize, rng: &mut R) -> SimElement {
    (0..h_len).fold(SimElement::identity(mu.dim()), |acc, _| {
        acc.compose(&mu.atoms()[mu.sample_index(rng)])
    })
}

/// `rho(f) U(f) psi_{b(h)}(U)`, the vector whose conditional covariance A9 bounds.
fn designated_vector(f: &SimElement, u: &LieVector, h: &SimElement) -> DVector<f64> {
    f.rot() * differential_psi(h.trans(), u) * f.rho()
}

/// Rounding rule of one block, enough to redraw it.
struct BlockRule<'a> {
    f_min: usize,
    h_len: usize,
    cell_side: f64,
    zero_scale: f64,
    a: f64,
    lead: Option<&'a SimElement>,
}

/// Rounded `f`, perturbation and cell of an f-block product, or the reason it is zeroed.
fn split_block(
    big_f: &SimElement,
    h: &SimElement,
    cell_side: f64,
    zero_scale: f64,
    a: f64,
) -> Result<Result<(SimElement, LieVector, CellTag), Zeroed>, SimError> {
    if h.trans().norm() > a {
        return Ok(Err(Zeroed::A5));
    }
    let (f, cell) = round_element(big_f, cell_side)?;
    if cell == CellTag::Exact {
        return Ok(Ok((f, LieVector::zero(big_f.dim()), cell)));
    }
    let u = log_map(&f.inverse().compose(big_f))?;
    if u.norm() > zero_scale / f.rho() {
        return Ok(Err(Zeroed::A6));
    }
    Ok(Ok((f, u, cell)))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FloorEstimate {
    /// Pooled within-cell covariance of the normalized designated vector.
    pub lambda_min: f64,
    /// Bootstrap quantile of `lambda_min`, floored at zero.
    pub floor: f64,
    /// Replicates in cells with at least two members.
    pub count: usize,
    pub replicates: usize,
    pub cells: usize,
}

/// Estimates `E[Var(Y | A_i) | A_{i-1}] / sigma^2` from fresh replicates of the
/// block: `h_reps` h-blocks, each with `f_reps` f-blocks, grouped by
/// `(h replicate, cell of f)`. Singleton cells and zeroed replicates count
/// towards the total but contribute no variance.
fn estimate_floor(
    mu: &FiniteMeasure,
    rule: &BlockRule,
    norm_scale: f64,
    opts: &FloorOptions,
    seed: u64,
) -> FloorEstimate {
    let d = mu.dim();
    let mut rng = stream_rng(seed, 0);
    let mut groups: BTreeMap<(usize, CellTag), Vec<DVector<f64>>> = BTreeMap::new();
    let mut singletons = 0usize;
    let mut total = 0usize;
    for hr in 0..opts.h_reps {
        let h = fresh_h_block(mu, rule.h_len, &mut rng);
        for _ in 0..opts.f_reps {
            total += 1;
            let Some(big_f) = fresh_f_block(mu, rule.f_min, &mut rng) else {
                singletons += 1;
                continue;
            };
            match split_block(&big_f, &h, rule.cell_side, rule.zero_scale, rule.a) {
                Ok(Ok((f, u, cell))) if cell != CellTag::Exact => {
                    let mut y = designated_vector(&f, &u, &h);
                    if let Some(lead) = rule.lead {
                        y = lead.rot() * y * lead.rho();
                    }
                    groups.entry((hr, cell)).or_default().push(y / norm_scale);
                }
                _ => singletons += 1,
            }
        }
    }
    // Per-group (size, unbiased covariance).
    let mut stats: Vec<(usize, DMatrix<f64>)> = groups
        .into_values()
        .map(|ys| {
            let n = ys.len();
            if n < 2 {
                return (n, DMatrix::zeros(d, d));
            }
            // Shifting by the first replicate keeps identical replicates at exactly zero.
            let mean = ys.iter().fold(DVector::zeros(d), |acc, y| acc + (y - &ys[0])) / n as f64;
            let mut cov = DMatrix::zeros(d, d);
            for y in &ys {
                let z = y - &ys[0] - &mean;
                cov += &z * z.transpose();
            }
            (n, cov / (n - 1) as f64)
        })
        .collect();
    stats.extend((0..singletons).map(|_| (1, DMatrix::zeros(d, d))));
    let pooled = |idx: &mut dyn Iterator<Item = usize>| {
        let mut acc = DMatrix::zeros(d, d);
        let mut n = 0usize;
        for i in idx {
            let (k, cov) = &stats[i];
            n += k;
            if *k >= 2 {
                acc += cov * *k as f64;
            }
        }
        if n == 0 {
            acc
        } else {
            acc / n as f64
        }
    };
    let lambda_min = min_eigenvalue(&pooled(&mut (0..stats.len())));
    let count = stats.iter().filter(|(k, _)| *k >= 2).map(|(k, _)| k).sum();
    let cells = stats.iter().filter(|(k, _)| *k >= 2).count();
    let floor = if count == 0 || opts.bootstrap == 0 {
        0.0
    } else {
        let mut brng = stream_rng(seed, 1);
        let g = stats.len();
        let mut lams: Vec<f64> = (0..opts.bootstrap)
            .map(|_| min_eigenvalue(&pooled(&mut (0..g).map(|_| brng.random_range(0..g)))))
            .collect();
        lams.sort_by(f64::total_cmp);
        let idx = ((opts.quantile * lams.len() as f64).ceil() as usize).saturating_sub(1);
        lams[idx.min(lams.len() - 1)].max(0.0)
    };
    FloorEstimate {
        lambda_min,
        floor,
        count,
        replicates: total,
        cells,
    }
}

/// Builds a proper decomposition of `path` by rounding each f-block product
/// to a grid cell of side `grid_step * rho(prefix)^-1 * r`.
pub fn build_decomposition(
    mu: &FiniteMeasure,
    path: &WalkPath,
    a: f64,
    r: f64,
    plan: &BlockPlan,
    grid_step: f64,
    opts: &FloorOptions,
) -> Result<ProperDecomposition, DecompError> {
    if !(r > 0.0 && a > 0.0 && grid_step >= 0.0) {
        return Err(DecompError::BadParameter(format!(
            "need r > 0, A > 0, grid_step >= 0; got r = {r}, A = {a}, grid_step = {grid_step}"
        )));
    }
    plan.validate(path.len())?;
    let mut blocks = Vec::with_capacity(plan.n);
    let mut prefix_rho = 1.0;
    let mut t_prev = 0;
    for i in 0..plan.n {
        let mut j = t_prev;
        let mut big_f = SimElement::identity(mu.dim());
        while j - t_prev < plan.f_min || big_f.rho() >= 1.0 {
            if j >= path.len() || j - t_prev >= F_BLOCK_CAP {
                return Err(DecompError::BlockPlanInfeasible(format!(
                    "f-block {} did not contract before step {j} (path has {})",
                    i + 1,
                    path.len()
                )));
            }
            big_f = big_f.compose(&path.steps[j]);
            j += 1;
        }
        let s = j;
        let t = s + plan.h_len;
        if t > path.len() {
            return Err(DecompError::BlockPlanInfeasible(format!(
                "h-block {} ends at step {t}, path has {}",
                i + 1,
                path.len()
            )));
        }
        let h = path.segment(s, t);
        let sigma = r / prefix_rho;
        let cell_side = grid_step * sigma;
        let (f, u, cell, zeroed) = match split_block(&big_f, &h, cell_side, sigma, a)? {
            Ok((f, u, cell)) => (f, u, cell, None),
            Err(z) => (big_f.clone(), LieVector::zero(mu.dim()), CellTag::Exact, Some(z)),
        };
        let m = if cell_side > 0.0 {
            let rule = BlockRule {
                f_min: plan.f_min,
                h_len: plan.h_len,
                cell_side,
                zero_scale: sigma,
                a,
                lead: None,
            };
            estimate_floor(mu, &rule, sigma, opts, child_seed(path.seed ^ BUILD_TAG, i as u64)).floor
        } else {
            0.0
        };
        prefix_rho *= f.rho() * h.rho();
        blocks.push(BlockRecord {
            s,
            t,
            lead_len: 0,
            lead: None,
            f,
            u,
            h,
            cell,
            cell_side,
            zero_scale: sigma,
            zeroed,
            m,
        });
        t_prev = t;
    }
    Ok(ProperDecomposition {
        k: plan.k,
        a,
        r,
        grid_step,
        f_min: plan.f_min,
        blocks,
        seed: path.seed,
        measure: mu.clone(),
        floor_options: *opts,
    })
}

// ---------------------------------------------------------------------------
// Validation

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum AxiomStatus {
    Satisfied,
    SatisfiedByConstruction,
    Violated { blocks: Vec<usize>, detail: String },
}

impl AxiomStatus {
    pub fn passed(&self) -> bool {
        !matches!(self, AxiomStatus::Violated { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AxiomResult {
    pub axiom: String,
    pub status: AxiomStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub results: Vec<AxiomResult>,
    /// `d(f_1 exp(U_1) h_1 ... f_n exp(U_n) h_n, gamma_1 ... gamma_{T_n})`.
    pub reconstruction_error: f64,
    /// Fresh A9 estimates per block.
    pub a9_estimates: Vec<FloorEstimate>,
}

impl ValidationReport {
    pub fn status(&self, axiom: &str) -> &AxiomStatus {
        &self
            .results
            .iter()
            .find(|r| r.axiom == axiom)
            .expect("axioms A1..A9 are always reported")
            .status
    }

    pub fn passes(&self, axiom: &str) -> bool {
        self.status(axiom).passed()
    }

    pub fn all_pass(&self) -> bool {
        self.results.iter().all(|r| r.status.passed())
    }

    /// Violated blocks (one-based) of `axiom`.
    pub fn violated_blocks(&self, axiom: &str) -> Vec<usize> {
        match self.status(axiom) {
            AxiomStatus::Violated { blocks, .. } => blocks.clone(),
            _ => Vec::new(),
        }
    }
}

fn verdict(bad: Vec<usize>, details: Vec<String>, ok: AxiomStatus) -> AxiomStatus {
    if bad.is_empty() {
        ok
    } else {
        AxiomStatus::Violated {
            blocks: bad,
            detail: details.join("; "),
        }
    }
}

/// Checks A1..A9 of `pd` against the path it was built from.
pub fn validate_decomposition(pd: &ProperDecomposition, path: &WalkPath) -> ValidationReport {
    let n = pd.n();
    let d = pd.measure.dim();
    let rhos = pd.prefix_rhos();
    let mut bad: Vec<(Vec<usize>, Vec<String>)> = vec![(Vec::new(), Vec::new()); 9];
    let mut note = |ax: usize, i: usize, msg: String| {
        if bad[ax].0.last() != Some(&(i + 1)) {
            bad[ax].0.push(i + 1);
        }
        bad[ax].1.push(format!("block {}: {msg}", i + 1));
    };
    let mut t_prev = 0;
    let mut ranges_ok = vec![true; n];
    for (i, b) in pd.blocks.iter().enumerate() {
        // A1
        let s_min = if i == 0 { pd.k } else { t_prev + pd.k };
        if b.s < s_min || b.s < t_prev {
            note(0, i, format!("S = {} < {}", b.s, s_min.max(t_prev)));
        }
        if b.t < b.s + pd.k {
            note(0, i, format!("T = {} < S + K = {}", b.t, b.s + pd.k));
        }
        let ok = b.s >= t_prev + b.lead_len && b.t >= b.s && b.t <= path.len();
        ranges_ok[i] = ok;
        if !ok {
            note(1, i, "step range is empty or outside the path".into());
            note(2, i, "step range is empty or outside the path".into());
            note(
                7,
                i,
                format!(
                    "f-block ({t_prev}, {}] and h-block ({}, {}] overlap or leave the path",
                    b.s, b.s, b.t
                ),
            );
            t_prev = b.t;
            continue;
        }
        // A2, A3
        let block = path.segment(t_prev, b.s);
        let err = metric_dist(&b.f.compose(&exp_map(&b.u)), &block);
        if !(err <= RECONSTRUCTION_TOL) {
            note(1, i, format!("f exp(U) is {err:.3e} from the block product"));
        }
        let err = metric_dist(&b.h, &path.segment(b.s, b.t));
        if !(err <= RECONSTRUCTION_TOL) {
            note(2, i, format!("h is {err:.3e} from the block product"));
        }
        // A4
        if !(b.f.rho() < 1.0) {
            note(3, i, format!("rho(f) = {}", b.f.rho()));
        }
        // A5
        if b.h.trans().norm() > pd.a && !b.u.is_zero() {
            note(4, i, format!("|b(h)| = {} > A but U != 0", b.h.trans().norm()));
        }
        // A6
        let bound = pd.r / (rhos[i] * b.f.rho());
        let un = b.u.norm();
        if un > bound * (1.0 + 1e-12) {
            note(5, i, format!("|U| = {un:.6e} exceeds {bound:.6e}"));
        }
        // A7: U is a function of its own block given the recorded cell.
        let big_f = path.segment(t_prev + b.lead_len, b.s);
        let lead = b.lead.clone().unwrap_or_else(|| SimElement::identity(d));
        match split_block(&big_f, &b.h, b.cell_side, b.zero_scale, pd.a) {
            Ok(Ok((f, u, cell))) => {
                let f_full = lead.compose(&f);
                let du = (u.coords() - b.u.coords()).norm();
                if b.zeroed.is_some()
                    || cell != b.cell
                    || metric_dist(&f_full, &b.f) > RECONSTRUCTION_TOL
                    || du > RECONSTRUCTION_TOL * (1.0 + un)
                {
                    note(6, i, "recomputing the rounding does not reproduce (f, U, cell)".into());
                }
            }
            Ok(Err(_)) => {
                if b.zeroed.is_none() || !b.u.is_zero() {
                    note(6, i, "rounding rule zeroes U but the block keeps it".into());
                }
            }
            Err(e) => note(6, i, format!("rounding failed: {e}")),
        }
        // A8: disjoint step ranges.
        if i > 0 && t_prev > b.s {
            note(7, i, "overlaps the previous block".into());
        }
        t_prev = b.t;
    }
    // A9
    let estimates: Vec<FloorEstimate> = pd
        .blocks
        .iter()
        .enumerate()
        .map(|(i, b)| {
            let h_len = b.t.saturating_sub(b.s);
            let f_min = pd.f_min;
            let rule = BlockRule {
                f_min,
                h_len,
                cell_side: b.cell_side,
                zero_scale: b.zero_scale,
                a: pd.a,
                lead: b.lead.as_ref(),
            };
            let norm_scale = pd.r / rhos[i];
            if b.cell_side > 0.0 {
                estimate_floor(
                    &pd.measure,
                    &rule,
                    norm_scale,
                    &pd.floor_options,
                    child_seed(pd.seed ^ VALIDATE_TAG, i as u64),
                )
            } else {
                FloorEstimate {
                    lambda_min: 0.0,
                    floor: 0.0,
                    count: 0,
                    replicates: 0,
                    cells: 0,
                }
            }
        })
        .collect();
    for (i, (b, est)) in pd.blocks.iter().zip(&estimates).enumerate() {
        if b.m < 0.0 {
            note(8, i, format!("m = {} < 0", b.m));
        } else if est.count == 0 {
            if b.m > 0.0 {
                note(8, i, format!("m = {} but no cell has two replicates", b.m));
            }
        } else {
            let slack = A9_SLACK / (est.count as f64).sqrt();
            if est.lambda_min < b.m - slack {
                note(
                    8,
                    i,
                    format!("lambda_min = {:.4e} < m - slack = {:.4e}", est.lambda_min, b.m - slack),
                );
            }
        }
    }
    let reconstruction_error = if ranges_ok.iter().all(|&x| x) && pd.end() <= path.len() {
        let rebuilt = pd.blocks.iter().fold(SimElement::identity(d), |acc, b| {
            acc.compose(&b.f).compose(&exp_map(&b.u)).compose(&b.h)
        });
        metric_dist(&rebuilt, &path.segment(0, pd.end()))
    } else {
        f64::INFINITY
    };
    let names = ["A1", "A2", "A3", "A4", "A5", "A6", "A7", "A8", "A9"];
    let results = bad
        .into_iter()
        .zip(names)
        .enumerate()
        .map(|(k, ((blocks, details), name))| {
            let ok = if k == 6 || k == 7 {
                AxiomStatus::SatisfiedByConstruction
            } else {
                AxiomStatus::Satisfied
            };
            AxiomResult {
                axiom: name.to_string(),
                status: verdict(blocks, details, ok),
            }
        })
        .collect();
    ValidationReport {
        results,
        reconstruction_error,
        a9_estimates: estimates,
    }
}

// ---------------------------------------------------------------------------
// Variance sums and concatenation

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VarianceSum {
    pub total: f64,
    pub n: usize,
    pub k: usize,
    /// `rho(f_1 h_1 ... f_n h_n)`; any `kappa' <= kappa` is certified too.
    pub kappa: f64,
    pub a: f64,
    pub r: f64,
}

/// `sum m_i`, an achieved lower bound for `V(mu, n, K, kappa, A; r)`.
pub fn variance_sum_achieved(pd: &ProperDecomposition) -> VarianceSum {
    VarianceSum {
        total: pd.blocks.iter().map(|b| b.m).sum(),
        n: pd.n(),
        k: pd.k,
        kappa: pd.kappa(),
        a: pd.a,
        r: pd.r,
    }
}

#[derive(Debug, Clone)]
pub struct Concatenation {
    pub pd: ProperDecomposition,
    pub path: WalkPath,
    /// Steps inserted between the parts so that `rho(P_1 ext) <= kappa_1 / M`.
    pub gap: usize,
    /// Factor applied to the second part's floors.
    pub floor_scale: f64,
    /// `R^-1 M^-1 kappa_1 kappa_2`, the guaranteed lower bound on `kappa`.
    pub kappa_floor: f64,
}

/// Joins `pd1` (on `path1`) with `pd2` (on `path2`, built at scale
/// `M kappa_1^-1 r`). The walk continues along `path1` after `T_{n_1}` until
/// `rho(f_1 h_1 ... f_{n_1} h_{n_1} ext) <= kappa_1 / M`; `ext` is prepended to
/// the second part's first f-block, and the second part's floors are rescaled
/// to scale `r` by `(r_2 kappa_1 rho(ext) / r)^2`.
pub fn concatenate(
    pd1: &ProperDecomposition,
    path1: &WalkPath,
    pd2: &ProperDecomposition,
    path2: &WalkPath,
    m_factor: f64,
    r_bound: f64,
) -> Result<Concatenation, DecompError> {
    let mu = &pd1.measure;
    if !(r_bound > 1.0 && m_factor >= r_bound) {
        return Err(DecompError::BadParameter(format!(
            "need M >= R > 1, got M = {m_factor}, R = {r_bound}"
        )));
    }
    if mu.rho_bound() > r_bound * (1.0 + 1e-12) {
        return Err(DecompError::BadParameter(format!(
            "ratios of the measure leave [1/R, R] for R = {r_bound}"
        )));
    }
    if pd1.k != pd2.k || pd1.a != pd2.a {
        return Err(DecompError::BadParameter("parts must share K and A".into()));
    }
    if pd2.n() == 0 {
        return Err(DecompError::BadParameter(
            "the second part needs at least one block".into(),
        ));
    }
    let kappa1 = pd1.kappa();
    let expected = m_factor * pd1.r / kappa1;
    if (pd2.r - expected).abs() > 1e-9 * expected {
        return Err(DecompError::ScaleMismatch { expected, got: pd2.r });
    }
    let t1 = pd1.end();
    let mut gap = 0;
    let mut rho_ext = 1.0;
    while rho_ext > (1.0 + KAPPA_SLACK) / m_factor {
        if t1 + gap >= path1.len() {
            return Err(DecompError::BlockPlanInfeasible(format!(
                "first path ends at {} before the gap closes",
                path1.len()
            )));
        }
        rho_ext *= path1.steps[t1 + gap].rho();
        gap += 1;
    }
    let ext = path1.segment(t1, t1 + gap);
    let off = t1 + gap;
    let t2 = pd2.end();
    if t2 > path2.len() {
        return Err(DecompError::BadParameter(
            "second decomposition runs past its path".into(),
        ));
    }
    let mut indices = path1.indices[..off].to_vec();
    indices.extend_from_slice(&path2.indices[..t2]);
    let path = WalkPath::from_indices(mu, indices, path1.seed);
    let floor_scale = (pd2.r * kappa1 * ext.rho() / pd1.r).powi(2);
    let mut blocks = pd1.blocks.clone();
    for (j, b) in pd2.blocks.iter().enumerate() {
        let mut nb = b.clone();
        nb.s += off;
        nb.t += off;
        nb.m = b.m * floor_scale;
        if j == 0 {
            let lead = match &b.lead {
                Some(l) => ext.compose(l),
                None => ext.clone(),
            };
            nb.f = ext.compose(&b.f);
            nb.lead_len = b.lead_len + gap;
            nb.lead = Some(lead);
        }
        blocks.push(nb);
    }
    let pd = ProperDecomposition {
        k: pd1.k,
        a: pd1.a,
        r: pd1.r,
        grid_step: pd1.grid_step,
        f_min: pd1.f_min.max(pd2.f_min),
        blocks,
        seed: pd1.seed,
        measure: mu.clone(),
        floor_options: pd1.floor_options,
    };
    Ok(Concatenation {
        pd,
        path,
        gap,
        floor_scale,
        kappa_floor: kappa1 * pd2.kappa() / (r_bound * m_factor),
    })
}

// ---------------------------------------------------------------------------
// Experiments over many paths

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecompositionSuite {
    pub paths: usize,
    pub n: usize,
    /// Paths violating any of A1..A6.
    pub a1_a6_violations: usize,
    pub a7_a8_violations: usize,
    pub a9_violations: usize,
    /// Per block, the smallest floor over paths: the constant `m_i` certified
    /// for every realization.
    pub certified_m: Vec<f64>,
    pub mean_variance_sum: f64,
    /// Smallest `rho(f_1 h_1 ... f_n h_n)` over paths.
    pub kappa: f64,
    pub max_reconstruction_error: f64,
    pub zeroed_fraction: f64,
    /// Every floor is zero.
    pub degenerate: bool,
}

#[allow(clippy::too_many_arguments)]
pub fn decomposition_suite(
    mu: &FiniteMeasure,
    paths: usize,
    path_len: usize,
    plan: &BlockPlan,
    a: f64,
    r: f64,
    grid_step: f64,
    opts: &FloorOptions,
    seed: u64,
) -> Result<DecompositionSuite, DecompError> {
    plan.validate(path_len)?;
    let runs: Vec<Result<(ProperDecomposition, ValidationReport), DecompError>> = (0..paths as u64)
        .into_par_iter()
        .map(|p| {
            let path = sample_walk(mu, path_len, child_seed(seed, p));
            let pd = build_decomposition(mu, &path, a, r, plan, grid_step, opts)?;
            let report = validate_decomposition(&pd, &path);
            Ok((pd, report))
        })
        .collect();
    let mut out = DecompositionSuite {
        paths,
        n: plan.n,
        a1_a6_violations: 0,
        a7_a8_violations: 0,
        a9_violations: 0,
        certified_m: vec![f64::INFINITY; plan.n],
        mean_variance_sum: 0.0,
        kappa: f64::INFINITY,
        max_reconstruction_error: 0.0,
        zeroed_fraction: 0.0,
        degenerate: true,
    };
    let mut zeroed = 0usize;
    for run in runs {
        let (pd, rep) = run?;
        if ["A1", "A2", "A3", "A4", "A5", "A6"].iter().any(|a| !rep.passes(a)) {
            out.a1_a6_violations += 1;
        }
        if !rep.passes("A7") || !rep.passes("A8") {
            out.a7_a8_violations += 1;
        }
        if !rep.passes("A9") {
            out.a9_violations += 1;
        }
        for (i, b) in pd.blocks.iter().enumerate() {
            out.certified_m[i] = out.certified_m[i].min(b.m);
            zeroed += b.zeroed.is_some() as usize;
        }
        out.mean_variance_sum += variance_sum_achieved(&pd).total / paths.max(1) as f64;
        out.kappa = out.kappa.min(pd.kappa());
        out.max_reconstruction_error = out.max_reconstruction_error.max(rep.reconstruction_error);
    }
    if paths == 0 {
        out.certified_m.iter_mut().for_each(|m| *m = 0.0);
    }
    out.zeroed_fraction = zeroed as f64 / (paths * plan.n).max(1) as f64;
    out.degenerate = out.certified_m.iter().all(|&m| m == 0.0) && out.mean_variance_sum == 0.0;
    Ok(out)
}

// ---------------------------------------------------------------------------
// Trace at scale

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceReport {
    pub kappa: f64,
    pub r: f64,
    pub grid_step: f64,
    pub trials: usize,
    /// `E[tr Var(U | cell)] / r^2`, a lower bound for `tr(q_{tau_kappa}; r)`.
    pub t: f64,
    /// Mass of draws whose `U` exceeded `r` and was zeroed.
    pub zeroed_mass: f64,
    pub cells: usize,
    pub warning: Option<String>,
}

/// Samples `q = q_{tau_kappa}`, rounds it to `h` on the grid of side
/// `grid_step`, sets `U = log(h^-1 q)` (zeroed with `h = q` when `|U| > r`)
/// and estimates the pooled within-cell trace of `Var(U)`.
pub fn trace_at_scale_lower(
    mu: &FiniteMeasure,
    kappa: f64,
    r: f64,
    grid_step: f64,
    trials: usize,
    seed: u64,
) -> Result<TraceReport, DecompError> {
    if !(r > 0.0 && grid_step >= 0.0 && trials > 0) {
        return Err(DecompError::BadParameter(format!(
            "need r > 0, grid_step >= 0 and trials > 0; got {r}, {grid_step}, {trials}"
        )));
    }
    let draws: Vec<Result<Option<(CellTag, DVector<f64>)>, DecompError>> = (0..trials as u64)
        .into_par_iter()
        .map(|t| {
            let (q, _) = stopped_walk(mu, kappa, child_seed(seed, t))?;
            let (h, cell) = round_element(&q, grid_step)?;
            if cell == CellTag::Exact {
                return Ok(None);
            }
            let u = log_map(&h.inverse().compose(&q))?;
            Ok((u.norm() <= r).then(|| (cell, u.coords())))
        })
        .collect();
    let mut groups: BTreeMap<CellTag, Vec<DVector<f64>>> = BTreeMap::new();
    let mut zeroed = 0usize;
    for d in draws {
        match d? {
            Some((cell, u)) => groups.entry(cell).or_default().push(u),
            None => zeroed += 1,
        }
    }
    let ell = algebra_dim(mu.dim());
    let mut acc = 0.0;
    for us in groups.values().filter(|v| v.len() >= 2) {
        let n = us.len() as f64;
        let mean = us.iter().fold(DVector::zeros(ell), |a, u| a + (u - &us[0])) / n;
        let ss: f64 = us.iter().map(|u| (u - &us[0] - &mean).norm_squared()).sum();
        acc += ss / (n - 1.0) * n;
    }
    let t = acc / trials as f64 / (r * r);
    let zeroed_mass = zeroed as f64 / trials as f64;
    let warning =
        (zeroed_mass > 0.5).then(|| format!("{:.0}% of draws had |U| > r and were zeroed", 100.0 * zeroed_mass));
    Ok(TraceReport {
        kappa,
        r,
        grid_step,
        trials,
        t,
        zeroed_mass,
        cells: groups.len(),
        warning,
    })
}

// ---------------------------------------------------------------------------
// Taylor linearization

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaylorReport {
    pub n: usize,
    pub r: f64,
    /// `rho(g_1 ... g_n)`.
    pub rho_product: f64,
    pub exact_x: Vec<f64>,
    pub linear_s: Vec<f64>,
    pub error: f64,
    /// `error / (rho^-1 r^2)`.
    pub normalized: f64,
    /// `normalized^(1/n)`: the smallest `C` with `error <= C^n rho^-1 r^2`.
    pub bound_constant: f64,
}

/// `x = g_1 exp(u_1) ... g_n exp(u_n) v` against its linearization
/// `S = g_1 ... g_n v + sum_i rho(g_1..g_i) U(g_1..g_i) psi_{g_{i+1}..g_n v}(u_i)`.
pub fn taylor_linearize(
    g: &[SimElement],
    u: &[LieVector],
    v: &[f64],
    r: f64,
    a: f64,
) -> Result<TaylorReport, DecompError> {
    let n = g.len();
    let pre = |msg: String| Err(DecompError::PreconditionViolation(msg));
    if n == 0 || u.len() != n {
        return pre(format!(
            "need n >= 1 elements and as many perturbations, got {n} and {}",
            u.len()
        ));
    }
    if !(r > 0.0 && r < 1.0) {
        return pre(format!("r in (0, 1) fails: r = {r}"));
    }
    let vn = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if vn > a {
        return pre(format!("|v| <= A fails: |v| = {vn}, A = {a}"));
    }
    let mut prods = Vec::with_capacity(n);
    let mut acc = SimElement::identity(g[0].dim());
    for (i, gi) in g.iter().enumerate() {
        if !(gi.rho() < 1.0) {
            return pre(format!("rho(g_{}) < 1 fails: rho = {}", i + 1, gi.rho()));
        }
        if gi.trans().norm() > a {
            return pre(format!("|b(g_{})| <= A fails: |b| = {}", i + 1, gi.trans().norm()));
        }
        acc = acc.compose(gi);
        let bound = r / acc.rho();
        if !(bound < 1.0) {
            return pre(format!("rho(g_1..g_{})^-1 r < 1 fails: {bound}", i + 1));
        }
        let un = u[i].norm();
        if un > bound * (1.0 + 1e-12) {
            return pre(format!(
                "|u_{}| <= rho(g_1..g_{})^-1 r fails: {un} > {bound}",
                i + 1,
                i + 1
            ));
        }
        prods.push(acc.clone());
    }
    let vv = DVector::from_column_slice(v);
    let x = g
        .iter()
        .zip(u)
        .fold(SimElement::identity(g[0].dim()), |acc, (gi, ui)| {
            acc.compose(gi).compose(&exp_map(ui))
        })
        .apply(&vv);
    // tails[i] = g_{i+1} ... g_n v
    let mut tails = vec![vv.clone(); n];
    for i in (0..n.saturating_sub(1)).rev() {
        tails[i] = g[i + 1].apply(&tails[i + 1]);
    }
    let mut s = prods[n - 1].apply(&vv);
    for i in 0..n {
        s += prods[i].rot() * differential_psi(&tails[i], &u[i]) * prods[i].rho();
    }
    let error = (&x - &s).norm();
    let rho_product = prods[n - 1].rho();
    let normalized = error / (r * r / rho_product);
    Ok(TaylorReport {
        n,
        r,
        rho_product,
        exact_x: x.iter().copied().collect(),
        linear_s: s.iter().copied().collect(),
        error,
        normalized,
        bound_constant: normalized.powf(1.0 / n as f64),
    })
}

#[derive(Debug, Clone)]
pub struct TaylorInstance {
    pub g: Vec<SimElement>,
    pub u: Vec<LieVector>,
    pub v: Vec<f64>,
}

impl TaylorInstance {
    /// The same instance with every perturbation scaled by `t`.
    pub fn scaled(&self, t: f64) -> Self {
        Self {
            g: self.g.clone(),
            u: self.u.iter().map(|x| x.scaled(t)).collect(),
            v: self.v.clone(),
        }
    }
}

fn random_rotation<R: Rng + ?Sized>(d: usize, rng: &mut R) -> DMatrix<f64> {
    let tau = 2.0 * std::f64::consts::PI;
    match d {
        1 => DMatrix::from_element(1, 1, if rng.random::<bool>() { 1.0 } else { -1.0 }),
        2 => rotation_2d(tau * rng.random::<f64>()),
        _ => rotation_3d_xyz(
            tau * rng.random::<f64>(),
            tau * rng.random::<f64>(),
            tau * rng.random::<f64>(),
        ),
    }
}

fn random_in_ball<R: Rng + ?Sized>(d: usize, radius: f64, rng: &mut R) -> Vec<f64> {
    loop {
        let p: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        if p.iter().map(|x| x * x).sum::<f64>() <= 1.0 {
            return p.into_iter().map(|x| x * radius).collect();
        }
    }
}

/// Admissible input: `rho(g_i)` uniform in `[0.5, 0.95]`, `|b(g_i)|, |v| <= A`,
/// `|u_i|` uniform up to `rho(g_1..g_i)^-1 r`. Requires `2^n r < 1` (d <= 3).
pub fn random_taylor_instance<R: Rng + ?Sized>(d: usize, n: usize, r: f64, a: f64, rng: &mut R) -> TaylorInstance {
    let mut g = Vec::with_capacity(n);
    let mut u = Vec::with_capacity(n);
    let mut rho = 1.0;
    let ell = algebra_dim(d);
    for _ in 0..n {
        let gi = SimElement::new(
            rng.random_range(0.5..0.95),
            random_rotation(d, rng),
            DVector::from_vec(random_in_ball(d, a, rng)),
        )
        .expect("valid similarity");
        rho *= gi.rho();
        let dir = random_in_ball(ell, 1.0, rng);
        let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
        let len = rng.random::<f64>() * r / rho;
        let coords: Vec<f64> = dir.iter().map(|x| x / norm * len).collect();
        u.push(LieVector::from_coords(d, &coords).expect("coordinates of the right length"));
        g.push(gi);
    }
    TaylorInstance {
        g,
        u,
        v: random_in_ball(d, a, rng),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaylorSuite {
    pub trials: usize,
    pub r: f64,
    pub a: f64,
    /// Calibrated `C` (safety factor included).
    pub fitted_c: f64,
    /// Largest `error / (C^n rho^-1 r^2)` on the test batch.
    pub max_bound_ratio: f64,
    pub violations: usize,
    /// `median(error at r) / median(error at r/2)`.
    pub halving_ratio: f64,
}

fn taylor_batch(trials: usize, r: f64, a: f64, seed: u64) -> Vec<TaylorInstance> {
    (0..trials as u64)
        .map(|t| {
            let mut rng = stream_rng(seed, t);
            let d = rng.random_range(1..=3usize);
            let n = rng.random_range(1..=5usize);
            random_taylor_instance(d, n, r, a, &mut rng)
        })
        .collect()
}

fn run_batch(batch: &[TaylorInstance], r: f64, a: f64) -> Result<Vec<TaylorReport>, DecompError> {
    batch
        .par_iter()
        .map(|i| taylor_linearize(&i.g, &i.u, &i.v, r, a))
        .collect()
}

fn median(mut x: Vec<f64>) -> f64 {
    x.sort_by(f64::total_cmp);
    let n = x.len();
    if n % 2 == 1 {
        x[n / 2]
    } else {
        0.5 * (x[n / 2 - 1] + x[n / 2])
    }
}

/// Fits `C` on a calibration batch, then checks `error <= C^n rho^-1 r^2` on an
/// independent batch of `trials` instances with `n <= 5`, `d <= 3`, and
/// measures the error drop when all perturbations and `r` are halved.
pub fn taylor_suite(trials: usize, r: f64, a: f64, seed: u64) -> Result<TaylorSuite, DecompError> {
    if !(r > 0.0 && r * 32.0 < 1.0) {
        return Err(DecompError::BadParameter(format!(
            "need 0 < r < 1/32 for n <= 5, got {r}"
        )));
    }
    let calib = run_batch(&taylor_batch(trials, r, a, child_seed(seed, 1)), r, a)?;
    let fitted_c = TAYLOR_SAFETY * calib.iter().map(|t| t.bound_constant).fold(0.0, f64::max).max(1e-300);
    let batch = taylor_batch(trials, r, a, child_seed(seed, 2));
    let reports = run_batch(&batch, r, a)?;
    let ratios: Vec<f64> = reports
        .iter()
        .map(|t| t.normalized / fitted_c.powi(t.n as i32))
        .collect();
    let halved: Vec<TaylorInstance> = batch.iter().map(|i| i.scaled(0.5)).collect();
    let half = run_batch(&halved, r / 2.0, a)?;
    Ok(TaylorSuite {
        trials,
        r,
        a,
        fitted_c,
        max_bound_ratio: ratios.iter().copied().fold(0.0, f64::max),
        violations: ratios.iter().filter(|&&x| x > 1.0).count(),
        halving_ratio: median(reports.iter().map(|t| t.error).collect())
            / median(half.iter().map(|t| t.error).collect()),
    })
}
