//! Finitely supported probability measures on Sim(R^d) and their exact invariants.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::sim_group::{metric_dist, SimElement};

pub const WEIGHT_SUM_TOL: f64 = 1e-12;
pub const ATOM_DEDUP_TOL: f64 = 1e-9;
/// Condition-number guard for per-atom fixed-point systems.
pub const FIXED_POINT_COND_GUARD: f64 = 1e12;
pub const DEFAULT_IRREDUCIBILITY_TRIALS: usize = 64;
pub const DEFAULT_IRREDUCIBILITY_TOL: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeasureError {
    #[error("measure has no atoms")]
    Empty,
    #[error("{atoms} atoms but {weights} weights")]
    LengthMismatch { atoms: usize, weights: usize },
    #[error("weight {index} is not positive: {value}")]
    NonPositiveWeight { index: usize, value: f64 },
    #[error("weights sum to {0}, expected 1")]
    NotNormalized(f64),
    #[error("atoms {0} and {1} coincide within the dedup tolerance")]
    DuplicateAtom(usize, usize),
    #[error("atoms live in different dimensions")]
    MixedDimensions,
    #[error("atom {index} is a pure translation by a nonzero vector and has no fixed point")]
    DegenerateAtom { index: usize },
}

/// `mu = sum_i w_i delta_{g_i}`.
#[derive(Debug, Clone)]
pub struct FiniteMeasure {
    atoms: Vec<SimElement>,
    weights: Vec<f64>,
    cumulative: Vec<f64>,
}

impl FiniteMeasure {
    pub fn new(atoms: Vec<SimElement>, weights: Vec<f64>) -> Result<Self, MeasureError> {
        if atoms.is_empty() {
            return Err(MeasureError::Empty);
        }
        if atoms.len() != weights.len() {
            return Err(MeasureError::LengthMismatch {
                atoms: atoms.len(),
                weights: weights.len(),
            });
        }
        let d = atoms[0].dim();
        if atoms.iter().any(|a| a.dim() != d) {
            return Err(MeasureError::MixedDimensions);
        }
        for (index, &value) in weights.iter().enumerate() {
            if !(value.is_finite() && value > 0.0) {
                return Err(MeasureError::NonPositiveWeight { index, value });
            }
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(MeasureError::NotNormalized(total));
        }
        for i in 0..atoms.len() {
            for j in (i + 1)..atoms.len() {
                if metric_dist(&atoms[i], &atoms[j]) <= ATOM_DEDUP_TOL {
                    return Err(MeasureError::DuplicateAtom(i, j));
                }
            }
        }
        let mut acc = 0.0;
        let cumulative = weights
            .iter()
            .map(|w| {
                acc += w / total;
                acc
            })
            .collect();
        Ok(Self {
            atoms,
            weights,
            cumulative,
        })
    }

    /// Like [`FiniteMeasure::new`] but rescales positive weights to sum to one.
    pub fn normalized(atoms: Vec<SimElement>, weights: Vec<f64>) -> Result<Self, MeasureError> {
        for (index, &value) in weights.iter().enumerate() {
            if !(value.is_finite() && value > 0.0) {
                return Err(MeasureError::NonPositiveWeight { index, value });
            }
        }
        let total: f64 = weights.iter().sum();
        Self::new(atoms, weights.iter().map(|w| w / total).collect())
    }

    /// Equal weights on the given atoms.
    pub fn uniform(atoms: Vec<SimElement>) -> Result<Self, MeasureError> {
        let n = atoms.len().max(1);
        Self::new(atoms, vec![1.0 / n as f64; n])
    }

    pub fn atoms(&self) -> &[SimElement] {
        &self.atoms
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.atoms[0].dim()
    }

    /// Inverse-CDF draw of an atom index from a uniform variate in `[0, 1)`.
    pub fn index_for(&self, u: f64) -> usize {
        let idx = self.cumulative.partition_point(|&c| c <= u);
        idx.min(self.atoms.len() - 1)
    }

    pub fn sample_index<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.index_for(rng.random::<f64>())
    }

    /// `(min rho, max rho)` over the support.
    pub fn rho_range(&self) -> (f64, f64) {
        self.atoms
            .iter()
            .fold((f64::INFINITY, 0.0), |(lo, hi), a| (lo.min(a.rho()), hi.max(a.rho())))
    }

    /// Smallest `R >= 1` with every `rho(g)` in `[R^-1, R]`.
    pub fn rho_bound(&self) -> f64 {
        let (lo, hi) = self.rho_range();
        hi.max(1.0 / lo).max(1.0)
    }

    pub fn lyapunov_exponent(&self) -> f64 {
        lyapunov_exponent(self)
    }
}

/// `chi_mu = sum_i w_i log rho(g_i)`.
pub fn lyapunov_exponent(mu: &FiniteMeasure) -> f64 {
    mu.atoms.iter().zip(&mu.weights).map(|(a, w)| w * a.log_rho()).sum()
}

pub fn is_contracting_on_average(mu: &FiniteMeasure) -> bool {
    lyapunov_exponent(mu) < 0.0
}

/// A point fixed (within `tol`) by every atom, if one exists.
///
/// Solves the stacked system `(I - rho_i U_i) x = b_i` in the least-squares
/// sense and accepts the minimum-norm solution when every residual is within
/// `tol`.
pub fn common_fixed_point(mu: &FiniteMeasure, tol: f64) -> Result<Option<DVector<f64>>, MeasureError> {
    let d = mu.dim();
    let eye = DMatrix::<f64>::identity(d, d);
    for (index, atom) in mu.atoms.iter().enumerate() {
        let lin = &eye - atom.rot() * atom.rho();
        let sv = lin.clone().singular_values();
        let smax = sv.max();
        let smin = sv.min();
        let singular = smin <= smax.max(1.0) / FIXED_POINT_COND_GUARD;
        let pure_translation = (atom.rho() - 1.0).abs() <= 1e-12 && (atom.rot() - &eye).amax() <= 1e-12;
        if singular && pure_translation && atom.trans().norm() > tol {
            return Err(MeasureError::DegenerateAtom { index });
        }
    }
    let n = mu.len();
    let mut a = DMatrix::zeros(n * d, d);
    let mut rhs = DVector::zeros(n * d);
    for (k, atom) in mu.atoms.iter().enumerate() {
        let lin = &eye - atom.rot() * atom.rho();
        a.view_mut((k * d, 0), (d, d)).copy_from(&lin);
        rhs.rows_mut(k * d, d).copy_from(atom.trans());
    }
    let svd = a.svd(true, true);
    let x = svd.solve(&rhs, 1e-12).unwrap_or_else(|_| DVector::zeros(d));
    let ok = mu.atoms.iter().all(|g| (g.apply(&x) - &x).norm() <= tol);
    Ok(ok.then_some(x))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum IrreducibilityVerdict {
    Irreducible,
    /// Orthonormal basis (as columns) of a proper invariant subspace.
    ReducibleWithWitness {
        basis: Vec<Vec<f64>>,
    },
    Inconclusive {
        reason: String,
    },
}

impl IrreducibilityVerdict {
    pub fn is_irreducible(&self) -> bool {
        matches!(self, IrreducibilityVerdict::Irreducible)
    }

    pub fn witness(&self) -> Option<DMatrix<f64>> {
        match self {
            IrreducibilityVerdict::ReducibleWithWitness { basis } => {
                let d = basis.first().map_or(0, |c| c.len());
                Some(DMatrix::from_fn(d, basis.len(), |i, j| basis[j][i]))
            }
            _ => None,
        }
    }
}

/// `max_i |(I - P_E) U_i P_E|` for the orthonormal basis `e` of `E`.
pub fn invariance_defect(rotations: &[DMatrix<f64>], e: &DMatrix<f64>) -> f64 {
    let d = e.nrows();
    let proj = e * e.transpose();
    let comp = DMatrix::<f64>::identity(d, d) - &proj;
    rotations
        .iter()
        .map(|u| crate::sim_group::operator_norm(&(&comp * u * &proj)))
        .fold(0.0, f64::max)
}

/// Randomized search for a proper subspace invariant under every `U(g_i)`.
///
/// Each round diagonalizes a random symmetric element `sum c_j (M_j + M_j^T)`
/// of the algebra generated by the rotations (products up to length 3); a
/// common invariant subspace of an orthogonal family is a sum of eigenvectors of
/// such an element, so every proper span of eigenvectors is tested.
pub fn is_irreducible(mu: &FiniteMeasure, tol: f64, trials: usize, seed: u64) -> IrreducibilityVerdict {
    let d = mu.dim();
    if d == 1 {
        return IrreducibilityVerdict::Irreducible;
    }
    let rotations: Vec<DMatrix<f64>> = mu.atoms.iter().map(|a| a.rot().clone()).collect();
    let mut words = rotations.clone();
    for a in &rotations {
        for b in &rotations {
            words.push(a * b);
            for c in &rotations {
                words.push(a * b * c);
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..trials.max(1) {
        let mut sym = DMatrix::<f64>::zeros(d, d);
        for w in &words {
            let c: f64 = rng.random::<f64>() * 2.0 - 1.0;
            sym += (w + w.transpose()) * c;
        }
        // A random orthogonal conjugation of degenerate eigenspaces so repeated
        // rounds probe different bases there.
        let jitter = DMatrix::from_fn(d, d, |_, _| rng.random::<f64>() - 0.5);
        let jitter = (&jitter + jitter.transpose()) * 1e-3;
        let eig = SymmetricEigen::new(sym.clone());
        if eig.eigenvalues.iter().any(|v| !v.is_finite()) {
            return IrreducibilityVerdict::Inconclusive {
                reason: "eigen-decomposition produced non-finite values".into(),
            };
        }
        let mut bases = vec![eig.eigenvectors.clone()];
        let spread = eig.eigenvalues.amax().max(1.0);
        let degenerate =
            (0..d).any(|i| (i + 1..d).any(|j| (eig.eigenvalues[i] - eig.eigenvalues[j]).abs() <= 1e-9 * spread));
        if degenerate {
            bases.push(SymmetricEigen::new(sym + jitter * spread).eigenvectors);
        }
        for basis in bases {
            if let Some(w) = search_spans(&rotations, &basis, tol) {
                return w;
            }
        }
    }
    IrreducibilityVerdict::Irreducible
}

fn search_spans(rotations: &[DMatrix<f64>], basis: &DMatrix<f64>, tol: f64) -> Option<IrreducibilityVerdict> {
    let d = basis.nrows();
    let limit = if d <= 12 { 1usize << d } else { 0 };
    let candidates: Box<dyn Iterator<Item = Vec<usize>>> = if limit > 0 {
        Box::new((1..limit - 1).map(move |mask| (0..d).filter(|i| mask & (1 << i) != 0).collect()))
    } else {
        Box::new((1..d).map(|k| (0..k).collect()))
    };
    let mut best: Option<(usize, DMatrix<f64>)> = None;
    for cols in candidates {
        let e = DMatrix::from_fn(d, cols.len(), |i, j| basis[(i, cols[j])]);
        if invariance_defect(rotations, &e) <= tol && best.as_ref().is_none_or(|(k, _)| cols.len() < *k) {
            best = Some((cols.len(), e));
        }
    }
    best.map(|(_, e)| {
        // Re-verified above; report the smallest witness found.
        IrreducibilityVerdict::ReducibleWithWitness {
            basis: (0..e.ncols()).map(|j| e.column(j).iter().copied().collect()).collect(),
        }
    })
}

/// Radius of a closed ball containing the attractor when every atom contracts.
pub fn attractor_radius_bound(mu: &FiniteMeasure) -> f64 {
    let (_, max_rho) = mu.rho_range();
    if max_rho >= 1.0 {
        return f64::INFINITY;
    }
    let max_b = mu.atoms.iter().map(|a| a.trans().norm()).fold(0.0, f64::max);
    max_b / (1.0 - max_rho)
}

/// Exact invariants of a measure plus entropy-rate upper bounds.
#[derive(Debug, Clone, Serialize)]
pub struct MeasureProfile {
    pub dim: usize,
    pub lyapunov: f64,
    pub rho_range: (f64, f64),
    /// `H(mu^{*n}) / n` for `n = 1, 2, ...`.
    pub entropy_upper: Vec<f64>,
    pub irreducible: IrreducibilityVerdict,
    pub fixed_point: Option<Vec<f64>>,
    pub contracting_on_average: bool,
}

impl MeasureProfile {
    /// Last computed entropy bound, the reported estimate of `h_mu`.
    pub fn entropy_estimate(&self) -> Option<f64> {
        self.entropy_upper.last().copied()
    }
}

/// Profile with the given entropy table (from the semigroup enumerator).
pub fn measure_profile(mu: &FiniteMeasure, entropy_upper: Vec<f64>, seed: u64) -> MeasureProfile {
    let fixed_point = common_fixed_point(mu, 1e-9)
        .ok()
        .flatten()
        .map(|x| x.iter().copied().collect());
    MeasureProfile {
        dim: mu.dim(),
        lyapunov: lyapunov_exponent(mu),
        rho_range: mu.rho_range(),
        entropy_upper,
        irreducible: is_irreducible(mu, DEFAULT_IRREDUCIBILITY_TOL, DEFAULT_IRREDUCIBILITY_TRIALS, seed),
        fixed_point,
        contracting_on_average: is_contracting_on_average(mu),
    }
}
