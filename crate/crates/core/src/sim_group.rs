//! The similarity group Sim(R^d).
//!
//! An element `g` acts by `g(x) = rho(g) U(g) x + b(g)` with `rho > 0` and `U`
//! orthogonal. The Lie algebra is `(R Id + so_d) x R^d`; an element
//! `u = (alpha, beta)` embeds into `gl_{d+1}` as the block matrix
//! `[[alpha, beta], [0, 0]]`, and the group embeds as `[[rho U, b], [0, 1]]`.
//!
//! The metric used throughout for separation and deduplication is
//!
//! ```text
//! d(g, h) = |log rho(g) - log rho(h)| + ||U(g) - U(h)||_op + |b(g) - b(h)|
//! ```

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Largest orthogonality defect `|U U^T - I|_F` repaired silently at construction.
pub const ORTHO_REPAIR_TOL: f64 = 1e-8;
/// Orthogonality defect tolerated on stored rotations.
pub const ORTHO_TOL: f64 = 1e-10;
/// `|e^{i theta} + 1|` below this counts as a rotation angle of pi.
pub const ROTATION_BRANCH_TOL: f64 = 1e-8;
const SKEW_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("contraction ratio must be positive and finite, got {0}")]
    NonPositiveScale(f64),
    #[error("rotation is not orthogonal: |U U^T - I|_F = {0:.3e}")]
    NotOrthogonal(f64),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("rotation has an eigenvalue at -1 (angle {angle:.6}); principal logarithm undefined")]
    RotationBranch { angle: f64 },
    #[error("skew part is not skew-symmetric: |K + K^T|_F = {0:.3e}")]
    NotSkew(f64),
    #[error("non-finite entry in {0}")]
    NonFinite(&'static str),
}

/// A similarity `x -> rho U x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimElement {
    rho: f64,
    rot: DMatrix<f64>,
    trans: DVector<f64>,
}

impl SimElement {
    /// Builds an element, projecting `rot` onto O(d) when it drifts by at most
    /// [`ORTHO_REPAIR_TOL`].
    pub fn new(rho: f64, rot: DMatrix<f64>, trans: DVector<f64>) -> Result<Self, SimError> {
        if !(rho.is_finite() && rho > 0.0) {
            return Err(SimError::NonPositiveScale(rho));
        }
        let d = trans.len();
        if rot.nrows() != d || rot.ncols() != d {
            return Err(SimError::DimensionMismatch {
                expected: d,
                got: rot.nrows().max(rot.ncols()),
            });
        }
        if rot.iter().chain(trans.iter()).any(|v| !v.is_finite()) {
            return Err(SimError::NonFinite("similarity"));
        }
        let defect = orthogonality_defect(&rot);
        let rot = if defect <= 1e-14 {
            rot
        } else if defect <= ORTHO_REPAIR_TOL {
            nearest_orthogonal(&rot)
        } else {
            return Err(SimError::NotOrthogonal(defect));
        };
        Ok(Self { rho, rot, trans })
    }

    pub(crate) fn from_parts_unchecked(rho: f64, rot: DMatrix<f64>, trans: DVector<f64>) -> Self {
        Self { rho, rot, trans }
    }

    pub fn identity(d: usize) -> Self {
        Self {
            rho: 1.0,
            rot: DMatrix::identity(d, d),
            trans: DVector::zeros(d),
        }
    }

    /// The map `x -> rho x + b` on the line.
    pub fn line(rho: f64, b: f64) -> Result<Self, SimError> {
        Self::new(rho, DMatrix::identity(1, 1), DVector::from_element(1, b))
    }

    /// `x -> rho x + b` with `U = I`.
    pub fn homothety(rho: f64, b: &[f64]) -> Result<Self, SimError> {
        let d = b.len();
        Self::new(rho, DMatrix::identity(d, d), DVector::from_column_slice(b))
    }

    pub fn dim(&self) -> usize {
        self.trans.len()
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn log_rho(&self) -> f64 {
        self.rho.ln()
    }

    pub fn rot(&self) -> &DMatrix<f64> {
        &self.rot
    }

    pub fn trans(&self) -> &DVector<f64> {
        &self.trans
    }

    /// `self o other`, i.e. `x -> self(other(x))`.
    pub fn compose(&self, other: &SimElement) -> SimElement {
        debug_assert_eq!(self.dim(), other.dim());
        let rot = &self.rot * &other.rot;
        let trans = (&self.rot * &other.trans) * self.rho + &self.trans;
        let rot = if self.dim() > 1 && orthogonality_defect(&rot) > 1e-12 {
            nearest_orthogonal(&rot)
        } else {
            rot
        };
        SimElement {
            rho: self.rho * other.rho,
            rot,
            trans,
        }
    }

    pub fn inverse(&self) -> SimElement {
        let rot_t = self.rot.transpose();
        let trans = -(&rot_t * &self.trans) / self.rho;
        SimElement {
            rho: 1.0 / self.rho,
            rot: rot_t,
            trans,
        }
    }

    /// `rho U x + b`.
    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        (&self.rot * x) * self.rho + &self.trans
    }

    /// Applies the map to a point given as a slice, writing into `out`.
    pub fn apply_slice(&self, x: &[f64], out: &mut [f64]) {
        let d = self.dim();
        for i in 0..d {
            let mut acc = 0.0;
            for j in 0..d {
                acc += self.rot[(i, j)] * x[j];
            }
            out[i] = self.rho * acc + self.trans[i];
        }
    }

    /// The `(d+1) x (d+1)` matrix `[[rho U, b], [0, 1]]`.
    pub fn embed_affine(&self) -> DMatrix<f64> {
        let d = self.dim();
        let mut m = DMatrix::zeros(d + 1, d + 1);
        m.view_mut((0, 0), (d, d)).copy_from(&(&self.rot * self.rho));
        m.view_mut((0, d), (d, 1)).copy_from(&self.trans);
        m[(d, d)] = 1.0;
        m
    }

    /// Reads a similarity back from its affine embedding.
    pub fn from_affine(m: &DMatrix<f64>) -> Result<SimElement, SimError> {
        let d = m.nrows().saturating_sub(1);
        if m.ncols() != d + 1 || d == 0 {
            return Err(SimError::DimensionMismatch {
                expected: d + 1,
                got: m.ncols(),
            });
        }
        let lin = m.view((0, 0), (d, d)).into_owned();
        let det = lin.determinant();
        let rho = det.abs().powf(1.0 / d as f64);
        if !(rho.is_finite() && rho > 0.0) {
            return Err(SimError::NonPositiveScale(rho));
        }
        SimElement::new(rho, lin / rho, m.view((0, d), (d, 1)).column(0).into_owned())
    }

    pub fn orthogonality_defect(&self) -> f64 {
        orthogonality_defect(&self.rot)
    }

    pub fn log(&self) -> Result<LieVector, SimError> {
        log_map(self)
    }

    pub fn exp(u: &LieVector) -> SimElement {
        exp_map(u)
    }

    /// Repeated self-composition `g^n` (`g^0` is the identity).
    pub fn pow(&self, n: usize) -> SimElement {
        let mut acc = SimElement::identity(self.dim());
        for _ in 0..n {
            acc = acc.compose(self);
        }
        acc
    }
}

/// Group distance `|log rho(g) - log rho(h)| + ||U(g) - U(h)||_op + |b(g) - b(h)|`.
pub fn metric_dist(g: &SimElement, h: &SimElement) -> f64 {
    let scale = (g.log_rho() - h.log_rho()).abs();
    let rot = operator_norm(&(&g.rot - &h.rot));
    let trans = (&g.trans - &h.trans).norm();
    scale + rot + trans
}

/// Largest singular value. Closed form for d <= 2, SVD for d = 3 and power
/// iteration on `A^T A` above that.
pub fn operator_norm(m: &DMatrix<f64>) -> f64 {
    let (r, c) = m.shape();
    if r == 0 || c == 0 {
        return 0.0;
    }
    if r == 1 && c == 1 {
        return m[(0, 0)].abs();
    }
    if r == 2 && c == 2 {
        let fro2 = m.norm_squared();
        let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
        let disc = (fro2 * fro2 - 4.0 * det * det).max(0.0);
        return ((fro2 + disc.sqrt()) / 2.0).sqrt();
    }
    if r <= 3 && c <= 3 {
        return m.clone().singular_values().max();
    }
    power_iteration_norm(m, 1e-12, 200)
}

fn power_iteration_norm(m: &DMatrix<f64>, tol: f64, max_iter: usize) -> f64 {
    let gram = m.transpose() * m;
    let n = gram.nrows();
    // Start away from any coordinate axis so that diagonal inputs converge.
    let mut v = DVector::from_fn(n, |i, _| 1.0 + 0.1 * i as f64);
    v.normalize_mut();
    let mut lambda = 0.0;
    for _ in 0..max_iter {
        let w = &gram * &v;
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        let next = w.dot(&v);
        v = w / norm;
        if (next - lambda).abs() <= tol * next.abs().max(1.0) {
            lambda = next;
            break;
        }
        lambda = next;
    }
    lambda.max(0.0).sqrt()
}

pub fn orthogonality_defect(rot: &DMatrix<f64>) -> f64 {
    let n = rot.nrows();
    (rot * rot.transpose() - DMatrix::<f64>::identity(n, n)).norm()
}

/// Polar factor `W V^T` of `M = W S V^T`.
pub fn nearest_orthogonal(m: &DMatrix<f64>) -> DMatrix<f64> {
    if m.nrows() == 1 {
        return DMatrix::from_element(1, 1, m[(0, 0)].signum());
    }
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    u * v_t
}

/// Planar rotation by `theta`.
pub fn rotation_2d(theta: f64) -> DMatrix<f64> {
    let (s, c) = theta.sin_cos();
    DMatrix::from_row_slice(2, 2, &[c, -s, s, c])
}

/// `Rz(az) Ry(ay) Rx(ax)`.
pub fn rotation_3d_xyz(ax: f64, ay: f64, az: f64) -> DMatrix<f64> {
    let (sx, cx) = ax.sin_cos();
    let (sy, cy) = ay.sin_cos();
    let (sz, cz) = az.sin_cos();
    let rx = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, cx, -sx, 0.0, sx, cx]);
    let ry = DMatrix::from_row_slice(3, 3, &[cy, 0.0, sy, 0.0, 1.0, 0.0, -sy, 0.0, cy]);
    let rz = DMatrix::from_row_slice(3, 3, &[cz, -sz, 0.0, sz, cz, 0.0, 0.0, 0.0, 1.0]);
    rz * ry * rx
}

/// Element `u = (scale Id + skew, trans)` of the Lie algebra of Sim(R^d).
#[derive(Debug, Clone, PartialEq)]
pub struct LieVector {
    scale: f64,
    skew: DMatrix<f64>,
    trans: DVector<f64>,
}

impl LieVector {
    pub fn new(scale: f64, skew: DMatrix<f64>, trans: DVector<f64>) -> Result<Self, SimError> {
        let d = trans.len();
        if skew.nrows() != d || skew.ncols() != d {
            return Err(SimError::DimensionMismatch {
                expected: d,
                got: skew.nrows(),
            });
        }
        let asym = (&skew + skew.transpose()).norm();
        if asym > SKEW_TOL {
            return Err(SimError::NotSkew(asym));
        }
        if !scale.is_finite() || skew.iter().chain(trans.iter()).any(|v| !v.is_finite()) {
            return Err(SimError::NonFinite("lie vector"));
        }
        Ok(Self { scale, skew, trans })
    }

    pub fn zero(d: usize) -> Self {
        Self {
            scale: 0.0,
            skew: DMatrix::zeros(d, d),
            trans: DVector::zeros(d),
        }
    }

    /// `(scale, 0, trans)` on the line.
    pub fn line(scale: f64, trans: f64) -> Self {
        Self {
            scale,
            skew: DMatrix::zeros(1, 1),
            trans: DVector::from_element(1, trans),
        }
    }

    pub fn dim(&self) -> usize {
        self.trans.len()
    }

    pub fn scale_part(&self) -> f64 {
        self.scale
    }

    pub fn skew_part(&self) -> &DMatrix<f64> {
        &self.skew
    }

    pub fn trans_part(&self) -> &DVector<f64> {
        &self.trans
    }

    /// `alpha = scale Id + skew`.
    pub fn alpha(&self) -> DMatrix<f64> {
        let d = self.dim();
        &self.skew + DMatrix::<f64>::identity(d, d) * self.scale
    }

    /// `[[alpha, beta], [0, 0]]`.
    pub fn embed(&self) -> DMatrix<f64> {
        let d = self.dim();
        let mut m = DMatrix::zeros(d + 1, d + 1);
        m.view_mut((0, 0), (d, d)).copy_from(&self.alpha());
        m.view_mut((0, d), (d, 1)).copy_from(&self.trans);
        m
    }

    /// Coordinates `(scale, skew[i][j] for i < j row-major, trans)`.
    pub fn coords(&self) -> DVector<f64> {
        let d = self.dim();
        let mut out = Vec::with_capacity(algebra_dim(d));
        out.push(self.scale);
        for i in 0..d {
            for j in (i + 1)..d {
                out.push(self.skew[(i, j)]);
            }
        }
        out.extend(self.trans.iter().copied());
        DVector::from_vec(out)
    }

    pub fn from_coords(d: usize, coords: &[f64]) -> Result<Self, SimError> {
        if coords.len() != algebra_dim(d) {
            return Err(SimError::DimensionMismatch {
                expected: algebra_dim(d),
                got: coords.len(),
            });
        }
        let mut skew = DMatrix::zeros(d, d);
        let mut k = 1;
        for i in 0..d {
            for j in (i + 1)..d {
                skew[(i, j)] = coords[k];
                skew[(j, i)] = -coords[k];
                k += 1;
            }
        }
        let trans = DVector::from_column_slice(&coords[k..]);
        Self::new(coords[0], skew, trans)
    }

    /// Euclidean norm of [`LieVector::coords`].
    pub fn norm(&self) -> f64 {
        self.coords().norm()
    }

    pub fn is_zero(&self) -> bool {
        self.scale == 0.0 && self.skew.iter().all(|v| *v == 0.0) && self.trans.iter().all(|v| *v == 0.0)
    }

    pub fn scaled(&self, t: f64) -> LieVector {
        LieVector {
            scale: self.scale * t,
            skew: &self.skew * t,
            trans: &self.trans * t,
        }
    }

    pub fn add(&self, other: &LieVector) -> LieVector {
        LieVector {
            scale: self.scale + other.scale,
            skew: &self.skew + &other.skew,
            trans: &self.trans + &other.trans,
        }
    }
}

/// Dimension of the Lie algebra of Sim(R^d): `1 + d(d-1)/2 + d`.
pub fn algebra_dim(d: usize) -> usize {
    1 + d * (d.saturating_sub(1)) / 2 + d
}

/// Matrix exponential of the embedded algebra element, read back as a similarity.
pub fn exp_map(u: &LieVector) -> SimElement {
    let d = u.dim();
    let rho = u.scale.exp();
    if d == 1 {
        let s = u.scale;
        let phi = if s.abs() < 1e-8 {
            1.0 + s / 2.0 + s * s / 6.0
        } else {
            s.exp_m1() / s
        };
        return SimElement::from_parts_unchecked(
            rho,
            DMatrix::identity(1, 1),
            DVector::from_element(1, phi * u.trans[0]),
        );
    }
    let e = u.embed().exp();
    let lin = e.view((0, 0), (d, d)).into_owned() / rho;
    let rot = if orthogonality_defect(&lin) > 1e-14 {
        nearest_orthogonal(&lin)
    } else {
        lin
    };
    SimElement::from_parts_unchecked(rho, rot, e.view((0, d), (d, 1)).column(0).into_owned())
}

/// Principal logarithm. Fails when `U(g)` has an eigenvalue at -1.
pub fn log_map(g: &SimElement) -> Result<LieVector, SimError> {
    let d = g.dim();
    let skew = log_rotation(g.rot())?;
    let scale = g.log_rho();
    if d == 1 {
        let phi = if scale.abs() < 1e-8 {
            1.0 + scale / 2.0 + scale * scale / 6.0
        } else {
            scale.exp_m1() / scale
        };
        return Ok(LieVector::line(scale, g.trans[0] / phi));
    }
    let alpha = &skew + DMatrix::<f64>::identity(d, d) * scale;
    let phi = phi_matrix(&alpha);
    let beta = phi
        .lu()
        .solve(g.trans())
        .ok_or(SimError::RotationBranch { angle: f64::NAN })?;
    let skew = (&skew - skew.transpose()) * 0.5;
    LieVector::new(scale, skew, beta)
}

/// `phi(alpha) = sum_k alpha^k / (k+1)!`, read off the top-right block of
/// `exp([[alpha, I], [0, 0]])`.
fn phi_matrix(alpha: &DMatrix<f64>) -> DMatrix<f64> {
    let d = alpha.nrows();
    let mut block = DMatrix::zeros(2 * d, 2 * d);
    block.view_mut((0, 0), (d, d)).copy_from(alpha);
    block
        .view_mut((0, d), (d, d))
        .copy_from(&DMatrix::<f64>::identity(d, d));
    block.exp().view((0, d), (d, d)).into_owned()
}

fn branch_check(angle: f64) -> Result<(), SimError> {
    // |e^{i theta} + 1| = 2 |cos(theta / 2)|
    if 2.0 * (angle / 2.0).cos().abs() <= ROTATION_BRANCH_TOL {
        Err(SimError::RotationBranch { angle })
    } else {
        Ok(())
    }
}

/// Principal logarithm of an orthogonal matrix via its 2x2 rotation blocks.
pub fn log_rotation(rot: &DMatrix<f64>) -> Result<DMatrix<f64>, SimError> {
    let d = rot.nrows();
    match d {
        0 => Ok(DMatrix::zeros(0, 0)),
        1 => {
            if rot[(0, 0)] < 0.0 {
                Err(SimError::RotationBranch {
                    angle: std::f64::consts::PI,
                })
            } else {
                Ok(DMatrix::zeros(1, 1))
            }
        }
        2 => {
            if rot.determinant() < 0.0 {
                return Err(SimError::RotationBranch {
                    angle: std::f64::consts::PI,
                });
            }
            let theta = rot[(1, 0)].atan2(rot[(0, 0)]);
            branch_check(theta)?;
            Ok(DMatrix::from_row_slice(2, 2, &[0.0, -theta, theta, 0.0]))
        }
        3 => log_rotation_3d(rot),
        _ => log_rotation_schur(rot),
    }
}

fn log_rotation_3d(rot: &DMatrix<f64>) -> Result<DMatrix<f64>, SimError> {
    if rot.determinant() < 0.0 {
        return Err(SimError::RotationBranch {
            angle: std::f64::consts::PI,
        });
    }
    let cos = ((rot.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    let theta = cos.acos();
    branch_check(theta)?;
    let asym = (rot - rot.transpose()) * 0.5;
    let factor = if theta < 1e-6 {
        1.0 + theta * theta / 6.0
    } else {
        theta / theta.sin()
    };
    Ok(asym * factor)
}

fn log_rotation_schur(rot: &DMatrix<f64>) -> Result<DMatrix<f64>, SimError> {
    let d = rot.nrows();
    let (q, t) = rot.clone().schur().unpack();
    let mut log_t = DMatrix::zeros(d, d);
    let mut i = 0;
    while i < d {
        let is_block = i + 1 < d && t[(i + 1, i)].abs() > 1e-14;
        if is_block {
            let c = 0.5 * (t[(i, i)] + t[(i + 1, i + 1)]);
            let s = 0.5 * (t[(i + 1, i)] - t[(i, i + 1)]);
            let theta = s.atan2(c);
            branch_check(theta)?;
            log_t[(i, i + 1)] = -theta;
            log_t[(i + 1, i)] = theta;
            i += 2;
        } else {
            if t[(i, i)] < 0.0 {
                return Err(SimError::RotationBranch {
                    angle: std::f64::consts::PI,
                });
            }
            i += 1;
        }
    }
    let k = &q * log_t * q.transpose();
    Ok((&k - k.transpose()) * 0.5)
}

/// `psi_x(u) = alpha x + beta`, the differential at zero of `u -> exp(u) x`.
pub fn differential_psi(x: &DVector<f64>, u: &LieVector) -> DVector<f64> {
    &u.skew * x + x * u.scale + &u.trans
}

/// Matrix of `psi_x` in the coordinates of [`LieVector::coords`] (`d x ell`).
pub fn psi_matrix(x: &DVector<f64>) -> DMatrix<f64> {
    let d = x.len();
    let mut m = DMatrix::zeros(d, algebra_dim(d));
    for i in 0..d {
        m[(i, 0)] = x[i];
    }
    let mut k = 1;
    for i in 0..d {
        for j in (i + 1)..d {
            // E_ij - E_ji applied to x.
            m[(i, k)] += x[j];
            m[(j, k)] -= x[i];
            k += 1;
        }
    }
    for i in 0..d {
        m[(i, k + i)] = 1.0;
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_rotation(d: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let m = DMatrix::from_fn(d, d, |_, _| rng.random::<f64>() - 0.5);
        let q = nearest_orthogonal(&m);
        if d > 1 && q.determinant() < 0.0 {
            let mut q = q;
            q.column_mut(0).neg_mut();
            q
        } else {
            q
        }
    }

    fn random_element(d: usize, rng: &mut ChaCha8Rng) -> SimElement {
        let rho = rng.random_range(0.2..3.0);
        let trans = DVector::from_fn(d, |_, _| rng.random_range(-2.0..2.0));
        SimElement::new(rho, random_rotation(d, rng), trans).unwrap()
    }

    fn random_lie(d: usize, bound: f64, rng: &mut ChaCha8Rng) -> LieVector {
        let coords: Vec<f64> = (0..algebra_dim(d)).map(|_| rng.random_range(-1.0..1.0)).collect();
        let u = LieVector::from_coords(d, &coords).unwrap();
        let n = u.norm();
        u.scaled(bound * rng.random::<f64>() / n)
    }

    #[test]
    fn compose_identity_and_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for d in 1..=3 {
            let g = random_element(d, &mut rng);
            let id = SimElement::identity(d);
            assert!(metric_dist(&id.compose(&g), &g) < 1e-15);
            assert!(metric_dist(&g.compose(&g.inverse()), &id) < 1e-12);
        }
    }

    #[test]
    fn compose_triadic_pair() {
        let g = SimElement::line(1.0 / 3.0, 1.0).unwrap();
        let h = SimElement::line(1.0 / 3.0, -1.0).unwrap();
        let gh = g.compose(&h);
        assert_relative_eq!(gh.rho(), 1.0 / 9.0, epsilon = 1e-16);
        assert_relative_eq!(gh.trans()[0], 2.0 / 3.0, epsilon = 1e-15);
        let x = DVector::from_element(1, 0.7);
        assert_relative_eq!(gh.apply(&x)[0], g.apply(&h.apply(&x))[0], epsilon = 1e-15);
    }

    #[test]
    fn apply_direct_and_similarity_property() {
        let g = SimElement::homothety(0.5, &[1.0, 0.0]).unwrap();
        let y = g.apply(&DVector::from_vec(vec![2.0, 2.0]));
        assert_eq!(y.as_slice(), &[2.0, 1.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = random_element(3, &mut rng);
        let x = DVector::from_fn(3, |_, _| rng.random::<f64>());
        let z = DVector::from_fn(3, |_, _| rng.random::<f64>());
        assert_relative_eq!(
            (g.apply(&x) - g.apply(&z)).norm(),
            g.rho() * (x - z).norm(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn metric_examples() {
        let g = SimElement::line(1.0, 0.0).unwrap();
        assert_eq!(metric_dist(&g, &g), 0.0);
        let h = SimElement::line(std::f64::consts::E, 0.0).unwrap();
        assert_relative_eq!(metric_dist(&g, &h), 1.0, epsilon = 1e-15);
        let h = SimElement::line(1.0, 3.0).unwrap();
        assert_eq!(metric_dist(&g, &h), 3.0);
    }

    #[test]
    fn metric_triangle_inequality() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let d = rng.random_range(1..=3);
            let (a, b, c) = (
                random_element(d, &mut rng),
                random_element(d, &mut rng),
                random_element(d, &mut rng),
            );
            assert!(metric_dist(&a, &c) <= metric_dist(&a, &b) + metric_dist(&b, &c) + 1e-12);
            assert_relative_eq!(metric_dist(&a, &b), metric_dist(&b, &a), epsilon = 1e-14);
        }
    }

    #[test]
    fn operator_norm_paths_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for d in 1..=5 {
            let m = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
            let svd = m.clone().singular_values().max();
            assert_relative_eq!(operator_norm(&m), svd, epsilon = 1e-9);
            assert_relative_eq!(power_iteration_norm(&m, 1e-14, 2000), svd, epsilon = 1e-6);
        }
    }

    #[test]
    fn exp_examples() {
        for d in 1..=3 {
            let e = exp_map(&LieVector::zero(d));
            assert!(metric_dist(&e, &SimElement::identity(d)) < 1e-15);
        }
        let e = exp_map(&LieVector::line(2f64.ln(), 0.0));
        assert_relative_eq!(e.rho(), 2.0, epsilon = 1e-15);
        assert_eq!(e.trans()[0], 0.0);
        // Scalar closed form agrees with the generic matrix exponential path.
        let u = LieVector::line(-0.7, 1.3);
        let generic = u.embed().exp();
        let e = exp_map(&u);
        assert_relative_eq!(generic[(0, 1)], e.trans()[0], epsilon = 1e-14);
    }

    #[test]
    fn log_examples() {
        for d in 1..=4 {
            assert!(log_map(&SimElement::identity(d)).unwrap().norm() < 1e-14);
        }
        let u = log_map(&SimElement::line(2.0, 0.0).unwrap()).unwrap();
        assert_relative_eq!(u.scale_part(), 2f64.ln(), epsilon = 1e-15);
        assert_eq!(u.trans_part()[0], 0.0);
        let half_turn = SimElement::new(1.0, rotation_2d(std::f64::consts::PI), DVector::zeros(2)).unwrap();
        assert!(matches!(log_map(&half_turn), Err(SimError::RotationBranch { .. })));
        let flip = SimElement::new(1.0, DMatrix::from_element(1, 1, -1.0), DVector::zeros(1)).unwrap();
        assert!(matches!(log_map(&flip), Err(SimError::RotationBranch { .. })));
    }

    #[test]
    fn exp_log_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..300 {
            let d = rng.random_range(1..=4);
            let u = random_lie(d, 0.5, &mut rng);
            let g = exp_map(&u);
            let back = exp_map(&log_map(&g).unwrap());
            assert!(metric_dist(&back, &g) <= 1e-9, "d={d} dist={}", metric_dist(&back, &g));
            assert!((log_map(&g).unwrap().coords() - u.coords()).norm() < 1e-9);
        }
    }

    #[test]
    fn psi_is_linear_and_matches_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for d in 1..=3 {
            let x = DVector::from_fn(d, |_, _| rng.random_range(-2.0..2.0));
            let u = random_lie(d, 1.0, &mut rng);
            let v = random_lie(d, 1.0, &mut rng);
            let (a, b) = (0.7, -1.9);
            let lhs = differential_psi(&x, &u.scaled(a).add(&v.scaled(b)));
            let rhs = differential_psi(&x, &u) * a + differential_psi(&x, &v) * b;
            assert!((lhs - rhs).norm() < 1e-12);
            let via_matrix = psi_matrix(&x) * u.coords();
            assert!((via_matrix - differential_psi(&x, &u)).norm() < 1e-12);
        }
        let u = LieVector::line(2.0, 3.0);
        assert_eq!(differential_psi(&DVector::from_element(1, 5.0), &u)[0], 13.0);
    }

    #[test]
    fn psi_is_derivative_of_exp_action() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for d in 1..=3 {
            let x = DVector::from_fn(d, |_, _| rng.random_range(-2.0..2.0));
            let u = random_lie(d, 1.0, &mut rng);
            let psi = differential_psi(&x, &u);
            let t = 1e-6;
            let fd = (exp_map(&u.scaled(t)).apply(&x) - &x) / t;
            assert!((fd - &psi).norm() <= 1e-4 * psi.norm().max(1e-300));
            // Remainder is O(t): fitted K from the smallest step bounds the others.
            let errs: Vec<f64> = [1e-3, 1e-4, 1e-5]
                .iter()
                .map(|&t| ((exp_map(&u.scaled(t)).apply(&x) - &x) / t - &psi).norm() / t)
                .collect();
            let k = errs[0];
            assert!(k.is_finite());
            for e in &errs[1..] {
                assert!(*e <= 1.5 * k && *e >= 0.6 * k, "errs {errs:?}");
            }
        }
    }

    #[test]
    fn embedding_is_homomorphism() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let g = SimElement::line(1.0 / 3.0, 1.0).unwrap();
        assert_eq!(
            g.embed_affine(),
            DMatrix::from_row_slice(2, 2, &[1.0 / 3.0, 1.0, 0.0, 1.0])
        );
        for _ in 0..200 {
            let d = rng.random_range(1..=3);
            let (a, b) = (random_element(d, &mut rng), random_element(d, &mut rng));
            let lhs = a.compose(&b).embed_affine();
            let rhs = a.embed_affine() * b.embed_affine();
            assert!((lhs - rhs).amax() < 1e-12);
            let back = SimElement::from_affine(&a.embed_affine()).unwrap();
            assert!(metric_dist(&back, &a) < 1e-12);
        }
    }

    #[test]
    fn construction_repairs_small_drift_only() {
        let mut r = rotation_2d(0.3);
        r[(0, 0)] += 1e-9;
        let g = SimElement::new(0.5, r, DVector::zeros(2)).unwrap();
        assert!(g.orthogonality_defect() < 1e-14);
        let mut r = rotation_2d(0.3);
        r[(0, 0)] += 1e-6;
        assert!(matches!(
            SimElement::new(0.5, r, DVector::zeros(2)),
            Err(SimError::NotOrthogonal(_))
        ));
        assert!(matches!(SimElement::line(0.0, 1.0), Err(SimError::NonPositiveScale(_))));
    }

    #[test]
    fn long_products_stay_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let gs: Vec<_> = (0..5).map(|_| random_element(3, &mut rng)).collect();
        let mut acc = SimElement::identity(3);
        for i in 0..5000 {
            acc = acc.compose(&gs[i % 5]);
            acc = SimElement::from_parts_unchecked(1.0, acc.rot.clone(), DVector::zeros(3));
        }
        assert!(acc.orthogonality_defect() <= ORTHO_TOL);
    }
}
