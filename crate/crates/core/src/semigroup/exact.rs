//! Exact enumeration for `d = 1` systems `x -> rho * s * x + b` with `s = +-1`.
//!
//! Coefficients live in an exact field (the rationals, or `Q(sqrt 5)` for the
//! golden-ratio Bernoulli convolution), so word collisions are decided exactly
//! and distances between elements with equal `rho` and sign are exact.

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt::{self, Debug, Display};
use std::hash::Hash;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rayon::prelude::*;

use super::{
    delta_n, entropy_of, stride, EnumerationConfig, GenerationSource, GenerationSummary, SemigroupError, UnionIndex,
    WeightedElementSet,
};
use crate::measure::{FiniteMeasure, MeasureError};
use crate::sim_group::SimElement;

/// Exact ordered field used for coefficients.
pub trait ExactField: Clone + Eq + Hash + Ord + Display + Debug + Send + Sync {
    fn zero() -> Self;
    fn one() -> Self;
    fn add(&self, other: &Self) -> Self;
    fn sub(&self, other: &Self) -> Self;
    fn mul(&self, other: &Self) -> Self;
    fn neg(&self) -> Self;
    fn to_f64(&self) -> f64;
    fn parse(s: &str) -> Result<Self, SemigroupError>;

    fn abs(&self) -> Self {
        if *self < Self::zero() {
            self.neg()
        } else {
            self.clone()
        }
    }
}

/// Parses `"3"`, `"-1/3"`, `"0.25"` or `"1.5/7"` as an exact rational.
pub fn parse_rational(s: &str) -> Result<BigRational, SemigroupError> {
    let s = s.trim();
    let err = || SemigroupError::Parse(s.to_string());
    if s.is_empty() {
        return Err(err());
    }
    if let Some((p, q)) = s.split_once('/') {
        let q = parse_rational(q)?;
        if q.is_zero() {
            return Err(err());
        }
        return Ok(parse_rational(p)? / q);
    }
    let (neg, body) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s.strip_prefix('+').unwrap_or(s)),
    };
    let (int_part, frac_part) = body.split_once('.').unwrap_or((body, ""));
    if int_part.is_empty() && frac_part.is_empty() {
        return Err(err());
    }
    let digits = format!("{int_part}{frac_part}");
    if !digits.chars().all(|c| c.is_ascii_digit()) {
        return Err(err());
    }
    let num: BigInt = digits.parse().map_err(|_| err())?;
    let den = num_traits::pow(BigInt::from(10), frac_part.len());
    let v = BigRational::new(num, den);
    Ok(if neg { -v } else { v })
}

impl ExactField for BigRational {
    fn zero() -> Self {
        Zero::zero()
    }
    fn one() -> Self {
        One::one()
    }
    fn add(&self, other: &Self) -> Self {
        self + other
    }
    fn sub(&self, other: &Self) -> Self {
        self - other
    }
    fn mul(&self, other: &Self) -> Self {
        self * other
    }
    fn neg(&self) -> Self {
        -self
    }
    fn to_f64(&self) -> f64 {
        ToPrimitive::to_f64(self).unwrap_or(f64::NAN)
    }
    fn parse(s: &str) -> Result<Self, SemigroupError> {
        parse_rational(s)
    }
}

/// `a + b sqrt(5)` with rational `a`, `b`.
#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub struct QSqrt5 {
    pub a: BigRational,
    pub b: BigRational,
}

impl QSqrt5 {
    pub fn new(a: BigRational, b: BigRational) -> Self {
        Self { a, b }
    }

    /// `1 / phi = (sqrt 5 - 1) / 2`.
    pub fn inverse_golden() -> Self {
        let half = BigRational::new(1.into(), 2.into());
        Self::new(-half.clone(), half)
    }

    fn signum(&self) -> Ordering {
        let (sa, sb) = (self.a.cmp(&Zero::zero()), self.b.cmp(&Zero::zero()));
        match (sa, sb) {
            (Ordering::Equal, s) | (s, Ordering::Equal) => s,
            (x, y) if x == y => x,
            (sa, _) => {
                // Opposite signs: compare a^2 with 5 b^2.
                let a2 = &self.a * &self.a;
                let b2 = &self.b * &self.b * BigRational::from_integer(5.into());
                match a2.cmp(&b2) {
                    Ordering::Greater => sa,
                    Ordering::Less => sa.reverse(),
                    Ordering::Equal => Ordering::Equal,
                }
            }
        }
    }
}

impl PartialOrd for QSqrt5 {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for QSqrt5 {
    fn cmp(&self, other: &Self) -> Ordering {
        ExactField::sub(self, other).signum()
    }
}

impl Display for QSqrt5 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.a.is_zero(), self.b.is_zero()) {
            (_, true) => write!(f, "{}", self.a),
            (true, false) => write!(f, "{}*sqrt5", self.b),
            (false, false) if self.b.is_negative() => write!(f, "{} - {}*sqrt5", self.a, -&self.b),
            _ => write!(f, "{} + {}*sqrt5", self.a, self.b),
        }
    }
}

fn rat_f64(x: &BigRational) -> f64 {
    ToPrimitive::to_f64(x).unwrap_or(f64::NAN)
}

impl ExactField for QSqrt5 {
    fn zero() -> Self {
        Self::new(Zero::zero(), Zero::zero())
    }
    fn one() -> Self {
        Self::new(One::one(), Zero::zero())
    }
    fn add(&self, o: &Self) -> Self {
        Self::new(&self.a + &o.a, &self.b + &o.b)
    }
    fn sub(&self, o: &Self) -> Self {
        Self::new(&self.a - &o.a, &self.b - &o.b)
    }
    fn mul(&self, o: &Self) -> Self {
        let five = BigRational::from_integer(5.into());
        Self::new(&self.a * &o.a + five * &self.b * &o.b, &self.a * &o.b + &self.b * &o.a)
    }
    fn neg(&self) -> Self {
        Self::new(-&self.a, -&self.b)
    }
    fn to_f64(&self) -> f64 {
        let s5 = 5f64.sqrt();
        if self.a.is_positive() == self.b.is_negative() && !self.a.is_zero() && !self.b.is_zero() {
            // a + b sqrt5 = (a^2 - 5 b^2) / (a - b sqrt5) avoids cancellation.
            let norm = &self.a * &self.a - &self.b * &self.b * BigRational::from_integer(5.into());
            rat_f64(&norm) / (rat_f64(&self.a) - rat_f64(&self.b) * s5)
        } else {
            rat_f64(&self.a) + rat_f64(&self.b) * s5
        }
    }
    /// Sums of terms `q`, `q*sqrt5`, `sqrt5`, `sqrt5/q` or `q*sqrt5/q'`.
    fn parse(s: &str) -> Result<Self, SemigroupError> {
        let compact: String = s.chars().filter(|c| !c.is_whitespace()).collect();
        let err = || SemigroupError::Parse(s.to_string());
        if compact.is_empty() {
            return Err(err());
        }
        let mut terms = Vec::new();
        let mut start = 0;
        for (i, c) in compact.char_indices() {
            if (c == '+' || c == '-') && i > 0 {
                terms.push(&compact[start..i]);
                start = i;
            }
        }
        terms.push(&compact[start..]);
        let mut out = Self::zero();
        for term in terms {
            let (sign, body) = match term.strip_prefix('-') {
                Some(rest) => (-<BigRational as One>::one(), rest),
                None => (<BigRational as One>::one(), term.strip_prefix('+').unwrap_or(term)),
            };
            if let Some(pos) = body.find("sqrt5") {
                let coef = match &body[..pos] {
                    "" => <BigRational as One>::one(),
                    c => parse_rational(c.strip_suffix('*').ok_or_else(err)?)?,
                };
                let div = match &body[pos + 5..] {
                    "" => <BigRational as One>::one(),
                    rest => parse_rational(rest.strip_prefix('/').ok_or_else(err)?)?,
                };
                if div.is_zero() {
                    return Err(err());
                }
                out.b += sign * coef / div;
            } else {
                out.a += sign * parse_rational(body)?;
            }
        }
        Ok(out)
    }
}

/// `x -> sign * rho * x + trans`.
#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub struct ExactSim<F: ExactField> {
    pub rho: F,
    pub sign: i8,
    pub trans: F,
}

impl<F: ExactField> ExactSim<F> {
    pub fn new(rho: F, sign: i8, trans: F) -> Result<Self, SemigroupError> {
        if rho <= F::zero() {
            return Err(SemigroupError::NonPositiveScale);
        }
        Ok(Self {
            rho,
            sign: if sign < 0 { -1 } else { 1 },
            trans,
        })
    }

    pub fn identity() -> Self {
        Self {
            rho: F::one(),
            sign: 1,
            trans: F::zero(),
        }
    }

    pub fn compose(&self, h: &Self) -> Self {
        let scaled = self.rho.mul(&h.trans);
        let scaled = if self.sign < 0 { scaled.neg() } else { scaled };
        Self {
            rho: self.rho.mul(&h.rho),
            sign: self.sign * h.sign,
            trans: scaled.add(&self.trans),
        }
    }

    pub fn to_sim(&self) -> SimElement {
        let rho = self.rho.to_f64();
        let mut g = SimElement::line(rho, self.trans.to_f64()).expect("positive exact scale");
        if self.sign < 0 {
            g = SimElement::from_parts_unchecked(rho, -g.rot().clone(), g.trans().clone());
        }
        g
    }

    fn flat(&self, out: &mut Vec<f64>) {
        let rho = self.rho.to_f64();
        out.extend_from_slice(&[rho, rho.ln(), self.sign as f64, self.trans.to_f64()]);
    }
}

/// Finite measure with exact atoms; weights stay floating point.
#[derive(Clone, Debug)]
pub struct ExactMeasure<F: ExactField> {
    atoms: Vec<ExactSim<F>>,
    weights: Vec<f64>,
}

impl<F: ExactField> ExactMeasure<F> {
    pub fn new(atoms: Vec<ExactSim<F>>, weights: Vec<f64>) -> Result<Self, MeasureError> {
        let float = FiniteMeasure::normalized(atoms.iter().map(ExactSim::to_sim).collect(), weights)?;
        let unique: HashSet<&ExactSim<F>> = atoms.iter().collect();
        if unique.len() != atoms.len() {
            return Err(MeasureError::DuplicateAtom(0, 1));
        }
        Ok(Self {
            atoms,
            weights: float.weights().to_vec(),
        })
    }

    pub fn atoms(&self) -> &[ExactSim<F>] {
        &self.atoms
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn to_float(&self) -> FiniteMeasure {
        FiniteMeasure::new(self.atoms.iter().map(ExactSim::to_sim).collect(), self.weights.clone())
            .expect("validated at construction")
    }
}

/// Exact generation set: representatives in first-word order and their masses.
#[derive(Clone, Debug)]
pub struct ExactGeneration<F: ExactField> {
    pub n: usize,
    pub elements: Vec<ExactSim<F>>,
    pub probs: Vec<f64>,
}

impl<F: ExactField> ExactGeneration<F> {
    pub fn to_float(&self) -> WeightedElementSet {
        let sims: Vec<SimElement> = self.elements.iter().map(ExactSim::to_sim).collect();
        WeightedElementSet::from_elements(self.n, &sims, self.probs.clone())
    }
}

/// Minimum over consecutive values of each sorted group.
fn group_min<F: ExactField>(groups: &HashMap<(F, i8), BTreeSet<F>>) -> Option<F> {
    groups
        .values()
        .flat_map(|set| {
            set.iter()
                .zip(set.iter().skip(1))
                .map(|(x, y)| y.sub(x))
                .collect::<Vec<_>>()
        })
        .min()
}

fn pick(exact: Option<F64Exact>, float: Option<f64>) -> (Option<f64>, Option<String>) {
    match (exact, float) {
        (Some((v, s)), Some(f)) if v <= f * (1.0 + 1e-12) => (Some(v), Some(s)),
        (Some((v, s)), None) => (Some(v), Some(s)),
        (_, f) => (f, None),
    }
}

type F64Exact = (f64, String);

pub struct ExactEnumerator<'a, F: ExactField> {
    mu: &'a ExactMeasure<F>,
    cfg: EnumerationConfig,
    current: ExactGeneration<F>,
    seen: HashSet<ExactSim<F>>,
    union_groups: HashMap<(F, i8), BTreeSet<F>>,
    union_exact_min: Option<F>,
    union: UnionIndex,
    float_min: Option<f64>,
}

impl<'a, F: ExactField> ExactEnumerator<'a, F> {
    pub fn new(mu: &'a ExactMeasure<F>, cfg: EnumerationConfig) -> Self {
        let id = ExactSim::<F>::identity();
        let mut union = UnionIndex::new(1, -1.0);
        let mut rec = Vec::new();
        id.flat(&mut rec);
        let float_min = union.insert_generation(rec, 1, None);
        let mut union_groups: HashMap<(F, i8), BTreeSet<F>> = HashMap::new();
        union_groups
            .entry((id.rho.clone(), id.sign))
            .or_default()
            .insert(id.trans.clone());
        Self {
            mu,
            cfg,
            current: ExactGeneration {
                n: 0,
                elements: vec![id.clone()],
                probs: vec![1.0],
            },
            seen: HashSet::from([id]),
            union_groups,
            union_exact_min: None,
            union,
            float_min,
        }
    }

    pub fn current(&self) -> &ExactGeneration<F> {
        &self.current
    }

    fn next_generation(&self) -> Result<ExactGeneration<F>, SemigroupError> {
        let prev = &self.current;
        let k = self.mu.atoms.len();
        let products = prev.elements.len() as u128 * k as u128;
        if products > self.cfg.budget as u128 {
            return Err(SemigroupError::BudgetExceeded {
                completed: prev.n,
                next: prev.n + 1,
                products,
                budget: self.cfg.budget,
            });
        }
        let prods: Vec<ExactSim<F>> = (0..prev.elements.len() * k)
            .into_par_iter()
            .map(|t| prev.elements[t / k].compose(&self.mu.atoms[t % k]))
            .collect();
        let mut index: HashMap<ExactSim<F>, usize> = HashMap::with_capacity(prods.len());
        let mut elements = Vec::new();
        let mut probs: Vec<f64> = Vec::new();
        for (t, g) in prods.into_iter().enumerate() {
            let p = prev.probs[t / k] * self.mu.weights[t % k];
            match index.get(&g) {
                Some(&i) => probs[i] += p,
                None => {
                    index.insert(g.clone(), elements.len());
                    elements.push(g);
                    probs.push(p);
                }
            }
        }
        Ok(ExactGeneration {
            n: prev.n + 1,
            elements,
            probs,
        })
    }
}

impl<F: ExactField> GenerationSource for ExactEnumerator<'_, F> {
    fn step(&mut self) -> Result<GenerationSummary, SemigroupError> {
        let next = self.next_generation()?;

        let mut groups: HashMap<(F, i8), BTreeSet<F>> = HashMap::new();
        for g in &next.elements {
            groups
                .entry((g.rho.clone(), g.sign))
                .or_default()
                .insert(g.trans.clone());
        }
        let gen_exact = group_min(&groups).map(|v| (v.to_f64(), v.to_string()));
        let float_set = next.to_float();
        let (delta, delta_exact) = pick(gen_exact, delta_n(&float_set));

        let mut fresh = Vec::new();
        let mut count = 0;
        for g in &next.elements {
            if self.seen.insert(g.clone()) {
                let set = self.union_groups.entry((g.rho.clone(), g.sign)).or_default();
                let below = set.range(..g.trans.clone()).next_back().map(|x| g.trans.sub(x));
                let above = set.range(g.trans.clone()..).next().map(|x| x.sub(&g.trans));
                for cand in [below, above].into_iter().flatten() {
                    if self.union_exact_min.as_ref().is_none_or(|m| cand < *m) {
                        self.union_exact_min = Some(cand);
                    }
                }
                set.insert(g.trans.clone());
                g.flat(&mut fresh);
                count += 1;
            }
        }
        debug_assert_eq!(fresh.len(), count * stride(1));
        self.float_min = self.union.insert_generation(fresh, count, self.float_min);
        let union_exact = self.union_exact_min.as_ref().map(|v| (v.to_f64(), v.to_string()));
        let (m, m_exact) = pick(union_exact, self.float_min);

        let row = GenerationSummary {
            n: next.n,
            support_size: next.elements.len(),
            entropy: entropy_of(&next.probs),
            delta_n: delta,
            m_n: m,
            delta_exact,
            m_exact,
        };
        self.current = next;
        Ok(row)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::semigroup::{run_generations, separation_report, Enumerator};
    use approx::assert_relative_eq;

    fn q(s: &str) -> BigRational {
        parse_rational(s).unwrap()
    }

    fn triadic() -> ExactMeasure<BigRational> {
        ExactMeasure::new(
            vec![
                ExactSim::new(q("1/3"), 1, q("1")).unwrap(),
                ExactSim::new(q("1/3"), 1, q("-1")).unwrap(),
            ],
            vec![0.5, 0.5],
        )
        .unwrap()
    }

    fn golden() -> ExactMeasure<QSqrt5> {
        let lambda = QSqrt5::inverse_golden();
        ExactMeasure::new(
            vec![
                ExactSim::new(lambda.clone(), 1, QSqrt5::one()).unwrap(),
                ExactSim::new(lambda, 1, QSqrt5::one().neg()).unwrap(),
            ],
            vec![0.5, 0.5],
        )
        .unwrap()
    }

    #[test]
    fn rational_parsing() {
        assert_eq!(q("1/3"), BigRational::new(1.into(), 3.into()));
        assert_eq!(q("-0.25"), BigRational::new((-1).into(), 4.into()));
        assert_eq!(q("1.5/3"), BigRational::new(1.into(), 2.into()));
        assert!(parse_rational("1/0").is_err());
        assert!(parse_rational("abc").is_err());
        assert!(parse_rational("").is_err());
    }

    #[test]
    fn golden_field_arithmetic() {
        let l = QSqrt5::inverse_golden();
        // lambda^2 = 1 - lambda
        assert_eq!(l.mul(&l), QSqrt5::one().sub(&l));
        assert!(l > QSqrt5::zero() && l < QSqrt5::one());
        assert_relative_eq!(l.to_f64(), (5f64.sqrt() - 1.0) / 2.0, epsilon = 1e-16);
        let mut p = QSqrt5::one();
        for _ in 0..30 {
            p = p.mul(&l);
        }
        assert_relative_eq!(p.to_f64(), ((5f64.sqrt() - 1.0) / 2.0).powi(30), max_relative = 1e-13);
        assert_eq!(QSqrt5::parse("-1/2 + 1/2*sqrt5").unwrap(), l);
        assert_eq!(QSqrt5::parse("sqrt5/2 - 0.5").unwrap(), l);
        assert_eq!(QSqrt5::parse(&l.to_string()).unwrap(), l);
        assert!(QSqrt5::parse("2*sqrt7").is_err());
        let neg = QSqrt5::parse("3 - 2*sqrt5").unwrap();
        assert!(neg < QSqrt5::zero());
        assert_eq!(neg.abs(), QSqrt5::parse("-3 + 2*sqrt5").unwrap());
    }

    #[test]
    fn triadic_exact_invariants() {
        let mu = triadic();
        let mut en = ExactEnumerator::new(&mu, EnumerationConfig::default());
        let (rows, err) = run_generations(&mut en, 10);
        assert!(err.is_none());
        for r in &rows {
            assert_eq!(r.support_size, 1 << r.n);
            assert_relative_eq!(r.entropy_rate(), 2f64.ln(), epsilon = 1e-12);
        }
        assert_eq!(rows[2].delta_exact.as_deref(), Some("2/9"));
        assert_eq!(rows[2].m_exact.as_deref(), Some("2/9"));
        assert_eq!(rows[0].delta_exact.as_deref(), Some("2"));
        let rep = separation_report(&rows, 0.01);
        assert!(rep.condition_exponential);
    }

    #[test]
    fn golden_exact_collisions() {
        let mu = golden();
        let mut en = ExactEnumerator::new(&mu, EnumerationConfig::default());
        let (rows, err) = run_generations(&mut en, 12);
        assert!(err.is_none());
        assert_eq!(rows[2].support_size, 7);
        assert_relative_eq!(rows[2].entropy, 22.0 / 8.0 * 2f64.ln(), epsilon = 1e-12);
        assert!(rows[..2].iter().all(|r| (r.entropy_rate() - 2f64.ln()).abs() < 1e-12));
        assert!(rows[2..].iter().all(|r| r.entropy_rate() < 2f64.ln() - 1e-6));
        for w in rows.windows(2) {
            assert!(w[1].m_n.unwrap() <= w[0].m_n.unwrap());
        }
    }

    #[test]
    fn exact_and_float_agree_on_golden_supports() {
        let mu = golden();
        let float_mu = mu.to_float();
        let mut ex = ExactEnumerator::new(&mu, EnumerationConfig::default());
        let mut fl = Enumerator::new(&float_mu, EnumerationConfig::default());
        let (re, _) = run_generations(&mut ex, 9);
        let (rf, _) = run_generations(&mut fl, 9);
        for (a, b) in re.iter().zip(&rf) {
            assert_eq!(a.support_size, b.support_size);
            assert_relative_eq!(a.entropy, b.entropy, epsilon = 1e-9);
            assert_relative_eq!(a.delta_n.unwrap(), b.delta_n.unwrap(), max_relative = 1e-8);
            assert_relative_eq!(a.m_n.unwrap(), b.m_n.unwrap(), max_relative = 1e-8);
        }
    }

    #[test]
    fn reflections_are_tracked_by_sign() {
        let mu = ExactMeasure::new(
            vec![
                ExactSim::new(q("1/2"), -1, q("1")).unwrap(),
                ExactSim::new(q("1/2"), 1, q("0")).unwrap(),
            ],
            vec![0.5, 0.5],
        )
        .unwrap();
        let g = &mu.atoms()[0];
        let gg = g.compose(g);
        assert_eq!(gg.sign, 1);
        assert_eq!(gg.trans, q("1/2"));
        let x = 0.7;
        let mut out = [0.0];
        gg.to_sim().apply_slice(&[x], &mut out);
        assert_relative_eq!(out[0], -0.5 * (-0.5 * x + 1.0) + 1.0, epsilon = 1e-15);
        let mut en = ExactEnumerator::new(&mu, EnumerationConfig::default());
        let (rows, _) = run_generations(&mut en, 5);
        assert_eq!(rows[0].delta_n, Some(2.0 + 1.0));
    }
}
