//! TOML system configs.
//!
//! ```toml
//! name = "cantor"
//! d = 1
//! seed = 7
//! exact = "rational"      # "none" (default), "rational" or "sqrt5"
//!
//! [[atoms]]
//! rho = "1/3"             # number or exact string
//! b = ["1"]
//! weight = 0.5
//! sign = 1                # d = 1 only; or angles = [..] (radians) / matrix = [[..]]
//! ```
//!
//! Optional tables `[analyze]`, `[dimension]` and `[decompose]` tune the
//! commands; every field has a default.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use num_rational::BigRational;
use serde::{Deserialize, Serialize};
use simdim_core::decomp::{BlockPlan, FloorOptions};
use simdim_core::measure::FiniteMeasure;
use simdim_core::semigroup::exact::{ExactField, ExactMeasure, ExactSim, QSqrt5};
use simdim_core::semigroup::{EnumerationConfig, DEFAULT_BUDGET};
use simdim_core::sim_group::{rotation_2d, rotation_3d_xyz, SimElement};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ExactMode {
    #[default]
    None,
    Rational,
    Sqrt5,
}

/// A number written either as a TOML number or as an exact string.
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(untagged)]
pub enum Num {
    Int(i64),
    Float(f64),
    Text(String),
}

impl Num {
    fn text(&self) -> String {
        match self {
            Num::Int(i) => i.to_string(),
            Num::Float(x) => format!("{x}"),
            Num::Text(s) => s.clone(),
        }
    }

    fn to_f64(&self, field: &str) -> Result<f64, CliError> {
        match self {
            Num::Int(i) => Ok(*i as f64),
            Num::Float(x) => Ok(*x),
            Num::Text(s) => QSqrt5::parse(s)
                .map(|v| v.to_f64())
                .map_err(|_| CliError::field(field, format!("cannot read {s:?} as a number"))),
        }
    }

    fn exact<F: ExactField>(&self, field: &str) -> Result<F, CliError> {
        let s = self.text();
        F::parse(&s).map_err(|_| CliError::field(field, format!("{s:?} is not exact in the selected field")))
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct AtomConfig {
    pub rho: Num,
    pub b: Vec<Num>,
    pub weight: Option<f64>,
    /// Orientation in d = 1.
    pub sign: Option<i8>,
    /// Rotation angles in radians: `[theta]` in d = 2, `[ax, ay, az]` (applied x, y, z) in d = 3.
    pub angles: Option<Vec<f64>>,
    /// Explicit rotation, row major.
    pub matrix: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalyzeConfig {
    pub n_max: usize,
    pub budget: u64,
    pub dedup_tol: f64,
    pub eps: f64,
}

impl Default for AnalyzeConfig {
    fn default() -> Self {
        Self {
            n_max: 10,
            budget: DEFAULT_BUDGET,
            dedup_tol: 1e-9,
            eps: 0.05,
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct DimensionConfig {
    pub samples: usize,
    pub r_min: f64,
    pub r_max: f64,
    pub scales: usize,
    /// Stopping depth; chosen from a pilot run when absent.
    pub kappa: Option<f64>,
    /// Generations enumerated for the predicted value.
    pub n_predict: usize,
    pub local_centers: usize,
    pub local_r0: f64,
    pub local_halvings: usize,
    /// Each centre's radius is jittered over `[r / w, r]` on a log scale; defaults to
    /// `exp(|chi_mu|)`. Set to 1 for fixed radii.
    pub local_window: Option<f64>,
    /// Re-centre jittered ball masses with the fitted dimension.
    pub local_anchor: bool,
}

impl Default for DimensionConfig {
    fn default() -> Self {
        Self {
            samples: 1_000_000,
            r_min: 2f64.powi(-10),
            r_max: 2f64.powi(-5),
            scales: 6,
            kappa: None,
            n_predict: 12,
            local_centers: 1000,
            local_r0: 2f64.powi(-4),
            local_halvings: 3,
            local_window: None,
            local_anchor: true,
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecomposeConfig {
    pub paths: usize,
    pub path_len: usize,
    pub blocks: usize,
    pub k: usize,
    pub f_min: Option<usize>,
    pub h_len: Option<usize>,
    pub a: f64,
    pub r: f64,
    pub grid_step: f64,
    pub f_reps: usize,
    pub h_reps: usize,
    pub bootstrap: usize,
    pub taylor_trials: usize,
    pub taylor_r: f64,
    /// Samples of the stationary measure for the Gaussian check.
    pub gaussian_samples: usize,
    pub cell_side: f64,
    pub gaussian_c: f64,
    pub gaussian_r: f64,
}

impl Default for DecomposeConfig {
    fn default() -> Self {
        Self {
            paths: 1000,
            path_len: 64,
            blocks: 3,
            k: 4,
            f_min: None,
            h_len: None,
            a: 4.0,
            r: 0.1,
            grid_step: 1.0,
            f_reps: 128,
            h_reps: 8,
            bootstrap: 100,
            taylor_trials: 2000,
            taylor_r: 0.01,
            gaussian_samples: 20_000,
            cell_side: 0.5,
            gaussian_c: 10.0,
            gaussian_r: 0.05,
        }
    }
}

impl DecomposeConfig {
    pub fn plan(&self) -> BlockPlan {
        BlockPlan {
            n: self.blocks,
            k: self.k,
            f_min: self.f_min.unwrap_or(self.k.max(1)),
            h_len: self.h_len.unwrap_or(self.k),
        }
    }

    pub fn floor_options(&self) -> FloorOptions {
        FloorOptions {
            f_reps: self.f_reps,
            h_reps: self.h_reps,
            bootstrap: self.bootstrap,
            ..FloorOptions::default()
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub name: Option<String>,
    pub d: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub exact: ExactMode,
    pub output: Option<String>,
    pub atoms: Vec<AtomConfig>,
    #[serde(default)]
    pub analyze: AnalyzeConfig,
    #[serde(default)]
    pub dimension: DimensionConfig,
    #[serde(default)]
    pub decompose: DecomposeConfig,
}

/// Parsed config plus the raw text it came from.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub system: SystemConfig,
    pub text: String,
    pub path: String,
}

pub fn parse_config(text: &str) -> Result<SystemConfig, CliError> {
    let cfg: SystemConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<LoadedConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let system = parse_config(&text).map_err(|e| match e {
        CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
        other => other,
    })?;
    Ok(LoadedConfig {
        system,
        text,
        path: path.display().to_string(),
    })
}

fn rotation(d: usize, atom: &AtomConfig, field: &str) -> Result<DMatrix<f64>, CliError> {
    let given = [atom.sign.is_some(), atom.angles.is_some(), atom.matrix.is_some()]
        .iter()
        .filter(|&&x| x)
        .count();
    if given > 1 {
        return Err(CliError::field(field, "give at most one of sign, angles, matrix"));
    }
    if let Some(m) = &atom.matrix {
        if m.len() != d || m.iter().any(|row| row.len() != d) {
            return Err(CliError::field(
                &format!("{field}.matrix"),
                format!("expected a {d}x{d} matrix"),
            ));
        }
        return Ok(DMatrix::from_fn(d, d, |i, j| m[i][j]));
    }
    if let Some(s) = atom.sign {
        if d != 1 || (s != 1 && s != -1) {
            return Err(CliError::field(
                &format!("{field}.sign"),
                "sign must be +1 or -1 and needs d = 1",
            ));
        }
        return Ok(DMatrix::from_element(1, 1, s as f64));
    }
    match (&atom.angles, d) {
        (None, _) => Ok(DMatrix::identity(d, d)),
        (Some(a), 2) if a.len() == 1 => Ok(rotation_2d(a[0])),
        (Some(a), 3) if a.len() == 3 => Ok(rotation_3d_xyz(a[0], a[1], a[2])),
        (Some(_), _) => Err(CliError::field(
            &format!("{field}.angles"),
            "angles take one value in d = 2 and three in d = 3",
        )),
    }
}

impl SystemConfig {
    fn validate(&self) -> Result<(), CliError> {
        if !(1..=3).contains(&self.d) {
            return Err(CliError::field(
                "d",
                format!("dimension must be 1, 2 or 3, got {}", self.d),
            ));
        }
        if self.atoms.is_empty() {
            return Err(CliError::field("atoms", "at least one atom is required"));
        }
        let with_weight = self.atoms.iter().filter(|a| a.weight.is_some()).count();
        if with_weight != 0 && with_weight != self.atoms.len() {
            return Err(CliError::field("atoms", "give a weight for every atom or for none"));
        }
        if self.exact != ExactMode::None && self.d != 1 {
            return Err(CliError::field("exact", "exact modes need d = 1"));
        }
        self.measure()?;
        if self.exact != ExactMode::None {
            self.check_exact()?;
        }
        Ok(())
    }

    pub fn weights(&self) -> Vec<f64> {
        self.atoms.iter().map(|a| a.weight.unwrap_or(1.0)).collect()
    }

    pub fn measure(&self) -> Result<FiniteMeasure, CliError> {
        let mut atoms = Vec::with_capacity(self.atoms.len());
        for (i, a) in self.atoms.iter().enumerate() {
            let field = format!("atoms[{i}]");
            if a.b.len() != self.d {
                return Err(CliError::field(
                    &format!("{field}.b"),
                    format!("expected {} entries, got {}", self.d, a.b.len()),
                ));
            }
            let rho = a.rho.to_f64(&format!("{field}.rho"))?;
            let b: Vec<f64> =
                a.b.iter()
                    .enumerate()
                    .map(|(j, v)| v.to_f64(&format!("{field}.b[{j}]")))
                    .collect::<Result<_, _>>()?;
            let rot = rotation(self.d, a, &field)?;
            let g =
                SimElement::new(rho, rot, DVector::from_vec(b)).map_err(|e| CliError::field(&field, e.to_string()))?;
            atoms.push(g);
        }
        FiniteMeasure::normalized(atoms, self.weights()).map_err(|e| CliError::field("atoms", e.to_string()))
    }

    fn check_exact(&self) -> Result<(), CliError> {
        match self.exact {
            ExactMode::Rational => self.exact_measure::<BigRational>().map(|_| ()),
            ExactMode::Sqrt5 => self.exact_measure::<QSqrt5>().map(|_| ()),
            ExactMode::None => Ok(()),
        }
    }

    pub fn exact_measure<F: ExactField>(&self) -> Result<ExactMeasure<F>, CliError> {
        let mut atoms = Vec::with_capacity(self.atoms.len());
        for (i, a) in self.atoms.iter().enumerate() {
            let field = format!("atoms[{i}]");
            if a.angles.is_some() || a.matrix.is_some() {
                return Err(CliError::field(&field, "exact atoms take a sign, not a rotation"));
            }
            let rho = a.rho.exact::<F>(&format!("{field}.rho"))?;
            let b = a.b[0].exact::<F>(&format!("{field}.b[0]"))?;
            let g = ExactSim::new(rho, a.sign.unwrap_or(1), b).map_err(|e| CliError::field(&field, e.to_string()))?;
            atoms.push(g);
        }
        ExactMeasure::new(atoms, self.weights()).map_err(|e| CliError::field("atoms", e.to_string()))
    }

    pub fn enumeration(&self) -> EnumerationConfig {
        EnumerationConfig {
            dedup_tol: self.analyze.dedup_tol,
            budget: self.analyze.budget,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const CANTOR: &str = r#"
name = "cantor"
d = 1
exact = "rational"

[[atoms]]
rho = "1/3"
b = ["1"]

[[atoms]]
rho = "1/3"
b = [-1]
"#;

    #[test]
    fn parses_exact_rational_config() {
        let cfg = parse_config(CANTOR).unwrap();
        let mu = cfg.measure().unwrap();
        assert_eq!(mu.len(), 2);
        assert_eq!(mu.weights(), &[0.5, 0.5]);
        assert!(cfg.exact_measure::<BigRational>().is_ok());
    }

    #[test]
    fn reports_line_of_syntax_errors() {
        let err = parse_config("d = 1\natoms = [\n  { rho = }\n]\n").unwrap_err();
        assert!(matches!(&err, CliError::Config(m) if m.contains("line 3")), "{err}");
    }

    #[test]
    fn reports_field_of_semantic_errors() {
        let text = CANTOR.replace("rho = \"1/3\"\nb = [-1]", "rho = \"-1/3\"\nb = [-1]");
        let err = parse_config(&text).unwrap_err();
        assert!(err.to_string().contains("atoms[1]"), "{err}");
        let err = parse_config(&CANTOR.replace("b = [-1]", "b = [-1, 2]")).unwrap_err();
        assert!(err.to_string().contains("atoms[1].b"), "{err}");
        let err = parse_config(&CANTOR.replace("name", "nmae")).unwrap_err();
        assert!(err.to_string().contains("nmae"), "{err}");
    }

    #[test]
    fn rotations_are_checked() {
        let text = "d = 2\n[[atoms]]\nrho = 0.5\nb = [0, 0]\nmatrix = [[1, 0], [0, 2]]\n";
        let err = parse_config(text).unwrap_err();
        assert!(err.to_string().contains("not orthogonal"), "{err}");
        let text = "d = 2\n[[atoms]]\nrho = 0.5\nb = [0, 0]\nangles = [0.3]\n";
        assert!(parse_config(text).is_ok());
    }

    #[test]
    fn sqrt5_strings_parse_in_float_mode() {
        let text =
            "d = 1\n[[atoms]]\nrho = \"-1/2 + 1/2*sqrt5\"\nb = [1]\n[[atoms]]\nrho = \"-1/2 + 1/2*sqrt5\"\nb = [-1]\n";
        let mu = parse_config(text).unwrap().measure().unwrap();
        assert!((mu.atoms()[0].rho() - 0.618_033_988_749_895).abs() < 1e-15);
    }
}
