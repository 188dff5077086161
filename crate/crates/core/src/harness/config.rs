//! Run configuration: a JSON document, validated before any check runs.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::parse;
use crate::image::{CondExpEstimator, EstimatorKind, MAX_IMAGE_DIM, MIN_IMAGE_SAMPLES};
use crate::structures::{ErrorStructure, Functional};
use crate::white_noise::{BaseMeasureSpace, SpaceFn, DEFAULT_BASIS_CAP};
use crate::wiener::{ou_structure, TruncatedWienerSpace};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum StructureSpec {
    GaussianProduct { dim: usize },
    /// Constant Γ-matrix `matrix` (rows) on `N(0, I_dim)`.
    GaussianAniso { dim: usize, matrix: Vec<Vec<f64>> },
    /// Increments of a truncated Wiener path; expressions may use `w(t)`.
    WienerOu { n_inc: usize },
}

impl Default for StructureSpec {
    fn default() -> Self {
        StructureSpec::GaussianProduct { dim: 2 }
    }
}

impl StructureSpec {
    pub fn dim(&self) -> usize {
        match self {
            StructureSpec::GaussianProduct { dim } | StructureSpec::GaussianAniso { dim, .. } => *dim,
            StructureSpec::WienerOu { n_inc } => *n_inc,
        }
    }

    pub fn build(&self) -> Result<ErrorStructure> {
        match self {
            StructureSpec::GaussianProduct { dim } => ErrorStructure::gaussian_product(*dim),
            StructureSpec::GaussianAniso { dim, matrix } => {
                let flat: Vec<f64> = matrix.iter().flatten().copied().collect();
                if matrix.len() != *dim || flat.len() != dim * dim {
                    return Err(Error::Dimension(format!("gaussian_aniso({dim}) needs a {dim}x{dim} matrix")));
                }
                ErrorStructure::gaussian_aniso(*dim, DMatrix::from_row_slice(*dim, *dim, &flat))
            }
            StructureSpec::WienerOu { n_inc } => ou_structure(*n_inc),
        }
    }

    /// Parse an expression over the coordinates, binding `w(t)` on Wiener space.
    pub fn functional(&self, src: &str) -> Result<Functional> {
        let e = parse(src)?;
        match self {
            StructureSpec::WienerOu { n_inc } => TruncatedWienerSpace::new(*n_inc)?.bind(&e),
            _ => Functional::new(e, self.dim()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedExpr {
    pub name: String,
    pub expr: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseBasis {
    /// Piecewise-constant cells of equal Gaussian mass.
    GaussianCells,
    /// Normalized Hermite products up to a total degree.
    Hermite,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSpec {
    pub basis: NoiseBasis,
    /// Cells per axis on `ℝ¹`.
    pub cells_1d: usize,
    /// Cells per axis on `ℝ²` and above.
    pub cells_nd: usize,
    pub hermite_degree: u32,
    /// Levels of the Haar basis on `[0, 1]`.
    pub haar_levels: u32,
    /// Rows of H-valued noises; `None` means the structure dimension.
    pub k: Option<usize>,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec { basis: NoiseBasis::GaussianCells, cells_1d: 256, cells_nd: 32, hermite_degree: 8, haar_levels: 6, k: None }
    }
}

impl NoiseSpec {
    /// Base space on `(ℝ^dim, N(0, I))`. Cells exist for `dim ≤ 2`; above,
    /// and for the Hermite basis, the degree drops until the basis fits
    /// under the size cap.
    pub fn gaussian_space(&self, dim: usize) -> Result<BaseMeasureSpace> {
        if self.basis == NoiseBasis::GaussianCells && dim <= 2 {
            return BaseMeasureSpace::gaussian_cells(dim, if dim == 1 { self.cells_1d } else { self.cells_nd });
        }
        let mut degree = self.hermite_degree;
        loop {
            match BaseMeasureSpace::hermite(dim, degree, DEFAULT_BASIS_CAP) {
                Err(Error::Size(_)) if degree > 1 => degree -= 1,
                r => return r,
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorSpec {
    /// `None`: binning for `d ≤ 2`, k-NN above.
    pub kind: Option<EstimatorKind>,
    /// Bins per axis or neighbour count.
    pub param: Option<usize>,
}

impl EstimatorSpec {
    pub fn for_dim(&self, d: usize) -> CondExpEstimator {
        match self.kind {
            None => CondExpEstimator { param: self.param, ..CondExpEstimator::default_for(d) },
            Some(EstimatorKind::Binning) => CondExpEstimator::binning(self.param),
            Some(EstimatorKind::Knn) => CondExpEstimator::knn(self.param),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleSpec {
    /// Draws from `m` for integrals against the source law.
    pub m_samples: usize,
    /// Noise realizations for empirical variances.
    pub realizations: usize,
    /// Pushforward samples behind each image structure.
    pub image_samples: usize,
    /// Evaluation points for pointwise identities.
    pub points: usize,
    pub test_functions: usize,
}

impl Default for SampleSpec {
    fn default() -> Self {
        SampleSpec { m_samples: 100_000, realizations: 10_000, image_samples: 20_000, points: 1000, test_functions: 12 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TolerancePolicy {
    /// Statistical checks pass at `|estimate − target| ≤ z·stderr + defect`.
    pub z: f64,
    pub ks_level: f64,
    pub ks_repetitions: usize,
    /// Coefficient-level identities.
    pub exact: f64,
    /// Identities that go through a factorization.
    pub factorization: f64,
    /// Largest chaos truncation defect accepted on Wiener space.
    pub truncation_budget: f64,
}

impl Default for TolerancePolicy {
    fn default() -> Self {
        TolerancePolicy { z: 3.0, ks_level: 0.01, ks_repetitions: 3, exact: 1e-10, factorization: 1e-8, truncation_budget: 1e-9 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WienerSpec {
    pub n_inc: usize,
    pub degree: u32,
    pub copy_degree: u32,
}

impl Default for WienerSpec {
    fn default() -> Self {
        WienerSpec { n_inc: 16, degree: 3, copy_degree: 1 }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    seed: Option<u64>,
    #[serde(default)]
    structure: StructureSpec,
    #[serde(default)]
    functionals: Vec<NamedExpr>,
    #[serde(default = "default_tests")]
    tests: Vec<String>,
    #[serde(default)]
    noise: NoiseSpec,
    #[serde(default)]
    estimator: EstimatorSpec,
    #[serde(default)]
    samples: SampleSpec,
    #[serde(default)]
    tolerance: TolerancePolicy,
    #[serde(default)]
    wiener: WienerSpec,
}

fn default_tests() -> Vec<String> {
    vec!["1".into()]
}

/// A validated configuration.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunConfig {
    pub seed: u64,
    pub structure: StructureSpec,
    pub functionals: Vec<NamedExpr>,
    /// Test functions `f` for the configured variance checks.
    pub tests: Vec<String>,
    pub noise: NoiseSpec,
    pub estimator: EstimatorSpec,
    pub samples: SampleSpec,
    pub tolerance: TolerancePolicy,
    pub wiener: WienerSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            structure: StructureSpec::default(),
            functionals: Vec::new(),
            tests: default_tests(),
            noise: NoiseSpec::default(),
            estimator: EstimatorSpec::default(),
            samples: SampleSpec::default(),
            tolerance: TolerancePolicy::default(),
            wiener: WienerSpec::default(),
        }
    }
}

impl RunConfig {
    pub fn with_seed(seed: u64) -> RunConfig {
        RunConfig { seed, ..RunConfig::default() }
    }

    pub fn error_structure(&self) -> Result<ErrorStructure> {
        self.structure.build()
    }

    /// The configured functionals, in document order.
    pub fn named_functionals(&self) -> Result<Vec<(String, Functional)>> {
        self.functionals.iter().map(|n| Ok((n.name.clone(), self.structure.functional(&n.expr)?))).collect()
    }

    pub fn test_functions(&self) -> Result<Vec<(String, SpaceFn)>> {
        self.tests.iter().map(|t| Ok((t.clone(), SpaceFn::Expr(self.structure.functional(t)?.expr().clone())))).collect()
    }

    /// Every violation in one pass; an expression parse error is reported on
    /// its own with its location.
    pub fn validate(&self) -> Result<()> {
        let mut v = Vec::new();
        let s = &self.samples;
        for (name, n, min) in [
            ("samples.m_samples", s.m_samples, 2),
            ("samples.realizations", s.realizations, 2),
            ("samples.image_samples", s.image_samples, MIN_IMAGE_SAMPLES),
            ("samples.points", s.points, 1),
            ("samples.test_functions", s.test_functions, 1),
            ("noise.cells_1d", self.noise.cells_1d, 2),
            ("noise.cells_nd", self.noise.cells_nd, 2),
            ("tolerance.ks_repetitions", self.tolerance.ks_repetitions, 1),
            ("wiener.n_inc", self.wiener.n_inc, 1),
        ] {
            if n < min {
                v.push(format!("{name} must be at least {min}, got {n}"));
            }
        }
        if self.noise.k == Some(0) {
            v.push("noise.k must be positive".into());
        }
        if self.estimator.param == Some(0) {
            v.push("estimator.param must be positive".into());
        }
        let t = &self.tolerance;
        for (name, x) in [("tolerance.z", t.z), ("tolerance.exact", t.exact), ("tolerance.factorization", t.factorization)] {
            if !(x.is_finite() && x > 0.0) {
                v.push(format!("{name} must be positive, got {x}"));
            }
        }
        if !(t.truncation_budget.is_finite() && t.truncation_budget >= 0.0) {
            v.push(format!("tolerance.truncation_budget must be non-negative, got {}", t.truncation_budget));
        }
        if !(t.ks_level > 0.0 && t.ks_level < 1.0) {
            v.push(format!("tolerance.ks_level must lie in (0, 1), got {}", t.ks_level));
        }
        if self.structure.dim() == 0 {
            v.push("structure dimension must be positive".into());
        } else if let Err(e) = self.structure.build() {
            v.push(format!("structure: {e}"));
        }
        let mut names: Vec<&str> = self.functionals.iter().map(|n| n.name.as_str()).collect();
        names.sort_unstable();
        if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
            v.push(format!("functional name {} is used twice", w[0]));
        }
        if self.functionals.len() > MAX_IMAGE_DIM && !matches!(self.structure, StructureSpec::WienerOu { .. }) {
            v.push(format!("at most {MAX_IMAGE_DIM} functionals, got {}", self.functionals.len()));
        }
        let mut parse_error = None;
        let exprs = self.functionals.iter().map(|n| (format!("functional {}", n.name), &n.expr));
        let tests = self.tests.iter().map(|t| ("test function".to_string(), t));
        if self.structure.dim() > 0 {
            for (what, src) in exprs.chain(tests) {
                match self.structure.functional(src) {
                    Ok(_) => {}
                    Err(Error::Parse { line, column, message }) => {
                        parse_error.get_or_insert(Error::Parse { line, column, message: format!("{what}: {message}") });
                    }
                    Err(e) => v.push(format!("{what} {src:?}: {e}")),
                }
            }
        }
        if let Some(e) = parse_error {
            return Err(e);
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(v))
        }
    }
}

/// Parse and validate a JSON configuration; `seed` overrides the document.
pub fn parse_config_with_seed(text: &str, seed: Option<u64>) -> Result<RunConfig> {
    let raw: RawConfig = serde_json::from_str(text).map_err(|e| Error::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let seed = seed.or(raw.seed);
    let cfg = RunConfig {
        seed: seed.unwrap_or(0),
        structure: raw.structure,
        functionals: raw.functionals,
        tests: raw.tests,
        noise: raw.noise,
        estimator: raw.estimator,
        samples: raw.samples,
        tolerance: raw.tolerance,
        wiener: raw.wiener,
    };
    match (seed, cfg.validate()) {
        (Some(_), r) => r.map(|_| cfg),
        (None, Ok(())) => Err(Error::Validation(vec!["seed is required".into()])),
        (None, Err(Error::Validation(mut v))) => {
            v.insert(0, "seed is required".into());
            Err(Error::Validation(v))
        }
        (None, Err(e)) => Err(e),
    }
}

pub fn parse_config(text: &str) -> Result<RunConfig> {
    parse_config_with_seed(text, None)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_document_gets_defaults() {
        let c = parse_config(r#"{"seed": 7}"#).unwrap();
        assert_eq!(c, RunConfig::with_seed(7));
    }

    #[test]
    fn three_dimensional_expression_is_accepted() {
        let c = parse_config(
            r#"{"seed": 1, "structure": {"name": "gaussian_product", "dim": 3},
                "functionals": [{"name": "X", "expr": "x1*x2 + sin(x3)"}]}"#,
        )
        .unwrap();
        assert_eq!(c.named_functionals().unwrap()[0].1.dim(), 3);
    }

    #[test]
    fn dangling_operator_is_located() {
        let e = parse_config(r#"{"seed": 1, "functionals": [{"name": "X", "expr": "x1 +"}]}"#).unwrap_err();
        assert!(matches!(e, Error::Parse { line: 1, column: 4, .. }), "{e:?}");
    }

    #[test]
    fn all_violations_are_listed() {
        let e = parse_config(
            r#"{"samples": {"realizations": 0, "image_samples": 10},
                "structure": {"name": "gaussian_product", "dim": 1},
                "functionals": [{"name": "X", "expr": "x2"}]}"#,
        )
        .unwrap_err();
        let Error::Validation(v) = e else { panic!("{e:?}") };
        assert_eq!(v.len(), 4, "{v:?}");
        assert!(v[0].contains("seed"));
        assert!(v.iter().any(|m| m.contains("realizations")));
        assert!(v.iter().any(|m| m.contains("image_samples")));
        assert!(v.iter().any(|m| m.contains("x2")));
    }

    #[test]
    fn unknown_keys_and_bad_json_are_rejected() {
        assert!(matches!(parse_config(r#"{"seed": 1, "sede": 2}"#), Err(Error::Parse { .. })));
        assert!(matches!(
            parse_config(r#"{"seed": 1, "samples": {"m_sample": 2}}"#),
            Err(Error::Parse { .. })
        ));
        assert!(matches!(
            parse_config(r#"{"seed": 1, "structure": {"name": "gaussian_product", "dim": 2, "extra": 1}}"#),
            Err(Error::Parse { .. })
        ));
        assert!(matches!(parse_config("{\"seed\": 1,\n  ]"), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn seed_override_and_wiener_paths() {
        let c = parse_config_with_seed(
            r#"{"structure": {"name": "wiener_ou", "n_inc": 4}, "functionals": [{"name": "Q", "expr": "w(1)^2"}]}"#,
            Some(3),
        )
        .unwrap();
        assert_eq!(c.seed, 3);
        let q = &c.named_functionals().unwrap()[0].1;
        assert!((q.value(&[1.0, 1.0, 1.0, 1.0]).unwrap() - 4.0).abs() < 1e-12);
        let bad = parse_config(r#"{"seed": 1, "structure": {"name": "gaussian_aniso", "dim": 2, "matrix": [[1, 2], [2, 1]]}}"#);
        assert!(matches!(bad, Err(Error::Validation(_))), "{bad:?}");
    }
}
