//! Error-propagation summary of a quantity through a set of inputs.

use serde::Serialize;

use super::config::RunConfig;
use crate::error::{Error, Result};
use crate::expr::{parse, Expr, Polynomial};
use crate::image::image_structure;
use crate::rng::derive_seed;
use crate::structures::{expectation, gamma_expr, ErrorStructure, Functional, Law};

/// Inputs above this dimension get no image-space gradient field.
pub const MAX_IMAGE_DIM: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Integral {
    pub value: f64,
    /// Zero when the integral is computed exactly.
    pub stderr: f64,
    pub exact: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradientCell {
    pub center: Vec<f64>,
    pub mass: f64,
    pub gamma_x: Vec<Vec<f64>>,
    pub gradient: Vec<f64>,
    /// `∇Fᵀ Γ̂_X[I] ∇F` at the center.
    pub gamma_quantity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SensitivityReport {
    pub quantity: String,
    pub inputs: Vec<String>,
    /// `∫Γ[F∘X] dm`.
    pub total: Integral,
    /// `∫Γ[X_i, X_j] dm`.
    pub gamma_matrix: Vec<Vec<Integral>>,
    /// `∫(∂_iF(X))² Γ[X_i] dm` per input.
    pub decomposition: Vec<Integral>,
    /// `total − Σ decomposition`: the contribution of correlated inputs.
    pub cross: f64,
    /// `∇_XF` and `Γ̂_X[I]` at the image cells.
    pub image_gradient: Option<Vec<GradientCell>>,
    pub note: Option<String>,
}

impl SensitivityReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn integrate(cfg: &RunConfig, s: &ErrorStructure, f: &Functional, seed: u64) -> Result<Integral> {
    if s.law() == Law::StandardGaussian {
        if let Some(p) = Polynomial::from_expr(f.expr(), s.dim()) {
            return Ok(Integral { value: p.gaussian_mean(), stderr: 0.0, exact: true });
        }
    }
    let e = expectation(s, cfg.samples.m_samples, seed, |w| f.value(w))?;
    Ok(Integral { value: e.value, stderr: e.stderr, exact: false })
}

/// `quantity` is an expression in `x1..xp` over the `p` inputs; with no
/// inputs it is a functional of the source space and the inputs are the
/// coordinates.
pub fn run_sensitivity(cfg: &RunConfig, quantity: &str, inputs: &[String]) -> Result<SensitivityReport> {
    let s = cfg.error_structure()?;
    let (f, x, names): (Expr, Vec<Functional>, Vec<String>) = if inputs.is_empty() {
        let q = cfg.structure.functional(quantity)?;
        let d = s.dim();
        let x = (0..d).map(|i| Functional::coordinate(i, d)).collect();
        (q.expr().clone(), x, (1..=d).map(|i| format!("x{i}")).collect())
    } else {
        let x = inputs.iter().map(|src| cfg.structure.functional(src)).collect::<Result<Vec<_>>>()?;
        let f = parse(quantity)?;
        if let Some(v) = f.max_var() {
            if v >= x.len() {
                return Err(Error::Arity(format!("quantity uses x{} but only {} inputs are given", v + 1, x.len())));
            }
        }
        (f, x, inputs.to_vec())
    };
    let p = x.len();
    let fx = Functional::compose(&f, &x)?;
    let total = integrate(cfg, &s, &gamma_expr(&s, &fx, &fx), derive_seed(cfg.seed, 0))?;
    let mut matrix = Vec::with_capacity(p);
    for i in 0..p {
        let mut row = Vec::with_capacity(p);
        for j in 0..p {
            let k = (1 + i * p + j) as u64;
            row.push(integrate(cfg, &s, &gamma_expr(&s, &x[i], &x[j]), derive_seed(cfg.seed, k))?);
        }
        matrix.push(row);
    }
    let mut decomposition = Vec::with_capacity(p);
    for (i, xi) in x.iter().enumerate() {
        let di = Functional::compose(&f.derivative(i), &x)?;
        let g = gamma_expr(&s, xi, xi);
        let term = Functional::new(di.expr().clone() * di.expr().clone() * g.expr().clone(), s.dim())?;
        decomposition.push(integrate(cfg, &s, &term, derive_seed(cfg.seed, (1 + p * p + i) as u64))?);
    }
    let cross = total.value - decomposition.iter().map(|d| d.value).sum::<f64>();
    let (image_gradient, note) = if p <= MAX_IMAGE_DIM {
        let im = image_structure(&s, &x, cfg.estimator.for_dim(p), cfg.samples.image_samples, derive_seed(cfg.seed, u64::MAX))?;
        let mut cells = Vec::with_capacity(im.cells().len());
        for c in im.cells() {
            let grad = f.eval_grad(&c.center).map(|(_, g)| g).unwrap_or_else(|_| vec![f64::NAN; p]);
            let gq = (0..p).flat_map(|i| (0..p).map(move |j| (i, j))).map(|(i, j)| grad[i] * c.mean[(i, j)] * grad[j]).sum();
            cells.push(GradientCell {
                center: c.center.clone(),
                mass: c.mass,
                gamma_x: (0..p).map(|i| (0..p).map(|j| c.mean[(i, j)]).collect()).collect(),
                gradient: grad,
                gamma_quantity: gq,
            });
        }
        (Some(cells), None)
    } else {
        (None, Some(format!("{p} inputs exceed the {MAX_IMAGE_DIM}-dimensional limit for image gradient fields")))
    };
    Ok(SensitivityReport {
        quantity: quantity.to_string(),
        inputs: names,
        total,
        gamma_matrix: matrix,
        decomposition,
        cross,
        image_gradient,
        note,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::parse_config;

    fn cfg(structure: &str) -> RunConfig {
        let mut c = parse_config(&format!(r#"{{"seed": 5, "structure": {structure}}}"#)).unwrap();
        c.samples.image_samples = 2000;
        c
    }

    #[test]
    fn single_coordinate() {
        let r = run_sensitivity(&cfg(r#"{"name": "gaussian_product", "dim": 1}"#), "x1", &["x1".into()]).unwrap();
        assert_eq!(r.total.value, 1.0);
        assert!(r.total.exact);
        assert_eq!(r.decomposition[0].value, 1.0);
        assert_eq!(r.cross, 0.0);
    }

    #[test]
    fn sum_of_independent_inputs() {
        let r = run_sensitivity(&cfg(r#"{"name": "gaussian_product", "dim": 2}"#), "x1 + x2", &["x1".into(), "x2".into()]).unwrap();
        assert_eq!(r.total.value, 2.0);
        assert_eq!(r.decomposition.iter().map(|d| d.value).collect::<Vec<_>>(), vec![1.0, 1.0]);
        assert_eq!(r.gamma_matrix[0][1].value, 0.0);
        assert!(r.image_gradient.is_some());
    }

    #[test]
    fn correlated_inputs_leave_a_cross_term() {
        let r = run_sensitivity(&cfg(r#"{"name": "gaussian_product", "dim": 1}"#), "x1 + x2", &["x1".into(), "x1".into()]).unwrap();
        assert_eq!(r.total.value, 4.0);
        assert_eq!(r.cross, 2.0);
    }

    #[test]
    fn squared_endpoint_on_paths() {
        let r = run_sensitivity(&cfg(r#"{"name": "wiener_ou", "n_inc": 16}"#), "w(1)^2", &[]).unwrap();
        assert!((r.total.value - 4.0).abs() < 1e-12, "{}", r.total.value);
        assert!(r.image_gradient.is_none());
        assert!(r.note.is_some());
    }

    #[test]
    fn quantity_arity_is_checked() {
        let e = run_sensitivity(&cfg(r#"{"name": "gaussian_product", "dim": 2}"#), "x1*x3", &["x1".into(), "x2".into()]);
        assert!(matches!(e, Err(Error::Arity(_))));
    }
}
