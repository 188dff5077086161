//! D-gradients built from pointwise square roots of the Γ-matrix, and the
//! measure-valued gradient `d_G X = (DX, ν)`.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng as _;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::linalg::{psd_root, RootMethod};
use crate::rng::rng_for;
use crate::structures::{gamma_expr, ErrorStructure, Functional, Law};
use crate::white_noise::{BasisKind, HValuedWhiteNoise, ScalarWhiteNoise, SpaceFn};

/// Points at which a non-constant Γ-matrix field is checked before use.
const ROOT_CHECK_POINTS: usize = 256;

/// `D[U](w) = M(w) ∇U(w)` with `M(w)ᵀ M(w) = Γ(w)`, padded to `K` rows.
#[derive(Clone, Debug)]
pub struct DGradientOp {
    structure: Arc<ErrorStructure>,
    k: usize,
    method: RootMethod,
    constant_root: Option<(DMatrix<f64>, RootMethod)>,
}

fn pad(m: DMatrix<f64>, k: usize) -> DMatrix<f64> {
    let (r, c) = m.shape();
    let mut out = DMatrix::zeros(k, c);
    out.view_mut((0, 0), (r, c)).copy_from(&m);
    out
}

pub fn build_dgradient(s: &ErrorStructure, method: RootMethod, k: Option<usize>) -> Result<DGradientOp> {
    let dim = s.dim();
    let k = k.unwrap_or(dim);
    if k < dim {
        return Err(Error::Dimension(format!("K = {k} is smaller than the structure dimension {dim}")));
    }
    let constant_root = match s.constant_gamma() {
        Some(g) => {
            let (m, used) = psd_root(&g, method)?;
            Some((pad(m, k), used))
        }
        None => {
            let mut rng = rng_for(0x0d_6e_ad, 0);
            for _ in 0..ROOT_CHECK_POINTS {
                let w = s.sample(&mut rng);
                psd_root(&s.gamma_field(&w)?, method)?;
            }
            None
        }
    };
    Ok(DGradientOp { structure: Arc::new(s.clone()), k, method, constant_root })
}

impl DGradientOp {
    pub fn structure(&self) -> &ErrorStructure {
        &self.structure
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn method(&self) -> RootMethod {
        self.method
    }

    /// `M(w)` (`K × dim`) and the factorization that produced it.
    pub fn root_at(&self, w: &[f64]) -> Result<(DMatrix<f64>, RootMethod)> {
        if let Some((m, used)) = &self.constant_root {
            return Ok((m.clone(), *used));
        }
        let (m, used) = psd_root(&self.structure.gamma_field(w)?, self.method)?;
        Ok((pad(m, self.k), used))
    }

    /// `D[U](w) ∈ ℝ^K`.
    pub fn apply(&self, u: &Functional, w: &[f64]) -> Result<Vec<f64>> {
        let (_, g) = u.eval(w)?;
        let (m, _) = self.root_at(w)?;
        Ok((0..self.k).map(|r| (0..g.len()).map(|j| m[(r, j)] * g[j]).sum()).collect())
    }

    /// `(D[U])_r` as a function on `W`: symbolic when the root is constant.
    pub fn component_fn(&self, u: &Functional, r: usize) -> SpaceFn {
        let dim = self.structure.dim();
        if let Some((m, _)) = &self.constant_root {
            let mut acc = Expr::constant(0.0);
            for j in 0..dim {
                if m[(r, j)] != 0.0 {
                    acc = acc + Expr::constant(m[(r, j)]) * u.expr().derivative(j);
                }
            }
            return SpaceFn::Expr(acc);
        }
        let op = self.clone();
        let u = u.clone();
        SpaceFn::native(format!("D[{u}]_{r}"), move |w| op.apply(&u, w).map(|v| v[r]).unwrap_or(f64::NAN))
    }
}

/// `Σ_i ∂_iF(U(w)) · D[U_i](w)`.
pub fn dgrad_apply(d: &DGradientOp, f: &Expr, u: &[Functional], w: &[f64]) -> Result<Vec<f64>> {
    let vals: Vec<f64> = u.iter().map(|ui| ui.value(w)).collect::<Result<_>>()?;
    let (_, grad) = f.eval_grad(&vals)?;
    let mut out = vec![0.0; d.k()];
    for (ui, gi) in u.iter().zip(&grad) {
        for (o, v) in out.iter_mut().zip(d.apply(ui, w)?) {
            *o += gi * v;
        }
    }
    Ok(out)
}

/// The column vector `(d_G X_i)_i`, each the scalar noise `(DX_i, ν)`.
#[derive(Clone, Debug)]
pub struct MeasureValuedGradient {
    x: Vec<Functional>,
    d: Arc<DGradientOp>,
    components: Vec<ScalarWhiteNoise>,
}

fn noise_lives_on(law: Law, dim: usize, kind: &BasisKind) -> bool {
    match (law, kind) {
        (Law::StandardGaussian, BasisKind::Hermite { dim: d, .. } | BasisKind::GaussianCells { dim: d, .. }) => *d == dim,
        (Law::Uniform { lo, hi }, BasisKind::Haar { .. } | BasisKind::Custom { .. }) => dim == 1 && lo == 0.0 && hi == 1.0,
        _ => false,
    }
}

pub fn mv_gradient(x: &[Functional], d: &Arc<DGradientOp>, nu: &HValuedWhiteNoise) -> Result<MeasureValuedGradient> {
    if nu.k() != d.k() {
        return Err(Error::Dimension(format!("noise has K = {} rows, the D-gradient K = {}", nu.k(), d.k())));
    }
    let s = d.structure();
    if !noise_lives_on(s.law(), s.dim(), nu.space().kind()) {
        return Err(Error::Dimension(format!("noise space {:?} is not built on the law of {}", nu.space().kind(), s.label())));
    }
    let mut components = Vec::with_capacity(x.len());
    for xi in x {
        if xi.dim() != s.dim() {
            return Err(Error::Dimension(format!("{xi} lives on ℝ^{}, structure on ℝ^{}", xi.dim(), s.dim())));
        }
        let psi: Vec<SpaceFn> = (0..d.k()).map(|r| d.component_fn(xi, r)).collect();
        components.push(nu.pair_field(&psi)?);
    }
    Ok(MeasureValuedGradient { x: x.to_vec(), d: d.clone(), components })
}

impl MeasureValuedGradient {
    pub fn functionals(&self) -> &[Functional] {
        &self.x
    }

    pub fn dgradient(&self) -> &DGradientOp {
        &self.d
    }

    /// `d_G X_i` as a scalar white noise.
    pub fn component(&self, i: usize) -> &ScalarWhiteNoise {
        &self.components[i]
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    /// `(∫ f d_G X_i)_i`.
    pub fn eval(&self, f: &SpaceFn) -> Result<Vec<f64>> {
        self.components.iter().map(|c| c.eval(f)).collect()
    }

    /// Density of the associated measure against `m`: `Γ[X_i, X_j]`.
    pub fn density(&self) -> Vec<Vec<Functional>> {
        let s = self.d.structure();
        self.x.iter().map(|a| self.x.iter().map(|b| gamma_expr(s, a, b)).collect()).collect()
    }
}

pub fn mvg_eval(dgx: &MeasureValuedGradient, f: &SpaceFn) -> Result<f64> {
    if dgx.len() != 1 {
        return Err(Error::Dimension(format!("scalar evaluation of a {}-vector gradient", dgx.len())));
    }
    dgx.component(0).eval(f)
}

pub fn mvg_density(dgx: &MeasureValuedGradient) -> Vec<Vec<Functional>> {
    dgx.density()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ChainRuleReport {
    pub n_tests: usize,
    /// Largest `|∫f d_G(F∘X) − Σ_i ∫f ∂_iF(X) d_G X_i|` over the test functions.
    pub max_discrepancy: f64,
    /// Largest coefficient difference between the two noises.
    pub max_coefficient_discrepancy: f64,
}

/// Half-space indicators, bounded smooth functions and constants on `ℝ^dim`.
pub fn test_functions(dim: usize, n: usize, seed: u64) -> Vec<SpaceFn> {
    let mut rng = rng_for(seed, 0x7e57);
    (0..n)
        .map(|i| {
            let a: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let b: f64 = rng.random_range(-1.0..1.0);
            let lin = a.iter().enumerate().fold(Expr::constant(-b), |acc, (j, aj)| acc + Expr::constant(*aj) * Expr::var(j));
            SpaceFn::Expr(match i % 4 {
                0 => lin.step(),
                1 => Expr::call(crate::expr::Func::Tanh, lin),
                2 => Expr::call(crate::expr::Func::Sin, lin),
                _ => Expr::constant(b * 3.0),
            })
        })
        .collect()
}

/// Compares `d_G(F∘X)` with `Σ_i ∂_iF(X)·d_G X_i` built by multiplication.
pub fn chain_rule_check(
    d: &Arc<DGradientOp>,
    nu: &HValuedWhiteNoise,
    f: &Expr,
    x: &[Functional],
    n_test_functions: usize,
    seed: u64,
) -> Result<ChainRuleReport> {
    let fx = Functional::compose(f, x)?;
    let lhs = mv_gradient(std::slice::from_ref(&fx), d, nu)?.components.remove(0);
    let parts = mv_gradient(x, d, nu)?;
    let mut rhs: Option<ScalarWhiteNoise> = None;
    for (i, part) in parts.components.iter().enumerate() {
        let outer = Functional::compose(&f.derivative(i), x)?;
        let term = part.multiply(&SpaceFn::Expr(outer.expr().clone()));
        rhs = Some(match rhs {
            None => term,
            Some(acc) => acc.add(&term)?,
        });
    }
    let rhs = rhs.ok_or_else(|| Error::Dimension("chain rule needs at least one inner functional".into()))?;
    let mut report = ChainRuleReport { n_tests: n_test_functions, max_discrepancy: 0.0, max_coefficient_discrepancy: 0.0 };
    for t in test_functions(d.structure().dim(), n_test_functions, seed) {
        let a = lhs.eval(&t)?;
        let b = rhs.eval(&t)?;
        report.max_discrepancy = report.max_discrepancy.max((a - b).abs());
        let pa = lhs.project(&t)?;
        let pb = rhs.project(&t)?;
        let coeff = pa.minus(&pb).iter().fold(0.0f64, |m, c| m.max(c.abs()));
        report.max_coefficient_discrepancy = report.max_coefficient_discrepancy.max(coeff);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::structures::{expectation, gamma};
    use crate::white_noise::{sample_hvalued_wn, sample_projections, BaseMeasureSpace};
    use crate::stats::Moments;

    fn f(src: &str, dim: usize) -> Functional {
        Functional::parse(src, dim).unwrap()
    }

    fn cells(dim: usize) -> Arc<BaseMeasureSpace> {
        Arc::new(BaseMeasureSpace::gaussian_cells(dim, if dim == 1 { 256 } else { 32 }).unwrap())
    }

    fn setup(dim: usize, seed: u64) -> (Arc<DGradientOp>, HValuedWhiteNoise) {
        let s = ErrorStructure::gaussian_product(dim).unwrap();
        let d = Arc::new(build_dgradient(&s, RootMethod::Auto, None).unwrap());
        (d, sample_hvalued_wn(cells(dim), dim, seed).unwrap())
    }

    #[test]
    fn roots_of_catalog_matrices() {
        let id = build_dgradient(&ErrorStructure::gaussian_product(3).unwrap(), RootMethod::Auto, None).unwrap();
        assert_eq!(id.root_at(&[0.0; 3]).unwrap().0, DMatrix::identity(3, 3));
        let u = f("x2", 3);
        assert_eq!(id.apply(&u, &[0.1, 0.2, 0.3]).unwrap(), vec![0.0, 1.0, 0.0]);
        let diag = ErrorStructure::gaussian_aniso(2, DMatrix::from_row_slice(2, 2, &[4.0, 0.0, 0.0, 9.0])).unwrap();
        let m = build_dgradient(&diag, RootMethod::Auto, None).unwrap().root_at(&[0.0, 0.0]).unwrap().0;
        assert_eq!(m, DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 3.0]));
        let g = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let s = ErrorStructure::gaussian_aniso(2, g.clone()).unwrap();
        let (m, used) = build_dgradient(&s, RootMethod::Auto, None).unwrap().root_at(&[0.0, 0.0]).unwrap();
        assert_eq!(used, RootMethod::Cholesky);
        assert!((m.transpose() * m - g).abs().max() < 1e-12);
    }

    #[test]
    fn indefinite_field_fails_to_factor() {
        let s = ErrorStructure::with_field(1, Law::StandardGaussian, vec![crate::expr::parse("x1").unwrap()], "signed").unwrap();
        assert!(build_dgradient(&s, RootMethod::Eigen, None).is_err());
    }

    #[test]
    fn dgrad_apply_examples() {
        let (d, _) = setup(2, 1);
        let w = [0.7, -1.3];
        let id = crate::expr::parse("x1").unwrap();
        assert_eq!(dgrad_apply(&d, &id, &[f("x1", 2)], &w).unwrap(), vec![1.0, 0.0]);
        let cube = crate::expr::parse("x1^3").unwrap();
        let v = dgrad_apply(&d, &cube, &[f("x1", 2)], &w).unwrap();
        assert!((v[0] - 3.0 * 0.49).abs() < 1e-14 && v[1] == 0.0);
        let prod = crate::expr::parse("x1*x2").unwrap();
        assert_eq!(dgrad_apply(&d, &prod, &[f("x1", 2), f("x2", 2)], &w).unwrap(), vec![-1.3, 0.7]);
    }

    #[test]
    fn norm_equals_gamma_on_a_field_structure() {
        let entries = ["1 + x1^2", "x1*x2", "x1*x2", "1 + x2^2"].iter().map(|e| crate::expr::parse(e).unwrap()).collect();
        let s = ErrorStructure::with_field(2, Law::StandardGaussian, entries, "field").unwrap();
        let d = build_dgradient(&s, RootMethod::Auto, Some(3)).unwrap();
        let u = f("sin(x1)*x2 + x2^3", 2);
        for w in s.samples(1000, 9) {
            let v = d.apply(&u, &w).unwrap();
            let norm: f64 = v.iter().map(|x| x * x).sum();
            let g = gamma(&s, &u, &u, &w).unwrap();
            assert!((norm - g).abs() <= 1e-10 * g.max(1e-300), "{norm} vs {g}");
        }
    }

    #[test]
    fn mv_gradient_examples() {
        let (d, nu) = setup(2, 2);
        let t = SpaceFn::parse("tanh(x1 - x2/2)").unwrap();
        let dx1 = mv_gradient(&[f("x1", 2)], &d, &nu).unwrap();
        assert_eq!(mvg_eval(&dx1, &t).unwrap().to_bits(), nu.component(0).unwrap().eval(&t).unwrap().to_bits());
        let dc = mv_gradient(&[f("3.5", 2)], &d, &nu).unwrap();
        assert_eq!(mvg_eval(&dc, &t).unwrap(), 0.0);
        let dsum = mv_gradient(&[f("x1 + x2", 2)], &d, &nu).unwrap();
        let sep = nu.component(0).unwrap().eval(&t).unwrap() + nu.component(1).unwrap().eval(&t).unwrap();
        assert_eq!(mvg_eval(&dsum, &t).unwrap().to_bits(), sep.to_bits());
        let wrong = sample_hvalued_wn(cells(2), 3, 2).unwrap();
        assert!(matches!(mv_gradient(&[f("x1", 2)], &d, &wrong), Err(Error::Dimension(_))));
    }

    #[test]
    fn density_examples() {
        let (d, nu) = setup(1, 3);
        let g = mvg_density(&mv_gradient(&[f("x1", 1)], &d, &nu).unwrap());
        assert_eq!(g[0][0].value(&[0.3]).unwrap(), 1.0);
        let g = mvg_density(&mv_gradient(&[f("x1", 1), f("x1^2", 1)], &d, &nu).unwrap());
        let w = [0.8];
        assert_eq!(g[0][1].value(&w).unwrap(), 1.6);
        assert_eq!(g[1][0].value(&w).unwrap(), 1.6);
        assert!((g[1][1].value(&w).unwrap() - 4.0 * 0.64).abs() < 1e-15);
    }

    fn variance_identity_case(dim: usize, x: &str, test: &str, target: Option<f64>, seed: u64) {
        let (d, nu) = setup(dim, seed);
        let xf = f(x, dim);
        let t = SpaceFn::parse(test).unwrap();
        let dgx = mv_gradient(std::slice::from_ref(&xf), &d, &nu).unwrap();
        let p = dgx.component(0).project(&t).unwrap();
        let vals = sample_projections(&[&p], nu.space().len(), 10_000, seed + 1).remove(0);
        let m = Moments::of(&vals);
        let s = d.structure();
        let oracle = expectation(s, 100_000, seed + 2, |w| {
            let tv = t.eval(w)?;
            Ok(tv * tv * gamma(s, &xf, &xf, w)?)
        })
        .unwrap();
        let tol = 3.0 * m.variance_stderr + p.defect() + 3.0 * oracle.stderr;
        assert!((m.variance - oracle.value).abs() <= tol, "{x}, {test}: {} vs {} (tol {tol})", m.variance, oracle.value);
        if let Some(exact) = target {
            assert!((m.variance - exact).abs() <= 3.0 * m.variance_stderr + p.defect(), "{} vs {exact}", m.variance);
            assert!((p.norm_sq - exact).abs() < 1e-6, "{}", p.norm_sq);
        }
    }

    #[test]
    fn variance_identity_examples() {
        variance_identity_case(1, "x1", "1", Some(1.0), 10);
        variance_identity_case(1, "x1^2", "1", Some(4.0), 20);
        variance_identity_case(1, "x1^2", "step(x1)", Some(2.0), 30);
        variance_identity_case(2, "x1*x2", "1", Some(2.0), 40);
        variance_identity_case(2, "sin(x1) + x2^2/2", "tanh(x1 + x2)", None, 50);
    }

    #[test]
    fn chain_rule_examples() {
        let (d1, nu1) = setup(1, 4);
        let cube = crate::expr::parse("x1^3").unwrap();
        let r = chain_rule_check(&d1, &nu1, &cube, &[f("x1", 1)], 12, 5).unwrap();
        assert!(r.max_discrepancy <= 1e-10 && r.max_coefficient_discrepancy <= 1e-10, "{r:?}");
        let (d2, nu2) = setup(2, 6);
        for outer in ["x1 + x2", "x1*x2", "sin(x1)*exp(x2/4)"] {
            let fe = crate::expr::parse(outer).unwrap();
            let r = chain_rule_check(&d2, &nu2, &fe, &[f("x1", 2), f("x2", 2)], 8, 7).unwrap();
            assert!(r.max_discrepancy <= 1e-10 && r.max_coefficient_discrepancy <= 1e-10, "{outer}: {r:?}");
        }
    }

    #[test]
    fn linear_in_the_functional() {
        let (d, nu) = setup(2, 8);
        let (a, b) = (1.7, -0.4);
        let x = f("x1*x2", 2);
        let y = f("sin(x2)", 2);
        let comb = Functional::new(Expr::constant(a) * x.expr().clone() + Expr::constant(b) * y.expr().clone(), 2).unwrap();
        for t in test_functions(2, 8, 9) {
            let lhs = mvg_eval(&mv_gradient(&[comb.clone()], &d, &nu).unwrap(), &t).unwrap();
            let rhs = a * mvg_eval(&mv_gradient(&[x.clone()], &d, &nu).unwrap(), &t).unwrap()
                + b * mvg_eval(&mv_gradient(&[y.clone()], &d, &nu).unwrap(), &t).unwrap();
            assert!((lhs - rhs).abs() <= 1e-10, "{lhs} vs {rhs}");
        }
    }
}
