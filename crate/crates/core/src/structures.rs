//! Error structures on `ℝ^dim` with a Γ-matrix field over the coordinates.

use std::fmt;

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::expr::{parse, Expr};
use crate::linalg;
use crate::rng::{par_sample, try_par_sample, Rng};
use crate::stats::Moments;

/// A scalar element of the domain: an expression over `x1..x_dim`.
#[derive(Clone, Debug, PartialEq)]
pub struct Functional {
    expr: Expr,
    dim: usize,
}

impl Functional {
    pub fn new(expr: Expr, dim: usize) -> Result<Functional> {
        if expr.has_path_values() {
            return Err(Error::Domain(format!("{expr} contains unbound path values")));
        }
        if let Some(k) = expr.max_var() {
            if k >= dim {
                return Err(Error::Arity(format!("x{} used on a structure of dimension {dim}", k + 1)));
            }
        }
        Ok(Functional { expr, dim })
    }

    pub fn parse(src: &str, dim: usize) -> Result<Functional> {
        Functional::new(parse(src)?, dim)
    }

    pub fn coordinate(i: usize, dim: usize) -> Functional {
        assert!(i < dim, "coordinate {i} out of range for dimension {dim}");
        Functional { expr: Expr::var(i), dim }
    }

    pub fn constant(c: f64, dim: usize) -> Functional {
        Functional { expr: Expr::constant(c), dim }
    }

    pub fn expr(&self) -> &Expr {
        &self.expr
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn value(&self, w: &[f64]) -> Result<f64> {
        self.check_point(w)?;
        self.expr.eval(w)
    }

    /// Value and exact coordinate gradient.
    pub fn eval(&self, w: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.check_point(w)?;
        self.expr.eval_grad(w)
    }

    /// Symbolic `∂/∂x_i`.
    pub fn partial(&self, i: usize) -> Functional {
        Functional { expr: self.expr.derivative(i), dim: self.dim }
    }

    /// `outer(inner_1, …, inner_d)` where `outer` is written over `x1..xd`.
    pub fn compose(outer: &Expr, inner: &[Functional]) -> Result<Functional> {
        let dim = inner.first().map(|f| f.dim).unwrap_or(0);
        if inner.iter().any(|f| f.dim != dim) {
            return Err(Error::Dimension("composed functionals live on different structures".into()));
        }
        let args: Vec<Expr> = inner.iter().map(|f| f.expr.clone()).collect();
        Functional::new(outer.substitute(&args)?, dim)
    }

    fn check_point(&self, w: &[f64]) -> Result<()> {
        if w.len() != self.dim {
            return Err(Error::Arity(format!("point of length {} for a functional on ℝ^{}", w.len(), self.dim)));
        }
        Ok(())
    }
}

impl fmt::Display for Functional {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.expr.fmt(f)
    }
}

/// `(value, gradient)` of `f` at `w`.
pub fn eval_functional(f: &Functional, w: &[f64]) -> Result<(f64, Vec<f64>)> {
    f.eval(w)
}

/// Law `m` of the coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum Law {
    StandardGaussian,
    /// Independent uniform coordinates on `[lo, hi)`.
    Uniform { lo: f64, hi: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub enum GammaField {
    Identity,
    Constant(DMatrix<f64>),
    /// Row-major `dim × dim` entries as expressions of the point.
    Field(Vec<Expr>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ErrorStructure {
    dim: usize,
    law: Law,
    gamma: GammaField,
    label: String,
}

/// Relative PSD tolerance on the Γ-matrix field.
pub const GAMMA_PSD_TOL: f64 = 1e-10;

impl ErrorStructure {
    /// `N(0,1)^dim` with identity Γ: the finite-dimensional Ornstein–Uhlenbeck structure.
    pub fn gaussian_product(dim: usize) -> Result<ErrorStructure> {
        if dim == 0 {
            return Err(Error::Validation(vec!["structure dimension must be positive".into()]));
        }
        Ok(ErrorStructure { dim, law: Law::StandardGaussian, gamma: GammaField::Identity, label: format!("gaussian_product({dim})") })
    }

    /// `N(0,1)^dim` with a constant PSD Γ.
    pub fn gaussian_aniso(dim: usize, matrix: DMatrix<f64>) -> Result<ErrorStructure> {
        if dim == 0 || matrix.nrows() != dim || matrix.ncols() != dim {
            return Err(Error::Dimension(format!(
                "gamma matrix is {}x{} for dimension {dim}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        check_gamma(&matrix)?;
        Ok(ErrorStructure { dim, law: Law::StandardGaussian, gamma: GammaField::Constant(matrix), label: format!("gaussian_aniso({dim})") })
    }

    /// Arbitrary law and Γ-matrix field; PSD-ness is checked pointwise on use.
    pub fn with_field(dim: usize, law: Law, entries: Vec<Expr>, label: impl Into<String>) -> Result<ErrorStructure> {
        if entries.len() != dim * dim {
            return Err(Error::Dimension(format!("{} gamma entries for dimension {dim}", entries.len())));
        }
        for e in &entries {
            if e.max_var().is_some_and(|k| k >= dim) {
                return Err(Error::Arity(format!("gamma entry {e} exceeds dimension {dim}")));
            }
        }
        Ok(ErrorStructure { dim, law, gamma: GammaField::Field(entries), label: label.into() })
    }

    pub fn with_label(mut self, label: impl Into<String>) -> ErrorStructure {
        self.label = label.into();
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn law(&self) -> Law {
        self.law
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn gamma(&self) -> &GammaField {
        &self.gamma
    }

    /// The Γ-matrix when it does not depend on the point.
    pub fn constant_gamma(&self) -> Option<DMatrix<f64>> {
        match &self.gamma {
            GammaField::Identity => Some(DMatrix::identity(self.dim, self.dim)),
            GammaField::Constant(m) => Some(m.clone()),
            GammaField::Field(entries) => {
                let vals: Option<Vec<f64>> = entries.iter().map(Expr::as_const).collect();
                vals.map(|v| DMatrix::from_row_slice(self.dim, self.dim, &v))
            }
        }
    }

    /// Entry `Γ[x_i, x_j]` as an expression.
    pub fn gamma_entry(&self, i: usize, j: usize) -> Expr {
        match &self.gamma {
            GammaField::Identity => Expr::constant(if i == j { 1.0 } else { 0.0 }),
            GammaField::Constant(m) => Expr::constant(m[(i, j)]),
            GammaField::Field(entries) => entries[i * self.dim + j].clone(),
        }
    }

    /// `Γ[w_i, w_j](w)`, symmetrized and checked for positivity.
    pub fn gamma_field(&self, w: &[f64]) -> Result<DMatrix<f64>> {
        match &self.gamma {
            GammaField::Identity => Ok(DMatrix::identity(self.dim, self.dim)),
            GammaField::Constant(m) => Ok(m.clone()),
            GammaField::Field(entries) => {
                let mut vals = Vec::with_capacity(entries.len());
                for e in entries {
                    vals.push(e.eval(w)?);
                }
                let m = DMatrix::from_row_slice(self.dim, self.dim, &vals);
                let m = (&m + m.transpose()) * 0.5;
                check_gamma(&m)?;
                Ok(m)
            }
        }
    }

    pub fn sample(&self, rng: &mut Rng) -> Vec<f64> {
        match self.law {
            Law::StandardGaussian => (0..self.dim).map(|_| StandardNormal.sample(rng)).collect(),
            Law::Uniform { lo, hi } => {
                let u = Uniform::new(lo, hi).expect("uniform bounds are ordered");
                (0..self.dim).map(|_| u.sample(rng)).collect()
            }
        }
    }

    /// `n` points drawn from `m`, deterministic in `seed` for any worker count.
    pub fn samples(&self, n: usize, seed: u64) -> Vec<Vec<f64>> {
        par_sample(n, seed, |rng, _| self.sample(rng))
    }
}

fn check_gamma(m: &DMatrix<f64>) -> Result<()> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("gamma matrix has non-finite entries".into()));
    }
    if (m - m.transpose()).abs().max() > GAMMA_PSD_TOL * m.abs().max().max(1.0) {
        return Err(Error::Positivity("gamma matrix is not symmetric".into()));
    }
    if !linalg::is_psd(m, GAMMA_PSD_TOL) {
        return Err(Error::Positivity(format!("gamma matrix has eigenvalue {:e}", linalg::min_eigenvalue(m))));
    }
    Ok(())
}

/// `aᵀ G b`, summed pairwise so that swapping `a` and `b` is bit-exact.
pub fn quadratic_form(a: &[f64], g: &DMatrix<f64>, b: &[f64]) -> f64 {
    let d = a.len();
    let mut s = 0.0;
    for i in 0..d {
        s += g[(i, i)] * (a[i] * b[i]);
        for j in i + 1..d {
            s += g[(i, j)] * (a[i] * b[j] + a[j] * b[i]);
        }
    }
    s
}

/// `Γ[U, V](w) = ∇U(w)ᵀ Γ(w) ∇V(w)`.
pub fn gamma(s: &ErrorStructure, u: &Functional, v: &Functional, w: &[f64]) -> Result<f64> {
    let (_, gu) = u.eval(w)?;
    let (_, gv) = v.eval(w)?;
    Ok(quadratic_form(&gu, &s.gamma_field(w)?, &gv))
}

/// Matrix `Γ[X_i, X_j](w)`.
pub fn gamma_matrix(s: &ErrorStructure, x: &[Functional], w: &[f64]) -> Result<DMatrix<f64>> {
    let g = s.gamma_field(w)?;
    let mut grads = Vec::with_capacity(x.len());
    for xi in x {
        grads.push(xi.eval(w)?.1);
    }
    let d = x.len();
    let mut out = DMatrix::zeros(d, d);
    for i in 0..d {
        for j in i..d {
            let v = quadratic_form(&grads[i], &g, &grads[j]);
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    Ok(out)
}

/// Symbolic `Γ[U, V]` as an expression over the coordinates.
pub fn gamma_expr(s: &ErrorStructure, u: &Functional, v: &Functional) -> Functional {
    let d = s.dim();
    let gu = u.expr().gradient(d);
    let gv = v.expr().gradient(d);
    let mut acc = Expr::constant(0.0);
    for i in 0..d {
        for j in 0..d {
            let entry = s.gamma_entry(i, j);
            if entry.as_const() == Some(0.0) {
                continue;
            }
            acc = acc + entry * gu[i].clone() * gv[j].clone();
        }
    }
    Functional { expr: acc, dim: d }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MonteCarloEstimate {
    pub value: f64,
    pub stderr: f64,
    pub n_samples: usize,
    pub seed: u64,
}

/// Sample mean of `h` under `m`, with its CLT standard error.
pub fn expectation<F>(s: &ErrorStructure, n: usize, seed: u64, h: F) -> Result<MonteCarloEstimate>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    if n < 2 {
        return Err(Error::Validation(vec![format!("need at least 2 samples, got {n}")]));
    }
    let vals = try_par_sample(n, seed, |rng, _| {
        let w = s.sample(rng);
        let v = h(&w)?;
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("integrand is {v} at {w:?}")));
        }
        Ok(v)
    })?;
    let m = Moments::of(&vals);
    Ok(MonteCarloEstimate { value: m.mean, stderr: m.mean_stderr, n_samples: n, seed })
}

/// `ℰ[U, V] = ½ ∫ Γ[U, V] dm`.
pub fn dirichlet_form(s: &ErrorStructure, u: &Functional, v: &Functional, n: usize, seed: u64) -> Result<MonteCarloEstimate> {
    let e = expectation(s, n, seed, |w| gamma(s, u, v, w))?;
    Ok(MonteCarloEstimate { value: 0.5 * e.value, stderr: 0.5 * e.stderr, ..e })
}

/// `A[f∘X] = Σ_i A[X_i] ∂_i f(x) + ½ Σ_ij Γ[X_i, X_j] ∂_ij f(x)`.
pub fn generator_compose(ax: &[f64], g: &DMatrix<f64>, f: &Expr, x: &[f64]) -> Result<f64> {
    let d = x.len();
    if ax.len() != d || g.nrows() != d || g.ncols() != d {
        return Err(Error::Dimension(format!(
            "generator inputs: {} drifts, {}x{} gamma, point of length {d}",
            ax.len(),
            g.nrows(),
            g.ncols()
        )));
    }
    let (_, grad, hess) = f.eval_hessian(x)?;
    let drift: f64 = ax.iter().zip(&grad).map(|(a, g)| a * g).sum();
    let mut diffusion = 0.0;
    for i in 0..d {
        for j in 0..d {
            diffusion += g[(i, j)] * hess[i * d + j];
        }
    }
    Ok(drift + 0.5 * diffusion)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_for;
    use proptest::prelude::*;

    fn f(src: &str, dim: usize) -> Functional {
        Functional::parse(src, dim).unwrap()
    }

    #[test]
    fn gamma_examples() {
        let s = ErrorStructure::gaussian_product(2).unwrap();
        assert_eq!(gamma(&s, &f("x1*x2", 2), &f("x1*x2", 2), &[1.0, 2.0]).unwrap(), 5.0);
        assert_eq!(gamma(&s, &f("x1", 2), &f("x1", 2), &[0.3, -4.0]).unwrap(), 1.0);
        let s1 = ErrorStructure::gaussian_product(1).unwrap();
        assert_eq!(gamma(&s1, &f("sin(x1)", 1), &f("x1^2", 1), &[0.0]).unwrap(), 0.0);
    }

    #[test]
    fn gamma_matrix_examples() {
        let s = ErrorStructure::gaussian_product(2).unwrap();
        let w = [0.4, -1.1];
        let m = gamma_matrix(&s, &[f("x1", 2), f("x2", 2)], &w).unwrap();
        assert_eq!(m, DMatrix::identity(2, 2));
        let m = gamma_matrix(&s, &[f("x1 + x2", 2), f("x1 - x2", 2)], &w).unwrap();
        assert_eq!(m, DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 2.0]));
        let s1 = ErrorStructure::gaussian_product(1).unwrap();
        assert_eq!(gamma_matrix(&s1, &[f("x1^2", 1)], &[1.0]).unwrap()[(0, 0)], 4.0);
    }

    #[test]
    fn dirichlet_form_examples() {
        let s1 = ErrorStructure::gaussian_product(1).unwrap();
        let e = dirichlet_form(&s1, &f("x1", 1), &f("x1", 1), 1000, 1).unwrap();
        assert_eq!((e.value, e.stderr), (0.5, 0.0));
        let e = dirichlet_form(&s1, &f("x1^2", 1), &f("x1^2", 1), 100_000, 2).unwrap();
        assert!((e.value - 2.0).abs() <= 3.0 * e.stderr, "{e:?}");
        let s2 = ErrorStructure::gaussian_product(2).unwrap();
        let e = dirichlet_form(&s2, &f("x1", 2), &f("x2", 2), 1000, 3).unwrap();
        assert_eq!(e.value, 0.0);
        let e = dirichlet_form(&s2, &f("x1*x2", 2), &f("x1 + x2", 2), 100_000, 4).unwrap();
        assert!(e.value.abs() <= 3.0 * e.stderr, "{e:?}");
    }

    #[test]
    fn dirichlet_form_is_symmetric_bitwise() {
        let g = DMatrix::from_row_slice(3, 3, &[2.0, 0.3, -0.1, 0.3, 1.0, 0.2, -0.1, 0.2, 0.7]);
        let s = ErrorStructure::gaussian_aniso(3, g).unwrap();
        let u = f("sin(x1)*x2 + x3^2", 3);
        let v = f("exp(x1/3) - x2*x3", 3);
        let a = dirichlet_form(&s, &u, &v, 5000, 11).unwrap();
        let b = dirichlet_form(&s, &v, &u, 5000, 11).unwrap();
        assert_eq!(a.value.to_bits(), b.value.to_bits());
        assert_eq!(a.stderr.to_bits(), b.stderr.to_bits());
    }

    #[test]
    fn dirichlet_form_rejects_non_finite() {
        let s = ErrorStructure::with_field(1, Law::StandardGaussian, vec![parse("1e200*exp(x1^2)").unwrap()], "huge").unwrap();
        let err = dirichlet_form(&s, &f("exp(x1^2)*1e200", 1), &f("x1", 1), 100, 1);
        assert!(err.is_err());
    }

    #[test]
    fn generator_examples() {
        let sq = parse("x1^2").unwrap();
        let one = DMatrix::identity(1, 1);
        // OU on ℝ: A[x] = -x/2, symbolic A[x²] = 1 - x²
        assert_eq!(generator_compose(&[-0.5], &one, &sq, &[1.0]).unwrap(), 0.0);
        for &x in &[-1.7, 0.2, 2.5] {
            let lhs = generator_compose(&[-0.5 * x], &one, &sq, &[x]).unwrap();
            assert!((lhs - (1.0 - x * x)).abs() < 1e-12);
        }
        assert_eq!(generator_compose(&[0.0], &one, &sq, &[3.3]).unwrap(), 1.0);
        let lin = parse("2*x1 - 3*x2").unwrap();
        let g = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 2.0]);
        assert_eq!(generator_compose(&[0.25, 1.0], &g, &lin, &[0.1, 0.2]).unwrap(), 0.5 - 3.0);
    }

    #[test]
    fn field_structures_check_positivity() {
        let s = ErrorStructure::with_field(
            2,
            Law::StandardGaussian,
            ["1 + x1^2", "x1", "x1", "1"].iter().map(|e| parse(e).unwrap()).collect(),
            "field",
        )
        .unwrap();
        assert!(s.gamma_field(&[0.5, 0.0]).is_ok());
        let bad = ErrorStructure::with_field(1, Law::StandardGaussian, vec![parse("x1").unwrap()], "bad").unwrap();
        assert!(matches!(bad.gamma_field(&[-1.0]), Err(Error::Positivity(_))));
        let aniso = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(ErrorStructure::gaussian_aniso(2, aniso).is_err());
    }

    #[test]
    fn sampler_is_seeded() {
        let s = ErrorStructure::gaussian_product(3).unwrap();
        assert_eq!(s.samples(1000, 5), s.samples(1000, 5));
        assert_ne!(s.samples(10, 5), s.samples(10, 6));
        let mut a = rng_for(1, 2);
        let mut b = rng_for(1, 2);
        assert_eq!(s.sample(&mut a), s.sample(&mut b));
    }

    #[test]
    fn symbolic_gamma_matches_pointwise() {
        let g = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let s = ErrorStructure::gaussian_aniso(2, g).unwrap();
        let u = f("x1^2*x2", 2);
        let v = f("sin(x2)", 2);
        let sym = gamma_expr(&s, &u, &v);
        let w = [0.7, -0.2];
        let direct = gamma(&s, &u, &v, &w).unwrap();
        assert!((sym.value(&w).unwrap() - direct).abs() < 1e-12);
    }

    const PAIRS: &[(&str, &str)] = &[
        ("x1", "x2"),
        ("x1*x2", "x3"),
        ("sin(x1)", "cos(x2)"),
        ("exp(x1/2)", "x1^2"),
        ("tanh(x1 + x2)", "x3*x4"),
        ("x1^3", "x2^3"),
        ("sqrt(1 + x1^2)", "log(1 + x2^2)"),
        ("x1*x2*x3", "x4"),
        ("1/(1 + x1^2)", "x1*x4"),
        ("exp(-x1^2)", "sin(x2*x3)"),
    ];

    fn generic_gamma(s: &ErrorStructure) -> impl Strategy<Value = (f64, f64, Vec<f64>)> + '_ {
        let _ = s;
        (-2.0f64..2.0, -2.0f64..2.0, proptest::collection::vec(-2.0f64..2.0, 4))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn bilinearity_and_cauchy_schwarz((a, b, w) in generic_gamma(&ErrorStructure::gaussian_product(4).unwrap())) {
            let g = DMatrix::from_row_slice(4, 4, &[
                1.5, 0.2, 0.0, 0.1,
                0.2, 1.0, 0.3, 0.0,
                0.0, 0.3, 0.8, -0.2,
                0.1, 0.0, -0.2, 1.2,
            ]);
            let s = ErrorStructure::gaussian_aniso(4, g).unwrap();
            for (us, vs) in PAIRS {
                let u = f(us, 4);
                let v = f(vs, 4);
                let z = f("x1*x3 + cos(x4)", 4);
                let comb = Functional::new(
                    Expr::constant(a) * u.expr().clone() + Expr::constant(b) * v.expr().clone(), 4).unwrap();
                let lhs = gamma(&s, &comb, &z, &w).unwrap();
                let rhs = a * gamma(&s, &u, &z, &w).unwrap() + b * gamma(&s, &v, &z, &w).unwrap();
                prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs().max(rhs.abs())));
                let uv = gamma(&s, &u, &v, &w).unwrap();
                let uu = gamma(&s, &u, &u, &w).unwrap();
                let vv = gamma(&s, &v, &v, &w).unwrap();
                prop_assert!(uu >= 0.0 && vv >= 0.0);
                prop_assert!(uv * uv <= uu * vv * (1.0 + 1e-12) + 1e-12);
            }
        }

        #[test]
        fn locality_of_functional_calculus(w in proptest::collection::vec(-1.5f64..1.5, 2)) {
            let s = ErrorStructure::gaussian_product(2).unwrap();
            let u = f("x1*x2 + sin(x2)", 2);
            for outer in ["sin(x1)", "exp(x1/2)", "x1^3", "tanh(x1)", "log(2 + cos(x1))"] {
                let fe = parse(outer).unwrap();
                let fu = Functional::compose(&fe, std::slice::from_ref(&u)).unwrap();
                let lhs = gamma(&s, &fu, &fu, &w).unwrap();
                let (_, d) = fe.eval_grad(&[u.value(&w).unwrap()]).unwrap();
                let rhs = d[0] * d[0] * gamma(&s, &u, &u, &w).unwrap();
                prop_assert!((lhs - rhs).abs() <= 1e-10 * (1e-300 + lhs.abs().max(rhs.abs())) + 1e-300);
            }
        }
    }
}
