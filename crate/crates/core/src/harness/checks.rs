//! The named checks, grouped by suite. Each group receives its own seed and
//! returns one or more reports whose names start with the group name.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng as _;

use super::config::RunConfig;
use super::report::{CheckReport, Provenance};
use crate::error::{Error, Result};
use crate::expr::{parse, Expr, Polynomial};
use crate::image::{
    approximation_catalog, cauchy_sequence, compose_nabla, evaluation_distance, image_density_check, image_dirichlet_gradient,
    image_mvg, image_structure, nabla_x, pullback, star_inequality_demo, ImageStructure,
};
use crate::linalg::{min_eigenvalue, RootMethod};
use crate::mv_gradient::{build_dgradient, chain_rule_check, dgrad_apply, mv_gradient, mvg_density, mvg_eval, test_functions, DGradientOp};
use crate::rng::{derive_seed, rng_for};
use crate::stats::{correlation, covariance, ks_standard_normal, normal_cdf, normal_pdf, normal_quantile, Moments};
use crate::structures::{dirichlet_form, expectation, gamma, gamma_expr, generator_compose, ErrorStructure, Functional, Law};
use crate::white_noise::{
    sample_hvalued_wn, sample_projections, sample_scalar_wn, sample_vector_wn, transform_multiply, transform_pair_field,
    transform_pair_vector, BaseMeasureSpace, HValuedWhiteNoise, NoiseProjection, SpaceFn,
};
use crate::wiener::{chaos_basis, ou_structure, sharp, wiener_hvalued_wn, wiener_mvg_variance_check, TruncatedWienerSpace};

pub type GroupFn = fn(&RunConfig, &str, u64) -> Result<Vec<CheckReport>>;

/// A unit of work: one seed, one or more reports.
pub struct CheckGroup {
    pub name: &'static str,
    pub suite: &'static str,
    pub run: GroupFn,
}

pub const SUITES: [&str; 10] = ["axioms", "prop1", "prop2", "prop3", "prop4", "prop5", "corollary", "star", "wiener", "all"];

pub fn registry() -> Vec<CheckGroup> {
    macro_rules! g {
        ($suite:literal, $name:literal, $f:ident) => {
            CheckGroup { name: concat!($suite, ".", $name), suite: $suite, run: $f }
        };
    }
    vec![
        g!("axioms", "functional_calculus", functional_calculus),
        g!("axioms", "gamma", gamma_properties),
        g!("axioms", "gradients", gradients),
        g!("axioms", "dirichlet_form", dirichlet),
        g!("axioms", "generator", generator),
        g!("axioms", "wn.normality", wn_normality),
        g!("axioms", "wn.additivity", wn_additivity),
        g!("axioms", "wn.independence", wn_independence),
        g!("axioms", "wn.truncation", wn_truncation),
        g!("axioms", "wn.field_limit", wn_field_limit),
        g!("axioms", "wn.hvalued", wn_hvalued),
        g!("axioms", "wn.transform", wn_transforms),
        g!("axioms", "wn.vector", wn_vector),
        g!("axioms", "dgradient", dgradient),
        g!("prop1", "variance", variance_cases),
        g!("prop1", "matrix", variance_matrix),
        g!("prop1", "linearity", gradient_linearity),
        g!("prop1", "density", gradient_density),
        g!("prop1", "config", configured_variances),
        g!("prop2", "chain_rule", chain_rule),
        g!("prop3", "density", image_density),
        g!("prop3", "image_gamma", image_gamma),
        g!("prop3", "tower", tower),
        g!("prop3", "pushforward", pushforward),
        g!("prop3", "nabla", image_nabla),
        g!("prop4", "cauchy", cauchy),
        g!("prop4", "evaluations", evaluations),
        g!("prop4", "coherence", coherence),
        g!("prop5", "compose", compose),
        g!("corollary", "dirichlet_gradient", dirichlet_gradient_at_centers),
        g!("star", "gap", star_gap),
        g!("wiener", "isometry", wiener_isometry),
        g!("wiener", "sharp", wiener_sharp),
        g!("wiener", "chaos", wiener_chaos),
        g!("wiener", "variance", wiener_variance),
    ]
}

fn gauss(dim: usize) -> Result<ErrorStructure> {
    ErrorStructure::gaussian_product(dim)
}

fn aniso(dim: usize, rows: &[f64]) -> Result<ErrorStructure> {
    ErrorStructure::gaussian_aniso(dim, DMatrix::from_row_slice(dim, dim, rows))
}

fn fnl(src: &str, dim: usize) -> Result<Functional> {
    Functional::parse(src, dim)
}

fn fnls(srcs: &[&str], dim: usize) -> Result<Vec<Functional>> {
    srcs.iter().map(|s| fnl(s, dim)).collect()
}

fn sfn(src: &str) -> Result<SpaceFn> {
    SpaceFn::parse(src)
}

/// Identity-root D-gradient and a matching H-valued noise on `N(0, I_dim)`.
fn gaussian_setup(cfg: &RunConfig, s: &ErrorStructure, seed: u64) -> Result<(Arc<DGradientOp>, HValuedWhiteNoise)> {
    let d = Arc::new(build_dgradient(s, RootMethod::Auto, cfg.noise.k)?);
    let space = Arc::new(cfg.noise.gaussian_space(s.dim())?);
    Ok((d.clone(), sample_hvalued_wn(space, d.k(), seed)?))
}

fn image_of(cfg: &RunConfig, s: &ErrorStructure, x: &[Functional], seed: u64) -> Result<ImageStructure> {
    image_structure(s, x, cfg.estimator.for_dim(x.len()), cfg.samples.image_samples, seed)
}

fn name(prefix: &str, suffix: &str) -> String {
    format!("{prefix}.{suffix}")
}

/// Empirical variance of a projection against a target, with the defect.
fn variance_report(
    cfg: &RunConfig,
    label: &str,
    p: &NoiseProjection,
    n_basis: usize,
    target: f64,
    seed: u64,
) -> CheckReport {
    let vals = sample_projections(&[p], n_basis, cfg.samples.realizations, seed).remove(0);
    let m = Moments::of(&vals);
    CheckReport::statistical(label, target, Provenance::Analytic, m.variance, m.variance_stderr, p.defect(), cfg.tolerance.z)
}

/// `(F over ℝ^p, u_1..u_p)` pairs on four families of structures.
const CALCULUS_CORPUS: &[(usize, &str, &[&str])] = &[
    (0, "sin(x1)", &["x1"]),
    (0, "x1^3", &["exp(x1/3)"]),
    (0, "exp(-x1^2)", &["tanh(x1)"]),
    (0, "log(1 + x1^2)", &["x1^2 - 1"]),
    (0, "x1*x2", &["sin(x1)", "cos(x1)"]),
    (1, "x1*x2", &["x1", "x2"]),
    (1, "sqrt(1 + x1^2 + x2^2)", &["x1 - x2", "x1*x2"]),
    (1, "tanh(x1) + x2^2", &["x1^2", "sin(x2)"]),
    (1, "x1/(2 + sin(x2))", &["x1 + x2", "x1"]),
    (1, "exp(x1/4)*cos(x2)", &["x2", "x1*x2"]),
    (2, "x1^2 - x2", &["x1", "x2"]),
    (2, "sin(x1*x2)", &["x1 + x2", "x1 - x2"]),
    (2, "x1*x2*x3", &["x1", "x2", "x1*x2"]),
    (2, "log(2 + cos(x1))", &["x1^3 - x2"]),
    (3, "x1*x2 + x3", &["x1", "x2", "x3"]),
    (3, "tanh(x1 - x2)*x3", &["x1 + x3", "x2", "exp(x3/5)"]),
    (3, "(x1 + x2)^2", &["sin(x1)", "x2*x3"]),
    (4, "x1^2 + x2^2 + x3^2", &["x1", "x2", "x3"]),
    (4, "exp(sin(x1) + cos(x2))", &["x1*x3", "x2"]),
    (5, "x1*x2 - x3*x4", &["x1", "x2", "x3", "x4"]),
    (5, "sqrt(2 + sin(x1))*x2^2", &["x1 + x2 + x3", "x4"]),
    (6, "sin(x1)*cos(x2) + x3*x4", &["x1", "x2*x4", "x3", "tanh(x4)"]),
];

fn calculus_structure(family: usize) -> Result<ErrorStructure> {
    match family {
        0 => gauss(1),
        1 => gauss(2),
        2 => aniso(2, &[2.0, 1.0, 1.0, 2.0]),
        3 => gauss(3),
        4 => aniso(3, &[1.0, 0.5, 0.0, 0.5, 2.0, 0.3, 0.0, 0.3, 1.0]),
        5 => gauss(4),
        _ => aniso(4, &[2.0, 0.5, 0.5, 0.5, 0.5, 2.0, 0.5, 0.5, 0.5, 0.5, 2.0, 0.5, 0.5, 0.5, 0.5, 2.0]),
    }
}

/// `Γ[F(u), G(v)]` by the bilinear rule against the gradient form of the
/// composed functionals; `(G, v)` is the next corpus entry on the same
/// structure.
fn functional_calculus(cfg: &RunConfig, prefix: &str, seed: u64) -> Result<Vec<CheckReport>> {
    let mut worst = 0.0f64;
    let mut pairs = 0;
    for (i, (family, f, u)) in CALCULUS_CORPUS.iter().enumerate() {
        let s = calculus_structure(*family)?;
        let dim = s.dim();
        let j = (i + 1..CALCULUS_CORPUS.len())
            .chain(0..=i)
            .find(|&j| CALCULUS_CORPUS[j].0 == *family)
            .unwrap_or(i);
        let (_, g, v) = CALCULUS_CORPUS[j];
        let (fe, ge) = (parse(f)?, parse(g)?);
        let (uf, vf) = (fnls(u, dim)?, fnls(v, dim)?);
        let fu = Functional::compose(&fe, &uf)?;
        let gv = Functional::compose(&ge, &vf)?;
        for w in s.samples(cfg.samples.points, derive_seed(seed, i as u64)) {
            let uw: Vec<f64> = uf.iter().map(|x| x.value(&w)).collect::<Result<_>>()?;
            let vw: Vec<f64> = vf.iter().map(|x| x.value(&w)).collect::<Result<_>>()?;
            let df = fe.eval_grad(&uw)?.1;
            let dg = ge.eval_grad(&vw)?.1;
            let mut bilinear = 0.0;
            for (a, ua) in uf.iter().enumerate() {
                for (b, vb) in vf.iter().enumerate() {
                    bilinear += df[a] * dg[b] * gamma(&s, ua, vb, &w)?;
                }
            }
            let direct = gamma(&s, &fu, &gv, &w)?;
            let scale = (gamma(&s, &fu, &fu, &w)? * gamma(&s, &gv, &gv, &w)?).sqrt().max(direct.abs()).max(1e-300);
            worst = worst.max((bilinear - direct).abs() / scale);
        }
        pairs += 1;
    }
    Ok(vec![CheckReport::exact(prefix, 0.0, worst, cfg.tolerance.exact)
        .with_detail(format!("{pairs} pairs, {} points each, relative error", cfg.samples.points))])
}

/// Bilinearity, positivity with Cauchy–Schwarz, locality, and PSD fields.
fn gamma_properties(cfg: &RunConfig, prefix: &str, seed: u64) -> Result<Vec<CheckReport>> {
    let entries = ["1 + x1^2", "x1*x2", "x1*x2", "1 + x2^2"].iter().map(|e| parse(e)).collect::<Result<_>>()?;
    let field = ErrorStructure::with_field(2, Law::StandardGaussian, entries, "field")?;
    let structures = [gauss(2)?, aniso(2, &[2.0, 1.0, 1.0, 2.0])?, field];
    let corpus = ["x1*x2", "sin(x1) + x2^3", "exp(x1/3)*tanh(x2)", "log(1 + x1^2)", "sqrt(1 + x2^2)"];
    let mut rng = rng_for(seed, 0);
    let (mut bilin, mut cs, mut local, mut psd, mut min_gamma) = (0.0f64, f64::NEG_INFINITY, 0.0f64, f64::INFINITY, f64::INFINITY);
    let outer = ["sin(x1)", "x1^3", "exp(x1/2)"];
    for (k, s) in structures.iter().enumerate() {
        let fs = fnls(&corpus, 2)?;
        for w in s.samples(cfg.samples.points, derive_seed(seed, k as u64 + 1)) {
            let g = s.gamma_field(&w)?;
            psd = psd.min(min_eigenvalue(&g) / g.abs().max().max(f64::MIN_POSITIVE));
            let i = rng.random_range(0..fs.len());
            let j = rng.random_range(0..fs.len());
            let l = rng.random_range(0..fs.len());
            let (a, b): (f64, f64) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
            let comb = Functional::new(Expr::constant(a) * fs[i].expr().clone() + Expr::constant(b) * fs[j].expr().clone(), 2)?;
            let lhs = gamma(s, &comb, &fs[l], &w)?;
            let (gi, gj) = (gamma(s, &fs[i], &fs[l], &w)?, gamma(s, &fs[j], &fs[l], &w)?);
            let rhs = a * gi + b * gj;
            bilin = bilin.max((lhs - rhs).abs() / (a.abs() * gi.abs() + b.abs() * gj.abs()).max(1e-300));
            let (uu, vv, uv) = (gamma(s, &fs[i], &fs[i], &w)?, gamma(s, &fs[l], &fs[l], &w)?, gamma(s, &fs[i], &fs[l], &w)?);
            min_gamma = min_gamma.min(uu);
            cs = cs.max((uv * uv - uu * vv) / (uu * vv).max(1.0));
            let o = parse(outer[k])?;
            let fu = Functional::compose(&o, std::slice::from_ref(&fs[i]))?;
            let d = o.eval_grad(&[fs[i].value(&w)?])?.1[0];
            let want = d * d * uu;
            local = local.max((gamma(s, &fu, &fu, &w)? - want).abs() / want.abs().max(1e-300));
        }
    }
    Ok(vec![
        CheckReport::at_most(&name(prefix, "bilinearity"), 1e-12, bilin).with_detail("relative"),
        CheckReport::at_most(&name(prefix, "cauchy_schwarz"), 1e-12, cs)
            .require(min_gamma >= 0.0, "negative carré du champ")
            .with_detail(format!("min Γ[U] = {min_gamma:e}")),
        CheckReport::exact(&name(prefix, "locality"), 0.0, local, cfg.tolerance.exact).with_detail("relative"),
        CheckReport::at_least(&name(prefix, "psd_field"), -1e-10, psd).with_detail("smallest eigenvalue over spectral scale"),
    ])
}

const GRADIENT_CORPUS: &[&str] = &[
    "x1*x2",
    "x1^2 + x2^2",
    "sin(x1)*cos(x2)",
    "exp(x1^2/4)",
    "tanh(x1 - x2)",
    "sqrt(1 + x1^2 + x2^2)",
    "log(1 + x1^2)",
    "x1^3 - 3*x1*x2",
    "1/(1 + x1^2)",
    "exp(-x1)*sin(x2)",
    "cos(x1*x2)",
    "(x1 + x2)^4/10",
    "x1*exp(x2/3)",
    "sin(x1)^2 + cos(x1)^2*x2",
    "tanh(x1)*tanh(x2)",
    "log(2 + cos(x1 + x2))",
    "x2/(2 + sin(x1))",
    "sqrt(2 + sin(x1))*x2^2",
    "exp(sin(x1) + cos(x2))",
    "(x1 - 1)^2*(x2 + 1)^2",
    "(1 + x1^2)^-2 + x2",
];

/// Forward-mode gradients against central differences.
fn gradients(_cfg: &RunConfig, prefix: &str, seed: u64) -> Result<Vec<CheckReport>> {
    let mut rng = rng_for(seed, 0);
    let mut worst = 0.0f64;
    for src in GRADIENT_CORPUS {
        let e = parse(src)?;
        for _ in 0..100 {
            let w = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
            let (v, g) = e.eval_grad(&w)?;
            for i in 0..2 {
                let h = 1e-6 * (1.0 + w[i].abs());
                let (mut p, mut m) = (w, w);
                p[i] += h;
                m[i] -= h;
                let fd = (e.eval(&p)? - e.eval(&m)?) / (2.0 * h);
                let scale = g[i].abs().max(1e-2 * (1.0 + v.abs()));
                worst = worst.max((fd - g[i]).abs() / scale);
            }
        }
    }
    Ok(vec![CheckReport::at_most(prefix, 1e-5, worst).with_detail(format!("{} expressions x 100 points", GRADIENT_CORPUS.len()))])
}

fn dirichlet(cfg: &RunConfig, prefix: &str, seed: u64) -> Result<Vec<CheckReport>> {
    let n = cfg.samples.m_samples;
    let z = cfg.tolerance.z;
    let s1 = gauss(1)?;
    let s2 = gauss(2)?;
    let one = fnl("x1", 1)?;
    let sq = fnl("x1^2", 1)?;
    let e_one = dirichlet_form(&s1, &one, &one, n, derive_seed(seed, 1))?;
    let e_sq = dirichlet_form(&s1, &sq, &sq, n, derive_seed(seed, 2))?;
    let (a, b) = (fnl("x1", 2)?, fnl("x2", 2)?);
    let e_ind = dirichlet_form(&s2, &a, &b, n, derive_seed(seed, 3))?;
    let (u, v) = (fnl("sin(x1)*x2", 2)?, fnl("x1^2 + tanh(x2)", 2)?);
    let uv = dirichlet_form(&s2, &u, &v, n, derive_seed(seed, 4))?;
    let vu = dirichlet_form(&s2, &v, &u, n, derive_seed(seed, 4))?;
    let same = uv.value.to_bits() == vu.value.to_bits() && uv.stderr.to_bits() == vu.stderr.to_bits();
    Ok(vec![
        CheckReport::statistical(&name(prefix, "coordinate"), 0.5, Provenance::Analytic, e_one.value, e_one.stderr, 0.0, z),
        CheckReport::statistical(&name(prefix, "square"), 2.0, Provenance::Analytic, e_sq.value, e_sq.stderr, 0.0, z),
        CheckReport::statistical(&name(prefix, "independent"), 0.0, Provenance::Analytic, e_ind.value, e_ind.stderr, 0.0, z),
        CheckReport::exact(&name(prefix, "symmetry"), 0.0, if same { 0.0 } else { (uv.value - vu.value).abs().max(f64::MIN_POSITIVE) }, 0.0)
            .with_detail("bit-identical estimates for (U, V) and (V, U)"),
    ])
}

/// Composition formula against the symbolic OU generator `½f″ − ½x f′`.
fn generator(cfg: &RunConfig, prefix: &str, seed: u64) -> Result<Vec<CheckReport>> {
    let cases = [("x1^2", "1 - x1^2"), ("sin(x1)", "-sin(x1)/2 - x1*cos(x1)/2"), ("exp(x1/2)", "exp(x1/2)/8 - x1*exp(x1/2)/4")];
    let mut worst = 0.0f64;
    for (k, (f, a)) in cases.iter().enumerate() {
        let (fe, ae) = (parse(f)?, parse(a)?);
        for w in gauss(1)?.samples(cfg.samples.points, derive_seed(seed, k as u64)) {
            let got = generator_compose(&[-w[0] / 2.0], &DMatrix::identity(1, 1), &fe, &w)?;
            worst = worst.max((got - ae.eval(&w)?).abs());
        }
    }
    let pure = generator_compose(&[0.0], &DMatrix::identity(1, 1), &parse("x1^2")?, &[0.7])?;
    let linear = generator_compose(&[1.5, -2.0], &DMatrix::from_row_slice(2, 2, &[3.0, 1.0, 1.0, 4.0]), &parse("2*x1 + 5*x2")?, &[0.1, 0.2])?;
    Ok(vec![
        CheckReport::exact(&name(prefix, "ou"), 0.0, worst, cfg.tolerance.exact),
        CheckReport::exact(&name(prefix, "diffusion"), 1.0, pure, cfg.tolerance.exact),
        CheckReport::exact(&name(prefix, "linear"), 3.0 - 10.0, linear, cfg.tolerance.exact),
    ])
}

fn haar(cfg: &RunConfig) -> Result<Arc<BaseMeasureSpace>> {
    Ok(Arc::new(BaseMeasureSpace::haar(cfg.noise.haar_levels)?))
}

/// Kolmogorov–Smirnov against `N(0, 1)` of standardized `ν(f)`.
fn wn_normality(cfg: &RunConfig, prefix: &str, seed: u64) -> Result<Vec<CheckReport>> {
    let space = haar(cfg)?;
    let nu = sample_scalar_wn(space.clone(), derive_seed(seed, 0))?;
    let p = nu.project(&sfn("x1^2 + step(x1 - 0.3)")?)?;
    let sd = p.variance().sqrt();
    let mut failures = 0;
    let mut worst_p = 1.0f64;
    for rep in 0..cfg.tolerance.ks_repetitions {
        let vals = sample_projections(&[&p], space.len(), cfg.samples.realizations, derive_seed(seed, 1 + rep as u64)).remove(0);
        let z: Vec<f64> = vals.iter().map(|v| v / sd).collect();
        let pv = ks_standard_normal(&z).1;
        worst_p = worst_p.min(pv);
        if pv < cfg.tolerance.ks_level {
            failures += 1;
        }
    }
    Ok(vec![CheckReport::at_most(prefix, 1.0, failures as f64)
        .with_detail(format!("{} repetitions at level {}, smallest p-value {worst_p:.4}", cfg.tolerance.ks_repetitions, cfg.tolerance.ks_level))])
}

/// `ν(A∪B) = ν(A) + ν(B)` per realization for disjoint dyadic sets. The
/// union is the indicator sum `1_A + 1_B`, which must agree bit for bit; the
/// same union written as one merged interval goes through its own
/// coefficient vector and agrees up to rounding.
fn wn_additivity(cfg: &RunConfig, prefix: &str, seed: u64) -> Result<Vec<CheckReport>> {
    let space = haar(cfg)?;
    let sets = [(0.0, 0.25, 0.25, 0.5), (0.125, 0.25, 0.25, 0.75), (0.5, 0.625, 0.625, 1.0), (0.0, 0.125, 0.5, 1.0)];
    let mut mismatches = 0usize;
    let mut merged = 0.0f64;
    for r in 0..100u64 {
        let nu = sample_scalar_wn(space.clone(), derive_seed(seed, r))?;
        for &(a0, a1, b0, b1) in &sets {
            let (a, b) = (SpaceFn::interval(a0, a1), SpaceFn::interval(b0, b1));
            let sum = nu.eval(&a)? + nu.eval(&b)?;
            let union = nu.eval(&SpaceFn::linear(vec![(1.0, a), (1.0, b)]))?;
            if union.to_bits() != sum.to_bits() {
                mismatches += 1;
            }
            if a1 == b0 {
                merged = merged.max((nu.eval(&SpaceFn::interval(a0, b1))? - sum).abs());
            }
        }
    }
    Ok(vec![
        CheckReport::exact(prefix, 0.0, mismatches as f64, 0.0).with_detail("100 realizations, 4 set pairs, bit for bit"),
        CheckReport::at_most(&name(prefix, "merged"), 1e-12, merged).with_detail("adjacent pairs evaluated as one interval"),
    ])
}

fn wn_independence(cfg: &RunConfig, prefix: &str, seed: u64) -> Result<Vec<CheckReport>> {
    let space = haar(cfg)?;
    let nu = sample_scalar_wn(space.clone(), derive_seed(seed, 0))?;
    let bound = 3.0 / (cfg.samples.realizations as f64).sqrt();
    let pairs = [("halves", 0.0, 0.5, 0.5, 1.0), ("quarters", 0.0, 0.25, 0.5, 0.75), ("eighths", 0.125, 0.25, 0.75, 1.0)];
    let mut out = Vec::new();
    for (k, (label, a0, a1, b0, b1)) in pairs.iter().enumerate() {
        let a = nu.project(&SpaceFn::interval(*a0, *a1))?;
        let b = nu.project(&SpaceFn::interval(*b0, *b1))?;
        let vals = sample_projections(&[&a, &b], space.len(), cfg.samples.realizations, derive_seed(seed, 1 + k as u64));
        let rho = correlation(&vals[0], &vals[1]);
        out.push(
            CheckReport::at_most(&name(prefix, label), bound, rho.abs())
                .require(a.covariance(&b).abs() < 1e-14, "coefficient covariance is not zero")
                .with_detail(format!("correlation {rho:.5}")),
        );
    }
    Ok(out)
}

/// Bessel monotonicity in the level and exactness on the span.
fn wn_truncation(_cfg: &RunConfig, prefix: &str, _seed: u64) -> Result<Vec<CheckReport>> {
    let f = sfn("x1")?;
    let mut last = 0.0;
    let mut violation = 0.0f64;
    for levels in 0..10 {
        let p = BaseMeasureSpace::haar(levels)?.project(&f)?;
        violation = violation.max(last - p.parseval()).max(p.parseval() - p.norm_sq);
        last = p.parseval();
    }
    let step = BaseMeasureSpace::haar(3)?.project(&SpaceFn::interval(0.125, 0.625))?;
    Ok(vec![
        CheckReport::at_most(&name(prefix, "monotone"), 1e-14, violation),
        CheckReport::at_most(&name(prefix, "limit"), 1e-5, (last - 1.0 / 3.0).abs()).with_detail("Σ(x, ξ_n)² at 9 Haar levels vs 1/3"),
        CheckReport::exact(&name(prefix, "span"), 0.0, step.defect(), 1e-14),
    ])
}

/// Step approximations `ψ_n → ψ` give evaluations converging at the rate
/// `‖ψ_n − ψ‖·μ(A)^{1/2}`.
fn wn_field_limit(cfg: &RunConfig, prefix: &str, seed: u64) -> Result<Vec<CheckReport>> {
    let space = Arc::new(BaseMeasureSpace::haar(cfg.noise.haar_levels.max(7))?);
    let h = sample_hvalued_wn(space, 2, seed)?;
    let psi = [sfn("sin(3*x1)")?, sfn("x1^2")?];
    let a = SpaceFn::interval(0.0, 0.5);
    let target = h.pair_field(&psi)?.project(&a)?;
    let mut worst_ratio = 0.0f64;
    let mut monotone = true;
    let mut last = f64::INFINITY;
    for k in 1..6u32 {
        let cells = 1usize << k;
        let steps: Vec<SpaceFn> = psi
            .iter()
            .map(|p| {
                let p = p.clone();
                SpaceFn::native(format!("step{cells}({p})"), move |x| {
                    let mid = ((x[0] * cells as f64).floor() + 0.5) / cells as f64;
                    p.eval(&[mid]).unwrap_or(f64::NAN)
                })
            })
            .collect();
        let approx = h.pair_field(&steps)?.project(&a)?;
        let l2 = approx.minus(&target).iter().map(|c| c * c).sum::<f64>().sqrt();
        let rate = 13f64.sqrt() * 0.5 / cells as f64 * 0.5f64.sqrt();
        worst_ratio = worst_ratio.max(l2 / rate);
        monotone &= l2 < last;
        last = l2;
    }
    Ok(vec![CheckReport::at_most(prefix, 1.0 + 1e-9, worst_ratio)
        .require(monotone, "distances are not decreasing")
        .with_detail("L²(P) distance over the Lipschitz rate bound")])
}

fn wn_hvalued(cfg: &RunConfig, prefix: &str, seed: u64) -> Result<Vec<CheckReport>> {
    let space = haar(cfg)?;
    let h = sample_hvalued_wn(space.clone(), 2, derive_seed(seed, 0))?;
    let f = SpaceFn::interval(0.0, 0.75);
    let one = sample_hvalued_wn(space.clone(), 1, derive_seed(seed, 0))?.component(0)?;
    let scalar = sample_scalar_wn(space.clone(), derive_seed(seed, 0))?;
    let g = sfn("cos(2*x1)")?;
    let same = one.eval(&g)?.to_bits() == scalar.eval(&g)?.to_bits();
    let p = h.pair_vector(&[3.0, 4.0])?.project(&f)?;
    let e1 = h.component(0)?.project(&f)?;
    Ok(vec![
        variance_report(cfg, &name(prefix, "scaled"), &p, space.len(), 25.0 * 0.75, derive_seed(seed, 1)),
        variance_report(cfg, &name(prefix, "unit"), &e1, space.len(), 0.75, derive_seed(seed, 2)),
        CheckReport::exact(&name(prefix, "single_row"), 1.0, if same { 1.0 } else { 0.0 }, 0.0).with_detail("K = 1 equals the scalar noise"),
    ])
}

/// Multiplication and both pairings: associated-measure metadata and empirical
/// variances against `φ²`, `‖x‖²` and `‖ψ‖²` scaled targets.
fn wn_transforms(cfg: &RunConfig, prefix: &str, seed: u64) -> Result<Vec<CheckReport>> {
    let space = haar(cfg)?;
    let n = space.len();
    let nu = sample_scalar_wn(space.clone(), derive_seed(seed, 0))?;
    let h2 = sample_hvalued_wn(space.clone(), 2, derive_seed(seed, 1))?;
    let h3 = sample_hvalued_wn(space.clone(), 3, derive_seed(seed, 2))?;
    let one = SpaceFn::constant(1.0);
    let probe = [[0.1], [0.4], [0.8]];
    let mut out = Vec::new();
    let mut metadata_err = 0.0f64;
    let mut case = |label: &str, noise: crate::white_noise::ScalarWhiteNoise, f: &SpaceFn, target: f64, density: &dyn Fn(f64) -> f64, k: u64| -> Result<()> {
        for x in &probe {
            metadata_err = metadata_err.max((noise.measure().density_at(x)? - density(x[0])).abs());
        }
        let p = noise.project(f)?;
        out.push(variance_report(cfg, &name(prefix, label), &p, n, target, derive_seed(seed, 10 + k)));
        Ok(())
    };
    case("multiply.two", transform_multiply(&nu, &SpaceFn::constant(2.0)), &one, 4.0, &|_| 4.0, 0)?;
    case("multiply.half", transform_multiply(&nu, &SpaceFn::interval(0.0, 0.5)), &one, 0.5, &|x| if x < 0.5 { 1.0 } else { 0.0 }, 1)?;
    case("multiply.ramp", transform_multiply(&nu, &sfn("x1")?), &one, 1.0 / 3.0, &|x| x * x, 2)?;
    case("pair_vector.unit", transform_pair_vector(&h2, &[1.0, 0.0])?, &SpaceFn::interval(0.0, 0.75), 0.75, &|_| 1.0, 3)?;
    case("pair_vector.three_four", transform_pair_vector(&h2, &[3.0, 4.0])?, &SpaceFn::interval(0.0, 0.75), 18.75, &|_| 25.0, 4)?;
    case("pair_vector.three_rows", transform_pair_vector(&h3, &[1.0, -1.0, 2.0])?, &one, 6.0, &|_| 6.0, 5)?;
    let split = [SpaceFn::interval(0.0, 0.3), SpaceFn::native("1[0.3,1)", |x| if x[0] >= 0.3 { 1.0 } else { 0.0 })];
    case("pair_field.split", transform_pair_field(&h2, &split)?, &one, 1.0, &|_| 1.0, 6)?;
    case("pair_field.ramp", transform_pair_field(&h2, &[sfn("x1")?, one.clone()])?, &one, 4.0 / 3.0, &|x| x * x + 1.0, 7)?;
    let trig = [sfn("sin(3.141592653589793*x1)")?, sfn("cos(3.141592653589793*x1)")?];
    case("pair_field.rotation", transform_pair_field(&h2, &trig)?, &SpaceFn::interval(0.0, 0.5), 0.5, &|_| 1.0, 8)?;
    // multiplying then pairing and pairing then multiplying carry φ²‖x‖²μ
    let phi = sfn("exp(x1)")?;
    let ab = h2.multiply(&phi).pair_vector(&[1.0, -2.0])?;
    let ba = h2.pair_vector(&[1.0, -2.0])?.multiply(&phi);
    let commutes = ab.measure().same_as(ba.measure()) && ab.measure().canonical() == (5.0, vec![phi.square().label()]);
    out.push(
        CheckReport::exact(&name(prefix, "metadata"), 0.0, metadata_err, 1e-14)
            .require(commutes, "a) and b) do not commute on the metadata"),
    );
    Ok(out)
}

fn wn_vector(cfg: &RunConfig, prefix: &str, seed: u64) -> Result<Vec<CheckReport>> {
    let space = haar(cfg)?;
    let parse_all = |xs: [&str; 4]| xs.iter().map(|s| sfn(s)).collect::<Result<Vec<_>>>();
    let v = sample_vector_wn(space.clone(), parse_all(["1", "0", "0", "1"])?, 2, derive_seed(seed, 0))?;
    let a = SpaceFn::interval(0.0, 0.5);
    let (p1, p2) = (v.component(0)?.project(&a)?, v.component(1)?.project(&a)?);
    let vals = sample_projections(&[&p1, &p2], space.len(), cfg.samples.realizations, derive_seed(seed, 1));
    let (cov, se) = covariance(&vals[0], &vals[1]);
    let rank1 = sample_vector_wn(space.clone(), parse_all(["1", "1", "1", "1"])?, 2, derive_seed(seed, 2))?;
    let f = sfn("sin(5*x1)")?;
    let (n1, n2) = (rank1.component(0)?.eval(&f)?, rank1.component(1)?.eval(&f)?);
    let diff = rank1.pair_vector(&[1.0, -1.0])?;
    let bad = sample_vector_wn(space, parse_all(["1", "2", "2", "1"])?, 2, derive_seed(seed, 3));
    Ok(vec![
        CheckReport::statistical(&name(prefix, "independent"), 0.0, Provenance::Analytic, cov, se, 0.0, cfg.tolerance.z),
        CheckReport::exact(&name(prefix, "rank_one"), 0.0, (n1 - n2).abs(), 1e-12 * (1.0 + n1.abs())),
        CheckReport::exact(&name(prefix, "zero_pairing"), 0.0, diff.eval(&f)?.abs(), 1e-12)
            .require(diff.measure().is_zero(), "x'ρx·μ is not the zero measure"),
        CheckReport::exact(&name(prefix, "positivity"), 1.0, if matches!(bad, Err(Error::Positivity(_))) { 1.0 } else { 0.0 }, 0.0)
            .with_detail("an indefinite density is rejected"),
    ])
}

/// `‖D[U]‖² = Γ[U]` on a point-dependent field, and the chain rule of D.
fn dgradient(cfg: &RunConfig, prefix: &str, seed: u64) -> Result<Vec<CheckReport>> {
    let entries = ["1 + x1^2", "x1*x2", "x1*x2", "1 + x2^2"].iter().map(|e| parse(e)).collect::<Result<_>>()?;
    let s = ErrorStructure::with_field(2, Law::StandardGaussian, entries, "field")?;
    let d = build_dgradient(&s, RootMethod::Auto, Some(3))?;
    let corpus = fnls(&["sin(x1)*x2 + x2^3", "x1*x2", "exp(x1/3)", "log(1 + x2^2)"], 2)?;
    let mut worst = 0.0f64;
    for w in s.samples(cfg.samples.points, seed) {
        for u in &corpus {
            let v = d.apply(u, &w)?;
            let g = gamma(&s, u, u, &w)?;
            worst = worst.max((v.iter().map(|x| x * x).sum::<f64>() - g).abs() / g.max(1e-300));
        }
    }
    let id = build_dgradient(&gauss(2)?, RootMethod::Auto, None)?;
    let w = [0.3, -1.2];
    let prod = dgrad_apply(&id, &parse("x1*x2")?, &fnls(&["x1", "x2"], 2)?, &w)?;
    let cube = dgrad_apply(&id, &parse("x1^3")?, &fnls(&["x1"], 2)?, &w)?;
    let chain_err = (prod[0] - w[1]).abs() + (prod[1] - w[0]).abs() + (cube[0] - 3.0 * w[0] * w[0]).abs() + cube[1].abs();
    Ok(vec![
        CheckReport::exact(&name(prefix, "norm"), 0.0, worst, cfg.tolerance.exact).with_detail("relative, K = 3 on a 2-D field"),
        CheckReport::exact(&name(prefix, "chain"), 0.0, chain_err, cfg.tolerance.exact),
    ])
}

/// Variance of `∫f d_GX` against `∫f²Γ[X]dm`.
fn variance_cases(cfg: &RunConfig, prefix: &str, seed: u64) -> Result<Vec<CheckReport>> {
    let cases: [(&str, usize, &str, &str, Option<f64>); 5] = [
        ("x1.one", 1, "x1", "1", Some(1.0)),
        ("x1sq.one", 1, "x1^2", "1", Some(4.0)),
        ("x1sq.positive", 1, "x1^2", "step(x1)", Some(2.0)),
        ("x1x2.one", 2, "x1*x2", "1", Some(2.0)),
        ("smooth.tanh", 2, "sin(x1) + x2^2/2", "tanh(x1 + x2)", None),
    ];
    let mut out = Vec::new();
    for (k, (label, dim, x, t, exact)) in cases.iter().enumerate() {
        let s = gauss(*dim)?;
        let (d, nu) = gaussian_setup(cfg, &s, derive_seed(seed, 3 * k as u64))?;
        let xf = fnl(x, *dim)?;
        let tf = sfn(t)?;
        out.push(variance_identity(cfg, &name(prefix, label), &s, &d, &nu, &xf, &tf, *exact, derive_seed(seed, 3 * k as u64 + 1))?);
    }
    Ok(out)
}

/// `∫t²Γ[X]dm`: exact Gaussian algebra when polynomial, otherwise an
/// independent estimate with the m-sample budget.
fn weighted_gamma_target(cfg: &RunConfig, s: &ErrorStructure, x: &Functional, t: &SpaceFn, seed: u64) -> Result<(f64, f64, Provenance)> {
    let g = gamma_expr(s, x, x);
    if let (Some(te), Law::StandardGaussian) = (t.as_expr(), s.law()) {
        if let Some(p) = Polynomial::from_expr(&(te.powi(2) * g.expr().clone()), s.dim()) {
            return Ok((p.gaussian_mean(), 0.0, Provenance::Analytic));
        }
    }
    let est = expectation(s, cfg.samples.m_samples, seed, |w| {
        let tv = t.eval(w)?;
        Ok(tv * tv * g.value(w)?)
    })?;
    Ok((est.value, est.stderr, Provenance::OracleEstimated))
}

#[allow(clippy::too_many_arguments)]
fn variance_identity(
    cfg: &RunConfig,
    label: &str,
    s: &ErrorStructure,
    d: &Arc<DGradientOp>,
    nu: &HValuedWhiteNoise,
    x: &Functional,
    t: &SpaceFn,
    exact: Option<f64>,
    seed: u64,
) -> Result<CheckReport> {
    let p = mv_gradient(std::slice::from_ref(x), d, nu)?.component(0).project(t)?;
    let vals = sample_projections(&[&p], nu.space().len(), cfg.samples.realizations, derive_seed(seed, 0)).remove(0);
    let m = Moments::of(&vals);
    let (target, tse, prov) = match exact {
        Some(v) => (v, 0.0, Provenance::Analytic),
        None => weighted_gamma_target(cfg, s, x, t, derive_seed(seed, 1))?,
    };
    let se = m.variance_stderr.hypot(tse);
    Ok(CheckReport::statistical(label, target, prov, m.variance, se, p.defect(), cfg.tolerance.z))
}

/// Covariance matrix of `(∫f d_GX_i)_i` against `∫f²Γ[X_i, X_j]dm`.
fn variance_matrix(cfg: &RunConfig, prefix: &str, seed: u64) -> Result<Vec<CheckReport>> {
    let s = gauss(1)?;
    let (d, nu) = gaussian_setup(cfg, &s, derive_seed(seed, 0))?;
    let x = fnls(&["x1", "x1^2"], 1)?;
    let t = SpaceFn::constant(1.0);
    let dg = mv_gradient(&x, &d, &nu)?;
    let p: Vec<NoiseProjection> = (0..2).map(|i| dg.component(i).project(&t)).collect::<Result<_>>()?;
    let vals = sample_projections(&[&p[0], &p[1]], nu.space().len(), cfg.samples.realizations, derive_seed(seed, 1));
    let targets = [[1.0, 0.0], [0.0, 4.0]];
    let mut out = Vec::new();
    for (i, j) in [(0, 0), (0, 1), (1, 1)] {
        let (c, se) = covariance(&vals[i], &vals[j]);
        let defect = (p[i].defect() * p[j].defect()).sqrt();
        out.push(CheckReport::statistical(
            &name(prefix, &format!("{}{}", i + 1, j + 1)),
            targets[i][j],
            Provenance::Analytic,
            c,
            se,
            defect,
            cfg.tolerance.z,
        ));
    }
    Ok(out)
}

fn gradient_linearity(cfg: &RunConfig, prefix: &str, seed: u64) -> Result<Vec<CheckReport>> {
    let s = gauss(2)?;
    let (d, nu) = gaussian_setup(cfg, &s, derive_seed(seed, 0))?;
    let mut rng = rng_for(seed, 1);
    let (a, b): (f64, f64) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
    let x = fnl("x1*x2", 2)?;
    let y = fnl("sin(x2)", 2)?;
    let comb = Functional::new(Expr::constant(a) * x.expr().clone() + Expr::constant(b) * y.expr().clone(), 2)?;
    let mut worst = 0.0f64;
    for t in test_functions(2, cfg.samples.test_functions, derive_seed(seed, 2)) {
        let lhs = mvg_eval(&mv_gradient(std::slice::from_ref(&comb), &d, &nu)?, &t)?;
        let rhs = a * mvg_eval(&mv_gradient(std::slice::from_ref(&x), &d, &nu)?, &t)? + b * mvg_eval(&mv_gradient(std::slice::from_ref(&y), &d, &nu)?, &t)?;
        worst = worst.max((lhs - rhs).abs());
    }
    Ok(vec![CheckReport::exact(prefix, 0.0, worst, cfg.tolerance.exact)])
}

fn gradient_density(cfg: &RunConfig, prefix: &str, seed: u64) -> Result<Vec<CheckReport>> {
    let s = gauss(1)?;
    let (d, nu) = gaussian_setup(cfg, &s, seed)?;
    let g = mvg_density(&mv_gradient(&fnls(&["x1", "x1^2"], 1)?, &d, &nu)?);
    let mut worst = 0.0f64;
    for w in s.samples(100, derive_seed(seed, 1)) {
        let x = w[0];
        let want = [[1.0, 2.0 * x], [2.0 * x, 4.0 * x * x]];
        for i in 0..2 {
            for j in 0..2 {
                worst = worst.max((g[i][j].value(&w)? - want[i][j]).abs());
            }
        }
    }
    Ok(vec![CheckReport::exact(prefix, 0.0, worst, cfg.tolerance.exact)])
}

/// The variance identity for each configured functional and test function.
fn configured_variances(cfg: &RunConfig, prefix: &str, seed: u64) -> Result<Vec<CheckReport>> {
    let s = cfg.error_structure()?;
    let named = cfg.named_functionals()?;
    if named.is_empty() {
        return Ok(Vec::new());
    }
    let (d, nu) = gaussian_setup(cfg, &s, derive_seed(seed, 0))?;
    let mut out = Vec::new();
    for (i, (fname, x)) in named.iter().enumerate() {
        for (j, (tname, t)) in cfg.test_functions()?.iter().enumerate() {
            let label = name(prefix, &format!("{fname}.{}", sanitize(tname)));
            let k = (i * 1000 + j) as u64;
            out.push(
                variance_identity(cfg, &label, &s, &d, &nu, x, t, None, derive_seed(seed, 1 + k))
                    .unwrap_or_else(|e| CheckReport::failed(&label, &e)),
            );
        }
    }
    Ok(out)
}

fn sanitize(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() { c } else { '_' }).collect()
}

/// `d_G(F∘X)` against `Σ_i ∂_iF(X)·d_GX_i` at coefficient level.
fn chain_rule(cfg: &RunConfig, prefix: &str, seed: u64) -> Result<Vec<CheckReport>> {
    let cases: [(&str, usize, &str, &[&str]); 12] = [
        ("cube", 1, "x1^3", &["x1"]),
        ("sine", 1, "sin(x1)", &["x1"]),
        ("exp", 1, "exp(x1/2)", &["x1"]),
        ("tanh_of_square", 1, "tanh(x1)", &["x1^2"]),
        ("poly", 1, "x1^2 + x1", &["sin(x1)"]),
        ("sum", 2, "x1 + x2", &["x1", "x2"]),
        ("product", 2, "x1*x2", &["x1", "x2"]),
        ("smooth", 2, "sin(x1)*exp(x2/4)", &["x1", "x2"]),
        ("cubic", 2, "x1^2*x2 - x2^3/3", &["x1", "x2"]),
        ("difference", 2, "tanh(x1 - x2)", &["x1", "x2"]),
        ("nonlinear_inner", 2, "x1 + x2^2", &["x1*x2", "sin(x1)"]),
        ("shared_coordinate", 1, "x1*x2", &["x1", "x1^2"]),
    ];
    let mut out = Vec::new();
    for (k, (label, dim, f, x)) in cases.iter().enumerate() {
        let s = gauss(*dim)?;
        let (d, nu) = gaussian_setup(cfg, &s, derive_seed(seed, 2 * k as u64))?;
        let r = chain_rule_check(&d, &nu, &parse(f)?, &fnls(x, *dim)?, cfg.samples.test_functions, derive_seed(seed, 2 * k as u64 + 1))?;
        out.push(
            CheckReport::exact(&name(prefix, label), 0.0, r.max_discrepancy.max(r.max_coefficient_discrepancy), cfg.tolerance.exact)
                .with_detail(format!("{} test functions", r.n_tests)),
        );
    }
    Ok(out)
}

/// Second moments of `∫1_A d_GF` against `∫_A Γ_X[F] dX_*m` per test set.
fn image_density(cfg: &RunConfig, prefix: &str, seed: u64) -> Result<Vec<CheckReport>> {
    let cases: [(&str, usize, &[&str], &str); 4] = [
        ("square_map", 1, &["x1^2"], "x1"),
        ("shear", 2, &["x1", "x1 + x2"], "x1 + x2"),
        ("identity", 1, &["x1"], "x1"),
        ("constant", 1, &["x1"], "2.5"),
    ];
    let mut out = Vec::new();
    for (k, (label, dim, xs, f)) in cases.iter().enumerate() {
        let s = gauss(*dim)?;
        let x = fnls(xs, *dim)?;
        let im = image_of(cfg, &s, &x, derive_seed(seed, 3 * k as u64))?;
        let (d, nu) = gaussian_setup(cfg, &s, derive_seed(seed, 3 * k as u64 + 1))?;
        let rep = image_density_check(&im, &parse(f)?, &d, &nu, 6, cfg.samples.realizations, derive_seed(seed, 3 * k as u64 + 2))?;
        let consistent = rep.sets.iter().all(|s| (s.target - s.direct).abs() <= 1e-9 * s.target.abs().max(1.0));
        let defect = rep.sets.iter().map(|s| s.defect).fold(0.0, f64::max);
        out.push(
            CheckReport::at_most(&name(prefix, label), cfg.tolerance.z, rep.max_abs_z())
                .with_stderr(0.0, defect)
                .with_z(rep.max_abs_z())
                .require(rep.sets.len() >= 5, "fewer than 5 test sets")
                .require(consistent, "estimated density disagrees with the source-side integral")
                .with_detail(format!("{} indicator sets, largest |z|", rep.sets.len())),
        );
    }
    Ok(out)
}

/// `Γ̂_X[I]` at the cells: `4x` for the square map, the identity for the
/// identity maps; and the estimator's self-consistency.
fn image_gamma(cfg: &RunConfig, prefix: &str, seed: u64) -> Result<Vec<CheckReport>> {
    let s1 = gauss(1)?;
    let sq = image_of(cfg, &s1, &fnls(&["x1^2"], 1)?, derive_seed(seed, 0))?;
    let mut z = 0.0f64;
    for c in sq.cells() {
        let target = 4.0 * c.center[0];
        let excess = ((c.mean[(0, 0)] - target).abs() - 1e-12 * target).max(0.0);
        z = z.max(crate::image::z_score(excess, c.stderr[(0, 0)]));
    }
    let id1 = image_of(cfg, &s1, &fnls(&["x1"], 1)?, derive_seed(seed, 1))?;
    let s2 = gauss(2)?;
    let id2 = image_of(cfg, &s2, &fnls(&["x1", "x2"], 2)?, derive_seed(seed, 2))?;
    let mut id_err = 0.0f64;
    for c in id1.cells().iter().chain(id2.cells()) {
        let n = c.mean.nrows();
        id_err = id_err.max((&c.mean - DMatrix::identity(n, n)).abs().max());
    }
    let lin = id1.self_consistency(&parse("3*x1 - 1")?)?;
    let smooth = id1.self_consistency(&parse("tanh(x1)")?)?;
    Ok(vec![
        CheckReport::at_most(&name(prefix, "square_map"), cfg.tolerance.z, z).with_z(z).with_detail("largest per-cell |z| against 4x"),
        CheckReport::exact(&name(prefix, "identity"), 0.0, id_err, 0.0),
        CheckReport::exact(&name(prefix, "self_consistency.linear"), 0.0, lin.l2_error, 1e-12),
        CheckReport::at_most(&name(prefix, "self_consistency.smooth"), smooth.bound, smooth.l2_error),
    ])
}

/// `∫Γ_X[F] dX_*m = ∫Γ[F∘X] dm`.
fn tower(cfg: &RunConfig, prefix: &str, seed: u64) -> Result<Vec<CheckReport>> {
    let s = gauss(1)?;
    let im = image_of(cfg, &s, &fnls(&["x1^2"], 1)?, derive_seed(seed, 0))?;
    let mut out = Vec::new();
    for (k, (label, f)) in [("identity", "x1"), ("square", "x1^2"), ("sine", "sin(x1)")].iter().enumerate() {
        let t = im.tower_check(&parse(f)?, cfg.samples.image_samples, derive_seed(seed, 1 + k as u64))?;
        out.push(
            CheckReport::statistical(&name(prefix, label), t.source_side, Provenance::OracleEstimated, t.image_side, t.stderr, 0.0, cfg.tolerance.z)
                .with_bias(t.estimator_bias),
        );
    }
    Ok(out)
}

/// `X = x1²`, `u = 1_{[0,1]}`: variance `4(Φ(1) − Φ(−1) − 2φ(1))`.
fn pushforward(cfg: &RunConfig, prefix: &str, seed: u64) -> Result<Vec<CheckReport>> {
    let oracle = 4.0 * (normal_cdf(1.0) - normal_cdf(-1.0) - 2.0 * normal_pdf(1.0));
    let s = gauss(1)?;
    let (d, nu) = gaussian_setup(cfg, &s, derive_seed(seed, 0))?;
    let x = fnls(&["x1^2"], 1)?;
    let push = image_mvg(&mv_gradient(&x, &d, &nu)?, &x)?;
    let p = push.project(&SpaceFn::interval(0.0, 1.0))?;
    let total = push.project(&SpaceFn::constant(1.0))?;
    Ok(vec![
        variance_report(cfg, &name(prefix, "unit_interval"), &p, nu.space().len(), oracle, derive_seed(seed, 1)),
        variance_report(cfg, &name(prefix, "total_mass"), &total, nu.space().len(), 4.0, derive_seed(seed, 2)),
    ])
}

/// `∇_XF` examples and `Γ_X[F] = (∇_XF)ᵀ Γ_X[I] ∇_XF` at the cell centers.
fn image_nabla(cfg: &RunConfig, prefix: &str, seed: u64) -> Result<Vec<CheckReport>> {
    let s = gauss(1)?;
    let im = image_of(cfg, &s, &fnls(&["x1^2"], 1)?, derive_seed(seed, 0))?;
    let g = nabla_x(&im, &parse("x1^2")?)?;
    let id = nabla_x(&im, &parse("x1")?)?;
    let mut err = (g.eval(&[1.5])?[0] - 3.0).abs() + (id.eval(&[1.5])?[0] - 1.0).abs();
    let mut rel = 0.0f64;
    for c in g.gamma_identity(&im)? {
        let want = 16.0 * c.center[0].powi(3);
        rel = rel.max((c.at_center - want).abs() / (1.0 + want.abs()));
    }
    let im2 = image_of(cfg, &gauss(2)?, &fnls(&["x1", "x2"], 2)?, derive_seed(seed, 1))?;
    let g2 = nabla_x(&im2, &parse("x1")?)?.eval(&[0.2, 0.3])?;
    err += (g2[0] - 1.0).abs() + g2[1].abs();
    Ok(vec![
        CheckReport::exact(&name(prefix, "examples"), 0.0, err, cfg.tolerance.exact),
        CheckReport::exact(&name(prefix, "gamma_identity"), 0.0, rel, cfg.tolerance.factorization).with_detail("16x³ at the cell centers, relative"),
    ])
}

const CAUCHY_ORDERS: u32 = 12;

/// `‖∇F_n − ∇F‖` in `L²(Γ_X[I]·X_*m)` along the Hermite truncations.
fn cauchy(cfg: &RunConfig, prefix: &str, seed: u64) -> Result<Vec<CheckReport>> {
    let mut out = Vec::new();
    for (k, case) in approximation_catalog().iter().enumerate() {
        let label = sanitize(&case.label);
        let x = case.functionals()?;
        let im = image_of(cfg, &gauss(case.dim)?, &x, derive_seed(seed, k as u64))?;
        let approx: Vec<Expr> = (1..=CAUCHY_ORDERS).map(|n| case.approximant(n)).collect();
        let rep = cauchy_sequence(&im, &case.target(), &approx)?;
        let rise = rep.errors[4..].windows(2).map(|w| (w[1] - w[0]) / w[0].max(f64::MIN_POSITIVE)).fold(f64::NEG_INFINITY, f64::max);
        let triangle = rep
            .increments
            .iter()
            .enumerate()
            .map(|(i, inc)| inc - rep.errors[i] - rep.errors[i + 1])
            .fold(f64::NEG_INFINITY, f64::max);
        out.push(
            CheckReport::at_most(&name(prefix, &format!("{label}.monotone")), 1e-9, rise)
                .with_detail("largest relative rise of the error beyond n = 5"),
        );
        out.push(CheckReport::at_most(&name(prefix, &format!("{label}.limit")), 1e-4, *rep.errors.last().unwrap_or(&f64::NAN)));
        out.push(CheckReport::at_most(&name(prefix, &format!("{label}.triangle")), 1e-12, triangle));
        // the error norm of the first truncation against Σ_{k>1} k c_k²
        let tail: f64 = (2..80).map(|j| j as f64 * case.coefficient(j).powi(2)).sum::<f64>().sqrt();
        out.push(CheckReport::statistical(
            &name(prefix, &format!("{label}.first_error")),
            tail,
            Provenance::Analytic,
            rep.errors[0],
            rep.error_stderr[0],
            0.0,
            cfg.tolerance.z,
        ));
    }
    Ok(out)
}

/// `E[(∫u d_GF_n − ∫u d_GF)²] → 0` along the same sequences.
fn evaluations(cfg: &RunConfig, prefix: &str, seed: u64) -> Result<Vec<CheckReport>> {
    let mut out = Vec::new();
    for (k, case) in approximation_catalog().iter().enumerate() {
        let s = gauss(case.dim)?;
        let (d, nu) = gaussian_setup(cfg, &s, derive_seed(seed, k as u64))?;
        let x = case.functionals()?;
        let u = if case.dim == 1 { sfn("tanh(x1)")? } else { sfn("step(x1 - x2/2)")? };
        let target = case.target();
        let dist: Vec<f64> = [2, 6, CAUCHY_ORDERS]
            .iter()
            .map(|&n| evaluation_distance(&d, &nu, &x, &case.approximant(n), &target, &u))
            .collect::<Result<_>>()?;
        out.push(
            CheckReport::at_most(&name(prefix, &sanitize(&case.label)), 1e-8, dist[2])
                .require(dist[2] <= dist[1] && dist[1] <= dist[0], "evaluation distances do not decrease")
                .with_detail(format!("n = 2, 6, {CAUCHY_ORDERS}: {:.3e}, {:.3e}, {:.3e}", dist[0], dist[1], dist[2])),
        );
    }
    Ok(out)
}

/// `∫u d_GF` and `∫u∘X d_G(F∘X)` are the same random variable.
fn coherence(cfg: &RunConfig, prefix: &str, seed: u64) -> Result<Vec<CheckReport>> {
    let mut mismatches = 0usize;
    let mut compared = 0usize;
    for (k, (dim, xs, f)) in [(1, vec!["x1"], "x1"), (1, vec!["x1^2"], "x1"), (2, vec!["x1", "x1 + x2"], "sin(x1)*x2")].iter().enumerate() {
        let s = gauss(*dim)?;
        let (d, nu) = gaussian_setup(cfg, &s, derive_seed(seed, k as u64))?;
        let x = fnls(xs, *dim)?;
        let fx = Functional::compose(&parse(f)?, &x)?;
        let dg = mv_gradient(std::slice::from_ref(&fx), &d, &nu)?;
        let push = image_mvg(&dg, &x)?;
        let mut us = vec![SpaceFn::constant(1.0), sfn("tanh(x1)")?, SpaceFn::interval(0.0, 1.0)];
        us.extend(test_functions(xs.len(), 4, derive_seed(seed, 100 + k as u64)));
        for u in &us {
            let a = push.eval(u)?;
            let b = dg.component(0).eval(&pullback(u, &x)?)?;
            compared += 1;
            if a.to_bits() != b.to_bits() {
                mismatches += 1;
            }
        }
    }
    Ok(vec![CheckReport::exact(prefix, 0.0, mismatches as f64, 0.0).with_detail(format!("{compared} evaluations compared bit for bit"))])
}

/// Label, source dimension, `X`, `U`, `V`.
type ComposeCase = (&'static str, usize, &'static [&'static str], &'static [&'static str], &'static [&'static str]);

/// `(∇_X(V∘U))ᵀ = (∇_{U∘X}V)ᵀ∘U · (∇_XU)ᵀ` in the weighted norm.
fn compose(cfg: &RunConfig, prefix: &str, seed: u64) -> Result<Vec<CheckReport>> {
    let cases: [ComposeCase; 6] = [
        ("cube_of_square", 1, &["x1"], &["x1^2"], &["x1^3"]),
        ("identity_outer", 1, &["x1"], &["x1^2"], &["x1"]),
        ("sum_product", 2, &["x1", "x2"], &["x1 + x2", "x1*x2"], &["x1*x2"]),
        ("two_outputs", 2, &["x1", "x1 + x2"], &["sin(x1)", "x2^2"], &["x1 + x2", "x1*x2"]),
        ("on_square_map", 1, &["x1^2"], &["exp(-x1/4)"], &["tanh(x1)"]),
        ("scalar_bridge", 2, &["x1", "x2"], &["x1*x2"], &["x1^2"]),
    ];
    let mut out = Vec::new();
    for (k, (label, dim, xs, us, vs)) in cases.iter().enumerate() {
        let s = gauss(*dim)?;
        let x = fnls(xs, *dim)?;
        let u: Vec<Expr> = us.iter().map(|e| parse(e)).collect::<Result<_>>()?;
        let v: Vec<Expr> = vs.iter().map(|e| parse(e)).collect::<Result<_>>()?;
        let ux: Vec<Functional> = u.iter().map(|e| Functional::compose(e, &x)).collect::<Result<_>>()?;
        let im_x = image_of(cfg, &s, &x, derive_seed(seed, 2 * k as u64))?;
        let im_ux = image_of(cfg, &s, &ux, derive_seed(seed, 2 * k as u64 + 1))?;
        let r = compose_nabla(&im_x, &u, &im_ux, &v, cfg.samples.points)?;
        out.push(
            CheckReport::at_most(&name(prefix, label), cfg.tolerance.factorization, r.residual)
                .with_detail(format!("{} points, reference norm {:.4e}", r.n_points, r.reference)),
        );
    }
    Ok(out)
}

/// `‖D_XF‖² = Γ̂_X[F]` at every cell center on both root paths.
fn dirichlet_gradient_at_centers(cfg: &RunConfig, prefix: &str, seed: u64) -> Result<Vec<CheckReport>> {
    let cases: [(&str, usize, &[&str], &str, RootMethod); 4] = [
        ("square_map", 1, &["x1^2"], "x1", RootMethod::Cholesky),
        ("identity", 2, &["x1", "x2"], "x1*x2", RootMethod::Cholesky),
        ("shear", 2, &["x1", "x1 + x2"], "sin(x1)*x2", RootMethod::Cholesky),
        ("singular", 1, &["x1", "2*x1"], "sin(x1) + x2^2", RootMethod::Eigen),
    ];
    let mut out = Vec::new();
    for (k, (label, dim, xs, f, path)) in cases.iter().enumerate() {
        let s = gauss(*dim)?;
        let im = image_of(cfg, &s, &fnls(xs, *dim)?, derive_seed(seed, k as u64))?;
        let dx = image_dirichlet_gradient(&im, &parse(f)?, RootMethod::Auto)?;
        let rep = dx.check_at_centers(&im)?;
        let all = im.cells().len();
        let took = match path {
            RootMethod::Eigen => rep.eigen_points == all,
            _ => rep.cholesky_points > 0,
        };
        out.push(
            CheckReport::at_most(&name(prefix, label), cfg.tolerance.factorization, rep.max_residual)
                .require(took, "the expected square-root path was not taken")
                .with_detail(format!("{} Cholesky, {} eigen", rep.cholesky_points, rep.eigen_points)),
        );
    }
    let s = gauss(1)?;
    let im = image_of(cfg, &s, &fnls(&["x1^2"], 1)?, derive_seed(seed, 10))?;
    let v = image_dirichlet_gradient(&im, &parse("x1")?, RootMethod::Auto)?.at(&im, &[2.25])?.0;
    out.push(CheckReport::exact(&name(prefix, "square_root"), 3.0, v[0], cfg.tolerance.factorization).with_detail("D_XF(2.25) = 2·√2.25"));
    Ok(out)
}

/// Conditioning a D-gradient on `X` loses its conditional variance.
fn star_gap(cfg: &RunConfig, prefix: &str, seed: u64) -> Result<Vec<CheckReport>> {
    let z = cfg.tolerance.z;
    let s = gauss(1)?;
    let n = cfg.samples.image_samples;
    let sq = fnls(&["x1^2"], 1)?;
    let est = cfg.estimator.for_dim(1);
    let rep = star_inequality_demo(&s, &sq, &parse("x1")?, est, n, derive_seed(seed, 0))?;
    let min_z = rep.bins.iter().filter(|b| b.center[0] >= 0.5).map(|b| b.z).fold(f64::INFINITY, f64::min);
    let jensen = rep.bins.iter().map(|b| b.lhs - b.rhs - z * b.rhs_stderr).fold(f64::NEG_INFINITY, f64::max);
    let id = star_inequality_demo(&s, &fnls(&["x1"], 1)?, &parse("x1")?, est, n, derive_seed(seed, 1))?;
    let id_z = id.bins.iter().map(|b| b.z.abs()).fold(0.0, f64::max);
    let id_sides = id.bins.iter().map(|b| (b.lhs - 1.0).abs().max((b.rhs - 1.0).abs())).fold(0.0, f64::max);
    let konst = star_inequality_demo(&s, &sq, &parse("3")?, est, n, derive_seed(seed, 2))?;
    let k_sides = konst.bins.iter().map(|b| b.lhs.abs().max(b.rhs.abs())).fold(0.0, f64::max);
    let mut out = vec![
        CheckReport::at_least(&name(prefix, "square_map"), 5.0, min_z).with_z(min_z).with_detail("smallest gap z-score on bins with x ≥ 0.5"),
        CheckReport::at_most(&name(prefix, "jensen"), 0.0, jensen).with_detail("largest lhs − rhs − z·stderr over the bins"),
        CheckReport::at_most(&name(prefix, "identity"), z, id_z).with_z(id_z).require(id_sides <= 1e-12, "both sides should equal 1"),
        CheckReport::exact(&name(prefix, "constant"), 0.0, k_sides, 0.0),
    ];
    for (fname, x) in cfg.named_functionals().unwrap_or_default() {
        if !matches!(cfg.structure, super::config::StructureSpec::WienerOu { .. }) {
            let label = name(prefix, &format!("config.{fname}"));
            let r = cfg.error_structure().and_then(|s| {
                let dx = cfg.estimator.for_dim(1);
                star_inequality_demo(&s, std::slice::from_ref(&x), &parse("x1")?, dx, n, derive_seed(seed, name_seed(&fname)))
            });
            out.push(match r {
                Ok(rep) => {
                    let jensen = rep.bins.iter().map(|b| b.lhs - b.rhs - z * b.rhs_stderr).fold(f64::NEG_INFINITY, f64::max);
                    let max_gap = rep.bins.iter().map(|b| b.gap).fold(0.0, f64::max);
                    CheckReport::at_most(&label, 0.0, jensen).with_detail(format!("largest binned gap {max_gap:.4e}"))
                }
                Err(e) => CheckReport::failed(&label, &e),
            });
        }
    }
    Ok(out)
}

fn name_seed(s: &str) -> u64 {
    crate::rng::name_hash(s)
}

/// `Γ[∫f dw, ∫g dw] = (f, g)_{L²}` on grid-aligned functions.
fn wiener_isometry(cfg: &RunConfig, prefix: &str, seed: u64) -> Result<Vec<CheckReport>> {
    let n = cfg.wiener.n_inc;
    let w = TruncatedWienerSpace::new(n)?;
    let s = ou_structure(n)?;
    let h = 1.0 / n as f64;
    let half = (n / 2) as f64 * h;
    let one = w.integral(&SpaceFn::constant(1.0))?;
    let first = w.integral(&SpaceFn::interval(0.0, half))?;
    let rest = w.integral(&SpaceFn::interval(half, 1.0))?;
    let signed = w.integral(&SpaceFn::linear(vec![(1.0, SpaceFn::constant(1.0)), (-2.0, SpaceFn::interval(0.0, 0.5))]))?;
    let mut err = 0.0f64;
    for pt in s.samples(10, seed) {
        err = err
            .max((gamma(&s, &one, &one, &pt)? - 1.0).abs())
            .max((gamma(&s, &first, &first, &pt)? - half).abs())
            .max(gamma(&s, &first, &rest, &pt)?.abs());
        if n.is_multiple_of(2) {
            err = err.max(gamma(&s, &signed, &one, &pt)?.abs());
        }
    }
    Ok(vec![CheckReport::exact(prefix, 0.0, err, cfg.tolerance.exact)])
}

/// `E_m̂[(X^#)²](w) = Γ[X](w)` at 10² points `w`, Bonferroni-corrected so
/// the family keeps the per-check false alarm rate of a single `z` test.
fn wiener_sharp(cfg: &RunConfig, prefix: &str, seed: u64) -> Result<Vec<CheckReport>> {
    let n = cfg.wiener.n_inc;
    let w = TruncatedWienerSpace::new(n)?;
    let s = ou_structure(n)?;
    let points = 100;
    let alpha = 2.0 * (1.0 - normal_cdf(cfg.tolerance.z));
    let threshold = normal_quantile(1.0 - alpha / (2.0 * points as f64));
    let corpus = [("w1", "w(1)"), ("w1_squared", "w(1)^2"), ("product", "w(0.5)*w(1)"), ("bounded", "exp(-w(0.5)^2)*w(1)")];
    let mut out = Vec::new();
    for (k, (label, src)) in corpus.iter().enumerate() {
        let x = w.bind(&parse(src)?)?;
        let sg = sharp(&x);
        let mut worst = 0.0f64;
        for (j, pt) in s.samples(points, derive_seed(seed, k as u64)).iter().enumerate() {
            let est = sg.second_moment(pt, 4000, derive_seed(seed, 1000 * (k as u64 + 1) + j as u64))?;
            let g = gamma(&s, &x, &x, pt)?;
            worst = worst.max(crate::image::z_score(est.value - g, est.stderr).abs());
        }
        out.push(
            CheckReport::at_most(&name(prefix, label), threshold, worst)
                .with_z(worst)
                .with_detail(format!("largest |z| over {points} points")),
        );
    }
    let w1 = w.path_value(1.0)?;
    let pt: Vec<f64> = (0..n).map(|i| 0.3 * i as f64 - 1.0).collect();
    let hat: Vec<f64> = (0..n).map(|i| (i as f64).cos()).collect();
    let sq = w.bind(&parse("w(1)^2")?)?;
    let err = (sharp(&w1).eval(&pt, &hat)? - w1.value(&hat)?).abs()
        + (sharp(&sq).eval(&pt, &hat)? - 2.0 * w1.value(&pt)? * w1.value(&hat)?).abs()
        + sharp(&Functional::constant(1.0, n)).eval(&pt, &hat)?.abs();
    out.push(CheckReport::exact(&name(prefix, "first_chaos"), 0.0, err, cfg.tolerance.exact));
    Ok(out)
}

fn wiener_chaos(cfg: &RunConfig, prefix: &str, seed: u64) -> Result<Vec<CheckReport>> {
    let n = cfg.wiener.n_inc;
    let basis = chaos_basis(n, cfg.wiener.degree, crate::white_noise::DEFAULT_BASIS_CAP)?;
    let small = chaos_basis(n.min(3), 2, 100)?;
    let copy = chaos_basis(n.min(3), 1, 100)?;
    let space = Arc::new(small.space()?);
    let wn = wiener_hvalued_wn(space, &copy, seed)?;
    let z1 = SpaceFn::Expr(small.element(1)?.expr().clone());
    let got = wn.eval(&z1)?;
    let mut err = 0.0f64;
    for (k, v) in got.iter().enumerate() {
        err = err.max((v - wn.noise().realization().get(k, 1)).abs());
    }
    for y in ["1", "x1*x2"] {
        if n >= 2 || y == "1" {
            let p = wn.noise().component(copy.len() - 1)?.project(&sfn(y)?)?;
            err = err.max((p.variance() - 1.0).abs());
        }
    }
    Ok(vec![
        CheckReport::exact(&name(prefix, "orthonormality"), 0.0, basis.gram_error(), 1e-12)
            .with_detail(format!("{} elements up to degree {}", basis.len(), cfg.wiener.degree)),
        CheckReport::exact(&name(prefix, "noise_rows"), 0.0, err, cfg.tolerance.exact),
    ])
}

/// `E_P[(∫Y d_GX)²] = E_m[Y²Γ[X]]` by Parseval, by sampling, and by the
/// coordinate construction.
fn wiener_variance(cfg: &RunConfig, prefix: &str, seed: u64) -> Result<Vec<CheckReport>> {
    let n = cfg.wiener.n_inc;
    let w = TruncatedWienerSpace::new(n)?;
    let z = cfg.tolerance.z;
    let mut out = Vec::new();
    for (k, (label, xs, ys, target)) in [("w1.one", "w(1)", "1", 1.0), ("w1.w1", "w(1)", "w(1)", 1.0), ("w1_squared.one", "w(1)^2", "1", 4.0)]
        .iter()
        .enumerate()
    {
        let x = w.bind(&parse(xs)?)?;
        let y = w.bind(&parse(ys)?)?;
        let r = wiener_mvg_variance_check(
            &x,
            &y,
            cfg.wiener.degree,
            cfg.wiener.copy_degree,
            cfg.samples.realizations,
            derive_seed(seed, k as u64),
            cfg.tolerance.truncation_budget,
        )?;
        let base = name(prefix, label);
        out.push(CheckReport::exact(&format!("{base}.target"), *target, r.target, cfg.tolerance.exact));
        out.push(
            CheckReport::exact(&format!("{base}.parseval"), *target, r.parseval, r.defect + cfg.tolerance.exact)
                .with_stderr(0.0, r.defect)
                .with_detail(format!("{} chaos x {} copy elements", r.n_chaos, r.n_copy)),
        );
        out.push(CheckReport::statistical(&format!("{base}.empirical"), *target, Provenance::Analytic, r.empirical, r.empirical_stderr, r.defect, z));
        out.push(CheckReport::statistical(&format!("{base}.cross"), *target, Provenance::Analytic, r.cross, r.cross_stderr, r.defect, z));
        let rise = r.level_defects.windows(2).map(|p| p[1] - p[0]).fold(f64::NEG_INFINITY, f64::max);
        let under = r.level_defects.iter().copied().fold(f64::INFINITY, f64::min);
        out.push(
            CheckReport::at_most(&format!("{base}.monotone"), 1e-12, rise)
                .require(under >= -1e-12, "a Parseval partial sum exceeds the target"),
        );
    }
    let small = TruncatedWienerSpace::new(2)?;
    let over = wiener_mvg_variance_check(
        &small.bind(&parse("w(1)")?)?,
        &small.bind(&parse("w(1)^3")?)?,
        2,
        1,
        100,
        derive_seed(seed, 99),
        cfg.tolerance.truncation_budget,
    );
    out.push(
        CheckReport::exact(&name(prefix, "budget"), 1.0, if matches!(over, Err(Error::Truncation(_))) { 1.0 } else { 0.0 }, 0.0)
            .with_detail("a degree-6 integrand on a degree-2 chaos exceeds the budget"),
    );
    Ok(out)
}
