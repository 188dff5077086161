//! Truncated Wiener space with the Ornstein–Uhlenbeck structure.
//!
//! A path is represented by `n_inc` i.i.d. standard normal increments `x_i`,
//! so `∫f dw = Σ_i c_i(f) x_i` with `c_i(f)` the average of `f` on the
//! `i`-th grid cell divided by `√n_inc`. The sharp gradient lives on an
//! independent copy `ŵ` of the increments.

use std::sync::Arc;

use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::expr::{hermite_normalized_coefficients, hermite_normalized_expr, Expr, MultiIndex, Polynomial};
use crate::mv_gradient::{build_dgradient, mv_gradient};
use crate::linalg::RootMethod;
use crate::rng::{derive_seed, par_sample};
use crate::stats::Moments;
use crate::structures::{expectation, gamma_expr, ErrorStructure, Functional, MonteCarloEstimate};
use crate::white_noise::{
    graded_indices, sample_hvalued_wn, sample_projections, BaseMeasureSpace, HValuedWhiteNoise, ScalarWhiteNoise, SpaceFn,
    DEFAULT_BASIS_CAP,
};

/// 5-point Gauss–Legendre rule on `[-1, 1]`.
const GL5: [(f64, f64); 5] = [
    (0.0, 0.568_888_888_888_888_9),
    (-0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (-0.906_179_845_938_664, 0.236_926_885_056_189_1),
    (0.906_179_845_938_664, 0.236_926_885_056_189_1),
];
/// Sub-panels per grid cell for cell averages.
const PANELS_PER_CELL: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct TruncatedWienerSpace {
    n_inc: usize,
}

impl TruncatedWienerSpace {
    pub fn new(n_inc: usize) -> Result<TruncatedWienerSpace> {
        if n_inc == 0 {
            return Err(Error::Dimension("a Wiener space needs at least one increment".into()));
        }
        Ok(TruncatedWienerSpace { n_inc })
    }

    pub fn n_inc(&self) -> usize {
        self.n_inc
    }

    /// Grid points `t_i = i / n_inc`, `i = 0..=n_inc`.
    pub fn grid(&self) -> Vec<f64> {
        (0..=self.n_inc).map(|i| i as f64 / self.n_inc as f64).collect()
    }

    /// `c_i(f)`: cell averages of `f` (a function of `t = x1`) over `√n_inc`.
    pub fn integral_coefficients(&self, f: &SpaceFn) -> Result<Vec<f64>> {
        let n = self.n_inc as f64;
        let grid = self.grid();
        grid.windows(2)
            .map(|cell| {
                let h = (cell[1] - cell[0]) / PANELS_PER_CELL as f64;
                let mut acc = 0.0;
                for p in 0..PANELS_PER_CELL {
                    let mid = cell[0] + (p as f64 + 0.5) * h;
                    for (t, w) in GL5 {
                        acc += 0.5 * h * w * f.eval(&[mid + 0.5 * h * t])?;
                    }
                }
                Ok(acc * n / n.sqrt())
            })
            .collect()
    }

    /// `∫f dw` as a linear functional of the increments.
    pub fn integral(&self, f: &SpaceFn) -> Result<Functional> {
        let c = self.integral_coefficients(f)?;
        Functional::new(linear_form(&c), self.n_inc)
    }

    /// `w(t) = ∫1_{[0,t]} dw`, linear inside a grid cell.
    pub fn path_value(&self, t: f64) -> Result<Functional> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::Domain(format!("path time {t} outside [0, 1]")));
        }
        let n = self.n_inc as f64;
        let c: Vec<f64> = (0..self.n_inc).map(|i| (t * n - i as f64).clamp(0.0, 1.0) / n.sqrt()).collect();
        Functional::new(linear_form(&c), self.n_inc)
    }

    /// Resolve every `w(t)` in `e` and return a functional of the increments.
    pub fn bind(&self, e: &Expr) -> Result<Functional> {
        let bound = e.bind_paths(&|t| Ok(self.path_value(t)?.expr().clone()))?;
        Functional::new(bound, self.n_inc)
    }
}

fn linear_form(c: &[f64]) -> Expr {
    c.iter()
        .enumerate()
        .filter(|(_, ci)| **ci != 0.0)
        .fold(Expr::constant(0.0), |acc, (i, ci)| acc + Expr::constant(*ci) * Expr::var(i))
}

/// Coordinate structure on `ℝ^{n_inc}` with `m = N(0, I)` and `Γ = I`.
pub fn ou_structure(n_inc: usize) -> Result<ErrorStructure> {
    TruncatedWienerSpace::new(n_inc)?;
    Ok(ErrorStructure::gaussian_product(n_inc)?.with_label(format!("ou({n_inc})")))
}

/// `X^#(w, ŵ) = Σ_i ∂_iX(w) ŵ_i`: on first-chaos atoms `(∫f dw)^# = ∫f dŵ`,
/// extended by the functional calculus.
#[derive(Clone, Debug)]
pub struct SharpGradient {
    x: Functional,
}

pub fn sharp(x: &Functional) -> SharpGradient {
    SharpGradient { x: x.clone() }
}

impl SharpGradient {
    pub fn functional(&self) -> &Functional {
        &self.x
    }

    pub fn eval(&self, w: &[f64], w_hat: &[f64]) -> Result<f64> {
        if w_hat.len() != self.x.dim() {
            return Err(Error::Dimension(format!("copy path of length {} for {} increments", w_hat.len(), self.x.dim())));
        }
        let (_, g) = self.x.eval(w)?;
        Ok(g.iter().zip(w_hat).map(|(a, b)| a * b).sum())
    }

    /// `E_m̂[(X^#)²](w)` over `n_hat` copy paths.
    pub fn second_moment(&self, w: &[f64], n_hat: usize, seed: u64) -> Result<MonteCarloEstimate> {
        let dim = self.x.dim();
        let hats = par_sample(n_hat, seed, |rng, _| (0..dim).map(|_| StandardNormal.sample(rng)).collect::<Vec<f64>>());
        let sq: Vec<f64> = hats.iter().map(|h| self.eval(w, h).map(|v| v * v)).collect::<Result<_>>()?;
        let m = Moments::of(&sq);
        Ok(MonteCarloEstimate { value: m.mean, stderr: m.mean_stderr, n_samples: n_hat, seed })
    }
}

/// Normalized Hermite products `Z_α(x) = Π_i He_{α_i}(x_i)/√(α_i!)`,
/// graded by total degree.
#[derive(Clone, Debug)]
pub struct ChaosBasis {
    n_inc: usize,
    degree: u32,
    index: Vec<MultiIndex>,
}

pub fn chaos_basis(n_inc: usize, degree: u32, cap: usize) -> Result<ChaosBasis> {
    TruncatedWienerSpace::new(n_inc)?;
    Ok(ChaosBasis { n_inc, degree, index: graded_indices(n_inc, degree, cap)? })
}

impl ChaosBasis {
    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn degree(&self) -> u32 {
        self.degree
    }

    pub fn index(&self) -> &[MultiIndex] {
        &self.index
    }

    pub fn element(&self, j: usize) -> Result<Functional> {
        let e = self.index[j]
            .iter()
            .enumerate()
            .filter(|(_, a)| **a > 0)
            .fold(Expr::constant(1.0), |acc, (i, a)| acc * hermite_normalized_expr(Expr::var(i), *a));
        Functional::new(e, self.n_inc)
    }

    /// `max_{a,b} |E_m[Z_a Z_b] − δ_ab|` in exact polynomial arithmetic.
    pub fn gram_error(&self) -> f64 {
        let p = self.degree as usize;
        let uni: Vec<Polynomial> = (0..=p as u32)
            .map(|k| {
                let mut acc = Polynomial::zero(1);
                for (i, c) in hermite_normalized_coefficients(k).iter().enumerate() {
                    acc = acc.add(&Polynomial::var(0, 1).powi(i as u32).scale(*c));
                }
                acc
            })
            .collect();
        let table: Vec<Vec<f64>> = (0..=p).map(|a| (0..=p).map(|b| uni[a].mul(&uni[b]).gaussian_mean()).collect()).collect();
        let mut worst = 0.0f64;
        for (a, ia) in self.index.iter().enumerate() {
            for (b, ib) in self.index.iter().enumerate().skip(a) {
                let v: f64 = ia.iter().zip(ib).map(|(&x, &y)| table[x as usize][y as usize]).product();
                let want = if a == b { 1.0 } else { 0.0 };
                worst = worst.max((v - want).abs());
            }
        }
        worst
    }

    /// The chaos basis as a white-noise base space on `(ℝ^{n_inc}, m)`.
    pub fn space(&self) -> Result<BaseMeasureSpace> {
        BaseMeasureSpace::hermite(self.n_inc, self.degree, self.index.len().max(DEFAULT_BASIS_CAP))
    }
}

/// The `H = L²(m̂)`-valued noise `∫Y dν = Σ_{n,k} E_m[Y Z_n] Ẑ_k g_{n,k}`,
/// with one row per copy element `Ẑ_k`.
#[derive(Clone, Debug)]
pub struct WienerNoise {
    nu: HValuedWhiteNoise,
    copy: ChaosBasis,
}

pub fn wiener_hvalued_wn(space: Arc<BaseMeasureSpace>, copy: &ChaosBasis, seed: u64) -> Result<WienerNoise> {
    if space.dim() != copy.n_inc {
        return Err(Error::Dimension(format!("chaos space on ℝ^{}, copy basis on ℝ^{}", space.dim(), copy.n_inc)));
    }
    Ok(WienerNoise { nu: sample_hvalued_wn(space, copy.len(), seed)?, copy: copy.clone() })
}

impl WienerNoise {
    pub fn noise(&self) -> &HValuedWhiteNoise {
        &self.nu
    }

    pub fn copy_basis(&self) -> &ChaosBasis {
        &self.copy
    }

    /// `⟨∫Y dν, Ẑ_k⟩` for every `k`.
    pub fn eval(&self, y: &SpaceFn) -> Result<Vec<f64>> {
        self.nu.eval(y)
    }

    /// `E_m̂[X^# Ẑ_k]` as functions of `w`: `∂_iX` when `Ẑ_k = ŵ_i`, zero for
    /// the other copy elements since `X^#` is linear in `ŵ`.
    pub fn sharp_coefficients(&self, x: &Functional) -> Vec<SpaceFn> {
        self.copy
            .index
            .iter()
            .map(|alpha| {
                let ones: Vec<usize> = alpha.iter().enumerate().filter(|(_, a)| **a > 0).map(|(i, _)| i).collect();
                match (alpha.iter().sum::<u32>(), ones.as_slice()) {
                    (1, [i]) => SpaceFn::Expr(x.expr().derivative(*i)),
                    _ => SpaceFn::constant(0.0),
                }
            })
            .collect()
    }

    /// `d_G X = (E_m̂[X^# Ẑ_·], ν)`.
    pub fn mv_gradient(&self, x: &Functional) -> Result<ScalarWhiteNoise> {
        self.nu.pair_field(&self.sharp_coefficients(x))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WienerVarianceReport {
    /// `E_m[Y² Γ[X]]` by exact polynomial algebra (Monte Carlo otherwise).
    pub target: f64,
    pub target_stderr: f64,
    /// `Σ_{n,k} c_{n,k}²`.
    pub parseval: f64,
    /// `target − Σ c²` over chaos elements of degree `≤ p`, for `p = 0..=degree`.
    pub level_defects: Vec<f64>,
    pub defect: f64,
    pub empirical: f64,
    pub empirical_stderr: f64,
    /// The same variance with `d_G X` built by [`mv_gradient`] on the
    /// coordinate structure.
    pub cross: f64,
    pub cross_stderr: f64,
    pub n_chaos: usize,
    pub n_copy: usize,
    pub realizations: usize,
}

/// Coefficients `c_{n,k} = E_m[Y Z_n E_m̂[X^# Ẑ_k]]`, their Parseval sum, and
/// empirical variances of `∫Y d_G X` under two constructions.
#[allow(clippy::too_many_arguments)]
pub fn wiener_mvg_variance_check(
    x: &Functional,
    y: &Functional,
    degree: u32,
    copy_degree: u32,
    realizations: usize,
    seed: u64,
    budget: f64,
) -> Result<WienerVarianceReport> {
    let n_inc = x.dim();
    if y.dim() != n_inc {
        return Err(Error::Dimension(format!("X on ℝ^{n_inc}, Y on ℝ^{}", y.dim())));
    }
    let basis = chaos_basis(n_inc, degree, DEFAULT_BASIS_CAP)?;
    let copy = chaos_basis(n_inc, copy_degree, DEFAULT_BASIS_CAP)?;
    let space = Arc::new(basis.space()?);
    let wn = wiener_hvalued_wn(space.clone(), &copy, derive_seed(seed, 1))?;
    let dgx = wn.mv_gradient(x)?;
    let yf = SpaceFn::Expr(y.expr().clone());
    let proj = dgx.project(&yf)?;
    let parseval = proj.variance();

    let s = ou_structure(n_inc)?;
    let target_fn = Functional::new(y.expr().clone().powi(2) * gamma_expr(&s, x, x).expr().clone(), n_inc)?;
    let (target, target_stderr) = match Polynomial::from_expr(target_fn.expr(), n_inc) {
        Some(p) => (p.gaussian_mean(), 0.0),
        None => {
            let est = expectation(&s, 100 * realizations.max(1000), derive_seed(seed, 2), |w| target_fn.value(w))?;
            (est.value, est.stderr)
        }
    };

    let mut level_defects = Vec::with_capacity(degree as usize + 1);
    for p in 0..=degree {
        let upto: f64 = proj
            .terms
            .iter()
            .map(|(_, c)| c.iter().zip(basis.index()).filter(|(_, a)| a.iter().sum::<u32>() <= p).map(|(v, _)| v * v).sum::<f64>())
            .sum();
        level_defects.push(target - upto);
    }
    let defect = (target - parseval).max(0.0);
    if defect > budget {
        return Err(Error::Truncation(format!(
            "chaos truncation at degree {degree} leaves defect {defect:e} above budget {budget:e}"
        )));
    }

    let vals = sample_projections(&[&proj], space.len(), realizations, derive_seed(seed, 3)).remove(0);
    let emp = Moments::of(&vals);

    let d = Arc::new(build_dgradient(&s, RootMethod::Auto, None)?);
    let nu = sample_hvalued_wn(space.clone(), n_inc, derive_seed(seed, 4))?;
    let cross_proj = mv_gradient(std::slice::from_ref(x), &d, &nu)?.component(0).project(&yf)?;
    let cross_vals = sample_projections(&[&cross_proj], space.len(), realizations, derive_seed(seed, 5)).remove(0);
    let cross = Moments::of(&cross_vals);

    Ok(WienerVarianceReport {
        target,
        target_stderr,
        parseval,
        level_defects,
        defect,
        empirical: emp.variance,
        empirical_stderr: emp.variance_stderr,
        cross: cross.variance,
        cross_stderr: cross.variance_stderr,
        n_chaos: basis.len(),
        n_copy: copy.len(),
        realizations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;
    use crate::structures::gamma;

    fn ws(n: usize) -> TruncatedWienerSpace {
        TruncatedWienerSpace::new(n).unwrap()
    }

    #[test]
    fn discrete_isometry_on_grid_aligned_functions() {
        let w = ws(16);
        let s = ou_structure(16).unwrap();
        let one = w.integral(&SpaceFn::constant(1.0)).unwrap();
        let w1 = w.path_value(1.0).unwrap();
        let pt: Vec<f64> = (0..16).map(|i| (i as f64 * 0.37).sin()).collect();
        assert!((one.value(&pt).unwrap() - w1.value(&pt).unwrap()).abs() < 1e-13);
        assert!((gamma(&s, &one, &one, &pt).unwrap() - 1.0).abs() < 1e-13);
        let half = w.integral(&SpaceFn::interval(0.0, 0.5)).unwrap();
        assert!((gamma(&s, &half, &half, &pt).unwrap() - 0.5).abs() < 1e-13);
        let other = w.integral(&SpaceFn::interval(0.5, 1.0)).unwrap();
        assert!(gamma(&s, &half, &other, &pt).unwrap().abs() < 1e-15);
        // 1 − 2·1[0,1/2) is orthogonal to 1 in L²[0,1]
        let signed = SpaceFn::linear(vec![(1.0, SpaceFn::constant(1.0)), (-2.0, SpaceFn::interval(0.0, 0.5))]);
        let sg = w.integral(&signed).unwrap();
        assert!(gamma(&s, &sg, &one, &pt).unwrap().abs() < 1e-13);
        // a smooth f is integrated through its cell averages
        let c = w.integral_coefficients(&SpaceFn::parse("x1").unwrap()).unwrap();
        let norm: f64 = c.iter().map(|v| v * v).sum();
        let step_norm: f64 = (0..16).map(|i| ((i as f64 + 0.5) / 16.0).powi(2) / 16.0).sum();
        assert!((norm - step_norm).abs() < 1e-13);
    }

    #[test]
    fn path_binding() {
        let w = ws(4);
        let f = w.bind(&parse("w(1)^2 + w(0.5)").unwrap()).unwrap();
        let pt = [1.0, 2.0, -1.0, 0.5];
        let w1: f64 = pt.iter().sum::<f64>() / 2.0;
        let wh = (pt[0] + pt[1]) / 2.0;
        assert!((f.value(&pt).unwrap() - (w1 * w1 + wh)).abs() < 1e-13);
        assert!(TruncatedWienerSpace::new(0).is_err());
        assert!(matches!(w.path_value(1.5), Err(Error::Domain(_))));
    }

    #[test]
    fn sharp_examples() {
        let w = ws(8);
        let s = ou_structure(8).unwrap();
        let w1 = w.path_value(1.0).unwrap();
        let pt: Vec<f64> = (0..8).map(|i| 0.3 * i as f64 - 1.0).collect();
        let hat: Vec<f64> = (0..8).map(|i| (i as f64).cos()).collect();
        let x1 = sharp(&w1);
        assert!((x1.eval(&pt, &hat).unwrap() - w1.value(&hat).unwrap()).abs() < 1e-14);
        let sq = w.bind(&parse("w(1)^2").unwrap()).unwrap();
        let xs = sharp(&sq);
        let want = 2.0 * w1.value(&pt).unwrap() * w1.value(&hat).unwrap();
        assert!((xs.eval(&pt, &hat).unwrap() - want).abs() < 1e-13);
        assert_eq!(sharp(&Functional::constant(2.0, 8)).eval(&pt, &hat).unwrap(), 0.0);
        for (k, x) in [w1.clone(), sq.clone(), w.bind(&parse("exp(-w(0.5)^2)*w(1)").unwrap()).unwrap()].iter().enumerate() {
            let sg = sharp(x);
            for (j, wpt) in s.samples(100, 40 + k as u64).iter().enumerate() {
                let est = sg.second_moment(wpt, 4000, 100 * k as u64 + j as u64).unwrap();
                let g = gamma(&s, x, x, wpt).unwrap();
                // E_m̂[(X^#)²] is exactly Γ[X] and the estimator is unbiased
                assert!((est.value - g).abs() <= 4.5 * est.stderr + 1e-12, "{x} at {j}: {} vs {g}", est.value);
            }
        }
    }

    #[test]
    fn chaos_basis_examples() {
        let b = chaos_basis(2, 1, 100).unwrap();
        assert_eq!(b.index(), &[vec![0, 0], vec![1, 0], vec![0, 1]]);
        assert_eq!(b.element(0).unwrap().value(&[0.3, 0.4]).unwrap(), 1.0);
        assert_eq!(b.element(1).unwrap().value(&[0.3, 0.4]).unwrap(), 0.3);
        assert!(chaos_basis(4, 3, 100).unwrap().gram_error() < 1e-12);
        let z2 = chaos_basis(1, 2, 10).unwrap().element(2).unwrap();
        let p = Polynomial::from_expr(&z2.expr().clone().powi(2), 1).unwrap();
        assert!((p.gaussian_mean() - 1.0).abs() < 1e-12);
        assert!((z2.value(&[1.7]).unwrap() - (1.7f64.powi(2) - 1.0) / 2f64.sqrt()).abs() < 1e-14);
        assert!(matches!(chaos_basis(16, 3, 200), Err(Error::Size(_))));
        assert_eq!(chaos_basis(16, 3, DEFAULT_BASIS_CAP).unwrap().len(), 969);
    }

    #[test]
    fn noise_component_variances() {
        let basis = chaos_basis(3, 2, 100).unwrap();
        let copy = chaos_basis(3, 1, 100).unwrap();
        let space = Arc::new(basis.space().unwrap());
        let wn = wiener_hvalued_wn(space.clone(), &copy, 1).unwrap();
        let z1 = SpaceFn::Expr(basis.element(1).unwrap().expr().clone());
        let got = wn.eval(&z1).unwrap();
        for (k, v) in got.iter().enumerate() {
            assert!((v - wn.noise().realization().get(k, 1)).abs() < 1e-12);
        }
        for y in ["1", "x1*x2"] {
            let p = wn.noise().component(2).unwrap().project(&SpaceFn::parse(y).unwrap()).unwrap();
            assert!((p.variance() - 1.0).abs() < 1e-12, "{y}");
        }
    }

    fn check(xsrc: &str, ysrc: &str, target: f64) {
        let w = ws(16);
        let x = w.bind(&parse(xsrc).unwrap()).unwrap();
        let y = w.bind(&parse(ysrc).unwrap()).unwrap();
        let r = wiener_mvg_variance_check(&x, &y, 3, 1, 10_000, 7, 1e-9).unwrap();
        assert!((r.target - target).abs() < 1e-12, "{r:?}");
        assert!((r.parseval - target).abs() <= r.defect + 1e-12, "{r:?}");
        assert!((r.empirical - target).abs() <= 3.0 * r.empirical_stderr + r.defect, "{r:?}");
        assert!((r.cross - target).abs() <= 3.0 * r.cross_stderr + r.defect, "{r:?}");
        assert!(r.level_defects.windows(2).all(|p| p[1] <= p[0] + 1e-12), "{r:?}");
    }

    #[test]
    fn closing_variance_identity() {
        check("w(1)", "1", 1.0);
        check("w(1)", "w(1)", 1.0);
        check("w(1)^2", "1", 4.0);
    }

    #[test]
    fn truncation_budget_is_enforced() {
        let w = ws(2);
        let x = w.bind(&parse("w(1)").unwrap()).unwrap();
        let y = w.bind(&parse("w(1)^3").unwrap()).unwrap();
        assert!(matches!(wiener_mvg_variance_check(&x, &y, 2, 1, 100, 1, 1e-9), Err(Error::Truncation(_))));
        let r = wiener_mvg_variance_check(&x, &y, 3, 1, 100, 1, 1e-9).unwrap();
        // E[w(1)^6] = 15
        assert!((r.target - 15.0).abs() < 1e-10 && r.defect < 1e-10, "{r:?}");
    }
}
