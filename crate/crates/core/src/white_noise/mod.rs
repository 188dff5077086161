//! Truncated Gaussian white noise measures.
//!
//! A realization is a `K × N` array of independent standard Gaussians; row
//! `k` is drawn from its own stream derived from `(seed, k)`, so a scalar
//! noise and row 0 of an H-valued noise with the same seed coincide. Every
//! noise built from a realization is a [`ScalarForm`]: a weight function per
//! row, with `ν(f) = Σ_k Σ_n (f·w_k, ξ_n) g_{k,n}`. Multiplying by `φ`,
//! pairing with a vector and pairing with a field all act on the weights
//! only, so the transformations compose without touching the coefficients.

mod basis;
mod function;

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

pub use basis::{graded_indices, hermite_product, BaseMeasureSpace, BasisKind, Projection, DEFAULT_BASIS_CAP, DEFAULT_QUADRATURE_BUDGET};
pub use function::SpaceFn;

use crate::error::{Error, Result};
use crate::linalg::{psd_root, RootMethod};
use crate::rng::{derive_seed, rng_for, Rng};

/// `K × N` independent standard Gaussians, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Realization {
    seed: u64,
    rows: usize,
    n: usize,
    data: Vec<f64>,
}

fn draw_row(seed: u64, row: usize, n: usize) -> Vec<f64> {
    let mut rng: Rng = rng_for(seed, row as u64);
    (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
}

impl Realization {
    pub fn sample(rows: usize, n: usize, seed: u64) -> Realization {
        let data = (0..rows).flat_map(|k| draw_row(seed, k, n)).collect();
        Realization { seed, rows, n, data }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.data[k * self.n..(k + 1) * self.n]
    }

    /// `g_{k,n}`.
    pub fn get(&self, k: usize, n: usize) -> f64 {
        self.data[k * self.n + n]
    }
}

/// A row weight: constants keep coefficients bit-exact under rescaling by 1.
#[derive(Clone, Debug)]
pub enum Weight {
    Const(f64),
    Func(SpaceFn),
}

impl Weight {
    fn times(&self, phi: &SpaceFn) -> Weight {
        match (self, phi.as_const()) {
            (Weight::Const(c), Some(p)) => Weight::Const(c * p),
            (Weight::Const(c), None) => Weight::Func(phi.scaled(*c)),
            (Weight::Func(f), Some(p)) => Weight::Func(f.scaled(p)),
            (Weight::Func(f), None) => Weight::Func(f.mul(phi)),
        }
    }

    fn times_const(&self, a: f64) -> Weight {
        match self {
            Weight::Const(c) => Weight::Const(c * a),
            Weight::Func(f) => Weight::Func(f.scaled(a)),
        }
    }

    fn plus(&self, other: &Weight) -> Weight {
        match (self, other) {
            (Weight::Const(a), Weight::Const(b)) => Weight::Const(a + b),
            (a, b) => Weight::Func(SpaceFn::linear(vec![(1.0, a.as_fn()), (1.0, b.as_fn())])),
        }
    }

    fn as_fn(&self) -> SpaceFn {
        match self {
            Weight::Const(c) => SpaceFn::constant(*c),
            Weight::Func(f) => f.clone(),
        }
    }

    fn is_zero(&self) -> bool {
        matches!(self, Weight::Const(c) if *c == 0.0)
    }
}

/// Density of an associated measure against `μ`: `scale · Π factors`.
#[derive(Clone, Debug)]
pub struct AssociatedMeasure {
    pub scale: f64,
    pub factors: Vec<SpaceFn>,
}

impl AssociatedMeasure {
    pub fn base() -> AssociatedMeasure {
        AssociatedMeasure { scale: 1.0, factors: Vec::new() }
    }

    fn times(&self, scale: f64, factor: Option<SpaceFn>) -> AssociatedMeasure {
        let mut factors = self.factors.clone();
        factors.extend(factor);
        AssociatedMeasure { scale: self.scale * scale, factors }
    }

    /// `(scale, sorted factor labels)`: equal keys mean equal measures.
    pub fn canonical(&self) -> (f64, Vec<String>) {
        let mut labels: Vec<String> = self.factors.iter().map(SpaceFn::label).collect();
        labels.sort();
        (self.scale, labels)
    }

    /// Exact equality of the symbolic descriptions, scales to 1e-14 relative.
    pub fn same_as(&self, other: &AssociatedMeasure) -> bool {
        let (a, la) = self.canonical();
        let (b, lb) = other.canonical();
        la == lb && (a - b).abs() <= 1e-14 * a.abs().max(b.abs())
    }

    pub fn density_at(&self, x: &[f64]) -> Result<f64> {
        let mut d = self.scale;
        for f in &self.factors {
            d *= f.eval(x)?;
        }
        Ok(d)
    }

    pub fn is_zero(&self) -> bool {
        self.scale == 0.0
    }

    /// Density as one function on `E`.
    pub fn density(&self) -> SpaceFn {
        let mut acc = SpaceFn::constant(self.scale);
        for f in &self.factors {
            acc = acc.mul(f);
        }
        acc
    }
}

/// The law of a scalar noise: weights per realization row.
#[derive(Clone, Debug)]
pub struct ScalarForm {
    space: Arc<BaseMeasureSpace>,
    rows: BTreeMap<usize, Weight>,
    measure: AssociatedMeasure,
}

/// Coefficients of `ν(f)` against the realization, row by row.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseProjection {
    pub terms: Vec<(usize, Vec<f64>)>,
    /// `Σ_k ∫ (f w_k)² dμ`: the untruncated variance.
    pub norm_sq: f64,
    pub quad_err: f64,
}

impl NoiseProjection {
    /// Variance of `ν(f)` under truncation: the sum of squared coefficients.
    pub fn variance(&self) -> f64 {
        self.terms.iter().flat_map(|(_, c)| c).map(|c| c * c).sum()
    }

    /// Untruncated variance minus truncated variance.
    pub fn defect(&self) -> f64 {
        (self.norm_sq - self.variance()).max(0.0)
    }

    /// `E[ν(f) ν(g)]` under truncation.
    pub fn covariance(&self, other: &NoiseProjection) -> f64 {
        let mut s = 0.0;
        for (k, a) in &self.terms {
            for (l, b) in &other.terms {
                if k == l {
                    s += a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
                }
            }
        }
        s
    }

    /// `Σ_k (Σ_n c_{k,n} g_{k,n})`, one partial sum per row.
    pub fn apply(&self, g: &Realization) -> f64 {
        self.terms.iter().map(|(k, c)| row_sum(c, g.row(*k))).sum()
    }

    fn rows(&self) -> impl Iterator<Item = usize> + '_ {
        self.terms.iter().map(|t| t.0)
    }

    /// Coefficient difference `self − other` (same space).
    pub fn minus(&self, other: &NoiseProjection) -> Vec<f64> {
        let mut by_row: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for (k, c) in &self.terms {
            by_row.insert(*k, c.clone());
        }
        for (k, c) in &other.terms {
            let e = by_row.entry(*k).or_insert_with(|| vec![0.0; c.len()]);
            for (a, b) in e.iter_mut().zip(c) {
                *a -= b;
            }
        }
        by_row.into_values().flatten().collect()
    }
}

impl ScalarForm {
    fn new(space: Arc<BaseMeasureSpace>, rows: BTreeMap<usize, Weight>, measure: AssociatedMeasure) -> ScalarForm {
        let rows = rows.into_iter().filter(|(_, w)| !w.is_zero()).collect();
        ScalarForm { space, rows, measure }
    }

    pub fn space(&self) -> &BaseMeasureSpace {
        &self.space
    }

    pub fn measure(&self) -> &AssociatedMeasure {
        &self.measure
    }

    /// Projection of `f` on every row with a weight.
    pub fn project(&self, f: &SpaceFn) -> Result<NoiseProjection> {
        let mut terms = Vec::with_capacity(self.rows.len());
        let mut norm_sq = 0.0;
        let mut err_sq = 0.0;
        let mut plain: Option<Projection> = None;
        for (&k, w) in &self.rows {
            let p = match w {
                Weight::Const(c) => {
                    if plain.is_none() {
                        plain = Some(self.space.project(f)?);
                    }
                    plain.as_ref().expect("projection computed above").scaled(*c)
                }
                Weight::Func(wf) => self.space.project(&f.mul(wf))?,
            };
            norm_sq += p.norm_sq;
            err_sq += p.quad_err * p.quad_err;
            terms.push((k, p.coeffs));
        }
        Ok(NoiseProjection { terms, norm_sq, quad_err: err_sq.sqrt() })
    }

    fn multiply(&self, phi: &SpaceFn) -> ScalarForm {
        let rows = self.rows.iter().map(|(k, w)| (*k, w.times(phi))).collect();
        ScalarForm::new(self.space.clone(), rows, multiplied_measure(&self.measure, phi))
    }
}

fn multiplied_measure(m: &AssociatedMeasure, phi: &SpaceFn) -> AssociatedMeasure {
    match phi.as_const() {
        Some(c) => m.times(c * c, None),
        None => m.times(1.0, Some(phi.square())),
    }
}

/// A scalar white noise: a form together with one realization.
#[derive(Clone, Debug)]
pub struct ScalarWhiteNoise {
    form: ScalarForm,
    g: Arc<Realization>,
}

impl ScalarWhiteNoise {
    pub fn form(&self) -> &ScalarForm {
        &self.form
    }

    pub fn realization(&self) -> &Realization {
        &self.g
    }

    pub fn seed(&self) -> u64 {
        self.g.seed
    }

    pub fn measure(&self) -> &AssociatedMeasure {
        &self.form.measure
    }

    pub fn project(&self, f: &SpaceFn) -> Result<NoiseProjection> {
        self.form.project(f)
    }

    /// `ν(f)`; a linear combination is evaluated term by term, so linearity
    /// holds bit-exactly per realization.
    pub fn eval(&self, f: &SpaceFn) -> Result<f64> {
        if let SpaceFn::Linear(ts) = f {
            let mut acc = 0.0;
            for (a, t) in ts {
                acc += a * self.eval(t)?;
            }
            return Ok(acc);
        }
        Ok(self.form.project(f)?.apply(&self.g))
    }

    /// Multiplication by a function: `(φν)(f) = ν(fφ)`, associated measure `φ²·μ`.
    pub fn multiply(&self, phi: &SpaceFn) -> ScalarWhiteNoise {
        ScalarWhiteNoise { form: self.form.multiply(phi), g: self.g.clone() }
    }

    /// Realization-wise sum of two noises on the same realization.
    pub fn add(&self, other: &ScalarWhiteNoise) -> Result<ScalarWhiteNoise> {
        self.check_shared(other)?;
        let mut rows = self.form.rows.clone();
        for (k, w) in &other.form.rows {
            let merged = match rows.get(k) {
                Some(v) => v.plus(w),
                None => w.clone(),
            };
            rows.insert(*k, merged);
        }
        let density = rows.values().fold(SpaceFn::constant(0.0), |acc, w| {
            let sq = w.as_fn().square();
            if acc.as_const() == Some(0.0) {
                sq
            } else {
                SpaceFn::linear(vec![(1.0, acc), (1.0, sq)])
            }
        });
        let measure = AssociatedMeasure { scale: 1.0, factors: vec![density] };
        Ok(ScalarWhiteNoise { form: ScalarForm::new(self.form.space.clone(), rows, measure), g: self.g.clone() })
    }

    fn check_shared(&self, other: &ScalarWhiteNoise) -> Result<()> {
        if !Arc::ptr_eq(&self.form.space, &other.form.space) || self.g != other.g {
            return Err(Error::Dimension("noises live on different spaces or realizations".into()));
        }
        Ok(())
    }
}

/// Scalar white noise on `space`: one row of i.i.d. coefficients.
pub fn sample_scalar_wn(space: Arc<BaseMeasureSpace>, seed: u64) -> Result<ScalarWhiteNoise> {
    space.check_gram()?;
    let g = Arc::new(Realization::sample(1, space.len(), seed));
    let rows = BTreeMap::from([(0, Weight::Const(1.0))]);
    Ok(ScalarWhiteNoise { form: ScalarForm::new(space, rows, AssociatedMeasure::base()), g })
}

pub fn wn_eval(nu: &ScalarWhiteNoise, f: &SpaceFn) -> Result<f64> {
    nu.eval(f)
}

/// An `ℝ^K`-valued white noise `Σ_k ν_k χ_k`, optionally multiplied by `φ`.
#[derive(Clone, Debug)]
pub struct HValuedWhiteNoise {
    space: Arc<BaseMeasureSpace>,
    k: usize,
    weight: Weight,
    measure: AssociatedMeasure,
    g: Arc<Realization>,
}

pub fn sample_hvalued_wn(space: Arc<BaseMeasureSpace>, k: usize, seed: u64) -> Result<HValuedWhiteNoise> {
    if k == 0 {
        return Err(Error::Dimension("the Hilbert dimension K must be at least 1".into()));
    }
    space.check_gram()?;
    let g = Arc::new(Realization::sample(k, space.len(), seed));
    Ok(HValuedWhiteNoise { space, k, weight: Weight::Const(1.0), measure: AssociatedMeasure::base(), g })
}

impl HValuedWhiteNoise {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn space(&self) -> &Arc<BaseMeasureSpace> {
        &self.space
    }

    pub fn realization(&self) -> &Realization {
        &self.g
    }

    pub fn seed(&self) -> u64 {
        self.g.seed
    }

    /// Associated measure of `‖ν‖²`, per unit vector of H.
    pub fn measure(&self) -> &AssociatedMeasure {
        &self.measure
    }

    /// `ν_k = (e_k, ν)`.
    pub fn component(&self, k: usize) -> Result<ScalarWhiteNoise> {
        let mut x = vec![0.0; self.k];
        *x.get_mut(k).ok_or_else(|| Error::Dimension(format!("component {k} of a {}-dimensional noise", self.k)))? = 1.0;
        self.pair_vector(&x)
    }

    /// `ν(f) ∈ ℝ^K`.
    pub fn eval(&self, f: &SpaceFn) -> Result<Vec<f64>> {
        (0..self.k).map(|k| self.component(k)?.eval(f)).collect()
    }

    /// Multiplication by a function: `φν`, associated measure `φ²·μ`.
    pub fn multiply(&self, phi: &SpaceFn) -> HValuedWhiteNoise {
        HValuedWhiteNoise {
            weight: self.weight.times(phi),
            measure: multiplied_measure(&self.measure, phi),
            ..self.clone()
        }
    }

    /// Pairing with a vector: `(x, ν)`, associated measure `‖x‖²·μ`.
    pub fn pair_vector(&self, x: &[f64]) -> Result<ScalarWhiteNoise> {
        if x.len() != self.k {
            return Err(Error::Dimension(format!("vector of length {} paired with K = {}", x.len(), self.k)));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("paired vector has non-finite entries".into()));
        }
        let rows = x.iter().enumerate().map(|(k, &xk)| (k, self.weight.times_const(xk))).collect();
        let norm_sq: f64 = x.iter().map(|v| v * v).sum();
        Ok(self.scalar(rows, self.measure.times(norm_sq, None)))
    }

    /// Pairing with a field: `(ψ, ν)(f) = Σ_k ν_k(f ψ_k)`, associated measure `‖ψ‖²·μ`.
    pub fn pair_field(&self, psi: &[SpaceFn]) -> Result<ScalarWhiteNoise> {
        if psi.len() != self.k {
            return Err(Error::Dimension(format!("field with {} components paired with K = {}", psi.len(), self.k)));
        }
        let rows = psi.iter().enumerate().map(|(k, p)| (k, self.weight.times(p))).collect();
        let consts: Option<Vec<f64>> = psi.iter().map(SpaceFn::as_const).collect();
        let measure = match (consts, psi) {
            (Some(c), _) => self.measure.times(c.iter().map(|v| v * v).sum(), None),
            (None, [single]) => self.measure.times(1.0, Some(single.square())),
            (None, _) => {
                let sum = SpaceFn::linear(psi.iter().map(|p| (1.0, p.square())).collect());
                self.measure.times(1.0, Some(sum))
            }
        };
        Ok(self.scalar(rows, measure))
    }

    fn scalar(&self, rows: BTreeMap<usize, Weight>, measure: AssociatedMeasure) -> ScalarWhiteNoise {
        ScalarWhiteNoise { form: ScalarForm::new(self.space.clone(), rows, measure), g: self.g.clone() }
    }
}

pub fn transform_pair_vector(nu: &HValuedWhiteNoise, x: &[f64]) -> Result<ScalarWhiteNoise> {
    nu.pair_vector(x)
}

pub fn transform_pair_field(nu: &HValuedWhiteNoise, psi: &[SpaceFn]) -> Result<ScalarWhiteNoise> {
    nu.pair_field(psi)
}

/// A noise that can be multiplied by a function (`φν`).
pub trait Multiply: Sized {
    fn multiply_by(&self, phi: &SpaceFn) -> Self;
}

impl Multiply for ScalarWhiteNoise {
    fn multiply_by(&self, phi: &SpaceFn) -> Self {
        self.multiply(phi)
    }
}

impl Multiply for HValuedWhiteNoise {
    fn multiply_by(&self, phi: &SpaceFn) -> Self {
        self.multiply(phi)
    }
}

impl Multiply for VectorWhiteNoise {
    fn multiply_by(&self, phi: &SpaceFn) -> Self {
        self.multiply(phi)
    }
}

pub fn transform_multiply<N: Multiply>(nu: &N, phi: &SpaceFn) -> N {
    nu.multiply_by(phi)
}

/// `p` correlated noises with matrix of measures `ρ_ij · μ`, realized as
/// `ν_i = Σ_j R_ij η_j` with `R Rᵀ = ρ` pointwise and independent `η_j`.
#[derive(Clone, Debug)]
pub struct VectorWhiteNoise {
    space: Arc<BaseMeasureSpace>,
    p: usize,
    density: Vec<SpaceFn>,
    /// Row-major `p × p` weights `R_ij`.
    mixing: Vec<Weight>,
    multiplier: Weight,
    scale_measure: AssociatedMeasure,
    g: Arc<Realization>,
}

/// Points at which a non-constant density is checked for positivity.
const PSD_CHECK_POINTS: usize = 2000;

pub fn sample_vector_wn(space: Arc<BaseMeasureSpace>, density: Vec<SpaceFn>, p: usize, seed: u64) -> Result<VectorWhiteNoise> {
    if p == 0 || density.len() != p * p {
        return Err(Error::Dimension(format!("{} density entries for p = {p}", density.len())));
    }
    space.check_gram()?;
    let at = |x: &[f64]| -> Result<DMatrix<f64>> {
        let vals: Vec<f64> = density.iter().map(|f| f.eval(x)).collect::<Result<_>>()?;
        Ok(DMatrix::from_row_slice(p, p, &vals))
    };
    let root_at = |x: &[f64]| -> Result<DMatrix<f64>> {
        let rho = at(x)?;
        if (&rho - rho.transpose()).abs().max() > 1e-12 * rho.abs().max().max(1.0) {
            return Err(Error::Positivity(format!("density is not symmetric at {x:?}")));
        }
        match psd_root(&rho, RootMethod::Auto) {
            Ok((m, _)) => Ok(m.transpose()),
            Err(Error::Factorization(msg)) => Err(Error::Positivity(format!("density at {x:?}: {msg}"))),
            Err(e) => Err(e),
        }
    };
    let consts: Option<Vec<f64>> = density.iter().map(SpaceFn::as_const).collect();
    let mixing: Vec<Weight> = if consts.is_some() {
        let r = root_at(&vec![0.0; space.dim()])?;
        (0..p * p).map(|ij| Weight::Const(r[(ij / p, ij % p)])).collect()
    } else {
        let mut rng = rng_for(seed, u64::MAX);
        for _ in 0..PSD_CHECK_POINTS {
            root_at(&space.sample_point(&mut rng))?;
        }
        let density = Arc::new(density.clone());
        (0..p * p)
            .map(|ij| {
                let density = density.clone();
                Weight::Func(SpaceFn::native(format!("root(rho)[{},{}]", ij / p, ij % p), move |x| {
                    let vals: Vec<f64> = density.iter().map(|f| f.eval(x).unwrap_or(f64::NAN)).collect();
                    let rho = DMatrix::from_row_slice(p, p, &vals);
                    psd_root(&rho, RootMethod::Auto).map(|(m, _)| m[(ij % p, ij / p)]).unwrap_or(f64::NAN)
                }))
            })
            .collect()
    };
    let g = Arc::new(Realization::sample(p, space.len(), seed));
    Ok(VectorWhiteNoise {
        space,
        p,
        density,
        mixing,
        multiplier: Weight::Const(1.0),
        scale_measure: AssociatedMeasure::base(),
        g,
    })
}

impl VectorWhiteNoise {
    pub fn p(&self) -> usize {
        self.p
    }

    /// `ν_i`, with associated measure `ρ_ii · μ`.
    pub fn component(&self, i: usize) -> Result<ScalarWhiteNoise> {
        if i >= self.p {
            return Err(Error::Dimension(format!("component {i} of a {}-variate noise", self.p)));
        }
        let mut x = vec![0.0; self.p];
        x[i] = 1.0;
        self.pair_vector(&x)
    }

    /// Pairing with a vector: `Σ_i x_i ν_i`, associated measure `xᵀρx · μ`.
    pub fn pair_vector(&self, x: &[f64]) -> Result<ScalarWhiteNoise> {
        if x.len() != self.p {
            return Err(Error::Dimension(format!("vector of length {} for p = {}", x.len(), self.p)));
        }
        let p = self.p;
        let mut rows = BTreeMap::new();
        for j in 0..p {
            let mut w: Option<Weight> = None;
            for (i, &xi) in x.iter().enumerate() {
                if xi == 0.0 {
                    continue;
                }
                let term = self.mixing[i * p + j].times_const(xi);
                w = Some(match w {
                    None => term,
                    Some(acc) => acc.plus(&term),
                });
            }
            if let Some(w) = w {
                rows.insert(j, match &self.multiplier {
                    Weight::Const(c) => w.times_const(*c),
                    Weight::Func(f) => w.times(f),
                });
            }
        }
        let measure = self.quadratic_measure(x);
        Ok(ScalarWhiteNoise { form: ScalarForm::new(self.space.clone(), rows, measure), g: self.g.clone() })
    }

    fn quadratic_measure(&self, x: &[f64]) -> AssociatedMeasure {
        let p = self.p;
        let consts: Option<Vec<f64>> = self.density.iter().map(SpaceFn::as_const).collect();
        match consts {
            Some(rho) => {
                let mut q = 0.0;
                for i in 0..p {
                    for j in 0..p {
                        q += x[i] * rho[i * p + j] * x[j];
                    }
                }
                self.scale_measure.times(q, None)
            }
            None => {
                let mut terms = Vec::new();
                for i in 0..p {
                    for j in 0..p {
                        if x[i] * x[j] != 0.0 {
                            terms.push((x[i] * x[j], self.density[i * p + j].clone()));
                        }
                    }
                }
                let f = if terms.len() == 1 && terms[0].0 == 1.0 { terms.remove(0).1 } else { SpaceFn::linear(terms) };
                self.scale_measure.times(1.0, Some(f))
            }
        }
    }

    /// Multiplication by a function, componentwise: associated matrix `φ² ρ · μ`.
    pub fn multiply(&self, phi: &SpaceFn) -> VectorWhiteNoise {
        VectorWhiteNoise {
            multiplier: self.multiplier.times(phi),
            scale_measure: multiplied_measure(&self.scale_measure, phi),
            ..self.clone()
        }
    }
}

/// Values of each projection on `m` realizations with per-realization seeds
/// `derive_seed(seed, r)`; only the rows the projections use are drawn.
pub fn sample_projections(projections: &[&NoiseProjection], n: usize, m: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rows: Vec<usize> = projections.iter().flat_map(|p| p.rows()).collect();
    rows.sort_unstable();
    rows.dedup();
    let per_realization: Vec<Vec<f64>> = (0..m)
        .into_par_iter()
        .with_min_len(64)
        .map(|r| {
            let s = derive_seed(seed, r as u64);
            let drawn: BTreeMap<usize, Vec<f64>> = rows.iter().map(|&k| (k, draw_row(s, k, n))).collect();
            projections
                .iter()
                .map(|p| p.terms.iter().map(|(k, c)| row_sum(c, &drawn[k])).sum())
                .collect()
        })
        .collect();
    (0..projections.len()).map(|j| per_realization.iter().map(|v| v[j]).collect()).collect()
}

fn row_sum(c: &[f64], g: &[f64]) -> f64 {
    c.iter().zip(g).map(|(a, b)| a * b).sum()
}

/// Seed of realization `r` in a batch drawn by [`sample_projections`].
pub fn realization_seed(seed: u64, r: usize) -> u64 {
    derive_seed(seed, r as u64)
}
