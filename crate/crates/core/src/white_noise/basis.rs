//! Base measure spaces `(E, μ)` with a truncated orthonormal basis of `L²(μ)`
//! and an inner-product evaluator.
//!
//! Deterministic spaces integrate on composite 5-point Gauss–Legendre rules
//! (tensor products in two dimensions). Cell bases normalize each indicator
//! by its quadrature mass, so their discrete Gram matrix is the identity. The
//! Hermite basis switches to exact polynomial algebra whenever the integrand
//! is a polynomial expression.

use std::collections::HashMap;
use std::sync::Arc;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use super::function::SpaceFn;
use crate::error::{Error, Result};
use crate::expr::{hermite_normalized, MultiIndex, Polynomial};
use crate::rng::{par_sample, Rng};
use crate::stats::{normal_pdf, normal_quantile};

const GL_NODES: [f64; 5] = [-0.906_179_845_938_664, -0.538_469_310_105_683_1, 0.0, 0.538_469_310_105_683_1, 0.906_179_845_938_664];
const GL_WEIGHTS: [f64; 5] = [0.236_926_885_056_189_1, 0.478_628_670_499_366_5, 0.568_888_888_888_888_9, 0.478_628_670_499_366_5, 0.236_926_885_056_189_1];

/// Outer edge used in place of ±∞ for Gaussian cells.
const GAUSS_EDGE: f64 = 9.0;
/// Largest supported Hermite degree per coordinate.
const MAX_HERMITE_DEGREE: u32 = 40;
/// Default budget on the Monte Carlo stderr norm, relative to `‖f‖`.
pub const DEFAULT_QUADRATURE_BUDGET: f64 = 1e-3;
pub const DEFAULT_BASIS_CAP: usize = 1024;

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum BasisKind {
    /// Haar system on uniform `[0, 1]`: `2^levels` functions.
    Haar { levels: u32 },
    /// Normalized Hermite products of total degree `≤ degree` for `N(0, I_dim)`.
    Hermite { dim: usize, degree: u32 },
    /// Normalized indicators of equal-mass Gaussian quantile cells.
    GaussianCells { dim: usize, per_axis: usize },
    /// Normalized indicators of empirical quantile cells of a sampled 1-D law.
    SampledCells { cells: usize, samples: usize },
    /// User functions on uniform `[0, 1]`.
    Custom { n: usize },
}

/// One coordinate of a tensor quadrature rule.
#[derive(Clone, Debug)]
struct Axis {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    cell: Vec<usize>,
}

impl Axis {
    /// `panels_per_cell` panels of width at most `max_width` in each `[edges[c], edges[c+1]]`.
    fn on_cells(edges: &[f64], max_width: f64, min_panels: usize, density: &dyn Fn(f64) -> f64) -> Axis {
        let mut ax = Axis { nodes: Vec::new(), weights: Vec::new(), cell: Vec::new() };
        for c in 0..edges.len() - 1 {
            let (a, b) = (edges[c], edges[c + 1]);
            let panels = (((b - a) / max_width).ceil() as usize).max(min_panels);
            let h = (b - a) / panels as f64;
            for p in 0..panels {
                let lo = a + p as f64 * h;
                let mid = lo + 0.5 * h;
                for (t, wt) in GL_NODES.iter().zip(GL_WEIGHTS) {
                    let x = mid + 0.5 * h * t;
                    ax.nodes.push(x);
                    ax.weights.push(0.5 * h * wt * density(x));
                    ax.cell.push(c);
                }
            }
        }
        ax
    }

    fn len(&self) -> usize {
        self.nodes.len()
    }
}

#[derive(Clone, Debug)]
struct McPoints {
    dim: usize,
    points: Vec<f64>,
}

impl McPoints {
    fn len(&self) -> usize {
        self.points.len() / self.dim
    }

    fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }
}

#[derive(Clone)]
enum Inner {
    /// Row-major `n × Q` matrix of `ξ_n(x_q) w_q`.
    Design { axis: Axis, design: Vec<f64> },
    Cells { axes: Vec<Axis>, per_axis: usize, masses: Vec<Vec<f64>> },
    Hermite { axes: Option<Vec<Axis>>, tables: Vec<Vec<f64>>, lookup: HashMap<MultiIndex, usize>, mc: Option<McPoints> },
    Sampled { mc: McPoints, cell_of: Vec<usize>, counts: Vec<usize>, edges: Vec<f64> },
}

/// `L²(μ)` coefficients of one function on the truncated basis.
#[derive(Clone, Debug, PartialEq)]
pub struct Projection {
    pub coeffs: Vec<f64>,
    /// `∫ f² dμ`.
    pub norm_sq: f64,
    /// Norm of the Monte Carlo stderr of `coeffs`; zero for deterministic rules.
    pub quad_err: f64,
}

impl Projection {
    /// `Σ_n (f, ξ_n)²`.
    pub fn parseval(&self) -> f64 {
        self.coeffs.iter().map(|c| c * c).sum()
    }

    /// `∫ f² dμ − Σ_n (f, ξ_n)²`, clamped at zero.
    pub fn defect(&self) -> f64 {
        (self.norm_sq - self.parseval()).max(0.0)
    }

    pub fn scaled(&self, a: f64) -> Projection {
        Projection {
            coeffs: self.coeffs.iter().map(|c| a * c).collect(),
            norm_sq: a * a * self.norm_sq,
            quad_err: a.abs() * self.quad_err,
        }
    }
}

type MuSampler = dyn Fn(&mut Rng) -> Vec<f64> + Send + Sync;

/// A bounded positive measure with a truncated orthonormal basis.
#[derive(Clone)]
pub struct BaseMeasureSpace {
    kind: BasisKind,
    dim: usize,
    n: usize,
    total_mass: f64,
    inner: Inner,
    basis_fns: Option<Vec<SpaceFn>>,
    index: Vec<MultiIndex>,
    gram_error: f64,
    gram_tolerance: f64,
    budget: f64,
    sampler: Arc<MuSampler>,
}

impl std::fmt::Debug for BaseMeasureSpace {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "BaseMeasureSpace({:?}, n = {})", self.kind, self.n)
    }
}

fn gaussian_sampler(dim: usize) -> Arc<MuSampler> {
    Arc::new(move |rng: &mut Rng| (0..dim).map(|_| StandardNormal.sample(rng)).collect())
}

fn uniform_sampler() -> Arc<MuSampler> {
    Arc::new(|rng: &mut Rng| vec![rng.random::<f64>()])
}

/// All multi-indices of length `dim` with total degree `≤ degree`, graded,
/// earlier coordinates first within a degree.
pub fn graded_indices(dim: usize, degree: u32, cap: usize) -> Result<Vec<MultiIndex>> {
    fn fill(prefix: &mut MultiIndex, dim: usize, left: u32, out: &mut Vec<MultiIndex>, cap: usize) -> bool {
        if prefix.len() == dim - 1 {
            prefix.push(left);
            out.push(prefix.clone());
            prefix.pop();
            return out.len() <= cap;
        }
        for k in (0..=left).rev() {
            prefix.push(k);
            let ok = fill(prefix, dim, left - k, out, cap);
            prefix.pop();
            if !ok {
                return false;
            }
        }
        true
    }
    if dim == 0 {
        return Err(Error::Basis("dimension must be positive".into()));
    }
    let mut out = Vec::new();
    for total in 0..=degree {
        if !fill(&mut Vec::with_capacity(dim), dim, total, &mut out, cap) {
            return Err(Error::Size(format!("Hermite basis of degree {degree} in dimension {dim} exceeds the cap of {cap}")));
        }
    }
    Ok(out)
}

/// `Z_α(x) = Π_i He_{α_i}(x_i) / sqrt(α_i!)`.
pub fn hermite_product(alpha: &[u32], x: &[f64]) -> f64 {
    alpha.iter().zip(x).filter(|(a, _)| **a > 0).map(|(&a, &xi)| hermite_normalized(a, xi)).product()
}

fn haar_value(n: usize, x: f64) -> f64 {
    if !(0.0..1.0).contains(&x) {
        return 0.0;
    }
    if n == 0 {
        return 1.0;
    }
    let level = usize::BITS - 1 - n.leading_zeros();
    let k = n - (1 << level);
    let scale = (1u64 << level) as f64;
    let lo = k as f64 / scale;
    let mid = (k as f64 + 0.5) / scale;
    let hi = (k as f64 + 1.0) / scale;
    if x >= lo && x < mid {
        scale.sqrt()
    } else if x >= mid && x < hi {
        -scale.sqrt()
    } else {
        0.0
    }
}

impl BaseMeasureSpace {
    fn new(kind: BasisKind, dim: usize, n: usize, inner: Inner, sampler: Arc<MuSampler>) -> BaseMeasureSpace {
        BaseMeasureSpace {
            kind,
            dim,
            n,
            total_mass: 1.0,
            inner,
            basis_fns: None,
            index: Vec::new(),
            gram_error: 0.0,
            gram_tolerance: 1e-12,
            budget: DEFAULT_QUADRATURE_BUDGET,
            sampler,
        }
    }

    /// Haar basis of `L²([0,1], dx)` truncated at `2^levels` functions.
    pub fn haar(levels: u32) -> Result<BaseMeasureSpace> {
        if levels > 16 {
            return Err(Error::Size(format!("Haar level {levels} exceeds 16")));
        }
        let n = 1usize << levels;
        let edges: Vec<f64> = (0..=n).map(|k| k as f64 / n as f64).collect();
        let axis = Axis::on_cells(&edges, f64::INFINITY, 2, &|_| 1.0);
        let q = axis.len();
        let mut design = vec![0.0; n * q];
        for j in 0..n {
            for (i, (&x, &w)) in axis.nodes.iter().zip(&axis.weights).enumerate() {
                design[j * q + i] = haar_value(j, x) * w;
            }
        }
        let fns = (0..n).map(|j| SpaceFn::native(format!("haar{j}"), move |x| haar_value(j, x[0]))).collect();
        let mut s = BaseMeasureSpace::new(BasisKind::Haar { levels }, 1, n, Inner::Design { axis, design }, uniform_sampler());
        s.basis_fns = Some(fns);
        s.gram_error = s.design_gram_error();
        Ok(s)
    }

    /// User-supplied functions on uniform `[0,1]`, integrated on `panels` panels.
    /// The Gram matrix is checked against the identity at `1e-3`.
    pub fn custom(functions: Vec<SpaceFn>, panels: usize) -> Result<BaseMeasureSpace> {
        let n = functions.len();
        if n == 0 || panels == 0 {
            return Err(Error::Basis("a custom basis needs functions and panels".into()));
        }
        let edges: Vec<f64> = (0..=panels).map(|k| k as f64 / panels as f64).collect();
        let axis = Axis::on_cells(&edges, f64::INFINITY, 1, &|_| 1.0);
        let q = axis.len();
        let mut design = vec![0.0; n * q];
        for (j, f) in functions.iter().enumerate() {
            for i in 0..q {
                design[j * q + i] = f.eval(&[axis.nodes[i]])? * axis.weights[i];
            }
        }
        let mut s = BaseMeasureSpace::new(BasisKind::Custom { n }, 1, n, Inner::Design { axis, design }, uniform_sampler());
        s.basis_fns = Some(functions);
        s.gram_tolerance = 1e-3;
        s.gram_error = s.design_gram_error();
        Ok(s)
    }

    /// Hermite products of total degree `≤ degree` on `N(0, I_dim)`.
    pub fn hermite(dim: usize, degree: u32, cap: usize) -> Result<BaseMeasureSpace> {
        if degree > MAX_HERMITE_DEGREE {
            return Err(Error::Size(format!("Hermite degree {degree} exceeds {MAX_HERMITE_DEGREE}")));
        }
        let index = graded_indices(dim, degree, cap)?;
        let lookup: HashMap<MultiIndex, usize> = index.iter().cloned().enumerate().map(|(i, a)| (a, i)).collect();
        let (axes, tables, mc) = if dim <= 2 {
            let edge = 10.0 + 0.5 * degree as f64;
            let width = if dim == 1 { 0.01 } else { 0.2 };
            let axis = Axis::on_cells(&[-edge, edge], width, 1, &normal_pdf);
            let table: Vec<f64> = (0..=degree)
                .flat_map(|j| axis.nodes.iter().zip(&axis.weights).map(move |(&x, &w)| hermite_normalized(j, x) * w))
                .collect();
            (Some(vec![axis; dim]), vec![table; dim], None)
        } else {
            (None, Vec::new(), Some(gaussian_mc_points(dim, 20_000, 0x5eed_4e41)))
        };
        let n = index.len();
        let mut s = BaseMeasureSpace::new(
            BasisKind::Hermite { dim, degree },
            dim,
            n,
            Inner::Hermite { axes, tables, lookup, mc },
            gaussian_sampler(dim),
        );
        s.index = index;
        s.gram_tolerance = 1e-3;
        s.gram_error = s.hermite_gram_error();
        Ok(s)
    }

    /// Equal-mass Gaussian quantile cells, `per_axis` per coordinate (`dim ≤ 2`).
    pub fn gaussian_cells(dim: usize, per_axis: usize) -> Result<BaseMeasureSpace> {
        if !(1..=2).contains(&dim) || per_axis < 1 {
            return Err(Error::Basis(format!("Gaussian cells need dimension 1 or 2 and at least one cell, got {dim}, {per_axis}")));
        }
        let n = per_axis.pow(dim as u32);
        if n > 1 << 16 {
            return Err(Error::Size(format!("{n} Gaussian cells")));
        }
        let mut edges = vec![-GAUSS_EDGE];
        edges.extend((1..per_axis).map(|c| normal_quantile(c as f64 / per_axis as f64)));
        edges.push(GAUSS_EDGE);
        let width = if dim == 1 { 0.01 } else { 0.2 };
        let axis = Axis::on_cells(&edges, width, 2, &normal_pdf);
        let mut mass = vec![0.0; per_axis];
        for (c, w) in axis.cell.iter().zip(&axis.weights) {
            mass[*c] += w;
        }
        let axes = vec![axis; dim];
        let masses = vec![mass; dim];
        Ok(BaseMeasureSpace::new(
            BasisKind::GaussianCells { dim, per_axis },
            dim,
            n,
            Inner::Cells { axes, per_axis, masses },
            gaussian_sampler(dim),
        ))
    }

    /// Empirical quantile cells of a sampled 1-D law of mass `total_mass`;
    /// inner products are stratified sample means with recorded stderr.
    pub fn sampled_cells<F>(sampler: F, total_mass: f64, cells: usize, samples: usize, seed: u64) -> Result<BaseMeasureSpace>
    where
        F: Fn(&mut Rng) -> f64 + Send + Sync + 'static,
    {
        if !(total_mass.is_finite() && total_mass > 0.0) {
            return Err(Error::Basis(format!("total mass {total_mass} is not finite and positive")));
        }
        if cells == 0 || samples < 2 * cells {
            return Err(Error::Basis(format!("{samples} samples cannot fill {cells} cells")));
        }
        let mut points = par_sample(samples, seed, |rng, _| sampler(rng));
        if points.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("sampler produced a non-finite point".into()));
        }
        points.sort_by(|a, b| a.total_cmp(b));
        let mut edges = vec![f64::NEG_INFINITY];
        edges.extend((1..cells).map(|c| points[c * samples / cells]));
        edges.push(f64::INFINITY);
        let cell_of: Vec<usize> = (0..samples).map(|i| i * cells / samples).collect();
        let mut counts = vec![0usize; cells];
        for c in &cell_of {
            counts[*c] += 1;
        }
        let sampler: Arc<MuSampler> = Arc::new(move |rng: &mut Rng| vec![sampler(rng)]);
        let mut s = BaseMeasureSpace::new(
            BasisKind::SampledCells { cells, samples },
            1,
            cells,
            Inner::Sampled { mc: McPoints { dim: 1, points }, cell_of, counts, edges },
            sampler,
        );
        s.total_mass = total_mass;
        s.gram_tolerance = 1e-3;
        Ok(s)
    }

    pub fn with_quadrature_budget(mut self, budget: f64) -> BaseMeasureSpace {
        self.budget = budget;
        self
    }

    pub fn kind(&self) -> &BasisKind {
        &self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Truncation level `N`.
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn total_mass(&self) -> f64 {
        self.total_mass
    }

    /// Multi-indices of a Hermite basis, in basis order.
    pub fn hermite_index(&self) -> &[MultiIndex] {
        &self.index
    }

    /// Largest entry of `|Gram − I|` under the space's own integration rule.
    pub fn gram_error(&self) -> f64 {
        self.gram_error
    }

    pub fn gram_tolerance(&self) -> f64 {
        self.gram_tolerance
    }

    pub fn check_gram(&self) -> Result<()> {
        if self.gram_error.is_finite() && self.gram_error <= self.gram_tolerance {
            Ok(())
        } else {
            Err(Error::Basis(format!(
                "Gram matrix deviates from the identity by {:e} (tolerance {:e})",
                self.gram_error, self.gram_tolerance
            )))
        }
    }

    /// Draw a point from `μ / μ(E)`.
    pub fn sample_point(&self, rng: &mut Rng) -> Vec<f64> {
        (self.sampler)(rng)
    }

    /// Basis function `ξ_j`.
    pub fn basis_function(&self, j: usize) -> SpaceFn {
        if let Some(fns) = &self.basis_fns {
            return fns[j].clone();
        }
        match &self.inner {
            Inner::Hermite { .. } => {
                let alpha = self.index[j].clone();
                let mut e = crate::expr::Expr::constant(1.0);
                for (i, &a) in alpha.iter().enumerate() {
                    if a > 0 {
                        e = e * hermite_expr(i, a);
                    }
                }
                SpaceFn::Expr(e)
            }
            Inner::Cells { axes, per_axis, masses } => {
                let per = *per_axis;
                let dim = axes.len();
                let bounds: Vec<(f64, f64, f64)> = (0..dim)
                    .map(|k| {
                        let c = (j / per.pow((dim - 1 - k) as u32)) % per;
                        let lo = if c == 0 { f64::NEG_INFINITY } else { normal_quantile(c as f64 / per as f64) };
                        let hi = if c + 1 == per { f64::INFINITY } else { normal_quantile((c + 1) as f64 / per as f64) };
                        (lo, hi, masses[k][c])
                    })
                    .collect();
                let norm: f64 = bounds.iter().map(|b| b.2).product::<f64>().sqrt();
                SpaceFn::native(format!("cell{j}"), move |x| {
                    if bounds.iter().zip(x).all(|((lo, hi, _), v)| v >= lo && v < hi) {
                        1.0 / norm
                    } else {
                        0.0
                    }
                })
            }
            Inner::Sampled { edges, counts, .. } => {
                let (lo, hi) = (edges[j], edges[j + 1]);
                let mass = self.total_mass * counts[j] as f64 / counts.iter().sum::<usize>() as f64;
                SpaceFn::native(format!("cell{j}"), move |x| if x[0] >= lo && x[0] < hi { 1.0 / mass.sqrt() } else { 0.0 })
            }
            Inner::Design { .. } => unreachable!("design spaces keep their functions"),
        }
    }

    /// `∫ f dμ`.
    pub fn integral(&self, f: &SpaceFn) -> Result<f64> {
        if let (Inner::Hermite { .. }, Some(p)) = (&self.inner, self.polynomial(f)) {
            return Ok(p.gaussian_mean());
        }
        match &self.inner {
            Inner::Design { axis, .. } => {
                let vals = eval_grid(std::slice::from_ref(axis), f)?;
                Ok(axis.weights.iter().zip(&vals).map(|(w, v)| w * v).sum())
            }
            Inner::Cells { axes, .. } | Inner::Hermite { axes: Some(axes), .. } => {
                let vals = eval_grid(axes, f)?;
                Ok(grid_weights(axes).zip(&vals).map(|(w, v)| w * v).sum())
            }
            Inner::Hermite { mc: Some(mc), .. } | Inner::Sampled { mc, .. } => {
                let vals = eval_points(mc, f)?;
                Ok(self.total_mass * vals.iter().sum::<f64>() / vals.len() as f64)
            }
            Inner::Hermite { .. } => unreachable!("Hermite spaces carry a grid or sample points"),
        }
    }

    /// `∫ f g dμ`.
    pub fn inner_product(&self, f: &SpaceFn, g: &SpaceFn) -> Result<f64> {
        self.integral(&f.mul(g))
    }

    fn polynomial(&self, f: &SpaceFn) -> Option<Polynomial> {
        Polynomial::from_expr(&f.as_expr()?, self.dim)
    }

    /// Coefficients `(f, ξ_n)` for `n < N`, with `∫f²dμ` and quadrature error.
    pub fn project(&self, f: &SpaceFn) -> Result<Projection> {
        let p = match &self.inner {
            Inner::Design { axis, design } => {
                let vals = eval_grid(std::slice::from_ref(axis), f)?;
                let q = axis.len();
                let coeffs = (0..self.n).map(|j| dot(&design[j * q..(j + 1) * q], &vals)).collect();
                let norm_sq = axis.weights.iter().zip(&vals).map(|(w, v)| w * v * v).sum();
                Projection { coeffs, norm_sq, quad_err: 0.0 }
            }
            Inner::Cells { axes, per_axis, masses } => {
                let vals = eval_grid(axes, f)?;
                let mut coeffs = vec![0.0; self.n];
                let mut norm_sq = 0.0;
                for_grid(axes, |flat, idx, w| {
                    let mut cell = 0;
                    for (k, &i) in idx.iter().enumerate() {
                        cell = cell * per_axis + axes[k].cell[i];
                    }
                    coeffs[cell] += w * vals[flat];
                    norm_sq += w * vals[flat] * vals[flat];
                });
                for (j, c) in coeffs.iter_mut().enumerate() {
                    let mut mass = 1.0;
                    let mut rest = j;
                    for k in (0..axes.len()).rev() {
                        mass *= masses[k][rest % per_axis];
                        rest /= per_axis;
                    }
                    *c /= mass.sqrt();
                }
                Projection { coeffs, norm_sq, quad_err: 0.0 }
            }
            Inner::Hermite { axes, tables, lookup, mc } => {
                if let Some(poly) = self.polynomial(f) {
                    let mut coeffs = vec![0.0; self.n];
                    let mut norm_sq = 0.0;
                    for (alpha, c) in poly.hermite_coefficients() {
                        norm_sq += c * c;
                        if let Some(&j) = lookup.get(&alpha) {
                            coeffs[j] = c;
                        }
                    }
                    Projection { coeffs, norm_sq, quad_err: 0.0 }
                } else if let Some(axes) = axes {
                    self.hermite_quadrature(axes, tables, f)?
                } else {
                    let mc = mc.as_ref().expect("Hermite spaces without a grid carry sample points");
                    self.hermite_monte_carlo(mc, f)?
                }
            }
            Inner::Sampled { mc, cell_of, counts, .. } => {
                let vals = eval_points(mc, f)?;
                let total: usize = counts.iter().sum();
                let mut sums = vec![0.0; self.n];
                let mut sq = vec![0.0; self.n];
                for (v, &c) in vals.iter().zip(cell_of) {
                    sums[c] += v;
                    sq[c] += v * v;
                }
                let mut coeffs = vec![0.0; self.n];
                let mut err_sq = 0.0;
                let mut norm_sq = 0.0;
                for c in 0..self.n {
                    let k = counts[c] as f64;
                    let mass = self.total_mass * k / total as f64;
                    let mean = sums[c] / k;
                    let var = ((sq[c] - k * mean * mean) / (k - 1.0).max(1.0)).max(0.0);
                    coeffs[c] = mass.sqrt() * mean;
                    err_sq += mass * var / k;
                    norm_sq += mass * sq[c] / k;
                }
                Projection { coeffs, norm_sq, quad_err: err_sq.sqrt() }
            }
        };
        if p.quad_err > self.budget * p.norm_sq.sqrt() {
            return Err(Error::Quadrature(format!(
                "coefficient stderr {:e} exceeds {:e} of ‖f‖ = {:e}",
                p.quad_err,
                self.budget,
                p.norm_sq.sqrt()
            )));
        }
        Ok(p)
    }

    fn hermite_quadrature(&self, axes: &[Axis], tables: &[Vec<f64>], f: &SpaceFn) -> Result<Projection> {
        let vals = eval_grid(axes, f)?;
        let norm_sq: f64 = grid_weights(axes).zip(&vals).map(|(w, v)| w * v * v).sum();
        let q0 = axes[0].len();
        let coeffs = if axes.len() == 1 {
            self.index.iter().map(|a| dot(&tables[0][a[0] as usize * q0..(a[0] as usize + 1) * q0], &vals)).collect()
        } else {
            let q1 = axes[1].len();
            let deg = tables[1].len() / q1;
            // contract the last axis first: t[i][j] = Σ_k A_j(y_k) F(x_i, y_k)
            let t: Vec<f64> = (0..q0)
                .into_par_iter()
                .flat_map_iter(|i| {
                    let row = &vals[i * q1..(i + 1) * q1];
                    (0..deg).map(move |j| dot(&tables[1][j * q1..(j + 1) * q1], row))
                })
                .collect();
            self.index
                .iter()
                .map(|a| {
                    let a0 = a[0] as usize;
                    let a1 = a[1] as usize;
                    (0..q0).map(|i| tables[0][a0 * q0 + i] * t[i * deg + a1]).sum()
                })
                .collect()
        };
        Ok(Projection { coeffs, norm_sq, quad_err: 0.0 })
    }

    fn hermite_monte_carlo(&self, mc: &McPoints, f: &SpaceFn) -> Result<Projection> {
        let vals = eval_points(mc, f)?;
        let m = mc.len() as f64;
        let stats: Vec<(f64, f64)> = self
            .index
            .par_iter()
            .map(|alpha| {
                let (mut s, mut s2) = (0.0, 0.0);
                for (i, v) in vals.iter().enumerate() {
                    let y = v * hermite_product(alpha, mc.point(i));
                    s += y;
                    s2 += y * y;
                }
                let mean = s / m;
                let var = ((s2 - m * mean * mean) / (m - 1.0)).max(0.0);
                (mean, var / m)
            })
            .collect();
        let norm_sq = vals.iter().map(|v| v * v).sum::<f64>() / m;
        Ok(Projection {
            coeffs: stats.iter().map(|s| s.0).collect(),
            norm_sq,
            quad_err: stats.iter().map(|s| s.1).sum::<f64>().sqrt(),
        })
    }

    fn design_gram_error(&self) -> f64 {
        let Inner::Design { axis, design } = &self.inner else { return 0.0 };
        let q = axis.len();
        let mut err: f64 = 0.0;
        for a in 0..self.n {
            for b in a..self.n {
                let g: f64 = (0..q)
                    .map(|i| design[a * q + i] * design[b * q + i] / axis.weights[i])
                    .filter(|v| v.is_finite())
                    .sum();
                let target = if a == b { 1.0 } else { 0.0 };
                err = err.max((g - target).abs());
            }
        }
        err
    }

    fn hermite_gram_error(&self) -> f64 {
        let Inner::Hermite { axes: Some(axes), tables, .. } = &self.inner else { return 0.0 };
        // the rule is a tensor product, so the Gram matrix factorizes by coordinate
        let mut err: f64 = 0.0;
        for (axis, table) in axes.iter().zip(tables) {
            let q = axis.len();
            let deg = table.len() / q;
            for a in 0..deg {
                for b in a..deg {
                    let g: f64 = (0..q).map(|i| table[a * q + i] * hermite_normalized(b as u32, axis.nodes[i])).sum();
                    let target = if a == b { 1.0 } else { 0.0 };
                    err = err.max((g - target).abs());
                }
            }
        }
        err
    }
}

/// `He_a(x_i) / sqrt(a!)` as an expression.
fn hermite_expr(i: usize, a: u32) -> crate::expr::Expr {
    crate::expr::hermite_normalized_expr(crate::expr::Expr::var(i), a)
}

fn gaussian_mc_points(dim: usize, n: usize, seed: u64) -> McPoints {
    let rows = par_sample(n, seed, |rng, _| (0..dim).map(|_| StandardNormal.sample(rng)).collect::<Vec<f64>>());
    McPoints { dim, points: rows.into_iter().flatten().collect() }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn grid_weights(axes: &[Axis]) -> Box<dyn Iterator<Item = f64> + '_> {
    match axes.len() {
        1 => Box::new(axes[0].weights.iter().copied()),
        _ => Box::new(axes[0].weights.iter().flat_map(move |a| axes[1].weights.iter().map(move |b| a * b))),
    }
}

fn for_grid(axes: &[Axis], mut f: impl FnMut(usize, &[usize], f64)) {
    match axes.len() {
        1 => {
            for (i, w) in axes[0].weights.iter().enumerate() {
                f(i, &[i], *w);
            }
        }
        _ => {
            let q1 = axes[1].len();
            for (i, a) in axes[0].weights.iter().enumerate() {
                for (j, b) in axes[1].weights.iter().enumerate() {
                    f(i * q1 + j, &[i, j], a * b);
                }
            }
        }
    }
}

fn quadrature_failure(e: Error) -> Error {
    match e {
        Error::NonFinite(m) | Error::Domain(m) => Error::Quadrature(format!("integrand undefined on the rule: {m}")),
        other => other,
    }
}

/// Integrand values on the tensor grid, row-major with the last axis fastest.
fn eval_grid(axes: &[Axis], f: &SpaceFn) -> Result<Vec<f64>> {
    if let Some(c) = f.as_const() {
        let q: usize = axes.iter().map(Axis::len).product();
        return Ok(vec![c; q]);
    }
    let rows: Vec<Vec<f64>> = match axes.len() {
        1 => axes[0]
            .nodes
            .par_chunks(256)
            .map(|xs| xs.iter().map(|&x| f.eval(&[x])).collect::<Result<Vec<f64>>>())
            .collect::<Result<_>>()
            .map_err(quadrature_failure)?,
        _ => axes[0]
            .nodes
            .par_iter()
            .map(|&x| axes[1].nodes.iter().map(|&y| f.eval(&[x, y])).collect::<Result<Vec<f64>>>())
            .collect::<Result<_>>()
            .map_err(quadrature_failure)?,
    };
    Ok(rows.into_iter().flatten().collect())
}

fn eval_points(mc: &McPoints, f: &SpaceFn) -> Result<Vec<f64>> {
    (0..mc.len())
        .into_par_iter()
        .map(|i| f.eval(mc.point(i)))
        .collect::<Result<Vec<f64>>>()
        .map_err(quadrature_failure)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_for;

    #[test]
    fn haar_gram_is_identity() {
        let s = BaseMeasureSpace::haar(6).unwrap();
        assert_eq!(s.len(), 64);
        assert!(s.gram_error() < 1e-12, "{}", s.gram_error());
        s.check_gram().unwrap();
    }

    #[test]
    fn haar_projection_of_dyadic_indicator_is_exact() {
        let s = BaseMeasureSpace::haar(4).unwrap();
        let p = s.project(&SpaceFn::interval(0.0, 0.5)).unwrap();
        assert!((p.norm_sq - 0.5).abs() < 1e-14);
        assert!(p.defect() < 1e-14);
        let q = s.project(&SpaceFn::interval(0.5, 1.0)).unwrap();
        let cross: f64 = p.coeffs.iter().zip(&q.coeffs).map(|(a, b)| a * b).sum();
        assert!(cross.abs() < 1e-14);
    }

    #[test]
    fn haar_basis_functions_project_to_unit_vectors() {
        let s = BaseMeasureSpace::haar(3).unwrap();
        let p = s.project(&s.basis_function(5)).unwrap();
        for (j, c) in p.coeffs.iter().enumerate() {
            let target = if j == 5 { 1.0 } else { 0.0 };
            assert!((c - target).abs() < 1e-13);
        }
    }

    #[test]
    fn hermite_indices_are_graded() {
        let idx = graded_indices(2, 1, 100).unwrap();
        assert_eq!(idx, vec![vec![0, 0], vec![1, 0], vec![0, 1]]);
        assert_eq!(graded_indices(16, 3, 2000).unwrap().len(), 969);
        assert!(matches!(graded_indices(16, 3, 200), Err(Error::Size(_))));
    }

    #[test]
    fn hermite_quadrature_matches_closed_form() {
        let s = BaseMeasureSpace::hermite(1, 6, 100).unwrap();
        assert!(s.gram_error() < 1e-10, "{}", s.gram_error());
        let poly = s.project(&SpaceFn::parse("x1^3 - x1").unwrap()).unwrap();
        // the same integrand with a transcendental factor equal to one
        let quad = s.project(&SpaceFn::parse("(x1^3 - x1)*exp(0*x1)").unwrap()).unwrap();
        for (a, b) in poly.coeffs.iter().zip(&quad.coeffs) {
            assert!((a - b).abs() < 1e-10);
        }
        assert!((poly.norm_sq - quad.norm_sq).abs() < 1e-10);
        // E[x^6] - 2E[x^4] + E[x^2] = 15 - 6 + 1
        assert!((poly.norm_sq - 10.0).abs() < 1e-12);
    }

    #[test]
    fn hermite_two_dimensional_quadrature() {
        let s = BaseMeasureSpace::hermite(2, 3, 100).unwrap();
        let p = s.project(&SpaceFn::parse("sin(x1)*x2").unwrap()).unwrap();
        // (sin x1, Z_(1,0)) = E[x sin x] = e^{-1/2}; Z_(1,1) coefficient: product of both
        let k = s.hermite_index().iter().position(|a| a == &vec![1, 1]).unwrap();
        assert!((p.coeffs[k] - (-0.5f64).exp()).abs() < 1e-10);
    }

    #[test]
    fn gaussian_cells_are_orthonormal_and_equal_mass() {
        let s = BaseMeasureSpace::gaussian_cells(1, 16).unwrap();
        let one = s.project(&SpaceFn::constant(1.0)).unwrap();
        assert!((one.norm_sq - 1.0).abs() < 1e-12);
        assert!(one.defect() < 1e-12);
        for c in &one.coeffs {
            assert!((c - 0.25).abs() < 1e-9);
        }
        let s2 = BaseMeasureSpace::gaussian_cells(2, 4).unwrap();
        let p = s2.project(&s2.basis_function(6)).unwrap();
        assert!((p.coeffs[6] - 1.0).abs() < 1e-9 && p.coeffs[5].abs() < 1e-12);
    }

    #[test]
    fn sampled_cells_budget() {
        let uniform = |rng: &mut Rng| rng.random::<f64>();
        let s = BaseMeasureSpace::sampled_cells(uniform, 1.0, 16, 100_000, 3).unwrap();
        let p = s.project(&SpaceFn::parse("x1").unwrap()).unwrap();
        assert!((p.norm_sq - 1.0 / 3.0).abs() < 5e-3);
        let tiny = BaseMeasureSpace::sampled_cells(uniform, 1.0, 16, 400, 3).unwrap();
        assert!(matches!(tiny.project(&SpaceFn::parse("sin(40*x1)").unwrap()), Err(Error::Quadrature(_))));
        let mut rng = rng_for(1, 1);
        assert_eq!(s.sample_point(&mut rng).len(), 1);
    }

    #[test]
    fn non_orthonormal_custom_basis_fails_gram() {
        let ok = BaseMeasureSpace::custom(vec![SpaceFn::constant(1.0), SpaceFn::parse("sqrt(12)*(x1 - 0.5)").unwrap()], 64).unwrap();
        ok.check_gram().unwrap();
        let bad = BaseMeasureSpace::custom(vec![SpaceFn::constant(1.0), SpaceFn::parse("x1").unwrap()], 64).unwrap();
        assert!(matches!(bad.check_gram(), Err(Error::Basis(_))));
    }

    #[test]
    fn undefined_integrand_is_a_quadrature_error() {
        let s = BaseMeasureSpace::haar(2).unwrap();
        assert!(matches!(s.project(&SpaceFn::parse("log(x1 - 0.5)").unwrap()), Err(Error::Quadrature(_))));
    }
}
