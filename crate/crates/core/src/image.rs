//! Image error structures `S_X` on `ℝ^d`.
//!
//! `Γ_X[u](x) = E[Γ[u∘X] | X = x]` is estimated from pushforward samples by
//! nested equal-mass binning (`d ≤ 2`) or k-nearest neighbours. Everything
//! downstream (the image gradient, its square root, the density and gap
//! checks) reads the estimated field through [`ImageStructure::gamma_x`].

use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{hermite_normalized_expr, Expr, Func};
use crate::linalg::{min_eigenvalue, psd_root, RootMethod, NEGATIVE_EIGEN_TOL};
use crate::mv_gradient::{build_dgradient, mv_gradient, DGradientOp, MeasureValuedGradient};
use crate::rng::derive_seed;
use crate::stats::Moments;
use crate::structures::{expectation, gamma, gamma_matrix, quadratic_form, ErrorStructure, Functional};
use crate::white_noise::{sample_projections, HValuedWhiteNoise, NoiseProjection, ScalarWhiteNoise, SpaceFn};

/// Below this many pushforward samples the conditional estimates are not
/// worth reporting.
pub const MIN_IMAGE_SAMPLES: usize = 1000;
/// Conditional estimation is not attempted in more dimensions.
pub const MAX_IMAGE_DIM: usize = 8;
/// Query points used as the evaluation grid of a k-NN estimator.
const KNN_GRID: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    Binning,
    Knn,
}

/// How `E[· | X = x]` is realized. `param` is the number of bins per axis or
/// the neighbour count; `None` picks `⌈n^{1/3}⌉` or `⌈√n⌉`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CondExpEstimator {
    pub kind: EstimatorKind,
    pub param: Option<usize>,
    pub samples: usize,
}

fn ceil_root(n: usize, p: u32) -> usize {
    let mut b = (n as f64).powf(1.0 / p as f64).floor() as usize;
    while b.pow(p) < n {
        b += 1;
    }
    while b > 1 && (b - 1).pow(p) >= n {
        b -= 1;
    }
    b.max(1)
}

impl CondExpEstimator {
    pub fn binning(bins: Option<usize>) -> CondExpEstimator {
        CondExpEstimator { kind: EstimatorKind::Binning, param: bins, samples: 0 }
    }

    pub fn knn(k: Option<usize>) -> CondExpEstimator {
        CondExpEstimator { kind: EstimatorKind::Knn, param: k, samples: 0 }
    }

    /// Binning for `d ≤ 2`, k-NN above.
    pub fn default_for(d: usize) -> CondExpEstimator {
        if d <= 2 {
            CondExpEstimator::binning(None)
        } else {
            CondExpEstimator::knn(None)
        }
    }

    pub fn bins_per_axis(&self, n: usize) -> usize {
        self.param.unwrap_or_else(|| ceil_root(n, 3))
    }

    pub fn neighbours(&self, n: usize) -> usize {
        self.param.unwrap_or_else(|| ceil_root(n, 2))
    }
}

#[derive(Clone, Debug)]
struct Cell {
    members: Vec<usize>,
    center: Vec<f64>,
}

#[derive(Clone, Debug)]
enum Locator {
    Bins { per_axis: usize, edges0: Vec<f64>, edges1: Vec<Vec<f64>> },
    Knn { k: usize },
}

/// A deterministic partition (or neighbourhood cover) of the sample set.
#[derive(Clone, Debug)]
struct Partition {
    xs: Arc<Vec<Vec<f64>>>,
    cells: Vec<Cell>,
    locator: Locator,
}

/// Sort `idx` on one coordinate and cut it into `b` groups of equal count.
fn equal_mass_split(xs: &[Vec<f64>], mut idx: Vec<usize>, axis: usize, b: usize) -> Result<(Vec<Vec<usize>>, Vec<f64>)> {
    if idx.len() < b {
        return Err(Error::Estimator(format!("{} samples cannot fill {b} equal-mass bins", idx.len())));
    }
    idx.sort_by(|&i, &j| xs[i][axis].total_cmp(&xs[j][axis]).then(i.cmp(&j)));
    let n = idx.len();
    let mut groups = Vec::with_capacity(b);
    let mut edges = Vec::with_capacity(b.saturating_sub(1));
    for g in 0..b {
        let (lo, hi) = (g * n / b, (g + 1) * n / b);
        groups.push(idx[lo..hi].to_vec());
        if g + 1 < b {
            edges.push(0.5 * (xs[idx[hi - 1]][axis] + xs[idx[hi]][axis]));
        }
    }
    Ok((groups, edges))
}

fn mean_point(xs: &[Vec<f64>], members: &[usize]) -> Vec<f64> {
    let d = xs[members[0]].len();
    let mut c = vec![0.0; d];
    for &i in members {
        for (a, v) in c.iter_mut().zip(&xs[i]) {
            *a += v;
        }
    }
    c.iter().map(|v| v / members.len() as f64).collect()
}

fn nearest(xs: &[Vec<f64>], x: &[f64], k: usize) -> Vec<usize> {
    let mut d: Vec<(f64, usize)> = xs
        .iter()
        .enumerate()
        .map(|(i, p)| (p.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>(), i))
        .collect();
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < d.len() {
        d.select_nth_unstable_by(k, cmp);
        d.truncate(k);
    }
    d.sort_by(cmp);
    d.into_iter().map(|(_, i)| i).collect()
}

impl Partition {
    fn build(xs: Arc<Vec<Vec<f64>>>, est: &CondExpEstimator) -> Result<Partition> {
        let n = xs.len();
        let d = xs[0].len();
        match est.kind {
            EstimatorKind::Binning => {
                if d > 2 {
                    return Err(Error::Estimator(format!("nested binning supports d ≤ 2, got {d}")));
                }
                let b = est.bins_per_axis(n);
                if b == 0 || n < b.pow(d as u32) {
                    return Err(Error::Estimator(format!("{n} samples leave empty cells among {b}^{d} bins")));
                }
                let (groups, edges0) = equal_mass_split(&xs, (0..n).collect(), 0, b)?;
                let mut cells = Vec::new();
                let mut edges1 = Vec::new();
                for g in groups {
                    if d == 1 {
                        cells.push(g);
                    } else {
                        let (sub, e) = equal_mass_split(&xs, g, 1, b)?;
                        cells.extend(sub);
                        edges1.push(e);
                    }
                }
                if cells.iter().any(|c| c.is_empty()) {
                    return Err(Error::Estimator("empty bin".into()));
                }
                let cells = cells.into_iter().map(|m| Cell { center: mean_point(&xs, &m), members: m }).collect();
                Ok(Partition { xs, cells, locator: Locator::Bins { per_axis: b, edges0, edges1 } })
            }
            EstimatorKind::Knn => {
                let k = est.neighbours(n);
                if k == 0 || k > n {
                    return Err(Error::Estimator(format!("k = {k} neighbours among {n} samples")));
                }
                let g = KNN_GRID.min(n);
                let cells = (0..g)
                    .into_par_iter()
                    .map(|q| {
                        let center = xs[q * n / g].clone();
                        Cell { members: nearest(&xs, &center, k), center }
                    })
                    .collect();
                Ok(Partition { xs, cells, locator: Locator::Knn { k } })
            }
        }
    }

    fn bin_of(&self, x: &[f64]) -> Option<usize> {
        match &self.locator {
            Locator::Bins { per_axis, edges0, edges1 } => {
                let i0 = edges0.partition_point(|e| *e <= x[0]);
                if edges1.is_empty() {
                    Some(i0)
                } else {
                    Some(i0 * per_axis + edges1[i0].partition_point(|e| *e <= x[1]))
                }
            }
            Locator::Knn { .. } => None,
        }
    }

    /// Sample indices whose values are averaged to estimate at `x`.
    fn neighbourhood(&self, x: &[f64]) -> Vec<usize> {
        match (&self.locator, self.bin_of(x)) {
            (_, Some(c)) => self.cells[c].members.clone(),
            (Locator::Knn { k }, None) => nearest(&self.xs, x, *k),
            (Locator::Bins { .. }, None) => unreachable!("bins always locate"),
        }
    }
}

/// Conditional mean of one sampled quantity on one cell.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CellStat {
    pub center: Vec<f64>,
    pub mass: f64,
    pub count: usize,
    pub mean: f64,
    pub stderr: f64,
}

/// Per-cell estimate of the matrix `Γ_X[I](x)`.
#[derive(Clone, Debug)]
pub struct CellGamma {
    pub center: Vec<f64>,
    pub mass: f64,
    pub count: usize,
    pub mean: DMatrix<f64>,
    pub stderr: DMatrix<f64>,
}

/// `S_X`: the source structure, the map `X`, and the estimated `Γ_X[I]`.
#[derive(Clone, Debug)]
pub struct ImageStructure {
    source: Arc<ErrorStructure>,
    x: Vec<Functional>,
    estimator: CondExpEstimator,
    w: Vec<Vec<f64>>,
    gammas: Vec<DMatrix<f64>>,
    sample_cell: Vec<usize>,
    partition: Partition,
    cells: Vec<CellGamma>,
}

/// Clamp eigenvalues in `[-1e-8·scale, 0)` to zero; fail below.
fn clamp_psd(m: DMatrix<f64>) -> Result<DMatrix<f64>> {
    let m = (&m + m.transpose()) * 0.5;
    if m.nrows() == 1 {
        let v = m[(0, 0)];
        let scale = v.abs().max(f64::MIN_POSITIVE);
        if v < -NEGATIVE_EIGEN_TOL * scale.max(1.0) {
            return Err(Error::Positivity(format!("estimated Γ_X is negative: {v:e}")));
        }
        return Ok(DMatrix::from_element(1, 1, v.max(0.0)));
    }
    if min_eigenvalue(&m) >= 0.0 {
        return Ok(m);
    }
    let scale = m.abs().max().max(f64::MIN_POSITIVE);
    let eig = m.clone().symmetric_eigen();
    if eig.eigenvalues.min() < -NEGATIVE_EIGEN_TOL * scale {
        return Err(Error::Positivity(format!("estimated Γ_X has eigenvalue {:e}", eig.eigenvalues.min())));
    }
    let lam = eig.eigenvalues.map(|v| v.max(0.0));
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&lam) * eig.eigenvectors.transpose())
}

pub fn image_structure(
    s: &ErrorStructure,
    x: &[Functional],
    estimator: CondExpEstimator,
    n_samples: usize,
    seed: u64,
) -> Result<ImageStructure> {
    if n_samples < MIN_IMAGE_SAMPLES {
        return Err(Error::Estimator(format!("{n_samples} samples; at least {MIN_IMAGE_SAMPLES} are needed")));
    }
    if x.is_empty() || x.len() > MAX_IMAGE_DIM {
        return Err(Error::Dimension(format!("image dimension {} outside 1..={MAX_IMAGE_DIM}", x.len())));
    }
    if let Some(bad) = x.iter().find(|xi| xi.dim() != s.dim()) {
        return Err(Error::Dimension(format!("{bad} lives on ℝ^{}, structure on ℝ^{}", bad.dim(), s.dim())));
    }
    let w = s.samples(n_samples, derive_seed(seed, 1));
    let pairs: Vec<(Vec<f64>, DMatrix<f64>)> = w
        .par_iter()
        .map(|wi| {
            let xv = x.iter().map(|f| f.value(wi)).collect::<Result<Vec<f64>>>()?;
            Ok((xv, gamma_matrix(s, x, wi)?))
        })
        .collect::<Result<_>>()?;
    let (xs, gammas): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
    let estimator = CondExpEstimator { samples: n_samples, ..estimator };
    let partition = Partition::build(Arc::new(xs), &estimator)?;
    let d = x.len();
    let mut sample_cell = vec![usize::MAX; n_samples];
    let mut cells = Vec::with_capacity(partition.cells.len());
    for (c, cell) in partition.cells.iter().enumerate() {
        if matches!(partition.locator, Locator::Bins { .. }) {
            for &i in &cell.members {
                sample_cell[i] = c;
            }
        }
        let mut mean = DMatrix::zeros(d, d);
        let mut stderr = DMatrix::zeros(d, d);
        for i in 0..d {
            for j in i..d {
                let vals: Vec<f64> = cell.members.iter().map(|&s| gammas[s][(i, j)]).collect();
                let m = Moments::of(&vals);
                mean[(i, j)] = m.mean;
                mean[(j, i)] = m.mean;
                stderr[(i, j)] = m.mean_stderr;
                stderr[(j, i)] = m.mean_stderr;
            }
        }
        cells.push(CellGamma {
            center: cell.center.clone(),
            mass: cell.members.len() as f64 / n_samples as f64,
            count: cell.members.len(),
            mean,
            stderr,
        });
    }
    Ok(ImageStructure { source: Arc::new(s.clone()), x: x.to_vec(), estimator, w, gammas, sample_cell, partition, cells })
}

impl ImageStructure {
    pub fn source(&self) -> &ErrorStructure {
        &self.source
    }

    pub fn functionals(&self) -> &[Functional] {
        &self.x
    }

    /// Dimension `d` of the image space.
    pub fn dim(&self) -> usize {
        self.x.len()
    }

    pub fn estimator(&self) -> &CondExpEstimator {
        &self.estimator
    }

    pub fn cells(&self) -> &[CellGamma] {
        &self.cells
    }

    /// The pushforward samples `X(w_s)` the estimator was fitted on.
    pub fn points(&self) -> &[Vec<f64>] {
        &self.partition.xs
    }

    /// The source samples `w_s`.
    pub fn source_points(&self) -> &[Vec<f64>] {
        &self.w
    }

    /// Bin index of `x` (binning estimators only).
    pub fn bin_of(&self, x: &[f64]) -> Option<usize> {
        self.partition.bin_of(x)
    }

    /// `n` fresh draws of `X` under `m`.
    pub fn sample_pushforward(&self, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
        self.source
            .samples(n, seed)
            .par_iter()
            .map(|w| self.x.iter().map(|f| f.value(w)).collect())
            .collect()
    }

    /// Estimated `Γ_X[I](x)`: piecewise-linear between bin centers in one
    /// dimension, the cell mean for 2-D bins, the neighbour mean for k-NN.
    pub fn gamma_x(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        if x.len() != self.dim() {
            return Err(Error::Arity(format!("point of length {} in a {}-dimensional image", x.len(), self.dim())));
        }
        let raw = match (&self.partition.locator, self.dim()) {
            (Locator::Bins { .. }, 1) => {
                let centers: Vec<f64> = self.cells.iter().map(|c| c.center[0]).collect();
                if centers.len() == 1 {
                    self.cells[0].mean.clone()
                } else {
                    let p = centers.partition_point(|c| *c <= x[0]).clamp(1, centers.len() - 1);
                    let (a, b) = (centers[p - 1], centers[p]);
                    let (ga, gb) = (self.cells[p - 1].mean[(0, 0)], self.cells[p].mean[(0, 0)]);
                    let t = if b > a { (x[0] - a) / (b - a) } else { 0.0 };
                    DMatrix::from_element(1, 1, ga + t * (gb - ga))
                }
            }
            (Locator::Bins { .. }, _) => self.cells[self.partition.bin_of(x).expect("bins locate")].mean.clone(),
            (Locator::Knn { .. }, _) => {
                let nb = self.partition.neighbourhood(x);
                let mut m = DMatrix::zeros(self.dim(), self.dim());
                for &i in &nb {
                    m += &self.gammas[i];
                }
                m / nb.len() as f64
            }
        };
        clamp_psd(raw)
    }

    /// `Γ_X[F](x) = ∇F(x)ᵀ Γ_X[I](x) ∇F(x)` by the functional calculus.
    pub fn gamma_x_f(&self, f: &Expr, x: &[f64]) -> Result<f64> {
        let (_, g) = f.eval_grad(x)?;
        Ok(quadratic_form(&g, &self.gamma_x(x)?, &g))
    }

    /// `E[v_s | cell]` for a per-sample quantity `v`.
    pub fn conditional_mean(&self, values: &[f64]) -> Result<Vec<CellStat>> {
        if values.len() != self.w.len() {
            return Err(Error::Dimension(format!("{} values for {} samples", values.len(), self.w.len())));
        }
        let n = self.w.len() as f64;
        Ok(self
            .partition
            .cells
            .iter()
            .map(|c| {
                let v: Vec<f64> = c.members.iter().map(|&i| values[i]).collect();
                let m = Moments::of(&v);
                CellStat { center: c.center.clone(), mass: c.members.len() as f64 / n, count: c.members.len(), mean: m.mean, stderr: m.mean_stderr }
            })
            .collect())
    }

    /// `Γ[F∘X](w_s)` on the fitted samples.
    pub fn direct_gamma_samples(&self, f: &Expr) -> Result<Vec<f64>> {
        let fx = Functional::compose(f, &self.x)?;
        self.w.par_iter().map(|w| gamma(&self.source, &fx, &fx, w)).collect()
    }

    /// `Γ_X[F](X(w_s))` through the estimated field.
    pub fn image_gamma_samples(&self, f: &Expr) -> Result<Vec<f64>> {
        self.partition.xs.par_iter().map(|x| self.gamma_x_f(f, x)).collect()
    }

    /// Indicator on `ℝ^d` of a union of bins.
    pub fn cell_indicator(&self, cells: &[usize]) -> Result<SpaceFn> {
        if !matches!(self.partition.locator, Locator::Bins { .. }) {
            return Err(Error::Estimator("cell indicators need a binning estimator".into()));
        }
        let mut member = vec![false; self.cells.len()];
        for &c in cells {
            member[c] = true;
        }
        let part = self.partition.clone();
        let label = format!("1[cells {:?}]", cells);
        Ok(SpaceFn::native(label, move |x| if member[part.bin_of(x).expect("bins locate")] { 1.0 } else { 0.0 }))
    }

    /// Whether fitted sample `s` lies in one of `cells`.
    fn sample_in(&self, s: usize, member: &[bool]) -> bool {
        member[self.sample_cell[s]]
    }

    /// `n_sets` unions of bins of roughly equal `X_*m` mass: runs of
    /// consecutive bins in 1-D, slabs split in two along the second axis
    /// in 2-D.
    pub fn test_sets(&self, n_sets: usize) -> Result<Vec<Vec<usize>>> {
        let Locator::Bins { per_axis, .. } = &self.partition.locator else {
            return Err(Error::Estimator("indicator test sets need a binning estimator".into()));
        };
        let b = *per_axis;
        if self.dim() == 1 {
            let k = n_sets.clamp(1, b);
            return Ok((0..k).map(|g| (g * b / k..(g + 1) * b / k).collect()).collect());
        }
        let slabs = n_sets.div_ceil(2).clamp(1, b);
        let mut out = Vec::new();
        for g in 0..slabs {
            for half in 0..2 {
                let (lo1, hi1) = if half == 0 { (0, b / 2) } else { (b / 2, b) };
                out.push((g * b / slabs..(g + 1) * b / slabs).flat_map(|i0| (lo1..hi1).map(move |i1| i0 * b + i1)).collect());
            }
        }
        Ok(out)
    }

    /// Self-consistency of the estimator on a function `h` of `X`: the
    /// `L²(X_*m)` distance between cell means of `h(X)` and `h` at the
    /// centers, with the bound `2·sd/√count` aggregated the same way.
    pub fn self_consistency(&self, h: &Expr) -> Result<SelfConsistency> {
        let vals: Vec<f64> = self.partition.xs.iter().map(|x| h.eval(x)).collect::<Result<_>>()?;
        let mut err = 0.0;
        let mut bound = 0.0;
        for c in &self.partition.cells {
            let v: Vec<f64> = c.members.iter().map(|&i| vals[i]).collect();
            let m = Moments::of(&v);
            let mass = c.members.len() as f64 / vals.len() as f64;
            err += mass * (m.mean - h.eval(&c.center)?).powi(2);
            bound += mass * (2.0 * m.variance.sqrt() / (c.members.len() as f64).sqrt()).powi(2);
        }
        Ok(SelfConsistency { l2_error: err.sqrt(), bound: bound.sqrt() })
    }

    /// `∫Γ_X[F] dX_*m` against `∫Γ[F∘X] dm` on independent samples.
    pub fn tower_check(&self, f: &Expr, n: usize, seed: u64) -> Result<TowerReport> {
        let pts = self.sample_pushforward(n, derive_seed(seed, 1))?;
        let img: Vec<f64> = pts.par_iter().map(|x| self.gamma_x_f(f, x)).collect::<Result<_>>()?;
        let img = Moments::of(&img);
        let fx = Functional::compose(f, &self.x)?;
        let src = expectation(&self.source, n, derive_seed(seed, 2), |w| gamma(&self.source, &fx, &fx, w))?;
        let fitted = Moments::of(&self.image_gamma_samples(f)?).mean;
        let direct = Moments::of(&self.direct_gamma_samples(f)?).mean;
        let stderr = (img.mean_stderr.powi(2) + src.stderr.powi(2)).sqrt();
        Ok(TowerReport {
            image_side: img.mean,
            source_side: src.value,
            stderr,
            estimator_bias: (fitted - direct).abs(),
            z: z_score(img.mean - src.value, stderr),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SelfConsistency {
    pub l2_error: f64,
    pub bound: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TowerReport {
    pub image_side: f64,
    pub source_side: f64,
    pub stderr: f64,
    /// Difference of the two sides on the fitted samples themselves.
    pub estimator_bias: f64,
    pub z: f64,
}

/// `diff / stderr`, with `0/0 = 0`.
pub fn z_score(diff: f64, stderr: f64) -> f64 {
    if stderr > 0.0 {
        diff / stderr
    } else if diff == 0.0 {
        0.0
    } else {
        f64::INFINITY.copysign(diff)
    }
}

/// `u∘X` for `u` on `ℝ^d` and `X` a vector of functionals on the source.
pub fn pullback(u: &SpaceFn, x: &[Functional]) -> Result<SpaceFn> {
    Ok(match u {
        SpaceFn::Expr(e) => {
            let args: Vec<Expr> = x.iter().map(|f| f.expr().clone()).collect();
            SpaceFn::Expr(e.substitute(&args)?)
        }
        SpaceFn::Native { label, .. } => {
            let inner = u.clone();
            let x = x.to_vec();
            SpaceFn::native(format!("{label}∘X"), move |w| {
                let xv: Result<Vec<f64>> = x.iter().map(|f| f.value(w)).collect();
                xv.and_then(|xv| inner.eval(&xv)).unwrap_or(f64::NAN)
            })
        }
        SpaceFn::Product(fs) => SpaceFn::Product(fs.iter().map(|f| pullback(f, x)).collect::<Result<_>>()?),
        SpaceFn::Linear(ts) => SpaceFn::Linear(ts.iter().map(|(a, f)| Ok((*a, pullback(f, x)?))).collect::<Result<_>>()?),
    })
}

/// `d_GF` on `ℝ^d` as the image by `X` of `d_G(F∘X)`.
#[derive(Clone, Debug)]
pub struct PushforwardNoise {
    inner: ScalarWhiteNoise,
    x: Vec<Functional>,
}

pub fn image_mvg(dg_fx: &MeasureValuedGradient, x: &[Functional]) -> Result<PushforwardNoise> {
    if dg_fx.len() != 1 {
        return Err(Error::Dimension(format!("pushforward of a {}-vector gradient; pass F∘X as one functional", dg_fx.len())));
    }
    Ok(PushforwardNoise { inner: dg_fx.component(0).clone(), x: x.to_vec() })
}

impl PushforwardNoise {
    /// `∫u d_GF = ∫u∘X d_G(F∘X)`.
    pub fn eval(&self, u: &SpaceFn) -> Result<f64> {
        self.inner.eval(&pullback(u, &self.x)?)
    }

    pub fn project(&self, u: &SpaceFn) -> Result<NoiseProjection> {
        self.inner.project(&pullback(u, &self.x)?)
    }

    pub fn source_noise(&self) -> &ScalarWhiteNoise {
        &self.inner
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DensitySet {
    pub cells: usize,
    pub mass: f64,
    /// `∫_A Γ_X[F] dX_*m` through the estimated field.
    pub target: f64,
    pub target_stderr: f64,
    /// `∫ 1_A(X) Γ[F∘X] dm` on the same samples.
    pub direct: f64,
    /// Empirical second moment of `∫1_A d_GF`.
    pub estimate: f64,
    pub stderr: f64,
    pub defect: f64,
    pub z: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DensityReport {
    pub sets: Vec<DensitySet>,
    pub realizations: usize,
}

impl DensityReport {
    pub fn max_abs_z(&self) -> f64 {
        self.sets.iter().map(|s| s.z.abs()).fold(0.0, f64::max)
    }
}

/// Compares `E[(∫1_A d_GF)²]` with `∫_A Γ_X[F] dX_*m` on bin-aligned sets.
pub fn image_density_check(
    image: &ImageStructure,
    f: &Expr,
    d: &Arc<DGradientOp>,
    nu: &HValuedWhiteNoise,
    n_sets: usize,
    realizations: usize,
    seed: u64,
) -> Result<DensityReport> {
    let fx = Functional::compose(f, &image.x)?;
    let dg = mv_gradient(std::slice::from_ref(&fx), d, nu)?;
    let push = image_mvg(&dg, &image.x)?;
    let img = image.image_gamma_samples(f)?;
    let dir = image.direct_gamma_samples(f)?;
    let n = img.len();
    let mut sets = Vec::new();
    for (j, cells) in image.test_sets(n_sets)?.into_iter().enumerate() {
        let mut member = vec![false; image.cells.len()];
        for &c in &cells {
            member[c] = true;
        }
        let inside: Vec<bool> = (0..n).map(|s| image.sample_in(s, &member)).collect();
        let masked = |v: &[f64]| -> Vec<f64> { v.iter().zip(&inside).map(|(x, &i)| if i { *x } else { 0.0 }).collect() };
        let t = Moments::of(&masked(&img));
        let direct = Moments::of(&masked(&dir)).mean;
        let p = push.project(&image.cell_indicator(&cells)?)?;
        let vals = sample_projections(&[&p], nu.space().len(), realizations, derive_seed(seed, j as u64)).remove(0);
        let e = Moments::of(&vals);
        let second = vals.iter().map(|v| v * v).sum::<f64>() / vals.len() as f64;
        let se = (e.variance_stderr.powi(2) + t.mean_stderr.powi(2)).sqrt();
        let diff = second - t.mean;
        let excess = (diff.abs() - p.defect()).max(0.0).copysign(diff);
        sets.push(DensitySet {
            cells: cells.len(),
            mass: inside.iter().filter(|&&b| b).count() as f64 / n as f64,
            target: t.mean,
            target_stderr: t.mean_stderr,
            direct,
            estimate: second,
            stderr: se,
            defect: p.defect(),
            z: z_score(excess, se),
        });
    }
    Ok(DensityReport { sets, realizations })
}

/// `∇_XF` for a C¹ expression `F` on `ℝ^d`, a field in
/// `L²(ℝ^d, Γ_X[I]·X_*m)`.
#[derive(Clone, Debug)]
pub struct ImageGradient {
    f: Expr,
    components: Vec<Expr>,
    norm: String,
}

pub fn nabla_x(image: &ImageStructure, f: &Expr) -> Result<ImageGradient> {
    let d = image.dim();
    if f.has_path_values() {
        return Err(Error::Domain("image functions cannot reference path values".into()));
    }
    if let Some(v) = f.max_var() {
        if v >= d {
            return Err(Error::Arity(format!("x{} used on a {d}-dimensional image", v + 1)));
        }
    }
    Ok(ImageGradient { f: f.clone(), components: f.gradient(d), norm: format!("L2(R^{d}, Gamma_X[I] X_*m)") })
}

/// Per-cell comparison of both sides of `Γ_X[F] = ∇Fᵀ Γ_X[I] ∇F`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GammaIdentityCell {
    pub center: Vec<f64>,
    pub mass: f64,
    /// `∇F(c)ᵀ Γ̂_X(c) ∇F(c)` at the center.
    pub at_center: f64,
    /// Cell mean of the functional-calculus field over the fitted samples.
    pub functional_calculus: f64,
    /// Cell mean of `Γ[F∘X]`.
    pub direct: f64,
    /// Standard error of the paired difference.
    pub stderr: f64,
}

impl ImageGradient {
    pub fn function(&self) -> &Expr {
        &self.f
    }

    pub fn components(&self) -> &[Expr] {
        &self.components
    }

    /// Description of the space the field is compared in.
    pub fn norm_space(&self) -> &str {
        &self.norm
    }

    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.f.eval_grad(x)?.1)
    }

    pub fn gamma_identity(&self, image: &ImageStructure) -> Result<Vec<GammaIdentityCell>> {
        let img = image.image_gamma_samples(&self.f)?;
        let dir = image.direct_gamma_samples(&self.f)?;
        let diff: Vec<f64> = img.iter().zip(&dir).map(|(a, b)| a - b).collect();
        let fc = image.conditional_mean(&img)?;
        let dc = image.conditional_mean(&dir)?;
        let dd = image.conditional_mean(&diff)?;
        fc.into_iter()
            .zip(dc)
            .zip(dd)
            .map(|((a, b), c)| {
                Ok(GammaIdentityCell {
                    at_center: image.gamma_x_f(&self.f, &a.center)?,
                    center: a.center,
                    mass: a.mass,
                    functional_calculus: a.mean,
                    direct: b.mean,
                    stderr: c.stderr,
                })
            })
            .collect()
    }
}

/// `(‖v‖_{L²(Γ_X[I]·X_*m)}, stderr)` over the fitted samples.
pub fn weighted_norm<F>(image: &ImageStructure, field: F) -> Result<(f64, f64)>
where
    F: Fn(&[f64]) -> Result<Vec<f64>> + Sync,
{
    let sq: Vec<f64> = image
        .points()
        .par_iter()
        .map(|x| {
            let v = field(x)?;
            Ok(quadratic_form(&v, &image.gamma_x(x)?, &v))
        })
        .collect::<Result<_>>()?;
    let m = Moments::of(&sq);
    let norm = m.mean.max(0.0).sqrt();
    let se = if norm > 0.0 { m.mean_stderr / (2.0 * norm) } else { m.mean_stderr.sqrt() };
    Ok((norm, se))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComposeReport {
    pub residual: f64,
    /// Weighted norm of `∇_X(V∘U)` itself, for scale.
    pub reference: f64,
    pub n_points: usize,
}

/// Residual of `(∇_X(V∘U))ᵀ = (∇_{U∘X}V)ᵀ∘U · (∇_XU)ᵀ` in the weighted norm.
pub fn compose_nabla(
    image_x: &ImageStructure,
    u: &[Expr],
    image_ux: &ImageStructure,
    v: &[Expr],
    n_points: usize,
) -> Result<ComposeReport> {
    let (d, p) = (image_x.dim(), u.len());
    if image_ux.dim() != p {
        return Err(Error::Dimension(format!("U has {p} components, its image structure {}", image_ux.dim())));
    }
    for e in u {
        nabla_x(image_x, e)?;
    }
    for e in v {
        nabla_x(image_ux, e)?;
    }
    let lhs: Vec<Vec<Expr>> = v.iter().map(|vr| Ok(vr.substitute(u)?.gradient(d))).collect::<Result<_>>()?;
    let pts = &image_x.points()[..n_points.min(image_x.points().len())];
    let rows: Vec<(f64, f64)> = pts
        .par_iter()
        .map(|x| {
            let g = image_x.gamma_x(x)?;
            let ux: Vec<f64> = u.iter().map(|e| e.eval(x)).collect::<Result<_>>()?;
            let ju: Vec<Vec<f64>> = u.iter().map(|e| Ok(e.eval_grad(x)?.1)).collect::<Result<_>>()?;
            let (mut res, mut refn) = (0.0, 0.0);
            for (vr, lr) in v.iter().zip(&lhs) {
                let jv = vr.eval_grad(&ux)?.1;
                let l: Vec<f64> = lr.iter().map(|e| e.eval(x)).collect::<Result<_>>()?;
                let r: Vec<f64> = (0..d).map(|j| (0..p).map(|k| jv[k] * ju[k][j]).sum()).collect();
                let diff: Vec<f64> = l.iter().zip(&r).map(|(a, b)| a - b).collect();
                res += quadratic_form(&diff, &g, &diff);
                refn += quadratic_form(&l, &g, &l);
            }
            Ok((res, refn))
        })
        .collect::<Result<_>>()?;
    let n = rows.len().max(1) as f64;
    Ok(ComposeReport {
        residual: (rows.iter().map(|r| r.0).sum::<f64>() / n).max(0.0).sqrt(),
        reference: (rows.iter().map(|r| r.1).sum::<f64>() / n).sqrt(),
        n_points: rows.len(),
    })
}

/// `D_XF(x) = M_X(x) ∇F(x)` with `M_XᵀM_X = Γ̂_X[I](x)`.
#[derive(Clone, Debug)]
pub struct ImageDirichletGradient {
    grad: ImageGradient,
    method: RootMethod,
}

pub fn image_dirichlet_gradient(image: &ImageStructure, f: &Expr, method: RootMethod) -> Result<ImageDirichletGradient> {
    Ok(ImageDirichletGradient { grad: nabla_x(image, f)?, method })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CenterReport {
    /// Largest `|‖D_XF‖² − Γ̂_X[F]|` relative to `‖Γ̂_X‖·‖∇F‖²`.
    pub max_residual: f64,
    pub cholesky_points: usize,
    pub eigen_points: usize,
}

impl ImageDirichletGradient {
    pub fn at(&self, image: &ImageStructure, x: &[f64]) -> Result<(Vec<f64>, RootMethod)> {
        let (m, used) = psd_root(&image.gamma_x(x)?, self.method)?;
        let g = self.grad.eval(x)?;
        Ok(((0..m.nrows()).map(|r| (0..g.len()).map(|j| m[(r, j)] * g[j]).sum()).collect(), used))
    }

    /// `‖D_XF‖² = Γ̂_X[F]` at every cell center.
    pub fn check_at_centers(&self, image: &ImageStructure) -> Result<CenterReport> {
        let mut rep = CenterReport { max_residual: 0.0, cholesky_points: 0, eigen_points: 0 };
        for c in image.cells() {
            let (dv, used) = self.at(image, &c.center)?;
            let g = self.grad.eval(&c.center)?;
            let gm = image.gamma_x(&c.center)?;
            let target = quadratic_form(&g, &gm, &g);
            let scale = gm.abs().max() * g.iter().map(|v| v * v).sum::<f64>();
            let got: f64 = dv.iter().map(|v| v * v).sum();
            let r = if scale > 0.0 { (got - target).abs() / scale } else { (got - target).abs() };
            rep.max_residual = rep.max_residual.max(r);
            match used {
                RootMethod::Eigen => rep.eigen_points += 1,
                _ => rep.cholesky_points += 1,
            }
        }
        Ok(rep)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StarBin {
    pub center: Vec<f64>,
    pub mass: f64,
    pub count: usize,
    /// `‖E[D[F∘X] | X]‖²`.
    pub lhs: f64,
    /// `E[‖D[F∘X]‖² | X] = Γ_X[F]`.
    pub rhs: f64,
    pub rhs_stderr: f64,
    /// `rhs − lhs`, the conditional variance of `D[F∘X]`.
    pub gap: f64,
    pub gap_stderr: f64,
    pub z: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StarReport {
    pub bins: Vec<StarBin>,
}

/// Bin-wise `‖E[D[F∘X]|X]‖²` against `E[‖D[F∘X]‖²|X]`: conditioning a
/// D-gradient on `X` loses the conditional variance of `D[F∘X]`.
pub fn star_inequality_demo(
    s: &ErrorStructure,
    x: &[Functional],
    f: &Expr,
    estimator: CondExpEstimator,
    n: usize,
    seed: u64,
) -> Result<StarReport> {
    let image = image_structure(s, x, estimator, n, seed)?;
    let d = build_dgradient(s, RootMethod::Auto, None)?;
    let fx = Functional::compose(f, x)?;
    let dv: Vec<Vec<f64>> = image.w.par_iter().map(|w| d.apply(&fx, w)).collect::<Result<_>>()?;
    let bins = image
        .partition
        .cells
        .iter()
        .map(|c| {
            let k = d.k();
            let cnt = c.members.len() as f64;
            let mut mean = vec![0.0; k];
            for &i in &c.members {
                for (m, v) in mean.iter_mut().zip(&dv[i]) {
                    *m += v;
                }
            }
            mean.iter_mut().for_each(|m| *m /= cnt);
            let sq: Vec<f64> = c.members.iter().map(|&i| dv[i].iter().map(|v| v * v).sum()).collect();
            let dev: Vec<f64> = c.members.iter().map(|&i| dv[i].iter().zip(&mean).map(|(v, m)| (v - m) * (v - m)).sum()).collect();
            let rhs = Moments::of(&sq);
            let gap = Moments::of(&dev);
            StarBin {
                center: c.center.clone(),
                mass: cnt / n as f64,
                count: c.members.len(),
                lhs: mean.iter().map(|v| v * v).sum(),
                rhs: rhs.mean,
                rhs_stderr: rhs.mean_stderr,
                gap: gap.mean,
                gap_stderr: gap.mean_stderr,
                z: z_score(gap.mean, gap.mean_stderr),
            }
        })
        .collect();
    Ok(StarReport { bins })
}

/// Smooth functions of a linear form `u = a·y` with an explicit expansion
/// on normalized Hermite polynomials of `u / spread`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum Smooth {
    Sin,
    Exp { rate: f64 },
}

/// A target `F(y) = φ(a·y)` on an image whose law makes `a·X` centred
/// Gaussian with standard deviation `spread`, approximated by the
/// truncations `F_n` of its Hermite expansion.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ApproximationCase {
    pub label: String,
    pub dim: usize,
    pub x: Vec<String>,
    pub a: Vec<f64>,
    pub spread: f64,
    pub smooth: Smooth,
}

/// The polynomial-approximation catalog.
pub fn approximation_catalog() -> Vec<ApproximationCase> {
    vec![
        ApproximationCase { label: "x1|sin".into(), dim: 1, x: vec!["x1".into()], a: vec![1.0], spread: 1.0, smooth: Smooth::Sin },
        ApproximationCase {
            label: "x1|exp".into(),
            dim: 1,
            x: vec!["x1".into()],
            a: vec![1.0],
            spread: 1.0,
            smooth: Smooth::Exp { rate: 0.5 },
        },
        ApproximationCase {
            label: "x1,x1+x2|sin".into(),
            dim: 2,
            x: vec!["x1".into(), "x1 + x2".into()],
            a: vec![0.5, 0.25],
            spread: 0.625f64.sqrt(),
            smooth: Smooth::Sin,
        },
    ]
}

fn factorial(k: u32) -> f64 {
    (1..=k).map(f64::from).product()
}

impl ApproximationCase {
    pub fn functionals(&self) -> Result<Vec<Functional>> {
        self.x.iter().map(|s| Functional::parse(s, self.dim)).collect()
    }

    fn linear_form(&self) -> Expr {
        self.a.iter().enumerate().fold(Expr::constant(0.0), |acc, (i, ai)| acc + Expr::constant(*ai) * Expr::var(i))
    }

    /// `F` itself.
    pub fn target(&self) -> Expr {
        let u = self.linear_form();
        match self.smooth {
            Smooth::Sin => Expr::call(Func::Sin, u),
            Smooth::Exp { rate } => Expr::call(Func::Exp, Expr::constant(rate) * u),
        }
    }

    /// Coefficient of `Z_k(u / spread)` in the expansion of `F`.
    pub fn coefficient(&self, k: u32) -> f64 {
        let s = self.spread;
        match self.smooth {
            Smooth::Sin => {
                let sign = match k % 4 {
                    1 => 1.0,
                    3 => -1.0,
                    _ => 0.0,
                };
                sign * (-s * s / 2.0).exp() * s.powi(k as i32) / factorial(k).sqrt()
            }
            Smooth::Exp { rate } => {
                let t = rate * s;
                (t * t / 2.0).exp() * t.powi(k as i32) / factorial(k).sqrt()
            }
        }
    }

    /// `F_n = Σ_{k ≤ n} c_k Z_k(a·y / spread)`.
    pub fn approximant(&self, n: u32) -> Expr {
        let z = self.linear_form() / Expr::constant(self.spread);
        (0..=n)
            .filter(|&k| self.coefficient(k) != 0.0)
            .fold(Expr::constant(0.0), |acc, k| acc + Expr::constant(self.coefficient(k)) * hermite_normalized_expr(z.clone(), k))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CauchyReport {
    /// `‖∇F_n − ∇F‖` for `n = 1..`.
    pub errors: Vec<f64>,
    pub error_stderr: Vec<f64>,
    /// `‖∇F_{n+1} − ∇F_n‖`.
    pub increments: Vec<f64>,
}

/// Weighted distances of an approximating sequence to `F` and to itself.
pub fn cauchy_sequence(image: &ImageStructure, f: &Expr, approximants: &[Expr]) -> Result<CauchyReport> {
    let d = image.dim();
    let gf = f.gradient(d);
    let grads: Vec<Vec<Expr>> = approximants.iter().map(|e| e.gradient(d)).collect();
    let diff = |a: &[Expr], b: &[Expr]| {
        let (a, b) = (a.to_vec(), b.to_vec());
        move |x: &[f64]| -> Result<Vec<f64>> { a.iter().zip(&b).map(|(p, q)| Ok(p.eval(x)? - q.eval(x)?)).collect() }
    };
    let mut rep = CauchyReport { errors: Vec::new(), error_stderr: Vec::new(), increments: Vec::new() };
    for (i, g) in grads.iter().enumerate() {
        let (e, se) = weighted_norm(image, diff(g, &gf))?;
        rep.errors.push(e);
        rep.error_stderr.push(se);
        if i + 1 < grads.len() {
            rep.increments.push(weighted_norm(image, diff(&grads[i + 1], g))?.0);
        }
    }
    Ok(rep)
}

/// `E[(∫u d_G(A∘X) − ∫u d_G(B∘X))²]` at coefficient level.
pub fn evaluation_distance(
    d: &Arc<DGradientOp>,
    nu: &HValuedWhiteNoise,
    x: &[Functional],
    a: &Expr,
    b: &Expr,
    u: &SpaceFn,
) -> Result<f64> {
    let ua = pullback(u, x)?;
    let pa = mv_gradient(&[Functional::compose(a, x)?], d, nu)?.component(0).project(&ua)?;
    let pb = mv_gradient(&[Functional::compose(b, x)?], d, nu)?.component(0).project(&ua)?;
    Ok(pa.minus(&pb).iter().map(|c| c * c).sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;
    use crate::stats::{normal_cdf, normal_pdf};
    use crate::white_noise::{sample_hvalued_wn, BaseMeasureSpace};

    fn f(src: &str, dim: usize) -> Functional {
        Functional::parse(src, dim).unwrap()
    }

    fn gauss(dim: usize) -> ErrorStructure {
        ErrorStructure::gaussian_product(dim).unwrap()
    }

    fn image(dim: usize, xs: &[&str], n: usize, seed: u64) -> ImageStructure {
        let x: Vec<Functional> = xs.iter().map(|s| f(s, dim)).collect();
        image_structure(&gauss(dim), &x, CondExpEstimator::default_for(x.len()), n, seed).unwrap()
    }

    #[test]
    fn default_bin_counts() {
        assert_eq!(ceil_root(1000, 3), 10);
        assert_eq!(ceil_root(1001, 3), 11);
        assert_eq!(ceil_root(100_000, 3), 47);
        assert_eq!(ceil_root(10_000, 2), 100);
    }

    #[test]
    fn identity_images_have_identity_gamma() {
        let im = image(1, &["x1"], 5000, 1);
        for c in im.cells() {
            assert_eq!(c.mean[(0, 0)], 1.0);
        }
        assert_eq!(im.gamma_x(&[0.3]).unwrap()[(0, 0)], 1.0);
        let im2 = image(2, &["x1", "x2"], 5000, 2);
        for c in im2.cells() {
            assert_eq!(c.mean, DMatrix::identity(2, 2));
        }
    }

    #[test]
    fn square_map_gamma_is_four_x() {
        let im = image(1, &["x1^2"], 20_000, 3);
        for c in im.cells() {
            let target = 4.0 * c.center[0];
            assert!((c.mean[(0, 0)] - target).abs() <= 3.0 * c.stderr[(0, 0)] + 1e-12 * target, "{c:?}");
        }
        // off the centers the linear interpolant of 4x is still 4x
        for x in [0.01, 0.4, 1.7, 6.0] {
            assert!((im.gamma_x(&[x]).unwrap()[(0, 0)] - 4.0 * x).abs() < 1e-9 * (1.0 + x));
        }
    }

    #[test]
    fn too_few_samples_or_bins() {
        let x = vec![f("x1", 1)];
        assert!(matches!(
            image_structure(&gauss(1), &x, CondExpEstimator::default_for(1), 500, 1),
            Err(Error::Estimator(_))
        ));
        let x2 = vec![f("x1", 2), f("x2", 2)];
        assert!(matches!(
            image_structure(&gauss(2), &x2, CondExpEstimator::binning(Some(40)), 1000, 1),
            Err(Error::Estimator(_))
        ));
    }

    #[test]
    fn knn_estimator_in_three_dimensions() {
        let x: Vec<Functional> = ["x1", "x1 + x2", "x3"].iter().map(|s| f(s, 3)).collect();
        let im = image_structure(&gauss(3), &x, CondExpEstimator::default_for(3), 2000, 4).unwrap();
        let want = DMatrix::from_row_slice(3, 3, &[1.0, 1.0, 0.0, 1.0, 2.0, 0.0, 0.0, 0.0, 1.0]);
        assert!((im.gamma_x(&[0.1, -0.3, 0.7]).unwrap() - &want).abs().max() < 1e-12);
        assert_eq!(im.cells().len(), 256);
    }

    #[test]
    fn estimator_reproduces_functions_of_x() {
        let im = image(1, &["x1"], 20_000, 5);
        let sc = im.self_consistency(&parse("3*x1 - 1").unwrap()).unwrap();
        assert!(sc.l2_error < 1e-12, "{sc:?}");
        let im2 = image(2, &["x1", "x1 + x2"], 20_000, 5);
        let sc = im2.self_consistency(&parse("x1 - 2*x2").unwrap()).unwrap();
        assert!(sc.l2_error < 1e-12, "{sc:?}");
        let sc = im.self_consistency(&parse("tanh(x1)").unwrap()).unwrap();
        assert!(sc.l2_error <= sc.bound, "{sc:?}");
    }

    #[test]
    fn pushforward_is_the_same_random_variable() {
        let space = Arc::new(BaseMeasureSpace::gaussian_cells(1, 256).unwrap());
        let nu = sample_hvalued_wn(space, 1, 7).unwrap();
        let d = Arc::new(build_dgradient(&gauss(1), RootMethod::Auto, None).unwrap());
        let x = vec![f("x1", 1)];
        let dg = mv_gradient(&x, &d, &nu).unwrap();
        let push = image_mvg(&dg, &x).unwrap();
        for u in ["tanh(x1)", "1", "step(x1 - 0.3)"] {
            let u = SpaceFn::parse(u).unwrap();
            assert_eq!(push.eval(&u).unwrap().to_bits(), dg.component(0).eval(&u).unwrap().to_bits());
        }
        let x2 = vec![f("x1^2", 1)];
        let dg2 = mv_gradient(&x2, &d, &nu).unwrap();
        let push2 = image_mvg(&dg2, &x2).unwrap();
        let ind = SpaceFn::interval(0.0, 1.0);
        let direct = dg2.component(0).eval(&pullback(&ind, &x2).unwrap()).unwrap();
        assert_eq!(push2.eval(&ind).unwrap().to_bits(), direct.to_bits());
        assert_eq!(
            push2.eval(&SpaceFn::constant(1.0)).unwrap().to_bits(),
            dg2.component(0).eval(&SpaceFn::constant(1.0)).unwrap().to_bits()
        );
    }

    #[test]
    fn pushforward_variance_on_unit_interval() {
        // ∫_{-1}^{1} 4x² φ(x) dx = 4(Φ(1) − Φ(−1) − 2φ(1))
        let oracle = 4.0 * (normal_cdf(1.0) - normal_cdf(-1.0) - 2.0 * normal_pdf(1.0));
        let space = Arc::new(BaseMeasureSpace::gaussian_cells(1, 256).unwrap());
        let nu = sample_hvalued_wn(space.clone(), 1, 8).unwrap();
        let d = Arc::new(build_dgradient(&gauss(1), RootMethod::Auto, None).unwrap());
        let x = vec![f("x1^2", 1)];
        let push = image_mvg(&mv_gradient(&x, &d, &nu).unwrap(), &x).unwrap();
        let p = push.project(&SpaceFn::interval(0.0, 1.0)).unwrap();
        let vals = sample_projections(&[&p], space.len(), 10_000, 9).remove(0);
        let m = Moments::of(&vals);
        assert!((m.variance - oracle).abs() <= 3.0 * m.variance_stderr + p.defect(), "{} vs {oracle}", m.variance);
        // the jumps at ±1 cost O(panel width) in the cell quadrature
        assert!((p.norm_sq - oracle).abs() < 5e-3, "{}", p.norm_sq);
    }

    fn density(dim: usize, xs: &[&str], fsrc: &str, seed: u64) -> DensityReport {
        let im = image(dim, xs, 20_000, seed);
        let space = Arc::new(BaseMeasureSpace::gaussian_cells(dim, if dim == 1 { 256 } else { 32 }).unwrap());
        let nu = sample_hvalued_wn(space, dim, seed + 1).unwrap();
        let d = Arc::new(build_dgradient(&gauss(dim), RootMethod::Auto, None).unwrap());
        image_density_check(&im, &parse(fsrc).unwrap(), &d, &nu, 6, 10_000, seed + 2).unwrap()
    }

    #[test]
    fn density_of_square_map() {
        let rep = density(1, &["x1^2"], "x1", 11);
        assert_eq!(rep.sets.len(), 6);
        for s in &rep.sets {
            // ∫_A 4x dχ²₁ on the same samples, through the source variable
            assert!((s.target - s.direct).abs() <= 1e-9 * s.target, "{s:?}");
            assert!(s.z.abs() <= 3.0, "{s:?}");
        }
        let total: f64 = rep.sets.iter().map(|s| s.target).sum();
        assert!((total - 4.0).abs() < 0.2, "{total}");
    }

    #[test]
    fn density_identity_and_constant() {
        let rep = density(1, &["x1"], "x1", 12);
        for s in &rep.sets {
            assert!((s.target - s.mass).abs() < 1e-12 && s.z.abs() <= 3.0, "{s:?}");
        }
        let rep = density(1, &["x1"], "2.5", 13);
        for s in &rep.sets {
            assert_eq!((s.target, s.estimate, s.z), (0.0, 0.0, 0.0));
        }
    }

    #[test]
    fn density_in_two_dimensions() {
        let rep = density(2, &["x1", "x1 + x2"], "x1 + x2", 14);
        assert_eq!(rep.sets.len(), 6);
        for s in &rep.sets {
            assert!((s.target - 5.0 * s.mass).abs() < 1e-9, "{s:?}");
            assert!(s.z.abs() <= 3.0, "{s:?}");
        }
    }

    #[test]
    fn nabla_examples() {
        let im = image(1, &["x1^2"], 20_000, 15);
        let g = nabla_x(&im, &parse("x1^2").unwrap()).unwrap();
        assert_eq!(g.eval(&[1.5]).unwrap(), vec![3.0]);
        let id = nabla_x(&im, &parse("x1").unwrap()).unwrap();
        assert_eq!(id.eval(&[1.5]).unwrap(), vec![1.0]);
        for c in g.gamma_identity(&im).unwrap() {
            let x = c.center[0];
            // Γ_X[F] = 16x³ at the center of each bin
            assert!((c.at_center - 16.0 * x.powi(3)).abs() <= 1e-9 * (1.0 + 16.0 * x.powi(3)), "{c:?}");
            assert!((c.functional_calculus - c.direct).abs() <= 3.0 * c.stderr + 1e-9 * c.direct.abs(), "{c:?}");
        }
        let im2 = image(2, &["x1", "x2"], 5000, 16);
        let g2 = nabla_x(&im2, &parse("x1").unwrap()).unwrap();
        assert_eq!(g2.eval(&[0.2, 0.3]).unwrap(), vec![1.0, 0.0]);
        assert!(matches!(nabla_x(&im2, &parse("x3").unwrap()), Err(Error::Arity(_))));
    }

    #[test]
    fn tower_property() {
        let im = image(1, &["x1^2"], 20_000, 17);
        for fsrc in ["x1", "x1^2", "sin(x1)"] {
            let t = im.tower_check(&parse(fsrc).unwrap(), 20_000, 18).unwrap();
            assert!(t.z.abs() <= 3.0, "{fsrc}: {t:?}");
        }
    }

    #[test]
    fn composition_identity() {
        let im = image(1, &["x1"], 5000, 19);
        let sq = image(1, &["x1^2"], 5000, 20);
        let r = compose_nabla(&im, &[parse("x1^2").unwrap()], &sq, &[parse("x1^3").unwrap()], 1000).unwrap();
        assert!(r.residual <= 1e-10 * r.reference.max(1.0), "{r:?}");
        let r = compose_nabla(&im, &[parse("x1^2").unwrap()], &sq, &[parse("x1").unwrap()], 1000).unwrap();
        assert!(r.residual <= 1e-12, "{r:?}");
        let im2 = image(2, &["x1", "x2"], 5000, 21);
        let u = [parse("x1 + x2").unwrap(), parse("x1*x2").unwrap()];
        let im_u = image(2, &["x1 + x2", "x1*x2"], 5000, 22);
        let r = compose_nabla(&im2, &u, &im_u, &[parse("x1*x2").unwrap()], 1000).unwrap();
        assert!(r.residual <= 1e-8, "{r:?}");
        assert!(matches!(compose_nabla(&im2, &u, &im, &[parse("x1").unwrap()], 10), Err(Error::Dimension(_))));
    }

    #[test]
    fn image_dirichlet_gradient_paths() {
        let im = image(1, &["x1^2"], 20_000, 23);
        let dx = image_dirichlet_gradient(&im, &parse("x1").unwrap(), RootMethod::Auto).unwrap();
        let (v, _) = dx.at(&im, &[2.25]).unwrap();
        assert!((v[0] - 3.0).abs() < 1e-9, "{v:?}");
        let rep = dx.check_at_centers(&im).unwrap();
        assert!(rep.max_residual <= 1e-8 && rep.cholesky_points > 0, "{rep:?}");
        let id = image(2, &["x1", "x2"], 5000, 24);
        let di = image_dirichlet_gradient(&id, &parse("x1*x2").unwrap(), RootMethod::Auto).unwrap();
        assert_eq!(di.at(&id, &[0.5, 2.0]).unwrap().0, vec![2.0, 0.5]);
        let sing = image(1, &["x1", "2*x1"], 5000, 25);
        let ds = image_dirichlet_gradient(&sing, &parse("sin(x1) + x2^2").unwrap(), RootMethod::Auto).unwrap();
        let rep = ds.check_at_centers(&sing).unwrap();
        assert!(rep.max_residual <= 1e-8 && rep.eigen_points == sing.cells().len(), "{rep:?}");
    }

    #[test]
    fn conditioning_loses_the_gradient_variance() {
        let x = vec![f("x1^2", 1)];
        let rep = star_inequality_demo(&gauss(1), &x, &parse("x1").unwrap(), CondExpEstimator::default_for(1), 20_000, 26).unwrap();
        for b in &rep.bins {
            assert!(b.lhs <= b.rhs + 3.0 * b.rhs_stderr);
            if b.center[0] >= 0.5 {
                assert!(b.z > 5.0, "{b:?}");
                assert!((b.gap - 4.0 * b.center[0]).abs() <= 0.2 * 4.0 * b.center[0], "{b:?}");
            }
        }
        let rep = star_inequality_demo(&gauss(1), &[f("x1", 1)], &parse("x1").unwrap(), CondExpEstimator::default_for(1), 5000, 27).unwrap();
        for b in &rep.bins {
            assert_eq!((b.lhs, b.rhs, b.gap, b.z), (1.0, 1.0, 0.0, 0.0));
        }
        let rep = star_inequality_demo(&gauss(1), &x, &parse("3").unwrap(), CondExpEstimator::default_for(1), 5000, 28).unwrap();
        assert!(rep.bins.iter().all(|b| b.lhs == 0.0 && b.rhs == 0.0));
    }

    /// `Σ_{k>n} (k c_k²)`: the squared derivative tail of the expansion.
    fn tail(case: &ApproximationCase, n: u32) -> f64 {
        (n + 1..80).map(|k| k as f64 * case.coefficient(k).powi(2)).sum()
    }

    #[test]
    fn approximation_catalog_converges() {
        for case in approximation_catalog() {
            let x = case.functionals().unwrap();
            let im = image_structure(&gauss(case.dim), &x, CondExpEstimator::default_for(case.dim), 20_000, 29).unwrap();
            let approx: Vec<Expr> = (1..=12).map(|n| case.approximant(n)).collect();
            let rep = cauchy_sequence(&im, &case.target(), &approx).unwrap();
            // beyond n = 4 the squared error lives in the Gaussian tails and
            // its sample mean is too skewed for a z-test
            for (i, e) in rep.errors.iter().take(4).enumerate() {
                let exact = tail(&case, i as u32 + 1).sqrt();
                assert!((e - exact).abs() <= 3.0 * rep.error_stderr[i] + 0.02 * exact, "{}: n={} {e} vs {exact}", case.label, i + 1);
            }
            for (i, inc) in rep.increments.iter().enumerate() {
                assert!(*inc <= rep.errors[i] + rep.errors[i + 1] + 1e-12, "{}: triangle inequality", case.label);
            }
            for w in rep.errors[4..].windows(2) {
                assert!(w[1] <= w[0] * (1.0 + 1e-9), "{}: {:?}", case.label, rep.errors);
            }
            assert!(*rep.errors.last().unwrap() < 1e-4, "{}: {:?}", case.label, rep.errors);
        }
    }

    #[test]
    fn approximant_coefficients_reproduce_the_target() {
        for case in approximation_catalog() {
            let fx = case.target();
            let fn_ = case.approximant(25);
            let pt: Vec<f64> = (0..case.dim).map(|i| 0.3 - 0.5 * i as f64).collect();
            assert!((fx.eval(&pt).unwrap() - fn_.eval(&pt).unwrap()).abs() < 1e-9, "{}", case.label);
        }
    }
}
