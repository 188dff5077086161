//! Sparse multivariate polynomials and their expansion on normalized
//! Hermite products `Z_α = Π_i He_{α_i}(x_i) / sqrt(α_i!)`.

use std::collections::BTreeMap;

use super::ast::Expr;

pub type MultiIndex = Vec<u32>;

#[derive(Clone, Debug, PartialEq)]
pub struct Polynomial {
    dim: usize,
    terms: BTreeMap<MultiIndex, f64>,
}

fn factorial(n: u32) -> f64 {
    (1..=n).map(f64::from).product()
}

impl Polynomial {
    pub fn zero(dim: usize) -> Self {
        Polynomial { dim, terms: BTreeMap::new() }
    }

    pub fn constant(c: f64, dim: usize) -> Self {
        let mut p = Polynomial::zero(dim);
        if c != 0.0 {
            p.terms.insert(vec![0; dim], c);
        }
        p
    }

    pub fn var(i: usize, dim: usize) -> Self {
        let mut m = vec![0; dim];
        m[i] = 1;
        let mut p = Polynomial::zero(dim);
        p.terms.insert(m, 1.0);
        p
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn terms(&self) -> impl Iterator<Item = (&MultiIndex, &f64)> {
        self.terms.iter()
    }

    pub fn degree(&self) -> u32 {
        self.terms.keys().map(|m| m.iter().sum()).max().unwrap_or(0)
    }

    fn insert(&mut self, m: MultiIndex, c: f64) {
        let v = self.terms.get(&m).copied().unwrap_or(0.0) + c;
        if v == 0.0 {
            self.terms.remove(&m);
        } else {
            self.terms.insert(m, v);
        }
    }

    pub fn add(&self, o: &Polynomial) -> Polynomial {
        let mut out = self.clone();
        for (m, c) in &o.terms {
            out.insert(m.clone(), *c);
        }
        out
    }

    pub fn scale(&self, s: f64) -> Polynomial {
        let mut out = Polynomial::zero(self.dim);
        if s != 0.0 {
            for (m, c) in &self.terms {
                out.terms.insert(m.clone(), c * s);
            }
        }
        out
    }

    pub fn mul(&self, o: &Polynomial) -> Polynomial {
        let mut out = Polynomial::zero(self.dim);
        for (ma, ca) in &self.terms {
            for (mb, cb) in &o.terms {
                let m: MultiIndex = ma.iter().zip(mb).map(|(a, b)| a + b).collect();
                out.insert(m, ca * cb);
            }
        }
        out
    }

    pub fn powi(&self, n: u32) -> Polynomial {
        let mut out = Polynomial::constant(1.0, self.dim);
        for _ in 0..n {
            out = out.mul(self);
        }
        out
    }

    /// Exact conversion of a polynomial expression; `None` if `e` uses a
    /// transcendental function, a non-constant divisor or a negative power.
    pub fn from_expr(e: &Expr, dim: usize) -> Option<Polynomial> {
        Some(match e {
            Expr::Const(c) => Polynomial::constant(*c, dim),
            Expr::Var(i) if *i < dim => Polynomial::var(*i, dim),
            Expr::Var(_) | Expr::PathValue(_) | Expr::Call(..) => return None,
            Expr::Neg(a) => Polynomial::from_expr(a, dim)?.scale(-1.0),
            Expr::Add(a, b) => Polynomial::from_expr(a, dim)?.add(&Polynomial::from_expr(b, dim)?),
            Expr::Sub(a, b) => Polynomial::from_expr(a, dim)?.add(&Polynomial::from_expr(b, dim)?.scale(-1.0)),
            Expr::Mul(a, b) => Polynomial::from_expr(a, dim)?.mul(&Polynomial::from_expr(b, dim)?),
            Expr::Div(a, b) => {
                let den = Polynomial::from_expr(b, dim)?;
                if den.degree() != 0 {
                    return None;
                }
                let c = den.terms.values().next().copied()?;
                Polynomial::from_expr(a, dim)?.scale(1.0 / c)
            }
            Expr::Pow(a, n) => {
                if *n < 0 {
                    return None;
                }
                Polynomial::from_expr(a, dim)?.powi(*n as u32)
            }
        })
    }

    /// Expectation under the standard Gaussian `N(0, I_dim)`.
    pub fn gaussian_mean(&self) -> f64 {
        self.hermite_coefficients().get(&vec![0; self.dim]).copied().unwrap_or(0.0)
    }

    /// Coefficients `E[P · Z_α]` on the normalized Hermite products. The map
    /// holds every nonzero coefficient, so `Σ c²` is exactly `E[P²]`.
    pub fn hermite_coefficients(&self) -> BTreeMap<MultiIndex, f64> {
        let mut out: BTreeMap<MultiIndex, f64> = BTreeMap::new();
        for (m, c) in &self.terms {
            // univariate expansions x^k = Σ_j a_{k,j} Z_j
            let factors: Vec<Vec<(u32, f64)>> = m.iter().map(|&k| monomial_in_hermite(k)).collect();
            let mut partial: Vec<(MultiIndex, f64)> = vec![(Vec::with_capacity(self.dim), *c)];
            for f in &factors {
                let mut next = Vec::with_capacity(partial.len() * f.len());
                for (idx, coef) in &partial {
                    for &(j, a) in f {
                        let mut idx2 = idx.clone();
                        idx2.push(j);
                        next.push((idx2, coef * a));
                    }
                }
                partial = next;
            }
            for (idx, coef) in partial {
                *out.entry(idx).or_insert(0.0) += coef;
            }
        }
        out.retain(|_, v| *v != 0.0);
        out
    }
}

/// `x^k = Σ_j a_j Z_j(x)` with `Z_j = He_j / sqrt(j!)`: returns `(j, a_j)`.
fn monomial_in_hermite(k: u32) -> Vec<(u32, f64)> {
    (0..=k / 2)
        .map(|i| {
            let j = k - 2 * i;
            let a = factorial(k) / (2f64.powi(i as i32) * factorial(i) * factorial(j));
            (j, a * factorial(j).sqrt())
        })
        .collect()
}

/// Normalized probabilists' Hermite polynomial `He_n(x) / sqrt(n!)`.
pub fn hermite_normalized(n: u32, x: f64) -> f64 {
    // stable three-term recurrence on the normalized family
    if n == 0 {
        return 1.0;
    }
    let (mut prev, mut cur) = (1.0, x);
    for k in 1..n {
        let kf = k as f64;
        let next = (x * cur - kf.sqrt() * prev) / (kf + 1.0).sqrt();
        prev = cur;
        cur = next;
    }
    cur
}

/// Monomial coefficients of `He_n(x) / sqrt(n!)`, lowest degree first.
pub fn hermite_normalized_coefficients(n: u32) -> Vec<f64> {
    let (mut prev, mut cur) = (vec![1.0], vec![0.0, 1.0]);
    if n == 0 {
        return prev;
    }
    for k in 1..n {
        let kf = k as f64;
        let scale = (kf + 1.0).sqrt();
        let mut next = vec![0.0; k as usize + 2];
        for (i, c) in cur.iter().enumerate() {
            next[i + 1] += c / scale;
        }
        for (i, p) in prev.iter().enumerate() {
            next[i] -= kf.sqrt() * p / scale;
        }
        prev = cur;
        cur = next;
    }
    cur
}

/// `He_n(arg) / sqrt(n!)` in Horner form, so the tree grows linearly in `n`.
pub fn hermite_normalized_expr(arg: Expr, n: u32) -> Expr {
    let c = hermite_normalized_coefficients(n);
    let mut acc = Expr::constant(c[c.len() - 1]);
    for &ci in c.iter().rev().skip(1) {
        acc = acc * arg.clone();
        if ci != 0.0 {
            acc = acc + Expr::constant(ci);
        }
    }
    acc
}
