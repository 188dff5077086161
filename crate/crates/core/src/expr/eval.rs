//! Forward-mode evaluation of expression trees.
//!
//! The same tree walk is instantiated with plain values, first-order duals
//! (value + gradient) and second-order duals (value + gradient + Hessian).
//! Every univariate operation, including integer powers and reciprocals, is
//! pushed through a single `chain` rule taking the value and the first two
//! derivatives of the outer function.

use super::ast::{Expr, Func};
use crate::error::{Error, Result};

pub(crate) trait Scalar: Sized {
    const ORDER: usize;
    fn constant(c: f64, dim: usize) -> Self;
    fn variable(x: f64, i: usize, dim: usize) -> Self;
    fn value(&self) -> f64;
    fn add(&self, o: &Self) -> Self;
    fn sub(&self, o: &Self) -> Self;
    fn mul(&self, o: &Self) -> Self;
    fn neg(&self) -> Self;
    fn chain(&self, f: f64, f1: f64, f2: f64) -> Self;
}

impl Scalar for f64 {
    const ORDER: usize = 0;
    fn constant(c: f64, _: usize) -> Self {
        c
    }
    fn variable(x: f64, _: usize, _: usize) -> Self {
        x
    }
    fn value(&self) -> f64 {
        *self
    }
    fn add(&self, o: &Self) -> Self {
        self + o
    }
    fn sub(&self, o: &Self) -> Self {
        self - o
    }
    fn mul(&self, o: &Self) -> Self {
        self * o
    }
    fn neg(&self) -> Self {
        -self
    }
    fn chain(&self, f: f64, _: f64, _: f64) -> Self {
        f
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Dual {
    pub v: f64,
    pub g: Vec<f64>,
}

impl Scalar for Dual {
    const ORDER: usize = 1;
    fn constant(c: f64, dim: usize) -> Self {
        Dual { v: c, g: vec![0.0; dim] }
    }
    fn variable(x: f64, i: usize, dim: usize) -> Self {
        let mut g = vec![0.0; dim];
        g[i] = 1.0;
        Dual { v: x, g }
    }
    fn value(&self) -> f64 {
        self.v
    }
    fn add(&self, o: &Self) -> Self {
        Dual { v: self.v + o.v, g: self.g.iter().zip(&o.g).map(|(a, b)| a + b).collect() }
    }
    fn sub(&self, o: &Self) -> Self {
        Dual { v: self.v - o.v, g: self.g.iter().zip(&o.g).map(|(a, b)| a - b).collect() }
    }
    fn mul(&self, o: &Self) -> Self {
        Dual {
            v: self.v * o.v,
            g: self.g.iter().zip(&o.g).map(|(a, b)| self.v * b + o.v * a).collect(),
        }
    }
    fn neg(&self) -> Self {
        Dual { v: -self.v, g: self.g.iter().map(|a| -a).collect() }
    }
    fn chain(&self, f: f64, f1: f64, _: f64) -> Self {
        Dual { v: f, g: self.g.iter().map(|a| f1 * a).collect() }
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Dual2 {
    pub v: f64,
    pub g: Vec<f64>,
    /// Row-major `dim × dim`.
    pub h: Vec<f64>,
}

impl Scalar for Dual2 {
    const ORDER: usize = 2;
    fn constant(c: f64, dim: usize) -> Self {
        Dual2 { v: c, g: vec![0.0; dim], h: vec![0.0; dim * dim] }
    }
    fn variable(x: f64, i: usize, dim: usize) -> Self {
        let mut g = vec![0.0; dim];
        g[i] = 1.0;
        Dual2 { v: x, g, h: vec![0.0; dim * dim] }
    }
    fn value(&self) -> f64 {
        self.v
    }
    fn add(&self, o: &Self) -> Self {
        Dual2 {
            v: self.v + o.v,
            g: self.g.iter().zip(&o.g).map(|(a, b)| a + b).collect(),
            h: self.h.iter().zip(&o.h).map(|(a, b)| a + b).collect(),
        }
    }
    fn sub(&self, o: &Self) -> Self {
        Dual2 {
            v: self.v - o.v,
            g: self.g.iter().zip(&o.g).map(|(a, b)| a - b).collect(),
            h: self.h.iter().zip(&o.h).map(|(a, b)| a - b).collect(),
        }
    }
    fn mul(&self, o: &Self) -> Self {
        let d = self.g.len();
        let mut h = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                h[i * d + j] = self.v * o.h[i * d + j]
                    + o.v * self.h[i * d + j]
                    + self.g[i] * o.g[j]
                    + o.g[i] * self.g[j];
            }
        }
        Dual2 {
            v: self.v * o.v,
            g: self.g.iter().zip(&o.g).map(|(a, b)| self.v * b + o.v * a).collect(),
            h,
        }
    }
    fn neg(&self) -> Self {
        Dual2 {
            v: -self.v,
            g: self.g.iter().map(|a| -a).collect(),
            h: self.h.iter().map(|a| -a).collect(),
        }
    }
    fn chain(&self, f: f64, f1: f64, f2: f64) -> Self {
        let d = self.g.len();
        let mut h = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                h[i * d + j] = f1 * self.h[i * d + j] + f2 * self.g[i] * self.g[j];
            }
        }
        Dual2 { v: f, g: self.g.iter().map(|a| f1 * a).collect(), h }
    }
}

fn check_derivs(name: &str, t: f64, f1: f64, f2: f64, order: usize) -> Result<()> {
    if (order >= 1 && !f1.is_finite()) || (order >= 2 && !f2.is_finite()) {
        return Err(Error::Domain(format!("{name} is not differentiable at {t}")));
    }
    Ok(())
}

fn powi_jet(t: f64, n: i32) -> Result<(f64, f64, f64)> {
    if n < 0 && t == 0.0 {
        return Err(Error::Domain(format!("zero raised to negative power {n}")));
    }
    let nf = n as f64;
    let f1 = if n == 0 { 0.0 } else { nf * t.powi(n - 1) };
    let f2 = if n == 0 || n == 1 { 0.0 } else { nf * (nf - 1.0) * t.powi(n - 2) };
    Ok((t.powi(n), f1, f2))
}

pub(crate) fn eval_generic<T: Scalar>(e: &Expr, w: &[f64]) -> Result<T> {
    let dim = w.len();
    let out: T = match e {
        Expr::Const(c) => T::constant(*c, dim),
        Expr::Var(i) => {
            if *i >= dim {
                return Err(Error::Arity(format!("x{} referenced at a point of dimension {dim}", i + 1)));
            }
            T::variable(w[*i], *i, dim)
        }
        Expr::PathValue(t) => {
            return Err(Error::Domain(format!("w({t}) must be bound to a Wiener structure before evaluation")))
        }
        Expr::Neg(a) => eval_generic::<T>(a, w)?.neg(),
        Expr::Add(a, b) => eval_generic::<T>(a, w)?.add(&eval_generic::<T>(b, w)?),
        Expr::Sub(a, b) => eval_generic::<T>(a, w)?.sub(&eval_generic::<T>(b, w)?),
        Expr::Mul(a, b) => eval_generic::<T>(a, w)?.mul(&eval_generic::<T>(b, w)?),
        Expr::Div(a, b) => {
            let num = eval_generic::<T>(a, w)?;
            let den = eval_generic::<T>(b, w)?;
            let t = den.value();
            if t == 0.0 {
                return Err(Error::Domain("division by zero".into()));
            }
            num.mul(&den.chain(1.0 / t, -1.0 / (t * t), 2.0 / (t * t * t)))
        }
        Expr::Pow(a, n) => {
            let base = eval_generic::<T>(a, w)?;
            let t = base.value();
            let (f, f1, f2) = powi_jet(t, *n)?;
            base.chain(f, f1, f2)
        }
        Expr::Call(func, a) => {
            let arg = eval_generic::<T>(a, w)?;
            let t = arg.value();
            let (f, f1, f2) = func.jet(t)?;
            if *func != Func::Step {
                check_derivs(func.name(), t, f1, f2, T::ORDER)?;
            }
            arg.chain(f, f1, f2)
        }
    };
    if !out.value().is_finite() {
        return Err(Error::Domain(format!("non-finite value while evaluating {e}")));
    }
    Ok(out)
}

impl Expr {
    /// Value at `w`.
    pub fn eval(&self, w: &[f64]) -> Result<f64> {
        eval_generic::<f64>(self, w)
    }

    /// Value and exact coordinate gradient at `w` (forward derivative rules).
    pub fn eval_grad(&self, w: &[f64]) -> Result<(f64, Vec<f64>)> {
        let d = eval_generic::<Dual>(self, w)?;
        Ok((d.v, d.g))
    }

    /// Value, gradient and row-major Hessian at `w` (forward-on-forward).
    pub fn eval_hessian(&self, w: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
        let d = eval_generic::<Dual2>(self, w)?;
        Ok((d.v, d.g, d.h))
    }
}
