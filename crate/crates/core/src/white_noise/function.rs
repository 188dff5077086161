//! Functions on the base space `E` that noises are evaluated against.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::expr::Expr;

type NativeBody = dyn Fn(&[f64]) -> f64 + Send + Sync;

/// A real function on `E`: an expression, a labelled closure, or a product
/// or linear combination of those.
#[derive(Clone)]
pub enum SpaceFn {
    Expr(Expr),
    Native { label: Arc<str>, body: Arc<NativeBody> },
    Product(Vec<SpaceFn>),
    Linear(Vec<(f64, SpaceFn)>),
}

impl SpaceFn {
    pub fn expr(e: Expr) -> SpaceFn {
        SpaceFn::Expr(e)
    }

    pub fn parse(src: &str) -> Result<SpaceFn> {
        Ok(SpaceFn::Expr(crate::expr::parse(src)?))
    }

    pub fn constant(c: f64) -> SpaceFn {
        SpaceFn::Expr(Expr::constant(c))
    }

    pub fn native<F>(label: impl Into<String>, body: F) -> SpaceFn
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        SpaceFn::Native { label: Arc::from(label.into()), body: Arc::new(body) }
    }

    /// Indicator of `[lo, hi)` in the first coordinate.
    pub fn interval(lo: f64, hi: f64) -> SpaceFn {
        SpaceFn::native(format!("1[{lo},{hi})"), move |x| if x[0] >= lo && x[0] < hi { 1.0 } else { 0.0 })
    }

    /// `Σ a_i f_i`, kept unexpanded so noises can evaluate it term by term.
    pub fn linear(terms: Vec<(f64, SpaceFn)>) -> SpaceFn {
        SpaceFn::Linear(terms)
    }

    pub fn as_const(&self) -> Option<f64> {
        match self {
            SpaceFn::Expr(e) => e.as_const(),
            _ => None,
        }
    }

    /// The same function as a single expression, when it has one.
    pub fn as_expr(&self) -> Option<Expr> {
        match self {
            SpaceFn::Expr(e) => Some(e.clone()),
            SpaceFn::Native { .. } => None,
            SpaceFn::Product(fs) => {
                let mut acc = Expr::constant(1.0);
                for f in fs {
                    acc = acc * f.as_expr()?;
                }
                Some(acc)
            }
            SpaceFn::Linear(ts) => {
                let mut acc = Expr::constant(0.0);
                for (a, f) in ts {
                    acc = acc + Expr::constant(*a) * f.as_expr()?;
                }
                Some(acc)
            }
        }
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        let v = match self {
            SpaceFn::Expr(e) => e.eval(x)?,
            SpaceFn::Native { body, .. } => body(x),
            SpaceFn::Product(fs) => {
                let mut acc = 1.0;
                for f in fs {
                    acc *= f.eval(x)?;
                }
                acc
            }
            SpaceFn::Linear(ts) => {
                let mut acc = 0.0;
                for (a, f) in ts {
                    acc += a * f.eval(x)?;
                }
                acc
            }
        };
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("{self} is {v} at {x:?}")));
        }
        Ok(v)
    }

    /// Pointwise product; constants fold and products flatten.
    pub fn mul(&self, other: &SpaceFn) -> SpaceFn {
        match (self.as_const(), other.as_const()) {
            (Some(a), Some(b)) => return SpaceFn::constant(a * b),
            (Some(a), None) if a == 1.0 => return other.clone(),
            (None, Some(b)) if b == 1.0 => return self.clone(),
            _ => {}
        }
        let mut parts = Vec::new();
        for f in [self, other] {
            match f {
                SpaceFn::Product(fs) => parts.extend(fs.iter().cloned()),
                f => parts.push(f.clone()),
            }
        }
        SpaceFn::Product(parts)
    }

    pub fn scaled(&self, c: f64) -> SpaceFn {
        if c == 1.0 {
            return self.clone();
        }
        match self.as_const() {
            Some(v) => SpaceFn::constant(c * v),
            None => SpaceFn::Linear(vec![(c, self.clone())]),
        }
    }

    pub fn square(&self) -> SpaceFn {
        match self {
            SpaceFn::Expr(e) => SpaceFn::Expr(e.clone().powi(2)),
            f => f.mul(f),
        }
    }

    /// Canonical text used in associated-measure metadata.
    pub fn label(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for SpaceFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SpaceFn::Expr(e) => write!(f, "{e}"),
            SpaceFn::Native { label, .. } => write!(f, "{label}"),
            SpaceFn::Product(fs) => {
                for (i, g) in fs.iter().enumerate() {
                    if i > 0 {
                        write!(f, "*")?;
                    }
                    write!(f, "({g})")?;
                }
                Ok(())
            }
            SpaceFn::Linear(ts) => {
                for (i, (a, g)) in ts.iter().enumerate() {
                    if i > 0 {
                        write!(f, " + ")?;
                    }
                    write!(f, "{a}*({g})")?;
                }
                Ok(())
            }
        }
    }
}

impl fmt::Debug for SpaceFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SpaceFn({self})")
    }
}

impl From<Expr> for SpaceFn {
    fn from(e: Expr) -> Self {
        SpaceFn::Expr(e)
    }
}
