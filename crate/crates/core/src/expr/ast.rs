use std::fmt;
use std::ops;

use crate::error::{Error, Result};

/// Elementary univariate functions of the expression language.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Func {
    Exp,
    Log,
    Sin,
    Cos,
    Tanh,
    Sqrt,
    /// Heaviside step `1_{t > 0}`. Derivative is taken as zero; only meant for
    /// building indicator test functions, never inside a C¹ functional.
    Step,
}

impl Func {
    pub fn name(self) -> &'static str {
        match self {
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Tanh => "tanh",
            Func::Sqrt => "sqrt",
            Func::Step => "step",
        }
    }

    pub fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "exp" => Func::Exp,
            "log" => Func::Log,
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "tanh" => Func::Tanh,
            "sqrt" => Func::Sqrt,
            "step" => Func::Step,
            _ => return None,
        })
    }

    /// Value and first two derivatives at `t`.
    pub(crate) fn jet(self, t: f64) -> Result<(f64, f64, f64)> {
        Ok(match self {
            Func::Exp => {
                let e = t.exp();
                (e, e, e)
            }
            Func::Log => {
                if t <= 0.0 {
                    return Err(Error::Domain(format!("log of non-positive argument {t}")));
                }
                (t.ln(), 1.0 / t, -1.0 / (t * t))
            }
            Func::Sin => (t.sin(), t.cos(), -t.sin()),
            Func::Cos => (t.cos(), -t.sin(), -t.cos()),
            Func::Tanh => {
                let th = t.tanh();
                let s = 1.0 - th * th;
                (th, s, -2.0 * th * s)
            }
            Func::Sqrt => {
                if t < 0.0 {
                    return Err(Error::Domain(format!("sqrt of negative argument {t}")));
                }
                let r = t.sqrt();
                (r, 0.5 / r, -0.25 / (r * t))
            }
            Func::Step => (if t > 0.0 { 1.0 } else { 0.0 }, 0.0, 0.0),
        })
    }
}

/// Expression tree over coordinate symbols `x1..xN` (stored zero-based).
#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(usize),
    /// `w(t)`: value of the Brownian path at time `t`; resolved against a
    /// truncated Wiener space before evaluation.
    PathValue(f64),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, i32),
    Call(Func, Box<Expr>),
}

impl Expr {
    pub fn constant(c: f64) -> Expr {
        Expr::Const(c)
    }

    /// Coordinate `x_{i+1}`.
    pub fn var(i: usize) -> Expr {
        Expr::Var(i)
    }

    pub fn call(f: Func, arg: Expr) -> Expr {
        Expr::Call(f, Box::new(arg))
    }

    pub fn powi(self, n: i32) -> Expr {
        match (n, &self) {
            (0, _) => Expr::Const(1.0),
            (1, _) => self,
            (_, Expr::Const(c)) => Expr::Const(c.powi(n)),
            _ => Expr::Pow(Box::new(self), n),
        }
    }

    /// Indicator of the open half-line `{t > 0}` applied to `self`.
    pub fn step(self) -> Expr {
        Expr::call(Func::Step, self)
    }

    pub fn as_const(&self) -> Option<f64> {
        match self {
            Expr::Const(c) => Some(*c),
            _ => None,
        }
    }

    /// Largest coordinate index referenced, if any.
    pub fn max_var(&self) -> Option<usize> {
        match self {
            Expr::Const(_) | Expr::PathValue(_) => None,
            Expr::Var(i) => Some(*i),
            Expr::Neg(a) | Expr::Pow(a, _) | Expr::Call(_, a) => a.max_var(),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                match (a.max_var(), b.max_var()) {
                    (Some(x), Some(y)) => Some(x.max(y)),
                    (x, y) => x.or(y),
                }
            }
        }
    }

    pub fn has_path_values(&self) -> bool {
        match self {
            Expr::PathValue(_) => true,
            Expr::Const(_) | Expr::Var(_) => false,
            Expr::Neg(a) | Expr::Pow(a, _) | Expr::Call(_, a) => a.has_path_values(),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                a.has_path_values() || b.has_path_values()
            }
        }
    }

    /// Replace every `w(t)` node using `resolve`.
    pub fn bind_paths(&self, resolve: &dyn Fn(f64) -> Result<Expr>) -> Result<Expr> {
        Ok(match self {
            Expr::PathValue(t) => resolve(*t)?,
            Expr::Const(_) | Expr::Var(_) => self.clone(),
            Expr::Neg(a) => -a.bind_paths(resolve)?,
            Expr::Pow(a, n) => a.bind_paths(resolve)?.powi(*n),
            Expr::Call(f, a) => Expr::call(*f, a.bind_paths(resolve)?),
            Expr::Add(a, b) => a.bind_paths(resolve)? + b.bind_paths(resolve)?,
            Expr::Sub(a, b) => a.bind_paths(resolve)? - b.bind_paths(resolve)?,
            Expr::Mul(a, b) => a.bind_paths(resolve)? * b.bind_paths(resolve)?,
            Expr::Div(a, b) => a.bind_paths(resolve)? / b.bind_paths(resolve)?,
        })
    }

    /// Composition `self ∘ args`: coordinate `i` is replaced by `args[i]`.
    pub fn substitute(&self, args: &[Expr]) -> Result<Expr> {
        Ok(match self {
            Expr::Var(i) => args
                .get(*i)
                .cloned()
                .ok_or_else(|| Error::Arity(format!("x{} used but only {} arguments", i + 1, args.len())))?,
            Expr::Const(_) | Expr::PathValue(_) => self.clone(),
            Expr::Neg(a) => -a.substitute(args)?,
            Expr::Pow(a, n) => a.substitute(args)?.powi(*n),
            Expr::Call(f, a) => Expr::call(*f, a.substitute(args)?),
            Expr::Add(a, b) => a.substitute(args)? + b.substitute(args)?,
            Expr::Sub(a, b) => a.substitute(args)? - b.substitute(args)?,
            Expr::Mul(a, b) => a.substitute(args)? * b.substitute(args)?,
            Expr::Div(a, b) => a.substitute(args)? / b.substitute(args)?,
        })
    }

    /// Symbolic partial derivative with respect to coordinate `i`, with
    /// constant folding of zeros and ones only.
    pub fn derivative(&self, i: usize) -> Expr {
        match self {
            Expr::Const(_) | Expr::PathValue(_) => Expr::Const(0.0),
            Expr::Var(j) => Expr::Const(if *j == i { 1.0 } else { 0.0 }),
            Expr::Neg(a) => -a.derivative(i),
            Expr::Add(a, b) => a.derivative(i) + b.derivative(i),
            Expr::Sub(a, b) => a.derivative(i) - b.derivative(i),
            Expr::Mul(a, b) => a.derivative(i) * (**b).clone() + (**a).clone() * b.derivative(i),
            Expr::Div(a, b) => {
                (a.derivative(i) * (**b).clone() - (**a).clone() * b.derivative(i))
                    / (**b).clone().powi(2)
            }
            Expr::Pow(a, n) => Expr::Const(*n as f64) * (**a).clone().powi(n - 1) * a.derivative(i),
            Expr::Call(f, a) => {
                let inner = a.derivative(i);
                if inner.as_const() == Some(0.0) {
                    return Expr::Const(0.0);
                }
                let a = (**a).clone();
                let outer = match f {
                    Func::Exp => Expr::call(Func::Exp, a),
                    Func::Log => Expr::Const(1.0) / a,
                    Func::Sin => Expr::call(Func::Cos, a),
                    Func::Cos => -Expr::call(Func::Sin, a),
                    Func::Tanh => Expr::Const(1.0) - Expr::call(Func::Tanh, a).powi(2),
                    Func::Sqrt => Expr::Const(0.5) / Expr::call(Func::Sqrt, a),
                    Func::Step => return Expr::Const(0.0),
                };
                outer * inner
            }
        }
    }

    /// Symbolic gradient over `dim` coordinates.
    pub fn gradient(&self, dim: usize) -> Vec<Expr> {
        (0..dim).map(|i| self.derivative(i)).collect()
    }

    /// Prefix rendering used by the `parse` command.
    pub fn to_sexpr(&self) -> String {
        match self {
            Expr::Const(c) => format!("{c}"),
            Expr::Var(i) => format!("x{}", i + 1),
            Expr::PathValue(t) => format!("(w {t})"),
            Expr::Neg(a) => format!("(neg {})", a.to_sexpr()),
            Expr::Add(a, b) => format!("(+ {} {})", a.to_sexpr(), b.to_sexpr()),
            Expr::Sub(a, b) => format!("(- {} {})", a.to_sexpr(), b.to_sexpr()),
            Expr::Mul(a, b) => format!("(* {} {})", a.to_sexpr(), b.to_sexpr()),
            Expr::Div(a, b) => format!("(/ {} {})", a.to_sexpr(), b.to_sexpr()),
            Expr::Pow(a, n) => format!("(^ {} {n})", a.to_sexpr()),
            Expr::Call(f, a) => format!("({} {})", f.name(), a.to_sexpr()),
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Add(..) | Expr::Sub(..) => 1,
            Expr::Mul(..) | Expr::Div(..) => 2,
            Expr::Neg(..) => 3,
            Expr::Pow(..) => 4,
            Expr::Const(c) if *c < 0.0 => 3,
            _ => 5,
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let wrap = |e: &Expr, min: u8, f: &mut fmt::Formatter<'_>| -> fmt::Result {
            if e.precedence() < min {
                write!(f, "({e})")
            } else {
                write!(f, "{e}")
            }
        };
        match self {
            Expr::Const(c) => write!(f, "{c}"),
            Expr::Var(i) => write!(f, "x{}", i + 1),
            Expr::PathValue(t) => write!(f, "w({t})"),
            Expr::Neg(a) => {
                write!(f, "-")?;
                wrap(a, 4, f)
            }
            Expr::Add(a, b) => {
                wrap(a, 1, f)?;
                write!(f, " + ")?;
                wrap(b, 2, f)
            }
            Expr::Sub(a, b) => {
                wrap(a, 1, f)?;
                write!(f, " - ")?;
                wrap(b, 2, f)
            }
            Expr::Mul(a, b) => {
                wrap(a, 2, f)?;
                write!(f, "*")?;
                wrap(b, 3, f)
            }
            Expr::Div(a, b) => {
                wrap(a, 2, f)?;
                write!(f, "/")?;
                wrap(b, 3, f)
            }
            Expr::Pow(a, n) => {
                wrap(a, 5, f)?;
                write!(f, "^{n}")
            }
            Expr::Call(func, a) => write!(f, "{}({a})", func.name()),
        }
    }
}

impl ops::Add for Expr {
    type Output = Expr;
    fn add(self, rhs: Expr) -> Expr {
        match (self.as_const(), rhs.as_const()) {
            (Some(a), Some(b)) => Expr::Const(a + b),
            (Some(z), _) if z == 0.0 => rhs,
            (_, Some(z)) if z == 0.0 => self,
            _ => Expr::Add(Box::new(self), Box::new(rhs)),
        }
    }
}

impl ops::Sub for Expr {
    type Output = Expr;
    fn sub(self, rhs: Expr) -> Expr {
        match (self.as_const(), rhs.as_const()) {
            (Some(a), Some(b)) => Expr::Const(a - b),
            (Some(z), _) if z == 0.0 => -rhs,
            (_, Some(z)) if z == 0.0 => self,
            _ => Expr::Sub(Box::new(self), Box::new(rhs)),
        }
    }
}

impl ops::Mul for Expr {
    type Output = Expr;
    fn mul(self, rhs: Expr) -> Expr {
        match (self.as_const(), rhs.as_const()) {
            (Some(a), Some(b)) => Expr::Const(a * b),
            (Some(z), _) | (_, Some(z)) if z == 0.0 => Expr::Const(0.0),
            (Some(o), _) if o == 1.0 => rhs,
            (_, Some(o)) if o == 1.0 => self,
            _ => Expr::Mul(Box::new(self), Box::new(rhs)),
        }
    }
}

impl ops::Div for Expr {
    type Output = Expr;
    fn div(self, rhs: Expr) -> Expr {
        match (self.as_const(), rhs.as_const()) {
            (Some(a), Some(b)) if b != 0.0 => Expr::Const(a / b),
            (Some(z), _) if z == 0.0 => Expr::Const(0.0),
            (_, Some(o)) if o == 1.0 => self,
            _ => Expr::Div(Box::new(self), Box::new(rhs)),
        }
    }
}

impl ops::Neg for Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        match self {
            Expr::Const(c) => Expr::Const(-c),
            Expr::Neg(a) => *a,
            e => Expr::Neg(Box::new(e)),
        }
    }
}
