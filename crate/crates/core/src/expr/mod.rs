//! Expression language: parsing, forward-mode derivatives, symbolic
//! differentiation and polynomial/Hermite algebra.

mod ast;
mod eval;
mod parser;
pub mod poly;

pub use ast::{Expr, Func};
pub use parser::parse;
pub use poly::{hermite_normalized, hermite_normalized_coefficients, hermite_normalized_expr, MultiIndex, Polynomial};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use proptest::prelude::*;

    fn central_diff(e: &Expr, w: &[f64], i: usize) -> f64 {
        let h = 1e-6 * (1.0 + w[i].abs());
        let mut p = w.to_vec();
        let mut m = w.to_vec();
        p[i] += h;
        m[i] -= h;
        (e.eval(&p).unwrap() - e.eval(&m).unwrap()) / (2.0 * h)
    }

    #[test]
    fn product_rule() {
        let (v, g) = parse("x1*x2").unwrap().eval_grad(&[1.0, 2.0]).unwrap();
        assert_eq!(v, 2.0);
        assert_eq!(g, vec![2.0, 1.0]);
    }

    #[test]
    fn sine_at_zero() {
        let (v, g) = parse("sin(x1)").unwrap().eval_grad(&[0.0]).unwrap();
        assert_eq!(v, 0.0);
        assert_eq!(g, vec![1.0]);
    }

    #[test]
    fn exp_square_against_finite_differences() {
        let e = parse("exp(x1^2)").unwrap();
        let (v, g) = e.eval_grad(&[1.0]).unwrap();
        let euler = std::f64::consts::E;
        assert!((v - euler).abs() < 1e-14);
        assert!((g[0] - 2.0 * euler).abs() < 1e-13);
        let fd = central_diff(&e, &[1.0], 0);
        assert!(((fd - g[0]) / g[0]).abs() < 1e-5);
    }

    #[test]
    fn domain_and_arity_errors() {
        assert!(matches!(parse("log(x1)").unwrap().eval(&[0.0]), Err(Error::Domain(_))));
        assert!(matches!(parse("sqrt(x1)").unwrap().eval(&[-1.0]), Err(Error::Domain(_))));
        assert!(matches!(parse("1/x1").unwrap().eval(&[0.0]), Err(Error::Domain(_))));
        // value is fine at 0 but the derivative is not
        assert!(parse("sqrt(x1)").unwrap().eval(&[0.0]).is_ok());
        assert!(matches!(parse("sqrt(x1)").unwrap().eval_grad(&[0.0]), Err(Error::Domain(_))));
        assert!(matches!(parse("x3").unwrap().eval(&[1.0, 2.0]), Err(Error::Arity(_))));
    }

    #[test]
    fn parse_errors_carry_location() {
        match parse("x1 +") {
            Err(Error::Parse { line, column, .. }) => assert_eq!((line, column), (1, 4)),
            other => panic!("unexpected {other:?}"),
        }
        match parse("x1*x2 + sin(x3") {
            Err(Error::Parse { column, .. }) => assert_eq!(column, 15),
            other => panic!("unexpected {other:?}"),
        }
        match parse("x1\n  + foo(x2)") {
            Err(Error::Parse { line, column, .. }) => assert_eq!((line, column), (2, 5)),
            other => panic!("unexpected {other:?}"),
        }
        assert!(parse("x1^1.5").is_err());
        assert!(parse("x0").is_err());
    }

    #[test]
    fn hessian_of_polynomial() {
        let (_, g, h) = parse("x1^2*x2 + x2^3").unwrap().eval_hessian(&[1.0, 2.0]).unwrap();
        assert_eq!(g, vec![4.0, 13.0]);
        assert_eq!(h, vec![4.0, 2.0, 2.0, 12.0]);
    }

    #[test]
    fn symbolic_derivative_matches_forward_mode() {
        for src in ["x1*x2", "exp(x1^2)", "tanh(x1)/x2", "sqrt(1 + x1^2)*cos(x2)", "log(2 + sin(x1*x2))"] {
            let e = parse(src).unwrap();
            let w = [0.3, -0.8];
            let (_, g) = e.eval_grad(&w).unwrap();
            for i in 0..2 {
                let d = e.derivative(i).eval(&w).unwrap();
                assert!((d - g[i]).abs() <= 1e-12 * (1.0 + g[i].abs()), "{src}");
            }
        }
    }

    #[test]
    fn display_roundtrips_through_parser() {
        for src in ["x1 - (x2 - x3)", "-x1^2", "(x1 + x2)*x3/(x1 - 2)", "exp(-x1)*-3", "(-2)^3 + x1^-2"] {
            let e = parse(src).unwrap();
            let again = parse(&e.to_string()).unwrap();
            let w = [0.7, 1.3, -0.4];
            assert_eq!(e.eval(&w).unwrap(), again.eval(&w).unwrap(), "{src} -> {e}");
        }
    }

    const CORPUS: &[&str] = &[
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

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn gradients_agree_with_central_differences(a in -2.0f64..2.0, b in -2.0f64..2.0) {
            for src in CORPUS {
                let e = parse(src).unwrap();
                let w = [a, b];
                let Ok((_, g)) = e.eval_grad(&w) else { continue };
                for i in 0..2 {
                    let fd = central_diff(&e, &w, i);
                    let scale = g[i].abs().max(1e-2 * (1.0 + e.eval(&w).unwrap().abs()));
                    prop_assert!((fd - g[i]).abs() <= 1e-5 * scale, "{} at {:?}: {} vs {}", src, w, g[i], fd);
                }
            }
        }
    }
}
