//! Recursive-descent parser for the infix expression language.
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := unary (('*' | '/') unary)*
//! unary  := '-' unary | power
//! power  := atom ('^' ['-'] integer)?
//! atom   := number | 'x' digits | 'w' '(' number ')' | func '(' expr ')' | '(' expr ')'
//! func   := exp | log | sin | cos | tanh | sqrt | step
//! ```

use super::ast::{Expr, Func};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
    End,
}

#[derive(Clone, Debug)]
struct Token {
    tok: Tok,
    line: usize,
    column: usize,
}

fn lex(src: &str) -> Result<Vec<Token>> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let (mut line, mut col) = (1usize, 1usize);
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c == '\n' {
            line += 1;
            col = 1;
            i += 1;
            continue;
        }
        if c.is_whitespace() {
            col += 1;
            i += 1;
            continue;
        }
        let start_col = col;
        if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    while j < chars.len() && chars[j].is_ascii_digit() {
                        j += 1;
                    }
                    i = j;
                }
            }
            let text: String = chars[start..i].iter().collect();
            let value = text.parse::<f64>().map_err(|_| Error::Parse {
                line,
                column: start_col,
                message: format!("malformed number '{text}'"),
            })?;
            col += i - start;
            out.push(Token { tok: Tok::Num(value), line, column: start_col });
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            col += i - start;
            out.push(Token { tok: Tok::Ident(chars[start..i].iter().collect()), line, column: start_col });
            continue;
        }
        if "+-*/^(),".contains(c) {
            out.push(Token { tok: Tok::Op(c), line, column: start_col });
            col += 1;
            i += 1;
            continue;
        }
        return Err(Error::Parse { line, column: col, message: format!("unexpected character '{c}'") });
    }
    out.push(Token { tok: Tok::End, line, column: col });
    Ok(out)
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Token {
        &self.toks[self.pos]
    }

    fn bump(&mut self) -> Token {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn err<T>(&self, tok: &Token, message: impl Into<String>) -> Result<T> {
        Err(Error::Parse { line: tok.line, column: tok.column, message: message.into() })
    }

    fn expect(&mut self, c: char) -> Result<()> {
        let t = self.bump();
        if t.tok == Tok::Op(c) {
            Ok(())
        } else {
            self.err(&t, format!("expected '{c}'"))
        }
    }

    /// Consume a binary operator, rejecting one with no right operand.
    fn operator(&mut self) -> Result<()> {
        let op = self.bump();
        if self.peek().tok == Tok::End {
            if let Tok::Op(c) = op.tok {
                return self.err(&op, format!("dangling operator '{c}'"));
            }
        }
        Ok(())
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            match self.peek().tok {
                Tok::Op('+') => {
                    self.operator()?;
                    lhs = Expr::Add(Box::new(lhs), Box::new(self.term()?));
                }
                Tok::Op('-') => {
                    self.operator()?;
                    lhs = Expr::Sub(Box::new(lhs), Box::new(self.term()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        loop {
            match self.peek().tok {
                Tok::Op('*') => {
                    self.operator()?;
                    lhs = Expr::Mul(Box::new(lhs), Box::new(self.unary()?));
                }
                Tok::Op('/') => {
                    self.operator()?;
                    lhs = Expr::Div(Box::new(lhs), Box::new(self.unary()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn unary(&mut self) -> Result<Expr> {
        if self.peek().tok == Tok::Op('-') {
            self.operator()?;
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.atom()?;
        if self.peek().tok != Tok::Op('^') {
            return Ok(base);
        }
        self.operator()?;
        let mut sign = 1i32;
        if self.peek().tok == Tok::Op('-') {
            self.bump();
            sign = -1;
        }
        let t = self.bump();
        match t.tok {
            Tok::Num(n) if n.fract() == 0.0 && n.abs() <= i32::MAX as f64 => {
                Ok(Expr::Pow(Box::new(base), sign * n as i32))
            }
            Tok::Num(_) => self.err(&t, "exponent must be an integer"),
            _ => self.err(&t, "expected integer exponent after '^'"),
        }
    }

    fn atom(&mut self) -> Result<Expr> {
        let t = self.bump();
        match &t.tok {
            Tok::Num(v) => Ok(Expr::Const(*v)),
            Tok::Op('(') => {
                let e = self.expr()?;
                self.expect(')')?;
                Ok(e)
            }
            Tok::Ident(name) => {
                if let Some(rest) = name.strip_prefix('x') {
                    if let Ok(k) = rest.parse::<usize>() {
                        if k == 0 {
                            return self.err(&t, "coordinates are numbered from x1");
                        }
                        return Ok(Expr::Var(k - 1));
                    }
                }
                if name == "w" {
                    self.expect('(')?;
                    let arg = self.bump();
                    let time = match arg.tok {
                        Tok::Num(v) => v,
                        _ => return self.err(&arg, "w( ) takes a numeric time in [0, 1]"),
                    };
                    if !(0.0..=1.0).contains(&time) {
                        return self.err(&arg, "path time must lie in [0, 1]");
                    }
                    self.expect(')')?;
                    return Ok(Expr::PathValue(time));
                }
                match Func::from_name(name) {
                    Some(f) => {
                        self.expect('(')?;
                        let e = self.expr()?;
                        self.expect(')')?;
                        Ok(Expr::Call(f, Box::new(e)))
                    }
                    None => self.err(&t, format!("unknown identifier '{name}'")),
                }
            }
            Tok::End => self.err(&t, "unexpected end of expression"),
            Tok::Op(c) => self.err(&t, format!("unexpected '{c}'")),
        }
    }
}

/// Parse an infix expression. Errors carry the 1-based line and column of the
/// offending token.
pub fn parse(src: &str) -> Result<Expr> {
    let mut p = Parser { toks: lex(src)?, pos: 0 };
    let e = p.expr()?;
    let t = p.peek().clone();
    if t.tok != Tok::End {
        return p.err(&t, "unexpected trailing input");
    }
    Ok(e)
}
