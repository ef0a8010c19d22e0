//! Scalar expressions for periodic coefficients, perturbation coefficients
//! and integral kernels.
//!
//! The grammar is small and fixed:
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := '-' unary | power
//! power   := primary ('^' unary)?
//! primary := number | 't' | 's' | 'pi' | func '(' expr ')' | '(' expr ')'
//! func    := sin | cos | exp | cosh | sinh | sech | abs | sqrt
//! ```
//!
//! `^` binds tighter than unary minus and is right-associative, so `-t^2` is
//! `-(t^2)` and `2^3^2` is `2^(3^2)`. There is no implicit multiplication.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("syntax error at byte {position}: {message}")]
    Syntax { position: usize, message: String },
    #[error("unknown identifier `{name}` at byte {position}")]
    UnknownIdentifier { name: String, position: usize },
}

impl ParseError {
    pub fn position(&self) -> usize {
        match self {
            ParseError::Syntax { position, .. } | ParseError::UnknownIdentifier { position, .. } => {
                *position
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("variable `{0}` is not bound")]
    UnboundVariable(&'static str),
    #[error("domain error: {0}")]
    Domain(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Var {
    T,
    S,
}

impl Var {
    pub fn name(self) -> &'static str {
        match self {
            Var::T => "t",
            Var::S => "s",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Cosh,
    Sinh,
    Sech,
    Abs,
    Sqrt,
}

impl Func {
    pub const ALL: [Func; 8] = [
        Func::Sin,
        Func::Cos,
        Func::Exp,
        Func::Cosh,
        Func::Sinh,
        Func::Sech,
        Func::Abs,
        Func::Sqrt,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Cosh => "cosh",
            Func::Sinh => "sinh",
            Func::Sech => "sech",
            Func::Abs => "abs",
            Func::Sqrt => "sqrt",
        }
    }

    fn from_name(name: &str) -> Option<Func> {
        Func::ALL.into_iter().find(|f| f.name() == name)
    }

    fn apply(self, x: f64) -> Result<f64, EvalError> {
        Ok(match self {
            Func::Sin => x.sin(),
            Func::Cos => x.cos(),
            Func::Exp => x.exp(),
            Func::Cosh => x.cosh(),
            Func::Sinh => x.sinh(),
            Func::Sech => 1.0 / x.cosh(),
            Func::Abs => x.abs(),
            Func::Sqrt => {
                if x < 0.0 {
                    return Err(EvalError::Domain(format!("sqrt of negative value {x}")));
                }
                x.sqrt()
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinOp {
    fn symbol(self) -> char {
        match self {
            BinOp::Add => '+',
            BinOp::Sub => '-',
            BinOp::Mul => '*',
            BinOp::Div => '/',
            BinOp::Pow => '^',
        }
    }
}

/// Expression tree. Trees are immutable once built and cheap to share.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(Var),
    Pi,
    Neg(Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

impl Expr {
    pub fn parse(src: &str) -> Result<Expr, ParseError> {
        let tokens = lex(src)?;
        if tokens.is_empty() {
            return Err(ParseError::Syntax {
                position: 0,
                message: "empty expression".into(),
            });
        }
        let mut parser = Parser {
            tokens: &tokens,
            pos: 0,
            end: src.len(),
        };
        let expr = parser.expr()?;
        if let Some(tok) = parser.peek() {
            return Err(ParseError::Syntax {
                position: tok.pos,
                message: format!("unexpected {}", tok.kind.describe()),
            });
        }
        Ok(expr)
    }

    pub fn zero() -> Expr {
        Expr::Num(0.0)
    }

    /// Evaluates with `t` bound and `s` optionally bound.
    pub fn eval(&self, t: f64, s: Option<f64>) -> Result<f64, EvalError> {
        match self {
            Expr::Num(v) => Ok(*v),
            Expr::Pi => Ok(std::f64::consts::PI),
            Expr::Var(Var::T) => Ok(t),
            Expr::Var(Var::S) => s.ok_or(EvalError::UnboundVariable("s")),
            Expr::Neg(e) => Ok(-e.eval(t, s)?),
            Expr::Call(f, e) => {
                let x = e.eval(t, s)?;
                check_finite(f.apply(x)?, x.is_finite(), f.name())
            }
            Expr::Binary(op, a, b) => {
                let x = a.eval(t, s)?;
                let y = b.eval(t, s)?;
                let value = match op {
                    BinOp::Add => x + y,
                    BinOp::Sub => x - y,
                    BinOp::Mul => x * y,
                    BinOp::Div => {
                        if y == 0.0 {
                            return Err(EvalError::Domain("division by zero".into()));
                        }
                        x / y
                    }
                    BinOp::Pow => {
                        if x < 0.0 && y.fract() != 0.0 {
                            return Err(EvalError::Domain(format!(
                                "negative base {x} raised to non-integer power {y}"
                            )));
                        }
                        if x == 0.0 && y < 0.0 {
                            return Err(EvalError::Domain("zero raised to negative power".into()));
                        }
                        x.powf(y)
                    }
                };
                check_finite(value, x.is_finite() && y.is_finite(), "arithmetic")
            }
        }
    }

    /// Evaluation of an expression that must not depend on `s`.
    pub fn eval_t(&self, t: f64) -> Result<f64, EvalError> {
        self.eval(t, None)
    }

    pub fn mentions(&self, var: Var) -> bool {
        match self {
            Expr::Var(v) => *v == var,
            Expr::Num(_) | Expr::Pi => false,
            Expr::Neg(e) | Expr::Call(_, e) => e.mentions(var),
            Expr::Binary(_, a, b) => a.mentions(var) || b.mentions(var),
        }
    }

    pub fn free_vars(&self) -> Vec<Var> {
        [Var::T, Var::S]
            .into_iter()
            .filter(|v| self.mentions(*v))
            .collect()
    }

    /// True for the literal `0` (possibly negated), which lets callers skip
    /// work for absent coefficients without sampling.
    pub fn is_literal_zero(&self) -> bool {
        match self {
            Expr::Num(v) => *v == 0.0,
            Expr::Neg(e) => e.is_literal_zero(),
            _ => false,
        }
    }

    /// Value of a variable-free expression.
    pub fn constant_value(&self) -> Option<f64> {
        if self.mentions(Var::T) || self.mentions(Var::S) {
            return None;
        }
        self.eval(0.0, None).ok()
    }
}

fn check_finite(value: f64, inputs_finite: bool, what: &str) -> Result<f64, EvalError> {
    if !value.is_finite() && inputs_finite {
        return Err(EvalError::Domain(format!("{what} produced a non-finite value")));
    }
    Ok(value)
}

impl FromStr for Expr {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Expr::parse(s)
    }
}

/// Fully parenthesized rendering; `Expr::parse` on the output rebuilds an
/// identical tree.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) => write!(f, "{v:?}"),
            Expr::Pi => f.write_str("pi"),
            Expr::Var(v) => f.write_str(v.name()),
            Expr::Neg(e) => write!(f, "(-{e})"),
            Expr::Call(func, e) => write!(f, "{}({e})", func.name()),
            Expr::Binary(op, a, b) => write!(f, "({a} {} {b})", op.symbol()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum TokenKind {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
}

impl TokenKind {
    fn describe(&self) -> String {
        match self {
            TokenKind::Num(v) => format!("number {v}"),
            TokenKind::Ident(name) => format!("identifier `{name}`"),
            TokenKind::Op(c) => format!("operator `{c}`"),
            TokenKind::LParen => "`(`".into(),
            TokenKind::RParen => "`)`".into(),
        }
    }
}

#[derive(Debug, Clone)]
struct Token {
    kind: TokenKind,
    pos: usize,
}

fn lex(src: &str) -> Result<Vec<Token>, ParseError> {
    let bytes = src.as_bytes();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        match c {
            b' ' | b'\t' | b'\n' | b'\r' => i += 1,
            b'0'..=b'9' | b'.' => {
                let start = i;
                while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                    i += 1;
                }
                if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                        j += 1;
                    }
                    if j < bytes.len() && bytes[j].is_ascii_digit() {
                        while j < bytes.len() && bytes[j].is_ascii_digit() {
                            j += 1;
                        }
                        i = j;
                    }
                }
                let text = &src[start..i];
                let value: f64 = text.parse().map_err(|_| ParseError::Syntax {
                    position: start,
                    message: format!("malformed number `{text}`"),
                })?;
                tokens.push(Token {
                    kind: TokenKind::Num(value),
                    pos: start,
                });
            }
            b'a'..=b'z' | b'A'..=b'Z' | b'_' => {
                let start = i;
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                tokens.push(Token {
                    kind: TokenKind::Ident(src[start..i].to_string()),
                    pos: start,
                });
            }
            b'+' | b'-' | b'*' | b'/' | b'^' => {
                tokens.push(Token {
                    kind: TokenKind::Op(c as char),
                    pos: i,
                });
                i += 1;
            }
            b'(' => {
                tokens.push(Token {
                    kind: TokenKind::LParen,
                    pos: i,
                });
                i += 1;
            }
            b')' => {
                tokens.push(Token {
                    kind: TokenKind::RParen,
                    pos: i,
                });
                i += 1;
            }
            _ => {
                let ch = src[i..].chars().next().unwrap_or('?');
                return Err(ParseError::Syntax {
                    position: i,
                    message: format!("unexpected character `{ch}`"),
                });
            }
        }
    }
    Ok(tokens)
}

struct Parser<'a> {
    tokens: &'a [Token],
    pos: usize,
    end: usize,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&'a Token> {
        self.tokens.get(self.pos)
    }

    fn next(&mut self) -> Option<&'a Token> {
        let tok = self.tokens.get(self.pos);
        self.pos += 1;
        tok
    }

    fn eat_op(&mut self, op: char) -> bool {
        if matches!(self.peek(), Some(Token { kind: TokenKind::Op(c), .. }) if *c == op) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn here(&self) -> usize {
        self.peek().map_or(self.end, |t| t.pos)
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = if self.eat_op('+') {
                BinOp::Add
            } else if self.eat_op('-') {
                BinOp::Sub
            } else {
                return Ok(lhs);
            };
            let rhs = self.term()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = if self.eat_op('*') {
                BinOp::Mul
            } else if self.eat_op('/') {
                BinOp::Div
            } else {
                return Ok(lhs);
            };
            let rhs = self.unary()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.eat_op('-') {
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.primary()?;
        if self.eat_op('^') {
            let exponent = self.unary()?;
            return Ok(Expr::Binary(BinOp::Pow, Box::new(base), Box::new(exponent)));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        let position = self.here();
        let Some(tok) = self.next() else {
            return Err(ParseError::Syntax {
                position,
                message: "unexpected end of input".into(),
            });
        };
        match &tok.kind {
            TokenKind::Num(v) => Ok(Expr::Num(*v)),
            TokenKind::LParen => {
                let inner = self.expr()?;
                self.expect_rparen(tok.pos)?;
                Ok(inner)
            }
            TokenKind::Ident(name) => {
                let is_call = matches!(self.peek(), Some(Token { kind: TokenKind::LParen, .. }));
                if is_call {
                    let func = Func::from_name(name).ok_or_else(|| ParseError::UnknownIdentifier {
                        name: name.clone(),
                        position: tok.pos,
                    })?;
                    let open = self.next().map_or(self.end, |t| t.pos);
                    let arg = self.expr()?;
                    self.expect_rparen(open)?;
                    return Ok(Expr::Call(func, Box::new(arg)));
                }
                match name.as_str() {
                    "t" => Ok(Expr::Var(Var::T)),
                    "s" => Ok(Expr::Var(Var::S)),
                    "pi" => Ok(Expr::Pi),
                    other if Func::from_name(other).is_some() => Err(ParseError::Syntax {
                        position: tok.pos,
                        message: format!("function `{other}` must be followed by `(`"),
                    }),
                    other => Err(ParseError::UnknownIdentifier {
                        name: other.to_string(),
                        position: tok.pos,
                    }),
                }
            }
            kind => Err(ParseError::Syntax {
                position: tok.pos,
                message: format!("unexpected {}", kind.describe()),
            }),
        }
    }

    fn expect_rparen(&mut self, open: usize) -> Result<(), ParseError> {
        match self.peek() {
            Some(Token { kind: TokenKind::RParen, .. }) => {
                self.pos += 1;
                Ok(())
            }
            Some(tok) => Err(ParseError::Syntax {
                position: tok.pos,
                message: format!("expected `)` to close `(` at byte {open}, found {}", tok.kind.describe()),
            }),
            None => Err(ParseError::Syntax {
                position: self.end,
                message: format!("unclosed `(` at byte {open}"),
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn num(v: f64) -> Box<Expr> {
        Box::new(Expr::Num(v))
    }

    fn t() -> Box<Expr> {
        Box::new(Expr::Var(Var::T))
    }

    #[test]
    fn parses_zero_literal() {
        assert_eq!(Expr::parse("0").unwrap(), Expr::Num(0.0));
    }

    #[test]
    fn parses_cosine_of_scaled_t() {
        let expected = Expr::Call(
            Func::Cos,
            Box::new(Expr::Binary(
                BinOp::Mul,
                Box::new(Expr::Binary(BinOp::Mul, num(2.0), Box::new(Expr::Pi))),
                t(),
            )),
        );
        assert_eq!(Expr::parse("cos(2*pi*t)").unwrap(), expected);
    }

    #[test]
    fn parses_negative_power() {
        let expected = Expr::Binary(
            BinOp::Pow,
            Box::new(Expr::Binary(BinOp::Add, num(1.0), t())),
            Box::new(Expr::Neg(num(3.0))),
        );
        assert_eq!(Expr::parse("(1+t)^(-3)").unwrap(), expected);
    }

    #[test]
    fn power_binds_tighter_than_unary_minus() {
        let e = Expr::parse("-t^2").unwrap();
        assert_eq!(e, Expr::Neg(Box::new(Expr::Binary(BinOp::Pow, t(), num(2.0)))));
        assert_eq!(e.eval(3.0, None).unwrap(), -9.0);
    }

    #[test]
    fn power_is_right_associative() {
        let e = Expr::parse("2^3^2").unwrap();
        assert_eq!(e.eval(0.0, None).unwrap(), 512.0);
    }

    #[test]
    fn evaluates_examples() {
        assert_eq!(Expr::parse("cos(2*pi*t)").unwrap().eval(0.0, None).unwrap(), 1.0);
        assert_eq!(Expr::parse("t^2").unwrap().eval(3.0, None).unwrap(), 9.0);
        let k = Expr::parse("exp(-s)*(1+t)^(-3)").unwrap();
        assert_eq!(k.eval(1.0, Some(0.0)).unwrap(), 0.125);
    }

    #[test]
    fn implicit_multiplication_is_rejected() {
        let err = Expr::parse("2t").unwrap_err();
        assert!(matches!(err, ParseError::Syntax { position: 1, .. }), "{err:?}");
    }

    #[test]
    fn unknown_names_are_reported_with_position() {
        let err = Expr::parse("1 + tan(t)").unwrap_err();
        assert_eq!(
            err,
            ParseError::UnknownIdentifier {
                name: "tan".into(),
                position: 4
            }
        );
        let err = Expr::parse("x*2").unwrap_err();
        assert!(matches!(err, ParseError::UnknownIdentifier { position: 0, .. }));
    }

    #[test]
    fn syntax_errors_carry_positions() {
        assert!(matches!(Expr::parse("").unwrap_err(), ParseError::Syntax { position: 0, .. }));
        assert!(matches!(Expr::parse("(1+t").unwrap_err(), ParseError::Syntax { position: 4, .. }));
        assert!(matches!(Expr::parse("1 +").unwrap_err(), ParseError::Syntax { position: 3, .. }));
        assert!(matches!(Expr::parse("1 $ 2").unwrap_err(), ParseError::Syntax { position: 2, .. }));
        assert!(matches!(Expr::parse("sin t").unwrap_err(), ParseError::Syntax { position: 0, .. }));
        assert!(matches!(Expr::parse("1..2").unwrap_err(), ParseError::Syntax { position: 0, .. }));
    }

    #[test]
    fn scientific_literals() {
        assert_eq!(Expr::parse("1e-7").unwrap(), Expr::Num(1e-7));
        assert_eq!(Expr::parse("2.5E3").unwrap(), Expr::Num(2500.0));
        assert_eq!(Expr::parse(".5").unwrap(), Expr::Num(0.5));
    }

    #[test]
    fn domain_errors() {
        let div = Expr::parse("1/t").unwrap();
        assert!(matches!(div.eval(0.0, None), Err(EvalError::Domain(_))));
        let root = Expr::parse("sqrt(t)").unwrap();
        assert!(matches!(root.eval(-1.0, None), Err(EvalError::Domain(_))));
        let frac = Expr::parse("t^0.5").unwrap();
        assert!(matches!(frac.eval(-4.0, None), Err(EvalError::Domain(_))));
        let pole = Expr::parse("t^(-1)").unwrap();
        assert!(matches!(pole.eval(0.0, None), Err(EvalError::Domain(_))));
        assert_eq!(Expr::parse("t^3").unwrap().eval(-2.0, None).unwrap(), -8.0);
    }

    #[test]
    fn unbound_s_is_reported() {
        let k = Expr::parse("exp(-(s-t))").unwrap();
        assert_eq!(k.eval(1.0, None), Err(EvalError::UnboundVariable("s")));
        assert_eq!(k.free_vars(), vec![Var::T, Var::S]);
    }

    #[test]
    fn sech_and_friends() {
        let e = Expr::parse("sech(t)^2 + sinh(t) - cosh(t) + abs(-t)").unwrap();
        let x: f64 = 0.7;
        let expected = (1.0 / x.cosh()).powi(2) + x.sinh() - x.cosh() + x;
        assert!((e.eval(x, None).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn literal_zero_detection() {
        assert!(Expr::parse("0").unwrap().is_literal_zero());
        assert!(Expr::parse("-0.0").unwrap().is_literal_zero());
        assert!(!Expr::parse("0*t").unwrap().is_literal_zero());
        assert_eq!(Expr::parse("2*pi").unwrap().constant_value(), Some(2.0 * std::f64::consts::PI));
    }
}
