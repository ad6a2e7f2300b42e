//! Arithmetic expressions over `rho` and `drho` for custom error families.
//!
//! Grammar: `+ - * / ^`, parentheses, unary minus, numeric literals and the
//! terminals `rho` (density) and `drho` (its spatial derivative). `^` is right
//! associative and binds tighter than unary minus on its left operand.

use std::fmt;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Const(f64),
    Rho,
    DRho,
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, Box<Expr>),
}

/// Value together with its partials in `rho` and `drho`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dual {
    pub value: f64,
    pub d_rho: f64,
    pub d_drho: f64,
}

impl Dual {
    fn constant(value: f64) -> Self {
        Self {
            value,
            d_rho: 0.0,
            d_drho: 0.0,
        }
    }

    fn is_constant(&self) -> bool {
        self.d_rho == 0.0 && self.d_drho == 0.0
    }

    fn scale(self, a: f64) -> (f64, f64) {
        (a * self.d_rho, a * self.d_drho)
    }
}

impl Expr {
    pub fn parse(src: &str) -> Result<Expr> {
        let tokens = tokenize(src)?;
        let mut p = Parser { tokens, pos: 0 };
        let e = p.expr()?;
        if p.pos != p.tokens.len() {
            return Err(Error::Expression(format!(
                "unexpected trailing input at token {} in '{src}'",
                p.pos
            )));
        }
        Ok(e)
    }

    pub fn eval(&self, rho: f64, drho: f64) -> f64 {
        match self {
            Expr::Const(c) => *c,
            Expr::Rho => rho,
            Expr::DRho => drho,
            Expr::Neg(a) => -a.eval(rho, drho),
            Expr::Add(a, b) => a.eval(rho, drho) + b.eval(rho, drho),
            Expr::Sub(a, b) => a.eval(rho, drho) - b.eval(rho, drho),
            Expr::Mul(a, b) => a.eval(rho, drho) * b.eval(rho, drho),
            Expr::Div(a, b) => a.eval(rho, drho) / b.eval(rho, drho),
            Expr::Pow(a, b) => power(a.eval(rho, drho), b.eval(rho, drho)),
        }
    }

    /// Forward-mode evaluation of value and both partials.
    pub fn eval_dual(&self, rho: f64, drho: f64) -> Dual {
        match self {
            Expr::Const(c) => Dual::constant(*c),
            Expr::Rho => Dual {
                value: rho,
                d_rho: 1.0,
                d_drho: 0.0,
            },
            Expr::DRho => Dual {
                value: drho,
                d_rho: 0.0,
                d_drho: 1.0,
            },
            Expr::Neg(a) => {
                let a = a.eval_dual(rho, drho);
                Dual {
                    value: -a.value,
                    d_rho: -a.d_rho,
                    d_drho: -a.d_drho,
                }
            }
            Expr::Add(a, b) | Expr::Sub(a, b) => {
                let sign = if matches!(self, Expr::Add(..)) { 1.0 } else { -1.0 };
                let (a, b) = (a.eval_dual(rho, drho), b.eval_dual(rho, drho));
                Dual {
                    value: a.value + sign * b.value,
                    d_rho: a.d_rho + sign * b.d_rho,
                    d_drho: a.d_drho + sign * b.d_drho,
                }
            }
            Expr::Mul(a, b) => {
                let (a, b) = (a.eval_dual(rho, drho), b.eval_dual(rho, drho));
                Dual {
                    value: a.value * b.value,
                    d_rho: a.d_rho * b.value + a.value * b.d_rho,
                    d_drho: a.d_drho * b.value + a.value * b.d_drho,
                }
            }
            Expr::Div(a, b) => {
                let (a, b) = (a.eval_dual(rho, drho), b.eval_dual(rho, drho));
                let v = a.value / b.value;
                Dual {
                    value: v,
                    d_rho: (a.d_rho - v * b.d_rho) / b.value,
                    d_drho: (a.d_drho - v * b.d_drho) / b.value,
                }
            }
            Expr::Pow(a, b) => {
                let (a, b) = (a.eval_dual(rho, drho), b.eval_dual(rho, drho));
                let v = power(a.value, b.value);
                if b.is_constant() {
                    let slope = if b.value == 0.0 {
                        0.0
                    } else {
                        b.value * power(a.value, b.value - 1.0)
                    };
                    let (dr, dg) = a.scale(slope);
                    Dual {
                        value: v,
                        d_rho: dr,
                        d_drho: dg,
                    }
                } else {
                    // a^b = exp(b ln a); only defined for a > 0
                    let ln_a = a.value.ln();
                    Dual {
                        value: v,
                        d_rho: v * (b.d_rho * ln_a + b.value * a.d_rho / a.value),
                        d_drho: v * (b.d_drho * ln_a + b.value * a.d_drho / a.value),
                    }
                }
            }
        }
    }

    pub fn depends_on_rho(&self) -> bool {
        self.any(&|e| matches!(e, Expr::Rho))
    }

    pub fn depends_on_drho(&self) -> bool {
        self.any(&|e| matches!(e, Expr::DRho))
    }

    fn any(&self, pred: &dyn Fn(&Expr) -> bool) -> bool {
        if pred(self) {
            return true;
        }
        match self {
            Expr::Const(_) | Expr::Rho | Expr::DRho => false,
            Expr::Neg(a) => a.any(pred),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) | Expr::Pow(a, b) => {
                a.any(pred) || b.any(pred)
            }
        }
    }
}

/// Real power; integer exponents are taken exactly, others need a positive
/// base and yield NaN otherwise.
fn power(a: f64, b: f64) -> f64 {
    if b.fract() == 0.0 && b.abs() < i32::MAX as f64 {
        a.powi(b as i32)
    } else if a > 0.0 {
        a.powf(b)
    } else if a == 0.0 && b > 0.0 {
        0.0
    } else {
        f64::NAN
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) => write!(f, "{c}"),
            Expr::Rho => write!(f, "rho"),
            Expr::DRho => write!(f, "drho"),
            Expr::Neg(a) => write!(f, "(-{a})"),
            Expr::Add(a, b) => write!(f, "({a} + {b})"),
            Expr::Sub(a, b) => write!(f, "({a} - {b})"),
            Expr::Mul(a, b) => write!(f, "({a} * {b})"),
            Expr::Div(a, b) => write!(f, "({a} / {b})"),
            Expr::Pow(a, b) => write!(f, "({a} ^ {b})"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Token {
    Num(f64),
    Ident(String),
    Op(char),
}

fn tokenize(src: &str) -> Result<Vec<Token>> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            // exponent part, e.g. 1e-3
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    i = j;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let text: String = chars[start..i].iter().collect();
            let v = text
                .parse::<f64>()
                .map_err(|_| Error::Expression(format!("bad number '{text}'")))?;
            out.push(Token::Num(v));
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(Token::Ident(chars[start..i].iter().collect()));
        } else if "+-*/^()".contains(c) {
            out.push(Token::Op(c));
            i += 1;
        } else {
            return Err(Error::Expression(format!("unexpected character '{c}'")));
        }
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek_op(&self) -> Option<char> {
        match self.tokens.get(self.pos) {
            Some(Token::Op(c)) => Some(*c),
            _ => None,
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        while let Some(op @ ('+' | '-')) = self.peek_op() {
            self.pos += 1;
            let rhs = self.term()?;
            lhs = if op == '+' {
                Expr::Add(Box::new(lhs), Box::new(rhs))
            } else {
                Expr::Sub(Box::new(lhs), Box::new(rhs))
            };
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        while let Some(op @ ('*' | '/')) = self.peek_op() {
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = if op == '*' {
                Expr::Mul(Box::new(lhs), Box::new(rhs))
            } else {
                Expr::Div(Box::new(lhs), Box::new(rhs))
            };
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr> {
        if self.peek_op() == Some('-') {
            self.pos += 1;
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        if self.peek_op() == Some('+') {
            self.pos += 1;
            return self.unary();
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.atom()?;
        if self.peek_op() == Some('^') {
            self.pos += 1;
            let exponent = self.unary()?;
            return Ok(Expr::Pow(Box::new(base), Box::new(exponent)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr> {
        let tok = self
            .tokens
            .get(self.pos)
            .cloned()
            .ok_or_else(|| Error::Expression("unexpected end of expression".into()))?;
        self.pos += 1;
        match tok {
            Token::Num(v) => Ok(Expr::Const(v)),
            Token::Ident(name) => match name.as_str() {
                "rho" => Ok(Expr::Rho),
                "drho" => Ok(Expr::DRho),
                "S" | "s" | "ds" => Err(Error::Expression(
                    "error families may not depend on the phase S".into(),
                )),
                other => Err(Error::Expression(format!(
                    "unknown symbol '{other}' (allowed: rho, drho)"
                ))),
            },
            Token::Op('(') => {
                let e = self.expr()?;
                if self.peek_op() != Some(')') {
                    return Err(Error::Expression("missing ')'".into()));
                }
                self.pos += 1;
                Ok(e)
            }
            Token::Op(c) => Err(Error::Expression(format!("unexpected '{c}'"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence_and_associativity() {
        let e = Expr::parse("1 + 2 * 3 ^ 2 ^ 0.5").unwrap();
        assert!((e.eval(0.0, 0.0) - (1.0 + 2.0 * 3f64.powf(2f64.sqrt()))).abs() < 1e-12);
        let e = Expr::parse("-2^2").unwrap();
        assert_eq!(e.eval(0.0, 0.0), -4.0);
        let e = Expr::parse("8 / 4 / 2 - 1 - 1").unwrap();
        assert_eq!(e.eval(0.0, 0.0), -1.0);
        let e = Expr::parse("2.5e-1 * rho").unwrap();
        assert_eq!(e.eval(4.0, 0.0), 1.0);
    }

    #[test]
    fn rejects_phase_and_garbage() {
        assert!(Expr::parse("S * rho").is_err());
        assert!(Expr::parse("rho +").is_err());
        assert!(Expr::parse("(rho").is_err());
        assert!(Expr::parse("rho $ 2").is_err());
        assert!(Expr::parse("sin(rho)").is_err());
    }

    #[test]
    fn dual_partials_match_finite_differences() {
        let exprs = [
            "0.3 * (drho / rho)^3 - rho^0.5",
            "rho * drho / (1 + rho^2)",
            "(2 + rho)^(drho)",
            "-(drho/rho)^2 + 4",
        ];
        let (r, g) = (0.37, -0.21);
        let h = 1e-6;
        for src in exprs {
            let e = Expr::parse(src).unwrap();
            let d = e.eval_dual(r, g);
            assert!((d.value - e.eval(r, g)).abs() < 1e-14);
            let fr = (e.eval(r + h, g) - e.eval(r - h, g)) / (2.0 * h);
            let fg = (e.eval(r, g + h) - e.eval(r, g - h)) / (2.0 * h);
            assert!((d.d_rho - fr).abs() < 1e-7 * (1.0 + fr.abs()), "{src}: {} vs {fr}", d.d_rho);
            assert!((d.d_drho - fg).abs() < 1e-7 * (1.0 + fg.abs()), "{src}: {} vs {fg}", d.d_drho);
        }
    }

    #[test]
    fn fractional_power_of_negative_base_is_nan() {
        let e = Expr::parse("drho ^ 0.5").unwrap();
        assert!(e.eval(1.0, -1.0).is_nan());
        assert_eq!(e.eval(1.0, 4.0), 2.0);
    }

    #[test]
    fn dependency_queries() {
        let e = Expr::parse("(drho/rho)^3").unwrap();
        assert!(e.depends_on_rho() && e.depends_on_drho());
        let e = Expr::parse("rho^2").unwrap();
        assert!(e.depends_on_rho() && !e.depends_on_drho());
    }
}
