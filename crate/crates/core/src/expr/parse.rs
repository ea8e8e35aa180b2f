//! Recursive-descent parser for the infix grammar:
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := factor (('*' | '/') factor)*
//! factor  := '-' factor | power
//! power   := primary ('^' '-'? integer)?
//! primary := number | name | func '(' expr ')' | '(' expr ')'
//! func    := exp | sin | cos | recip
//! name    := c | t | u<k> | x<k>
//! ```
//!
//! `c`, `t`, `u0` and `x0` all denote variable 0; `u<k>` and `x<k>` denote
//! variable `k`. `a/b` becomes `a * recip(b)`, `b^k` becomes a left-leaning
//! product of `k` copies of `b` (wrapped in `recip` for negative `k`), and
//! `-x` becomes `-1 * x` unless `x` is a literal.

use super::{ExprError, ExprNode, Expression, UnaryOp};

pub fn parse(text: &str) -> Result<Expression, ExprError> {
    let mut p = Parser { src: text.as_bytes(), pos: 0 };
    let node = p.expr()?;
    p.skip_ws();
    if p.pos != p.src.len() {
        return Err(p.error("unexpected trailing input"));
    }
    Ok(Expression::new(node))
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn error(&self, msg: &str) -> ExprError {
        ExprError::Parse { pos: self.pos, msg: msg.to_string() }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn eat(&mut self, b: u8) -> bool {
        if self.peek() == Some(b) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expr(&mut self) -> Result<ExprNode, ExprError> {
        let mut node = self.term()?;
        loop {
            if self.eat(b'+') {
                node = ExprNode::add(node, self.term()?);
            } else if self.eat(b'-') {
                node = ExprNode::sub(node, self.term()?);
            } else {
                return Ok(node);
            }
        }
    }

    fn term(&mut self) -> Result<ExprNode, ExprError> {
        let mut node = self.factor()?;
        loop {
            if self.eat(b'*') {
                node = ExprNode::mul(node, self.factor()?);
            } else if self.eat(b'/') {
                node = ExprNode::mul(node, ExprNode::recip(self.factor()?));
            } else {
                return Ok(node);
            }
        }
    }

    fn factor(&mut self) -> Result<ExprNode, ExprError> {
        if self.eat(b'-') {
            return Ok(match self.factor()? {
                ExprNode::Constant(v) => ExprNode::Constant(-v),
                other => ExprNode::mul(ExprNode::Constant(-1.0), other),
            });
        }
        self.power()
    }

    fn power(&mut self) -> Result<ExprNode, ExprError> {
        let base = self.primary()?;
        if !self.eat(b'^') {
            return Ok(base);
        }
        let negative = self.eat(b'-');
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.error("expected an integer exponent"));
        }
        let k: u32 = std::str::from_utf8(&self.src[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .filter(|k| (1..=64).contains(k))
            .ok_or_else(|| ExprError::Parse {
                pos: start,
                msg: "exponent must be an integer between 1 and 64".into(),
            })?;
        let mut node = base.clone();
        for _ in 1..k {
            node = ExprNode::mul(node, base.clone());
        }
        Ok(if negative { ExprNode::recip(node) } else { node })
    }

    fn primary(&mut self) -> Result<ExprNode, ExprError> {
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let node = self.expr()?;
                if !self.eat(b')') {
                    return Err(self.error("expected ')'"));
                }
                Ok(node)
            }
            Some(b) if b.is_ascii_digit() || b == b'.' => self.number(),
            Some(b) if b.is_ascii_alphabetic() => self.name(),
            Some(_) => Err(self.error("unexpected character")),
            None => Err(self.error("unexpected end of input")),
        }
    }

    fn number(&mut self) -> Result<ExprNode, ExprError> {
        let start = self.pos;
        let bytes = self.src;
        let mut i = self.pos;
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
        self.pos = i;
        std::str::from_utf8(&bytes[start..i])
            .ok()
            .and_then(|s| s.parse::<f64>().ok())
            .map(ExprNode::Constant)
            .ok_or(ExprError::Parse { pos: start, msg: "malformed number".into() })
    }

    fn name(&mut self) -> Result<ExprNode, ExprError> {
        let start = self.pos;
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_alphanumeric() {
            self.pos += 1;
        }
        let word = std::str::from_utf8(&self.src[start..self.pos]).unwrap_or_default();
        let func = match word {
            "exp" => Some(UnaryOp::Exp),
            "sin" => Some(UnaryOp::Sin),
            "cos" => Some(UnaryOp::Cos),
            "recip" => Some(UnaryOp::Recip),
            _ => None,
        };
        if let Some(op) = func {
            if !self.eat(b'(') {
                return Err(self.error("expected '(' after function name"));
            }
            let arg = self.expr()?;
            if !self.eat(b')') {
                return Err(self.error("expected ')'"));
            }
            return Ok(ExprNode::unary(op, arg));
        }
        match word {
            "c" | "t" => Ok(ExprNode::Variable(0)),
            "inf" => Ok(ExprNode::Constant(f64::INFINITY)),
            "nan" => Ok(ExprNode::Constant(f64::NAN)),
            _ => {
                let index = word
                    .strip_prefix('u')
                    .or_else(|| word.strip_prefix('x'))
                    .and_then(|d| d.parse::<usize>().ok());
                index.map(ExprNode::Variable).ok_or(ExprError::Parse {
                    pos: start,
                    msg: format!("unknown identifier '{word}'"),
                })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{tests::fisher, VarNames};

    #[test]
    fn fisher_formats_canonically() {
        assert_eq!(fisher().to_string(), "c*(1 - c)");
    }

    #[test]
    fn table_polynomial_vanishes_at_one() {
        let e = parse("-0.64*c^3 + 0.64*c").unwrap();
        assert_eq!(e.eval(&[1.0]).unwrap(), 0.0);
        assert_eq!(e.to_string(), "-0.64*c^3 + 0.64*c");
    }

    #[test]
    fn division_and_powers() {
        let e = parse("1/(c + 1) - c^-2").unwrap();
        let v = e.eval(&[2.0]).unwrap();
        assert!((v - (1.0 / 3.0 - 0.25)).abs() < 1e-15);
        let e = parse("2.5e-1*exp(c - 1)").unwrap();
        assert!((e.eval(&[1.0]).unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn state_variables() {
        let e = parse("u1*u3 + sin(t)").unwrap();
        assert_eq!(e.arity(), 4);
        let v = e.eval(&[0.0, 2.0, 9.0, 3.0]).unwrap();
        assert_eq!(v, 6.0);
        assert_eq!(e.format_with(&VarNames::TimeState), "u1*u3 + sin(t)");
    }

    #[test]
    fn unary_minus_binds_below_power() {
        let e = parse("-c^2").unwrap();
        assert_eq!(e.eval(&[3.0]).unwrap(), -9.0);
        let e = parse("c*-2 - -1").unwrap();
        assert_eq!(e.eval(&[3.0]).unwrap(), -5.0);
    }

    #[test]
    fn syntax_errors_carry_position() {
        match parse("c + * 2") {
            Err(ExprError::Parse { pos, .. }) => assert_eq!(pos, 4),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse("exp c"), Err(ExprError::Parse { .. })));
        assert!(matches!(parse("(c"), Err(ExprError::Parse { .. })));
        assert!(matches!(parse("c^0.5"), Err(ExprError::Parse { .. })));
        assert!(matches!(parse("q"), Err(ExprError::Parse { .. })));
        assert!(matches!(parse("c c"), Err(ExprError::Parse { .. })));
    }
}
