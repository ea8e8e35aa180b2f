//! Infix printer. Output parses back (see `parse.rs`) to a tree that
//! evaluates bit-identically: operand grouping is always kept explicit, so
//! `a*(b*c)` is never flattened.

use super::{BinaryOp, ExprNode, UnaryOp};

/// How variable indices are spelled.
#[derive(Debug, Clone, PartialEq)]
pub enum VarNames {
    /// `c` for index 0 (single-variable reaction terms).
    Concentration,
    /// `t` for index 0 and `u1..uK` for the state components.
    TimeState,
    Custom(Vec<String>),
}

impl VarNames {
    fn name(&self, i: usize) -> String {
        match self {
            VarNames::Concentration if i == 0 => "c".to_string(),
            VarNames::Concentration => format!("x{i}"),
            VarNames::TimeState if i == 0 => "t".to_string(),
            VarNames::TimeState => format!("u{i}"),
            VarNames::Custom(names) => names.get(i).cloned().unwrap_or_else(|| format!("x{i}")),
        }
    }
}

// Precedence levels.
const SUM: u8 = 1;
const PRODUCT: u8 = 2;
const ATOM: u8 = 4;

pub(super) fn format(node: &ExprNode, names: &VarNames) -> String {
    let mut out = String::new();
    write_node(node, names, &mut out);
    out
}

pub(super) fn format_constant(v: f64) -> String {
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let a = v.abs();
    if v == 0.0 || (1e-5..1e16).contains(&a) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

/// If `node` is a left-leaning product of one variable with itself, returns
/// the variable and the power.
fn power_of(node: &ExprNode) -> Option<(usize, u32)> {
    match node {
        ExprNode::Binary(BinaryOp::Mul, l, r) => {
            let ExprNode::Variable(j) = **r else {
                return None;
            };
            match &**l {
                ExprNode::Variable(i) if *i == j => Some((j, 2)),
                other => power_of(other).and_then(|(i, p)| (i == j).then_some((i, p + 1))),
            }
        }
        _ => None,
    }
}

fn precedence(node: &ExprNode) -> u8 {
    match node {
        ExprNode::Constant(v) if *v < 0.0 || v.is_nan() => SUM,
        ExprNode::Constant(_) | ExprNode::Variable(_) => ATOM,
        ExprNode::Unary(UnaryOp::Recip, _) => PRODUCT,
        ExprNode::Unary(..) => ATOM,
        ExprNode::Binary(BinaryOp::Add | BinaryOp::Sub, ..) => SUM,
        ExprNode::Binary(BinaryOp::Mul, ..) => {
            if power_of(node).is_some() {
                ATOM
            } else {
                PRODUCT
            }
        }
    }
}

fn write_wrapped(node: &ExprNode, names: &VarNames, out: &mut String, wrap: bool) {
    if wrap {
        out.push('(');
        write_node(node, names, out);
        out.push(')');
    } else {
        write_node(node, names, out);
    }
}

fn is_negative_constant(node: &ExprNode) -> Option<f64> {
    match node {
        ExprNode::Constant(v) if *v < 0.0 => Some(-*v),
        _ => None,
    }
}

fn negated_product(node: &ExprNode) -> Option<(f64, &ExprNode)> {
    match node {
        ExprNode::Binary(BinaryOp::Mul, l, r) if power_of(node).is_none() => {
            let k = is_negative_constant(l)?;
            if matches!(**r, ExprNode::Unary(UnaryOp::Recip, _)) {
                return None;
            }
            Some((k, r))
        }
        _ => None,
    }
}

fn write_node(node: &ExprNode, names: &VarNames, out: &mut String) {
    if let Some((i, p)) = power_of(node) {
        out.push_str(&names.name(i));
        out.push('^');
        out.push_str(&p.to_string());
        return;
    }
    match node {
        ExprNode::Constant(v) => out.push_str(&format_constant(*v)),
        ExprNode::Variable(i) => out.push_str(&names.name(*i)),
        ExprNode::Unary(UnaryOp::Recip, c) => {
            out.push_str("1/");
            write_wrapped(c, names, out, precedence(c) < ATOM);
        }
        ExprNode::Unary(op, c) => {
            out.push_str(op.name());
            out.push('(');
            write_node(c, names, out);
            out.push(')');
        }
        ExprNode::Binary(op @ (BinaryOp::Add | BinaryOp::Sub), l, r) => {
            // Left operands of the same precedence need no parentheses
            // (the parser is left-associative); right ones always do.
            write_wrapped(l, names, out, precedence(l) < SUM);
            // `a + -k` is printed `a - k`: both evaluate identically.
            match (op, is_negative_constant(r)) {
                (BinaryOp::Add, Some(k)) => {
                    out.push_str(" - ");
                    out.push_str(&format_constant(k));
                }
                (BinaryOp::Sub, Some(k)) => {
                    out.push_str(" + ");
                    out.push_str(&format_constant(k));
                }
                _ => match negated_product(r) {
                    // `a + (-k)*x` is printed `a - k*x`.
                    Some((k, x)) => {
                        out.push_str(if *op == BinaryOp::Add { " - " } else { " + " });
                        out.push_str(&format_constant(k));
                        out.push('*');
                        write_wrapped(x, names, out, precedence(x) <= PRODUCT);
                    }
                    None => {
                        out.push_str(if *op == BinaryOp::Add { " + " } else { " - " });
                        write_wrapped(r, names, out, precedence(r) <= SUM);
                    }
                },
            }
        }
        ExprNode::Binary(BinaryOp::Mul, l, r) => {
            let left_neg = is_negative_constant(l).is_some();
            write_wrapped(l, names, out, precedence(l) < PRODUCT && !left_neg);
            if let ExprNode::Unary(UnaryOp::Recip, d) = &**r {
                out.push('/');
                write_wrapped(d, names, out, precedence(d) < ATOM);
            } else {
                out.push('*');
                write_wrapped(r, names, out, precedence(r) <= PRODUCT);
            }
        }
    }
}
