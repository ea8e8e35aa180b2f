//! Immutable operator-tree expressions.
//!
//! An [`Expression`] is a finite tree over constants, indexed variables, the
//! unary operators of [`UnaryOp`] and the binary operators of [`BinaryOp`].
//! Division and integer powers exist only as text sugar: `a/b` is stored as
//! `a * recip(b)` and `c^3` as `c*c*c`.

mod format;
mod parse;
mod simplify;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use format::VarNames;
pub use parse::parse;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExprError {
    #[error("variable index {index} out of range for input of dimension {dim}")]
    Arity { index: usize, dim: usize },
    #[error("parse error at position {pos}: {msg}")]
    Parse { pos: usize, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnaryOp {
    Exp,
    Recip,
    Sin,
    Cos,
}

impl UnaryOp {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            UnaryOp::Exp => x.exp(),
            UnaryOp::Recip => 1.0 / x,
            UnaryOp::Sin => x.sin(),
            UnaryOp::Cos => x.cos(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            UnaryOp::Exp => "exp",
            UnaryOp::Recip => "recip",
            UnaryOp::Sin => "sin",
            UnaryOp::Cos => "cos",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
}

impl BinaryOp {
    pub fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            BinaryOp::Add => a + b,
            BinaryOp::Sub => a - b,
            BinaryOp::Mul => a * b,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ExprNode {
    Constant(f64),
    Variable(usize),
    Unary(UnaryOp, Box<ExprNode>),
    Binary(BinaryOp, Box<ExprNode>, Box<ExprNode>),
}

impl ExprNode {
    pub fn constant(v: f64) -> Self {
        ExprNode::Constant(v)
    }

    pub fn var(i: usize) -> Self {
        ExprNode::Variable(i)
    }

    pub fn unary(op: UnaryOp, child: ExprNode) -> Self {
        ExprNode::Unary(op, Box::new(child))
    }

    pub fn binary(op: BinaryOp, l: ExprNode, r: ExprNode) -> Self {
        ExprNode::Binary(op, Box::new(l), Box::new(r))
    }

    pub fn add(l: ExprNode, r: ExprNode) -> Self {
        Self::binary(BinaryOp::Add, l, r)
    }

    pub fn sub(l: ExprNode, r: ExprNode) -> Self {
        Self::binary(BinaryOp::Sub, l, r)
    }

    pub fn mul(l: ExprNode, r: ExprNode) -> Self {
        Self::binary(BinaryOp::Mul, l, r)
    }

    pub fn exp(x: ExprNode) -> Self {
        Self::unary(UnaryOp::Exp, x)
    }

    pub fn recip(x: ExprNode) -> Self {
        Self::unary(UnaryOp::Recip, x)
    }

    /// Evaluates without bounds checks on variable indices; callers validate
    /// arity first.
    fn eval_unchecked(&self, x: &[f64]) -> f64 {
        match self {
            ExprNode::Constant(v) => *v,
            ExprNode::Variable(i) => x[*i],
            ExprNode::Unary(op, c) => op.apply(c.eval_unchecked(x)),
            ExprNode::Binary(op, l, r) => op.apply(l.eval_unchecked(x), r.eval_unchecked(x)),
        }
    }

    pub fn node_count(&self) -> usize {
        match self {
            ExprNode::Constant(_) | ExprNode::Variable(_) => 1,
            ExprNode::Unary(_, c) => 1 + c.node_count(),
            ExprNode::Binary(_, l, r) => 1 + l.node_count() + r.node_count(),
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            ExprNode::Constant(_) | ExprNode::Variable(_) => 1,
            ExprNode::Unary(_, c) => 1 + c.depth(),
            ExprNode::Binary(_, l, r) => 1 + l.depth().max(r.depth()),
        }
    }

    fn max_var(&self) -> Option<usize> {
        match self {
            ExprNode::Constant(_) => None,
            ExprNode::Variable(i) => Some(*i),
            ExprNode::Unary(_, c) => c.max_var(),
            ExprNode::Binary(_, l, r) => match (l.max_var(), r.max_var()) {
                (Some(a), Some(b)) => Some(a.max(b)),
                (a, b) => a.or(b),
            },
        }
    }

    fn complexity(&self, ops: &OperatorSet) -> u32 {
        match self {
            ExprNode::Constant(_) => ops.constant_cost,
            ExprNode::Variable(_) => ops.variable_cost,
            ExprNode::Unary(op, c) => ops.unary_cost(*op) + c.complexity(ops),
            ExprNode::Binary(op, l, r) => {
                ops.binary_cost(*op) + l.complexity(ops) + r.complexity(ops)
            }
        }
    }

    fn collect_constants(&self, out: &mut Vec<f64>) {
        match self {
            ExprNode::Constant(v) => out.push(*v),
            ExprNode::Variable(_) => {}
            ExprNode::Unary(_, c) => c.collect_constants(out),
            ExprNode::Binary(_, l, r) => {
                l.collect_constants(out);
                r.collect_constants(out);
            }
        }
    }

    fn assign_constants(&mut self, values: &mut impl Iterator<Item = f64>) {
        match self {
            ExprNode::Constant(v) => {
                if let Some(n) = values.next() {
                    *v = n;
                }
            }
            ExprNode::Variable(_) => {}
            ExprNode::Unary(_, c) => c.assign_constants(values),
            ExprNode::Binary(_, l, r) => {
                l.assign_constants(values);
                r.assign_constants(values);
            }
        }
    }
}

/// A symbolic expression: an immutable operator tree.
#[derive(Debug, Clone, PartialEq)]
pub struct Expression {
    root: ExprNode,
}

impl Expression {
    pub fn new(root: ExprNode) -> Self {
        Self { root }
    }

    pub fn root(&self) -> &ExprNode {
        &self.root
    }

    pub fn into_root(self) -> ExprNode {
        self.root
    }

    /// Evaluates at `x`. Division by zero or overflow yields a non-finite
    /// value rather than an error.
    pub fn eval(&self, x: &[f64]) -> Result<f64, ExprError> {
        if let Some(i) = self.root.max_var() {
            if i >= x.len() {
                return Err(ExprError::Arity { index: i, dim: x.len() });
            }
        }
        Ok(self.root.eval_unchecked(x))
    }

    /// Evaluates a single-variable expression at `c`. Expressions using a
    /// variable index above zero evaluate to NaN.
    pub fn eval1(&self, c: f64) -> f64 {
        self.eval(&[c]).unwrap_or(f64::NAN)
    }

    /// Number of input variables the expression reads (largest index + 1).
    pub fn arity(&self) -> usize {
        self.root.max_var().map_or(0, |i| i + 1)
    }

    pub fn complexity(&self, ops: &OperatorSet) -> u32 {
        self.root.complexity(ops)
    }

    pub fn node_count(&self) -> usize {
        self.root.node_count()
    }

    pub fn depth(&self) -> usize {
        self.root.depth()
    }

    pub fn simplify(&self) -> Expression {
        Expression::new(simplify::simplify(&self.root))
    }

    /// Constants in depth-first, left-to-right order.
    pub fn constants(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.root.collect_constants(&mut out);
        out
    }

    /// Returns a copy with the constants replaced, in [`Self::constants`]
    /// order.
    pub fn with_constants(&self, values: &[f64]) -> Expression {
        let mut root = self.root.clone();
        root.assign_constants(&mut values.iter().copied());
        Expression::new(root)
    }

    pub fn format_with(&self, names: &VarNames) -> String {
        format::format(&self.root, names)
    }
}

impl fmt::Display for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names = if self.arity() <= 1 {
            VarNames::Concentration
        } else {
            VarNames::TimeState
        };
        f.write_str(&self.format_with(&names))
    }
}

impl std::str::FromStr for Expression {
    type Err = ExprError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse(s)
    }
}

impl Serialize for Expression {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Expression {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        parse(&s).map_err(serde::de::Error::custom)
    }
}

/// Operators available to the search, with per-node complexity costs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OperatorSet {
    pub binary: Vec<(BinaryOp, u32)>,
    pub unary: Vec<(UnaryOp, u32)>,
    pub variable_cost: u32,
    pub constant_cost: u32,
}

impl Default for OperatorSet {
    /// `{+, -, *}` at cost 1 and `{exp, recip}` at cost 3.
    fn default() -> Self {
        Self {
            binary: vec![(BinaryOp::Add, 1), (BinaryOp::Sub, 1), (BinaryOp::Mul, 1)],
            unary: vec![(UnaryOp::Exp, 3), (UnaryOp::Recip, 3)],
            variable_cost: 1,
            constant_cost: 1,
        }
    }
}

impl OperatorSet {
    /// Every cost set to one.
    pub fn unit_costs() -> Self {
        let mut ops = Self::default();
        ops.binary.iter_mut().for_each(|(_, c)| *c = 1);
        ops.unary.iter_mut().for_each(|(_, c)| *c = 1);
        ops
    }

    /// Adds (or re-prices) a unary operator.
    pub fn with_unary(mut self, op: UnaryOp, cost: u32) -> Self {
        match self.unary.iter_mut().find(|(o, _)| *o == op) {
            Some(entry) => entry.1 = cost,
            None => self.unary.push((op, cost)),
        }
        self
    }

    pub fn without_binary(mut self, op: BinaryOp) -> Self {
        self.binary.retain(|(o, _)| *o != op);
        self
    }

    pub fn unary_cost(&self, op: UnaryOp) -> u32 {
        self.unary
            .iter()
            .find(|(o, _)| *o == op)
            .map_or(3, |(_, c)| *c)
    }

    pub fn binary_cost(&self, op: BinaryOp) -> u32 {
        self.binary
            .iter()
            .find(|(o, _)| *o == op)
            .map_or(1, |(_, c)| *c)
    }

    /// Returns an error message if any cost is zero.
    pub fn validate(&self) -> Result<(), String> {
        let costs = self
            .binary
            .iter()
            .map(|(_, c)| *c)
            .chain(self.unary.iter().map(|(_, c)| *c))
            .chain([self.variable_cost, self.constant_cost]);
        if costs.into_iter().any(|c| c == 0) {
            return Err("operator complexity costs must be positive".into());
        }
        if self.binary.is_empty() {
            return Err("at least one binary operator is required".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c() -> ExprNode {
        ExprNode::var(0)
    }

    fn k(v: f64) -> ExprNode {
        ExprNode::constant(v)
    }

    pub(crate) fn fisher() -> Expression {
        Expression::new(ExprNode::mul(c(), ExprNode::sub(k(1.0), c())))
    }

    #[test]
    fn fisher_at_half() {
        assert_eq!(fisher().eval(&[0.5]).unwrap(), 0.25);
    }

    #[test]
    fn variable_identity() {
        assert_eq!(Expression::new(c()).eval(&[0.7]).unwrap(), 0.7);
    }

    #[test]
    fn zfk_stationary_point() {
        let s5 = 5f64.sqrt();
        let pref = (s5 + 2.0) / 4.0;
        let shift = -1.0 - (s5 - 3.0) / 2.0;
        let e = Expression::new(ExprNode::mul(
            ExprNode::mul(k(pref), fisher().into_root()),
            ExprNode::exp(ExprNode::add(c(), k(shift))),
        ));
        let v = e.eval(&[(s5 - 1.0) / 2.0]).unwrap();
        assert!((v - 0.25).abs() < 1e-15, "{v}");
    }

    #[test]
    fn arity_error() {
        let e = Expression::new(ExprNode::var(2));
        assert_eq!(e.eval(&[1.0]), Err(ExprError::Arity { index: 2, dim: 1 }));
    }

    #[test]
    fn non_finite_is_a_value() {
        let e = Expression::new(ExprNode::recip(c()));
        assert!(e.eval(&[0.0]).unwrap().is_infinite());
        let e = Expression::new(ExprNode::exp(c()));
        assert!(e.eval(&[1e4]).unwrap().is_infinite());
    }

    #[test]
    fn complexity_examples() {
        let unit = OperatorSet::unit_costs();
        assert_eq!(Expression::new(k(1.0)).complexity(&unit), 1);
        assert_eq!(fisher().complexity(&unit), 5);
        let ops = OperatorSet::default();
        assert_eq!(Expression::new(ExprNode::exp(c())).complexity(&ops), 4);
    }

    #[test]
    fn constants_roundtrip() {
        let e = Expression::new(ExprNode::add(ExprNode::mul(k(2.0), c()), k(1.0)));
        assert_eq!(e.constants(), vec![2.0, 1.0]);
        let e2 = e.with_constants(&[3.0, -1.0]);
        assert_eq!(e2.eval(&[2.0]).unwrap(), 5.0);
    }

    #[test]
    fn zero_costs_rejected() {
        let mut ops = OperatorSet::default();
        ops.constant_cost = 0;
        assert!(ops.validate().is_err());
        assert!(OperatorSet::default().validate().is_ok());
    }
}
