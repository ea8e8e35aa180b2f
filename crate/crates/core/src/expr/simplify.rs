//! Bottom-up rewriting: constant folding plus a handful of identities.
//! Every rule removes nodes, so complexity never grows.

use super::{BinaryOp, ExprNode, UnaryOp};

pub(super) fn simplify(node: &ExprNode) -> ExprNode {
    match node {
        ExprNode::Constant(_) | ExprNode::Variable(_) => node.clone(),
        ExprNode::Unary(op, c) => unary(*op, simplify(c)),
        ExprNode::Binary(op, l, r) => binary(*op, simplify(l), simplify(r)),
    }
}

fn constant(node: &ExprNode) -> Option<f64> {
    match node {
        ExprNode::Constant(v) => Some(*v),
        _ => None,
    }
}

fn unary(op: UnaryOp, c: ExprNode) -> ExprNode {
    if let Some(v) = constant(&c) {
        let folded = op.apply(v);
        if folded.is_finite() {
            return ExprNode::Constant(folded);
        }
    }
    // recip(recip(x)) = x
    if let (UnaryOp::Recip, ExprNode::Unary(UnaryOp::Recip, inner)) = (op, &c) {
        return (**inner).clone();
    }
    ExprNode::unary(op, c)
}

fn binary(op: BinaryOp, l: ExprNode, r: ExprNode) -> ExprNode {
    let (lc, rc) = (constant(&l), constant(&r));
    if let (Some(a), Some(b)) = (lc, rc) {
        let folded = op.apply(a, b);
        if folded.is_finite() {
            return ExprNode::Constant(folded);
        }
    }
    match op {
        BinaryOp::Add => {
            if lc == Some(0.0) {
                return r;
            }
            if rc == Some(0.0) {
                return l;
            }
        }
        BinaryOp::Sub => {
            if rc == Some(0.0) {
                return l;
            }
        }
        BinaryOp::Mul => {
            if lc == Some(1.0) {
                return r;
            }
            if rc == Some(1.0) {
                return l;
            }
            if lc == Some(0.0) || rc == Some(0.0) {
                return ExprNode::Constant(0.0);
            }
            // k1 * (k2 * x) = (k1 k2) * x
            if let (Some(a), ExprNode::Binary(BinaryOp::Mul, il, ir)) = (lc, &r) {
                if let Some(b) = constant(il) {
                    let k = a * b;
                    if k.is_finite() {
                        return binary(BinaryOp::Mul, ExprNode::Constant(k), (**ir).clone());
                    }
                }
            }
        }
    }
    ExprNode::binary(op, l, r)
}

#[cfg(test)]
mod tests {
    use crate::expr::{parse, ExprNode, Expression, OperatorSet};

    fn simp(s: &str) -> String {
        parse(s).unwrap().simplify().to_string()
    }

    #[test]
    fn identities() {
        let x = Expression::new(ExprNode::add(ExprNode::var(0), ExprNode::constant(0.0)));
        assert_eq!(x.simplify(), Expression::new(ExprNode::var(0)));
        let m = Expression::new(ExprNode::mul(ExprNode::constant(2.0), ExprNode::constant(3.0)));
        assert_eq!(m.simplify(), Expression::new(ExprNode::constant(6.0)));
        let e = Expression::new(ExprNode::exp(ExprNode::constant(0.0)));
        assert_eq!(e.simplify(), Expression::new(ExprNode::constant(1.0)));
    }

    #[test]
    fn nested_rules() {
        assert_eq!(simp("1*c*(0 + c)"), "c^2");
        assert_eq!(simp("2*(3*c)"), "6*c");
        assert_eq!(simp("0*exp(c) + c - 0"), "c");
        assert_eq!(simp("1/(1/c)"), "c");
    }

    #[test]
    fn folding_skips_non_finite() {
        let e = parse("1/0 + c").unwrap();
        let s = e.simplify();
        assert!(s.eval(&[1.0]).unwrap().is_infinite());
        let ops = OperatorSet::default();
        assert!(s.complexity(&ops) <= e.complexity(&ops));
    }
}
