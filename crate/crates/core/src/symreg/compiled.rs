//! Postfix programs evaluated over a whole dataset at once.

use crate::expr::{BinaryOp, ExprNode, Expression, UnaryOp};

#[derive(Debug, Clone, Copy)]
enum Instr {
    Var(usize),
    /// Index into the constant table.
    Const(usize),
    Unary(UnaryOp),
    Binary(BinaryOp),
}

#[derive(Debug, Clone)]
pub struct Program {
    code: Vec<Instr>,
    pub constants: Vec<f64>,
}

impl Program {
    /// Constants are numbered in the depth-first order used by
    /// [`Expression::constants`].
    pub fn compile(expr: &Expression) -> Self {
        let mut p = Program { code: Vec::new(), constants: Vec::new() };
        p.emit(expr.root());
        p
    }

    fn emit(&mut self, node: &ExprNode) {
        match node {
            ExprNode::Constant(v) => {
                self.code.push(Instr::Const(self.constants.len()));
                self.constants.push(*v);
            }
            ExprNode::Variable(i) => self.code.push(Instr::Var(*i)),
            ExprNode::Unary(op, c) => {
                self.emit(c);
                self.code.push(Instr::Unary(*op));
            }
            ExprNode::Binary(op, l, r) => {
                self.emit(l);
                self.emit(r);
                self.code.push(Instr::Binary(*op));
            }
        }
    }

    /// Evaluates on every row, writing into `out`. `columns[i]` holds
    /// variable `i`.
    pub fn eval_into(&self, constants: &[f64], columns: &[Vec<f64>], stack: &mut Vec<Vec<f64>>, out: &mut Vec<f64>) {
        let n = columns.first().map_or(out.len(), Vec::len);
        let mut depth = 0;
        for instr in &self.code {
            match *instr {
                Instr::Var(i) => {
                    if stack.len() <= depth {
                        stack.push(vec![0.0; n]);
                    }
                    stack[depth].clear();
                    stack[depth].extend_from_slice(&columns[i]);
                    depth += 1;
                }
                Instr::Const(k) => {
                    if stack.len() <= depth {
                        stack.push(vec![0.0; n]);
                    }
                    stack[depth].clear();
                    stack[depth].resize(n, constants[k]);
                    depth += 1;
                }
                Instr::Unary(op) => {
                    let top = &mut stack[depth - 1];
                    match op {
                        UnaryOp::Exp => top.iter_mut().for_each(|v| *v = v.exp()),
                        UnaryOp::Recip => top.iter_mut().for_each(|v| *v = 1.0 / *v),
                        UnaryOp::Sin => top.iter_mut().for_each(|v| *v = v.sin()),
                        UnaryOp::Cos => top.iter_mut().for_each(|v| *v = v.cos()),
                    }
                }
                Instr::Binary(op) => {
                    let (lo, hi) = stack.split_at_mut(depth - 1);
                    let a = &mut lo[depth - 2];
                    let b = &hi[0];
                    match op {
                        BinaryOp::Add => a.iter_mut().zip(b).for_each(|(x, y)| *x += y),
                        BinaryOp::Sub => a.iter_mut().zip(b).for_each(|(x, y)| *x -= y),
                        BinaryOp::Mul => a.iter_mut().zip(b).for_each(|(x, y)| *x *= y),
                    }
                    depth -= 1;
                }
            }
        }
        debug_assert_eq!(depth, 1);
        std::mem::swap(out, &mut stack[0]);
    }

    pub fn eval(&self, columns: &[Vec<f64>]) -> Vec<f64> {
        let mut out = Vec::new();
        self.eval_into(&self.constants, columns, &mut Vec::new(), &mut out);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_tree_evaluation() {
        let exprs = ["c*(1 - c)", "0.3*exp(c - 1) + recip(c + 2)", "sin(c)*cos(2*c) - c^3", "1.5"];
        let xs: Vec<f64> = (0..17).map(|i| i as f64 / 16.0).collect();
        for text in exprs {
            let e: Expression = text.parse().unwrap();
            let p = Program::compile(&e);
            assert_eq!(p.constants, e.constants());
            let ys = p.eval(&[xs.clone()]);
            for (x, y) in xs.iter().zip(&ys) {
                assert_eq!(e.eval1(*x), *y, "{text} at {x}");
            }
        }
    }

    #[test]
    fn several_variables() {
        let e: Expression = "u1*u3 + t".parse().unwrap();
        let p = Program::compile(&e);
        let cols = vec![vec![1.0, 2.0], vec![3.0, 4.0], vec![0.0, 0.0], vec![5.0, 6.0]];
        assert_eq!(p.eval(&cols), vec![16.0, 26.0]);
    }
}
