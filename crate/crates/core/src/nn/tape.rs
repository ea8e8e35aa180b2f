//! Reverse-mode automatic differentiation over dense matrices.
//!
//! A [`Tape`] records every operation as a node holding its value. Calling
//! [`Tape::backward`] walks the nodes in reverse and accumulates adjoints
//! for every node that depends on a parameter leaf. Forward-mode input
//! derivatives are built on the tape out of ordinary operations (see
//! [`super::net::TapeNet::forward_with_tangent`]), so gradients of losses
//! that contain input derivatives come out of the same backward pass.

use ndarray::{Array2, Axis};

pub type Matrix = Array2<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Param,
    Constant,
    MatMul(Var, Var),
    /// `a + row` with `row` (1×n) broadcast over the rows of `a`.
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// `a * s` with `s` a 1×1 node.
    MulScalar(Var, Var),
    /// `a / s` with `s` a 1×1 node.
    DivScalar(Var, Var),
    /// `a - s` with `s` a 1×1 node.
    SubScalar(Var, Var),
    /// `a + s` with `s` a 1×1 node.
    AddScalar(Var, Var),
    Scale(Var, f64),
    Shift(Var),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Square(Var),
    Relu(Var),
    Sum(Var),
    Max(Var),
    Reshape(Var),
    /// Rows `start..start + len`.
    Rows(Var, usize),
    Column(Var, usize),
    ConcatCols(Var, Var),
    /// 1×n row repeated over m rows.
    BroadcastRows(Var),
}

struct Node {
    value: Matrix,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints indexed by node; `None` for nodes that do not depend on any
/// parameter.
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}

fn add_into(slot: &mut Option<Matrix>, g: Matrix) {
    match slot {
        Some(acc) => *acc += &g,
        None => *slot = Some(g),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op, parents: &[Var]) -> Var {
        let needs_grad = match op {
            Op::Param => true,
            Op::Constant => false,
            _ => parents.iter().any(|p| self.nodes[p.0].needs_grad),
        };
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    /// Value of a 1×1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    pub fn param(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Param, &[])
    }

    pub fn param_scalar(&mut self, value: f64) -> Var {
        self.param(Array2::from_elem((1, 1), value))
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Constant, &[])
    }

    pub fn constant_scalar(&mut self, value: f64) -> Var {
        self.constant(Array2::from_elem((1, 1), value))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        self.push(v, Op::MatMul(a, b), &[a, b])
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        debug_assert_eq!(self.shape(row).0, 1);
        let v = self.value(a) + self.value(row);
        self.push(v, Op::AddRow(a, row), &[a, row])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        debug_assert_eq!(self.shape(a), self.shape(b));
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        debug_assert_eq!(self.shape(a), self.shape(b));
        let v = self.value(a) - self.value(b);
        self.push(v, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        debug_assert_eq!(self.shape(a), self.shape(b));
        let v = self.value(a) * self.value(b);
        self.push(v, Op::Mul(a, b), &[a, b])
    }

    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Var {
        let k = self.scalar(s);
        let v = self.value(a) * k;
        self.push(v, Op::MulScalar(a, s), &[a, s])
    }

    pub fn div_scalar(&mut self, a: Var, s: Var) -> Var {
        let k = self.scalar(s);
        let v = self.value(a) / k;
        self.push(v, Op::DivScalar(a, s), &[a, s])
    }

    pub fn sub_scalar(&mut self, a: Var, s: Var) -> Var {
        let k = self.scalar(s);
        let v = self.value(a) - k;
        self.push(v, Op::SubScalar(a, s), &[a, s])
    }

    pub fn add_scalar(&mut self, a: Var, s: Var) -> Var {
        let k = self.scalar(s);
        let v = self.value(a) + k;
        self.push(v, Op::AddScalar(a, s), &[a, s])
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a) * k;
        self.push(v, Op::Scale(a, k), &[a])
    }

    /// `a + k` for a constant `k`.
    pub fn shift(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a) + k;
        self.push(v, Op::Shift(a), &[a])
    }

    /// `k - a` for a constant `k`.
    pub fn rsub(&mut self, k: f64, a: Var) -> Var {
        let neg = self.scale(a, -1.0);
        self.shift(neg, k)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::tanh);
        self.push(v, Op::Tanh(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(logistic);
        self.push(v, Op::Sigmoid(a), &[a])
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::exp);
        self.push(v, Op::Exp(a), &[a])
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x * x);
        self.push(v, Op::Square(a), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x.max(0.0));
        self.push(v, Op::Relu(a), &[a])
    }

    /// Sum of all entries, as a 1×1 node.
    pub fn sum(&mut self, a: Var) -> Var {
        let v = Array2::from_elem((1, 1), self.value(a).sum());
        self.push(v, Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Largest entry, as a 1×1 node. The adjoint flows to the first
    /// maximizing entry.
    pub fn max(&mut self, a: Var) -> Var {
        let m = self.value(a).iter().copied().fold(f64::NEG_INFINITY, f64::max);
        self.push(Array2::from_elem((1, 1), m), Op::Max(a), &[a])
    }

    /// Row-major reshape.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let src = self.value(a);
        assert_eq!(src.len(), rows * cols, "reshape size mismatch");
        let data: Vec<f64> = src.iter().copied().collect();
        let v = Array2::from_shape_vec((rows, cols), data).expect("shape checked above");
        self.push(v, Op::Reshape(a), &[a])
    }

    pub fn rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let v = self
            .value(a)
            .slice(ndarray::s![start..start + len, ..])
            .to_owned();
        self.push(v, Op::Rows(a, start), &[a])
    }

    pub fn column(&mut self, a: Var, j: usize) -> Var {
        let v = self.value(a).slice(ndarray::s![.., j..j + 1]).to_owned();
        self.push(v, Op::Column(a, j), &[a])
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let v = ndarray::concatenate(Axis(1), &[self.value(a).view(), self.value(b).view()])
            .expect("row counts must match");
        self.push(v, Op::ConcatCols(a, b), &[a, b])
    }

    pub fn broadcast_rows(&mut self, a: Var, rows: usize) -> Var {
        let row = self.value(a);
        assert_eq!(row.nrows(), 1);
        let v = row
            .broadcast((rows, row.ncols()))
            .expect("1×n broadcasts")
            .to_owned();
        self.push(v, Op::BroadcastRows(a), &[a])
    }

    /// Adjoints of the 1×1 node `out` with respect to every node.
    pub fn backward(&self, out: Var) -> Gradients {
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        assert_eq!(self.shape(out), (1, 1), "backward needs a scalar output");
        if !self.nodes[out.0].needs_grad {
            return Gradients { grads };
        }
        grads[out.0] = Some(Array2::ones((1, 1)));
        for i in (0..=out.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else {
                continue;
            };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Gradients { grads }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn propagate(&self, i: usize, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let node = &self.nodes[i];
        let out = &node.value;
        match node.op {
            Op::Param | Op::Constant => {}
            Op::MatMul(a, b) => {
                if self.wants(a) {
                    add_into(&mut grads[a.0], g.dot(&self.value(b).t()));
                }
                if self.wants(b) {
                    add_into(&mut grads[b.0], self.value(a).t().dot(g));
                }
            }
            Op::AddRow(a, row) => {
                if self.wants(a) {
                    add_into(&mut grads[a.0], g.clone());
                }
                if self.wants(row) {
                    add_into(&mut grads[row.0], g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
            }
            Op::Add(a, b) => {
                if self.wants(a) {
                    add_into(&mut grads[a.0], g.clone());
                }
                if self.wants(b) {
                    add_into(&mut grads[b.0], g.clone());
                }
            }
            Op::Sub(a, b) => {
                if self.wants(a) {
                    add_into(&mut grads[a.0], g.clone());
                }
                if self.wants(b) {
                    add_into(&mut grads[b.0], -g);
                }
            }
            Op::Mul(a, b) => {
                if self.wants(a) {
                    add_into(&mut grads[a.0], g * self.value(b));
                }
                if self.wants(b) {
                    add_into(&mut grads[b.0], g * self.value(a));
                }
            }
            Op::MulScalar(a, s) => {
                let k = self.scalar(s);
                if self.wants(a) {
                    add_into(&mut grads[a.0], g * k);
                }
                if self.wants(s) {
                    let d = (g * self.value(a)).sum();
                    add_into(&mut grads[s.0], Array2::from_elem((1, 1), d));
                }
            }
            Op::DivScalar(a, s) => {
                let k = self.scalar(s);
                if self.wants(a) {
                    add_into(&mut grads[a.0], g / k);
                }
                if self.wants(s) {
                    let d = -(g * out).sum() / k;
                    add_into(&mut grads[s.0], Array2::from_elem((1, 1), d));
                }
            }
            Op::SubScalar(a, s) => {
                if self.wants(a) {
                    add_into(&mut grads[a.0], g.clone());
                }
                if self.wants(s) {
                    add_into(&mut grads[s.0], Array2::from_elem((1, 1), -g.sum()));
                }
            }
            Op::AddScalar(a, s) => {
                if self.wants(a) {
                    add_into(&mut grads[a.0], g.clone());
                }
                if self.wants(s) {
                    add_into(&mut grads[s.0], Array2::from_elem((1, 1), g.sum()));
                }
            }
            Op::Scale(a, k) => add_into(&mut grads[a.0], g * k),
            Op::Shift(a) => add_into(&mut grads[a.0], g.clone()),
            Op::Tanh(a) => {
                let mut d = out.mapv(|y| 1.0 - y * y);
                d *= g;
                add_into(&mut grads[a.0], d);
            }
            Op::Sigmoid(a) => {
                let mut d = out.mapv(|y| y * (1.0 - y));
                d *= g;
                add_into(&mut grads[a.0], d);
            }
            Op::Exp(a) => add_into(&mut grads[a.0], g * out),
            Op::Square(a) => {
                let mut d = self.value(a) * 2.0;
                d *= g;
                add_into(&mut grads[a.0], d);
            }
            Op::Relu(a) => {
                let mut d = self.value(a).mapv(|x| if x > 0.0 { 1.0 } else { 0.0 });
                d *= g;
                add_into(&mut grads[a.0], d);
            }
            Op::Sum(a) => {
                let k = g[[0, 0]];
                add_into(&mut grads[a.0], Array2::from_elem(self.shape(a), k));
            }
            Op::Max(a) => {
                let src = self.value(a);
                let m = out[[0, 0]];
                let mut d = Array2::zeros(src.dim());
                if let Some(pos) = src.indexed_iter().find(|(_, v)| **v == m).map(|(p, _)| p) {
                    d[pos] = g[[0, 0]];
                }
                add_into(&mut grads[a.0], d);
            }
            Op::Reshape(a) => {
                let data: Vec<f64> = g.iter().copied().collect();
                let d = Array2::from_shape_vec(self.shape(a), data).expect("same size");
                add_into(&mut grads[a.0], d);
            }
            Op::Rows(a, start) => {
                let mut d = Array2::zeros(self.shape(a));
                d.slice_mut(ndarray::s![start..start + g.nrows(), ..]).assign(g);
                add_into(&mut grads[a.0], d);
            }
            Op::Column(a, j) => {
                let mut d = Array2::zeros(self.shape(a));
                d.slice_mut(ndarray::s![.., j..j + 1]).assign(g);
                add_into(&mut grads[a.0], d);
            }
            Op::ConcatCols(a, b) => {
                let na = self.shape(a).1;
                if self.wants(a) {
                    add_into(&mut grads[a.0], g.slice(ndarray::s![.., ..na]).to_owned());
                }
                if self.wants(b) {
                    add_into(&mut grads[b.0], g.slice(ndarray::s![.., na..]).to_owned());
                }
            }
            Op::BroadcastRows(a) => {
                add_into(&mut grads[a.0], g.sum_axis(Axis(0)).insert_axis(Axis(0)));
            }
        }
    }
}

pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
