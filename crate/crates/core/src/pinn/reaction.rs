use std::sync::atomic::{AtomicUsize, Ordering};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::graph::ReactionFn;
use crate::nn::{NetSpec, NnError, ParamVector, Tape, TapeNet, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConstraintMode {
    /// `f(c) = c(1-c) e^{g(c)}`, rescaled so its grid maximum is 1/4.
    #[default]
    Hard,
    /// `f(c) = g(c)`.
    None,
}

impl std::str::FromStr for ConstraintMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "hard" => Ok(Self::Hard),
            "none" => Ok(Self::None),
            _ => Err(format!("unknown constraint mode '{s}' (expected hard or none)")),
        }
    }
}

/// The reaction network of one group: a scalar network `g` plus the output
/// constraint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReactionNet {
    pub spec: NetSpec,
    pub mode: ConstraintMode,
    /// Points of the uniform normalization grid on `[0, 1]`.
    pub grid_points: usize,
}

impl ReactionNet {
    pub fn new(hidden: Vec<usize>, mode: ConstraintMode) -> Self {
        Self { spec: NetSpec::with_hidden(1, 1, hidden), mode, grid_points: 1001 }
    }

    pub fn grid(&self) -> Vec<f64> {
        let m = self.grid_points.max(2) - 1;
        (0..=m).map(|k| k as f64 / m as f64).collect()
    }

    /// Precomputes the normalization for one parameter vector.
    pub fn bind(&self, params: &ParamVector) -> Result<BoundReaction, NnError> {
        let layers = params.layers(&self.spec)?;
        let mut bound = BoundReaction {
            mode: self.mode,
            layers: layers
                .into_iter()
                .map(|(w, b)| (w, b.iter().copied().collect()))
                .collect(),
            scale: 1.0,
            clamped: AtomicUsize::new(0),
        };
        if self.mode == ConstraintMode::Hard {
            let max = self.grid().iter().map(|c| bound.unnormalized(*c)).fold(f64::NEG_INFINITY, f64::max);
            bound.scale = 1.0 / (4.0 * max);
        }
        Ok(bound)
    }

    /// `f_φ(c)` for `c` clamped to `[0, 1]`.
    pub fn eval(&self, params: &ParamVector, c: f64) -> Result<f64, NnError> {
        Ok(self.bind(params)?.eval(c))
    }

    /// `4 max_grid c(1-c)e^{g(c)}` as a 1×1 tape node; `None` in
    /// unconstrained mode.
    pub(crate) fn tape_normalizer(&self, tape: &mut Tape, net: &TapeNet) -> Option<Var> {
        if self.mode == ConstraintMode::None {
            return None;
        }
        let grid = self.grid();
        let c = tape.constant(Array2::from_shape_vec((grid.len(), 1), grid).expect("column"));
        let ft = self.tape_unnormalized(tape, net, c);
        let m = tape.max(ft);
        Some(tape.scale(m, 4.0))
    }

    fn tape_unnormalized(&self, tape: &mut Tape, net: &TapeNet, c: Var) -> Var {
        let g = net.forward(tape, c);
        let e = tape.exp(g);
        let one_minus = tape.rsub(1.0, c);
        let q = tape.mul(c, one_minus);
        tape.mul(q, e)
    }

    /// `f_φ` at every entry of the column `c`.
    pub(crate) fn tape_eval(&self, tape: &mut Tape, net: &TapeNet, c: Var, norm: Option<Var>) -> Var {
        match (self.mode, norm) {
            (ConstraintMode::Hard, Some(n)) => {
                let ft = self.tape_unnormalized(tape, net, c);
                tape.div_scalar(ft, n)
            }
            (ConstraintMode::Hard, None) => panic!("hard mode needs the normalizer"),
            (ConstraintMode::None, _) => net.forward(tape, c),
        }
    }

    /// `f_φ'` on the constant grid `c` (a column).
    pub(crate) fn tape_derivative(&self, tape: &mut Tape, net: &TapeNet, grid: &[f64], norm: Option<Var>) -> Var {
        let k = grid.len();
        let c = tape.constant(Array2::from_shape_vec((k, 1), grid.to_vec()).expect("column"));
        let ones = tape.constant(Array2::ones((k, 1)));
        let (g, dg) = net.forward_with_tangent(tape, c, ones);
        match self.mode {
            ConstraintMode::None => dg,
            ConstraintMode::Hard => {
                // d/dc [c(1-c)e^g] = e^g ((1 - 2c) + c(1-c) g').
                let e = tape.exp(g);
                let lin = tape.constant(Array2::from_shape_fn((k, 1), |(i, _)| 1.0 - 2.0 * grid[i]));
                let q = tape.constant(Array2::from_shape_fn((k, 1), |(i, _)| grid[i] * (1.0 - grid[i])));
                let qdg = tape.mul(q, dg);
                let inner = tape.add(lin, qdg);
                let d = tape.mul(e, inner);
                tape.div_scalar(d, norm.expect("hard mode needs the normalizer"))
            }
        }
    }
}

/// `mean_k max(0, f'(c_k) - f'(c_0))` for derivative samples on a grid
/// starting at `c_0 = 0`.
pub fn aux_hinge(fprime: &[f64]) -> f64 {
    let Some(&f0) = fprime.first() else { return 0.0 };
    fprime.iter().map(|d| (d - f0).max(0.0)).sum::<f64>() / fprime.len() as f64
}

pub(crate) fn tape_aux_hinge(tape: &mut Tape, fprime: Var) -> Var {
    let f0 = tape.rows(fprime, 0, 1);
    let d = tape.sub_scalar(fprime, f0);
    let h = tape.relu(d);
    tape.mean(h)
}

/// A reaction network with fixed parameters, usable as a [`ReactionFn`].
#[derive(Debug)]
pub struct BoundReaction {
    mode: ConstraintMode,
    layers: Vec<(Array2<f64>, Vec<f64>)>,
    scale: f64,
    clamped: AtomicUsize,
}

impl Clone for BoundReaction {
    fn clone(&self) -> Self {
        Self {
            mode: self.mode,
            layers: self.layers.clone(),
            scale: self.scale,
            clamped: AtomicUsize::new(self.clamped()),
        }
    }
}

impl BoundReaction {
    fn g(&self, c: f64) -> f64 {
        let mut h = vec![c];
        let last = self.layers.len() - 1;
        for (l, (w, b)) in self.layers.iter().enumerate() {
            let mut next = b.clone();
            for (i, hi) in h.iter().enumerate() {
                for (j, nj) in next.iter_mut().enumerate() {
                    *nj += hi * w[[i, j]];
                }
            }
            if l < last {
                next.iter_mut().for_each(|v| *v = v.tanh());
            }
            h = next;
        }
        h[0]
    }

    fn unnormalized(&self, c: f64) -> f64 {
        match self.mode {
            ConstraintMode::Hard => c * (1.0 - c) * self.g(c).exp(),
            ConstraintMode::None => self.g(c),
        }
    }

    /// Multiplies the output by `k`.
    pub fn scaled(mut self, k: f64) -> Self {
        self.scale *= k;
        self
    }

    /// Number of inputs clamped into `[0, 1]` so far.
    pub fn clamped(&self) -> usize {
        self.clamped.load(Ordering::Relaxed)
    }
}

impl ReactionFn for BoundReaction {
    fn eval(&self, c: f64) -> f64 {
        let cc = if (0.0..=1.0).contains(&c) {
            c
        } else {
            self.clamped.fetch_add(1, Ordering::Relaxed);
            c.clamp(0.0, 1.0)
        };
        self.scale * self.unnormalized(cc)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{init_params, loss_gradient, LearnableScalars};

    #[test]
    fn hard_mode_boundary_and_normalization() {
        let net = ReactionNet::new(vec![8, 8], ConstraintMode::Hard);
        for seed in 0..10 {
            let f = net.bind(&init_params(&net.spec, seed)).unwrap();
            assert_eq!(f.eval(0.0), 0.0);
            assert_eq!(f.eval(1.0), 0.0);
            let max = net.grid().iter().map(|c| f.eval(*c)).fold(f64::MIN, f64::max);
            assert!((max - 0.25).abs() <= 1e-12);
            let fine = (0..=100_000).map(|k| f.eval(k as f64 / 1e5)).fold(f64::MIN, f64::max);
            assert!((fine - 0.25).abs() <= 1e-3, "{fine}");
        }
    }

    #[test]
    fn zero_network_gives_fisher() {
        let net = ReactionNet::new(vec![4], ConstraintMode::Hard);
        let f = net.bind(&ParamVector::zeros(&net.spec)).unwrap();
        for k in 0..=20 {
            let c = k as f64 / 20.0;
            assert!((f.eval(c) - c * (1.0 - c)).abs() <= 1e-15);
        }
    }

    #[test]
    fn clamps_outside_unit_interval() {
        let net = ReactionNet::new(vec![4], ConstraintMode::Hard);
        let f = net.bind(&init_params(&net.spec, 1)).unwrap();
        assert_eq!(f.eval(-0.5), 0.0);
        assert_eq!(f.eval(1.5), 0.0);
        assert_eq!(f.clamped(), 2);
    }

    #[test]
    fn unconstrained_mode_is_raw_network() {
        let net = ReactionNet::new(vec![4], ConstraintMode::None);
        let p = init_params(&net.spec, 2);
        let raw = crate::nn::forward(&net.spec, &p, &[0.3]).unwrap()[0];
        assert_eq!(net.eval(&p, 0.3).unwrap(), raw);
    }

    #[test]
    fn hinge_examples() {
        let grid: Vec<f64> = (0..=100).map(|k| k as f64 / 100.0).collect();
        let fisher: Vec<f64> = grid.iter().map(|c| 1.0 - 2.0 * c).collect();
        assert_eq!(aux_hinge(&fisher), 0.0);
        let square: Vec<f64> = grid.iter().map(|c| 2.0 * c).collect();
        assert!((aux_hinge(&square) - 1.0).abs() <= 0.01);
        let doubled: Vec<f64> = square.iter().map(|d| 2.0 * d).collect();
        assert!((aux_hinge(&doubled) - 2.0 * aux_hinge(&square)).abs() < 1e-12);
    }

    #[test]
    fn tape_evaluation_matches_bound_network() {
        for mode in [ConstraintMode::Hard, ConstraintMode::None] {
            let net = ReactionNet::new(vec![6, 6], mode);
            let p = init_params(&net.spec, 5);
            let bound = net.bind(&p).unwrap();
            let cs = [0.0, 0.13, 0.5, 0.77, 1.0];
            let grid = net.grid();
            let mut vals = vec![];
            let mut derivs = vec![];
            loss_gradient(&net.spec, &p, &LearnableScalars::default(), |tape, tn, _| {
                let norm = net.tape_normalizer(tape, tn);
                let c = tape.constant(Array2::from_shape_vec((5, 1), cs.to_vec()).unwrap());
                let f = net.tape_eval(tape, tn, c, norm);
                vals = tape.value(f).iter().copied().collect();
                let d = net.tape_derivative(tape, tn, &grid[..11], norm);
                derivs = tape.value(d).iter().copied().collect();
                tape.sum(f)
            })
            .unwrap();
            for (c, v) in cs.iter().zip(&vals) {
                assert!((bound.eval(*c) - v).abs() < 1e-14);
            }
            let h = 1e-6;
            for (c, d) in grid[1..11].iter().zip(&derivs[1..]) {
                let fd = (bound.eval(c + h) - bound.eval(c - h)) / (2.0 * h);
                assert!((fd - d).abs() < 1e-7, "{mode:?} c={c}: {fd} vs {d}");
            }
        }
    }
}
