//! Fully-connected tanh networks over a flat parameter vector.
//!
//! Parameter layout: for each layer in order, the weight matrix
//! (`fan_in × fan_out`, row-major) followed by the bias (`fan_out`). Inputs
//! are row vectors, so a layer computes `x W + b`; every hidden layer applies
//! `tanh`, the output layer is linear.

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tape::{Tape, Var};
use super::NnError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetSpec {
    pub input_dim: usize,
    pub output_dim: usize,
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
}

impl NetSpec {
    /// Two hidden layers of 50 units.
    pub fn new(input_dim: usize, output_dim: usize) -> Self {
        Self::with_hidden(input_dim, output_dim, vec![50, 50])
    }

    pub fn with_hidden(input_dim: usize, output_dim: usize, hidden: Vec<usize>) -> Self {
        Self { input_dim, output_dim, hidden, activation: Activation::Tanh }
    }

    pub fn validate(&self) -> Result<(), NnError> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden.contains(&0) {
            return Err(NnError::Spec("all layer widths must be at least 1".into()));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` for each layer.
    pub fn layers(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 2);
        dims.push(self.input_dim);
        dims.extend(&self.hidden);
        dims.push(self.output_dim);
        dims.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers().iter().map(|(i, o)| i * o + o).sum()
    }
}

/// All weights and biases of one network, flattened in layer order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(pub Vec<f64>);

impl ParamVector {
    pub fn zeros(spec: &NetSpec) -> Self {
        Self(vec![0.0; spec.param_count()])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Splits into per-layer `(W, b)` matrices; `b` is a 1×n row.
    pub fn layers(&self, spec: &NetSpec) -> Result<Vec<(Array2<f64>, Array2<f64>)>, NnError> {
        split_layers(spec, &self.0)
    }

    /// Inverse of [`Self::layers`].
    pub fn from_layers(layers: &[(Array2<f64>, Array2<f64>)]) -> Self {
        let mut out = Vec::new();
        for (w, b) in layers {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        Self(out)
    }
}

pub(crate) fn split_layers(
    spec: &NetSpec,
    flat: &[f64],
) -> Result<Vec<(Array2<f64>, Array2<f64>)>, NnError> {
    if flat.len() != spec.param_count() {
        return Err(NnError::Dimension {
            expected: spec.param_count(),
            got: flat.len(),
            what: "parameter vector",
        });
    }
    let mut offset = 0;
    let mut out = Vec::new();
    for (fan_in, fan_out) in spec.layers() {
        let w = Array2::from_shape_vec((fan_in, fan_out), flat[offset..offset + fan_in * fan_out].to_vec())
            .expect("sizes checked");
        offset += fan_in * fan_out;
        let b = Array2::from_shape_vec((1, fan_out), flat[offset..offset + fan_out].to_vec())
            .expect("sizes checked");
        offset += fan_out;
        out.push((w, b));
    }
    Ok(out)
}

/// Glorot-uniform weights and zero biases, deterministic per seed.
pub fn init_params(spec: &NetSpec, seed: u64) -> ParamVector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    init_params_with(spec, &mut rng)
}

pub fn init_params_with(spec: &NetSpec, rng: &mut impl Rng) -> ParamVector {
    let mut out = Vec::with_capacity(spec.param_count());
    for (fan_in, fan_out) in spec.layers() {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        out.extend((0..fan_in * fan_out).map(|_| rng.random_range(-limit..limit)));
        out.extend(std::iter::repeat_n(0.0, fan_out));
    }
    ParamVector(out)
}

fn check_input(spec: &NetSpec, x: &[f64]) -> Result<(), NnError> {
    if x.len() != spec.input_dim {
        return Err(NnError::Dimension { expected: spec.input_dim, got: x.len(), what: "input" });
    }
    Ok(())
}

pub fn forward(spec: &NetSpec, params: &ParamVector, x: &[f64]) -> Result<Vec<f64>, NnError> {
    check_input(spec, x)?;
    let input = Array2::from_shape_vec((1, x.len()), x.to_vec()).expect("1×n");
    Ok(forward_batch(spec, params, input.view())?.iter().copied().collect())
}

/// Evaluates every row of `x`.
pub fn forward_batch(
    spec: &NetSpec,
    params: &ParamVector,
    x: ArrayView2<f64>,
) -> Result<Array2<f64>, NnError> {
    if x.ncols() != spec.input_dim {
        return Err(NnError::Dimension { expected: spec.input_dim, got: x.ncols(), what: "input" });
    }
    let layers = params.layers(spec)?;
    let last = layers.len() - 1;
    let mut h = x.to_owned();
    for (l, (w, b)) in layers.iter().enumerate() {
        h = h.dot(w) + b;
        if l < last {
            h.mapv_inplace(f64::tanh);
        }
    }
    Ok(h)
}

/// Exact `d output / d input` at `x`, as an `output_dim × input_dim` matrix.
pub fn input_jacobian(
    spec: &NetSpec,
    params: &ParamVector,
    x: &[f64],
) -> Result<Array2<f64>, NnError> {
    check_input(spec, x)?;
    let layers = params.layers(spec)?;
    let last = layers.len() - 1;
    let mut h = Array2::from_shape_vec((1, x.len()), x.to_vec()).expect("1×n");
    // Row j holds the derivative of the current activations along input j.
    let mut tangent = Array2::<f64>::eye(spec.input_dim);
    for (l, (w, b)) in layers.iter().enumerate() {
        h = h.dot(w) + b;
        tangent = tangent.dot(w);
        if l < last {
            h.mapv_inplace(f64::tanh);
            for mut row in tangent.rows_mut() {
                row.iter_mut().zip(h.iter()).for_each(|(d, a)| *d *= 1.0 - a * a);
            }
        }
    }
    Ok(tangent.reversed_axes())
}

/// A network whose weights live on a [`Tape`].
pub struct TapeNet {
    layers: Vec<(Var, Var)>,
}

impl TapeNet {
    /// Registers the network's weights as parameter leaves.
    pub fn params(tape: &mut Tape, spec: &NetSpec, flat: &[f64]) -> Result<Self, NnError> {
        let layers = split_layers(spec, flat)?
            .into_iter()
            .map(|(w, b)| (tape.param(w), tape.param(b)))
            .collect();
        Ok(Self { layers })
    }

    /// Registers the weights as constants (no gradient).
    pub fn constants(tape: &mut Tape, spec: &NetSpec, flat: &[f64]) -> Result<Self, NnError> {
        let layers = split_layers(spec, flat)?
            .into_iter()
            .map(|(w, b)| (tape.constant(w), tape.constant(b)))
            .collect();
        Ok(Self { layers })
    }

    /// Leaf nodes in parameter-vector order: `W0, b0, W1, b1, ...`.
    pub fn leaves(&self) -> impl Iterator<Item = Var> + '_ {
        self.layers.iter().flat_map(|(w, b)| [*w, *b])
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Var {
        let last = self.layers.len() - 1;
        let mut h = x;
        for (l, &(w, b)) in self.layers.iter().enumerate() {
            let z = tape.matmul(h, w);
            h = tape.add_row(z, b);
            if l < last {
                h = tape.tanh(h);
            }
        }
        h
    }

    /// Forward pass together with the directional derivative along `dx`
    /// (same shape as `x`), both recorded on the tape.
    pub fn forward_with_tangent(&self, tape: &mut Tape, x: Var, dx: Var) -> (Var, Var) {
        let last = self.layers.len() - 1;
        let (mut h, mut dh) = (x, dx);
        for (l, &(w, b)) in self.layers.iter().enumerate() {
            let z = tape.matmul(h, w);
            h = tape.add_row(z, b);
            dh = tape.matmul(dh, w);
            if l < last {
                h = tape.tanh(h);
                let sq = tape.square(h);
                let slope = tape.rsub(1.0, sq);
                dh = tape.mul(slope, dh);
            }
        }
        (h, dh)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn init_is_deterministic_per_seed() {
        let spec = NetSpec::new(1, 3);
        assert_eq!(init_params(&spec, 7), init_params(&spec, 7));
        assert_ne!(init_params(&spec, 7), init_params(&spec, 8));
    }

    #[test]
    fn init_biases_are_zero_and_weights_bounded() {
        let spec = NetSpec::with_hidden(2, 3, vec![4]);
        let p = init_params(&spec, 1);
        let layers = p.layers(&spec).unwrap();
        for (w, b) in &layers {
            assert!(b.iter().all(|v| *v == 0.0));
            let limit = (6.0 / (w.nrows() + w.ncols()) as f64).sqrt();
            assert!(w.iter().all(|v| v.abs() <= limit));
        }
        assert_eq!(ParamVector::from_layers(&layers), p);
    }

    #[test]
    fn param_count_from_layer_sizes() {
        // 1→50: 50 weights + 50 biases; 50→50: 2500 + 50; 50→83: 4150 + 83.
        let spec = NetSpec::with_hidden(1, 83, vec![50, 50]);
        assert_eq!(spec.param_count(), 100 + 2550 + 4233);
        assert_eq!(spec.param_count(), 6883);
    }

    #[test]
    fn zero_params_give_zero_output() {
        let spec = NetSpec::with_hidden(3, 2, vec![5, 5]);
        let out = forward(&spec, &ParamVector::zeros(&spec), &[1.0, -2.0, 3.0]).unwrap();
        assert_eq!(out, vec![0.0, 0.0]);
    }

    #[test]
    fn linear_identity_layer() {
        let spec = NetSpec::with_hidden(2, 2, vec![]);
        let p = ParamVector::from_layers(&[(Array2::eye(2), Array2::zeros((1, 2)))]);
        assert_eq!(forward(&spec, &p, &[0.3, -0.4]).unwrap(), vec![0.3, -0.4]);
        let w = array![[1.0, 2.0], [3.0, 4.0]];
        let p = ParamVector::from_layers(&[(w.clone(), Array2::zeros((1, 2)))]);
        // y = x W, so dy/dx = Wᵀ in output × input layout.
        let j = input_jacobian(&spec, &p, &[0.1, 0.2]).unwrap();
        assert_eq!(j, w.t().to_owned());
    }

    #[test]
    fn constant_network_has_zero_jacobian() {
        let spec = NetSpec::with_hidden(2, 1, vec![3]);
        let mut p = ParamVector::zeros(&spec);
        let n = p.len();
        p.0[n - 1] = 0.7;
        let j = input_jacobian(&spec, &p, &[0.5, 0.5]).unwrap();
        assert!(j.iter().all(|v| *v == 0.0));
        assert_eq!(forward(&spec, &p, &[0.5, 0.5]).unwrap(), vec![0.7]);
    }

    #[test]
    fn hidden_activations_saturate_inside_unit_interval() {
        let spec = NetSpec::with_hidden(1, 1, vec![4]);
        let layers = vec![
            (Array2::from_elem((1, 4), 1e6), Array2::zeros((1, 4))),
            (Array2::ones((4, 1)), Array2::zeros((1, 1))),
        ];
        let p = ParamVector::from_layers(&layers);
        let y = forward(&spec, &p, &[3.0]).unwrap()[0];
        assert!(y <= 4.0 && y > 3.99);
        let h = (Array2::from_elem((1, 1), 3.0).dot(&layers[0].0)).mapv(f64::tanh);
        assert!(h.iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn jacobian_matches_central_differences() {
        let spec = NetSpec::with_hidden(3, 2, vec![6, 5]);
        let p = init_params(&spec, 42);
        let x = [0.3, -0.8, 1.2];
        let j = input_jacobian(&spec, &p, &x).unwrap();
        let h = 1e-5;
        for k in 0..3 {
            let mut xp = x;
            let mut xm = x;
            xp[k] += h;
            xm[k] -= h;
            let fp = forward(&spec, &p, &xp).unwrap();
            let fm = forward(&spec, &p, &xm).unwrap();
            for o in 0..2 {
                let fd = (fp[o] - fm[o]) / (2.0 * h);
                assert!((fd - j[[o, k]]).abs() <= 1e-6, "{fd} vs {}", j[[o, k]]);
            }
        }
    }

    #[test]
    fn jacobian_of_sum_is_sum_of_jacobians() {
        // Two nets stacked side by side into one wider net with a summing
        // output layer compute f + g.
        let spec = NetSpec::with_hidden(2, 1, vec![3]);
        let (pf, pg) = (init_params(&spec, 1), init_params(&spec, 2));
        let (lf, lg) = (pf.layers(&spec).unwrap(), pg.layers(&spec).unwrap());
        let w0 = ndarray::concatenate![ndarray::Axis(1), lf[0].0, lg[0].0];
        let b0 = ndarray::concatenate![ndarray::Axis(1), lf[0].1, lg[0].1];
        let w1 = ndarray::concatenate![ndarray::Axis(0), lf[1].0, lg[1].0];
        let b1 = &lf[1].1 + &lg[1].1;
        let wide = NetSpec::with_hidden(2, 1, vec![6]);
        let ps = ParamVector::from_layers(&[(w0, b0), (w1, b1)]);
        let x = [0.4, -0.1];
        let js = input_jacobian(&wide, &ps, &x).unwrap();
        let jf = input_jacobian(&spec, &pf, &x).unwrap();
        let jg = input_jacobian(&spec, &pg, &x).unwrap();
        for (s, (a, b)) in js.iter().zip(jf.iter().zip(jg.iter())) {
            assert!((s - (a + b)).abs() < 1e-15);
        }
    }

    #[test]
    fn tape_tangent_matches_jacobian() {
        let spec = NetSpec::with_hidden(1, 3, vec![5, 4]);
        let p = init_params(&spec, 9);
        let mut tape = Tape::new();
        let net = TapeNet::constants(&mut tape, &spec, &p.0).unwrap();
        let x = tape.constant(array![[0.2], [0.9]]);
        let dx = tape.constant(array![[1.0], [1.0]]);
        let (y, dy) = net.forward_with_tangent(&mut tape, x, dx);
        for (row, xv) in [0.2, 0.9].iter().enumerate() {
            let f = forward(&spec, &p, &[*xv]).unwrap();
            let j = input_jacobian(&spec, &p, &[*xv]).unwrap();
            for o in 0..3 {
                assert!((tape.value(y)[[row, o]] - f[o]).abs() < 1e-14);
                assert!((tape.value(dy)[[row, o]] - j[[o, 0]]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let spec = NetSpec::new(2, 1);
        let p = init_params(&spec, 0);
        assert!(matches!(forward(&spec, &p, &[1.0]), Err(NnError::Dimension { .. })));
        assert!(matches!(
            forward(&spec, &ParamVector(vec![0.0; 3]), &[1.0, 2.0]),
            Err(NnError::Dimension { .. })
        ));
    }
}
