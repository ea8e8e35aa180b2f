//! Small differentiable networks, reverse-mode gradients, and optimizers.

pub mod net;
pub mod optim;
pub mod tape;

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use net::{forward, forward_batch, init_params, init_params_with, input_jacobian, NetSpec, ParamVector, TapeNet};
pub use optim::{optimize_adam, optimize_lbfgs, AdamConfig, LbfgsConfig, Objective, OptimOutcome};
pub use tape::{logistic, Tape, Var};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("{what} has dimension {got}, expected {expected}")]
    Dimension { expected: usize, got: usize, what: &'static str },
    #[error("invalid network spec: {0}")]
    Spec(String),
    #[error("loss became non-finite at step {step}")]
    NonFinite { step: usize, last_finite: Vec<f64>, history: Vec<f64> },
}

/// Named scalars trained jointly with the networks. Scalars flagged
/// `positive` are optimized through their logarithm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct LearnableScalars {
    pub names: Vec<String>,
    pub values: Vec<f64>,
    pub positive: Vec<bool>,
}

impl LearnableScalars {
    pub fn push(&mut self, name: impl Into<String>, value: f64, positive: bool) {
        self.names.push(name.into());
        self.values.push(value);
        self.positive.push(positive);
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.values[i])
    }

    /// Optimizer coordinates.
    pub fn to_raw(&self) -> Vec<f64> {
        self.values
            .iter()
            .zip(&self.positive)
            .map(|(v, p)| if *p { v.ln() } else { *v })
            .collect()
    }

    pub fn set_raw(&mut self, raw: &[f64]) {
        for ((v, p), r) in self.values.iter_mut().zip(&self.positive).zip(raw) {
            *v = if *p { r.exp() } else { *r };
        }
    }

    /// Converts gradients with respect to the values into gradients with
    /// respect to the optimizer coordinates.
    pub fn chain_raw_gradient(&self, grad: &mut [f64]) {
        for ((g, v), p) in grad.iter_mut().zip(&self.values).zip(&self.positive) {
            if *p {
                *g *= v;
            }
        }
    }
}

/// Value and gradient of a scalar program over one network and a set of
/// learnable scalars.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGradient {
    pub value: f64,
    pub params: Vec<f64>,
    pub scalars: Vec<f64>,
}

/// Records `program` on a fresh tape with the network weights and the
/// scalars as parameter leaves and returns the reverse-mode gradient. The
/// program may use [`TapeNet::forward_with_tangent`], so losses on input
/// derivatives are differentiated exactly.
pub fn loss_gradient<F>(
    spec: &NetSpec,
    params: &ParamVector,
    scalars: &LearnableScalars,
    program: F,
) -> Result<LossGradient, NnError>
where
    F: FnOnce(&mut Tape, &TapeNet, &[Var]) -> Var,
{
    let mut tape = Tape::new();
    let net = TapeNet::params(&mut tape, spec, params.as_slice())?;
    let scalar_vars: Vec<Var> = scalars.values.iter().map(|v| tape.param_scalar(*v)).collect();
    let out = program(&mut tape, &net, &scalar_vars);
    let value = tape.scalar(out);
    if !value.is_finite() {
        return Err(NnError::NonFinite { step: 0, last_finite: params.0.clone(), history: vec![] });
    }
    let grads = tape.backward(out);
    let mut flat = Vec::with_capacity(params.len());
    for leaf in net.leaves() {
        match grads.get(leaf) {
            Some(g) => flat.extend(g.iter()),
            None => flat.extend(std::iter::repeat_n(0.0, tape.value(leaf).len())),
        }
    }
    let scalar_grads = scalar_vars
        .iter()
        .map(|v| grads.get(*v).map_or(0.0, |g| g[[0, 0]]))
        .collect();
    Ok(LossGradient { value, params: flat, scalars: scalar_grads })
}

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

/// JSON checkpoint of one network plus its learnable scalars.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub spec: NetSpec,
    pub params: ParamVector,
    pub scalars: LearnableScalars,
    pub loss_history: Vec<f64>,
}

impl Checkpoint {
    pub fn new(spec: NetSpec, params: ParamVector, scalars: LearnableScalars, loss_history: Vec<f64>) -> Self {
        Self { format_version: CHECKPOINT_FORMAT_VERSION, spec, params, scalars, loss_history }
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(std::io::Error::other)?;
        std::fs::write(path, text)
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let ck: Checkpoint = serde_json::from_str(&text).map_err(std::io::Error::other)?;
        if ck.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(std::io::Error::other(format!(
                "unsupported checkpoint format_version {}",
                ck.format_version
            )));
        }
        if ck.params.len() != ck.spec.param_count() {
            return Err(std::io::Error::other("parameter count does not match spec"));
        }
        Ok(ck)
    }
}
