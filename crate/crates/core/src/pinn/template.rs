use std::sync::Arc;

use ndarray::Array2;

use super::reaction::{tape_aux_hinge, ReactionNet};
use crate::nn::{NetSpec, Tape, TapeNet, Var};

/// How the surrogate network output becomes the state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputTransform {
    /// Logistic squashing into `(0, 1)`.
    Logistic,
    Identity,
}

/// Everything the right-hand side may depend on, for one subject over a
/// batch of `m` times.
pub struct TermContext<'a> {
    /// Raw times, `m×1`.
    pub t: Var,
    /// Surrogate state, `m×state_dim`.
    pub state: Var,
    /// Unknown-term network of the subject's group.
    pub net: &'a TapeNet,
    /// Nodes produced by [`RhsTemplate::prepare_group`] for that network.
    pub prepared: &'a [Var],
    pub subject_scalars: &'a [Var],
    pub shared_scalars: &'a [Var],
}

/// Right-hand side `du/dt = F(t, u)` assembled from known terms with
/// learnable scalars and one unknown network per group.
pub trait RhsTemplate: Send + Sync {
    fn state_dim(&self) -> usize;
    fn unknown_spec(&self) -> NetSpec;
    fn output_transform(&self) -> OutputTransform {
        OutputTransform::Logistic
    }
    /// Names and initial values of scalars learned per subject.
    fn subject_scalars(&self) -> Vec<(String, f64)>;
    /// Names and initial values of scalars shared by all subjects.
    fn shared_scalars(&self) -> Vec<(String, f64)> {
        Vec::new()
    }
    /// Per-evaluation quantities of a group network, computed once and
    /// passed to [`RhsTemplate::rhs`] and [`RhsTemplate::aux`].
    fn prepare_group(&self, _tape: &mut Tape, _net: &TapeNet) -> Vec<Var> {
        Vec::new()
    }
    /// `m×state_dim` right-hand side.
    fn rhs(&self, tape: &mut Tape, ctx: &TermContext) -> Var;
    /// Auxiliary penalty on a group network, as a 1×1 node.
    fn aux(&self, _tape: &mut Tape, _net: &TapeNet, _prepared: &[Var]) -> Option<Var> {
        None
    }
}

/// `dc/dt = -κ L c + α f(c)` with `f` the group reaction network.
#[derive(Debug, Clone)]
pub struct GraphTemplate {
    pub laplacian: Arc<Array2<f64>>,
    pub reaction: ReactionNet,
    pub aux_grid: Vec<f64>,
    pub kappa_init: f64,
    pub alpha_init: f64,
}

impl GraphTemplate {
    pub fn new(laplacian: Array2<f64>, reaction: ReactionNet) -> Self {
        Self {
            laplacian: Arc::new(laplacian),
            reaction,
            aux_grid: (0..=100).map(|k| k as f64 / 100.0).collect(),
            kappa_init: 1.0,
            alpha_init: 0.5,
        }
    }
}

impl RhsTemplate for GraphTemplate {
    fn state_dim(&self) -> usize {
        self.laplacian.nrows()
    }

    fn unknown_spec(&self) -> NetSpec {
        self.reaction.spec.clone()
    }

    fn subject_scalars(&self) -> Vec<(String, f64)> {
        vec![("kappa".into(), self.kappa_init), ("alpha".into(), self.alpha_init)]
    }

    fn prepare_group(&self, tape: &mut Tape, net: &TapeNet) -> Vec<Var> {
        self.reaction.tape_normalizer(tape, net).into_iter().collect()
    }

    fn rhs(&self, tape: &mut Tape, ctx: &TermContext) -> Var {
        let (m, n) = tape.shape(ctx.state);
        let lt = tape.constant(self.laplacian.t().to_owned());
        let lc = tape.matmul(ctx.state, lt);
        let diffusion = tape.mul_scalar(lc, ctx.subject_scalars[0]);
        let flat = tape.reshape(ctx.state, m * n, 1);
        let f = self.reaction.tape_eval(tape, ctx.net, flat, ctx.prepared.first().copied());
        let f = tape.reshape(f, m, n);
        let reaction = tape.mul_scalar(f, ctx.subject_scalars[1]);
        tape.sub(reaction, diffusion)
    }

    fn aux(&self, tape: &mut Tape, net: &TapeNet, prepared: &[Var]) -> Option<Var> {
        let d = self.reaction.tape_derivative(tape, net, &self.aux_grid, prepared.first().copied());
        Some(tape_aux_hinge(tape, d))
    }
}
