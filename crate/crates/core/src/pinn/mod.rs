//! Physics-informed inference of per-subject surrogates, rates, and shared
//! reaction networks.

mod reaction;
mod template;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{Cohort, LaplacianSystem};
use crate::nn::{
    init_params_with, optimize_adam, optimize_lbfgs, AdamConfig, LbfgsConfig, NetSpec, NnError, ParamVector,
    Tape, TapeNet, Var,
};

pub use reaction::{aux_hinge, BoundReaction, ConstraintMode, ReactionNet};
pub use template::{GraphTemplate, OutputTransform, RhsTemplate, TermContext};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PinnError {
    #[error("invalid problem: {0}")]
    Invalid(String),
    #[error("{term} loss diverged at step {step}{}", subject.as_ref().map(|s| format!(" for subject {s}")).unwrap_or_default())]
    Diverged { step: usize, subject: Option<String>, term: String },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("every ensemble member failed: {}", .0.join("; "))]
    AllMembersFailed(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PinnConfig {
    pub surrogate_hidden: Vec<usize>,
    pub reaction_hidden: Vec<usize>,
    pub adam_steps: usize,
    pub adam_lr: f64,
    pub lbfgs_max_iters: usize,
    pub lbfgs_tol: f64,
    pub collocation_count: usize,
    pub constraint_mode: ConstraintMode,
    pub w_data: f64,
    pub w_res: f64,
    pub w_aux: f64,
    pub ensemble_size: usize,
    pub seed: u64,
}

impl Default for PinnConfig {
    fn default() -> Self {
        Self {
            surrogate_hidden: vec![50, 50],
            reaction_hidden: vec![50, 50],
            adam_steps: 20_000,
            adam_lr: 1e-3,
            lbfgs_max_iters: 2_000,
            lbfgs_tol: 1e-8,
            collocation_count: 64,
            constraint_mode: ConstraintMode::Hard,
            w_data: 1.0,
            w_res: 1.0,
            w_aux: 1.0,
            ensemble_size: 10,
            seed: 0,
        }
    }
}

impl PinnConfig {
    pub fn validate(&self) -> Result<(), PinnError> {
        if self.collocation_count < 2 {
            return Err(PinnError::Invalid("collocation_count must be at least 2".into()));
        }
        if self.ensemble_size == 0 {
            return Err(PinnError::Invalid("ensemble_size must be at least 1".into()));
        }
        if !(self.adam_lr > 0.0 && self.adam_lr.is_finite()) && self.adam_steps > 0 {
            return Err(PinnError::Invalid("adam_lr must be positive".into()));
        }
        for (name, w) in [("w_data", self.w_data), ("w_res", self.w_res), ("w_aux", self.w_aux)] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(PinnError::Invalid(format!("{name} must be non-negative")));
            }
        }
        if self.surrogate_hidden.contains(&0) || self.reaction_hidden.contains(&0) {
            return Err(PinnError::Invalid("hidden layer widths must be positive".into()));
        }
        Ok(())
    }
}

/// Observations of one subject.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectSeries {
    pub id: String,
    pub group: usize,
    pub times: Vec<f64>,
    /// `|times| × state_dim`.
    pub observations: Array2<f64>,
}

#[derive(Debug, Clone)]
struct Prepared {
    /// Normalized observation inputs, `|T_D|×1`.
    tau_data: Array2<f64>,
    /// Raw and normalized collocation inputs, `m×1`.
    t_res: Array2<f64>,
    tau_res: Array2<f64>,
    /// `dτ/dt`.
    dtau: f64,
}

/// A complete inference problem: data, collocation points, the right-hand
/// side template, and loss weights.
#[derive(Debug, Clone)]
pub struct PinnProblem<T> {
    pub template: T,
    pub subjects: Vec<SubjectSeries>,
    pub group_labels: Vec<String>,
    pub config: PinnConfig,
    surrogate_spec: NetSpec,
    unknown_spec: NetSpec,
    prepared: Vec<Prepared>,
}

impl PinnProblem<GraphTemplate> {
    /// Network reaction-diffusion problem on `sys` with one reaction network
    /// per cohort group.
    pub fn from_cohort(cohort: &Cohort, sys: &LaplacianSystem, config: PinnConfig) -> Result<Self, PinnError> {
        cohort.validate().map_err(|e| PinnError::Invalid(e.to_string()))?;
        if cohort.n_nodes() != sys.n() {
            return Err(PinnError::Invalid(format!(
                "cohort has {} nodes but the Laplacian has {}",
                cohort.n_nodes(),
                sys.n()
            )));
        }
        let groups = cohort.groups();
        let subjects = cohort
            .subjects
            .iter()
            .map(|s| SubjectSeries {
                id: s.id.clone(),
                group: groups.iter().position(|g| *g == s.group).expect("listed group"),
                times: s.times.clone(),
                observations: Array2::from_shape_vec(
                    (s.times.len(), sys.n()),
                    s.concentrations.iter().flatten().copied().collect(),
                )
                .expect("validated cohort"),
            })
            .collect();
        let template = GraphTemplate::new(
            sys.matrix().clone(),
            ReactionNet::new(config.reaction_hidden.clone(), config.constraint_mode),
        );
        Self::new(template, subjects, groups, config)
    }

    pub fn reaction_net(&self) -> &ReactionNet {
        &self.template.reaction
    }
}

/// Parameters of every network and scalar of a problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PinnState {
    pub subject_params: Vec<ParamVector>,
    pub group_params: Vec<ParamVector>,
    pub subject_scalars: Vec<Vec<f64>>,
    pub shared_scalars: Vec<f64>,
}

impl PinnState {
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for p in self.subject_params.iter().chain(&self.group_params) {
            out.extend_from_slice(p.as_slice());
        }
        for s in &self.subject_scalars {
            out.extend_from_slice(s);
        }
        out.extend_from_slice(&self.shared_scalars);
        out
    }
}

/// Loss components; the per-subject vectors hold each subject's data and
/// residual terms before averaging.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub data: f64,
    pub residual: f64,
    pub aux: f64,
    pub total: f64,
    pub subject_data: Vec<f64>,
    pub subject_residual: Vec<f64>,
}

/// Outcome of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedPinn {
    pub seed: u64,
    pub state: PinnState,
    pub subject_scalar_names: Vec<String>,
    pub shared_scalar_names: Vec<String>,
    /// Multiplier applied to each group network's output (see
    /// [`rescale_alpha_f`]).
    pub output_scale: Vec<f64>,
    pub loss_history: Vec<f64>,
    pub final_loss: LossBreakdown,
}

impl TrainedPinn {
    pub fn subject_scalar(&self, subject: usize, name: &str) -> Option<f64> {
        let k = self.subject_scalar_names.iter().position(|n| n == name)?;
        self.state.subject_scalars.get(subject).map(|s| s[k])
    }

    pub fn shared_scalar(&self, name: &str) -> Option<f64> {
        let k = self.shared_scalar_names.iter().position(|n| n == name)?;
        Some(self.state.shared_scalars[k])
    }

    pub fn kappa(&self, subject: usize) -> f64 {
        self.subject_scalar(subject, "kappa").expect("graph problem")
    }

    pub fn alpha(&self, subject: usize) -> f64 {
        self.subject_scalar(subject, "alpha").expect("graph problem")
    }

    /// The learned reaction term of `group`, including its output scale.
    pub fn reaction(&self, net: &ReactionNet, group: usize) -> BoundReaction {
        net.bind(&self.state.group_params[group])
            .expect("trained parameters match the spec")
            .scaled(self.output_scale[group])
    }
}

struct Recorded {
    value: Var,
    data: Var,
    residual: Var,
    aux: Var,
    subject_data: Vec<Var>,
    subject_residual: Vec<Var>,
    leaves: Vec<Var>,
}

impl<T: RhsTemplate> PinnProblem<T> {
    pub fn new(
        template: T,
        subjects: Vec<SubjectSeries>,
        group_labels: Vec<String>,
        config: PinnConfig,
    ) -> Result<Self, PinnError> {
        config.validate()?;
        if subjects.is_empty() {
            return Err(PinnError::Invalid("no subjects".into()));
        }
        if group_labels.is_empty() {
            return Err(PinnError::Invalid("no groups".into()));
        }
        let dim = template.state_dim();
        let mut prepared = Vec::with_capacity(subjects.len());
        for s in &subjects {
            if s.group >= group_labels.len() {
                return Err(PinnError::Invalid(format!("subject {} has unknown group {}", s.id, s.group)));
            }
            if s.times.len() < 2 || s.times.windows(2).any(|w| !(w[1] > w[0])) {
                return Err(PinnError::Invalid(format!("subject {} needs at least 2 increasing times", s.id)));
            }
            if s.observations.dim() != (s.times.len(), dim) {
                return Err(PinnError::Invalid(format!(
                    "subject {}: observations are {:?}, expected ({}, {dim})",
                    s.id,
                    s.observations.dim(),
                    s.times.len()
                )));
            }
            let (a, b) = (s.times[0], *s.times.last().expect("non-empty"));
            let m = config.collocation_count;
            let t_res: Vec<f64> = (0..m).map(|k| a + (b - a) * k as f64 / (m - 1) as f64).collect();
            let dtau = 2.0 / (b - a);
            let norm = |t: f64| (t - a) * dtau - 1.0;
            prepared.push(Prepared {
                tau_data: Array2::from_shape_fn((s.times.len(), 1), |(i, _)| norm(s.times[i])),
                tau_res: Array2::from_shape_fn((m, 1), |(i, _)| norm(t_res[i])),
                t_res: Array2::from_shape_vec((m, 1), t_res).expect("column"),
                dtau,
            });
        }
        let surrogate_spec = NetSpec::with_hidden(1, dim, config.surrogate_hidden.clone());
        let unknown_spec = template.unknown_spec();
        unknown_spec.validate()?;
        Ok(Self { template, subjects, group_labels, config, surrogate_spec, unknown_spec, prepared })
    }

    pub fn surrogate_spec(&self) -> &NetSpec {
        &self.surrogate_spec
    }

    /// Collocation times of subject `i`.
    pub fn collocation_times(&self, i: usize) -> Vec<f64> {
        self.prepared[i].t_res.iter().copied().collect()
    }

    pub fn n_params(&self) -> usize {
        let k = self.template.subject_scalars().len();
        self.subjects.len() * (self.surrogate_spec.param_count() + k)
            + self.group_labels.len() * self.unknown_spec.param_count()
            + self.template.shared_scalars().len()
    }

    /// Glorot-initialized networks and the template's initial scalars. The
    /// surrogates' output biases start at the mean observation.
    pub fn init_state(&self, seed: u64) -> PinnState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let transform = self.template.output_transform();
        let subject_params = self
            .subjects
            .iter()
            .map(|s| {
                let mut p = init_params_with(&self.surrogate_spec, &mut rng);
                let n = s.observations.ncols();
                let offset = p.len() - n;
                for j in 0..n {
                    let mean = s.observations.column(j).mean().unwrap_or(0.0);
                    p.0[offset + j] = match transform {
                        OutputTransform::Logistic => {
                            let m = mean.clamp(0.01, 0.99);
                            (m / (1.0 - m)).ln()
                        }
                        OutputTransform::Identity => mean,
                    };
                }
                p
            })
            .collect();
        let group_params = (0..self.group_labels.len())
            .map(|_| init_params_with(&self.unknown_spec, &mut rng))
            .collect();
        let init: Vec<f64> = self.template.subject_scalars().into_iter().map(|(_, v)| v).collect();
        PinnState {
            subject_params,
            group_params,
            subject_scalars: vec![init; self.subjects.len()],
            shared_scalars: self.template.shared_scalars().into_iter().map(|(_, v)| v).collect(),
        }
    }

    pub fn unflatten(&self, flat: &[f64]) -> Result<PinnState, PinnError> {
        if flat.len() != self.n_params() {
            return Err(NnError::Dimension { expected: self.n_params(), got: flat.len(), what: "state vector" }.into());
        }
        let mut off = 0;
        let mut take = |len: usize| {
            let v = flat[off..off + len].to_vec();
            off += len;
            v
        };
        let subject_params = (0..self.subjects.len())
            .map(|_| ParamVector(take(self.surrogate_spec.param_count())))
            .collect();
        let group_params = (0..self.group_labels.len())
            .map(|_| ParamVector(take(self.unknown_spec.param_count())))
            .collect();
        let k = self.template.subject_scalars().len();
        let subject_scalars = (0..self.subjects.len()).map(|_| take(k)).collect();
        let shared_scalars = take(self.template.shared_scalars().len());
        Ok(PinnState { subject_params, group_params, subject_scalars, shared_scalars })
    }

    fn surrogate(&self, tape: &mut Tape, net: &TapeNet, tau: Var, dtau: Option<f64>) -> (Var, Option<Var>) {
        let logistic = self.template.output_transform() == OutputTransform::Logistic;
        match dtau {
            None => {
                let z = net.forward(tape, tau);
                (if logistic { tape.sigmoid(z) } else { z }, None)
            }
            Some(k) => {
                let rows = tape.shape(tau).0;
                let dir = tape.constant(Array2::from_elem((rows, 1), k));
                let (z, dz) = net.forward_with_tangent(tape, tau, dir);
                if !logistic {
                    return (z, Some(dz));
                }
                let c = tape.sigmoid(z);
                let one_minus = tape.rsub(1.0, c);
                let slope = tape.mul(c, one_minus);
                (c, Some(tape.mul(slope, dz)))
            }
        }
    }

    fn record(&self, tape: &mut Tape, state: &PinnState) -> Result<Recorded, PinnError> {
        let mut leaves = Vec::new();
        let subject_nets: Vec<TapeNet> = state
            .subject_params
            .iter()
            .map(|p| TapeNet::params(tape, &self.surrogate_spec, p.as_slice()))
            .collect::<Result<_, _>>()?;
        let group_nets: Vec<TapeNet> = state
            .group_params
            .iter()
            .map(|p| TapeNet::params(tape, &self.unknown_spec, p.as_slice()))
            .collect::<Result<_, _>>()?;
        for net in subject_nets.iter().chain(&group_nets) {
            leaves.extend(net.leaves());
        }
        let subject_scalars: Vec<Vec<Var>> = state
            .subject_scalars
            .iter()
            .map(|s| s.iter().map(|v| tape.param_scalar(*v)).collect())
            .collect();
        leaves.extend(subject_scalars.iter().flatten());
        let shared: Vec<Var> = state.shared_scalars.iter().map(|v| tape.param_scalar(*v)).collect();
        leaves.extend(&shared);

        let prepared: Vec<Vec<Var>> = group_nets.iter().map(|n| self.template.prepare_group(tape, n)).collect();

        let mut subject_data = Vec::with_capacity(self.subjects.len());
        let mut subject_residual = Vec::with_capacity(self.subjects.len());
        for (i, s) in self.subjects.iter().enumerate() {
            let p = &self.prepared[i];
            let tau = tape.constant(p.tau_data.clone());
            let (c, _) = self.surrogate(tape, &subject_nets[i], tau, None);
            let y = tape.constant(s.observations.clone());
            let d = tape.sub(c, y);
            let d = tape.square(d);
            let d = tape.sum(d);
            subject_data.push(tape.scale(d, 1.0 / s.times.len() as f64));

            let tau = tape.constant(p.tau_res.clone());
            let (c, dc) = self.surrogate(tape, &subject_nets[i], tau, Some(p.dtau));
            let t = tape.constant(p.t_res.clone());
            let ctx = TermContext {
                t,
                state: c,
                net: &group_nets[s.group],
                prepared: &prepared[s.group],
                subject_scalars: &subject_scalars[i],
                shared_scalars: &shared,
            };
            let rhs = self.template.rhs(tape, &ctx);
            let r = tape.sub(dc.expect("tangent requested"), rhs);
            let r = tape.square(r);
            let r = tape.sum(r);
            subject_residual.push(tape.scale(r, 1.0 / p.t_res.nrows() as f64));
        }
        let mean_of = |tape: &mut Tape, xs: &[Var]| {
            let mut acc = xs[0];
            for x in &xs[1..] {
                acc = tape.add(acc, *x);
            }
            tape.scale(acc, 1.0 / xs.len() as f64)
        };
        let data = mean_of(tape, &subject_data);
        let residual = mean_of(tape, &subject_residual);
        let aux_terms: Vec<Var> = group_nets
            .iter()
            .zip(&prepared)
            .filter_map(|(n, pr)| self.template.aux(tape, n, pr))
            .collect();
        let aux = if aux_terms.is_empty() { tape.constant_scalar(0.0) } else { mean_of(tape, &aux_terms) };
        let wd = tape.scale(data, self.config.w_data);
        let wr = tape.scale(residual, self.config.w_res);
        let wa = tape.scale(aux, self.config.w_aux);
        let sum = tape.add(wd, wr);
        let value = tape.add(sum, wa);
        Ok(Recorded { value, data, residual, aux, subject_data, subject_residual, leaves })
    }

    pub fn loss(&self, state: &PinnState) -> Result<LossBreakdown, PinnError> {
        let mut tape = Tape::new();
        let r = self.record(&mut tape, state)?;
        Ok(LossBreakdown {
            data: tape.scalar(r.data),
            residual: tape.scalar(r.residual),
            aux: tape.scalar(r.aux),
            total: tape.scalar(r.value),
            subject_data: r.subject_data.iter().map(|v| tape.scalar(*v)).collect(),
            subject_residual: r.subject_residual.iter().map(|v| tape.scalar(*v)).collect(),
        })
    }

    pub fn data_loss(&self, state: &PinnState) -> Result<f64, PinnError> {
        Ok(self.loss(state)?.data)
    }

    pub fn residual_loss(&self, state: &PinnState) -> Result<f64, PinnError> {
        Ok(self.loss(state)?.residual)
    }

    pub fn aux_loss(&self, state: &PinnState) -> Result<f64, PinnError> {
        Ok(self.loss(state)?.aux)
    }

    pub fn total_loss(&self, state: &PinnState) -> Result<f64, PinnError> {
        Ok(self.loss(state)?.total)
    }

    /// Total loss and its gradient with respect to the flattened state.
    pub fn loss_and_gradient(&self, flat: &[f64]) -> Result<(f64, Vec<f64>), PinnError> {
        let state = self.unflatten(flat)?;
        let mut tape = Tape::new();
        let r = self.record(&mut tape, &state)?;
        let value = tape.scalar(r.value);
        let grads = tape.backward(r.value);
        let mut g = Vec::with_capacity(flat.len());
        for leaf in &r.leaves {
            match grads.get(*leaf) {
                Some(m) => g.extend(m.iter()),
                None => g.extend(std::iter::repeat_n(0.0, tape.value(*leaf).len())),
            }
        }
        Ok((value, g))
    }

    /// Surrogate state of `subject` at `times`, one row per time.
    pub fn surrogate_at(&self, state: &PinnState, subject: usize, times: &[f64]) -> Result<Array2<f64>, PinnError> {
        let s = &self.subjects[subject];
        let (a, dtau) = (s.times[0], self.prepared[subject].dtau);
        let tau = Array2::from_shape_fn((times.len(), 1), |(i, _)| (times[i] - a) * dtau - 1.0);
        let mut out = crate::nn::forward_batch(&self.surrogate_spec, &state.subject_params[subject], tau.view())?;
        if self.template.output_transform() == OutputTransform::Logistic {
            out.mapv_inplace(crate::nn::logistic);
        }
        Ok(out)
    }

    /// Mean squared residual of the template along a given state path and
    /// its time derivative, with the networks and scalars of `state`.
    pub fn residual_along(
        &self,
        state: &PinnState,
        subject: usize,
        t: &[f64],
        path: &Array2<f64>,
        derivative: &Array2<f64>,
    ) -> Result<f64, PinnError> {
        let mut tape = Tape::new();
        let s = &self.subjects[subject];
        let net = TapeNet::constants(&mut tape, &self.unknown_spec, state.group_params[s.group].as_slice())?;
        let prepared = self.template.prepare_group(&mut tape, &net);
        let scalars: Vec<Var> = state.subject_scalars[subject].iter().map(|v| tape.constant_scalar(*v)).collect();
        let shared: Vec<Var> = state.shared_scalars.iter().map(|v| tape.constant_scalar(*v)).collect();
        let tv = tape.constant(Array2::from_shape_vec((t.len(), 1), t.to_vec()).expect("column"));
        let c = tape.constant(path.clone());
        let ctx = TermContext {
            t: tv,
            state: c,
            net: &net,
            prepared: &prepared,
            subject_scalars: &scalars,
            shared_scalars: &shared,
        };
        let rhs = self.template.rhs(&mut tape, &ctx);
        let dc = tape.constant(derivative.clone());
        let r = tape.sub(dc, rhs);
        let r = tape.square(r);
        let r = tape.sum(r);
        Ok(tape.scalar(r) / t.len() as f64)
    }

    fn diagnose(&self, flat: &[f64], step: usize) -> PinnError {
        let Ok(state) = self.unflatten(flat) else {
            return PinnError::Diverged { step, subject: None, term: "total".into() };
        };
        match self.loss(&state) {
            Ok(b) => {
                for (i, s) in self.subjects.iter().enumerate() {
                    if !b.subject_data[i].is_finite() {
                        return PinnError::Diverged { step, subject: Some(s.id.clone()), term: "data".into() };
                    }
                    if !b.subject_residual[i].is_finite() {
                        return PinnError::Diverged { step, subject: Some(s.id.clone()), term: "residual".into() };
                    }
                }
                let term = if b.aux.is_finite() { "gradient" } else { "aux" };
                PinnError::Diverged { step, subject: None, term: term.into() }
            }
            Err(e) => e,
        }
    }
}

/// Adam followed by L-BFGS on the total loss, starting from
/// [`PinnProblem::init_state`] with `seed`.
pub fn train<T: RhsTemplate>(problem: &PinnProblem<T>, seed: u64) -> Result<TrainedPinn, PinnError> {
    let init = problem.init_state(seed).flatten();
    let mut objective = |x: &[f64]| match problem.loss_and_gradient(x) {
        Ok(vg) => vg,
        Err(_) => (f64::NAN, vec![0.0; x.len()]),
    };
    let adam = AdamConfig { steps: problem.config.adam_steps, lr: problem.config.adam_lr, ..AdamConfig::default() };
    let first = optimize_adam(&mut objective, &init, &adam).map_err(|e| match e {
        NnError::NonFinite { step, last_finite, .. } => problem.diagnose(&last_finite, step),
        other => other.into(),
    })?;
    log::info!(
        "seed {seed}: Adam finished at loss {:.3e} after {} steps",
        first.history.last().copied().unwrap_or(f64::NAN),
        problem.config.adam_steps
    );
    let lbfgs = LbfgsConfig {
        max_iters: problem.config.lbfgs_max_iters,
        tolerance: problem.config.lbfgs_tol,
        ..LbfgsConfig::default()
    };
    let second = optimize_lbfgs(&mut objective, &first.x, &lbfgs).map_err(|e| match e {
        NnError::NonFinite { step, last_finite, .. } => problem.diagnose(&last_finite, step + problem.config.adam_steps),
        other => other.into(),
    })?;
    log::info!(
        "seed {seed}: L-BFGS finished at loss {:.3e} after {} iterations",
        second.history.last().copied().unwrap_or(f64::NAN),
        second.history.len() - 1
    );
    let mut loss_history = first.history;
    loss_history.extend_from_slice(&second.history[1..]);
    let state = problem.unflatten(&second.x)?;
    let final_loss = problem.loss(&state)?;
    if !final_loss.total.is_finite() {
        return Err(problem.diagnose(&second.x, loss_history.len()));
    }
    Ok(TrainedPinn {
        seed,
        state,
        subject_scalar_names: problem.template.subject_scalars().into_iter().map(|(n, _)| n).collect(),
        shared_scalar_names: problem.template.shared_scalars().into_iter().map(|(n, _)| n).collect(),
        output_scale: vec![1.0; problem.group_labels.len()],
        loss_history,
        final_loss,
    })
}

/// One ensemble member's outcome.
#[derive(Debug, Clone)]
pub struct Member {
    pub seed: u64,
    pub result: Result<TrainedPinn, PinnError>,
}

/// Trains one member per seed. Members are independent and run in parallel
/// when the `parallel` feature is enabled; results keep the seed order.
pub fn ensemble_train<T: RhsTemplate>(problem: &PinnProblem<T>, seeds: &[u64]) -> Result<Vec<Member>, PinnError> {
    if seeds.is_empty() {
        return Err(PinnError::Invalid("ensemble needs at least one seed".into()));
    }
    let run = |seed: &u64| Member { seed: *seed, result: train(problem, *seed) };
    #[cfg(feature = "parallel")]
    let members: Vec<Member> = {
        use rayon::prelude::*;
        seeds.par_iter().map(run).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let members: Vec<Member> = seeds.iter().map(run).collect();
    if members.iter().all(|m| m.result.is_err()) {
        return Err(PinnError::AllMembersFailed(
            members
                .iter()
                .map(|m| format!("seed {}: {}", m.seed, m.result.as_ref().unwrap_err()))
                .collect(),
        ));
    }
    for m in &members {
        if let Err(e) = &m.result {
            log::warn!("ensemble member with seed {} failed: {e}", m.seed);
        }
    }
    Ok(members)
}

/// Rescales each group's reaction term so its grid maximum is 1/4 and
/// divides the rates of that group's subjects by the same factor, leaving
/// `α f` unchanged. Groups whose maximum is not positive are left alone.
pub fn rescale_alpha_f(problem: &PinnProblem<GraphTemplate>, trained: &mut TrainedPinn) {
    let net = problem.reaction_net();
    let k = trained
        .subject_scalar_names
        .iter()
        .position(|n| n == "alpha")
        .expect("graph problem has alpha");
    for g in 0..problem.group_labels.len() {
        let f = trained.reaction(net, g);
        let max = net
            .grid()
            .iter()
            .map(|c| crate::graph::ReactionFn::eval(&f, *c))
            .fold(f64::NEG_INFINITY, f64::max);
        if !(max > 0.0 && max.is_finite()) {
            continue;
        }
        let s = 0.25 / max;
        if (s - 1.0).abs() <= 1e-12 {
            continue;
        }
        trained.output_scale[g] *= s;
        for (i, subj) in problem.subjects.iter().enumerate() {
            if subj.group == g {
                trained.state.subject_scalars[i][k] /= s;
            }
        }
    }
}

#[cfg(test)]
mod tests;
