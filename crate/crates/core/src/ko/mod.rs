//! Kraichnan–Orszag three-mode system with two unknown right-hand sides.
//!
//! The true system is
//!
//! ```text
//! du1/dt = exp(-t/10) u2 u3
//! du2/dt = u1 u3
//! du3/dt = -2 u1 u2
//! ```
//!
//! Discovery treats the first two equations as an unknown network
//! `(t, u) -> (f1, f2)` and the third as `a u1 u2 + b` with learnable `a`, `b`.

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{OperatorSet, UnaryOp, VarNames};
use crate::graph::{dopri5, GraphError, OdeOptions};
use crate::nn::{forward_batch, NetSpec, NnError, Tape, Var};
use crate::pinn::{
    ensemble_train, OutputTransform, PinnConfig, PinnError, PinnProblem, RhsTemplate, SubjectSeries, TermContext,
    TrainedPinn,
};
use crate::symreg::{distill, score_frontier, top_by_score, Candidate, Dataset, SymregConfig, SymregError};

pub const KO_INITIAL: [f64; 3] = [1.0, 0.8, 0.5];

/// Time scale dividing `t` before it enters the unknown network.
const T_SCALE: f64 = 10.0;

#[derive(Debug, Error)]
pub enum KoError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Pinn(#[from] PinnError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Symreg(#[from] SymregError),
    #[error("invalid configuration: {0}")]
    Config(String),
}

/// True right-hand side.
pub fn ko_rhs(t: f64, u: &[f64], out: &mut [f64]) {
    out[0] = (-t / 10.0).exp() * u[1] * u[2];
    out[1] = u[0] * u[2];
    out[2] = -2.0 * u[0] * u[1];
}

/// True trajectory from [`KO_INITIAL`], one row per time. `t_grid` must
/// start at 0.
pub fn ko_generate(t_grid: &[f64]) -> Result<Array2<f64>, KoError> {
    if t_grid.first() != Some(&0.0) {
        return Err(KoError::Config("time grid must start at 0".into()));
    }
    let rows = dopri5(ko_rhs, &KO_INITIAL, t_grid, &OdeOptions::default())?;
    Ok(Array2::from_shape_vec((rows.len(), 3), rows.into_iter().flatten().collect()).expect("three columns"))
}

/// `du/dt = [f1, f2, a u1 u2 + b]` with `(f1, f2)` a network of
/// `(t/10, u1, u2, u3)`.
#[derive(Debug, Clone)]
pub struct KoTemplate {
    pub hidden: Vec<usize>,
    pub a_init: f64,
    pub b_init: f64,
}

impl RhsTemplate for KoTemplate {
    fn state_dim(&self) -> usize {
        3
    }

    fn unknown_spec(&self) -> NetSpec {
        NetSpec::with_hidden(4, 2, self.hidden.clone())
    }

    fn output_transform(&self) -> OutputTransform {
        OutputTransform::Identity
    }

    fn subject_scalars(&self) -> Vec<(String, f64)> {
        Vec::new()
    }

    fn shared_scalars(&self) -> Vec<(String, f64)> {
        vec![("a".into(), self.a_init), ("b".into(), self.b_init)]
    }

    fn rhs(&self, tape: &mut Tape, ctx: &TermContext) -> Var {
        let t = tape.scale(ctx.t, 1.0 / T_SCALE);
        let input = tape.concat_cols(t, ctx.state);
        let f = ctx.net.forward(tape, input);
        let u1 = tape.column(ctx.state, 0);
        let u2 = tape.column(ctx.state, 1);
        let prod = tape.mul(u1, u2);
        let known = tape.mul_scalar(prod, ctx.shared_scalars[0]);
        let known = tape.add_scalar(known, ctx.shared_scalars[1]);
        tape.concat_cols(f, known)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KoConfig {
    pub t_end: f64,
    pub n_points: usize,
    pub pinn: PinnConfig,
    pub symreg: SymregConfig,
    /// Number of candidates reported per function.
    pub top_k: usize,
}

impl Default for KoConfig {
    fn default() -> Self {
        Self {
            t_end: 10.0,
            n_points: 101,
            pinn: PinnConfig { ensemble_size: 1, collocation_count: 201, ..PinnConfig::default() },
            symreg: SymregConfig { operators: ko_operators(), iterations: 300, ..SymregConfig::default() },
            top_k: 3,
        }
    }
}

/// The default operator set plus `sin` and `cos` at complexity 3.
pub fn ko_operators() -> OperatorSet {
    OperatorSet::default().with_unary(UnaryOp::Sin, 3).with_unary(UnaryOp::Cos, 3)
}

impl KoConfig {
    pub fn validate(&self) -> Result<(), KoError> {
        if !(self.t_end > 0.0 && self.t_end.is_finite()) || self.n_points < 2 {
            return Err(KoError::Config("t_end must be positive and n_points at least 2".into()));
        }
        if self.top_k == 0 {
            return Err(KoError::Config("top_k must be at least 1".into()));
        }
        self.pinn.validate()?;
        self.symreg.validate()?;
        Ok(())
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.n_points).map(|k| self.t_end * k as f64 / (self.n_points - 1) as f64).collect()
    }
}

/// Builds the single-trajectory problem from clean generated data.
pub fn ko_problem(config: &KoConfig) -> Result<PinnProblem<KoTemplate>, KoError> {
    config.validate()?;
    let times = config.times();
    let observations = ko_generate(&times)?;
    let template = KoTemplate { hidden: config.pinn.reaction_hidden.clone(), a_init: 0.0, b_init: 0.0 };
    let subject = SubjectSeries { id: "ko".into(), group: 0, times, observations };
    Ok(PinnProblem::new(template, vec![subject], vec!["ko".into()], config.pinn.clone())?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KoFunctionReport {
    pub frontier: Vec<Candidate>,
    pub top: Vec<Candidate>,
    /// Text of the top candidates with variables named `t, u1, u2, u3`.
    pub top_text: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KoReport {
    /// Seed of the member with the lowest final loss.
    pub seed: u64,
    pub a: f64,
    pub b: f64,
    pub final_loss: f64,
    pub f1: KoFunctionReport,
    pub f2: KoFunctionReport,
}

/// `(t, u1, u2, u3)` columns at the data times and the network outputs
/// `f1`, `f2` there.
pub fn ko_samples(
    problem: &PinnProblem<KoTemplate>,
    trained: &TrainedPinn,
) -> Result<(Vec<Vec<f64>>, [Vec<f64>; 2]), KoError> {
    let s = &problem.subjects[0];
    let spec = problem.template.unknown_spec();
    let input = Array2::from_shape_fn((s.times.len(), 4), |(i, j)| {
        if j == 0 {
            s.times[i] / T_SCALE
        } else {
            s.observations[[i, j - 1]]
        }
    });
    let out = forward_batch(&spec, &trained.state.group_params[0], input.view())?;
    let mut columns = vec![s.times.clone()];
    columns.extend((0..3).map(|j| s.observations.column(j).to_vec()));
    Ok((columns, [out.column(0).to_vec(), out.column(1).to_vec()]))
}

fn distill_one(columns: &[Vec<f64>], targets: &[f64], config: &KoConfig) -> Result<KoFunctionReport, KoError> {
    let data = Dataset::new(columns.to_vec(), targets.to_vec())?;
    let frontier = score_frontier(&distill(&data, &config.symreg)?);
    let top = top_by_score(&frontier, config.top_k);
    let top_text = top.iter().map(|c| c.expression.format_with(&VarNames::TimeState)).collect();
    Ok(KoFunctionReport { frontier, top, top_text })
}

/// Trains one member per seed, keeps the lowest-loss member, and distills
/// both unknown functions from its network.
pub fn ko_discover(config: &KoConfig, seeds: &[u64]) -> Result<KoReport, KoError> {
    let problem = ko_problem(config)?;
    let members = ensemble_train(&problem, seeds)?;
    let best = members
        .into_iter()
        .filter_map(|m| m.result.ok())
        .min_by(|a, b| a.final_loss.total.total_cmp(&b.final_loss.total))
        .ok_or_else(|| KoError::Pinn(PinnError::AllMembersFailed(seeds.iter().map(|s| s.to_string()).collect())))?;
    let (columns, [f1, f2]) = ko_samples(&problem, &best)?;
    Ok(KoReport {
        seed: best.seed,
        a: best.shared_scalar("a").expect("declared scalar"),
        b: best.shared_scalar("b").expect("declared scalar"),
        final_loss: best.final_loss.total,
        f1: distill_one(&columns, &f1, config)?,
        f2: distill_one(&columns, &f2, config)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pinn::train;

    #[test]
    fn initial_derivatives() {
        let mut d = [0.0; 3];
        ko_rhs(0.0, &KO_INITIAL, &mut d);
        assert!((d[0] - 0.4).abs() < 1e-15);
        assert!((d[1] - 0.5).abs() < 1e-15);
        assert!((d[2] + 1.6).abs() < 1e-15);
    }

    #[test]
    fn trajectory_is_finite_and_matches_rk4() {
        let t: Vec<f64> = (0..=100).map(|k| k as f64 * 0.1).collect();
        let u = ko_generate(&t).unwrap();
        assert_eq!(u.dim(), (101, 3));
        assert!(u.iter().all(|v| v.is_finite()));
        assert_eq!(u.row(0).to_vec(), KO_INITIAL.to_vec());
        let mut y = KO_INITIAL.to_vec();
        for (k, row) in u.rows().into_iter().enumerate().skip(1) {
            y = crate::graph::ode::rk4_fixed(ko_rhs, &y, t[k - 1], t[k], 1e-3);
            for (a, b) in row.iter().zip(&y) {
                assert!((a - b).abs() < 1e-7, "{a} vs {b}");
            }
        }
        assert!(ko_generate(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn template_shapes_and_known_term() {
        let config = KoConfig {
            n_points: 11,
            pinn: PinnConfig { surrogate_hidden: vec![4], reaction_hidden: vec![3], collocation_count: 5, ..PinnConfig::default() },
            ..KoConfig::default()
        };
        let p = ko_problem(&config).unwrap();
        let mut state = p.init_state(0);
        assert_eq!(state.shared_scalars, vec![0.0, 0.0]);
        assert!(state.subject_scalars[0].is_empty());
        // With a zero network and a = -2, b = 0, the residual on the exact
        // path reduces to the first two equations.
        state.group_params[0].0.iter_mut().for_each(|v| *v = 0.0);
        state.shared_scalars = vec![-2.0, 0.0];
        let t: Vec<f64> = (0..=20).map(|k| k as f64 * 0.5).collect();
        let path = ko_generate(&t).unwrap();
        let mut deriv = Array2::zeros(path.dim());
        for (i, row) in path.rows().into_iter().enumerate() {
            let mut d = [0.0; 3];
            ko_rhs(t[i], &row.to_vec(), &mut d);
            deriv.row_mut(i).assign(&ndarray::arr1(&d));
        }
        let r = p.residual_along(&state, 0, &t, &path, &deriv).unwrap();
        let expected: f64 = deriv.rows().into_iter().map(|d| d[0] * d[0] + d[1] * d[1]).sum::<f64>() / t.len() as f64;
        assert!((r - expected).abs() < 1e-10 * expected, "{r} vs {expected}");
    }

    #[test]
    fn short_training_runs_and_distills() {
        let config = KoConfig {
            n_points: 21,
            pinn: PinnConfig {
                surrogate_hidden: vec![8],
                reaction_hidden: vec![8],
                adam_steps: 30,
                adam_lr: 1e-2,
                lbfgs_max_iters: 10,
                collocation_count: 16,
                ensemble_size: 1,
                ..PinnConfig::default()
            },
            symreg: SymregConfig { iterations: 2, population_size: 20, ..KoConfig::default().symreg },
            ..KoConfig::default()
        };
        let report = ko_discover(&config, &[1]).unwrap();
        assert!(report.a.is_finite() && report.b.is_finite());
        assert!(!report.f1.top.is_empty() && report.f1.top.len() <= 3);
        assert_eq!(report.f2.top.len(), report.f2.top_text.len());
        let p = ko_problem(&config).unwrap();
        let t = train(&p, 1).unwrap();
        assert_eq!(report.final_loss, t.final_loss.total);
    }
}
