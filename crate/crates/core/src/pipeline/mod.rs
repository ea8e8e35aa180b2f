//! End-to-end discovery: ensemble training, distillation of each group's
//! reaction network, projection scoring, and ranking. Also the horizon and
//! constraint ablation.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{Expression, VarNames};
use crate::graph::{generate_cohort, benchmark_reaction, Cohort, CohortConfig, GraphError, LaplacianSystem, ReactionFn};
use crate::pinn::{ensemble_train, rescale_alpha_f, ConstraintMode, GraphTemplate, PinnConfig, PinnError, PinnProblem, TrainedPinn};
use crate::project::{rank_ensemble, subject_projection_error, ProjectError, SubjectModel};
use crate::symreg::{
    distill, sample_function, score_frontier, select_candidate, uniform_grid, Candidate, SymregConfig,
    SymregError,
};

pub const RESULT_FORMAT_VERSION: u32 = 1;

/// Points of the `[0, 1]` grid on which curves are stored.
pub const CURVE_POINTS: usize = 101;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Pinn(#[from] PinnError),
    #[error(transparent)]
    Symreg(#[from] SymregError),
    #[error(transparent)]
    Project(#[from] ProjectError),
    #[error("invalid configuration: {0}")]
    Config(String),
}

/// SplitMix64 over the root seed and a stream path.
pub fn split_seed(root: u64, stream: &[u64]) -> u64 {
    let mix = |mut z: u64| {
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    };
    stream
        .iter()
        .fold(mix(root.wrapping_add(0x9e37_79b9_7f4a_7c15)), |acc, s| mix(acc ^ s.wrapping_add(0x9e37_79b9_7f4a_7c15)))
}

/// Seed streams.
pub mod stream {
    pub const COHORT: u64 = 0;
    pub const MEMBER: u64 = 1;
    pub const SYMREG: u64 = 2;
}

/// Where the learned reaction network is sampled for distillation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistillGrid {
    /// Quantiles of the concentrations the trained surrogates visit at the
    /// collocation times.
    #[default]
    Visited,
    /// Uniform points on `[0, 1]`.
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DistillConfig {
    pub grid: DistillGrid,
    pub points: usize,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self { grid: DistillGrid::Visited, points: 200 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiscoveryConfig {
    pub pinn: PinnConfig,
    pub symreg: SymregConfig,
    pub distill: DistillConfig,
    /// Root seed.
    pub seed: u64,
}

impl DiscoveryConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        self.pinn.validate()?;
        self.symreg.validate()?;
        if self.distill.points < 2 {
            return Err(PipelineError::Config("distill.points must be at least 2".into()));
        }
        Ok(())
    }

    pub fn member_seeds(&self) -> Vec<u64> {
        (0..self.pinn.ensemble_size as u64).map(|k| split_seed(self.seed, &[stream::MEMBER, k])).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupDiscovery {
    pub label: String,
    pub f_sym: Expression,
    pub f_sym_text: String,
    pub frontier: Vec<Candidate>,
    /// Learned network on the curve grid, after rate normalization.
    pub f_phi: Vec<f64>,
    /// `f_sym` on the curve grid.
    pub f_sym_curve: Vec<f64>,
    /// Number of samples distilled.
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberResult {
    pub seed: u64,
    pub kappa: Vec<f64>,
    pub alpha: Vec<f64>,
    pub groups: Vec<GroupDiscovery>,
    pub final_loss: f64,
    /// `None` when the discovered model could not be integrated.
    pub projection_error: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub projection_failure: Option<String>,
}

impl MemberResult {
    /// Per-subject model built from this member's rates and the subject's
    /// group expression.
    pub fn subject_model(&self, subject: usize, group: usize) -> SubjectModel {
        SubjectModel {
            kappa: self.kappa[subject],
            alpha: self.alpha[subject],
            reaction: self.groups[group].f_sym.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberFailure {
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSummary {
    pub subject: String,
    pub group: String,
    pub kappa_mean: f64,
    pub kappa_sd: f64,
    pub alpha_mean: f64,
    pub alpha_sd: f64,
}

/// Envelope of the members' `f_sym` curves for one group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveBand {
    pub group: String,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    pub best: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscoveryResult {
    pub format_version: u32,
    pub seed: u64,
    pub subjects: Vec<String>,
    /// Group index of each subject.
    pub subject_groups: Vec<usize>,
    pub group_labels: Vec<String>,
    pub c_grid: Vec<f64>,
    pub members: Vec<MemberResult>,
    pub failures: Vec<MemberFailure>,
    /// Index into `members` of the lowest projection error.
    pub best: usize,
    /// Member indices by ascending projection error.
    pub ranking: Vec<usize>,
    pub parameters: Vec<ParameterSummary>,
    pub f_bands: Vec<CurveBand>,
}

impl DiscoveryResult {
    pub fn best_member(&self) -> &MemberResult {
        &self.members[self.best]
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("result serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, PipelineError> {
        let r: Self = serde_json::from_str(text).map_err(|e| PipelineError::Config(format!("result file: {e}")))?;
        if r.format_version != RESULT_FORMAT_VERSION {
            return Err(PipelineError::Config(format!("unsupported result format_version {}", r.format_version)));
        }
        if r.members.is_empty() || r.best >= r.members.len() {
            return Err(PipelineError::Config("result file has no valid best member".into()));
        }
        Ok(r)
    }
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let sd = if xs.len() < 2 { 0.0 } else { (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() };
    (mean, sd)
}

/// `points` order statistics, evenly spaced by rank, of the concentrations
/// the group's surrogates take at their collocation times.
pub fn visited_concentrations(
    problem: &PinnProblem<GraphTemplate>,
    trained: &TrainedPinn,
    group: usize,
    points: usize,
) -> Result<Vec<f64>, PipelineError> {
    let mut values = Vec::new();
    for (i, s) in problem.subjects.iter().enumerate() {
        if s.group == group {
            let c = problem.surrogate_at(&trained.state, i, &problem.collocation_times(i))?;
            values.extend(c.iter().copied().filter(|v| v.is_finite()));
        }
    }
    values.sort_by(f64::total_cmp);
    if values.len() <= points {
        return Ok(values);
    }
    let last = values.len() - 1;
    Ok((0..points).map(|k| values[(k * last + (points - 1) / 2) / (points - 1)]).collect())
}

fn curve(f: &dyn ReactionFn) -> Vec<f64> {
    uniform_grid(CURVE_POINTS).iter().map(|c| f.eval(*c)).collect()
}

fn discover_member(
    problem: &PinnProblem<GraphTemplate>,
    sys: &LaplacianSystem,
    cohort: &Cohort,
    mut trained: TrainedPinn,
    index: u64,
    config: &DiscoveryConfig,
) -> Result<MemberResult, PipelineError> {
    rescale_alpha_f(problem, &mut trained);
    let net = problem.reaction_net();
    let mut groups = Vec::with_capacity(problem.group_labels.len());
    for (g, label) in problem.group_labels.iter().enumerate() {
        let f = trained.reaction(net, g);
        let grid = match config.distill.grid {
            DistillGrid::Visited => visited_concentrations(problem, &trained, g, config.distill.points)?,
            DistillGrid::Uniform => uniform_grid(config.distill.points),
        };
        let (data, _) = sample_function(&f, &grid)?;
        let symreg = SymregConfig {
            seed: split_seed(config.seed, &[stream::SYMREG, config.symreg.seed, index, g as u64]),
            ..config.symreg.clone()
        };
        let candidates = score_frontier(&distill(&data, &symreg)?);
        let chosen = select_candidate(&candidates).expect("frontier is never empty").clone();
        groups.push(GroupDiscovery {
            label: label.clone(),
            f_sym_text: chosen.expression.format_with(&VarNames::Concentration),
            f_sym_curve: curve(&chosen.expression),
            f_sym: chosen.expression,
            frontier: candidates,
            f_phi: curve(&f),
            samples: data.len(),
        });
    }
    let kappa: Vec<f64> = (0..problem.subjects.len()).map(|i| trained.kappa(i)).collect();
    let alpha: Vec<f64> = (0..problem.subjects.len()).map(|i| trained.alpha(i)).collect();
    let mut member = MemberResult {
        seed: trained.seed,
        kappa,
        alpha,
        groups,
        final_loss: trained.final_loss.total,
        projection_error: None,
        projection_failure: None,
    };
    let mut total = 0.0;
    for (i, (s, series)) in cohort.subjects.iter().zip(&problem.subjects).enumerate() {
        match subject_projection_error(sys, s, &member.subject_model(i, series.group)) {
            Ok(e) => total += e,
            Err(e) => {
                member.projection_failure = Some(e.to_string());
                return Ok(member);
            }
        }
    }
    let err = total / cohort.subjects.len() as f64;
    member.projection_error = err.is_finite().then_some(err);
    Ok(member)
}

/// Runs the whole pipeline on `cohort`. Fails only when every member fails.
pub fn discover(sys: &LaplacianSystem, cohort: &Cohort, config: &DiscoveryConfig) -> Result<DiscoveryResult, PipelineError> {
    config.validate()?;
    let problem = PinnProblem::from_cohort(cohort, sys, config.pinn.clone())?;
    let seeds = config.member_seeds();
    let trained = ensemble_train(&problem, &seeds)?;

    let work: Vec<(u64, Result<TrainedPinn, PinnError>)> =
        trained.into_iter().enumerate().map(|(k, m)| (k as u64, m.result)).collect();
    let run = |(k, r): (u64, Result<TrainedPinn, PinnError>)| -> Result<MemberResult, (u64, String)> {
        let seed = seeds[k as usize];
        let t = r.map_err(|e| (seed, e.to_string()))?;
        discover_member(&problem, sys, cohort, t, k, config).map_err(|e| (seed, e.to_string()))
    };
    #[cfg(feature = "parallel")]
    let outcomes: Vec<Result<MemberResult, (u64, String)>> = {
        use rayon::prelude::*;
        work.into_par_iter().map(run).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let outcomes: Vec<Result<MemberResult, (u64, String)>> = work.into_iter().map(run).collect();

    let mut members = Vec::new();
    let mut failures = Vec::new();
    for o in outcomes {
        match o {
            Ok(m) => members.push(m),
            Err((seed, error)) => {
                log::warn!("member with seed {seed} failed: {error}");
                failures.push(MemberFailure { seed, error });
            }
        }
    }
    if members.is_empty() {
        return Err(PinnError::AllMembersFailed(failures.iter().map(|f| format!("seed {}: {}", f.seed, f.error)).collect()).into());
    }
    let errors: Vec<f64> = members.iter().map(|m| m.projection_error.unwrap_or(f64::NAN)).collect();
    let ranking = rank_ensemble(&errors)?;

    let parameters = cohort
        .subjects
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let (kappa_mean, kappa_sd) = mean_sd(&members.iter().map(|m| m.kappa[i]).collect::<Vec<_>>());
            let (alpha_mean, alpha_sd) = mean_sd(&members.iter().map(|m| m.alpha[i]).collect::<Vec<_>>());
            ParameterSummary { subject: s.id.clone(), group: s.group.clone(), kappa_mean, kappa_sd, alpha_mean, alpha_sd }
        })
        .collect();
    let f_bands = problem
        .group_labels
        .iter()
        .enumerate()
        .map(|(g, label)| {
            let curves: Vec<&Vec<f64>> = members.iter().map(|m| &m.groups[g].f_sym_curve).collect();
            let pick = |cmp: fn(f64, f64) -> f64| -> Vec<f64> {
                (0..CURVE_POINTS).map(|k| curves.iter().map(|c| c[k]).fold(curves[0][k], cmp)).collect()
            };
            CurveBand { group: label.clone(), min: pick(f64::min), max: pick(f64::max), best: curves[ranking.best].clone() }
        })
        .collect();

    Ok(DiscoveryResult {
        format_version: RESULT_FORMAT_VERSION,
        seed: config.seed,
        subjects: problem.subjects.iter().map(|s| s.id.clone()).collect(),
        subject_groups: problem.subjects.iter().map(|s| s.group).collect(),
        group_labels: problem.group_labels.clone(),
        c_grid: uniform_grid(CURVE_POINTS),
        best: ranking.best,
        ranking: ranking.order,
        members,
        failures,
        parameters,
        f_bands,
    })
}

/// Models of every subject under one member.
pub fn member_models(result: &DiscoveryResult, member: usize) -> HashMap<String, SubjectModel> {
    let m = &result.members[member];
    result
        .subjects
        .iter()
        .enumerate()
        .map(|(i, id)| (id.clone(), m.subject_model(i, result.subject_groups[i])))
        .collect()
}

/// Least-squares `k` with `f ≈ k g` on a 1001-point grid of `[0, 1]` and the
/// sup-norm of `f - k g` there.
pub fn fit_multiple(f: &dyn ReactionFn, g: &dyn ReactionFn) -> (f64, f64) {
    let grid = uniform_grid(1001);
    let (mut fg, mut gg) = (0.0, 0.0);
    for c in &grid {
        fg += f.eval(*c) * g.eval(*c);
        gg += g.eval(*c).powi(2);
    }
    let k = fg / gg;
    let sup = grid.iter().map(|c| (f.eval(*c) - k * g.eval(*c)).abs()).fold(0.0, f64::max);
    (k, sup)
}

/// Sup-norm of `f - g` on a 1001-point grid of `[lo, hi]`.
pub fn sup_error(f: &dyn ReactionFn, g: &dyn ReactionFn, lo: f64, hi: f64) -> f64 {
    (0..=1000)
        .map(|k| lo + (hi - lo) * k as f64 / 1000.0)
        .map(|c| (f.eval(c) - g.eval(c)).abs())
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationConfig {
    /// Last observation time; observations are at `0, 1, ..., T`.
    pub horizons: Vec<u32>,
    pub modes: Vec<ConstraintMode>,
    /// Ground-truth reaction term, as a benchmark group number.
    pub reaction_group: usize,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self { horizons: vec![2, 4, 6], modes: vec![ConstraintMode::Hard, ConstraintMode::None], reaction_group: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub horizon: u32,
    pub mode: ConstraintMode,
    pub f_sym_text: String,
    /// Sup-norm error of the best member's network on the curve grid.
    pub f_phi_error: f64,
    /// Same restricted to `[0.7, 1]`.
    pub f_phi_error_high: f64,
    /// Largest observed concentration.
    pub max_observed: f64,
    pub projection_error: Option<f64>,
}

/// Runs [`discover`] for every horizon and constraint mode on cohorts drawn
/// with the same seed, so cells differ only in horizon and mode.
pub fn ablate(
    sys: &LaplacianSystem,
    cohort_config: &CohortConfig,
    discovery: &DiscoveryConfig,
    ablation: &AblationConfig,
) -> Result<Vec<AblationCell>, PipelineError> {
    if ablation.horizons.is_empty() || ablation.modes.is_empty() {
        return Err(PipelineError::Config("ablation needs at least one horizon and one mode".into()));
    }
    let truth = benchmark_reaction(ablation.reaction_group)?;
    let mut cells = Vec::new();
    for &h in &ablation.horizons {
        if h == 0 {
            return Err(PipelineError::Config("ablation horizons must be positive".into()));
        }
        let config = CohortConfig {
            reactions: vec![truth.clone()],
            times: (0..=h).map(f64::from).collect(),
            ..cohort_config.clone()
        };
        let cohort = generate_cohort(&config, sys, split_seed(discovery.seed, &[stream::COHORT]))?;
        let max_observed = cohort.subjects.iter().flat_map(|s| s.concentrations.iter().flatten()).fold(0.0, |a: f64, b| a.max(*b));
        for &mode in &ablation.modes {
            let cfg = DiscoveryConfig { pinn: PinnConfig { constraint_mode: mode, ..discovery.pinn.clone() }, ..discovery.clone() };
            let r = discover(sys, &cohort, &cfg)?;
            let best = r.best_member();
            let f_phi = &best.groups[0].f_phi;
            let on = |lo: f64| {
                r.c_grid
                    .iter()
                    .zip(f_phi)
                    .filter(|(c, _)| **c >= lo - 1e-12)
                    .map(|(c, v)| (v - truth.eval1(*c)).abs())
                    .fold(0.0, f64::max)
            };
            cells.push(AblationCell {
                horizon: h,
                mode,
                f_sym_text: best.groups[0].f_sym_text.clone(),
                f_phi_error: on(0.0),
                f_phi_error_high: on(0.7),
                max_observed,
                projection_error: best.projection_error,
            });
        }
    }
    Ok(cells)
}
