//! Graph Laplacians, the network reaction-diffusion system, and synthetic
//! cohorts.

mod laplacian;
pub mod ode;

use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{ExprNode, Expression};

pub use laplacian::{LaplacianSystem, LAPLACIAN_FORMAT_VERSION};
pub use ode::{dopri5, OdeOptions};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("validation error: {0}")]
    Validation(String),
    #[error("integration failed at t = {time}: {reason}")]
    Integration { time: f64, reason: String },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("i/o error: {0}")]
    Io(String),
}

/// A scalar reaction term `f(c)`.
pub trait ReactionFn {
    fn eval(&self, c: f64) -> f64;
}

impl ReactionFn for Expression {
    fn eval(&self, c: f64) -> f64 {
        self.eval1(c)
    }
}

impl<F: Fn(f64) -> f64> ReactionFn for F {
    fn eval(&self, c: f64) -> f64 {
        self(c)
    }
}

/// Errors unless `f` is finite on a 1001-point grid over `[0, 1]`.
pub fn check_finite_on_unit(f: &dyn ReactionFn) -> Result<(), GraphError> {
    for k in 0..=1000 {
        let c = k as f64 / 1000.0;
        let v = f.eval(c);
        if !v.is_finite() {
            return Err(GraphError::Validation(format!("reaction term is {v} at c = {c}")));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectParams {
    pub kappa: f64,
    pub alpha: f64,
    pub c0: Vec<f64>,
}

/// `out_i = -κ (L c)_i + α f(c_i)`.
pub fn rhs(sys: &LaplacianSystem, kappa: f64, alpha: f64, f: &dyn ReactionFn, c: &[f64], out: &mut [f64]) {
    sys.apply(c, out);
    for (o, ci) in out.iter_mut().zip(c) {
        *o = -kappa * *o + alpha * f.eval(*ci);
    }
}

/// Solution sampled on `t_grid`, one row per time.
pub fn integrate(
    sys: &LaplacianSystem,
    params: &SubjectParams,
    f: &dyn ReactionFn,
    t_grid: &[f64],
) -> Result<Array2<f64>, GraphError> {
    integrate_with(sys, params, f, t_grid, &OdeOptions::default())
}

pub fn integrate_with(
    sys: &LaplacianSystem,
    params: &SubjectParams,
    f: &dyn ReactionFn,
    t_grid: &[f64],
    opts: &OdeOptions,
) -> Result<Array2<f64>, GraphError> {
    let n = sys.n();
    if params.c0.len() != n {
        return Err(GraphError::Validation(format!(
            "initial state has {} entries for {n} nodes",
            params.c0.len()
        )));
    }
    let rows = dopri5(
        |_, c, out| rhs(sys, params.kappa, params.alpha, f, c, out),
        &params.c0,
        t_grid,
        opts,
    )?;
    Ok(Array2::from_shape_vec((rows.len(), n), rows.into_iter().flatten().collect()).expect("row lengths"))
}

/// The four normalized reaction terms of the synthetic benchmark, each with
/// `f(0) = f(1) = 0` and maximum 1/4 on `[0, 1]`:
///
/// 1. `c(1 - c)`
/// 2. `(3√3/8) c(1 - c²)`
/// 3. `(2^(2/3)/3) c(1 - c³)`
/// 4. `((√5 + 2)/4) c(1 - c) exp(c - 1 - (√5 - 3)/2)`
pub fn benchmark_reaction(group: usize) -> Result<Expression, GraphError> {
    let c = || ExprNode::var(0);
    let one_minus_pow = |q: usize| {
        let mut p = c();
        for _ in 1..q {
            p = ExprNode::mul(p, c());
        }
        ExprNode::sub(ExprNode::constant(1.0), p)
    };
    let root = match group {
        1 => ExprNode::mul(c(), one_minus_pow(1)),
        2 => ExprNode::mul(
            ExprNode::constant(3.0 * 3f64.sqrt() / 8.0),
            ExprNode::mul(c(), one_minus_pow(2)),
        ),
        3 => ExprNode::mul(
            ExprNode::constant(2f64.powf(2.0 / 3.0) / 3.0),
            ExprNode::mul(c(), one_minus_pow(3)),
        ),
        4 => {
            let s5 = 5f64.sqrt();
            ExprNode::mul(
                ExprNode::constant((s5 + 2.0) / 4.0),
                ExprNode::mul(
                    ExprNode::mul(c(), one_minus_pow(1)),
                    ExprNode::exp(ExprNode::add(c(), ExprNode::constant(-1.0 - (s5 - 3.0) / 2.0))),
                ),
            )
        }
        _ => return Err(GraphError::Validation(format!("reaction group must be 1..4, got {group}"))),
    };
    Ok(Expression::new(root))
}

pub const COHORT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subject {
    pub id: String,
    pub group: String,
    pub times: Vec<f64>,
    /// One row per observation time.
    pub concentrations: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
}

impl Subject {
    pub fn first_observation(&self) -> &[f64] {
        &self.concentrations[0]
    }

    pub fn last_time(&self) -> f64 {
        *self.times.last().expect("validated subject has observations")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Cohort {
    pub format_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node_labels: Option<Vec<String>>,
    pub subjects: Vec<Subject>,
}

impl Cohort {
    pub fn new(subjects: Vec<Subject>) -> Self {
        Self { format_version: COHORT_FORMAT_VERSION, node_labels: None, subjects }
    }

    /// Node count shared by every observation.
    pub fn n_nodes(&self) -> usize {
        self.subjects.first().map_or(0, |s| s.concentrations.first().map_or(0, Vec::len))
    }

    /// Group labels in order of first appearance.
    pub fn groups(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for s in &self.subjects {
            if !out.contains(&s.group) {
                out.push(s.group.clone());
            }
        }
        out
    }

    pub fn subject(&self, id: &str) -> Option<&Subject> {
        self.subjects.iter().find(|s| s.id == id)
    }

    pub fn validate(&self) -> Result<(), GraphError> {
        if self.format_version != COHORT_FORMAT_VERSION {
            return Err(GraphError::Validation(format!(
                "unsupported cohort format_version {}",
                self.format_version
            )));
        }
        if self.subjects.is_empty() {
            return Err(GraphError::Validation("cohort has no subjects".into()));
        }
        let n = self.n_nodes();
        if n == 0 {
            return Err(GraphError::Validation("observations have no nodes".into()));
        }
        if let Some(l) = &self.node_labels {
            if l.len() != n {
                return Err(GraphError::Validation(format!("{} node labels for {n} nodes", l.len())));
            }
        }
        let mut ids = std::collections::HashSet::new();
        for s in &self.subjects {
            if !ids.insert(&s.id) {
                return Err(GraphError::Validation(format!("duplicate subject id {}", s.id)));
            }
            if s.times.len() < 2 {
                return Err(GraphError::Validation(format!("subject {} has fewer than 2 observations", s.id)));
            }
            if s.times.len() != s.concentrations.len() {
                return Err(GraphError::Validation(format!(
                    "subject {}: {} times but {} observation rows",
                    s.id,
                    s.times.len(),
                    s.concentrations.len()
                )));
            }
            if s.times.windows(2).any(|w| !(w[1] > w[0])) {
                return Err(GraphError::Validation(format!("subject {}: times not increasing", s.id)));
            }
            for row in &s.concentrations {
                if row.len() != n {
                    return Err(GraphError::Validation(format!("subject {}: row has {} nodes, expected {n}", s.id, row.len())));
                }
                if row.iter().any(|v| !(0.0..=1.0).contains(v)) {
                    return Err(GraphError::Validation(format!("subject {}: concentration outside [0, 1]", s.id)));
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("cohort serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, GraphError> {
        let c: Cohort = serde_json::from_str(text).map_err(|e| GraphError::Parse(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, GraphError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| GraphError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: &Path) -> Result<(), GraphError> {
        std::fs::write(path, self.to_json()).map_err(|e| GraphError::Io(format!("{}: {e}", path.display())))
    }
}

/// Parameters of the synthetic cohort generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CohortConfig {
    /// One reaction term per group.
    pub reactions: Vec<Expression>,
    pub subjects_per_group: usize,
    pub times: Vec<f64>,
    /// κ ~ Normal(mean, sd²) truncated to (0, ∞).
    pub kappa_mean: f64,
    pub kappa_sd: f64,
    /// Group rate α_i ~ Normal(mean, sd²).
    pub alpha_group_mean: f64,
    pub alpha_group_sd: f64,
    /// Subject rate α_ij ~ Normal(α_i, sd²).
    pub alpha_subject_sd: f64,
    /// Per-node initial concentration ~ Normal(mean, sd²) clipped to [0, 1].
    pub c0_mean: f64,
    pub c0_sd: f64,
    pub noise_sd: f64,
}

impl Default for CohortConfig {
    fn default() -> Self {
        Self {
            reactions: (1..=4).map(|g| benchmark_reaction(g).expect("valid group")).collect(),
            subjects_per_group: 19,
            times: vec![0.0, 1.0, 2.0],
            kappa_mean: 1.0,
            kappa_sd: 0.5,
            alpha_group_mean: 0.6,
            alpha_group_sd: 0.1,
            alpha_subject_sd: 0.2,
            c0_mean: 0.05,
            c0_sd: 0.05,
            noise_sd: 0.0,
        }
    }
}

impl CohortConfig {
    pub fn validate(&self) -> Result<(), GraphError> {
        if self.reactions.is_empty() {
            return Err(GraphError::Validation("at least one group is required".into()));
        }
        if self.subjects_per_group == 0 {
            return Err(GraphError::Validation("subjects_per_group must be positive".into()));
        }
        if self.times.len() < 2 || self.times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(GraphError::Validation("times must hold at least 2 increasing values".into()));
        }
        for (name, v) in [
            ("kappa_sd", self.kappa_sd),
            ("alpha_group_sd", self.alpha_group_sd),
            ("alpha_subject_sd", self.alpha_subject_sd),
            ("c0_sd", self.c0_sd),
            ("noise_sd", self.noise_sd),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(GraphError::Validation(format!("{name} must be a finite non-negative number")));
            }
        }
        for f in &self.reactions {
            check_finite_on_unit(f)?;
        }
        Ok(())
    }
}

/// Draws from Normal(mean, sd²) conditioned on being positive.
pub fn sample_positive_normal(rng: &mut impl Rng, mean: f64, sd: f64) -> f64 {
    if sd == 0.0 {
        return mean;
    }
    let d = Normal::new(mean, sd).expect("finite sd");
    loop {
        let x = d.sample(rng);
        if x > 0.0 {
            return x;
        }
    }
}

fn normal(rng: &mut impl Rng, mean: f64, sd: f64) -> f64 {
    if sd == 0.0 {
        mean
    } else {
        Normal::new(mean, sd).expect("finite sd").sample(rng)
    }
}

/// Simulates a cohort on `sys`. Subject ids are `g{group}-s{index}` and
/// group labels `"1"`, `"2"`, ... in configuration order.
pub fn generate_cohort(config: &CohortConfig, sys: &LaplacianSystem, seed: u64) -> Result<Cohort, GraphError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = sys.n();
    let mut subjects = Vec::new();
    for (gi, f) in config.reactions.iter().enumerate() {
        let alpha_group = normal(&mut rng, config.alpha_group_mean, config.alpha_group_sd);
        for si in 0..config.subjects_per_group {
            let kappa = sample_positive_normal(&mut rng, config.kappa_mean, config.kappa_sd);
            let alpha = normal(&mut rng, alpha_group, config.alpha_subject_sd);
            let c0: Vec<f64> = (0..n)
                .map(|_| normal(&mut rng, config.c0_mean, config.c0_sd).clamp(0.0, 1.0))
                .collect();
            let params = SubjectParams { kappa, alpha, c0 };
            let traj = integrate(sys, &params, f, &config.times)?;
            let concentrations = traj
                .rows()
                .into_iter()
                .map(|row| {
                    row.iter()
                        .map(|v| (v + normal(&mut rng, 0.0, config.noise_sd)).clamp(0.0, 1.0))
                        .collect()
                })
                .collect();
            subjects.push(Subject {
                id: format!("g{}-s{}", gi + 1, si),
                group: (gi + 1).to_string(),
                times: config.times.clone(),
                concentrations,
                kappa: Some(kappa),
                alpha: Some(alpha),
            });
        }
    }
    let mut cohort = Cohort::new(subjects);
    cohort.node_labels = sys.labels().map(<[String]>::to_vec);
    cohort.validate()?;
    Ok(cohort)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn fisher() -> Expression {
        benchmark_reaction(1).unwrap()
    }

    fn max_on_unit(f: &Expression) -> f64 {
        let (mut best, mut arg) = (f64::MIN, 0.0);
        for k in 0..=1000 {
            let c = k as f64 / 1000.0;
            if f.eval1(c) > best {
                best = f.eval1(c);
                arg = c;
            }
        }
        // Golden-section refinement around the grid maximum.
        let (mut a, mut b) = ((arg - 1e-3f64).max(0.0), (arg + 1e-3f64).min(1.0));
        let r = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..100 {
            let x1 = b - r * (b - a);
            let x2 = a + r * (b - a);
            if f.eval1(x1) < f.eval1(x2) {
                a = x1;
            } else {
                b = x2;
            }
        }
        f.eval1(0.5 * (a + b)).max(best)
    }

    #[test]
    fn benchmark_terms_are_normalized() {
        for g in 1..=4 {
            let f = benchmark_reaction(g).unwrap();
            assert_eq!(f.eval1(0.0), 0.0, "group {g}");
            assert_eq!(f.eval1(1.0), 0.0, "group {g}");
            assert!((max_on_unit(&f) - 0.25).abs() <= 1e-6, "group {g}: {}", max_on_unit(&f));
        }
        assert_eq!(fisher().eval1(0.5), 0.25);
        let f2 = benchmark_reaction(2).unwrap();
        assert!((f2.eval1(1.0 / 3f64.sqrt()) - 0.25).abs() < 1e-15);
        assert!(benchmark_reaction(5).is_err());
    }

    #[test]
    fn rhs_examples() {
        let sys = LaplacianSystem::random(6, 0.5, (0.5, 1.5), 1);
        let c = [0.1, 0.7, 0.3, 0.0, 1.0, 0.4];
        let mut out = [0.0; 6];
        let zero = |_: f64| 0.0;
        rhs(&sys, 1.3, 0.8, &zero, &c, &mut out);
        assert!(out.iter().sum::<f64>().abs() < 1e-12);
        rhs(&sys, 1.3, 0.8, &fisher(), &[0.5; 6], &mut out);
        for o in out {
            assert!((o - 0.8 * 0.25).abs() < 1e-12);
        }
        rhs(&sys, 0.0, 2.0, &fisher(), &[0.5; 6], &mut out);
        assert!(out.iter().all(|o| (o - 0.5).abs() < 1e-15));
    }

    #[test]
    fn logistic_closed_form() {
        let sys = LaplacianSystem::from_weights(&array![[0.0]]).unwrap();
        let p = SubjectParams { kappa: 3.0, alpha: 1.0, c0: vec![0.5] };
        let traj = integrate(&sys, &p, &fisher(), &[0.0, 1.0, 2.0]).unwrap();
        assert!((traj[[2, 0]] - 0.880797).abs() <= 1e-6);
        assert!((traj[[2, 0]] - 1.0 / (1.0 + (-2f64).exp())).abs() <= 1e-8);
    }

    #[test]
    fn logistic_matches_rk4_oracle() {
        let f = fisher();
        let sys = LaplacianSystem::from_weights(&array![[0.0]]).unwrap();
        let p = SubjectParams { kappa: 0.0, alpha: 1.0, c0: vec![0.5] };
        let traj = integrate(&sys, &p, &f, &[0.0, 2.0]).unwrap();
        let oracle = ode::rk4_fixed(|_, y, d| d[0] = f.eval1(y[0]), &[0.5], 0.0, 2.0, 1e-4);
        assert!((traj[[1, 0]] - oracle[0]).abs() <= 1e-6);
    }

    #[test]
    fn zero_is_a_fixed_point() {
        let sys = LaplacianSystem::random(5, 0.5, (0.5, 1.5), 3);
        let p = SubjectParams { kappa: 1.0, alpha: 1.0, c0: vec![0.0; 5] };
        let traj = integrate(&sys, &p, &fisher(), &[0.0, 1.0, 5.0]).unwrap();
        assert!(traj.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn two_node_diffusion_gap_decays() {
        let sys = LaplacianSystem::from_weights(&array![[0.0, 1.0], [1.0, 0.0]]).unwrap();
        let p = SubjectParams { kappa: 1.0, alpha: 0.0, c0: vec![1.0, 0.0] };
        let zero = |_: f64| 0.0;
        let traj = integrate(&sys, &p, &zero, &[0.0, 0.5, 1.0]).unwrap();
        assert!((traj[[2, 0]] - traj[[2, 1]] - 0.135335).abs() <= 1e-6);
        assert!((traj[[1, 0]] - traj[[1, 1]] - (-1f64).exp()).abs() <= 1e-8);
    }

    #[test]
    fn diffusion_conserves_mass() {
        let sys = LaplacianSystem::random(10, 0.3, (0.5, 1.5), 8);
        let c0: Vec<f64> = (0..10).map(|i| (i as f64 * 0.37).sin().abs()).collect();
        let total: f64 = c0.iter().sum();
        let p = SubjectParams { kappa: 2.0, alpha: 0.0, c0 };
        let grid: Vec<f64> = (0..=20).map(|i| i as f64 * 0.5).collect();
        let traj = integrate(&sys, &p, &|_: f64| 0.0, &grid).unwrap();
        for row in traj.rows() {
            assert!((row.sum() - total).abs() <= 1e-8);
        }
    }

    #[test]
    fn tighter_tolerance_changes_little() {
        let sys = LaplacianSystem::random(8, 0.4, (0.5, 1.5), 2);
        let p = SubjectParams { kappa: 1.0, alpha: 0.7, c0: vec![0.05; 8] };
        let grid = [0.0, 10.0];
        let coarse = integrate(&sys, &p, &fisher(), &grid).unwrap();
        let fine_opts = OdeOptions { rtol: 5e-9, atol: 5e-11, ..OdeOptions::default() };
        let fine = integrate_with(&sys, &p, &fisher(), &grid, &fine_opts).unwrap();
        for (a, b) in coarse.row(1).iter().zip(fine.row(1)) {
            assert!((a - b).abs() <= 1e-8 * a.abs().max(1.0));
        }
    }

    #[test]
    fn default_cohort_shape_and_determinism() {
        let sys = LaplacianSystem::random(10, 0.3, (0.5, 1.5), 0);
        let cohort = generate_cohort(&CohortConfig::default(), &sys, 5).unwrap();
        assert_eq!(cohort.subjects.len(), 76);
        assert_eq!(cohort.groups(), vec!["1", "2", "3", "4"]);
        for g in cohort.groups() {
            assert_eq!(cohort.subjects.iter().filter(|s| s.group == g).count(), 19);
        }
        assert!(cohort.subjects.iter().all(|s| s.times == vec![0.0, 1.0, 2.0]));
        assert!(cohort.subjects.iter().all(|s| s.kappa.unwrap() > 0.0));
        assert_eq!(cohort, generate_cohort(&CohortConfig::default(), &sys, 5).unwrap());
        assert_eq!(Cohort::from_json(&cohort.to_json()).unwrap(), cohort);
    }

    #[test]
    fn cohort_validation() {
        let sys = LaplacianSystem::random(4, 0.5, (0.5, 1.5), 0);
        let bad = CohortConfig { subjects_per_group: 0, ..CohortConfig::default() };
        assert!(generate_cohort(&bad, &sys, 0).is_err());
        let inf = CohortConfig { reactions: vec!["1/c".parse().unwrap()], ..CohortConfig::default() };
        assert!(generate_cohort(&inf, &sys, 0).is_err());

        let mut c = generate_cohort(&CohortConfig { subjects_per_group: 1, ..CohortConfig::default() }, &sys, 0).unwrap();
        c.subjects[0].concentrations[1][0] = 1.5;
        assert!(c.validate().is_err());
        assert!(Cohort::from_json(r#"{"format_version": 1, "subjects": [], "extra": 1}"#).is_err());
    }

    /// Mean of Normal(1, 0.5²) truncated to (0, ∞) by trapezoid quadrature.
    fn truncated_mean_oracle(mu: f64, sd: f64) -> f64 {
        let pdf = |x: f64| (-(x - mu).powi(2) / (2.0 * sd * sd)).exp();
        let (mut num, mut den) = (0.0, 0.0);
        let h = 1e-4;
        let steps = ((mu + 12.0 * sd) / h) as usize;
        for k in 0..=steps {
            let x = k as f64 * h;
            let w = if k == 0 || k == steps { 0.5 } else { 1.0 };
            num += w * x * pdf(x);
            den += w * pdf(x);
        }
        num / den
    }

    #[test]
    fn kappa_sampler_matches_truncated_mean() {
        let m = truncated_mean_oracle(1.0, 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mean = (0..10_000).map(|_| sample_positive_normal(&mut rng, 1.0, 0.5)).sum::<f64>() / 10_000.0;
        assert!(mean >= 0.95 * m && mean <= 1.05 * m, "{mean} vs {m}");
    }

    #[test]
    fn laplacian_is_positive_semidefinite() {
        for seed in 0..5 {
            let sys = LaplacianSystem::random(10, 0.3, (0.5, 1.5), seed);
            let m = nalgebra::DMatrix::from_row_slice(10, 10, sys.matrix().as_slice().unwrap());
            let eig = m.symmetric_eigen();
            assert!(eig.eigenvalues.min() >= -1e-10);
        }
    }
}
