//! Symbolic distillation of scalar functions by regularized evolution.

mod compiled;
mod evolve;
mod nelder_mead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{Expression, OperatorSet, VarNames};
use crate::graph::ReactionFn;

pub use compiled::Program;
pub use evolve::{evolve, score_expression, Fit};
pub use nelder_mead::nelder_mead;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SymregError {
    #[error("invalid dataset: {0}")]
    Dataset(String),
    #[error("invalid configuration: {0}")]
    Config(String),
}

/// Samples `(x, y)` stored column-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// `columns[i][k]` is variable `i` of sample `k`.
    pub columns: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
}

impl Dataset {
    pub fn new(columns: Vec<Vec<f64>>, targets: Vec<f64>) -> Result<Self, SymregError> {
        if targets.is_empty() {
            return Err(SymregError::Dataset("no samples".into()));
        }
        if columns.is_empty() {
            return Err(SymregError::Dataset("no input variables".into()));
        }
        if columns.iter().any(|c| c.len() != targets.len()) {
            return Err(SymregError::Dataset("input and target lengths differ".into()));
        }
        if columns.iter().flatten().chain(&targets).any(|v| !v.is_finite()) {
            return Err(SymregError::Dataset("non-finite value".into()));
        }
        Ok(Self { columns, targets })
    }

    pub fn one_dim(x: Vec<f64>, y: Vec<f64>) -> Result<Self, SymregError> {
        Self::new(vec![x], y)
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn n_vars(&self) -> usize {
        self.columns.len()
    }
}

/// `n` uniform points on `[0, 1]`.
pub fn uniform_grid(n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.5],
        _ => (0..n).map(|k| k as f64 / (n - 1) as f64).collect(),
    }
}

/// Evaluates `f` on `grid`, dropping points where it is not finite.
/// Returns the dataset and the number of dropped points.
pub fn sample_function(f: &dyn ReactionFn, grid: &[f64]) -> Result<(Dataset, usize), SymregError> {
    let (mut xs, mut ys) = (Vec::with_capacity(grid.len()), Vec::with_capacity(grid.len()));
    for &c in grid {
        let y = f.eval(c);
        if y.is_finite() && c.is_finite() {
            xs.push(c);
            ys.push(y);
        }
    }
    let dropped = grid.len() - xs.len();
    if dropped > 0 {
        log::warn!("dropped {dropped} non-finite samples");
    }
    Ok((Dataset::one_dim(xs, ys)?, dropped))
}

/// Relative frequencies of the mutation kinds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MutationWeights {
    pub constant: f64,
    pub operator: f64,
    pub swap: f64,
    pub insert: f64,
    pub delete: f64,
    pub subtree: f64,
    pub simplify: f64,
    pub crossover: f64,
}

impl Default for MutationWeights {
    fn default() -> Self {
        Self {
            constant: 0.25,
            operator: 0.1,
            swap: 0.05,
            insert: 0.2,
            delete: 0.15,
            subtree: 0.1,
            simplify: 0.05,
            crossover: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SymregConfig {
    pub operators: OperatorSet,
    /// Each iteration performs `population_size` mutation events.
    pub iterations: usize,
    pub population_size: usize,
    pub tournament_size: usize,
    pub mutation_weights: MutationWeights,
    pub max_complexity: u32,
    pub max_depth: usize,
    /// Fitness penalty per unit of complexity.
    pub parsimony: f64,
    /// Nelder–Mead evaluation budget per constant optimization.
    pub constant_opt_evals: usize,
    /// Reject candidates with `|f(0)|` or `|f(1)|` above 1e-6.
    pub kpp_penalty: bool,
    pub seed: u64,
}

impl Default for SymregConfig {
    fn default() -> Self {
        Self {
            operators: OperatorSet::default(),
            iterations: 100,
            population_size: 200,
            tournament_size: 10,
            mutation_weights: MutationWeights::default(),
            max_complexity: 30,
            max_depth: 10,
            parsimony: 1e-4,
            constant_opt_evals: 100,
            kpp_penalty: false,
            seed: 0,
        }
    }
}

impl SymregConfig {
    pub fn validate(&self) -> Result<(), SymregError> {
        self.operators.validate().map_err(SymregError::Config)?;
        if self.iterations == 0 {
            return Err(SymregError::Config("iterations must be at least 1".into()));
        }
        if self.population_size < 2 || self.tournament_size == 0 {
            return Err(SymregError::Config("population_size must be ≥ 2 and tournament_size ≥ 1".into()));
        }
        if self.max_complexity == 0 || self.max_depth == 0 {
            return Err(SymregError::Config("max_complexity and max_depth must be positive".into()));
        }
        if !(self.parsimony >= 0.0 && self.parsimony.is_finite()) {
            return Err(SymregError::Config("parsimony must be non-negative".into()));
        }
        let w = &self.mutation_weights;
        let ws = [w.constant, w.operator, w.swap, w.insert, w.delete, w.subtree, w.simplify, w.crossover];
        if ws.iter().any(|v| !(*v >= 0.0 && v.is_finite())) || ws.iter().sum::<f64>() <= 0.0 {
            return Err(SymregError::Config("mutation weights must be non-negative with a positive sum".into()));
        }
        Ok(())
    }
}

/// Validates `config` and runs [`evolve`].
pub fn distill(data: &Dataset, config: &SymregConfig) -> Result<ParetoFrontier, SymregError> {
    config.validate()?;
    if data.is_empty() {
        return Err(SymregError::Dataset("no samples".into()));
    }
    Ok(evolve(data, config))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontierEntry {
    pub complexity: u32,
    pub expression: Expression,
    pub mse: f64,
    pub mae: f64,
}

/// Best expression found at each complexity, sorted by complexity.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParetoFrontier {
    entries: Vec<FrontierEntry>,
}

impl ParetoFrontier {
    pub fn entries(&self) -> &[FrontierEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Keeps `expression` if it beats the stored MSE at its complexity.
    pub fn offer(&mut self, expression: Expression, complexity: u32, mse: f64, mae: f64) {
        if !mse.is_finite() {
            return;
        }
        let entry = FrontierEntry { complexity, expression, mse, mae };
        match self.entries.binary_search_by_key(&complexity, |e| e.complexity) {
            Ok(i) => {
                if mse < self.entries[i].mse {
                    self.entries[i] = entry;
                }
            }
            Err(i) => self.entries.insert(i, entry),
        }
    }

    /// Drops entries that do not strictly improve on every simpler entry.
    pub fn prune(&mut self) {
        let mut best = f64::INFINITY;
        self.entries.retain(|e| {
            let keep = e.mse < best;
            if keep {
                best = e.mse;
            }
            keep
        });
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub expression: Expression,
    pub complexity: u32,
    pub mse: f64,
    pub mae: f64,
    pub score: f64,
}

const MAE_FLOOR: f64 = 1e-12;

/// `score = -Δ ln(MAE) / ΔC` between consecutive frontier entries; the
/// simplest entry scores 0.
pub fn score_frontier(frontier: &ParetoFrontier) -> Vec<Candidate> {
    let mut out: Vec<Candidate> = Vec::with_capacity(frontier.len());
    for e in frontier.entries() {
        let score = match out.last() {
            None => 0.0,
            Some(prev) => {
                let dl = e.mae.max(MAE_FLOOR).ln() - prev.mae.max(MAE_FLOOR).ln();
                -dl / (e.complexity as f64 - prev.complexity as f64)
            }
        };
        out.push(Candidate {
            expression: e.expression.clone(),
            complexity: e.complexity,
            mse: e.mse,
            mae: e.mae,
            score,
        });
    }
    out
}

/// Highest score among candidates with MSE at most 1.5 times the smallest;
/// ties go to lower complexity, then lower MSE.
pub fn select_candidate(candidates: &[Candidate]) -> Option<&Candidate> {
    let min = candidates.iter().map(|c| c.mse).fold(f64::INFINITY, f64::min);
    candidates
        .iter()
        .filter(|c| c.mse <= 1.5 * min)
        .min_by(|a, b| {
            b.score
                .total_cmp(&a.score)
                .then(a.complexity.cmp(&b.complexity))
                .then(a.mse.total_cmp(&b.mse))
        })
}

/// The `k` highest-scoring candidates, best first, with the same tie rules
/// as [`select_candidate`].
pub fn top_by_score(candidates: &[Candidate], k: usize) -> Vec<Candidate> {
    let mut sorted = candidates.to_vec();
    sorted.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(a.complexity.cmp(&b.complexity))
            .then(a.mse.total_cmp(&b.mse))
    });
    sorted.truncate(k);
    sorted
}

/// CSV with columns `complexity,mse,mae,score,expression`.
pub fn frontier_csv(candidates: &[Candidate], names: &VarNames) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["complexity", "mse", "mae", "score", "expression"]).expect("in-memory write");
    for c in candidates {
        w.write_record([
            c.complexity.to_string(),
            c.mse.to_string(),
            c.mae.to_string(),
            c.score.to_string(),
            c.expression.format_with(names),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
}
