use std::collections::VecDeque;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::compiled::Program;
use super::nelder_mead::nelder_mead;
use super::{Dataset, ParetoFrontier, SymregConfig};
use crate::expr::{ExprNode, Expression, OperatorSet};

/// Loss of a fitted expression on a dataset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fit {
    pub mse: f64,
    pub mae: f64,
}

pub(crate) struct Evaluator<'a> {
    data: &'a Dataset,
    stack: Vec<Vec<f64>>,
    out: Vec<f64>,
    kpp: Option<[Vec<f64>; 1]>,
}

impl<'a> Evaluator<'a> {
    pub(crate) fn new(data: &'a Dataset, kpp: bool) -> Self {
        Self {
            data,
            stack: Vec::new(),
            out: Vec::new(),
            kpp: kpp.then(|| [vec![0.0, 1.0]]),
        }
    }

    fn predict(&mut self, program: &Program, constants: &[f64]) {
        program.eval_into(constants, &self.data.columns, &mut self.stack, &mut self.out);
    }

    pub(crate) fn mse(&mut self, program: &Program, constants: &[f64]) -> f64 {
        self.predict(program, constants);
        let n = self.data.targets.len() as f64;
        let s: f64 = self.out.iter().zip(&self.data.targets).map(|(p, t)| (p - t) * (p - t)).sum();
        let mse = s / n;
        if mse.is_finite() { mse } else { f64::INFINITY }
    }

    pub(crate) fn fit(&mut self, program: &Program, constants: &[f64]) -> Fit {
        let mse = self.mse(program, constants);
        let n = self.data.targets.len() as f64;
        let mae = self.out.iter().zip(&self.data.targets).map(|(p, t)| (p - t).abs()).sum::<f64>() / n;
        Fit { mse, mae: if mae.is_finite() { mae } else { f64::INFINITY } }
    }

    /// Whether `f(0)` and `f(1)` vanish, when the boundary penalty is on.
    fn boundary_ok(&mut self, program: &Program, constants: &[f64]) -> bool {
        let Some(cols) = &self.kpp else { return true };
        let mut out = Vec::new();
        program.eval_into(constants, cols, &mut self.stack, &mut out);
        out.iter().all(|v| v.abs() <= 1e-6)
    }
}

#[derive(Debug, Clone)]
struct Individual {
    expr: Expression,
    complexity: u32,
    fit: Fit,
    fitness: f64,
}

/// Tunes the constants of `expr` by Nelder–Mead on the MSE and scores it.
fn evaluate(expr: Expression, config: &SymregConfig, ev: &mut Evaluator, optimize: bool) -> Individual {
    let complexity = expr.complexity(&config.operators);
    let program = Program::compile(&expr);
    let mut constants = program.constants.clone();
    if optimize && !constants.is_empty() && config.constant_opt_evals > 0 {
        let (best, v) = nelder_mead(|k| ev.mse(&program, k), &constants, config.constant_opt_evals);
        if v <= ev.mse(&program, &constants) {
            constants = best;
        }
    }
    let fit = ev.fit(&program, &constants);
    let expr = if optimize { expr.with_constants(&constants) } else { expr };
    let mut fitness = fit.mse + config.parsimony * complexity as f64;
    if !fitness.is_finite() || !ev.boundary_ok(&program, &constants) {
        fitness = f64::INFINITY;
    }
    Individual { expr, complexity, fit, fitness }
}

fn random_leaf(rng: &mut ChaCha8Rng, n_vars: usize) -> ExprNode {
    if rng.random_bool(0.6) {
        ExprNode::var(rng.random_range(0..n_vars))
    } else {
        ExprNode::constant(rng.random_range(-2.0..2.0))
    }
}

fn random_tree(rng: &mut ChaCha8Rng, ops: &OperatorSet, n_vars: usize, depth: usize) -> ExprNode {
    if depth <= 1 || rng.random_bool(0.3) {
        return random_leaf(rng, n_vars);
    }
    if !ops.unary.is_empty() && rng.random_bool(0.2) {
        let (op, _) = *ops.unary.choose(rng).expect("non-empty");
        ExprNode::unary(op, random_tree(rng, ops, n_vars, depth - 1))
    } else {
        let (op, _) = *ops.binary.choose(rng).expect("validated operator set");
        ExprNode::binary(
            op,
            random_tree(rng, ops, n_vars, depth - 1),
            random_tree(rng, ops, n_vars, depth - 1),
        )
    }
}

/// Node `n` in pre-order.
fn nth_mut(node: &mut ExprNode, n: usize) -> &mut ExprNode {
    fn go<'a>(node: &'a mut ExprNode, n: &mut usize) -> Option<&'a mut ExprNode> {
        if *n == 0 {
            return Some(node);
        }
        *n -= 1;
        match node {
            ExprNode::Constant(_) | ExprNode::Variable(_) => None,
            ExprNode::Unary(_, c) => go(c, n),
            ExprNode::Binary(_, l, r) => match go(l, n) {
                Some(x) => Some(x),
                None => go(r, n),
            },
        }
    }
    let mut k = n;
    go(node, &mut k).expect("index within node count")
}

fn random_node<'a>(rng: &mut ChaCha8Rng, root: &'a mut ExprNode) -> &'a mut ExprNode {
    let n = rng.random_range(0..root.node_count());
    nth_mut(root, n)
}

fn constant_indices(root: &ExprNode) -> usize {
    Expression::new(root.clone()).constants().len()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Mutation {
    Constant,
    Operator,
    Swap,
    Insert,
    Delete,
    Subtree,
    Simplify,
    Crossover,
}

fn pick_mutation(rng: &mut ChaCha8Rng, config: &SymregConfig) -> Mutation {
    let w = &config.mutation_weights;
    let table = [
        (Mutation::Constant, w.constant),
        (Mutation::Operator, w.operator),
        (Mutation::Swap, w.swap),
        (Mutation::Insert, w.insert),
        (Mutation::Delete, w.delete),
        (Mutation::Subtree, w.subtree),
        (Mutation::Simplify, w.simplify),
        (Mutation::Crossover, w.crossover),
    ];
    let total: f64 = table.iter().map(|(_, w)| w).sum();
    let mut r = rng.random_range(0.0..total);
    for (m, w) in table {
        if r < w {
            return m;
        }
        r -= w;
    }
    Mutation::Constant
}

fn mutate(
    rng: &mut ChaCha8Rng,
    parent: &ExprNode,
    donor: &ExprNode,
    kind: Mutation,
    config: &SymregConfig,
    n_vars: usize,
) -> ExprNode {
    let ops = &config.operators;
    let mut child = parent.clone();
    match kind {
        Mutation::Constant => {
            let n = constant_indices(&child);
            if n == 0 {
                return mutate(rng, parent, donor, Mutation::Insert, config, n_vars);
            }
            let target = rng.random_range(0..n);
            let e = Expression::new(child);
            let mut ks = e.constants();
            let z: f64 = StandardNormal.sample(rng);
            ks[target] = if rng.random_bool(0.1) { -ks[target] } else { ks[target] * (1.0 + 0.2 * z) + 0.01 * z };
            child = e.with_constants(&ks).into_root();
        }
        Mutation::Operator => {
            let node = random_node(rng, &mut child);
            match node {
                ExprNode::Unary(op, _) => *op = ops.unary.choose(rng).map_or(*op, |(o, _)| *o),
                ExprNode::Binary(op, _, _) => *op = ops.binary.choose(rng).map_or(*op, |(o, _)| *o),
                leaf => *leaf = random_leaf(rng, n_vars),
            }
        }
        Mutation::Swap => {
            let node = random_node(rng, &mut child);
            if let ExprNode::Binary(_, l, r) = node {
                std::mem::swap(l, r);
            } else {
                return mutate(rng, parent, donor, Mutation::Operator, config, n_vars);
            }
        }
        Mutation::Insert => {
            let node = random_node(rng, &mut child);
            let inner = std::mem::replace(node, ExprNode::constant(0.0));
            *node = if !ops.unary.is_empty() && rng.random_bool(0.25) {
                ExprNode::unary(ops.unary.choose(rng).expect("non-empty").0, inner)
            } else {
                let op = ops.binary.choose(rng).expect("validated").0;
                let leaf = random_leaf(rng, n_vars);
                if rng.random_bool(0.5) {
                    ExprNode::binary(op, inner, leaf)
                } else {
                    ExprNode::binary(op, leaf, inner)
                }
            };
        }
        Mutation::Delete => {
            let node = random_node(rng, &mut child);
            let replacement = match node {
                ExprNode::Unary(_, c) => Some((**c).clone()),
                ExprNode::Binary(_, l, r) => Some(if rng.random_bool(0.5) { (**l).clone() } else { (**r).clone() }),
                _ => None,
            };
            match replacement {
                Some(r) => *node = r,
                None => *node = random_leaf(rng, n_vars),
            }
        }
        Mutation::Subtree => {
            let depth = rng.random_range(1..=3);
            let fresh = random_tree(rng, ops, n_vars, depth);
            *random_node(rng, &mut child) = fresh;
        }
        Mutation::Simplify => child = Expression::new(child).simplify().into_root(),
        Mutation::Crossover => {
            let mut d = donor.clone();
            let piece = random_node(rng, &mut d).clone();
            *random_node(rng, &mut child) = piece;
        }
    }
    child
}

/// Regularized evolution: each event picks a tournament winner, mutates it,
/// tunes the child's constants, and replaces the oldest individual.
pub fn evolve(data: &Dataset, config: &SymregConfig) -> ParetoFrontier {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut ev = Evaluator::new(data, config.kpp_penalty);
    let n_vars = data.n_vars();
    let mut frontier = ParetoFrontier::default();
    let record = |frontier: &mut ParetoFrontier, ind: &Individual| {
        if ind.fitness.is_finite() && ind.complexity <= config.max_complexity {
            frontier.offer(ind.expr.clone(), ind.complexity, ind.fit.mse, ind.fit.mae);
        }
    };

    let mut population: VecDeque<Individual> = VecDeque::with_capacity(config.population_size);
    // Seed with every variable and a constant so the simplest fits exist.
    let mut seeds: Vec<ExprNode> = (0..n_vars).map(ExprNode::var).collect();
    seeds.push(ExprNode::constant(1.0));
    while seeds.len() < config.population_size {
        let depth = rng.random_range(2..=4);
        seeds.push(random_tree(&mut rng, &config.operators, n_vars, depth));
    }
    for root in seeds.into_iter().take(config.population_size) {
        let ind = evaluate(Expression::new(root), config, &mut ev, true);
        record(&mut frontier, &ind);
        population.push_back(ind);
    }

    for iteration in 0..config.iterations {
        for _ in 0..config.population_size {
            let parent = tournament(&mut rng, &population, config.tournament_size).expr.root().clone();
            let donor = tournament(&mut rng, &population, config.tournament_size).expr.root().clone();
            let mut child = None;
            for _ in 0..10 {
                let kind = pick_mutation(&mut rng, config);
                let c = Expression::new(mutate(&mut rng, &parent, &donor, kind, config, n_vars));
                if c.complexity(&config.operators) <= config.max_complexity && c.depth() <= config.max_depth {
                    child = Some(c);
                    break;
                }
            }
            let child = child.unwrap_or_else(|| Expression::new(parent));
            let ind = evaluate(child, config, &mut ev, true);
            record(&mut frontier, &ind);
            population.pop_front();
            population.push_back(ind);
        }
        log::debug!(
            "iteration {iteration}: best fitness {:.3e}",
            population.iter().map(|i| i.fitness).fold(f64::INFINITY, f64::min)
        );
    }
    frontier.prune();
    frontier
}

fn tournament<'p>(rng: &mut ChaCha8Rng, population: &'p VecDeque<Individual>, size: usize) -> &'p Individual {
    let mut best: Option<&Individual> = None;
    for _ in 0..size.max(1) {
        let cand = &population[rng.random_range(0..population.len())];
        if best.is_none_or(|b| cand.fitness < b.fitness) {
            best = Some(cand);
        }
    }
    best.expect("non-empty population")
}

/// MSE and MAE of `expr` on `data`, without touching its constants.
pub fn score_expression(expr: &Expression, data: &Dataset) -> Fit {
    let mut ev = Evaluator::new(data, false);
    let p = Program::compile(expr);
    ev.fit(&p, &p.constants)
}
