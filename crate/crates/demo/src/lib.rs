//! Browser bindings: inspect a reaction term, simulate it on a random
//! graph, and recover it with symbolic regression. Every function returns a
//! JSON string.

use kppfind::expr::{Expression, VarNames};
use kppfind::graph::{integrate, LaplacianSystem, SubjectParams};
use kppfind::symreg::{distill, sample_function, score_frontier, select_candidate, uniform_grid, SymregConfig};
use serde::Serialize;
use wasm_bindgen::prelude::*;

const CURVE_POINTS: usize = 101;

fn parse(text: &str) -> Result<Expression, String> {
    let e: Expression = text.parse().map_err(|e| format!("{e}"))?;
    if e.arity() > 1 {
        return Err("a reaction term may only use the variable c".into());
    }
    Ok(e)
}

fn to_json(v: &impl Serialize) -> String {
    serde_json::to_string(v).expect("serializable")
}

#[derive(Debug, Serialize)]
pub struct Analysis {
    pub simplified: String,
    pub f0: f64,
    pub f1: f64,
    pub max: f64,
    pub argmax: f64,
    /// `f(0) = f(1) = 0` and `f > 0` inside the grid.
    pub kpp: bool,
    pub c: Vec<f64>,
    pub f: Vec<f64>,
}

pub fn analysis(text: &str) -> Result<Analysis, String> {
    let e = parse(text)?;
    let c = uniform_grid(CURVE_POINTS);
    let f: Vec<f64> = c.iter().map(|&x| e.eval1(x)).collect();
    if f.iter().any(|v| !v.is_finite()) {
        return Err("the term is not finite on [0, 1]".into());
    }
    let (k, max) = f.iter().enumerate().fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
    let inner = &f[1..CURVE_POINTS - 1];
    Ok(Analysis {
        simplified: e.simplify().format_with(&VarNames::Concentration),
        f0: f[0],
        f1: f[CURVE_POINTS - 1],
        max,
        argmax: c[k],
        kpp: f[0].abs() <= 1e-9 && f[CURVE_POINTS - 1].abs() <= 1e-9 && inner.iter().all(|v| *v > 0.0),
        c,
        f,
    })
}

/// Simplified form, boundary values, maximum, and a 101-point curve of a
/// reaction term.
#[wasm_bindgen]
pub fn analyze_reaction(text: &str) -> Result<String, String> {
    analysis(text).map(|a| to_json(&a))
}

#[derive(Debug, Serialize)]
pub struct Simulation {
    pub times: Vec<f64>,
    /// One series per node.
    pub nodes: Vec<Vec<f64>>,
    pub edges: usize,
}

pub fn simulation(
    reaction: &str,
    nodes: usize,
    edge_prob: f64,
    seed: u32,
    kappa: f64,
    alpha: f64,
    horizon: f64,
) -> Result<Simulation, String> {
    if !(2..=60).contains(&nodes) {
        return Err("nodes must be between 2 and 60".into());
    }
    if !(0.0..=1.0).contains(&edge_prob) || !(horizon > 0.0 && horizon <= 200.0) {
        return Err("edge probability must lie in [0, 1] and horizon in (0, 200]".into());
    }
    let f = parse(reaction)?;
    let sys = LaplacianSystem::random(nodes, edge_prob, (0.5, 1.5), u64::from(seed));
    let edges = sys.matrix().iter().filter(|v| **v < 0.0).count() / 2;
    // Seeded at node 0, as from a single epicenter.
    let mut c0 = vec![0.0; nodes];
    c0[0] = 0.3;
    let times: Vec<f64> = (0..=200).map(|k| horizon * k as f64 / 200.0).collect();
    let traj = integrate(&sys, &SubjectParams { kappa, alpha, c0 }, &f, &times).map_err(|e| e.to_string())?;
    Ok(Simulation { nodes: traj.columns().into_iter().map(|c| c.to_vec()).collect(), times, edges })
}

/// Trajectories of `dc/dt = -κ L c + α f(c)` on a random graph.
#[wasm_bindgen]
pub fn simulate_graph(
    reaction: &str,
    nodes: u32,
    edge_prob: f64,
    seed: u32,
    kappa: f64,
    alpha: f64,
    horizon: f64,
) -> Result<String, String> {
    simulation(reaction, nodes as usize, edge_prob, seed, kappa, alpha, horizon).map(|s| to_json(&s))
}

#[derive(Debug, Serialize)]
pub struct FrontierRow {
    pub complexity: u32,
    pub mae: f64,
    pub score: f64,
    pub expression: String,
    pub selected: bool,
}

#[derive(Debug, Serialize)]
pub struct Recovery {
    pub frontier: Vec<FrontierRow>,
    pub c: Vec<f64>,
    pub target: Vec<f64>,
    pub recovered: Vec<f64>,
}

pub fn recovery(reaction: &str, iterations: u32, seed: u32) -> Result<Recovery, String> {
    if !(1..=200).contains(&iterations) {
        return Err("iterations must be between 1 and 200".into());
    }
    let f = parse(reaction)?;
    let (data, _) = sample_function(&f, &uniform_grid(40)).map_err(|e| e.to_string())?;
    let config = SymregConfig {
        iterations: iterations as usize,
        population_size: 60,
        seed: u64::from(seed),
        ..SymregConfig::default()
    };
    let candidates = score_frontier(&distill(&data, &config).map_err(|e| e.to_string())?);
    let chosen = select_candidate(&candidates).ok_or("empty frontier")?.expression.clone();
    let c = uniform_grid(CURVE_POINTS);
    Ok(Recovery {
        frontier: candidates
            .iter()
            .map(|k| FrontierRow {
                complexity: k.complexity,
                mae: k.mae,
                score: k.score,
                expression: k.expression.format_with(&VarNames::Concentration),
                selected: k.expression == chosen,
            })
            .collect(),
        target: c.iter().map(|&x| f.eval1(x)).collect(),
        recovered: c.iter().map(|&x| chosen.eval1(x)).collect(),
        c,
    })
}

/// Samples a reaction term on [0, 1] and searches for it again, returning
/// the scored Pareto frontier and the selected expression's curve.
#[wasm_bindgen]
pub fn recover_reaction(reaction: &str, iterations: u32, seed: u32) -> Result<String, String> {
    recovery(reaction, iterations, seed).map(|r| to_json(&r))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fisher_analysis() {
        let a = analysis("c*(1 - c)").unwrap();
        assert!(a.kpp);
        assert_eq!(a.c.len(), 101);
        assert!((a.max - 0.25).abs() < 1e-15 && (a.argmax - 0.5).abs() < 1e-12);
        assert!(!analysis("c*(2 - c)").unwrap().kpp);
        assert!(analysis("c*(1 - ").is_err());
        assert!(analysis("x1*c").is_err());
        assert!(analysis("recip(c)").is_err());
    }

    #[test]
    fn simulation_stays_in_unit_interval() {
        let s = simulation("c*(1 - c)", 8, 0.4, 3, 0.5, 1.0, 10.0).unwrap();
        assert_eq!(s.nodes.len(), 8);
        assert_eq!(s.times.len(), 201);
        assert!(s.nodes.iter().flatten().all(|v| (-1e-9..=1.0 + 1e-9).contains(v)));
        assert!(simulation("c", 1, 0.4, 3, 0.5, 1.0, 10.0).is_err());
    }

    #[test]
    fn recovers_fisher() {
        let r = recovery("c*(1 - c)", 20, 1).unwrap();
        assert_eq!(r.frontier.iter().filter(|k| k.selected).count(), 1);
        let err = r.target.iter().zip(&r.recovered).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-6, "{err}");
    }
}
