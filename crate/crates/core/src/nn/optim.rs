//! First-order (Adam) and quasi-Newton (L-BFGS) minimizers over flat
//! parameter vectors.

use serde::{Deserialize, Serialize};

use super::NnError;

/// A loss evaluated together with its gradient.
pub trait Objective {
    fn value_and_gradient(&mut self, x: &[f64]) -> (f64, Vec<f64>);
}

impl<F: FnMut(&[f64]) -> (f64, Vec<f64>)> Objective for F {
    fn value_and_gradient(&mut self, x: &[f64]) -> (f64, Vec<f64>) {
        self(x)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimOutcome {
    pub x: Vec<f64>,
    /// Loss at the starting point followed by the loss after every step.
    pub history: Vec<f64>,
    pub final_gradient_norm: f64,
    /// Set when L-BFGS stopped because no step satisfying the Wolfe
    /// conditions could be found.
    pub line_search_failed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub steps: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { steps: 20_000, lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn finite(v: f64, g: &[f64]) -> bool {
    v.is_finite() && g.iter().all(|x| x.is_finite())
}

pub fn optimize_adam(
    objective: &mut impl Objective,
    init: &[f64],
    config: &AdamConfig,
) -> Result<OptimOutcome, NnError> {
    let mut x = init.to_vec();
    let mut m = vec![0.0; x.len()];
    let mut v = vec![0.0; x.len()];
    let mut history = Vec::with_capacity(config.steps + 1);
    let (mut b1t, mut b2t) = (1.0, 1.0);
    let mut last_norm = 0.0;
    for step in 0..=config.steps {
        let (loss, grad) = objective.value_and_gradient(&x);
        if !finite(loss, &grad) {
            return Err(NnError::NonFinite { step, last_finite: x, history });
        }
        history.push(loss);
        last_norm = norm(&grad);
        if step == config.steps {
            break;
        }
        b1t *= config.beta1;
        b2t *= config.beta2;
        let lr_t = config.lr * (1.0 - b2t).sqrt() / (1.0 - b1t);
        for i in 0..x.len() {
            m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * grad[i];
            v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * grad[i] * grad[i];
            x[i] -= lr_t * m[i] / (v[i].sqrt() + config.eps * (1.0 - b2t).sqrt());
        }
    }
    Ok(OptimOutcome { x, history, final_gradient_norm: last_norm, line_search_failed: false })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LbfgsConfig {
    pub max_iters: usize,
    /// Stop once the Euclidean gradient norm falls to this value.
    pub tolerance: f64,
    pub memory: usize,
    pub c1: f64,
    pub c2: f64,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        Self { max_iters: 2_000, tolerance: 1e-8, memory: 10, c1: 1e-4, c2: 0.9 }
    }
}

struct Point {
    x: Vec<f64>,
    f: f64,
    g: Vec<f64>,
}

/// Limited-memory BFGS with a strong-Wolfe line search.
pub fn optimize_lbfgs(
    objective: &mut impl Objective,
    init: &[f64],
    config: &LbfgsConfig,
) -> Result<OptimOutcome, NnError> {
    let (f0, g0) = objective.value_and_gradient(init);
    if !finite(f0, &g0) {
        return Err(NnError::NonFinite { step: 0, last_finite: init.to_vec(), history: vec![] });
    }
    let mut cur = Point { x: init.to_vec(), f: f0, g: g0 };
    let mut history = vec![f0];
    let mut pairs: std::collections::VecDeque<(Vec<f64>, Vec<f64>, f64)> =
        std::collections::VecDeque::with_capacity(config.memory);
    let mut line_search_failed = false;

    for iter in 0..config.max_iters {
        let gnorm = norm(&cur.g);
        if gnorm <= config.tolerance {
            break;
        }
        let mut d = two_loop(&cur.g, &pairs);
        let mut slope = dot(&d, &cur.g);
        if slope >= 0.0 || !slope.is_finite() {
            // Not a descent direction; restart from steepest descent.
            pairs.clear();
            d = cur.g.iter().map(|v| -v).collect();
            slope = -gnorm * gnorm;
        }
        let alpha0 = if iter == 0 && pairs.is_empty() { (1.0 / gnorm).min(1.0) } else { 1.0 };
        let Some(next) = line_search(objective, &cur, &d, slope, alpha0, config) else {
            line_search_failed = true;
            log::warn!("L-BFGS line search failed at iteration {iter}; returning best iterate");
            break;
        };
        let s: Vec<f64> = next.x.iter().zip(&cur.x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = next.g.iter().zip(&cur.g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        let improvement = cur.f - next.f;
        cur = next;
        history.push(cur.f);
        if sy > 1e-12 * norm(&s) * norm(&y) && sy > 0.0 {
            if pairs.len() == config.memory {
                pairs.pop_front();
            }
            pairs.push_back((s, y, 1.0 / sy));
        }
        if improvement.abs() <= f64::EPSILON * cur.f.abs().max(1e-300) && improvement >= 0.0 {
            break;
        }
    }
    let final_gradient_norm = norm(&cur.g);
    Ok(OptimOutcome { x: cur.x, history, final_gradient_norm, line_search_failed })
}

fn two_loop(g: &[f64], pairs: &std::collections::VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(pairs.len());
    for (s, y, rho) in pairs.iter().rev() {
        let a = rho * dot(s, &q);
        q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
        alphas.push(a);
    }
    let gamma = pairs.back().map_or(1.0, |(s, y, _)| dot(s, y) / dot(y, y));
    q.iter_mut().for_each(|v| *v *= gamma);
    for ((s, y, rho), a) in pairs.iter().zip(alphas.iter().rev()) {
        let b = rho * dot(y, &q);
        q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

fn probe(objective: &mut impl Objective, from: &Point, d: &[f64], alpha: f64) -> (Point, f64) {
    let x: Vec<f64> = from.x.iter().zip(d).map(|(x, di)| x + alpha * di).collect();
    let (mut f, g) = objective.value_and_gradient(&x);
    if !finite(f, &g) {
        f = f64::INFINITY;
    }
    let slope = if f.is_finite() { dot(&g, d) } else { f64::NAN };
    (Point { x, f, g }, slope)
}

/// Minimizer of the cubic through `(a, fa, da)` and `(b, fb, db)`, or
/// `None` when it does not exist.
fn cubic_min(a: f64, fa: f64, da: f64, b: f64, fb: f64, db: f64) -> Option<f64> {
    let d1 = da + db - 3.0 * (fa - fb) / (a - b);
    let disc = d1 * d1 - da * db;
    if disc < 0.0 {
        return None;
    }
    let d2 = (b - a).signum() * disc.sqrt();
    let t = b - (b - a) * (db + d2 - d1) / (db - da + 2.0 * d2);
    t.is_finite().then_some(t)
}

fn line_search(
    objective: &mut impl Objective,
    start: &Point,
    d: &[f64],
    slope0: f64,
    alpha0: f64,
    config: &LbfgsConfig,
) -> Option<Point> {
    const MAX_EVALS: usize = 25;
    let f0 = start.f;
    let armijo = |alpha: f64, f: f64| f <= f0 + config.c1 * alpha * slope0;
    let curvature = |slope: f64| slope.abs() <= -config.c2 * slope0;

    // (alpha, f, slope) of the bracket ends.
    let mut prev = (0.0, f0, slope0);
    let mut alpha = alpha0;
    let mut bracket = None;
    for i in 0..MAX_EVALS {
        let (p, s) = probe(objective, start, d, alpha);
        if !armijo(alpha, p.f) || (i > 0 && p.f >= prev.1) || !p.f.is_finite() {
            bracket = Some((prev, (alpha, p.f, s)));
            break;
        }
        if curvature(s) {
            return Some(p);
        }
        if s >= 0.0 {
            bracket = Some(((alpha, p.f, s), prev));
            break;
        }
        prev = (alpha, p.f, s);
        alpha *= 2.0;
    }
    let (mut lo, mut hi) = bracket?;
    let mut best: Option<Point> = None;
    for _ in 0..MAX_EVALS {
        let (a_lo, a_hi) = (lo.0, hi.0);
        let width = (a_hi - a_lo).abs();
        if width < 1e-16 * a_lo.abs().max(1.0) {
            break;
        }
        let (left, right) = (a_lo.min(a_hi), a_lo.max(a_hi));
        let guard = 0.1 * width;
        let trial = if hi.1.is_finite() && hi.2.is_finite() {
            cubic_min(lo.0, lo.1, lo.2, hi.0, hi.1, hi.2)
        } else {
            None
        }
        .filter(|t| *t > left + guard && *t < right - guard)
        .unwrap_or(0.5 * (left + right));
        let (p, s) = probe(objective, start, d, trial);
        if !armijo(trial, p.f) || p.f >= lo.1 || !p.f.is_finite() {
            hi = (trial, p.f, s);
        } else {
            if curvature(s) {
                return Some(p);
            }
            if s * (hi.0 - lo.0) >= 0.0 {
                hi = lo;
            }
            lo = (trial, p.f, s);
            best = Some(p);
        }
    }
    // Accept a sufficient-decrease point even if the curvature test failed.
    best.filter(|p| p.f < f0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic(x: &[f64]) -> (f64, Vec<f64>) {
        // 0.5 (3 x0² + 2 x0 x1 + 2 x1²) - x0 - 4 x1
        let f = 0.5 * (3.0 * x[0] * x[0] + 2.0 * x[0] * x[1] + 2.0 * x[1] * x[1]) - x[0] - 4.0 * x[1];
        let g = vec![3.0 * x[0] + x[1] - 1.0, x[0] + 2.0 * x[1] - 4.0];
        (f, g)
    }

    fn rosenbrock(x: &[f64]) -> (f64, Vec<f64>) {
        let (a, b) = (x[0], x[1]);
        let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
        let g = vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)];
        (f, g)
    }

    fn bowl(x: &[f64]) -> (f64, Vec<f64>) {
        (x.iter().map(|v| v * v).sum(), x.iter().map(|v| 2.0 * v).collect())
    }

    #[test]
    fn adam_zero_lr_keeps_parameters() {
        let cfg = AdamConfig { steps: 10, lr: 0.0, ..AdamConfig::default() };
        let out = optimize_adam(&mut bowl, &[1.0, -2.0], &cfg).unwrap();
        assert_eq!(out.x, vec![1.0, -2.0]);
        assert_eq!(out.history.len(), 11);
    }

    #[test]
    fn adam_converges_on_convex_quadratic() {
        let cfg = AdamConfig { steps: 5000, lr: 1e-2, ..AdamConfig::default() };
        let out = optimize_adam(&mut bowl, &[1.5, -0.7, 0.3], &cfg).unwrap();
        assert_eq!(out.history.len(), 5001);
        assert!(*out.history.last().unwrap() <= 1e-6, "{:?}", out.history.last());
        assert!(out.history.last() <= out.history.first());
    }

    #[test]
    fn adam_reports_non_finite_loss_with_last_state() {
        let mut blowup = |x: &[f64]| {
            let f = if x[0] < 0.5 { f64::NAN } else { x[0] };
            (f, vec![1.0])
        };
        let cfg = AdamConfig { steps: 100, lr: 0.1, ..AdamConfig::default() };
        match optimize_adam(&mut blowup, &[1.0], &cfg) {
            Err(NnError::NonFinite { last_finite, step, .. }) => {
                assert!(step > 0);
                assert!(last_finite[0] < 0.5);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn lbfgs_solves_quadratic_quickly() {
        let cfg = LbfgsConfig { max_iters: 10, tolerance: 1e-10, ..LbfgsConfig::default() };
        let out = optimize_lbfgs(&mut quadratic, &[5.0, -3.0], &cfg).unwrap();
        assert!(out.final_gradient_norm <= 1e-10, "{}", out.final_gradient_norm);
        assert!(out.history.len() <= 11);
        assert!((out.x[0] + 0.4).abs() < 1e-9 && (out.x[1] - 2.2).abs() < 1e-9);
    }

    #[test]
    fn lbfgs_rosenbrock() {
        let cfg = LbfgsConfig { max_iters: 500, tolerance: 1e-12, ..LbfgsConfig::default() };
        let out = optimize_lbfgs(&mut rosenbrock, &[-1.2, 1.0], &cfg).unwrap();
        assert!(*out.history.last().unwrap() <= 1e-8, "{:?}", out.history.last());
        assert!((out.x[0] - 1.0).abs() < 1e-4 && (out.x[1] - 1.0).abs() < 1e-4);
    }

    #[test]
    fn lbfgs_returns_immediately_at_optimum() {
        let out = optimize_lbfgs(&mut bowl, &[0.0, 0.0], &LbfgsConfig::default()).unwrap();
        assert!(out.history.len() <= 2);
        assert_eq!(out.x, vec![0.0, 0.0]);
    }

    #[test]
    fn lbfgs_history_is_monotone() {
        let out = optimize_lbfgs(&mut rosenbrock, &[-1.2, 1.0], &LbfgsConfig::default()).unwrap();
        assert!(out.history.windows(2).all(|w| w[1] <= w[0]));
    }
}
