//! Forward projection of discovered models, projection error, ensemble
//! ranking, and min/max bands.

use std::collections::HashMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::Expression;
use crate::graph::{integrate, Cohort, GraphError, LaplacianSystem, Subject, SubjectParams};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProjectError {
    #[error("subject {subject}: {source}")]
    Integration { subject: String, source: GraphError },
    #[error("no model for subject {0}")]
    MissingModel(String),
    #[error("unknown region label {0:?}")]
    UnknownRegion(String),
    #[error("{0}")]
    Invalid(String),
}

/// Inferred parameters and discovered reaction term for one subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectModel {
    pub kappa: f64,
    pub alpha: f64,
    pub reaction: Expression,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionResult {
    pub subject: String,
    pub times: Vec<f64>,
    /// One row per time.
    pub trajectory: Array2<f64>,
    pub member_seed: Option<u64>,
    pub model: SubjectModel,
}

/// `start, start + step, ..., horizon`; the last point is exactly `horizon`.
pub fn time_grid(start: f64, horizon: f64, step: f64) -> Result<Vec<f64>, ProjectError> {
    if !(step > 0.0 && step.is_finite()) || !(horizon > start) || !start.is_finite() || !horizon.is_finite() {
        return Err(ProjectError::Invalid(format!("bad time grid: start {start}, horizon {horizon}, step {step}")));
    }
    let n = ((horizon - start) / step).round().max(1.0) as usize;
    let mut t: Vec<f64> = (0..n).map(|k| start + k as f64 * step).collect();
    t.push(horizon);
    Ok(t)
}

/// Integrates the model from the subject's first observation up to
/// `horizon` with output every `step`.
pub fn project(
    sys: &LaplacianSystem,
    subject: &Subject,
    model: &SubjectModel,
    horizon: f64,
    step: f64,
) -> Result<ProjectionResult, ProjectError> {
    if horizon <= subject.last_time() {
        return Err(ProjectError::Invalid(format!(
            "horizon {horizon} does not extend past the last observation at {}",
            subject.last_time()
        )));
    }
    let times = time_grid(subject.times[0], horizon, step)?;
    let trajectory = run(sys, subject, model, &times)?;
    Ok(ProjectionResult { subject: subject.id.clone(), times, trajectory, member_seed: None, model: model.clone() })
}

fn run(sys: &LaplacianSystem, subject: &Subject, model: &SubjectModel, times: &[f64]) -> Result<Array2<f64>, ProjectError> {
    let params = SubjectParams { kappa: model.kappa, alpha: model.alpha, c0: subject.first_observation().to_vec() };
    integrate(sys, &params, &model.reaction, times)
        .map_err(|source| ProjectError::Integration { subject: subject.id.clone(), source })
}

/// Mean over rows of the squared L2 distance between `observed` and
/// `projected`.
pub fn trajectory_error(observed: &[Vec<f64>], projected: &Array2<f64>) -> f64 {
    let total: f64 = observed
        .iter()
        .zip(projected.rows())
        .map(|(o, p)| o.iter().zip(p).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
        .sum();
    total / observed.len() as f64
}

/// Projection error of one subject under `model`, measured at its own
/// observation times.
pub fn subject_projection_error(
    sys: &LaplacianSystem,
    subject: &Subject,
    model: &SubjectModel,
) -> Result<f64, ProjectError> {
    let traj = run(sys, subject, model, &subject.times)?;
    Ok(trajectory_error(&subject.concentrations, &traj))
}

/// Projection error averaged over observation times, then over subjects.
pub fn projection_error(
    sys: &LaplacianSystem,
    cohort: &Cohort,
    models: &HashMap<String, SubjectModel>,
) -> Result<f64, ProjectError> {
    if cohort.subjects.is_empty() {
        return Err(ProjectError::Invalid("empty cohort".into()));
    }
    let mut sum = 0.0;
    for s in &cohort.subjects {
        let m = models.get(&s.id).ok_or_else(|| ProjectError::MissingModel(s.id.clone()))?;
        sum += subject_projection_error(sys, s, m)?;
    }
    Ok(sum / cohort.subjects.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranking {
    /// Member indices by ascending error.
    pub order: Vec<usize>,
    pub best: usize,
}

/// Orders members by ascending projection error, ties by index. Non-finite
/// errors rank last.
pub fn rank_ensemble(errors: &[f64]) -> Result<Ranking, ProjectError> {
    if errors.is_empty() {
        return Err(ProjectError::Invalid("no ensemble members".into()));
    }
    let key = |i: usize| if errors[i].is_nan() { f64::INFINITY } else { errors[i] };
    let mut order: Vec<usize> = (0..errors.len()).collect();
    order.sort_by(|&a, &b| key(a).total_cmp(&key(b)).then(a.cmp(&b)));
    Ok(Ranking { best: order[0], order })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyBand {
    pub min: Array2<f64>,
    pub max: Array2<f64>,
    pub best: Array2<f64>,
}

/// Pointwise envelope of equally shaped member curves plus member `best`.
pub fn band_of(curves: &[&Array2<f64>], best: usize) -> Result<UncertaintyBand, ProjectError> {
    let first = curves.first().ok_or_else(|| ProjectError::Invalid("no ensemble members".into()))?;
    if best >= curves.len() {
        return Err(ProjectError::Invalid(format!("best member {best} out of range")));
    }
    if curves.iter().any(|c| c.dim() != first.dim()) {
        return Err(ProjectError::Invalid("member curves have different shapes".into()));
    }
    let mut min = (*first).clone();
    let mut max = (*first).clone();
    for c in &curves[1..] {
        min.zip_mut_with(c, |m, v| *m = m.min(*v));
        max.zip_mut_with(c, |m, v| *m = m.max(*v));
    }
    Ok(UncertaintyBand { min, max, best: curves[best].clone() })
}

/// Band over member projections, which must share a time grid.
pub fn band(members: &[ProjectionResult], best: usize) -> Result<UncertaintyBand, ProjectError> {
    if let Some(first) = members.first() {
        if members.iter().any(|m| m.times != first.times) {
            return Err(ProjectError::Invalid("member time grids differ".into()));
        }
    }
    band_of(&members.iter().map(|m| &m.trajectory).collect::<Vec<_>>(), best)
}

/// Column indices of `wanted` within `labels`; all columns when `wanted` is
/// empty.
pub fn select_nodes(labels: &[String], wanted: &[String]) -> Result<Vec<usize>, ProjectError> {
    if wanted.is_empty() {
        return Ok((0..labels.len()).collect());
    }
    wanted
        .iter()
        .map(|w| labels.iter().position(|l| l == w).ok_or_else(|| ProjectError::UnknownRegion(w.clone())))
        .collect()
}

/// Stored labels, or `0..n` as strings.
pub fn node_labels(labels: Option<&[String]>, n: usize) -> Vec<String> {
    labels.map_or_else(|| (0..n).map(|i| i.to_string()).collect(), <[String]>::to_vec)
}

/// CSV with columns `time,node_label,member,value`. Members are named by
/// seed when known, else by position.
pub fn projection_csv(members: &[ProjectionResult], labels: &[String], nodes: &[usize]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["time", "node_label", "member", "value"]).expect("in-memory write");
    for (k, m) in members.iter().enumerate() {
        let member = m.member_seed.map_or(k.to_string(), |s| s.to_string());
        for &j in nodes {
            for (i, t) in m.times.iter().enumerate() {
                w.write_record([t.to_string(), labels[j].clone(), member.clone(), m.trajectory[[i, j]].to_string()])
                    .expect("in-memory write");
            }
        }
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
}

/// CSV with columns `time,node_label,min,max,best`.
pub fn band_csv(times: &[f64], band: &UncertaintyBand, labels: &[String], nodes: &[usize]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["time", "node_label", "min", "max", "best"]).expect("in-memory write");
    for &j in nodes {
        for (i, t) in times.iter().enumerate() {
            w.write_record([
                t.to_string(),
                labels[j].clone(),
                band.min[[i, j]].to_string(),
                band.max[[i, j]].to_string(),
                band.best[[i, j]].to_string(),
            ])
            .expect("in-memory write");
        }
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
}

#[cfg(test)]
mod tests;
