use std::fmt::Display;
use std::path::Path;

use kppfind::expr::VarNames;
use kppfind::graph::{generate_cohort, Cohort, LaplacianSystem};
use kppfind::ko::ko_discover;
use kppfind::pipeline::{self, split_seed, stream, DiscoveryResult};
use kppfind::project::{band, band_csv, node_labels, project as project_one, projection_csv, select_nodes};
use kppfind::symreg::frontier_csv;
use log::{info, warn};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::RunConfig;
use crate::report;
use crate::CliError;

fn config_err(context: &str, e: impl Display) -> CliError {
    CliError::Config(format!("{context}: {e}"))
}

fn runtime<E: Display>(e: E) -> CliError {
    CliError::Runtime(e.to_string())
}

pub(crate) fn write(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))?;
    }
    std::fs::write(path, text).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

/// Keeps labels usable as file name components.
pub(crate) fn file_stem(label: &str) -> String {
    label.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' }).collect()
}

fn load_system(config: &RunConfig) -> Result<LaplacianSystem, CliError> {
    let path = config.laplacian_path()?;
    LaplacianSystem::read_csv(path).map_err(|e| config_err("paths.laplacian", e))
}

fn load_cohort(config: &RunConfig, sys: &LaplacianSystem) -> Result<Cohort, CliError> {
    let path = config.cohort_path();
    let cohort = Cohort::load(&path).map_err(|e| config_err(&format!("cohort {}", path.display()), e))?;
    if cohort.n_nodes() != sys.n() {
        return Err(CliError::Config(format!(
            "cohort has {} nodes but the Laplacian has {}",
            cohort.n_nodes(),
            sys.n()
        )));
    }
    Ok(cohort)
}

fn load_result(config: &RunConfig) -> Result<DiscoveryResult, CliError> {
    let path = config.result_path();
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    DiscoveryResult::from_json(&text).map_err(|e| config_err(&path.display().to_string(), e))
}

#[derive(Debug, Serialize)]
struct Stats {
    mean: f64,
    sd: f64,
    min: f64,
    max: f64,
}

impl Stats {
    fn of(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let sd = if xs.len() < 2 { 0.0 } else { (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() };
        Stats {
            mean,
            sd,
            min: xs.iter().copied().fold(f64::INFINITY, f64::min),
            max: xs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

#[derive(Debug, Serialize)]
struct GroupSummary {
    label: String,
    size: usize,
    kappa: Stats,
    alpha: Stats,
}

#[derive(Debug, Serialize)]
struct SimulateSummary {
    seed: u64,
    subjects: usize,
    nodes: usize,
    groups: Vec<GroupSummary>,
}

pub fn simulate(config: &RunConfig) -> Result<(), CliError> {
    let sys = load_system(config)?;
    let cohort = generate_cohort(&config.cohort, &sys, split_seed(config.seed, &[stream::COHORT])).map_err(runtime)?;
    let path = config.cohort_path();
    write(&path, &cohort.to_json())?;

    let groups = cohort
        .groups()
        .into_iter()
        .map(|label| {
            let members: Vec<_> = cohort.subjects.iter().filter(|s| s.group == label).collect();
            let kappa: Vec<f64> = members.iter().filter_map(|s| s.kappa).collect();
            let alpha: Vec<f64> = members.iter().filter_map(|s| s.alpha).collect();
            GroupSummary { size: members.len(), kappa: Stats::of(&kappa), alpha: Stats::of(&alpha), label }
        })
        .collect::<Vec<_>>();
    let summary = SimulateSummary { seed: config.seed, subjects: cohort.subjects.len(), nodes: sys.n(), groups };
    write(&config.output_dir().join("simulate_summary.json"), &serde_json::to_string_pretty(&summary).expect("serializable"))?;
    for g in &summary.groups {
        println!("group {}: {} subjects, kappa {:.3} ± {:.3}, alpha {:.3} ± {:.3}", g.label, g.size, g.kappa.mean, g.kappa.sd, g.alpha.mean, g.alpha.sd);
    }
    info!("wrote {} subjects to {}", summary.subjects, path.display());
    Ok(())
}

pub fn discover(config: &RunConfig) -> Result<(), CliError> {
    let sys = load_system(config)?;
    let cohort = load_cohort(config, &sys)?;
    let result = pipeline::discover(&sys, &cohort, &config.discovery()).map_err(runtime)?;
    for f in &result.failures {
        warn!("member {} failed: {}", f.seed, f.error);
    }
    let path = config.result_path();
    write(&path, &result.to_json())?;
    let dir = config.output_dir().join("frontiers");
    for (k, m) in result.members.iter().enumerate() {
        for g in &m.groups {
            let name = format!("member{k}_group{}.csv", file_stem(&g.label));
            write(&dir.join(name), &frontier_csv(&g.frontier, &VarNames::Concentration))?;
        }
    }
    let best = result.best_member();
    println!("best member {} (seed {}), projection error {:?}", result.best, best.seed, best.projection_error);
    for g in &best.groups {
        println!("group {}: f = {}", g.label, g.f_sym_text);
    }
    info!("wrote {}", path.display());
    Ok(())
}

/// Projects the chosen subjects with every member and writes one series CSV
/// and one band CSV per subject into `dir`.
pub(crate) fn write_projections(
    config: &RunConfig,
    sys: &LaplacianSystem,
    cohort: &Cohort,
    result: &DiscoveryResult,
    dir: &Path,
    with_members: bool,
) -> Result<(), CliError> {
    let ids: Vec<&String> = cohort.subjects.iter().map(|s| &s.id).collect();
    if result.subjects.iter().collect::<Vec<_>>() != ids {
        return Err(CliError::Config("result subjects do not match the cohort".into()));
    }
    let labels = node_labels(sys.labels().or(cohort.node_labels.as_deref()), sys.n());
    let nodes = select_nodes(&labels, &config.projection.regions).map_err(|e| CliError::Config(e.to_string()))?;
    let chosen: Vec<usize> = if config.projection.subjects.is_empty() {
        (0..cohort.subjects.len()).collect()
    } else {
        config
            .projection
            .subjects
            .iter()
            .map(|id| {
                result.subjects.iter().position(|s| s == id).ok_or_else(|| CliError::Config(format!("unknown subject {id:?}")))
            })
            .collect::<Result<_, _>>()?
    };
    let p = &config.projection;
    let outputs = chosen
        .par_iter()
        .map(|&si| {
            let subject = &cohort.subjects[si];
            let mut series = Vec::new();
            let mut best = None;
            for (k, m) in result.members.iter().enumerate() {
                let model = m.subject_model(si, result.subject_groups[si]);
                match project_one(sys, subject, &model, p.horizon, p.step) {
                    Ok(mut r) => {
                        r.member_seed = Some(m.seed);
                        if k == result.best {
                            best = Some(series.len());
                        }
                        series.push(r);
                    }
                    Err(e) if k == result.best => return Err(runtime(e)),
                    Err(e) => warn!("member {k} skipped for {}: {e}", subject.id),
                }
            }
            let b = band(&series, best.expect("best member projected")).map_err(runtime)?;
            let stem = file_stem(&subject.id);
            let band_text = band_csv(&series[0].times, &b, &labels, &nodes);
            let members_text = with_members.then(|| projection_csv(&series, &labels, &nodes));
            Ok((stem, members_text, band_text))
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    for (stem, members_text, band_text) in outputs {
        if let Some(text) = members_text {
            write(&dir.join(format!("{stem}.csv")), &text)?;
        }
        write(&dir.join(format!("{stem}_band.csv")), &band_text)?;
    }
    Ok(())
}

pub fn project(config: &RunConfig) -> Result<(), CliError> {
    let result = load_result(config)?;
    let sys = load_system(config)?;
    let cohort = load_cohort(config, &sys)?;
    let dir = config.output_dir().join("projection");
    write_projections(config, &sys, &cohort, &result, &dir, true)?;
    info!("wrote projections to {}", dir.display());
    Ok(())
}

pub fn ablate(config: &RunConfig) -> Result<(), CliError> {
    let sys = load_system(config)?;
    let cells = pipeline::ablate(&sys, &config.cohort, &config.discovery(), &config.ablation).map_err(runtime)?;
    let dir = config.output_dir();
    write(&dir.join("ablation.json"), &serde_json::to_string_pretty(&cells).expect("serializable"))?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["horizon", "mode", "f_sym", "f_phi_error", "f_phi_error_high", "max_observed", "projection_error"])
        .map_err(runtime)?;
    for c in &cells {
        let mode = serde_json::to_value(c.mode).expect("serializable");
        w.write_record([
            c.horizon.to_string(),
            mode.as_str().unwrap_or_default().to_string(),
            c.f_sym_text.clone(),
            c.f_phi_error.to_string(),
            c.f_phi_error_high.to_string(),
            c.max_observed.to_string(),
            c.projection_error.map_or(String::new(), |e| e.to_string()),
        ])
        .map_err(runtime)?;
        println!(
            "T={} {:?}: f = {}, sup error {:.3e} (on [0.7,1]: {:.3e})",
            c.horizon, c.mode, c.f_sym_text, c.f_phi_error, c.f_phi_error_high
        );
    }
    let text = String::from_utf8(w.into_inner().map_err(runtime)?).expect("utf-8");
    write(&dir.join("ablation.csv"), &text)
}

pub fn ko_demo(config: &RunConfig) -> Result<(), CliError> {
    let seeds: Vec<u64> =
        (0..config.ko.pinn.ensemble_size as u64).map(|k| split_seed(config.seed, &[stream::MEMBER, k])).collect();
    let report = ko_discover(&config.ko, &seeds).map_err(runtime)?;
    let dir = config.output_dir();
    write(&dir.join("ko_report.json"), &serde_json::to_string_pretty(&report).expect("serializable"))?;
    write(&dir.join("ko_f1_frontier.csv"), &frontier_csv(&report.f1.frontier, &VarNames::TimeState))?;
    write(&dir.join("ko_f2_frontier.csv"), &frontier_csv(&report.f2.frontier, &VarNames::TimeState))?;
    println!("a = {:.4}, b = {:.4}", report.a, report.b);
    for (name, f) in [("f1", &report.f1), ("f2", &report.f2)] {
        println!("{name}: {}", f.top_text.join(" | "));
    }
    Ok(())
}

pub fn report(config: &RunConfig) -> Result<(), CliError> {
    let result = load_result(config)?;
    let dir = config.output_dir().join("report");
    for (name, text) in report::bundle(&result) {
        write(&dir.join(name), &text)?;
    }
    // Projection bands need the graph and the cohort; skip them otherwise.
    if config.paths.laplacian.is_some() && config.cohort_path().exists() {
        let sys = load_system(config)?;
        let cohort = load_cohort(config, &sys)?;
        write_projections(config, &sys, &cohort, &result, &dir.join("bands"), false)?;
    } else {
        info!("no Laplacian or cohort configured; projection bands skipped");
    }
    info!("wrote report to {}", dir.display());
    Ok(())
}
