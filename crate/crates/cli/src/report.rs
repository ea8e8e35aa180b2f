use kppfind::expr::VarNames;
use kppfind::pipeline::DiscoveryResult;
use kppfind::symreg::frontier_csv;

use crate::commands::file_stem;

/// Evaluation points per density curve.
const DENSITY_POINTS: usize = 256;

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Silverman's rule `0.9 min(sd, IQR/1.34) n^(-1/5)`, falling back to the
/// non-zero spread measure, then to a small fraction of the magnitude.
pub fn silverman_bandwidth(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let sd = if xs.len() < 2 { 0.0 } else { (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() };
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let iqr = (quantile(&sorted, 0.75) - quantile(&sorted, 0.25)) / 1.34;
    let spread = match (sd > 0.0, iqr > 0.0) {
        (true, true) => sd.min(iqr),
        (true, false) => sd,
        (false, true) => iqr,
        (false, false) => (mean.abs() * 0.1).max(1e-3),
    };
    0.9 * spread * n.powf(-0.2)
}

/// Gaussian kernel density of `xs` on an even grid covering four
/// bandwidths past the data.
pub fn kde(xs: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let h = silverman_bandwidth(xs);
    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min) - 4.0 * h;
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 4.0 * h;
    let norm = 1.0 / (xs.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    let grid: Vec<f64> = (0..DENSITY_POINTS).map(|k| lo + (hi - lo) * k as f64 / (DENSITY_POINTS - 1) as f64).collect();
    let density = grid
        .iter()
        .map(|x| norm * xs.iter().map(|xi| (-0.5 * ((x - xi) / h).powi(2)).exp()).sum::<f64>())
        .collect();
    (grid, density)
}

fn csv_text(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
}

/// File name and contents of every report CSV.
pub fn bundle(result: &DiscoveryResult) -> Vec<(String, String)> {
    let mut files = Vec::new();

    files.push((
        "parameters.csv".to_string(),
        csv_text(
            &["subject", "group", "kappa_mean", "kappa_sd", "alpha_mean", "alpha_sd"],
            result.parameters.iter().map(|p| {
                vec![
                    p.subject.clone(),
                    p.group.clone(),
                    p.kappa_mean.to_string(),
                    p.kappa_sd.to_string(),
                    p.alpha_mean.to_string(),
                    p.alpha_sd.to_string(),
                ]
            }),
        ),
    ));

    let mut density_rows = Vec::new();
    for label in &result.group_labels {
        let in_group: Vec<_> = result.parameters.iter().filter(|p| &p.group == label).collect();
        for (name, values) in [
            ("kappa", in_group.iter().map(|p| p.kappa_mean).collect::<Vec<_>>()),
            ("alpha", in_group.iter().map(|p| p.alpha_mean).collect()),
        ] {
            if values.is_empty() {
                continue;
            }
            let (grid, density) = kde(&values);
            density_rows.extend(
                grid.iter().zip(&density).map(|(x, d)| vec![name.to_string(), label.clone(), x.to_string(), d.to_string()]),
            );
        }
    }
    files.push(("parameter_density.csv".to_string(), csv_text(&["parameter", "group", "x", "density"], density_rows)));

    let best = result.best_member();
    for (gi, g) in best.groups.iter().enumerate() {
        let stem = file_stem(&g.label);
        let band = &result.f_bands[gi];
        let rows = (0..result.c_grid.len()).map(|i| {
            vec![
                result.c_grid[i].to_string(),
                g.f_phi[i].to_string(),
                g.f_sym_curve[i].to_string(),
                band.min[i].to_string(),
                band.max[i].to_string(),
            ]
        });
        files.push((
            format!("f_curves_group{stem}.csv"),
            csv_text(&["c", "f_phi", "f_sym", "f_sym_min", "f_sym_max"], rows),
        ));
        files.push((format!("frontier_group{stem}.csv"), frontier_csv(&g.frontier, &VarNames::Concentration)));
    }
    files
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
        x.windows(2).zip(y.windows(2)).map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1])).sum()
    }

    #[test]
    fn silverman_matches_hand_value() {
        // sd = 1.5811, IQR / 1.34 = 1.4925, n = 5.
        let h = silverman_bandwidth(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        assert!((h - 0.9 * (2.0 / 1.34) * 5f64.powf(-0.2)).abs() < 1e-12, "{h}");
    }

    #[test]
    fn densities_integrate_to_one() {
        for xs in [vec![0.5], vec![1.0, 1.0, 1.0], vec![0.2, 0.9, 1.1, 3.0], (0..40).map(|k| (k as f64).sin()).collect()] {
            let (x, d) = kde(&xs);
            assert!(d.iter().all(|v| *v >= 0.0));
            let area = trapezoid(&x, &d);
            assert!((area - 1.0).abs() <= 0.01, "{xs:?}: {area}");
        }
    }
}
