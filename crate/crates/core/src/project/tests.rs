use super::*;
use crate::graph::{generate_cohort, benchmark_reaction, CohortConfig};
use ndarray::array;
use proptest::prelude::*;

fn one_node() -> LaplacianSystem {
    LaplacianSystem::from_weights(&array![[0.0]]).unwrap()
}

fn subject(times: Vec<f64>, rows: Vec<Vec<f64>>) -> Subject {
    Subject { id: "s".into(), group: "1".into(), times, concentrations: rows, kappa: None, alpha: None }
}

fn truth(s: &Subject, group: usize) -> SubjectModel {
    SubjectModel { kappa: s.kappa.unwrap(), alpha: s.alpha.unwrap(), reaction: benchmark_reaction(group).unwrap() }
}

fn cohort(groups: &[usize], per_group: usize, seed: u64) -> (LaplacianSystem, Cohort) {
    let sys = LaplacianSystem::random(6, 0.5, (0.5, 1.5), seed);
    let config = CohortConfig {
        reactions: groups.iter().map(|g| benchmark_reaction(*g).unwrap()).collect(),
        subjects_per_group: per_group,
        c0_mean: 0.2,
        c0_sd: 0.1,
        ..CohortConfig::default()
    };
    let c = generate_cohort(&config, &sys, seed).unwrap();
    (sys, c)
}

fn truth_models(c: &Cohort, group: usize) -> HashMap<String, SubjectModel> {
    c.subjects.iter().map(|s| (s.id.clone(), truth(s, group))).collect()
}

#[test]
fn time_grid_counts() {
    assert_eq!(time_grid(0.0, 20.0, 0.1).unwrap().len(), 201);
    assert_eq!(time_grid(0.0, 30.0, 0.25).unwrap().len(), 121);
    let t = time_grid(1.0, 2.0, 0.3).unwrap();
    assert_eq!(*t.last().unwrap(), 2.0);
    assert!(time_grid(0.0, 1.0, 0.0).is_err());
    assert!(time_grid(1.0, 1.0, 0.1).is_err());
}

#[test]
fn ground_truth_reproduces_generator() {
    let (sys, c) = cohort(&[1], 3, 4);
    for s in &c.subjects {
        let p = project(&sys, s, &truth(s, 1), 20.0, 0.1).unwrap();
        assert_eq!(p.times.len(), 201);
        assert_eq!(p.trajectory.nrows(), 201);
        for (t, row) in s.times.iter().zip(&s.concentrations) {
            let i = (t / 0.1).round() as usize;
            for (a, b) in row.iter().zip(p.trajectory.row(i)) {
                assert!((a - b).abs() <= 1e-6, "{} at {t}: {a} vs {b}", s.id);
            }
        }
    }
    assert!(projection_error(&sys, &c, &truth_models(&c, 1)).unwrap() <= 1e-8);
}

#[test]
fn frozen_model_is_constant() {
    let sys = LaplacianSystem::random(4, 0.8, (0.5, 1.5), 2);
    let s = subject(vec![0.0, 1.0], vec![vec![0.1, 0.4, 0.2, 0.7]; 2]);
    let m = SubjectModel { kappa: 0.0, alpha: 0.0, reaction: "exp(c)".parse().unwrap() };
    let p = project(&sys, &s, &m, 5.0, 0.5).unwrap();
    for row in p.trajectory.rows() {
        assert_eq!(row.to_vec(), s.concentrations[0]);
    }
}

#[test]
fn horizon_must_pass_last_observation() {
    let s = subject(vec![0.0, 2.0], vec![vec![0.1], vec![0.2]]);
    let m = SubjectModel { kappa: 0.0, alpha: 0.0, reaction: "c".parse().unwrap() };
    assert!(matches!(project(&one_node(), &s, &m, 2.0, 0.1), Err(ProjectError::Invalid(_))));
}

#[test]
fn projection_error_arithmetic() {
    let s = subject(vec![0.0, 1.0], vec![vec![0.2], vec![0.3]]);
    // dc/dt = 0.2 gives the projection {0.2, 0.4}.
    let m = SubjectModel { kappa: 0.0, alpha: 1.0, reaction: "0.2".parse().unwrap() };
    let err = subject_projection_error(&one_node(), &s, &m).unwrap();
    assert!((err - 0.005).abs() < 1e-12, "{err}");
    assert!((trajectory_error(&s.concentrations, &array![[0.2], [0.4]]) - 0.005).abs() < 1e-15);

    let c = Cohort::new(vec![s]);
    let models = HashMap::from([("s".to_string(), m)]);
    assert!((projection_error(&one_node(), &c, &models).unwrap() - 0.005).abs() < 1e-12);
    assert!(matches!(projection_error(&one_node(), &c, &HashMap::new()), Err(ProjectError::MissingModel(_))));
}

#[test]
fn correct_reaction_beats_wrong_reaction() {
    let (sys, c) = cohort(&[1], 4, 8);
    let right = projection_error(&sys, &c, &truth_models(&c, 1)).unwrap();
    let wrong = projection_error(&sys, &c, &truth_models(&c, 3)).unwrap();
    assert!(right < wrong, "{right} vs {wrong}");
}

#[test]
fn ground_truth_beats_perturbed_kappa() {
    for seed in [1, 2, 3] {
        let (sys, c) = cohort(&[1], 3, seed);
        let exact = projection_error(&sys, &c, &truth_models(&c, 1)).unwrap();
        for delta in [-0.3, 0.3, 0.6] {
            let models: HashMap<_, _> = c
                .subjects
                .iter()
                .map(|s| {
                    let mut m = truth(s, 1);
                    m.kappa = (m.kappa + delta).max(0.0);
                    (s.id.clone(), m)
                })
                .collect();
            assert!(exact <= projection_error(&sys, &c, &models).unwrap());
        }
    }
}

#[test]
fn ranking() {
    assert_eq!(rank_ensemble(&[0.4]).unwrap().best, 0);
    let r = rank_ensemble(&[3e-3, 1e-3, 2e-3]).unwrap();
    assert_eq!(r.best, 1);
    assert_eq!(r.order, vec![1, 2, 0]);
    assert_eq!(rank_ensemble(&[1.0, 1.0]).unwrap().order, vec![0, 1]);
    assert_eq!(rank_ensemble(&[f64::NAN, 2.0]).unwrap().best, 1);
    assert!(rank_ensemble(&[]).is_err());

    // The best seed does not depend on input order.
    let members = [(10_u64, 3e-3), (11, 1e-3), (12, 2e-3)];
    for perm in [[0, 1, 2], [2, 0, 1], [1, 2, 0]] {
        let errs: Vec<f64> = perm.iter().map(|&i| members[i].1).collect();
        assert_eq!(members[perm[rank_ensemble(&errs).unwrap().best]].0, 11);
    }
}

#[test]
fn single_member_band_is_degenerate() {
    let a = array![[0.1, 0.2], [0.3, 0.4]];
    let b = band_of(&[&a], 0).unwrap();
    assert_eq!(b.min, a);
    assert_eq!(b.max, a);
    assert_eq!(b.best, a);
}

#[test]
fn band_rejects_misaligned_members() {
    let a = array![[0.1, 0.2], [0.3, 0.4]];
    let b = array![[0.1, 0.2]];
    assert!(band_of(&[&a, &b], 0).is_err());
    assert!(band_of(&[&a], 1).is_err());
    assert!(band_of(&[], 0).is_err());

    let m = SubjectModel { kappa: 0.0, alpha: 0.0, reaction: "c".parse().unwrap() };
    let s = subject(vec![0.0, 1.0], vec![vec![0.1], vec![0.2]]);
    let p1 = project(&one_node(), &s, &m, 2.0, 0.5).unwrap();
    let p2 = project(&one_node(), &s, &m, 2.0, 0.25).unwrap();
    assert!(band(&[p1, p2], 0).is_err());
}

fn members_strategy() -> impl Strategy<Value = Vec<Array2<f64>>> {
    (1usize..5, 1usize..4, 1usize..6).prop_flat_map(|(rows, cols, m)| {
        prop::collection::vec(prop::collection::vec(-1.0f64..1.0, rows * cols), m)
            .prop_map(move |vs| vs.into_iter().map(|v| Array2::from_shape_vec((rows, cols), v).unwrap()).collect())
    })
}

proptest! {
    #[test]
    fn band_contains_members(members in members_strategy(), pick in 0usize..100) {
        let refs: Vec<&Array2<f64>> = members.iter().collect();
        let best = pick % members.len();
        let b = band_of(&refs, best).unwrap();
        for m in &members {
            for ((lo, hi), v) in b.min.iter().zip(&b.max).zip(m) {
                prop_assert!(lo <= v && v <= hi);
            }
        }
        for ((lo, hi), v) in b.min.iter().zip(&b.max).zip(&b.best) {
            prop_assert!(lo <= v && v <= hi);
        }
    }

    #[test]
    fn adding_a_member_never_narrows(members in members_strategy()) {
        prop_assume!(members.len() >= 2);
        let refs: Vec<&Array2<f64>> = members.iter().collect();
        let small = band_of(&refs[..refs.len() - 1], 0).unwrap();
        let big = band_of(&refs, 0).unwrap();
        for (a, b) in small.min.iter().zip(&big.min) {
            prop_assert!(b <= a);
        }
        for (a, b) in small.max.iter().zip(&big.max) {
            prop_assert!(b >= a);
        }
    }
}

#[test]
fn region_selection_and_csv() {
    let labels = node_labels(Some(&["EC".to_string(), "MTG".into(), "STG".into()]), 3);
    assert_eq!(select_nodes(&labels, &["STG".into(), "EC".into()]).unwrap(), vec![2, 0]);
    assert_eq!(select_nodes(&labels, &[]).unwrap(), vec![0, 1, 2]);
    assert!(matches!(select_nodes(&labels, &["XX".into()]), Err(ProjectError::UnknownRegion(_))));
    assert_eq!(node_labels(None, 2), vec!["0", "1"]);

    let sys = LaplacianSystem::random(3, 1.0, (0.5, 1.5), 1);
    let s = subject(vec![0.0, 1.0], vec![vec![0.1, 0.2, 0.3]; 2]);
    let m = SubjectModel { kappa: 1.0, alpha: 0.5, reaction: benchmark_reaction(1).unwrap() };
    let mut p = project(&sys, &s, &m, 3.0, 0.25).unwrap();
    p.member_seed = Some(7);
    let text = projection_csv(std::slice::from_ref(&p), &labels, &[0, 2]);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "time,node_label,member,value");
    assert_eq!(lines.len(), 1 + 2 * 13);
    assert!(lines[1].starts_with("0,EC,7,"));

    let b = band(std::slice::from_ref(&p), 0).unwrap();
    let text = band_csv(&p.times, &b, &labels, &[1]);
    assert_eq!(text.lines().next().unwrap(), "time,node_label,min,max,best");
    assert_eq!(text.lines().count(), 1 + 13);
}
