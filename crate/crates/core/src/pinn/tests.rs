use super::*;
use crate::graph::{generate_cohort, integrate, rhs, CohortConfig, ReactionFn, SubjectParams};
use ndarray::array;
use rand::Rng;

fn tiny_config() -> PinnConfig {
    PinnConfig {
        surrogate_hidden: vec![6],
        reaction_hidden: vec![5],
        adam_steps: 40,
        adam_lr: 1e-2,
        lbfgs_max_iters: 20,
        collocation_count: 8,
        ensemble_size: 1,
        ..PinnConfig::default()
    }
}

fn small_problem(n_nodes: usize, per_group: usize, config: PinnConfig) -> PinnProblem<GraphTemplate> {
    let sys = LaplacianSystem::random(n_nodes, 0.6, (0.5, 1.5), 3);
    let cohort = generate_cohort(
        &CohortConfig {
            reactions: vec![crate::graph::benchmark_reaction(1).unwrap()],
            subjects_per_group: per_group,
            c0_mean: 0.2,
            c0_sd: 0.1,
            ..CohortConfig::default()
        },
        &sys,
        7,
    )
    .unwrap();
    PinnProblem::from_cohort(&cohort, &sys, config).unwrap()
}

fn zero_state<T: RhsTemplate>(p: &PinnProblem<T>) -> PinnState {
    let s = p.init_state(0);
    let flat = vec![0.0; s.flatten().len()];
    let mut z = p.unflatten(&flat).unwrap();
    z.subject_scalars = s.subject_scalars;
    z
}

#[test]
fn data_loss_arithmetic() {
    let sys = LaplacianSystem::from_weights(&array![[0.0]]).unwrap();
    let mut cohort = Cohort::new(vec![crate::graph::Subject {
        id: "a".into(),
        group: "1".into(),
        times: vec![0.0, 1.0],
        concentrations: vec![vec![0.2], vec![0.5]],
        kappa: None,
        alpha: None,
    }]);
    let p = PinnProblem::from_cohort(&cohort, &sys, tiny_config()).unwrap();
    // Zero weights give the logistic midpoint 0.5 everywhere.
    let z = zero_state(&p);
    assert!((p.data_loss(&z).unwrap() - 0.09 / 2.0).abs() < 1e-15);

    cohort.subjects[0].times = vec![0.0, 1.0, 2.0, 3.0];
    cohort.subjects[0].concentrations = vec![vec![0.2], vec![0.5], vec![0.5], vec![0.5]];
    let p = PinnProblem::from_cohort(&cohort, &sys, tiny_config()).unwrap();
    assert!((p.data_loss(&zero_state(&p)).unwrap() - 0.09 / 4.0).abs() < 1e-15);
}

#[test]
fn residual_vanishes_on_exact_solution_and_grows_quadratically() {
    let p = small_problem(4, 1, tiny_config());
    let state = p.init_state(3);
    let f = p.reaction_net().bind(&state.group_params[0]).unwrap();
    let sys = LaplacianSystem::from_matrix((*p.template.laplacian).clone()).unwrap();
    let (kappa, alpha) = (state.subject_scalars[0][0], state.subject_scalars[0][1]);
    let c0 = p.subjects[0].observations.row(0).to_vec();
    let t: Vec<f64> = (0..=40).map(|k| k as f64 * 0.05).collect();
    let path = integrate(&sys, &SubjectParams { kappa, alpha, c0 }, &f, &t).unwrap();
    let mut deriv = Array2::zeros(path.dim());
    for (i, row) in path.rows().into_iter().enumerate() {
        let mut out = vec![0.0; 4];
        rhs(&sys, kappa, alpha, &f, &row.to_vec(), &mut out);
        deriv.row_mut(i).assign(&ndarray::Array1::from(out));
    }
    assert!(p.residual_along(&state, 0, &t, &path, &deriv).unwrap() <= 1e-8);

    let perturbed = |delta: f64| {
        let mut s = state.clone();
        s.subject_scalars[0][0] += delta;
        p.residual_along(&s, 0, &t, &path, &deriv).unwrap()
    };
    let (r1, r2) = (perturbed(1e-2), perturbed(2e-2));
    assert!(r1 > 0.0);
    assert!((r2 / r1 - 4.0).abs() < 1e-6, "{}", r2 / r1);
}

#[test]
fn zero_path_has_zero_residual() {
    let p = small_problem(3, 1, tiny_config());
    let state = p.init_state(1);
    let t: Vec<f64> = (0..5).map(|k| k as f64).collect();
    let z = Array2::zeros((5, 3));
    assert_eq!(p.residual_along(&state, 0, &t, &z, &z).unwrap(), 0.0);
}

#[test]
fn total_loss_is_weighted_sum() {
    let p = small_problem(3, 2, tiny_config());
    let state = p.init_state(2);
    let b = p.loss(&state).unwrap();
    assert!((b.total - (b.data + b.residual + b.aux)).abs() < 1e-15);
    let mut cfg = tiny_config();
    cfg.w_aux = 0.0;
    let p0 = small_problem(3, 2, cfg);
    let b0 = p0.loss(&state).unwrap();
    assert!((b0.total - (b0.data + b0.residual)).abs() < 1e-15);
    let mean: f64 = b.subject_data.iter().sum::<f64>() / 2.0;
    assert!((mean - b.data).abs() < 1e-15);
}

#[test]
fn total_loss_gradient_matches_finite_differences() {
    for mode in [ConstraintMode::Hard, ConstraintMode::None] {
        let p = small_problem(3, 2, PinnConfig { constraint_mode: mode, ..tiny_config() });
        let x = p.init_state(5).flatten();
        let (_, g) = p.loss_and_gradient(&x).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let h = 1e-6;
        let mut coords: Vec<usize> = (0..20).map(|_| rng.random_range(0..x.len())).collect();
        coords.extend(x.len() - 4..x.len());
        for i in coords {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h;
            xm[i] -= h;
            let fd = (p.loss_and_gradient(&xp).unwrap().0 - p.loss_and_gradient(&xm).unwrap().0) / (2.0 * h);
            let err = (fd - g[i]).abs();
            assert!(err <= 1e-4 * fd.abs().max(g[i].abs()) || err < 1e-9, "{mode:?} coord {i}: {fd} vs {}", g[i]);
        }
    }
}

#[test]
fn training_reduces_loss_and_is_deterministic() {
    let p = small_problem(3, 2, tiny_config());
    let a = train(&p, 4).unwrap();
    assert!(a.loss_history.last().unwrap() < &a.loss_history[0]);
    assert!(a.final_loss.total.is_finite());
    assert_eq!(a, train(&p, 4).unwrap());
}

#[test]
fn ensemble_members_follow_seeds() {
    let p = small_problem(3, 1, PinnConfig { adam_steps: 5, lbfgs_max_iters: 2, ..tiny_config() });
    let single = ensemble_train(&p, &[11]).unwrap();
    assert_eq!(single.len(), 1);
    assert_eq!(single[0].result.as_ref().unwrap(), &train(&p, 11).unwrap());
    let many = ensemble_train(&p, &[1, 2, 3]).unwrap();
    assert_eq!(many.iter().map(|m| m.seed).collect::<Vec<_>>(), vec![1, 2, 3]);
    let a = many[0].result.as_ref().unwrap();
    let b = many[1].result.as_ref().unwrap();
    assert_ne!(a.state, b.state);
    assert!(ensemble_train(&p, &[]).is_err());
}

fn product_grid(p: &PinnProblem<GraphTemplate>, t: &TrainedPinn, subject: usize) -> Vec<f64> {
    let f = t.reaction(p.reaction_net(), p.subjects[subject].group);
    (0..=100).map(|k| t.alpha(subject) * f.eval(k as f64 / 100.0)).collect()
}

#[test]
fn rescale_preserves_rate_times_reaction() {
    let p = small_problem(3, 2, PinnConfig { constraint_mode: ConstraintMode::None, ..tiny_config() });
    let mut t = train(&p, 1).unwrap();
    // Force a positive maximum so the rescale is exercised.
    let last = t.state.group_params[0].len() - 1;
    t.state.group_params[0].0[last] += 1.0;
    let before = product_grid(&p, &t, 0);
    rescale_alpha_f(&p, &mut t);
    let after = product_grid(&p, &t, 0);
    for (a, b) in before.iter().zip(&after) {
        assert!((a - b).abs() <= 1e-10);
    }
    let f = t.reaction(p.reaction_net(), 0);
    let max = p.reaction_net().grid().iter().map(|c| f.eval(*c)).fold(f64::MIN, f64::max);
    assert!((max - 0.25).abs() < 1e-12);

    let again = t.clone();
    rescale_alpha_f(&p, &mut t);
    assert_eq!(t, again);

    // f doubled and α halved is restored to the same canonical form.
    let mut scaled = t.clone();
    scaled.output_scale[0] *= 2.0;
    for s in &mut scaled.state.subject_scalars {
        s[1] /= 2.0;
    }
    rescale_alpha_f(&p, &mut scaled);
    assert!((scaled.output_scale[0] - t.output_scale[0]).abs() < 1e-12);
    assert!((scaled.alpha(0) - t.alpha(0)).abs() < 1e-12);
}

#[test]
fn hard_mode_is_already_canonical() {
    let p = small_problem(3, 1, tiny_config());
    let mut t = train(&p, 2).unwrap();
    let before = t.clone();
    rescale_alpha_f(&p, &mut t);
    assert_eq!(t, before);
}

#[test]
fn invalid_problems_are_rejected() {
    let sys = LaplacianSystem::random(3, 0.6, (0.5, 1.5), 3);
    let cohort = generate_cohort(&CohortConfig { subjects_per_group: 1, ..CohortConfig::default() }, &sys, 1).unwrap();
    let other = LaplacianSystem::random(4, 0.6, (0.5, 1.5), 3);
    assert!(PinnProblem::from_cohort(&cohort, &other, tiny_config()).is_err());
    let bad = PinnConfig { collocation_count: 1, ..tiny_config() };
    assert!(PinnProblem::from_cohort(&cohort, &sys, bad).is_err());
}

#[test]
fn surrogate_at_matches_data_fit_inputs() {
    let p = small_problem(3, 1, tiny_config());
    let z = zero_state(&p);
    let c = p.surrogate_at(&z, 0, &[0.0, 0.5, 2.0]).unwrap();
    assert_eq!(c.dim(), (3, 3));
    assert!(c.iter().all(|v| (v - 0.5).abs() < 1e-15));
    let s = p.init_state(1);
    let t = &p.subjects[0].times;
    let c = p.surrogate_at(&s, 0, t).unwrap();
    let direct: f64 = c
        .rows()
        .into_iter()
        .zip(p.subjects[0].observations.rows())
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>())
        .sum::<f64>()
        / t.len() as f64;
    assert!((direct - p.loss(&s).unwrap().subject_data[0]).abs() < 1e-14);
}
