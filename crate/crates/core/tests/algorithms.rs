mod common;

use common::{random_state, stack, stacked_gradient, Exact, Quadratic};
use dvss::algorithms::{init, step_baseline, step_dvss};
use dvss::experiment::{desk_graph, desk_problem, DEFAULT_GRAPH_SEED, DEFAULT_PROBLEM_SEED};
use dvss::graphs::erdos_renyi_support;
use dvss::metrics::{ensemble_with_seeds, frame};
use dvss::{
    AlgorithmKind, BatchSchedule, GraphProcess, SamplePlan, Simulation, StepRule,
    StochasticProblem, WeightMatrix,
};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn setup(seed: u64) -> (Quadratic, GraphProcess<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = Quadratic::random(6, 3, &mut rng);
    let g = erdos_renyi_support(6, 0.5, 4, &mut rng).unwrap();
    (p, g)
}

#[test]
fn tracking_step_matches_the_kronecker_form() {
    let (p, g) = setup(1);
    let (n, d) = (p.agents(), p.dim());
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let plan: SamplePlan = BatchSchedule::Geometric { q: 0.9 }.into();
    for _ in 0..100 {
        let mut state = random_state(&p, &mut rng);
        let alpha: Vec<f64> = (0..n).map(|_| 0.01 + 0.05 * rng.random::<f64>()).collect();
        let (x, y, grad) = (stack(&state.x), stack(&state.y), stack(&state.grad));
        let rec = step_dvss(&mut state, &p, &g, &plan, &alpha, &mut rng).unwrap();
        let a = g.support()[rec.matrix_index].matrix();
        let w = a.kronecker(&DMatrix::identity(d, d));
        let da = DMatrix::from_diagonal(&DVector::from_vec(alpha.clone())).kronecker(&DMatrix::identity(d, d));
        let x_next = &w * &x - &da * &y;
        let y_next = &w * &y + stacked_gradient(&p, &x_next, d) - &grad;
        assert!((stack(&state.x) - x_next).amax() <= 1e-12);
        assert!((stack(&state.y) - y_next).amax() <= 1e-12);
    }
}

#[test]
fn dsgd_step_matches_the_kronecker_form() {
    let (p, g) = setup(3);
    let d = p.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let steps = StepRule::identical(0.03, p.agents());
    for _ in 0..100 {
        let mut state = random_state(&p, &mut rng);
        let (x, grad) = (stack(&state.x), stack(&state.grad));
        let rec = step_baseline(&mut state, AlgorithmKind::Dsgd, &steps, &p, &g, &mut rng).unwrap();
        let w = g.support()[rec.matrix_index].matrix().kronecker(&DMatrix::identity(d, d));
        let x_next = &w * &x - grad * 0.03;
        assert!((stack(&state.x) - x_next).amax() <= 1e-12);
    }
}

#[test]
fn single_agent_tracking_is_gradient_descent() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let p = Quadratic::random(1, 4, &mut rng);
    let g = GraphProcess::deterministic(WeightMatrix::identity(1).unwrap()).unwrap();
    let alpha = 0.1;
    let x0 = DMatrix::from_fn(1, 4, |_, j| j as f64 - 1.5);
    let mut state = init(&p, &g, &BatchSchedule::Constant { b: 1 }.into(), &x0, &mut rng).unwrap();
    let mut x = x0.row(0).transpose();
    for _ in 0..100 {
        step_dvss(&mut state, &p, &g, &BatchSchedule::Constant { b: 1 }.into(), &[alpha], &mut rng).unwrap();
        x = &x - p.gradient(0, &x) * alpha;
        assert!((state.x.row(0).transpose() - &x).amax() <= 1e-12);
    }
}

#[test]
fn frames_match_the_projection_oracle() {
    let (p, _) = setup(6);
    let (n, d) = (p.agents(), p.dim());
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let ones = DMatrix::from_element(n, n, 1.0 / n as f64);
    let proj = DMatrix::identity(n * d, n * d) - ones.kronecker(&DMatrix::identity(d, d));
    let x_star = p.optimum().unwrap();
    for _ in 0..50 {
        let state = random_state(&p, &mut rng);
        let f = frame(&state, &p);
        let x = stack(&state.x);
        let cx = (&proj * &x).norm();
        let cy = (&proj * stack(&state.y)).norm();
        let x_bar = (0..n).fold(DVector::zeros(d), |a, i| a + x.rows(i * d, d)) / n as f64;
        let opt = (&x_bar - &x_star).norm();
        assert!((f.consensus_x - cx).abs() <= 1e-12);
        assert!((f.consensus_y - cy).abs() <= 1e-12);
        assert!((f.opt_error.unwrap() - opt).abs() <= 1e-12);
        assert!((f.e_combined.unwrap() - (opt * opt + cx * cx).sqrt()).abs() <= 1e-12);
    }
}

#[test]
fn invariants_hold_along_desk_runs() {
    let graph = desk_graph(DEFAULT_GRAPH_SEED).unwrap();
    let problem = desk_problem(20, 0, DEFAULT_PROBLEM_SEED).unwrap();
    let runs: Vec<(AlgorithmKind, SamplePlan, StepRule<f64>)> = vec![
        (AlgorithmKind::Dvss, BatchSchedule::Geometric { q: 0.98 }.into(), StepRule::identical(0.01, 20)),
        (AlgorithmKind::Dvss, BatchSchedule::Power { p: 1.1 }.into(), StepRule::Fixed((0..20).map(|i| 0.004 + 0.0003 * i as f64).collect())),
        (AlgorithmKind::Dsgt, BatchSchedule::Constant { b: 1 }.into(), StepRule::identical(0.005, 20)),
        (AlgorithmKind::Dsgd, BatchSchedule::Constant { b: 1 }.into(), StepRule::Decreasing { c: 0.2 }),
    ];
    for (kind, plan, steps) in runs {
        let sim = Simulation::new(kind, &problem, &graph, plan, steps, 300);
        let t = sim.run(&mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert!(t.max_mixing_drift <= 1e-12, "{kind:?}: {}", t.max_mixing_drift);
        if kind != AlgorithmKind::Dsgd {
            assert!(t.max_tracking_residual <= 1e-9, "{kind:?}: {}", t.max_tracking_residual);
        }
    }
}

#[test]
fn convex_bound_is_stable_without_noise() {
    let graph = desk_graph(DEFAULT_GRAPH_SEED).unwrap();
    let convex = desk_problem(20, 2, DEFAULT_PROBLEM_SEED).unwrap();
    let exact = Exact(&convex);
    let alpha = dvss::theory::stepsize_bound_convex(graph.rho1(), convex.constants().lip);
    let sim = Simulation::new(
        AlgorithmKind::Dvss,
        &exact,
        &graph,
        BatchSchedule::Constant { b: 1 }.into(),
        StepRule::identical(alpha, 20),
        10_000,
    );
    let t = sim.run(&mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    assert!(!t.status.is_diverged());
    let first = t.frames[0].e_combined.unwrap();
    let last = t.frames.last().unwrap().e_combined.unwrap();
    assert!(last <= first, "{first} -> {last}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn ensemble_means_ignore_seed_order(seed in 0u64..1000, rot in 1usize..7) {
        let graph = desk_graph(DEFAULT_GRAPH_SEED).unwrap();
        let problem = desk_problem(20, 0, DEFAULT_PROBLEM_SEED).unwrap();
        let sim = Simulation::new(
            AlgorithmKind::Dvss,
            &problem,
            &graph,
            BatchSchedule::Geometric { q: 0.95 }.into(),
            StepRule::identical(0.01, 20),
            20,
        );
        let seeds: Vec<u64> = (seed..seed + 8).collect();
        let mut shuffled = seeds.clone();
        shuffled.rotate_left(rot);
        shuffled.swap(0, 5);
        let a = ensemble_with_seeds(&sim, &seeds).unwrap();
        let b = ensemble_with_seeds(&sim, &shuffled).unwrap();
        prop_assert_eq!(a.e, b.e);
        prop_assert_eq!(a.consensus_y, b.consensus_y);
        prop_assert_eq!(a.samples_cum, b.samples_cum);
    }
}
