use dvss::theory::{
    det_identity_check, j_hat, j_matrix, spectral_radius_3x3, stepsize_bound_identical,
    stepsize_bound_strongly_convex, StepStats,
};
use nalgebra::{Matrix3, Vector3};
use proptest::prelude::*;

/// Power iteration on `M`, which for a non-negative irreducible matrix
/// converges to the Perron root.
fn power_iteration(m: &Matrix3<f64>) -> f64 {
    let mut v = Vector3::new(1.0, 1.0, 1.0);
    let mut lambda = 0.0;
    for _ in 0..200_000 {
        let w = m * v;
        let next = w.norm() / v.norm();
        v = w / w.norm();
        if (next - lambda).abs() <= 1e-15 * next {
            return next;
        }
        lambda = next;
    }
    lambda
}

/// Brute-force spectral radius from numerically found eigenvalues.
fn radius_by_schur(m: &Matrix3<f64>) -> f64 {
    m.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Steps around `ᾱ = 1` whose dispersion is exactly `d`: half the agents at
/// `1 + s`, half at `1 − s`, one at 1 when `n` is odd.
fn dispersed(n: usize, d: f64) -> Vec<f64> {
    let paired = n - n % 2;
    let s = d * (n as f64 / paired as f64).sqrt();
    (0..n)
        .map(|i| if i >= paired { 1.0 } else if i % 2 == 0 { 1.0 + s } else { 1.0 - s })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn admissible_heterogeneous_steps_contract(
        rho1 in 0.05f64..0.95,
        kappa in 1.0f64..100.0,
        d in 0.0f64..=0.5,
        n in prop::sample::select(vec![5usize, 20, 100]),
        lip in 0.5f64..20.0,
    ) {
        let eta = lip / kappa;
        let shape = dispersed(n, d);
        let stats0 = StepStats::new(&shape).unwrap();
        let bound = stepsize_bound_strongly_convex(rho1, eta, lip, stats0.d_alpha).unwrap();
        // every α_i L sits at 0.99 of the admissible limit
        let scale = 0.99 * bound.beta_limit() / (stats0.alpha_max * lip);
        let alpha: Vec<f64> = shape.iter().map(|a| a * scale).collect();
        let stats = StepStats::new(&alpha).unwrap();
        prop_assert!((stats.d_alpha - stats0.d_alpha).abs() <= 1e-9);
        let r = spectral_radius_3x3(&j_matrix(&stats, rho1, eta, lip));
        prop_assert!(r < 1.0, "rho(J) = {r}");
    }

    #[test]
    fn determinant_identity(
        rho1 in 0.0f64..0.99,
        kappa in 1.0f64..100.0,
        lip in 0.1f64..50.0,
        frac in 0.0f64..2.0,
        n in 1usize..200,
    ) {
        let eta = lip / kappa;
        let alpha = frac * stepsize_bound_identical(rho1, eta, lip);
        let (lhs, rhs) = det_identity_check(rho1, eta, lip, alpha, n);
        prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + rhs.abs()), "{lhs} vs {rhs}");
    }

    #[test]
    fn c2_squared_is_c1_squared_plus_n_mean_squared(
        alpha in prop::collection::vec(1e-4f64..1.0, 1..50),
    ) {
        let s = StepStats::new(&alpha).unwrap();
        let n = alpha.len() as f64;
        let lhs = s.c2 * s.c2;
        let rhs = s.c1 * s.c1 + n * s.alpha_bar * s.alpha_bar;
        prop_assert!((lhs - rhs).abs() <= 1e-12 * lhs);
    }

    #[test]
    fn cubic_radius_agrees_with_generic_eigensolver(
        entries in prop::array::uniform9(0.0f64..2.0),
    ) {
        let m = Matrix3::from_row_slice(&entries);
        let a = spectral_radius_3x3(&m);
        let b = radius_by_schur(&m);
        prop_assert!((a - b).abs() <= 1e-8 * (1.0 + b), "{a} vs {b}");
    }
}

#[test]
fn identical_steps_reduce_j_to_j_hat_exactly() {
    for &(alpha, rho1, eta, lip, n) in &[
        (0.001, 0.6, 1.0, 10.0, 20),
        (0.01, 0.57, 7.0, 9.97, 20),
        (1e-5, 0.05, 0.1, 3.0, 7),
    ] {
        let stats = StepStats::identical(alpha, n);
        assert_eq!(j_matrix(&stats, rho1, eta, lip), j_hat(alpha, rho1, eta, lip, n));
        let from_vec = StepStats::new(&vec![alpha; n]).unwrap();
        assert_eq!(j_matrix(&from_vec, rho1, eta, lip), j_hat(alpha, rho1, eta, lip, n));
    }
}

#[test]
fn desk_j_hat_matches_power_iteration() {
    let graph = dvss::experiment::desk_graph(dvss::experiment::DEFAULT_GRAPH_SEED).unwrap();
    let problem = dvss::experiment::desk_problem(20, 0, dvss::experiment::DEFAULT_PROBLEM_SEED).unwrap();
    use dvss::StochasticProblem;
    let c = problem.constants();
    for alpha in [0.001, 0.005, 0.01] {
        let j = j_hat(alpha, graph.rho1(), c.eta, c.lip, 20);
        let a = spectral_radius_3x3(&j);
        let b = power_iteration(&j);
        assert!((a - b).abs() <= 1e-8 * b, "alpha {alpha}: {a} vs {b}");
    }
}

#[test]
fn heterogeneous_example_point() {
    let (rho1, eta, lip, d) = (0.6, 1.0, 10.0, 0.1);
    let b = stepsize_bound_strongly_convex(rho1, eta, lip, d).unwrap();
    let kappa: f64 = 10.0;
    let root = (d * d + 1.0f64).sqrt();
    let c3 = root * (1.0 + kappa * d * d) + kappa * root;
    let c4 = (1.0 + (kappa + 1.0) * d) * 0.4 + 1.0 + kappa * d * d + kappa * root * d * 0.4;
    let beta = (-c4 + (c4 * c4 + 4.0 * c3 * 0.16).sqrt()) / (2.0 * c3);
    assert!((b.beta_star - beta).abs() <= 1e-14);
    assert!((c3 * beta * beta + c4 * beta - 0.16).abs() <= 1e-12);
    assert!((b.second_term.unwrap() - 0.4 / (d * kappa * 11.0)).abs() <= 1e-15);
    let alpha: Vec<f64> = dispersed(20, d).iter().map(|a| a * 0.99 * b.beta_limit() / ((1.0 + d) * lip)).collect();
    let stats = StepStats::new(&alpha).unwrap();
    assert!(spectral_radius_3x3(&j_matrix(&stats, rho1, eta, lip)) < 1.0);
}
