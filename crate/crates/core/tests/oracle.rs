//! Statistics of the sampled-gradient oracle against the exact gradient.

use dvss::experiment::{desk_problem, DEFAULT_PROBLEM_SEED};
use dvss::problems::SamplingMode;
use dvss::{RegressionInstance, StochasticProblem};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_point(d: usize, center: &DVector<f64>, radius: f64, rng: &mut ChaCha8Rng) -> DVector<f64> {
    let dir = DVector::from_fn(d, |_, _| rng.random::<f64>() - 0.5);
    center + dir.normalize() * (radius * rng.random::<f64>())
}

#[test]
fn single_samples_are_unbiased() {
    let problem = desk_problem(20, 0, DEFAULT_PROBLEM_SEED).unwrap();
    let x_star = problem.optimum().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let draws = 100_000;
    for point in 0..20 {
        let agent = point % problem.agents();
        let x = random_point(5, &x_star, 2.0, &mut rng);
        let exact = problem.gradient(agent, &x);
        let mut sum = DVector::zeros(5);
        let mut sq = DVector::zeros(5);
        for _ in 0..draws {
            let g = problem.sample_gradient(agent, &x, &mut rng);
            sq += g.component_mul(&g);
            sum += g;
        }
        let n = draws as f64;
        let mean = &sum / n;
        for c in 0..5 {
            let var = (sq[c] / n - mean[c] * mean[c]) * n / (n - 1.0);
            let se = (var / n).sqrt();
            assert!(
                (mean[c] - exact[c]).abs() <= 4.0 * se,
                "point {point} coord {c}: {} vs {} (se {se})",
                mean[c],
                exact[c]
            );
        }
    }
}

#[test]
fn aggregated_minibatches_are_unbiased() {
    let problem = desk_problem(20, 0, DEFAULT_PROBLEM_SEED)
        .unwrap()
        .with_sampling(SamplingMode::Aggregated);
    let x_star = problem.optimum().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let draws = 20_000;
    for point in 0..20 {
        let agent = (3 * point) % problem.agents();
        let x = random_point(5, &x_star, 2.0, &mut rng);
        let exact = problem.gradient(agent, &x);
        let mut sum = DVector::zeros(5);
        let mut sq = DVector::zeros(5);
        for _ in 0..draws {
            let g = problem.minibatch_gradient(agent, &x, 16, &mut rng).unwrap();
            sq += g.component_mul(&g);
            sum += g;
        }
        let n = draws as f64;
        let mean = &sum / n;
        for c in 0..5 {
            let se = ((sq[c] / n - mean[c] * mean[c]) / (n - 1.0)).sqrt();
            assert!((mean[c] - exact[c]).abs() <= 4.0 * se, "point {point} coord {c}");
        }
    }
}

/// `E‖g̃(x) − ∇f(x)‖²` stacked over agents, at points on the sphere where
/// the noise bound ν is attained.
fn stacked_second_moment(problem: &RegressionInstance<f64>, batch: u128, reps: usize, seed: u64) -> f64 {
    let n = problem.agents();
    let x_star = problem.optimum().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xs: Vec<DVector<f64>> = (0..n)
        .map(|_| {
            let dir = DVector::from_fn(5, |_, _| rng.random::<f64>() - 0.5);
            &x_star + dir.normalize() * problem.nu_radius()
        })
        .collect();
    let exact: Vec<DVector<f64>> = (0..n).map(|i| problem.gradient(i, &xs[i])).collect();
    let mut total = 0.0;
    for _ in 0..reps {
        for i in 0..n {
            let g = problem.minibatch_gradient(i, &xs[i], batch, &mut rng).unwrap();
            total += (g - &exact[i]).norm_squared();
        }
    }
    total / reps as f64
}

#[test]
fn stacked_noise_second_moment_is_within_the_bound() {
    let base = desk_problem(20, 0, DEFAULT_PROBLEM_SEED).unwrap();
    let nu = base.constants().nu;
    let n = base.agents() as f64;
    for mode in [SamplingMode::Explicit, SamplingMode::Aggregated] {
        let problem = base.clone().with_sampling(mode);
        for (j, batch) in [1u128, 4, 16, 64].into_iter().enumerate() {
            let m = stacked_second_moment(&problem, batch, 10_000, 100 + j as u64);
            let bound = n * nu * nu / batch as f64;
            assert!(m <= 1.1 * bound, "{mode:?} N={batch}: {m} > 1.1 * {bound}");
        }
    }
}

#[test]
fn explicit_and_aggregated_agree_in_second_moment() {
    let base = desk_problem(20, 0, DEFAULT_PROBLEM_SEED).unwrap();
    let e = stacked_second_moment(&base.clone().with_sampling(SamplingMode::Explicit), 16, 4000, 5);
    let a = stacked_second_moment(&base.with_sampling(SamplingMode::Aggregated), 16, 4000, 6);
    // both estimate the same expectation; loose relative agreement
    assert!((e - a).abs() <= 0.1 * e, "{e} vs {a}");
}
