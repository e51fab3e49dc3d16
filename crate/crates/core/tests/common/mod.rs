//! Test fixtures shared by the integration tests.

#![allow(dead_code)]

use dvss::error::ProblemError;
use dvss::problems::ProblemConstants;
use dvss::{NetworkState, StochasticProblem};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Noiseless quadratics `f_i(x) = ½xᵀQ_i x − b_iᵀx`: every sampled gradient
/// is exact, so a step is a deterministic function of the state and the
/// mixing matrix.
pub struct Quadratic {
    pub q: Vec<DMatrix<f64>>,
    pub b: Vec<DVector<f64>>,
}

impl Quadratic {
    pub fn random(n: usize, d: usize, rng: &mut ChaCha8Rng) -> Self {
        let q = (0..n)
            .map(|_| {
                let m = DMatrix::from_fn(d, d, |_, _| rng.random::<f64>() - 0.5);
                &m * m.transpose() + DMatrix::identity(d, d)
            })
            .collect();
        let b = (0..n).map(|_| DVector::from_fn(d, |_, _| rng.random::<f64>())).collect();
        Self { q, b }
    }

    fn mean_q(&self) -> DMatrix<f64> {
        self.q.iter().fold(DMatrix::zeros(self.dim(), self.dim()), |a, q| a + q) / self.q.len() as f64
    }

    fn value(&self, x: &DVector<f64>) -> f64 {
        self.q
            .iter()
            .zip(&self.b)
            .map(|(q, b)| 0.5 * x.dot(&(q * x)) - b.dot(x))
            .sum::<f64>()
            / self.q.len() as f64
    }
}

impl StochasticProblem<f64> for Quadratic {
    fn agents(&self) -> usize {
        self.q.len()
    }

    fn dim(&self) -> usize {
        self.b[0].len()
    }

    fn gradient(&self, agent: usize, x: &DVector<f64>) -> DVector<f64> {
        &self.q[agent] * x - &self.b[agent]
    }

    fn sample_gradient<R: Rng + ?Sized>(&self, agent: usize, x: &DVector<f64>, _: &mut R) -> DVector<f64> {
        self.gradient(agent, x)
    }

    fn minibatch_gradient<R: Rng + ?Sized>(
        &self,
        agent: usize,
        x: &DVector<f64>,
        batch: u128,
        _: &mut R,
    ) -> Result<DVector<f64>, ProblemError> {
        if batch == 0 {
            return Err(ProblemError::ZeroBatch);
        }
        Ok(self.gradient(agent, x))
    }

    fn constants(&self) -> ProblemConstants<f64> {
        let ev = self.mean_q().symmetric_eigen().eigenvalues;
        let lip = self
            .q
            .iter()
            .map(|q| q.clone().symmetric_eigen().eigenvalues.max())
            .fold(0.0, f64::max);
        ProblemConstants { eta: ev.min(), lip, nu: 0.0 }
    }

    fn optimum(&self) -> Option<DVector<f64>> {
        let rhs = self.b.iter().fold(DVector::zeros(self.dim()), |a, b| a + b) / self.q.len() as f64;
        self.mean_q().lu().solve(&rhs)
    }

    fn suboptimality(&self, x: &DVector<f64>) -> Option<f64> {
        Some(self.value(x) - self.value(&self.optimum()?))
    }
}

/// Row-major stacking `[x_1; …; x_n]`.
pub fn stack(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(m.len(), m.row_iter().flat_map(|r| r.iter().copied().collect::<Vec<_>>()))
}

pub fn stacked_gradient(p: &Quadratic, x: &DVector<f64>, d: usize) -> DVector<f64> {
    let n = p.agents();
    let mut g = DVector::zeros(n * d);
    for i in 0..n {
        let xi = x.rows(i * d, d).into_owned();
        g.rows_mut(i * d, d).copy_from(&p.gradient(i, &xi));
    }
    g
}

pub fn random_state(p: &Quadratic, rng: &mut ChaCha8Rng) -> NetworkState<f64> {
    let (n, d) = (p.agents(), p.dim());
    let x = DMatrix::from_fn(n, d, |_, _| 2.0 * rng.random::<f64>() - 1.0);
    let y = DMatrix::from_fn(n, d, |_, _| 2.0 * rng.random::<f64>() - 1.0);
    let mut grad = DMatrix::zeros(n, d);
    for i in 0..n {
        grad.row_mut(i).copy_from(&p.gradient(i, &x.row(i).transpose()).transpose());
    }
    NetworkState { x, y, grad, k: 3, samples: vec![0; n], comms: 0 }
}

/// Any problem with its oracle replaced by the exact gradient (`ν = 0`).
pub struct Exact<'a, P>(pub &'a P);

impl<P: StochasticProblem<f64>> StochasticProblem<f64> for Exact<'_, P> {
    fn agents(&self) -> usize {
        self.0.agents()
    }

    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn gradient(&self, agent: usize, x: &DVector<f64>) -> DVector<f64> {
        self.0.gradient(agent, x)
    }

    fn sample_gradient<R: Rng + ?Sized>(&self, agent: usize, x: &DVector<f64>, _: &mut R) -> DVector<f64> {
        self.0.gradient(agent, x)
    }

    fn constants(&self) -> ProblemConstants<f64> {
        ProblemConstants { nu: 0.0, ..self.0.constants() }
    }

    fn optimum(&self) -> Option<DVector<f64>> {
        self.0.optimum()
    }

    fn suboptimality(&self, x: &DVector<f64>) -> Option<f64> {
        self.0.suboptimality(x)
    }
}
