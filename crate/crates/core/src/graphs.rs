//! Random communication topologies with doubly stochastic weights.
//!
//! A [`GraphProcess`] is a finite distribution over [`WeightMatrix`] values;
//! every iteration draws one matrix independently of the past. The mixing
//! parameter [`GraphProcess::rho1`] is evaluated exactly from the support.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::GraphError;
use crate::linalg::{is_strongly_connected, symmetric_spectral_radius};
use crate::scalar::Scalar;

/// Absolute tolerance used for the stochasticity checks.
pub const STOCHASTIC_TOL: f64 = 1e-12;

/// Retry budget for drawing a support whose mean graph is connected.
pub const CONNECTIVITY_RETRIES: usize = 1000;

fn stochastic_tol<T: Scalar>(n: usize) -> T {
    T::lit(STOCHASTIC_TOL).max(T::epsilon() * T::lit(8.0 * n.max(1) as f64))
}

/// Non-negative `n × n` matrix whose rows and columns each sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix<T: Scalar> {
    entries: DMatrix<T>,
    /// Off-diagonal positive entries (directed links used in one round).
    links: usize,
}

impl<T: Scalar> WeightMatrix<T> {
    /// Validates the doubly stochastic invariants.
    pub fn new(entries: DMatrix<T>) -> Result<Self, GraphError> {
        let n = entries.nrows();
        if n == 0 {
            return Err(GraphError::Empty);
        }
        if entries.ncols() != n {
            return Err(GraphError::DimensionMismatch {
                index: 0,
                expected: n,
                found: entries.ncols(),
            });
        }
        check_doubly_stochastic(&entries).map_err(|reason| GraphError::NotDoublyStochastic {
            index: 0,
            reason,
        })?;
        let links = count_links(&entries);
        Ok(Self { entries, links })
    }

    /// `(1/n) 𝟙𝟙ᵀ`, the exact-averaging matrix.
    pub fn averaging(n: usize) -> Result<Self, GraphError> {
        if n == 0 {
            return Err(GraphError::Empty);
        }
        Self::new(DMatrix::from_element(n, n, T::one() / T::lit(n as f64)))
    }

    pub fn identity(n: usize) -> Result<Self, GraphError> {
        if n == 0 {
            return Err(GraphError::Empty);
        }
        Self::new(DMatrix::identity(n, n))
    }

    pub fn n(&self) -> usize {
        self.entries.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<T> {
        &self.entries
    }

    /// Number of directed links `(i, j)`, `i ≠ j`, with positive weight.
    pub fn links(&self) -> usize {
        self.links
    }

    pub fn is_symmetric(&self, tol: T) -> bool {
        (&self.entries - self.entries.transpose()).abs().max() <= tol
    }
}

fn check_doubly_stochastic<T: Scalar>(m: &DMatrix<T>) -> Result<(), String> {
    let n = m.nrows();
    let tol = stochastic_tol::<T>(n);
    if let Some(v) = m.iter().find(|v| !v.is_finite_value() || **v < T::zero()) {
        return Err(format!("entry {v} is negative or not finite"));
    }
    for i in 0..n {
        let row: T = m.row(i).sum();
        if (row - T::one()).abs() > tol {
            return Err(format!("row {i} sums to {row}"));
        }
        let col: T = m.column(i).sum();
        if (col - T::one()).abs() > tol {
            return Err(format!("column {i} sums to {col}"));
        }
    }
    Ok(())
}

fn count_links<T: Scalar>(m: &DMatrix<T>) -> usize {
    let n = m.nrows();
    (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .filter(|&(i, j)| i != j && m[(i, j)] > T::zero())
        .count()
}

/// Metropolis weights `a_ij = 1/(1 + max(deg_i, deg_j))` on an undirected
/// simple graph, with the self-weight absorbing the remainder of each row.
pub fn metropolis_weights<T: Scalar>(
    n: usize,
    edges: &[(usize, usize)],
) -> Result<WeightMatrix<T>, GraphError> {
    if n == 0 {
        return Err(GraphError::Empty);
    }
    let mut adjacent = vec![vec![false; n]; n];
    for &(i, j) in edges {
        if i == j || i >= n || j >= n {
            return Err(GraphError::BadEdge(i, j));
        }
        if adjacent[i][j] {
            return Err(GraphError::DuplicateEdge(i, j));
        }
        adjacent[i][j] = true;
        adjacent[j][i] = true;
    }
    let degree: Vec<usize> = adjacent
        .iter()
        .map(|row| row.iter().filter(|&&a| a).count())
        .collect();
    let mut m = DMatrix::<T>::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if adjacent[i][j] {
                m[(i, j)] = T::one() / T::lit((1 + degree[i].max(degree[j])) as f64);
            }
        }
    }
    for i in 0..n {
        let off: T = m.row(i).sum();
        m[(i, i)] = T::one() - off;
    }
    WeightMatrix::new(m)
}

/// One Erdős–Rényi `G(n, p)` edge list.
pub fn erdos_renyi_edges<R: Rng + ?Sized>(n: usize, p: f64, rng: &mut R) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if rng.random::<f64>() < p {
                edges.push((i, j));
            }
        }
    }
    edges
}

/// Finite distribution over weight matrices, sampled i.i.d. per round.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphProcess<T: Scalar> {
    support: Vec<WeightMatrix<T>>,
    probabilities: Vec<T>,
    cumulative: Vec<f64>,
}

impl<T: Scalar> GraphProcess<T> {
    /// Builds a process, checking probabilities, dimensions and that the
    /// digraph of the mean matrix is strongly connected.
    pub fn new(support: Vec<WeightMatrix<T>>, probabilities: Vec<T>) -> Result<Self, GraphError> {
        let process = Self::new_unchecked_connectivity(support, probabilities)?;
        if !is_strongly_connected(&process.mean_matrix()) {
            return Err(GraphError::Disconnected);
        }
        Ok(process)
    }

    /// Same as [`GraphProcess::new`] but accepts a disconnected mean graph.
    /// Useful for degenerate diagnostics such as the identity process.
    pub fn new_unchecked_connectivity(
        support: Vec<WeightMatrix<T>>,
        probabilities: Vec<T>,
    ) -> Result<Self, GraphError> {
        if support.is_empty() {
            return Err(GraphError::EmptySupport);
        }
        if probabilities.len() != support.len() {
            return Err(GraphError::BadProbabilities(format!(
                "{} probabilities for {} matrices",
                probabilities.len(),
                support.len()
            )));
        }
        let n = support[0].n();
        for (index, m) in support.iter().enumerate() {
            if m.n() != n {
                return Err(GraphError::DimensionMismatch {
                    index,
                    expected: n,
                    found: m.n(),
                });
            }
        }
        if probabilities.iter().any(|p| !p.is_finite_value() || *p < T::zero()) {
            return Err(GraphError::BadProbabilities("negative or non-finite entry".into()));
        }
        let total = probabilities.iter().fold(T::zero(), |a, &p| a + p);
        if (total - T::one()).abs() > stochastic_tol::<T>(support.len()) {
            return Err(GraphError::BadProbabilities(format!("sum is {total}")));
        }
        let mut acc = 0.0;
        let cumulative = probabilities
            .iter()
            .map(|p| {
                acc += p.as_f64();
                acc
            })
            .collect();
        Ok(Self {
            support,
            probabilities,
            cumulative,
        })
    }

    /// Degenerate process that always returns `matrix`.
    pub fn deterministic(matrix: WeightMatrix<T>) -> Result<Self, GraphError> {
        Self::new(vec![matrix], vec![T::one()])
    }

    /// Uniform mixture over the given matrices.
    pub fn uniform(support: Vec<WeightMatrix<T>>) -> Result<Self, GraphError> {
        let m = support.len();
        if m == 0 {
            return Err(GraphError::EmptySupport);
        }
        let p = T::one() / T::lit(m as f64);
        Self::new(support, vec![p; m])
    }

    pub fn n(&self) -> usize {
        self.support[0].n()
    }

    pub fn support(&self) -> &[WeightMatrix<T>] {
        &self.support
    }

    pub fn probabilities(&self) -> &[T] {
        &self.probabilities
    }

    /// Index of a draw from the mixing distribution. Always consumes one
    /// uniform variate so the RNG stream position does not depend on the
    /// support size.
    pub fn sample_index<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random::<f64>() * self.cumulative[self.cumulative.len() - 1];
        self.cumulative
            .iter()
            .position(|&c| u < c)
            .unwrap_or(self.support.len() - 1)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> &WeightMatrix<T> {
        &self.support[self.sample_index(rng)]
    }

    /// `Ā = Σ pₘ Aₘ`.
    pub fn mean_matrix(&self) -> DMatrix<T> {
        let n = self.n();
        self.support
            .iter()
            .zip(&self.probabilities)
            .fold(DMatrix::zeros(n, n), |acc, (a, &p)| acc + a.matrix() * p)
    }

    /// `E[AᵀA] − 𝟙𝟙ᵀ/n`, enumerated over the finite support.
    pub fn consensus_operator(&self) -> DMatrix<T> {
        let n = self.n();
        let second = self
            .support
            .iter()
            .zip(&self.probabilities)
            .fold(DMatrix::zeros(n, n), |acc, (a, &p)| {
                acc + a.matrix().transpose() * a.matrix() * p
            });
        second - DMatrix::from_element(n, n, T::one() / T::lit(n as f64))
    }

    /// Mixing parameter `ρ₁ = √ρ(E[AᵀA] − 𝟙𝟙ᵀ/n)`; larger means worse
    /// connectivity.
    pub fn rho1(&self) -> T {
        symmetric_spectral_radius(&self.consensus_operator()).sqrt()
    }

    /// Expected number of directed links per round.
    pub fn expected_links(&self) -> T {
        self.support
            .iter()
            .zip(&self.probabilities)
            .fold(T::zero(), |acc, (a, &p)| acc + T::lit(a.links() as f64) * p)
    }

    pub fn to_document(&self) -> GraphDocument {
        GraphDocument {
            n: self.n(),
            probabilities: self.probabilities.iter().map(|p| p.as_f64()).collect(),
            matrices: self
                .support
                .iter()
                .map(|a| {
                    let m = a.matrix();
                    (0..m.nrows())
                        .map(|i| (0..m.ncols()).map(|j| m[(i, j)].as_f64()).collect())
                        .collect()
                })
                .collect(),
        }
    }

    pub fn from_document(doc: &GraphDocument) -> Result<Self, GraphError> {
        let mut support = Vec::with_capacity(doc.matrices.len());
        for (index, rows) in doc.matrices.iter().enumerate() {
            if rows.len() != doc.n || rows.iter().any(|r| r.len() != doc.n) {
                return Err(GraphError::DimensionMismatch {
                    index,
                    expected: doc.n,
                    found: rows.len(),
                });
            }
            let m = DMatrix::from_fn(doc.n, doc.n, |i, j| T::lit(rows[i][j]));
            let w = WeightMatrix::new(m).map_err(|e| match e {
                GraphError::NotDoublyStochastic { reason, .. } => {
                    GraphError::NotDoublyStochastic { index, reason }
                }
                other => other,
            })?;
            support.push(w);
        }
        let probabilities = doc.probabilities.iter().map(|&p| T::lit(p)).collect();
        Self::new(support, probabilities)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("graph document serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, GraphError> {
        let doc: GraphDocument =
            serde_json::from_str(text).map_err(|e| GraphError::Parse(e.to_string()))?;
        Self::from_document(&doc)
    }
}

/// On-disk form of a [`GraphProcess`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphDocument {
    pub n: usize,
    pub probabilities: Vec<f64>,
    pub matrices: Vec<Vec<Vec<f64>>>,
}

/// `count` independent `G(n, p)` graphs with Metropolis weights, uniformly
/// mixed. The whole set is redrawn until the mean graph is connected, up to
/// [`CONNECTIVITY_RETRIES`] attempts.
pub fn erdos_renyi_support<T: Scalar, R: Rng + ?Sized>(
    n: usize,
    p: f64,
    count: usize,
    rng: &mut R,
) -> Result<GraphProcess<T>, GraphError> {
    if n == 0 {
        return Err(GraphError::Empty);
    }
    if !(p > 0.0 && p <= 1.0) {
        return Err(GraphError::BadProbability(p));
    }
    if count == 0 {
        return Err(GraphError::EmptySupport);
    }
    for _ in 0..CONNECTIVITY_RETRIES {
        let support = (0..count)
            .map(|_| metropolis_weights::<T>(n, &erdos_renyi_edges(n, p, rng)))
            .collect::<Result<Vec<_>, _>>()?;
        match GraphProcess::uniform(support) {
            Ok(process) => return Ok(process),
            Err(GraphError::Disconnected) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(GraphError::ConnectivityRetriesExhausted(CONNECTIVITY_RETRIES))
}
