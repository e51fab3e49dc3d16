//! Expectation-valued local objectives and their sampled-gradient oracles.
//!
//! The shipped instance is distributed linear-regression parameter
//! estimation: agent `i` observes `d = uᵀx* + ε` with `u ~ N(0, R_i)` and
//! `ε ~ N(0, σ_i²)`, and its local cost is `f_i(x) = ½ E[(d − uᵀx)²]`, so that
//! `∇f_i(x) = R_i (x − x*)` and one sampled gradient is `u uᵀx − d u`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::ProblemError;
use crate::linalg::{psd_factor, random_orthogonal, symmetric_eigenvalues};
use crate::scalar::Scalar;

/// Curvature and noise constants of a problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProblemConstants<T> {
    /// Strong-convexity modulus of `F`; zero when merely convex.
    pub eta: T,
    /// Lipschitz constant of every `∇f_i`.
    pub lip: T,
    /// Uniform bound on the per-sample noise standard deviation.
    pub nu: T,
}

/// A network of `n` local stochastic objectives on `ℝᵈ`.
pub trait StochasticProblem<T: Scalar>: Sync {
    fn agents(&self) -> usize;

    fn dim(&self) -> usize;

    /// Exact `∇f_i(x)`.
    fn gradient(&self, agent: usize, x: &DVector<T>) -> DVector<T>;

    /// One sampled gradient `∇h_i(x, ξ)`.
    fn sample_gradient<R: Rng + ?Sized>(&self, agent: usize, x: &DVector<T>, rng: &mut R)
        -> DVector<T>;

    /// Mean of `batch` independent sampled gradients.
    fn minibatch_gradient<R: Rng + ?Sized>(
        &self,
        agent: usize,
        x: &DVector<T>,
        batch: u128,
        rng: &mut R,
    ) -> Result<DVector<T>, ProblemError> {
        if batch == 0 {
            return Err(ProblemError::ZeroBatch);
        }
        let mut acc = DVector::zeros(self.dim());
        for _ in 0..batch {
            acc += self.sample_gradient(agent, x, rng);
        }
        Ok(acc / T::lit(batch as f64))
    }

    fn constants(&self) -> ProblemConstants<T>;

    fn optimum(&self) -> Option<DVector<T>>;

    /// `F(x) − F*` when the optimal value is known.
    fn suboptimality(&self, x: &DVector<T>) -> Option<T>;

    /// `∇F(x) = (1/n) Σ ∇f_i(x)`.
    fn global_gradient(&self, x: &DVector<T>) -> DVector<T> {
        let n = self.agents();
        (0..n).fold(DVector::zeros(self.dim()), |acc, i| acc + self.gradient(i, x)) / T::lit(n as f64)
    }
}

/// Mini-batch mean that also charges `batch` samples to `counters[agent]`.
pub fn draw_minibatch<T: Scalar, P: StochasticProblem<T>, R: Rng + ?Sized>(
    problem: &P,
    agent: usize,
    x: &DVector<T>,
    batch: u128,
    counters: &mut [u128],
    rng: &mut R,
) -> Result<DVector<T>, ProblemError> {
    let g = problem.minibatch_gradient(agent, x, batch, rng)?;
    counters[agent] = counters[agent].saturating_add(batch);
    Ok(g)
}

/// Norm bound `√n ν / √N` on the stacked mini-batch noise.
pub fn noise_norm_bound<T: Scalar, P: StochasticProblem<T>>(problem: &P, batch: u128) -> T {
    let n = T::lit(problem.agents() as f64);
    n.sqrt() * problem.constants().nu / T::lit(batch as f64).sqrt()
}

/// Eigenvalue draw for one agent's covariance: `zeros` exact zeros, the rest
/// uniform on `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EigenRange {
    pub lo: f64,
    pub hi: f64,
    #[serde(default)]
    pub zeros: usize,
}

/// Covariance spectra: one range shared by every agent, or one per agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumSpec {
    pub ranges: Vec<EigenRange>,
}

impl SpectrumSpec {
    pub fn uniform(lo: f64, hi: f64) -> Self {
        Self {
            ranges: vec![EigenRange { lo, hi, zeros: 0 }],
        }
    }

    /// Every agent gets `zeros` null directions, so each `f_i` is merely convex.
    pub fn rank_deficient(lo: f64, hi: f64, zeros: usize) -> Self {
        Self {
            ranges: vec![EigenRange { lo, hi, zeros }],
        }
    }

    fn range_for(&self, agent: usize) -> &EigenRange {
        if self.ranges.len() == 1 {
            &self.ranges[0]
        } else {
            &self.ranges[agent]
        }
    }
}

/// How mini-batch means are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    /// Average `N` explicit oracle calls.
    Explicit,
    /// Draw the mean directly from its exact joint law (Wishart sum of outer
    /// products plus the conditionally Gaussian noise term) at `O(d³)` cost
    /// independent of `N`. Requires `N ≥ d`; smaller batches fall back to
    /// explicit sampling.
    Aggregated,
    /// Aggregated for `N` above the threshold, explicit otherwise.
    Auto {
        #[serde(deserialize_with = "de_threshold")]
        threshold: u128,
    },
}

// Reached through the tagged problem spec, whose buffered content cannot
// hand out u128 directly.
fn de_threshold<'de, D: serde::Deserializer<'de>>(d: D) -> Result<u128, D::Error> {
    u64::deserialize(d).map(u128::from)
}

impl Default for SamplingMode {
    fn default() -> Self {
        SamplingMode::Auto { threshold: 64 }
    }
}

/// Linear regression parameter-estimation instance.
#[derive(Debug, Clone)]
pub struct RegressionInstance<T: Scalar> {
    covariances: Vec<DMatrix<T>>,
    factors: Vec<DMatrix<T>>,
    noise_sd: Vec<T>,
    x_star: DVector<T>,
    mean_covariance: DMatrix<T>,
    eta: T,
    lip: T,
    nu: T,
    nu_radius: T,
    sampling: SamplingMode,
}

/// Default radius of the reference ball `‖x − x*‖ ≤ r` on which `ν` is
/// certified. Quadratic oracles have noise growing with `‖x − x*‖`, so the
/// bound only holds on a bounded set.
pub const DEFAULT_NU_RADIUS: f64 = 2.0;

impl<T: Scalar> RegressionInstance<T> {
    /// Builds an instance from explicit covariances.
    pub fn new(
        covariances: Vec<DMatrix<T>>,
        noise_sd: Vec<T>,
        x_star: DVector<T>,
    ) -> Result<Self, ProblemError> {
        let n = covariances.len();
        if n == 0 {
            return Err(ProblemError::NoAgents);
        }
        let d = x_star.len();
        if d == 0 {
            return Err(ProblemError::ZeroDimension);
        }
        if noise_sd.len() != n {
            return Err(ProblemError::DimensionMismatch {
                expected: n,
                found: noise_sd.len(),
            });
        }
        if let Some(s) = noise_sd.iter().find(|s| **s < T::zero()) {
            return Err(ProblemError::NegativeNoise(s.as_f64()));
        }
        let tol = T::lit(1e-12).max(T::epsilon() * T::lit(64.0));
        for (i, r) in covariances.iter().enumerate() {
            if r.nrows() != d || r.ncols() != d {
                return Err(ProblemError::DimensionMismatch {
                    expected: d,
                    found: r.nrows(),
                });
            }
            let scale = T::one().max(r.abs().max());
            if (r - r.transpose()).abs().max() > tol * scale {
                return Err(ProblemError::NotPsd(i));
            }
            if symmetric_eigenvalues(r)[0] < -tol * scale {
                return Err(ProblemError::NotPsd(i));
            }
        }
        let factors = covariances.iter().map(psd_factor).collect();
        let mean_covariance = covariances
            .iter()
            .fold(DMatrix::zeros(d, d), |acc, r| acc + r)
            / T::lit(n as f64);
        let eta = symmetric_eigenvalues(&mean_covariance)[0].max(T::zero());
        let lip = covariances
            .iter()
            .map(|r| *symmetric_eigenvalues(r).last().expect("d >= 1"))
            .fold(T::zero(), |a, b| a.max(b));
        let mut inst = Self {
            covariances,
            factors,
            noise_sd,
            x_star,
            mean_covariance,
            eta,
            lip,
            nu: T::zero(),
            nu_radius: T::lit(DEFAULT_NU_RADIUS),
            sampling: SamplingMode::default(),
        };
        inst.nu = inst.nu_bound(inst.nu_radius);
        Ok(inst)
    }

    /// Changes the reference radius used to certify `ν`.
    pub fn with_nu_radius(mut self, radius: T) -> Self {
        self.nu_radius = radius;
        self.nu = self.nu_bound(radius);
        self
    }

    pub fn with_sampling(mut self, mode: SamplingMode) -> Self {
        self.sampling = mode;
        self
    }

    pub fn sampling(&self) -> SamplingMode {
        self.sampling
    }

    pub fn nu_radius(&self) -> T {
        self.nu_radius
    }

    pub fn covariances(&self) -> &[DMatrix<T>] {
        &self.covariances
    }

    pub fn noise_sd(&self) -> &[T] {
        &self.noise_sd
    }

    pub fn x_star(&self) -> &DVector<T> {
        &self.x_star
    }

    /// Hessian of `F`, `(1/n) Σ R_i`.
    pub fn mean_covariance(&self) -> &DMatrix<T> {
        &self.mean_covariance
    }

    /// Per-sample noise second moment of agent `i` at `x = x* + v`:
    /// `E‖(uuᵀ − R)v − εu‖² = vᵀ(tr(R) R + R²)v + σ² tr(R)` (Isserlis).
    pub fn noise_second_moment(&self, agent: usize, x: &DVector<T>) -> T {
        let r = &self.covariances[agent];
        let v = x - &self.x_star;
        let tr = r.trace();
        let rv = r * &v;
        tr * v.dot(&rv) + rv.dot(&rv) + self.noise_sd[agent].powi(2) * tr
    }

    /// `sup_{‖x − x*‖ ≤ radius} √E‖∇h_i − ∇f_i‖²`, maximised over agents.
    pub fn nu_bound(&self, radius: T) -> T {
        self.covariances
            .iter()
            .zip(&self.noise_sd)
            .map(|(r, &s)| {
                let tr = r.trace();
                let lmax = *symmetric_eigenvalues(r).last().expect("d >= 1");
                (radius * radius * (tr * lmax + lmax * lmax) + s * s * tr).sqrt()
            })
            .fold(T::zero(), |a, b| a.max(b))
    }

    fn explicit_minibatch<R: Rng + ?Sized>(
        &self,
        agent: usize,
        x: &DVector<T>,
        batch: u128,
        rng: &mut R,
    ) -> DVector<T> {
        let mut acc = DVector::zeros(self.dim());
        for _ in 0..batch {
            acc += self.sample_gradient(agent, x, rng);
        }
        acc / T::lit(batch as f64)
    }

    /// Exact-in-law draw of the mean of `batch ≥ d` sampled gradients.
    ///
    /// With `u_p = S z_p`, the sum is `S W Sᵀ (x − x*) − σ S Zᵀε`, where
    /// `W = ZᵀZ ~ Wishart(N, I)` and, given `Z`, `Zᵀε ~ N(0, W)`. Both are drawn
    /// through one Bartlett factor `W = B Bᵀ`.
    fn aggregated_minibatch<R: Rng + ?Sized>(
        &self,
        agent: usize,
        x: &DVector<T>,
        batch: u128,
        rng: &mut R,
    ) -> DVector<T> {
        let d = self.dim();
        let nf = batch as f64;
        let mut b = DMatrix::<T>::zeros(d, d);
        for i in 0..d {
            let df = nf - i as f64;
            let chi = ChiSquared::new(df).expect("df positive since batch >= d");
            b[(i, i)] = T::lit(chi.sample(rng).sqrt());
            for j in 0..i {
                b[(i, j)] = T::lit(rng.sample::<f64, _>(StandardNormal));
            }
        }
        let xi = DVector::<T>::from_fn(d, |_, _| T::lit(rng.sample::<f64, _>(StandardNormal)));
        let s = &self.factors[agent];
        let v = x - &self.x_star;
        // S B (Bᵀ Sᵀ v − σ ξ)
        let inner = b.transpose() * (s.transpose() * v) - xi * self.noise_sd[agent];
        (s * (b * inner)) / T::lit(nf)
    }

    pub fn to_document(&self) -> ProblemDocument {
        let d = self.dim();
        ProblemDocument {
            n: self.agents(),
            d,
            x_star: self.x_star.iter().map(|v| v.as_f64()).collect(),
            covariances: self
                .covariances
                .iter()
                .map(|r| {
                    (0..d)
                        .map(|i| (0..d).map(|j| r[(i, j)].as_f64()).collect())
                        .collect()
                })
                .collect(),
            noise_sd: self.noise_sd.iter().map(|v| v.as_f64()).collect(),
        }
    }

    pub fn from_document(doc: &ProblemDocument) -> Result<Self, ProblemError> {
        if doc.x_star.len() != doc.d {
            return Err(ProblemError::DimensionMismatch {
                expected: doc.d,
                found: doc.x_star.len(),
            });
        }
        if doc.covariances.len() != doc.n {
            return Err(ProblemError::DimensionMismatch {
                expected: doc.n,
                found: doc.covariances.len(),
            });
        }
        let mut covs = Vec::with_capacity(doc.n);
        for rows in &doc.covariances {
            if rows.len() != doc.d || rows.iter().any(|r| r.len() != doc.d) {
                return Err(ProblemError::DimensionMismatch {
                    expected: doc.d,
                    found: rows.len(),
                });
            }
            covs.push(DMatrix::from_fn(doc.d, doc.d, |i, j| T::lit(rows[i][j])));
        }
        Self::new(
            covs,
            doc.noise_sd.iter().map(|&s| T::lit(s)).collect(),
            DVector::from_iterator(doc.d, doc.x_star.iter().map(|&v| T::lit(v))),
        )
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("problem document serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ProblemError> {
        let doc: ProblemDocument =
            serde_json::from_str(text).map_err(|e| ProblemError::Parse(e.to_string()))?;
        Self::from_document(&doc)
    }
}

impl<T: Scalar> StochasticProblem<T> for RegressionInstance<T> {
    fn agents(&self) -> usize {
        self.covariances.len()
    }

    fn dim(&self) -> usize {
        self.x_star.len()
    }

    fn gradient(&self, agent: usize, x: &DVector<T>) -> DVector<T> {
        &self.covariances[agent] * (x - &self.x_star)
    }

    fn sample_gradient<R: Rng + ?Sized>(
        &self,
        agent: usize,
        x: &DVector<T>,
        rng: &mut R,
    ) -> DVector<T> {
        let d = self.dim();
        let z = DVector::<T>::from_fn(d, |_, _| T::lit(rng.sample::<f64, _>(StandardNormal)));
        let u = &self.factors[agent] * z;
        let eps = T::lit(rng.sample::<f64, _>(StandardNormal)) * self.noise_sd[agent];
        let obs = u.dot(&self.x_star) + eps;
        &u * (u.dot(x) - obs)
    }

    fn minibatch_gradient<R: Rng + ?Sized>(
        &self,
        agent: usize,
        x: &DVector<T>,
        batch: u128,
        rng: &mut R,
    ) -> Result<DVector<T>, ProblemError> {
        if batch == 0 {
            return Err(ProblemError::ZeroBatch);
        }
        if x.len() != self.dim() {
            return Err(ProblemError::DimensionMismatch {
                expected: self.dim(),
                found: x.len(),
            });
        }
        let d = self.dim() as u128;
        let aggregate = match self.sampling {
            SamplingMode::Explicit => false,
            SamplingMode::Aggregated => batch >= d,
            SamplingMode::Auto { threshold } => batch > threshold && batch >= d,
        };
        Ok(if aggregate {
            self.aggregated_minibatch(agent, x, batch, rng)
        } else {
            self.explicit_minibatch(agent, x, batch, rng)
        })
    }

    fn constants(&self) -> ProblemConstants<T> {
        ProblemConstants {
            eta: self.eta,
            lip: self.lip,
            nu: self.nu,
        }
    }

    fn optimum(&self) -> Option<DVector<T>> {
        Some(self.x_star.clone())
    }

    fn suboptimality(&self, x: &DVector<T>) -> Option<T> {
        let v = x - &self.x_star;
        Some(v.dot(&(&self.mean_covariance * &v)) * T::lit(0.5))
    }
}

/// On-disk form of a [`RegressionInstance`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemDocument {
    pub n: usize,
    pub d: usize,
    pub x_star: Vec<f64>,
    pub covariances: Vec<Vec<Vec<f64>>>,
    pub noise_sd: Vec<f64>,
}

/// `x* = 𝟙/√d`, the unit-norm true parameter.
pub fn unit_parameter<T: Scalar>(d: usize) -> DVector<T> {
    DVector::from_element(d, T::one() / T::lit(d as f64).sqrt())
}

/// Random instance `R_i = Q_i Λ_i Q_iᵀ` with Haar `Q_i` and eigenvalues drawn
/// per `spectrum`.
pub fn make_regression<T: Scalar, R: Rng + ?Sized>(
    n: usize,
    d: usize,
    spectrum: &SpectrumSpec,
    noise_sd: &[f64],
    x_star: DVector<T>,
    rng: &mut R,
) -> Result<RegressionInstance<T>, ProblemError> {
    if n == 0 {
        return Err(ProblemError::NoAgents);
    }
    if d == 0 {
        return Err(ProblemError::ZeroDimension);
    }
    if x_star.len() != d {
        return Err(ProblemError::DimensionMismatch {
            expected: d,
            found: x_star.len(),
        });
    }
    if spectrum.ranges.len() != 1 && spectrum.ranges.len() != n {
        return Err(ProblemError::DimensionMismatch {
            expected: n,
            found: spectrum.ranges.len(),
        });
    }
    for r in &spectrum.ranges {
        if r.lo < 0.0 {
            return Err(ProblemError::NegativeEigenvalue(r.lo));
        }
        if r.hi < r.lo {
            return Err(ProblemError::EmptyRange(r.lo, r.hi));
        }
        if r.zeros > d {
            return Err(ProblemError::TooManyZeros { zeros: r.zeros, d });
        }
    }
    let sd: Vec<T> = match noise_sd.len() {
        1 => vec![T::lit(noise_sd[0]); n],
        len if len == n => noise_sd.iter().map(|&s| T::lit(s)).collect(),
        len => {
            return Err(ProblemError::DimensionMismatch {
                expected: n,
                found: len,
            })
        }
    };
    let mut covs = Vec::with_capacity(n);
    for i in 0..n {
        let range = spectrum.range_for(i);
        let q: DMatrix<T> = random_orthogonal(d, rng);
        let eig: Vec<T> = (0..d)
            .map(|j| {
                let u: f64 = rng.random();
                if j < range.zeros {
                    T::zero()
                } else {
                    T::lit(range.lo + (range.hi - range.lo) * u)
                }
            })
            .collect();
        let lambda = DMatrix::from_diagonal(&DVector::from_vec(eig));
        let r = &q * lambda * q.transpose();
        covs.push((&r + r.transpose()) * T::lit(0.5));
    }
    RegressionInstance::new(covs, sd, x_star)
}
