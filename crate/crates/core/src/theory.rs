//! Closed-form contraction matrices, step-size bounds and rate/complexity
//! predictors. Everything here is plain arithmetic on problem and network
//! constants; no simulation happens in this module.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::TheoryError;
use crate::scalar::Scalar;
use crate::schedules::BatchSchedule;

/// Version of the [`TheoryReport`] JSON layout.
pub const REPORT_VERSION: u32 = 1;

/// Summary statistics of a step-size vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepStats<T> {
    pub n: usize,
    /// `ᾱ = (1/n) Σ α_i`.
    pub alpha_bar: T,
    /// `√(Σ (α_i − ᾱ)²)`.
    pub c1: T,
    pub alpha_max: T,
    /// `√(Σ α_i²)`.
    pub c2: T,
    /// `c2/√n`. Stored so identical steps reproduce `α` exactly.
    pub alpha_rms: T,
    /// `c1/(√n ᾱ)`.
    pub d_alpha: T,
}

impl<T: Scalar> StepStats<T> {
    pub fn new(alpha: &[T]) -> Result<Self, TheoryError> {
        if alpha.is_empty() {
            return Err(TheoryError::Precondition("empty step-size vector".into()));
        }
        if alpha.iter().any(|a| !(*a > T::zero()) || !a.is_finite_value()) {
            return Err(TheoryError::Precondition("step-sizes must be positive".into()));
        }
        let n = alpha.len();
        let nt = T::lit(n as f64);
        let sqrt_n = nt.sqrt();
        let alpha_max = alpha.iter().copied().fold(alpha[0], |m, a| m.max(a));
        if alpha.iter().all(|a| *a == alpha[0]) {
            let a = alpha[0];
            return Ok(Self::identical(a, n));
        }
        let alpha_bar = alpha.iter().copied().fold(T::zero(), |s, a| s + a) / nt;
        let c1 = alpha
            .iter()
            .map(|a| (*a - alpha_bar) * (*a - alpha_bar))
            .fold(T::zero(), |s, v| s + v)
            .sqrt();
        let c2 = alpha.iter().map(|a| *a * *a).fold(T::zero(), |s, v| s + v).sqrt();
        Ok(Self {
            n,
            alpha_bar,
            c1,
            alpha_max,
            c2,
            alpha_rms: c2 / sqrt_n,
            d_alpha: c1 / (sqrt_n * alpha_bar),
        })
    }

    /// Statistics of `α_i ≡ α` on `n` agents.
    pub fn identical(alpha: T, n: usize) -> Self {
        let sqrt_n = T::lit(n as f64).sqrt();
        Self {
            n,
            alpha_bar: alpha,
            c1: T::zero(),
            alpha_max: alpha,
            c2: sqrt_n * alpha,
            alpha_rms: alpha,
            d_alpha: T::zero(),
        }
    }

    pub fn is_identical(&self) -> bool {
        self.c1 == T::zero()
    }
}

/// `(1−ρ₁)²/((2−ρ₁)L)`, the step-size hypothesis under which `ρ₂ < 1`.
pub fn rho2_step_limit<T: Scalar>(rho1: T, lip: T) -> T {
    let one = T::one();
    let gap = one - rho1;
    gap * gap / ((T::lit(2.0) - rho1) * lip)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rho2<T> {
    pub value: T,
    /// `α_max < (1−ρ₁)²/((2−ρ₁)L)`.
    pub hypothesis_holds: bool,
}

/// `ρ₂ = (2ρ₁ + α_max L + √(α_max² L² + 4 α_max L))/2`.
pub fn rho2<T: Scalar>(rho1: T, alpha_max: T, lip: T) -> Result<Rho2<T>, TheoryError> {
    if rho1 < T::zero() || alpha_max < T::zero() || !(lip > T::zero()) {
        return Err(TheoryError::Precondition(
            "rho2 needs ρ₁ ≥ 0, α_max ≥ 0, L > 0".into(),
        ));
    }
    let b = alpha_max * lip;
    let two = T::lit(2.0);
    let value = (two * rho1 + b + (b * b + T::lit(4.0) * b).sqrt()) / two;
    Ok(Rho2 {
        value,
        hypothesis_holds: alpha_max < rho2_step_limit(rho1, lip),
    })
}

/// Error-vector contraction matrix for heterogeneous steps.
pub fn j_matrix<T: Scalar>(stats: &StepStats<T>, rho1: T, eta: T, lip: T) -> Matrix3<T> {
    let nt = T::lit(stats.n as f64);
    let sqrt_n = nt.sqrt();
    let l2 = lip * lip;
    Matrix3::new(
        T::one() - stats.alpha_bar * eta,
        stats.alpha_bar * lip / sqrt_n,
        stats.c1 / nt,
        stats.c1 * lip,
        rho1 + stats.c1 * lip / sqrt_n,
        stats.alpha_max,
        stats.c2 * l2,
        lip + stats.alpha_rms * l2,
        rho1 + stats.alpha_max * lip,
    )
}

/// Whether every step satisfies `α_i ≤ 2/(η+L)`, the hypothesis of the
/// `J(α)` recursion.
pub fn j_hypothesis_holds<T: Scalar>(stats: &StepStats<T>, eta: T, lip: T) -> bool {
    stats.alpha_max <= T::lit(2.0) / (eta + lip)
}

/// Contraction matrix for identical steps `α_i ≡ α`.
pub fn j_hat<T: Scalar>(alpha: T, rho1: T, eta: T, lip: T, n: usize) -> Matrix3<T> {
    let sqrt_n = T::lit(n as f64).sqrt();
    let l2 = lip * lip;
    Matrix3::new(
        T::one() - alpha * eta,
        alpha * lip / sqrt_n,
        T::zero(),
        T::zero(),
        rho1,
        alpha,
        sqrt_n * alpha * l2,
        lip + alpha * l2,
        rho1 + alpha * lip,
    )
}

/// Root of the characteristic polynomial, possibly complex.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Root<T> {
    pub re: T,
    pub im: T,
}

impl<T: Scalar> Root<T> {
    pub fn modulus(&self) -> T {
        (self.re * self.re + self.im * self.im).sqrt()
    }
}

fn poly<T: Scalar>(a: T, b: T, c: T, x: T) -> (T, T) {
    let p = ((x + a) * x + b) * x + c;
    let dp = (T::lit(3.0) * x + T::lit(2.0) * a) * x + b;
    (p, dp)
}

fn polish<T: Scalar>(a: T, b: T, c: T, mut x: T) -> T {
    for _ in 0..8 {
        let (p, dp) = poly(a, b, c, x);
        if p == T::zero() || dp == T::zero() {
            break;
        }
        let next = x - p / dp;
        if poly(a, b, c, next).0.abs() >= p.abs() {
            break;
        }
        x = next;
    }
    x
}

/// Roots of `λ³ + aλ² + bλ + c` by Cardano/Viète, real roots refined with
/// guarded Newton steps.
pub fn cubic_roots<T: Scalar>(a: T, b: T, c: T) -> [Root<T>; 3] {
    let three = T::lit(3.0);
    let two = T::lit(2.0);
    let shift = a / three;
    let p = b - a * a / three;
    let q = two * a * a * a / T::lit(27.0) - a * b / three + c;
    let scale = T::one() + a.abs().max(b.abs()).max(c.abs());
    let tiny = T::epsilon() * scale * scale * scale;
    let real = |t: T| Root {
        re: polish(a, b, c, t - shift),
        im: T::zero(),
    };
    if p.abs() <= tiny && q.abs() <= tiny {
        let r = real(T::zero());
        return [r, r, r];
    }
    let half_q = q / two;
    let third_p = p / three;
    let disc = half_q * half_q + third_p * third_p * third_p;
    if disc > T::zero() {
        let s = disc.sqrt();
        let u = (-half_q + s).cbrt();
        let v = (-half_q - s).cbrt();
        let t = u + v;
        let re = -t / two - shift;
        let im = three.sqrt() / two * (u - v);
        [
            real(t),
            Root { re, im },
            Root { re, im: -im },
        ]
    } else {
        let r = two * (-third_p).sqrt();
        let arg = (three * q / (two * p) * (-three / p).sqrt()).max(-T::one()).min(T::one());
        let phi = arg.acos() / three;
        let step = two * T::pi() / three;
        [
            real(r * phi.cos()),
            real(r * (phi - step).cos()),
            real(r * (phi - two * step).cos()),
        ]
    }
}

/// Largest eigenvalue modulus of a 3×3 matrix via its characteristic cubic.
pub fn spectral_radius_3x3<T: Scalar>(m: &Matrix3<T>) -> T {
    let tr = m[(0, 0)] + m[(1, 1)] + m[(2, 2)];
    let minors = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)]
        + m[(0, 0)] * m[(2, 2)]
        - m[(0, 2)] * m[(2, 0)]
        + m[(1, 1)] * m[(2, 2)]
        - m[(1, 2)] * m[(2, 1)];
    let det = m[(0, 0)] * (m[(1, 1)] * m[(2, 2)] - m[(1, 2)] * m[(2, 1)])
        - m[(0, 1)] * (m[(1, 0)] * m[(2, 2)] - m[(1, 2)] * m[(2, 0)])
        + m[(0, 2)] * (m[(1, 0)] * m[(2, 1)] - m[(1, 1)] * m[(2, 0)]);
    cubic_roots(-tr, minors, -det)
        .iter()
        .map(Root::modulus)
        .fold(T::zero(), |acc, v| acc.max(v))
}

/// Identical-step bound for merely convex objectives:
/// `(c₀+1+2√3L − √((c₀+1+2√3L)² − 4c₀))/(2L)` with `c₀ = (1−ρ₁)²/(2−ρ₁)`.
pub fn stepsize_bound_convex<T: Scalar>(rho1: T, lip: T) -> T {
    let c0 = (T::one() - rho1) * (T::one() - rho1) / (T::lit(2.0) - rho1);
    convex_bound_from_c0(c0, lip)
}

pub(crate) fn convex_bound_from_c0<T: Scalar>(c0: T, lip: T) -> T {
    let s = c0 + T::one() + T::lit(2.0) * T::lit(3.0).sqrt() * lip;
    // s − √(s² − 4c₀) rewritten as 4c₀/(s + √(s² − 4c₀)) to avoid cancellation
    let disc = (s * s - T::lit(4.0) * c0).max(T::zero()).sqrt();
    T::lit(4.0) * c0 / ((s + disc) * T::lit(2.0) * lip)
}

/// Heterogeneous strongly convex step-size bound: admissible steps satisfy
/// `α_i L < min(β*, second_term)`, where `β*` is the positive root of
/// `c₃β² + c₄β − (1−ρ₁)²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StronglyConvexBound<T> {
    pub beta_star: T,
    /// `(1−ρ₁)/(d_α κ (L+η))`; `None` when `d_α = 0` (unbounded).
    pub second_term: Option<T>,
    pub c3: T,
    pub c4: T,
}

impl<T: Scalar> StronglyConvexBound<T> {
    /// `min(β*, second_term)`, a bound on `α_i L`.
    pub fn beta_limit(&self) -> T {
        match self.second_term {
            Some(s) => self.beta_star.min(s),
            None => self.beta_star,
        }
    }

    /// The same bound expressed on `α_i`.
    pub fn alpha_limit(&self, lip: T) -> T {
        self.beta_limit() / lip
    }
}

pub fn stepsize_bound_strongly_convex<T: Scalar>(
    rho1: T,
    eta: T,
    lip: T,
    d_alpha: T,
) -> Result<StronglyConvexBound<T>, TheoryError> {
    if !(eta > T::zero()) || !(lip > T::zero()) || d_alpha < T::zero() {
        return Err(TheoryError::Precondition(
            "strongly convex bound needs η > 0, L > 0, d_α ≥ 0".into(),
        ));
    }
    let one = T::one();
    let kappa = lip / eta;
    let gap = one - rho1;
    let d = d_alpha;
    let root = (d * d + one).sqrt();
    let c3 = root * (one + kappa * d * d) + kappa * root;
    let c4 = (one + (kappa + one) * d) * gap + one + kappa * d * d + kappa * root * d * gap;
    let beta_star = positive_root(c3, c4, gap * gap);
    let second_term = if d == T::zero() {
        None
    } else {
        Some(gap / (d * kappa * (lip + eta)))
    };
    Ok(StronglyConvexBound {
        beta_star,
        second_term,
        c3,
        c4,
    })
}

/// Positive root `(−b + √(b² + 4ac))/(2a)` of `aβ² + bβ − c`, evaluated as
/// `2c/(b + √(b² + 4ac))`.
fn positive_root<T: Scalar>(a: T, b: T, c: T) -> T {
    T::lit(2.0) * c / (b + (b * b + T::lit(4.0) * a * c).sqrt())
}

/// Identical-step strongly convex bound: `α < β/L` with `β` the positive
/// root of `(1+κ)β² + (2−ρ₁)β − (1−ρ₁)²`, i.e.
/// `(−(2−ρ₁) + √((2−ρ₁)² + 4(1+κ)(1−ρ₁)²))/(2L(1+κ))`.
pub fn stepsize_bound_identical<T: Scalar>(rho1: T, eta: T, lip: T) -> T {
    let one = T::one();
    let kappa = lip / eta;
    let gap = one - rho1;
    positive_root(one + kappa, T::lit(2.0) - rho1, gap * gap) / lip
}

/// Numeric `det(I − Ĵ(α))` and its closed form
/// `−(β/κ)((1+κ)β² + (2−ρ₁)β − (1−ρ₁)²)` with `β = αL`.
pub fn det_identity_check<T: Scalar>(rho1: T, eta: T, lip: T, alpha: T, n: usize) -> (T, T) {
    let m = Matrix3::identity() - j_hat(alpha, rho1, eta, lip, n);
    let lhs = m.determinant();
    let kappa = lip / eta;
    let beta = alpha * lip;
    let gap = T::one() - rho1;
    let rhs = -(beta / kappa)
        * ((T::one() + kappa) * beta * beta + (T::lit(2.0) - rho1) * beta - gap * gap);
    (lhs, rhs)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SteadyState<T> {
    /// Bound on `lim sup E‖x̄(k) − x*‖`.
    pub x_bar: T,
    /// Bound on `lim sup E‖x(k) − 𝟙⊗x̄(k)‖`.
    pub consensus: T,
}

/// Neighbourhood reached with a constant batch `B` and identical steps.
pub fn steady_state_bounds<T: Scalar>(
    rho1: T,
    eta: T,
    lip: T,
    alpha: T,
    batch: u128,
    nu: T,
    n: usize,
) -> Result<SteadyState<T>, TheoryError> {
    if batch == 0 {
        return Err(TheoryError::Precondition("batch must be ≥ 1".into()));
    }
    let one = T::one();
    let kappa = lip / eta;
    let gap = one - rho1;
    let beta = alpha * lip;
    let denom = gap * gap - (one + kappa) * beta * beta - (T::lit(2.0) - rho1) * beta;
    if !(denom > T::zero()) {
        return Err(TheoryError::Precondition(format!(
            "step-size {alpha} violates the identical-step bound (denominator {denom})"
        )));
    }
    let scale = T::lit(batch as f64).sqrt() * eta * denom;
    let sqrt_n = T::lit(n as f64).sqrt();
    Ok(SteadyState {
        x_bar: nu * (gap * gap + rho1 * beta) / scale,
        consensus: alpha * nu * sqrt_n * (alpha * lip * lip + eta * (T::lit(2.0) + beta)) / scale,
    })
}

/// `ν q^{k−1} (I − Ĵ/q)^{−1} (α, 0, (1+q+αL)√n)ᵀ`, the large-`k` error
/// vector for identical steps and a geometric schedule. `None` unless
/// `q > ρ(Ĵ)`.
pub fn geometric_asymptote<T: Scalar>(
    j_hat: &Matrix3<T>,
    alpha: T,
    lip: T,
    q: T,
    nu: T,
    n: usize,
    k: u64,
) -> Option<Vector3<T>> {
    if q <= spectral_radius_3x3(j_hat) {
        return None;
    }
    let inv = (Matrix3::identity() - j_hat / q).try_inverse()?;
    let sqrt_n = T::lit(n as f64).sqrt();
    let v = Vector3::new(alpha, T::zero(), (T::one() + q + alpha * lip) * sqrt_n);
    let factor = nu * q.powf(T::lit(k as f64) - T::one());
    Some(inv * v * factor)
}

/// Iterates `z(k+1) = J z(k) + (ᾱν, c1ν, √nν(1+q) + c2Lν)ᵀ q^k` from `z0`,
/// returning `horizon + 1` vectors.
pub fn envelope<T: Scalar>(
    j: &Matrix3<T>,
    stats: &StepStats<T>,
    lip: T,
    nu: T,
    q: T,
    z0: Vector3<T>,
    horizon: u64,
) -> Vec<Vector3<T>> {
    let sqrt_n = T::lit(stats.n as f64).sqrt();
    let drive = Vector3::new(
        stats.alpha_bar * nu,
        stats.c1 * nu,
        sqrt_n * nu * (T::one() + q) + stats.c2 * lip * nu,
    );
    let mut out = Vec::with_capacity(horizon as usize + 1);
    let mut z = z0;
    let mut qk = T::one();
    out.push(z);
    for _ in 0..horizon {
        z = j * z + drive * qk;
        qk *= q;
        out.push(z);
    }
    out
}

/// Predicted behaviour of `e(k)` for a schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum RatePrediction {
    /// `e(k) = O(base^k)`.
    Geometric { base: f64 },
    /// `e(k) = O(k^{−exponent})`.
    Polynomial { exponent: f64 },
    /// Geometric approach at `base` to a neighbourhood of radius `plateau`
    /// (when the step satisfies the identical-step bound).
    Plateau { base: f64, plateau: Option<f64> },
    Unknown,
}

/// Polynomial growth exponent θ with `N(k) ~ k^{2θ}`.
fn polynomial_theta(schedule: &BatchSchedule) -> Option<f64> {
    match schedule {
        BatchSchedule::Polynomial { theta } => Some(*theta),
        BatchSchedule::Power { p } => Some(p / 2.0),
        _ => None,
    }
}

/// Rate law for a schedule given `ρ(J(α))`.
pub fn rate_predict(rho_j: f64, schedule: &BatchSchedule, plateau: Option<f64>) -> RatePrediction {
    match schedule {
        BatchSchedule::Geometric { q } => RatePrediction::Geometric {
            base: rho_j.max(*q),
        },
        BatchSchedule::Constant { .. } => RatePrediction::Plateau {
            base: rho_j,
            plateau,
        },
        s => match polynomial_theta(s) {
            Some(theta) => RatePrediction::Polynomial { exponent: theta },
            None => RatePrediction::Unknown,
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComplexityRegime {
    /// Geometric schedule with `q > ρ(J)`.
    BatchLimited,
    /// Geometric schedule with `q ≤ ρ(J)`.
    ContractionLimited,
    Polynomial,
    /// Constant or tabulated batches: no vanishing-error guarantee.
    None,
}

/// Big-O predictions; every count is "up to a constant".
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComplexityPrediction {
    pub epsilon: f64,
    pub regime: ComplexityRegime,
    pub iterations: Option<f64>,
    pub samples: Option<f64>,
    /// `samples ∝ (1/ε)^exponent`.
    pub samples_exponent: Option<f64>,
    /// `2 · E[links] · iterations`.
    pub communications: Option<f64>,
    pub up_to_constant: bool,
}

/// Scaling laws for reaching accuracy `ε`. `expected_links` is the mean
/// number of directed positive off-diagonal weights per round.
pub fn complexity_predict(
    rho_j: f64,
    schedule: &BatchSchedule,
    expected_links: f64,
    epsilon: f64,
) -> Result<ComplexityPrediction, TheoryError> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(TheoryError::BadEpsilon(epsilon));
    }
    let inv = (1.0 / epsilon).ln();
    let (regime, iterations, samples_exponent, samples) = match schedule {
        BatchSchedule::Geometric { q } if *q > rho_j => {
            let it = inv / (1.0 / q).ln();
            // Σ_{k≤K} q^{−2k} ≈ q^{−2K}/(1−q²) with q^K = ε
            let s = epsilon.powi(-2) / (1.0 - q * q);
            (ComplexityRegime::BatchLimited, Some(it), Some(2.0), Some(s))
        }
        BatchSchedule::Geometric { q } => {
            let it = inv / (1.0 / rho_j).ln();
            let exponent = 2.0 * (1.0 / q).ln() / (1.0 / rho_j).ln();
            (
                ComplexityRegime::ContractionLimited,
                Some(it),
                Some(exponent),
                Some(epsilon.powf(-exponent)),
            )
        }
        s => match polynomial_theta(s) {
            Some(theta) => {
                let exponent = 2.0 + 1.0 / theta;
                (
                    ComplexityRegime::Polynomial,
                    Some(epsilon.powf(-1.0 / theta)),
                    Some(exponent),
                    Some(epsilon.powf(-exponent)),
                )
            }
            None => (ComplexityRegime::None, None, None, None),
        },
    };
    Ok(ComplexityPrediction {
        epsilon,
        regime,
        iterations,
        samples,
        samples_exponent,
        communications: iterations.map(|it| 2.0 * expected_links * it),
        up_to_constant: true,
    })
}

/// Constants the report is computed from.
#[derive(Debug, Clone, PartialEq)]
pub struct TheoryInputs {
    pub n: usize,
    pub rho1: f64,
    pub eta: f64,
    pub lip: f64,
    pub nu: f64,
    pub expected_links: f64,
    pub alpha: Vec<f64>,
    pub schedule: Option<BatchSchedule>,
    pub epsilons: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepsizeBounds {
    /// Identical-step bound for merely convex objectives.
    pub convex: f64,
    /// Heterogeneous strongly convex bound at the configured `d_α`;
    /// absent when `η = 0`.
    pub strongly_convex: Option<StronglyConvexBound<f64>>,
    /// `min(β*, second term)/L`.
    pub strongly_convex_alpha: Option<f64>,
    /// Identical-step strongly convex bound; absent when `η = 0`.
    pub identical: Option<f64>,
}

/// Everything the toolkit can say about one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryReport {
    pub version: u32,
    pub n: usize,
    pub rho1: f64,
    pub rho2: Rho2<f64>,
    pub eta: f64,
    pub lip: f64,
    /// `L/η`; absent when `η = 0`.
    pub kappa: Option<f64>,
    pub nu: f64,
    pub expected_links: f64,
    pub step_stats: StepStats<f64>,
    pub j: [[f64; 3]; 3],
    pub rho_j: f64,
    pub j_hat: Option<[[f64; 3]; 3]>,
    pub rho_j_hat: Option<f64>,
    pub stepsize_bounds: StepsizeBounds,
    /// Present for a constant schedule with identical admissible steps.
    pub steady_state: Option<SteadyState<f64>>,
    pub rate: Option<RatePrediction>,
    pub complexity: Vec<ComplexityPrediction>,
    pub warnings: Vec<String>,
}

fn rows(m: &Matrix3<f64>) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = m[(i, j)];
        }
    }
    out
}

impl TheoryReport {
    pub fn build(inp: &TheoryInputs) -> Result<Self, TheoryError> {
        if inp.alpha.len() != inp.n {
            return Err(TheoryError::Precondition(format!(
                "{} step-sizes for {} agents",
                inp.alpha.len(),
                inp.n
            )));
        }
        if !(inp.lip > 0.0) || inp.eta < 0.0 || !(0.0..=1.0).contains(&inp.rho1) {
            return Err(TheoryError::Precondition(
                "need L > 0, η ≥ 0 and ρ₁ ∈ [0, 1]".into(),
            ));
        }
        let mut warnings = Vec::new();
        let stats = StepStats::new(&inp.alpha)?;
        let rho2 = rho2(inp.rho1, stats.alpha_max, inp.lip)?;
        if !rho2.hypothesis_holds {
            warnings.push(format!(
                "alpha_max = {} is not below (1-rho1)^2/((2-rho1)L) = {}; rho2 = {} may be >= 1",
                stats.alpha_max,
                rho2_step_limit(inp.rho1, inp.lip),
                rho2.value
            ));
        }
        if !j_hypothesis_holds(&stats, inp.eta, inp.lip) {
            warnings.push(format!(
                "alpha_max = {} exceeds 2/(eta+L) = {}; the J(alpha) recursion does not apply",
                stats.alpha_max,
                2.0 / (inp.eta + inp.lip)
            ));
        }
        let j = j_matrix(&stats, inp.rho1, inp.eta, inp.lip);
        let rho_j = spectral_radius_3x3(&j);
        let strongly = inp.eta > 0.0;
        let (j_hat_m, rho_j_hat) = if stats.is_identical() {
            let m = j_hat(stats.alpha_bar, inp.rho1, inp.eta, inp.lip, inp.n);
            (Some(rows(&m)), Some(spectral_radius_3x3(&m)))
        } else {
            (None, None)
        };
        let sc = if strongly {
            Some(stepsize_bound_strongly_convex(inp.rho1, inp.eta, inp.lip, stats.d_alpha)?)
        } else {
            None
        };
        let identical = strongly.then(|| stepsize_bound_identical(inp.rho1, inp.eta, inp.lip));
        let bounds = StepsizeBounds {
            convex: stepsize_bound_convex(inp.rho1, inp.lip),
            strongly_convex: sc,
            strongly_convex_alpha: sc.map(|b| b.alpha_limit(inp.lip)),
            identical,
        };
        if let Some(limit) = bounds.strongly_convex_alpha {
            if stats.alpha_max >= limit {
                warnings.push(format!(
                    "alpha_max = {} is not below the strongly convex bound {}",
                    stats.alpha_max, limit
                ));
            }
        } else if stats.is_identical() && stats.alpha_bar >= bounds.convex {
            warnings.push(format!(
                "alpha = {} is not below the convex bound {}",
                stats.alpha_bar, bounds.convex
            ));
        }
        if rho_j >= 1.0 {
            warnings.push(format!("rho(J) = {rho_j} is not below 1"));
        }
        let steady_state = match (&inp.schedule, stats.is_identical(), strongly) {
            (Some(BatchSchedule::Constant { b }), true, true) => {
                match steady_state_bounds(
                    inp.rho1,
                    inp.eta,
                    inp.lip,
                    stats.alpha_bar,
                    *b,
                    inp.nu,
                    inp.n,
                ) {
                    Ok(s) => Some(s),
                    Err(e) => {
                        warnings.push(format!("steady-state bounds unavailable: {e}"));
                        None
                    }
                }
            }
            _ => None,
        };
        let rate = inp
            .schedule
            .as_ref()
            .map(|s| rate_predict(rho_j, s, steady_state.map(|b| b.x_bar)));
        let mut complexity = Vec::new();
        if let Some(s) = &inp.schedule {
            for &eps in &inp.epsilons {
                complexity.push(complexity_predict(rho_j, s, inp.expected_links, eps)?);
            }
        }
        Ok(TheoryReport {
            version: REPORT_VERSION,
            n: inp.n,
            rho1: inp.rho1,
            rho2,
            eta: inp.eta,
            lip: inp.lip,
            kappa: strongly.then(|| inp.lip / inp.eta),
            nu: inp.nu,
            expected_links: inp.expected_links,
            step_stats: stats,
            j: rows(&j),
            rho_j,
            j_hat: j_hat_m,
            rho_j_hat,
            stepsize_bounds: bounds,
            steady_state,
            rate,
            complexity,
            warnings,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rho2_examples() {
        assert_eq!(rho2(0.4, 0.0, 3.0).unwrap().value, 0.4);
        let r = rho2(0.0, 0.01, 1.0).unwrap().value;
        assert!((r - (0.01 + (0.0001f64 + 0.04).sqrt()) / 2.0).abs() < 1e-15);
        assert!((r - 0.10512).abs() < 1e-5);
        let lim = rho2_step_limit(0.5, 2.0);
        let at = rho2(0.5, lim * (1.0 - 1e-12), 2.0).unwrap();
        assert!(at.hypothesis_holds && at.value < 1.0);
        assert!(rho2(-0.1, 0.1, 1.0).is_err());
    }

    #[test]
    fn zero_step_limit_of_j() {
        let s = StepStats::identical(0.0, 4);
        let j = j_matrix(&s, 0.6, 1.0, 10.0);
        assert_eq!(j, Matrix3::new(1.0, 0.0, 0.0, 0.0, 0.6, 0.0, 0.0, 10.0, 0.6));
    }

    #[test]
    fn spectral_radius_simple_cases() {
        assert_eq!(spectral_radius_3x3(&Matrix3::<f64>::identity()), 1.0);
        let d = Matrix3::from_diagonal(&Vector3::new(0.2f64, 0.5, 0.9));
        assert!((spectral_radius_3x3(&d) - 0.9).abs() < 1e-14);
        // rotation about z scaled by 0.7 has a complex pair of modulus 0.7
        let (c, s) = (0.3f64.cos(), 0.3f64.sin());
        let r = Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 0.5) * 0.7;
        assert!((spectral_radius_3x3(&r) - 0.7).abs() < 1e-12);
    }

    #[test]
    fn convex_bound_examples() {
        // c0 = 0.5 with L = 1
        let b = convex_bound_from_c0(0.5, 1.0);
        let s = 1.5 + 2.0 * 3f64.sqrt();
        assert!((b - (s - (s * s - 2.0).sqrt()) / 2.0).abs() < 1e-14);
        assert!((b - 0.1029).abs() < 1e-4);
        assert!(stepsize_bound_convex(1.0f64 - 1e-9, 1.0) < 1e-17);
    }

    #[test]
    fn strongly_convex_reduces_to_identical() {
        for &(rho1, eta, lip) in &[(0.6f64, 1.0, 10.0), (0.2, 3.0, 4.0), (0.9, 0.5, 20.0)] {
            let b = stepsize_bound_strongly_convex(rho1, eta, lip, 0.0).unwrap();
            assert_eq!(b.second_term, None);
            let kappa = lip / eta;
            assert!((b.c3 - (1.0 + kappa)).abs() < 1e-14);
            assert!((b.c4 - (2.0 - rho1)).abs() < 1e-14);
            let cor = stepsize_bound_identical(rho1, eta, lip);
            assert!((b.beta_star - cor * lip).abs() <= 1e-12 * cor * lip);
        }
    }

    #[test]
    fn det_identity_at_zero_and_at_bound() {
        let (l, r) = det_identity_check(0.5f64, 1.0, 4.0, 0.0, 9);
        assert_eq!(r, 0.0);
        assert!(l.abs() < 1e-15);
        let bound = stepsize_bound_identical(0.5f64, 1.0, 4.0);
        let (_, r) = det_identity_check(0.5, 1.0, 4.0, bound, 9);
        assert!(r.abs() < 1e-10);
    }

    #[test]
    fn steady_state_scaling() {
        let a = steady_state_bounds(0.5f64, 1.0, 4.0, 0.01, 1, 2.0, 10).unwrap();
        let b = steady_state_bounds(0.5f64, 1.0, 4.0, 0.01, 4, 2.0, 10).unwrap();
        assert!((a.x_bar / b.x_bar - 2.0).abs() < 1e-12);
        assert!((a.consensus / b.consensus - 2.0).abs() < 1e-12);
        let z = steady_state_bounds(0.5, 1.0, 4.0, 0.01, 1, 0.0, 10).unwrap();
        assert_eq!((z.x_bar, z.consensus), (0.0, 0.0));
        assert!(steady_state_bounds(0.5, 1.0, 4.0, 1.0, 1, 1.0, 10).is_err());
    }

    #[test]
    fn complexity_laws() {
        let g = BatchSchedule::Geometric { q: 0.99 };
        let a = complexity_predict(0.9, &g, 10.0, 1e-2).unwrap();
        let b = complexity_predict(0.9, &g, 10.0, 5e-3).unwrap();
        let added = b.iterations.unwrap() - a.iterations.unwrap();
        assert!((added - 2f64.ln() / (1.0 / 0.99f64).ln()).abs() < 1e-9);
        assert_eq!(a.regime, ComplexityRegime::BatchLimited);
        assert!((a.communications.unwrap() - 20.0 * a.iterations.unwrap()).abs() < 1e-9);
        let slow = complexity_predict(0.9, &BatchSchedule::Geometric { q: 0.81 }, 1.0, 0.1).unwrap();
        assert_eq!(slow.regime, ComplexityRegime::ContractionLimited);
        assert!((slow.samples_exponent.unwrap() - 4.0).abs() < 1e-12);
        let p = complexity_predict(0.9, &BatchSchedule::Polynomial { theta: 0.55 }, 1.0, 0.01).unwrap();
        assert!((p.samples_exponent.unwrap() - (2.0 + 1.0 / 0.55)).abs() < 1e-12);
        assert!(complexity_predict(0.9, &g, 1.0, 0.0).is_err());
    }

    #[test]
    fn rate_examples() {
        assert_eq!(
            rate_predict(0.9, &BatchSchedule::Geometric { q: 0.99 }, None),
            RatePrediction::Geometric { base: 0.99 }
        );
        assert_eq!(
            rate_predict(0.9, &BatchSchedule::Polynomial { theta: 1.0 }, None),
            RatePrediction::Polynomial { exponent: 1.0 }
        );
        assert!(matches!(
            rate_predict(0.9, &BatchSchedule::Constant { b: 3 }, Some(0.1)),
            RatePrediction::Plateau { base, plateau: Some(_) } if base == 0.9
        ));
    }

    #[test]
    fn asymptote_requires_q_above_radius() {
        let m = j_hat(0.001f64, 0.6, 1.0, 10.0, 20);
        let rho = spectral_radius_3x3(&m);
        assert!(geometric_asymptote(&m, 0.001, 10.0, rho * 0.99, 1.0, 20, 5).is_none());
        let q = (rho + 1.0) / 2.0;
        let a = geometric_asymptote(&m, 0.001, 10.0, q, 1.0, 20, 5).unwrap();
        let b = geometric_asymptote(&m, 0.001, 10.0, q, 1.0, 20, 6).unwrap();
        assert!((b[2] / a[2] - q).abs() < 1e-12);
    }

    #[test]
    fn report_warns_above_bound() {
        let inp = TheoryInputs {
            n: 4,
            rho1: 0.5,
            eta: 1.0,
            lip: 2.0,
            nu: 1.0,
            expected_links: 6.0,
            alpha: vec![10.0; 4],
            schedule: Some(BatchSchedule::Geometric { q: 0.9 }),
            epsilons: vec![0.1],
        };
        let r = TheoryReport::build(&inp).unwrap();
        assert!(!r.warnings.is_empty());
        assert!(r.rho_j >= 1.0);
        let ok = TheoryReport::build(&TheoryInputs {
            alpha: vec![0.01; 4],
            ..inp
        })
        .unwrap();
        assert!(ok.rho_j < 1.0, "{:?}", ok.warnings);
        assert_eq!(ok.j_hat.unwrap(), ok.j);
    }
}
