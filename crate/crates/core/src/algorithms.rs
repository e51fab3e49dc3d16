//! Iteration engines over a [`NetworkState`].
//!
//! All three methods share one state layout: row `i` of `x` and `y` holds
//! agent `i`'s iterate and tracker, and `grad` caches the mini-batch
//! gradient `g̃_i(x_i(k))` drawn at the current iterate. The tracker update
//! reuses that cached value instead of drawing it again, which is what keeps
//! `ȳ(k) = (1/n) Σ g̃_i(x_i(k))` exact along every sample path.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{AlgorithmError, ScheduleError};
use crate::graphs::GraphProcess;
use crate::metrics::{frame, MetricFrame};
use crate::problems::{draw_minibatch, StochasticProblem};
use crate::scalar::Scalar;
use crate::schedules::{BatchSchedule, SamplePlan};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlgorithmKind {
    /// Variable sample-size stochastic gradient tracking.
    #[serde(rename = "dvss_sgt", alias = "dvss")]
    Dvss,
    /// Distributed SGD: mix, then step along one sampled gradient.
    #[serde(rename = "d_sgd", alias = "dsgd")]
    Dsgd,
    /// Gradient tracking with single-sample gradients.
    #[serde(rename = "d_sgt", alias = "dsgt")]
    Dsgt,
}

impl AlgorithmKind {
    pub fn label(&self) -> &'static str {
        match self {
            AlgorithmKind::Dvss => "dvss_sgt",
            AlgorithmKind::Dsgd => "d_sgd",
            AlgorithmKind::Dsgt => "d_sgt",
        }
    }
}

/// Step-size rule.
#[derive(Debug, Clone, PartialEq)]
pub enum StepRule<T: Scalar> {
    /// Agent `i` always uses `alpha[i]`.
    Fixed(Vec<T>),
    /// Every agent uses `c/(k+1)` at iteration `k`.
    Decreasing { c: T },
}

impl<T: Scalar> StepRule<T> {
    pub fn identical(alpha: T, n: usize) -> Self {
        StepRule::Fixed(vec![alpha; n])
    }

    fn validate(&self, n: usize) -> Result<(), AlgorithmError> {
        match self {
            StepRule::Fixed(a) => {
                if a.len() != n {
                    return Err(AlgorithmError::Dimension(format!(
                        "{} step-sizes for {n} agents",
                        a.len()
                    )));
                }
                match a.iter().position(|v| !(*v > T::zero()) || !v.is_finite_value()) {
                    Some(i) => Err(AlgorithmError::NonPositiveStep(i)),
                    None => Ok(()),
                }
            }
            StepRule::Decreasing { c } => {
                if *c > T::zero() && c.is_finite_value() {
                    Ok(())
                } else {
                    Err(AlgorithmError::NonPositiveStep(0))
                }
            }
        }
    }

    #[inline]
    fn at(&self, agent: usize, k: u64) -> T {
        match self {
            StepRule::Fixed(a) => a[agent],
            StepRule::Decreasing { c } => *c / T::lit((k + 1) as f64),
        }
    }
}

/// Stacked iterates of all agents at iteration `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkState<T: Scalar> {
    /// `n × d`, row `i` is `x_i(k)`.
    pub x: DMatrix<T>,
    /// `n × d`, row `i` is `y_i(k)`.
    pub y: DMatrix<T>,
    /// `n × d`, row `i` is `g̃_i(x_i(k))`.
    pub grad: DMatrix<T>,
    pub k: u64,
    /// Cumulative sampled gradients per agent.
    pub samples: Vec<u128>,
    /// Cumulative directed messages over the network.
    pub comms: u128,
}

impl<T: Scalar> NetworkState<T> {
    pub fn agents(&self) -> usize {
        self.x.nrows()
    }

    pub fn total_samples(&self) -> u128 {
        self.samples.iter().sum()
    }

    pub fn is_finite(&self) -> bool {
        self.x.iter().chain(self.y.iter()).all(|v| v.is_finite_value())
    }

    /// `x̄(k)`.
    pub fn x_bar(&self) -> DVector<T> {
        column_mean(&self.x)
    }

    pub fn y_bar(&self) -> DVector<T> {
        column_mean(&self.y)
    }
}

pub(crate) fn column_mean<T: Scalar>(m: &DMatrix<T>) -> DVector<T> {
    let n = T::lit(m.nrows() as f64);
    DVector::from_iterator(m.ncols(), m.column_iter().map(|c| c.sum() / n))
}

fn row<T: Scalar>(m: &DMatrix<T>, i: usize) -> DVector<T> {
    m.row(i).transpose()
}

fn draw_rows<T: Scalar, P: StochasticProblem<T>, R: Rng + ?Sized>(
    problem: &P,
    x: &DMatrix<T>,
    plan: &SamplePlan,
    k: u64,
    samples: &mut [u128],
    rng: &mut R,
) -> Result<DMatrix<T>, AlgorithmError> {
    let (n, d) = x.shape();
    let mut g = DMatrix::zeros(n, d);
    for i in 0..n {
        let batch = plan.batch(i, k)?;
        let gi = draw_minibatch(problem, i, &row(x, i), batch, samples, rng)?;
        g.row_mut(i).copy_from(&gi.transpose());
    }
    Ok(g)
}

/// Sets `x(0) = x0` and `y(0) = g̃(x(0))` with `N(0)` samples per agent.
pub fn init<T: Scalar, P: StochasticProblem<T>, R: Rng + ?Sized>(
    problem: &P,
    graph: &GraphProcess<T>,
    plan: &SamplePlan,
    x0: &DMatrix<T>,
    rng: &mut R,
) -> Result<NetworkState<T>, AlgorithmError> {
    let n = problem.agents();
    let d = problem.dim();
    if graph.n() != n {
        return Err(AlgorithmError::Dimension(format!(
            "graph has {} nodes, problem has {n} agents",
            graph.n()
        )));
    }
    if x0.shape() != (n, d) {
        return Err(AlgorithmError::Dimension(format!(
            "x0 is {:?}, expected ({n}, {d})",
            x0.shape()
        )));
    }
    plan.validate(n)?;
    let mut samples = vec![0u128; n];
    let grad = draw_rows(problem, x0, plan, 0, &mut samples, rng)?;
    Ok(NetworkState {
        x: x0.clone(),
        y: grad.clone(),
        grad,
        k: 0,
        samples,
        comms: 0,
    })
}

/// Per-step diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord<T> {
    /// Index of the sampled weight matrix in the graph support.
    pub matrix_index: usize,
    /// `‖mean(A x) − mean(x)‖ / (1 + ‖mean(x)‖)` for the mixing part alone.
    pub mixing_drift: T,
}

fn mixing_drift<T: Scalar>(before: &DMatrix<T>, mixed: &DMatrix<T>) -> T {
    let b = column_mean(before);
    (column_mean(mixed) - &b).norm() / (T::one() + b.norm())
}

fn check_dims<T: Scalar>(state: &NetworkState<T>, graph: &GraphProcess<T>) -> Result<(), AlgorithmError> {
    if state.y.shape() != state.x.shape() || state.grad.shape() != state.x.shape() {
        return Err(AlgorithmError::Dimension("x, y and cached gradients differ in shape".into()));
    }
    if graph.n() != state.agents() {
        return Err(AlgorithmError::Dimension("graph size differs from state".into()));
    }
    Ok(())
}

/// Gradient-tracking step shared by D-VSS-SGT and D-SGT.
fn tracking_step<T: Scalar, P: StochasticProblem<T>, R: Rng + ?Sized>(
    state: &mut NetworkState<T>,
    problem: &P,
    graph: &GraphProcess<T>,
    plan: &SamplePlan,
    steps: &StepRule<T>,
    rng: &mut R,
) -> Result<StepRecord<T>, AlgorithmError> {
    check_dims(state, graph)?;
    let index = graph.sample_index(rng);
    let a = graph.support()[index].matrix();
    let k = state.k;
    let mixed_x = a * &state.x;
    let drift_x = mixing_drift(&state.x, &mixed_x);
    let mut x_next = mixed_x;
    for i in 0..state.agents() {
        let alpha = steps.at(i, k);
        let yi = state.y.row(i) * alpha;
        let mut xi = x_next.row_mut(i);
        xi -= &yi;
    }
    let g_next = draw_rows(problem, &x_next, plan, k + 1, &mut state.samples, rng)?;
    let mixed_y = a * &state.y;
    let drift_y = mixing_drift(&state.y, &mixed_y);
    state.y = mixed_y + &g_next - &state.grad;
    state.x = x_next;
    state.grad = g_next;
    state.k = k + 1;
    state.comms = state.comms.saturating_add(2 * graph.support()[index].links() as u128);
    Ok(StepRecord {
        matrix_index: index,
        mixing_drift: drift_x.max(drift_y),
    })
}

/// One iteration of variable sample-size gradient tracking with batch
/// `N(k+1)` for the fresh gradients.
pub fn step_dvss<T: Scalar, P: StochasticProblem<T>, R: Rng + ?Sized>(
    state: &mut NetworkState<T>,
    problem: &P,
    graph: &GraphProcess<T>,
    plan: &SamplePlan,
    alpha: &[T],
    rng: &mut R,
) -> Result<StepRecord<T>, AlgorithmError> {
    let steps = StepRule::Fixed(alpha.to_vec());
    steps.validate(state.agents())?;
    tracking_step(state, problem, graph, plan, &steps, rng)
}

fn single_sample_plan() -> SamplePlan {
    SamplePlan::Shared(BatchSchedule::Constant { b: 1 })
}

/// One iteration of a baseline. D-SGD exchanges only `x` (one message per
/// link), D-SGT exchanges `x` and `y`.
pub fn step_baseline<T: Scalar, P: StochasticProblem<T>, R: Rng + ?Sized>(
    state: &mut NetworkState<T>,
    kind: AlgorithmKind,
    steps: &StepRule<T>,
    problem: &P,
    graph: &GraphProcess<T>,
    rng: &mut R,
) -> Result<StepRecord<T>, AlgorithmError> {
    steps.validate(state.agents())?;
    let plan = single_sample_plan();
    match kind {
        AlgorithmKind::Dsgt => tracking_step(state, problem, graph, &plan, steps, rng),
        AlgorithmKind::Dsgd => {
            check_dims(state, graph)?;
            let index = graph.sample_index(rng);
            let a = graph.support()[index].matrix();
            let k = state.k;
            let mixed = a * &state.x;
            let drift = mixing_drift(&state.x, &mixed);
            let mut x_next = mixed;
            for i in 0..state.agents() {
                let g = state.grad.row(i) * steps.at(i, k);
                let mut xi = x_next.row_mut(i);
                xi -= &g;
            }
            let g_next = draw_rows(problem, &x_next, &plan, k + 1, &mut state.samples, rng)?;
            state.x = x_next;
            state.y = g_next.clone();
            state.grad = g_next;
            state.k = k + 1;
            state.comms = state.comms.saturating_add(graph.support()[index].links() as u128);
            Ok(StepRecord {
                matrix_index: index,
                mixing_drift: drift,
            })
        }
        AlgorithmKind::Dvss => Err(AlgorithmError::Dimension(
            "D-VSS-SGT is not a baseline; use step_dvss".into(),
        )),
    }
}

/// Quantity monitored by a stopping rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopMetric {
    /// `√(‖x̄ − x*‖² + ‖x − 𝟙⊗x̄‖²)`.
    Combined,
    OptError,
    ConsensusX,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StopRule<T> {
    pub metric: StopMetric,
    pub epsilon: T,
}

/// How a run ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RunStatus {
    /// Reached the horizon.
    Completed,
    /// Stop metric dropped below its threshold at iteration `k`.
    Converged { k: u64 },
    /// A non-finite entry or error norm appeared at iteration `k`.
    Diverged { k: u64 },
    /// The batch schedule left the representable range at iteration `k`.
    ScheduleExhausted { k: u64 },
}

impl RunStatus {
    pub fn is_diverged(&self) -> bool {
        matches!(self, RunStatus::Diverged { .. })
    }
}

/// Recorded run.
#[derive(Debug, Clone)]
pub struct Trajectory<T: Scalar> {
    pub frames: Vec<MetricFrame<T>>,
    pub status: RunStatus,
    pub final_state: NetworkState<T>,
    /// Largest relative tracking residual
    /// `‖ȳ − mean g̃‖ / (1 + ‖mean g̃‖)` over recorded iterations.
    pub max_tracking_residual: T,
    /// Largest [`StepRecord::mixing_drift`] over the run.
    pub max_mixing_drift: T,
}

/// Everything needed to run one method on one problem/graph pair.
#[derive(Debug)]
pub struct Simulation<'a, T: Scalar, P> {
    pub kind: AlgorithmKind,
    pub problem: &'a P,
    pub graph: &'a GraphProcess<T>,
    /// Batch plan; baselines always draw one sample and ignore it.
    pub plan: SamplePlan,
    pub steps: StepRule<T>,
    pub x0: DMatrix<T>,
    pub horizon: u64,
    pub stop: Option<StopRule<T>>,
}

impl<T: Scalar, P> Clone for Simulation<'_, T, P> {
    fn clone(&self) -> Self {
        Self {
            kind: self.kind,
            problem: self.problem,
            graph: self.graph,
            plan: self.plan.clone(),
            steps: self.steps.clone(),
            x0: self.x0.clone(),
            horizon: self.horizon,
            stop: self.stop,
        }
    }
}

fn frame_is_finite<T: Scalar>(f: &MetricFrame<T>) -> bool {
    f.consensus_x.is_finite_value()
        && f.consensus_y.is_finite_value()
        && f.e_combined.is_none_or(|v| v.is_finite_value())
}

/// `‖ȳ − (1/n)Σ g̃_i‖ / (1 + ‖(1/n)Σ g̃_i‖)`.
pub fn tracking_residual<T: Scalar>(state: &NetworkState<T>) -> T {
    let g = column_mean(&state.grad);
    (state.y_bar() - &g).norm() / (T::one() + g.norm())
}

impl<'a, T: Scalar, P: StochasticProblem<T>> Simulation<'a, T, P> {
    /// Starts from `x(0) = 0`.
    pub fn new(
        kind: AlgorithmKind,
        problem: &'a P,
        graph: &'a GraphProcess<T>,
        plan: SamplePlan,
        steps: StepRule<T>,
        horizon: u64,
    ) -> Self {
        let x0 = DMatrix::zeros(problem.agents(), problem.dim());
        Self {
            kind,
            problem,
            graph,
            plan,
            steps,
            x0,
            horizon,
            stop: None,
        }
    }

    pub fn with_x0(mut self, x0: DMatrix<T>) -> Self {
        self.x0 = x0;
        self
    }

    pub fn with_stop(mut self, stop: StopRule<T>) -> Self {
        self.stop = Some(stop);
        self
    }

    fn effective_plan(&self) -> SamplePlan {
        match self.kind {
            AlgorithmKind::Dvss => self.plan.clone(),
            _ => single_sample_plan(),
        }
    }

    pub fn validate(&self) -> Result<(), AlgorithmError> {
        if self.horizon == 0 {
            return Err(AlgorithmError::ZeroHorizon);
        }
        self.steps.validate(self.problem.agents())?;
        if self.kind == AlgorithmKind::Dvss && matches!(self.steps, StepRule::Decreasing { .. }) {
            return Err(AlgorithmError::Dimension(
                "D-VSS-SGT uses fixed per-agent step-sizes".into(),
            ));
        }
        self.effective_plan().validate(self.problem.agents())?;
        Ok(())
    }

    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<NetworkState<T>, AlgorithmError> {
        init(self.problem, self.graph, &self.effective_plan(), &self.x0, rng)
    }

    pub fn step<R: Rng + ?Sized>(
        &self,
        state: &mut NetworkState<T>,
        rng: &mut R,
    ) -> Result<StepRecord<T>, AlgorithmError> {
        match self.kind {
            AlgorithmKind::Dvss => {
                tracking_step(state, self.problem, self.graph, &self.plan, &self.steps, rng)
            }
            kind => step_baseline(state, kind, &self.steps, self.problem, self.graph, rng),
        }
    }

    fn stop_value(&self, f: &MetricFrame<T>, metric: StopMetric) -> Option<T> {
        match metric {
            StopMetric::Combined => f.e_combined,
            StopMetric::OptError => f.opt_error,
            StopMetric::ConsensusX => Some(f.consensus_x),
        }
    }

    /// Iterates up to the horizon, recording one frame per iteration
    /// (including `k = 0`).
    pub fn run<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Trajectory<T>, AlgorithmError> {
        self.validate()?;
        let mut state = self.init(rng)?;
        let mut frames = Vec::with_capacity(self.horizon as usize + 1);
        frames.push(frame(&state, self.problem));
        let mut max_tracking = tracking_residual(&state);
        let mut max_drift = T::zero();
        let mut status = RunStatus::Completed;
        let stopped = |f: &MetricFrame<T>| {
            self.stop.and_then(|s| {
                self.stop_value(f, s.metric).map(|v| v < s.epsilon)
            })
        };
        if stopped(&frames[0]) == Some(true) {
            status = RunStatus::Converged { k: 0 };
        }
        while status == RunStatus::Completed && state.k < self.horizon {
            let record = match self.step(&mut state, rng) {
                Ok(r) => r,
                Err(AlgorithmError::Schedule(ScheduleError::Overflow(k))) => {
                    status = RunStatus::ScheduleExhausted { k };
                    break;
                }
                Err(e) => return Err(e),
            };
            let f = frame(&state, self.problem);
            // entries can stay finite while the stacked norms overflow
            if !state.is_finite() || !frame_is_finite(&f) {
                status = RunStatus::Diverged { k: state.k };
                break;
            }
            max_drift = max_drift.max(record.mixing_drift);
            max_tracking = max_tracking.max(tracking_residual(&state));
            let done = stopped(&f) == Some(true);
            frames.push(f);
            if done {
                status = RunStatus::Converged { k: state.k };
            }
        }
        Ok(Trajectory {
            frames,
            status,
            final_state: state,
            max_tracking_residual: max_tracking,
            max_mixing_drift: max_drift,
        })
    }
}
