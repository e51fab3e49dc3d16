//! Serialisable run descriptions and the desk-scale defaults.
//!
//! A [`RunConfig`] names a graph, a problem, an algorithm, a batch
//! schedule and a step-size specification. [`Experiment::build`] turns it
//! into concrete objects, resolving `auto:` step-sizes against the theory
//! bounds of the generated instance.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::algorithms::{AlgorithmKind, Simulation, StepRule};
use crate::error::ExperimentError;
use crate::graphs::{erdos_renyi_support, GraphProcess, WeightMatrix};
use crate::problems::{
    make_regression, unit_parameter, RegressionInstance, SamplingMode, SpectrumSpec,
    StochasticProblem, DEFAULT_NU_RADIUS,
};
use crate::schedules::{BatchSchedule, SamplePlan};
use crate::theory::{
    stepsize_bound_convex, stepsize_bound_identical, stepsize_bound_strongly_convex, TheoryInputs,
    TheoryReport,
};

pub const DESK_AGENTS: usize = 20;
pub const DESK_DIM: usize = 5;
pub const DESK_EDGE_PROBABILITY: f64 = 0.3;
pub const DESK_GRAPHS: usize = 10;
pub const DESK_EIG_LO: f64 = 5.0;
pub const DESK_EIG_HI: f64 = 10.0;
pub const DESK_NOISE_SD: f64 = 1.0;
pub const DESK_REPLICATIONS: usize = 50;
pub const DEFAULT_GRAPH_SEED: u64 = 42;
pub const DEFAULT_PROBLEM_SEED: u64 = 7;
pub const DEFAULT_SAFETY_FRACTION: f64 = 0.99;

/// Desk-scale random network: 10 Erdős–Rényi graphs on 20 nodes, `p = 0.3`.
pub fn desk_graph(seed: u64) -> Result<GraphProcess<f64>, ExperimentError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(erdos_renyi_support(DESK_AGENTS, DESK_EDGE_PROBABILITY, DESK_GRAPHS, &mut rng)?)
}

/// Desk-scale regression instance with eigenvalues in `[5, 10]`, `σ = 1`
/// and `x* = 𝟙/√d`; `zeros` eigenvalues per agent are set to 0.
pub fn desk_problem(n: usize, zeros: usize, seed: u64) -> Result<RegressionInstance<f64>, ExperimentError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spectrum = SpectrumSpec::rank_deficient(DESK_EIG_LO, DESK_EIG_HI, zeros);
    Ok(make_regression(
        n,
        DESK_DIM,
        &spectrum,
        &[DESK_NOISE_SD],
        unit_parameter(DESK_DIM),
        &mut rng,
    )?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GraphSpec {
    ErdosRenyi {
        n: usize,
        p: f64,
        count: usize,
        #[serde(default)]
        seed: Option<u64>,
    },
    /// Deterministic complete graph (exact averaging).
    Complete { n: usize },
    /// JSON graph document.
    File { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NoiseSpec {
    Shared(f64),
    PerAgent(Vec<f64>),
}

impl NoiseSpec {
    fn values(&self) -> Vec<f64> {
        match self {
            NoiseSpec::Shared(v) => vec![*v],
            NoiseSpec::PerAgent(v) => v.clone(),
        }
    }
}

fn default_noise() -> NoiseSpec {
    NoiseSpec::Shared(DESK_NOISE_SD)
}

fn default_nu_radius() -> f64 {
    DEFAULT_NU_RADIUS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemSpec {
    /// Random regression instance on the graph's agents.
    Regression {
        d: usize,
        eig_lo: f64,
        eig_hi: f64,
        /// Zero eigenvalues per agent (merely convex local costs).
        #[serde(default)]
        zeros: usize,
        #[serde(default = "default_noise")]
        noise_sd: NoiseSpec,
        #[serde(default)]
        seed: Option<u64>,
        #[serde(default = "default_nu_radius")]
        nu_radius: f64,
        #[serde(default)]
        sampling: SamplingMode,
    },
    /// JSON problem document.
    File {
        path: PathBuf,
        #[serde(default = "default_nu_radius")]
        nu_radius: f64,
        #[serde(default)]
        sampling: SamplingMode,
    },
}

/// Step-size value: a scalar, one value per agent, or
/// `"auto:<bound>@<fraction>"` with bound `convex`, `strongly_convex` or
/// `identical`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AlphaSpec {
    Scalar(f64),
    PerAgent(Vec<f64>),
    Auto(String),
}

/// `c` of the decreasing rule `c/(k+1)`; `"auto"` means `2/η`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DecayConstant {
    Value(f64),
    Auto(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleKind {
    #[default]
    Constant,
    Decreasing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepSpec {
    #[serde(default)]
    pub rule: RuleKind,
    #[serde(default)]
    pub alpha: Option<AlphaSpec>,
    /// Upper cap applied after `auto` resolution.
    #[serde(default)]
    pub cap: Option<f64>,
    #[serde(default)]
    pub c: Option<DecayConstant>,
}

/// Accuracy targets for `sweep`: an explicit decreasing list, or `points`
/// log-spaced values from `from` down to `to`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    #[serde(default)]
    pub epsilons: Option<Vec<f64>>,
    #[serde(default)]
    pub from: Option<f64>,
    #[serde(default)]
    pub to: Option<f64>,
    #[serde(default)]
    pub points: Option<usize>,
}

impl SweepSpec {
    pub fn epsilons(&self) -> Result<Vec<f64>, ExperimentError> {
        if let Some(e) = &self.epsilons {
            return Ok(e.clone());
        }
        match (self.from, self.to, self.points) {
            (Some(a), Some(b), Some(m)) if a > b && b > 0.0 && m >= 2 => Ok((0..m)
                .map(|i| match i {
                    0 => a,
                    i if i == m - 1 => b,
                    i => (a.ln() + (b.ln() - a.ln()) * i as f64 / (m - 1) as f64).exp(),
                })
                .collect()),
            _ => Err(ExperimentError::Config(
                "sweep needs `epsilons` or `from > to > 0` with `points >= 2`".into(),
            )),
        }
    }
}

fn default_schedule() -> SamplePlan {
    SamplePlan::Shared(BatchSchedule::Constant { b: 1 })
}

fn default_replications() -> usize {
    DESK_REPLICATIONS
}

/// One experiment. Paths are relative to the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub name: Option<String>,
    pub algorithm: AlgorithmKind,
    #[serde(default = "default_schedule")]
    pub schedule: SamplePlan,
    pub step: StepSpec,
    pub horizon: u64,
    #[serde(default = "default_replications")]
    pub replications: usize,
    /// Replication `r` uses seed `seed + r`.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub fail_on_divergence: bool,
    /// Every entry of `x(0)`.
    #[serde(default)]
    pub x0: f64,
    pub graph: GraphSpec,
    pub problem: ProblemSpec,
    #[serde(default)]
    pub sweep: Option<SweepSpec>,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

impl RunConfig {
    /// Overrides the graph generation seed (no effect on file graphs).
    pub fn set_graph_seed(&mut self, s: u64) {
        if let GraphSpec::ErdosRenyi { seed, .. } = &mut self.graph {
            *seed = Some(s);
        }
    }

    pub fn set_problem_seed(&mut self, s: u64) {
        if let ProblemSpec::Regression { seed, .. } = &mut self.problem {
            *seed = Some(s);
        }
    }

    /// Rewrites relative file paths against `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        if let GraphSpec::File { path } = &mut self.graph {
            if path.is_relative() {
                *path = base.join(&*path);
            }
        }
        if let ProblemSpec::File { path, .. } = &mut self.problem {
            if path.is_relative() {
                *path = base.join(&*path);
            }
        }
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.horizon == 0 {
            return Err(ExperimentError::Config("horizon must be at least 1".into()));
        }
        if self.replications == 0 {
            return Err(ExperimentError::Config("replications must be at least 1".into()));
        }
        if !self.x0.is_finite() {
            return Err(ExperimentError::Config("x0 must be finite".into()));
        }
        match (self.step.rule, &self.step.alpha, &self.step.c) {
            (RuleKind::Constant, None, _) => {
                return Err(ExperimentError::Config("constant rule needs step.alpha".into()))
            }
            (RuleKind::Decreasing, _, None) => {
                return Err(ExperimentError::Config("decreasing rule needs step.c".into()))
            }
            (RuleKind::Decreasing, _, _) if self.algorithm == AlgorithmKind::Dvss => {
                return Err(ExperimentError::Config(
                    "dvss_sgt uses fixed step-sizes; decreasing rules are for baselines".into(),
                ))
            }
            _ => {}
        }
        if let Some(cap) = self.step.cap {
            if !(cap > 0.0) {
                return Err(ExperimentError::Config("step.cap must be positive".into()));
            }
        }
        Ok(())
    }
}

fn read(path: &Path) -> Result<String, ExperimentError> {
    std::fs::read_to_string(path).map_err(|e| ExperimentError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

pub fn build_graph(spec: &GraphSpec) -> Result<GraphProcess<f64>, ExperimentError> {
    match spec {
        GraphSpec::ErdosRenyi { n, p, count, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.unwrap_or(DEFAULT_GRAPH_SEED));
            Ok(erdos_renyi_support(*n, *p, *count, &mut rng)?)
        }
        GraphSpec::Complete { n } => Ok(GraphProcess::deterministic(WeightMatrix::averaging(*n)?)?),
        GraphSpec::File { path } => Ok(GraphProcess::from_json(&read(path)?)?),
    }
}

pub fn build_problem(spec: &ProblemSpec, n: usize) -> Result<RegressionInstance<f64>, ExperimentError> {
    match spec {
        ProblemSpec::Regression {
            d,
            eig_lo,
            eig_hi,
            zeros,
            noise_sd,
            seed,
            nu_radius,
            sampling,
        } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.unwrap_or(DEFAULT_PROBLEM_SEED));
            let spectrum = SpectrumSpec::rank_deficient(*eig_lo, *eig_hi, *zeros);
            let inst = make_regression(n, *d, &spectrum, &noise_sd.values(), unit_parameter(*d), &mut rng)?;
            Ok(inst.with_nu_radius(*nu_radius).with_sampling(*sampling))
        }
        ProblemSpec::File {
            path,
            nu_radius,
            sampling,
        } => {
            let inst = RegressionInstance::from_json(&read(path)?)?;
            if inst.agents() != n {
                return Err(ExperimentError::Config(format!(
                    "problem has {} agents, graph has {n} nodes",
                    inst.agents()
                )));
            }
            Ok(inst.with_nu_radius(*nu_radius).with_sampling(*sampling))
        }
    }
}

/// Parses `auto:<bound>[@<fraction>]`.
pub fn parse_auto(text: &str) -> Result<(String, f64), ExperimentError> {
    let rest = text
        .strip_prefix("auto:")
        .ok_or_else(|| ExperimentError::Config(format!("unrecognised step-size `{text}`")))?;
    let (bound, fraction) = match rest.split_once('@') {
        Some((b, f)) => (
            b,
            f.parse::<f64>()
                .map_err(|_| ExperimentError::Config(format!("bad safety fraction in `{text}`")))?,
        ),
        None => (rest, DEFAULT_SAFETY_FRACTION),
    };
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(ExperimentError::Config(format!(
            "safety fraction {fraction} outside (0, 1]"
        )));
    }
    Ok((bound.to_string(), fraction))
}

/// Named theory bound on an identical step-size.
pub fn named_bound(name: &str, rho1: f64, eta: f64, lip: f64) -> Result<f64, ExperimentError> {
    let need_eta = || {
        if eta > 0.0 {
            Ok(())
        } else {
            Err(ExperimentError::Config(format!(
                "bound `{name}` needs a strongly convex problem (eta = {eta})"
            )))
        }
    };
    match name {
        "convex" => Ok(stepsize_bound_convex(rho1, lip)),
        "identical" => {
            need_eta()?;
            Ok(stepsize_bound_identical(rho1, eta, lip))
        }
        "strongly_convex" => {
            need_eta()?;
            Ok(stepsize_bound_strongly_convex(rho1, eta, lip, 0.0)?.alpha_limit(lip))
        }
        other => Err(ExperimentError::Config(format!("unknown bound `{other}`"))),
    }
}

/// A config turned into concrete objects.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: RunConfig,
    pub graph: GraphProcess<f64>,
    pub problem: RegressionInstance<f64>,
    pub steps: StepRule<f64>,
    /// Human-readable account of how the step-sizes were obtained.
    pub step_note: String,
    pub rho1: f64,
}

impl Experiment {
    pub fn build(config: RunConfig) -> Result<Self, ExperimentError> {
        config.validate()?;
        let graph = build_graph(&config.graph)?;
        let problem = build_problem(&config.problem, graph.n())?;
        config.schedule.validate(graph.n())?;
        let c = problem.constants();
        let rho1 = graph.rho1();
        let n = graph.n();
        let (steps, step_note) = match config.step.rule {
            RuleKind::Constant => {
                let spec = config.step.alpha.as_ref().expect("validated");
                let (alpha, note) = match spec {
                    AlphaSpec::Scalar(a) => (vec![*a; n], format!("constant {a}")),
                    AlphaSpec::PerAgent(v) => {
                        if v.len() != n {
                            return Err(ExperimentError::Config(format!(
                                "{} step-sizes for {n} agents",
                                v.len()
                            )));
                        }
                        (v.clone(), "per-agent list".to_string())
                    }
                    AlphaSpec::Auto(text) => {
                        let (name, fraction) = parse_auto(text)?;
                        let bound = named_bound(&name, rho1, c.eta, c.lip)?;
                        let mut a = bound * fraction;
                        let mut note = format!("{fraction} x {name} bound {bound}");
                        if let Some(cap) = config.step.cap {
                            if a > cap {
                                a = cap;
                                note.push_str(&format!(", capped at {cap}"));
                            }
                        }
                        (vec![a; n], note)
                    }
                };
                if let Some(i) = alpha.iter().position(|a| !(*a > 0.0) || !a.is_finite()) {
                    return Err(ExperimentError::Config(format!(
                        "step-size of agent {i} is not positive"
                    )));
                }
                (StepRule::Fixed(alpha), note)
            }
            RuleKind::Decreasing => {
                let cval = match config.step.c.as_ref().expect("validated") {
                    DecayConstant::Value(v) => *v,
                    DecayConstant::Auto(s) if s == "auto" => {
                        if !(c.eta > 0.0) {
                            return Err(ExperimentError::Config(
                                "c = \"auto\" needs a strongly convex problem".into(),
                            ));
                        }
                        2.0 / c.eta
                    }
                    DecayConstant::Auto(s) => {
                        return Err(ExperimentError::Config(format!("unrecognised step.c `{s}`")))
                    }
                };
                if !(cval > 0.0) {
                    return Err(ExperimentError::Config("step.c must be positive".into()));
                }
                (
                    StepRule::Decreasing { c: cval },
                    format!("c/(k+1) with c = {cval} (default baseline rule; the source leaves it unspecified)"),
                )
            }
        };
        Ok(Self {
            config,
            graph,
            problem,
            steps,
            step_note,
            rho1,
        })
    }

    pub fn simulation(&self) -> Simulation<'_, f64, RegressionInstance<f64>> {
        let n = self.graph.n();
        let d = self.problem.dim();
        Simulation::new(
            self.config.algorithm,
            &self.problem,
            &self.graph,
            self.config.schedule.clone(),
            self.steps.clone(),
            self.config.horizon,
        )
        .with_x0(DMatrix::from_element(n, d, self.config.x0))
    }

    /// Schedule the algorithm effectively runs with.
    pub fn effective_schedule(&self) -> Option<BatchSchedule> {
        match (self.config.algorithm, &self.config.schedule) {
            (AlgorithmKind::Dvss, SamplePlan::Shared(s)) => Some(s.clone()),
            (AlgorithmKind::Dvss, SamplePlan::PerAgent(_)) => None,
            _ => Some(BatchSchedule::Constant { b: 1 }),
        }
    }

    pub fn theory_report(&self, epsilons: &[f64]) -> Result<TheoryReport, ExperimentError> {
        let c = self.problem.constants();
        let n = self.graph.n();
        let (alpha, decreasing) = match &self.steps {
            StepRule::Fixed(a) => (a.clone(), None),
            StepRule::Decreasing { c } => (vec![*c; n], Some(*c)),
        };
        let mut report = TheoryReport::build(&TheoryInputs {
            n,
            rho1: self.rho1,
            eta: c.eta,
            lip: c.lip,
            nu: c.nu,
            expected_links: self.graph.expected_links(),
            alpha,
            schedule: self.effective_schedule(),
            epsilons: epsilons.to_vec(),
        })?;
        if let Some(cval) = decreasing {
            report.warnings.push(format!(
                "decreasing rule c/(k+1): matrices evaluated at the initial step c = {cval}"
            ));
        }
        Ok(report)
    }
}
