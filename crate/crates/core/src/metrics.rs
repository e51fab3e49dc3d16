//! Error measurements, Monte Carlo aggregation and fits.

use std::io::Write;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::algorithms::{column_mean, NetworkState, RunStatus, Simulation};
use crate::error::MetricsError;
use crate::problems::StochasticProblem;
use crate::scalar::Scalar;

/// Bit-exact CSV header of [`write_csv`].
pub const CSV_HEADER: &str = "k,opt_error_mean,opt_error_se,consensus_x_mean,consensus_x_se,\
consensus_y_mean,consensus_y_se,e_mean,e_se,samples_cum,comms_cum,diverged_count";

/// Error measurements at one iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricFrame<T> {
    pub k: u64,
    /// `‖x̄ − x*‖`, absent without a known optimum.
    pub opt_error: Option<T>,
    /// `‖x − 𝟙⊗x̄‖`.
    pub consensus_x: T,
    /// `‖y − 𝟙⊗ȳ‖`.
    pub consensus_y: T,
    /// `√(opt_error² + consensus_x²)`.
    pub e_combined: Option<T>,
    /// `F(x̄) − F*`, when the problem reports it.
    pub suboptimality: Option<T>,
    pub samples_cum: u128,
    pub comms_cum: u128,
}

fn deviation_norm<T: Scalar>(m: &DMatrix<T>) -> T {
    let mean = column_mean(m);
    let mut acc = T::zero();
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            let v = m[(i, j)] - mean[j];
            acc += v * v;
        }
    }
    acc.sqrt()
}

pub fn frame<T: Scalar, P: StochasticProblem<T>>(state: &NetworkState<T>, problem: &P) -> MetricFrame<T> {
    let x_bar = state.x_bar();
    let consensus_x = deviation_norm(&state.x);
    let opt_error = problem.optimum().map(|xs| (&x_bar - xs).norm());
    MetricFrame {
        k: state.k,
        opt_error,
        consensus_x,
        consensus_y: deviation_norm(&state.y),
        e_combined: opt_error.map(|o| (o * o + consensus_x * consensus_x).sqrt()),
        suboptimality: problem.suboptimality(&x_bar),
        samples_cum: state.total_samples(),
        comms_cum: state.comms,
    }
}

/// Mean and standard error of one quantity at one iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    /// Absent for a single replication.
    pub se: Option<f64>,
}

fn aggregate(values: &mut [f64]) -> Stat {
    // sorted summation makes the result independent of replication order
    values.sort_by(f64::total_cmp);
    let r = values.len() as f64;
    let mean = values.iter().sum::<f64>() / r;
    let se = (values.len() > 1).then(|| {
        let mut dev: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
        dev.sort_by(f64::total_cmp);
        (dev.iter().sum::<f64>() / (r - 1.0)).sqrt() / r.sqrt()
    });
    Stat { mean, se }
}

/// Per-iteration aggregates over replications.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSeries {
    pub k: Vec<u64>,
    pub opt_error: Option<Vec<Stat>>,
    pub consensus_x: Vec<Stat>,
    pub consensus_y: Vec<Stat>,
    pub e: Option<Vec<Stat>>,
    pub suboptimality: Option<Vec<Stat>>,
    /// Mean cumulative sampled gradients.
    pub samples_cum: Vec<f64>,
    /// Mean cumulative messages.
    pub comms_cum: Vec<f64>,
    /// Seeds of the replications included in the aggregates.
    pub seeds: Vec<u64>,
    /// Seeds of replications that produced non-finite iterates.
    pub diverged_seeds: Vec<u64>,
    /// `e(k)` per included replication, for dispersion reports.
    pub per_replication_e: Vec<Vec<f64>>,
    /// Terminal status per seed, in seed order.
    pub statuses: Vec<(u64, RunStatus)>,
}

impl EnsembleSeries {
    /// Number of replications in the aggregates.
    pub fn replications(&self) -> usize {
        self.seeds.len()
    }

    pub fn diverged_count(&self) -> usize {
        self.diverged_seeds.len()
    }

    pub fn e_mean(&self) -> Option<Vec<f64>> {
        self.e.as_ref().map(|v| v.iter().map(|s| s.mean).collect())
    }

    /// Fit of mean `e(k)` over `k ∈ [lo, hi]`.
    pub fn rate_fit(&self, lo: u64, hi: u64, abscissa: Abscissa) -> Result<LinearFit, MetricsError> {
        let e = self.e_mean().ok_or(MetricsError::TooFewPoints)?;
        rate_fit(&self.k, &e, lo, hi, abscissa)
    }
}

fn series_of<T: Scalar>(
    frames: &[&[MetricFrame<T>]],
    len: usize,
    get: impl Fn(&MetricFrame<T>) -> Option<T>,
) -> Option<Vec<Stat>> {
    let mut out = Vec::with_capacity(len);
    let mut buf = Vec::with_capacity(frames.len());
    for k in 0..len {
        buf.clear();
        for f in frames {
            buf.push(get(&f[k])?.as_f64());
        }
        out.push(aggregate(&mut buf));
    }
    Some(out)
}

/// Runs `replications` independent trajectories with seeds
/// `seed_base..seed_base+replications` in parallel and aggregates them.
/// Diverged replications are excluded from every aggregate and counted.
pub fn ensemble<T: Scalar, P: StochasticProblem<T>>(
    sim: &Simulation<'_, T, P>,
    replications: usize,
    seed_base: u64,
) -> Result<EnsembleSeries, MetricsError> {
    let seeds: Vec<u64> = (0..replications as u64).map(|r| seed_base + r).collect();
    ensemble_with_seeds(sim, &seeds)
}

/// [`ensemble`] over an explicit seed list.
pub fn ensemble_with_seeds<T: Scalar, P: StochasticProblem<T>>(
    sim: &Simulation<'_, T, P>,
    seeds: &[u64],
) -> Result<EnsembleSeries, MetricsError> {
    if seeds.is_empty() {
        return Err(MetricsError::NoReplications);
    }
    let mut sim = sim.clone();
    sim.stop = None;
    let runs = seeds
        .par_iter()
        .map(|&seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            sim.run(&mut rng).map(|t| (seed, t))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut statuses = Vec::with_capacity(runs.len());
    let mut kept = Vec::new();
    let mut diverged_seeds = Vec::new();
    for (seed, t) in &runs {
        statuses.push((*seed, t.status));
        if t.status.is_diverged() {
            diverged_seeds.push(*seed);
        } else {
            kept.push((*seed, t.frames.as_slice()));
        }
    }
    let len = kept.iter().map(|(_, f)| f.len()).min().unwrap_or(0);
    let frames: Vec<&[MetricFrame<T>]> = kept.iter().map(|(_, f)| &f[..len]).collect();
    let k = frames.first().map(|f| f.iter().map(|fr| fr.k).collect()).unwrap_or_default();
    let consensus_x = series_of(&frames, len, |f| Some(f.consensus_x)).unwrap_or_default();
    let consensus_y = series_of(&frames, len, |f| Some(f.consensus_y)).unwrap_or_default();
    let mean_of = |get: &dyn Fn(&MetricFrame<T>) -> f64| -> Vec<f64> {
        (0..len)
            .map(|k| {
                let mut v: Vec<f64> = frames.iter().map(|f| get(&f[k])).collect();
                aggregate(&mut v).mean
            })
            .collect()
    };
    let samples_cum = mean_of(&|f| f.samples_cum as f64);
    let comms_cum = mean_of(&|f| f.comms_cum as f64);
    let per_replication_e = frames
        .iter()
        .filter_map(|f| f.iter().map(|fr| fr.e_combined.map(|v| v.as_f64())).collect())
        .collect();
    Ok(EnsembleSeries {
        k,
        opt_error: (len > 0).then(|| series_of(&frames, len, |f| f.opt_error)).flatten(),
        consensus_x,
        consensus_y,
        e: (len > 0).then(|| series_of(&frames, len, |f| f.e_combined)).flatten(),
        suboptimality: (len > 0).then(|| series_of(&frames, len, |f| f.suboptimality)).flatten(),
        samples_cum,
        comms_cum,
        seeds: kept.iter().map(|(s, _)| *s).collect(),
        diverged_seeds,
        per_replication_e,
        statuses,
    })
}

/// Least-squares line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Result<LinearFit, MetricsError> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(MetricsError::TooFewPoints);
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    if sxx == 0.0 {
        return Err(MetricsError::TooFewPoints);
    }
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(LinearFit {
        slope,
        intercept: my - slope * mx,
        r2,
    })
}

/// Abscissa of a rate fit; the ordinate is always `ln e(k)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Abscissa {
    /// `ln e` vs `k`; `exp(slope)` is the geometric base.
    Linear,
    /// `ln e` vs `ln k`; the slope is the polynomial exponent.
    Log,
}

pub fn rate_fit(
    ks: &[u64],
    values: &[f64],
    lo: u64,
    hi: u64,
    abscissa: Abscissa,
) -> Result<LinearFit, MetricsError> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (&k, &v) in ks.iter().zip(values) {
        if k < lo || k > hi {
            continue;
        }
        if !(v > 0.0) {
            return Err(MetricsError::NonPositive { k, value: v });
        }
        xs.push(match abscissa {
            Abscissa::Linear => k as f64,
            Abscissa::Log => (k as f64).ln(),
        });
        ys.push(v.ln());
    }
    linear_fit(&xs, &ys)
}

/// First passage of mean `e(k)` below one target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub epsilon: f64,
    /// `None` when the target was never reached (censored).
    pub iterations: Option<u64>,
    pub samples: Option<f64>,
    pub comms: Option<f64>,
}

impl SweepRow {
    pub fn censored(&self) -> bool {
        self.iterations.is_none()
    }
}

/// First-passage table for decreasing targets `epsilons`.
pub fn complexity_sweep(series: &EnsembleSeries, epsilons: &[f64]) -> Result<Vec<SweepRow>, MetricsError> {
    if epsilons.is_empty()
        || epsilons.iter().any(|e| !(*e > 0.0))
        || epsilons.windows(2).any(|w| w[1] >= w[0])
    {
        return Err(MetricsError::BadTargets);
    }
    let e = series.e_mean().ok_or(MetricsError::TooFewPoints)?;
    Ok(epsilons
        .iter()
        .map(|&eps| {
            let idx = e.iter().position(|v| *v < eps);
            SweepRow {
                epsilon: eps,
                iterations: idx.map(|i| series.k[i]),
                samples: idx.map(|i| series.samples_cum[i]),
                comms: idx.map(|i| series.comms_cum[i]),
            }
        })
        .collect())
}

/// First index at which each replication's `e(k)` drops below `eps`.
pub fn per_replication_passage(series: &EnsembleSeries, eps: f64) -> Vec<Option<u64>> {
    series
        .per_replication_e
        .iter()
        .map(|e| e.iter().position(|v| *v < eps).map(|i| series.k[i]))
        .collect()
}

/// 17 significant digits.
pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// Integral values below 2^53 print as integers.
pub fn format_count(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 9.007_199_254_740_992e15 {
        format!("{}", v as i64)
    } else {
        format_float(v)
    }
}

/// Writes `# key: value` comment lines, the header and one row per `k`.
pub fn write_csv<W: Write>(
    series: &EnsembleSeries,
    metadata: &[(String, String)],
    mut out: W,
) -> std::io::Result<()> {
    for (key, value) in metadata {
        writeln!(out, "# {key}: {value}")?;
    }
    writeln!(out, "{CSV_HEADER}")?;
    let opt = |s: Option<&Stat>| -> (String, String) {
        match s {
            Some(s) => (format_float(s.mean), s.se.map(format_float).unwrap_or_default()),
            None => (String::new(), String::new()),
        }
    };
    let diverged = series.diverged_count();
    for (i, k) in series.k.iter().enumerate() {
        let (om, os) = opt(series.opt_error.as_ref().map(|v| &v[i]));
        let (xm, xs) = opt(Some(&series.consensus_x[i]));
        let (ym, ys) = opt(Some(&series.consensus_y[i]));
        let (em, es) = opt(series.e.as_ref().map(|v| &v[i]));
        writeln!(
            out,
            "{k},{om},{os},{xm},{xs},{ym},{ys},{em},{es},{},{},{diverged}",
            format_count(series.samples_cum[i]),
            format_count(series.comms_cum[i]),
        )?;
    }
    Ok(())
}
