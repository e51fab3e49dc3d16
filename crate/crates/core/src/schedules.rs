//! Batch-size schedules `k ↦ N(k)`.

use serde::{Deserialize, Serialize};

use crate::error::ScheduleError;

/// Batch-size schedule. Every kind is clamped to `N(k) ≥ 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BatchSchedule {
    /// `N(k) = B`.
    Constant {
        #[serde(deserialize_with = "de_batch")]
        b: u128,
    },
    /// `N(k) = ⌈q^{−2k}⌉`, `q ∈ (0, 1)`.
    Geometric { q: f64 },
    /// `N(k) = max(1, ⌈(k+1)^{2θ}⌉)`, `θ > 0`.
    Polynomial { theta: f64 },
    /// `N(k) = max(1, ⌈k^p⌉)`; the `⌈k^{1.1}⌉` schedule used for the convex
    /// experiment is `Power { p: 1.1 }`.
    Power { p: f64 },
    /// Explicit table; the last entry repeats past its end.
    Table {
        #[serde(deserialize_with = "de_batches")]
        sizes: Vec<u128>,
    },
}

// Configs reach these through untagged enums, whose buffered content
// cannot hand out u128 directly.
fn de_batch<'de, D: serde::Deserializer<'de>>(d: D) -> Result<u128, D::Error> {
    u64::deserialize(d).map(u128::from)
}

fn de_batches<'de, D: serde::Deserializer<'de>>(d: D) -> Result<Vec<u128>, D::Error> {
    Vec::<u64>::deserialize(d).map(|v| v.into_iter().map(u128::from).collect())
}

/// What can be said about `Σ_k 1/N(k)` from the kind alone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Summability {
    Summable,
    Divergent,
    /// Tables are only reported numerically.
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummabilityReport {
    pub partial_sum: f64,
    pub class: Summability,
}

fn ceil_to_u128(v: f64, k: u64) -> Result<u128, ScheduleError> {
    let c = v.ceil();
    // u128::MAX as f64 rounds up to 2^128
    if !c.is_finite() || c >= u128::MAX as f64 {
        return Err(ScheduleError::Overflow(k));
    }
    Ok((c as u128).max(1))
}

impl BatchSchedule {
    pub fn validate(&self) -> Result<(), ScheduleError> {
        match self {
            BatchSchedule::Constant { b } if *b == 0 => {
                Err(ScheduleError::BadParameter("constant batch must be ≥ 1".into()))
            }
            BatchSchedule::Geometric { q } if !(*q > 0.0 && *q < 1.0) => Err(
                ScheduleError::BadParameter(format!("geometric q = {q} outside (0, 1)")),
            ),
            BatchSchedule::Polynomial { theta } if !(*theta > 0.0 && theta.is_finite()) => Err(
                ScheduleError::BadParameter(format!("polynomial θ = {theta} must be positive")),
            ),
            BatchSchedule::Power { p } if !(*p > 0.0 && p.is_finite()) => Err(
                ScheduleError::BadParameter(format!("power p = {p} must be positive")),
            ),
            BatchSchedule::Table { sizes } if sizes.is_empty() => Err(ScheduleError::EmptyTable),
            _ => Ok(()),
        }
    }

    /// Scheduled batch at iteration `k`.
    pub fn batch_at(&self, k: u64) -> Result<u128, ScheduleError> {
        match self {
            BatchSchedule::Constant { b } => Ok((*b).max(1)),
            BatchSchedule::Geometric { q } => {
                // q^{-2k} = exp(-2k ln q)
                ceil_to_u128((-2.0 * k as f64 * q.ln()).exp(), k)
            }
            BatchSchedule::Polynomial { theta } => {
                ceil_to_u128(((k + 1) as f64).powf(2.0 * theta), k)
            }
            BatchSchedule::Power { p } => ceil_to_u128((k as f64).powf(*p), k),
            BatchSchedule::Table { sizes } => {
                let idx = (k as usize).min(sizes.len().saturating_sub(1));
                sizes
                    .get(idx)
                    .map(|&s| s.max(1))
                    .ok_or(ScheduleError::EmptyTable)
            }
        }
    }

    /// Partial sum `Σ_{k<horizon} 1/N(k)` together with the kind's
    /// classification.
    pub fn summability(&self, horizon: u64) -> Result<SummabilityReport, ScheduleError> {
        let mut partial_sum = 0.0;
        for k in 0..horizon {
            match self.batch_at(k) {
                Ok(n) => partial_sum += 1.0 / n as f64,
                // remaining terms are below 2^-128
                Err(ScheduleError::Overflow(_)) => break,
                Err(e) => return Err(e),
            }
        }
        let class = match self {
            BatchSchedule::Constant { .. } => Summability::Divergent,
            BatchSchedule::Geometric { .. } => Summability::Summable,
            BatchSchedule::Polynomial { theta } => {
                if 2.0 * theta > 1.0 {
                    Summability::Summable
                } else {
                    Summability::Divergent
                }
            }
            BatchSchedule::Power { p } => {
                if *p > 1.0 {
                    Summability::Summable
                } else {
                    Summability::Divergent
                }
            }
            BatchSchedule::Table { .. } => Summability::Unknown,
        };
        Ok(SummabilityReport { partial_sum, class })
    }

    /// `Σ_{k=0}^{K} N(k)` in exact integer arithmetic.
    pub fn cumulative_samples(&self, last: u64) -> Result<u128, ScheduleError> {
        let mut total: u128 = 0;
        for k in 0..=last {
            total = total
                .checked_add(self.batch_at(k)?)
                .ok_or(ScheduleError::Overflow(k))?;
        }
        Ok(total)
    }

    pub fn is_non_decreasing_kind(&self) -> bool {
        !matches!(self, BatchSchedule::Table { .. })
    }
}

/// Batch sizes for the whole network: one schedule shared by every agent or
/// one per agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SamplePlan {
    Shared(BatchSchedule),
    PerAgent(Vec<BatchSchedule>),
}

impl SamplePlan {
    pub fn validate(&self, agents: usize) -> Result<(), ScheduleError> {
        match self {
            SamplePlan::Shared(s) => s.validate(),
            SamplePlan::PerAgent(list) => {
                if list.len() != agents {
                    return Err(ScheduleError::BadParameter(format!(
                        "{} per-agent schedules for {agents} agents",
                        list.len()
                    )));
                }
                list.iter().try_for_each(BatchSchedule::validate)
            }
        }
    }

    pub fn batch(&self, agent: usize, k: u64) -> Result<u128, ScheduleError> {
        match self {
            SamplePlan::Shared(s) => s.batch_at(k),
            SamplePlan::PerAgent(list) => list[agent].batch_at(k),
        }
    }

    /// `N_min(k) = min_i N_i(k)`.
    pub fn min_batch(&self, k: u64) -> Result<u128, ScheduleError> {
        match self {
            SamplePlan::Shared(s) => s.batch_at(k),
            SamplePlan::PerAgent(list) => list.iter().try_fold(u128::MAX, |m, s| {
                s.batch_at(k).map(|b| m.min(b))
            }),
        }
    }

    /// Summability of `Σ 1/N_min(k)`: summable only if every agent's
    /// schedule is.
    pub fn summability(&self, horizon: u64) -> Result<SummabilityReport, ScheduleError> {
        match self {
            SamplePlan::Shared(s) => s.summability(horizon),
            SamplePlan::PerAgent(list) => {
                let mut partial_sum = 0.0;
                for k in 0..horizon {
                    match self.min_batch(k) {
                        Ok(n) => partial_sum += 1.0 / n as f64,
                        Err(ScheduleError::Overflow(_)) => break,
                        Err(e) => return Err(e),
                    }
                }
                let mut class = Summability::Summable;
                for s in list {
                    match s.summability(1)?.class {
                        Summability::Divergent => {
                            class = Summability::Divergent;
                            break;
                        }
                        Summability::Unknown => class = Summability::Unknown,
                        Summability::Summable => {}
                    }
                }
                Ok(SummabilityReport { partial_sum, class })
            }
        }
    }
}

impl From<BatchSchedule> for SamplePlan {
    fn from(s: BatchSchedule) -> Self {
        SamplePlan::Shared(s)
    }
}
