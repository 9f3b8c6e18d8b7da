//! Metric formulas: task completion, average task time, success rate,
//! weighted score, positional order accuracy, action correctness, the VRTSS
//! composite, engagement frequency and cohort statistics.
//!
//! Everything here is pure and generic over the floating-point type.

use std::collections::HashMap;
use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::model::Situation;

/// Floating-point scalar accepted by the scoring functions.
pub trait Scalar: Float + FromPrimitive + Debug + Display + Send + Sync + 'static {}

impl<T> Scalar for T where T: Float + FromPrimitive + Debug + Display + Send + Sync + 'static {}

fn lit<T: Scalar>(v: f64) -> T {
    T::from_f64(v).expect("literal representable in scalar type")
}

fn count<T: Scalar>(n: usize) -> T {
    T::from_usize(n).expect("count representable in scalar type")
}

/// Weight of order accuracy X in the composite.
pub const ORDER_WEIGHT: f64 = 0.3;
/// Weight of action correctness Y in the composite.
pub const ACTION_WEIGHT: f64 = 0.2;
/// Factor inside the coupling term `sqrt(c * X * Y)`.
pub const COUPLING_FACTOR: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum ScoringError {
    #[error("no completed tasks to average")]
    NoCompletedTasks,
    #[error("task duration must be non-negative and finite")]
    NegativeDuration,
    #[error("success rate needs at least one attempt")]
    NoAttempts,
    #[error("successes ({successes}) exceed attempts ({attempts})")]
    SuccessesExceedAttempts { successes: u64, attempts: u64 },
    #[error("weights must be positive")]
    InvalidWeight,
    #[error("ground-truth sequence is empty")]
    EmptyGroundTruth,
    #[error("metric value outside [0, 1]")]
    MetricOutOfRange,
    #[error("session duration must be positive")]
    InvalidDuration,
    #[error("cohort is empty")]
    EmptyCohort,
    #[error("sample needs n >= 2 and non-zero variance")]
    DegenerateSample,
}

impl ScoringError {
    pub fn code(&self) -> &'static str {
        match self {
            ScoringError::NoCompletedTasks => "no-completed-tasks",
            ScoringError::NegativeDuration => "negative-duration",
            ScoringError::NoAttempts => "no-attempts",
            ScoringError::SuccessesExceedAttempts { .. } => "successes-exceed-attempts",
            ScoringError::InvalidWeight => "invalid-weight",
            ScoringError::EmptyGroundTruth => "empty-ground-truth",
            ScoringError::MetricOutOfRange => "metric-out-of-range",
            ScoringError::InvalidDuration => "invalid-duration",
            ScoringError::EmptyCohort => "empty-cohort",
            ScoringError::DegenerateSample => "degenerate-sample",
        }
    }
}

/// How a step ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepTerminal {
    /// An answer, target or action was submitted (right or wrong).
    Submitted,
    TimedOut,
    Abandoned,
}

/// Completion indicator C: 1 when something was submitted, regardless of
/// correctness.
pub fn task_completion(outcome: StepTerminal) -> u8 {
    match outcome {
        StepTerminal::Submitted => 1,
        StepTerminal::TimedOut | StepTerminal::Abandoned => 0,
    }
}

pub fn average_task_time<T: Scalar>(durations: &[T]) -> Result<T, ScoringError> {
    if durations.is_empty() {
        return Err(ScoringError::NoCompletedTasks);
    }
    if durations.iter().any(|d| !d.is_finite() || *d < T::zero()) {
        return Err(ScoringError::NegativeDuration);
    }
    let total = durations.iter().fold(T::zero(), |acc, d| acc + *d);
    Ok(total / count(durations.len()))
}

/// Fraction in [0, 1]; see [`format_percent`] for report rendering.
pub fn success_rate<T: Scalar>(successes: u64, attempts: u64) -> Result<T, ScoringError> {
    if attempts == 0 {
        return Err(ScoringError::NoAttempts);
    }
    if successes > attempts {
        return Err(ScoringError::SuccessesExceedAttempts { successes, attempts });
    }
    Ok(T::from_u64(successes).unwrap() / T::from_u64(attempts).unwrap())
}

/// Σ score·weight over the recorded steps. Empty input sums to zero.
pub fn weighted_score<T: Scalar>(steps: &[(T, T)]) -> Result<T, ScoringError> {
    steps.iter().try_fold(T::zero(), |acc, (score, weight)| {
        if !weight.is_finite() || *weight <= T::zero() {
            return Err(ScoringError::InvalidWeight);
        }
        Ok(acc + *score * *weight)
    })
}

/// Per-position match indicators and their mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderMatchResult<T> {
    pub matches: Vec<u8>,
    pub x: T,
}

/// Strictly positional comparison: position `i` matches iff `performed`
/// has an element there equal to `expected[i]`. Missing positions are
/// mismatches; surplus performed elements are ignored.
pub fn order_accuracy<T: Scalar, E: PartialEq>(
    expected: &[E],
    performed: &[E],
) -> Result<OrderMatchResult<T>, ScoringError> {
    if expected.is_empty() {
        return Err(ScoringError::EmptyGroundTruth);
    }
    let matches: Vec<u8> = expected.iter().enumerate().map(|(i, e)| u8::from(performed.get(i) == Some(e))).collect();
    let hits = matches.iter().filter(|m| **m == 1).count();
    Ok(OrderMatchResult { x: count::<T>(hits) / count(expected.len()), matches })
}

/// Y: share of situations whose chosen action is the correct one. Missing
/// entries count as incorrect.
pub fn action_correctness<T: Scalar>(
    situations: &[Situation],
    performed_actions: &HashMap<String, String>,
) -> Result<T, ScoringError> {
    if situations.is_empty() {
        return Err(ScoringError::EmptyGroundTruth);
    }
    let correct = situations.iter().filter(|s| performed_actions.get(&s.id) == Some(&s.correct_action_id)).count();
    Ok(count::<T>(correct) / count(situations.len()))
}

/// VRTSS = 0.3·X + 0.2·Y + sqrt(0.25·X·Y).
pub fn vrtss<T: Scalar>(x: T, y: T) -> Result<T, ScoringError> {
    let unit = |v: T| v >= T::zero() && v <= T::one();
    if !unit(x) || !unit(y) {
        return Err(ScoringError::MetricOutOfRange);
    }
    let raw = lit::<T>(ORDER_WEIGHT) * x + lit::<T>(ACTION_WEIGHT) * y + (lit::<T>(COUPLING_FACTOR) * x * y).sqrt();
    // Only absorbs roundoff: the expression is ≤ 1 on the unit square.
    Ok(raw.max(T::zero()).min(T::one()))
}

/// Interactions per second.
pub fn engagement_frequency<T: Scalar>(interactions: u64, duration_s: T) -> Result<T, ScoringError> {
    if !duration_s.is_finite() || duration_s <= T::zero() {
        return Err(ScoringError::InvalidDuration);
    }
    Ok(T::from_u64(interactions).unwrap() / duration_s)
}

/// Descriptive statistics for one report column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortColumnStats<T> {
    pub count: usize,
    pub mean: T,
    /// Sample standard deviation; 0 for a single value.
    pub std: T,
    pub min: T,
    pub q25: T,
    pub q50: T,
    pub q75: T,
    pub max: T,
}

/// Quantile by linear interpolation between closest ranks on sorted data.
pub fn quantile_sorted<T: Scalar>(sorted: &[T], p: T) -> T {
    let h = p * count::<T>(sorted.len() - 1);
    let lo = h.floor();
    let i = lo.to_usize().unwrap_or(0).min(sorted.len() - 1);
    let j = (i + 1).min(sorted.len() - 1);
    sorted[i] + (h - lo) * (sorted[j] - sorted[i])
}

pub fn sample_std<T: Scalar>(values: &[T]) -> T {
    if values.len() < 2 {
        return T::zero();
    }
    let n = count::<T>(values.len());
    let mean = values.iter().fold(T::zero(), |a, v| a + *v) / n;
    let ss = values.iter().fold(T::zero(), |a, v| a + (*v - mean) * (*v - mean));
    (ss / (n - T::one())).sqrt()
}

pub fn cohort_stats<T: Scalar>(values: &[T]) -> Result<CohortColumnStats<T>, ScoringError> {
    if values.is_empty() {
        return Err(ScoringError::EmptyCohort);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let n = count::<T>(values.len());
    Ok(CohortColumnStats {
        count: values.len(),
        mean: values.iter().fold(T::zero(), |a, v| a + *v) / n,
        std: sample_std(values),
        min: sorted[0],
        q25: quantile_sorted(&sorted, lit(0.25)),
        q50: quantile_sorted(&sorted, lit(0.5)),
        q75: quantile_sorted(&sorted, lit(0.75)),
        max: sorted[sorted.len() - 1],
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest<T> {
    pub t: T,
    pub p: T,
    pub df: usize,
}

/// Two-sided one-sample Student t-test against `mu0`.
pub fn one_sample_t_test<T: Scalar>(values: &[T], mu0: T) -> Result<TTest<T>, ScoringError> {
    if values.len() < 2 {
        return Err(ScoringError::DegenerateSample);
    }
    let n = count::<T>(values.len());
    let mean = values.iter().fold(T::zero(), |a, v| a + *v) / n;
    let sd = sample_std(values);
    if sd.is_nan() || sd <= T::zero() {
        return Err(ScoringError::DegenerateSample);
    }
    let t = (mean - mu0) / (sd / n.sqrt());
    let df = values.len() - 1;
    let dist = StudentsT::new(0.0, 1.0, df as f64).expect("df >= 1");
    let t64 = t.to_f64().unwrap();
    let p = (2.0 * dist.sf(t64.abs())).clamp(0.0, 1.0);
    Ok(TTest { t, p: lit(p), df })
}

/// Renders a fraction as a percentage with two decimals, e.g. 0.4 → "40.00%".
pub fn format_percent<T: Scalar>(fraction: T) -> String {
    format!("{:.2}%", fraction.to_f64().unwrap() * 100.0)
}
