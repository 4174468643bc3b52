use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_EPSILON: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PeriodOutcome {
    Found,
    /// Armed but never returned within the horizon.
    NotFound,
    /// Never left the ε-neighbourhood of the initial value.
    NotArmed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeriodResult {
    pub outcome: PeriodOutcome,
    /// Regression time, when found.
    pub period: Option<f64>,
    /// Signed `S(T) - S(0)`, when found.
    pub epsilon_at_t: Option<f64>,
    pub armed_at: Option<f64>,
    /// Last time examined.
    pub search_horizon: f64,
}

impl PeriodResult {
    pub fn found(&self) -> bool {
        self.outcome == PeriodOutcome::Found
    }
}

/// Incremental arm/detect scan: the trace must first rise by at least `eps`
/// above its initial value, then the first sample within `eps` of it is the
/// regression time.
#[derive(Debug, Clone)]
pub struct PeriodDetector {
    eps: f64,
    initial: Option<f64>,
    armed_at: Option<f64>,
    last_t: f64,
    result: Option<PeriodResult>,
}

impl PeriodDetector {
    pub fn new(eps: f64) -> Result<Self> {
        if !(eps > 0.0) {
            return Err(Error::validation("analysis: period", format!("epsilon must be positive, got {eps}")));
        }
        Ok(PeriodDetector { eps, initial: None, armed_at: None, last_t: 0.0, result: None })
    }

    /// Feeds one sample; returns the result once the period is found.
    pub fn push(&mut self, t: f64, s: f64) -> Option<PeriodResult> {
        if self.result.is_some() {
            return self.result;
        }
        self.last_t = t;
        let s0 = *self.initial.get_or_insert(s);
        match self.armed_at {
            None if s - s0 >= self.eps => self.armed_at = Some(t),
            Some(armed) if (s - s0).abs() < self.eps => {
                self.result = Some(PeriodResult {
                    outcome: PeriodOutcome::Found,
                    period: Some(t),
                    epsilon_at_t: Some(s - s0),
                    armed_at: Some(armed),
                    search_horizon: t,
                });
            }
            _ => {}
        }
        self.result
    }

    pub fn finish(&self) -> PeriodResult {
        self.result.unwrap_or(PeriodResult {
            outcome: if self.armed_at.is_some() { PeriodOutcome::NotFound } else { PeriodOutcome::NotArmed },
            period: None,
            epsilon_at_t: None,
            armed_at: self.armed_at,
            search_horizon: self.last_t,
        })
    }
}

pub fn detect_period(times: &[f64], values: &[f64], eps: f64) -> Result<PeriodResult> {
    if times.len() != values.len() {
        return Err(Error::DimensionMismatch { context: "analysis: period", expected: times.len(), actual: values.len() });
    }
    let mut detector = PeriodDetector::new(eps)?;
    for (&t, &s) in times.iter().zip(values) {
        if detector.push(t, s).is_some() {
            break;
        }
    }
    Ok(detector.finish())
}
