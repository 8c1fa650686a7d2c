//! Domain types shared across the crate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::KernelSpec;

/// Event times on an observation window `[0, horizon]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventSeries {
    times: Vec<f64>,
    horizon: f64,
    marks: Option<Vec<f64>>,
    /// Absolute time corresponding to local time zero.
    offset: f64,
}

impl EventSeries {
    pub fn new(times: Vec<f64>, horizon: f64) -> Result<Self> {
        Self::with_marks(times, horizon, None)
    }

    pub fn with_marks(times: Vec<f64>, horizon: f64, marks: Option<Vec<f64>>) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::InvalidSeries(format!("horizon {horizon} must be > 0")));
        }
        if let Some(m) = &marks {
            if m.len() != times.len() {
                return Err(Error::InvalidSeries(format!(
                    "{} marks for {} events",
                    m.len(),
                    times.len()
                )));
            }
        }
        for (i, &t) in times.iter().enumerate() {
            if !(0.0..=horizon).contains(&t) {
                return Err(Error::InvalidSeries(format!(
                    "event {i} at t = {t} outside [0, {horizon}]"
                )));
            }
            if i > 0 && t <= times[i - 1] {
                return Err(Error::InvalidSeries(format!(
                    "times not strictly increasing at index {i} ({} then {t})",
                    times[i - 1]
                )));
            }
        }
        Ok(EventSeries {
            times,
            horizon,
            marks,
            offset: 0.0,
        })
    }

    /// Attaches the absolute time of the window start.
    pub fn at_offset(mut self, offset: f64) -> Self {
        self.offset = offset;
        self
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn marks(&self) -> Option<&[f64]> {
        self.marks.as_deref()
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Mean inter-event time `T / N`.
    pub fn mean_spacing(&self) -> f64 {
        self.horizon / self.times.len().max(1) as f64
    }

    /// Times falling in the closed interval `[lo, hi]`.
    pub fn events_in(&self, lo: f64, hi: f64) -> &[f64] {
        let a = self.times.partition_point(|&t| t < lo);
        let b = self.times.partition_point(|&t| t <= hi);
        &self.times[a..b.max(a)]
    }
}

/// One exogenous intensity burst `α·exp(-(t - z)/τ)` for `t > z`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BurstTerm {
    /// Onset, seconds.
    pub z: f64,
    /// Amplitude, events per second.
    pub alpha: f64,
    /// Relaxation time, seconds.
    pub tau: f64,
}

impl BurstTerm {
    pub fn new(z: f64, alpha: f64, tau: f64) -> Result<Self> {
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(Error::InvalidParameter(format!("burst amplitude {alpha} must be > 0")));
        }
        if !(tau.is_finite() && tau > 0.0) {
            return Err(Error::InvalidParameter(format!("burst relaxation {tau} must be > 0")));
        }
        if !z.is_finite() {
            return Err(Error::InvalidParameter(format!("burst onset {z}")));
        }
        Ok(BurstTerm { z, alpha, tau })
    }

    /// Burst with the given fertility `f = α·τ`.
    pub fn from_fertility(z: f64, fertility: f64, tau: f64) -> Result<Self> {
        Self::new(z, fertility / tau, tau)
    }

    /// Checks `0 ≤ z ≤ horizon`.
    pub fn check_within(&self, horizon: f64) -> Result<()> {
        if !(0.0..=horizon).contains(&self.z) {
            return Err(Error::InvalidParameter(format!(
                "burst onset {} outside [0, {horizon}]",
                self.z
            )));
        }
        Ok(())
    }

    /// Expected number of immigrants triggered directly by the burst.
    pub fn fertility(&self) -> f64 {
        self.alpha * self.tau
    }

    /// Intensity contribution at `t`; zero up to and including the onset.
    pub fn eval(&self, t: f64) -> f64 {
        if t > self.z {
            self.alpha * (-(t - self.z) / self.tau).exp()
        } else {
            0.0
        }
    }

    /// `∫_z^{horizon} φ_S`, the expected number of direct immigrants before `horizon`.
    pub fn cumulative_to(&self, horizon: f64) -> f64 {
        if horizon <= self.z {
            return 0.0;
        }
        -self.alpha * self.tau * (-(horizon - self.z) / self.tau).exp_m1()
    }
}

/// Expected total size of a burst-triggered cluster, `f / (1 - n)`.
pub fn expected_cluster_size(fertility: f64, n: f64) -> Result<f64> {
    if !(n.is_finite() && n >= 0.0) {
        return Err(Error::InvalidParameter(format!("branching ratio {n}")));
    }
    if n >= 1.0 {
        return Err(Error::Critical(n));
    }
    if !(fertility.is_finite() && fertility >= 0.0) {
        return Err(Error::InvalidParameter(format!("fertility {fertility} must be >= 0")));
    }
    Ok(fertility / (1.0 - n))
}

/// A fitted model with its information criteria.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFit {
    pub mu: f64,
    pub kernel: KernelSpec,
    pub bursts: Vec<BurstTerm>,
    pub log_lik: f64,
    pub aic: f64,
    pub bic: f64,
    pub n_params: usize,
    pub n_events: usize,
}

impl ModelFit {
    /// Builds a fit; `n_base_params` counts μ plus the free kernel parameters.
    pub fn new(
        mu: f64,
        kernel: KernelSpec,
        bursts: Vec<BurstTerm>,
        log_lik: f64,
        n_base_params: usize,
        n_events: usize,
    ) -> Self {
        let n_params = n_base_params + 3 * bursts.len();
        let k = n_params as f64;
        ModelFit {
            mu,
            kernel,
            bursts,
            log_lik,
            aic: 2.0 * k - 2.0 * log_lik,
            bic: k * (n_events as f64).ln() - 2.0 * log_lik,
            n_params,
            n_events,
        }
    }

    pub fn branching_ratio(&self) -> f64 {
        self.kernel.branching_ratio()
    }
}
