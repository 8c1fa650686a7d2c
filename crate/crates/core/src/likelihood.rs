//! Log-likelihood and reduced cost of the Hawkes model with bursts.
//!
//! With `φ = n·h` and bursts `α_k·q_k`, the log-likelihood on `[0, T]` is
//!
//! ```text
//! log L = -μT - n·H1 - Σ_k α_k·K1(k) + Σ_i log(μ + n·H2(t_i) + Σ_k α_k·K2(k; t_i))
//! H1 = Σ_i ∫₀^{T-t_i} h        H2(t_i) = Σ_{j<i} h(t_i - t_j)
//! K1(k) = ∫_{z_k}^T q_k        K2(k; t_i) = q_k(t_i)
//! ```
//!
//! At any stationary point `μT + n·H1 + Σ α_k·K1(k) = N`, so μ can be
//! concentrated out. The reduced cost
//!
//! ```text
//! G = -Σ_i log[N/T + n·(H2(t_i) - H1/T) + Σ_k α_k·(K2(k; t_i) - K1(k)/T)]
//! ```
//!
//! satisfies `log L(μ̂) = -N - G` with `μ̂ = (N - n·H1 - Σ α_k·K1(k)) / T`.

use crate::error::{Error, Result};
use crate::kernel::{ExpMixture, KernelSpec};
use crate::model::{BurstTerm, EventSeries};

/// Kernel compensators of a series for a unit-mass kernel shape.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelCompensators {
    /// `H1 = Σ_i h̃(T - t_i)`.
    pub h1: f64,
    /// `H2(t_i) = Σ_{j<i} h(t_i - t_j)`.
    pub h2: Vec<f64>,
}

/// Burst compensators `K1` and `K2(t_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BurstCompensators {
    pub k1: f64,
    pub k2: Vec<f64>,
}

/// Evaluates `H1` and `H2` in O(N · terms) with the exponential recursions
/// `R_i = exp(-r Δ_i)(1 + R_{i-1})` and `Σ_i exp(-r(T - t_i)) = exp(-r(T - t_N))(1 + R_N)`.
pub fn kernel_compensators(times: &[f64], horizon: f64, mixture: &ExpMixture) -> KernelCompensators {
    let n = times.len();
    let mut h2 = vec![0.0; n];
    let mut h1 = 0.0;
    for (&w, &r) in mixture.weights.iter().zip(&mixture.rates) {
        let mut acc = 0.0;
        for i in 1..n {
            acc = (-r * (times[i] - times[i - 1])).exp() * (1.0 + acc);
            h2[i] += w * acc;
        }
        if n > 0 {
            let tail = (-r * (horizon - times[n - 1])).exp() * (1.0 + acc);
            h1 += (w / r) * (n as f64 - tail);
        }
    }
    KernelCompensators { h1, h2 }
}

/// `K1 = ∫_z^T q` and `K2(t_i) = q(t_i)` for the unit-amplitude burst shape.
pub fn burst_compensators(times: &[f64], horizon: f64, z: f64, tau: f64) -> BurstCompensators {
    let mut k2 = vec![0.0; times.len()];
    let start = times.partition_point(|&t| t <= z);
    for (slot, &t) in k2[start..].iter_mut().zip(&times[start..]) {
        *slot = (-(t - z) / tau).exp();
    }
    let k1 = if horizon > z {
        -tau * (-(horizon - z) / tau).exp_m1()
    } else {
        0.0
    };
    BurstCompensators { k1, k2 }
}

/// Full log-likelihood of the model on the series window.
///
/// Returns [`Error::InvalidParameter`] when the intensity is not positive at
/// some event.
pub fn log_likelihood(
    series: &EventSeries,
    mu: f64,
    kernel: &KernelSpec,
    bursts: &[BurstTerm],
) -> Result<f64> {
    let times = series.times();
    let horizon = series.horizon();
    let n = kernel.branching_ratio();
    let mut intensity = vec![mu; times.len()];
    let mut compensator = mu * horizon;
    if n != 0.0 {
        let kc = kernel_compensators(times, horizon, &kernel.mixture());
        compensator += n * kc.h1;
        for (l, h) in intensity.iter_mut().zip(&kc.h2) {
            *l += n * h;
        }
    }
    for b in bursts {
        let bc = burst_compensators(times, horizon, b.z, b.tau);
        compensator += b.alpha * bc.k1;
        for (l, q) in intensity.iter_mut().zip(&bc.k2) {
            *l += b.alpha * q;
        }
    }
    let mut sum_log = 0.0;
    for (i, &l) in intensity.iter().enumerate() {
        if !(l > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "intensity {l} at event {i} (t = {})",
                times[i]
            )));
        }
        sum_log += l.ln();
    }
    Ok(sum_log - compensator)
}

/// Baseline implied by the stationarity identity, `(N - n·H1 - Σ α_k·K1(k)) / T`.
pub fn implied_mu(series: &EventSeries, kernel: &KernelSpec, bursts: &[BurstTerm]) -> f64 {
    let times = series.times();
    let horizon = series.horizon();
    let n = kernel.branching_ratio();
    let mut excess = 0.0;
    if n != 0.0 {
        excess += n * kernel_compensators(times, horizon, &kernel.mixture()).h1;
    }
    for b in bursts {
        excess += b.cumulative_to(horizon);
    }
    (times.len() as f64 - excess) / horizon
}

/// Reduced cost `G`; `+∞` when the bracket is not positive at every event.
pub fn reduced_cost(series: &EventSeries, kernel: &KernelSpec, bursts: &[BurstTerm]) -> f64 {
    let times = series.times();
    let horizon = series.horizon();
    let count = times.len() as f64;
    let n = kernel.branching_ratio();
    let mut bracket = vec![count / horizon; times.len()];
    if n != 0.0 {
        let kc = kernel_compensators(times, horizon, &kernel.mixture());
        let shift = kc.h1 / horizon;
        for (b, h) in bracket.iter_mut().zip(&kc.h2) {
            *b += n * (h - shift);
        }
    }
    for burst in bursts {
        let bc = burst_compensators(times, horizon, burst.z, burst.tau);
        let shift = bc.k1 / horizon;
        for (b, q) in bracket.iter_mut().zip(&bc.k2) {
            *b += burst.alpha * (q - shift);
        }
    }
    neg_sum_log(&bracket)
}

pub(crate) fn neg_sum_log(bracket: &[f64]) -> f64 {
    let mut g = 0.0;
    for &b in bracket {
        if !(b > 0.0) {
            return f64::INFINITY;
        }
        g -= b.ln();
    }
    g
}
