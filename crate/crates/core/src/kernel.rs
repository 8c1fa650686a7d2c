//! Endogenous memory kernels.
//!
//! Every supported kernel is a weighted sum of exponentials,
//!
//! ```text
//! φ(t) = n · h(t),   h(t) = Σ_j w_j · exp(-r_j t),   ∫₀^∞ h = Σ_j w_j / r_j = 1
//! ```
//!
//! so the likelihood can be evaluated with O(N · terms) recursions. The
//! approximate power law carries `K` positive terms and one negative term that
//! forces `φ(0) = 0`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default log-spacing factor of the power-law approximation.
pub const DEFAULT_M: f64 = 5.0;
/// Default number of positive exponential terms of the power-law approximation.
pub const DEFAULT_K: usize = 15;

/// Shape of the endogenous kernel φ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KernelSpec {
    /// Sum of `k` exponentials with time scales `tau0·m^j` weighted to mimic a
    /// power law with exponent `p`, minus a short-time cutoff at `tau0/m`.
    ApproxPowerLaw {
        n: f64,
        tau0: f64,
        p: f64,
        m: f64,
        k: usize,
    },
    /// `n·b·exp(-b t)`.
    SingleExp { n: f64, b: f64 },
    /// `n·(a·b_a·exp(-b_a t) + (1-a)·b_b·exp(-b_b t))`.
    DoubleExp { n: f64, a: f64, b_a: f64, b_b: f64 },
}

/// Unit-mass exponential mixture `h(t) = Σ w_j exp(-r_j t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpMixture {
    pub weights: Vec<f64>,
    pub rates: Vec<f64>,
}

impl ExpMixture {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.weights
            .iter()
            .zip(&self.rates)
            .map(|(w, r)| w * (-r * t).exp())
            .sum()
    }

    /// `∫₀^t h(s) ds`.
    pub fn cumulative(&self, t: f64) -> f64 {
        self.weights
            .iter()
            .zip(&self.rates)
            .map(|(w, r)| -(w / r) * (-r * t).exp_m1())
            .sum()
    }

    /// `Σ w_j / r_j`; equals one for a normalized kernel.
    pub fn mass(&self) -> f64 {
        self.weights.iter().zip(&self.rates).map(|(w, r)| w / r).sum()
    }
}

impl KernelSpec {
    /// Approximate power law with the default `m = 5`, `K = 15`.
    pub fn approx_power_law(n: f64, tau0: f64, p: f64) -> Result<Self> {
        let spec = KernelSpec::ApproxPowerLaw {
            n,
            tau0,
            p,
            m: DEFAULT_M,
            k: DEFAULT_K,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn single_exp(n: f64, b: f64) -> Result<Self> {
        let spec = KernelSpec::SingleExp { n, b };
        spec.validate()?;
        Ok(spec)
    }

    pub fn double_exp(n: f64, a: f64, b_a: f64, b_b: f64) -> Result<Self> {
        let spec = KernelSpec::DoubleExp { n, a, b_a, b_b };
        spec.validate()?;
        Ok(spec)
    }

    /// Checks the parameter invariants, including normalizability of the
    /// power-law approximation.
    pub fn validate(&self) -> Result<()> {
        let n = self.branching_ratio();
        if !(n.is_finite() && n >= 0.0) {
            return Err(Error::InvalidParameter(format!("branching ratio n = {n}")));
        }
        if n >= 1.0 {
            return Err(Error::Critical(n));
        }
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!("{name} = {v} must be > 0")))
            }
        };
        match *self {
            KernelSpec::ApproxPowerLaw { tau0, p, m, k, .. } => {
                positive("tau0", tau0)?;
                if !(p.is_finite() && p > 1.0) {
                    return Err(Error::InvalidParameter(format!("p = {p} must be > 1")));
                }
                if !(m.is_finite() && m > 1.0) {
                    return Err(Error::InvalidParameter(format!("m = {m} must be > 1")));
                }
                if k < 1 {
                    return Err(Error::InvalidParameter("K must be >= 1".into()));
                }
                self.constants()?;
            }
            KernelSpec::SingleExp { b, .. } => positive("b", b)?,
            KernelSpec::DoubleExp { a, b_a, b_b, .. } => {
                positive("b_a", b_a)?;
                positive("b_b", b_b)?;
                if !(0.0..=1.0).contains(&a) {
                    return Err(Error::InvalidParameter(format!("a = {a} must be in [0, 1]")));
                }
            }
        }
        Ok(())
    }

    pub fn branching_ratio(&self) -> f64 {
        match *self {
            KernelSpec::ApproxPowerLaw { n, .. }
            | KernelSpec::SingleExp { n, .. }
            | KernelSpec::DoubleExp { n, .. } => n,
        }
    }

    /// Same shape with a different branching ratio.
    pub fn with_branching_ratio(&self, n_new: f64) -> Self {
        let mut out = *self;
        match &mut out {
            KernelSpec::ApproxPowerLaw { n, .. }
            | KernelSpec::SingleExp { n, .. }
            | KernelSpec::DoubleExp { n, .. } => *n = n_new,
        }
        out
    }

    /// Normalization constants `(S, Z)` of the power-law approximation.
    ///
    /// `S` cancels the kernel at the origin and `Z` gives it mass `n`.
    pub fn constants(&self) -> Result<(f64, f64)> {
        let KernelSpec::ApproxPowerLaw { tau0, p, m, k, .. } = *self else {
            return Err(Error::InvalidParameter(
                "normalization constants exist only for the power-law kernel".into(),
            ));
        };
        let (mut s, mut a1) = (0.0, 0.0);
        let mut scale = tau0;
        for _ in 0..k {
            s += scale.powf(-p);
            a1 += scale.powf(1.0 - p);
            scale *= m;
        }
        let z = a1 - s * tau0 / m;
        if !(z.is_finite() && z > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "power-law kernel cannot be normalized (Z = {z})"
            )));
        }
        Ok((s, z))
    }

    /// Unit-mass exponential representation of `φ / n`.
    pub fn mixture(&self) -> ExpMixture {
        match *self {
            KernelSpec::ApproxPowerLaw { tau0, p, m, k, .. } => {
                let (s, z) = self
                    .constants()
                    .expect("validated power-law kernel has positive Z");
                let mut weights = Vec::with_capacity(k + 1);
                let mut rates = Vec::with_capacity(k + 1);
                let mut scale = tau0;
                for _ in 0..k {
                    weights.push(scale.powf(-p) / z);
                    rates.push(1.0 / scale);
                    scale *= m;
                }
                weights.push(-s / z);
                rates.push(m / tau0);
                ExpMixture { weights, rates }
            }
            KernelSpec::SingleExp { b, .. } => ExpMixture {
                weights: vec![b],
                rates: vec![b],
            },
            KernelSpec::DoubleExp { a, b_a, b_b, .. } => ExpMixture {
                weights: vec![a * b_a, (1.0 - a) * b_b],
                rates: vec![b_a, b_b],
            },
        }
    }

    /// φ(t) for `t ≥ 0`.
    pub fn eval(&self, t: f64) -> Result<f64> {
        check_time(t)?;
        let n = self.branching_ratio();
        if n == 0.0 {
            return Ok(0.0);
        }
        // The power-law form is nonnegative analytically; clamp rounding noise.
        Ok((n * self.mixture().eval(t)).max(0.0))
    }

    /// Expected number of direct offspring in `[0, t]`, `∫₀^t φ`.
    pub fn cumulative(&self, t: f64) -> Result<f64> {
        check_time(t)?;
        let n = self.branching_ratio();
        if n == 0.0 {
            return Ok(0.0);
        }
        Ok((n * self.mixture().cumulative(t)).max(0.0))
    }

    /// Longest exponential time scale in the kernel.
    pub fn max_timescale(&self) -> f64 {
        self.mixture()
            .rates
            .iter()
            .fold(0.0_f64, |acc, r| acc.max(1.0 / r))
    }
}

fn check_time(t: f64) -> Result<()> {
    if t.is_nan() || t < 0.0 {
        return Err(Error::Domain(format!("kernel evaluated at t = {t} < 0")));
    }
    Ok(())
}
