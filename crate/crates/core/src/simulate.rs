//! Exact simulation of a Hawkes process with exogenous intensity bursts.
//!
//! [`simulate`] uses the cluster representation: immigrants arrive from the
//! baseline and from every burst, and each event begets `Poisson(n)` children
//! whose delays are drawn from the normalized kernel. Events past the horizon
//! are discarded together with their (necessarily later) descendants.
//! [`simulate_thinning`] draws from the same law by rejection on the
//! conditional intensity and serves as an independent cross-check.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{ExpMixture, KernelSpec};
use crate::model::{BurstTerm, EventSeries};
use crate::rng::{rng_for, tag};

/// Everything needed to draw one realization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimScenario {
    pub mu: f64,
    pub kernel: KernelSpec,
    pub bursts: Vec<BurstTerm>,
    pub horizon: f64,
    pub seed: u64,
    /// When set, `mu` is ignored and derived from the expected event count.
    pub target_size: Option<f64>,
}

impl SimScenario {
    /// Baseline rate, derived from the target size when one is given.
    pub fn effective_mu(&self) -> Result<f64> {
        match self.target_size {
            Some(target) => adjust_mu(&self.kernel, &self.bursts, self.horizon, target),
            None => Ok(self.mu),
        }
    }

    fn validate(&self) -> Result<f64> {
        self.kernel.validate()?;
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(Error::InvalidParameter(format!("horizon {}", self.horizon)));
        }
        for b in &self.bursts {
            b.check_within(self.horizon)?;
        }
        let mu = self.effective_mu()?;
        if !(mu.is_finite() && mu >= 0.0) {
            return Err(Error::InvalidParameter(format!("baseline rate {mu}")));
        }
        Ok(mu)
    }

    /// Expected number of events on `[0, horizon]`.
    pub fn expected_size(&self) -> Result<f64> {
        let mu = self.effective_mu()?;
        Ok(expected_size(mu, &self.kernel, &self.bursts, self.horizon))
    }
}

/// `[μT + Σ f_j (1 - exp(-(T - z_j)/τ_j))] / (1 - n)`.
pub fn expected_size(mu: f64, kernel: &KernelSpec, bursts: &[BurstTerm], horizon: f64) -> f64 {
    let burst_part: f64 = bursts.iter().map(|b| b.cumulative_to(horizon)).sum();
    (mu * horizon + burst_part) / (1.0 - kernel.branching_ratio())
}

/// Baseline rate giving an expected sample size of `target`.
pub fn adjust_mu(
    kernel: &KernelSpec,
    bursts: &[BurstTerm],
    horizon: f64,
    target: f64,
) -> Result<f64> {
    let n = kernel.branching_ratio();
    if n >= 1.0 {
        return Err(Error::Critical(n));
    }
    let burst_part: f64 = bursts.iter().map(|b| b.cumulative_to(horizon)).sum();
    let mu = (target * (1.0 - n) - burst_part) / horizon;
    if !(mu.is_finite() && mu > 0.0) {
        return Err(Error::InfeasibleTarget(format!(
            "target {target} leaves baseline rate {mu} (burst contribution {:.1})",
            burst_part / (1.0 - n)
        )));
    }
    Ok(mu)
}

/// Simulated events with their branching structure.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledEvents {
    /// Event times in generation order (not sorted).
    pub times: Vec<f64>,
    /// Index of the cluster (immigrant) each event belongs to.
    pub cluster: Vec<usize>,
    /// Generation within the cluster; immigrants are generation 0.
    pub generation: Vec<u32>,
    /// Whether the cluster's immigrant came from a burst rather than the baseline.
    pub burst_immigrant: Vec<bool>,
}

impl LabeledEvents {
    pub fn into_series(self, horizon: f64) -> Result<EventSeries> {
        let mut times = self.times;
        times.sort_by(f64::total_cmp);
        times.dedup();
        EventSeries::new(times, horizon)
    }

    /// Number of events in each cluster.
    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.burst_immigrant.len()];
        for &c in &self.cluster {
            sizes[c] += 1;
        }
        sizes
    }
}

/// Rejection sampler for delays distributed as the normalized kernel.
struct DelaySampler {
    mixture: ExpMixture,
    /// Cumulative selection probabilities of the positive components.
    cumulative: Vec<f64>,
    positive: Vec<usize>,
    needs_rejection: bool,
}

impl DelaySampler {
    fn new(kernel: &KernelSpec) -> Self {
        let mixture = kernel.mixture();
        let positive: Vec<usize> = (0..mixture.len())
            .filter(|&j| mixture.weights[j] > 0.0)
            .collect();
        let masses: Vec<f64> = positive
            .iter()
            .map(|&j| mixture.weights[j] / mixture.rates[j])
            .collect();
        let total: f64 = masses.iter().sum();
        let mut acc = 0.0;
        let cumulative = masses
            .iter()
            .map(|m| {
                acc += m / total;
                acc
            })
            .collect();
        let needs_rejection = positive.len() < mixture.len();
        DelaySampler {
            mixture,
            cumulative,
            positive,
            needs_rejection,
        }
    }

    fn envelope(&self, t: f64) -> f64 {
        self.positive
            .iter()
            .map(|&j| self.mixture.weights[j] * (-self.mixture.rates[j] * t).exp())
            .sum()
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        loop {
            let u: f64 = rng.random();
            let pick = self
                .cumulative
                .partition_point(|&c| c < u)
                .min(self.positive.len() - 1);
            let rate = self.mixture.rates[self.positive[pick]];
            let e: f64 = Exp1.sample(rng);
            let t = e / rate;
            if !self.needs_rejection {
                return t;
            }
            let accept = self.mixture.eval(t) / self.envelope(t);
            if rng.random::<f64>() < accept {
                return t;
            }
        }
    }
}

fn poisson(rng: &mut ChaCha8Rng, mean: f64) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean)
        .map(|d| d.sample(rng) as u64)
        .unwrap_or(0)
}

/// Cluster-representation draw keeping the branching labels.
pub fn simulate_labeled(s: &SimScenario) -> Result<LabeledEvents> {
    let mu = s.validate()?;
    let horizon = s.horizon;
    let n = s.kernel.branching_ratio();
    let mut rng = rng_for(s.seed, &[tag::SIMULATE]);

    let mut out = LabeledEvents {
        times: Vec::new(),
        cluster: Vec::new(),
        generation: Vec::new(),
        burst_immigrant: Vec::new(),
    };
    let push_immigrant = |out: &mut LabeledEvents, t: f64, from_burst: bool| {
        let c = out.burst_immigrant.len();
        out.burst_immigrant.push(from_burst);
        out.times.push(t);
        out.cluster.push(c);
        out.generation.push(0);
    };

    for _ in 0..poisson(&mut rng, mu * horizon) {
        let t = rng.random::<f64>() * horizon;
        push_immigrant(&mut out, t, false);
    }
    for b in &s.bursts {
        // Immigrant times follow the truncated exponential density on (z, T].
        let span = -(-(horizon - b.z) / b.tau).exp_m1();
        for _ in 0..poisson(&mut rng, b.fertility() * span) {
            let u: f64 = rng.random();
            let t = b.z - b.tau * (-u * span).ln_1p();
            if t > b.z && t <= horizon {
                push_immigrant(&mut out, t, true);
            }
        }
    }

    if n > 0.0 {
        let sampler = DelaySampler::new(&s.kernel);
        let mut next = 0;
        while next < out.times.len() {
            let (parent_t, c, g) = (out.times[next], out.cluster[next], out.generation[next]);
            for _ in 0..poisson(&mut rng, n) {
                let t = parent_t + sampler.sample(&mut rng);
                if t <= horizon {
                    out.times.push(t);
                    out.cluster.push(c);
                    out.generation.push(g + 1);
                }
            }
            next += 1;
        }
    }
    Ok(out)
}

/// Draws one realization on `[0, horizon]`, sorted, reproducible per seed.
pub fn simulate(s: &SimScenario) -> Result<EventSeries> {
    simulate_labeled(s)?.into_series(s.horizon)
}

/// Ogata-style thinning on the conditional intensity.
pub fn simulate_thinning(s: &SimScenario) -> Result<EventSeries> {
    let mu = s.validate()?;
    let horizon = s.horizon;
    let n = s.kernel.branching_ratio();
    let mixture = s.kernel.mixture();
    let mut rng = rng_for(s.seed, &[tag::SIMULATE, 1]);

    let mut onsets: Vec<f64> = s.bursts.iter().map(|b| b.z).collect();
    onsets.sort_by(f64::total_cmp);

    // decay[j] = Σ_i exp(-r_j (t - t_i)) over accepted events.
    let mut decay = vec![0.0; mixture.len()];
    let mut times = Vec::new();
    let mut now = 0.0;

    let endogenous = |decay: &[f64], positive_only: bool| -> f64 {
        n * decay
            .iter()
            .zip(&mixture.weights)
            .filter(|(_, w)| !positive_only || **w > 0.0)
            .map(|(a, w)| w * a)
            .sum::<f64>()
    };
    let exogenous = |t: f64, right_limit: bool| -> f64 {
        s.bursts
            .iter()
            .filter(|b| if right_limit { t >= b.z } else { t > b.z })
            .map(|b| b.alpha * (-(t - b.z) / b.tau).exp())
            .sum::<f64>()
    };

    while now < horizon {
        // Nonincreasing upper bound on λ until the next onset.
        let bound = mu + exogenous(now, true) + endogenous(&decay, true);
        let next_onset = onsets
            .iter()
            .copied()
            .find(|&z| z > now)
            .unwrap_or(f64::INFINITY);
        if bound <= 0.0 {
            now = next_onset;
            continue;
        }
        let e: f64 = Exp1.sample(&mut rng);
        let candidate = now + e / bound;
        let stop = next_onset.min(horizon);
        if candidate > stop {
            for (a, r) in decay.iter_mut().zip(&mixture.rates) {
                *a *= (-r * (stop - now)).exp();
            }
            now = stop;
            continue;
        }
        for (a, r) in decay.iter_mut().zip(&mixture.rates) {
            *a *= (-r * (candidate - now)).exp();
        }
        now = candidate;
        let lambda = mu + exogenous(now, false) + endogenous(&decay, false).max(0.0);
        if rng.random::<f64>() * bound < lambda {
            times.push(now);
            decay.iter_mut().for_each(|a| *a += 1.0);
        }
    }
    times.dedup();
    EventSeries::new(times, horizon)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn poisson_scenario(seed: u64) -> SimScenario {
        SimScenario {
            mu: 1.0,
            kernel: KernelSpec::single_exp(0.0, 1.0).unwrap(),
            bursts: vec![],
            horizon: 3600.0,
            seed,
            target_size: None,
        }
    }

    #[test]
    fn adjust_mu_closed_forms() {
        let k = KernelSpec::approx_power_law(0.5, 0.1, 2.0).unwrap();
        assert_relative_eq!(
            adjust_mu(&k, &[], 3600.0, 5000.0).unwrap(),
            5000.0 * 0.5 / 3600.0,
            max_relative = 1e-14
        );
        let k = KernelSpec::approx_power_law(0.3, 0.1, 2.0).unwrap();
        let b = BurstTerm::from_fertility(1800.0, 500.0, 350.0).unwrap();
        let expected = (10000.0 * 0.7 - 500.0 * (1.0 - (-1800.0_f64 / 350.0).exp())) / 3600.0;
        assert_relative_eq!(
            adjust_mu(&k, &[b], 3600.0, 10000.0).unwrap(),
            expected,
            max_relative = 1e-12
        );
        assert!(matches!(
            adjust_mu(&k, &[b], 3600.0, 500.0),
            Err(Error::InfeasibleTarget(_))
        ));
    }

    #[test]
    fn critical_kernel_is_rejected() {
        let mut s = poisson_scenario(1);
        s.kernel = KernelSpec::SingleExp { n: 1.0, b: 1.0 };
        assert!(matches!(simulate(&s), Err(Error::Critical(_))));
        assert!(matches!(simulate_thinning(&s), Err(Error::Critical(_))));
    }

    #[test]
    fn same_seed_same_series() {
        let mut s = poisson_scenario(42);
        s.kernel = KernelSpec::approx_power_law(0.5, 0.1, 2.0).unwrap();
        s.bursts = vec![BurstTerm::new(1800.0, 1.0, 350.0).unwrap()];
        let a = simulate(&s).unwrap();
        let b = simulate(&s).unwrap();
        assert_eq!(a, b);
        let a = simulate_thinning(&s).unwrap();
        let b = simulate_thinning(&s).unwrap();
        assert_eq!(a, b);
        s.seed = 43;
        assert_ne!(simulate(&s).unwrap(), a);
    }

    #[test]
    fn output_is_sorted_and_inside_window() {
        let mut s = poisson_scenario(5);
        s.kernel = KernelSpec::approx_power_law(0.7, 0.1, 2.0).unwrap();
        s.bursts = vec![BurstTerm::new(100.0, 2.0, 50.0).unwrap()];
        s.horizon = 600.0;
        let series = simulate(&s).unwrap();
        assert!(series.times().windows(2).all(|w| w[0] < w[1]));
        assert!(series.times().iter().all(|&t| (0.0..=600.0).contains(&t)));
    }

    #[test]
    fn delay_sampler_matches_kernel_mean() {
        // Mean delay of the normalized single exponential is 1/b.
        let k = KernelSpec::single_exp(0.5, 0.25).unwrap();
        let sampler = DelaySampler::new(&k);
        let mut rng = rng_for(9, &[]);
        let m: f64 = (0..20000).map(|_| sampler.sample(&mut rng)).sum::<f64>() / 20000.0;
        assert!((m - 4.0).abs() < 4.0 * 4.0 / (20000f64).sqrt());
    }
}
