mod common;

use approx::assert_relative_eq;
use ibdetect::likelihood::{
    burst_compensators, implied_mu, kernel_compensators, log_likelihood, reduced_cost,
};
use ibdetect::{BurstTerm, EventSeries, KernelSpec};
use rand::Rng;

use common::{integrate, oracle_log_likelihood, phi, rng, uniform_series};

fn kernels() -> Vec<KernelSpec> {
    vec![
        KernelSpec::approx_power_law(0.6, 0.1, 2.0).unwrap(),
        KernelSpec::approx_power_law(0.3, 1.0, 1.5).unwrap(),
        KernelSpec::single_exp(0.5, 0.8).unwrap(),
        KernelSpec::double_exp(0.7, 0.6, 2.0, 0.05).unwrap(),
    ]
}

#[test]
fn kernel_matches_closed_form() {
    for spec in kernels() {
        for &t in &[0.0, 1e-3, 0.05, 0.7, 3.0, 40.0, 900.0] {
            assert_relative_eq!(spec.eval(t).unwrap(), phi(&spec, t).max(0.0), max_relative = 1e-10, epsilon = 1e-14);
        }
    }
}

#[test]
fn power_law_kernel_vanishes_at_origin() {
    let spec = KernelSpec::approx_power_law(0.5, 0.1, 2.0).unwrap();
    assert!(spec.eval(0.0).unwrap().abs() < 1e-12);
}

#[test]
fn kernel_cumulative_matches_quadrature() {
    for spec in kernels() {
        let f = |s: f64| phi(&spec, s);
        for &t in &[0.01, 0.5, 10.0, 300.0] {
            let mut q = 0.0;
            let mut lo = 0.0_f64;
            let mut step = 1e-4;
            while lo < t {
                let hi = (lo + step).min(t);
                q += integrate(&f, lo, hi, 1e-14);
                lo = hi;
                step *= 2.0;
            }
            assert_relative_eq!(spec.cumulative(t).unwrap(), q, max_relative = 1e-8, epsilon = 1e-12);
        }
    }
}

#[test]
fn kernel_mass_is_branching_ratio() {
    for spec in kernels() {
        let mix = spec.mixture();
        assert_relative_eq!(mix.mass(), 1.0, max_relative = 1e-12);
        let far = 1e3 * spec.max_timescale();
        assert_relative_eq!(spec.cumulative(far).unwrap(), spec.branching_ratio(), max_relative = 1e-9);
    }
}

#[test]
fn log_likelihood_matches_quadrature_oracle() {
    let mut r = rng(11);
    for case in 0..50 {
        let n_events = r.random_range(2..=50);
        let horizon = r.random_range(20.0..200.0);
        let series = uniform_series(&mut r, n_events, horizon);
        let spec = kernels()[case % 4];
        let mu = r.random_range(0.05..0.5);
        let bursts = if case % 3 == 0 {
            vec![]
        } else {
            vec![BurstTerm::new(r.random_range(0.0..horizon), r.random_range(0.1..2.0), r.random_range(1.0..50.0)).unwrap()]
        };
        let fast = log_likelihood(&series, mu, &spec, &bursts).unwrap();
        let slow = oracle_log_likelihood(&series, mu, &spec, &bursts);
        assert!((fast - slow).abs() < 1e-6, "case {case}: {fast} vs {slow}");
    }
}

#[test]
fn recursions_match_direct_sums() {
    let mut r = rng(5);
    for &n_events in &[1, 2, 17, 500] {
        let series = uniform_series(&mut r, n_events, 1000.0);
        let times = series.times();
        for spec in kernels() {
            let mix = spec.mixture();
            let kc = kernel_compensators(times, 1000.0, &mix);
            let h1: f64 = times.iter().map(|&t| mix.cumulative(1000.0 - t)).sum();
            assert!((kc.h1 - h1).abs() < 1e-9, "H1 {} vs {h1}", kc.h1);
            for (i, &ti) in times.iter().enumerate() {
                let h2: f64 = times[..i].iter().map(|&tj| mix.eval(ti - tj)).sum();
                assert!((kc.h2[i] - h2).abs() < 1e-9);
            }
        }
        for &(z, tau) in &[(0.0, 10.0), (400.0, 150.0), (999.0, 1.0)] {
            let bc = burst_compensators(times, 1000.0, z, tau);
            let k1 = tau * (1.0 - (-(1000.0 - z) / tau).exp());
            assert!((bc.k1 - k1).abs() < 1e-9);
            for (i, &t) in times.iter().enumerate() {
                let k2 = if t > z { (-(t - z) / tau).exp() } else { 0.0 };
                assert!((bc.k2[i] - k2).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn burst_is_off_at_its_onset() {
    let series = EventSeries::new(vec![5.0, 6.0], 10.0).unwrap();
    let bc = burst_compensators(series.times(), 10.0, 5.0, 2.0);
    assert_eq!(bc.k2[0], 0.0);
    assert!(bc.k2[1] > 0.0);
}

#[test]
fn implied_mu_closes_the_compensator() {
    let mut r = rng(8);
    for spec in kernels() {
        let series = uniform_series(&mut r, 300, 500.0);
        let bursts = [BurstTerm::new(120.0, 0.4, 30.0).unwrap()];
        let mu = implied_mu(&series, &spec, &bursts);
        let ll = log_likelihood(&series, mu, &spec, &bursts).unwrap();
        let g = reduced_cost(&series, &spec, &bursts);
        assert_relative_eq!(ll, -(series.len() as f64) - g, max_relative = 1e-12);
    }
}

#[test]
fn nonpositive_intensity_is_an_error() {
    let series = EventSeries::new(vec![1.0, 2.0], 3.0).unwrap();
    let spec = KernelSpec::single_exp(0.0, 1.0).unwrap();
    assert!(log_likelihood(&series, 0.0, &spec, &[]).is_err());
    assert!(reduced_cost(&series, &spec, &[BurstTerm::new(0.0, 50.0, 1.0).unwrap()]).is_infinite());
}
