mod common;

use ibdetect::preid::{delta_series, one_sided_rates, rank_candidates, PreIdConfig};
use ibdetect::simulate::{simulate, SimScenario};
use ibdetect::{BurstTerm, EventSeries, KernelSpec};

use common::{mean_sd, rng, uniform_series};

fn direct_rates(times: &[f64], kappa: f64) -> (Vec<f64>, Vec<f64>) {
    let left = times
        .iter()
        .map(|&t| times.iter().filter(|&&s| s < t).map(|&s| (-(t - s) / kappa).exp()).sum::<f64>() / kappa)
        .collect();
    let right = times
        .iter()
        .map(|&t| times.iter().filter(|&&s| s > t).map(|&s| (-(s - t) / kappa).exp()).sum::<f64>() / kappa)
        .collect();
    (left, right)
}

#[test]
fn recursions_match_direct_sums() {
    let mut r = rng(1);
    for &(n, kappa) in &[(1, 10.0), (2, 1.0), (100, 5.0), (500, 100.0), (500, 0.3)] {
        let s = uniform_series(&mut r, n, 1000.0);
        let (l, rr) = one_sided_rates(s.times(), kappa);
        let (dl, dr) = direct_rates(s.times(), kappa);
        for i in 0..s.len() {
            assert!((l[i] - dl[i]).abs() <= 1e-9, "u_L[{i}]");
            assert!((rr[i] - dr[i]).abs() <= 1e-9, "u_R[{i}]");
        }
    }
}

#[test]
fn poisson_delta_is_centered() {
    let s = SimScenario {
        mu: 2.0,
        kernel: KernelSpec::single_exp(0.0, 1.0).unwrap(),
        bursts: vec![],
        horizon: 20_000.0,
        seed: 4,
        target_size: None,
    };
    let series = simulate(&s).unwrap();
    let kappa = 10.0;
    let delta = delta_series(&series, kappa);
    // interior events, thinned so the sampled values are nearly independent
    let picked: Vec<f64> = series
        .times()
        .iter()
        .zip(&delta)
        .filter(|(&t, _)| t > 10.0 * kappa && t < s.horizon - 10.0 * kappa)
        .step_by(100)
        .map(|(_, &d)| d)
        .collect();
    let (mean, sd) = mean_sd(&picked);
    assert!(mean.abs() < 3.0 * sd / (picked.len() as f64).sqrt(), "{mean}");
}

#[test]
fn strong_burst_is_the_top_candidate() {
    let kernel = KernelSpec::approx_power_law(0.5, 0.1, 2.0).unwrap();
    let cfg = PreIdConfig::default();
    let mut hits = 0;
    let reps = 100;
    for seed in 0..reps {
        let s = SimScenario {
            mu: 0.0,
            kernel,
            bursts: vec![BurstTerm::new(1800.0, 1.5, 700.0).unwrap()],
            horizon: 3600.0,
            seed,
            target_size: Some(5000.0),
        };
        let c = rank_candidates(&simulate(&s).unwrap(), &cfg).unwrap();
        if (c[0].z_bar - 1800.0).abs() <= cfg.w / 2.0 {
            hits += 1;
        }
    }
    assert!(hits as f64 >= 0.95 * reps as f64, "{hits}/{reps}");
}

#[test]
fn two_separated_bursts_give_the_first_two_candidates() {
    let kernel = KernelSpec::approx_power_law(0.7, 0.1, 2.0).unwrap();
    let cfg = PreIdConfig::default();
    let reps = 40;
    let mut hits = 0;
    for seed in 0..reps {
        let s = SimScenario {
            mu: 0.0,
            kernel,
            bursts: vec![
                BurstTerm::from_fertility(1100.0, 1400.0, 700.0).unwrap(),
                BurstTerm::from_fertility(2500.0, 1400.0, 700.0).unwrap(),
            ],
            horizon: 3600.0,
            seed,
            target_size: Some(10_000.0),
        };
        let c = rank_candidates(&simulate(&s).unwrap(), &cfg).unwrap();
        let found = |z: f64| c[..2].iter().any(|w| (w.z_bar - z).abs() <= cfg.w / 2.0);
        if found(1100.0) && found(2500.0) {
            hits += 1;
        }
    }
    assert!(hits * 4 >= reps * 3, "{hits}/{reps}");
}

#[test]
fn candidates_respect_the_exclusion_radius() {
    let mut r = rng(2);
    let s = uniform_series(&mut r, 2000, 3600.0);
    let cfg = PreIdConfig { max_candidates: 50, ..PreIdConfig::default() };
    let c = rank_candidates(&s, &cfg).unwrap();
    assert!(c.len() > 1);
    for i in 0..c.len() {
        for j in 0..i {
            assert!((c[i].z_bar - c[j].z_bar).abs() > cfg.w);
        }
        assert!(c[i].lo <= c[i].z_bar && c[i].z_bar <= c[i].hi);
        assert!(c[i].lo >= 0.0 && c[i].hi <= s.horizon());
    }
    let delta = delta_series(&s, cfg.kappa);
    let global = delta.iter().cloned().fold(f64::MIN, f64::max);
    assert_eq!(c[0].score, global);
    assert!(c.windows(2).all(|w| w[0].score >= w[1].score));
}

#[test]
fn single_event_gives_one_candidate() {
    let s = EventSeries::new(vec![5.0], 10.0).unwrap();
    let c = rank_candidates(&s, &PreIdConfig::default()).unwrap();
    assert_eq!(c.len(), 1);
    assert_eq!(c[0].z_bar, 5.0);
    assert!(c[0].boundary);
}

#[test]
fn translation_and_scaling() {
    let mut r = rng(3);
    let s = uniform_series(&mut r, 800, 3600.0);
    let cfg = PreIdConfig::default();
    let base = rank_candidates(&s, &cfg).unwrap();

    let shift = 1234.5;
    let shifted: Vec<f64> = s.times().iter().map(|t| t + shift).collect();
    let s2 = EventSeries::new(shifted, 3600.0 + shift).unwrap();
    let moved = rank_candidates(&s2, &cfg).unwrap();
    for (a, b) in base.iter().zip(&moved) {
        assert_eq!(a.index, b.index);
        assert!((b.z_bar - a.z_bar - shift).abs() < 1e-9);
    }

    let c = 3.0;
    let scaled: Vec<f64> = s.times().iter().map(|t| t * c).collect();
    let s3 = EventSeries::new(scaled, 3600.0 * c).unwrap();
    let cfg3 = PreIdConfig { kappa: cfg.kappa * c, w: cfg.w * c, ..cfg };
    let stretched = rank_candidates(&s3, &cfg3).unwrap();
    let idx = |v: &[ibdetect::CandidateWindow]| v.iter().map(|w| w.index).collect::<Vec<_>>();
    assert_eq!(idx(&base), idx(&stretched));
}
