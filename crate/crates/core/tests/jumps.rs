mod common;

use ibdetect::jumps::{
    bipower_vol, burst_anchored_returns, is_jump, match_events, realized_vol, scan_jumps, JumpConfig,
    PricePath, PriceSeries, VolEstimator,
};
use ibdetect::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use common::mean_sd;

#[test]
fn bipower_recovers_scaled_volatility() {
    let s = 0.002;
    let k = 120;
    let normal = Normal::new(0.0, s).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let squares: Vec<f64> = (0..10_000)
        .map(|_| {
            let r: Vec<f64> = (0..=k).map(|_| normal.sample(&mut rng)).collect();
            bipower_vol(&r, k, k).unwrap().powi(2)
        })
        .collect();
    // σ² is unbiased for (2/π)s²; σ itself carries a Jensen bias of a few SE at this sample size
    let (mean, sd) = mean_sd(&squares);
    let se = sd / (squares.len() as f64).sqrt();
    let target = 2.0 / std::f64::consts::PI * s * s;
    assert!((mean - target).abs() < 3.0 * se, "{mean} vs {target} (se {se})");
}

#[test]
fn realized_variance_recovers_volatility() {
    let s = 0.001;
    let k = 60;
    let normal = Normal::new(0.0, s).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let sq: Vec<f64> = (0..5_000)
        .map(|_| {
            let r: Vec<f64> = (0..=k).map(|_| normal.sample(&mut rng)).collect();
            realized_vol(&r, k, k).unwrap().powi(2)
        })
        .collect();
    let (mean, sd) = mean_sd(&sq);
    assert!((mean - s * s).abs() < 3.0 * sd / (sq.len() as f64).sqrt());
}

#[test]
fn threshold_is_strict() {
    assert!(!is_jump(0.04, 0.01, 4.0).unwrap());
    assert!(is_jump(0.0401, 0.01, 4.0).unwrap());
    assert!(is_jump(-0.0401, 0.01, 4.0).unwrap());
    assert!(!is_jump(-0.04, 0.01, 4.0).unwrap());
    assert!(matches!(is_jump(0.1, 0.0, 4.0), Err(Error::UndefinedVolatility)));
}

#[test]
fn constructed_bipower_case() {
    // returns alternate ±a, so every product is a² and σ = a
    let a = 0.001;
    let k = 10;
    let mut r: Vec<f64> = (0..=k).map(|j| if j % 2 == 0 { a } else { -a }).collect();
    r[k] = 4.0 * a;
    let sigma = bipower_vol(&r, k, k).unwrap();
    assert!((sigma - a).abs() < 1e-15);
    assert!(!is_jump(r[k], sigma, 4.0).unwrap());
    assert!(is_jump(4.0 * a * (1.0 + 1e-9), sigma, 4.0).unwrap());
    // the return being tested never enters its own volatility
    r[k] = 1.0;
    assert!((bipower_vol(&r, k, k).unwrap() - a).abs() < 1e-15);
    assert!(bipower_vol(&r, k - 1, k).is_err());
    // an outlier inside the window touches two products only
    r[k - 3] = 100.0 * a;
    let robust = bipower_vol(&r, k, k).unwrap();
    let rv = realized_vol(&r, k, k).unwrap();
    assert!(robust < 0.2 * rv);
    let flipped: Vec<f64> = r.iter().map(|x| -x).collect();
    assert_eq!(bipower_vol(&flipped, k, k).unwrap(), robust);
}

#[test]
fn scan_flags_a_planted_jump() {
    let normal = Normal::new(0.0, 1e-4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut log_p = 0.0_f64;
    let mut prices = vec![1.0];
    for j in 0..400 {
        log_p += normal.sample(&mut rng);
        if j == 300 {
            log_p += 0.01;
        }
        prices.push(log_p.exp());
    }
    let series = PriceSeries::new(0.0, 60.0, prices).unwrap();
    let cfg = JumpConfig::default();
    let flags = scan_jumps(&series, &cfg).unwrap();
    let jumps: Vec<f64> = flags.iter().filter(|f| f.jump).map(|f| f.time).collect();
    assert!(jumps.contains(&(301.0 * 60.0)), "{jumps:?}");
    assert!(jumps.len() <= 2);
    assert_eq!(flags.first().unwrap().time, (cfg.k + 1) as f64 * 60.0);
}

#[test]
fn anchored_intervals_and_scaling() {
    let times: Vec<f64> = (0..=4000).map(|i| i as f64).collect();
    let prices: Vec<f64> = times.iter().map(|&t| if t >= 1000.0 { 1.01 } else { 1.0 }).collect();
    let path = PricePath::new(times, prices, 4000.0).unwrap();
    let a = burst_anchored_returns(&path, 1000.0, 600.0, 0.001);
    assert_eq!((a.one_minute.lo, a.one_minute.hi), (990.0, 1050.0));
    assert_eq!((a.five_minutes.lo, a.five_minutes.hi), (950.0, 1250.0));
    assert_eq!((a.relaxation.lo, a.relaxation.hi), (900.0, 1500.0));
    assert!((a.five_minutes.sigma - 5f64.sqrt() * 0.001).abs() < 1e-15);
    assert!((a.relaxation.sigma - 10f64.sqrt() * 0.001).abs() < 1e-15);
    assert!((a.one_minute.r.unwrap() - 1.01f64.ln()).abs() < 1e-12);
    assert_eq!(a.one_minute.is_jump(4.0).unwrap(), Some(true));
    assert!(a.complete());

    let late = burst_anchored_returns(&path, 3900.0, 600.0, 0.001);
    assert!(late.relaxation.r.is_none());
    assert!(!late.complete());
}

#[test]
fn matching_fractions() {
    let a = [100.0, 500.0, 900.0, 1300.0];
    let b = [130.0, 160.0, 1290.0, 3000.0];
    let m = match_events(&a, &b, 60.0);
    assert_eq!(m.pairs.len(), 2);
    assert_eq!(m.fraction_a, 0.5);
    assert_eq!(m.fraction_b, 0.5);
    let lags: Vec<f64> = m.pairs.iter().map(|p| p.lag).collect();
    assert!(lags.contains(&30.0) && lags.contains(&-10.0));
    let empty = match_events(&[], &b, 60.0);
    assert!(empty.pairs.is_empty());
}

#[test]
fn config_validation() {
    let bad = JumpConfig { k: 2, ..JumpConfig::default() };
    assert!(bad.validate().is_err());
    let rv = JumpConfig { estimator: VolEstimator::RealizedVariance, ..JumpConfig::default() };
    assert!(rv.validate().is_ok());
}
