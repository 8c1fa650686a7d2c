#![allow(dead_code)]

use ibdetect::{BurstTerm, EventSeries, KernelSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// φ(t) written out term by term from the kernel parameters.
pub fn phi(spec: &KernelSpec, t: f64) -> f64 {
    match *spec {
        KernelSpec::ApproxPowerLaw { n, tau0, p, m, k } => {
            let mut s = 0.0;
            let mut a1 = 0.0;
            let mut sum = 0.0;
            for j in 0..k {
                let scale = tau0 * m.powi(j as i32);
                s += scale.powf(-p);
                a1 += scale.powf(1.0 - p);
                sum += scale.powf(-p) * (-t / scale).exp();
            }
            let z = a1 - s * tau0 / m;
            n / z * (sum - s * (-t * m / tau0).exp())
        }
        KernelSpec::SingleExp { n, b } => n * b * (-b * t).exp(),
        KernelSpec::DoubleExp { n, a, b_a, b_b } => {
            n * (a * b_a * (-b_a * t).exp() + (1.0 - a) * b_b * (-b_b * t).exp())
        }
    }
}

pub fn intensity(t: f64, mu: f64, spec: &KernelSpec, bursts: &[BurstTerm], times: &[f64]) -> f64 {
    let mut l = mu;
    for &tj in times.iter().take_while(|&&tj| tj < t) {
        l += phi(spec, t - tj);
    }
    for b in bursts {
        if t > b.z {
            l += b.alpha * (-(t - b.z) / b.tau).exp();
        }
    }
    l
}

fn simpson(f: &dyn Fn(f64) -> f64, a: f64, fa: f64, b: f64, fb: f64, m: f64, fm: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson(f, a, fa, m, fm, lm, flm, left, 0.5 * tol, depth - 1)
        + simpson(f, m, fm, b, fb, rm, frm, right, 0.5 * tol, depth - 1)
}

/// Adaptive Simpson quadrature.
pub fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let m = 0.5 * (a + b);
    let (fa, fb, fm) = (f(a), f(b), f(m));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson(f, a, fa, b, fb, m, fm, whole, tol, 50)
}

/// Log-likelihood from a direct double sum and quadrature of the intensity,
/// split at every event and burst onset so the integrand is smooth.
pub fn oracle_log_likelihood(series: &EventSeries, mu: f64, spec: &KernelSpec, bursts: &[BurstTerm]) -> f64 {
    let times = series.times();
    let sum_log: f64 = times
        .iter()
        .map(|&t| intensity(t, mu, spec, bursts, times).ln())
        .sum();
    let mut cuts: Vec<f64> = times.to_vec();
    cuts.extend(bursts.iter().map(|b| b.z));
    cuts.push(0.0);
    cuts.push(series.horizon());
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let lam = |t: f64| intensity(t, mu, spec, bursts, times);
    let mut compensator = 0.0;
    for w in cuts.windows(2) {
        // subdivide geometrically so fast kernel terms are resolved near the left end
        let (a, b) = (w[0], w[1]);
        let mut lo = a;
        let mut step = 1e-3_f64.min(b - a);
        while lo < b {
            let hi = (lo + step).min(b);
            compensator += integrate(&lam, lo, hi, 1e-13);
            lo = hi;
            step *= 4.0;
        }
    }
    sum_log - compensator
}

pub fn uniform_series(rng: &mut ChaCha8Rng, n: usize, horizon: f64) -> EventSeries {
    let mut times: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * horizon).collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    EventSeries::new(times, horizon).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn mean_sd(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Two-sample Kolmogorov–Smirnov statistic.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (mut i, mut j, mut d) = (0, 0, 0.0_f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
    }
    d
}

/// One-sample KS statistic against a continuous CDF.
pub fn ks_one_sample(x: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut x = x.to_vec();
    x.sort_by(f64::total_cmp);
    let n = x.len() as f64;
    x.iter()
        .enumerate()
        .map(|(i, &v)| {
            let f = cdf(v);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}
