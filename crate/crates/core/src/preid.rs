//! Pre-identification of burst candidates.
//!
//! `u_L(t) = κ⁻¹ Σ_{t_j<t} e^{-(t-t_j)/κ}` and `u_R(t) = κ⁻¹ Σ_{t_j>t} e^{-(t_j-t)/κ}`
//! are one-sided local rate estimates. Their difference `Δ = u_R - u_L` peaks
//! where activity jumps up. Candidates are ranked maxima of `Δ` over event
//! times, each excluding the events within `w` of it from later selections.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::SearchWindow;
use crate::model::EventSeries;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreIdConfig {
    /// Smoothing scale κ, seconds. Pick it of the order of the expected τ.
    pub kappa: f64,
    /// Exclusion radius and search-window width, seconds.
    pub w: f64,
    pub max_candidates: usize,
}

impl Default for PreIdConfig {
    fn default() -> Self {
        PreIdConfig {
            kappa: 100.0,
            w: 300.0,
            max_candidates: 10,
        }
    }
}

impl PreIdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.kappa > 0.0 && self.kappa.is_finite()) {
            return Err(Error::InvalidParameter(format!("kappa = {}", self.kappa)));
        }
        if !(self.w > 0.0 && self.w.is_finite()) {
            return Err(Error::InvalidParameter(format!("w = {}", self.w)));
        }
        if self.max_candidates == 0 {
            return Err(Error::InvalidParameter("max_candidates must be >= 1".into()));
        }
        Ok(())
    }
}

/// A ranked candidate onset with its search window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CandidateWindow {
    /// Event index of the candidate.
    pub index: usize,
    pub z_bar: f64,
    pub lo: f64,
    pub hi: f64,
    /// `Δ(z̄; κ)`.
    pub score: f64,
    /// Within κ of either end of the observation window.
    pub boundary: bool,
}

impl CandidateWindow {
    pub fn search_window(&self) -> SearchWindow {
        SearchWindow {
            lo: self.lo,
            hi: self.hi,
            guess: self.z_bar,
        }
    }
}

/// One-sided averages `(u_L, u_R)` at every event, by the two-pass recursion.
pub fn one_sided_rates(times: &[f64], kappa: f64) -> (Vec<f64>, Vec<f64>) {
    let n = times.len();
    let mut left = vec![0.0; n];
    let mut right = vec![0.0; n];
    for i in 1..n {
        left[i] = (-(times[i] - times[i - 1]) / kappa).exp() * (1.0 + left[i - 1]);
    }
    for i in (0..n.saturating_sub(1)).rev() {
        right[i] = (-(times[i + 1] - times[i]) / kappa).exp() * (1.0 + right[i + 1]);
    }
    left.iter_mut().for_each(|v| *v /= kappa);
    right.iter_mut().for_each(|v| *v /= kappa);
    (left, right)
}

/// `Δ(t_i; κ)` at every event.
pub fn delta_series(series: &EventSeries, kappa: f64) -> Vec<f64> {
    let (left, right) = one_sided_rates(series.times(), kappa);
    right.iter().zip(&left).map(|(r, l)| r - l).collect()
}

/// Ranked candidate windows.
pub fn rank_candidates(series: &EventSeries, cfg: &PreIdConfig) -> Result<Vec<CandidateWindow>> {
    cfg.validate()?;
    let delta = delta_series(series, cfg.kappa);
    Ok(rank_from_delta(series, &delta, cfg))
}

pub(crate) fn rank_from_delta(series: &EventSeries, delta: &[f64], cfg: &PreIdConfig) -> Vec<CandidateWindow> {
    let times = series.times();
    let horizon = series.horizon();
    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by(|&a, &b| delta[b].total_cmp(&delta[a]).then(a.cmp(&b)));

    let mut out: Vec<CandidateWindow> = Vec::new();
    for i in order {
        if out.len() >= cfg.max_candidates {
            break;
        }
        let t = times[i];
        if out.iter().any(|c| (t - c.z_bar).abs() <= cfg.w) {
            continue;
        }
        let w = SearchWindow::centered(t, cfg.w, horizon);
        out.push(CandidateWindow {
            index: i,
            z_bar: t,
            lo: w.lo,
            hi: w.hi,
            score: delta[i],
            boundary: t < cfg.kappa || horizon - t < cfg.kappa,
        });
    }
    out
}

/// Writes `t,delta` rows, times in absolute units (window offset added).
pub fn write_delta_csv(series: &EventSeries, delta: &[f64], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    let write = |out: &mut std::io::BufWriter<std::fs::File>| -> std::io::Result<()> {
        writeln!(out, "t,delta")?;
        for (t, d) in series.times().iter().zip(delta) {
            writeln!(out, "{},{}", t + series.offset(), d)?;
        }
        out.flush()
    };
    write(&mut out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_event_gives_one_candidate() {
        let s = EventSeries::new(vec![5.0], 10.0).unwrap();
        let c = rank_candidates(&s, &PreIdConfig::default()).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].z_bar, 5.0);
        assert_eq!(c[0].score, 0.0);
        assert!(c[0].boundary);
    }

    #[test]
    fn step_in_rate_is_found() {
        let mut times: Vec<f64> = (0..500).map(|i| i as f64 * 2.0).collect();
        times.extend((0..2000).map(|i| 1000.5 + i as f64 * 0.5));
        let s = EventSeries::new(times, 2000.0).unwrap();
        let c = rank_candidates(&s, &PreIdConfig::default()).unwrap();
        assert!((c[0].z_bar - 1000.5).abs() < 5.0, "{:?}", c[0]);
        for (i, a) in c.iter().enumerate() {
            for b in &c[..i] {
                assert!((a.z_bar - b.z_bar).abs() > 300.0);
            }
        }
    }

    #[test]
    fn invalid_config() {
        let s = EventSeries::new(vec![1.0], 2.0).unwrap();
        for cfg in [
            PreIdConfig { kappa: 0.0, ..Default::default() },
            PreIdConfig { w: -1.0, ..Default::default() },
            PreIdConfig { max_candidates: 0, ..Default::default() },
        ] {
            assert!(rank_candidates(&s, &cfg).is_err());
        }
    }
}
