//! Price jumps and their relation to bursts.
//!
//! Returns are taken on a uniform grid of last-observed midprices. A return is
//! a jump when `|r| / σ > θ`, with σ the realized bipower volatility of the
//! preceding `K` returns.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Irregular price observations, read by last observation carried forward.
#[derive(Debug, Clone, PartialEq)]
pub struct PricePath {
    times: Vec<f64>,
    prices: Vec<f64>,
    end: f64,
}

impl PricePath {
    /// `times` nondecreasing, prices positive; the path is valid up to `end`.
    pub fn new(times: Vec<f64>, prices: Vec<f64>, end: f64) -> Result<Self> {
        if times.len() != prices.len() || times.is_empty() {
            return Err(Error::InvalidSeries(format!(
                "{} times and {} prices",
                times.len(),
                prices.len()
            )));
        }
        if times.windows(2).any(|w| !(w[1] >= w[0])) {
            return Err(Error::InvalidSeries("price times must be nondecreasing".into()));
        }
        if let Some(p) = prices.iter().find(|p| !(**p > 0.0 && p.is_finite())) {
            return Err(Error::InvalidSeries(format!("price {p} is not positive")));
        }
        if end < times[times.len() - 1] {
            return Err(Error::InvalidSeries("path end precedes the last quote".into()));
        }
        Ok(PricePath { times, prices, end })
    }

    pub fn start(&self) -> f64 {
        self.times[0]
    }

    pub fn end(&self) -> f64 {
        self.end
    }

    /// Last price observed at or before `t`; `None` outside the data.
    pub fn at(&self, t: f64) -> Option<f64> {
        if t > self.end {
            return None;
        }
        let k = self.times.partition_point(|&s| s <= t);
        (k > 0).then(|| self.prices[k - 1])
    }

    /// Uniform-grid resampling on `[start, end]` with spacing `dt`.
    pub fn resample(&self, dt: f64, start: f64, end: f64) -> Result<PriceSeries> {
        if !(dt > 0.0) || !(end > start) {
            return Err(Error::InvalidParameter(format!("grid dt = {dt} on [{start}, {end}]")));
        }
        let steps = ((end - start) / dt + 1e-9).floor() as usize;
        let prices = (0..=steps)
            .map(|k| {
                let t = start + k as f64 * dt;
                self.at(t).ok_or_else(|| {
                    Error::InvalidSeries(format!("no price at or before t = {t}"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        PriceSeries::new(start, dt, prices)
    }
}

/// Midprice sampled on a uniform grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceSeries {
    pub start: f64,
    pub dt: f64,
    pub prices: Vec<f64>,
}

impl PriceSeries {
    pub fn new(start: f64, dt: f64, prices: Vec<f64>) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::InvalidParameter(format!("dt = {dt}")));
        }
        if prices.iter().any(|p| !(*p > 0.0)) {
            return Err(Error::InvalidSeries("prices must be positive".into()));
        }
        Ok(PriceSeries { start, dt, prices })
    }

    /// Log-returns; `r[i]` covers `[start + i·dt, start + (i+1)·dt]`.
    pub fn returns(&self) -> Vec<f64> {
        self.prices.windows(2).map(|w| (w[1] / w[0]).ln()).collect()
    }

    /// Index of the return whose interval contains `t`.
    pub fn return_index(&self, t: f64) -> Option<usize> {
        let k = ((t - self.start) / self.dt).floor();
        (k >= 0.0 && (k as usize) + 1 < self.prices.len()).then_some(k as usize)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum VolEstimator {
    #[default]
    Bipower,
    RealizedVariance,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JumpConfig {
    pub theta: f64,
    /// Volatility window length in returns.
    pub k: usize,
    /// Grid spacing, seconds.
    pub dt: f64,
    pub estimator: VolEstimator,
}

impl Default for JumpConfig {
    fn default() -> Self {
        JumpConfig {
            theta: 4.0,
            k: 120,
            dt: 60.0,
            estimator: VolEstimator::Bipower,
        }
    }
}

impl JumpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.theta > 0.0) {
            return Err(Error::InvalidParameter(format!("theta = {}", self.theta)));
        }
        if self.k < 3 {
            return Err(Error::InvalidParameter(format!("K = {} (need >= 3)", self.k)));
        }
        if !(self.dt > 0.0) {
            return Err(Error::InvalidParameter(format!("dt = {}", self.dt)));
        }
        Ok(())
    }
}

fn check_history(returns: &[f64], i: usize, k: usize) -> Result<()> {
    if k < 3 {
        return Err(Error::InvalidParameter(format!("K = {k} (need >= 3)")));
    }
    if i < k || i > returns.len() {
        return Err(Error::NotEnoughData(format!(
            "volatility at return {i} needs K = {k} prior returns ({} available)",
            returns.len()
        )));
    }
    Ok(())
}

/// `σ² = (K-2)⁻¹ Σ_{j=i-K+2}^{i-1} |r_j||r_{j-1}|`.
pub fn bipower_vol(returns: &[f64], i: usize, k: usize) -> Result<f64> {
    check_history(returns, i, k)?;
    let sum: f64 = (i + 2 - k..i)
        .map(|j| returns[j].abs() * returns[j - 1].abs())
        .sum();
    Ok((sum / (k - 2) as f64).sqrt())
}

/// Realized-variance counterpart over `r_{i-K+1} .. r_{i-1}`.
pub fn realized_vol(returns: &[f64], i: usize, k: usize) -> Result<f64> {
    check_history(returns, i, k)?;
    let sum: f64 = returns[i + 1 - k..i].iter().map(|r| r * r).sum();
    Ok((sum / (k - 1) as f64).sqrt())
}

pub fn local_vol(returns: &[f64], i: usize, k: usize, estimator: VolEstimator) -> Result<f64> {
    match estimator {
        VolEstimator::Bipower => bipower_vol(returns, i, k),
        VolEstimator::RealizedVariance => realized_vol(returns, i, k),
    }
}

/// `|r| / σ > θ`.
pub fn is_jump(r: f64, sigma: f64, theta: f64) -> Result<bool> {
    if sigma == 0.0 {
        return Err(Error::UndefinedVolatility);
    }
    if !(sigma > 0.0) {
        return Err(Error::InvalidParameter(format!("sigma = {sigma}")));
    }
    Ok(r.abs() / sigma > theta)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JumpFlag {
    /// Grid time at the end of the return.
    pub time: f64,
    pub r: f64,
    pub sigma: f64,
    pub jump: bool,
}

/// Tests every grid return with enough history; zero-volatility returns are skipped.
pub fn scan_jumps(prices: &PriceSeries, cfg: &JumpConfig) -> Result<Vec<JumpFlag>> {
    cfg.validate()?;
    let returns = prices.returns();
    let mut out = Vec::new();
    for i in cfg.k..returns.len() {
        let sigma = local_vol(&returns, i, cfg.k, cfg.estimator)?;
        match is_jump(returns[i], sigma, cfg.theta) {
            Ok(jump) => out.push(JumpFlag {
                time: prices.start + (i + 1) as f64 * prices.dt,
                r: returns[i],
                sigma,
                jump,
            }),
            Err(Error::UndefinedVolatility) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// Return over one anchored interval with its rescaled volatility.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaledReturn {
    pub lo: f64,
    pub hi: f64,
    /// `None` when the interval is not covered by the data.
    pub r: Option<f64>,
    pub sigma: f64,
}

impl ScaledReturn {
    pub fn is_jump(&self, theta: f64) -> Result<Option<bool>> {
        self.r.map(|r| is_jump(r, self.sigma, theta)).transpose()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnchoredReturns {
    pub one_minute: ScaledReturn,
    pub five_minutes: ScaledReturn,
    pub relaxation: ScaledReturn,
    /// One-minute local volatility before the onset.
    pub sigma_loc: f64,
}

impl AnchoredReturns {
    pub fn complete(&self) -> bool {
        self.one_minute.r.is_some() && self.five_minutes.r.is_some() && self.relaxation.r.is_some()
    }
}

fn interval_return(path: &PricePath, lo: f64, hi: f64) -> Option<f64> {
    if lo < path.start() || hi > path.end() {
        return None;
    }
    Some((path.at(hi)? / path.at(lo)?).ln())
}

/// Returns around a burst onset `z` with relaxation `tau` (seconds) over
/// `[z-10, z+50]`, `[z-50, z+250]` and `[z-τ/6, z+5τ/6]`, with volatilities
/// `σ`, `√5·σ` and `√(τ/60)·σ`.
pub fn burst_anchored_returns(path: &PricePath, z: f64, tau: f64, sigma_loc: f64) -> AnchoredReturns {
    let scaled = |lo: f64, hi: f64, factor: f64| ScaledReturn {
        lo,
        hi,
        r: interval_return(path, lo, hi),
        sigma: factor * sigma_loc,
    };
    AnchoredReturns {
        one_minute: scaled(z - 10.0, z + 50.0, 1.0),
        five_minutes: scaled(z - 50.0, z + 250.0, 5f64.sqrt()),
        relaxation: scaled(z - tau / 6.0, z + 5.0 * tau / 6.0, (tau / 60.0).sqrt()),
        sigma_loc,
    }
}

/// Local one-minute volatility from the grid returns strictly before the
/// return containing `t`.
pub fn vol_before(prices: &PriceSeries, t: f64, cfg: &JumpConfig) -> Result<f64> {
    let returns = prices.returns();
    let i = prices
        .return_index(t)
        .ok_or_else(|| Error::NotEnoughData(format!("t = {t} outside the price grid")))?;
    local_vol(&returns, i, cfg.k, cfg.estimator)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchPair {
    pub a: usize,
    pub b: usize,
    /// `t_b - t_a`.
    pub lag: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub pairs: Vec<MatchPair>,
    pub fraction_a: f64,
    pub fraction_b: f64,
}

/// Greedy nearest matching of two sorted time lists within `tol`; each event
/// is used at most once, closest pairs first.
pub fn match_events(a: &[f64], b: &[f64], tol: f64) -> MatchResult {
    let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
    for (i, &ta) in a.iter().enumerate() {
        let lo = b.partition_point(|&tb| tb < ta - tol);
        for (j, &tb) in b.iter().enumerate().skip(lo) {
            if tb > ta + tol {
                break;
            }
            candidates.push(((tb - ta).abs(), i, j));
        }
    }
    candidates.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
    let mut used_a = vec![false; a.len()];
    let mut used_b = vec![false; b.len()];
    let mut pairs = Vec::new();
    for (_, i, j) in candidates {
        if !used_a[i] && !used_b[j] {
            used_a[i] = true;
            used_b[j] = true;
            pairs.push(MatchPair {
                a: i,
                b: j,
                lag: b[j] - a[i],
            });
        }
    }
    pairs.sort_by_key(|p| p.a);
    let frac = |total: usize| if total == 0 { 0.0 } else { pairs.len() as f64 / total as f64 };
    MatchResult {
        fraction_a: frac(a.len()),
        fraction_b: frac(b.len()),
        pairs,
    }
}
