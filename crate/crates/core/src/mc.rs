//! Monte Carlo validation harness.
//!
//! Each experiment simulates replicates cell by cell, runs the detector (or
//! just the pre-identification) and aggregates rates with binomial standard
//! errors. Replicates run in parallel; every replicate draws its seeds from
//! `(seed, family, cell, replicate)`, so results do not depend on scheduling.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detector::{compare_models, detect, DetectorConfig, MATCH_TOLERANCE};
use crate::error::{Error, Result};
use crate::fit::{extend_fit, fit_base, KernelFamily, SearchWindow};
use crate::kernel::KernelSpec;
use crate::model::{BurstTerm, EventSeries};
use crate::preid::{rank_candidates, PreIdConfig};
use crate::rng::derive_seed;
use crate::simulate::{simulate, SimScenario};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioFamily {
    NoBurst,
    OneBurstFixedWindow,
    PreidSweep,
    OneBurstFull,
    TwoBursts,
    Misspecified,
}

impl ScenarioFamily {
    pub fn name(&self) -> &'static str {
        match self {
            ScenarioFamily::NoBurst => "no_burst",
            ScenarioFamily::OneBurstFixedWindow => "one_burst_fixed_window",
            ScenarioFamily::PreidSweep => "preid_sweep",
            ScenarioFamily::OneBurstFull => "one_burst_full",
            ScenarioFamily::TwoBursts => "two_bursts",
            ScenarioFamily::Misspecified => "misspecified",
        }
    }

    fn tag(&self) -> u64 {
        *self as u64 + 100
    }
}

impl std::str::FromStr for ScenarioFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            ScenarioFamily::NoBurst,
            ScenarioFamily::OneBurstFixedWindow,
            ScenarioFamily::PreidSweep,
            ScenarioFamily::OneBurstFull,
            ScenarioFamily::TwoBursts,
            ScenarioFamily::Misspecified,
        ]
        .into_iter()
        .find(|f| f.name() == s.replace('-', "_"))
        .ok_or_else(|| Error::InvalidParameter(format!("unknown experiment family '{s}'")))
    }
}

/// Endogenous kernel used for simulation, without its branching ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SimKernel {
    PowerLaw { tau0: f64, p: f64 },
    SingleExp { b: f64 },
    DoubleExp { a: f64, b_a: f64, b_b: f64 },
}

impl SimKernel {
    pub const POWER_LAW: SimKernel = SimKernel::PowerLaw { tau0: 0.1, p: 2.0 };
    pub const SE1: SimKernel = SimKernel::SingleExp { b: 0.1 };
    pub const SE2: SimKernel = SimKernel::SingleExp { b: 1.0 };
    pub const DE: SimKernel = SimKernel::DoubleExp {
        a: 0.7,
        b_a: 2.0,
        b_b: 0.1,
    };

    pub fn with_n(&self, n: f64) -> Result<KernelSpec> {
        match *self {
            SimKernel::PowerLaw { tau0, p } => KernelSpec::approx_power_law(n, tau0, p),
            SimKernel::SingleExp { b } => KernelSpec::single_exp(n, b),
            SimKernel::DoubleExp { a, b_a, b_b } => KernelSpec::double_exp(n, a, b_a, b_b),
        }
    }

    pub fn label(&self) -> String {
        match *self {
            SimKernel::PowerLaw { tau0, p } => format!("PL(tau0={tau0},p={p})"),
            SimKernel::SingleExp { b } => format!("SE(b={b})"),
            SimKernel::DoubleExp { a, b_a, b_b } => format!("DE(a={a},bA={b_a},bB={b_b})"),
        }
    }

    /// Family that fits this kernel exactly.
    pub fn matched_family(&self) -> KernelFamily {
        match *self {
            SimKernel::PowerLaw { p, .. } => KernelFamily::ApproxPowerLaw {
                p,
                m: crate::kernel::DEFAULT_M,
                k: crate::kernel::DEFAULT_K,
            },
            SimKernel::SingleExp { .. } => KernelFamily::SingleExp,
            SimKernel::DoubleExp { .. } => KernelFamily::DoubleExp,
        }
    }
}

fn family_label(f: &KernelFamily) -> &'static str {
    match f {
        KernelFamily::ApproxPowerLaw { .. } => "PL",
        KernelFamily::SingleExp => "SE",
        KernelFamily::DoubleExp => "DE",
    }
}

/// A planted burst given by amplitude, relaxation and onset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantedBurst {
    pub alpha: f64,
    pub tau: f64,
    pub z: f64,
}

impl PlantedBurst {
    fn term(&self) -> Result<BurstTerm> {
        BurstTerm::new(self.z, self.alpha, self.tau)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoBurstScenario {
    pub name: String,
    pub first: PlantedBurst,
    pub second: PlantedBurst,
}

/// The eight two-burst scenarios: close/far onsets, small/large bursts.
pub fn two_burst_scenarios() -> Vec<TwoBurstScenario> {
    let small = (1.0, 350.0);
    let large = (1.5, 700.0);
    let mut out = Vec::new();
    for (dist, z1, z2) in [("C", 1625.0, 1975.0), ("F", 1100.0, 2500.0)] {
        for (s1, b1) in [("S", small), ("L", large)] {
            for (s2, b2) in [("S", small), ("L", large)] {
                out.push(TwoBurstScenario {
                    name: format!("{dist}{s1}{s2}"),
                    first: PlantedBurst {
                        alpha: b1.0,
                        tau: b1.1,
                        z: z1,
                    },
                    second: PlantedBurst {
                        alpha: b2.0,
                        tau: b2.1,
                        z: z2,
                    },
                });
            }
        }
    }
    out
}

/// Stand-in 35-cell `(f, τ)` grid for the single-burst tables.
pub fn stand_in_burst_grid() -> Vec<(f64, f64)> {
    let fs = [50.0, 100.0, 200.0, 350.0, 500.0, 700.0, 1000.0];
    let taus = [50.0, 100.0, 350.0, 700.0, 1400.0];
    fs.iter().flat_map(|&f| taus.iter().map(move |&t| (f, t))).collect()
}

/// Label written alongside results that use [`stand_in_burst_grid`].
pub const STAND_IN_LABEL: &str = "stand-in (f, tau) grid: f in {50,100,200,350,500,700,1000} x tau in {50,100,350,700,1400}";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentGrid {
    pub family: ScenarioFamily,
    pub branching: Vec<f64>,
    pub sizes: Vec<f64>,
    pub reps: usize,
    pub seed: u64,
    pub horizon: f64,
    /// Simulation kernels; the misspecified family uses several.
    pub sim_kernels: Vec<SimKernel>,
    /// Single-burst cells as `(f, τ)`, onset at `T/2`.
    pub bursts: Vec<(f64, f64)>,
    /// Pre-identification sweep: κ as multiples of τ.
    pub kappa_ratios: Vec<f64>,
    pub scenarios: Vec<TwoBurstScenario>,
    /// Width of the onset window centred on the truth for the fixed-window family.
    pub fixed_window: f64,
    pub detector: DetectorConfig,
}

impl ExperimentGrid {
    /// Desk-scale defaults: 100 replicates, sizes {1000, 5000}.
    pub fn desk(family: ScenarioFamily) -> Self {
        let mut g = ExperimentGrid {
            family,
            branching: vec![0.3, 0.5, 0.7, 0.9],
            sizes: vec![1000.0, 5000.0],
            reps: 100,
            seed: 0,
            horizon: 3600.0,
            sim_kernels: vec![SimKernel::POWER_LAW],
            bursts: vec![(100.0, 100.0), (350.0, 350.0), (1050.0, 700.0), (500.0, 1400.0)],
            kappa_ratios: vec![0.1, 0.3, 1.0, 3.0, 10.0],
            scenarios: two_burst_scenarios(),
            fixed_window: 100.0,
            detector: DetectorConfig::default(),
        };
        match family {
            ScenarioFamily::TwoBursts => g.sizes = vec![10000.0],
            ScenarioFamily::PreidSweep => {
                g.bursts = vec![(100.0, 100.0), (750.0, 500.0), (500.0, 500.0), (3000.0, 1000.0)];
                g.branching = vec![0.5];
                g.sizes = vec![5000.0];
            }
            ScenarioFamily::Misspecified => {
                g.sim_kernels = vec![SimKernel::SE1, SimKernel::SE2, SimKernel::DE];
                g.branching = vec![0.3, 0.5, 0.7];
                g.bursts = vec![(1050.0, 700.0)];
            }
            _ => {}
        }
        g
    }

    /// Paper-scale grid: sizes {1000, 2000, 5000, 10000} and the 35-cell burst grid.
    pub fn full(family: ScenarioFamily) -> Self {
        let mut g = Self::desk(family);
        g.sizes = match family {
            ScenarioFamily::TwoBursts => vec![10000.0],
            _ => vec![1000.0, 2000.0, 5000.0, 10000.0],
        };
        if matches!(
            family,
            ScenarioFamily::OneBurstFixedWindow | ScenarioFamily::OneBurstFull | ScenarioFamily::Misspecified
        ) {
            g.bursts = stand_in_burst_grid();
        }
        if family == ScenarioFamily::Misspecified {
            g.branching = vec![0.3, 0.5, 0.7, 0.9];
        }
        g
    }

    pub fn validate(&self) -> Result<()> {
        if self.reps == 0 {
            return Err(Error::InvalidParameter("reps must be >= 1".into()));
        }
        if !(self.horizon > 0.0) {
            return Err(Error::InvalidParameter(format!("horizon {}", self.horizon)));
        }
        if self.branching.iter().any(|n| !(0.0..1.0).contains(n)) {
            return Err(Error::InvalidParameter("branching ratios must lie in [0, 1)".into()));
        }
        if self.sizes.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::InvalidParameter("sizes must be positive".into()));
        }
        self.detector.validate()
    }

    fn replicate_seed(&self, cell: usize, rep: usize) -> u64 {
        derive_seed(self.seed, &[self.family.tag(), cell as u64, rep as u64])
    }

    fn simulate(&self, kernel: &SimKernel, n: f64, bursts: Vec<BurstTerm>, size: f64, seed: u64) -> Result<EventSeries> {
        let scenario = SimScenario {
            mu: 0.0,
            kernel: kernel.with_n(n)?,
            bursts,
            horizon: self.horizon,
            seed,
            target_size: Some(size),
        };
        simulate(&scenario)
    }

    fn detector_for(&self, seed: u64, family: KernelFamily) -> DetectorConfig {
        let mut cfg = self.detector.clone();
        cfg.fit.seed = seed;
        cfg.family = family;
        cfg
    }
}

fn binomial_se(successes: usize, trials: usize) -> f64 {
    if trials == 0 {
        return f64::NAN;
    }
    let p = successes as f64 / trials as f64;
    (p * (1.0 - p) / trials as f64).sqrt()
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        f64::NAN
    } else {
        a as f64 / b as f64
    }
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, c) = v.fold((0.0, 0usize), |(s, c), x| (s + x, c + 1));
    if c == 0 {
        f64::NAN
    } else {
        s / c as f64
    }
}

// ----------------------------------------------------------------------------
// False positives

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FpCell {
    pub sim_kernel: String,
    pub fit_kernel: String,
    pub n: f64,
    pub size: f64,
    pub reps: usize,
    pub completed: usize,
    pub false_positives: usize,
    pub rate: f64,
    pub se: f64,
    pub mean_events: f64,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FpReplicate {
    pub cell: usize,
    pub rep: usize,
    pub n_events: usize,
    /// ΔBIC of the first growth step, if any step was attempted.
    pub first_delta_bic: Option<f64>,
    pub accepted: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FpResult {
    pub cells: Vec<FpCell>,
    pub replicates: Vec<FpReplicate>,
}

impl FpResult {
    /// Histogram of first-step ΔBIC values as `(lower edge, upper edge, count)`.
    pub fn delta_bic_histogram(&self, bins: usize) -> Vec<(f64, f64, usize)> {
        let values: Vec<f64> = self.replicates.iter().filter_map(|r| r.first_delta_bic).collect();
        histogram(&values, bins)
    }
}

pub fn histogram(values: &[f64], bins: usize) -> Vec<(f64, f64, usize)> {
    if values.is_empty() || bins == 0 {
        return Vec::new();
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let mut counts = vec![0; bins];
    for v in values {
        let k = (((v - lo) / width) as usize).min(bins - 1);
        counts[k] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(k, c)| (lo + k as f64 * width, lo + (k + 1) as f64 * width, c))
        .collect()
}

struct FpCellSpec {
    kernel: SimKernel,
    fit: KernelFamily,
    n: f64,
    size: f64,
}

fn run_fp_cells(grid: &ExperimentGrid, specs: &[FpCellSpec], cell_offset: usize) -> FpResult {
    let jobs: Vec<(usize, usize)> = (0..specs.len())
        .flat_map(|c| (0..grid.reps).map(move |r| (c, r)))
        .collect();
    let replicates: Vec<FpReplicate> = jobs
        .par_iter()
        .map(|&(c, rep)| {
            let spec = &specs[c];
            let seed = grid.replicate_seed(cell_offset + c, rep);
            let run = || -> Result<(usize, Option<f64>, usize)> {
                let series = grid.simulate(&spec.kernel, spec.n, Vec::new(), spec.size, seed)?;
                let report = detect(&series, &grid.detector_for(seed, spec.fit))?;
                let first = report.steps.first().and_then(|s| s.delta_bic);
                Ok((series.len(), first, report.accepted.len()))
            };
            match run() {
                Ok((n_events, first_delta_bic, accepted)) => FpReplicate {
                    cell: c,
                    rep,
                    n_events,
                    first_delta_bic,
                    accepted,
                    error: None,
                },
                Err(e) => FpReplicate {
                    cell: c,
                    rep,
                    n_events: 0,
                    first_delta_bic: None,
                    accepted: 0,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    let cells = specs
        .iter()
        .enumerate()
        .map(|(c, spec)| {
            let reps: Vec<&FpReplicate> = replicates.iter().filter(|r| r.cell == c).collect();
            let done: Vec<&&FpReplicate> = reps.iter().filter(|r| r.error.is_none()).collect();
            let fp = done.iter().filter(|r| r.accepted > 0).count();
            FpCell {
                sim_kernel: spec.kernel.label(),
                fit_kernel: family_label(&spec.fit).into(),
                n: spec.n,
                size: spec.size,
                reps: grid.reps,
                completed: done.len(),
                false_positives: fp,
                rate: ratio(fp, done.len()),
                se: binomial_se(fp, done.len()),
                mean_events: mean(done.iter().map(|r| r.n_events as f64)),
                note: first_error(reps.iter().map(|r| r.error.as_deref())),
            }
        })
        .collect();
    FpResult { cells, replicates }
}

fn first_error<'a>(errors: impl Iterator<Item = Option<&'a str>>) -> String {
    let errs: Vec<&str> = errors.flatten().collect();
    match errs.first() {
        None => String::new(),
        Some(e) => format!("{} failed replicate(s); first: {e}", errs.len()),
    }
}

/// False-positive rates per `(kernel, n, size)` on burst-free simulations.
pub fn run_fp_experiment(grid: &ExperimentGrid) -> Result<FpResult> {
    grid.validate()?;
    let specs = fp_specs(grid, grid.detector.family);
    Ok(run_fp_cells(grid, &specs, 0))
}

fn fp_specs(grid: &ExperimentGrid, fit: KernelFamily) -> Vec<FpCellSpec> {
    let mut specs = Vec::new();
    for kernel in &grid.sim_kernels {
        for &n in &grid.branching {
            for &size in &grid.sizes {
                specs.push(FpCellSpec {
                    kernel: *kernel,
                    fit,
                    n,
                    size,
                });
            }
        }
    }
    specs
}

// ----------------------------------------------------------------------------
// True positives, single burst

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TpReplicate {
    pub cell: usize,
    pub rep: usize,
    pub n_events: usize,
    pub detected: bool,
    /// Accepted bursts not matched to the planted one.
    pub extra: usize,
    pub z_hat: Option<f64>,
    pub z_guess: Option<f64>,
    pub alpha_hat: Option<f64>,
    pub tau_hat: Option<f64>,
    pub n_base: Option<f64>,
    pub n_final: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TpCell {
    pub sim_kernel: String,
    pub fit_kernel: String,
    pub n: f64,
    pub size: f64,
    pub f: f64,
    pub tau: f64,
    pub alpha: f64,
    pub reps: usize,
    pub completed: usize,
    pub detected: usize,
    pub rate: f64,
    pub se: f64,
    /// Replicates with at least one unmatched accepted burst.
    pub fp_reps: usize,
    pub fp_total: usize,
    pub rmse_z_over_delta: Option<f64>,
    pub rel_rmse_alpha: Option<f64>,
    pub rel_rmse_tau: Option<f64>,
    /// Fraction of detections with `|ẑ - z| ≤ |z̄ - z|`.
    pub improved: Option<f64>,
    pub mean_n_base: f64,
    pub mean_n_final: f64,
    pub mean_events: f64,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TpResult {
    pub cells: Vec<TpCell>,
    pub replicates: Vec<TpReplicate>,
    pub grid_label: String,
}

struct TpCellSpec {
    kernel: SimKernel,
    fit: KernelFamily,
    n: f64,
    size: f64,
    f: f64,
    tau: f64,
    /// Fixed onset window width; `None` runs the full procedure.
    fixed_window: Option<f64>,
}

fn run_tp_replicate(grid: &ExperimentGrid, spec: &TpCellSpec, seed: u64) -> Result<TpReplicate> {
    let z = grid.horizon / 2.0;
    let burst = BurstTerm::from_fertility(z, spec.f, spec.tau)?;
    let series = grid.simulate(&spec.kernel, spec.n, vec![burst], spec.size, seed)?;
    let cfg = grid.detector_for(seed, spec.fit);
    let mut out = TpReplicate {
        cell: 0,
        rep: 0,
        n_events: series.len(),
        detected: false,
        extra: 0,
        z_hat: None,
        z_guess: None,
        alpha_hat: None,
        tau_hat: None,
        n_base: None,
        n_final: None,
        error: None,
    };
    match spec.fixed_window {
        Some(width) => {
            let base = fit_base(&series, spec.fit, &cfg.fit)?;
            out.n_base = Some(base.branching_ratio());
            let window = SearchWindow {
                lo: z - width / 2.0,
                hi: z + width / 2.0,
                guess: z,
            };
            let ext = extend_fit(&series, spec.fit, &base, &window, &cfg.fit, 0)?;
            let (accept, _) = compare_models(&base, &ext.fit, cfg.criterion)?;
            let fitted = if accept { &ext.fit } else { &base };
            out.n_final = Some(fitted.branching_ratio());
            if accept {
                let b = ext.fit.bursts[0];
                out.detected = (b.z - z).abs() <= MATCH_TOLERANCE;
                out.extra = usize::from(!out.detected);
                if out.detected {
                    out.z_hat = Some(b.z);
                    out.z_guess = Some(ext.initial_z);
                    out.alpha_hat = Some(b.alpha);
                    out.tau_hat = Some(b.tau);
                }
            }
        }
        None => {
            let report = detect(&series, &cfg)?;
            out.n_base = Some(report.base().branching_ratio());
            out.n_final = Some(report.final_fit().branching_ratio());
            let detected: Vec<f64> = report.accepted.iter().map(|a| a.burst.z).collect();
            let matched = crate::detector::match_onsets(&[z], &detected, MATCH_TOLERANCE)[0];
            out.extra = detected.len() - usize::from(matched.is_some());
            if let Some(j) = matched {
                let a = &report.accepted[j];
                out.detected = true;
                out.z_hat = Some(a.burst.z);
                out.z_guess = Some(report.candidates[a.candidate].z_bar);
                out.alpha_hat = Some(a.burst.alpha);
                out.tau_hat = Some(a.burst.tau);
            }
        }
    }
    Ok(out)
}

fn run_tp_cells(grid: &ExperimentGrid, specs: &[TpCellSpec], cell_offset: usize) -> TpResult {
    let jobs: Vec<(usize, usize)> = (0..specs.len())
        .flat_map(|c| (0..grid.reps).map(move |r| (c, r)))
        .collect();
    let replicates: Vec<TpReplicate> = jobs
        .par_iter()
        .map(|&(c, rep)| {
            let seed = grid.replicate_seed(cell_offset + c, rep);
            let mut r = run_tp_replicate(grid, &specs[c], seed).unwrap_or_else(|e| TpReplicate {
                cell: c,
                rep,
                n_events: 0,
                detected: false,
                extra: 0,
                z_hat: None,
                z_guess: None,
                alpha_hat: None,
                tau_hat: None,
                n_base: None,
                n_final: None,
                error: Some(e.to_string()),
            });
            r.cell = c;
            r.rep = rep;
            r
        })
        .collect();

    let z = grid.horizon / 2.0;
    let cells = specs
        .iter()
        .enumerate()
        .map(|(c, spec)| {
            let reps: Vec<&TpReplicate> = replicates.iter().filter(|r| r.cell == c).collect();
            let done: Vec<&TpReplicate> = reps.iter().copied().filter(|r| r.error.is_none()).collect();
            let hits: Vec<&TpReplicate> = done.iter().copied().filter(|r| r.detected).collect();
            let alpha = spec.f / spec.tau;
            let report_errors = 2 * hits.len() >= grid.reps && !hits.is_empty();
            let rms = |v: Vec<f64>| (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt();
            let rmse_z = report_errors.then(|| {
                rms(hits
                    .iter()
                    .map(|r| (r.z_hat.unwrap() - z) * r.n_events as f64 / grid.horizon)
                    .collect())
            });
            let rel_alpha = report_errors
                .then(|| rms(hits.iter().map(|r| (r.alpha_hat.unwrap() - alpha) / alpha).collect()));
            let rel_tau = report_errors
                .then(|| rms(hits.iter().map(|r| (r.tau_hat.unwrap() - spec.tau) / spec.tau).collect()));
            let improved = (!hits.is_empty()).then(|| {
                let k = hits
                    .iter()
                    .filter(|r| (r.z_hat.unwrap() - z).abs() <= (r.z_guess.unwrap() - z).abs())
                    .count();
                ratio(k, hits.len())
            });
            TpCell {
                sim_kernel: spec.kernel.label(),
                fit_kernel: family_label(&spec.fit).into(),
                n: spec.n,
                size: spec.size,
                f: spec.f,
                tau: spec.tau,
                alpha,
                reps: grid.reps,
                completed: done.len(),
                detected: hits.len(),
                rate: ratio(hits.len(), done.len()),
                se: binomial_se(hits.len(), done.len()),
                fp_reps: done.iter().filter(|r| r.extra > 0).count(),
                fp_total: done.iter().map(|r| r.extra).sum(),
                rmse_z_over_delta: rmse_z,
                rel_rmse_alpha: rel_alpha,
                rel_rmse_tau: rel_tau,
                improved,
                mean_n_base: mean(done.iter().filter_map(|r| r.n_base)),
                mean_n_final: mean(done.iter().filter_map(|r| r.n_final)),
                mean_events: mean(done.iter().map(|r| r.n_events as f64)),
                note: first_error(reps.iter().map(|r| r.error.as_deref())),
            }
        })
        .collect();
    let grid_label = if grid.bursts == stand_in_burst_grid() {
        STAND_IN_LABEL.to_string()
    } else {
        format!("{} (f, tau) cells", grid.bursts.len())
    };
    TpResult {
        cells,
        replicates,
        grid_label,
    }
}

fn tp_specs(grid: &ExperimentGrid, fit_for: impl Fn(&SimKernel) -> KernelFamily, fixed: Option<f64>) -> Vec<TpCellSpec> {
    let mut specs = Vec::new();
    for kernel in &grid.sim_kernels {
        for &n in &grid.branching {
            for &size in &grid.sizes {
                for &(f, tau) in &grid.bursts {
                    specs.push(TpCellSpec {
                        kernel: *kernel,
                        fit: fit_for(kernel),
                        n,
                        size,
                        f,
                        tau,
                        fixed_window: fixed,
                    });
                }
            }
        }
    }
    specs
}

/// Single-burst detection rates and estimation errors. The fixed-window
/// family searches the onset only within `fixed_window` around the truth.
pub fn run_tp_experiment(grid: &ExperimentGrid) -> Result<TpResult> {
    grid.validate()?;
    let fixed = match grid.family {
        ScenarioFamily::OneBurstFixedWindow => Some(grid.fixed_window),
        _ => None,
    };
    let fit = grid.detector.family;
    Ok(run_tp_cells(grid, &tp_specs(grid, |_| fit, fixed), 0))
}

// ----------------------------------------------------------------------------
// Pre-identification sweep

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreidCell {
    pub n: f64,
    pub size: f64,
    pub alpha: f64,
    pub tau: f64,
    pub kappa: f64,
    pub kappa_over_tau: f64,
    pub reps: usize,
    pub completed: usize,
    pub rmse_over_delta: f64,
    /// Fraction with the top candidate within the match tolerance.
    pub hit_rate: f64,
    pub note: String,
}

/// RMSE of the top-ranked candidate against the true onset, per κ/τ.
pub fn run_preid_sweep(grid: &ExperimentGrid) -> Result<Vec<PreidCell>> {
    grid.validate()?;
    let z = grid.horizon / 2.0;
    let mut cells = Vec::new();
    let mut cell = 0;
    for kernel in &grid.sim_kernels {
        for &n in &grid.branching {
            for &size in &grid.sizes {
                for &(f, tau) in &grid.bursts {
                    let c = cell;
                    cell += 1;
                    // The same replicates serve every κ.
                    let runs: Vec<Result<(EventSeries, Vec<f64>)>> = (0..grid.reps)
                        .into_par_iter()
                        .map(|rep| {
                            let burst = BurstTerm::from_fertility(z, f, tau)?;
                            let series = grid.simulate(kernel, n, vec![burst], size, grid.replicate_seed(c, rep))?;
                            let guesses = grid
                                .kappa_ratios
                                .iter()
                                .map(|r| {
                                    let cfg = PreIdConfig {
                                        kappa: r * tau,
                                        max_candidates: 1,
                                        ..grid.detector.preid
                                    };
                                    Ok(rank_candidates(&series, &cfg)?[0].z_bar)
                                })
                                .collect::<Result<Vec<f64>>>()?;
                            Ok((series, guesses))
                        })
                        .collect();
                    let note = first_error(runs.iter().map(|r| r.as_ref().err().map(|_| "simulation failed")));
                    let ok: Vec<&(EventSeries, Vec<f64>)> = runs.iter().filter_map(|r| r.as_ref().ok()).collect();
                    for (k, &ratio_k) in grid.kappa_ratios.iter().enumerate() {
                        let sq: Vec<f64> = ok
                            .iter()
                            .map(|(s, g)| ((g[k] - z) * s.len() as f64 / grid.horizon).powi(2))
                            .collect();
                        let hits = ok.iter().filter(|(_, g)| (g[k] - z).abs() <= MATCH_TOLERANCE).count();
                        cells.push(PreidCell {
                            n,
                            size,
                            alpha: f / tau,
                            tau,
                            kappa: ratio_k * tau,
                            kappa_over_tau: ratio_k,
                            reps: grid.reps,
                            completed: ok.len(),
                            rmse_over_delta: mean(sq.into_iter()).sqrt(),
                            hit_rate: ratio(hits, ok.len()),
                            note: note.clone(),
                        });
                    }
                }
            }
        }
    }
    Ok(cells)
}

// ----------------------------------------------------------------------------
// Two bursts

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoBurstCell {
    pub scenario: String,
    pub n: f64,
    pub size: f64,
    pub reps: usize,
    pub completed: usize,
    pub both: usize,
    pub first_found: usize,
    pub second_found: usize,
    pub exactly_one: usize,
    pub none: usize,
    /// Replicates with an accepted burst matching neither planted one.
    pub extra: usize,
    pub both_rate: f64,
    pub both_se: f64,
    pub first_rate: f64,
    pub second_rate: f64,
    pub extra_rate: f64,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoBurstReplicate {
    pub cell: usize,
    pub rep: usize,
    pub n_events: usize,
    pub first: bool,
    pub second: bool,
    pub extra: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoBurstResult {
    pub cells: Vec<TwoBurstCell>,
    pub replicates: Vec<TwoBurstReplicate>,
}

pub fn run_two_burst_experiment(grid: &ExperimentGrid) -> Result<TwoBurstResult> {
    grid.validate()?;
    let kernel = grid.sim_kernels.first().copied().unwrap_or(SimKernel::POWER_LAW);
    let mut specs = Vec::new();
    for sc in &grid.scenarios {
        for &n in &grid.branching {
            for &size in &grid.sizes {
                specs.push((sc, n, size));
            }
        }
    }
    let jobs: Vec<(usize, usize)> = (0..specs.len())
        .flat_map(|c| (0..grid.reps).map(move |r| (c, r)))
        .collect();
    let replicates: Vec<TwoBurstReplicate> = jobs
        .par_iter()
        .map(|&(c, rep)| {
            let (sc, n, size) = specs[c];
            let seed = grid.replicate_seed(c, rep);
            let run = || -> Result<TwoBurstReplicate> {
                let bursts = vec![sc.first.term()?, sc.second.term()?];
                let series = grid.simulate(&kernel, n, bursts, size, seed)?;
                let report = detect(&series, &grid.detector_for(seed, grid.detector.family))?;
                let detected: Vec<f64> = report.accepted.iter().map(|a| a.burst.z).collect();
                let m = crate::detector::match_onsets(&[sc.first.z, sc.second.z], &detected, MATCH_TOLERANCE);
                let matched = m.iter().flatten().count();
                Ok(TwoBurstReplicate {
                    cell: c,
                    rep,
                    n_events: series.len(),
                    first: m[0].is_some(),
                    second: m[1].is_some(),
                    extra: detected.len() - matched,
                    error: None,
                })
            };
            run().unwrap_or_else(|e| TwoBurstReplicate {
                cell: c,
                rep,
                n_events: 0,
                first: false,
                second: false,
                extra: 0,
                error: Some(e.to_string()),
            })
        })
        .collect();
    let cells = specs
        .iter()
        .enumerate()
        .map(|(c, &(sc, n, size))| {
            let reps: Vec<&TwoBurstReplicate> = replicates.iter().filter(|r| r.cell == c).collect();
            let done: Vec<&TwoBurstReplicate> = reps.iter().copied().filter(|r| r.error.is_none()).collect();
            let count = |p: &dyn Fn(&TwoBurstReplicate) -> bool| done.iter().filter(|r| p(r)).count();
            let both = count(&|r| r.first && r.second);
            let first = count(&|r| r.first);
            let second = count(&|r| r.second);
            let extra = count(&|r| r.extra > 0);
            TwoBurstCell {
                scenario: sc.name.clone(),
                n,
                size,
                reps: grid.reps,
                completed: done.len(),
                both,
                first_found: first,
                second_found: second,
                exactly_one: count(&|r| r.first != r.second),
                none: count(&|r| !r.first && !r.second),
                extra,
                both_rate: ratio(both, done.len()),
                both_se: binomial_se(both, done.len()),
                first_rate: ratio(first, done.len()),
                second_rate: ratio(second, done.len()),
                extra_rate: ratio(extra, done.len()),
                note: first_error(reps.iter().map(|r| r.error.as_deref())),
            }
        })
        .collect();
    Ok(TwoBurstResult { cells, replicates })
}

// ----------------------------------------------------------------------------
// Misspecification

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MisspecResult {
    /// False positives with the power-law fit on each simulation kernel.
    pub fp: FpResult,
    /// Detection with the power-law fit.
    pub tp_misspecified: TpResult,
    /// Detection on the same replicates with the simulation kernel's own family.
    pub tp_matched: TpResult,
}

/// Simulates with each kernel in `sim_kernels` and fits with the detector's
/// family; the matched-kernel runs reuse the same replicate seeds.
pub fn run_misspec_experiment(grid: &ExperimentGrid) -> Result<MisspecResult> {
    grid.validate()?;
    let fit = grid.detector.family;
    let fp_specs = fp_specs(grid, fit);
    let fp = run_fp_cells(grid, &fp_specs, 0);
    let offset = fp_specs.len();
    let tp_misspecified = run_tp_cells(grid, &tp_specs(grid, |_| fit, None), offset);
    let tp_matched = run_tp_cells(grid, &tp_specs(grid, |k| k.matched_family(), None), offset);
    Ok(MisspecResult {
        fp,
        tp_misspecified,
        tp_matched,
    })
}

// ----------------------------------------------------------------------------
// Output

pub fn write_csv<T: Serialize>(rows: &[T], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(path, csv_io(e)))?;
    for row in rows {
        w.serialize(row).map_err(|e| Error::io(path, csv_io(e)))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_io(e: csv::Error) -> std::io::Error {
    std::io::Error::other(e.to_string())
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Serialization(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Runs the grid's experiment and writes `<family>_*.csv` tables plus a
/// `<family>_summary.json`. Returns the written paths.
pub fn run_and_write(grid: &ExperimentGrid, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let name = grid.family.name();
    let path = |suffix: &str| dir.join(format!("{name}_{suffix}"));
    let mut written = Vec::new();
    let mut emit_csv = |rows: &dyn Fn(&Path) -> Result<()>, suffix: &str| -> Result<()> {
        let p = path(suffix);
        rows(&p)?;
        written.push(p);
        Ok(())
    };
    let summary: serde_json::Value = match grid.family {
        ScenarioFamily::NoBurst => {
            let r = run_fp_experiment(grid)?;
            emit_csv(&|p| write_csv(&r.cells, p), "cells.csv")?;
            emit_csv(&|p| write_csv(&r.replicates, p), "replicates.csv")?;
            let hist: Vec<HistRow> = r.delta_bic_histogram(40).into_iter().map(HistRow::from).collect();
            emit_csv(&|p| write_csv(&hist, p), "delta_bic_hist.csv")?;
            serde_json::json!({ "grid": grid, "cells": r.cells })
        }
        ScenarioFamily::OneBurstFixedWindow | ScenarioFamily::OneBurstFull => {
            let r = run_tp_experiment(grid)?;
            emit_csv(&|p| write_csv(&r.cells, p), "cells.csv")?;
            emit_csv(&|p| write_csv(&r.replicates, p), "replicates.csv")?;
            serde_json::json!({ "grid": grid, "grid_label": r.grid_label, "cells": r.cells })
        }
        ScenarioFamily::PreidSweep => {
            let r = run_preid_sweep(grid)?;
            emit_csv(&|p| write_csv(&r, p), "cells.csv")?;
            serde_json::json!({ "grid": grid, "cells": r })
        }
        ScenarioFamily::TwoBursts => {
            let r = run_two_burst_experiment(grid)?;
            emit_csv(&|p| write_csv(&r.cells, p), "cells.csv")?;
            emit_csv(&|p| write_csv(&r.replicates, p), "replicates.csv")?;
            serde_json::json!({ "grid": grid, "cells": r.cells })
        }
        ScenarioFamily::Misspecified => {
            let r = run_misspec_experiment(grid)?;
            emit_csv(&|p| write_csv(&r.fp.cells, p), "fp_cells.csv")?;
            emit_csv(&|p| write_csv(&r.tp_misspecified.cells, p), "tp_cells.csv")?;
            emit_csv(&|p| write_csv(&r.tp_matched.cells, p), "tp_matched_cells.csv")?;
            serde_json::json!({
                "grid": grid,
                "fp_cells": r.fp.cells,
                "tp_cells": r.tp_misspecified.cells,
                "tp_matched_cells": r.tp_matched.cells,
            })
        }
    };
    let p = path("summary.json");
    write_json(&summary, &p)?;
    written.push(p);
    Ok(written)
}

#[derive(Serialize)]
struct HistRow {
    lo: f64,
    hi: f64,
    count: usize,
}

impl From<(f64, f64, usize)> for HistRow {
    fn from((lo, hi, count): (f64, f64, usize)) -> Self {
        HistRow { lo, hi, count }
    }
}
