//! Constrained maximum-likelihood estimation.
//!
//! The baseline μ is concentrated out and the reduced cost `G` is minimized
//! over the branching ratio, the kernel shape and the burst amplitudes and
//! relaxation times with a box-constrained BFGS. Burst onsets are not
//! continuous parameters: each onset is searched directly over the event
//! times inside its window while the other parameters are held fixed, and
//! the two steps alternate until the cost stops improving.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{ExpMixture, KernelSpec, DEFAULT_K, DEFAULT_M};
use crate::likelihood::{implied_mu, log_likelihood};
use crate::model::{BurstTerm, EventSeries, ModelFit};
use crate::optim::{minimize, BfgsOptions};
use crate::rng::{rng_for, tag};

/// Kernel family to estimate. Holds the non-estimated shape constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KernelFamily {
    /// Approximate power law; `p` is the fixed exponent or, when the exponent
    /// is free, the starting value.
    ApproxPowerLaw { p: f64, m: f64, k: usize },
    SingleExp,
    DoubleExp,
}

impl Default for KernelFamily {
    fn default() -> Self {
        KernelFamily::ApproxPowerLaw {
            p: 2.0,
            m: DEFAULT_M,
            k: DEFAULT_K,
        }
    }
}

/// Fitting options.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub n_starts: usize,
    /// Bounds on the branching ratio.
    pub n_bounds: (f64, f64),
    /// Bounds on kernel time scales (`tau0`, `1/b`), seconds.
    pub timescale_bounds: (f64, f64),
    /// Bounds on burst amplitudes, events per second.
    pub alpha_bounds: (f64, f64),
    /// Bounds on burst relaxation times; the upper bound defaults to `10·T`.
    pub tau_bounds: (f64, Option<f64>),
    /// Hold the power-law exponent fixed.
    pub fix_exponent: bool,
    /// Relative cost tolerance of the quasi-Newton iterations.
    pub f_tol: f64,
    pub max_iter: usize,
    /// Maximum number of onset/parameter alternations.
    pub max_alternations: usize,
    /// Absolute cost improvement below which the alternation stops.
    pub alternation_tol: f64,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            n_starts: 8,
            n_bounds: (0.0, 0.999),
            timescale_bounds: (1e-4, 1e4),
            alpha_bounds: (1e-8, 1e4),
            tau_bounds: (1.0, None),
            fix_exponent: true,
            f_tol: 1e-12,
            max_iter: 400,
            max_alternations: 20,
            alternation_tol: 1e-8,
            seed: 0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self, horizon: f64) -> Result<()> {
        let ok = |(lo, hi): (f64, f64)| lo.is_finite() && hi.is_finite() && lo <= hi;
        if self.n_starts == 0 {
            return Err(Error::InvalidParameter("n_starts must be >= 1".into()));
        }
        if !ok(self.n_bounds) || self.n_bounds.0 < 0.0 || self.n_bounds.1 >= 1.0 {
            return Err(Error::InvalidParameter(format!("n bounds {:?}", self.n_bounds)));
        }
        for (name, b) in [
            ("timescale", self.timescale_bounds),
            ("alpha", self.alpha_bounds),
            ("tau", (self.tau_bounds.0, self.tau_upper(horizon))),
        ] {
            if !ok(b) || b.0 <= 0.0 {
                return Err(Error::InvalidParameter(format!("{name} bounds {b:?}")));
            }
        }
        Ok(())
    }

    fn tau_upper(&self, horizon: f64) -> f64 {
        self.tau_bounds.1.unwrap_or(10.0 * horizon)
    }

    fn options(&self) -> BfgsOptions {
        BfgsOptions {
            max_iter: self.max_iter,
            f_tol: self.f_tol,
            ..BfgsOptions::default()
        }
    }
}

/// Onset search interval for one burst, with the pre-identified guess.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchWindow {
    pub lo: f64,
    pub hi: f64,
    pub guess: f64,
}

impl SearchWindow {
    /// Window of width `w` centred on `guess`, clipped to `[0, horizon]`.
    pub fn centered(guess: f64, w: f64, horizon: f64) -> Self {
        SearchWindow {
            lo: (guess - w / 2.0).max(0.0),
            hi: (guess + w / 2.0).min(horizon),
            guess,
        }
    }

    fn candidates<'a>(&self, times: &'a [f64]) -> &'a [f64] {
        let a = times.partition_point(|&t| t < self.lo);
        let b = times.partition_point(|&t| t <= self.hi);
        &times[a..b.max(a)]
    }

    /// Event in the window closest to the guess.
    fn snapped_guess(&self, times: &[f64]) -> Result<f64> {
        self.candidates(times)
            .iter()
            .copied()
            .min_by(|a, b| (a - self.guess).abs().total_cmp(&(b - self.guess).abs()))
            .ok_or(Error::EmptyWindow {
                lo: self.lo,
                hi: self.hi,
            })
    }
}

/// Result of adding one burst to a fitted model.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtendedFit {
    pub fit: ModelFit,
    /// Onset guess the search started from (snapped to an event).
    pub initial_z: f64,
    /// Number of onset/parameter alternations performed.
    pub alternations: usize,
}

impl KernelFamily {
    fn exponent_free(&self, cfg: &FitConfig) -> bool {
        matches!(self, KernelFamily::ApproxPowerLaw { .. }) && !cfg.fix_exponent
    }

    /// Number of estimated kernel shape coordinates (excluding `n`).
    pub fn shape_dim(&self, cfg: &FitConfig) -> usize {
        match self {
            KernelFamily::ApproxPowerLaw { .. } => 1 + usize::from(self.exponent_free(cfg)),
            KernelFamily::SingleExp => 1,
            KernelFamily::DoubleExp => 3,
        }
    }

    /// Free parameters of the burst-free model, μ included.
    pub fn base_params(&self, cfg: &FitConfig) -> usize {
        2 + self.shape_dim(cfg)
    }

    /// Kernel from `n` and shape coordinates. Time scales are log-coordinates.
    pub fn build(&self, n: f64, shape: &[f64]) -> KernelSpec {
        match *self {
            KernelFamily::ApproxPowerLaw { p, m, k } => KernelSpec::ApproxPowerLaw {
                n,
                tau0: shape[0].exp(),
                p: shape.get(1).copied().unwrap_or(p),
                m,
                k,
            },
            KernelFamily::SingleExp => KernelSpec::SingleExp {
                n,
                b: (-shape[0]).exp(),
            },
            KernelFamily::DoubleExp => KernelSpec::DoubleExp {
                n,
                a: shape[0],
                b_a: (-shape[1]).exp(),
                b_b: (-shape[2]).exp(),
            },
        }
    }

    /// Shape coordinates of a kernel of this family.
    pub fn coords(&self, spec: &KernelSpec, cfg: &FitConfig) -> Result<Vec<f64>> {
        match (*self, *spec) {
            (KernelFamily::ApproxPowerLaw { .. }, KernelSpec::ApproxPowerLaw { tau0, p, .. }) => {
                let mut v = vec![tau0.ln()];
                if self.exponent_free(cfg) {
                    v.push(p);
                }
                Ok(v)
            }
            (KernelFamily::SingleExp, KernelSpec::SingleExp { b, .. }) => Ok(vec![-b.ln()]),
            (KernelFamily::DoubleExp, KernelSpec::DoubleExp { a, b_a, b_b, .. }) => {
                Ok(vec![a, -b_a.ln(), -b_b.ln()])
            }
            _ => Err(Error::Mismatch(format!("kernel {spec:?} is not of family {self:?}"))),
        }
    }

    fn shape_bounds(&self, cfg: &FitConfig) -> Vec<(f64, f64)> {
        let ts = (cfg.timescale_bounds.0.ln(), cfg.timescale_bounds.1.ln());
        match self {
            KernelFamily::ApproxPowerLaw { .. } => {
                let mut v = vec![ts];
                if self.exponent_free(cfg) {
                    v.push((1.05, 6.0));
                }
                v
            }
            KernelFamily::SingleExp => vec![ts],
            KernelFamily::DoubleExp => vec![(0.0, 1.0), ts, ts],
        }
    }

    fn random_shape(&self, cfg: &FitConfig, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let mut log_uniform = |lo: f64, hi: f64| rng.random_range(lo.ln()..hi.ln());
        match *self {
            KernelFamily::ApproxPowerLaw { p, .. } => {
                let mut v = vec![log_uniform(0.01, 10.0)];
                if self.exponent_free(cfg) {
                    v.push(p);
                }
                v
            }
            KernelFamily::SingleExp => vec![log_uniform(0.1, 100.0)],
            KernelFamily::DoubleExp => {
                let fast = log_uniform(0.1, 10.0);
                let slow = log_uniform(1.0, 100.0);
                vec![0.5, fast, slow]
            }
        }
    }
}

/// Parameter layout `[n, shape.., (ln α_k, ln τ_k)..]` of the reduced cost.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub shape_dim: usize,
    pub bursts: usize,
}

impl Layout {
    pub fn dim(&self) -> usize {
        1 + self.shape_dim + 2 * self.bursts
    }

    fn alpha(&self, k: usize) -> usize {
        1 + self.shape_dim + 2 * k
    }

    fn tau(&self, k: usize) -> usize {
        2 + self.shape_dim + 2 * k
    }
}

const SHAPE_STEP: f64 = 1e-5;

/// Reduced cost `G` with its analytic gradient, for fixed burst onsets.
pub struct ReducedCostObjective<'a> {
    times: &'a [f64],
    horizon: f64,
    family: KernelFamily,
    layout: Layout,
    onsets: Vec<f64>,
    h2: Vec<f64>,
    dh2: Vec<Vec<f64>>,
    bracket: Vec<f64>,
    q: Vec<Vec<f64>>,
    dq: Vec<Vec<f64>>,
}

impl<'a> ReducedCostObjective<'a> {
    pub fn new(series: &'a EventSeries, family: KernelFamily, shape_dim: usize, onsets: Vec<f64>) -> Self {
        let n = series.len();
        let layout = Layout {
            shape_dim,
            bursts: onsets.len(),
        };
        ReducedCostObjective {
            times: series.times(),
            horizon: series.horizon(),
            family,
            layout,
            h2: vec![0.0; n],
            dh2: vec![vec![0.0; n]; shape_dim],
            bracket: vec![0.0; n],
            q: vec![vec![0.0; n]; onsets.len()],
            dq: vec![vec![0.0; n]; onsets.len()],
            onsets,
        }
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn set_onset(&mut self, k: usize, z: f64) {
        self.onsets[k] = z;
    }

    /// Cost only.
    pub fn value(&mut self, x: &[f64]) -> f64 {
        let mut g = vec![0.0; x.len()];
        self.eval(x, &mut g)
    }

    /// Cost and gradient; `+∞` when the bracket is not positive at every event.
    pub fn eval(&mut self, x: &[f64], grad: &mut [f64]) -> f64 {
        let Layout { shape_dim, bursts } = self.layout;
        let times = self.times;
        let count = times.len();
        let horizon = self.horizon;
        let n = x[0];
        let shape = &x[1..1 + shape_dim];

        let Some(mix) = self.mixture_at(n, shape) else {
            return f64::INFINITY;
        };
        // Shape derivatives of the mixture weights and rates.
        let mut dw = vec![vec![0.0; mix.len()]; shape_dim];
        let mut dr = vec![vec![0.0; mix.len()]; shape_dim];
        let mut probe = shape.to_vec();
        for s in 0..shape_dim {
            probe[s] = shape[s] + SHAPE_STEP;
            let up = self.mixture_at(n, &probe);
            probe[s] = shape[s] - SHAPE_STEP;
            let down = self.mixture_at(n, &probe);
            probe[s] = shape[s];
            let (Some(up), Some(down)) = (up, down) else {
                return f64::INFINITY;
            };
            for j in 0..mix.len() {
                dw[s][j] = (up.weights[j] - down.weights[j]) / (2.0 * SHAPE_STEP);
                dr[s][j] = (up.rates[j] - down.rates[j]) / (2.0 * SHAPE_STEP);
            }
        }

        self.h2.iter_mut().for_each(|v| *v = 0.0);
        self.dh2.iter_mut().for_each(|row| row.iter_mut().for_each(|v| *v = 0.0));
        let mut h1 = 0.0;
        let mut dh1 = vec![0.0; shape_dim];
        for j in 0..mix.len() {
            let (w, r) = (mix.weights[j], mix.rates[j]);
            // acc = Σ_{l<i} e^{-r(t_i - t_l)}, lag = Σ_{l<i} (t_i - t_l) e^{-r(t_i - t_l)}.
            let (mut acc, mut lag) = (0.0, 0.0);
            for i in 1..count {
                let delta = times[i] - times[i - 1];
                let e = (-r * delta).exp();
                lag = e * (lag + delta * (1.0 + acc));
                acc = e * (1.0 + acc);
                self.h2[i] += w * acc;
                for s in 0..shape_dim {
                    self.dh2[s][i] += dw[s][j] * acc - w * dr[s][j] * lag;
                }
            }
            if count > 0 {
                let gap = horizon - times[count - 1];
                let e = (-r * gap).exp();
                let tail = e * (1.0 + acc);
                let tail_lag = e * (gap * (1.0 + acc) + lag);
                let mass = count as f64 - tail;
                h1 += (w / r) * mass;
                for s in 0..shape_dim {
                    dh1[s] += (dw[s][j] / r - w * dr[s][j] / (r * r)) * mass + (w / r) * dr[s][j] * tail_lag;
                }
            }
        }

        let base = count as f64 / horizon;
        let shift = h1 / horizon;
        for (b, h) in self.bracket.iter_mut().zip(&self.h2) {
            *b = base + n * (h - shift);
        }
        let mut k1 = vec![0.0; bursts];
        let mut dk1 = vec![0.0; bursts];
        for k in 0..bursts {
            let alpha = x[self.layout.alpha(k)].exp();
            let tau = x[self.layout.tau(k)].exp();
            let z = self.onsets[k];
            let start = times.partition_point(|&t| t <= z);
            let (q, dq) = (&mut self.q[k], &mut self.dq[k]);
            q[..start].iter_mut().for_each(|v| *v = 0.0);
            dq[..start].iter_mut().for_each(|v| *v = 0.0);
            for i in start..count {
                let u = (times[i] - z) / tau;
                let e = if u < 745.0 { (-u).exp() } else { 0.0 };
                q[i] = e;
                dq[i] = e * u;
            }
            let span = (horizon - z).max(0.0);
            let u = span / tau;
            let one_minus = -(-u).exp_m1();
            k1[k] = tau * one_minus;
            dk1[k] = tau * one_minus - span * (-u).exp();
            let shift = k1[k] / horizon;
            for (b, qi) in self.bracket.iter_mut().zip(q.iter()) {
                *b += alpha * (qi - shift);
            }
        }

        let mut cost = 0.0;
        let mut inv_sum = 0.0;
        for b in self.bracket.iter_mut() {
            if !(*b > 0.0) {
                return f64::INFINITY;
            }
            cost -= b.ln();
            *b = 1.0 / *b;
            inv_sum += *b;
        }
        let inv = &self.bracket;
        let dot = |v: &[f64]| v.iter().zip(inv).map(|(a, b)| a * b).sum::<f64>();
        grad[0] = -(dot(&self.h2) - shift * inv_sum);
        for s in 0..shape_dim {
            grad[1 + s] = -n * (dot(&self.dh2[s]) - dh1[s] / horizon * inv_sum);
        }
        for k in 0..bursts {
            let alpha = x[self.layout.alpha(k)].exp();
            grad[self.layout.alpha(k)] = -alpha * (dot(&self.q[k]) - k1[k] / horizon * inv_sum);
            grad[self.layout.tau(k)] = -alpha * (dot(&self.dq[k]) - dk1[k] / horizon * inv_sum);
        }
        cost
    }

    fn mixture_at(&self, n: f64, shape: &[f64]) -> Option<ExpMixture> {
        let spec = self.family.build(n, shape);
        if let KernelSpec::ApproxPowerLaw { .. } = spec {
            spec.constants().ok()?;
        }
        Some(spec.mixture())
    }
}

/// Search state: parameter vector in optimizer coordinates plus onsets.
#[derive(Debug, Clone)]
struct Candidate {
    x: Vec<f64>,
    onsets: Vec<f64>,
    cost: f64,
}

struct Problem<'a> {
    series: &'a EventSeries,
    family: KernelFamily,
    cfg: &'a FitConfig,
    shape_dim: usize,
}

impl<'a> Problem<'a> {
    fn new(series: &'a EventSeries, family: KernelFamily, cfg: &'a FitConfig) -> Result<Self> {
        cfg.validate(series.horizon())?;
        if series.is_empty() {
            return Err(Error::InvalidSeries("cannot fit an empty series".into()));
        }
        Ok(Problem {
            series,
            family,
            cfg,
            shape_dim: family.shape_dim(cfg),
        })
    }

    fn bounds(&self, bursts: usize) -> (Vec<f64>, Vec<f64>) {
        let cfg = self.cfg;
        let mut lo = vec![cfg.n_bounds.0];
        let mut hi = vec![cfg.n_bounds.1];
        for (l, h) in self.family.shape_bounds(cfg) {
            lo.push(l);
            hi.push(h);
        }
        let tau_hi = cfg.tau_upper(self.series.horizon());
        for _ in 0..bursts {
            lo.extend([cfg.alpha_bounds.0.ln(), cfg.tau_bounds.0.ln()]);
            hi.extend([cfg.alpha_bounds.1.ln(), tau_hi.ln()]);
        }
        (lo, hi)
    }

    fn clamp(&self, x: &mut [f64], bursts: usize) {
        let (lo, hi) = self.bounds(bursts);
        for ((v, l), h) in x.iter_mut().zip(&lo).zip(&hi) {
            *v = v.clamp(*l, *h);
        }
    }

    /// Minimizes over the continuous parameters at fixed onsets.
    fn optimize_theta(&self, x0: &[f64], onsets: &[f64]) -> Candidate {
        let (lo, hi) = self.bounds(onsets.len());
        let mut objective =
            ReducedCostObjective::new(self.series, self.family, self.shape_dim, onsets.to_vec());
        let mut x = x0.to_vec();
        self.clamp(&mut x, onsets.len());
        let r = minimize(|x, g| objective.eval(x, g), &x, &lo, &hi, &self.cfg.options());
        Candidate {
            x: r.x,
            onsets: onsets.to_vec(),
            cost: r.f,
        }
    }

    fn to_model(&self, c: &Candidate) -> Result<ModelFit> {
        let layout = Layout {
            shape_dim: self.shape_dim,
            bursts: c.onsets.len(),
        };
        let kernel = self.family.build(c.x[0], &c.x[1..1 + self.shape_dim]);
        kernel.validate()?;
        let bursts = (0..layout.bursts)
            .map(|k| BurstTerm::new(c.onsets[k], c.x[layout.alpha(k)].exp(), c.x[layout.tau(k)].exp()))
            .collect::<Result<Vec<_>>>()?;
        let mu = implied_mu(self.series, &kernel, &bursts);
        if !(mu > 0.0) {
            return Err(Error::FitFailure(format!("implied baseline {mu} is not positive")));
        }
        let log_lik = log_likelihood(self.series, mu, &kernel, &bursts)?;
        Ok(ModelFit::new(
            mu,
            kernel,
            bursts,
            log_lik,
            self.family.base_params(self.cfg),
            self.series.len(),
        ))
    }

    /// Best feasible candidate, ordered by cost.
    fn best_model(&self, mut candidates: Vec<Candidate>) -> Result<(Candidate, ModelFit)> {
        candidates.retain(|c| c.cost.is_finite());
        candidates.sort_by(|a, b| a.cost.total_cmp(&b.cost));
        let mut reasons = Vec::new();
        for c in candidates {
            match self.to_model(&c) {
                Ok(m) => return Ok((c, m)),
                Err(e) => reasons.push(e.to_string()),
            }
        }
        Err(Error::FitFailure(format!(
            "no feasible start among {} tried ({})",
            self.cfg.n_starts,
            if reasons.is_empty() {
                "all costs infinite".to_string()
            } else {
                reasons.join("; ")
            }
        )))
    }
}

/// Fits the burst-free model by multi-start minimization of `G`.
pub fn fit_base(series: &EventSeries, family: KernelFamily, cfg: &FitConfig) -> Result<ModelFit> {
    let problem = Problem::new(series, family, cfg)?;
    let mut rng = rng_for(cfg.seed, &[tag::MULTISTART, 0]);
    let candidates = (0..cfg.n_starts)
        .map(|_| {
            let mut x = vec![rng.random_range(0.05_f64.ln()..0.95_f64.ln()).exp()];
            x.extend(family.random_shape(cfg, &mut rng));
            problem.optimize_theta(&x, &[])
        })
        .collect();
    Ok(problem.best_model(candidates)?.1)
}

/// Adds one burst with onset constrained to `window`, keeping the onsets of
/// `prev` fixed and re-optimizing every other parameter. `stream` selects the
/// multi-start random stream.
pub fn extend_fit(
    series: &EventSeries,
    family: KernelFamily,
    prev: &ModelFit,
    window: &SearchWindow,
    cfg: &FitConfig,
    stream: u64,
) -> Result<ExtendedFit> {
    let problem = Problem::new(series, family, cfg)?;
    let times = series.times();
    let horizon = series.horizon();
    let initial_z = window.snapped_guess(times)?;

    let mut onsets: Vec<f64> = prev.bursts.iter().map(|b| b.z).collect();
    onsets.push(initial_z);
    let m = onsets.len();

    // Warm start from the previous model.
    let mut warm = vec![prev.kernel.branching_ratio()];
    warm.extend(family.coords(&prev.kernel, cfg)?);
    for b in &prev.bursts {
        warm.extend([b.alpha.ln(), b.tau.ln()]);
    }
    let half = ((window.hi - window.lo) / 2.0).max(series.mean_spacing());
    let after = series.events_in(initial_z, (initial_z + half).min(horizon)).len() as f64;
    let global_rate = series.len() as f64 / horizon;
    let local_rate = (after / half).max(global_rate);
    let alpha0 = (local_rate - global_rate).max(0.1 * global_rate);
    let tau0 = half.clamp(cfg.tau_bounds.0, cfg.tau_upper(horizon));

    let mut rng = rng_for(cfg.seed, &[tag::MULTISTART, m as u64, stream]);
    let mut starts = Vec::with_capacity(cfg.n_starts);
    let mut first = warm.clone();
    first.extend([alpha0.ln(), tau0.ln()]);
    starts.push(first);
    while starts.len() < cfg.n_starts {
        let mut x = vec![rng.random_range(0.05_f64.ln()..0.95_f64.ln()).exp()];
        x.extend(family.random_shape(cfg, &mut rng));
        x.extend_from_slice(&warm[1 + problem.shape_dim..]);
        let a = rng.random_range((0.1 * local_rate).ln()..(2.0 * local_rate).ln());
        let t = rng.random_range(10.0_f64.ln()..(horizon / 2.0).max(20.0).ln());
        x.extend([a, t]);
        starts.push(x);
    }

    let candidates = starts
        .iter()
        .map(|x| problem.optimize_theta(x, &onsets))
        .collect();
    let (mut best, mut model) = problem.best_model(candidates)?;

    let layout = Layout {
        shape_dim: problem.shape_dim,
        bursts: m,
    };
    let mut alternations = 0;
    while alternations < cfg.max_alternations {
        alternations += 1;
        let (z_new, cost_z) = search_onset(&problem, &best, layout, window)?;
        if !(cost_z < best.cost - cfg.alternation_tol) {
            break;
        }
        let mut moved = best.clone();
        moved.onsets[m - 1] = z_new;
        moved.cost = cost_z;
        let refit = problem.optimize_theta(&moved.x, &moved.onsets);
        let next = if refit.cost <= moved.cost { refit } else { moved };
        let improvement = best.cost - next.cost;
        match problem.to_model(&next) {
            Ok(fit) => {
                best = next;
                model = fit;
            }
            Err(_) => break,
        }
        if improvement < cfg.alternation_tol {
            break;
        }
    }

    Ok(ExtendedFit {
        fit: model,
        initial_z,
        alternations,
    })
}

/// Direct search of the last burst's onset over the window events.
fn search_onset(
    problem: &Problem,
    c: &Candidate,
    layout: Layout,
    window: &SearchWindow,
) -> Result<(f64, f64)> {
    let series = problem.series;
    let m = layout.bursts;
    let kernel = problem.family.build(c.x[0], &c.x[1..1 + layout.shape_dim]);
    let fixed: Vec<BurstTerm> = (0..m - 1)
        .map(|k| BurstTerm {
            z: c.onsets[k],
            alpha: c.x[layout.alpha(k)].exp(),
            tau: c.x[layout.tau(k)].exp(),
        })
        .collect();
    let alpha = c.x[layout.alpha(m - 1)].exp();
    let tau = c.x[layout.tau(m - 1)].exp();
    scan_onsets(series, &kernel, &fixed, alpha, tau, window)
}

/// Base bracket excluding one burst: `N/T + n(H2 - H1/T) + Σ α_k(K2 - K1/T)`.
fn partial_bracket(series: &EventSeries, kernel: &KernelSpec, fixed: &[BurstTerm]) -> Vec<f64> {
    let times = series.times();
    let horizon = series.horizon();
    let mut bracket = vec![series.len() as f64 / horizon; times.len()];
    let n = kernel.branching_ratio();
    if n != 0.0 {
        let kc = crate::likelihood::kernel_compensators(times, horizon, &kernel.mixture());
        let shift = kc.h1 / horizon;
        for (b, h) in bracket.iter_mut().zip(&kc.h2) {
            *b += n * (h - shift);
        }
    }
    for burst in fixed {
        let shift = burst.cumulative_to(horizon) / horizon;
        let start = times.partition_point(|&t| t <= burst.z);
        for b in bracket.iter_mut() {
            *b -= shift;
        }
        for (b, &t) in bracket[start..].iter_mut().zip(&times[start..]) {
            *b += burst.eval(t);
        }
    }
    bracket
}

fn scan_onsets(
    series: &EventSeries,
    kernel: &KernelSpec,
    fixed: &[BurstTerm],
    alpha: f64,
    tau: f64,
    window: &SearchWindow,
) -> Result<(f64, f64)> {
    let times = series.times();
    let horizon = series.horizon();
    let candidates = window.candidates(times);
    if candidates.is_empty() {
        return Err(Error::EmptyWindow {
            lo: window.lo,
            hi: window.hi,
        });
    }
    let bracket = partial_bracket(series, kernel, fixed);
    let mut best = (candidates[0], f64::INFINITY);
    for &z in candidates {
        let burst = BurstTerm { z, alpha, tau };
        let shift = burst.cumulative_to(horizon) / horizon;
        let start = times.partition_point(|&t| t <= z);
        let mut cost = 0.0;
        let mut feasible = true;
        for (i, &b) in bracket.iter().enumerate() {
            let mut v = b - shift;
            if i >= start {
                v += burst.eval(times[i]);
            }
            if !(v > 0.0) {
                feasible = false;
                break;
            }
            cost -= v.ln();
        }
        if feasible && cost < best.1 {
            best = (z, cost);
        }
    }
    Ok(best)
}

/// Onset of a burst `(alpha, tau)` minimizing the reduced cost over the event
/// times inside `window`, with the kernel and the other bursts held fixed.
pub fn optimize_z(
    series: &EventSeries,
    kernel: &KernelSpec,
    fixed: &[BurstTerm],
    alpha: f64,
    tau: f64,
    window: &SearchWindow,
) -> Result<f64> {
    scan_onsets(series, kernel, fixed, alpha, tau, window).map(|(z, _)| z)
}

/// Fits a model with one burst per window, added in order with earlier
/// onsets frozen. No selection criterion is applied.
pub fn fit(
    series: &EventSeries,
    family: KernelFamily,
    windows: &[SearchWindow],
    cfg: &FitConfig,
) -> Result<ModelFit> {
    let mut model = fit_base(series, family, cfg)?;
    for (k, w) in windows.iter().enumerate() {
        model = extend_fit(series, family, &model, w, cfg, k as u64)?.fit;
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::likelihood::reduced_cost;
    use crate::optim::numeric_gradient;

    fn toy() -> EventSeries {
        let times: Vec<f64> = (0..200)
            .map(|i| {
                let u = ((i * 7919) % 1000) as f64 / 1000.0;
                i as f64 * 0.5 + 0.4 * u
            })
            .collect();
        EventSeries::new(times, 100.0).unwrap()
    }

    #[test]
    fn objective_matches_reduced_cost() {
        let s = toy();
        let family = KernelFamily::default();
        let cfg = FitConfig::default();
        let mut obj = ReducedCostObjective::new(&s, family, family.shape_dim(&cfg), vec![30.2]);
        let x = [0.4, 0.2_f64.ln(), 0.5_f64.ln(), 5.0_f64.ln()];
        let g = obj.value(&x);
        let kernel = family.build(0.4, &x[1..2]);
        let b = BurstTerm::new(30.2, 0.5, 5.0).unwrap();
        let direct = reduced_cost(&s, &kernel, &[b]);
        assert!((g - direct).abs() < 1e-9 * direct.abs(), "{g} vs {direct}");
    }

    #[test]
    fn analytic_gradient_matches_differences() {
        let s = toy();
        for family in [KernelFamily::default(), KernelFamily::SingleExp, KernelFamily::DoubleExp] {
            let cfg = FitConfig {
                fix_exponent: false,
                ..FitConfig::default()
            };
            let dim = family.shape_dim(&cfg);
            let mut obj = ReducedCostObjective::new(&s, family, dim, vec![20.1, 61.0]);
            let mut x = vec![0.35];
            x.extend(match family {
                KernelFamily::ApproxPowerLaw { .. } => vec![0.3_f64.ln(), 2.2],
                KernelFamily::SingleExp => vec![1.5_f64.ln()],
                KernelFamily::DoubleExp => vec![0.6, 0.4_f64.ln(), 4.0_f64.ln()],
            });
            x.extend([0.8_f64.ln(), 4.0_f64.ln(), 0.3_f64.ln(), 12.0_f64.ln()]);
            let mut g = vec![0.0; x.len()];
            obj.eval(&x, &mut g);
            let fd = numeric_gradient(|p| obj.value(p), &x, 1e-6);
            for (i, (a, b)) in g.iter().zip(&fd).enumerate() {
                let scale = a.abs().max(b.abs()).max(1.0);
                assert!((a - b).abs() / scale < 1e-5, "{family:?} coord {i}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn poisson_fit_recovers_rate() {
        let s = toy();
        let cfg = FitConfig {
            n_starts: 3,
            ..FitConfig::default()
        };
        let fit = fit_base(&s, KernelFamily::default(), &cfg).unwrap();
        assert!(fit.mu > 0.0);
        assert_eq!(fit.n_params, 3);
        // Identity: μT + n·H1 = N at the optimum.
        let kc = crate::likelihood::kernel_compensators(s.times(), 100.0, &fit.kernel.mixture());
        let total = fit.mu * 100.0 + fit.branching_ratio() * kc.h1;
        assert!((total - 200.0).abs() < 1e-9);
    }

    #[test]
    fn onset_search_edge_cases() {
        let s = toy();
        let kernel = KernelSpec::approx_power_law(0.2, 0.1, 2.0).unwrap();
        let single = SearchWindow {
            lo: 50.05,
            hi: 50.45,
            guess: 50.2,
        };
        let only = s.events_in(50.05, 50.45);
        assert_eq!(only.len(), 1);
        assert_eq!(optimize_z(&s, &kernel, &[], 0.5, 10.0, &single).unwrap(), only[0]);
        let empty = SearchWindow {
            lo: 100.0 - 1e-9,
            hi: 100.0,
            guess: 100.0,
        };
        assert!(matches!(
            optimize_z(&s, &kernel, &[], 0.5, 10.0, &empty),
            Err(Error::EmptyWindow { .. })
        ));
    }
}
