use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde_json::json;

use ibdetect::detector::{detect, Criterion, DetectionReport, DetectorConfig, StopRule};
use ibdetect::fit::{fit, fit_base, FitConfig, SearchWindow};
use ibdetect::io::{self, IngestConfig};
use ibdetect::jumps::{self, JumpConfig, PricePath, VolEstimator};
use ibdetect::mc::{self, ExperimentGrid, ScenarioFamily};
use ibdetect::preid::{delta_series, rank_candidates, PreIdConfig};
use ibdetect::simulate::{simulate, SimScenario};
use ibdetect::{BurstTerm, EventSeries, KernelSpec};

#[derive(Parser)]
#[command(name = "ibdetect", version, about = "Detect exogenous intensity bursts in event-time data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a Hawkes process with bursts and write an event file.
    Simulate(SimulateArgs),
    /// Rank candidate burst onsets in every window.
    Preid(DataArgs),
    /// Run the full detection procedure on every window.
    Detect(DataArgs),
    /// Fit the model without selection, optionally with bursts near given onsets.
    Fit(FitArgs),
    /// Flag price jumps and returns around detected bursts.
    Jumps(JumpArgs),
    /// Match two time lists within a tolerance.
    Match(MatchArgs),
    /// Run a Monte Carlo validation experiment.
    Mc(McArgs),
}

#[derive(Args, Clone)]
struct Common {
    /// Window length in seconds.
    #[arg(long, default_value_t = 3600.0)]
    window: f64,
    /// Minimum number of events for a window to be analysed.
    #[arg(long = "min-events", default_value_t = 2000)]
    min_events: usize,
    /// De-jitter granularity in seconds (0 disables).
    #[arg(long, default_value_t = 0.1)]
    jitter: f64,
    /// Absolute start time of the first window (defaults to the first event).
    #[arg(long)]
    start: Option<f64>,
    /// Pre-identification averaging time scale in seconds.
    #[arg(long, default_value_t = 100.0)]
    kappa: f64,
    /// Exclusion radius and onset search-window width in seconds.
    #[arg(long, default_value_t = 300.0)]
    w: f64,
    /// Selection criterion: bic or aic.
    #[arg(long, default_value = "bic")]
    criterion: String,
    /// Seed for de-jittering and optimizer starts.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Most bursts accepted per window.
    #[arg(long = "max-bursts", default_value_t = 10)]
    max_bursts: usize,
    /// Flag bursts with a longer relaxation time (default 1.5 x window).
    #[arg(long = "tau-cap")]
    tau_cap: Option<f64>,
    /// Further candidates examined after a rejection.
    #[arg(long, default_value_t = 0)]
    lookahead: usize,
    /// Number of optimizer starts.
    #[arg(long, default_value_t = 8)]
    starts: usize,
    /// Estimate the power-law exponent instead of holding it at 2.
    #[arg(long = "free-exponent")]
    free_exponent: bool,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

impl Common {
    fn ingest(&self) -> IngestConfig {
        IngestConfig {
            window: self.window,
            min_events: self.min_events,
            jitter: self.jitter,
            start: self.start,
            seed: self.seed,
        }
    }

    fn preid(&self) -> PreIdConfig {
        PreIdConfig {
            kappa: self.kappa,
            w: self.w,
            ..PreIdConfig::default()
        }
    }

    fn fit(&self) -> FitConfig {
        FitConfig {
            n_starts: self.starts,
            fix_exponent: !self.free_exponent,
            seed: self.seed,
            ..FitConfig::default()
        }
    }

    fn detector(&self) -> Result<DetectorConfig> {
        Ok(DetectorConfig {
            preid: self.preid(),
            fit: self.fit(),
            criterion: self.criterion.parse::<Criterion>()?,
            stop_rule: if self.lookahead == 0 {
                StopRule::FirstFailure
            } else {
                StopRule::Lookahead(self.lookahead)
            },
            max_bursts: self.max_bursts,
            tau_cap: self.tau_cap,
            min_events: 1,
            ..DetectorConfig::default()
        })
    }
}

#[derive(Args)]
struct DataArgs {
    /// Event file: one `timestamp[,price]` per line.
    input: PathBuf,
    #[command(flatten)]
    common: Common,
    /// Also write Δ(t_i) for every window.
    #[arg(long = "write-delta")]
    write_delta: bool,
}

#[derive(Args)]
struct FitArgs {
    input: PathBuf,
    #[command(flatten)]
    common: Common,
    /// Absolute onset guesses; one burst is fitted in a window of width w around each.
    #[arg(long = "onset")]
    onsets: Vec<f64>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Baseline rate; ignored when --target-size is given.
    #[arg(long, default_value_t = 1.0)]
    mu: f64,
    #[arg(long = "target-size")]
    target_size: Option<f64>,
    /// Branching ratio.
    #[arg(long, default_value_t = 0.5)]
    n: f64,
    /// Kernel: pl, se or de.
    #[arg(long, default_value = "pl")]
    kernel: String,
    #[arg(long, default_value_t = 0.1)]
    tau0: f64,
    #[arg(long, default_value_t = 2.0)]
    p: f64,
    /// Single-exponential rate, or fast rate of the double exponential.
    #[arg(long, default_value_t = 1.0)]
    b: f64,
    /// Slow rate of the double exponential.
    #[arg(long = "b-slow", default_value_t = 0.1)]
    b_slow: f64,
    /// Weight of the fast component of the double exponential.
    #[arg(long, default_value_t = 0.7)]
    a: f64,
    /// Burst as `z,alpha,tau`; repeatable.
    #[arg(long = "burst")]
    bursts: Vec<String>,
    #[arg(long, default_value_t = 3600.0)]
    horizon: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Use the thinning simulator instead of the cluster simulator.
    #[arg(long)]
    thinning: bool,
    #[arg(long, default_value = "events.csv")]
    out: PathBuf,
}

#[derive(Args)]
struct JumpArgs {
    /// Event file with a price column.
    input: PathBuf,
    #[arg(long, default_value_t = 4.0)]
    theta: f64,
    /// Volatility window length in returns.
    #[arg(long, default_value_t = 120)]
    k: usize,
    /// Grid spacing in seconds.
    #[arg(long, default_value_t = 60.0)]
    dt: f64,
    /// Use realized variance instead of bipower variation.
    #[arg(long = "realized-variance")]
    realized_variance: bool,
    /// Burst list (as written by `detect`) for anchored returns.
    #[arg(long)]
    bursts: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct MatchArgs {
    a: PathBuf,
    b: PathBuf,
    /// Tolerance in seconds.
    #[arg(long, default_value_t = 60.0)]
    tol: f64,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct McArgs {
    /// no_burst, one_burst_fixed_window, preid_sweep, one_burst_full, two_bursts or misspecified.
    family: String,
    #[arg(long)]
    reps: Option<usize>,
    /// Paper-scale grid.
    #[arg(long)]
    full: bool,
    #[arg(long, value_delimiter = ',')]
    branching: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    sizes: Option<Vec<f64>>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 8)]
    starts: usize,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    use ibdetect::Error as E;
    match err.downcast_ref::<E>() {
        Some(E::Parse { .. } | E::InvalidSeries(_)) => 3,
        Some(E::FitFailure(_) | E::EmptyWindow { .. } | E::NotEnoughData(_)) => 4,
        Some(E::Io { .. }) => 5,
        Some(E::InvalidParameter(_) | E::Critical(_) | E::InfeasibleTarget(_)) => 2,
        _ if err.downcast_ref::<std::io::Error>().is_some() => 5,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => run_simulate(a),
        Command::Preid(a) => run_preid(a),
        Command::Detect(a) => run_detect(a),
        Command::Fit(a) => run_fit(a),
        Command::Jumps(a) => run_jumps(a),
        Command::Match(a) => run_match(a),
        Command::Mc(a) => run_mc(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| ibdetect::Error::Io {
        path: dir.display().to_string(),
        source: e,
    })?;
    Ok(())
}

fn write_json(value: &serde_json::Value, path: &Path) -> Result<()> {
    mc::write_json(value, path)?;
    Ok(())
}

fn load_windows(input: &Path, common: &Common) -> Result<Vec<EventSeries>> {
    let windows = io::ingest(input, &common.ingest())?;
    if windows.is_empty() {
        return Err(ibdetect::Error::NotEnoughData(format!(
            "no window of {} s holds {} events",
            common.window, common.min_events
        ))
        .into());
    }
    Ok(windows)
}

fn parse_burst(s: &str) -> Result<BurstTerm> {
    let v: Vec<f64> = s
        .split(',')
        .map(|x| x.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .with_context(|| format!("burst '{s}' must be z,alpha,tau"))?;
    if v.len() != 3 {
        bail!("burst '{s}' must be z,alpha,tau");
    }
    Ok(BurstTerm::new(v[0], v[1], v[2])?)
}

fn run_simulate(a: SimulateArgs) -> Result<()> {
    let kernel = match a.kernel.as_str() {
        "pl" => KernelSpec::approx_power_law(a.n, a.tau0, a.p)?,
        "se" => KernelSpec::single_exp(a.n, a.b)?,
        "de" => KernelSpec::double_exp(a.n, a.a, a.b, a.b_slow)?,
        other => bail!("unknown kernel '{other}' (pl, se or de)"),
    };
    let bursts = a.bursts.iter().map(|s| parse_burst(s)).collect::<Result<Vec<_>>>()?;
    let scenario = SimScenario {
        mu: a.mu,
        kernel,
        bursts,
        horizon: a.horizon,
        seed: a.seed,
        target_size: a.target_size,
    };
    let series = if a.thinning {
        ibdetect::simulate::simulate_thinning(&scenario)?
    } else {
        simulate(&scenario)?
    };
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    io::write_events(&series, &a.out)?;
    eprintln!("wrote {} events to {}", series.len(), a.out.display());
    Ok(())
}

fn run_preid(a: DataArgs) -> Result<()> {
    let windows = load_windows(&a.input, &a.common)?;
    let cfg = a.common.preid();
    ensure_dir(&a.common.out)?;
    let mut rows = Vec::new();
    for (k, s) in windows.iter().enumerate() {
        let cands = rank_candidates(s, &cfg)?;
        for (rank, c) in cands.iter().enumerate() {
            rows.push(json!({
                "window": k,
                "rank": rank,
                "z_bar": c.z_bar,
                "z_bar_absolute": c.z_bar + s.offset(),
                "lo": c.lo,
                "hi": c.hi,
                "score": c.score,
                "boundary": c.boundary,
            }));
        }
        if a.write_delta {
            let path = a.common.out.join(format!("window_{k:04}_delta.csv"));
            ibdetect::preid::write_delta_csv(s, &delta_series(s, cfg.kappa), &path)?;
        }
    }
    write_json(&json!({ "config": cfg, "candidates": rows }), &a.common.out.join("candidates.json"))
}

fn run_detect(a: DataArgs) -> Result<()> {
    let windows = load_windows(&a.input, &a.common)?;
    let cfg = a.common.detector()?;
    ensure_dir(&a.common.out)?;
    let results: Vec<(usize, std::result::Result<DetectionReport, ibdetect::Error>)> = windows
        .par_iter()
        .enumerate()
        .map(|(k, s)| (k, detect(s, &cfg)))
        .collect();
    let mut reports = Vec::new();
    let mut failures = Vec::new();
    for ((k, r), series) in results.into_iter().zip(&windows) {
        match r {
            Ok(report) => {
                let delta = a.write_delta.then(|| delta_series(series, cfg.preid.kappa));
                io::emit_report(&report, k, delta.as_deref().map(|d| (series, d)), &a.common.out)?;
                reports.push((k, report));
            }
            Err(e) => {
                eprintln!("window {k}: {e}");
                failures.push(json!({ "window": k, "offset": series.offset(), "error": e.to_string() }));
            }
        }
    }
    io::write_burst_list(&reports, &a.common.out.join("bursts.csv"))?;
    write_json(
        &json!({
            "windows": windows.len(),
            "analysed": reports.len(),
            "bursts": reports.iter().map(|(_, r)| r.accepted.len()).sum::<usize>(),
            "failures": failures,
            "config": cfg,
        }),
        &a.common.out.join("run.json"),
    )?;
    if reports.is_empty() {
        return Err(ibdetect::Error::FitFailure("detection failed in every window".into()).into());
    }
    Ok(())
}

fn run_fit(a: FitArgs) -> Result<()> {
    let windows = load_windows(&a.input, &a.common)?;
    let cfg = a.common.fit();
    let family = ibdetect::fit::KernelFamily::default();
    ensure_dir(&a.common.out)?;
    let mut fits = Vec::new();
    for (k, s) in windows.iter().enumerate() {
        let search: Vec<SearchWindow> = a
            .onsets
            .iter()
            .map(|z| z - s.offset())
            .filter(|z| (0.0..=s.horizon()).contains(z))
            .map(|z| SearchWindow::centered(z, a.common.w, s.horizon()))
            .collect();
        let model = if search.is_empty() {
            fit_base(s, family, &cfg)?
        } else {
            fit(s, family, &search, &cfg)?
        };
        fits.push(json!({ "window": k, "offset": s.offset(), "fit": model }));
    }
    write_json(&json!({ "fits": fits }), &a.common.out.join("fits.json"))
}

fn run_jumps(a: JumpArgs) -> Result<()> {
    let cfg = JumpConfig {
        theta: a.theta,
        k: a.k,
        dt: a.dt,
        estimator: if a.realized_variance {
            VolEstimator::RealizedVariance
        } else {
            VolEstimator::Bipower
        },
    };
    cfg.validate()?;
    let records = io::read_events(&a.input, f64::INFINITY)?;
    let prices = records
        .prices
        .clone()
        .ok_or_else(|| ibdetect::Error::InvalidSeries("input has no price column".into()))?;
    let mut order: Vec<usize> = (0..records.times.len()).collect();
    order.sort_by(|&x, &y| records.times[x].total_cmp(&records.times[y]).then(x.cmp(&y)));
    let times: Vec<f64> = order.iter().map(|&i| records.times[i]).collect();
    let prices: Vec<f64> = order.iter().map(|&i| prices[i]).collect();
    let start = times[0];
    let end = *times.last().unwrap();
    let path = PricePath::new(times, prices, end)?;
    let grid = path.resample(cfg.dt, start, end)?;
    let flags = jumps::scan_jumps(&grid, &cfg)?;
    ensure_dir(&a.out)?;
    mc::write_csv(&flags, &a.out.join("returns.csv"))?;
    let jump_times: Vec<serde_json::Value> = flags.iter().filter(|f| f.jump).map(|f| json!(f.time)).collect();
    let jump_csv: String = std::iter::once("time".to_string())
        .chain(flags.iter().filter(|f| f.jump).map(|f| format!("{}", f.time)))
        .collect::<Vec<_>>()
        .join("\n")
        + "\n";
    fs::write(a.out.join("jumps.csv"), jump_csv)?;

    if let Some(burst_file) = &a.bursts {
        let rows = read_burst_rows(burst_file)?;
        let mut out = Vec::new();
        for (z, tau) in rows {
            let sigma = match jumps::vol_before(&grid, z - 10.0, &cfg) {
                Ok(s) if s > 0.0 => s,
                _ => {
                    out.push(AnchoredRow::missing(z, tau));
                    continue;
                }
            };
            let r = jumps::burst_anchored_returns(&path, z, tau, sigma);
            out.push(AnchoredRow {
                z,
                tau,
                sigma_loc: Some(sigma),
                r1: r.one_minute.r,
                r5: r.five_minutes.r,
                r_tau: r.relaxation.r,
                jump1: r.one_minute.is_jump(cfg.theta)?,
                jump5: r.five_minutes.is_jump(cfg.theta)?,
                jump_tau: r.relaxation.is_jump(cfg.theta)?,
                complete: r.complete(),
            });
        }
        mc::write_csv(&out, &a.out.join("anchored.csv"))?;
    }
    write_json(
        &json!({ "config": cfg, "returns": flags.len(), "jumps": jump_times }),
        &a.out.join("jumps.json"),
    )
}

#[derive(serde::Serialize)]
struct AnchoredRow {
    z: f64,
    tau: f64,
    sigma_loc: Option<f64>,
    r1: Option<f64>,
    r5: Option<f64>,
    r_tau: Option<f64>,
    jump1: Option<bool>,
    jump5: Option<bool>,
    jump_tau: Option<bool>,
    complete: bool,
}

impl AnchoredRow {
    fn missing(z: f64, tau: f64) -> Self {
        AnchoredRow {
            z,
            tau,
            sigma_loc: None,
            r1: None,
            r5: None,
            r_tau: None,
            jump1: None,
            jump5: None,
            jump_tau: None,
            complete: false,
        }
    }
}

/// `(z_absolute, tau)` pairs from a burst list.
fn read_burst_rows(path: &Path) -> Result<Vec<(f64, f64)>> {
    let mut rdr = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let rows: Vec<io::BurstRow> = rdr
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| anyhow!(ibdetect::Error::Parse { line: 0, msg: e.to_string() }))?;
    Ok(rows.into_iter().map(|r| (r.z_absolute, r.tau)).collect())
}

fn run_match(a: MatchArgs) -> Result<()> {
    let ta = io::read_times(&a.a)?;
    let tb = io::read_times(&a.b)?;
    let m = jumps::match_events(&ta, &tb, a.tol);
    ensure_dir(&a.out)?;
    let pairs: Vec<serde_json::Value> = m
        .pairs
        .iter()
        .map(|p| json!({ "t_a": ta[p.a], "t_b": tb[p.b], "lag": p.lag }))
        .collect();
    let mut csv_text = String::from("t_a,t_b,lag\n");
    for p in &m.pairs {
        csv_text.push_str(&format!("{},{},{}\n", ta[p.a], tb[p.b], p.lag));
    }
    fs::write(a.out.join("matches.csv"), csv_text)?;
    write_json(
        &json!({
            "tolerance": a.tol,
            "count_a": ta.len(),
            "count_b": tb.len(),
            "matched": m.pairs.len(),
            "fraction_a": m.fraction_a,
            "fraction_b": m.fraction_b,
            "pairs": pairs,
        }),
        &a.out.join("match.json"),
    )
}

fn run_mc(a: McArgs) -> Result<()> {
    let family: ScenarioFamily = a.family.parse()?;
    let mut grid = if a.full {
        ExperimentGrid::full(family)
    } else {
        ExperimentGrid::desk(family)
    };
    if let Some(r) = a.reps {
        grid.reps = r;
    }
    if let Some(b) = a.branching {
        grid.branching = b;
    }
    if let Some(s) = a.sizes {
        grid.sizes = s;
    }
    grid.seed = a.seed;
    grid.detector.fit.n_starts = a.starts;
    for p in mc::run_and_write(&grid, &a.out)? {
        eprintln!("wrote {}", p.display());
    }
    Ok(())
}
