//! Event-file ingestion and report output.
//!
//! Input is one record per line, `timestamp_seconds[,price]`, with `#`
//! comments. Timestamps are de-jittered, sorted and cut into tumbling windows
//! that are rebased to start at zero.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::detector::DetectionReport;
use crate::error::{Error, Result};
use crate::model::EventSeries;
use crate::rng::{rng_for, tag};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IngestConfig {
    /// Window length, seconds.
    pub window: f64,
    pub min_events: usize,
    /// De-jitter granularity g: each timestamp loses an independent U[0, g).
    pub jitter: f64,
    /// Absolute start of the first window; defaults to the first timestamp.
    pub start: Option<f64>,
    pub seed: u64,
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig {
            window: 3600.0,
            min_events: 2000,
            jitter: 0.1,
            start: None,
            seed: 0,
        }
    }
}

/// Raw records of an event file.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EventRecords {
    pub times: Vec<f64>,
    pub prices: Option<Vec<f64>>,
}

fn parse_field(field: &str, line: usize, what: &str) -> Result<f64> {
    let v: f64 = field.trim().parse().map_err(|_| Error::Parse {
        line,
        msg: format!("invalid {what} '{}'", field.trim()),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            line,
            msg: format!("non-finite {what}"),
        });
    }
    Ok(v)
}

/// Parses `timestamp[,price]` records. Timestamps may decrease by less than
/// `tolerance` (the jitter granularity); larger decreases are errors.
pub fn parse_events(text: &str, tolerance: f64) -> Result<EventRecords> {
    let mut times = Vec::new();
    let mut prices: Vec<f64> = Vec::new();
    let mut with_price: Option<bool> = None;
    for (k, raw) in text.lines().enumerate() {
        let line = k + 1;
        let s = raw.trim();
        if s.is_empty() || s.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = s.split(',').collect();
        if fields.len() > 2 {
            return Err(Error::Parse {
                line,
                msg: format!("expected 'timestamp[,price]', got {} fields", fields.len()),
            });
        }
        let t = parse_field(fields[0], line, "timestamp")?;
        if let Some(&prev) = times.last() {
            if t < prev && !(prev - t < tolerance) {
                return Err(Error::Parse {
                    line,
                    msg: format!("timestamp {t} precedes {prev}"),
                });
            }
        }
        let has_price = fields.len() == 2 && !fields[1].trim().is_empty();
        match with_price {
            None => with_price = Some(has_price),
            Some(w) if w != has_price => {
                return Err(Error::Parse {
                    line,
                    msg: "price column present on some lines only".into(),
                })
            }
            _ => {}
        }
        if has_price {
            let p = parse_field(fields[1], line, "price")?;
            if !(p > 0.0) {
                return Err(Error::Parse {
                    line,
                    msg: format!("price {p} is not positive"),
                });
            }
            prices.push(p);
        }
        times.push(t);
    }
    Ok(EventRecords {
        times,
        prices: with_price.unwrap_or(false).then_some(prices),
    })
}

pub fn read_events(path: &Path, tolerance: f64) -> Result<EventRecords> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_events(&text, tolerance)
}

/// Subtracts U[0, g) from every timestamp and sorts; exact ties are re-drawn.
pub fn dejitter(records: &EventRecords, g: f64, seed: u64) -> Result<EventRecords> {
    if !(g >= 0.0) {
        return Err(Error::InvalidParameter(format!("jitter {g}")));
    }
    let n = records.times.len();
    let mut times = records.times.clone();
    if g > 0.0 {
        let mut rng = rng_for(seed, &[tag::JITTER]);
        for t in times.iter_mut() {
            *t -= rng.random_range(0.0..g);
        }
        for _ in 0..64 {
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| times[a].total_cmp(&times[b]).then(a.cmp(&b)));
            let ties: Vec<usize> = order
                .windows(2)
                .filter(|w| times[w[0]] == times[w[1]])
                .map(|w| w[1])
                .collect();
            if ties.is_empty() {
                break;
            }
            for i in ties {
                times[i] = records.times[i] - rng.random_range(0.0..g);
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| times[a].total_cmp(&times[b]).then(a.cmp(&b)));
    let sorted: Vec<f64> = order.iter().map(|&i| times[i]).collect();
    if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::InvalidSeries(format!(
            "duplicate timestamp {} (enable jitter to break ties)",
            w[0]
        )));
    }
    Ok(EventRecords {
        times: sorted,
        prices: records
            .prices
            .as_ref()
            .map(|p| order.iter().map(|&i| p[i]).collect()),
    })
}

/// Cuts sorted records into tumbling windows of `cfg.window` seconds and keeps
/// those with at least `cfg.min_events` events, rebased to `[0, window]`.
pub fn windows(records: &EventRecords, cfg: &IngestConfig) -> Result<Vec<EventSeries>> {
    if !(cfg.window > 0.0) {
        return Err(Error::InvalidParameter(format!("window {}", cfg.window)));
    }
    let times = &records.times;
    let Some(&first) = times.first() else {
        return Ok(Vec::new());
    };
    let start = cfg.start.unwrap_or(first);
    let last = *times.last().unwrap();
    let mut out = Vec::new();
    let mut k = 0usize;
    loop {
        let lo = start + k as f64 * cfg.window;
        if lo > last {
            break;
        }
        let hi = lo + cfg.window;
        let a = times.partition_point(|&t| t < lo);
        let b = times.partition_point(|&t| t < hi);
        if b - a >= cfg.min_events.max(1) {
            let rebased: Vec<f64> = times[a..b].iter().map(|t| t - lo).collect();
            let marks = records.prices.as_ref().map(|p| p[a..b].to_vec());
            out.push(EventSeries::with_marks(rebased, cfg.window, marks)?.at_offset(lo));
        }
        k += 1;
    }
    Ok(out)
}

/// Reads, de-jitters and windows an event file.
pub fn ingest(path: &Path, cfg: &IngestConfig) -> Result<Vec<EventSeries>> {
    let raw = read_events(path, cfg.jitter)?;
    let clean = dejitter(&raw, cfg.jitter, cfg.seed)?;
    windows(&clean, cfg)
}

/// Writes a series as `timestamp[,price]` lines in absolute time.
pub fn write_events(series: &EventSeries, path: &Path) -> Result<()> {
    let mut text = String::with_capacity(series.len() * 24);
    for (i, t) in series.times().iter().enumerate() {
        let abs = t + series.offset();
        match series.marks() {
            Some(m) => text.push_str(&format!("{abs},{}\n", m[i])),
            None => text.push_str(&format!("{abs}\n")),
        }
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Structured per-window summary.
pub fn summary(report: &DetectionReport, window: usize) -> serde_json::Value {
    let base = report.base();
    let bursts: Vec<serde_json::Value> = report
        .accepted
        .iter()
        .map(|a| {
            let delta_bic = report
                .steps
                .iter()
                .find(|s| s.candidate == a.candidate)
                .and_then(|s| s.delta_bic);
            json!({
                "z": a.burst.z,
                "z_absolute": a.z_absolute,
                "alpha": a.burst.alpha,
                "tau": a.burst.tau,
                "fertility": a.fertility,
                "delta_bic": delta_bic,
                "delta_score": a.delta_score,
                "initial_z": a.initial_z,
                "boundary": a.boundary,
                "tau_capped": a.tau_capped,
            })
        })
        .collect();
    let fit = report.final_fit();
    json!({
        "window": window,
        "offset": report.offset,
        "horizon": report.horizon,
        "n_events": report.n_events,
        "criterion": report.criterion,
        "M": report.accepted.len(),
        "base_fit": {
            "mu": base.mu,
            "n": base.branching_ratio(),
            "kernel": base.kernel,
            "log_lik": base.log_lik,
            "bic": base.bic,
            "aic": base.aic,
        },
        "final_fit": {
            "mu": fit.mu,
            "n": fit.branching_ratio(),
            "kernel": fit.kernel,
            "log_lik": fit.log_lik,
            "bic": fit.bic,
            "aic": fit.aic,
        },
        "bursts": bursts,
        "steps": report.steps,
        "candidates": report.candidates,
        "warnings": report.warnings,
    })
}

/// Writes `window_XXXX_summary.json`, and `window_XXXX_delta.csv` when Δ values are given.
pub fn emit_report(
    report: &DetectionReport,
    window: usize,
    delta: Option<(&EventSeries, &[f64])>,
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    let path = dir.join(format!("window_{window:04}_summary.json"));
    let text = serde_json::to_string_pretty(&summary(report, window))
        .map_err(|e| Error::Serialization(e.to_string()))?;
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    written.push(path);
    if let Some((series, values)) = delta {
        let path = dir.join(format!("window_{window:04}_delta.csv"));
        crate::preid::write_delta_csv(series, values, &path)?;
        written.push(path);
    }
    Ok(written)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BurstRow {
    pub window: usize,
    pub offset: f64,
    pub z: f64,
    pub z_absolute: f64,
    pub alpha: f64,
    pub tau: f64,
    pub fertility: f64,
    pub delta_score: f64,
    pub boundary: bool,
    pub tau_capped: bool,
}

pub fn burst_rows(reports: &[(usize, DetectionReport)]) -> Vec<BurstRow> {
    reports
        .iter()
        .flat_map(|(w, r)| {
            r.accepted.iter().map(move |a| BurstRow {
                window: *w,
                offset: r.offset,
                z: a.burst.z,
                z_absolute: a.z_absolute,
                alpha: a.burst.alpha,
                tau: a.burst.tau,
                fertility: a.fertility,
                delta_score: a.delta_score,
                boundary: a.boundary,
                tau_capped: a.tau_capped,
            })
        })
        .collect()
}

/// Burst list across windows, for downstream matching.
pub fn write_burst_list(reports: &[(usize, DetectionReport)], path: &Path) -> Result<()> {
    crate::mc::write_csv(&burst_rows(reports), path)
}

/// Reads the `z_absolute` column of a burst list, or the first column of a
/// plain time list.
pub fn read_times(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'));
    let mut column = 0;
    let mut out = Vec::new();
    if let Some((k, first)) = lines.next() {
        let fields: Vec<&str> = first.split(',').map(str::trim).collect();
        if fields[0].parse::<f64>().is_err() {
            column = fields
                .iter()
                .position(|f| *f == "z_absolute" || *f == "time" || *f == "t")
                .unwrap_or(0);
        } else {
            out.push(parse_field(fields[0], k + 1, "time")?);
        }
    }
    for (k, line) in lines {
        let field = line.split(',').nth(column).ok_or_else(|| Error::Parse {
            line: k + 1,
            msg: format!("missing column {column}"),
        })?;
        out.push(parse_field(field, k + 1, "time")?);
    }
    out.sort_by(f64::total_cmp);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_prices() {
        let r = parse_events("# header\n1.0,100.5\n\n2.5,100.6\n", 0.0).unwrap();
        assert_eq!(r.times, vec![1.0, 2.5]);
        assert_eq!(r.prices, Some(vec![100.5, 100.6]));
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        match parse_events("1.0\n# c\nabc\n", 0.0) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        match parse_events("5.0\n4.0\n", 0.1) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        assert!(parse_events("5.0\n4.95\n", 0.1).is_ok());
    }

    #[test]
    fn zero_jitter_is_identity() {
        let r = EventRecords {
            times: vec![1.25, 3.5, 7.0],
            prices: None,
        };
        assert_eq!(dejitter(&r, 0.0, 1).unwrap().times, r.times);
        let dup = EventRecords {
            times: vec![1.0, 1.0],
            prices: None,
        };
        assert!(dejitter(&dup, 0.0, 1).is_err());
    }

    #[test]
    fn ties_are_broken() {
        let r = EventRecords {
            times: vec![0.1; 1000],
            prices: None,
        };
        let d = dejitter(&r, 0.1, 7).unwrap();
        assert!(d.times.windows(2).all(|w| w[1] > w[0]));
        assert!(d.times.iter().all(|t| *t > 0.0 && *t <= 0.1));
    }

    #[test]
    fn windowing_arithmetic() {
        let r = EventRecords {
            times: (0..10800).map(|i| i as f64).collect(),
            prices: None,
        };
        let cfg = IngestConfig {
            min_events: 2000,
            jitter: 0.0,
            ..IngestConfig::default()
        };
        let w = windows(&r, &cfg).unwrap();
        assert_eq!(w.len(), 3);
        assert!(w.iter().all(|s| s.len() == 3600 && s.horizon() == 3600.0));
        assert_eq!(w[2].offset(), 7200.0);
        assert_eq!(w[2].times()[0], 0.0);
    }
}
