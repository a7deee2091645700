//! Text formats for trial sets.
//!
//! * spike-times-text: one trial per line, whitespace-separated spike times in
//!   seconds; lines starting with `#` are comments.
//! * binned-csv: one trial per row of comma-separated integer counts, with an
//!   optional header row.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{FeatureSeries, SpikeTrain, TrialSet};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrialFormat {
    SpikeTimesText,
    BinnedCsv,
}

impl std::str::FromStr for TrialFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spike-times-text" | "text" => Ok(Self::SpikeTimesText),
            "binned-csv" | "csv" => Ok(Self::BinnedCsv),
            other => Err(Error::param(format!("unknown trial format `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoadOptions {
    pub format: TrialFormat,
    pub dt: f64,
    pub duration: f64,
    /// Skip the first non-empty row of a binned-csv file.
    #[serde(default)]
    pub header: bool,
}

/// Number of bins covering `duration`, tolerant to representation error in
/// `duration / dt`.
pub(crate) fn bins_for(duration: f64, dt: f64) -> usize {
    snap(duration / dt).ceil() as usize
}

fn snap(r: f64) -> f64 {
    let nearest = r.round();
    if (r - nearest).abs() <= 1e-9 * r.abs().max(1.0) {
        nearest
    } else {
        r
    }
}

fn check_grid(dt: f64, duration: f64) -> Result<usize> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::param(format!("bin width must be positive, got {dt}")));
    }
    if !(duration >= dt && duration.is_finite()) {
        return Err(Error::param(format!(
            "duration {duration} must be at least one bin width ({dt})"
        )));
    }
    Ok(bins_for(duration, dt))
}

pub fn load_trials(path: impl AsRef<Path>, opts: &LoadOptions) -> Result<TrialSet> {
    let text = std::fs::read_to_string(path)?;
    match opts.format {
        TrialFormat::SpikeTimesText => parse_spike_times(&text, opts.dt, opts.duration),
        TrialFormat::BinnedCsv => parse_binned_csv(&text, opts.dt, opts.duration, opts.header),
    }
}

/// Parses spike-times-text. Times map to bin `floor(t / dt)`; times outside
/// `[0, duration)` are rejected.
pub fn parse_spike_times(text: &str, dt: f64, duration: f64) -> Result<TrialSet> {
    let n_bins = check_grid(dt, duration)?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim_start().starts_with('#') {
            continue;
        }
        let mut counts = vec![0u32; n_bins];
        for tok in line.split_ascii_whitespace() {
            let t: f64 = tok.parse().map_err(|_| Error::Parse {
                line: lineno,
                msg: format!("invalid spike time `{tok}`"),
            })?;
            if !t.is_finite() || t < 0.0 || t >= duration {
                return Err(Error::Range(format!(
                    "line {lineno}: spike time {t} outside [0, {duration})"
                )));
            }
            let bin = snap(t / dt).floor() as usize;
            if bin >= n_bins {
                return Err(Error::Range(format!(
                    "line {lineno}: spike time {t} falls past the last bin"
                )));
            }
            counts[bin] += 1;
        }
        rows.push(counts);
    }
    if rows.is_empty() {
        return Err(Error::Parse {
            line: 0,
            msg: "no trials found".into(),
        });
    }
    TrialSet::from_counts(rows, dt)
}

/// Parses binned-csv. Every row must hold exactly `ceil(duration / dt)`
/// counts.
pub fn parse_binned_csv(text: &str, dt: f64, duration: f64, header: bool) -> Result<TrialSet> {
    let n_bins = check_grid(dt, duration)?;
    let mut rows = Vec::new();
    let mut skipped_header = !header;
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !skipped_header {
            skipped_header = true;
            continue;
        }
        let row = line
            .split(',')
            .map(|tok| {
                tok.trim().parse::<u32>().map_err(|_| Error::Parse {
                    line: lineno,
                    msg: format!("invalid count `{}`", tok.trim()),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if row.len() != n_bins {
            return Err(Error::Shape(format!(
                "line {lineno}: {} counts, expected {n_bins}",
                row.len()
            )));
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Parse {
            line: 0,
            msg: "no trials found".into(),
        });
    }
    TrialSet::from_counts(rows, dt)
}

/// Spike times at bin left edges, one line per trial; multi-count bins
/// repeat the time.
pub fn write_spike_times(set: &TrialSet) -> String {
    let mut out = String::new();
    for tr in set.trials() {
        let mut first = true;
        for (t, c) in tr.spikes() {
            let time = t as f64 * tr.dt();
            for _ in 0..c {
                if !first {
                    out.push(' ');
                }
                let _ = write!(out, "{time}");
                first = false;
            }
        }
        out.push('\n');
    }
    out
}

pub fn write_binned_csv(set: &TrialSet, header: bool) -> String {
    let mut out = String::new();
    if header {
        let names: Vec<String> = (0..set.n_bins()).map(|t| format!("bin{t}")).collect();
        out.push_str(&names.join(","));
        out.push('\n');
    }
    for tr in set.trials() {
        let row: Vec<String> = tr.counts().iter().map(u32::to_string).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn write_feature_csv(series: &FeatureSeries) -> String {
    let mut out = String::from("index,value\n");
    for (i, v) in series.values.iter().enumerate() {
        let _ = writeln!(out, "{i},{v}");
    }
    out
}

impl SpikeTrain {
    /// Builds a train from spike times in seconds on a grid of `n_bins` bins.
    pub fn from_spike_times(times: &[f64], dt: f64, n_bins: usize) -> Result<Self> {
        let duration = n_bins as f64 * dt;
        let mut counts = vec![0u32; n_bins];
        for &t in times {
            if !t.is_finite() || t < 0.0 || t >= duration {
                return Err(Error::Range(format!(
                    "spike time {t} outside [0, {duration})"
                )));
            }
            let bin = (snap(t / dt).floor() as usize).min(n_bins - 1);
            counts[bin] += 1;
        }
        SpikeTrain::new(counts, dt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spike_times_examples() {
        let s = parse_spike_times("0.5 1.5\n", 1.0, 3.0).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s.trials()[0].counts(), &[1, 1, 0]);

        let e = parse_spike_times("\n", 1.0, 2.0).unwrap();
        assert_eq!(e.trials()[0].counts(), &[0, 0]);

        assert!(matches!(
            parse_spike_times("2.0\n", 1.0, 2.0),
            Err(Error::Range(_))
        ));
    }

    #[test]
    fn comments_and_parse_errors() {
        let s = parse_spike_times("# header\n0.1\n0.2 0.25\n", 0.1, 0.5).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.trials()[1].counts(), &[0, 0, 2, 0, 0]);
        match parse_spike_times("0.1\n0.2 abc\n", 0.1, 0.5) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
        assert!(matches!(
            parse_spike_times("-0.1\n", 0.1, 0.5),
            Err(Error::Range(_))
        ));
    }

    #[test]
    fn binning_is_robust_to_decimal_representation() {
        let s = parse_spike_times("0.003 0.007\n", 0.001, 0.01).unwrap();
        assert_eq!(s.trials()[0].counts()[3], 1);
        assert_eq!(s.trials()[0].counts()[7], 1);
        assert_eq!(bins_for(1.0, 0.001), 1000);
        assert_eq!(bins_for(1.0005, 0.001), 1001);
    }

    #[test]
    fn binned_csv_shapes() {
        let s = parse_binned_csv("a,b,c\n1,0,2\n0,0,1\n", 1.0, 3.0, true).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.trials()[0].counts(), &[1, 0, 2]);
        assert!(matches!(
            parse_binned_csv("1,0,2\n0,1\n", 1.0, 3.0, false),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            parse_binned_csv("1,x,2\n", 1.0, 3.0, false),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn spike_time_writer_reloads_to_same_bins() {
        let set = TrialSet::from_counts(vec![vec![0, 2, 0, 1, 1], vec![0; 5]], 0.1).unwrap();
        let text = write_spike_times(&set);
        let back = parse_spike_times(&text, 0.1, 0.5).unwrap();
        assert_eq!(back, set);
    }
}
