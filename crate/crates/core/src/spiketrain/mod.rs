//! Binned spike trains, trial sets and the parameter-free feature series
//! (cumulative count, Gaussian-smoothed rate, raw autocorrelation) built on
//! top of them.

mod io;

pub use io::{
    load_trials, parse_binned_csv, parse_spike_times, write_binned_csv, write_feature_csv,
    write_spike_times, LoadOptions, TrialFormat,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal;

/// A single binned spike train: one count per bin of width `dt` seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpikeTrain {
    counts: Vec<u32>,
    dt: f64,
}

impl SpikeTrain {
    pub fn new(counts: Vec<u32>, dt: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::param(format!("bin width must be positive, got {dt}")));
        }
        if counts.is_empty() {
            return Err(Error::param("spike train needs at least one bin"));
        }
        Ok(Self { counts, dt })
    }

    pub fn zeros(n_bins: usize, dt: f64) -> Result<Self> {
        Self::new(vec![0; n_bins], dt)
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn n_bins(&self) -> usize {
        self.counts.len()
    }

    pub fn duration(&self) -> f64 {
        self.counts.len() as f64 * self.dt
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| c as u64).sum()
    }

    /// True when every bin holds at most one spike.
    pub fn is_binary(&self) -> bool {
        self.counts.iter().all(|&c| c <= 1)
    }

    /// Non-empty bins as `(bin, count)` pairs, in increasing bin order.
    pub fn spikes(&self) -> impl Iterator<Item = (usize, u32)> + '_ {
        self.counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(t, &c)| (t, c))
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.counts.iter().map(|&c| c as f64).collect()
    }
}

/// A set of trials sharing bin width and length, with an optional shared
/// stimulus covariate (one value per bin).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSet {
    trials: Vec<SpikeTrain>,
    stimulus: Option<Vec<f64>>,
}

impl TrialSet {
    pub fn new(trials: Vec<SpikeTrain>) -> Result<Self> {
        let first = trials
            .first()
            .ok_or_else(|| Error::param("trial set must contain at least one trial"))?;
        let (n_bins, dt) = (first.n_bins(), first.dt());
        for (i, tr) in trials.iter().enumerate() {
            if tr.n_bins() != n_bins {
                return Err(Error::shape(format!(
                    "trial {i} has {} bins, expected {n_bins}",
                    tr.n_bins()
                )));
            }
            if tr.dt() != dt {
                return Err(Error::shape(format!(
                    "trial {i} has bin width {}, expected {dt}",
                    tr.dt()
                )));
            }
        }
        Ok(Self {
            trials,
            stimulus: None,
        })
    }

    /// Builds a trial set from rows of counts.
    pub fn from_counts(rows: Vec<Vec<u32>>, dt: f64) -> Result<Self> {
        let trials = rows
            .into_iter()
            .map(|r| SpikeTrain::new(r, dt))
            .collect::<Result<Vec<_>>>()?;
        Self::new(trials)
    }

    pub fn with_stimulus(mut self, stimulus: Vec<f64>) -> Result<Self> {
        if stimulus.len() != self.n_bins() {
            return Err(Error::shape(format!(
                "stimulus has {} values, trials have {} bins",
                stimulus.len(),
                self.n_bins()
            )));
        }
        self.stimulus = Some(stimulus);
        Ok(self)
    }

    pub fn trials(&self) -> &[SpikeTrain] {
        &self.trials
    }

    pub fn stimulus(&self) -> Option<&[f64]> {
        self.stimulus.as_deref()
    }

    pub fn len(&self) -> usize {
        self.trials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trials.is_empty()
    }

    pub fn n_bins(&self) -> usize {
        self.trials[0].n_bins()
    }

    pub fn dt(&self) -> f64 {
        self.trials[0].dt()
    }

    pub fn total_spikes(&self) -> u64 {
        self.trials.iter().map(SpikeTrain::total).sum()
    }

    /// Pooled firing rate in Hz over all trials.
    pub fn mean_rate(&self) -> f64 {
        self.total_spikes() as f64 / (self.len() as f64 * self.n_bins() as f64 * self.dt())
    }

    /// Splits into the first `n` trials and the rest; both keep the stimulus.
    pub fn split_at(&self, n: usize) -> Result<(TrialSet, TrialSet)> {
        if n == 0 || n >= self.len() {
            return Err(Error::param(format!(
                "split point {n} must leave both halves non-empty (len {})",
                self.len()
            )));
        }
        let (a, b) = self.trials.split_at(n);
        Ok((
            TrialSet {
                trials: a.to_vec(),
                stimulus: self.stimulus.clone(),
            },
            TrialSet {
                trials: b.to_vec(),
                stimulus: self.stimulus.clone(),
            },
        ))
    }

    /// Selects trials by index, keeping the stimulus.
    pub fn select(&self, indices: &[usize]) -> Result<TrialSet> {
        let trials = indices
            .iter()
            .map(|&i| {
                self.trials
                    .get(i)
                    .cloned()
                    .ok_or_else(|| Error::Range(format!("trial index {i} out of range")))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut set = TrialSet::new(trials)?;
        set.stimulus = self.stimulus.clone();
        Ok(set)
    }
}

/// Which feature a [`FeatureSeries`] holds, with its hyperparameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FeatureKind {
    CumulativeCount,
    SmoothedRate { bandwidth: f64 },
    Autocorrelation { max_lag: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSeries {
    pub values: Vec<f64>,
    pub kind: FeatureKind,
}

/// Running spike count `I[t] = sum_{s <= t} counts[s]`.
pub fn cumulative_count(x: &SpikeTrain) -> FeatureSeries {
    let mut acc = 0u64;
    let values = x
        .counts()
        .iter()
        .map(|&c| {
            acc += c as u64;
            acc as f64
        })
        .collect();
    FeatureSeries {
        values,
        kind: FeatureKind::CumulativeCount,
    }
}

/// Gaussian smoothing with standard deviation `bandwidth` seconds, window
/// truncated at four standard deviations and renormalized to unit mass.
pub fn smooth(x: &SpikeTrain, bandwidth: f64) -> Result<FeatureSeries> {
    if !(bandwidth > 0.0 && bandwidth.is_finite()) {
        return Err(Error::param(format!(
            "smoothing bandwidth must be positive, got {bandwidth}"
        )));
    }
    let values = gaussian_smooth(&x.as_f64(), bandwidth / x.dt());
    Ok(FeatureSeries {
        values,
        kind: FeatureKind::SmoothedRate { bandwidth },
    })
}

/// Same-length zero-padded convolution with a truncated, unit-mass Gaussian
/// window of standard deviation `sigma_bins`.
pub fn gaussian_smooth(values: &[f64], sigma_bins: f64) -> Vec<f64> {
    let window = gaussian_window(sigma_bins);
    let half = (window.len() / 2) as isize;
    let n = values.len() as isize;
    let mut out = vec![0.0; values.len()];
    for (t, &v) in values.iter().enumerate() {
        if v == 0.0 {
            continue;
        }
        let t = t as isize;
        for (k, &w) in window.iter().enumerate() {
            let s = t + k as isize - half;
            if s >= 0 && s < n {
                out[s as usize] += w * v;
            }
        }
    }
    out
}

pub(crate) fn gaussian_window(sigma_bins: f64) -> Vec<f64> {
    let half = (4.0 * sigma_bins).ceil() as isize;
    let mut w: Vec<f64> = (-half..=half)
        .map(|k| {
            let k = k as f64;
            (-k * k / (2.0 * sigma_bins * sigma_bins)).exp()
        })
        .collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    w
}

/// Raw autocorrelation `C[tau] = sum_t counts[t] * counts[t + tau]` for
/// `tau = 0..=max_lag`.
pub fn autocorrelation(x: &SpikeTrain, max_lag: usize) -> Result<FeatureSeries> {
    if max_lag < 1 || max_lag >= x.n_bins() {
        return Err(Error::param(format!(
            "max_lag must lie in [1, {}), got {max_lag}",
            x.n_bins()
        )));
    }
    let values = signal::sparse_autocorr(x.counts(), max_lag);
    Ok(FeatureSeries {
        values,
        kind: FeatureKind::Autocorrelation { max_lag },
    })
}

/// Interspike intervals in seconds, pooled over trials. Co-binned spikes
/// contribute zero-length intervals.
pub fn interspike_intervals(trials: &TrialSet) -> Vec<f64> {
    let mut out = Vec::new();
    for tr in trials.trials() {
        let mut prev: Option<usize> = None;
        for (t, c) in tr.spikes() {
            if let Some(p) = prev {
                out.push((t - p) as f64 * tr.dt());
            }
            out.extend(std::iter::repeat_n(0.0, c as usize - 1));
            prev = Some(t);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IsiStats {
    pub mean: f64,
    pub cv: f64,
    pub n_intervals: usize,
}

/// Mean (seconds) and coefficient of variation of the pooled interspike
/// intervals. Uses the population standard deviation.
pub fn isi_stats(trials: &TrialSet) -> Result<IsiStats> {
    let isi = interspike_intervals(trials);
    if isi.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "need at least 2 interspike intervals, found {}",
            isi.len()
        )));
    }
    let n = isi.len() as f64;
    let mean = isi.iter().sum::<f64>() / n;
    if mean <= 0.0 {
        return Err(Error::InsufficientData(
            "all interspike intervals are zero; cv undefined".into(),
        ));
    }
    let var = isi.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Ok(IsiStats {
        mean,
        cv: var.sqrt() / mean,
        n_intervals: isi.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialRate {
    pub mean_hz: f64,
    pub max_hz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiringRates {
    pub per_trial: Vec<TrialRate>,
    /// Largest per-trial mean rate in the set.
    pub max_mean_hz: f64,
}

/// Per-trial mean rate and maximum sliding-window rate, in Hz. Windows
/// longer than the trial are shortened to the trial length.
pub fn firing_rate(trials: &TrialSet, window: usize) -> Result<FiringRates> {
    if window == 0 {
        return Err(Error::param("rate window must be at least one bin"));
    }
    let dt = trials.dt();
    let per_trial: Vec<TrialRate> = trials
        .trials()
        .iter()
        .map(|tr| {
            let counts = tr.counts();
            let w = window.min(counts.len());
            let mut running: u64 = counts[..w].iter().map(|&c| c as u64).sum();
            let mut best = running;
            for t in w..counts.len() {
                running = running + counts[t] as u64 - counts[t - w] as u64;
                best = best.max(running);
            }
            TrialRate {
                mean_hz: tr.total() as f64 / tr.duration(),
                max_hz: best as f64 / (w as f64 * dt),
            }
        })
        .collect();
    let max_mean_hz = per_trial.iter().map(|r| r.mean_hz).fold(0.0, f64::max);
    Ok(FiringRates {
        per_trial,
        max_mean_hz,
    })
}
