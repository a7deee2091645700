//! Goodness-of-fit statistics comparing free-running model samples with data.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::glm::{Glm, GlmParams};
use crate::kernels::{KernelSpec, ModelRef};
use crate::mmd::{self, Estimator};
use crate::signal;
use crate::spiketrain::{self, TrialSet};

/// A sample trial runs away when its mean rate exceeds this multiple of the
/// largest per-trial mean rate in the data.
pub const RUNAWAY_FACTOR: f64 = 3.0;

/// Kolmogorov 95% critical value coefficient, `D_crit = 1.36 / sqrt(n)`.
pub const KS_COEFF_95: f64 = 1.36;

fn trial_rates(set: &TrialSet) -> Vec<f64> {
    set.trials().iter().map(|x| x.total() as f64 / x.duration()).collect()
}

/// Fraction of sample trials whose mean rate exceeds three times the
/// maximum per-trial mean rate of the data.
pub fn runaway_probability(samples: &TrialSet, data: &TrialSet) -> Result<f64> {
    if samples.is_empty() || data.is_empty() {
        return Err(Error::InsufficientData("runaway probability needs samples and data".into()));
    }
    let max_data = trial_rates(data).into_iter().fold(0.0, f64::max);
    let threshold = RUNAWAY_FACTOR * max_data;
    let n = trial_rates(samples).into_iter().filter(|&r| r > threshold).count();
    Ok(n as f64 / samples.len() as f64)
}

/// Mean over trials of the raw autocorrelation at lags `1..=max_lag`.
/// With `normalize`, lag `k` is divided by `(T - k) r²` where `r` is the
/// set's mean count per bin, so uncorrelated trains sit near 1.
pub fn mean_autocorrelation(set: &TrialSet, max_lag: usize, normalize: bool) -> Result<Vec<f64>> {
    let n_bins = set.n_bins();
    if max_lag < 1 || max_lag >= n_bins {
        return Err(Error::param(format!("max_lag must lie in [1, {n_bins}), got {max_lag}")));
    }
    let per_trial: Vec<Vec<f64>> = set
        .trials()
        .par_iter()
        .map(|x| signal::sparse_autocorr(x.counts(), max_lag))
        .collect();
    let mut mean = vec![0.0; max_lag];
    for c in &per_trial {
        for (m, v) in mean.iter_mut().zip(&c[1..]) {
            *m += v;
        }
    }
    let n = set.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    if normalize {
        let r = set.total_spikes() as f64 / (n * n_bins as f64);
        if r > 0.0 {
            for (k, m) in mean.iter_mut().enumerate() {
                *m /= (n_bins - k - 1) as f64 * r * r;
            }
        }
    }
    Ok(mean)
}

/// RMSE between the mean autocorrelations (lags 1..=max_lag) of two sets.
pub fn autocorr_rmse(samples: &TrialSet, reference: &TrialSet, max_lag: usize, normalize: bool) -> Result<f64> {
    if samples.n_bins() != reference.n_bins() || samples.dt() != reference.dt() {
        return Err(Error::shape("sample and reference trials differ in shape"));
    }
    let a = mean_autocorrelation(samples, max_lag, normalize)?;
    let b = mean_autocorrelation(reference, max_lag, normalize)?;
    let mse = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / max_lag as f64;
    Ok(mse.sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct KsResult {
    pub stat: f64,
    /// `1.36 / sqrt(n)`.
    pub critical: f64,
    pub n: usize,
    /// Rescaled intervals `z = 1 - exp(-Lambda)`, sorted ascending.
    pub rescaled: Vec<f64>,
}

impl KsResult {
    pub fn passes(&self) -> bool {
        self.stat < self.critical
    }
}

/// Kolmogorov–Smirnov distance between the empirical CDF of `z` and the
/// uniform CDF on `[0, 1]`. Sorts `z` in place.
pub fn ks_uniform(z: &mut [f64]) -> f64 {
    z.sort_by(f64::total_cmp);
    let n = z.len() as f64;
    z.iter().enumerate().fold(0.0, |d, (i, &v)| {
        let lo = v - i as f64 / n;
        let hi = (i + 1) as f64 / n - v;
        d.max(lo).max(hi)
    })
}

/// Time-rescaling test. For consecutive spikes at bins `s < s'` of a trial,
/// `Lambda = sum_{t=s+1..=s'} lambda_t dt` and `z = 1 - exp(-Lambda)`.
/// Intervals never span trials.
pub fn time_rescale_ks(glm: &Glm, params: &GlmParams, trials: &TrialSet) -> Result<KsResult> {
    if trials.total_spikes() < 2 {
        return Err(Error::InsufficientData("time rescaling needs at least two spikes".into()));
    }
    let u = trials.stimulus();
    let per_trial: Vec<Result<Vec<f64>>> = trials
        .trials()
        .par_iter()
        .map(|x| {
            glm.check_inputs(params, x.counts(), u)?;
            let mu = glm.bin_terms(params, x, u).mu;
            let mut z = Vec::new();
            let mut acc = 0.0;
            let mut seen = false;
            for (&c, &m) in x.counts().iter().zip(&mu) {
                acc += m;
                if c > 0 {
                    if seen {
                        z.push(-(-acc).exp_m1());
                    }
                    // Further spikes in the same bin give zero-length intervals.
                    z.extend(std::iter::repeat_n(0.0, c as usize - 1));
                    seen = true;
                    acc = 0.0;
                }
            }
            Ok(z)
        })
        .collect();
    let mut z = Vec::new();
    for part in per_trial {
        z.extend(part?);
    }
    if z.is_empty() {
        return Err(Error::InsufficientData(
            "no trial holds two spikes, so no interval can be rescaled".into(),
        ));
    }
    let stat = ks_uniform(&mut z);
    let n = z.len();
    Ok(KsResult {
        stat,
        critical: KS_COEFF_95 / (n as f64).sqrt(),
        n,
        rescaled: z,
    })
}

/// Summary statistics for one fitted model. `None` fields are statistics
/// that could not be computed from the inputs and are written as explicit
/// absent markers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GofReport {
    #[serde(with = "absent")]
    pub rel_ll_train: Option<f64>,
    #[serde(with = "absent")]
    pub rel_ll_valid: Option<f64>,
    #[serde(with = "absent")]
    pub isi_mean_model: Option<f64>,
    #[serde(with = "absent")]
    pub isi_mean_data: Option<f64>,
    #[serde(with = "absent")]
    pub isi_cv_model: Option<f64>,
    #[serde(with = "absent")]
    pub isi_cv_data: Option<f64>,
    #[serde(with = "absent")]
    pub autocorr_rmse: Option<f64>,
    #[serde(with = "absent")]
    pub runaway_prob: Option<f64>,
    #[serde(with = "absent")]
    pub ks_stat: Option<f64>,
    #[serde(with = "absent")]
    pub ks_critical: Option<f64>,
    #[serde(with = "absent")]
    pub mmd2_final: Option<f64>,
    pub n_samples_eval: usize,
}

/// Marker written in place of a statistic that could not be computed.
pub const ABSENT: &str = "absent";

mod absent {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(x) => s.serialize_f64(*x),
            None => s.serialize_str(super::ABSENT),
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Num(f64),
        Int(i64),
        Str(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        match Raw::deserialize(d)? {
            Raw::Num(x) => Ok(Some(x)),
            Raw::Int(i) => Ok(Some(i as f64)),
            Raw::Str(s) if s == super::ABSENT => Ok(None),
            Raw::Str(s) => Err(serde::de::Error::custom(format!("expected a number or `absent`, got `{s}`"))),
        }
    }
}

impl GofReport {
    const FIELDS: [&'static str; 12] = [
        "rel_ll_train",
        "rel_ll_valid",
        "isi_mean_model",
        "isi_mean_data",
        "isi_cv_model",
        "isi_cv_data",
        "autocorr_rmse",
        "runaway_prob",
        "ks_stat",
        "ks_critical",
        "mmd2_final",
        "n_samples_eval",
    ];

    fn values(&self) -> [Option<f64>; 11] {
        [
            self.rel_ll_train,
            self.rel_ll_valid,
            self.isi_mean_model,
            self.isi_mean_data,
            self.isi_cv_model,
            self.isi_cv_data,
            self.autocorr_rmse,
            self.runaway_prob,
            self.ks_stat,
            self.ks_critical,
            self.mmd2_final,
        ]
    }

    /// Flat `key = value` document, one field per line.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serialization(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Serialization(e.to_string()))
    }

    pub fn csv_header() -> String {
        Self::FIELDS.join(",")
    }

    /// One CSV row matching [`GofReport::csv_header`]; absent values are `NA`.
    pub fn to_csv_row(&self) -> String {
        let mut cells: Vec<String> = self
            .values()
            .iter()
            .map(|v| v.map_or_else(|| "NA".to_string(), |x| x.to_string()))
            .collect();
        cells.push(self.n_samples_eval.to_string());
        cells.join(",")
    }
}

/// Inputs for [`build_report`].
pub struct ReportInputs<'a> {
    pub glm: &'a Glm,
    pub params: &'a GlmParams,
    pub train: &'a TrialSet,
    pub valid: Option<&'a TrialSet>,
    pub samples: &'a TrialSet,
    pub spec: &'a KernelSpec,
    pub max_lag: usize,
    pub normalize_autocorr: bool,
}

/// Keeps a statistic that lacks enough data as absent; other errors
/// propagate.
fn optional<T>(r: Result<T>) -> Result<Option<T>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::InsufficientData(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

pub fn build_report(inp: &ReportInputs<'_>) -> Result<GofReport> {
    let glm = inp.glm;
    let reference = inp.valid.unwrap_or(inp.train);
    let isi_model = optional(spiketrain::isi_stats(inp.samples))?;
    let isi_data = optional(spiketrain::isi_stats(reference))?;
    let model = inp
        .spec
        .is_model_based()
        .then_some(ModelRef { glm, params: inp.params });
    let mmd2_final = if reference.len() >= 2 && inp.samples.len() >= 2 {
        Some(mmd::mmd2(inp.spec, model, reference, inp.samples, Estimator::Unbiased)?.value)
    } else {
        None
    };
    let ks = optional(time_rescale_ks(glm, inp.params, inp.train))?;
    Ok(GofReport {
        rel_ll_train: optional(glm.relative_ll_per_spike(inp.params, inp.train))?,
        rel_ll_valid: match inp.valid {
            Some(v) => optional(glm.relative_ll_per_spike(inp.params, v))?,
            None => None,
        },
        isi_mean_model: isi_model.map(|s| s.mean),
        isi_mean_data: isi_data.map(|s| s.mean),
        isi_cv_model: isi_model.map(|s| s.cv),
        isi_cv_data: isi_data.map(|s| s.cv),
        autocorr_rmse: Some(autocorr_rmse(inp.samples, reference, inp.max_lag, inp.normalize_autocorr)?),
        runaway_prob: Some(runaway_probability(inp.samples, reference)?),
        ks_stat: ks.as_ref().map(|k| k.stat),
        ks_critical: ks.as_ref().map(|k| k.critical),
        mmd2_final,
        n_samples_eval: inp.samples.len(),
    })
}
