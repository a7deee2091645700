//! Run configuration: a TOML document with `[data]`, `[model]`, `[kernel]`,
//! `[fit]`, `[sample]`, `[gof]` and `[toy]` sections. Command-line flags
//! and `--set section.key=value` overrides are merged into the document
//! before it is deserialized, so every flag has a file equivalent.

use std::path::{Path, PathBuf};

use mmd_glm::glm::{MleConfig, DEFAULT_LAMBDA_MAX};
use mmd_glm::kernels::{self, KernelSpec};
use mmd_glm::mmd::{Estimator, FitConfig, DEFAULT_ALPHA_GRID};
use mmd_glm::spiketrain::{load_trials, LoadOptions, TrialFormat};
use mmd_glm::{Error, Glm, ObservationModel, Result, TrialSet};
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Seed for every randomized command. Required by those commands.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Worker threads; absent uses all cores.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    pub data: DataSection,
    pub model: ModelSection,
    pub kernel: KernelSection,
    pub fit: FitSection,
    pub sample: SampleSection,
    pub gof: GofSection,
    pub toy: ToySection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    /// Held-out trials for validation statistics.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub valid_path: Option<PathBuf>,
    /// One stimulus value per line, shared by all trials.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stimulus_path: Option<PathBuf>,
    pub format: TrialFormat,
    pub dt: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub duration: Option<f64>,
    pub header: bool,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            path: None,
            valid_path: None,
            stimulus_path: None,
            format: TrialFormat::SpikeTimesText,
            dt: 0.001,
            duration: None,
            header: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub observation: ObservationModel,
    pub history_len: usize,
    pub stimulus_len: usize,
    pub lambda_max: f64,
    /// Parameter file for commands that take a fitted model.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub params: Option<PathBuf>,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            observation: ObservationModel::Bernoulli,
            history_len: 20,
            stimulus_len: 0,
            lambda_max: DEFAULT_LAMBDA_MAX,
            params: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelSection {
    pub tag: String,
    /// Cumcount bandwidth; absent uses the median heuristic.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    /// Smoothing bandwidth in seconds.
    pub bandwidth: f64,
    /// Absent uses `min(T - 1, 500)`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_lag: Option<usize>,
}

impl Default for KernelSection {
    fn default() -> Self {
        Self {
            tag: "cumcount-gaussian".into(),
            sigma: None,
            bandwidth: 0.01,
            max_lag: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitKind {
    Mle,
    ZeroHistory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitSection {
    /// Absent selects the pure-MMD fit; present selects the joint fit.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    pub init: InitKind,
    pub repeats: usize,
    pub alpha_grid: Vec<f64>,
    pub lambda_ridge: f64,
    pub mle_tol: f64,
    pub mle_max_iters: usize,
    pub samples_per_step: usize,
    pub learning_rate: f64,
    pub lr_final_fraction: f64,
    pub max_iters: usize,
    pub baseline: bool,
    pub clip_norm: f64,
    pub average_last: usize,
    pub estimator: Estimator,
    pub tol: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub snapshot_every: usize,
    pub record_timing: bool,
    /// Free-running samples used to evaluate each alpha.
    pub eval_samples: usize,
}

impl Default for FitSection {
    fn default() -> Self {
        let f = FitConfig::default();
        let m = MleConfig::default();
        Self {
            alpha: None,
            init: InitKind::Mle,
            repeats: 1,
            alpha_grid: DEFAULT_ALPHA_GRID.to_vec(),
            lambda_ridge: m.lambda_ridge,
            mle_tol: m.tol,
            mle_max_iters: m.max_iters,
            samples_per_step: f.samples_per_step,
            learning_rate: f.learning_rate,
            lr_final_fraction: f.lr_final_fraction,
            max_iters: f.max_iters,
            baseline: f.baseline,
            clip_norm: f.clip_norm,
            average_last: f.average_last,
            estimator: f.estimator,
            tol: f.tol,
            beta1: f.beta1,
            beta2: f.beta2,
            eps: f.eps,
            snapshot_every: f.snapshot_every,
            record_timing: f.record_timing,
            eval_samples: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleSection {
    pub n: usize,
    /// Absent takes the bin count from the data section.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_bins: Option<usize>,
    /// Existing samples for `gof`; absent draws `n` fresh ones.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

impl Default for SampleSection {
    fn default() -> Self {
        Self {
            n: 1000,
            n_bins: None,
            path: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GofSection {
    pub max_lag: usize,
    pub normalize_autocorr: bool,
    pub isi_bins: usize,
    /// Upper edge of the ISI histogram in seconds; absent uses the largest
    /// observed interval.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub isi_max: Option<f64>,
    /// Gaussian smoothing of the trial-averaged rate, seconds.
    pub rate_bandwidth: f64,
    pub cdf_points: usize,
}

impl Default for GofSection {
    fn default() -> Self {
        Self {
            max_lag: 50,
            normalize_autocorr: true,
            isi_bins: 50,
            isi_max: None,
            rate_bandwidth: 0.01,
            cdf_points: 101,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToySection {
    pub n_trials: usize,
    pub n_bins: usize,
    pub dt: f64,
    /// Baseline rate of the ground-truth model in Hz.
    pub rate: f64,
    pub history: Vec<f64>,
    pub samples_per_step: usize,
    pub max_iters: usize,
    pub learning_rate: f64,
    pub lr_final_fraction: f64,
    pub average_last: usize,
    /// Multiplier on the median-heuristic cumcount bandwidth.
    pub sigma_factor: f64,
    pub null_splits: usize,
    pub raster_trials: usize,
}

impl Default for ToySection {
    fn default() -> Self {
        Self {
            n_trials: 50,
            n_bins: 200,
            dt: 0.002,
            rate: 200.0,
            history: vec![-5.0, -5.0, -4.0, -3.0, -2.0, -1.0, 0.3, 0.3],
            samples_per_step: 200,
            max_iters: 3000,
            learning_rate: 0.1,
            lr_final_fraction: 0.05,
            average_last: 1000,
            sigma_factor: 0.3,
            null_splits: 200,
            raster_trials: 50,
        }
    }
}

/// Reads the config file (if any) and applies `key=value` overrides in
/// order. Values parse as TOML and fall back to bare strings.
pub fn resolve(path: Option<&Path>, overrides: &[String]) -> Result<(Config, Table)> {
    let mut doc = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)?;
            text.parse::<Table>()
                .map_err(|e| Error::Serialization(format!("{}: {e}", p.display())))?
        }
        None => Table::new(),
    };
    for o in overrides {
        apply_override(&mut doc, o)?;
    }
    let cfg: Config = doc
        .clone()
        .try_into()
        .map_err(|e: toml::de::Error| Error::Serialization(e.to_string()))?;
    Ok((cfg, doc))
}

pub fn apply_override(doc: &mut Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Parameter(format!("override `{spec}` is not of the form key=value")))?;
    let key = key.trim();
    let value = parse_value(raw.trim());
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) || parts.len() > 2 {
        return Err(Error::Parameter(format!("bad override key `{key}`")));
    }
    let table = if parts.len() == 2 {
        let entry = doc
            .entry(parts[0].to_string())
            .or_insert_with(|| Value::Table(Table::new()));
        entry
            .as_table_mut()
            .ok_or_else(|| Error::Parameter(format!("`{}` is not a section", parts[0])))?
    } else {
        doc
    };
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

fn parse_value(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

impl Config {
    pub fn require_seed(&self) -> Result<u64> {
        self.seed
            .ok_or_else(|| Error::Parameter("this command is randomized and needs an explicit --seed".into()))
    }

    pub fn glm(&self) -> Result<Glm> {
        if !(self.model.lambda_max > 0.0) {
            return Err(Error::Parameter("model.lambda_max must be positive".into()));
        }
        Ok(Glm::new(self.model.observation).with_lambda_max(self.model.lambda_max))
    }

    pub fn mle_config(&self) -> MleConfig {
        MleConfig {
            history_len: self.model.history_len,
            stimulus_len: self.model.stimulus_len,
            tol: self.fit.mle_tol,
            max_iters: self.fit.mle_max_iters,
            lambda_ridge: self.fit.lambda_ridge,
        }
    }

    pub fn fit_config(&self, seed: u64) -> FitConfig {
        let f = &self.fit;
        FitConfig {
            alpha: f.alpha.unwrap_or(0.0),
            samples_per_step: f.samples_per_step,
            learning_rate: f.learning_rate,
            lr_final_fraction: f.lr_final_fraction,
            max_iters: f.max_iters,
            seed,
            baseline: f.baseline,
            lambda_ridge: f.lambda_ridge,
            clip_norm: f.clip_norm,
            average_last: f.average_last,
            estimator: f.estimator,
            tol: f.tol,
            beta1: f.beta1,
            beta2: f.beta2,
            eps: f.eps,
            snapshot_every: f.snapshot_every,
            record_timing: f.record_timing,
        }
    }

    fn load_options(&self) -> Result<LoadOptions> {
        let duration = self
            .data
            .duration
            .ok_or_else(|| Error::Parameter("data.duration is required to bin the trials".into()))?;
        Ok(LoadOptions {
            format: self.data.format,
            dt: self.data.dt,
            duration,
            header: self.data.header,
        })
    }

    pub fn load_set(&self, path: &Path) -> Result<TrialSet> {
        let set = load_trials(path, &self.load_options()?)?;
        match &self.data.stimulus_path {
            Some(p) => set.with_stimulus(read_stimulus(p)?),
            None => Ok(set),
        }
    }

    pub fn load_data(&self) -> Result<TrialSet> {
        let path = self
            .data
            .path
            .as_deref()
            .ok_or_else(|| Error::Parameter("no training data given (data.path / --data)".into()))?;
        self.load_set(path)
    }

    /// Resolves the kernel section against the training data.
    pub fn kernel_spec(&self, data: &TrialSet) -> Result<KernelSpec> {
        let k = &self.kernel;
        let max_lag = k.max_lag.unwrap_or_else(|| kernels::default_max_lag(data.n_bins()));
        let spec = match k.tag.as_str() {
            "cumcount-gaussian" => KernelSpec::CumcountGaussian {
                sigma: match k.sigma {
                    Some(s) => s,
                    None => kernels::cumcount_median_sigma(data)?,
                },
            },
            "feature-autocorr" => KernelSpec::FeatureAutocorr { max_lag },
            "feature-smoothed" => KernelSpec::FeatureSmoothed { bandwidth: k.bandwidth },
            "feature-mean-history" => KernelSpec::FeatureMeanHistory,
            "history-autocorr" => KernelSpec::HistoryAutocorr { max_lag },
            "mean-ci" => KernelSpec::MeanCi,
            other => return Err(Error::Parameter(format!("unknown kernel tag `{other}`"))),
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Whitespace-separated stimulus values; `#` starts a comment line.
pub fn read_stimulus(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        for tok in line.split_whitespace() {
            let v: f64 = tok.parse().map_err(|_| Error::Parse {
                line: i + 1,
                msg: format!("`{tok}` is not a number"),
            })?;
            out.push(v);
        }
    }
    Ok(out)
}
