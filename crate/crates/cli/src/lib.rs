//! `mmdglm` command-line tool: fit, sample, evaluate and scan point-process
//! GLMs trained by likelihood, MMD, or both.
//!
//! Exit codes: 0 success, 2 usage/parse/config, 3 shape/domain/insufficient
//! data, 4 optimization failure, 5 no qualifying alpha.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod output;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use mmd_glm::Error;
use toml::Value;

use crate::config::Config;
use crate::output::{Outputs, RunManifest};

#[derive(Debug, Parser)]
#[command(name = "mmdglm", version, about = "Point-process GLM fitting by likelihood and maximum mean discrepancy")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Maximum-likelihood fit.
    FitMle {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        fit: FitArgs,
    },
    /// Pure-MMD fit, or joint NLL + alpha·MMD² fit when alpha is given.
    FitMmd {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        kernel: KernelArgs,
        #[command(flatten)]
        fit: FitArgs,
    },
    /// Free-running samples from a parameter file.
    Sample {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        sample: SampleArgs,
    },
    /// Goodness-of-fit report and plot-ready series.
    Gof {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        kernel: KernelArgs,
        #[command(flatten)]
        sample: SampleArgs,
        /// Maximum autocorrelation lag in bins.
        #[arg(long)]
        max_lag: Option<usize>,
    },
    /// Joint fits over an alpha grid; selects the smallest rate-matching alpha.
    AlphaScan {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        kernel: KernelArgs,
        #[command(flatten)]
        fit: FitArgs,
    },
    /// Self-contained synthetic recovery experiment.
    Toy {
        #[command(flatten)]
        common: Common,
        /// Optimizer iterations of the MMD fit.
        #[arg(long)]
        iters: Option<usize>,
    },
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// TOML config file.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, short)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker thread cap. Results do not depend on it.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Config override, e.g. `--set fit.learning_rate=0.01`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct DataArgs {
    /// Training trials.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Validation trials.
    #[arg(long)]
    pub valid: Option<PathBuf>,
    /// spike-times-text or binned-csv.
    #[arg(long)]
    pub format: Option<String>,
    /// Bin width in seconds.
    #[arg(long)]
    pub dt: Option<f64>,
    /// Trial duration in seconds.
    #[arg(long)]
    pub duration: Option<f64>,
    /// The binned-csv file has a header row.
    #[arg(long)]
    pub header: bool,
    /// Stimulus file, one value per bin.
    #[arg(long)]
    pub stimulus: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct ModelArgs {
    /// bernoulli or poisson.
    #[arg(long)]
    pub observation: Option<String>,
    #[arg(long)]
    pub history_len: Option<usize>,
    #[arg(long)]
    pub stimulus_len: Option<usize>,
    /// Parameter file of a fitted model.
    #[arg(long)]
    pub params: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct KernelArgs {
    /// Kernel tag, e.g. cumcount-gaussian or history-autocorr.
    #[arg(long)]
    pub kernel: Option<String>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub bandwidth: Option<f64>,
    #[arg(long = "kernel-max-lag")]
    pub kernel_max_lag: Option<usize>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct FitArgs {
    /// MMD weight; selects the joint fit.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// mle or zero-history.
    #[arg(long)]
    pub init: Option<String>,
    #[arg(long)]
    pub repeats: Option<usize>,
    #[arg(long)]
    pub lambda_ridge: Option<f64>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub samples_per_step: Option<usize>,
    /// Comma-separated ascending alpha grid.
    #[arg(long, value_delimiter = ',')]
    pub grid: Option<Vec<f64>>,
    #[arg(long)]
    pub eval_samples: Option<usize>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct SampleArgs {
    /// Number of trials to draw.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub n_bins: Option<usize>,
    /// Existing model samples (gof only).
    #[arg(long)]
    pub samples: Option<PathBuf>,
}

type Flags = Vec<(&'static str, Value)>;

fn push<T: Into<Value>>(flags: &mut Flags, key: &'static str, v: Option<T>) {
    if let Some(v) = v {
        flags.push((key, v.into()));
    }
}

fn path_value(p: &Option<PathBuf>) -> Option<String> {
    p.as_ref().map(|p| p.to_string_lossy().into_owned())
}

impl DataArgs {
    fn flags(&self, f: &mut Flags) {
        push(f, "data.path", path_value(&self.data));
        push(f, "data.valid_path", path_value(&self.valid));
        push(f, "data.stimulus_path", path_value(&self.stimulus));
        push(f, "data.format", self.format.clone());
        push(f, "data.dt", self.dt);
        push(f, "data.duration", self.duration);
        if self.header {
            push(f, "data.header", Some(true));
        }
    }
}

impl ModelArgs {
    fn flags(&self, f: &mut Flags) {
        push(f, "model.observation", self.observation.clone());
        push(f, "model.history_len", self.history_len.map(|v| v as i64));
        push(f, "model.stimulus_len", self.stimulus_len.map(|v| v as i64));
        push(f, "model.params", path_value(&self.params));
    }
}

impl KernelArgs {
    fn flags(&self, f: &mut Flags) {
        push(f, "kernel.tag", self.kernel.clone());
        push(f, "kernel.sigma", self.sigma);
        push(f, "kernel.bandwidth", self.bandwidth);
        push(f, "kernel.max_lag", self.kernel_max_lag.map(|v| v as i64));
    }
}

impl FitArgs {
    fn flags(&self, f: &mut Flags) {
        push(f, "fit.alpha", self.alpha);
        push(f, "fit.init", self.init.clone());
        push(f, "fit.repeats", self.repeats.map(|v| v as i64));
        push(f, "fit.lambda_ridge", self.lambda_ridge);
        push(f, "fit.max_iters", self.iters.map(|v| v as i64));
        push(f, "fit.learning_rate", self.learning_rate);
        push(f, "fit.samples_per_step", self.samples_per_step.map(|v| v as i64));
        push(f, "fit.alpha_grid", self.grid.clone());
        push(f, "fit.eval_samples", self.eval_samples.map(|v| v as i64));
    }
}

impl SampleArgs {
    fn flags(&self, f: &mut Flags) {
        push(f, "sample.n", self.n.map(|v| v as i64));
        push(f, "sample.n_bins", self.n_bins.map(|v| v as i64));
        push(f, "sample.path", path_value(&self.samples));
    }
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::FitMle { .. } => "fit-mle",
            Command::FitMmd { .. } => "fit-mmd",
            Command::Sample { .. } => "sample",
            Command::Gof { .. } => "gof",
            Command::AlphaScan { .. } => "alpha-scan",
            Command::Toy { .. } => "toy",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Command::FitMle { common, .. }
            | Command::FitMmd { common, .. }
            | Command::Sample { common, .. }
            | Command::Gof { common, .. }
            | Command::AlphaScan { common, .. }
            | Command::Toy { common, .. } => common,
        }
    }

    fn flags(&self) -> Flags {
        let mut f = Flags::new();
        let c = self.common();
        push(&mut f, "seed", c.seed.map(|v| v as i64));
        push(&mut f, "threads", c.threads.map(|v| v as i64));
        match self {
            Command::FitMle { data, model, fit, .. } => {
                data.flags(&mut f);
                model.flags(&mut f);
                fit.flags(&mut f);
            }
            Command::FitMmd { data, model, kernel, fit, .. } | Command::AlphaScan { data, model, kernel, fit, .. } => {
                data.flags(&mut f);
                model.flags(&mut f);
                kernel.flags(&mut f);
                fit.flags(&mut f);
            }
            Command::Sample { data, model, sample, .. } => {
                data.flags(&mut f);
                model.flags(&mut f);
                sample.flags(&mut f);
            }
            Command::Gof { data, model, kernel, sample, max_lag, .. } => {
                data.flags(&mut f);
                model.flags(&mut f);
                kernel.flags(&mut f);
                sample.flags(&mut f);
                push(&mut f, "gof.max_lag", max_lag.map(|v| v as i64));
            }
            Command::Toy { iters, .. } => push(&mut f, "toy.max_iters", iters.map(|v| v as i64)),
        }
        f
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Parse { .. }
        | Error::Range(_)
        | Error::Parameter(_)
        | Error::Contract(_)
        | Error::Io(_)
        | Error::Serialization(_) => 2,
        Error::Shape(_) | Error::Domain(_) | Error::InsufficientData(_) => 3,
        Error::Optimization { .. } | Error::RunawayOptimization { .. } | Error::GradientUndefined { .. } => 4,
        Error::NoQualifyingAlpha(_) => 5,
    }
}

/// Resolves the configuration: file, then named flags, then `--set`.
pub fn resolve_config(cmd: &Command) -> mmd_glm::Result<Config> {
    let common = cmd.common();
    let mut sets: Vec<String> = Vec::new();
    for (k, v) in cmd.flags() {
        sets.push(format!("{k}={v}"));
    }
    sets.extend(common.set.iter().cloned());
    Ok(config::resolve(common.config.as_deref(), &sets)?.0)
}

fn input_paths(cfg: &Config, config_file: Option<&PathBuf>) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = config_file.into_iter().cloned().collect();
    for p in [&cfg.data.path, &cfg.data.stimulus_path, &cfg.model.params, &cfg.sample.path].into_iter().flatten() {
        v.push(p.clone());
    }
    // A missing validation file is tolerated by `gof`.
    if let Some(p) = &cfg.data.valid_path {
        if p.exists() {
            v.push(p.clone());
        }
    }
    v
}

/// Runs one parsed invocation and returns the process exit code. Errors are
/// reported as one line on stderr.
pub fn run(cli: Cli) -> i32 {
    let cmd = &cli.command;
    let out_dir = cmd.common().out.clone();
    let fail = |e: &Error| {
        let code = exit_code(e);
        eprintln!("mmdglm {}: error: {e}", cmd.name());
        code
    };
    let cfg = match resolve_config(cmd) {
        Ok(c) => c,
        Err(e) => return fail(&e),
    };
    if let Some(n) = cfg.threads {
        // Only the first call in a process can size the global pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    let cfg_json = match serde_json::to_value(&cfg) {
        Ok(v) => v,
        Err(e) => return fail(&Error::Serialization(e.to_string())),
    };
    let mut manifest = match std::fs::create_dir_all(&out_dir)
        .map_err(Error::from)
        .and_then(|_| RunManifest::start(cmd.name(), cfg.seed, cfg_json, &input_paths(&cfg, cmd.common().config.as_ref())))
    {
        Ok(m) => m,
        Err(e) => return fail(&e),
    };
    if let Err(e) = manifest.write(&out_dir) {
        return fail(&e);
    }
    let mut outputs = Outputs::default();
    let result = match cmd {
        Command::FitMle { .. } => commands::fit_mle(&cfg, &mut outputs),
        Command::FitMmd { .. } => commands::fit_mmd(&cfg, &mut outputs),
        Command::Sample { .. } => commands::sample(&cfg, &mut outputs),
        Command::Gof { .. } => commands::gof(&cfg, &mut outputs),
        Command::AlphaScan { .. } => commands::alpha_scan(&cfg, &mut outputs),
        Command::Toy { .. } => commands::toy(&cfg, &mut outputs),
    };
    // The alpha table is the point of a failed scan, so it is kept.
    let keep = matches!(result, Ok(()) | Err(Error::NoQualifyingAlpha(_)));
    let committed = if keep {
        outputs.commit(&out_dir).map(|_| outputs.names())
    } else {
        Ok(Vec::new())
    };
    let err = match (result, committed) {
        (Err(e), _) | (Ok(()), Err(e)) => Some(e),
        (Ok(()), Ok(_)) => None,
    };
    let written = if keep { outputs.names() } else { Vec::new() };
    let code = err.as_ref().map_or(0, &fail);
    manifest.finish(written, err.as_ref().map(|e| (e, code)));
    if let Err(e) = manifest.write(&out_dir) {
        let c = fail(&e);
        return if code == 0 { c } else { code };
    }
    code
}
