//! Command bodies. Each one reads its inputs through the resolved
//! [`Config`] and stages artifacts into [`Outputs`]; nothing touches the
//! output directory until the runner commits.

use std::fmt::Write as _;

use mmd_glm::glm::{self, ModelFile};
use mmd_glm::gof::{self, build_report, ReportInputs};
use mmd_glm::kernels::{self, KernelSpec};
use mmd_glm::mmd::{self, select_alpha, EvalConfig, FitConfig};
use mmd_glm::repeat::{repetition_seed, spread};
use mmd_glm::rng::derive_seed;
use mmd_glm::spiketrain::{self, write_spike_times};
use mmd_glm::trace::FitTrace;
use mmd_glm::{Error, Glm, GlmParams, ObservationModel, Result, TrialSet};
use serde::Serialize;

use crate::config::{Config, InitKind};
use crate::output::{Outputs, RunManifest, MANIFEST};

/// Salts that split one user seed into independent streams.
const SALT_EVAL: u64 = 0x0E7A;
const SALT_FIT: u64 = 1;
const SALT_NULL: u64 = 2;
const SALT_RASTER: u64 = 3;

fn to_toml<T: Serialize>(v: &T) -> Result<String> {
    toml::to_string(v).map_err(|e| Error::Serialization(e.to_string()))
}

fn model_file(glm: &Glm, params: &GlmParams, dt: f64) -> Result<String> {
    ModelFile::new(glm, params, dt).to_toml()
}

fn load_model(cfg: &Config) -> Result<ModelFile> {
    let path = cfg
        .model
        .params
        .as_deref()
        .ok_or_else(|| Error::Parameter("no parameter file given (model.params / --params)".into()))?;
    ModelFile::from_toml(&std::fs::read_to_string(path)?)
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn mean_nll(glm: &Glm, params: &GlmParams, data: &TrialSet) -> Result<f64> {
    Ok(-glm.total_log_likelihood(params, data)? / data.len() as f64)
}

fn init_params(cfg: &Config, glm: &Glm, data: &TrialSet) -> Result<GlmParams> {
    match cfg.fit.init {
        InitKind::Mle => Ok(checked_mle(glm, data, cfg)?.0),
        InitKind::ZeroHistory => {
            if data.total_spikes() == 0 {
                return Err(Error::InsufficientData("training data holds no spikes".into()));
            }
            let mut p = GlmParams::new(data.mean_rate().ln(), vec![0.0; cfg.model.history_len]);
            if cfg.model.stimulus_len > 0 {
                p = p.with_stimulus_filter(vec![0.0; cfg.model.stimulus_len]);
            }
            Ok(p)
        }
    }
}

/// MLE that turns a non-converged fit into an optimization error.
fn checked_mle(glm: &Glm, data: &TrialSet, cfg: &Config) -> Result<(GlmParams, FitTrace)> {
    let (params, trace) = glm::fit_mle(glm, data, &cfg.mle_config())?;
    if !trace.converged {
        return Err(Error::Optimization {
            iteration: trace.len(),
            msg: format!("gradient max-norm did not reach {} within the iteration cap", cfg.fit.mle_tol),
            last_finite: Box::new(params),
        });
    }
    Ok((params, trace))
}

pub fn fit_mle(cfg: &Config, out: &mut Outputs) -> Result<()> {
    let data = cfg.load_data()?;
    let glm = cfg.glm()?;
    let (params, trace) = checked_mle(&glm, &data, cfg)?;
    out.add("params.toml", model_file(&glm, &params, data.dt())?);
    out.add("trace.ndjson", trace.to_ndjson());
    Ok(())
}

#[derive(Serialize)]
struct FitSummary {
    alpha: Option<f64>,
    kernel: KernelSpec,
    final_nll: f64,
    final_mmd2: f64,
    rel_ll_train: Option<f64>,
    iterations: usize,
    converged: bool,
}

fn one_mmd_fit(
    cfg: &Config,
    glm: &Glm,
    data: &TrialSet,
    spec: &KernelSpec,
    init: &GlmParams,
    fc: &FitConfig,
) -> Result<(GlmParams, FitTrace, FitSummary)> {
    let (params, trace) = match cfg.fit.alpha {
        None => mmd::fit_mmd(glm, data, spec, init, fc)?,
        Some(_) => mmd::fit_joint(glm, data, spec, init, fc)?,
    };
    let summary = FitSummary {
        alpha: cfg.fit.alpha,
        kernel: *spec,
        final_nll: mean_nll(glm, &params, data)?,
        final_mmd2: mean(&trace.tail_mmd2(100)),
        rel_ll_train: glm.relative_ll_per_spike(&params, data).ok(),
        iterations: trace.len(),
        converged: trace.converged,
    };
    Ok((params, trace, summary))
}

pub fn fit_mmd(cfg: &Config, out: &mut Outputs) -> Result<()> {
    let seed = cfg.require_seed()?;
    let data = cfg.load_data()?;
    let glm = cfg.glm()?;
    let spec = cfg.kernel_spec(&data)?;
    if cfg.fit.alpha.is_none() && spec.is_model_based() {
        return Err(Error::Contract(format!(
            "kernel `{}` is model based and needs the joint fit; pass an alpha",
            spec.tag()
        )));
    }
    let init = init_params(cfg, &glm, &data)?;
    let repeats = cfg.fit.repeats;
    if repeats == 0 {
        return Err(Error::Parameter("fit.repeats must be at least 1".into()));
    }
    if repeats == 1 {
        let (params, trace, summary) = one_mmd_fit(cfg, &glm, &data, &spec, &init, &cfg.fit_config(seed))?;
        out.add("params.toml", model_file(&glm, &params, data.dt())?);
        out.add("trace.ndjson", trace.to_ndjson());
        out.add("summary.toml", to_toml(&summary)?);
        return Ok(());
    }
    let mut rows = String::from("rep,seed,final_nll,final_mmd2,rel_ll_train,bias,history_norm\n");
    let mut stats: Vec<[f64; 5]> = Vec::with_capacity(repeats);
    for r in 0..repeats {
        let rep_seed = repetition_seed(seed, r);
        let (params, trace, summary) = one_mmd_fit(cfg, &glm, &data, &spec, &init, &cfg.fit_config(rep_seed))?;
        let dir = format!("rep_{r:03}");
        let mut rep_cfg = cfg.clone();
        rep_cfg.seed = Some(rep_seed);
        rep_cfg.fit.repeats = 1;
        let cfg_json = serde_json::to_value(&rep_cfg).map_err(|e| Error::Serialization(e.to_string()))?;
        let mut m = RunManifest::start("fit-mmd", Some(rep_seed), cfg_json, &[])?;
        let names = vec!["params.toml".to_string(), "trace.ndjson".into(), "summary.toml".into()];
        m.finish(names, None);
        out.add(format!("{dir}/params.toml"), model_file(&glm, &params, data.dt())?);
        out.add(format!("{dir}/trace.ndjson"), trace.to_ndjson());
        out.add(format!("{dir}/summary.toml"), to_toml(&summary)?);
        let json = serde_json::to_string_pretty(&m).map_err(|e| Error::Serialization(e.to_string()))?;
        out.add(format!("{dir}/{MANIFEST}"), format!("{json}\n"));
        let row = [
            summary.final_nll,
            summary.final_mmd2,
            summary.rel_ll_train.unwrap_or(f64::NAN),
            params.bias,
            params.history.iter().map(|h| h * h).sum::<f64>().sqrt(),
        ];
        let _ = writeln!(rows, "{r},{rep_seed},{},{},{},{},{}", row[0], row[1], row[2], row[3], row[4]);
        stats.push(row);
    }
    let mut summary = String::from("statistic,median,min,max\n");
    for (j, name) in ["final_nll", "final_mmd2", "rel_ll_train", "bias", "history_norm"].iter().enumerate() {
        let col: Vec<f64> = stats.iter().map(|s| s[j]).collect();
        match spread(&col) {
            Some(s) => {
                let _ = writeln!(summary, "{name},{},{},{}", s.median, s.min, s.max);
            }
            None => {
                let _ = writeln!(summary, "{name},NA,NA,NA");
            }
        }
    }
    out.add("repeats.csv", rows);
    out.add("summary.csv", summary);
    Ok(())
}

fn sample_bins(cfg: &Config, dt: f64) -> Result<usize> {
    if let Some(n) = cfg.sample.n_bins {
        return Ok(n);
    }
    match cfg.data.duration {
        Some(d) => Ok(((d / dt) - 1e-9 * (d / dt)).ceil().max(1.0) as usize),
        None => Err(Error::Parameter("give sample.n_bins or data.duration".into())),
    }
}

fn stimulus(cfg: &Config) -> Result<Option<Vec<f64>>> {
    cfg.data.stimulus_path.as_deref().map(crate::config::read_stimulus).transpose()
}

#[derive(Serialize)]
struct SampleSummary {
    n: usize,
    n_bins: usize,
    dt: f64,
    mean_rate_hz: f64,
    /// Trials in which the intensity cap bound.
    capped_fraction: f64,
    /// Trials whose mean rate exceeds 3x the data rate; needs data.
    #[serde(skip_serializing_if = "Option::is_none")]
    runaway_fraction: Option<f64>,
}

pub fn sample(cfg: &Config, out: &mut Outputs) -> Result<()> {
    let seed = cfg.require_seed()?;
    let m = load_model(cfg)?;
    let glm = m.glm();
    let params = m.params();
    let n_bins = sample_bins(cfg, m.dt)?;
    let u = stimulus(cfg)?;
    let smp = glm.sample_free_running(&params, cfg.sample.n, n_bins, m.dt, u.as_deref(), seed)?;
    let runaway = match &cfg.data.path {
        Some(_) => Some(gof::runaway_probability(&smp.trials, &cfg.load_data()?)?),
        None => None,
    };
    let summary = SampleSummary {
        n: smp.trials.len(),
        n_bins,
        dt: m.dt,
        mean_rate_hz: smp.trials.mean_rate(),
        capped_fraction: smp.runaway_fraction(),
        runaway_fraction: runaway,
    };
    let mut line = format!("samples={} capped_fraction={}", summary.n, summary.capped_fraction);
    if let Some(r) = runaway {
        let _ = write!(line, " runaway_fraction={r}");
    }
    println!("{line}");
    out.add("samples.txt", write_spike_times(&smp.trials));
    out.add("summary.toml", to_toml(&summary)?);
    Ok(())
}

pub fn gof(cfg: &Config, out: &mut Outputs) -> Result<()> {
    let m = load_model(cfg)?;
    let glm = m.glm();
    let params = m.params();
    let train = cfg.load_data()?;
    if (train.dt() - m.dt).abs() > 1e-12 * m.dt {
        return Err(Error::Shape(format!("data bin width {} differs from the model's {}", train.dt(), m.dt)));
    }
    let valid = match &cfg.data.valid_path {
        Some(p) if p.exists() => Some(cfg.load_set(p)?),
        Some(p) => {
            eprintln!("warning: validation file {} not found; validation fields are absent", p.display());
            None
        }
        None => None,
    };
    let samples = match &cfg.sample.path {
        Some(p) => cfg.load_set(p)?,
        None => {
            let seed = cfg.require_seed()?;
            glm.sample_free_running(&params, cfg.sample.n, train.n_bins(), train.dt(), train.stimulus(), seed)?
                .trials
        }
    };
    let spec = cfg.kernel_spec(&train)?;
    let g = &cfg.gof;
    let report = build_report(&ReportInputs {
        glm: &glm,
        params: &params,
        train: &train,
        valid: valid.as_ref(),
        samples: &samples,
        spec: &spec,
        max_lag: g.max_lag,
        normalize_autocorr: g.normalize_autocorr,
    })?;
    let reference = valid.as_ref().unwrap_or(&train);
    out.add("report.toml", report.to_toml()?);
    out.add(
        "report_row.csv",
        format!("{}\n{}\n", gof::GofReport::csv_header(), report.to_csv_row()),
    );
    out.add("isi_hist.csv", isi_histogram(reference, &samples, g.isi_bins, g.isi_max)?);
    out.add("autocorr.csv", autocorr_series(reference, &samples, g.max_lag, g.normalize_autocorr)?);
    out.add("rate.csv", rate_series(reference, &samples, g.rate_bandwidth)?);
    out.add("rescaled_cdf.csv", rescaled_cdf(&glm, &params, &train, g.cdf_points)?);
    Ok(())
}

/// Fraction of intervals per bin for both sets on a shared grid.
fn isi_histogram(data: &TrialSet, model: &TrialSet, bins: usize, max: Option<f64>) -> Result<String> {
    if bins == 0 {
        return Err(Error::Parameter("gof.isi_bins must be at least 1".into()));
    }
    let a = spiketrain::interspike_intervals(data);
    let b = spiketrain::interspike_intervals(model);
    let top = max.unwrap_or_else(|| a.iter().chain(&b).cloned().fold(0.0, f64::max));
    let top = if top > 0.0 { top } else { data.dt() };
    let width = top / bins as f64;
    let hist = |v: &[f64]| {
        let mut h = vec![0.0; bins];
        for &x in v {
            if x <= top {
                h[((x / width) as usize).min(bins - 1)] += 1.0;
            }
        }
        let n = v.len().max(1) as f64;
        h.iter().map(|c| c / n).collect::<Vec<f64>>()
    };
    let (ha, hb) = (hist(&a), hist(&b));
    let mut s = String::from("bin_start,bin_end,data,model\n");
    for i in 0..bins {
        let _ = writeln!(s, "{},{},{},{}", i as f64 * width, (i + 1) as f64 * width, ha[i], hb[i]);
    }
    Ok(s)
}

fn autocorr_series(data: &TrialSet, model: &TrialSet, max_lag: usize, normalize: bool) -> Result<String> {
    let a = gof::mean_autocorrelation(data, max_lag, normalize)?;
    let b = gof::mean_autocorrelation(model, max_lag, normalize)?;
    let mut s = String::from("lag,data,model\n");
    for (k, (x, y)) in a.iter().zip(&b).enumerate() {
        let _ = writeln!(s, "{},{x},{y}", k + 1);
    }
    Ok(s)
}

fn mean_rate_series(set: &TrialSet, bandwidth: f64) -> Vec<f64> {
    let mut acc = vec![0.0; set.n_bins()];
    for tr in set.trials() {
        for (a, &c) in acc.iter_mut().zip(tr.counts()) {
            *a += c as f64;
        }
    }
    let scale = 1.0 / (set.len() as f64 * set.dt());
    let raw: Vec<f64> = acc.iter().map(|a| a * scale).collect();
    spiketrain::gaussian_smooth(&raw, bandwidth / set.dt())
}

fn rate_series(data: &TrialSet, model: &TrialSet, bandwidth: f64) -> Result<String> {
    if !(bandwidth > 0.0) {
        return Err(Error::Parameter("gof.rate_bandwidth must be positive".into()));
    }
    if data.n_bins() != model.n_bins() {
        return Err(Error::Shape(format!(
            "data has {} bins per trial but samples have {}",
            data.n_bins(),
            model.n_bins()
        )));
    }
    let a = mean_rate_series(data, bandwidth);
    let b = mean_rate_series(model, bandwidth);
    let mut s = String::from("time,data_hz,model_hz\n");
    for (t, (x, y)) in a.iter().zip(&b).enumerate() {
        let _ = writeln!(s, "{},{x},{y}", t as f64 * data.dt());
    }
    Ok(s)
}

/// Empirical CDF of the rescaled intervals on an even grid over [0, 1],
/// with the uniform reference and the 95% KS band.
fn rescaled_cdf(glm: &Glm, params: &GlmParams, train: &TrialSet, points: usize) -> Result<String> {
    if points < 2 {
        return Err(Error::Parameter("gof.cdf_points must be at least 2".into()));
    }
    let ks = match gof::time_rescale_ks(glm, params, train) {
        Ok(k) => Some(k),
        Err(Error::InsufficientData(_)) => None,
        Err(e) => return Err(e),
    };
    let mut s = String::from("u,empirical,uniform,lower,upper\n");
    for i in 0..points {
        let u = i as f64 / (points - 1) as f64;
        match &ks {
            Some(k) => {
                let below = k.rescaled.partition_point(|&z| z <= u);
                let e = below as f64 / k.n as f64;
                let _ = writeln!(s, "{u},{e},{u},{},{}", (u - k.critical).max(0.0), (u + k.critical).min(1.0));
            }
            None => {
                let _ = writeln!(s, "{u},NA,{u},NA,NA");
            }
        }
    }
    Ok(s)
}

pub fn alpha_scan(cfg: &Config, out: &mut Outputs) -> Result<()> {
    let seed = cfg.require_seed()?;
    let data = cfg.load_data()?;
    let glm = cfg.glm()?;
    let spec = cfg.kernel_spec(&data)?;
    let init = init_params(cfg, &glm, &data)?;
    let eval = EvalConfig {
        n_samples: cfg.fit.eval_samples,
        seed: derive_seed(seed, SALT_EVAL),
    };
    let res = select_alpha(&glm, &data, &spec, &cfg.fit.alpha_grid, &init, &cfg.fit_config(seed), &eval);
    let report = match &res {
        Ok((_, r)) => r,
        Err(Error::NoQualifyingAlpha(r)) => r.as_ref(),
        Err(_) => return res.map(|_| ()),
    };
    out.add("alpha_scan.csv", report.to_csv());
    match report.selected {
        Some(a) => {
            let row = report
                .rows
                .iter()
                .find(|r| r.alpha == a)
                .expect("selected alpha has a row");
            println!("selected_alpha={a}");
            out.add("params.toml", model_file(&glm, &row.params, data.dt())?);
            out.add("selected.toml", format!("alpha = {a}\nkernel = \"{}\"\n", spec.tag()));
        }
        None => println!("selected_alpha=none"),
    }
    res.map(|_| ())
}

fn distance(a: &GlmParams, b: &GlmParams) -> f64 {
    a.to_flat()
        .iter()
        .zip(b.to_flat())
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

#[derive(Debug, Clone, Serialize, serde::Deserialize)]
pub struct ToySummary {
    pub data_rate_hz: f64,
    pub sigma: f64,
    pub dist_mle: f64,
    pub dist_mmd: f64,
    /// `dist_mmd / dist_mle`.
    pub distance_ratio: f64,
    pub tail_mmd2_mean: f64,
    pub null_mean: f64,
    pub null_sd: f64,
    /// `|tail - null_mean| / null_sd`.
    pub null_z: f64,
    pub within_3se: bool,
}

pub fn toy(cfg: &Config, out: &mut Outputs) -> Result<()> {
    let seed = cfg.require_seed()?;
    let t = &cfg.toy;
    if t.history.is_empty() || !(t.rate > 0.0) {
        return Err(Error::Parameter("toy needs a non-empty history filter and a positive rate".into()));
    }
    let glm = Glm::new(ObservationModel::Bernoulli);
    let truth = GlmParams::new(t.rate.ln(), t.history.clone());
    let data = glm
        .sample_free_running(&truth, t.n_trials, t.n_bins, t.dt, None, seed)?
        .trials;
    let mle_cfg = glm::MleConfig {
        history_len: t.history.len(),
        ..Default::default()
    };
    let (mle, mle_trace) = glm::fit_mle(&glm, &data, &mle_cfg)?;
    let sigma = kernels::cumcount_median_sigma(&data)? * t.sigma_factor;
    let spec = KernelSpec::CumcountGaussian { sigma };
    spec.validate()?;
    let init = GlmParams::new(data.mean_rate().ln(), vec![0.0; t.history.len()]);
    let fc = FitConfig {
        samples_per_step: t.samples_per_step,
        max_iters: t.max_iters,
        learning_rate: t.learning_rate,
        lr_final_fraction: t.lr_final_fraction,
        average_last: t.average_last,
        seed: derive_seed(seed, SALT_FIT),
        ..Default::default()
    };
    let (fit, trace) = mmd::fit_mmd(&glm, &data, &spec, &init, &fc)?;
    let null = mmd::split_null_mmd2(&data, &spec, t.null_splits, derive_seed(seed, SALT_NULL))?;
    let tail = mean(&trace.tail_mmd2(100));
    let null_z = (tail - null.mean).abs() / null.sd;
    let (dist_mle, dist_mmd) = (distance(&mle, &truth), distance(&fit, &truth));
    let summary = ToySummary {
        data_rate_hz: data.mean_rate(),
        sigma,
        dist_mle,
        dist_mmd,
        distance_ratio: dist_mmd / dist_mle,
        tail_mmd2_mean: tail,
        null_mean: null.mean,
        null_sd: null.sd,
        null_z,
        within_3se: null_z <= 3.0,
    };
    let mut filters = String::from("param,truth,mle,mmd\n");
    let names = std::iter::once("bias".to_string()).chain((1..=t.history.len()).map(|k| format!("h{k}")));
    for (name, ((a, b), c)) in names.zip(truth.to_flat().iter().zip(mle.to_flat()).zip(fit.to_flat())) {
        let _ = writeln!(filters, "{name},{a},{b},{c}");
    }
    let raster_seed = derive_seed(seed, SALT_RASTER);
    let n_r = t.raster_trials.max(1);
    let raster = |p: &GlmParams| -> Result<String> {
        Ok(write_spike_times(&glm.sample_free_running(p, n_r, t.n_bins, t.dt, None, raster_seed)?.trials))
    };
    out.add("truth.toml", model_file(&glm, &truth, t.dt)?);
    out.add("mle.toml", model_file(&glm, &mle, t.dt)?);
    out.add("mmd.toml", model_file(&glm, &fit, t.dt)?);
    out.add("filters.csv", filters);
    out.add("mle_trace.ndjson", mle_trace.to_ndjson());
    out.add("mmd_trace.ndjson", trace.to_ndjson());
    out.add("train.txt", write_spike_times(&data));
    out.add("samples_mle.txt", raster(&mle)?);
    out.add("samples_mmd.txt", raster(&fit)?);
    out.add("summary.toml", to_toml(&summary)?);
    println!(
        "dist_mle={dist_mle} dist_mmd={dist_mmd} ratio={} null_z={null_z}",
        summary.distance_ratio
    );
    Ok(())
}
