//! Stochastic optimizers for pure-MMD and joint NLL + alpha·MMD² training,
//! and the alpha scan that picks the weakest rate-matching penalty.

use std::time::Instant;

use rand::seq::SliceRandom;

use serde::{Deserialize, Serialize};

use super::{mmd2_grad_modelbased, mmd2_unbiased, score_step, Estimator};
use crate::error::{Error, Result};
use crate::glm::{penalized_gradient, Glm, GlmParams, GradVec};
use crate::gof;
use crate::kernels::{self, KernelSpec};
use crate::rng::derive_seed;
use crate::spiketrain::TrialSet;
use crate::trace::{FitTrace, TraceRecord};

pub const DEFAULT_ALPHA_GRID: [f64; 6] = [1e-2, 1e-1, 1.0, 10.0, 1e2, 1e3];

/// Half-width of the accepted firing-rate band, relative to the data rate.
pub const RATE_BAND: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    /// Weight of the MMD² term in the joint objective. Ignored by `fit_mmd`.
    pub alpha: f64,
    /// Model samples drawn per step (M).
    pub samples_per_step: usize,
    pub learning_rate: f64,
    /// The step size decays geometrically to this fraction of
    /// `learning_rate` at the last iteration.
    pub lr_final_fraction: f64,
    pub max_iters: usize,
    pub seed: u64,
    /// Leave-one-out control variate for the score-function estimator.
    pub baseline: bool,
    pub lambda_ridge: f64,
    /// Euclidean norm cap for the stochastic (MMD) part of each step.
    pub clip_norm: f64,
    /// Return the mean of the last this-many iterates (0 returns the last).
    pub average_last: usize,
    /// Estimator used by the model-based gradient path.
    pub estimator: Estimator,
    /// Stop once the max-norm of the full gradient falls below this.
    pub tol: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Store a parameter snapshot every this-many iterations (0 = never).
    pub snapshot_every: usize,
    /// Record wall-clock time per step. Off by default so traces stay
    /// byte-identical between runs.
    pub record_timing: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            alpha: 0.0,
            samples_per_step: 200,
            learning_rate: 0.05,
            lr_final_fraction: 0.1,
            max_iters: 1000,
            seed: 0,
            baseline: true,
            lambda_ridge: 0.0,
            clip_norm: 1e3,
            average_last: 100,
            estimator: Estimator::Unbiased,
            tol: 1e-6,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            snapshot_every: 0,
            record_timing: false,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::param(format!("alpha must be a finite value >= 0, got {}", self.alpha)));
        }
        if self.samples_per_step < 2 {
            return Err(Error::param("samples_per_step must be at least 2"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::param("learning_rate must be positive"));
        }
        if !(self.lr_final_fraction > 0.0 && self.lr_final_fraction <= 1.0) {
            return Err(Error::param("lr_final_fraction must lie in (0, 1]"));
        }
        if !(self.lambda_ridge >= 0.0) {
            return Err(Error::param("lambda_ridge must be >= 0"));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::param("clip_norm must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return Err(Error::param("invalid Adam constants"));
        }
        Ok(())
    }

    fn lr_at(&self, iter: usize) -> f64 {
        if self.max_iters <= 1 {
            return self.learning_rate;
        }
        let frac = iter as f64 / (self.max_iters - 1) as f64;
        self.learning_rate * self.lr_final_fraction.powf(frac)
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, x: &mut [f64], g: &[f64], lr: f64, cfg: &FitConfig) {
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t);
        let c2 = 1.0 - cfg.beta2.powi(self.t);
        for i in 0..x.len() {
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * g[i];
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            x[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + cfg.eps);
        }
    }
}

fn clip(g: &mut GradVec, max_norm: f64) {
    let n = g.norm();
    if n > max_norm {
        g.scale(max_norm / n);
    }
}

struct Step {
    nll: f64,
    mmd2: Option<f64>,
    grad: GradVec,
    excluded: usize,
}

fn optimize(
    init: &GlmParams,
    cfg: &FitConfig,
    mut step_fn: impl FnMut(usize, &GlmParams) -> Result<Step>,
) -> Result<(GlmParams, FitTrace)> {
    cfg.validate()?;
    let mut params = init.clone();
    let mut flat = params.to_flat();
    let mut adam = Adam::new(flat.len());
    let mut trace = FitTrace::default();
    let mut avg = vec![0.0; flat.len()];
    let mut n_avg = 0usize;
    let avg_start = cfg.max_iters.saturating_sub(cfg.average_last);

    for iter in 0..cfg.max_iters {
        let started = cfg.record_timing.then(Instant::now);
        let step = step_fn(iter, &params)?;
        let gflat = step.grad.to_flat();
        let gmax = gflat.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if !gmax.is_finite() || !step.nll.is_finite() {
            return Err(Error::Optimization {
                iteration: iter,
                msg: "objective or gradient is not finite".into(),
                last_finite: Box::new(params),
            });
        }
        if cfg.snapshot_every > 0 && iter % cfg.snapshot_every == 0 {
            trace.snapshots.push((iter, params.clone()));
        }
        let converged = gmax < cfg.tol;
        if !converged {
            adam.step(&mut flat, &gflat, cfg.lr_at(iter), cfg);
            if flat.iter().any(|v| !v.is_finite()) {
                return Err(Error::Optimization {
                    iteration: iter,
                    msg: "parameters left the finite range".into(),
                    last_finite: Box::new(params),
                });
            }
            params = params.from_flat_like(&flat);
            if iter >= avg_start {
                for (a, v) in avg.iter_mut().zip(&flat) {
                    *a += v;
                }
                n_avg += 1;
            }
        }
        trace.push(TraceRecord {
            iter,
            nll: step.nll,
            mmd2_raw: step.mmd2,
            mmd2_smoothed: None,
            grad_norm: gmax,
            n_excluded_samples: step.excluded,
            wall_ms: started.map(|s| s.elapsed().as_secs_f64() * 1e3),
        });
        if converged {
            trace.converged = true;
            return Ok((params, trace));
        }
    }
    if n_avg > 0 {
        avg.iter_mut().for_each(|a| *a /= n_avg as f64);
        params = params.from_flat_like(&avg);
    }
    Ok((params, trace))
}

fn check_data(data: &TrialSet) -> Result<()> {
    if data.len() < 2 {
        return Err(Error::InsufficientData(
            "MMD fitting needs at least two data trials".into(),
        ));
    }
    Ok(())
}

fn mean_nll(glm: &Glm, params: &GlmParams, data: &TrialSet) -> Result<f64> {
    Ok(-glm.total_log_likelihood(params, data)? / data.len() as f64)
}

/// Pure-MMD training with a fixed kernel and the score-function gradient.
pub fn fit_mmd(
    glm: &Glm,
    data: &TrialSet,
    spec: &KernelSpec,
    init: &GlmParams,
    cfg: &FitConfig,
) -> Result<(GlmParams, FitTrace)> {
    if spec.is_model_based() {
        return Err(Error::Contract(format!(
            "pure-MMD training needs a fixed kernel; `{}` must be combined with the likelihood",
            spec.tag()
        )));
    }
    check_data(data)?;
    let k_dd = kernels::gram(spec, None, data, data)?;
    optimize(init, cfg, |iter, params| {
        let samples = glm
            .sample_free_running(
                params,
                cfg.samples_per_step,
                data.n_bins(),
                data.dt(),
                data.stimulus(),
                derive_seed(cfg.seed, iter as u64),
            )?
            .trials;
        let (mut est, mmd2) = score_step(glm, params, data, &samples, spec, cfg.baseline, Some(&k_dd), iter)?;
        clip(&mut est.grad, cfg.clip_norm);
        Ok(Step {
            nll: mean_nll(glm, params, data)?,
            mmd2,
            grad: est.grad,
            excluded: est.n_excluded,
        })
    })
}

/// Minimizes `mean NLL + lambda_ridge·||h||² + alpha·MMD²`. The MMD gradient
/// uses the model-based estimator for model-based kernels and the
/// score-function estimator otherwise; only that stochastic part is clipped.
pub fn fit_joint(
    glm: &Glm,
    data: &TrialSet,
    spec: &KernelSpec,
    init: &GlmParams,
    cfg: &FitConfig,
) -> Result<(GlmParams, FitTrace)> {
    check_data(data)?;
    let k_dd = if spec.is_model_based() {
        None
    } else {
        Some(kernels::gram(spec, None, data, data)?)
    };
    optimize(init, cfg, |iter, params| {
        let (nll, mut grad) = penalized_gradient(glm, params, data, cfg.lambda_ridge)?;
        let samples = glm
            .sample_free_running(
                params,
                cfg.samples_per_step,
                data.n_bins(),
                data.dt(),
                data.stimulus(),
                derive_seed(cfg.seed, iter as u64),
            )?
            .trials;
        let (mut mmd_grad, mmd2, excluded) = match &k_dd {
            None => {
                let (g, est) = mmd2_grad_modelbased(glm, params, data, &samples, spec, cfg.estimator)?;
                (g.grad, est.value, g.n_excluded)
            }
            Some(k_dd) => {
                let (g, v) = score_step(glm, params, data, &samples, spec, cfg.baseline, Some(k_dd), iter)?;
                (g.grad, v.unwrap_or(f64::NAN), g.n_excluded)
            }
        };
        mmd_grad.scale(cfg.alpha);
        clip(&mut mmd_grad, cfg.clip_norm);
        if cfg.alpha > 0.0 {
            grad.add_scaled(&mmd_grad, 1.0);
        }
        Ok(Step {
            nll,
            mmd2: Some(mmd2),
            grad,
            excluded,
        })
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Free-running samples drawn to evaluate each fit.
    pub n_samples: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { n_samples: 1000, seed: 1 }
    }
}

/// One row of an alpha scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaRow {
    pub alpha: f64,
    /// Mean NLL of the fitted parameters on the training data.
    pub final_nll: f64,
    /// Mean raw MMD² over the last 100 iterations.
    pub final_mmd2: f64,
    pub rel_ll_train: f64,
    pub sample_rate_hz: f64,
    pub within_band: bool,
    pub runaway_fraction: f64,
    pub params: GlmParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaScanReport {
    pub data_rate_hz: f64,
    pub band: f64,
    pub n_eval_samples: usize,
    pub selected: Option<f64>,
    pub rows: Vec<AlphaRow>,
}

impl AlphaScanReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "alpha,final_nll,final_mmd2,rel_ll_train,sample_rate_hz,data_rate_hz,within_band,runaway_fraction\n",
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.alpha,
                r.final_nll,
                r.final_mmd2,
                r.rel_ll_train,
                r.sample_rate_hz,
                self.data_rate_hz,
                r.within_band,
                r.runaway_fraction
            ));
        }
        out
    }
}

/// Fits every alpha of an ascending grid from the same initial parameters
/// and seed, then returns the smallest alpha whose free-running samples
/// match the data firing rate within ±10%.
pub fn select_alpha(
    glm: &Glm,
    data: &TrialSet,
    spec: &KernelSpec,
    grid: &[f64],
    init: &GlmParams,
    cfg: &FitConfig,
    eval: &EvalConfig,
) -> Result<(f64, AlphaScanReport)> {
    if grid.is_empty() {
        return Err(Error::param("alpha grid is empty"));
    }
    if grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::param("alpha grid must be strictly ascending"));
    }
    if eval.n_samples == 0 {
        return Err(Error::param("evaluation needs at least one sample"));
    }
    let data_rate = data.mean_rate();
    let mut rows = Vec::with_capacity(grid.len());
    for &alpha in grid {
        let cfg = FitConfig { alpha, ..cfg.clone() };
        let (params, trace) = fit_joint(glm, data, spec, init, &cfg)?;
        let samples = glm.sample_free_running(
            &params,
            eval.n_samples,
            data.n_bins(),
            data.dt(),
            data.stimulus(),
            eval.seed,
        )?;
        let rate = samples.trials.mean_rate();
        rows.push(AlphaRow {
            alpha,
            final_nll: mean_nll(glm, &params, data)?,
            final_mmd2: mean(&trace.tail_mmd2(100)),
            rel_ll_train: glm.relative_ll_per_spike(&params, data)?,
            sample_rate_hz: rate,
            within_band: (rate - data_rate).abs() <= RATE_BAND * data_rate,
            runaway_fraction: gof::runaway_probability(&samples.trials, data)?,
            params,
        });
    }
    let selected = rows.iter().find(|r| r.within_band).map(|r| r.alpha);
    let report = AlphaScanReport {
        data_rate_hz: data_rate,
        band: RATE_BAND,
        n_eval_samples: eval.n_samples,
        selected,
        rows,
    };
    match selected {
        Some(a) => Ok((a, report)),
        None => Err(Error::NoQualifyingAlpha(Box::new(report))),
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Null distribution of the unbiased MMD² between random disjoint halves of
/// `data`: what a perfectly fitted model should score against the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitNull {
    pub mean: f64,
    pub sd: f64,
    pub values: Vec<f64>,
}

pub fn split_null_mmd2(data: &TrialSet, spec: &KernelSpec, n_splits: usize, seed: u64) -> Result<SplitNull> {
    if data.len() < 4 {
        return Err(Error::InsufficientData("split null needs at least 4 trials".into()));
    }
    if n_splits < 2 {
        return Err(Error::param("split null needs at least 2 splits"));
    }
    let g = kernels::gram(spec, None, data, data)?;
    let n = data.len();
    let half = n / 2;
    let mut idx: Vec<usize> = (0..n).collect();
    let mut values = Vec::with_capacity(n_splits);
    for s in 0..n_splits {
        let mut rng = crate::rng::stream(seed, s as u64);
        idx.shuffle(&mut rng);
        let (a, b) = idx.split_at(half);
        let b = &b[..half];
        let block = |r: &[usize], c: &[usize]| nalgebra::DMatrix::from_fn(r.len(), c.len(), |i, j| g[(r[i], c[j])]);
        values.push(mmd2_unbiased(&block(a, a), &block(b, b), &block(a, b))?.value);
    }
    let m = mean(&values);
    let var = values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (values.len() - 1) as f64;
    Ok(SplitNull { mean: m, sd: var.sqrt(), values })
}
