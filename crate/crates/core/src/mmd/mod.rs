//! Squared-MMD estimators and their parameter gradients.
//!
//! Two gradient estimators are provided. The score-function estimator treats
//! the kernel as fixed and differentiates through the sampling distribution.
//! The model-based estimator differentiates a parameter-dependent kernel with
//! the model samples held fixed, dropping the score terms.

mod fit;

pub use fit::{
    fit_joint, fit_mmd, select_alpha, split_null_mmd2, SplitNull, AlphaRow, AlphaScanReport, EvalConfig, FitConfig, DEFAULT_ALPHA_GRID,
};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::glm::{Glm, GlmParams, GradVec};
use crate::kernels::{self, KernelSpec, ModelRef};
use crate::spiketrain::TrialSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    Biased,
    #[default]
    Unbiased,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mmd2Estimate {
    pub value: f64,
    pub estimator: Estimator,
    pub n_data: usize,
    pub n_model: usize,
}

fn off_diagonal_sum(g: &DMatrix<f64>) -> f64 {
    g.sum() - g.trace()
}

/// U-statistic `sum_{i!=j} Gdd/(N(N-1)) + sum_{i!=j} Gmm/(M(M-1)) - 2 sum Gdm/(NM)`.
pub fn mmd2_unbiased(g_dd: &DMatrix<f64>, g_mm: &DMatrix<f64>, g_dm: &DMatrix<f64>) -> Result<Mmd2Estimate> {
    let n = g_dd.nrows();
    let m = g_mm.nrows();
    if !g_dd.is_square() || !g_mm.is_square() {
        return Err(Error::shape("within-set Gram blocks must be square"));
    }
    if g_dm.shape() != (n, m) {
        return Err(Error::shape(format!(
            "cross Gram block is {:?}, expected ({n}, {m})",
            g_dm.shape()
        )));
    }
    if n < 2 || m < 2 {
        return Err(Error::param(format!(
            "unbiased MMD needs at least two trials per set, got N = {n}, M = {m}"
        )));
    }
    let (nf, mf) = (n as f64, m as f64);
    let value = off_diagonal_sum(g_dd) / (nf * (nf - 1.0)) + off_diagonal_sum(g_mm) / (mf * (mf - 1.0))
        - 2.0 * g_dm.sum() / (nf * mf);
    Ok(Mmd2Estimate {
        value,
        estimator: Estimator::Unbiased,
        n_data: n,
        n_model: m,
    })
}

fn check_features(f_data: &[Vec<f64>], f_model: &[Vec<f64>]) -> Result<usize> {
    if f_data.is_empty() || f_model.is_empty() {
        return Err(Error::param("feature sets must be non-empty"));
    }
    let d = f_data[0].len();
    if f_data.iter().chain(f_model).any(|f| f.len() != d) {
        return Err(Error::shape("feature vectors differ in dimension"));
    }
    Ok(d)
}

fn feature_sum(f: &[Vec<f64>], d: usize) -> Vec<f64> {
    let mut s = vec![0.0; d];
    for v in f {
        for (a, b) in s.iter_mut().zip(v) {
            *a += b;
        }
    }
    s
}

fn sq_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

/// `||mean(F_data) - mean(F_model)||²`, linear in the number of samples.
pub fn mmd2_biased(f_data: &[Vec<f64>], f_model: &[Vec<f64>]) -> Result<Mmd2Estimate> {
    let d = check_features(f_data, f_model)?;
    let (n, m) = (f_data.len(), f_model.len());
    let sd = feature_sum(f_data, d);
    let sm = feature_sum(f_model, d);
    let value = sd
        .iter()
        .zip(&sm)
        .map(|(a, b)| {
            let g = a / n as f64 - b / m as f64;
            g * g
        })
        .sum::<f64>()
        .max(0.0);
    Ok(Mmd2Estimate {
        value,
        estimator: Estimator::Biased,
        n_data: n,
        n_model: m,
    })
}

/// Unbiased estimate from explicit features without forming Gram matrices.
pub fn mmd2_unbiased_features(f_data: &[Vec<f64>], f_model: &[Vec<f64>]) -> Result<Mmd2Estimate> {
    let d = check_features(f_data, f_model)?;
    let (n, m) = (f_data.len(), f_model.len());
    if n < 2 || m < 2 {
        return Err(Error::param(format!(
            "unbiased MMD needs at least two trials per set, got N = {n}, M = {m}"
        )));
    }
    let sd = feature_sum(f_data, d);
    let sm = feature_sum(f_model, d);
    let (nf, mf) = (n as f64, m as f64);
    let within = |s: &[f64], f: &[Vec<f64>], k: f64| {
        (sq_norm(s) - f.iter().map(|v| sq_norm(v)).sum::<f64>()) / (k * (k - 1.0))
    };
    let cross: f64 = sd.iter().zip(&sm).map(|(a, b)| a * b).sum();
    Ok(Mmd2Estimate {
        value: within(&sd, f_data, nf) + within(&sm, f_model, mf) - 2.0 * cross / (nf * mf),
        estimator: Estimator::Unbiased,
        n_data: n,
        n_model: m,
    })
}

/// MMD² between a data set and a model sample set under `spec`.
pub fn mmd2(
    spec: &KernelSpec,
    model: Option<ModelRef<'_>>,
    data: &TrialSet,
    samples: &TrialSet,
    estimator: Estimator,
) -> Result<Mmd2Estimate> {
    if spec.has_features() {
        let fd = kernels::feature_matrix(spec, model, data)?;
        let fm = kernels::feature_matrix(spec, model, samples)?;
        return match estimator {
            Estimator::Biased => mmd2_biased(&fd, &fm),
            Estimator::Unbiased => mmd2_unbiased_features(&fd, &fm),
        };
    }
    let g_dd = kernels::gram(spec, model, data, data)?;
    let g_mm = kernels::gram(spec, model, samples, samples)?;
    let g_dm = kernels::gram(spec, model, data, samples)?;
    match estimator {
        Estimator::Unbiased => mmd2_unbiased(&g_dd, &g_mm, &g_dm),
        Estimator::Biased => {
            let (n, m) = (g_dd.nrows() as f64, g_mm.nrows() as f64);
            Ok(Mmd2Estimate {
                value: (g_dd.sum() / (n * n) + g_mm.sum() / (m * m) - 2.0 * g_dm.sum() / (n * m)).max(0.0),
                estimator: Estimator::Biased,
                n_data: g_dd.nrows(),
                n_model: g_mm.nrows(),
            })
        }
    }
}

/// Gradient estimate plus the number of model samples left out of it.
#[derive(Debug, Clone, PartialEq)]
pub struct GradEstimate {
    pub grad: GradVec,
    pub n_excluded: usize,
    pub n_used: usize,
}

/// Score-function gradient of the unbiased MMD² given per-sample scores and
/// the Gram blocks `K_mm` (M×M) and `K_dm` (N×M).
///
/// With `baseline` on, every kernel value multiplying `score_j` is centred by
/// a leave-one-out mean computed from the other samples only. The baseline
/// is then independent of sample `j`, so the estimator stays exactly
/// unbiased while most of the variance from the kernel offset cancels.
pub fn score_gradient_from_gram(
    scores: &[GradVec],
    k_mm: &DMatrix<f64>,
    k_dm: &DMatrix<f64>,
    baseline: bool,
) -> Result<GradVec> {
    let m = scores.len();
    let n = k_dm.nrows();
    if m < 2 || n < 1 {
        return Err(Error::param("score gradient needs M >= 2 samples and data"));
    }
    if k_mm.shape() != (m, m) || k_dm.ncols() != m {
        return Err(Error::shape("Gram blocks do not match the number of scores"));
    }
    let (nf, mf) = (n as f64, m as f64);
    // Row sums without the diagonal.
    let r: Vec<f64> = (0..m).map(|i| k_mm.row(i).sum() - k_mm[(i, i)]).collect();
    // Column means of the cross block.
    let c: Vec<f64> = (0..m).map(|j| k_dm.column(j).sum() / nf).collect();
    let c_total: f64 = c.iter().sum();
    let loo_pairs = baseline && m >= 3;

    let mut grad = scores[0].zeros_like_grad();
    for (j, s) in scores.iter().enumerate() {
        let mut w_mm = 0.0;
        for i in 0..m {
            if i == j {
                continue;
            }
            let k = k_mm[(i, j)];
            let b = if loo_pairs { (r[i] - k) / (mf - 2.0) } else { 0.0 };
            w_mm += k - b;
        }
        let b_dm = if baseline { (c_total - c[j]) / (mf - 1.0) } else { 0.0 };
        let w = 2.0 * w_mm / (mf * (mf - 1.0)) - 2.0 * (c[j] - b_dm) / mf;
        grad.add_scaled(s, w);
    }
    Ok(grad)
}

/// Score-function MMD² gradient for a fixed kernel.
///
/// Samples on which the intensity cap binds have no score and are left out;
/// if more than half are left out the step fails with a runaway error.
pub fn mmd2_grad_score(
    glm: &Glm,
    params: &GlmParams,
    data: &TrialSet,
    samples: &TrialSet,
    spec: &KernelSpec,
    baseline: bool,
) -> Result<GradEstimate> {
    score_step(glm, params, data, samples, spec, baseline, None, 0).map(|(g, _)| g)
}

/// Shared by [`mmd2_grad_score`] and the optimizer; also returns the
/// unbiased MMD² on the retained samples. `k_dd` may be supplied when the
/// data block is already known.
#[allow(clippy::too_many_arguments)]
pub(crate) fn score_step(
    glm: &Glm,
    params: &GlmParams,
    data: &TrialSet,
    samples: &TrialSet,
    spec: &KernelSpec,
    baseline: bool,
    k_dd: Option<&DMatrix<f64>>,
    iteration: usize,
) -> Result<(GradEstimate, Option<f64>)> {
    if spec.is_model_based() {
        return Err(Error::Contract(format!(
            "score-function gradient needs a fixed kernel, got `{}`",
            spec.tag()
        )));
    }
    let m = samples.len();
    if m < 2 {
        return Err(Error::param("score gradient needs at least two model samples"));
    }
    let u = samples.stimulus();
    let scored: Vec<Result<GradVec>> = samples
        .trials()
        .par_iter()
        .map(|x| glm.score_function(params, x, u))
        .collect();
    let mut keep = Vec::with_capacity(m);
    let mut scores = Vec::with_capacity(m);
    for (j, s) in scored.into_iter().enumerate() {
        match s {
            Ok(g) => {
                keep.push(j);
                scores.push(g);
            }
            Err(Error::GradientUndefined { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    let excluded = m - keep.len();
    if 2 * excluded > m || keep.len() < 2 {
        return Err(Error::RunawayOptimization {
            iteration,
            excluded,
            total: m,
        });
    }
    let kept = if excluded > 0 { samples.select(&keep)? } else { samples.clone() };
    let k_mm = kernels::gram(spec, None, &kept, &kept)?;
    let k_dm = kernels::gram(spec, None, data, &kept)?;
    let grad = score_gradient_from_gram(&scores, &k_mm, &k_dm, baseline)?;
    let value = match k_dd {
        Some(k) if k.nrows() >= 2 => Some(mmd2_unbiased(k, &k_mm, &k_dm)?.value),
        _ => None,
    };
    Ok((
        GradEstimate {
            grad,
            n_excluded: excluded,
            n_used: keep.len(),
        },
        value,
    ))
}

/// Model-based MMD² gradient: differentiates the kernel's feature map with
/// the model samples frozen. Also returns the MMD² estimate at `params`.
///
/// For the mean-intensity kernel, samples on which the cap binds are left
/// out (their intensity has no derivative); capped data is an error.
pub fn mmd2_grad_modelbased(
    glm: &Glm,
    params: &GlmParams,
    data: &TrialSet,
    samples: &TrialSet,
    spec: &KernelSpec,
    estimator: Estimator,
) -> Result<(GradEstimate, Mmd2Estimate)> {
    if !spec.is_model_based() {
        return Err(Error::Contract(format!(
            "model-based gradient needs a model-based kernel, got `{}`",
            spec.tag()
        )));
    }
    let model = ModelRef { glm, params };
    let samples_kept;
    let mut excluded = 0;
    let samples = if matches!(spec, KernelSpec::MeanCi) {
        let keep: Vec<usize> = samples
            .trials()
            .iter()
            .enumerate()
            .filter(|(_, x)| glm.bin_terms(params, x, samples.stimulus()).first_clipped.is_none())
            .map(|(j, _)| j)
            .collect();
        excluded = samples.len() - keep.len();
        if keep.is_empty() {
            return Err(Error::RunawayOptimization {
                iteration: 0,
                excluded,
                total: samples.len(),
            });
        }
        samples_kept = samples.select(&keep)?;
        &samples_kept
    } else {
        samples
    };

    let fd = kernels::feature_matrix(spec, Some(model), data)?;
    let fm = kernels::feature_matrix(spec, Some(model), samples)?;
    let d = check_features(&fd, &fm)?;
    let (n, m) = (fd.len(), fm.len());
    let (nf, mf) = (n as f64, m as f64);
    let sd = feature_sum(&fd, d);
    let sm = feature_sum(&fm, d);

    // Cotangent on each trial's features; the gradient is sum_i J_i^T v_i.
    let (est, v_data, v_model): (Mmd2Estimate, Vec<Vec<f64>>, Vec<Vec<f64>>) = match estimator {
        Estimator::Unbiased => {
            if n < 2 || m < 2 {
                return Err(Error::param("unbiased MMD needs at least two trials per set"));
            }
            let vd = fd
                .iter()
                .map(|f| {
                    (0..d)
                        .map(|k| 2.0 * (sd[k] - f[k]) / (nf * (nf - 1.0)) - 2.0 * sm[k] / (nf * mf))
                        .collect()
                })
                .collect();
            let vm = fm
                .iter()
                .map(|f| {
                    (0..d)
                        .map(|k| 2.0 * (sm[k] - f[k]) / (mf * (mf - 1.0)) - 2.0 * sd[k] / (nf * mf))
                        .collect()
                })
                .collect();
            (mmd2_unbiased_features(&fd, &fm)?, vd, vm)
        }
        Estimator::Biased => {
            let gap: Vec<f64> = (0..d).map(|k| sd[k] / nf - sm[k] / mf).collect();
            let vd = vec![gap.iter().map(|g| 2.0 * g / nf).collect(); n];
            let vm = vec![gap.iter().map(|g| -2.0 * g / mf).collect(); m];
            (mmd2_biased(&fd, &fm)?, vd, vm)
        }
    };

    let vjps = |set: &TrialSet, vs: &[Vec<f64>]| -> Result<GradVec> {
        let parts: Vec<Result<GradVec>> = set
            .trials()
            .par_iter()
            .zip(vs)
            .map(|(x, v)| spec.feature_vjp(model, x, set.stimulus(), v))
            .collect();
        let mut total = GradVec::zeros_like(params);
        for p in parts {
            total.add_scaled(&p?, 1.0);
        }
        Ok(total)
    };
    let mut grad = vjps(data, &v_data)?;
    grad.add_scaled(&vjps(samples, &v_model)?, 1.0);
    Ok((
        GradEstimate {
            grad,
            n_excluded: excluded,
            n_used: m,
        },
        est,
    ))
}
