//! Spike-train kernels.
//!
//! Fixed kernels depend only on the trains: the Gaussian kernel on
//! cumulative-count differences, and the dot-product kernels induced by the
//! raw autocorrelation and by the Gaussian-smoothed train. Model-based
//! kernels depend on the GLM parameters: the mean history term, the
//! autocorrelation of the history-filtered train, and the conditional
//! intensity itself. Every kernel except the cumulative-count Gaussian is an
//! explicit finite-dimensional feature map, which is what the MMD layer uses
//! to get linear-cost estimators and vector-Jacobian gradients.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::glm::{project_bin_weights, Glm, GlmParams, GradVec};
use crate::signal;
use crate::spiketrain::{self, SpikeTrain, TrialSet};

/// Upper bound for the default autocorrelation lag range.
pub const DEFAULT_MAX_LAG_CAP: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "tag", rename_all = "kebab-case")]
pub enum KernelSpec {
    /// `exp(-(1/sigma) sum_t (I_x[t] - I_y[t])^2 dt)` on cumulative counts.
    CumcountGaussian { sigma: f64 },
    /// Dot product of raw spike autocorrelations, lags `0..=max_lag`.
    FeatureAutocorr { max_lag: usize },
    /// Dot product of Gaussian-smoothed trains.
    FeatureSmoothed { bandwidth: f64 },
    /// Product of time-averaged history terms.
    FeatureMeanHistory,
    /// Dot product of autocorrelations of the history-filtered trains.
    HistoryAutocorr { max_lag: usize },
    /// Dot product over time of conditional intensities.
    MeanCi,
}

/// The parameters a model-based kernel is evaluated at.
#[derive(Debug, Clone, Copy)]
pub struct ModelRef<'a> {
    pub glm: &'a Glm,
    pub params: &'a GlmParams,
}

impl KernelSpec {
    pub fn tag(&self) -> &'static str {
        match self {
            Self::CumcountGaussian { .. } => "cumcount-gaussian",
            Self::FeatureAutocorr { .. } => "feature-autocorr",
            Self::FeatureSmoothed { .. } => "feature-smoothed",
            Self::FeatureMeanHistory => "feature-mean-history",
            Self::HistoryAutocorr { .. } => "history-autocorr",
            Self::MeanCi => "mean-ci",
        }
    }

    pub fn is_model_based(&self) -> bool {
        matches!(
            self,
            Self::FeatureMeanHistory | Self::HistoryAutocorr { .. } | Self::MeanCi
        )
    }

    /// True when the kernel is a dot product of explicit features.
    pub fn has_features(&self) -> bool {
        !matches!(self, Self::CumcountGaussian { .. })
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::CumcountGaussian { sigma } if !(sigma > 0.0 && sigma.is_finite()) => {
                Err(Error::param(format!("sigma must be positive, got {sigma}")))
            }
            Self::FeatureSmoothed { bandwidth } if !(bandwidth > 0.0 && bandwidth.is_finite()) => {
                Err(Error::param(format!("bandwidth must be positive, got {bandwidth}")))
            }
            Self::FeatureAutocorr { max_lag } | Self::HistoryAutocorr { max_lag } if max_lag < 1 => {
                Err(Error::param("max_lag must be at least 1"))
            }
            _ => Ok(()),
        }
    }

    fn check_model<'a>(&self, model: Option<ModelRef<'a>>) -> Result<Option<ModelRef<'a>>> {
        match (self.is_model_based(), model) {
            (true, None) => Err(Error::Contract(format!(
                "model-based kernel `{}` needs model parameters",
                self.tag()
            ))),
            (false, Some(_)) => Err(Error::Contract(format!(
                "fixed kernel `{}` must not receive model parameters",
                self.tag()
            ))),
            (_, m) => Ok(m),
        }
    }

    /// Explicit feature vector, or `None` for the cumulative-count Gaussian.
    pub fn features(
        &self,
        model: Option<ModelRef<'_>>,
        x: &SpikeTrain,
        u: Option<&[f64]>,
    ) -> Result<Option<Vec<f64>>> {
        self.validate()?;
        let model = self.check_model(model)?;
        let f = match *self {
            Self::CumcountGaussian { .. } => return Ok(None),
            Self::FeatureAutocorr { max_lag } => feature_autocorr(x, max_lag)?,
            Self::FeatureSmoothed { bandwidth } => feature_smoothed(x, bandwidth)?,
            Self::FeatureMeanHistory => vec![mean_history_feature(model.unwrap().params, x)],
            Self::HistoryAutocorr { max_lag } => {
                history_autocorr_features(model.unwrap().params, x, max_lag)?
            }
            Self::MeanCi => {
                let m = model.unwrap();
                m.glm.conditional_intensity(m.params, x, u)?.lambda
            }
        };
        Ok(Some(f))
    }

    /// Kernel value `k(x, y)`.
    pub fn eval(
        &self,
        model: Option<ModelRef<'_>>,
        x: &SpikeTrain,
        y: &SpikeTrain,
        u: Option<&[f64]>,
    ) -> Result<f64> {
        check_pair(x, y)?;
        if let Self::CumcountGaussian { sigma } = *self {
            self.validate()?;
            self.check_model(model)?;
            return cumcount_kernel(x, y, sigma);
        }
        let fx = self.features(model, x, u)?.expect("feature kernel");
        let fy = self.features(model, y, u)?.expect("feature kernel");
        Ok(signal::dot(&fx, &fy))
    }

    /// Vector-Jacobian product `J_x^T v` of the feature map with respect to
    /// the GLM parameters. Only defined for model-based kernels.
    pub fn feature_vjp(
        &self,
        model: ModelRef<'_>,
        x: &SpikeTrain,
        u: Option<&[f64]>,
        v: &[f64],
    ) -> Result<GradVec> {
        if !self.is_model_based() {
            return Err(Error::Contract(format!(
                "fixed kernel `{}` has no parameter gradient",
                self.tag()
            )));
        }
        self.validate()?;
        let params = model.params;
        let counts = x.counts();
        let mut grad = GradVec::zeros_like(params);
        match *self {
            Self::FeatureMeanHistory => {
                let n = counts.len();
                let scale = v[0] / n as f64;
                for (k, d) in grad.d_history.iter_mut().enumerate() {
                    let lag = k + 1;
                    if lag >= n {
                        break;
                    }
                    let spikes: u64 = counts[..n - lag].iter().map(|&c| c as u64).sum();
                    *d = scale * spikes as f64;
                }
            }
            Self::HistoryAutocorr { .. } => {
                let h = params.history_term(counts);
                let g = signal::autocorr_adjoint(&h, v);
                let n = counts.len();
                for (s, c) in x.spikes() {
                    let c = c as f64;
                    for (k, d) in grad.d_history.iter_mut().enumerate() {
                        let t = s + k + 1;
                        if t >= n {
                            break;
                        }
                        *d += c * g[t];
                    }
                }
            }
            Self::MeanCi => {
                let ci = model.glm.conditional_intensity(params, x, u)?;
                if let Some(bin) = ci.first_clipped {
                    return Err(Error::GradientUndefined { bin });
                }
                let w: Vec<f64> = ci.lambda.iter().zip(v).map(|(l, vv)| l * vv).collect();
                grad = project_bin_weights(params, counts, u, &w);
            }
            _ => unreachable!("checked model-based above"),
        }
        Ok(grad)
    }
}

fn check_pair(x: &SpikeTrain, y: &SpikeTrain) -> Result<()> {
    if x.n_bins() != y.n_bins() || x.dt() != y.dt() {
        return Err(Error::shape(format!(
            "kernel arguments differ: {} bins @ {} vs {} bins @ {}",
            x.n_bins(),
            x.dt(),
            y.n_bins(),
            y.dt()
        )));
    }
    Ok(())
}

/// `sum_t (I_x[t] - I_y[t])^2 dt`, the squared cumulative-count distance.
pub fn cumcount_sq_distance(x: &SpikeTrain, y: &SpikeTrain) -> Result<f64> {
    check_pair(x, y)?;
    Ok(cumcount_sq_distance_unchecked(x.counts(), y.counts()) as f64 * x.dt())
}

fn cumcount_sq_distance_unchecked(a: &[u32], b: &[u32]) -> u128 {
    let mut diff: i64 = 0;
    let mut acc: u128 = 0;
    for (&p, &q) in a.iter().zip(b) {
        diff += p as i64 - q as i64;
        acc += (diff as i128 * diff as i128) as u128;
    }
    acc
}

pub fn cumcount_kernel(x: &SpikeTrain, y: &SpikeTrain, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::param(format!("sigma must be positive, got {sigma}")));
    }
    Ok((-cumcount_sq_distance(x, y)? / sigma).exp())
}

/// Median over data pairs of the squared cumulative-count distance, the
/// default bandwidth for [`KernelSpec::CumcountGaussian`].
pub fn cumcount_median_sigma(data: &TrialSet) -> Result<f64> {
    let trials = data.trials();
    if trials.len() < 2 {
        return Err(Error::InsufficientData(
            "median heuristic needs at least two trials".into(),
        ));
    }
    let mut d = Vec::new();
    for i in 0..trials.len() {
        for j in i + 1..trials.len() {
            d.push(cumcount_sq_distance(&trials[i], &trials[j])?);
        }
    }
    d.sort_by(f64::total_cmp);
    let mid = d.len() / 2;
    let median = if d.len() % 2 == 0 {
        0.5 * (d[mid - 1] + d[mid])
    } else {
        d[mid]
    };
    if median > 0.0 {
        return Ok(median);
    }
    let mean = d.iter().sum::<f64>() / d.len() as f64;
    if mean > 0.0 {
        Ok(mean)
    } else {
        Err(Error::param("all data trials are identical; pick sigma explicitly"))
    }
}

/// Default autocorrelation lag range: `T_bins - 1`, capped at 500.
pub fn default_max_lag(n_bins: usize) -> usize {
    n_bins.saturating_sub(1).clamp(1, DEFAULT_MAX_LAG_CAP)
}

pub fn feature_autocorr(x: &SpikeTrain, max_lag: usize) -> Result<Vec<f64>> {
    Ok(spiketrain::autocorrelation(x, max_lag)?.values)
}

pub fn feature_smoothed(x: &SpikeTrain, bandwidth: f64) -> Result<Vec<f64>> {
    Ok(spiketrain::smooth(x, bandwidth)?.values)
}

pub fn history_term(params: &GlmParams, x: &SpikeTrain) -> Vec<f64> {
    params.history_term(x.counts())
}

/// Raw autocorrelation of the history term, lags `0..=max_lag`.
pub fn history_autocorr_features(params: &GlmParams, x: &SpikeTrain, max_lag: usize) -> Result<Vec<f64>> {
    if max_lag < 1 || max_lag >= x.n_bins() {
        return Err(Error::param(format!(
            "max_lag must lie in [1, {}), got {max_lag}",
            x.n_bins()
        )));
    }
    Ok(signal::autocorr(&history_term(params, x), max_lag))
}

pub fn history_autocorr_kernel(params: &GlmParams, x: &SpikeTrain, y: &SpikeTrain, max_lag: usize) -> Result<f64> {
    check_pair(x, y)?;
    let a = history_autocorr_features(params, x, max_lag)?;
    let b = history_autocorr_features(params, y, max_lag)?;
    Ok(signal::dot(&a, &b))
}

pub fn mean_history_feature(params: &GlmParams, x: &SpikeTrain) -> f64 {
    let h = history_term(params, x);
    h.iter().sum::<f64>() / h.len() as f64
}

pub fn mean_ci_kernel(glm: &Glm, params: &GlmParams, x: &SpikeTrain, y: &SpikeTrain, u: Option<&[f64]>) -> Result<f64> {
    KernelSpec::MeanCi.eval(Some(ModelRef { glm, params }), x, y, u)
}

/// `grad_theta k(x, y; theta)` with both trains held fixed.
pub fn kernel_grad_theta(
    spec: &KernelSpec,
    model: ModelRef<'_>,
    x: &SpikeTrain,
    y: &SpikeTrain,
    u: Option<&[f64]>,
) -> Result<GradVec> {
    check_pair(x, y)?;
    if !spec.is_model_based() {
        return Err(Error::Contract(format!(
            "kernel_grad_theta needs a model-based kernel, got `{}`",
            spec.tag()
        )));
    }
    let fx = spec.features(Some(model), x, u)?.expect("feature kernel");
    let fy = spec.features(Some(model), y, u)?.expect("feature kernel");
    let mut g = spec.feature_vjp(model, x, u, &fy)?;
    g.add_scaled(&spec.feature_vjp(model, y, u, &fx)?, 1.0);
    Ok(g)
}

/// Feature vectors for every trial of a set.
pub fn feature_matrix(spec: &KernelSpec, model: Option<ModelRef<'_>>, set: &TrialSet) -> Result<Vec<Vec<f64>>> {
    set.trials()
        .par_iter()
        .map(|x| {
            spec.features(model, x, set.stimulus())
                .map(|f| f.expect("feature kernel"))
        })
        .collect()
}

/// Gram matrix `G[i][j] = k(A_i, B_j)`.
pub fn gram(spec: &KernelSpec, model: Option<ModelRef<'_>>, a: &TrialSet, b: &TrialSet) -> Result<DMatrix<f64>> {
    spec.validate()?;
    spec.check_model(model)?;
    check_pair(&a.trials()[0], &b.trials()[0])?;
    let (n, m) = (a.len(), b.len());
    if let KernelSpec::CumcountGaussian { sigma } = *spec {
        let rows: Vec<Vec<f64>> = a
            .trials()
            .par_iter()
            .map(|x| {
                b.trials()
                    .iter()
                    .map(|y| {
                        let d = cumcount_sq_distance_unchecked(x.counts(), y.counts()) as f64 * x.dt();
                        (-d / sigma).exp()
                    })
                    .collect()
            })
            .collect();
        return Ok(DMatrix::from_fn(n, m, |i, j| rows[i][j]));
    }
    let fa = feature_matrix(spec, model, a)?;
    let fb = feature_matrix(spec, model, b)?;
    Ok(DMatrix::from_fn(n, m, |i, j| signal::dot(&fa[i], &fb[j])))
}
