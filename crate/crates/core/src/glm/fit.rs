//! Maximum-likelihood fitting. The mean negative log-likelihood of the GLM
//! is convex in `(b, h, a)`, so a damped Newton iteration with exact
//! Hessian reaches the optimum to machine-level gradient norms.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{Glm, GlmParams, GradVec};
use crate::error::{Error, Result};
use crate::spiketrain::TrialSet;
use crate::trace::{FitTrace, TraceRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MleConfig {
    pub history_len: usize,
    pub stimulus_len: usize,
    /// Stop when the max-norm of the objective gradient drops below this.
    pub tol: f64,
    pub max_iters: usize,
    /// Weight of the `lambda_ridge * ||h||²` penalty.
    pub lambda_ridge: f64,
}

impl Default for MleConfig {
    fn default() -> Self {
        Self {
            history_len: 20,
            stimulus_len: 0,
            tol: 1e-6,
            max_iters: 5000,
            lambda_ridge: 0.0,
        }
    }
}

/// Fits from a zero filter with the bias at the log of the empirical rate.
pub fn fit_mle(glm: &Glm, trials: &TrialSet, config: &MleConfig) -> Result<(GlmParams, FitTrace)> {
    if trials.total_spikes() == 0 {
        return Err(Error::InsufficientData(
            "maximum-likelihood fit needs at least one spike".into(),
        ));
    }
    let mut init = GlmParams::new(trials.mean_rate().ln(), vec![0.0; config.history_len]);
    if config.stimulus_len > 0 {
        init = init.with_stimulus_filter(vec![0.0; config.stimulus_len]);
    }
    fit_mle_from(glm, trials, &init, config)
}

/// Penalized mean NLL, or `None` if the intensity cap binds on the data.
fn objective(glm: &Glm, params: &GlmParams, trials: &TrialSet, ridge: f64) -> Result<Option<f64>> {
    let mut total = 0.0;
    for x in trials.trials() {
        let terms = glm.bin_terms(params, x, trials.stimulus());
        if terms.first_clipped.is_some() {
            return Ok(None);
        }
        total -= x
            .counts()
            .iter()
            .zip(&terms.mu)
            .map(|(&c, &mu)| glm.bin_log_prob(c, mu))
            .sum::<f64>();
    }
    let penalty: f64 = params.history.iter().map(|h| h * h).sum::<f64>() * ridge;
    let f = total / trials.len() as f64 + penalty;
    Ok(f.is_finite().then_some(f))
}

/// Gradient and Hessian of the penalized mean NLL.
fn gradient_and_hessian(
    glm: &Glm,
    params: &GlmParams,
    trials: &TrialSet,
    ridge: f64,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let p = params.n_params();
    let lh = params.history_len();
    let la = params.stimulus_len();
    let mut grad = DVector::zeros(p);
    let mut hess = DMatrix::zeros(p, p);
    let u = trials.stimulus();
    let mut row: Vec<(usize, f64)> = Vec::with_capacity(p);
    for x in trials.trials() {
        let counts = x.counts();
        let terms = glm.bin_terms(params, x, u);
        if let Some(bin) = terms.first_clipped {
            return Err(Error::GradientUndefined { bin });
        }
        let mut recent: std::collections::VecDeque<(usize, u32)> = Default::default();
        for (t, (&c, &mu)) in counts.iter().zip(&terms.mu).enumerate() {
            while recent.front().is_some_and(|&(s, _)| t - s > lh) {
                recent.pop_front();
            }
            // Sparse design row z_t = [1, x_{t-1..t-L_h}, u_{t-1..t-L_a}].
            row.clear();
            row.push((0, 1.0));
            for &(s, cs) in &recent {
                row.push((t - s, cs as f64));
            }
            if let (Some(u), true) = (u, la > 0) {
                for k in 0..la.min(t) {
                    row.push((1 + lh + k, u[t - k - 1]));
                }
            }
            let g = -glm.bin_score(c, mu);
            let w = glm.bin_curvature(c, mu);
            for &(i, zi) in &row {
                grad[i] += g * zi;
                for &(j, zj) in &row {
                    hess[(i, j)] += w * zi * zj;
                }
            }
            if c > 0 && lh > 0 {
                recent.push_back((t, c));
            }
        }
    }
    let n = trials.len() as f64;
    grad /= n;
    hess /= n;
    for (k, h) in params.history.iter().enumerate() {
        grad[1 + k] += 2.0 * ridge * h;
        hess[(1 + k, 1 + k)] += 2.0 * ridge;
    }
    Ok((grad, hess))
}

fn newton_direction(grad: &DVector<f64>, hess: &DMatrix<f64>) -> DVector<f64> {
    let scale = hess.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    let mut damping = 0.0;
    for _ in 0..60 {
        let mut h = hess.clone();
        for i in 0..h.nrows() {
            h[(i, i)] += damping;
        }
        if let Some(chol) = h.cholesky() {
            return -chol.solve(grad);
        }
        damping = if damping == 0.0 { 1e-12 * scale } else { damping * 10.0 };
    }
    -grad.clone()
}

/// Damped Newton from `init`. Stops when the gradient max-norm drops below
/// `config.tol`; `trace.converged` reports whether it did.
pub fn fit_mle_from(
    glm: &Glm,
    trials: &TrialSet,
    init: &GlmParams,
    config: &MleConfig,
) -> Result<(GlmParams, FitTrace)> {
    let ridge = config.lambda_ridge;
    let mut params = init.clone();
    let mut trace = FitTrace::default();
    let mut f = objective(glm, &params, trials, ridge)?.ok_or_else(|| Error::Optimization {
        iteration: 0,
        msg: "objective is not finite at the initial parameters".into(),
        last_finite: Box::new(init.clone()),
    })?;

    for iter in 0..=config.max_iters {
        let (grad, hess) = gradient_and_hessian(glm, &params, trials, ridge)?;
        let gmax = grad.amax();
        trace.push(TraceRecord {
            iter,
            nll: f,
            mmd2_raw: None,
            mmd2_smoothed: None,
            grad_norm: gmax,
            n_excluded_samples: 0,
            wall_ms: None,
        });
        if !gmax.is_finite() {
            return Err(Error::Optimization {
                iteration: iter,
                msg: "gradient is not finite".into(),
                last_finite: Box::new(params),
            });
        }
        if gmax < config.tol {
            trace.converged = true;
            break;
        }
        if iter == config.max_iters {
            break;
        }
        let dir = newton_direction(&grad, &hess);
        let slope = grad.dot(&dir);
        let flat = DVector::from_vec(params.to_flat());
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let cand = params.from_flat_like((&flat + step * &dir).as_slice());
            if let Some(fc) = objective(glm, &cand, trials, ridge)? {
                if fc <= f + 1e-4 * step * slope {
                    accepted = Some((cand, fc));
                    break;
                }
            }
            step *= 0.5;
        }
        match accepted {
            Some((cand, fc)) => {
                params = cand;
                f = fc;
            }
            None => {
                // At the optimum the decrease falls below rounding in f; take
                // the full Newton step when it still shrinks the gradient.
                let cand = params.from_flat_like((&flat + &dir).as_slice());
                let Some(fc) = objective(glm, &cand, trials, ridge)? else { break };
                let (g2, _) = gradient_and_hessian(glm, &cand, trials, ridge)?;
                if g2.amax() < gmax {
                    params = cand;
                    f = fc;
                } else {
                    break;
                }
            }
        }
    }
    Ok((params, trace))
}

/// Gradient of the penalized mean NLL, for callers outside the Newton loop.
pub(crate) fn penalized_gradient(
    glm: &Glm,
    params: &GlmParams,
    trials: &TrialSet,
    ridge: f64,
) -> Result<(f64, GradVec)> {
    let (nll, mut g) = glm.mean_nll_and_gradient(params, trials)?;
    for (d, h) in g.d_history.iter_mut().zip(&params.history) {
        *d += 2.0 * ridge * h;
    }
    let penalty: f64 = params.history.iter().map(|h| h * h).sum::<f64>() * ridge;
    Ok((nll + penalty, g))
}
