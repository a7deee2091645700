//! Autoregressive point-process GLM.
//!
//! The conditional intensity in Hz is
//! `lambda_t = min(lambda_max, exp(b + sum_tau h_tau x_{t-tau} + sum_tau a_tau u_{t-tau}))`
//! with an all-zero past before the first bin. Each bin is drawn from
//! `Poisson(lambda_t dt)` or, in Bernoulli mode, spikes with probability
//! `1 - exp(-lambda_t dt)`.

mod fit;
mod sample;

pub use fit::{fit_mle, fit_mle_from, MleConfig};
pub(crate) use fit::penalized_gradient;
pub use sample::FreeRunSamples;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spiketrain::{SpikeTrain, TrialSet};

/// Default intensity cap in Hz.
pub const DEFAULT_LAMBDA_MAX: f64 = 1e6;

/// Model parameters: bias (log-rate), per-bin history coefficients for lags
/// `1..=L_h`, and an optional stimulus filter for lags `1..=L_a`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlmParams {
    pub bias: f64,
    pub history: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stimulus_filter: Option<Vec<f64>>,
}

impl GlmParams {
    pub fn new(bias: f64, history: Vec<f64>) -> Self {
        Self {
            bias,
            history,
            stimulus_filter: None,
        }
    }

    /// Constant-rate model, `b = ln(rate_hz)`.
    pub fn homogeneous(rate_hz: f64) -> Self {
        Self::new(rate_hz.ln(), Vec::new())
    }

    pub fn with_stimulus_filter(mut self, filter: Vec<f64>) -> Self {
        self.stimulus_filter = Some(filter);
        self
    }

    pub fn history_len(&self) -> usize {
        self.history.len()
    }

    pub fn stimulus_len(&self) -> usize {
        self.stimulus_filter.as_ref().map_or(0, Vec::len)
    }

    pub fn n_params(&self) -> usize {
        1 + self.history_len() + self.stimulus_len()
    }

    pub fn is_finite(&self) -> bool {
        self.to_flat().iter().all(|v| v.is_finite())
    }

    /// `[bias, history..., stimulus_filter...]`
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.n_params());
        v.push(self.bias);
        v.extend_from_slice(&self.history);
        if let Some(a) = &self.stimulus_filter {
            v.extend_from_slice(a);
        }
        v
    }

    /// Inverse of [`to_flat`](Self::to_flat) for a vector shaped like `self`.
    pub fn from_flat_like(&self, v: &[f64]) -> Self {
        assert_eq!(v.len(), self.n_params(), "flat parameter length");
        let lh = self.history_len();
        Self {
            bias: v[0],
            history: v[1..1 + lh].to_vec(),
            stimulus_filter: self
                .stimulus_filter
                .as_ref()
                .map(|_| v[1 + lh..].to_vec()),
        }
    }

    /// History term `H[t] = sum_{tau=1..min(t, L_h)} h_tau x[t - tau]`.
    pub fn history_term(&self, counts: &[u32]) -> Vec<f64> {
        history_drive(&self.history, counts)
    }
}

/// Spike-count distribution of a bin given its intensity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObservationModel {
    Poisson,
    Bernoulli,
}

impl std::str::FromStr for ObservationModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "poisson" => Ok(Self::Poisson),
            "bernoulli" => Ok(Self::Bernoulli),
            other => Err(Error::param(format!("unknown observation model `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntensitySeries {
    /// Intensity in Hz, one value per bin.
    pub lambda: Vec<f64>,
    pub clipped: bool,
    pub first_clipped: Option<usize>,
}

/// Gradient with respect to `(bias, history, stimulus_filter)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradVec {
    pub d_bias: f64,
    pub d_history: Vec<f64>,
    pub d_stimulus: Option<Vec<f64>>,
}

impl GradVec {
    pub fn zeros_like(params: &GlmParams) -> Self {
        Self {
            d_bias: 0.0,
            d_history: vec![0.0; params.history_len()],
            d_stimulus: params
                .stimulus_filter
                .as_ref()
                .map(|a| vec![0.0; a.len()]),
        }
    }

    /// Zero gradient with the same layout as `self`.
    pub fn zeros_like_grad(&self) -> Self {
        Self {
            d_bias: 0.0,
            d_history: vec![0.0; self.d_history.len()],
            d_stimulus: self.d_stimulus.as_ref().map(|a| vec![0.0; a.len()]),
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = vec![self.d_bias];
        v.extend_from_slice(&self.d_history);
        if let Some(a) = &self.d_stimulus {
            v.extend_from_slice(a);
        }
        v
    }

    pub fn from_flat_like(params: &GlmParams, v: &[f64]) -> Self {
        let p = params.from_flat_like(v);
        Self {
            d_bias: p.bias,
            d_history: p.history,
            d_stimulus: p.stimulus_filter,
        }
    }

    pub fn add_scaled(&mut self, other: &GradVec, s: f64) {
        self.d_bias += s * other.d_bias;
        for (a, b) in self.d_history.iter_mut().zip(&other.d_history) {
            *a += s * b;
        }
        if let (Some(a), Some(b)) = (&mut self.d_stimulus, &other.d_stimulus) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += s * y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.d_bias *= s;
        self.d_history.iter_mut().for_each(|v| *v *= s);
        if let Some(a) = &mut self.d_stimulus {
            a.iter_mut().for_each(|v| *v *= s);
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.to_flat().iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn norm(&self) -> f64 {
        self.to_flat().iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

impl std::ops::Neg for GradVec {
    type Output = GradVec;

    fn neg(mut self) -> GradVec {
        self.scale(-1.0);
        self
    }
}

/// Observation model plus intensity cap; the context in which parameters
/// are evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Glm {
    pub obs: ObservationModel,
    pub lambda_max: f64,
}

/// Per-bin quantities shared by the likelihood, score and Hessian.
pub(crate) struct BinTerms {
    pub mu: Vec<f64>,
    pub first_clipped: Option<usize>,
}

impl Glm {
    pub fn new(obs: ObservationModel) -> Self {
        Self {
            obs,
            lambda_max: DEFAULT_LAMBDA_MAX,
        }
    }

    pub fn with_lambda_max(mut self, lambda_max: f64) -> Self {
        self.lambda_max = lambda_max;
        self
    }

    pub(crate) fn check_inputs(
        &self,
        params: &GlmParams,
        counts: &[u32],
        u: Option<&[f64]>,
    ) -> Result<()> {
        if let Some(u) = u {
            if u.len() != counts.len() {
                return Err(Error::shape(format!(
                    "stimulus has {} values, train has {} bins",
                    u.len(),
                    counts.len()
                )));
            }
        }
        if params.stimulus_len() > 0 && u.is_none() {
            return Err(Error::shape("stimulus filter given without a stimulus"));
        }
        if self.obs == ObservationModel::Bernoulli {
            if let Some(t) = counts.iter().position(|&c| c > 1) {
                return Err(Error::Domain(format!(
                    "bin {t} holds {} spikes; Bernoulli mode needs binary counts",
                    counts[t]
                )));
            }
        }
        Ok(())
    }

    /// Log-drive `eta_t` before exponentiation and capping.
    pub(crate) fn log_drive(&self, params: &GlmParams, counts: &[u32], u: Option<&[f64]>) -> Vec<f64> {
        let mut eta = history_drive(&params.history, counts);
        if let (Some(a), Some(u)) = (&params.stimulus_filter, u) {
            for (t, e) in eta.iter_mut().enumerate() {
                *e += stimulus_drive_at(a, u, t);
            }
        }
        eta.iter_mut().for_each(|e| *e += params.bias);
        eta
    }

    pub(crate) fn bin_terms(&self, params: &GlmParams, x: &SpikeTrain, u: Option<&[f64]>) -> BinTerms {
        let dt = x.dt();
        let eta = self.log_drive(params, x.counts(), u);
        let mut first_clipped = None;
        let mu = eta
            .iter()
            .enumerate()
            .map(|(t, &e)| {
                let lam = e.exp();
                if lam > self.lambda_max || lam.is_nan() {
                    first_clipped.get_or_insert(t);
                    self.lambda_max * dt
                } else {
                    lam * dt
                }
            })
            .collect();
        BinTerms { mu, first_clipped }
    }

    pub fn conditional_intensity(
        &self,
        params: &GlmParams,
        x: &SpikeTrain,
        u: Option<&[f64]>,
    ) -> Result<IntensitySeries> {
        if let Some(u) = u {
            if u.len() != x.n_bins() {
                return Err(Error::shape("stimulus length differs from train length"));
            }
        }
        if params.stimulus_len() > 0 && u.is_none() {
            return Err(Error::shape("stimulus filter given without a stimulus"));
        }
        let terms = self.bin_terms(params, x, u);
        let dt = x.dt();
        Ok(IntensitySeries {
            lambda: terms.mu.iter().map(|m| m / dt).collect(),
            clipped: terms.first_clipped.is_some(),
            first_clipped: terms.first_clipped,
        })
    }

    /// Data-conditioned log-likelihood of one train.
    pub fn log_likelihood(&self, params: &GlmParams, x: &SpikeTrain, u: Option<&[f64]>) -> Result<f64> {
        self.check_inputs(params, x.counts(), u)?;
        let terms = self.bin_terms(params, x, u);
        Ok(x
            .counts()
            .iter()
            .zip(&terms.mu)
            .map(|(&c, &mu)| self.bin_log_prob(c, mu))
            .sum())
    }

    /// Log-likelihood summed over the trials of a set.
    pub fn total_log_likelihood(&self, params: &GlmParams, trials: &TrialSet) -> Result<f64> {
        trials
            .trials()
            .iter()
            .map(|x| self.log_likelihood(params, x, trials.stimulus()))
            .sum()
    }

    pub(crate) fn bin_log_prob(&self, c: u32, mu: f64) -> f64 {
        match self.obs {
            ObservationModel::Poisson => {
                if c == 0 {
                    -mu
                } else {
                    c as f64 * mu.ln() - mu - ln_factorial(c)
                }
            }
            ObservationModel::Bernoulli => {
                if c == 0 {
                    -mu
                } else {
                    (-(-mu).exp_m1()).ln()
                }
            }
        }
    }

    /// `d log p(x_t) / d eta_t`.
    pub(crate) fn bin_score(&self, c: u32, mu: f64) -> f64 {
        match self.obs {
            ObservationModel::Poisson => c as f64 - mu,
            ObservationModel::Bernoulli => {
                if c == 0 {
                    -mu
                } else {
                    spike_factor(mu)
                }
            }
        }
    }

    /// `-d² log p(x_t) / d eta_t²`, non-negative.
    pub(crate) fn bin_curvature(&self, c: u32, mu: f64) -> f64 {
        match self.obs {
            ObservationModel::Poisson => mu,
            ObservationModel::Bernoulli => {
                if c == 0 {
                    mu
                } else {
                    let q = spike_factor(mu);
                    (q * (q + mu - 1.0)).max(0.0)
                }
            }
        }
    }

    /// Score `grad_theta log p(x; theta)` of one train under the
    /// autoregressive factorization. Refuses inputs on which the cap binds.
    pub fn score_function(&self, params: &GlmParams, x: &SpikeTrain, u: Option<&[f64]>) -> Result<GradVec> {
        self.check_inputs(params, x.counts(), u)?;
        let terms = self.bin_terms(params, x, u);
        if let Some(bin) = terms.first_clipped {
            return Err(Error::GradientUndefined { bin });
        }
        let g: Vec<f64> = x
            .counts()
            .iter()
            .zip(&terms.mu)
            .map(|(&c, &mu)| self.bin_score(c, mu))
            .collect();
        Ok(project_bin_weights(params, x.counts(), u, &g))
    }

    /// Gradient of the negative log-likelihood; exactly `-score_function`.
    pub fn nll_gradient(&self, params: &GlmParams, x: &SpikeTrain, u: Option<&[f64]>) -> Result<GradVec> {
        Ok(-self.score_function(params, x, u)?)
    }

    /// Mean negative log-likelihood over trials and its gradient.
    pub fn mean_nll_and_gradient(&self, params: &GlmParams, trials: &TrialSet) -> Result<(f64, GradVec)> {
        let mut nll = 0.0;
        let mut grad = GradVec::zeros_like(params);
        for x in trials.trials() {
            nll -= self.log_likelihood(params, x, trials.stimulus())?;
            grad.add_scaled(&self.score_function(params, x, trials.stimulus())?, -1.0);
        }
        let n = trials.len() as f64;
        grad.scale(1.0 / n);
        Ok((nll / n, grad))
    }

    /// Log-likelihood gain over a homogeneous model at the empirical rate,
    /// in nats per spike.
    pub fn relative_ll_per_spike(&self, params: &GlmParams, trials: &TrialSet) -> Result<f64> {
        let spikes = trials.total_spikes();
        if spikes == 0 {
            return Err(Error::InsufficientData(
                "relative log-likelihood needs at least one spike".into(),
            ));
        }
        let baseline = GlmParams::homogeneous(trials.mean_rate());
        let ll = self.total_log_likelihood(params, trials)?;
        let ll0 = self.total_log_likelihood(&baseline, trials)?;
        Ok((ll - ll0) / spikes as f64)
    }
}

/// Bernoulli spike-bin score factor `mu e^{-mu} / (1 - e^{-mu}) = mu / expm1(mu)`.
fn spike_factor(mu: f64) -> f64 {
    if mu < 1e-300 {
        1.0
    } else {
        mu / mu.exp_m1()
    }
}

pub(crate) fn ln_factorial(c: u32) -> f64 {
    (2..=c).map(|k| (k as f64).ln()).sum()
}

/// Maps per-bin weights `g_t` on `eta_t` to parameter space:
/// `d_b = sum g_t`, `d_h[tau] = sum_t g_t x_{t-tau}`, `d_a[tau] = sum_t g_t u_{t-tau}`.
pub(crate) fn project_bin_weights(
    params: &GlmParams,
    counts: &[u32],
    u: Option<&[f64]>,
    g: &[f64],
) -> GradVec {
    let n = counts.len();
    let lh = params.history_len();
    let mut d_history = vec![0.0; lh];
    for (s, &c) in counts.iter().enumerate() {
        if c == 0 {
            continue;
        }
        let c = c as f64;
        for (tau, d) in d_history.iter_mut().enumerate() {
            let t = s + tau + 1;
            if t >= n {
                break;
            }
            *d += c * g[t];
        }
    }
    let d_stimulus = params.stimulus_filter.as_ref().map(|a| {
        let u = u.expect("stimulus checked by caller");
        (0..a.len())
            .map(|k| {
                let lag = k + 1;
                (lag..n).map(|t| g[t] * u[t - lag]).sum()
            })
            .collect()
    });
    GradVec {
        d_bias: g.iter().sum(),
        d_history,
        d_stimulus,
    }
}

/// `H[t] = sum_{tau=1..min(t, L)} h[tau-1] x[t - tau]`, accumulated from spikes.
pub(crate) fn history_drive(h: &[f64], counts: &[u32]) -> Vec<f64> {
    let n = counts.len();
    let mut out = vec![0.0; n];
    if h.is_empty() {
        return out;
    }
    for (s, &c) in counts.iter().enumerate() {
        if c == 0 {
            continue;
        }
        let c = c as f64;
        let end = (s + 1 + h.len()).min(n);
        for (o, hv) in out[s + 1..end].iter_mut().zip(h) {
            *o += c * hv;
        }
    }
    out
}

pub(crate) fn stimulus_drive_at(a: &[f64], u: &[f64], t: usize) -> f64 {
    a.iter()
        .enumerate()
        .take_while(|(k, _)| *k < t)
        .map(|(k, av)| av * u[t - k - 1])
        .sum()
}

/// Parameters together with the settings needed to evaluate them; the
/// on-disk model document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub dt: f64,
    pub observation: ObservationModel,
    pub bias: f64,
    pub history: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stimulus_filter: Option<Vec<f64>>,
    #[serde(default = "default_lambda_max")]
    pub lambda_max: f64,
}

fn default_lambda_max() -> f64 {
    DEFAULT_LAMBDA_MAX
}

impl ModelFile {
    pub fn new(glm: &Glm, params: &GlmParams, dt: f64) -> Self {
        Self {
            dt,
            observation: glm.obs,
            bias: params.bias,
            history: params.history.clone(),
            stimulus_filter: params.stimulus_filter.clone(),
            lambda_max: glm.lambda_max,
        }
    }

    pub fn params(&self) -> GlmParams {
        GlmParams {
            bias: self.bias,
            history: self.history.clone(),
            stimulus_filter: self.stimulus_filter.clone(),
        }
    }

    pub fn glm(&self) -> Glm {
        Glm::new(self.observation).with_lambda_max(self.lambda_max)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serialization(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let m: Self = toml::from_str(text).map_err(|e| Error::Serialization(e.to_string()))?;
        if !(m.dt > 0.0) || !m.params().is_finite() {
            return Err(Error::param("model file needs dt > 0 and finite parameters"));
        }
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn train(c: &[u32], dt: f64) -> SpikeTrain {
        SpikeTrain::new(c.to_vec(), dt).unwrap()
    }

    #[test]
    fn intensity_examples() {
        let glm = Glm::new(ObservationModel::Poisson);
        let p = GlmParams::new(5f64.ln(), vec![]);
        let ci = glm.conditional_intensity(&p, &train(&[0, 1, 0], 0.01), None).unwrap();
        for l in &ci.lambda {
            assert_relative_eq!(*l, 5.0, epsilon = 1e-12);
        }
        assert!(!ci.clipped);

        let p = GlmParams::new(0.0, vec![1.0]);
        let ci = glm.conditional_intensity(&p, &train(&[1, 0, 0], 0.01), None).unwrap();
        assert_relative_eq!(ci.lambda[0], 1.0);
        assert_relative_eq!(ci.lambda[1], std::f64::consts::E, epsilon = 1e-12);
        assert_relative_eq!(ci.lambda[2], 1.0);

        let p = GlmParams::new(0.0, vec![100.0]);
        let ci = glm.conditional_intensity(&p, &train(&[1, 1, 1], 0.01), None).unwrap();
        assert!(ci.clipped);
        assert_eq!(ci.first_clipped, Some(1));
        assert_eq!(ci.lambda[1], DEFAULT_LAMBDA_MAX);
    }

    #[test]
    fn intensity_shape_errors() {
        let glm = Glm::new(ObservationModel::Poisson);
        let p = GlmParams::new(0.0, vec![]).with_stimulus_filter(vec![1.0]);
        let x = train(&[0, 1, 0], 0.01);
        assert!(matches!(glm.conditional_intensity(&p, &x, None), Err(Error::Shape(_))));
        assert!(matches!(
            glm.conditional_intensity(&p, &x, Some(&[1.0, 2.0])),
            Err(Error::Shape(_))
        ));
        let ci = glm.conditional_intensity(&p, &x, Some(&[1.0, 2.0, 3.0])).unwrap();
        assert_relative_eq!(ci.lambda[1], std::f64::consts::E, epsilon = 1e-12);
        assert_relative_eq!(ci.lambda[2], 2f64.exp(), epsilon = 1e-12);
    }

    #[test]
    fn zero_history_intensity_ignores_spikes() {
        let glm = Glm::new(ObservationModel::Bernoulli);
        let p = GlmParams::new(1.3, vec![0.0; 4]);
        let a = glm.conditional_intensity(&p, &train(&[1, 0, 1, 1, 0], 0.01), None).unwrap();
        let b = glm.conditional_intensity(&p, &train(&[0, 0, 0, 0, 0], 0.01), None).unwrap();
        assert_eq!(a.lambda, b.lambda);
    }

    #[test]
    fn likelihood_examples() {
        let dt = 0.01;
        let poisson = Glm::new(ObservationModel::Poisson);
        let p = GlmParams::new((1.0f64 / dt).ln(), vec![]);
        let ll = poisson.log_likelihood(&p, &train(&[1, 1], dt), None).unwrap();
        assert_relative_eq!(ll, -2.0, epsilon = 1e-12);

        let bern = Glm::new(ObservationModel::Bernoulli);
        let p = GlmParams::new(2.0, vec![0.5, -1.0]);
        let x = train(&[0, 0, 0, 0], dt);
        let ll = bern.log_likelihood(&p, &x, None).unwrap();
        let lam = bern.conditional_intensity(&p, &x, None).unwrap();
        let expect: f64 = -lam.lambda.iter().map(|l| l * dt).sum::<f64>();
        assert_relative_eq!(ll, expect, epsilon = 1e-12);

        assert!(matches!(
            bern.log_likelihood(&p, &train(&[2, 0], dt), None),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn score_is_negated_nll_gradient() {
        let glm = Glm::new(ObservationModel::Bernoulli);
        let p = GlmParams::new(3.0, vec![-1.0, 0.4, 0.2]);
        let x = train(&[1, 0, 1, 1, 0, 0, 1, 0], 0.005);
        let s = glm.score_function(&p, &x, None).unwrap();
        let g = glm.nll_gradient(&p, &x, None).unwrap();
        for (a, b) in s.to_flat().iter().zip(g.to_flat()) {
            assert_eq!(*a, -b);
        }
    }

    #[test]
    fn poisson_history_gradient_vanishes_without_spikes() {
        let glm = Glm::new(ObservationModel::Poisson);
        let p = GlmParams::new(2.0, vec![0.3, -0.2, 0.1]);
        let g = glm.nll_gradient(&p, &train(&[0; 12], 0.01), None).unwrap();
        assert!(g.d_history.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn clipped_inputs_refuse_gradients() {
        let glm = Glm::new(ObservationModel::Poisson);
        let p = GlmParams::new(0.0, vec![100.0]);
        assert!(matches!(
            glm.score_function(&p, &train(&[1, 1, 1], 0.01), None),
            Err(Error::GradientUndefined { bin: 1 })
        ));
    }

    #[test]
    fn relative_ll_of_baseline_is_zero() {
        let glm = Glm::new(ObservationModel::Bernoulli);
        let set = TrialSet::from_counts(vec![vec![1, 0, 0, 1, 0], vec![0, 0, 1, 0, 0]], 0.01).unwrap();
        let base = GlmParams::homogeneous(set.mean_rate());
        assert_eq!(glm.relative_ll_per_spike(&base, &set).unwrap(), 0.0);
        let empty = TrialSet::from_counts(vec![vec![0; 5]], 0.01).unwrap();
        assert!(matches!(
            glm.relative_ll_per_spike(&base, &empty),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn history_term_examples() {
        let p = GlmParams::new(0.0, vec![1.0]);
        assert_eq!(p.history_term(&[1, 0, 1]), vec![0.0, 1.0, 0.0]);
        let z = GlmParams::new(0.0, vec![0.0; 3]);
        assert_eq!(z.history_term(&[1, 1, 1, 1]), vec![0.0; 4]);
    }

    #[test]
    fn model_file_round_trips() {
        let glm = Glm::new(ObservationModel::Bernoulli);
        let p = GlmParams::new(-0.1234567890123, vec![1e-7, -3.25, 0.1 + 0.2])
            .with_stimulus_filter(vec![2.5e-300]);
        let m = ModelFile::new(&glm, &p, 0.001);
        let text = m.to_toml().unwrap();
        let back = ModelFile::from_toml(&text).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.params(), p);
    }
}
