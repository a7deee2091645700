use rand::Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;

use super::{stimulus_drive_at, Glm, GlmParams, ObservationModel};
use crate::error::{Error, Result};
use crate::rng;
use crate::spiketrain::{SpikeTrain, TrialSet};

/// Output of free-running (ancestral) sampling.
#[derive(Debug, Clone, PartialEq)]
pub struct FreeRunSamples {
    pub trials: TrialSet,
    /// `runaway[i]` is true iff the intensity cap bound somewhere in trial `i`.
    pub runaway: Vec<bool>,
}

impl FreeRunSamples {
    pub fn runaway_fraction(&self) -> f64 {
        self.runaway.iter().filter(|&&r| r).count() as f64 / self.runaway.len() as f64
    }
}

impl Glm {
    /// Draws `n` trials of `n_bins` bins, each conditioned on its own
    /// sampled past. Trial `i` uses random stream `i` under `seed`.
    pub fn sample_free_running(
        &self,
        params: &GlmParams,
        n: usize,
        n_bins: usize,
        dt: f64,
        u: Option<&[f64]>,
        seed: u64,
    ) -> Result<FreeRunSamples> {
        if n == 0 {
            return Err(Error::param("number of samples must be at least 1"));
        }
        if n_bins == 0 {
            return Err(Error::param("samples need at least one bin"));
        }
        if !(dt > 0.0) {
            return Err(Error::param("bin width must be positive"));
        }
        if let Some(u) = u {
            if u.len() != n_bins {
                return Err(Error::shape("stimulus length differs from sample length"));
            }
        }
        if params.stimulus_len() > 0 && u.is_none() {
            return Err(Error::shape("stimulus filter given without a stimulus"));
        }
        // Deterministic part of the drive, shared by all trials.
        let base: Vec<f64> = (0..n_bins)
            .map(|t| {
                let stim = match (&params.stimulus_filter, u) {
                    (Some(a), Some(u)) => stimulus_drive_at(a, u, t),
                    _ => 0.0,
                };
                params.bias + stim
            })
            .collect();

        let drawn: Vec<(Vec<u32>, bool)> = (0..n)
            .into_par_iter()
            .map(|i| self.sample_one(params, &base, dt, seed, i as u64))
            .collect();

        let mut runaway = Vec::with_capacity(n);
        let mut trials = Vec::with_capacity(n);
        for (counts, ran_away) in drawn {
            trials.push(SpikeTrain::new(counts, dt)?);
            runaway.push(ran_away);
        }
        let mut set = TrialSet::new(trials)?;
        if let Some(u) = u {
            set = set.with_stimulus(u.to_vec())?;
        }
        Ok(FreeRunSamples {
            trials: set,
            runaway,
        })
    }

    fn sample_one(&self, params: &GlmParams, base: &[f64], dt: f64, seed: u64, index: u64) -> (Vec<u32>, bool) {
        let mut rng = rng::stream(seed, index);
        let n = base.len();
        let h = &params.history;
        let mut drive = vec![0.0; n];
        let mut counts = vec![0u32; n];
        let mut capped = false;
        for t in 0..n {
            let mut lam = (base[t] + drive[t]).exp();
            if lam > self.lambda_max || lam.is_nan() {
                lam = self.lambda_max;
                capped = true;
            }
            let mu = lam * dt;
            let c = match self.obs {
                ObservationModel::Bernoulli => {
                    let p = -(-mu).exp_m1();
                    u32::from(rng.random::<f64>() < p)
                }
                ObservationModel::Poisson => {
                    if mu <= 0.0 {
                        0
                    } else {
                        Poisson::new(mu).map(|d| d.sample(&mut rng) as u32).unwrap_or(0)
                    }
                }
            };
            if c > 0 {
                counts[t] = c;
                let end = (t + 1 + h.len()).min(n);
                let cf = c as f64;
                for (d, hv) in drive[t + 1..end].iter_mut().zip(h) {
                    *d += cf * hv;
                }
            }
        }
        (counts, capped)
    }
}
