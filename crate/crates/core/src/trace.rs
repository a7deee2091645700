//! Per-iteration optimization records and their NDJSON export.

use serde::{Deserialize, Serialize};

use crate::glm::GlmParams;

/// Half-life, in iterations, of the exponential moving average applied to
/// the raw MMD² trace for display.
pub const MMD2_SMOOTHING_HALF_LIFE: f64 = 50.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iter: usize,
    pub nll: f64,
    pub mmd2_raw: Option<f64>,
    pub mmd2_smoothed: Option<f64>,
    pub grad_norm: f64,
    pub n_excluded_samples: usize,
    pub wall_ms: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitTrace {
    pub records: Vec<TraceRecord>,
    /// `(iteration, params)` snapshots, every `snapshot_stride` iterations.
    pub snapshots: Vec<(usize, GlmParams)>,
    pub converged: bool,
}

impl FitTrace {
    pub(crate) fn push(&mut self, mut rec: TraceRecord) {
        rec.iter = self.records.len();
        if let Some(raw) = rec.mmd2_raw {
            let prev = self.records.last().and_then(|r| r.mmd2_smoothed);
            rec.mmd2_smoothed = Some(match prev {
                Some(s) if raw.is_finite() => s + ema_rate() * (raw - s),
                Some(s) => s,
                None => raw,
            });
        }
        self.records.push(rec);
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&TraceRecord> {
        self.records.last()
    }

    /// Raw MMD² values of the last `n` iterations that recorded one.
    pub fn tail_mmd2(&self, n: usize) -> Vec<f64> {
        let vals: Vec<f64> = self.records.iter().filter_map(|r| r.mmd2_raw).collect();
        vals[vals.len().saturating_sub(n)..].to_vec()
    }

    /// One JSON object per line with fields
    /// `iter, nll, mmd2_raw, mmd2_smoothed, grad_norm, n_excluded_samples, wall_ms`.
    pub fn to_ndjson(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("trace record serializes"));
            out.push('\n');
        }
        out
    }
}

fn ema_rate() -> f64 {
    1.0 - 0.5f64.powf(1.0 / MMD2_SMOOTHING_HALF_LIFE)
}
