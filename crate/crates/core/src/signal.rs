//! Lagged correlation helpers shared by feature maps and their gradients.

use std::cell::RefCell;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

/// Above this many lags the FFT route is used for dense series.
const DIRECT_MAX_LAG: usize = 64;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// Exact raw autocorrelation of a count series, `tau = 0..=max_lag`.
pub(crate) fn sparse_autocorr(counts: &[u32], max_lag: usize) -> Vec<f64> {
    let n = counts.len();
    let mut acc = vec![0u64; max_lag + 1];
    for (s, &c) in counts.iter().enumerate() {
        if c == 0 {
            continue;
        }
        let end = (s + max_lag).min(n - 1);
        for (tau, &d) in counts[s..=end].iter().enumerate() {
            acc[tau] += c as u64 * d as u64;
        }
    }
    acc.into_iter().map(|v| v as f64).collect()
}

/// Raw autocorrelation `C[tau] = sum_t v[t] v[t + tau]` of a real series.
pub(crate) fn autocorr(values: &[f64], max_lag: usize) -> Vec<f64> {
    if max_lag <= DIRECT_MAX_LAG || values.len() <= DIRECT_MAX_LAG {
        autocorr_direct(values, max_lag)
    } else {
        autocorr_fft(values, max_lag)
    }
}

pub(crate) fn autocorr_direct(values: &[f64], max_lag: usize) -> Vec<f64> {
    let n = values.len();
    (0..=max_lag)
        .map(|tau| {
            if tau >= n {
                return 0.0;
            }
            values[..n - tau]
                .iter()
                .zip(&values[tau..])
                .map(|(a, b)| a * b)
                .sum()
        })
        .collect()
}

fn autocorr_fft(values: &[f64], max_lag: usize) -> Vec<f64> {
    let n = values.len();
    let size = n + max_lag.min(n);
    let mut buf = to_complex(values, size);
    fft(&mut buf, false);
    buf.iter_mut().for_each(|z| *z = Complex::new(z.norm_sqr(), 0.0));
    fft(&mut buf, true);
    let scale = 1.0 / size as f64;
    (0..=max_lag)
        .map(|tau| if tau < n { buf[tau].re * scale } else { 0.0 })
        .collect()
}

/// `G[s] = sum_tau w[tau] (v[s + tau] + v[s - tau])` with out-of-range
/// entries of `v` taken as zero. This is the adjoint of the autocorrelation
/// map: for any perturbation `d`, `sum_tau w[tau] dC[tau] = sum_s d[s] G[s]`.
pub(crate) fn autocorr_adjoint(values: &[f64], weights: &[f64]) -> Vec<f64> {
    let max_lag = weights.len().saturating_sub(1);
    if max_lag <= DIRECT_MAX_LAG || values.len() <= DIRECT_MAX_LAG {
        autocorr_adjoint_direct(values, weights)
    } else {
        autocorr_adjoint_fft(values, weights)
    }
}

pub(crate) fn autocorr_adjoint_direct(values: &[f64], weights: &[f64]) -> Vec<f64> {
    let n = values.len();
    (0..n)
        .map(|s| {
            let mut g = 0.0;
            for (tau, &w) in weights.iter().enumerate() {
                if s + tau < n {
                    g += w * values[s + tau];
                }
                if tau <= s {
                    g += w * values[s - tau];
                }
            }
            g
        })
        .collect()
}

fn autocorr_adjoint_fft(values: &[f64], weights: &[f64]) -> Vec<f64> {
    let n = values.len();
    let size = n + weights.len();
    let mut a = to_complex(values, size);
    let mut b = to_complex(weights, size);
    fft(&mut a, false);
    fft(&mut b, false);
    // conv + corr = IFFT(A * (B + conj(B))) = IFFT(A * 2 Re(B)).
    a.iter_mut()
        .zip(&b)
        .for_each(|(x, y)| *x *= Complex::new(2.0 * y.re, 0.0));
    fft(&mut a, true);
    let scale = 1.0 / size as f64;
    (0..n).map(|s| a[s].re * scale).collect()
}

fn to_complex(values: &[f64], size: usize) -> Vec<Complex<f64>> {
    let mut buf = vec![Complex::new(0.0, 0.0); size];
    for (z, &v) in buf.iter_mut().zip(values) {
        z.re = v;
    }
    buf
}

fn fft(buf: &mut [Complex<f64>], inverse: bool) {
    let plan = PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(buf.len())
        } else {
            p.plan_fft_forward(buf.len())
        }
    });
    plan.process(buf);
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
