//! Per-series summary features for dataset-diversity analysis.

use std::sync::{Arc, OnceLock};

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::forecast::quantile_sorted;
use crate::registry::Registry;

pub const MIN_FEATURE_LEN: usize = 16;
const HIST_BINS: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub set: &'static str,
    pub values: Vec<f64>,
    /// The series was constant; autocorrelation-type features are defaults.
    pub degenerate: bool,
}

pub trait FeatureSet: Send + Sync {
    fn name(&self) -> &'static str;
    fn feature_names(&self) -> &'static [&'static str];
    fn compute(&self, series: &[f64]) -> Result<FeatureVector>;
}

/// Twelve core features. All but `mean` and `std` are computed on the
/// z-normalised series.
pub struct CoreFeatures;

pub const CORE_FEATURE_NAMES: [&str; 12] = [
    "mean",
    "std",
    "acf_lag1",
    "acf_first_zero",
    "spectral_centroid",
    "spectral_entropy",
    "longest_above_mean",
    "mean_abs_diff",
    "histogram_mode",
    "trend_slope",
    "prop_increases",
    "outlier_ratio",
];

/// Autocorrelation at lags `0..n` via zero-padded FFT.
fn autocorrelation(z: &[f64]) -> Vec<f64> {
    let n = z.len();
    let m = (2 * n).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let mut buf: Vec<Complex<f64>> = z.iter().map(|&v| Complex::new(v, 0.0)).collect();
    buf.resize(m, Complex::new(0.0, 0.0));
    planner.plan_fft_forward(m).process(&mut buf);
    for c in &mut buf {
        *c = Complex::new(c.norm_sqr(), 0.0);
    }
    planner.plan_fft_inverse(m).process(&mut buf);
    let c0 = buf[0].re;
    buf[..n].iter().map(|c| c.re / c0).collect()
}

/// Power at frequencies `k/n` for `k = 1..=n/2`.
fn power_spectrum(z: &[f64]) -> Vec<f64> {
    let n = z.len();
    let mut buf: Vec<Complex<f64>> = z.iter().map(|&v| Complex::new(v, 0.0)).collect();
    FftPlanner::<f64>::new().plan_fft_forward(n).process(&mut buf);
    buf[1..=n / 2].iter().map(|c| c.norm_sqr()).collect()
}

impl FeatureSet for CoreFeatures {
    fn name(&self) -> &'static str {
        "core12"
    }

    fn feature_names(&self) -> &'static [&'static str] {
        &CORE_FEATURE_NAMES
    }

    fn compute(&self, x: &[f64]) -> Result<FeatureVector> {
        let n = x.len();
        if n < MIN_FEATURE_LEN {
            return Err(Error::InvalidArgument(format!(
                "features need at least {MIN_FEATURE_LEN} points, got {n}"
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("series has non-finite values".into()));
        }
        let nf = n as f64;
        let mean = x.iter().sum::<f64>() / nf;
        let std = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / nf).sqrt();
        let degenerate = std <= 1e-12 * (1.0 + mean.abs());
        if degenerate {
            let mut values = vec![0.0; 12];
            values[0] = mean;
            return Ok(FeatureVector {
                set: self.name(),
                values,
                degenerate,
            });
        }
        let z: Vec<f64> = x.iter().map(|v| (v - mean) / std).collect();

        let acf = autocorrelation(&z);
        // Lag-1 products averaged over the n−1 available pairs.
        let acf1 = acf[1] * nf / (nf - 1.0);
        let first_zero = (1..n).find(|&k| acf[k] <= 0.0).unwrap_or(n) as f64;

        let power = power_spectrum(&z);
        let total: f64 = power.iter().sum();
        let (centroid, entropy) = if total > 0.0 {
            let centroid = power
                .iter()
                .enumerate()
                .map(|(i, p)| (i + 1) as f64 / nf * p)
                .sum::<f64>()
                / total;
            let h: f64 = power
                .iter()
                .filter(|&&p| p > 0.0)
                .map(|&p| {
                    let q = p / total;
                    -q * q.ln()
                })
                .sum();
            let max_h = (power.len() as f64).ln();
            (centroid, if max_h > 0.0 { h / max_h } else { 0.0 })
        } else {
            (0.0, 0.0)
        };

        let mut longest = 0usize;
        let mut run = 0usize;
        for &v in &z {
            if v > 0.0 {
                run += 1;
                longest = longest.max(run);
            } else {
                run = 0;
            }
        }

        let mean_abs_diff = z.windows(2).map(|w| (w[1] - w[0]).abs()).sum::<f64>() / (nf - 1.0);

        let lo = z.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let width = (hi - lo) / HIST_BINS as f64;
        let mut counts = [0usize; HIST_BINS];
        for &v in &z {
            let b = (((v - lo) / width) as usize).min(HIST_BINS - 1);
            counts[b] += 1;
        }
        let mode_bin = (0..HIST_BINS).max_by_key(|&b| (counts[b], std::cmp::Reverse(b))).expect("bins");
        let mode = lo + (mode_bin as f64 + 0.5) * width;

        let tm = (nf - 1.0) / 2.0;
        let sxx: f64 = (0..n).map(|t| (t as f64 - tm).powi(2)).sum();
        let slope = z.iter().enumerate().map(|(t, v)| (t as f64 - tm) * v).sum::<f64>() / sxx;

        let increases = z.windows(2).filter(|w| w[1] > w[0]).count() as f64 / (nf - 1.0);

        let mut sorted = z.clone();
        sorted.sort_by(f64::total_cmp);
        let (q1, q3) = (quantile_sorted(&sorted, 0.25), quantile_sorted(&sorted, 0.75));
        let iqr = q3 - q1;
        let outliers = z
            .iter()
            .filter(|&&v| v < q1 - 2.0 * iqr || v > q3 + 2.0 * iqr)
            .count() as f64
            / nf;

        Ok(FeatureVector {
            set: self.name(),
            values: vec![
                mean,
                std,
                acf1,
                first_zero,
                centroid,
                entropy,
                longest as f64,
                mean_abs_diff,
                mode,
                slope,
                increases,
                outliers,
            ],
            degenerate,
        })
    }
}

pub fn feature_set_registry() -> &'static Registry<dyn FeatureSet> {
    static REGISTRY: OnceLock<Registry<dyn FeatureSet>> = OnceLock::new();
    REGISTRY.get_or_init(|| {
        let mut r: Registry<dyn FeatureSet> = Registry::new("feature set");
        r.register("core12", Arc::new(CoreFeatures));
        r
    })
}
