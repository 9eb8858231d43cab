//! Frequency-domain augmentations of raw training windows.
//!
//! Both operate on the real spectrum bins `1..=n/2` (bin `k` together with its
//! conjugate `n − k`); the DC bin is never touched, so a window keeps its mean.

use std::sync::{Arc, OnceLock};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::registry::Registry;

fn spectrum(x: &[f64]) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(x.len()).process(&mut buf);
    buf
}

fn inverse(mut spec: Vec<Complex64>) -> Vec<Complex64> {
    let n = spec.len();
    FftPlanner::new().plan_fft_inverse(n).process(&mut spec);
    spec.iter().map(|c| c / n as f64).collect()
}

/// Number of non-DC real-spectrum bins of a length-`n` signal.
pub fn num_bins(n: usize) -> usize {
    n / 2
}

fn real_part(signal: Vec<Complex64>) -> Vec<f64> {
    signal.into_iter().map(|c| c.re).collect()
}

/// Zeroes every bin `k` (1-based) with `mask[k - 1]` set.
pub fn mask_bins(window: &[f64], mask: &[bool]) -> Vec<f64> {
    let n = window.len();
    let mut spec = spectrum(window);
    for (k, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
        let k = k + 1;
        spec[k] = Complex64::new(0.0, 0.0);
        spec[n - k] = Complex64::new(0.0, 0.0);
    }
    real_part(inverse(spec))
}

/// Replaces every bin `k` (1-based) of `a` with `swap[k - 1]` set by `b`'s.
pub fn mix_bins(a: &[f64], b: &[f64], swap: &[bool]) -> Result<Vec<f64>> {
    if a.len() != b.len() {
        return Err(Error::InvalidArgument(format!(
            "freq-mix needs equal lengths, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    let mut sa = spectrum(a);
    let sb = spectrum(b);
    for (k, _) in swap.iter().enumerate().filter(|(_, &s)| s) {
        let k = k + 1;
        sa[k] = sb[k];
        sa[n - k] = sb[n - k];
    }
    Ok(real_part(inverse(sa)))
}

fn draw_bins(n: usize, rate: f64, rng: &mut ChaCha8Rng) -> Vec<bool> {
    (0..num_bins(n)).map(|_| rng.random::<f64>() < rate).collect()
}

pub fn freq_mask(window: &[f64], rate: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    if rate <= 0.0 {
        return window.to_vec();
    }
    let mask = draw_bins(window.len(), rate, rng);
    mask_bins(window, &mask)
}

pub fn freq_mix(a: &[f64], b: &[f64], rate: f64, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    if a.len() != b.len() {
        return mix_bins(a, b, &[]);
    }
    if rate <= 0.0 {
        return Ok(a.to_vec());
    }
    let swap = draw_bins(a.len(), rate, rng);
    mix_bins(a, b, &swap)
}

/// A window transformation applied during training.
pub trait Augmentation: Send + Sync {
    fn name(&self) -> &'static str;

    /// Transforms `window`; `partner` is another window of the same batch.
    fn apply(&self, window: &[f64], partner: &[f64], rate: f64, rng: &mut ChaCha8Rng) -> Result<Vec<f64>>;
}

pub struct FreqMask;
pub struct FreqMix;

impl Augmentation for FreqMask {
    fn name(&self) -> &'static str {
        "freq-mask"
    }

    fn apply(&self, window: &[f64], _: &[f64], rate: f64, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        Ok(freq_mask(window, rate, rng))
    }
}

impl Augmentation for FreqMix {
    fn name(&self) -> &'static str {
        "freq-mix"
    }

    fn apply(&self, window: &[f64], partner: &[f64], rate: f64, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        freq_mix(window, partner, rate, rng)
    }
}

pub fn augmentation_registry() -> &'static Registry<dyn Augmentation> {
    static REGISTRY: OnceLock<Registry<dyn Augmentation>> = OnceLock::new();
    REGISTRY.get_or_init(|| {
        let mut r: Registry<dyn Augmentation> = Registry::new("augmentation");
        r.register("freq-mask", Arc::new(FreqMask));
        r.register("freq-mix", Arc::new(FreqMix));
        r
    })
}
