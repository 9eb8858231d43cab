//! Per-window value scaling.

use std::sync::{Arc, OnceLock};

use crate::error::{Error, Result};
use crate::registry::Registry;

/// Location/scale fitted on a context window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalingState {
    pub loc: f64,
    /// Always positive (floored).
    pub scale: f64,
    pub kind: &'static str,
}

impl ScalingState {
    pub fn standardize(&self, x: f64) -> f64 {
        (x - self.loc) / self.scale
    }

    pub fn destandardize(&self, z: f64) -> f64 {
        z * self.scale + self.loc
    }

    /// `(sign(loc)·ln(1+|loc|), ln scale)`: the summary statistics a token
    /// carries, compressed so large magnitudes stay well conditioned.
    pub fn summary(&self) -> [f64; 2] {
        [self.loc.signum() * self.loc.abs().ln_1p(), self.scale.ln()]
    }
}

pub fn scale_floor(loc: f64) -> f64 {
    1e-10 * (1.0 + loc.abs())
}

pub trait Scaler: Send + Sync {
    fn name(&self) -> &'static str;
    fn fit(&self, context: &[f64]) -> Result<ScalingState>;
}

/// Mean and population standard deviation.
pub struct StandardScaler;

/// Median and interquartile range.
pub struct RobustScaler;

impl Scaler for StandardScaler {
    fn name(&self) -> &'static str {
        "standard"
    }

    fn fit(&self, context: &[f64]) -> Result<ScalingState> {
        mean_std_stats(context)
    }
}

impl Scaler for RobustScaler {
    fn name(&self) -> &'static str {
        "robust"
    }

    fn fit(&self, context: &[f64]) -> Result<ScalingState> {
        robust_stats(context)
    }
}

pub fn mean_std_stats(context: &[f64]) -> Result<ScalingState> {
    if context.is_empty() {
        return Err(Error::InvalidArgument("mean/std scaling of an empty context".into()));
    }
    let n = context.len() as f64;
    let mean = context.iter().sum::<f64>() / n;
    let var = context.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    Ok(ScalingState {
        loc: mean,
        scale: var.sqrt().max(scale_floor(mean)),
        kind: "standard",
    })
}

/// Median of a sorted slice; even lengths average the two central values.
pub fn median_sorted(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Median and `IQR = Med(upper half) − Med(lower half)` of the sorted context,
/// where the halves are the first `⌊C/2⌋` and last `⌊C/2⌋` order statistics.
pub fn robust_stats(context: &[f64]) -> Result<ScalingState> {
    let c = context.len();
    if c < 2 {
        return Err(Error::InvalidArgument(format!(
            "robust scaling needs at least 2 points, got {c}"
        )));
    }
    let mut sorted = context.to_vec();
    sorted.sort_by(f64::total_cmp);
    let med = median_sorted(&sorted);
    let half = c / 2;
    let lower = median_sorted(&sorted[..half]);
    let upper = median_sorted(&sorted[c - half..]);
    Ok(ScalingState {
        loc: med,
        scale: (upper - lower).max(scale_floor(med)),
        kind: "robust",
    })
}

pub fn robust_standardize(context: &[f64]) -> Result<(Vec<f64>, ScalingState)> {
    let state = robust_stats(context)?;
    Ok((context.iter().map(|&x| state.standardize(x)).collect(), state))
}

pub fn scaler_registry() -> &'static Registry<dyn Scaler> {
    static REGISTRY: OnceLock<Registry<dyn Scaler>> = OnceLock::new();
    REGISTRY.get_or_init(|| {
        let mut r: Registry<dyn Scaler> = Registry::new("scaler");
        r.register("standard", Arc::new(StandardScaler));
        r.register("robust", Arc::new(RobustScaler));
        r
    })
}
