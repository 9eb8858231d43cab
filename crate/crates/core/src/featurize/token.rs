use chrono::NaiveDateTime;

use super::datetime::{datetime_features, NUM_DATETIME_FEATURES};
use super::lags::LagSet;
use super::scaling::{ScalingState, Scaler};
use crate::data::freq::Frequency;
use crate::data::sampler::Window;
use crate::error::{Error, Result};

pub const NUM_SUMMARY_STATS: usize = 2;

/// Model input at one time step `t`, predicting `x_t` from its lags.
#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    /// Scaled `x_{t − lag}` for every lag (0 where padded).
    pub lag_values: Vec<f64>,
    pub datetime_feats: [f64; NUM_DATETIME_FEATURES],
    pub summary_stats: [f64; NUM_SUMMARY_STATS],
    /// Scaled `x_t`.
    pub target: f64,
    /// Every lag position and the target are observed.
    pub fully_observed: bool,
}

impl Token {
    pub fn write_features(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(&self.lag_values);
        out.extend_from_slice(&self.datetime_feats);
        out.extend_from_slice(&self.summary_stats);
    }
}

/// `|lags| + F + 2`.
pub fn token_dim(lags: &LagSet) -> usize {
    lags.len() + NUM_DATETIME_FEATURES + NUM_SUMMARY_STATS
}

/// Builds tokens for positions `first..scaled.len()` of an already scaled
/// series whose element 0 is at `start`.
pub fn tokenize(
    scaled: &[f64],
    observed: &[bool],
    first: usize,
    start: NaiveDateTime,
    freq: Frequency,
    scaling: &ScalingState,
    lags: &LagSet,
) -> Result<Vec<Token>> {
    if first < lags.max_lag() {
        return Err(Error::InvalidArgument(format!(
            "token at position {first} needs {} points of history",
            lags.max_lag()
        )));
    }
    if observed.len() != scaled.len() {
        return Err(Error::InvalidArgument("observed mask length differs from values".into()));
    }
    let summary = scaling.summary();
    Ok((first..scaled.len())
        .map(|t| {
            let mut fully = observed[t];
            let lag_values = lags
                .indices()
                .iter()
                .map(|&l| {
                    let i = t - l;
                    fully &= observed[i];
                    if observed[i] {
                        scaled[i]
                    } else {
                        0.0
                    }
                })
                .collect();
            Token {
                lag_values,
                datetime_feats: datetime_features(freq.advance(start, t as i64)),
                summary_stats: summary,
                target: if observed[t] { scaled[t] } else { 0.0 },
                fully_observed: fully,
            }
        })
        .collect())
}

/// A window turned into model inputs.
#[derive(Debug, Clone)]
pub struct EncodedWindow {
    pub tokens: Vec<Token>,
    pub scaling: ScalingState,
}

impl EncodedWindow {
    /// Row-major `T × token_dim` feature matrix.
    pub fn feature_matrix(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for t in &self.tokens {
            t.write_features(&mut out);
        }
        out
    }
}

/// Encodes a window of `L + T` points into `T` tokens. The scaler is fitted on
/// the observed values among the first `context_len` token positions.
pub fn encode_window(
    window: &Window,
    lags: &LagSet,
    context_len: usize,
    scaler: &dyn Scaler,
) -> Result<EncodedWindow> {
    let history = lags.max_lag();
    if window.len() <= history {
        return Err(Error::InvalidArgument(format!(
            "window of {} points has no room for tokens after {history} lag points",
            window.len()
        )));
    }
    let ctx_end = (history + context_len).min(window.len());
    let context: Vec<f64> = (history..ctx_end)
        .filter(|&i| window.observed[i])
        .map(|i| window.values[i])
        .collect();
    let scaling = scaler.fit(&context)?;
    let scaled: Vec<f64> = window.values.iter().map(|&v| scaling.standardize(v)).collect();
    let tokens = tokenize(
        &scaled,
        &window.observed,
        history,
        window.start,
        window.freq,
        &scaling,
        lags,
    )?;
    Ok(EncodedWindow { tokens, scaling })
}
