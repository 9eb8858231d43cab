//! Autoregressive sampling of future trajectories.

use std::fmt::Write as _;

use chrono::NaiveDateTime;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Frequency, TimeSeriesRecord};
use crate::distribution::constrain;
use crate::error::{Error, Result};
use crate::featurize::{scaler_registry, tokenize, ScalingState};
use crate::model::Model;

#[derive(Debug, Clone, PartialEq)]
pub struct ForecastSamples {
    pub item_id: String,
    /// Timestamp of the first forecast step.
    pub start: NaiveDateTime,
    pub freq: Frequency,
    /// `num_samples × P`, de-standardized.
    pub samples: Vec<Vec<f64>>,
    pub scaling: ScalingState,
}

impl ForecastSamples {
    pub fn prediction_length(&self) -> usize {
        self.samples.first().map_or(0, Vec::len)
    }

    /// Values at horizon step `h` across trajectories.
    pub fn step(&self, h: usize) -> Vec<f64> {
        self.samples.iter().map(|row| row[h]).collect()
    }
}

/// Context of the last `L + C` points (left-padded when shorter), scaled on
/// its final `C` observed points.
struct Prepared {
    scaled: Vec<f64>,
    observed: Vec<bool>,
    start: NaiveDateTime,
    scaling: ScalingState,
}

fn prepare(model: &Model, history: &TimeSeriesRecord, p: usize) -> Result<Prepared> {
    if history.is_empty() {
        return Err(Error::InvalidArgument(format!("{}: empty history", history.item_id)));
    }
    if p == 0 {
        return Err(Error::InvalidArgument("prediction length must be positive".into()));
    }
    let cfg = model.config();
    let (l, c) = (cfg.lag_set.max_lag(), cfg.context_length);
    let n = history.len();
    let need = l + c;
    let take = n.min(need);
    let pad = need - take;
    let mut values = vec![0.0; pad];
    values.extend_from_slice(&history.target[n - take..]);
    let mut observed = vec![false; pad];
    observed.extend(std::iter::repeat_n(true, take));
    let context: Vec<f64> = (l..need).filter(|&i| observed[i]).map(|i| values[i]).collect();
    let scaling = scaler_registry().get(&cfg.scaler)?.fit(&context)?;
    Ok(Prepared {
        scaled: values.iter().map(|&v| scaling.standardize(v)).collect(),
        observed,
        start: history.timestamp(n as i64 - need as i64),
        scaling,
    })
}

impl Prepared {
    fn token_features(&self, model: &Model, buf: &[f64], obs: &[bool], pos: usize, freq: Frequency) -> Result<Vec<f64>> {
        let cfg = model.config();
        let toks = tokenize(&buf[..=pos], &obs[..=pos], pos, self.start, freq, &self.scaling, &cfg.lag_set)?;
        let mut out = Vec::with_capacity(cfg.token_dim());
        model.write_token(&toks[0], &mut out);
        Ok(out)
    }
}

fn trajectory_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

fn predict_impl(
    model: &Model,
    history: &TimeSeriesRecord,
    p: usize,
    num_samples: usize,
    seed: u64,
    cached: bool,
) -> Result<ForecastSamples> {
    if num_samples == 0 {
        return Err(Error::InvalidArgument("num_samples must be positive".into()));
    }
    let prep = prepare(model, history, p)?;
    let cfg = model.config();
    let l = cfg.lag_set.max_lag();
    let ctx_end = prep.scaled.len();
    let freq = history.freq;

    let mut context_feats = Vec::new();
    for pos in l..ctx_end {
        context_feats.extend(prep.token_features(model, &prep.scaled, &prep.observed, pos, freq)?);
    }
    let mut base_cache = model.new_cache();
    if cached {
        for row in context_feats.chunks_exact(cfg.token_dim()) {
            model.step(&mut base_cache, row)?;
        }
    }

    let samples = (0..num_samples)
        .into_par_iter()
        .map(|i| -> Result<Vec<f64>> {
            let mut rng = trajectory_rng(seed, i);
            let mut buf = prep.scaled.clone();
            let mut obs = prep.observed.clone();
            let mut cache = base_cache.clone();
            let mut feats = context_feats.clone();
            for s in 0..p {
                let pos = ctx_end + s;
                buf.push(0.0);
                obs.push(true);
                let tok = prep.token_features(model, &buf, &obs, pos, freq)?;
                let raw = if cached {
                    model.step(&mut cache, &tok)?
                } else {
                    feats.extend_from_slice(&tok);
                    let t = feats.len() / cfg.token_dim();
                    *model.forward_sequence(&feats, t)?.last().expect("t ≥ 1")
                };
                buf[pos] = constrain(raw).sample(&mut rng);
            }
            Ok(buf[ctx_end..].iter().map(|&z| prep.scaling.destandardize(z)).collect())
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(ForecastSamples {
        item_id: history.item_id.clone(),
        start: history.timestamp(history.len() as i64),
        freq,
        samples,
        scaling: prep.scaling,
    })
}

/// Samples `num_samples` trajectories of `p` steps after `history`. Trajectory
/// `i` draws from ChaCha stream `i` of `seed`, so results do not depend on
/// thread count.
pub fn predict(
    model: &Model,
    history: &TimeSeriesRecord,
    p: usize,
    num_samples: usize,
    seed: u64,
) -> Result<ForecastSamples> {
    predict_impl(model, history, p, num_samples, seed, true)
}

/// [`predict`] recomputing the full sequence at every step instead of using
/// the key/value cache.
pub fn predict_uncached(
    model: &Model,
    history: &TimeSeriesRecord,
    p: usize,
    num_samples: usize,
    seed: u64,
) -> Result<ForecastSamples> {
    predict_impl(model, history, p, num_samples, seed, false)
}

/// Linearly interpolated empirical quantile of unsorted values.
pub fn empirical_quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, q)
}

pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// One curve over the horizon per requested probability.
pub fn quantiles(samples: &ForecastSamples, qs: &[f64]) -> Result<Vec<Vec<f64>>> {
    if samples.samples.is_empty() {
        return Err(Error::InvalidArgument("no samples".into()));
    }
    if let Some(q) = qs.iter().find(|q| !(**q > 0.0 && **q < 1.0)) {
        return Err(Error::InvalidArgument(format!("quantile {q} not in (0, 1)")));
    }
    let steps: Vec<Vec<f64>> = (0..samples.prediction_length())
        .map(|h| {
            let mut v = samples.step(h);
            v.sort_by(f64::total_cmp);
            v
        })
        .collect();
    Ok(qs
        .iter()
        .map(|&q| steps.iter().map(|s| quantile_sorted(s, q)).collect())
        .collect())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ForecastRecord {
    pub item_id: String,
    pub start: String,
    pub freq: Frequency,
    pub mean: Vec<f64>,
    /// `(probability, curve)` pairs.
    pub quantiles: Vec<(f64, Vec<f64>)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<Vec<Vec<f64>>>,
}

impl ForecastRecord {
    pub fn new(f: &ForecastSamples, qs: &[f64], include_samples: bool) -> Result<Self> {
        let curves = quantiles(f, qs)?;
        let n = f.samples.len() as f64;
        let mean = (0..f.prediction_length())
            .map(|h| f.step(h).iter().sum::<f64>() / n)
            .collect();
        Ok(Self {
            item_id: f.item_id.clone(),
            start: crate::data::freq::format_timestamp(f.start),
            freq: f.freq,
            mean,
            quantiles: qs.iter().copied().zip(curves).collect(),
            samples: include_samples.then(|| f.samples.clone()),
        })
    }

    pub fn to_json_line(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::InvalidArgument(e.to_string()))
    }
}

/// SVG of the recent history, the median and the 50% / 90% intervals, plus the
/// realised values when known.
pub fn forecast_svg(history: &[f64], f: &ForecastSamples, truth: Option<&[f64]>) -> Result<String> {
    let curves = quantiles(f, &[0.05, 0.25, 0.5, 0.75, 0.95])?;
    let p = f.prediction_length();
    let shown = history.len().min(4 * p.max(8));
    let hist = &history[history.len() - shown..];
    let n = shown + p;
    let mut all: Vec<f64> = hist.to_vec();
    all.extend(curves.iter().flatten());
    if let Some(t) = truth {
        all.extend_from_slice(t);
    }
    let lo = all.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = all.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let (w, h, m) = (800.0, 300.0, 30.0);
    let x = |i: usize| m + (w - 2.0 * m) * i as f64 / (n.max(2) - 1) as f64;
    let y = |v: f64| h - m - (h - 2.0 * m) * (v - lo) / span;
    let polyline = |pts: &[(usize, f64)], style: &str| {
        let coords: Vec<String> = pts.iter().map(|&(i, v)| format!("{:.2},{:.2}", x(i), y(v))).collect();
        format!("<polyline fill=\"none\" {style} points=\"{}\"/>\n", coords.join(" "))
    };
    let band = |lower: &[f64], upper: &[f64], fill: &str| {
        let mut coords: Vec<String> = upper
            .iter()
            .enumerate()
            .map(|(k, &v)| format!("{:.2},{:.2}", x(shown + k), y(v)))
            .collect();
        coords.extend(
            lower
                .iter()
                .enumerate()
                .rev()
                .map(|(k, &v)| format!("{:.2},{:.2}", x(shown + k), y(v))),
        );
        format!("<polygon fill=\"{fill}\" stroke=\"none\" points=\"{}\"/>\n", coords.join(" "))
    };
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">"
    );
    let _ = writeln!(svg, "<title>{}</title>", f.item_id);
    let _ = writeln!(svg, "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>");
    svg.push_str(&band(&curves[0], &curves[4], "#b7e4c7"));
    svg.push_str(&band(&curves[1], &curves[3], "#40916c"));
    let hist_pts: Vec<(usize, f64)> = hist.iter().copied().enumerate().collect();
    svg.push_str(&polyline(&hist_pts, "stroke=\"black\" stroke-width=\"1.5\""));
    let med: Vec<(usize, f64)> = curves[2].iter().enumerate().map(|(k, &v)| (shown + k, v)).collect();
    svg.push_str(&polyline(&med, "stroke=\"#1b4332\" stroke-width=\"2\""));
    if let Some(t) = truth {
        let pts: Vec<(usize, f64)> = t.iter().enumerate().map(|(k, &v)| (shown + k, v)).collect();
        svg.push_str(&polyline(&pts, "stroke=\"black\" stroke-dasharray=\"4 3\""));
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fs(samples: Vec<Vec<f64>>) -> ForecastSamples {
        ForecastSamples {
            item_id: "x".into(),
            start: crate::data::parse_timestamp("2020-01-01").unwrap(),
            freq: Frequency::HOURLY,
            samples,
            scaling: ScalingState {
                loc: 0.0,
                scale: 1.0,
                kind: "robust",
            },
        }
    }

    #[test]
    fn median_of_four() {
        let f = fs(vec![vec![3.0], vec![1.0], vec![4.0], vec![2.0]]);
        assert_eq!(quantiles(&f, &[0.5]).unwrap(), vec![vec![2.5]]);
    }

    #[test]
    fn identical_rows() {
        let row = vec![1.0, -2.0, 7.5];
        let f = fs(vec![row.clone(); 5]);
        for c in quantiles(&f, &[0.05, 0.5, 0.95]).unwrap() {
            assert_eq!(c, row);
        }
    }

    #[test]
    fn rejects_bad_quantiles() {
        let f = fs(vec![vec![1.0]]);
        assert!(quantiles(&f, &[0.0]).is_err());
        assert!(quantiles(&f, &[1.2]).is_err());
        assert!(quantiles(&fs(vec![]), &[0.5]).is_err());
    }

    #[test]
    fn svg_has_bands() {
        let f = fs((0..20).map(|i| vec![i as f64, 2.0 * i as f64]).collect());
        let svg = forecast_svg(&[1.0, 2.0, 3.0], &f, Some(&[0.0, 1.0])).unwrap();
        assert_eq!(svg.matches("<polygon").count(), 2);
        assert!(svg.starts_with("<svg"));
    }
}
