//! CRPS scoring, dataset reports and average-rank tables.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::DatasetSplits;
use crate::error::{Error, Result};
use crate::forecast::{predict, ForecastSamples};
use crate::model::Model;

/// `(1/n)Σ|xᵢ−y| − (1/(2n²))ΣᵢΣⱼ|xᵢ−xⱼ|` over sorted samples in `O(n)`.
pub fn crps_sorted(sorted: &[f64], y: f64) -> f64 {
    let n = sorted.len() as f64;
    let mut abs_err = 0.0;
    let mut spread = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        abs_err += (x - y).abs();
        spread += (2.0 * i as f64 - n + 1.0) * x;
    }
    // ΣᵢΣⱼ|xᵢ−xⱼ| = 2·Σᵢ(2i − n + 1)·x₍ᵢ₎.
    (abs_err / n - spread / (n * n)).max(0.0)
}

pub fn crps_samples(samples: &[f64], y: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("CRPS needs at least one sample".into()));
    }
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(crps_sorted(&v, y))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesScore {
    pub item_id: String,
    pub crps: Vec<f64>,
    pub truth: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub model_id: String,
    pub dataset: String,
    pub seed: u64,
    pub num_samples: usize,
    pub per_series: Vec<SeriesScore>,
    /// Mean CRPS over every series and step.
    pub mean_crps: f64,
    pub mean_abs_target: f64,
    /// Whether [`MetricReport::value`] is divided by the mean absolute target.
    pub scaled: bool,
    pub value: f64,
}

/// Scores forecasts against realised values. With `scaled`, the mean CRPS is
/// divided by the mean absolute target over the same points.
pub fn score_forecasts(
    forecasts: &[ForecastSamples],
    truths: &[Vec<f64>],
    scaled: bool,
) -> Result<(Vec<SeriesScore>, f64, f64, f64)> {
    if forecasts.is_empty() || forecasts.len() != truths.len() {
        return Err(Error::InvalidArgument(format!(
            "{} forecasts for {} targets",
            forecasts.len(),
            truths.len()
        )));
    }
    let mut per_series = Vec::with_capacity(forecasts.len());
    let (mut total, mut abs_total, mut count) = (0.0, 0.0, 0usize);
    for (f, truth) in forecasts.iter().zip(truths) {
        if f.prediction_length() != truth.len() {
            return Err(Error::InvalidArgument(format!(
                "{}: forecast has {} steps, truth {}",
                f.item_id,
                f.prediction_length(),
                truth.len()
            )));
        }
        let crps = truth
            .iter()
            .enumerate()
            .map(|(h, &y)| crps_samples(&f.step(h), y))
            .collect::<Result<Vec<_>>>()?;
        total += crps.iter().sum::<f64>();
        abs_total += truth.iter().map(|y| y.abs()).sum::<f64>();
        count += truth.len();
        per_series.push(SeriesScore {
            item_id: f.item_id.clone(),
            crps,
            truth: truth.clone(),
        });
    }
    let mean = total / count as f64;
    let mean_abs = abs_total / count as f64;
    let value = if !scaled {
        mean
    } else if mean_abs > 0.0 {
        mean / mean_abs
    } else {
        log::warn!("mean |y| is zero; reporting unscaled CRPS");
        mean
    };
    Ok((per_series, mean, mean_abs, value))
}

/// Forecasts the final `P` points of every kept series and scores them.
/// Series `i` uses seed `seed + i·2³²` for its trajectories.
pub fn evaluate(
    model: &Model,
    model_id: &str,
    splits: &DatasetSplits,
    num_samples: usize,
    seed: u64,
    scaled: bool,
) -> Result<MetricReport> {
    if splits.test.is_empty() {
        return Err(Error::InvalidArgument(format!("{}: empty test split", splits.name)));
    }
    let forecasts = splits
        .test
        .par_iter()
        .enumerate()
        .map(|(i, task)| {
            let s = seed.wrapping_add((i as u64) << 32);
            predict(model, &task.history, splits.prediction_length, num_samples, s)
        })
        .collect::<Result<Vec<_>>>()?;
    let truths: Vec<Vec<f64>> = splits.test.iter().map(|t| t.truth.clone()).collect();
    let (per_series, mean_crps, mean_abs_target, value) = score_forecasts(&forecasts, &truths, scaled)?;
    Ok(MetricReport {
        model_id: model_id.into(),
        dataset: splits.name.clone(),
        seed,
        num_samples,
        per_series,
        mean_crps,
        mean_abs_target,
        scaled,
        value,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub values: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation (0 for a single seed).
    pub std: f64,
}

impl SeedSummary {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArgument("no values to summarise".into()));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Ok(Self { values, mean, std })
    }

    /// `mean ± std` with three decimals.
    pub fn cell(&self) -> String {
        format!("{:.3} ± {:.3}", self.mean, self.std)
    }
}

pub fn write_reports_csv(out: &mut dyn Write, reports: &[MetricReport]) -> std::io::Result<()> {
    writeln!(out, "model,dataset,seed,num_samples,mean_crps,mean_abs_target,scaled,value")?;
    for r in reports {
        writeln!(
            out,
            "{},{},{},{},{:.9},{:.9},{},{:.9}",
            r.model_id, r.dataset, r.seed, r.num_samples, r.mean_crps, r.mean_abs_target, r.scaled, r.value
        )?;
    }
    Ok(())
}

/// Per dataset (column), ranks models ascending with tied values sharing the
/// mean of their positions, then averages each model's ranks over the columns
/// where it has a value. Rows are models.
pub fn average_rank(table: &[Vec<Option<f64>>]) -> Result<Vec<f64>> {
    let cols = table.first().map_or(0, Vec::len);
    if table.is_empty() || cols == 0 {
        return Err(Error::InvalidArgument("empty rank table".into()));
    }
    if table.iter().any(|r| r.len() != cols) {
        return Err(Error::InvalidArgument("ragged rank table".into()));
    }
    let mut sums = vec![0.0; table.len()];
    let mut counts = vec![0usize; table.len()];
    for c in 0..cols {
        let mut present: Vec<(usize, f64)> = table
            .iter()
            .enumerate()
            .filter_map(|(r, row)| row[c].filter(|v| !v.is_nan()).map(|v| (r, v)))
            .collect();
        if present.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "column {c} has {} values; ranking needs at least 2",
                present.len()
            )));
        }
        present.sort_by(|a, b| a.1.total_cmp(&b.1));
        let mut i = 0;
        while i < present.len() {
            let mut j = i;
            while j + 1 < present.len() && present[j + 1].1 == present[i].1 {
                j += 1;
            }
            let rank = (i + j) as f64 / 2.0 + 1.0;
            for &(r, _) in &present[i..=j] {
                sums[r] += rank;
                counts[r] += 1;
            }
            i = j + 1;
        }
    }
    Ok(sums
        .iter()
        .zip(&counts)
        .map(|(s, &n)| if n > 0 { s / n as f64 } else { f64::NAN })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_point_example() {
        assert!((crps_samples(&[0.0, 2.0], 1.0).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(crps_samples(&[3.0; 5], 3.0).unwrap(), 0.0);
        assert_eq!(crps_samples(&[4.5], 1.0).unwrap(), 3.5);
        assert!(crps_samples(&[], 1.0).is_err());
    }

    #[test]
    fn ranks_with_ties_and_dominance() {
        let r = average_rank(&[vec![Some(1.0), Some(1.0)], vec![Some(2.0), Some(3.0)]]).unwrap();
        assert_eq!(r, vec![1.0, 2.0]);
        let r = average_rank(&[vec![Some(0.5)], vec![Some(0.5)], vec![Some(0.9)]]).unwrap();
        assert_eq!(r, vec![1.5, 1.5, 3.0]);
        assert!(average_rank(&[]).is_err());
        assert!(average_rank(&[vec![Some(1.0)], vec![None]]).is_err());
    }

    #[test]
    fn seed_summary() {
        let s = SeedSummary::new(vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(s.mean, 2.0);
        assert_eq!(s.std, 1.0);
        assert_eq!(s.cell(), "2.000 ± 1.000");
    }
}
