//! Stratified random window sampling over a corpus of datasets.

use chrono::NaiveDateTime;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::freq::Frequency;
use super::record::{Dataset, TimeSeriesRecord};
use crate::error::{Error, Result};

/// Contiguous slice of a series, left-padded with zeros where it starts
/// before the first observation.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub dataset: usize,
    pub item: usize,
    pub values: Vec<f64>,
    /// `false` at padded positions.
    pub observed: Vec<bool>,
    /// Timestamp of `values[0]`.
    pub start: NaiveDateTime,
    pub freq: Frequency,
}

impl Window {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Window of `len` points ending (exclusive) at `end`; positions before the
    /// series start are padded.
    pub fn ending_at(record: &TimeSeriesRecord, end: usize, len: usize) -> Window {
        let start = end as i64 - len as i64;
        let mut values = Vec::with_capacity(len);
        let mut observed = Vec::with_capacity(len);
        for i in start..end as i64 {
            if i < 0 {
                values.push(0.0);
                observed.push(false);
            } else {
                values.push(record.target[i as usize]);
                observed.push(true);
            }
        }
        Window {
            dataset: 0,
            item: 0,
            values,
            observed,
            start: record.timestamp(start),
            freq: record.freq,
        }
    }

    pub fn timestamp(&self, index: usize) -> NaiveDateTime {
        self.freq.advance(self.start, index as i64)
    }
}

/// Draws windows from a corpus: a dataset with probability proportional to
/// its number of series, then a series uniformly, then a start uniformly.
pub struct CorpusSampler {
    datasets: Vec<Dataset>,
    weights: Vec<f64>,
    rng: ChaCha8Rng,
}

impl CorpusSampler {
    pub fn new(datasets: Vec<Dataset>, seed: u64) -> Result<Self> {
        let total: usize = datasets.iter().map(Dataset::num_series).sum();
        if total == 0 {
            return Err(Error::InvalidArgument("corpus has no series".into()));
        }
        let weights = datasets
            .iter()
            .map(|d| d.num_series() as f64 / total as f64)
            .collect();
        Ok(Self {
            datasets,
            weights,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn datasets(&self) -> &[Dataset] {
        &self.datasets
    }

    pub fn rng_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    /// Samples a window of `window_len` points whose first `pad_allowance`
    /// points may be padding.
    ///
    /// Series at least `window_len` long yield unpadded windows with a uniform
    /// start. Shorter series (but at least `window_len - pad_allowance` long)
    /// yield windows whose trailing `window_len - pad_allowance` points are all
    /// observed, with the start uniform over those positions. Datasets without
    /// any admissible series are skipped and the weights renormalised.
    pub fn sample_window(&mut self, window_len: usize, pad_allowance: usize) -> Result<Window> {
        let min_len = window_len.saturating_sub(pad_allowance).max(1);
        let admissible: Vec<Vec<usize>> = self
            .datasets
            .iter()
            .map(|d| {
                d.records
                    .iter()
                    .enumerate()
                    .filter(|(_, r)| r.len() >= min_len)
                    .map(|(i, _)| i)
                    .collect()
            })
            .collect();
        let mass: f64 = self
            .weights
            .iter()
            .zip(&admissible)
            .filter(|(_, a)| !a.is_empty())
            .map(|(w, _)| w)
            .sum();
        if mass == 0.0 {
            return Err(Error::NoValidWindow { window_len });
        }
        let u: f64 = self.rng.random::<f64>() * mass;
        let mut acc = 0.0;
        let mut dataset = None;
        let mut last_ok = 0;
        for (i, (w, a)) in self.weights.iter().zip(&admissible).enumerate() {
            if a.is_empty() {
                continue;
            }
            last_ok = i;
            acc += w;
            if u < acc {
                dataset = Some(i);
                break;
            }
        }
        let dataset = dataset.unwrap_or(last_ok);
        let items = &admissible[dataset];
        let item = items[self.rng.random_range(0..items.len())];
        let record = &self.datasets[dataset].records[item];
        let n = record.len();
        let end = if n >= window_len {
            self.rng.random_range(window_len..=n)
        } else {
            // Window start ranges over -pad_allowance..=n-window_len.
            let lo = window_len.saturating_sub(pad_allowance);
            self.rng.random_range(lo..=n)
        };
        let mut window = Window::ending_at(record, end, window_len);
        window.dataset = dataset;
        window.item = item;
        Ok(window)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::freq::parse_timestamp;

    fn ds(name: &str, lens: &[usize]) -> Dataset {
        Dataset {
            name: name.into(),
            records: lens
                .iter()
                .enumerate()
                .map(|(i, &l)| TimeSeriesRecord {
                    item_id: format!("{name}{i}"),
                    start: parse_timestamp("2020-01-01").unwrap(),
                    freq: Frequency::HOURLY,
                    target: (0..l).map(|v| v as f64 + 1.0).collect(),
                })
                .collect(),
            prediction_length: 1,
        }
    }

    #[test]
    fn weights_follow_series_counts() {
        let s = CorpusSampler::new(vec![ds("a", &[50]), ds("b", &[50, 50, 50])], 1).unwrap();
        assert_eq!(s.weights(), &[0.25, 0.75]);
        assert!((s.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn exact_length_series_starts_at_zero() {
        let mut s = CorpusSampler::new(vec![ds("a", &[20])], 3).unwrap();
        for _ in 0..50 {
            let w = s.sample_window(20, 5).unwrap();
            assert_eq!(w.values[0], 1.0);
            assert!(w.observed.iter().all(|&o| o));
        }
    }

    #[test]
    fn too_long_window_is_an_error() {
        let mut s = CorpusSampler::new(vec![ds("a", &[20])], 3).unwrap();
        assert!(s.sample_window(26, 5).is_err());
        assert!(s.sample_window(25, 5).is_ok());
    }

    #[test]
    fn short_series_are_padded_on_the_left() {
        let mut s = CorpusSampler::new(vec![ds("a", &[12])], 9).unwrap();
        for _ in 0..50 {
            let w = s.sample_window(15, 5).unwrap();
            assert_eq!(w.len(), 15);
            assert!(!w.observed[0]);
            // The trailing 10 points are always observed.
            assert!(w.observed[5..].iter().all(|&o| o));
            let first_obs = w.observed.iter().position(|&o| o).unwrap();
            assert_eq!(w.values[..first_obs], vec![0.0; first_obs][..]);
        }
    }

    #[test]
    fn same_seed_same_windows() {
        let corpus = || vec![ds("a", &[40, 60]), ds("b", &[80])];
        let mut a = CorpusSampler::new(corpus(), 11).unwrap();
        let mut b = CorpusSampler::new(corpus(), 11).unwrap();
        for _ in 0..20 {
            assert_eq!(a.sample_window(30, 10).unwrap(), b.sample_window(30, 10).unwrap());
        }
    }
}
