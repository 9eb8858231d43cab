//! Train / validation / test construction and few-shot history restriction.

use serde::{Deserialize, Serialize};

use super::record::{Dataset, TimeSeriesRecord};
use crate::error::{Error, Result};

/// Validation windows held out per series when pretraining.
pub const PRETRAIN_VAL_WINDOWS: usize = 14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitMode {
    /// The 14 last overlapping (stride 1) windows of the train split validate.
    Pretrain,
    /// The single last window of the train split validates.
    Finetune,
}

impl SplitMode {
    pub fn val_windows(self) -> usize {
        match self {
            SplitMode::Pretrain => PRETRAIN_VAL_WINDOWS,
            SplitMode::Finetune => 1,
        }
    }
}

/// A validation target: the `P` points ending (exclusively) at `end`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ValWindow {
    /// Index into [`DatasetSplits::series`].
    pub item: usize,
    pub end: usize,
}

/// History/future pair used for test forecasts.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastTask {
    pub history: TimeSeriesRecord,
    pub truth: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct DatasetSplits {
    pub name: String,
    pub prediction_length: usize,
    /// Series kept after exclusion, test points removed.
    pub series: Vec<TimeSeriesRecord>,
    /// Training split: each kept series cut before its earliest validation target.
    pub train: Dataset,
    pub validation: Vec<ValWindow>,
    pub test: Vec<ForecastTask>,
    /// Item ids dropped for being too short.
    pub excluded: Vec<String>,
}

impl DatasetSplits {
    /// Values up to (exclusive) the end of `w`.
    pub fn val_history(&self, w: &ValWindow) -> &[f64] {
        &self.series[w.item].target[..w.end]
    }
}

/// Builds disjoint train / validation / test splits for every series.
///
/// The test split is the final `P` points. Validation targets are the last
/// `P`-windows of what remains, at stride 1, and training data ends before the
/// earliest validation target. A series is kept only if its length exceeds
/// `P·(windows + 1) + 1`; shorter series are excluded with a warning.
pub fn make_splits(dataset: &Dataset, mode: SplitMode) -> DatasetSplits {
    let p = dataset.prediction_length;
    let n_val = mode.val_windows();
    let min_len = p * (n_val + 1) + 1;
    let mut out = DatasetSplits {
        name: dataset.name.clone(),
        prediction_length: p,
        series: Vec::new(),
        train: Dataset {
            name: dataset.name.clone(),
            records: Vec::new(),
            prediction_length: p,
        },
        validation: Vec::new(),
        test: Vec::new(),
        excluded: Vec::new(),
    };
    for rec in &dataset.records {
        let n = rec.len();
        if n <= min_len {
            log::warn!(
                "{}: series {:?} of length {n} is too short for splits (needs > {min_len}); excluded",
                dataset.name,
                rec.item_id
            );
            out.excluded.push(rec.item_id.clone());
            continue;
        }
        let test_start = n - p;
        let item = out.series.len();
        let val_ends: Vec<usize> = (0..n_val).map(|k| test_start - k).collect();
        let train_end = val_ends[n_val - 1] - p;
        out.series.push(rec.slice(0..test_start));
        out.train.records.push(rec.slice(0..train_end));
        out.validation
            .extend(val_ends.into_iter().map(|end| ValWindow { item, end }));
        out.test.push(ForecastTask {
            history: rec.slice(0..test_start),
            truth: rec.target[test_start..].to_vec(),
        });
    }
    out
}

/// Keeps only the last `⌈percent% · len⌉` points of every record.
///
/// Records left shorter than `min_len` are dropped with a warning.
pub fn restrict_history(dataset: &Dataset, percent: u32, min_len: usize) -> Result<Dataset> {
    if percent == 0 || percent > 100 {
        return Err(Error::InvalidArgument(format!(
            "history percentage must be in 1..=100, got {percent}"
        )));
    }
    let mut records = Vec::with_capacity(dataset.records.len());
    for rec in &dataset.records {
        let n = rec.len();
        let keep = (percent as usize * n).div_ceil(100);
        if keep < min_len {
            log::warn!(
                "{}: series {:?} keeps {keep} points at {percent}% (< {min_len}); excluded",
                dataset.name,
                rec.item_id
            );
            continue;
        }
        records.push(rec.slice(n - keep..n));
    }
    Ok(Dataset {
        name: dataset.name.clone(),
        records,
        prediction_length: dataset.prediction_length,
    })
}
