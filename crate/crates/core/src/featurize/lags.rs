use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Seasonal periods the default lag set covers: step, hour-of-day,
/// hour-of-week, day-of-week, day-of-month, month-of-year, quarter-of-year,
/// minute-of-hour and minute-of-day.
pub const DEFAULT_SEASONAL_PERIODS: [usize; 9] = [1, 24, 168, 7, 30, 12, 4, 60, 1440];

/// Largest lag the default set keeps.
pub const DEFAULT_MAX_LAG: usize = 1092;

/// Sorted, strictly increasing positive lag indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct LagSet(Vec<usize>);

impl LagSet {
    pub fn new(indices: Vec<usize>) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::Config("lag set is empty".into()));
        }
        if indices[0] < 1 || indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!(
                "lag indices must be positive and strictly increasing: {indices:?}"
            )));
        }
        Ok(Self(indices))
    }

    /// `{m−1, m, m+1}` for every default seasonal period `m`, plus `1..=7`,
    /// capped at [`DEFAULT_MAX_LAG`].
    pub fn default_for_corpus() -> Self {
        let mut lags: Vec<usize> = (1..=7).collect();
        for &m in &DEFAULT_SEASONAL_PERIODS {
            lags.extend([m.saturating_sub(1), m, m + 1]);
        }
        lags.retain(|&l| l >= 1 && l <= DEFAULT_MAX_LAG);
        lags.sort_unstable();
        lags.dedup();
        Self(lags)
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// `L`, the history a token needs.
    pub fn max_lag(&self) -> usize {
        *self.0.last().expect("non-empty")
    }
}

impl TryFrom<Vec<usize>> for LagSet {
    type Error = Error;
    fn try_from(v: Vec<usize>) -> Result<Self> {
        LagSet::new(v)
    }
}

impl From<LagSet> for Vec<usize> {
    fn from(l: LagSet) -> Self {
        l.0
    }
}
