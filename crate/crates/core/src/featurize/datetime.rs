use chrono::{Datelike, NaiveDateTime, Timelike};

/// Number of date-time features per token.
pub const NUM_DATETIME_FEATURES: usize = 9;

/// Calendar position of `ts`, each component mapped affinely onto
/// `[-0.5, 0.5]`: second-of-minute, minute-of-hour, hour-of-day, day-of-week,
/// day-of-month, day-of-year, week-of-year, month-of-year, quarter-of-year.
pub fn datetime_features(ts: NaiveDateTime) -> [f64; NUM_DATETIME_FEATURES] {
    let unit = |value: u32, range: u32| f64::from(value) / f64::from(range - 1) - 0.5;
    [
        unit(ts.second(), 60),
        unit(ts.minute(), 60),
        unit(ts.hour(), 24),
        unit(ts.weekday().num_days_from_monday(), 7),
        unit(ts.day0(), 31),
        unit(ts.ordinal0(), 366),
        unit(ts.iso_week().week0(), 53),
        unit(ts.month0(), 12),
        unit(ts.month0() / 3, 4),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::freq::parse_timestamp;

    #[test]
    fn new_year_midnight() {
        let f = datetime_features(parse_timestamp("2021-01-01T00:00:00").unwrap());
        assert_eq!(f[2], -0.5);
        assert_eq!(f[7], -0.5);
        assert_eq!(f[8], -0.5);
        assert_eq!(f[0], -0.5);
        assert_eq!(f[4], -0.5);
    }

    #[test]
    fn last_hour_and_december() {
        let f = datetime_features(parse_timestamp("2021-12-31T23:59:59").unwrap());
        assert_eq!(f[2], 0.5);
        assert_eq!(f[0], 0.5);
        assert_eq!(f[1], 0.5);
        assert_eq!(f[7], 0.5);
        assert_eq!(f[8], 0.5);
        assert!(f.iter().all(|v| (-0.5..=0.5).contains(v)));
    }

    #[test]
    fn within_day_hourly_steps_change_only_hour() {
        let base = parse_timestamp("2022-05-17T00:00:00").unwrap();
        for h in 0..23 {
            let a = datetime_features(base + chrono::Duration::hours(h));
            let b = datetime_features(base + chrono::Duration::hours(h + 1));
            let changed: Vec<usize> = (0..NUM_DATETIME_FEATURES).filter(|&i| a[i] != b[i]).collect();
            assert_eq!(changed, vec![2], "hour {h}");
        }
    }
}
