use std::fmt;
use std::str::FromStr;

use chrono::{Duration, Months, NaiveDate, NaiveDateTime};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FreqUnit {
    Second,
    Minute,
    Hour,
    Day,
    Week,
    Month,
    Quarter,
}

impl FreqUnit {
    fn code(self) -> &'static str {
        match self {
            FreqUnit::Second => "S",
            FreqUnit::Minute => "T",
            FreqUnit::Hour => "H",
            FreqUnit::Day => "D",
            FreqUnit::Week => "W",
            FreqUnit::Month => "M",
            FreqUnit::Quarter => "Q",
        }
    }
}

/// Sampling frequency: a unit with a positive multiplier, e.g. `30T`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Frequency {
    pub unit: FreqUnit,
    pub multiple: u32,
}

impl Frequency {
    pub const HOURLY: Frequency = Frequency {
        unit: FreqUnit::Hour,
        multiple: 1,
    };

    pub fn new(unit: FreqUnit, multiple: u32) -> Self {
        assert!(multiple > 0, "frequency multiple must be positive");
        Self { unit, multiple }
    }

    /// Fixed-length period, or `None` for calendar units (month, quarter).
    pub fn fixed_period(&self) -> Option<Duration> {
        let m = i64::from(self.multiple);
        match self.unit {
            FreqUnit::Second => Some(Duration::seconds(m)),
            FreqUnit::Minute => Some(Duration::minutes(m)),
            FreqUnit::Hour => Some(Duration::hours(m)),
            FreqUnit::Day => Some(Duration::days(m)),
            FreqUnit::Week => Some(Duration::weeks(m)),
            FreqUnit::Month | FreqUnit::Quarter => None,
        }
    }

    /// Timestamp `steps` periods after `ts` (`steps` may be negative).
    pub fn advance(&self, ts: NaiveDateTime, steps: i64) -> NaiveDateTime {
        if let Some(period) = self.fixed_period() {
            return ts + period * steps as i32;
        }
        let months_per = match self.unit {
            FreqUnit::Quarter => 3,
            _ => 1,
        } * i64::from(self.multiple);
        let total = months_per * steps;
        let months = Months::new(total.unsigned_abs() as u32);
        if total >= 0 {
            ts.checked_add_months(months)
        } else {
            ts.checked_sub_months(months)
        }
        .expect("timestamp out of range")
    }
}

impl FromStr for Frequency {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let split = s.find(|c: char| !c.is_ascii_digit()).unwrap_or(s.len());
        let (digits, code) = s.split_at(split);
        let multiple = if digits.is_empty() {
            1
        } else {
            digits
                .parse::<u32>()
                .ok()
                .filter(|&m| m > 0)
                .ok_or_else(|| Error::UnknownFrequency(s.to_string()))?
        };
        // Anchored weekly codes such as "W-SUN" map to plain weeks.
        let base = code.split('-').next().unwrap_or(code);
        let unit = match base {
            "S" | "s" => FreqUnit::Second,
            "T" | "min" => FreqUnit::Minute,
            "H" | "h" => FreqUnit::Hour,
            "D" => FreqUnit::Day,
            "W" => FreqUnit::Week,
            "M" | "MS" => FreqUnit::Month,
            "Q" | "QS" => FreqUnit::Quarter,
            _ => return Err(Error::UnknownFrequency(s.to_string())),
        };
        Ok(Self { unit, multiple })
    }
}

impl fmt::Display for Frequency {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.multiple != 1 {
            write!(f, "{}", self.multiple)?;
        }
        f.write_str(self.unit.code())
    }
}

impl Serialize for Frequency {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Frequency {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

const TIMESTAMP_FORMATS: [&str; 4] = [
    "%Y-%m-%dT%H:%M:%S",
    "%Y-%m-%d %H:%M:%S",
    "%Y-%m-%dT%H:%M",
    "%Y-%m-%d %H:%M",
];

/// Parses an ISO-8601 date or date-time (no time zone).
pub fn parse_timestamp(s: &str) -> Result<NaiveDateTime> {
    let s = s.trim();
    for fmt in TIMESTAMP_FORMATS {
        if let Ok(ts) = NaiveDateTime::parse_from_str(s, fmt) {
            return Ok(ts);
        }
    }
    // Fractional seconds.
    if let Ok(ts) = NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S%.f") {
        return Ok(ts);
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .map(|d| d.and_hms_opt(0, 0, 0).expect("midnight"))
        .map_err(|_| Error::InvalidTimestamp(s.to_string()))
}

pub fn format_timestamp(ts: NaiveDateTime) -> String {
    ts.format("%Y-%m-%dT%H:%M:%S").to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ts(s: &str) -> NaiveDateTime {
        parse_timestamp(s).unwrap()
    }

    #[test]
    fn parses_codes_with_multipliers() {
        let f: Frequency = "30T".parse().unwrap();
        assert_eq!(f, Frequency::new(FreqUnit::Minute, 30));
        assert_eq!(f.fixed_period(), Some(Duration::minutes(30)));
        assert_eq!("H".parse::<Frequency>().unwrap(), Frequency::HOURLY);
        assert_eq!("W-SUN".parse::<Frequency>().unwrap().unit, FreqUnit::Week);
        assert_eq!("15min".parse::<Frequency>().unwrap().to_string(), "15T");
    }

    #[test]
    fn rejects_unknown_codes() {
        assert!("X".parse::<Frequency>().is_err());
        assert!("0H".parse::<Frequency>().is_err());
        assert!("".parse::<Frequency>().is_err());
    }

    #[test]
    fn advances_calendar_units() {
        let start = ts("2020-01-31T00:00:00");
        let m: Frequency = "M".parse().unwrap();
        assert_eq!(m.advance(start, 1), ts("2020-02-29T00:00:00"));
        let q: Frequency = "Q".parse().unwrap();
        assert_eq!(q.advance(ts("2020-01-01"), 2), ts("2020-07-01"));
        assert_eq!(q.advance(ts("2020-07-01"), -2), ts("2020-01-01"));
        let h = Frequency::HOURLY;
        assert_eq!(h.advance(ts("2020-01-01"), 25), ts("2020-01-02T01:00:00"));
    }

    #[test]
    fn timestamp_formats() {
        assert_eq!(ts("2020-01-01"), ts("2020-01-01T00:00:00"));
        assert_eq!(ts("2020-01-01 05:30:00"), ts("2020-01-01T05:30:00"));
        assert!(parse_timestamp("yesterday").is_err());
    }
}
