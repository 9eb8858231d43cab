use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use super::freq::{format_timestamp, parse_timestamp, Frequency};
use crate::error::{Error, Result};

/// One univariate series.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesRecord {
    pub item_id: String,
    pub start: NaiveDateTime,
    pub freq: Frequency,
    pub target: Vec<f64>,
}

impl TimeSeriesRecord {
    pub fn len(&self) -> usize {
        self.target.len()
    }

    pub fn is_empty(&self) -> bool {
        self.target.is_empty()
    }

    /// Timestamp of observation `index` (may be negative for padded history).
    pub fn timestamp(&self, index: i64) -> NaiveDateTime {
        self.freq.advance(self.start, index)
    }

    /// Sub-series `range`, with the start timestamp moved to match.
    pub fn slice(&self, range: std::ops::Range<usize>) -> TimeSeriesRecord {
        TimeSeriesRecord {
            item_id: self.item_id.clone(),
            start: self.timestamp(range.start as i64),
            freq: self.freq,
            target: self.target[range].to_vec(),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct RawRecord {
    item_id: String,
    start: String,
    freq: String,
    target: Vec<f64>,
}

/// Named collection of series sharing a prediction length.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub records: Vec<TimeSeriesRecord>,
    pub prediction_length: usize,
}

impl Dataset {
    pub fn num_series(&self) -> usize {
        self.records.len()
    }

    pub fn max_len(&self) -> usize {
        self.records.iter().map(TimeSeriesRecord::len).max().unwrap_or(0)
    }
}

/// Parses JSON-lines text; `path` is only used in error messages.
pub fn parse_dataset(text: &str, path: &Path, name: &str, prediction_length: usize) -> Result<Dataset> {
    if prediction_length == 0 {
        return Err(Error::InvalidArgument("prediction length must be positive".into()));
    }
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord =
            serde_json::from_str(line).map_err(|e| parse_err(lineno, e.to_string()))?;
        let freq = raw
            .freq
            .parse::<Frequency>()
            .map_err(|e| parse_err(lineno, e.to_string()))?;
        let start = parse_timestamp(&raw.start).map_err(|e| parse_err(lineno, e.to_string()))?;
        if raw.target.is_empty() {
            return Err(parse_err(lineno, "empty target".into()));
        }
        records.push(TimeSeriesRecord {
            item_id: raw.item_id,
            start,
            freq,
            target: raw.target,
        });
    }
    if records.is_empty() {
        return Err(parse_err(0, "file contains no records".into()));
    }
    Ok(Dataset {
        name: name.to_string(),
        records,
        prediction_length,
    })
}

/// Loads a JSON-lines dataset; the dataset is named after the file stem.
pub fn load_dataset(path: impl AsRef<Path>, prediction_length: usize) -> Result<Dataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    parse_dataset(&text, path, &name, prediction_length)
}

pub fn write_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for r in &dataset.records {
        let raw = RawRecord {
            item_id: r.item_id.clone(),
            start: format_timestamp(r.start),
            freq: r.freq.to_string(),
            target: r.target.clone(),
        };
        serde_json::to_writer(&mut out, &raw).expect("in-memory write");
        out.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

/// One entry of a corpus manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub path: PathBuf,
    pub prediction_length: usize,
}

/// TOML list of datasets: `[[dataset]] name, path, prediction_length`.
/// Relative paths resolve against the manifest's directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    #[serde(rename = "dataset", default)]
    pub datasets: Vec<ManifestEntry>,
}

impl CorpusManifest {
    pub fn read(path: impl AsRef<Path>) -> Result<(Self, PathBuf)> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest: CorpusManifest =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((manifest, dir))
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = toml::to_string(self).map_err(|e| Error::Config(e.to_string()))?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load_all(path: impl AsRef<Path>) -> Result<Vec<Dataset>> {
        let (manifest, dir) = Self::read(path)?;
        manifest
            .datasets
            .iter()
            .map(|e| {
                let mut ds = load_dataset(dir.join(&e.path), e.prediction_length)?;
                ds.name = e.name.clone();
                Ok(ds)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Dataset> {
        parse_dataset(text, Path::new("mem.jsonl"), "mem", 2)
    }

    #[test]
    fn parses_one_record() {
        let ds = parse(r#"{"item_id":"a","start":"2020-01-01T00:00:00","freq":"H","target":[1,2,3]}"#)
            .unwrap();
        assert_eq!(ds.num_series(), 1);
        assert_eq!(ds.records[0].target, vec![1.0, 2.0, 3.0]);
        assert_eq!(ds.records[0].freq, Frequency::HOURLY);
    }

    #[test]
    fn non_numeric_target_names_the_line() {
        let err = parse(r#"{"item_id":"a","start":"2020-01-01T00:00:00","freq":"H","target":[1,"x"]}"#)
            .unwrap_err()
            .to_string();
        assert!(err.contains("line 1"), "{err}");
    }

    #[test]
    fn unknown_freq_and_empty_file_are_errors() {
        let text = "\n".to_string()
            + r#"{"item_id":"a","start":"2020-01-01","freq":"Z","target":[1]}"#;
        let err = parse(&text).unwrap_err().to_string();
        assert!(err.contains("line 2") && err.contains("frequency"), "{err}");
        assert!(parse("").is_err());
        assert!(parse("\n\n").is_err());
    }

    #[test]
    fn write_then_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        let ds = parse(r#"{"item_id":"a","start":"2021-03-01T12:00:00","freq":"30T","target":[1.5,-2]}"#)
            .unwrap();
        write_dataset(&ds, &path).unwrap();
        let back = load_dataset(&path, 2).unwrap();
        assert_eq!(back.records, ds.records);
        assert_eq!(back.name, "d");
    }

    #[test]
    fn slice_moves_start() {
        let ds = parse(r#"{"item_id":"a","start":"2020-01-01T00:00:00","freq":"H","target":[1,2,3,4]}"#)
            .unwrap();
        let s = ds.records[0].slice(2..4);
        assert_eq!(s.target, vec![3.0, 4.0]);
        assert_eq!(s.start, parse_timestamp("2020-01-01T02:00:00").unwrap());
    }
}
