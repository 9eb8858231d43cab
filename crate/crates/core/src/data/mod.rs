//! Dataset files, protocol splits, window sampling and synthetic corpora.

pub mod freq;
pub mod record;
pub mod sampler;
pub mod splits;
pub mod synthetic;

pub use freq::{parse_timestamp, FreqUnit, Frequency};
pub use record::{load_dataset, write_dataset, CorpusManifest, Dataset, ManifestEntry, TimeSeriesRecord};
pub use sampler::{CorpusSampler, Window};
pub use splits::{make_splits, restrict_history, DatasetSplits, ForecastTask, SplitMode, ValWindow};
