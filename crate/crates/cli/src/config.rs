//! Run configuration: named presets or a TOML file with `[model]` and
//! `[train]` tables.

use std::path::Path;
use std::sync::{Arc, OnceLock};

use laglm::model::ModelConfig;
use laglm::registry::Registry;
use laglm::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

pub trait Preset: Send + Sync {
    fn name(&self) -> &'static str;
    fn config(&self) -> RunConfig;
}

/// The selected architecture with the published pretraining schedule.
pub struct Table4Optimal;

/// Two layers of four 8-dimensional heads with a short, fast schedule.
pub struct DeskSmall;

impl Preset for Table4Optimal {
    fn name(&self) -> &'static str {
        "table4-optimal"
    }

    fn config(&self) -> RunConfig {
        RunConfig {
            model: ModelConfig::table4_optimal(),
            train: TrainConfig::default(),
        }
    }
}

impl Preset for DeskSmall {
    fn name(&self) -> &'static str {
        "desk-small"
    }

    fn config(&self) -> RunConfig {
        RunConfig {
            model: ModelConfig {
                n_layers: 2,
                n_heads: 4,
                dim_per_head: 8,
                ..ModelConfig::table4_optimal()
            },
            train: TrainConfig {
                batch_size: 25,
                learning_rate: 1e-3,
                max_epochs: 60,
                early_stop_patience: 10,
                ..TrainConfig::default()
            },
        }
    }
}

pub fn preset_registry() -> &'static Registry<dyn Preset> {
    static REGISTRY: OnceLock<Registry<dyn Preset>> = OnceLock::new();
    REGISTRY.get_or_init(|| {
        let mut r: Registry<dyn Preset> = Registry::new("preset");
        r.register("table4-optimal", Arc::new(Table4Optimal));
        r.register("desk-small", Arc::new(DeskSmall));
        r
    })
}

/// Parses a config file. Missing tables or keys take the `table4-optimal`
/// values; `model.lag_set` defaults to the corpus lag set.
pub fn parse_config(text: &str) -> Result<RunConfig, CliError> {
    let mut doc: toml::Table = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
    if let Some(key) = doc.keys().find(|k| *k != "model" && *k != "train") {
        return Err(CliError::Config(format!("unknown table `{key}`; expected `model` or `train`")));
    }
    let base = Table4Optimal.config();
    let mut model = toml::Table::try_from(&base.model).expect("serialisable");
    match doc.remove("model") {
        Some(toml::Value::Table(t)) => model.extend(t),
        Some(_) => return Err(CliError::Config("`model` must be a table".into())),
        None => {}
    }
    let model: ModelConfig = toml::Value::Table(model)
        .try_into()
        .map_err(|e| CliError::Config(format!("model: {e}")))?;
    let train: TrainConfig = match doc.remove("train") {
        Some(v) => v.try_into().map_err(|e| CliError::Config(format!("train: {e}")))?,
        None => base.train,
    };
    Ok(RunConfig { model, train })
}

/// Resolves `spec` as a preset name, else as a path to a TOML file.
pub fn load_config(spec: &str) -> Result<RunConfig, CliError> {
    if preset_registry().contains(spec) {
        return Ok(preset_registry().get(spec)?.config());
    }
    let path = Path::new(spec);
    if !path.exists() {
        return Err(CliError::Config(format!(
            "--config {spec:?} is neither a preset ({}) nor an existing file",
            preset_registry().names().join(", ")
        )));
    }
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{spec}: {e}")))?;
    parse_config(&text).map_err(|e| match e {
        CliError::Config(m) => CliError::Config(format!("{spec}: {m}")),
        other => other,
    })
}

/// Hyperparameter grid searched for the published model.
const GRID_INT: [(&str, &[usize]); 4] = [
    ("model.n_layers", &[1, 2, 3, 4, 5, 6, 7, 8, 9]),
    ("model.n_heads", &[1, 2, 3, 4, 5, 6, 7, 8, 9]),
    ("model.dim_per_head", &[16, 32, 64, 128, 256, 512]),
    ("model.context_length", &[32, 64, 128, 256, 512, 1024]),
];
const GRID_RATE: [f64; 4] = [0.0, 0.25, 0.5, 1.0];

/// Keys whose values lie outside the search grid.
pub fn off_grid_keys(cfg: &RunConfig) -> Vec<String> {
    let ints = [
        cfg.model.n_layers,
        cfg.model.n_heads,
        cfg.model.dim_per_head,
        cfg.model.context_length,
    ];
    let rates = [
        ("train.aug_prob", cfg.train.aug_prob),
        ("train.freq_mask_rate", cfg.train.freq_mask_rate),
        ("train.freq_mix_rate", cfg.train.freq_mix_rate),
        ("train.weight_decay", cfg.train.weight_decay),
        ("model.dropout", cfg.model.dropout),
    ];
    let mut out = Vec::new();
    for ((key, grid), v) in GRID_INT.iter().zip(ints) {
        if !grid.contains(&v) {
            out.push(format!("{key} = {v}"));
        }
    }
    for (key, v) in rates {
        if !GRID_RATE.contains(&v) {
            out.push(format!("{key} = {v}"));
        }
    }
    out
}

/// Validates the config and the grid constraint (unless `allow_off_grid`).
pub fn check_config(cfg: &RunConfig, allow_off_grid: bool) -> Result<(), CliError> {
    cfg.model.validate()?;
    cfg.train.validate()?;
    let off = off_grid_keys(cfg);
    if !off.is_empty() && !allow_off_grid {
        return Err(CliError::Config(format!(
            "outside the hyperparameter search grid: {} (pass --allow-off-grid to override)",
            off.join(", ")
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_resolve() {
        let t = load_config("table4-optimal").unwrap();
        assert!(off_grid_keys(&t).is_empty());
        let d = load_config("desk-small").unwrap();
        assert_eq!(off_grid_keys(&d), vec!["model.dim_per_head = 8".to_string()]);
        assert!(check_config(&d, false).is_err());
        check_config(&d, true).unwrap();
    }

    #[test]
    fn file_overrides_defaults() {
        let cfg = parse_config("[model]\nn_layers = 2\nlag_set = [1, 2, 3]\n[train]\nmax_epochs = 3\n").unwrap();
        assert_eq!(cfg.model.n_layers, 2);
        assert_eq!(cfg.model.n_heads, 9);
        assert_eq!(cfg.model.lag_set.indices(), &[1, 2, 3]);
        assert_eq!(cfg.train.max_epochs, 3);
        assert_eq!(cfg.train.batch_size, 256);
        assert_eq!(parse_config("").unwrap(), Table4Optimal.config());
    }

    #[test]
    fn unknown_keys_are_named() {
        let err = parse_config("[model]\nn_layer = 2\n").unwrap_err().to_string();
        assert!(err.contains("n_layer"), "{err}");
        let err = parse_config("[train]\nbatchsize = 2\n").unwrap_err().to_string();
        assert!(err.contains("batchsize"), "{err}");
        let err = parse_config("[optim]\nlr = 2\n").unwrap_err().to_string();
        assert!(err.contains("optim"), "{err}");
    }
}
