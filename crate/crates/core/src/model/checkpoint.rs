//! Binary checkpoint: `LGLM`, u16 version, u32 header length, JSON header,
//! little-endian f32 parameters in storage order, CRC32 of everything before it.

use std::path::Path;

use laglm_tensor::Tensor;
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::transformer::{param_specs, Model, ParamSpec};
use crate::error::{Error, Result};
use crate::featurize::LagSet;

pub const MAGIC: &[u8; 4] = b"LGLM";
pub const FORMAT_VERSION: u16 = 1;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    /// `pretrain`, `finetune` or `init`.
    pub mode: String,
    pub seed: u64,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val_loss: Option<f64>,
    /// Datasets the model was trained on.
    pub datasets: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    lag_set: LagSet,
    scaler: String,
    n_datetime_feats: usize,
    training: TrainingMeta,
    params: Vec<(String, Vec<usize>)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub training: TrainingMeta,
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let cfg = self.model.config();
        let header = Header {
            config: cfg.clone(),
            lag_set: cfg.lag_set.clone(),
            scaler: cfg.scaler.clone(),
            n_datetime_feats: cfg.n_datetime_feats,
            training: self.training.clone(),
            params: param_specs(cfg).into_iter().map(|s| (s.name, s.shape)).collect(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| corrupt(e.to_string()))?;
        let mut out = Vec::with_capacity(14 + json.len() + 4 * self.model.num_params());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for p in self.model.params() {
            for &v in p.data() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 14 || &bytes[..4] != MAGIC {
            return Err(corrupt("not a checkpoint (bad magic)"));
        }
        let (body, trailer) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(trailer.try_into().expect("4 bytes"));
        if crc32fast::hash(body) != stored {
            return Err(corrupt("CRC mismatch"));
        }
        let version = u16::from_le_bytes([body[4], body[5]]);
        if version != FORMAT_VERSION {
            return Err(corrupt(format!(
                "format version {version} unsupported (expected {FORMAT_VERSION})"
            )));
        }
        let hlen = u32::from_le_bytes(body[6..10].try_into().expect("4 bytes")) as usize;
        let json = body.get(10..10 + hlen).ok_or_else(|| corrupt("truncated header"))?;
        let header: Header =
            serde_json::from_slice(json).map_err(|e| corrupt(format!("bad header: {e}")))?;
        let cfg = header.config;
        if header.lag_set != cfg.lag_set
            || header.scaler != cfg.scaler
            || header.n_datetime_feats != cfg.n_datetime_feats
        {
            return Err(corrupt("header fields disagree with the model config"));
        }
        let specs: Vec<ParamSpec> = param_specs(&cfg);
        let listed: Vec<(String, Vec<usize>)> =
            specs.iter().map(|s| (s.name.clone(), s.shape.clone())).collect();
        if listed != header.params {
            return Err(corrupt("parameter list does not match the model config"));
        }
        let mut floats = body[10 + hlen..].chunks_exact(4);
        let total: usize = specs.iter().map(|s| s.shape.iter().product::<usize>()).sum();
        if floats.len() != total || !floats.remainder().is_empty() {
            return Err(corrupt(format!(
                "expected {total} parameters, found {} bytes",
                body.len() - 10 - hlen
            )));
        }
        let params = specs
            .into_iter()
            .map(|s| {
                let n: usize = s.shape.iter().product();
                let data: Vec<f64> = floats
                    .by_ref()
                    .take(n)
                    .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
                    .collect();
                Tensor::new(s.shape, data).map_err(Error::from)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            model: Model::from_params(cfg, params)?,
            training: header.training,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Loads and rejects a checkpoint whose model config differs from `expected`.
    pub fn load_expecting(path: &Path, expected: &ModelConfig) -> Result<Self> {
        let ck = Self::load(path)?;
        if ck.model.config() != expected {
            return Err(corrupt(format!(
                "checkpoint config differs from the requested one: {:?} vs {:?}",
                ck.model.config(),
                expected
            )));
        }
        Ok(ck)
    }

    /// Parameters rounded to the stored precision.
    pub fn round_trip_model(model: &Model) -> Result<Model> {
        let params = model
            .params()
            .iter()
            .map(|p| p.map(|v| v as f32 as f64))
            .collect();
        Model::from_params(model.config().clone(), params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Checkpoint {
        let cfg = ModelConfig {
            n_layers: 1,
            n_heads: 2,
            dim_per_head: 2,
            context_length: 4,
            lag_set: LagSet::new(vec![1, 2]).unwrap(),
            ..ModelConfig::table4_optimal()
        };
        Checkpoint {
            model: Model::init(cfg, 5).unwrap(),
            training: TrainingMeta {
                mode: "init".into(),
                ..Default::default()
            },
        }
    }

    #[test]
    fn round_trip() {
        let ck = small();
        let bytes = ck.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.model, Checkpoint::round_trip_model(&ck.model).unwrap());
        assert_eq!(back.training, ck.training);
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn rejects_corruption_and_version() {
        let mut bytes = small().to_bytes().unwrap();
        let n = bytes.len();
        bytes[n - 10] ^= 1;
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::Checkpoint(_))));

        let mut bytes = small().to_bytes().unwrap();
        bytes[4] = 9;
        let body = bytes.len() - 4;
        let crc = crc32fast::hash(&bytes[..body]);
        bytes[body..].copy_from_slice(&crc.to_le_bytes());
        let err = Checkpoint::from_bytes(&bytes).unwrap_err().to_string();
        assert!(err.contains("version"), "{err}");
    }

    #[test]
    fn rejects_config_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.lglm");
        let ck = small();
        ck.save(&path).unwrap();
        let mut other = ck.model.config().clone();
        other.n_heads = 1;
        other.dim_per_head = 4;
        assert!(Checkpoint::load_expecting(&path, &other).is_err());
        assert!(Checkpoint::load_expecting(&path, ck.model.config()).is_ok());
    }
}
