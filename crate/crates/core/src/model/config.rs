use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featurize::{token_dim, LagSet, NUM_DATETIME_FEATURES};

pub const DEFAULT_ROPE_BASE: f64 = 10_000.0;
pub const DEFAULT_FFN_MULTIPLIER: f64 = 8.0 / 3.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub dim_per_head: usize,
    pub context_length: usize,
    pub lag_set: LagSet,
    #[serde(default = "default_datetime_feats")]
    pub n_datetime_feats: usize,
    #[serde(default)]
    pub dropout: f64,
    #[serde(default = "default_ffn_multiplier")]
    pub ffn_multiplier: f64,
    #[serde(default = "default_scaler")]
    pub scaler: String,
    /// Feed the context location/scale summary to the model. When off the
    /// summary columns are zeroed and forecasts become exactly affine
    /// equivariant under the robust scaler.
    #[serde(default = "default_true")]
    pub summary_stats: bool,
    #[serde(default = "default_rope_base")]
    pub rope_base: f64,
}

fn default_datetime_feats() -> usize {
    NUM_DATETIME_FEATURES
}
fn default_ffn_multiplier() -> f64 {
    DEFAULT_FFN_MULTIPLIER
}
fn default_scaler() -> String {
    "robust".into()
}
fn default_true() -> bool {
    true
}
fn default_rope_base() -> f64 {
    DEFAULT_ROPE_BASE
}

impl ModelConfig {
    /// 8 layers, 9 heads of 16 dims, context 32, no dropout.
    pub fn table4_optimal() -> Self {
        Self {
            n_layers: 8,
            n_heads: 9,
            dim_per_head: 16,
            context_length: 32,
            lag_set: LagSet::default_for_corpus(),
            n_datetime_feats: NUM_DATETIME_FEATURES,
            dropout: 0.0,
            ffn_multiplier: DEFAULT_FFN_MULTIPLIER,
            scaler: default_scaler(),
            summary_stats: true,
            rope_base: DEFAULT_ROPE_BASE,
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.n_heads * self.dim_per_head
    }

    /// `ffn_multiplier · hidden`, rounded to a multiple of 8.
    pub fn ffn_dim(&self) -> usize {
        let raw = self.ffn_multiplier * self.hidden_dim() as f64 / 8.0;
        (raw.round() as usize).max(1) * 8
    }

    pub fn token_dim(&self) -> usize {
        token_dim(&self.lag_set)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("dim_per_head", self.dim_per_head),
            ("context_length", self.context_length),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.dim_per_head % 2 != 0 {
            return Err(Error::Config(format!(
                "dim_per_head must be even for rotary encoding, got {}",
                self.dim_per_head
            )));
        }
        if self.n_datetime_feats != NUM_DATETIME_FEATURES {
            return Err(Error::Config(format!(
                "n_datetime_feats must be {NUM_DATETIME_FEATURES}, got {}",
                self.n_datetime_feats
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} not in [0, 1)", self.dropout)));
        }
        if !(self.ffn_multiplier > 0.0 && self.ffn_multiplier.is_finite()) {
            return Err(Error::Config("ffn_multiplier must be positive".into()));
        }
        if !(self.rope_base > 1.0 && self.rope_base.is_finite()) {
            return Err(Error::Config("rope_base must exceed 1".into()));
        }
        crate::featurize::scaler_registry().get(&self.scaler)?;
        Ok(())
    }

    /// `Din·D + D + M(4D² + 3DF + 2D) + D + 3D + 3`.
    pub fn analytic_param_count(&self) -> usize {
        let (din, d, f, m) = (self.token_dim(), self.hidden_dim(), self.ffn_dim(), self.n_layers);
        din * d + d + m * (4 * d * d + 3 * d * f + 2 * d) + d + 3 * d + 3
    }
}
