//! Plain incremental decoding with a key/value cache.

use laglm_tensor::rope_vector;

use super::transformer::{rmsnorm, slot, Model};
use crate::error::{Error, Result};

/// Rotated keys and values of every position seen so far, per layer.
#[derive(Debug, Clone)]
pub struct KvCache {
    keys: Vec<Vec<f64>>,
    values: Vec<Vec<f64>>,
    len: usize,
}

impl KvCache {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

/// `x · W` for row-major `W` of shape `[x.len(), out]`.
fn vecmat(x: &[f64], w: &[f64], out: usize) -> Vec<f64> {
    let mut y = vec![0.0; out];
    for (xi, row) in x.iter().zip(w.chunks_exact(out)) {
        for (yj, wij) in y.iter_mut().zip(row) {
            *yj += xi * wij;
        }
    }
    y
}

fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

impl Model {
    pub fn new_cache(&self) -> KvCache {
        let m = self.config().n_layers;
        KvCache {
            keys: vec![Vec::new(); m],
            values: vec![Vec::new(); m],
            len: 0,
        }
    }

    /// Feeds one token at position `cache.len()` and returns its raw head output.
    pub fn step(&self, cache: &mut KvCache, token: &[f64]) -> Result<[f64; 3]> {
        let cfg = self.config();
        if token.len() != cfg.token_dim() {
            return Err(Error::InvalidArgument(format!(
                "token has {} features, model expects {}",
                token.len(),
                cfg.token_dim()
            )));
        }
        let (h, dh, d, f) = (cfg.n_heads, cfg.dim_per_head, cfg.hidden_dim(), cfg.ffn_dim());
        let pos = cache.len;
        let scale = 1.0 / (dh as f64).sqrt();

        let mut x = vecmat(token, self.params()[slot::IN_W].data(), d);
        for (xi, bi) in x.iter_mut().zip(self.params()[slot::IN_B].data()) {
            *xi += bi;
        }
        for layer in 0..cfg.n_layers {
            let p = |k| self.layer_param(layer, k).data();
            let n = rmsnorm(&x, p(slot::ATTN_NORM));
            let q = vecmat(&n, p(slot::WQ), d);
            let k = vecmat(&n, p(slot::WK), d);
            let v = vecmat(&n, p(slot::WV), d);
            let keys = &mut cache.keys[layer];
            for head in 0..h {
                keys.extend(rope_vector(&k[head * dh..(head + 1) * dh], pos, cfg.rope_base));
            }
            cache.values[layer].extend_from_slice(&v);
            let (keys, values) = (&cache.keys[layer], &cache.values[layer]);
            let mut attn = vec![0.0; d];
            let mut scores = vec![0.0; pos + 1];
            for head in 0..h {
                let range = head * dh..(head + 1) * dh;
                let qh = rope_vector(&q[range.clone()], pos, cfg.rope_base);
                for (j, s) in scores.iter_mut().enumerate() {
                    let kj = &keys[j * d + head * dh..j * d + (head + 1) * dh];
                    *s = qh.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * scale;
                }
                let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for s in scores.iter_mut() {
                    *s = (*s - max).exp();
                    total += *s;
                }
                let out = &mut attn[range];
                for (j, s) in scores.iter().enumerate() {
                    let w = s / total;
                    let vj = &values[j * d + head * dh..j * d + (head + 1) * dh];
                    for (o, vv) in out.iter_mut().zip(vj) {
                        *o += w * vv;
                    }
                }
            }
            for (xi, oi) in x.iter_mut().zip(vecmat(&attn, p(slot::WO), d)) {
                *xi += oi;
            }

            let n = rmsnorm(&x, p(slot::FFN_NORM));
            let gate = vecmat(&n, p(slot::W_GATE), f);
            let up = vecmat(&n, p(slot::W_UP), f);
            let hidden: Vec<f64> = gate.iter().zip(&up).map(|(g, u)| silu(*g) * u).collect();
            for (xi, yi) in x.iter_mut().zip(vecmat(&hidden, p(slot::W_DOWN), d)) {
                *xi += yi;
            }
        }
        cache.len += 1;
        let n = rmsnorm(&x, self.tail_param(0).data());
        let out = vecmat(&n, self.tail_param(1).data(), 3);
        let b = self.tail_param(2).data();
        let raw = [out[0] + b[0], out[1] + b[1], out[2] + b[2]];
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(Error::Tensor(laglm_tensor::TensorError::NonFinite { op: "model_step" }));
        }
        Ok(raw)
    }

    /// Runs every row of a `T × Din` feature matrix through [`Model::step`].
    pub fn forward_cached(&self, features: &[f64], t: usize) -> Result<Vec<[f64; 3]>> {
        let din = self.config().token_dim();
        if features.len() != t * din {
            return Err(Error::InvalidArgument(format!(
                "feature matrix has {} values, expected {t}×{din}",
                features.len()
            )));
        }
        let mut cache = self.new_cache();
        features.chunks_exact(din).map(|row| self.step(&mut cache, row)).collect()
    }
}
