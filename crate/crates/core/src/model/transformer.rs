use laglm_tensor::{Graph, Result as TensorResult, Tensor, TensorError, Var};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::config::ModelConfig;
use crate::error::{Error, Result};
use crate::featurize::{Token, NUM_SUMMARY_STATS};

pub const RMS_EPS: f64 = 1e-5;
pub const INIT_STD: f64 = 0.02;
const MASK_VALUE: f64 = -1e9;
const PARAMS_PER_LAYER: usize = 9;

pub(crate) mod slot {
    pub const IN_W: usize = 0;
    pub const IN_B: usize = 1;
    pub const ATTN_NORM: usize = 0;
    pub const WQ: usize = 1;
    pub const WK: usize = 2;
    pub const WV: usize = 3;
    pub const WO: usize = 4;
    pub const FFN_NORM: usize = 5;
    pub const W_GATE: usize = 6;
    pub const W_UP: usize = 7;
    pub const W_DOWN: usize = 8;
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
}

/// Parameter names and shapes in storage order: input projection, then per
/// layer attention norm, q, k, v, o, FFN norm, gate, up, down, then the final
/// norm and the output head.
pub fn param_specs(config: &ModelConfig) -> Vec<ParamSpec> {
    let (din, d, f) = (config.token_dim(), config.hidden_dim(), config.ffn_dim());
    let spec = |name: String, shape: &[usize]| ParamSpec {
        name,
        shape: shape.to_vec(),
    };
    let mut out = vec![
        spec("input_proj.weight".into(), &[din, d]),
        spec("input_proj.bias".into(), &[d]),
    ];
    for i in 0..config.n_layers {
        let p = format!("layers.{i}");
        out.extend([
            spec(format!("{p}.attn_norm.gain"), &[d]),
            spec(format!("{p}.attn.wq"), &[d, d]),
            spec(format!("{p}.attn.wk"), &[d, d]),
            spec(format!("{p}.attn.wv"), &[d, d]),
            spec(format!("{p}.attn.wo"), &[d, d]),
            spec(format!("{p}.ffn_norm.gain"), &[d]),
            spec(format!("{p}.ffn.w_gate"), &[d, f]),
            spec(format!("{p}.ffn.w_up"), &[d, f]),
            spec(format!("{p}.ffn.w_down"), &[f, d]),
        ]);
    }
    out.extend([
        spec("final_norm.gain".into(), &[d]),
        spec("head.weight".into(), &[d, 3]),
        spec("head.bias".into(), &[3]),
    ]);
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: ModelConfig,
    params: Vec<Tensor>,
}

fn truncated_normal(rng: &mut ChaCha8Rng, std: f64) -> f64 {
    loop {
        let z: f64 = rng.sample(StandardNormal);
        if z.abs() <= 2.0 {
            return z * std;
        }
    }
}

impl Model {
    /// Truncated-normal weights (std 0.02, `wo` and `w_down` further scaled by
    /// `1/√(2M)`), unit norm gains and zero biases.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let residual_std = INIT_STD / (2.0 * config.n_layers as f64).sqrt();
        let params = param_specs(&config)
            .into_iter()
            .map(|s| {
                let n: usize = s.shape.iter().product();
                let data: Vec<f64> = if s.name.ends_with(".gain") {
                    vec![1.0; n]
                } else if s.name.ends_with(".bias") {
                    vec![0.0; n]
                } else {
                    let std = if s.name.ends_with(".wo") || s.name.ends_with(".w_down") {
                        residual_std
                    } else {
                        INIT_STD
                    };
                    (0..n).map(|_| truncated_normal(&mut rng, std)).collect()
                };
                Tensor::new(s.shape, data)
            })
            .collect::<TensorResult<Vec<_>>>()?;
        Ok(Self { config, params })
    }

    /// Builds a model from explicit parameters, checked against the config.
    pub fn from_params(config: ModelConfig, params: Vec<Tensor>) -> Result<Self> {
        config.validate()?;
        let specs = param_specs(&config);
        if specs.len() != params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameter tensors, got {}",
                specs.len(),
                params.len()
            )));
        }
        for (s, p) in specs.iter().zip(&params) {
            if s.shape != p.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {} has shape {:?}, config needs {:?}",
                    s.name,
                    p.shape(),
                    s.shape
                )));
            }
            if !p.is_finite() {
                return Err(Error::Checkpoint(format!("parameter {} is not finite", s.name)));
            }
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        param_specs(&self.config)
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub(crate) fn layer_param(&self, layer: usize, which: usize) -> &Tensor {
        &self.params[2 + PARAMS_PER_LAYER * layer + which]
    }

    pub(crate) fn tail_param(&self, k: usize) -> &Tensor {
        &self.params[2 + PARAMS_PER_LAYER * self.config.n_layers + k]
    }

    /// Flattened token features, with the summary columns zeroed when the
    /// config disables them.
    pub fn features(&self, tokens: &[Token]) -> Vec<f64> {
        let mut out = Vec::with_capacity(tokens.len() * self.config.token_dim());
        for t in tokens {
            self.write_token(t, &mut out);
        }
        out
    }

    pub fn write_token(&self, token: &Token, out: &mut Vec<f64>) {
        token.write_features(out);
        if !self.config.summary_stats {
            let n = out.len();
            out[n - NUM_SUMMARY_STATS..].fill(0.0);
        }
    }

    /// Adds every parameter to `g` as a trainable leaf.
    pub fn bind<'g>(&self, g: &'g Graph) -> Vec<Var<'g>> {
        self.params.iter().map(|p| g.param(p.clone())).collect()
    }

    /// Adds every parameter to `g` as a constant.
    pub fn bind_constants<'g>(&self, g: &'g Graph) -> Vec<Var<'g>> {
        self.params.iter().map(|p| g.constant(p.clone())).collect()
    }

    /// Raw head outputs `[B, T, 3]` for inputs `[B, T, Din]`. Dropout is applied
    /// to both residual branches only when `rng` is given and the rate is
    /// positive.
    pub fn forward<'g>(
        &self,
        g: &'g Graph,
        params: &[Var<'g>],
        inputs: Var<'g>,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> TensorResult<Var<'g>> {
        let cfg = &self.config;
        let shape = inputs.shape();
        if shape.len() != 3 || shape[2] != cfg.token_dim() {
            return Err(TensorError::ShapeMismatch {
                op: "model_forward",
                lhs: shape,
                rhs: vec![0, 0, cfg.token_dim()],
            });
        }
        let (b, t) = (shape[0], shape[1]);
        let (h, dh, d) = (cfg.n_heads, cfg.dim_per_head, cfg.hidden_dim());
        let mut mask = vec![0.0; t * t];
        for i in 0..t {
            for j in i + 1..t {
                mask[i * t + j] = MASK_VALUE;
            }
        }
        let mask = g.constant(Tensor::new([t, t], mask)?);
        let att_scale = 1.0 / (dh as f64).sqrt();

        let mut x = inputs
            .matmul(params[slot::IN_W])?
            .add(params[slot::IN_B])?;
        for layer in 0..cfg.n_layers {
            let p = &params[2 + PARAMS_PER_LAYER * layer..2 + PARAMS_PER_LAYER * (layer + 1)];
            let n = rmsnorm_var(x, p[slot::ATTN_NORM])?;
            let heads = |w: Var<'g>| -> TensorResult<Var<'g>> {
                n.matmul(w)?.reshape(&[b, t, h, dh])?.transpose(1, 2)
            };
            let q = heads(p[slot::WQ])?.rope(0, cfg.rope_base)?;
            let k = heads(p[slot::WK])?.rope(0, cfg.rope_base)?;
            let v = heads(p[slot::WV])?;
            let attn = q
                .matmul(k.transpose(2, 3)?)?
                .mul_scalar(att_scale)?
                .add(mask)?
                .softmax()?
                .matmul(v)?
                .transpose(1, 2)?
                .reshape(&[b, t, d])?
                .matmul(p[slot::WO])?;
            x = x.add(dropout(g, attn, cfg.dropout, rng.as_deref_mut())?)?;

            let n = rmsnorm_var(x, p[slot::FFN_NORM])?;
            let ffn = n
                .matmul(p[slot::W_GATE])?
                .silu()?
                .mul(n.matmul(p[slot::W_UP])?)?
                .matmul(p[slot::W_DOWN])?;
            x = x.add(dropout(g, ffn, cfg.dropout, rng.as_deref_mut())?)?;
        }
        let tail = &params[2 + PARAMS_PER_LAYER * cfg.n_layers..];
        rmsnorm_var(x, tail[0])?.matmul(tail[1])?.add(tail[2])
    }

    /// Deterministic full-sequence forward of one `T × Din` feature matrix.
    pub fn forward_sequence(&self, features: &[f64], t: usize) -> Result<Vec<[f64; 3]>> {
        let g = Graph::new();
        let params = self.bind_constants(&g);
        let inputs = g.constant(Tensor::new([1, t, self.config.token_dim()], features.to_vec())?);
        let out = self.forward(&g, &params, inputs, None)?.value();
        Ok(out.data().chunks(3).map(|c| [c[0], c[1], c[2]]).collect())
    }
}

fn rmsnorm_var<'g>(x: Var<'g>, gain: Var<'g>) -> TensorResult<Var<'g>> {
    let inv = x.square()?.mean_last()?.add_scalar(RMS_EPS)?.rsqrt()?;
    x.mul(inv)?.mul(gain)
}

fn dropout<'g>(
    g: &'g Graph,
    x: Var<'g>,
    rate: f64,
    rng: Option<&mut ChaCha8Rng>,
) -> TensorResult<Var<'g>> {
    match rng {
        Some(rng) if rate > 0.0 => {
            let shape = x.shape();
            let n: usize = shape.iter().product();
            let keep = 1.0 / (1.0 - rate);
            let mask: Vec<f64> = (0..n)
                .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
                .collect();
            x.mul(g.constant(Tensor::new(shape, mask)?))
        }
        _ => Ok(x),
    }
}

/// `x / sqrt(mean(x²) + ε) ⊙ gain`.
pub fn rmsnorm(x: &[f64], gain: &[f64]) -> Vec<f64> {
    let ms = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
    let inv = 1.0 / (ms + RMS_EPS).sqrt();
    x.iter().zip(gain).map(|(v, g)| v * inv * g).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::featurize::LagSet;

    pub(crate) fn tiny_config() -> ModelConfig {
        ModelConfig {
            n_layers: 2,
            n_heads: 2,
            dim_per_head: 4,
            context_length: 8,
            lag_set: LagSet::new(vec![1, 2, 3]).unwrap(),
            ..ModelConfig::table4_optimal()
        }
    }

    #[test]
    fn names_unique_and_count_matches() {
        let m = Model::init(tiny_config(), 1).unwrap();
        let specs = m.param_specs();
        let mut names: Vec<_> = specs.iter().map(|s| s.name.clone()).collect();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), specs.len());
        assert_eq!(m.num_params(), m.config().analytic_param_count());
    }

    #[test]
    fn init_is_seeded() {
        let a = Model::init(tiny_config(), 3).unwrap();
        assert_eq!(a, Model::init(tiny_config(), 3).unwrap());
        assert_ne!(a, Model::init(tiny_config(), 4).unwrap());
        let wq = a.layer_param(0, slot::WQ);
        assert!(wq.data().iter().all(|v| v.abs() <= 2.0 * INIT_STD));
    }

    #[test]
    fn output_shape() {
        let m = Model::init(tiny_config(), 1).unwrap();
        let din = m.config().token_dim();
        let out = m.forward_sequence(&vec![0.1; 5 * din], 5).unwrap();
        assert_eq!(out.len(), 5);
        assert!(m.forward_sequence(&vec![0.1; 5 * din + 1], 5).is_err());
    }

    #[test]
    fn rmsnorm_unit_rms() {
        let x = [1.0, -1.0, 1.0, -1.0];
        let y = rmsnorm(&x, &[1.0; 4]);
        for (a, b) in x.iter().zip(&y) {
            assert!((a - b).abs() < 1e-5);
        }
    }
}
