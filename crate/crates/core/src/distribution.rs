//! Student-t output head.

use std::f64::consts::PI;

use laglm_tensor::{special, Graph, Result as TensorResult, Tensor, Var};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};

/// Lower bound added to the scale after the softplus.
pub const SCALE_FLOOR: f64 = 1e-6;
/// Degrees of freedom are kept above this so the variance stays finite.
pub const DF_FLOOR: f64 = 2.0;
/// Keeps `ν` strictly above [`DF_FLOOR`] once the softplus underflows.
pub const DF_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StudentTParams {
    pub df: f64,
    pub loc: f64,
    pub scale: f64,
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Maps raw head outputs to valid parameters:
/// `ν = 2 + softplus(r₀) + 1e-6`, `μ = r₁`, `σ = softplus(r₂) + 1e-6`.
pub fn constrain(raw: [f64; 3]) -> StudentTParams {
    StudentTParams {
        df: DF_FLOOR + DF_EPS + softplus(raw[0]),
        loc: raw[1],
        scale: softplus(raw[2]) + SCALE_FLOOR,
    }
}

impl StudentTParams {
    pub fn nll(&self, y: f64) -> f64 {
        let (nu, z) = (self.df, (y - self.loc) / self.scale);
        -special::lgamma(0.5 * (nu + 1.0))
            + special::lgamma(0.5 * nu)
            + 0.5 * (nu * PI).ln()
            + self.scale.ln()
            + 0.5 * (nu + 1.0) * (z * z / nu).ln_1p()
    }

    /// `μ + σ·T` with `T = N / sqrt(χ²_ν / ν)`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let n: f64 = rng.sample(StandardNormal);
        let chi2 = ChiSquared::new(self.df).expect("df > 2").sample(rng);
        self.loc + self.scale * n / (chi2 / self.df).sqrt()
    }

    pub fn variance(&self) -> f64 {
        self.scale * self.scale * self.df / (self.df - 2.0)
    }
}

/// Per-position NLL of `targets` under the head outputs `raw` (`[T, 3]`),
/// weighted and summed: `Σ_t w_t · NLL_t`.
pub fn weighted_nll<'g>(
    g: &'g Graph,
    raw: Var<'g>,
    targets: &[f64],
    weights: &[f64],
) -> TensorResult<Var<'g>> {
    let t = targets.len();
    let df = raw.slice(1, 0, 1)?.softplus()?.add_scalar(DF_FLOOR + DF_EPS)?;
    let loc = raw.slice(1, 1, 1)?;
    let scale = raw.slice(1, 2, 1)?.softplus()?.add_scalar(SCALE_FLOOR)?;
    let y = g.constant(Tensor::new([t, 1], targets.to_vec())?);
    let w = g.constant(Tensor::new([t, 1], weights.to_vec())?);
    let z = y.sub(loc)?.div(scale)?;
    let log_kernel = z.square()?.div(df)?.add_scalar(1.0)?.log()?;
    let half_df_plus = df.add_scalar(1.0)?.mul_scalar(0.5)?;
    let nll = half_df_plus
        .lgamma()?
        .neg()?
        .add(df.mul_scalar(0.5)?.lgamma()?)?
        .add(df.mul_scalar(PI)?.log()?.mul_scalar(0.5)?)?
        .add(scale.log()?)?
        .add(half_df_plus.mul(log_kernel)?)?;
    nll.mul(w)?.sum()
}
