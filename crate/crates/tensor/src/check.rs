//! Central finite-difference gradient checks.

use crate::{Graph, Result, Tensor, Var};

/// Step for central differences.
pub const FD_STEP: f64 = 1e-6;

/// Denominator floor: below it the error is effectively absolute.
pub const REL_FLOOR: f64 = 1e-3;

/// `|a − f| / max(|a|, |f|, REL_FLOOR)`.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Fixed pseudo-random weights in [−1, 1) (64-bit LCG), so the checked
/// scalar depends on every output element.
fn weights(n: usize) -> Vec<f64> {
    let mut s: u64 = 0x9e37_79b9_7f4a_7c15;
    (0..n)
        .map(|_| {
            s = s.wrapping_mul(6_364_136_223_846_793_005).wrapping_add(1_442_695_040_888_963_407);
            (s >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        })
        .collect()
}

fn reduce<'g>(g: &'g Graph, y: Var<'g>) -> Result<Var<'g>> {
    let shape = y.shape();
    let w = g.constant(Tensor::new(shape.clone(), weights(shape.iter().product()))?);
    y.mul(w)?.sum()
}

/// Worst [`rel_err`] between reverse-mode gradients of `Σ w ⊙ f(inputs)` and
/// central differences, over every coordinate of every input.
pub fn gradcheck<F>(inputs: &[Tensor], f: F) -> Result<f64>
where
    F: for<'g> Fn(&'g Graph, &[Var<'g>]) -> Result<Var<'g>>,
{
    let eval = |vals: &[Tensor]| -> Result<f64> {
        let g = Graph::new();
        let vars: Vec<Var> = vals.iter().map(|t| g.constant(t.clone())).collect();
        let y = f(&g, &vars)?;
        Ok(reduce(&g, y)?.value().item())
    };
    let g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let y = f(&g, &vars)?;
    let grads = g.backward(reduce(&g, y)?)?;
    let mut worst: f64 = 0.0;
    for (k, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var).expect("every input is a parameter");
        for i in 0..inputs[k].len() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= FD_STEP;
            let fd = (eval(&plus)? - eval(&minus)?) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(analytic.data()[i], fd));
        }
    }
    Ok(worst)
}
