//! Shape-level numeric kernels shared by forward and backward passes.

use crate::error::{Result, TensorError};
use crate::tensor::numel;

/// How an operand is indexed from a flat position of a broadcast result.
pub(crate) enum Broadcast {
    Same,
    /// Operand is a trailing-suffix of the output shape and repeats.
    Cycle(usize),
    /// Operand is the output with trailing axes collapsed to 1; each element
    /// repeats this many times.
    Repeat(usize),
    Map(Vec<usize>),
}

impl Broadcast {
    pub(crate) fn new(out: &[usize], inp: &[usize]) -> Self {
        if out == inp {
            return Broadcast::Same;
        }
        let off = out.len() - inp.len();
        if inp.iter().zip(&out[off..]).all(|(a, b)| a == b) {
            return Broadcast::Cycle(numel(inp));
        }
        if let Some(j) = (0..=inp.len()).find(|&j| inp[j..].iter().all(|&d| d == 1)) {
            if inp[..j] == out[off..off + j] && off == 0 && j < out.len() {
                return Broadcast::Repeat(numel(&out[j..]));
            }
        }
        let nd = out.len();
        let mut strides = vec![0usize; nd];
        let mut s = 1;
        for d in (0..inp.len()).rev() {
            if inp[d] != 1 {
                strides[d + off] = s;
            }
            s *= inp[d];
        }
        Broadcast::Map(strided_offsets(out, &strides))
    }

    #[cfg(test)]
    pub(crate) fn index(&self, i: usize) -> usize {
        match self {
            Broadcast::Same => i,
            Broadcast::Cycle(n) => i % n,
            Broadcast::Repeat(k) => i / k,
            Broadcast::Map(m) => m[i],
        }
    }

    pub(crate) fn walker(&self) -> Walker<'_> {
        match self {
            Broadcast::Same => Walker::Same,
            Broadcast::Cycle(m) => Walker::Cycle { m: *m, j: 0 },
            Broadcast::Repeat(k) => Walker::Repeat { k: *k, c: 0, j: 0 },
            Broadcast::Map(v) => Walker::Map(v),
        }
    }
}

/// Sequential index generator for [`Broadcast`] without per-element division.
pub(crate) enum Walker<'a> {
    Same,
    Cycle { m: usize, j: usize },
    Repeat { k: usize, c: usize, j: usize },
    Map(&'a [usize]),
}

impl Walker<'_> {
    /// Operand index for output position `i`; must be called with `i = 0, 1, 2, …`.
    #[inline(always)]
    pub(crate) fn next(&mut self, i: usize) -> usize {
        match self {
            Walker::Same => i,
            Walker::Cycle { m, j } => {
                let r = *j;
                *j += 1;
                if *j == *m {
                    *j = 0;
                }
                r
            }
            Walker::Repeat { k, c, j } => {
                let r = *j;
                *c += 1;
                if *c == *k {
                    *c = 0;
                    *j += 1;
                }
                r
            }
            Walker::Map(v) => v[i],
        }
    }
}

/// Calls `f(i, ia, ib)` for every output position of a broadcast pair.
#[inline(always)]
pub(crate) fn for_each_pair(n: usize, ba: &Broadcast, bb: &Broadcast, mut f: impl FnMut(usize, usize, usize)) {
    match (ba, bb) {
        (Broadcast::Same, Broadcast::Same) => (0..n).for_each(|i| f(i, i, i)),
        _ => {
            let (mut wa, mut wb) = (ba.walker(), bb.walker());
            for i in 0..n {
                let ia = wa.next(i);
                let ib = wb.next(i);
                f(i, ia, ib);
            }
        }
    }
}

/// Numpy-style broadcast of two shapes, aligned at the trailing axis.
pub(crate) fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let nd = a.len().max(b.len());
    let mut out = vec![0; nd];
    for i in 0..nd {
        let da = if i + a.len() >= nd { a[i + a.len() - nd] } else { 1 };
        let db = if i + b.len() >= nd { b[i + b.len() - nd] } else { 1 };
        out[i] = if da == db || db == 1 {
            da
        } else if da == 1 {
            db
        } else {
            return Err(TensorError::ShapeMismatch {
                op,
                lhs: a.to_vec(),
                rhs: b.to_vec(),
            });
        };
    }
    Ok(out)
}

/// Flat input offset for every flat output index, given per-axis input strides.
fn strided_offsets(out: &[usize], strides: &[usize]) -> Vec<usize> {
    let total = numel(out);
    let nd = out.len();
    let mut offsets = Vec::with_capacity(total);
    let mut idx = vec![0usize; nd];
    let mut cur = 0usize;
    for _ in 0..total {
        offsets.push(cur);
        for d in (0..nd).rev() {
            idx[d] += 1;
            cur += strides[d];
            if idx[d] < out[d] {
                break;
            }
            cur -= strides[d] * out[d];
            idx[d] = 0;
        }
    }
    offsets
}

/// Result shape and batch layout of a (possibly batched) matrix product.
pub(crate) struct MatMulDims {
    pub batch: usize,
    pub m: usize,
    pub k: usize,
    pub n: usize,
    /// Right operand is a single matrix shared by every batch entry.
    pub shared_rhs: bool,
    pub out_shape: Vec<usize>,
}

pub(crate) fn matmul_dims(a: &[usize], b: &[usize]) -> Result<MatMulDims> {
    let mismatch = || TensorError::ShapeMismatch {
        op: "matmul",
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    };
    if a.len() < 2 || b.len() < 2 {
        return Err(mismatch());
    }
    let (m, k) = (a[a.len() - 2], a[a.len() - 1]);
    let (k2, n) = (b[b.len() - 2], b[b.len() - 1]);
    if k != k2 {
        return Err(mismatch());
    }
    let batch_a = &a[..a.len() - 2];
    let shared_rhs = b.len() == 2;
    if !shared_rhs && batch_a != &b[..b.len() - 2] {
        return Err(mismatch());
    }
    let mut out_shape = batch_a.to_vec();
    out_shape.extend([m, n]);
    Ok(MatMulDims {
        batch: numel(batch_a),
        m,
        k,
        n,
        shared_rhs,
        out_shape,
    })
}

pub(crate) fn matmul(a: &[f64], b: &[f64], d: &MatMulDims) -> Vec<f64> {
    let (m, k, n) = (d.m, d.k, d.n);
    let mut out = vec![0.0; d.batch * m * n];
    for bi in 0..d.batch {
        let a = &a[bi * m * k..(bi + 1) * m * k];
        let b = if d.shared_rhs {
            b
        } else {
            &b[bi * k * n..(bi + 1) * k * n]
        };
        gemm_acc(a, b, &mut out[bi * m * n..(bi + 1) * m * n], m, k, n);
    }
    out
}

/// `C += A·B` for row-major `A: m×k`, `B: k×n`. Rows of `A` are processed four
/// at a time so each row of `B` is loaded once per block; every element of `C`
/// still accumulates over `p` in increasing order.
fn gemm_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    let mut i = 0;
    while i + 4 <= m {
        let (c0, rest) = c[i * n..(i + 4) * n].split_at_mut(n);
        let (c1, rest) = rest.split_at_mut(n);
        let (c2, c3) = rest.split_at_mut(n);
        for p in 0..k {
            let (a0, a1, a2, a3) = (a[i * k + p], a[(i + 1) * k + p], a[(i + 2) * k + p], a[(i + 3) * k + p]);
            if a0 == 0.0 && a1 == 0.0 && a2 == 0.0 && a3 == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for j in 0..n {
                let bv = brow[j];
                c0[j] += a0 * bv;
                c1[j] += a1 * bv;
                c2[j] += a2 * bv;
                c3[j] += a3 * bv;
            }
        }
        i += 4;
    }
    for i in i..m {
        let row = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            for (cv, &bv) in row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *cv += av * bv;
            }
        }
    }
}

fn dot(x: &[f64], y: &[f64]) -> f64 {
    let mut lanes = [0.0f64; 4];
    let (xc, yc) = (x.chunks_exact(4), y.chunks_exact(4));
    let tail: f64 = xc.remainder().iter().zip(yc.remainder()).map(|(a, b)| a * b).sum();
    for (a, b) in xc.zip(yc) {
        for l in 0..4 {
            lanes[l] += a[l] * b[l];
        }
    }
    (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]) + tail
}

/// Gradients of `C = A·B` given `dC`; `dB` is summed over the batch when shared.
pub(crate) fn matmul_backward(
    a: &[f64],
    b: &[f64],
    grad: &[f64],
    d: &MatMulDims,
    want_a: bool,
    want_b: bool,
) -> (Option<Vec<f64>>, Option<Vec<f64>>) {
    let (m, k, n) = (d.m, d.k, d.n);
    let mut ga = want_a.then(|| vec![0.0; d.batch * m * k]);
    let b_len = if d.shared_rhs { k * n } else { d.batch * k * n };
    let mut gb = want_b.then(|| vec![0.0; b_len]);
    for bi in 0..d.batch {
        let a_blk = &a[bi * m * k..(bi + 1) * m * k];
        let b_off = if d.shared_rhs { 0 } else { bi * k * n };
        let b_blk = &b[b_off..b_off + k * n];
        let g_blk = &grad[bi * m * n..(bi + 1) * m * n];
        if let Some(ga) = ga.as_mut() {
            let ga = &mut ga[bi * m * k..(bi + 1) * m * k];
            for i in 0..m {
                let grow = &g_blk[i * n..(i + 1) * n];
                for p in 0..k {
                    let brow = &b_blk[p * n..(p + 1) * n];
                    ga[i * k + p] += dot(grow, brow);
                }
            }
        }
        if let Some(gb) = gb.as_mut() {
            let gb = &mut gb[b_off..b_off + k * n];
            for i in 0..m {
                let grow = &g_blk[i * n..(i + 1) * n];
                for p in 0..k {
                    let av = a_blk[i * k + p];
                    if av == 0.0 {
                        continue;
                    }
                    for (gv, &x) in gb[p * n..(p + 1) * n].iter_mut().zip(grow) {
                        *gv += av * x;
                    }
                }
            }
        }
    }
    (ga, gb)
}

/// Copies `data` with axes `i` and `j` exchanged.
pub(crate) fn swap_axes(data: &[f64], shape: &[usize], i: usize, j: usize) -> (Vec<usize>, Vec<f64>) {
    let nd = shape.len();
    let mut in_strides = vec![1usize; nd];
    for d in (0..nd.saturating_sub(1)).rev() {
        in_strides[d] = in_strides[d + 1] * shape[d + 1];
    }
    let mut out_shape = shape.to_vec();
    out_shape.swap(i, j);
    let mut strides = in_strides;
    strides.swap(i, j);
    let offsets = strided_offsets(&out_shape, &strides);
    let out = offsets.into_iter().map(|o| data[o]).collect();
    (out_shape, out)
}

/// `(outer, axis extent, inner)` split of a shape around `axis`.
pub(crate) fn split_at_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    (
        numel(&shape[..axis]),
        shape[axis],
        numel(&shape[axis + 1..]),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcast_shapes() {
        assert_eq!(broadcast_shape("add", &[4, 3], &[3]).unwrap(), vec![4, 3]);
        assert_eq!(broadcast_shape("add", &[4, 1], &[4, 3]).unwrap(), vec![4, 3]);
        assert_eq!(broadcast_shape("add", &[2, 4, 3], &[4, 1]).unwrap(), vec![2, 4, 3]);
        let err = broadcast_shape("mul", &[4, 3], &[2]).unwrap_err();
        assert!(err.to_string().contains("mul"));
        assert!(err.to_string().contains("[4, 3]"));
    }

    #[test]
    fn broadcast_map_inner_axis() {
        let b = Broadcast::new(&[2, 3], &[2, 1]);
        let idx: Vec<usize> = (0..6).map(|i| b.index(i)).collect();
        let mut w = b.walker();
        assert_eq!((0..6).map(|i| w.next(i)).collect::<Vec<_>>(), idx);
        assert_eq!(idx, vec![0, 0, 0, 1, 1, 1]);
    }

    #[test]
    fn swap_axes_matches_manual_transpose() {
        let data: Vec<f64> = (0..6).map(f64::from).collect();
        let (shape, out) = swap_axes(&data, &[2, 3], 0, 1);
        assert_eq!(shape, vec![3, 2]);
        assert_eq!(out, vec![0.0, 3.0, 1.0, 4.0, 2.0, 5.0]);
    }

    #[test]
    fn matmul_small() {
        let d = matmul_dims(&[2, 2], &[2, 1]).unwrap();
        let out = matmul(&[1.0, 2.0, 3.0, 4.0], &[1.0, 1.0], &d);
        assert_eq!(out, vec![3.0, 7.0]);
        assert!(matmul_dims(&[2, 3], &[2, 3]).is_err());
    }
}
