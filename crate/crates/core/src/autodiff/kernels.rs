// Raw array kernels shared by the forward and backward passes.

use crate::tensor::{numel, strides};

/// Result shape of numpy-style broadcasting, or `None` when incompatible.
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// How an operand of a broadcast op is addressed from output positions.
pub(crate) enum Addressing {
    Same,
    Scalar,
    /// Operand equals the trailing `n` elements of the output layout.
    Suffix(usize),
    Map(Vec<usize>),
}

impl Addressing {
    pub(crate) fn new(input: &[usize], out: &[usize]) -> Self {
        let n_in = numel(input);
        if input == out {
            return Addressing::Same;
        }
        if n_in == 1 {
            return Addressing::Scalar;
        }
        let trimmed: &[usize] = {
            let lead = input.iter().take_while(|&&d| d == 1).count();
            &input[lead..]
        };
        if trimmed.len() <= out.len() && out[out.len() - trimmed.len()..] == *trimmed {
            return Addressing::Suffix(n_in);
        }
        Addressing::Map(broadcast_map(input, out))
    }

    #[inline]
    pub(crate) fn index(&self, i: usize) -> usize {
        match self {
            Addressing::Same => i,
            Addressing::Scalar => 0,
            Addressing::Suffix(n) => i % n,
            Addressing::Map(m) => m[i],
        }
    }
}

fn broadcast_map(input: &[usize], out: &[usize]) -> Vec<usize> {
    let rank = out.len();
    let in_strides = strides(input);
    // Stride of each output axis within the input; zero on broadcast axes.
    let mut eff = vec![0; rank];
    for (ax, e) in eff.iter_mut().enumerate() {
        if ax + input.len() >= rank {
            let k = ax + input.len() - rank;
            if input[k] != 1 {
                *e = in_strides[k];
            }
        }
    }
    let total = numel(out);
    let mut map = Vec::with_capacity(total);
    let mut counter = vec![0; rank];
    let mut offset = 0;
    for _ in 0..total {
        map.push(offset);
        for ax in (0..rank).rev() {
            counter[ax] += 1;
            offset += eff[ax];
            if counter[ax] < out[ax] {
                break;
            }
            offset -= eff[ax] * counter[ax];
            counter[ax] = 0;
        }
    }
    map
}

/// Sums `grad` (laid out like `out`) back onto an operand's layout.
pub(crate) fn reduce_to(grad: &[f64], addr: &Addressing, n_in: usize) -> Vec<f64> {
    match addr {
        Addressing::Same => grad.to_vec(),
        Addressing::Scalar => vec![grad.iter().sum()],
        Addressing::Suffix(n) => {
            let mut g = vec![0.0; *n];
            for chunk in grad.chunks_exact(*n) {
                for (acc, v) in g.iter_mut().zip(chunk) {
                    *acc += v;
                }
            }
            g
        }
        Addressing::Map(_) => {
            let mut g = vec![0.0; n_in];
            for (i, v) in grad.iter().enumerate() {
                g[addr.index(i)] += v;
            }
            g
        }
    }
}

/// Elementwise `f(a, b)` over the broadcast output of `n` elements, with
/// contiguous loops for the common layouts.
pub(crate) fn broadcast_zip<F: Fn(f64, f64) -> f64>(
    a: &[f64],
    aa: &Addressing,
    b: &[f64],
    ab: &Addressing,
    n: usize,
    f: F,
) -> Vec<f64> {
    use Addressing::*;
    let mut out = Vec::with_capacity(n);
    match (aa, ab) {
        (Same, Same) => out.extend(a.iter().zip(b).map(|(&x, &y)| f(x, y))),
        (Same, Scalar) => out.extend(a.iter().map(|&x| f(x, b[0]))),
        (Scalar, Same) => out.extend(b.iter().map(|&y| f(a[0], y))),
        (Same, Suffix(m)) => {
            for chunk in a.chunks_exact(*m) {
                out.extend(chunk.iter().zip(b).map(|(&x, &y)| f(x, y)));
            }
        }
        (Suffix(m), Same) => {
            for chunk in b.chunks_exact(*m) {
                out.extend(a.iter().zip(chunk).map(|(&x, &y)| f(x, y)));
            }
        }
        _ => out.extend((0..n).map(|i| f(a[aa.index(i)], b[ab.index(i)]))),
    }
    out
}

/// True when every value is finite; branch-free so it vectorizes.
pub(crate) fn all_finite(data: &[f64]) -> bool {
    data.iter().fold(0.0, |acc, &v| acc + v * 0.0) == 0.0
}

/// `c[batch] = a[batch] · b[batch or shared]` with `a: [batch, m, k]`, `b: [k, n]`.
pub(crate) fn matmul(
    a: &[f64],
    b: &[f64],
    batch: usize,
    m: usize,
    k: usize,
    n: usize,
    b_shared: bool,
) -> Vec<f64> {
    let mut c = vec![0.0; batch * m * n];
    if b_shared {
        // One tall product against the shared right operand.
        matmul_into(a, b, &mut c, batch * m, k, n);
    } else {
        for t in 0..batch {
            matmul_into(
                &a[t * m * k..(t + 1) * m * k],
                &b[t * k * n..(t + 1) * k * n],
                &mut c[t * m * n..(t + 1) * m * n],
                m,
                k,
                n,
            );
        }
    }
    c
}

/// `c = a · b` for row-major `a: [m, k]`, `b: [k, n]`. Each output element
/// accumulates over `p = 0..k` in order, whatever the column blocking.
fn matmul_into(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    let mut j0 = 0;
    while j0 < n {
        let w = n - j0;
        if w >= 16 {
            column_block::<16>(a, b, c, m, k, n, j0);
            j0 += 16;
        } else if w >= 8 {
            column_block::<8>(a, b, c, m, k, n, j0);
            j0 += 8;
        } else if w >= 4 {
            column_block::<4>(a, b, c, m, k, n, j0);
            j0 += 4;
        } else {
            column_block::<1>(a, b, c, m, k, n, j0);
            j0 += 1;
        }
    }
}

#[inline(always)]
#[allow(clippy::too_many_arguments)]
fn column_block<const W: usize>(
    a: &[f64],
    b: &[f64],
    c: &mut [f64],
    m: usize,
    k: usize,
    n: usize,
    j0: usize,
) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let mut acc = [0.0; W];
        for (p, &av) in a_row.iter().enumerate() {
            let b_blk: &[f64; W] = b[p * n + j0..p * n + j0 + W].try_into().expect("block width");
            for j in 0..W {
                acc[j] += av * b_blk[j];
            }
        }
        c[i * n + j0..i * n + j0 + W].copy_from_slice(&acc);
    }
}

/// Gradients of [`matmul`] with respect to both operands.
#[allow(clippy::too_many_arguments)]
pub(crate) fn matmul_backward(
    grad: &[f64],
    a: &[f64],
    b: &[f64],
    batch: usize,
    m: usize,
    k: usize,
    n: usize,
    b_shared: bool,
) -> (Vec<f64>, Vec<f64>) {
    let mut ga = vec![0.0; a.len()];
    let mut gb = vec![0.0; b.len()];
    if b_shared {
        // ga = g · bᵀ, gb = aᵀ · g with the batch folded into the rows.
        let rows = batch * m;
        matmul_into(grad, &transpose2(b, k, n), &mut ga, rows, n, k);
        matmul_into(&transpose2(a, rows, k), grad, &mut gb, k, rows, n);
    } else {
        for t in 0..batch {
            let g_t = &grad[t * m * n..(t + 1) * m * n];
            let a_t = &a[t * m * k..(t + 1) * m * k];
            let b_t = &b[t * k * n..(t + 1) * k * n];
            matmul_into(g_t, &transpose2(b_t, k, n), &mut ga[t * m * k..(t + 1) * m * k], m, n, k);
            matmul_into(&transpose2(a_t, m, k), g_t, &mut gb[t * k * n..(t + 1) * k * n], k, m, n);
        }
    }
    (ga, gb)
}

/// Transpose of a row-major `[rows, cols]` matrix.
fn transpose2(x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for (i, row) in x.chunks_exact(cols).enumerate() {
        for (j, &v) in row.iter().enumerate() {
            out[j * rows + i] = v;
        }
    }
    out
}

/// Gathers `src` (shape `shape`) into the permuted layout `shape[perm[..]]`.
pub(crate) fn permute(src: &[f64], shape: &[usize], perm: &[usize]) -> Vec<f64> {
    let rank = shape.len();
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let eff: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let total = src.len();
    let mut out = Vec::with_capacity(total);
    if rank == 0 {
        return src.to_vec();
    }
    // Innermost output axis is walked in a tight loop.
    let inner = out_shape[rank - 1];
    let inner_stride = eff[rank - 1];
    let mut counter = vec![0; rank - 1];
    let mut offset = 0;
    let outer = total / inner;
    for _ in 0..outer {
        if inner_stride == 1 {
            out.extend_from_slice(&src[offset..offset + inner]);
        } else {
            let mut o = offset;
            for _ in 0..inner {
                out.push(src[o]);
                o += inner_stride;
            }
        }
        for ax in (0..rank - 1).rev() {
            counter[ax] += 1;
            offset += eff[ax];
            if counter[ax] < out_shape[ax] {
                break;
            }
            offset -= eff[ax] * counter[ax];
            counter[ax] = 0;
        }
    }
    out
}

pub(crate) fn inverse_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

/// Splits a shape around `axis` into (outer, axis extent, inner) element counts.
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub(crate) fn softmax_rows(x: &[f64], width: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for (src, dst) in x.chunks(width).zip(out.chunks_mut(width)) {
        let max = src.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (d, &s) in dst.iter_mut().zip(src) {
            *d = (s - max).exp();
            sum += *d;
        }
        dst.iter_mut().for_each(|d| *d /= sum);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcast_shapes() {
        assert_eq!(broadcast_shape(&[2, 3], &[3]), Some(vec![2, 3]));
        assert_eq!(broadcast_shape(&[4, 1, 3], &[2, 1]), Some(vec![4, 2, 3]));
        assert_eq!(broadcast_shape(&[2, 3], &[2]), None);
    }

    #[test]
    fn broadcast_map_matches_manual_indexing() {
        // [2,1,3] broadcast into [2,4,3]
        let map = broadcast_map(&[2, 1, 3], &[2, 4, 3]);
        for i in 0..2 {
            for j in 0..4 {
                for k in 0..3 {
                    assert_eq!(map[i * 12 + j * 3 + k], i * 3 + k);
                }
            }
        }
    }

    #[test]
    fn permute_transposes_matrix() {
        let x: Vec<f64> = (0..6).map(f64::from).collect();
        assert_eq!(permute(&x, &[2, 3], &[1, 0]), vec![0.0, 3.0, 1.0, 4.0, 2.0, 5.0]);
        let p = [2, 0, 1];
        let y = permute(&x, &[1, 2, 3], &p);
        let back = permute(&y, &[3, 1, 2], &inverse_permutation(&p));
        assert_eq!(back, x);
    }
}
