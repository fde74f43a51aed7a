//! Dense row-major kernels used by the tape.
//!
//! Every output element is accumulated in a fixed order that does not depend
//! on the row's position or on how rows are split across threads. That makes
//! a point-wise layer exactly equivariant under row permutations and keeps
//! multi-threaded results bit-identical to single-threaded ones.

use crate::par;

const ROW_BLOCK: usize = 4;

fn rows_per_task(m: usize, work_per_row: usize) -> usize {
    // aim for tasks of roughly 2^16 multiply-adds
    let per = (1usize << 16) / work_per_row.max(1);
    per.clamp(ROW_BLOCK, m.max(ROW_BLOCK))
}

/// `c[m,n] = a[m,k] · b[k,n]`.
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    let mut out = vec![0.0; m * n];
    if m == 0 || n == 0 {
        return out;
    }
    let rows = rows_per_task(m, k * n);
    par::for_each_chunk_mut(&mut out, rows * n, |ci, chunk| {
        let row0 = ci * rows;
        matmul_rows(&a[row0 * k..], b, k, n, chunk);
    });
    out
}

fn matmul_rows(a: &[f64], b: &[f64], k: usize, n: usize, out: &mut [f64]) {
    let mut blocks = out.chunks_exact_mut(ROW_BLOCK * n);
    let mut r = 0;
    for block in &mut blocks {
        let (o0, rest) = block.split_at_mut(n);
        let (o1, rest) = rest.split_at_mut(n);
        let (o2, o3) = rest.split_at_mut(n);
        let a0 = &a[r * k..(r + 1) * k];
        let a1 = &a[(r + 1) * k..(r + 2) * k];
        let a2 = &a[(r + 2) * k..(r + 3) * k];
        let a3 = &a[(r + 3) * k..(r + 4) * k];
        for kk in 0..k {
            let brow = &b[kk * n..(kk + 1) * n];
            let (x0, x1, x2, x3) = (a0[kk], a1[kk], a2[kk], a3[kk]);
            for j in 0..n {
                let bv = brow[j];
                o0[j] += x0 * bv;
                o1[j] += x1 * bv;
                o2[j] += x2 * bv;
                o3[j] += x3 * bv;
            }
        }
        r += ROW_BLOCK;
    }
    for orow in blocks.into_remainder().chunks_exact_mut(n) {
        let arow = &a[r * k..(r + 1) * k];
        for (kk, &x) in arow.iter().enumerate() {
            let brow = &b[kk * n..(kk + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += x * bv;
            }
        }
        r += 1;
    }
}

/// `c[k,n] = a[m,k]ᵀ · g[m,n]`, summing over the `m` rows in order.
pub fn matmul_tn(a: &[f64], g: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(g.len(), m * n);
    let mut out = vec![0.0; k * n];
    if k == 0 || n == 0 {
        return out;
    }
    let rows = rows_per_task(k, m * n);
    par::for_each_chunk_mut(&mut out, rows * n, |ci, chunk| {
        let k0 = ci * rows;
        let count = chunk.len() / n;
        for i in 0..m {
            let grow = &g[i * n..(i + 1) * n];
            let arow = &a[i * k + k0..i * k + k0 + count];
            for (orow, &x) in chunk.chunks_exact_mut(n).zip(arow) {
                if x == 0.0 {
                    continue;
                }
                for (o, &gv) in orow.iter_mut().zip(grow) {
                    *o += x * gv;
                }
            }
        }
    });
    out
}

/// `c[m,k] = g[m,n] · b[k,n]ᵀ`.
pub fn matmul_nt(g: &[f64], b: &[f64], m: usize, n: usize, k: usize) -> Vec<f64> {
    let bt = transpose(b, k, n);
    matmul(g, &bt, m, n, k)
}

/// Transpose of a row-major `[rows, cols]` matrix.
pub fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
}
