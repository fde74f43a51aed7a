//! Slow, direct reference implementations used by the verification suite.

use crate::autodiff::Tensor;
use crate::decoder::RegionalKernel;

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Chamfer distance by two nested scans per direction.
pub fn chamfer(a: &[[f64; 3]], b: &[[f64; 3]]) -> f64 {
    let one_way = |p: &[[f64; 3]], q: &[[f64; 3]]| {
        p.iter()
            .map(|x| q.iter().map(|y| dist(x, y)).fold(f64::INFINITY, f64::min))
            .sum::<f64>()
            / p.len() as f64
    };
    0.5 * (one_way(a, b) + one_way(b, a))
}

/// Minimum mean matched distance over all `n!` bijections (Heap's algorithm).
pub fn earth_mover(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let n = a.len();
    assert_eq!(n, b.len());
    let cost = |perm: &[usize]| (0..n).map(|i| dist(&a[i], &b[perm[i]])).sum::<f64>();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = cost(&perm);
    let mut c = vec![0; n];
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            best = best.min(cost(&perm));
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    best / n as f64
}

/// Regional convolution written as the explicit windowed double sum over a
/// copy of each region padded with `N_p − 1` duplicates of its last row.
/// Stride 1 only.
pub fn regional_conv(x: &Tensor, n_regions: usize, k: &RegionalKernel) -> Vec<f64> {
    let (rows, c_in) = (x.shape()[0], x.shape()[1]);
    let (n_p, c_out) = (k.n_p(), k.c_out());
    let h = rows / n_regions;
    let w = k.weight.data();
    let mut out = Vec::with_capacity(rows * c_out);
    for r in 0..n_regions {
        let mut padded: Vec<&[f64]> = (0..h)
            .map(|i| &x.data()[(r * h + i) * c_in..(r * h + i + 1) * c_in])
            .collect();
        let last = padded[h - 1];
        padded.extend(std::iter::repeat(last).take(n_p - 1));
        for i in 0..h {
            for j in 0..c_out {
                let mut s = k.bias.data()[j];
                for l in 0..c_in {
                    for kk in 0..n_p {
                        s += padded[i + kk][l] * w[(kk * c_in + l) * c_out + j];
                    }
                }
                out.push(s);
            }
        }
    }
    out
}

/// Column-wise maxima of a row-major matrix.
pub fn column_max(data: &[f64], cols: usize) -> Vec<f64> {
    let mut out = vec![f64::NEG_INFINITY; cols];
    for row in data.chunks_exact(cols) {
        for (o, v) in out.iter_mut().zip(row) {
            *o = o.max(*v);
        }
    }
    out
}
