//! Point-wise MLP encoder and the soft-pool feature operator.
//!
//! The MLP maps each point to an `N_f`-way softmax activation, giving the
//! feature matrix `F` (one row per point). Sorting `F` once per feature
//! dimension yields `N_f` row-permuted copies; the first `N_r` rows of each
//! copy, stacked region by region, form the soft-pool feature `F*`.

use std::cmp::Ordering;

use rand::Rng;

use crate::autodiff::{Tape, Tensor, Var};
use crate::cloud::{lex_cmp, PointCloud};
use crate::error::{Error, Result};

/// Negative slope of every Leaky ReLU in the network.
pub const LEAKY_SLOPE: f64 = 0.2;

/// One affine layer, `y = x · weight + bias` with `weight: [in, out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Dense {
    /// Uniform fan-in scaled initialisation for a Leaky ReLU network.
    pub fn init<R: Rng>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let gain = 2.0 / (1.0 + LEAKY_SLOPE * LEAKY_SLOPE);
        let bound = (3.0 * gain / fan_in as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| rng.gen_range(-bound..bound))
            .collect();
        Dense {
            weight: Tensor::from_parts(vec![fan_in, fan_out], data),
            bias: Tensor::zeros(vec![fan_out]),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn fan_out(&self) -> usize {
        self.weight.shape()[1]
    }
}

/// Weights of the point-wise MLP (`W_point`).
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub layers: Vec<Dense>,
}

impl EncoderParams {
    /// Builds `3 → hidden[0] → … → n_f`.
    pub fn init<R: Rng>(hidden: &[usize], n_f: usize, rng: &mut R) -> Result<Self> {
        if n_f == 0 || hidden.iter().any(|&h| h == 0) {
            return Err(Error::input("layer widths must be positive"));
        }
        let mut widths = vec![3];
        widths.extend_from_slice(hidden);
        widths.push(n_f);
        Ok(EncoderParams {
            layers: widths
                .windows(2)
                .map(|w| Dense::init(w[0], w[1], rng))
                .collect(),
        })
    }

    pub fn n_f(&self) -> usize {
        self.layers.last().map_or(0, Dense::fan_out)
    }

    pub fn hidden(&self) -> Vec<usize> {
        self.layers[..self.layers.len() - 1]
            .iter()
            .map(Dense::fan_out)
            .collect()
    }

    /// Zeroes the output layer, so every point maps to the uniform vector.
    pub fn zero_output_layer(&mut self) {
        if let Some(last) = self.layers.last_mut() {
            last.weight.data_mut().fill(0.0);
            last.bias.data_mut().fill(0.0);
        }
    }
}

/// Records the MLP on `tape`. `layers` holds `(weight, bias)` handles.
pub fn encode_on_tape(
    tape: &mut Tape,
    points: Var,
    layers: &[(Var, Var)],
    softmax: bool,
) -> Result<Var> {
    let mut x = points;
    for (i, &(w, b)) in layers.iter().enumerate() {
        let z = tape.matmul(x, w)?;
        x = tape.add_bias(z, b)?;
        if i + 1 < layers.len() {
            x = tape.leaky_relu(x, LEAKY_SLOPE)?;
        }
    }
    if softmax {
        x = tape.softmax(x)?;
    }
    Ok(x)
}

/// `N_in × N_f` matrix of per-point activations.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    n_f: usize,
    data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(n_f: usize, data: Vec<f64>) -> Result<Self> {
        if n_f == 0 || data.is_empty() || data.len() % n_f != 0 {
            return Err(Error::shape(format!(
                "{} values do not form rows of {n_f}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Numeric("feature entries must be finite and non-negative".into()));
        }
        Ok(FeatureMatrix { n_f, data })
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let (_, n_f) = t.dims2()?;
        Self::new(n_f, t.data().to_vec())
    }

    pub fn n_in(&self) -> usize {
        self.data.len() / self.n_f
    }

    pub fn n_f(&self) -> usize {
        self.n_f
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n_f..(i + 1) * self.n_f]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_parts(vec![self.n_in(), self.n_f], self.data.clone())
    }

    /// Largest deviation of a row sum from 1.
    pub fn row_sum_error(&self) -> f64 {
        self.data
            .chunks_exact(self.n_f)
            .map(|r| (r.iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

/// Runs the encoder on a point cloud.
pub fn encode(p: &PointCloud, params: &EncoderParams) -> Result<FeatureMatrix> {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::from(p))?;
    let layers = params
        .layers
        .iter()
        .map(|l| Ok((tape.constant(l.weight.clone())?, tape.constant(l.bias.clone())?)))
        .collect::<Result<Vec<_>>>()?;
    let f = encode_on_tape(&mut tape, x, &layers, true)?;
    FeatureMatrix::from_tensor(tape.value(f))
}

/// The `N_f` sorted copies `F′_k` of a feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SortedFeatureTensor {
    n_f: usize,
    n_in: usize,
    perms: Vec<Vec<usize>>,
    data: Vec<f64>,
}

impl SortedFeatureTensor {
    pub fn n_f(&self) -> usize {
        self.n_f
    }

    pub fn n_in(&self) -> usize {
        self.n_in
    }

    /// `F′_k` as a row-major `N_in × N_f` block.
    pub fn slice(&self, k: usize) -> &[f64] {
        let size = self.n_in * self.n_f;
        &self.data[k * size..(k + 1) * size]
    }

    /// Row `r` of `F′_k`.
    pub fn row(&self, k: usize, r: usize) -> &[f64] {
        &self.slice(k)[r * self.n_f..(r + 1) * self.n_f]
    }

    /// `π_k`: row `r` of `F′_k` is row `perm(k)[r]` of `F`.
    pub fn perm(&self, k: usize) -> &[usize] {
        &self.perms[k]
    }
}

/// Ordering for slice `k`: larger `k`-th activation first, then larger row in
/// lexicographic order. Rows that compare equal have identical content, so
/// their relative order cannot change the sorted values.
fn feature_order(k: usize) -> impl Fn(&[f64], &[f64]) -> Ordering {
    move |a, b| b[k].total_cmp(&a[k]).then_with(|| lex_cmp(b, a))
}

pub fn sort_features(f: &FeatureMatrix) -> SortedFeatureTensor {
    let (n_in, n_f) = (f.n_in(), f.n_f());
    let mut perms = Vec::with_capacity(n_f);
    let mut data = Vec::with_capacity(n_f * n_in * n_f);
    for k in 0..n_f {
        let cmp = feature_order(k);
        let mut perm: Vec<usize> = (0..n_in).collect();
        perm.sort_by(|&a, &b| cmp(f.row(a), f.row(b)));
        for &i in &perm {
            data.extend_from_slice(f.row(i));
        }
        perms.push(perm);
    }
    SortedFeatureTensor {
        n_f,
        n_in,
        perms,
        data,
    }
}

/// `F*`: `N_f` region blocks of `n_r` rows each, region `k` taken from `F′_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftPoolFeature {
    n_f: usize,
    n_r: usize,
    data: Vec<f64>,
    sources: Vec<usize>,
}

impl SoftPoolFeature {
    pub fn n_f(&self) -> usize {
        self.n_f
    }

    /// Rows per region.
    pub fn n_r(&self) -> usize {
        self.n_r
    }

    pub fn rows(&self) -> usize {
        self.n_f * self.n_r
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n_f..(i + 1) * self.n_f]
    }

    /// Rows of region `k`, as a contiguous block.
    pub fn block(&self, k: usize) -> &[f64] {
        let size = self.n_r * self.n_f;
        &self.data[k * size..(k + 1) * size]
    }

    /// Row of `F` that each row of `F*` was copied from.
    pub fn sources(&self) -> &[usize] {
        &self.sources
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_parts(vec![self.rows(), self.n_f], self.data.clone())
    }

    /// Flattened descriptor for classification.
    pub fn descriptor(&self) -> Vec<f64> {
        self.data.clone()
    }
}

/// Keeps rows `lo..=hi` (1-based, inclusive) of every sorted slice.
pub fn softpool_range(sorted: &SortedFeatureTensor, lo: usize, hi: usize) -> Result<SoftPoolFeature> {
    if lo < 1 || lo > hi || hi > sorted.n_in {
        return Err(Error::input(format!(
            "row range [{lo}:{hi}] is outside [1:{}]",
            sorted.n_in
        )));
    }
    let n_r = hi - lo + 1;
    let n_f = sorted.n_f;
    let mut data = Vec::with_capacity(n_f * n_r * n_f);
    let mut sources = Vec::with_capacity(n_f * n_r);
    for k in 0..n_f {
        for r in lo - 1..hi {
            data.extend_from_slice(sorted.row(k, r));
            sources.push(sorted.perms[k][r]);
        }
    }
    Ok(SoftPoolFeature {
        n_f,
        n_r,
        data,
        sources,
    })
}

/// Keeps the first `n_r` rows of every sorted slice.
pub fn softpool(sorted: &SortedFeatureTensor, n_r: usize) -> Result<SoftPoolFeature> {
    if n_r == 0 || n_r > sorted.n_in {
        return Err(Error::input(format!(
            "n_r = {n_r} must lie in [1, {}]",
            sorted.n_in
        )));
    }
    softpool_range(sorted, 1, n_r)
}

/// The max-pooled feature: entry `k` is the head of column `k` of `F′_k`.
pub fn pointnet_feature(sorted: &SortedFeatureTensor) -> Vec<f64> {
    (0..sorted.n_f).map(|k| sorted.row(k, 0)[k]).collect()
}

/// Region of each point: index of the largest activation, lowest index on ties.
pub fn region_assign(f: &FeatureMatrix) -> Vec<usize> {
    (0..f.n_in()).map(|i| argmax(f.row(i))).collect()
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = j;
        }
    }
    best
}

/// `P(f, i) = f[i] / Σ_j f[j]`.
pub fn region_probability(row: &[f64], i: usize) -> Result<f64> {
    if i >= row.len() {
        return Err(Error::input(format!("region {i} of {}", row.len())));
    }
    let sum: f64 = row.iter().sum();
    if sum <= 0.0 || !sum.is_finite() {
        return Err(Error::Numeric("region probability of a zero-sum row".into()));
    }
    Ok(row[i] / sum)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_features(n_in: usize, n_f: usize, seed: u64) -> FeatureMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut data = Vec::with_capacity(n_in * n_f);
        for _ in 0..n_in {
            let row: Vec<f64> = (0..n_f).map(|_| rng.gen_range(0.01..1.0)).collect();
            let s: f64 = row.iter().sum();
            data.extend(row.iter().map(|v| v / s));
        }
        FeatureMatrix::new(n_f, data).unwrap()
    }

    fn cloud(n: usize, seed: u64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PointCloud::new((0..n).map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).collect()).unwrap()
    }

    #[test]
    fn toy_sort_order() {
        // k-th activations chosen so the descending order is points 3,5,1,2,4
        let kth = [0.5, 0.3, 0.9, 0.1, 0.7];
        let data: Vec<f64> = kth.iter().flat_map(|&v| [v, 1.0 - v]).collect();
        let f = FeatureMatrix::new(2, data).unwrap();
        let s = sort_features(&f);
        assert_eq!(s.perm(0), &[2, 4, 0, 1, 3]);
        assert_eq!(s.row(0, 0), f.row(2));
    }

    #[test]
    fn descending_input_gives_identity() {
        let data = vec![0.9, 0.1, 0.6, 0.4, 0.2, 0.8];
        let f = FeatureMatrix::new(2, data).unwrap();
        assert_eq!(sort_features(&f).perm(0), &[0, 1, 2]);
    }

    #[test]
    fn slices_match_reference_sort() {
        let f = random_features(64, 8, 2);
        let s = sort_features(&f);
        for k in 0..8 {
            let mut rows: Vec<Vec<f64>> = (0..64).map(|i| f.row(i).to_vec()).collect();
            rows.sort_by(|a, b| b[k].partial_cmp(&a[k]).unwrap());
            let flat: Vec<f64> = rows.concat();
            assert_eq!(s.slice(k), &flat[..]);
        }
    }

    #[test]
    fn encode_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let params = EncoderParams::init(&[16, 16], 8, &mut rng).unwrap();
        let f = encode(&cloud(5, 0), &params).unwrap();
        assert_eq!((f.n_in(), f.n_f()), (5, 8));
        assert!(f.row_sum_error() < 1e-9);
    }

    #[test]
    fn zero_output_layer_is_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut params = EncoderParams::init(&[8], 8, &mut rng).unwrap();
        params.zero_output_layer();
        let f = encode(&cloud(10, 3), &params).unwrap();
        assert!(f.data().iter().all(|&v| v == 0.125));
    }

    #[test]
    fn encode_is_row_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let params = EncoderParams::init(&[32, 32], 8, &mut rng).unwrap();
        let p = cloud(40, 5);
        let perm: Vec<usize> = (0..40).rev().collect();
        let f = encode(&p, &params).unwrap();
        let g = encode(&p.permuted(&perm).unwrap(), &params).unwrap();
        for (i, &j) in perm.iter().enumerate() {
            assert_eq!(g.row(i), f.row(j));
        }
    }

    #[test]
    fn softpool_shapes_and_errors() {
        let f = random_features(1024, 8, 4);
        let s = sort_features(&f);
        let fs = softpool(&s, 32).unwrap();
        assert_eq!((fs.rows(), fs.n_f()), (256, 8));
        let all = softpool(&s, 1024).unwrap();
        assert_eq!(all.block(3), s.slice(3));
        assert!(matches!(softpool(&s, 1025), Err(Error::InvalidInput(_))));
        assert_eq!(softpool_range(&s, 1, 32).unwrap(), fs);
        assert_eq!(softpool_range(&s, 33, 64).unwrap().rows(), 256);
        assert!(softpool_range(&s, 0, 3).is_err());
        assert!(softpool_range(&s, 5, 4).is_err());
    }

    #[test]
    fn pointnet_feature_is_column_max() {
        let f = random_features(100, 8, 6);
        let s = sort_features(&f);
        let pn = pointnet_feature(&s);
        let fs = softpool(&s, 1).unwrap();
        for k in 0..8 {
            let max = (0..100).map(|i| f.row(i)[k]).fold(f64::MIN, f64::max);
            assert_eq!(pn[k], max);
            assert_eq!(fs.row(k)[k], max);
        }
    }

    #[test]
    fn region_assignment_rules() {
        let f = FeatureMatrix::new(4, vec![0.0, 0.0, 1.0, 0.0, 0.25, 0.25, 0.25, 0.25]).unwrap();
        assert_eq!(region_assign(&f), vec![2, 0]);
        let r = random_features(100, 8, 8);
        for (i, &a) in region_assign(&r).iter().enumerate() {
            let row = r.row(i);
            assert!(row.iter().all(|&v| v <= row[a]));
        }
    }

    #[test]
    fn region_probability_rules() {
        assert_eq!(region_probability(&[2.0; 8], 3).unwrap(), 0.125);
        assert_eq!(region_probability(&[0.25, 0.75], 1).unwrap(), 0.75);
        assert!(matches!(region_probability(&[0.0, 0.0], 0), Err(Error::Numeric(_))));
    }
}
