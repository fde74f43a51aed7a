//! Point-cloud types, set distances and seeded resampling.

mod assignment;
mod distance;
mod kdtree;

use std::cmp::Ordering;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub use assignment::solve as solve_assignment;
pub use distance::{
    chamfer, chamfer_accelerated, chamfer_matches, chamfer_rows, earth_mover, earth_mover_matching,
    nearest_brute, nearest_indexed, ChamferMatches, MAX_EMD_SIZE,
};
pub use kdtree::KdTree;

/// A 3-D point in model coordinates.
pub type Point = [f64; 3];

/// Borrowed view of a row-major set of `dim`-vectors.
#[derive(Debug, Clone, Copy)]
pub struct Rows<'a> {
    data: &'a [f64],
    dim: usize,
}

impl<'a> Rows<'a> {
    pub fn new(data: &'a [f64], dim: usize) -> Result<Self> {
        if dim == 0 || data.len() % dim != 0 {
            return Err(Error::shape(format!(
                "{} values cannot be split into rows of {dim}",
                data.len()
            )));
        }
        Ok(Rows { data, dim })
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &'a [f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn data(&self) -> &'a [f64] {
        self.data
    }
}

/// An ordered, non-empty list of finite 3-D points.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<Point>,
}

impl PointCloud {
    pub fn new(points: Vec<Point>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::input("point cloud must contain at least one point"));
        }
        if let Some(i) = points.iter().position(|p| p.iter().any(|c| !c.is_finite())) {
            return Err(Error::input(format!("point {i} has a non-finite coordinate")));
        }
        Ok(PointCloud { points })
    }

    /// Builds a cloud from `x y z x y z ...`.
    pub fn from_flat(data: &[f64]) -> Result<Self> {
        if data.len() % 3 != 0 {
            return Err(Error::shape(format!("{} values is not a multiple of 3", data.len())));
        }
        Self::new(data.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    /// Always false; kept for API symmetry with `len`.
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn flat(&self) -> &[f64] {
        self.points.as_flattened()
    }

    pub fn rows(&self) -> Rows<'_> {
        Rows {
            data: self.flat(),
            dim: 3,
        }
    }

    pub fn into_points(self) -> Vec<Point> {
        self.points
    }

    /// Returns the cloud reordered so that output `i` is input `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.len() {
            return Err(Error::input("permutation length does not match cloud size"));
        }
        let mut seen = vec![false; perm.len()];
        for &p in perm {
            if p >= perm.len() || std::mem::replace(&mut seen[p], true) {
                return Err(Error::input("not a permutation"));
            }
        }
        Ok(PointCloud {
            points: perm.iter().map(|&i| self.points[i]).collect(),
        })
    }

    /// Shuffles point order with a seeded generator.
    pub fn shuffled(&self, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut points = self.points.clone();
        for i in (1..points.len()).rev() {
            let j = rng.gen_range(0..=i);
            points.swap(i, j);
        }
        PointCloud { points }
    }
}

/// Lexicographic order on coordinates, total over finite values.
pub(crate) fn lex_cmp(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            Ordering::Equal => continue,
            other => return other,
        }
    }
    a.len().cmp(&b.len())
}

/// Row indices of `rows` sorted into canonical (lexicographic) order.
///
/// Used before any seeded row selection so the selection depends only on the
/// multiset of rows, never on the order they arrived in.
pub(crate) fn canonical_order(rows: Rows<'_>) -> Vec<usize> {
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.sort_by(|&a, &b| lex_cmp(rows.row(a), rows.row(b)));
    order
}

/// Seeded choice of `count` distinct rows, in canonical order first.
pub(crate) fn seeded_subset(rows: Rows<'_>, count: usize, seed: u64) -> Vec<usize> {
    let canon = canonical_order(rows);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    index::sample(&mut rng, canon.len(), count.min(canon.len()))
        .into_iter()
        .map(|i| canon[i])
        .collect()
}

/// Resamples `p` to exactly `n` points.
///
/// With at least `n` points this draws a uniform subsample without
/// replacement; otherwise every point is kept and the shortfall is filled by
/// uniformly drawn duplicates. Points are put into canonical order before
/// drawing, so the result depends only on the multiset of input points and
/// the seed.
pub fn resample(p: &PointCloud, n: usize, seed: u64) -> Result<PointCloud> {
    if n == 0 {
        return Err(Error::input("resample target must be at least one point"));
    }
    let canon = canonical_order(p.rows());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks: Vec<usize> = if canon.len() >= n {
        index::sample(&mut rng, canon.len(), n).into_vec()
    } else {
        let mut picks: Vec<usize> = (0..canon.len()).collect();
        picks.extend((canon.len()..n).map(|_| rng.gen_range(0..canon.len())));
        for i in (1..picks.len()).rev() {
            let j = rng.gen_range(0..=i);
            picks.swap(i, j);
        }
        picks
    };
    PointCloud::new(picks.into_iter().map(|i| p.points[canon[i]]).collect())
}

/// A distance value together with the multiplier used when reporting it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistanceReport {
    pub value: f64,
    pub scale: f64,
}

impl DistanceReport {
    pub const CHAMFER_SCALE: f64 = 1e3;
    pub const EMD_SCALE: f64 = 1e2;

    pub fn chamfer(value: f64) -> Self {
        DistanceReport {
            value,
            scale: Self::CHAMFER_SCALE,
        }
    }

    pub fn earth_mover(value: f64) -> Self {
        DistanceReport {
            value,
            scale: Self::EMD_SCALE,
        }
    }

    pub fn scaled(&self) -> f64 {
        self.value * self.scale
    }
}

impl From<&PointCloud> for crate::autodiff::Tensor {
    /// `[N, 3]` matrix of the coordinates.
    fn from(p: &PointCloud) -> Self {
        crate::autodiff::Tensor::from_parts(vec![p.len(), 3], p.flat().to_vec())
    }
}

impl From<PointCloud> for crate::autodiff::Tensor {
    fn from(p: PointCloud) -> Self {
        (&p).into()
    }
}
