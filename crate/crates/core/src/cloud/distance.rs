use super::kdtree::{squared_distance, KdTree};
use super::{assignment, PointCloud, Rows};
use crate::error::{Error, Result};
use crate::par;

/// Largest set size handed to the exact assignment solver.
pub const MAX_EMD_SIZE: usize = 1024;

// below this many reference rows a linear scan beats building a tree
const INDEX_MIN_ROWS: usize = 64;

/// Nearest reference row for every query row by exhaustive scan.
/// Returns `(index, euclidean distance)` pairs; ties go to the lowest index.
pub fn nearest_brute(query: Rows<'_>, reference: Rows<'_>) -> Vec<(usize, f64)> {
    par::map_range(query.len(), |i| {
        let q = query.row(i);
        let mut best = (usize::MAX, f64::INFINITY);
        for j in 0..reference.len() {
            let d = squared_distance(q, reference.row(j));
            if d < best.1 {
                best = (j, d);
            }
        }
        (best.0, best.1.sqrt())
    })
}

/// Same contract as [`nearest_brute`], answered through a k-d tree.
pub fn nearest_indexed(query: Rows<'_>, reference: Rows<'_>) -> Vec<(usize, f64)> {
    let tree = KdTree::build(reference);
    par::map_range(query.len(), |i| {
        let (j, d) = tree.nearest(query.row(i)).expect("reference is non-empty");
        (j, d.sqrt())
    })
}

fn check_pair(a: Rows<'_>, b: Rows<'_>) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::input("chamfer distance needs two non-empty sets"));
    }
    if a.dim() != b.dim() {
        return Err(Error::shape(format!("dimension {} vs {}", a.dim(), b.dim())));
    }
    Ok(())
}

fn ordered_mean(values: impl Iterator<Item = f64>, n: usize) -> f64 {
    values.fold(0.0, |s, v| s + v) / n as f64
}

/// Nearest-neighbour matches in both directions plus the resulting Chamfer value.
#[derive(Debug, Clone)]
pub struct ChamferMatches {
    pub a_to_b: Vec<usize>,
    pub b_to_a: Vec<usize>,
    pub value: f64,
}

/// Chamfer value and matches, using the k-d tree when the sets are large.
pub fn chamfer_matches(a: Rows<'_>, b: Rows<'_>) -> Result<ChamferMatches> {
    check_pair(a, b)?;
    let lookup = |q: Rows<'_>, r: Rows<'_>| {
        if r.len() >= INDEX_MIN_ROWS {
            nearest_indexed(q, r)
        } else {
            nearest_brute(q, r)
        }
    };
    let ab = lookup(a, b);
    let ba = lookup(b, a);
    let value = 0.5
        * (ordered_mean(ab.iter().map(|m| m.1), ab.len())
            + ordered_mean(ba.iter().map(|m| m.1), ba.len()));
    Ok(ChamferMatches {
        a_to_b: ab.into_iter().map(|m| m.0).collect(),
        b_to_a: ba.into_iter().map(|m| m.0).collect(),
        value,
    })
}

/// Symmetric Chamfer distance between two row sets of equal dimension,
/// by exhaustive scan.
pub fn chamfer_rows(a: Rows<'_>, b: Rows<'_>) -> Result<f64> {
    check_pair(a, b)?;
    let ab = nearest_brute(a, b);
    let ba = nearest_brute(b, a);
    Ok(0.5
        * (ordered_mean(ab.iter().map(|m| m.1), ab.len())
            + ordered_mean(ba.iter().map(|m| m.1), ba.len())))
}

/// `½ · (mean_a min_b ‖a−b‖ + mean_b min_a ‖b−a‖)` with Euclidean (not squared)
/// distances.
pub fn chamfer(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    chamfer_rows(a.rows(), b.rows())
}

/// [`chamfer`] computed through a k-d tree.
pub fn chamfer_accelerated(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    let (ra, rb) = (a.rows(), b.rows());
    check_pair(ra, rb)?;
    let ab = nearest_indexed(ra, rb);
    let ba = nearest_indexed(rb, ra);
    Ok(0.5
        * (ordered_mean(ab.iter().map(|m| m.1), ab.len())
            + ordered_mean(ba.iter().map(|m| m.1), ba.len())))
}

/// Exact earth-mover distance with its optimal matching (`a[i]` ↔ `b[m[i]]`).
///
/// The value is the mean Euclidean cost of the matched pairs.
pub fn earth_mover_matching(a: Rows<'_>, b: Rows<'_>) -> Result<(f64, Vec<usize>)> {
    if a.len() != b.len() {
        return Err(Error::input(format!(
            "earth-mover distance needs equal cardinality, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.dim() != b.dim() {
        return Err(Error::shape(format!("dimension {} vs {}", a.dim(), b.dim())));
    }
    let n = a.len();
    if n == 0 {
        return Err(Error::input("earth-mover distance of empty sets"));
    }
    if n > MAX_EMD_SIZE {
        return Err(Error::input(format!(
            "{n} rows exceeds the exact solver bound of {MAX_EMD_SIZE}"
        )));
    }
    let rows: Vec<Vec<f64>> = par::map_range(n, |i| {
        (0..n)
            .map(|j| squared_distance(a.row(i), b.row(j)).sqrt())
            .collect()
    });
    let costs: Vec<f64> = rows.into_iter().flatten().collect();
    let matching = assignment::solve(&costs, n);
    let value = ordered_mean(matching.iter().enumerate().map(|(i, &j)| costs[i * n + j]), n);
    Ok((value, matching))
}

pub fn earth_mover(a: Rows<'_>, b: Rows<'_>) -> Result<f64> {
    earth_mover_matching(a, b).map(|(v, _)| v)
}
