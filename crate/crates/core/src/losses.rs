//! Training objectives. Each `*_on_tape` function records one sample's term;
//! the plain functions evaluate values and average over a batch.
//!
//! Discrete choices (nearest-neighbour matches, assignments, argmax, set
//! membership) are taken from the forward values and held fixed in the
//! backward pass.

use crate::autodiff::{Tape, Tensor, Var};
use crate::cloud::{self, resample, seeded_subset, PointCloud, Rows};
use crate::encoder::{argmax, FeatureMatrix, SoftPoolFeature};
use crate::error::{Error, Result};

/// Clamp inside every log.
pub const LOG_EPS: f64 = 1e-12;
pub const DEFAULT_TAU: f64 = 0.3;
/// Rows drawn from `F` and `F*` for the preservation term.
pub const PRESERVE_SAMPLES: usize = 256;

fn scalar(tape: &mut Tape, v: f64) -> Result<Var> {
    tape.constant(Tensor::scalar(v))
}

fn rows_of(tape: &Tape, v: Var) -> Result<Rows<'_>> {
    let (_, d) = tape.value(v).dims2()?;
    Rows::new(tape.value(v).data(), d)
}

/// Symmetric Chamfer distance between two row matrices on the tape.
pub fn chamfer_on_tape(tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
    let m = cloud::chamfer_matches(rows_of(tape, a)?, rows_of(tape, b)?)?;
    let ab: Vec<(usize, usize)> = m.a_to_b.iter().enumerate().map(|(i, &j)| (i, j)).collect();
    let ba: Vec<(usize, usize)> = m.b_to_a.iter().enumerate().map(|(j, &i)| (i, j)).collect();
    let d_ab = tape.pair_distances(a, b, &ab)?;
    let d_ba = tape.pair_distances(a, b, &ba)?;
    let m_ab = tape.mean(d_ab)?;
    let m_ba = tape.mean(d_ba)?;
    let s = tape.add(m_ab, m_ba)?;
    tape.scale(s, 0.5)
}

/// `chamfer(fine, gt)`, plus `½·chamfer(coarse, resample(gt, |coarse|))`
/// when `coarse` is given.
pub fn complete_on_tape(
    tape: &mut Tape,
    fine: Var,
    coarse: Option<Var>,
    gt: &PointCloud,
    seed: u64,
) -> Result<Var> {
    let target = tape.constant(Tensor::from(gt))?;
    let main = chamfer_on_tape(tape, fine, target)?;
    let Some(coarse) = coarse else {
        return Ok(main);
    };
    let n = tape.value(coarse).dims2()?.0;
    let small = resample(gt, n, seed)?;
    let small = tape.constant(Tensor::from(small))?;
    let aux = chamfer_on_tape(tape, coarse, small)?;
    let aux = tape.scale(aux, 0.5)?;
    tape.add(main, aux)
}

/// `log N_f − H(p̄)` for one sample, `p̄` the mean region distribution.
pub fn inter_on_tape(tape: &mut Tape, f: Var) -> Result<Var> {
    let (_, n_f) = tape.value(f).dims2()?;
    let p = tape.row_normalize(f)?;
    let pbar = tape.mean_axis(p, 0)?;
    let logp = tape.log_clamped(pbar, LOG_EPS)?;
    let plogp = tape.mul(pbar, logp)?;
    let neg_h = tape.sum(plogp)?;
    let log_r = scalar(tape, (n_f as f64).ln())?;
    tape.add(log_r, neg_h)
}

/// Mean per-row entropy of the region distribution for one sample.
pub fn intra_on_tape(tape: &mut Tape, f: Var) -> Result<Var> {
    let (n, _) = tape.value(f).dims2()?;
    let p = tape.row_normalize(f)?;
    let logp = tape.log_clamped(p, LOG_EPS)?;
    let plogp = tape.mul(p, logp)?;
    let s = tape.sum(plogp)?;
    tape.scale(s, -1.0 / n as f64)
}

/// Sets `B_i^j` as row indices: rows assigned to region `i` whose
/// activation for `j ≠ i` exceeds `τ`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoundarySets {
    n_f: usize,
    sets: Vec<Vec<usize>>,
}

impl BoundarySets {
    pub fn n_f(&self) -> usize {
        self.n_f
    }

    /// `B_i^j` with 0-based region indices.
    pub fn get(&self, i: usize, j: usize) -> &[usize] {
        &self.sets[i * self.n_f + j]
    }

    pub fn is_empty(&self) -> bool {
        self.sets.iter().all(Vec::is_empty)
    }

    /// Unordered pairs `i < j` with both `B_i^j` and `B_j^i` non-empty.
    pub fn adjacent_pairs(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.n_f {
            for j in i + 1..self.n_f {
                if !self.get(i, j).is_empty() && !self.get(j, i).is_empty() {
                    out.push((i, j));
                }
            }
        }
        out
    }
}

/// Builds the boundary sets from a row-feature matrix (`features.len() = rows·n_f`).
pub fn boundary_sets(features: &[f64], n_f: usize, tau: f64) -> Result<BoundarySets> {
    if n_f == 0 || features.len() % n_f != 0 {
        return Err(Error::shape("feature data is not a whole number of rows"));
    }
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::input(format!("tau must be in (0, 1), got {tau}")));
    }
    let mut sets = vec![Vec::new(); n_f * n_f];
    for (k, row) in features.chunks_exact(n_f).enumerate() {
        let i = argmax(row);
        for (j, &v) in row.iter().enumerate() {
            if j != i && v > tau {
                sets[i * n_f + j].push(k);
            }
        }
    }
    Ok(BoundarySets { n_f, sets })
}

/// `Σ_{i<j} chamfer(B_i^j, B_j^i)` over adjacent pairs. `features` holds one
/// row per row of `points`; membership is read from its current values.
pub fn boundary_on_tape(tape: &mut Tape, points: Var, features: &[f64], n_f: usize, tau: f64) -> Result<Var> {
    let rows = tape.value(points).dims2()?.0;
    if features.len() != rows * n_f {
        return Err(Error::shape(format!(
            "{rows} points but {} feature rows",
            features.len() / n_f.max(1)
        )));
    }
    let sets = boundary_sets(features, n_f, tau)?;
    let mut total = scalar(tape, 0.0)?;
    for (i, j) in sets.adjacent_pairs() {
        let a = tape.gather(points, sets.get(i, j))?;
        let b = tape.gather(points, sets.get(j, i))?;
        let c = chamfer_on_tape(tape, a, b)?;
        total = tape.add(total, c)?;
    }
    Ok(total)
}

/// Earth-mover distance between seeded subsamples of `F` and `F*`.
/// `fstar` must be a matrix whose rows are feature vectors (typically a
/// gather of `f`).
pub fn preserve_on_tape(tape: &mut Tape, f: Var, fstar: Var, samples: usize, seed: u64) -> Result<Var> {
    let (pairs, _) = preserve_pairs(tape.value(f), tape.value(fstar), samples, seed)?;
    let d = tape.pair_distances(f, fstar, &pairs)?;
    tape.mean(d)
}

fn preserve_pairs(f: &Tensor, fstar: &Tensor, samples: usize, seed: u64) -> Result<(Vec<(usize, usize)>, f64)> {
    let (nf_rows, d) = f.dims2()?;
    let (ns_rows, d2) = fstar.dims2()?;
    if d != d2 {
        return Err(Error::shape(format!("feature widths {d} and {d2} differ")));
    }
    let count = samples.min(nf_rows).min(ns_rows);
    if count == 0 {
        return Err(Error::input("preservation term needs non-empty features"));
    }
    let ra = Rows::new(f.data(), d)?;
    let rb = Rows::new(fstar.data(), d)?;
    let ia = seeded_subset(ra, count, seed);
    let ib = seeded_subset(rb, count, seed);
    let gather = |rows: Rows<'_>, idx: &[usize]| -> Vec<f64> {
        idx.iter().flat_map(|&i| rows.row(i).iter().copied()).collect()
    };
    let (sa, sb) = (gather(ra, &ia), gather(rb, &ib));
    let (value, m) = cloud::earth_mover_matching(Rows::new(&sa, d)?, Rows::new(&sb, d)?)?;
    Ok((ia.iter().zip(&m).map(|(&i, &j)| (i, ib[j])).collect(), value))
}

/// `chamfer(out, gt)` plus the optional coarse term.
pub fn loss_complete(out: &PointCloud, coarse: Option<&PointCloud>, gt: &PointCloud, seed: u64) -> Result<f64> {
    let main = cloud::chamfer(out, gt)?;
    match coarse {
        None => Ok(main),
        Some(c) => Ok(main + 0.5 * cloud::chamfer(c, &resample(gt, c.len(), seed)?)?),
    }
}

fn batch_mean(batch: &[FeatureMatrix], f: impl Fn(&mut Tape, Var) -> Result<Var>) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::input("empty batch"));
    }
    let mut total = 0.0;
    for fm in batch {
        let mut tape = Tape::new();
        let v = tape.constant(fm.to_tensor())?;
        let out = f(&mut tape, v)?;
        total += tape.value(out).item()?;
    }
    Ok(total / batch.len() as f64)
}

/// Regional entropy `E_r`, averaged over the batch.
pub fn regional_entropy(batch: &[FeatureMatrix]) -> Result<f64> {
    let n_f = batch.first().map_or(1, FeatureMatrix::n_f);
    Ok((n_f as f64).ln() - loss_inter(batch)?)
}

pub fn loss_inter(batch: &[FeatureMatrix]) -> Result<f64> {
    batch_mean(batch, inter_on_tape)
}

pub fn loss_intra(batch: &[FeatureMatrix]) -> Result<f64> {
    batch_mean(batch, intra_on_tape)
}

pub fn loss_boundary(points: &PointCloud, f: &FeatureMatrix, tau: f64) -> Result<f64> {
    let mut tape = Tape::new();
    let p = tape.constant(Tensor::from(points))?;
    let v = boundary_on_tape(&mut tape, p, f.data(), f.n_f(), tau)?;
    tape.value(v).item()
}

pub fn loss_preserve(fstar: &SoftPoolFeature, f: &FeatureMatrix, seed: u64) -> Result<f64> {
    Ok(preserve_pairs(&f.to_tensor(), &fstar.to_tensor(), PRESERVE_SAMPLES, seed)?.1)
}

/// Term weights `(w_c, w_inter, w_intra, w_b, w_p)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub complete: f64,
    pub inter: f64,
    pub intra: f64,
    pub boundary: f64,
    pub preserve: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            complete: 1.0,
            inter: 1.0,
            intra: 1.0,
            boundary: 2.0,
            preserve: 1.0,
        }
    }
}

impl LossWeights {
    pub fn as_array(&self) -> [f64; 5] {
        [self.complete, self.inter, self.intra, self.boundary, self.preserve]
    }

    pub fn validate(&self) -> Result<()> {
        if self.as_array().iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::input(format!("loss weights must be non-negative: {self:?}")));
        }
        Ok(())
    }
}

/// The five terms and their weighted sum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub complete: f64,
    pub inter: f64,
    pub intra: f64,
    pub boundary: f64,
    pub preserve: f64,
    pub weights: LossWeights,
    pub total: f64,
}

impl LossBreakdown {
    pub const CSV_HEADER: &'static str = "step,complete,inter,intra,boundary,preserve,total";

    pub fn terms(&self) -> [f64; 5] {
        [self.complete, self.inter, self.intra, self.boundary, self.preserve]
    }

    pub fn csv_row(&self, step: u64) -> String {
        let t = self.terms();
        format!(
            "{step},{},{},{},{},{},{}",
            t[0], t[1], t[2], t[3], t[4], self.total
        )
    }

    /// Element-wise mean of several breakdowns sharing the same weights.
    pub fn mean(items: &[LossBreakdown]) -> Result<LossBreakdown> {
        let first = items.first().ok_or_else(|| Error::input("no losses to average"))?;
        let mut t = [0.0; 5];
        for b in items {
            for (acc, v) in t.iter_mut().zip(b.terms()) {
                *acc += v;
            }
        }
        let n = items.len() as f64;
        total_loss(t.map(|v| v / n), first.weights)
    }
}

/// Combines `[complete, inter, intra, boundary, preserve]` with `weights`.
pub fn total_loss(terms: [f64; 5], weights: LossWeights) -> Result<LossBreakdown> {
    weights.validate()?;
    let total = terms
        .iter()
        .zip(weights.as_array())
        .fold(0.0, |s, (t, w)| s + t * w);
    Ok(LossBreakdown {
        complete: terms[0],
        inter: terms[1],
        intra: terms[2],
        boundary: terms[3],
        preserve: terms[4],
        weights,
        total,
    })
}

/// Weighted sum of term vars on a tape.
pub fn total_on_tape(tape: &mut Tape, terms: [Var; 5], weights: LossWeights) -> Result<Var> {
    weights.validate()?;
    let mut total = scalar(tape, 0.0)?;
    for (t, w) in terms.into_iter().zip(weights.as_array()) {
        if w != 0.0 {
            let s = tape.scale(t, w)?;
            total = tape.add(total, s)?;
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests;
