//! One-vs-rest linear max-margin classifier trained by stochastic
//! subgradient descent on the regularised hinge loss.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvmConfig {
    pub lambda: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig {
            lambda: 1e-3,
            epochs: 200,
            seed: 0,
        }
    }
}

/// Per-feature standardisation followed by one weight vector per class.
/// The last weight of each vector multiplies a constant 1.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSvm {
    labels: Vec<usize>,
    mean: Vec<f64>,
    scale: Vec<f64>,
    weights: Vec<Vec<f64>>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |s, (x, y)| s + x * y)
}

impl LinearSvm {
    pub fn train(x: &[Vec<f64>], y: &[usize], cfg: &SvmConfig) -> Result<Self> {
        if x.len() != y.len() || x.is_empty() {
            return Err(Error::input("need one label per descriptor and at least one descriptor"));
        }
        let dim = x[0].len();
        if dim == 0 || x.iter().any(|r| r.len() != dim) {
            return Err(Error::shape("descriptors must share a non-zero length"));
        }
        if !(cfg.lambda > 0.0) || cfg.epochs == 0 {
            return Err(Error::input("lambda and epochs must be positive"));
        }
        let mut labels = y.to_vec();
        labels.sort_unstable();
        labels.dedup();
        if labels.len() < 2 {
            return Err(Error::input("training set needs at least two classes"));
        }
        let n = x.len() as f64;
        let mut mean = vec![0.0; dim];
        for r in x {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v / n;
            }
        }
        let mut scale = vec![0.0; dim];
        for r in x {
            for ((s, v), m) in scale.iter_mut().zip(r).zip(&mean) {
                *s += (v - m) * (v - m) / n;
            }
        }
        for s in &mut scale {
            *s = if *s > 1e-24 { 1.0 / s.sqrt() } else { 0.0 };
        }
        let mut model = LinearSvm {
            labels,
            mean,
            scale,
            weights: Vec::new(),
        };
        let z: Vec<Vec<f64>> = x.iter().map(|r| model.features(r)).collect();
        let radius = 1.0 / cfg.lambda.sqrt();
        for (c, &label) in model.labels.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(c as u64);
            let mut w = vec![0.0; dim + 1];
            let mut order: Vec<usize> = (0..z.len()).collect();
            let mut t = 0.0;
            for _ in 0..cfg.epochs {
                order.shuffle(&mut rng);
                for &i in &order {
                    t += 1.0;
                    let eta = 1.0 / (cfg.lambda * t);
                    let target = if y[i] == label { 1.0 } else { -1.0 };
                    let margin = target * dot(&w, &z[i]);
                    for v in w.iter_mut() {
                        *v *= 1.0 - eta * cfg.lambda;
                    }
                    if margin < 1.0 {
                        for (v, zi) in w.iter_mut().zip(&z[i]) {
                            *v += eta * target * zi;
                        }
                    }
                    let norm = dot(&w, &w).sqrt();
                    if norm > radius {
                        for v in w.iter_mut() {
                            *v *= radius / norm;
                        }
                    }
                }
            }
            model.weights.push(w);
        }
        Ok(model)
    }

    fn features(&self, x: &[f64]) -> Vec<f64> {
        let mut z: Vec<f64> = x
            .iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((v, m), s)| (v - m) * s)
            .collect();
        z.push(1.0);
        z
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Per-class scores, in [`LinearSvm::labels`] order.
    pub fn scores(&self, x: &[f64]) -> Vec<f64> {
        let z = self.features(x);
        self.weights.iter().map(|w| dot(w, &z)).collect()
    }

    /// Label with the highest score; ties go to the smaller label.
    pub fn predict(&self, x: &[f64]) -> usize {
        let s = self.scores(x);
        let best = (1..s.len()).fold(0, |b, i| if s[i] > s[b] { i } else { b });
        self.labels[best]
    }

    pub fn accuracy(&self, x: &[Vec<f64>], y: &[usize]) -> f64 {
        if x.is_empty() {
            return 0.0;
        }
        let hits = x.iter().zip(y).filter(|(r, &l)| self.predict(r) == l).count();
        hits as f64 / x.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn blobs(rng: &mut ChaCha8Rng, per: usize, classes: usize, dim: usize, spread: f64) -> (Vec<Vec<f64>>, Vec<usize>) {
        let centers: Vec<Vec<f64>> = (0..classes).map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let mut x = Vec::new();
        let mut y = Vec::new();
        for _ in 0..per {
            for (c, center) in centers.iter().enumerate() {
                x.push(center.iter().map(|v| v + spread * rng.gen_range(-1.0..1.0)).collect());
                y.push(c);
            }
        }
        (x, y)
    }

    #[test]
    fn separable_two_class() {
        let x = vec![vec![0.0, 1.0], vec![0.2, 1.5], vec![3.0, -1.0], vec![2.5, -2.0]];
        let y = vec![0, 0, 1, 1];
        let m = LinearSvm::train(&x, &y, &SvmConfig::default()).unwrap();
        assert_eq!(m.accuracy(&x, &y), 1.0);
    }

    #[test]
    fn multiclass_and_null_control() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (x, y) = blobs(&mut rng, 40, 4, 16, 0.3);
        let (train, test) = (160 - 60, 60);
        let m = LinearSvm::train(&x[..train], &y[..train], &SvmConfig::default()).unwrap();
        assert!(m.accuracy(&x[train..], &y[train..]) >= 0.95);
        let mut shuffled = y.clone();
        shuffled.shuffle(&mut rng);
        let noise: Vec<Vec<f64>> = (0..x.len()).map(|_| (0..16).map(|_| rng.gen()).collect()).collect();
        let m = LinearSvm::train(&noise[..train], &shuffled[..train], &SvmConfig::default()).unwrap();
        let acc = m.accuracy(&noise[train..], &shuffled[train..]);
        let sigma = (0.25f64 * 0.75 / test as f64).sqrt();
        assert!((acc - 0.25).abs() <= 3.0 * sigma, "{acc}");
    }

    #[test]
    fn rejects_single_class() {
        let x = vec![vec![1.0], vec![2.0]];
        assert!(matches!(LinearSvm::train(&x, &[3, 3], &SvmConfig::default()), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (x, y) = blobs(&mut rng, 10, 3, 5, 0.5);
        let cfg = SvmConfig { epochs: 20, ..SvmConfig::default() };
        assert_eq!(LinearSvm::train(&x, &y, &cfg).unwrap(), LinearSvm::train(&x, &y, &cfg).unwrap());
    }
}
