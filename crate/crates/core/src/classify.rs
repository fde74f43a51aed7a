//! Shape classification from soft-pool descriptors.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::model::{predict, ModelConfig, ModelParams};
use crate::par;
use crate::svm::{LinearSvm, SvmConfig};

/// Flattened `F*` of each partial scan under a trained model.
pub fn descriptors(cfg: &ModelConfig, params: &ModelParams, partials: &[&PointCloud], seed: u64) -> Result<Vec<Vec<f64>>> {
    par::map_range(partials.len(), |i| predict(cfg, params, partials[i], seed).map(|p| p.fstar.descriptor()))
        .into_iter()
        .collect()
}

/// Independent label shuffles averaged into the null control.
pub const CONTROL_SHUFFLES: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifyReport {
    pub classes: usize,
    pub test_count: usize,
    pub accuracy: f64,
    /// Mean test accuracy of classifiers trained on shuffled labels.
    pub control_accuracy: f64,
    pub predictions: Vec<usize>,
}

impl ClassifyReport {
    /// Accuracy expected from guessing, assuming balanced classes.
    pub fn chance(&self) -> f64 {
        1.0 / self.classes as f64
    }

    /// Binomial standard deviation of the accuracy under chance.
    pub fn chance_sigma(&self) -> f64 {
        let p = self.chance();
        (p * (1.0 - p) / self.test_count as f64).sqrt()
    }

    pub fn control_near_chance(&self, sigmas: f64) -> bool {
        (self.control_accuracy - self.chance()).abs() <= sigmas * self.chance_sigma()
    }

    pub fn render(&self) -> String {
        format!(
            "classes {}  test {}\naccuracy {:.4}\nshuffled-label control, mean of {} shuffles: {:.4} (chance {:.4}, sigma {:.4})\n",
            self.classes,
            self.test_count,
            self.accuracy,
            CONTROL_SHUFFLES,
            self.control_accuracy,
            self.chance(),
            self.chance_sigma()
        )
    }
}

/// Trains a linear classifier on `(train_x, train_y)`, scores it on the test
/// set, and repeats with the training labels shuffled as a null control.
/// One shuffle can line up whole clusters by luck, so the control is the
/// mean over [`CONTROL_SHUFFLES`] shuffles.
pub fn classify(
    train_x: &[Vec<f64>],
    train_y: &[usize],
    test_x: &[Vec<f64>],
    test_y: &[usize],
    cfg: &SvmConfig,
) -> Result<ClassifyReport> {
    if test_x.is_empty() || test_x.len() != test_y.len() {
        return Err(Error::input("need one label per test descriptor and at least one descriptor"));
    }
    let svm = LinearSvm::train(train_x, train_y, cfg)?;
    let predictions: Vec<usize> = test_x.iter().map(|x| svm.predict(x)).collect();
    let hits = predictions.iter().zip(test_y).filter(|(p, y)| p == y).count();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    let mut control = 0.0;
    for _ in 0..CONTROL_SHUFFLES {
        let mut shuffled = train_y.to_vec();
        shuffled.shuffle(&mut rng);
        control += LinearSvm::train(train_x, &shuffled, cfg)?.accuracy(test_x, test_y);
    }

    Ok(ClassifyReport {
        classes: svm.labels().len(),
        test_count: test_x.len(),
        accuracy: hits as f64 / test_x.len() as f64,
        control_accuracy: control / CONTROL_SHUFFLES as f64,
        predictions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn separable_blobs_and_null_control() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut make = |n: usize| -> (Vec<Vec<f64>>, Vec<usize>) {
            (0..n)
                .map(|i| {
                    let c = i % 4;
                    let x = (0..6).map(|d| if d == c { 3.0 } else { 0.0 } + rng.gen_range(-0.5..0.5)).collect();
                    (x, c)
                })
                .unzip()
        };
        let (tx, ty) = make(100);
        let (vx, vy) = make(200);
        let r = classify(&tx, &ty, &vx, &vy, &SvmConfig::default()).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert!(r.control_near_chance(3.0), "{}", r.render());
        assert_eq!(r.predictions.len(), 200);
    }
}
