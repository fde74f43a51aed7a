//! Training loop, checkpoint files and completion evaluation.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{read_checkpoint, write_checkpoint, OptimizerState};
use crate::cloud;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::losses::LossBreakdown;
use crate::metrics::{CompletionCase, EvalReport};
use crate::model::{batch_gradients, predict, ModelConfig, ModelParams, Prediction, Sample};
use crate::par;

pub const CHECKPOINT_FILE: &str = "checkpoint.spn";
pub const LOSS_FILE: &str = "loss.csv";
pub const CONFIG_FILE: &str = "config.txt";

/// Writes `params` to `path` through a temporary file, so an interrupted
/// write never replaces a good checkpoint.
pub fn save_params(path: &Path, params: &ModelParams) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut out = BufWriter::new(File::create(&tmp)?);
        write_checkpoint(&mut out, &params.named())?;
        out.flush()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_params(path: &Path, cfg: &ModelConfig) -> Result<ModelParams> {
    let named = read_checkpoint(BufReader::new(File::open(path)?))?;
    ModelParams::from_named(cfg, named)
}

/// Where a training run writes its files.
#[derive(Debug, Clone)]
pub struct RunFiles {
    pub dir: PathBuf,
    pub checkpoint: PathBuf,
}

impl RunFiles {
    pub fn new(dir: &Path, cfg: &RunConfig) -> Self {
        RunFiles {
            dir: dir.to_path_buf(),
            checkpoint: cfg.checkpoint.clone().unwrap_or_else(|| dir.join(CHECKPOINT_FILE)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub steps: u64,
    /// Batch-mean losses, one per step.
    pub history: Vec<LossBreakdown>,
    /// Mean of the step losses of each epoch.
    pub epoch_means: Vec<LossBreakdown>,
}

/// Runs `cfg.epochs` epochs of Adam over `samples` starting from `params`.
///
/// Each epoch visits the samples in a seeded shuffled order, in batches of
/// `batch_size` (the last batch may be short). With `files`, one CSV row is
/// written per step and the checkpoint is replaced after every epoch. A
/// non-finite value aborts the run with the previous checkpoint intact.
pub fn train(
    cfg: &RunConfig,
    mut params: ModelParams,
    samples: &[Sample],
    files: Option<&RunFiles>,
    mut on_epoch: impl FnMut(usize, &LossBreakdown),
) -> Result<(ModelParams, TrainReport)> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::input("no training samples"));
    }
    let model = cfg.model();
    let loss = cfg.loss();
    let mut opt = OptimizerState::new(cfg.adam(), params.tensors());
    let mut log = match files {
        Some(f) => {
            fs::create_dir_all(&f.dir)?;
            fs::write(f.dir.join(CONFIG_FILE), cfg.to_text())?;
            let mut w = BufWriter::new(File::create(f.dir.join(LOSS_FILE))?);
            writeln!(w, "{}", LossBreakdown::CSV_HEADER)?;
            Some(w)
        }
        None => None,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut report = TrainReport {
        steps: 0,
        history: Vec::new(),
        epoch_means: Vec::new(),
    };
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let first = report.history.len();
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &samples[i]).collect();
            let (b, grads) = batch_gradients(&model, &loss, &params, &batch).map_err(|e| match e {
                Error::Numeric(m) => Error::Numeric(format!("epoch {epoch}, step {}: {m}", report.steps)),
                other => other,
            })?;
            if !b.total.is_finite() {
                return Err(Error::Numeric(format!("non-finite loss at step {}", report.steps)));
            }
            opt.step(params.tensors_mut(), &grads)?;
            if let Some(w) = log.as_mut() {
                writeln!(w, "{}", b.csv_row(report.steps))?;
            }
            report.steps += 1;
            report.history.push(b);
        }
        let mean = LossBreakdown::mean(&report.history[first..])?;
        on_epoch(epoch, &mean);
        report.epoch_means.push(mean);
        if let (Some(f), Some(w)) = (files, log.as_mut()) {
            w.flush()?;
            save_params(&f.checkpoint, &params)?;
        }
    }
    if let Some(mut w) = log {
        w.flush()?;
    }
    Ok((params, report))
}

/// Predictions for every sample, in parallel.
pub fn predict_all(cfg: &ModelConfig, params: &ModelParams, samples: &[&Sample], seed: u64) -> Result<Vec<Prediction>> {
    par::map_range(samples.len(), |i| predict(cfg, params, &samples[i].partial, seed))
        .into_iter()
        .collect()
}

/// Mean Chamfer distance between the fine output and the complete cloud.
pub fn mean_chamfer(cfg: &ModelConfig, params: &ModelParams, samples: &[&Sample], seed: u64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::input("no samples to evaluate"));
    }
    let preds = predict_all(cfg, params, samples, seed)?;
    let d = par::map_range(samples.len(), |i| cloud::chamfer_accelerated(&preds[i].fine, &samples[i].complete));
    let mut sum = 0.0;
    for v in d {
        sum += v?;
    }
    Ok(sum / samples.len() as f64)
}

/// Per-class completion report over labelled samples.
pub fn evaluate(
    method: &str,
    cfg: &RunConfig,
    params: &ModelParams,
    samples: &[(String, &Sample)],
) -> Result<(EvalReport, Vec<Prediction>)> {
    let refs: Vec<&Sample> = samples.iter().map(|s| s.1).collect();
    let preds = predict_all(&cfg.model(), params, &refs, cfg.seed)?;
    let cases: Vec<CompletionCase<'_>> = samples
        .iter()
        .zip(&preds)
        .map(|((class, s), p)| CompletionCase {
            class,
            output: &p.fine,
            truth: &s.complete,
        })
        .collect();
    let mut report = EvalReport::from_cases(method, &cases, cfg.emd_samples, cfg.seed)?;
    let fid = par::map_range(samples.len(), |i| crate::metrics::fidelity(&samples[i].1.partial, &preds[i].fine));
    let mut sum = 0.0;
    for v in fid {
        sum += v?;
    }
    report.fidelity = Some(sum / samples.len() as f64);
    Ok((report, preds))
}
