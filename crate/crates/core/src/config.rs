//! Run configuration: a flat `key = value` text format with overrides.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::autodiff::AdamConfig;
use crate::error::{Error, Result};
use crate::losses::{LossWeights, DEFAULT_TAU, PRESERVE_SAMPLES};
use crate::model::{LossConfig, ModelConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub n_in: usize,
    pub hidden: Vec<usize>,
    pub n_f: usize,
    pub n_r: usize,
    pub row_offset: usize,
    pub n_p: usize,
    pub upsample: usize,
    pub final_linear: bool,
    pub tau: f64,
    pub weights: LossWeights,
    pub preserve_samples: usize,
    /// Drops the coarse supervision term from the completion loss.
    pub fine_only_loss: bool,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub train_manifest: Option<PathBuf>,
    pub test_manifest: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub emd_samples: usize,
    pub svm_lambda: f64,
    pub svm_epochs: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig::full()
    }
}

/// Named starting points for a configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    /// Full-size network: 512-wide hidden layers, 16,384 output points.
    Full,
    /// Small enough to train in minutes on a CPU: 2,048 output points.
    Desk,
}

impl Profile {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Profile::Full),
            "desk" => Ok(Profile::Desk),
            _ => Err(Error::Config(format!("unknown profile {s:?} (expected full or desk)"))),
        }
    }

    pub fn config(self) -> RunConfig {
        match self {
            Profile::Full => RunConfig::full(),
            Profile::Desk => RunConfig::desk(),
        }
    }
}

fn parse_bool(v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("expected a boolean, got {v:?}"))),
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

fn parse_path(v: &str) -> Option<PathBuf> {
    (!v.is_empty()).then(|| PathBuf::from(v))
}

impl RunConfig {
    pub fn full() -> Self {
        RunConfig {
            n_in: 1024,
            hidden: vec![512, 512],
            n_f: 8,
            n_r: 32,
            row_offset: 0,
            n_p: 32,
            upsample: 64,
            final_linear: false,
            tau: DEFAULT_TAU,
            weights: LossWeights::default(),
            preserve_samples: PRESERVE_SAMPLES,
            fine_only_loss: false,
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 8,
            epochs: 50,
            seed: 0,
            train_manifest: None,
            test_manifest: None,
            checkpoint: None,
            emd_samples: 512,
            svm_lambda: 1e-3,
            svm_epochs: 200,
        }
    }

    pub fn desk() -> Self {
        RunConfig {
            hidden: vec![64, 64],
            upsample: 8,
            lr: 1e-3,
            ..RunConfig::full()
        }
    }

    pub fn coarse_count(&self) -> usize {
        self.n_f * self.n_r
    }

    pub fn fine_count(&self) -> usize {
        self.coarse_count() * self.upsample
    }

    pub fn model(&self) -> ModelConfig {
        ModelConfig {
            n_in: self.n_in,
            hidden: self.hidden.clone(),
            n_f: self.n_f,
            n_r: self.n_r,
            row_offset: self.row_offset,
            n_p: self.n_p,
            upsample: self.upsample,
            final_linear: self.final_linear,
        }
    }

    pub fn loss(&self) -> LossConfig {
        LossConfig {
            weights: self.weights,
            tau: self.tau,
            coarse_term: !self.fine_only_loss,
            preserve_samples: self.preserve_samples,
            seed: self.seed,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model().validate()?;
        self.weights.validate().map_err(|e| Error::Config(e.to_string()))?;
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::Config(format!("tau must be in (0, 1), got {}", self.tau)));
        }
        if self.batch_size == 0 || self.preserve_samples == 0 || self.emd_samples == 0 {
            return Err(Error::Config("batch_size, preserve_samples and emd_samples must be positive".into()));
        }
        if self.preserve_samples > 1024 || self.emd_samples > 1024 {
            return Err(Error::Config("exact transport is limited to 1024 samples".into()));
        }
        let adam_ok = self.lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if !adam_ok {
            return Err(Error::Config("optimizer settings out of range".into()));
        }
        if !(self.svm_lambda > 0.0) || self.svm_epochs == 0 {
            return Err(Error::Config("svm_lambda and svm_epochs must be positive".into()));
        }
        Ok(())
    }

    /// Sets one key. `coarse_count` and `fine_count` are derived, so they are
    /// handled by [`RunConfig::parse_pairs`] instead.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "n_in" => self.n_in = parse_num(key, v)?,
            "hidden" => {
                self.hidden = v
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(|s| parse_num(key, s.trim()))
                    .collect::<Result<_>>()?
            }
            "n_f" => self.n_f = parse_num(key, v)?,
            "n_r" => self.n_r = parse_num(key, v)?,
            "row_offset" => self.row_offset = parse_num(key, v)?,
            "n_p" => self.n_p = parse_num(key, v)?,
            "upsample" => self.upsample = parse_num(key, v)?,
            "final_linear" => self.final_linear = parse_bool(v)?,
            "tau" => self.tau = parse_num(key, v)?,
            "w_complete" => self.weights.complete = parse_num(key, v)?,
            "w_inter" => self.weights.inter = parse_num(key, v)?,
            "w_intra" => self.weights.intra = parse_num(key, v)?,
            "w_boundary" => self.weights.boundary = parse_num(key, v)?,
            "w_preserve" => self.weights.preserve = parse_num(key, v)?,
            "preserve_samples" => self.preserve_samples = parse_num(key, v)?,
            "fine_only_loss" => self.fine_only_loss = parse_bool(v)?,
            "lr" => self.lr = parse_num(key, v)?,
            "beta1" => self.beta1 = parse_num(key, v)?,
            "beta2" => self.beta2 = parse_num(key, v)?,
            "eps" => self.eps = parse_num(key, v)?,
            "batch_size" => self.batch_size = parse_num(key, v)?,
            "epochs" => self.epochs = parse_num(key, v)?,
            "seed" => self.seed = parse_num(key, v)?,
            "train_manifest" => self.train_manifest = parse_path(v),
            "test_manifest" => self.test_manifest = parse_path(v),
            "checkpoint" => self.checkpoint = parse_path(v),
            "emd_samples" => self.emd_samples = parse_num(key, v)?,
            "svm_lambda" => self.svm_lambda = parse_num(key, v)?,
            "svm_epochs" => self.svm_epochs = parse_num(key, v)?,
            "profile" => *self = Profile::parse(v)?.config(),
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Applies `pairs` in order on top of `self`, then checks the derived
    /// counts and validates. `fine_count` may be given instead of `upsample`.
    pub fn parse_pairs<'a>(mut self, pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self> {
        let mut coarse = None;
        let mut fine = None;
        for (k, v) in pairs {
            match k.trim() {
                "coarse_count" => coarse = Some(parse_num::<usize>(k, v.trim())?),
                "fine_count" => fine = Some(parse_num::<usize>(k, v.trim())?),
                _ => self.set(k, v)?,
            }
        }
        if let Some(c) = coarse {
            if c != self.coarse_count() {
                return Err(Error::Config(format!(
                    "coarse_count {c} does not equal n_f·n_r = {}",
                    self.coarse_count()
                )));
            }
        }
        if let Some(f) = fine {
            let c = self.coarse_count();
            if c == 0 || f % c != 0 || f == 0 {
                return Err(Error::Config(format!("fine_count {f} is not a multiple of {c}")));
            }
            self.upsample = f / c;
        }
        self.validate()?;
        Ok(self)
    }

    /// Parses the text format on top of `base`.
    pub fn parse_text(base: RunConfig, text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
            pairs.push((k, v));
        }
        base.parse_pairs(pairs)
    }

    /// Reads `path` (if any) over `base`, then applies `overrides`.
    pub fn load(base: RunConfig, path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut text = match path {
            Some(p) => fs::read_to_string(p)?,
            None => String::new(),
        };
        for (k, v) in overrides {
            let _ = writeln!(text, "{k} = {v}");
        }
        RunConfig::parse_text(base, &text)
    }

    /// Every key, one per line; derived counts are written as comments.
    pub fn to_text(&self) -> String {
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let hidden: Vec<String> = self.hidden.iter().map(ToString::to_string).collect();
        let w = &self.weights;
        let mut s = String::new();
        let _ = writeln!(s, "# coarse_count = {}", self.coarse_count());
        let _ = writeln!(s, "# fine_count = {}", self.fine_count());
        let entries: Vec<(&str, String)> = vec![
            ("n_in", self.n_in.to_string()),
            ("hidden", hidden.join(",")),
            ("n_f", self.n_f.to_string()),
            ("n_r", self.n_r.to_string()),
            ("row_offset", self.row_offset.to_string()),
            ("n_p", self.n_p.to_string()),
            ("upsample", self.upsample.to_string()),
            ("final_linear", self.final_linear.to_string()),
            ("tau", self.tau.to_string()),
            ("w_complete", w.complete.to_string()),
            ("w_inter", w.inter.to_string()),
            ("w_intra", w.intra.to_string()),
            ("w_boundary", w.boundary.to_string()),
            ("w_preserve", w.preserve.to_string()),
            ("preserve_samples", self.preserve_samples.to_string()),
            ("fine_only_loss", self.fine_only_loss.to_string()),
            ("lr", self.lr.to_string()),
            ("beta1", self.beta1.to_string()),
            ("beta2", self.beta2.to_string()),
            ("eps", self.eps.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("epochs", self.epochs.to_string()),
            ("seed", self.seed.to_string()),
            ("train_manifest", path(&self.train_manifest)),
            ("test_manifest", path(&self.test_manifest)),
            ("checkpoint", path(&self.checkpoint)),
            ("emd_samples", self.emd_samples.to_string()),
            ("svm_lambda", self.svm_lambda.to_string()),
            ("svm_epochs", self.svm_epochs.to_string()),
        ];
        for (k, v) in entries {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}
