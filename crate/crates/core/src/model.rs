//! The full network: encoder, soft pool, decoder, and the per-sample
//! training objective.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Tensor, Var};
use crate::cloud::{resample, PointCloud};
use crate::decoder::{decode_on_tape, DecoderConfig, DecoderParams, DecoderVars};
use crate::encoder::{encode_on_tape, sort_features, softpool_range, EncoderParams, FeatureMatrix, SoftPoolFeature};
use crate::error::{Error, Result};
use crate::losses::{self, LossBreakdown, LossWeights};
use crate::par;

/// Network layout.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    /// Points fed to the encoder after resampling.
    pub n_in: usize,
    pub hidden: Vec<usize>,
    pub n_f: usize,
    pub n_r: usize,
    /// First sorted row taken into `F*` (0 keeps the top rows).
    pub row_offset: usize,
    pub n_p: usize,
    pub upsample: usize,
    pub final_linear: bool,
}

impl ModelConfig {
    pub fn decoder(&self) -> DecoderConfig {
        DecoderConfig {
            n_f: self.n_f,
            n_r: self.n_r,
            n_p: self.n_p,
            upsample: self.upsample,
            final_linear: self.final_linear,
        }
    }

    pub fn coarse_count(&self) -> usize {
        self.n_f * self.n_r
    }

    pub fn fine_count(&self) -> usize {
        self.coarse_count() * self.upsample
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_in == 0 || self.hidden.iter().any(|&h| h == 0) {
            return Err(Error::Config("n_in and hidden widths must be positive".into()));
        }
        if self.n_r == 0 || self.row_offset + self.n_r > self.n_in {
            return Err(Error::Config(format!(
                "rows {}..{} of F′ do not fit in {} points",
                self.row_offset + 1,
                self.row_offset + self.n_r,
                self.n_in
            )));
        }
        self.decoder().validate().map_err(|e| Error::Config(e.to_string()))
    }

    /// `(name, shape)` of every parameter tensor, in storage order.
    pub fn param_layout(&self) -> Vec<(String, Vec<usize>)> {
        let mut widths = vec![3];
        widths.extend_from_slice(&self.hidden);
        widths.push(self.n_f);
        let mut out = Vec::new();
        for (i, w) in widths.windows(2).enumerate() {
            out.push((format!("encoder.l{i}.weight"), vec![w[0], w[1]]));
            out.push((format!("encoder.l{i}.bias"), vec![w[1]]));
        }
        out.push(("decoder.coarse.weight".into(), vec![self.n_p, self.n_f, 3]));
        out.push(("decoder.coarse.bias".into(), vec![3]));
        out.push(("decoder.fine.weight".into(), vec![self.n_p, 3, 3]));
        out.push(("decoder.fine.bias".into(), vec![3]));
        out
    }
}

/// `W_point` and `W_conv` as one ordered list of named tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ModelParams {
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let enc = EncoderParams::init(&cfg.hidden, cfg.n_f, &mut rng)?;
        let dec = DecoderParams::init(&cfg.decoder(), &mut rng)?;
        let mut tensors = Vec::new();
        for l in enc.layers {
            tensors.push(l.weight);
            tensors.push(l.bias);
        }
        for k in [dec.coarse, dec.fine] {
            tensors.push(k.weight);
            tensors.push(k.bias);
        }
        let names = cfg.param_layout().into_iter().map(|(n, _)| n).collect();
        Ok(ModelParams { names, tensors })
    }

    /// Rebuilds parameters from named tensors, checking them against `cfg`.
    pub fn from_named(cfg: &ModelConfig, named: Vec<(String, Tensor)>) -> Result<Self> {
        let layout = cfg.param_layout();
        if named.len() != layout.len() {
            return Err(Error::Config(format!(
                "checkpoint has {} tensors, configuration expects {}",
                named.len(),
                layout.len()
            )));
        }
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        for ((name, t), (want, shape)) in named.into_iter().zip(layout) {
            if name != want || t.shape() != shape.as_slice() {
                return Err(Error::Config(format!(
                    "checkpoint tensor {name} {:?} does not match {want} {shape:?}",
                    t.shape()
                )));
            }
            names.push(name);
            tensors.push(t);
        }
        Ok(ModelParams { names, tensors })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn named(&self) -> Vec<(String, Tensor)> {
        self.names.iter().cloned().zip(self.tensors.iter().cloned()).collect()
    }

    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }
}

/// Tape handles of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardVars {
    pub features: Var,
    pub fstar: Var,
    pub coarse: Var,
    pub fine: Var,
    /// Value of `F*`, with the source row of each of its rows.
    pub pooled: SoftPoolFeature,
}

/// Records the network on `tape`. `params` are handles in
/// [`ModelConfig::param_layout`] order; `input` must have `n_in` points.
pub fn forward_on_tape(tape: &mut Tape, cfg: &ModelConfig, params: &[Var], input: &PointCloud) -> Result<ForwardVars> {
    if input.len() != cfg.n_in {
        return Err(Error::input(format!("expected {} input points, got {}", cfg.n_in, input.len())));
    }
    let n_enc = 2 * (cfg.hidden.len() + 1);
    if params.len() != n_enc + 4 {
        return Err(Error::shape("parameter handle count does not match the model"));
    }
    let x = tape.constant(Tensor::from(input))?;
    let layers: Vec<(Var, Var)> = params[..n_enc].chunks(2).map(|c| (c[0], c[1])).collect();
    let features = encode_on_tape(tape, x, &layers, true)?;
    let fm = FeatureMatrix::from_tensor(tape.value(features))?;
    let pooled = softpool_range(&sort_features(&fm), cfg.row_offset + 1, cfg.row_offset + cfg.n_r)?;
    let fstar = tape.gather(features, pooled.sources())?;
    let d = &params[n_enc..];
    let vars = DecoderVars {
        coarse_weight: d[0],
        coarse_bias: d[1],
        fine_weight: d[2],
        fine_bias: d[3],
    };
    let (coarse, fine) = decode_on_tape(tape, fstar, &cfg.decoder(), &vars)?;
    Ok(ForwardVars {
        features,
        fstar,
        coarse,
        fine,
        pooled,
    })
}

/// Output of an inference pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub features: FeatureMatrix,
    pub fstar: SoftPoolFeature,
    pub coarse: PointCloud,
    pub fine: PointCloud,
}

/// Resamples `partial` to `n_in` points and runs the network.
pub fn predict(cfg: &ModelConfig, params: &ModelParams, partial: &PointCloud, seed: u64) -> Result<Prediction> {
    let input = resample(partial, cfg.n_in, seed)?;
    let mut tape = Tape::new();
    let vars = params
        .tensors()
        .iter()
        .map(|t| tape.constant(t.clone()))
        .collect::<Result<Vec<_>>>()?;
    let fw = forward_on_tape(&mut tape, cfg, &vars, &input)?;
    Ok(Prediction {
        features: FeatureMatrix::from_tensor(tape.value(fw.features))?,
        fstar: fw.pooled,
        coarse: PointCloud::from_flat(tape.value(fw.coarse).data())?,
        fine: PointCloud::from_flat(tape.value(fw.fine).data())?,
    })
}

/// Objective settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub weights: LossWeights,
    pub tau: f64,
    /// Adds the coarse-resolution supervision term.
    pub coarse_term: bool,
    pub preserve_samples: usize,
    pub seed: u64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            weights: LossWeights::default(),
            tau: losses::DEFAULT_TAU,
            coarse_term: true,
            preserve_samples: losses::PRESERVE_SAMPLES,
            seed: 0,
        }
    }
}

/// One training pair; `partial` already has `n_in` points.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub partial: PointCloud,
    pub complete: PointCloud,
}

/// Term handles `[complete, inter, intra, boundary, preserve]` and the total.
pub fn sample_loss_on_tape(
    tape: &mut Tape,
    cfg: &ModelConfig,
    loss: &LossConfig,
    params: &[Var],
    sample: &Sample,
) -> Result<([Var; 5], Var)> {
    let fw = forward_on_tape(tape, cfg, params, &sample.partial)?;
    let coarse = loss.coarse_term.then_some(fw.coarse);
    let complete = losses::complete_on_tape(tape, fw.fine, coarse, &sample.complete, loss.seed)?;
    let inter = losses::inter_on_tape(tape, fw.features)?;
    let intra = losses::intra_on_tape(tape, fw.features)?;
    let boundary = losses::boundary_on_tape(tape, fw.coarse, fw.pooled.data(), cfg.n_f, loss.tau)?;
    let preserve = losses::preserve_on_tape(tape, fw.features, fw.fstar, loss.preserve_samples, loss.seed)?;
    let terms = [complete, inter, intra, boundary, preserve];
    let total = losses::total_on_tape(tape, terms, loss.weights)?;
    Ok((terms, total))
}

fn breakdown(tape: &Tape, terms: [Var; 5], weights: LossWeights) -> Result<LossBreakdown> {
    let mut t = [0.0; 5];
    for (o, v) in t.iter_mut().zip(terms) {
        *o = tape.value(v).item()?;
    }
    losses::total_loss(t, weights)
}

/// Loss of one sample, without gradients.
pub fn sample_loss(cfg: &ModelConfig, loss: &LossConfig, params: &ModelParams, sample: &Sample) -> Result<LossBreakdown> {
    let mut tape = Tape::new();
    let vars = params
        .tensors()
        .iter()
        .map(|t| tape.constant(t.clone()))
        .collect::<Result<Vec<_>>>()?;
    let (terms, _) = sample_loss_on_tape(&mut tape, cfg, loss, &vars, sample)?;
    breakdown(&tape, terms, loss.weights)
}

/// Batch-mean loss and gradients. Samples are processed in parallel, each on
/// its own tape, and summed in batch order.
pub fn batch_gradients(
    cfg: &ModelConfig,
    loss: &LossConfig,
    params: &ModelParams,
    batch: &[&Sample],
) -> Result<(LossBreakdown, Vec<Tensor>)> {
    if batch.is_empty() {
        return Err(Error::input("empty batch"));
    }
    let per_sample = par::map_range(batch.len(), |i| -> Result<(LossBreakdown, Vec<Tensor>)> {
        let mut tape = Tape::new();
        let vars = params
            .tensors()
            .iter()
            .map(|t| tape.leaf(t.clone().with_grad()))
            .collect::<Result<Vec<_>>>()?;
        let (terms, total) = sample_loss_on_tape(&mut tape, cfg, loss, &vars, batch[i])?;
        let b = breakdown(&tape, terms, loss.weights)?;
        let mut grads = tape.backward(total)?;
        let g = vars
            .iter()
            .zip(params.tensors())
            .map(|(&v, p)| grads.take(v).unwrap_or_else(|| Tensor::zeros(p.shape().to_vec())))
            .collect();
        Ok((b, g))
    });
    let scale = 1.0 / batch.len() as f64;
    let mut sums: Vec<Tensor> = params.tensors().iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect();
    let mut parts = Vec::with_capacity(batch.len());
    for r in per_sample {
        let (b, g) = r?;
        parts.push(b);
        for (s, gi) in sums.iter_mut().zip(&g) {
            for (a, v) in s.data_mut().iter_mut().zip(gi.data()) {
                *a += v;
            }
        }
    }
    for s in &mut sums {
        for v in s.data_mut() {
            *v *= scale;
        }
    }
    Ok((LossBreakdown::mean(&parts)?, sums))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::check_tape_fn;
    use rand::Rng;

    pub(crate) fn toy_config() -> ModelConfig {
        ModelConfig {
            n_in: 32,
            hidden: vec![8, 8],
            n_f: 4,
            n_r: 8,
            row_offset: 0,
            n_p: 3,
            upsample: 2,
            final_linear: false,
        }
    }

    fn toy_sample(seed: u64) -> Sample {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cloud = |n: usize| {
            PointCloud::new((0..n).map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).collect())
                .unwrap()
        };
        Sample {
            partial: cloud(32),
            complete: cloud(64),
        }
    }

    #[test]
    fn layout_and_checkpoint_names() {
        let cfg = toy_config();
        let p = ModelParams::init(&cfg, 1).unwrap();
        assert_eq!(p.names()[0], "encoder.l0.weight");
        assert_eq!(p.names().last().unwrap(), "decoder.fine.bias");
        let back = ModelParams::from_named(&cfg, p.named()).unwrap();
        assert_eq!(back, p);
        let other = ModelConfig { n_f: 8, ..cfg };
        assert!(matches!(ModelParams::from_named(&other, p.named()), Err(Error::Config(_))));
    }

    #[test]
    fn output_sizes() {
        let cfg = toy_config();
        let p = ModelParams::init(&cfg, 2).unwrap();
        let s = toy_sample(3);
        let out = predict(&cfg, &p, &s.partial, 0).unwrap();
        assert_eq!((out.coarse.len(), out.fine.len()), (32, 64));
    }

    #[test]
    fn end_to_end_gradient() {
        let cfg = toy_config();
        let loss = LossConfig { tau: 0.3, ..LossConfig::default() };
        let p = ModelParams::init(&cfg, 4).unwrap();
        let s = toy_sample(5);
        let r = check_tape_fn(p.tensors(), 1e-5, |t, v| Ok(sample_loss_on_tape(t, &cfg, &loss, v, &s)?.1)).unwrap();
        assert!(r.passes(1e-4), "{r:?}");
    }

    #[test]
    fn batch_matches_single_samples() {
        let cfg = toy_config();
        let loss = LossConfig::default();
        let p = ModelParams::init(&cfg, 6).unwrap();
        let samples: Vec<Sample> = (0..3).map(toy_sample).collect();
        let refs: Vec<&Sample> = samples.iter().collect();
        let (b, _) = batch_gradients(&cfg, &loss, &p, &refs).unwrap();
        let mean: f64 = samples.iter().map(|s| sample_loss(&cfg, &loss, &p, s).unwrap().total).sum::<f64>() / 3.0;
        assert!((b.total - mean).abs() < 1e-12);
    }
}
