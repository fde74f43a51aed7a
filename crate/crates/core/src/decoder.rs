//! Regional convolution and the two-stage coarse-to-fine decoder.
//!
//! A region-blocked matrix is `n_regions` contiguous blocks of equal height.
//! The convolution window slides only inside a block; each block is padded at
//! its end with `N_p − 1` copies of its last row so a stride-1 pass keeps the
//! block height. Fractional strides are realised by first interpolating
//! `m − 1` rows between consecutive rows of every block.

use rand::Rng;

use crate::autodiff::{Lerp, Tape, Tensor, Var};
use crate::cloud::PointCloud;
use crate::encoder::{SoftPoolFeature, LEAKY_SLOPE};
use crate::error::{Error, Result};

/// How the window advances through a region.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stride {
    /// Take every `s`-th window (`S = s ≥ 1`).
    Every(usize),
    /// Interpolate to `m` times the rows, then convolve with stride 1 (`S = 1/m`).
    Upsample(usize),
}

/// Convolution weights, `weight: [N_p, C_in, C_out]` and `bias: [C_out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionalKernel {
    pub weight: Tensor,
    pub bias: Tensor,
    pub stride: Stride,
}

impl RegionalKernel {
    pub fn new(weight: Tensor, bias: Tensor, stride: Stride) -> Result<Self> {
        let [n_p, _, c_out] = weight.shape()[..] else {
            return Err(Error::shape(format!("kernel weight must be rank 3, got {:?}", weight.shape())));
        };
        if n_p == 0 {
            return Err(Error::input("kernel extent N_p must be at least 1"));
        }
        if bias.shape() != [c_out] {
            return Err(Error::shape(format!("bias {:?} for {c_out} outputs", bias.shape())));
        }
        match stride {
            Stride::Every(0) | Stride::Upsample(0) => {
                Err(Error::input("stride factor must be positive"))
            }
            _ => Ok(RegionalKernel {
                weight,
                bias,
                stride,
            }),
        }
    }

    pub fn init<R: Rng>(n_p: usize, c_in: usize, c_out: usize, stride: Stride, rng: &mut R) -> Result<Self> {
        let fan_in = (n_p * c_in).max(1);
        let gain = 2.0 / (1.0 + LEAKY_SLOPE * LEAKY_SLOPE);
        let bound = (3.0 * gain / fan_in as f64).sqrt();
        let data = (0..n_p * c_in * c_out)
            .map(|_| rng.gen_range(-bound..bound))
            .collect();
        Self::new(
            Tensor::from_parts(vec![n_p, c_in, c_out], data),
            Tensor::zeros(vec![c_out]),
            stride,
        )
    }

    pub fn n_p(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn c_in(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn c_out(&self) -> usize {
        self.weight.shape()[2]
    }
}

fn block_height(rows: usize, n_regions: usize) -> Result<usize> {
    if n_regions == 0 || rows % n_regions != 0 || rows == 0 {
        return Err(Error::shape(format!(
            "{rows} rows cannot be split into {n_regions} equal regions"
        )));
    }
    Ok(rows / n_regions)
}

/// Source rows of every window, `n_p` per output row, with end-of-region
/// duplicate padding.
pub fn window_indices(height: usize, n_regions: usize, n_p: usize, step: usize) -> Vec<usize> {
    let mut idx = Vec::with_capacity(n_regions * height.div_ceil(step) * n_p);
    for r in 0..n_regions {
        let start = r * height;
        for i in (0..height).step_by(step) {
            idx.extend((0..n_p).map(|k| start + (i + k).min(height - 1)));
        }
    }
    idx
}

/// Interpolation plan for [`upsample_interpolate`].
pub fn upsample_plan(height: usize, n_regions: usize, m: usize) -> Result<Vec<Lerp>> {
    if m == 0 {
        return Err(Error::input("upsample factor must be at least 1"));
    }
    if m > 1 && height < 2 {
        return Err(Error::input("upsampling needs at least two rows per region"));
    }
    let mut plan = Vec::with_capacity(n_regions * height * m);
    for r in 0..n_regions {
        let start = r * height;
        for p in 0..height - 1 {
            for s in 0..m {
                plan.push(Lerp {
                    from: start + p,
                    to: start + p + 1,
                    t: s as f64 / m as f64,
                });
            }
        }
        let last = start + height - 1;
        // the block's last row, then padding up to height · m
        for _ in 0..m {
            plan.push(Lerp {
                from: last,
                to: last,
                t: 0.0,
            });
        }
    }
    Ok(plan)
}

/// Records a regional convolution on `tape`.
pub fn regional_conv_on_tape(
    tape: &mut Tape,
    input: Var,
    n_regions: usize,
    weight: Var,
    bias: Var,
    stride: Stride,
) -> Result<Var> {
    let (rows, c_in) = tape.value(input).dims2()?;
    let [n_p, w_in, c_out] = tape.shape(weight)[..] else {
        return Err(Error::shape("kernel weight must be rank 3"));
    };
    if w_in != c_in {
        return Err(Error::shape(format!("kernel expects {w_in} channels, input has {c_in}")));
    }
    let mut height = block_height(rows, n_regions)?;
    let (x, step) = match stride {
        Stride::Every(0) | Stride::Upsample(0) => {
            return Err(Error::input("stride factor must be positive"))
        }
        Stride::Every(s) => (input, s),
        Stride::Upsample(1) => (input, 1),
        Stride::Upsample(m) => {
            let plan = upsample_plan(height, n_regions, m)?;
            height *= m;
            (tape.interpolate(input, &plan)?, 1)
        }
    };
    let idx = window_indices(height, n_regions, n_p, step);
    let out_rows = idx.len() / n_p;
    let windows = tape.gather(x, &idx)?;
    let windows = tape.reshape(windows, vec![out_rows, n_p * c_in])?;
    let w = tape.reshape(weight, vec![n_p * c_in, c_out])?;
    let y = tape.matmul(windows, w)?;
    tape.add_bias(y, bias)
}

/// Regional convolution of a region-blocked matrix.
pub fn regional_conv(features: &Tensor, n_regions: usize, kernel: &RegionalKernel) -> Result<Tensor> {
    let mut tape = Tape::new();
    let x = tape.constant(features.clone())?;
    let w = tape.constant(kernel.weight.clone())?;
    let b = tape.constant(kernel.bias.clone())?;
    let y = regional_conv_on_tape(&mut tape, x, n_regions, w, b, kernel.stride)?;
    Ok(tape.value(y).clone())
}

/// Inserts `m − 1` linearly interpolated rows between consecutive rows of
/// every region, then pads each region with its last row to `m` times its
/// original height.
pub fn upsample_interpolate(points: &Tensor, n_regions: usize, m: usize) -> Result<Tensor> {
    let (rows, _) = points.dims2()?;
    let height = block_height(rows, n_regions)?;
    let plan = upsample_plan(height, n_regions, m)?;
    let mut tape = Tape::new();
    let x = tape.constant(points.clone())?;
    let y = tape.interpolate(x, &plan)?;
    Ok(tape.value(y).clone())
}

/// Decoder layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecoderConfig {
    pub n_f: usize,
    pub n_r: usize,
    pub n_p: usize,
    /// Upsampling factor `m = 1/S₂` of the second stage.
    pub upsample: usize,
    /// Skip the Leaky ReLU on both emitted point sets.
    pub final_linear: bool,
}

impl DecoderConfig {
    pub fn coarse_count(&self) -> usize {
        self.n_f * self.n_r
    }

    pub fn fine_count(&self) -> usize {
        self.coarse_count() * self.upsample
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_f == 0 || self.n_r == 0 || self.n_p == 0 || self.upsample == 0 {
            return Err(Error::input("decoder sizes must be positive"));
        }
        if self.upsample > 1 && self.n_r < 2 {
            return Err(Error::input("upsampling needs n_r ≥ 2"));
        }
        Ok(())
    }
}

/// `W_conv` for both stages.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderParams {
    pub coarse: RegionalKernel,
    pub fine: RegionalKernel,
}

impl DecoderParams {
    pub fn init<R: Rng>(cfg: &DecoderConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        Ok(DecoderParams {
            coarse: RegionalKernel::init(cfg.n_p, cfg.n_f, 3, Stride::Every(1), rng)?,
            fine: RegionalKernel::init(cfg.n_p, 3, 3, Stride::Upsample(cfg.upsample), rng)?,
        })
    }
}

/// Handles of the decoder weights on a tape.
#[derive(Debug, Clone, Copy)]
pub struct DecoderVars {
    pub coarse_weight: Var,
    pub coarse_bias: Var,
    pub fine_weight: Var,
    pub fine_bias: Var,
}

/// Records both decoder stages; returns `(coarse, fine)` point matrices.
pub fn decode_on_tape(
    tape: &mut Tape,
    fstar: Var,
    cfg: &DecoderConfig,
    vars: &DecoderVars,
) -> Result<(Var, Var)> {
    let n_regions = cfg.n_f;
    let mut coarse = regional_conv_on_tape(
        tape,
        fstar,
        n_regions,
        vars.coarse_weight,
        vars.coarse_bias,
        Stride::Every(1),
    )?;
    if !cfg.final_linear {
        coarse = tape.leaky_relu(coarse, LEAKY_SLOPE)?;
    }
    let mut fine = regional_conv_on_tape(
        tape,
        coarse,
        n_regions,
        vars.fine_weight,
        vars.fine_bias,
        Stride::Upsample(cfg.upsample),
    )?;
    if !cfg.final_linear {
        fine = tape.leaky_relu(fine, LEAKY_SLOPE)?;
    }
    Ok((coarse, fine))
}

/// Decodes `F*` into the coarse and fine point clouds.
pub fn decode(
    fstar: &SoftPoolFeature,
    params: &DecoderParams,
    cfg: &DecoderConfig,
) -> Result<(PointCloud, PointCloud)> {
    if fstar.n_f() != cfg.n_f {
        return Err(Error::shape(format!(
            "feature has {} regions, decoder expects {}",
            fstar.n_f(),
            cfg.n_f
        )));
    }
    let mut tape = Tape::new();
    let x = tape.constant(fstar.to_tensor())?;
    let vars = DecoderVars {
        coarse_weight: tape.constant(params.coarse.weight.clone())?,
        coarse_bias: tape.constant(params.coarse.bias.clone())?,
        fine_weight: tape.constant(params.fine.weight.clone())?,
        fine_bias: tape.constant(params.fine.bias.clone())?,
    };
    let (c, f) = decode_on_tape(&mut tape, x, cfg, &vars)?;
    Ok((
        PointCloud::from_flat(tape.value(c).data())?,
        PointCloud::from_flat(tape.value(f).data())?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    // Direct transcription of the windowed sum with explicit padding.
    fn naive_conv(x: &Tensor, n_regions: usize, k: &RegionalKernel) -> Vec<f64> {
        let (rows, c_in) = x.dims2().unwrap();
        let (n_p, c_out) = (k.n_p(), k.c_out());
        let h = rows / n_regions;
        let w = k.weight.data();
        let mut out = Vec::new();
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

    #[test]
    fn pointwise_identity_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = random(&mut rng, vec![6, 3]);
        let mut w = vec![0.0; 9];
        for i in 0..3 {
            w[i * 3 + i] = 1.0;
        }
        let k = RegionalKernel::new(
            Tensor::new(vec![1, 3, 3], w).unwrap(),
            Tensor::zeros(vec![3]),
            Stride::Every(1),
        )
        .unwrap();
        assert_eq!(regional_conv(&x, 2, &k).unwrap(), x);
    }

    #[test]
    fn full_stage_one_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random(&mut rng, vec![256, 8]);
        let k = RegionalKernel::init(32, 8, 3, Stride::Every(1), &mut rng).unwrap();
        assert_eq!(regional_conv(&x, 8, &k).unwrap().shape(), &[256, 3]);
    }

    #[test]
    fn matches_naive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let x = random(&mut rng, vec![8, 3]);
            let k = RegionalKernel::new(random(&mut rng, vec![2, 3, 2]), random(&mut rng, vec![2]), Stride::Every(1)).unwrap();
            let got = regional_conv(&x, 2, &k).unwrap();
            for (a, b) in got.data().iter().zip(naive_conv(&x, 2, &k)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn strided_windows() {
        assert_eq!(window_indices(4, 1, 2, 2), vec![0, 1, 2, 3]);
        assert_eq!(window_indices(3, 2, 2, 1), vec![0, 1, 1, 2, 2, 2, 3, 4, 4, 5, 5, 5]);
    }

    #[test]
    fn misaligned_blocks_rejected() {
        let x = Tensor::zeros(vec![7, 3]);
        let k = RegionalKernel::new(Tensor::zeros(vec![1, 3, 3]), Tensor::zeros(vec![3]), Stride::Every(1)).unwrap();
        assert!(matches!(regional_conv(&x, 2, &k), Err(Error::InvalidShape(_))));
    }

    #[test]
    fn interpolation_rules() {
        let x = Tensor::matrix(2, 3, vec![0.0, 0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        let up = upsample_interpolate(&x, 1, 4).unwrap();
        let xs: Vec<f64> = up.data().chunks(3).map(|r| r[0]).collect();
        assert_eq!(xs, vec![0.0, 0.25, 0.5, 0.75, 1.0, 1.0, 1.0, 1.0]);
        assert_eq!(upsample_interpolate(&x, 1, 1).unwrap(), x);
        assert!(matches!(upsample_interpolate(&x, 1, 0), Err(Error::InvalidInput(_))));
        let big = Tensor::zeros(vec![256, 3]);
        assert_eq!(upsample_interpolate(&big, 8, 64).unwrap().shape(), &[16384, 3]);
    }

    #[test]
    fn no_cross_region_leakage() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random(&mut rng, vec![12, 4]);
        let k = RegionalKernel::init(3, 4, 3, Stride::Every(1), &mut rng).unwrap();
        let base = regional_conv(&x, 3, &k).unwrap();
        let mut zeroed = x.clone();
        zeroed.data_mut()[4 * 4..8 * 4].fill(0.0);
        let out = regional_conv(&zeroed, 3, &k).unwrap();
        assert_eq!(base.data()[..12], out.data()[..12]);
        assert_eq!(base.data()[24..], out.data()[24..]);
        assert_ne!(base.data()[12..24], out.data()[12..24]);
    }

    #[test]
    fn decoder_resolutions() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for (m, fine) in [(64, 16384), (8, 2048)] {
            let cfg = DecoderConfig { n_f: 8, n_r: 32, n_p: 32, upsample: m, final_linear: false };
            let params = DecoderParams::init(&cfg, &mut rng).unwrap();
            let fstar = {
                let f = crate::encoder::FeatureMatrix::new(8, vec![0.125; 1024 * 8]).unwrap();
                crate::encoder::softpool(&crate::encoder::sort_features(&f), 32).unwrap()
            };
            let (c, f) = decode(&fstar, &params, &cfg).unwrap();
            assert_eq!((c.len(), f.len()), (256, fine));
        }
    }
}
