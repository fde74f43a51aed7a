//! The invariant suite behind the `check-grad` command: gradient checks,
//! permutation fuzzing, oracle equivalences and thread-count determinism.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{finite_diff_check, tape_gradients, tape_value, Tape, Tensor, Var};
use crate::cloud::{self, PointCloud, Rows};
use crate::decoder::{regional_conv, RegionalKernel, Stride};
use crate::encoder::{pointnet_feature, sort_features, softpool, FeatureMatrix};
use crate::error::Result;
use crate::losses;
use crate::model::{batch_gradients, predict, sample_loss_on_tape, LossConfig, ModelConfig, ModelParams, Sample};
use crate::{oracle, par};

/// Relative tolerance of every gradient check.
pub const GRAD_TOLERANCE: f64 = 1e-4;
pub const GRAD_STEP: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CheckReport {
    pub results: Vec<CheckResult>,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.results.iter().all(|r| r.passed)
    }

    pub fn failures(&self) -> Vec<&CheckResult> {
        self.results.iter().filter(|r| !r.passed).collect()
    }

    fn push(&mut self, name: &str, outcome: Result<(bool, String)>) {
        let (passed, detail) = outcome.unwrap_or_else(|e| (false, format!("error: {e}")));
        self.results.push(CheckResult {
            name: name.to_string(),
            passed,
            detail,
        });
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for r in &self.results {
            out.push_str(&format!("{} {:<28} {}\n", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOptions {
    pub seed: u64,
    /// Input shuffles in the permutation fuzz.
    pub shuffles: usize,
    /// Random instances per oracle comparison.
    pub oracle_cases: usize,
    /// Threads compared against a single thread.
    pub threads: usize,
    /// Flips the sign of the analytic `L_intra` gradient, to show that the
    /// gradient check catches it.
    pub inject_intra_sign_error: bool,
}

impl Default for CheckOptions {
    fn default() -> Self {
        CheckOptions {
            seed: 0,
            shuffles: 100,
            oracle_cases: 200,
            threads: 4,
            inject_intra_sign_error: false,
        }
    }
}

/// Small network used by the gradient checks: 32 input points.
pub fn toy_model() -> ModelConfig {
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

fn random_cloud(rng: &mut ChaCha8Rng, n: usize) -> PointCloud {
    PointCloud::new(
        (0..n)
            .map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
            .collect(),
    )
    .expect("finite")
}

pub fn toy_batch(seed: u64, size: usize) -> Vec<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..size)
        .map(|_| Sample {
            partial: random_cloud(&mut rng, 32),
            complete: random_cloud(&mut rng, 48),
        })
        .collect()
}

fn matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Tensor {
    Tensor::new(vec![rows, cols], (0..rows * cols).map(|_| rng.gen_range(lo..hi)).collect()).expect("finite")
}

fn grad_check<F>(params: &[Tensor], build: F, negate: bool) -> Result<(bool, String)>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let (_, mut analytic) = tape_gradients(params, &build)?;
    if negate {
        for g in &mut analytic {
            for v in g.data_mut() {
                *v = -*v;
            }
        }
    }
    let r = finite_diff_check(params, &analytic, GRAD_STEP, |p| tape_value(p, &build))?;
    Ok((
        r.passes(GRAD_TOLERANCE),
        format!("max rel error {:.2e} over {} coordinates", r.max_rel_error, r.checked),
    ))
}

/// Finite-difference checks of every loss term and of the full objective.
pub fn gradient_checks(opts: &CheckOptions, report: &mut CheckReport) {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let a = Tensor::from(random_cloud(&mut rng, 32));
    let coarse = Tensor::from(random_cloud(&mut rng, 8));
    let gt = random_cloud(&mut rng, 48);
    report.push(
        "grad/complete",
        grad_check(&[a, coarse], |t, v| losses::complete_on_tape(t, v[0], Some(v[1]), &gt, 1), false),
    );
    let f = matrix(&mut rng, 16, 8, 0.05, 1.0);
    report.push("grad/inter", grad_check(&[f.clone()], |t, v| losses::inter_on_tape(t, v[0]), false));
    report.push(
        "grad/intra",
        grad_check(&[f], |t, v| losses::intra_on_tape(t, v[0]), opts.inject_intra_sign_error),
    );
    let pts = Tensor::from(random_cloud(&mut rng, 32));
    let feats = {
        let raw = matrix(&mut rng, 32, 3, -1.5, 1.5);
        let mut tape = Tape::new();
        let x = tape.constant(raw).expect("finite");
        let s = tape.softmax(x).expect("finite");
        tape.value(s).data().to_vec()
    };
    report.push(
        "grad/boundary",
        grad_check(&[pts], |t, v| losses::boundary_on_tape(t, v[0], &feats, 3, losses::DEFAULT_TAU), false),
    );
    let g = matrix(&mut rng, 24, 4, 0.05, 1.0);
    let sources: Vec<usize> = (0..24).step_by(3).chain([1, 2, 4, 5]).collect();
    report.push(
        "grad/preserve",
        grad_check(
            &[g],
            |t, v| {
                let star = t.gather(v[0], &sources)?;
                losses::preserve_on_tape(t, v[0], star, 10, 3)
            },
            false,
        ),
    );
    let cfg = toy_model();
    let loss = LossConfig::default();
    let batch = toy_batch(opts.seed.wrapping_add(1), 2);
    report.push(
        "grad/total",
        (|| {
            let params = ModelParams::init(&cfg, opts.seed)?;
            grad_check(
                params.tensors(),
                |t, v| {
                    let mut sum: Option<Var> = None;
                    for s in &batch {
                        let (_, total) = sample_loss_on_tape(t, &cfg, &loss, v, s)?;
                        sum = Some(match sum {
                            Some(acc) => t.add(acc, total)?,
                            None => total,
                        });
                    }
                    t.scale(sum.expect("non-empty batch"), 1.0 / batch.len() as f64)
                },
                false,
            )
        })(),
    );
}

/// Shuffled inputs must give bit-identical `F*`, coarse and fine outputs.
pub fn permutation_fuzz(cfg: &ModelConfig, params: &ModelParams, input: &PointCloud, shuffles: usize, seed: u64) -> Result<(bool, String)> {
    let base = predict(cfg, params, input, seed)?;
    for s in 0..shuffles {
        let p = predict(cfg, params, &input.shuffled(seed.wrapping_add(s as u64 + 1)), seed)?;
        if p.fstar != base.fstar || p.coarse != base.coarse || p.fine != base.fine {
            return Ok((false, format!("shuffle {s} changed the output")));
        }
    }
    Ok((true, format!("{shuffles} shuffles identical")))
}

/// `chamfer` and `chamfer_accelerated` against the brute-force oracle.
pub fn oracle_chamfer(cases: usize, seed: u64) -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let (na, nb) = (rng.gen_range(1..60), rng.gen_range(1..60));
        let a = random_cloud(&mut rng, na);
        let b = random_cloud(&mut rng, nb);
        let exact = oracle::chamfer(a.points(), b.points());
        worst = worst.max((cloud::chamfer(&a, &b)? - exact).abs());
        worst = worst.max((cloud::chamfer_accelerated(&a, &b)? - exact).abs());
    }
    Ok((worst <= 1e-12, format!("{cases} cases, worst deviation {worst:.1e}")))
}

/// Exact assignment against enumeration of every permutation, sizes 1..=8.
pub fn oracle_earth_mover(cases: usize, seed: u64) -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xe3d);
    let mut worst = 0.0f64;
    for c in 0..cases {
        let size = 1 + c % 8;
        let d = rng.gen_range(1..5);
        let a: Vec<Vec<f64>> = (0..size).map(|_| (0..d).map(|_| rng.gen()).collect()).collect();
        let b: Vec<Vec<f64>> = (0..size).map(|_| (0..d).map(|_| rng.gen()).collect()).collect();
        let (fa, fb) = (a.concat(), b.concat());
        let got = cloud::earth_mover(Rows::new(&fa, d)?, Rows::new(&fb, d)?)?;
        worst = worst.max((got - oracle::earth_mover(&a, &b)).abs());
    }
    Ok((worst <= 1e-12, format!("{cases} cases up to n = 8, worst {worst:.1e}")))
}

/// Regional convolution against the nested-loop oracle, with tail padding
/// whenever the kernel is taller than one row.
pub fn oracle_regional_conv(cases: usize, seed: u64) -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xc0f);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let regions = rng.gen_range(1..4);
        let h = rng.gen_range(1..6);
        let (c_in, c_out, n_p) = (rng.gen_range(1..5), rng.gen_range(1..4), rng.gen_range(1..7));
        let x = matrix(&mut rng, regions * h, c_in, -1.0, 1.0);
        let w = Tensor::new(vec![n_p, c_in, c_out], (0..n_p * c_in * c_out).map(|_| rng.gen_range(-1.0..1.0)).collect())?;
        let b = Tensor::new(vec![c_out], (0..c_out).map(|_| rng.gen_range(-1.0..1.0)).collect())?;
        let k = RegionalKernel::new(w, b, Stride::Every(1))?;
        let got = regional_conv(&x, regions, &k)?;
        for (g, e) in got.data().iter().zip(oracle::regional_conv(&x, regions, &k)) {
            worst = worst.max((g - e).abs());
        }
    }
    Ok((worst <= 1e-12, format!("{cases} cases, worst deviation {worst:.1e}")))
}

/// The max-pooled feature is the column max of `F` and each of its values
/// appears in `F*`.
pub fn pointnet_subset(cases: usize, seed: u64) -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e7);
    for _ in 0..cases {
        let rows = rng.gen_range(8..40);
        let n_f = rng.gen_range(1..9);
        let data: Vec<f64> = (0..rows * n_f).map(|_| rng.gen()).collect();
        let f = FeatureMatrix::new(n_f, data)?;
        let sorted = sort_features(&f);
        let pn = pointnet_feature(&sorted);
        if pn != oracle::column_max(f.data(), n_f) {
            return Ok((false, "pointnet feature differs from the column max".into()));
        }
        let pooled = softpool(&sorted, rng.gen_range(1..=rows))?;
        let present = pn.iter().enumerate().all(|(k, v)| pooled.data().chunks_exact(n_f).any(|r| r[k] == *v));
        if !present {
            return Ok((false, "a pointnet value is missing from F*".into()));
        }
    }
    Ok((true, format!("{cases} random feature matrices")))
}

fn oracle_checks(opts: &CheckOptions, report: &mut CheckReport) {
    let n = opts.oracle_cases;
    report.push("oracle/chamfer", oracle_chamfer(n, opts.seed));
    report.push("oracle/earth_mover", oracle_earth_mover((n / 10).max(8), opts.seed));
    report.push("oracle/regional_conv", oracle_regional_conv(n, opts.seed));
    report.push("oracle/pointnet_subset", pointnet_subset(n, opts.seed));
}

/// Uniform and one-hot features hit the ends of both entropy terms.
pub fn entropy_bounds() -> Result<(bool, String)> {
    let mut worst = 0.0f64;
    for n_f in [2usize, 4, 8, 16, 32] {
        let log = (n_f as f64).ln();
        let uniform = FeatureMatrix::new(n_f, vec![1.0 / n_f as f64; 32 * n_f])?;
        let mut hot = vec![0.0; 32 * n_f];
        for r in 0..32 {
            hot[r * n_f] = 1.0;
        }
        let hot = FeatureMatrix::new(n_f, hot)?;
        worst = worst
            .max(losses::loss_inter(&[uniform.clone()])?.abs())
            .max((losses::loss_intra(&[uniform])? - log).abs())
            .max(losses::loss_intra(&[hot.clone()])?.abs())
            .max((losses::loss_inter(&[hot])? - log).abs());
    }
    Ok((worst <= 1e-9, format!("worst deviation {worst:.1e}")))
}

/// Loss and gradients of one toy batch at `threads` threads and at one thread.
pub fn thread_determinism(threads: usize, seed: u64) -> Result<(bool, String)> {
    let cfg = toy_model();
    let loss = LossConfig::default();
    let params = ModelParams::init(&cfg, seed)?;
    let batch = toy_batch(seed.wrapping_add(7), 8);
    let refs: Vec<&Sample> = batch.iter().collect();
    let one = par::with_threads(1, || batch_gradients(&cfg, &loss, &params, &refs))?;
    let many = par::with_threads(threads, || batch_gradients(&cfg, &loss, &params, &refs))?;
    let same = one.0 == many.0 && one.1 == many.1;
    Ok((same, format!("1 vs {threads} threads: total {} vs {}", one.0.total, many.0.total)))
}

/// Runs the whole suite.
pub fn run_checks(opts: &CheckOptions) -> CheckReport {
    let mut report = CheckReport::default();
    gradient_checks(opts, &mut report);
    let cfg = ModelConfig {
        n_in: 1024,
        hidden: vec![16, 16],
        n_f: 8,
        n_r: 32,
        row_offset: 0,
        n_p: 32,
        upsample: 8,
        final_linear: false,
    };
    report.push(
        "permutation/end_to_end",
        (|| {
            let params = ModelParams::init(&cfg, opts.seed)?;
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            let input = random_cloud(&mut rng, 1024);
            permutation_fuzz(&cfg, &params, &input, opts.shuffles, opts.seed)
        })(),
    );
    oracle_checks(opts, &mut report);
    report.push("entropy/bounds", entropy_bounds());
    report.push("determinism/threads", thread_determinism(opts.threads, opts.seed));
    report
}
