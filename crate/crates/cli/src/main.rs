use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use softpool_core::ablation::{run_ablation, Sweep};
use softpool_core::check::{run_checks, CheckOptions};
use softpool_core::classify::{classify, descriptors};
use softpool_core::config::{Profile, RunConfig};
use softpool_core::metrics::{consistency, mmd};
use softpool_core::model::{predict, ModelParams, Sample};
use softpool_core::svm::SvmConfig;
use softpool_core::synth::{
    generate_pairs, load_dataset, read_cloud, scan_sequence, write_cloud, write_dataset, write_indices, DatasetSpec,
    ManifestRecord, ShapeClass,
};
use softpool_core::train::{evaluate, load_params, mean_chamfer, train, RunFiles, CHECKPOINT_FILE};
use softpool_core::{par, Error};

const EXIT_VERIFY: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_IO: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "softpool", version, about = "Soft-pool point cloud completion and classification")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// key = value config file, applied over the profile
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base settings: desk (2,048 output points) or full (16,384)
    #[arg(long, global = true, default_value = "desk")]
    profile: String,
    /// Override one config key; repeatable, wins over the file
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Train on the completion, entropy, boundary and preserve terms only
    #[arg(long, global = true)]
    fine_only_loss: bool,
    /// Worker threads (0 = all cores)
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate synthetic partial/complete scan pairs and a manifest
    Synth {
        #[arg(long, default_value_t = 200)]
        count: usize,
        /// Comma-separated classes (default: all)
        #[arg(long, value_delimiter = ',')]
        classes: Vec<String>,
        /// Index of the first pair
        #[arg(long, default_value_t = 0)]
        start: usize,
        #[arg(long, default_value = "manifest.json")]
        manifest: String,
    },
    /// Train on the train manifest; writes checkpoint, loss.csv and config.txt
    Train {
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Complete one partial scan; writes coarse and fine clouds and region sidecars
    Complete {
        input: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Linear classifier on F* descriptors, with a shuffled-label control
    Classify {
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long)]
        test: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Run one ablation sweep: tau, regions, boundary-weight or row-range
    Ablate {
        #[arg(long)]
        sweep: String,
    },
    /// Gradient checks, permutation fuzz, oracle comparisons, determinism
    #[command(name = "check-grad", alias = "check")]
    CheckGrad {
        #[arg(long, hide = true)]
        inject_intra_sign_error: bool,
    },
    /// Per-class Chamfer/EMD, fidelity, MMD and sequence consistency
    Metrics {
        #[arg(long)]
        test: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Frames per scan sequence for consistency (0 disables)
        #[arg(long, default_value_t = 5)]
        frames: usize,
        /// Yaw between consecutive frames, degrees
        #[arg(long, default_value_t = 2.0)]
        step_deg: f64,
        #[arg(long, default_value = "softpool")]
        method: String,
    },
}

/// Failure of a command, carrying its exit code.
#[derive(Debug)]
enum Failure {
    Core(Error),
    Usage(String),
    Verify(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Core(Error::Io(e))
    }
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => EXIT_USAGE,
            Failure::Verify(_) => EXIT_VERIFY,
            Failure::Core(Error::Io(_) | Error::Parse { .. }) => EXIT_IO,
            Failure::Core(Error::Config(_) | Error::InvalidInput(_)) => EXIT_USAGE,
            Failure::Core(_) => EXIT_VERIFY,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Core(e) => write!(f, "{e}"),
            Failure::Usage(m) | Failure::Verify(m) => f.write_str(m),
        }
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = cli.global.threads;
    match par::with_threads(threads, || run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}

fn run(cli: Cli) -> Outcome {
    let cfg = load_config(&cli.global)?;
    let out = &cli.global.out;
    match cli.command {
        Command::Synth {
            count,
            classes,
            start,
            manifest,
        } => cmd_synth(&cfg, out, count, &classes, start, &manifest),
        Command::Train { manifest } => cmd_train(&cfg, out, manifest),
        Command::Complete { input, checkpoint } => cmd_complete(&cfg, out, &input, checkpoint),
        Command::Classify { train, test, checkpoint } => cmd_classify(&cfg, out, train, test, checkpoint),
        Command::Ablate { sweep } => cmd_ablate(&cfg, out, &sweep),
        Command::CheckGrad { inject_intra_sign_error } => cmd_check(&cfg, threads_for_check(cli.global.threads), inject_intra_sign_error),
        Command::Metrics {
            test,
            checkpoint,
            frames,
            step_deg,
            method,
        } => cmd_metrics(&cfg, out, test, checkpoint, frames, step_deg, &method),
    }
}

fn threads_for_check(threads: usize) -> usize {
    if threads == 0 {
        4
    } else {
        threads
    }
}

fn load_config(g: &Global) -> Result<RunConfig, Failure> {
    let base = Profile::parse(&g.profile)?.config();
    let mut overrides = Vec::with_capacity(g.set.len() + 2);
    for s in &g.set {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| Failure::Usage(format!("--set expects KEY=VALUE, got {s:?}")))?;
        overrides.push((k.trim().to_string(), v.trim().to_string()));
    }
    if let Some(seed) = g.seed {
        overrides.push(("seed".into(), seed.to_string()));
    }
    if g.fine_only_loss {
        overrides.push(("fine_only_loss".into(), "true".into()));
    }
    let cfg = RunConfig::load(base, g.config.as_deref(), &overrides)?;
    cfg.validate()?;
    Ok(cfg)
}

fn required(flag: Option<PathBuf>, fallback: &Option<PathBuf>, what: &str) -> Result<PathBuf, Failure> {
    flag.or_else(|| fallback.clone())
        .ok_or_else(|| Failure::Usage(format!("no {what} given (pass the flag or set it in the config)")))
}

fn checkpoint_path(flag: Option<PathBuf>, cfg: &RunConfig) -> PathBuf {
    flag.or_else(|| cfg.checkpoint.clone())
        .unwrap_or_else(|| PathBuf::from("out").join(CHECKPOINT_FILE))
}

fn load_model(cfg: &RunConfig, flag: Option<PathBuf>) -> Result<ModelParams, Failure> {
    let path = checkpoint_path(flag, cfg);
    Ok(load_params(&path, &cfg.model())?)
}

fn samples(records: Vec<(ManifestRecord, Sample)>) -> (Vec<ManifestRecord>, Vec<Sample>) {
    records.into_iter().unzip()
}

fn cmd_synth(cfg: &RunConfig, out: &Path, count: usize, classes: &[String], start: usize, manifest: &str) -> Outcome {
    let classes = if classes.is_empty() {
        ShapeClass::ALL.to_vec()
    } else {
        classes.iter().map(|c| ShapeClass::parse(c.trim())).collect::<Result<_, _>>()?
    };
    let mut spec = DatasetSpec::new(classes, count, cfg.n_in, cfg.fine_count(), cfg.seed);
    spec.start = start;
    let pairs = generate_pairs(&spec)?;
    let path = write_dataset(out, manifest, &pairs)?;
    println!("wrote {} pairs to {}", pairs.len(), path.display());
    Ok(())
}

fn cmd_train(cfg: &RunConfig, out: &Path, manifest: Option<PathBuf>) -> Outcome {
    let manifest = required(manifest, &cfg.train_manifest, "train manifest")?;
    let (_, data) = samples(load_dataset(&manifest, cfg.n_in, cfg.seed)?);
    let files = RunFiles::new(out, cfg);
    let params = ModelParams::init(&cfg.model(), cfg.seed)?;
    println!(
        "training {} parameters on {} pairs, {} epochs of batch {}",
        params.count(),
        data.len(),
        cfg.epochs,
        cfg.batch_size
    );
    let (params, report) = train(cfg, params, &data, Some(&files), |epoch, b| {
        println!("epoch {:>3}  total {:.5}  complete {:.5}", epoch + 1, b.total, b.complete);
    })?;
    println!("{} steps; checkpoint {}", report.steps, files.checkpoint.display());
    if let Some(test) = &cfg.test_manifest {
        let (_, held) = samples(load_dataset(test, cfg.n_in, cfg.seed)?);
        let refs: Vec<&Sample> = held.iter().collect();
        let c = mean_chamfer(&cfg.model(), &params, &refs, cfg.seed)?;
        println!("holdout chamfer {:.6}", c);
    }
    Ok(())
}

fn cmd_complete(cfg: &RunConfig, out: &Path, input: &Path, checkpoint: Option<PathBuf>) -> Outcome {
    let params = load_model(cfg, checkpoint)?;
    let partial = read_cloud(input)?;
    let model = cfg.model();
    let pred = predict(&model, &params, &partial, cfg.seed)?;
    fs::create_dir_all(out)?;
    write_cloud(&out.join("coarse.ply"), &pred.coarse)?;
    write_cloud(&out.join("fine.ply"), &pred.fine)?;
    let per_coarse = model.n_r;
    let per_fine = model.n_r * model.upsample;
    let coarse_regions: Vec<usize> = (0..pred.coarse.len()).map(|i| i / per_coarse).collect();
    let fine_regions: Vec<usize> = (0..pred.fine.len()).map(|i| i / per_fine).collect();
    write_indices(&out.join("coarse.regions.txt"), &coarse_regions)?;
    write_indices(&out.join("fine.regions.txt"), &fine_regions)?;
    println!(
        "input {} points -> coarse {} / fine {} points in {}",
        partial.len(),
        pred.coarse.len(),
        pred.fine.len(),
        out.display()
    );
    Ok(())
}

fn class_labels(records: &[ManifestRecord], classes: &[ShapeClass]) -> Vec<usize> {
    records
        .iter()
        .map(|r| classes.iter().position(|c| *c == r.class).unwrap_or(usize::MAX))
        .collect()
}

fn cmd_classify(
    cfg: &RunConfig,
    out: &Path,
    train_manifest: Option<PathBuf>,
    test_manifest: Option<PathBuf>,
    checkpoint: Option<PathBuf>,
) -> Outcome {
    let train_path = required(train_manifest, &cfg.train_manifest, "train manifest")?;
    let test_path = required(test_manifest, &cfg.test_manifest, "test manifest")?;
    let params = load_model(cfg, checkpoint)?;
    let model = cfg.model();
    let (tr_rec, tr) = samples(load_dataset(&train_path, cfg.n_in, cfg.seed)?);
    let (te_rec, te) = samples(load_dataset(&test_path, cfg.n_in, cfg.seed)?);
    let mut classes: Vec<ShapeClass> = tr_rec.iter().map(|r| r.class).collect();
    classes.sort_by_key(|c| c.name());
    classes.dedup();
    let tr_x = descriptors(&model, &params, &tr.iter().map(|s| &s.partial).collect::<Vec<_>>(), cfg.seed)?;
    let te_x = descriptors(&model, &params, &te.iter().map(|s| &s.partial).collect::<Vec<_>>(), cfg.seed)?;
    let svm = SvmConfig {
        lambda: cfg.svm_lambda,
        epochs: cfg.svm_epochs,
        seed: cfg.seed,
    };
    let report = classify(&tr_x, &class_labels(&tr_rec, &classes), &te_x, &class_labels(&te_rec, &classes), &svm)?;
    fs::create_dir_all(out)?;
    let mut csv = String::from("id,truth,predicted\n");
    for (r, p) in te_rec.iter().zip(&report.predictions) {
        let predicted = classes.get(*p).map_or("?", |c| c.name());
        csv.push_str(&format!("{},{},{}\n", r.id, r.class.name(), predicted));
    }
    fs::write(out.join("predictions.csv"), csv)?;
    fs::write(out.join("classify.txt"), report.render())?;
    print!("{}", report.render());
    Ok(())
}

fn cmd_ablate(cfg: &RunConfig, out: &Path, sweep: &str) -> Outcome {
    let sweep = Sweep::parse(sweep).map_err(|e| Failure::Usage(e.to_string()))?;
    let train_path = required(None, &cfg.train_manifest, "train manifest")?;
    let test_path = required(None, &cfg.test_manifest, "test manifest")?;
    let (_, tr) = samples(load_dataset(&train_path, cfg.n_in, cfg.seed)?);
    let (_, te) = samples(load_dataset(&test_path, cfg.n_in, cfg.seed)?);
    let table = run_ablation(sweep, cfg, &tr, &te, |cell| {
        println!("{:<10} chamfer {:.6}", cell.label, cell.chamfer);
    })?;
    fs::create_dir_all(out)?;
    fs::write(out.join(format!("ablation_{}.txt", sweep.name())), table.to_table())?;
    fs::write(out.join(format!("ablation_{}.csv", sweep.name())), table.to_csv())?;
    print!("{}", table.to_table());
    Ok(())
}

fn cmd_check(cfg: &RunConfig, threads: usize, inject: bool) -> Outcome {
    let opts = CheckOptions {
        seed: cfg.seed,
        threads,
        inject_intra_sign_error: inject,
        ..CheckOptions::default()
    };
    let report = run_checks(&opts);
    print!("{}", report.render());
    if report.passed() {
        Ok(())
    } else {
        let names: Vec<&str> = report.failures().iter().map(|r| r.name.as_str()).collect();
        Err(Failure::Verify(format!("failed checks: {}", names.join(", "))))
    }
}

fn cmd_metrics(
    cfg: &RunConfig,
    out: &Path,
    test: Option<PathBuf>,
    checkpoint: Option<PathBuf>,
    frames: usize,
    step_deg: f64,
    method: &str,
) -> Outcome {
    let test_path = required(test, &cfg.test_manifest, "test manifest")?;
    let params = load_model(cfg, checkpoint)?;
    let model = cfg.model();
    let (records, data) = samples(load_dataset(&test_path, cfg.n_in, cfg.seed)?);
    let labelled: Vec<(String, &Sample)> = records.iter().map(|r| r.class.name().to_string()).zip(&data).collect();
    let (mut report, preds) = evaluate(method, cfg, &params, &labelled)?;

    // References for MMD: complete clouds of the same class from the
    // training set when available, else from the other test shapes.
    let refs: Vec<(ManifestRecord, Sample)> = match &cfg.train_manifest {
        Some(p) => load_dataset(p, cfg.n_in, cfg.seed)?,
        None => records.iter().cloned().zip(data.iter().cloned()).collect(),
    };
    let mut mmd_sum = 0.0;
    let mut mmd_n = 0usize;
    for (i, (r, p)) in records.iter().zip(&preds).enumerate() {
        let same: Vec<_> = refs
            .iter()
            .filter(|(q, _)| q.class == r.class && (cfg.train_manifest.is_some() || q.id != records[i].id))
            .map(|(_, s)| s.complete.clone())
            .collect();
        if !same.is_empty() {
            mmd_sum += mmd(&p.fine, &same)?;
            mmd_n += 1;
        }
    }
    if mmd_n > 0 {
        report.mmd = Some(mmd_sum / mmd_n as f64);
    }

    if frames >= 2 {
        let mut sum = 0.0;
        let mut n = 0usize;
        for r in &records {
            let (Some(spec), Some(view)) = (r.shape(), r.view_dir) else {
                continue;
            };
            let scans = scan_sequence(&spec, view, frames, step_deg.to_radians(), cfg.n_in, cfg.seed)?;
            let outs = scans
                .iter()
                .map(|s| predict(&model, &params, s, cfg.seed).map(|p| p.fine))
                .collect::<Result<Vec<_>, _>>()?;
            sum += consistency(&outs)?;
            n += 1;
        }
        if n > 0 {
            report.consistency = Some(sum / n as f64);
        }
    }

    fs::create_dir_all(out)?;
    fs::write(out.join("metrics.csv"), report.to_csv())?;
    fs::write(out.join("metrics.txt"), report.to_table())?;
    print!("{}", report.to_table());
    Ok(())
}
