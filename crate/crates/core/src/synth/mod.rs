//! Synthetic shape corpus: parametric shapes, partial scans, file formats
//! and manifests.

pub mod io;
pub mod manifest;
pub mod scan;
pub mod shapes;

use std::f64::consts::{FRAC_PI_3, TAU};
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cloud::{resample, PointCloud};
use crate::error::{Error, Result};
use crate::model::Sample;
use crate::par;

pub use io::{read_cloud, read_ply, read_xyz, write_cloud, write_indices, write_ply, write_xyz};
pub use manifest::{read_manifest, write_manifest, ManifestRecord};
pub use scan::{partial_scan, visible_indices};
pub use shapes::{sample_shape, sample_surface, Pose, ShapeClass, ShapeSpec, SurfaceSample};

/// Parameters of a generated set of scan pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub classes: Vec<ShapeClass>,
    /// Index of the first pair; pair `i` is a pure function of `(seed, i)`.
    pub start: usize,
    pub count: usize,
    pub n_in: usize,
    pub fine_count: usize,
    /// Surface density used before culling.
    pub scan_samples: usize,
    pub seed: u64,
}

impl DatasetSpec {
    pub fn new(classes: Vec<ShapeClass>, count: usize, n_in: usize, fine_count: usize, seed: u64) -> Self {
        DatasetSpec {
            classes,
            start: 0,
            count,
            n_in,
            fine_count,
            scan_samples: 4096,
            seed,
        }
    }
}

/// A partial scan and the complete surface it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanPair {
    pub id: String,
    pub spec: ShapeSpec,
    pub view_dir: [f64; 3],
    pub partial: PointCloud,
    pub complete: PointCloud,
}

impl ScanPair {
    pub fn sample(&self) -> Sample {
        Sample {
            partial: self.partial.clone(),
            complete: self.complete.clone(),
        }
    }
}

fn random_size<R: Rng>(class: ShapeClass, rng: &mut R) -> [f64; 3] {
    let mut u = |lo: f64, hi: f64| rng.gen_range(lo..hi);
    match class {
        ShapeClass::Slab => [u(0.3, 0.5), u(0.3, 0.5), 0.0],
        ShapeClass::Box => [u(0.15, 0.35), u(0.15, 0.35), u(0.15, 0.35)],
        ShapeClass::Sphere => {
            let r = u(0.25, 0.4);
            [r, r, r]
        }
        ShapeClass::Cylinder => {
            let r = u(0.15, 0.3);
            [r, r, u(0.25, 0.4)]
        }
        ShapeClass::TwoLegTable | ShapeClass::FourLegTable => [u(0.35, 0.5), u(0.25, 0.4), u(0.2, 0.35)],
    }
}

/// Generates pair `index` of `ds`.
pub fn generate_pair(ds: &DatasetSpec, index: usize) -> Result<ScanPair> {
    if ds.classes.is_empty() {
        return Err(Error::input("dataset needs at least one class"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(ds.seed);
    rng.set_stream(index as u64);
    let class = ds.classes[index % ds.classes.len()];
    let spec = ShapeSpec {
        class,
        size: random_size(class, &mut rng),
        pose: Pose {
            yaw: rng.gen_range(0.0..TAU),
            translation: [0.0; 3],
        },
    };
    let azimuth = rng.gen_range(0.0..TAU);
    let elevation = rng.gen_range(-FRAC_PI_3..FRAC_PI_3);
    let view_dir = [
        elevation.cos() * azimuth.cos(),
        elevation.cos() * azimuth.sin(),
        elevation.sin(),
    ];
    let surface = sample_surface(&spec, ds.scan_samples, rng.gen())?;
    let partial = partial_scan(&surface, view_dir, ds.n_in, rng.gen())?;
    let complete = sample_shape(&spec, ds.fine_count, rng.gen())?;
    Ok(ScanPair {
        id: format!("{index:06}"),
        spec,
        view_dir,
        partial,
        complete,
    })
}

/// Scans of one shape from `frames` views, each rotated about the vertical
/// axis by `step` radians from the previous one.
pub fn scan_sequence(
    spec: &ShapeSpec,
    view_dir: [f64; 3],
    frames: usize,
    step: f64,
    n_in: usize,
    seed: u64,
) -> Result<Vec<PointCloud>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let surface = sample_surface(spec, 4096, rng.gen())?;
    (0..frames)
        .map(|f| {
            let turn = Pose {
                yaw: step * f as f64,
                translation: [0.0; 3],
            };
            partial_scan(&surface, turn.rotate(view_dir), n_in, rng.gen())
        })
        .collect()
}

/// All pairs of `ds`, generated in parallel.
pub fn generate_pairs(ds: &DatasetSpec) -> Result<Vec<ScanPair>> {
    par::map_range(ds.count, |i| generate_pair(ds, ds.start + i))
        .into_iter()
        .collect()
}

/// Writes `pairs` as PLY files under `dir` plus a manifest named `manifest`.
pub fn write_dataset(dir: &Path, manifest: &str, pairs: &[ScanPair]) -> Result<PathBuf> {
    fs::create_dir_all(dir.join("partial"))?;
    fs::create_dir_all(dir.join("complete"))?;
    let mut records = Vec::with_capacity(pairs.len());
    for p in pairs {
        let partial_path = PathBuf::from("partial").join(format!("{}.ply", p.id));
        let complete_path = PathBuf::from("complete").join(format!("{}.ply", p.id));
        write_cloud(&dir.join(&partial_path), &p.partial)?;
        write_cloud(&dir.join(&complete_path), &p.complete)?;
        records.push(ManifestRecord {
            id: p.id.clone(),
            class: p.spec.class,
            partial_path,
            complete_path,
            pose: p.spec.pose,
            size: Some(p.spec.size),
            view_dir: Some(p.view_dir),
        });
    }
    let path = dir.join(manifest);
    write_manifest(&path, &records)?;
    Ok(path)
}

/// Loads every pair listed in a manifest; partials are resampled to `n_in`.
pub fn load_dataset(manifest: &Path, n_in: usize, seed: u64) -> Result<Vec<(ManifestRecord, Sample)>> {
    let records = read_manifest(manifest)?;
    if records.is_empty() {
        return Err(Error::input(format!("manifest {} lists no pairs", manifest.display())));
    }
    records
        .into_iter()
        .map(|r| {
            let partial = read_cloud(&manifest::resolve(manifest, &r.partial_path))?;
            let complete = read_cloud(&manifest::resolve(manifest, &r.complete_path))?;
            let partial = if partial.len() == n_in { partial } else { resample(&partial, n_in, seed)? };
            Ok((r, Sample { partial, complete }))
        })
        .collect()
}
