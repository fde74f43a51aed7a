//! Parametric shapes and area-uniform surface sampling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cloud::{Point, PointCloud};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShapeClass {
    Slab,
    Box,
    Sphere,
    Cylinder,
    TwoLegTable,
    FourLegTable,
}

impl ShapeClass {
    pub const ALL: [ShapeClass; 6] = [
        ShapeClass::Slab,
        ShapeClass::Box,
        ShapeClass::Sphere,
        ShapeClass::Cylinder,
        ShapeClass::TwoLegTable,
        ShapeClass::FourLegTable,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ShapeClass::Slab => "slab",
            ShapeClass::Box => "box",
            ShapeClass::Sphere => "sphere",
            ShapeClass::Cylinder => "cylinder",
            ShapeClass::TwoLegTable => "two-leg-table",
            ShapeClass::FourLegTable => "four-leg-table",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::input(format!("unknown shape class {s:?}")))
    }
}

/// Rotation about the vertical (z) axis followed by a translation.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose {
    pub yaw: f64,
    pub translation: [f64; 3],
}

impl Pose {
    pub fn rotate(&self, v: [f64; 3]) -> [f64; 3] {
        let (s, c) = self.yaw.sin_cos();
        [c * v[0] - s * v[1], s * v[0] + c * v[1], v[2]]
    }

    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        let r = self.rotate(p);
        [r[0] + self.translation[0], r[1] + self.translation[1], r[2] + self.translation[2]]
    }
}

/// A shape class with its size parameters and pose.
///
/// `size` is read per class: half-extents for boxes, slabs and table tops,
/// `[radius, radius, _]` for spheres and `[radius, radius, half_height]`
/// for cylinders.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapeSpec {
    pub class: ShapeClass,
    pub size: [f64; 3],
    pub pose: Pose,
}

fn add(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

fn mul(a: [f64; 3], s: f64) -> [f64; 3] {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub(crate) fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// One smooth piece of a surface, in model coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Patch {
    /// Parallelogram `c + s·u + t·v`, `s, t ∈ [−1, 1]`, outward normal `n`.
    Rect { c: [f64; 3], u: [f64; 3], v: [f64; 3], n: [f64; 3] },
    /// Disk of radius `r` in the plane `z = c.z`, normal `±z`.
    Disk { c: [f64; 3], r: f64, up: bool },
    Sphere { c: [f64; 3], r: f64 },
    /// Side of a z-aligned cylinder.
    Tube { c: [f64; 3], r: f64, h: f64 },
}

impl Patch {
    pub fn area(&self) -> f64 {
        use std::f64::consts::PI;
        match *self {
            Patch::Rect { u, v, .. } => {
                let cr = [u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0]];
                4.0 * dot(cr, cr).sqrt()
            }
            Patch::Disk { r, .. } => PI * r * r,
            Patch::Sphere { r, .. } => 4.0 * PI * r * r,
            Patch::Tube { r, h, .. } => 2.0 * PI * r * 2.0 * h,
        }
    }

    /// Area-uniform sample with its outward unit normal.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> ([f64; 3], [f64; 3]) {
        use std::f64::consts::TAU;
        match *self {
            Patch::Rect { c, u, v, n } => {
                let (s, t) = (rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0));
                (add(c, add(mul(u, s), mul(v, t))), n)
            }
            Patch::Disk { c, r, up } => {
                let rho = r * rng.gen::<f64>().sqrt();
                let a = rng.gen_range(0.0..TAU);
                let p = [c[0] + rho * a.cos(), c[1] + rho * a.sin(), c[2]];
                (p, [0.0, 0.0, if up { 1.0 } else { -1.0 }])
            }
            Patch::Sphere { c, r } => {
                let z: f64 = rng.gen_range(-1.0..=1.0);
                let a = rng.gen_range(0.0..TAU);
                let rho = (1.0 - z * z).max(0.0).sqrt();
                let n = [rho * a.cos(), rho * a.sin(), z];
                (add(c, mul(n, r)), n)
            }
            Patch::Tube { c, r, h } => {
                let a = rng.gen_range(0.0..TAU);
                let n = [a.cos(), a.sin(), 0.0];
                let z = rng.gen_range(-h..=h);
                (add(c, [r * n[0], r * n[1], z]), n)
            }
        }
    }

    /// Smallest `t > eps` with `o + t·d` on the patch.
    pub fn ray_hit(&self, o: [f64; 3], d: [f64; 3], eps: f64) -> Option<f64> {
        match *self {
            Patch::Rect { c, u, v, n } => {
                let den = dot(n, d);
                if den.abs() < 1e-15 {
                    return None;
                }
                let t = dot(n, add(c, mul(o, -1.0))) / den;
                if t <= eps {
                    return None;
                }
                let q = add(add(o, mul(d, t)), mul(c, -1.0));
                let s = dot(q, u) / dot(u, u);
                let w = dot(q, v) / dot(v, v);
                (s.abs() <= 1.0 && w.abs() <= 1.0).then_some(t)
            }
            Patch::Disk { c, r, .. } => {
                if d[2].abs() < 1e-15 {
                    return None;
                }
                let t = (c[2] - o[2]) / d[2];
                if t <= eps {
                    return None;
                }
                let (x, y) = (o[0] + t * d[0] - c[0], o[1] + t * d[1] - c[1]);
                (x * x + y * y <= r * r).then_some(t)
            }
            Patch::Sphere { c, r } => {
                let oc = add(o, mul(c, -1.0));
                let (a, b, cc) = (dot(d, d), 2.0 * dot(oc, d), dot(oc, oc) - r * r);
                roots(a, b, cc).into_iter().flatten().find(|&t| t > eps)
            }
            Patch::Tube { c, r, h } => {
                let (ox, oy) = (o[0] - c[0], o[1] - c[1]);
                let a = d[0] * d[0] + d[1] * d[1];
                if a < 1e-15 {
                    return None;
                }
                let b = 2.0 * (ox * d[0] + oy * d[1]);
                let cc = ox * ox + oy * oy - r * r;
                roots(a, b, cc)
                    .into_iter()
                    .flatten()
                    .find(|&t| t > eps && (o[2] + t * d[2] - c[2]).abs() <= h)
            }
        }
    }

    fn posed(&self, pose: &Pose) -> Patch {
        match *self {
            Patch::Rect { c, u, v, n } => Patch::Rect {
                c: pose.apply(c),
                u: pose.rotate(u),
                v: pose.rotate(v),
                n: pose.rotate(n),
            },
            Patch::Disk { c, r, up } => Patch::Disk { c: pose.apply(c), r, up },
            Patch::Sphere { c, r } => Patch::Sphere { c: pose.apply(c), r },
            Patch::Tube { c, r, h } => Patch::Tube { c: pose.apply(c), r, h },
        }
    }
}

fn roots(a: f64, b: f64, c: f64) -> [Option<f64>; 2] {
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return [None, None];
    }
    let s = disc.sqrt();
    [Some((-b - s) / (2.0 * a)), Some((-b + s) / (2.0 * a))]
}

/// A closed convex piece of a shape, made of patches.
#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    pub patches: Vec<Patch>,
}

fn cuboid(center: [f64; 3], half: [f64; 3]) -> Component {
    let [hx, hy, hz] = half;
    let mut patches = Vec::with_capacity(6);
    for sign in [1.0, -1.0] {
        patches.push(Patch::Rect {
            c: add(center, [sign * hx, 0.0, 0.0]),
            u: [0.0, hy, 0.0],
            v: [0.0, 0.0, hz],
            n: [sign, 0.0, 0.0],
        });
        patches.push(Patch::Rect {
            c: add(center, [0.0, sign * hy, 0.0]),
            u: [hx, 0.0, 0.0],
            v: [0.0, 0.0, hz],
            n: [0.0, sign, 0.0],
        });
        patches.push(Patch::Rect {
            c: add(center, [0.0, 0.0, sign * hz]),
            u: [hx, 0.0, 0.0],
            v: [0.0, hy, 0.0],
            n: [0.0, 0.0, sign],
        });
    }
    Component { patches }
}

/// Thickness (half) of a slab and of table tops.
pub const SLAB_HALF_THICKNESS: f64 = 0.02;
const LEG_HALF_WIDTH: f64 = 0.04;

impl ShapeSpec {
    /// Convex components in world coordinates.
    pub fn components(&self) -> Result<Vec<Component>> {
        let [a, b, c] = self.size;
        if self.size.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("shape size must be finite"));
        }
        let positive = |vals: &[f64]| vals.iter().all(|&v| v > 0.0);
        let comps = match self.class {
            ShapeClass::Box if positive(&[a, b, c]) => vec![cuboid([0.0; 3], [a, b, c])],
            ShapeClass::Slab if positive(&[a, b]) => vec![cuboid([0.0; 3], [a, b, SLAB_HALF_THICKNESS])],
            ShapeClass::Sphere if positive(&[a]) => vec![Component {
                patches: vec![Patch::Sphere { c: [0.0; 3], r: a }],
            }],
            ShapeClass::Cylinder if positive(&[a, c]) => vec![Component {
                patches: vec![
                    Patch::Tube { c: [0.0; 3], r: a, h: c },
                    Patch::Disk { c: [0.0, 0.0, c], r: a, up: true },
                    Patch::Disk { c: [0.0, 0.0, -c], r: a, up: false },
                ],
            }],
            ShapeClass::TwoLegTable | ShapeClass::FourLegTable
                if positive(&[a, b, c]) && a > LEG_HALF_WIDTH && b > LEG_HALF_WIDTH =>
            {
                let t = SLAB_HALF_THICKNESS;
                // top surface at z = c, legs reach down to z = −c
                let leg_h = c - t;
                let mut comps = vec![cuboid([0.0, 0.0, c - t], [a, b, t])];
                if self.class == ShapeClass::TwoLegTable {
                    for sx in [-1.0, 1.0] {
                        comps.push(cuboid(
                            [sx * (a - LEG_HALF_WIDTH), 0.0, -t],
                            [LEG_HALF_WIDTH, b, leg_h],
                        ));
                    }
                } else {
                    for sx in [-1.0, 1.0] {
                        for sy in [-1.0, 1.0] {
                            comps.push(cuboid(
                                [sx * (a - LEG_HALF_WIDTH), sy * (b - LEG_HALF_WIDTH), -t],
                                [LEG_HALF_WIDTH, LEG_HALF_WIDTH, leg_h],
                            ));
                        }
                    }
                }
                comps
            }
            _ => {
                return Err(Error::input(format!(
                    "degenerate {} size {:?}",
                    self.class.name(),
                    self.size
                )))
            }
        };
        Ok(comps
            .into_iter()
            .map(|comp| Component {
                patches: comp.patches.iter().map(|p| p.posed(&self.pose)).collect(),
            })
            .collect())
    }

    pub fn area(&self) -> Result<f64> {
        Ok(self
            .components()?
            .iter()
            .flat_map(|c| &c.patches)
            .map(Patch::area)
            .sum())
    }
}

/// Surface samples with normals and the component each came from.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceSample {
    pub points: Vec<Point>,
    pub normals: Vec<[f64; 3]>,
    pub component: Vec<usize>,
    pub patch: Vec<usize>,
    pub components: Vec<Component>,
}

impl SurfaceSample {
    pub fn cloud(&self) -> Result<PointCloud> {
        PointCloud::new(self.points.clone())
    }
}

/// Draws `n` area-uniform points with normals.
pub fn sample_surface(spec: &ShapeSpec, n: usize, seed: u64) -> Result<SurfaceSample> {
    if n == 0 {
        return Err(Error::input("sample count must be positive"));
    }
    let components = spec.components()?;
    let flat: Vec<(usize, usize, &Patch)> = components
        .iter()
        .enumerate()
        .flat_map(|(ci, c)| c.patches.iter().enumerate().map(move |(pi, p)| (ci, pi, p)))
        .collect();
    let mut cumulative = Vec::with_capacity(flat.len());
    let mut acc = 0.0;
    for (_, _, p) in &flat {
        acc += p.area();
        cumulative.push(acc);
    }
    if !(acc > 0.0) {
        return Err(Error::input("shape has zero surface area"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = SurfaceSample {
        points: Vec::with_capacity(n),
        normals: Vec::with_capacity(n),
        component: Vec::with_capacity(n),
        patch: Vec::with_capacity(n),
        components: Vec::new(),
    };
    for _ in 0..n {
        let u = rng.gen_range(0.0..acc);
        let k = cumulative.partition_point(|&c| c <= u).min(flat.len() - 1);
        let (ci, pi, patch) = flat[k];
        let (p, nrm) = patch.sample(&mut rng);
        out.points.push(p);
        out.normals.push(nrm);
        out.component.push(ci);
        out.patch.push(pi);
    }
    out.components = components;
    Ok(out)
}

/// `n` area-uniform surface points; deterministic per seed.
pub fn sample_shape(spec: &ShapeSpec, n: usize, seed: u64) -> Result<PointCloud> {
    sample_surface(spec, n, seed)?.cloud()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(class: ShapeClass, size: [f64; 3]) -> ShapeSpec {
        ShapeSpec { class, size, pose: Pose { yaw: 0.7, translation: [0.1, -0.2, 0.3] } }
    }

    #[test]
    fn sphere_points_on_surface() {
        let s = ShapeSpec { class: ShapeClass::Sphere, size: [1.0; 3], pose: Pose::default() };
        let c = sample_shape(&s, 10_000, 1).unwrap();
        for p in c.points() {
            assert!((dot(*p, *p).sqrt() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn box_face_counts_follow_area() {
        let s = ShapeSpec { class: ShapeClass::Box, size: [0.5, 1.0, 1.5], pose: Pose::default() };
        let n = 60_000;
        let surf = sample_surface(&s, n, 2).unwrap();
        let areas: Vec<f64> = surf.components[0].patches.iter().map(Patch::area).collect();
        let total: f64 = areas.iter().sum();
        for (f, a) in areas.iter().enumerate() {
            let count = surf.patch.iter().filter(|&&p| p == f).count() as f64;
            let p = a / total;
            let sigma = (n as f64 * p * (1.0 - p)).sqrt();
            assert!((count - n as f64 * p).abs() <= 3.0 * sigma, "face {f}");
        }
    }

    #[test]
    fn deterministic_and_posed() {
        for class in ShapeClass::ALL {
            let s = spec(class, [0.5, 0.4, 0.3]);
            let a = sample_surface(&s, 500, 3).unwrap();
            assert_eq!(a, sample_surface(&s, 500, 3).unwrap());
            // every point lies on its patch: a ray cast back along the normal from
            // just outside hits the patch at the sample
            for i in 0..a.points.len() {
                let patch = a.components[a.component[i]].patches[a.patch[i]];
                let o = add(a.points[i], mul(a.normals[i], 1e-3));
                let t = patch.ray_hit(o, mul(a.normals[i], -1.0), 0.0).unwrap();
                assert!((t - 1e-3).abs() < 1e-9, "{class:?}");
            }
        }
    }

    #[test]
    fn degenerate_sizes_rejected() {
        assert!(sample_shape(&spec(ShapeClass::Sphere, [0.0; 3]), 10, 0).is_err());
        assert!(sample_shape(&spec(ShapeClass::Box, [1.0, 0.0, 1.0]), 10, 0).is_err());
        assert_eq!(ShapeClass::parse("two-leg-table").unwrap(), ShapeClass::TwoLegTable);
    }
}
