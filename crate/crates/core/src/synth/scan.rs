//! Single-view partial scans: back-face culling on the analytic normals,
//! then removal of points hidden behind other components.

use crate::cloud::{resample, PointCloud};
use crate::error::{Error, Result};

use super::shapes::{dot, SurfaceSample};

const RAY_EPS: f64 = 1e-9;

/// Indices of samples seen by an orthographic camera looking along `view_dir`.
pub fn visible_indices(surface: &SurfaceSample, view_dir: [f64; 3]) -> Result<Vec<usize>> {
    let len = dot(view_dir, view_dir).sqrt();
    if !(len > 0.0) || !len.is_finite() {
        return Err(Error::input("view direction must be a non-zero finite vector"));
    }
    let v = [view_dir[0] / len, view_dir[1] / len, view_dir[2] / len];
    let towards_camera = [-v[0], -v[1], -v[2]];
    let mut out = Vec::new();
    for (i, (&p, &n)) in surface.points.iter().zip(&surface.normals).enumerate() {
        if dot(n, v) >= 0.0 {
            continue;
        }
        let own = surface.component[i];
        let blocked = surface.components.iter().enumerate().any(|(ci, comp)| {
            ci != own
                && comp
                    .patches
                    .iter()
                    .any(|patch| patch.ray_hit(p, towards_camera, RAY_EPS).is_some())
        });
        if !blocked {
            out.push(i);
        }
    }
    Ok(out)
}

/// Visible points, resampled to `n` points.
pub fn partial_scan(surface: &SurfaceSample, view_dir: [f64; 3], n: usize, seed: u64) -> Result<PointCloud> {
    let idx = visible_indices(surface, view_dir)?;
    if idx.is_empty() {
        return Err(Error::DegenerateView(format!("no surface point faces the view {view_dir:?}")));
    }
    let visible = PointCloud::new(idx.iter().map(|&i| surface.points[i]).collect())?;
    resample(&visible, n, seed)
}
