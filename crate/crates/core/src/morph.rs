//! Code-space editing: interpolation, attribute swaps, expression rigs and
//! an iso-surface probe of the density field.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::camera::Camera;
use crate::codes::{CodeKind, FaceCodes};
use crate::error::{Error, Result};
use crate::field::{FieldWeights, Level};
use crate::fsutil::{create_dir, write_json};
use crate::image::Image;
use crate::real::Real;
use crate::render::{render_image, RenderSettings};

fn check_same_dims(a: &FaceCodes<f32>, b: &FaceCodes<f32>) -> Result<()> {
    let same = a.beta.len() == b.beta.len() && a.alpha.len() == b.alpha.len() && a.eps.len() == b.eps.len();
    if !same {
        return Err(Error::InvalidInput(format!(
            "code dims differ: {}/{}/{} vs {}/{}/{}",
            a.beta.len(),
            a.alpha.len(),
            a.eps.len(),
            b.beta.len(),
            b.alpha.len(),
            b.eps.len()
        )));
    }
    Ok(())
}

/// `(1 - t) * a + t * b` on the components in `dims`; the rest come from `a`.
pub fn interpolate(a: &FaceCodes<f32>, b: &FaceCodes<f32>, t: f64, dims: &[CodeKind]) -> Result<FaceCodes<f32>> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidInput(format!("interpolation parameter {t} outside [0, 1]")));
    }
    check_same_dims(a, b)?;
    let mut out = a.clone();
    for &kind in dims {
        let (x, y) = (a.component(kind), b.component(kind));
        *out.component_mut(kind) = x
            .iter()
            .zip(y)
            .map(|(&p, &q)| ((1.0 - t) * p as f64 + t * q as f64) as f32)
            .collect();
    }
    Ok(out)
}

/// `a` with one component replaced by `b`'s.
pub fn swap_attribute(a: &FaceCodes<f32>, b: &FaceCodes<f32>, which: CodeKind) -> Result<FaceCodes<f32>> {
    check_same_dims(a, b)?;
    let mut out = a.clone();
    *out.component_mut(which) = b.component(which).to_vec();
    Ok(out)
}

/// Piecewise-linear path through `keys` with `steps` segments between each
/// consecutive pair. Includes every key.
pub fn expression_track(keys: &[Vec<f32>], steps: usize) -> Result<Vec<Vec<f32>>> {
    if keys.windows(2).any(|w| w[0].len() != w[1].len()) {
        return Err(Error::InvalidInput("expression codes differ in length".into()));
    }
    let steps = steps.max(1);
    let mut out = Vec::new();
    for w in keys.windows(2) {
        for s in 0..steps {
            let t = s as f64 / steps as f64;
            out.push(
                w[0].iter()
                    .zip(&w[1])
                    .map(|(&p, &q)| ((1.0 - t) * p as f64 + t * q as f64) as f32)
                    .collect(),
            );
        }
    }
    if let Some(last) = keys.last() {
        out.push(last.clone());
    }
    Ok(out)
}

/// One render per `(eps, camera)` pair with fixed shape and appearance. A
/// track of length one is broadcast against the other.
pub fn rig_sequence(
    weights: &FieldWeights<f32>,
    beta: &[f32],
    alpha: &[f32],
    eps_track: &[Vec<f32>],
    cam_track: &[Camera],
    settings: &RenderSettings,
) -> Result<Vec<Image>> {
    if eps_track.is_empty() || cam_track.is_empty() {
        return Ok(Vec::new());
    }
    let (ne, nc) = (eps_track.len(), cam_track.len());
    let n = match (ne, nc) {
        _ if ne == nc => ne,
        (1, _) => nc,
        (_, 1) => ne,
        _ => {
            return Err(Error::InvalidInput(format!(
                "expression track of {ne} and camera track of {nc} cannot be broadcast"
            )))
        }
    };
    (0..n)
        .map(|i| {
            let codes = FaceCodes {
                beta: beta.to_vec(),
                alpha: alpha.to_vec(),
                eps: eps_track[i.min(ne - 1)].clone(),
            };
            render_image(weights, &codes, &cam_track[i.min(nc - 1)], settings)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameIndex {
    pub frames: Vec<String>,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub meta: serde_json::Value,
}

/// Writes `frame_0000.png, ...` and `index.json` into `dir`.
pub fn write_frames(dir: &Path, frames: &[Image], meta: serde_json::Value) -> Result<FrameIndex> {
    create_dir(dir)?;
    let mut names = Vec::with_capacity(frames.len());
    for (i, f) in frames.iter().enumerate() {
        let name = format!("frame_{i:04}.png");
        f.write_png(&dir.join(&name))?;
        names.push(name);
    }
    let index = FrameIndex { frames: names, meta };
    write_json(&dir.join("index.json"), &index)?;
    Ok(index)
}

/// Density whose per-sample opacity `1 - exp(-sigma * delta)` is one half.
pub fn iso_threshold(delta: f64) -> f64 {
    std::f64::consts::LN_2 / delta
}

/// Regular grid of density values over the cube `[-half, half]^3`.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityGrid {
    pub resolution: usize,
    pub half_extent: f64,
    /// Indexed `[(i * res + j) * res + k]` for coordinates `(x_i, y_j, z_k)`.
    pub sigma: Vec<f64>,
}

impl DensityGrid {
    pub fn voxel_size(&self) -> f64 {
        2.0 * self.half_extent / (self.resolution - 1) as f64
    }

    fn coord(&self, i: usize) -> f64 {
        -self.half_extent + i as f64 * self.voxel_size()
    }

    fn at(&self, i: usize, j: usize, k: usize) -> f64 {
        self.sigma[(i * self.resolution + j) * self.resolution + k]
    }

    /// Points where the density crosses `threshold` along grid edges, placed
    /// by linear interpolation.
    pub fn iso_points(&self, threshold: f64) -> Vec<[f64; 3]> {
        let r = self.resolution;
        let mut out = Vec::new();
        for i in 0..r {
            for j in 0..r {
                for k in 0..r {
                    let a = self.at(i, j, k);
                    let p = [self.coord(i), self.coord(j), self.coord(k)];
                    for (axis, next) in [(0, (i + 1, j, k)), (1, (i, j + 1, k)), (2, (i, j, k + 1))] {
                        if next.0 >= r || next.1 >= r || next.2 >= r {
                            continue;
                        }
                        let b = self.at(next.0, next.1, next.2);
                        if (a >= threshold) != (b >= threshold) {
                            let t = (threshold - a) / (b - a);
                            let mut q = p;
                            q[axis] += t * self.voxel_size();
                            out.push(q);
                        }
                    }
                }
            }
        }
        out
    }
}

/// Samples the density of one network level on a `resolution^3` grid.
pub fn density_grid<T: Real>(
    weights: &FieldWeights<T>,
    level: Level,
    codes: &FaceCodes<T>,
    resolution: usize,
    half_extent: f64,
) -> Result<DensityGrid> {
    if resolution < 2 || !(half_extent > 0.0) {
        return Err(Error::InvalidInput("grid needs at least two samples per axis and a positive extent".into()));
    }
    let cond = weights.condition(codes)?;
    let net = weights.net(level);
    let step = 2.0 * half_extent / (resolution - 1) as f64;
    let coord = |i: usize| T::c(-half_extent + i as f64 * step);
    let mut sigma = Vec::with_capacity(resolution.pow(3));
    let dir_row = [T::zero(), T::zero(), -T::one()];
    for i in 0..resolution {
        for j in 0..resolution {
            let mut pos = Vec::with_capacity(resolution * 3);
            for k in 0..resolution {
                pos.extend([coord(i), coord(j), coord(k)]);
            }
            let dirs: Vec<T> = dir_row.iter().copied().cycle().take(resolution * 3).collect();
            let out = net.forward(&pos, &dirs, &cond.trunk_code, &cond.alpha);
            sigma.extend(out.sigma.iter().map(|s| s.f64()));
        }
    }
    Ok(DensityGrid {
        resolution,
        half_extent,
        sigma,
    })
}

/// Symmetric chamfer distance: the mean of both directed mean
/// nearest-neighbor distances. Infinite if exactly one set is empty.
pub fn chamfer_distance(a: &[[f64; 3]], b: &[[f64; 3]]) -> f64 {
    match (a.is_empty(), b.is_empty()) {
        (true, true) => return 0.0,
        (true, false) | (false, true) => return f64::INFINITY,
        _ => {}
    }
    let directed = |x: &[[f64; 3]], y: &[[f64; 3]]| {
        x.iter()
            .map(|p| {
                y.iter()
                    .map(|q| (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2))
                    .fold(f64::INFINITY, f64::min)
                    .sqrt()
            })
            .sum::<f64>()
            / x.len() as f64
    };
    0.5 * (directed(a, b) + directed(b, a))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn codes(v: f32) -> FaceCodes<f32> {
        FaceCodes {
            beta: vec![v; 3],
            alpha: vec![v + 1.0; 4],
            eps: vec![v - 1.0; 2],
        }
    }

    #[test]
    fn selective_midpoint_keeps_other_components() {
        let (a, b) = (codes(0.0), codes(2.0));
        let m = interpolate(&a, &b, 0.5, &[CodeKind::Shape]).unwrap();
        assert_eq!(m.beta, vec![1.0; 3]);
        assert_eq!(m.alpha, a.alpha);
        assert_eq!(m.eps, a.eps);
    }

    #[test]
    fn out_of_range_parameter_rejected() {
        assert!(interpolate(&codes(0.0), &codes(1.0), 1.5, &[CodeKind::Shape]).is_err());
    }

    #[test]
    fn track_hits_every_key() {
        let keys = vec![vec![0.0f32], vec![1.0], vec![3.0]];
        let t = expression_track(&keys, 4).unwrap();
        assert_eq!(t.len(), 9);
        assert_eq!(t[0], keys[0]);
        assert_eq!(t[4], keys[1]);
        assert_eq!(t[8], keys[2]);
        assert_eq!(t[2], vec![0.5]);
    }

    #[test]
    fn chamfer_of_shifted_set() {
        let a = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]];
        let b: Vec<[f64; 3]> = a.iter().map(|p| [p[0], p[1] + 0.25, p[2]]).collect();
        assert!((chamfer_distance(&a, &b) - 0.25).abs() < 1e-12);
        assert_eq!(chamfer_distance(&a, &a), 0.0);
    }

    #[test]
    fn sphere_iso_points_lie_near_the_sphere() {
        let res = 21;
        let half = 1.0;
        let step = 2.0 * half / (res - 1) as f64;
        let mut sigma = Vec::new();
        for i in 0..res {
            for j in 0..res {
                for k in 0..res {
                    let p = [i, j, k].map(|v| -half + v as f64 * step);
                    let r = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
                    sigma.push(10.0 * (0.6 - r));
                }
            }
        }
        let grid = DensityGrid {
            resolution: res,
            half_extent: half,
            sigma,
        };
        let pts = grid.iso_points(0.0);
        assert!(!pts.is_empty());
        for p in pts {
            let r = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
            assert!((r - 0.6).abs() < 0.5 * step);
        }
    }
}
