//! Training-pixel selection: a fixed mix of uniform and landmark-centered
//! Gaussian draws.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::camera::{Camera, Projected};
use crate::error::{Error, Result};

pub const LANDMARK_COUNT: usize = 64;

/// Canonical 3D facial keypoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandmarkSet {
    pub points3d: Vec<[f64; 3]>,
}

impl LandmarkSet {
    pub fn new(points3d: Vec<[f64; 3]>) -> Result<Self> {
        if points3d.len() != LANDMARK_COUNT {
            return Err(Error::InvalidInput(format!(
                "expected {LANDMARK_COUNT} landmarks, got {}",
                points3d.len()
            )));
        }
        if points3d.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite landmark".into()));
        }
        Ok(Self { points3d })
    }

    pub fn project(&self, cam: &Camera) -> Vec<Projected> {
        project_landmarks(&self.points3d, cam)
    }
}

pub fn project_landmarks(points: &[[f64; 3]], cam: &Camera) -> Vec<Projected> {
    points.iter().map(|p| cam.project(*p)).collect()
}

/// `(row, col)` of the visible projections.
pub fn visible_points(proj: &[Projected]) -> Vec<[f64; 2]> {
    proj.iter().filter(|p| !p.occluded).map(|p| [p.row, p.col]).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelSampler {
    /// Uniform share of the `uniform : landmark` ratio.
    pub uniform_parts: usize,
    pub landmark_parts: usize,
    /// Gaussian standard deviation as a fraction of `min(H, W)`.
    pub std_frac: f64,
}

impl Default for PixelSampler {
    fn default() -> Self {
        Self {
            uniform_parts: 2,
            landmark_parts: 3,
            std_frac: 0.025,
        }
    }
}

impl PixelSampler {
    /// Landmark-centered draws only.
    pub fn landmark_only() -> Self {
        Self {
            uniform_parts: 0,
            ..Self::default()
        }
    }

    /// Number of uniform draws among `n`: `ceil(n * u / (u + l))`.
    pub fn uniform_count(&self, n: usize) -> usize {
        let parts = self.uniform_parts + self.landmark_parts;
        if parts == 0 {
            return n;
        }
        (n * self.uniform_parts).div_ceil(parts)
    }

    /// Uniform pixels first, then landmark-centered ones. Landmarks are
    /// `(row, col)` pixel positions; those outside the frame are ignored.
    /// Without usable landmarks every draw is uniform.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        height: usize,
        width: usize,
        landmarks: &[[f64; 2]],
        n: usize,
        rng: &mut R,
    ) -> Result<Vec<(usize, usize)>> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidInput("empty frame".into()));
        }
        if !(self.std_frac >= 0.0) {
            return Err(Error::InvalidInput("sampling deviation must be non-negative".into()));
        }
        let in_frame = |r: f64, c: f64| r >= 0.0 && c >= 0.0 && r <= (height - 1) as f64 && c <= (width - 1) as f64;
        let anchors: Vec<[f64; 2]> = landmarks
            .iter()
            .copied()
            .filter(|p| in_frame(p[0].round(), p[1].round()))
            .collect();
        let n_uniform = if anchors.is_empty() {
            if self.landmark_parts > 0 && n > 0 {
                log::warn!("no usable landmarks, sampling pixels uniformly");
            }
            n
        } else {
            self.uniform_count(n)
        };
        let mut out = Vec::with_capacity(n);
        for _ in 0..n_uniform {
            out.push((rng.random_range(0..height), rng.random_range(0..width)));
        }
        let std = self.std_frac * height.min(width) as f64;
        let normal = Normal::new(0.0, std).map_err(|e| Error::InvalidInput(e.to_string()))?;
        while out.len() < n {
            let a = anchors[rng.random_range(0..anchors.len())];
            let r = (a[0] + normal.sample(rng)).round();
            let c = (a[1] + normal.sample(rng)).round();
            if in_frame(r, c) {
                out.push((r as usize, c as usize));
            }
        }
        Ok(out)
    }
}

/// Free-function form of [`PixelSampler::sample`] with the default mix.
pub fn sample_pixels<R: Rng + ?Sized>(
    image_size: (usize, usize),
    landmarks: &[[f64; 2]],
    n: usize,
    rng: &mut R,
) -> Result<Vec<(usize, usize)>> {
    PixelSampler::default().sample(image_size.0, image_size.1, landmarks, n, rng)
}
