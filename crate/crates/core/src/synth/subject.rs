//! Synthetic subjects and their ground-truth renders.

use std::sync::OnceLock;

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::geometry::{template_landmarks, Geometry};
use super::texture::{paint_texture, uv_of, AppearanceParams};
use crate::camera::Camera;
use crate::error::Result;
use crate::image::{Image, Mask};
use crate::sampler::LandmarkSet;
use crate::tem::TextureMap;

const SHAPE_STD: f64 = 0.8;
const AMBIENT: f64 = 0.35;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubjectOptions {
    pub shape_dim: usize,
    pub texture_size: usize,
}

impl Default for SubjectOptions {
    fn default() -> Self {
        Self {
            shape_dim: 50,
            texture_size: 512,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubjectSpec {
    pub id: usize,
    /// Each entry in `[-2, 2]`; all zeros is the mean head.
    pub shape_factors: Vec<f64>,
    pub appearance: AppearanceParams,
    pub texture: TextureMap,
    /// Neutral-expression landmarks.
    pub landmarks3d: LandmarkSet,
}

fn template_anchor_cache() -> &'static [Vector3<f64>] {
    static CELL: OnceLock<Vec<Vector3<f64>>> = OnceLock::new();
    CELL.get_or_init(template_landmarks)
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Deterministic subject from `(id, seed)`. Shape and appearance draw from
/// independent RNG streams.
pub fn make_subject(id: usize, seed: u64, opts: &SubjectOptions) -> Result<SubjectSpec> {
    let mut shape_rng = stream_rng(seed, 2 * id as u64);
    let normal = Normal::new(0.0, SHAPE_STD).expect("valid deviation");
    let shape: Vec<f64> = (0..opts.shape_dim)
        .map(|_| normal.sample(&mut shape_rng).clamp(-2.0, 2.0))
        .collect();
    let appearance = AppearanceParams::sample(&mut stream_rng(seed, 2 * id as u64 + 1));
    SubjectSpec::from_parts(id, shape, appearance, opts.texture_size)
}

impl SubjectSpec {
    pub fn from_parts(id: usize, shape_factors: Vec<f64>, appearance: AppearanceParams, texture_size: usize) -> Result<Self> {
        let shape_factors: Vec<f64> = shape_factors.into_iter().map(|v| v.clamp(-2.0, 2.0)).collect();
        let texture = paint_texture(&appearance, texture_size)?;
        let landmarks3d = landmarks_for(&shape_factors, 0);
        Ok(Self {
            id,
            shape_factors,
            appearance,
            texture,
            landmarks3d,
        })
    }

    pub fn geometry(&self, expression: usize) -> Geometry {
        Geometry::new(&self.shape_factors, expression)
    }

    pub fn landmarks(&self, expression: usize) -> LandmarkSet {
        landmarks_for(&self.shape_factors, expression)
    }
}

pub fn landmarks_for(shape_factors: &[f64], expression: usize) -> LandmarkSet {
    let g = Geometry::new(shape_factors, expression);
    let pts = template_anchor_cache()
        .iter()
        .map(|q| {
            let p = g.warp(*q);
            [p.x, p.y, p.z]
        })
        .collect();
    LandmarkSet::new(pts).expect("64 template anchors")
}

/// Sphere-traced diffuse render under a light fixed in the head frame.
/// Background is black and excluded from the mask.
pub fn render_ground_truth(spec: &SubjectSpec, expression: usize, cam: &Camera) -> (Image, Mask) {
    render_with_texture(&spec.geometry(expression), &spec.texture, cam)
}

pub fn render_with_texture(geom: &Geometry, texture: &TextureMap, cam: &Camera) -> (Image, Mask) {
    let light = Vector3::new(0.0, 0.4, 1.0).normalize();
    let mut img = Image::filled(cam.width, cam.height, [0.0; 3]);
    let mut mask = vec![false; cam.width * cam.height];
    let o = Vector3::from(cam.center());
    for row in 0..cam.height {
        for col in 0..cam.width {
            let d = Vector3::from(cam.direction_at(row as f64, col as f64));
            let Some((_, p)) = geom.trace(o, d, cam.near, cam.far) else {
                continue;
            };
            let q = geom.unwarp(p);
            let (u, v) = uv_of([q.x, q.y, q.z]);
            let albedo = texture.sample(u, v);
            let lambert = geom.normal(p).dot(&light).max(0.0);
            let k = AMBIENT + (1.0 - AMBIENT) * lambert;
            img.set_pixel(row, col, albedo.map(|a| (a * k).clamp(0.0, 1.0) as f32));
            mask[row * cam.width + col] = true;
        }
    }
    (img, Mask::new(cam.width, cam.height, mask).expect("frame-sized mask"))
}
