//! Dataset build and load.
//!
//! Layout under the root directory:
//! `manifest.json`, `subjects/<id>/texture.png`, `subjects/<id>/landmarks.json`,
//! `images/<id>_<expr>_<view>.png` and `images/<id>_<expr>_<view>_mask.png`.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::subject::{make_subject, render_ground_truth, SubjectOptions};
use super::texture::AppearanceParams;
use crate::camera::{camera_rig, Camera, DEFAULT_RADIUS};
use crate::error::{Error, Result};
use crate::fsutil::{create_dir, read_json, write_json};
use crate::image::{Image, Mask};
use crate::sampler::{visible_points, LandmarkSet};
use crate::tem::TextureMap;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RigConfig {
    pub n_pitch: usize,
    pub n_yaw: usize,
    pub pitch_range: (f64, f64),
    pub yaw_range: (f64, f64),
    pub radius: f64,
}

impl Default for RigConfig {
    fn default() -> Self {
        Self {
            n_pitch: 6,
            n_yaw: 20,
            pitch_range: (-30.0, 45.0),
            yaw_range: (-90.0, 90.0),
            radius: DEFAULT_RADIUS,
        }
    }
}

/// Which rig cameras each (subject, expression) pair is rendered from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViewSelection {
    /// `count` cameras spread evenly over the rig order.
    Spread(usize),
    /// Explicit rig indices.
    Indices(Vec<usize>),
}

impl ViewSelection {
    pub fn resolve(&self, rig_size: usize) -> Result<Vec<usize>> {
        let views = match self {
            ViewSelection::Spread(count) => {
                if *count == 0 || *count > rig_size {
                    return Err(Error::Config(format!("cannot spread {count} views over a {rig_size}-camera rig")));
                }
                (0..*count).map(|i| (2 * i + 1) * rig_size / (2 * count)).collect()
            }
            ViewSelection::Indices(v) => v.clone(),
        };
        if let Some(bad) = views.iter().find(|v| **v >= rig_size) {
            return Err(Error::Config(format!("view {bad} outside the {rig_size}-camera rig")));
        }
        Ok(views)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub n_subjects: usize,
    pub n_expressions: usize,
    pub views: ViewSelection,
    pub resolution: usize,
    pub seed: u64,
    pub shape_dim: usize,
    pub texture_size: usize,
    /// Fraction of subjects in the training split (at least one).
    pub train_ratio: f64,
    pub rig: RigConfig,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            n_subjects: 16,
            n_expressions: 4,
            views: ViewSelection::Spread(30),
            resolution: 128,
            seed: 0,
            shape_dim: 50,
            texture_size: 512,
            train_ratio: 0.75,
            rig: RigConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectEntry {
    pub id: usize,
    pub shape_factors: Vec<f64>,
    pub appearance: AppearanceParams,
    pub texture: PathBuf,
    pub landmarks: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageEntry {
    pub subject: usize,
    pub expression: usize,
    pub view: usize,
    pub image: PathBuf,
    pub mask: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema: u32,
    pub config: DatasetConfig,
    pub cameras: Vec<Camera>,
    pub subjects: Vec<SubjectEntry>,
    pub images: Vec<ImageEntry>,
    pub split: Split,
}

/// Per-expression canonical landmarks of one subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandmarkFile {
    pub neutral: Vec<[f64; 3]>,
    pub expressions: Vec<Vec<[f64; 3]>>,
}

pub fn split_subjects(n: usize, ratio: f64, seed: u64) -> Split {
    let mut ids: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    ids.shuffle(&mut rng);
    let n_train = ((ratio.clamp(0.0, 1.0) * n as f64).round() as usize).clamp(n.min(1), n);
    let mut train = ids[..n_train].to_vec();
    let mut test = ids[n_train..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Split { train, test }
}

pub fn build_rig(cfg: &DatasetConfig) -> Result<Vec<Camera>> {
    let r = &cfg.rig;
    camera_rig(r.n_pitch, r.n_yaw, r.pitch_range, r.yaw_range, r.radius, cfg.resolution, cfg.resolution)
}

pub fn image_stem(subject: usize, expression: usize, view: usize) -> String {
    format!("{subject}_{expression}_{view}")
}

/// Renders every (subject, expression, view) image and writes the dataset.
pub fn build_dataset(cfg: &DatasetConfig, out_dir: &Path) -> Result<DatasetManifest> {
    if cfg.n_subjects == 0 || cfg.n_expressions == 0 || cfg.resolution == 0 {
        return Err(Error::Config("dataset needs subjects, expressions and a resolution".into()));
    }
    let cameras = build_rig(cfg)?;
    let views = cfg.views.resolve(cameras.len())?;
    let opts = SubjectOptions {
        shape_dim: cfg.shape_dim,
        texture_size: cfg.texture_size,
    };
    create_dir(&out_dir.join("images"))?;
    let mut subjects = Vec::with_capacity(cfg.n_subjects);
    let mut images = Vec::new();
    for id in 0..cfg.n_subjects {
        let spec = make_subject(id, cfg.seed, &opts)?;
        let sdir = PathBuf::from("subjects").join(id.to_string());
        create_dir(&out_dir.join(&sdir))?;
        let texture_rel = sdir.join("texture.png");
        texture_image(&spec.texture).write_png(&out_dir.join(&texture_rel))?;
        let landmarks_rel = sdir.join("landmarks.json");
        let lm = LandmarkFile {
            neutral: spec.landmarks3d.points3d.clone(),
            expressions: (0..cfg.n_expressions).map(|e| spec.landmarks(e).points3d).collect(),
        };
        write_json(&out_dir.join(&landmarks_rel), &lm)?;
        for expr in 0..cfg.n_expressions {
            for &view in &views {
                let (img, mask) = render_ground_truth(&spec, expr, &cameras[view]);
                let stem = image_stem(id, expr, view);
                let image = PathBuf::from("images").join(format!("{stem}.png"));
                let mask_path = PathBuf::from("images").join(format!("{stem}_mask.png"));
                img.write_png(&out_dir.join(&image))?;
                mask.write_png(&out_dir.join(&mask_path))?;
                images.push(ImageEntry {
                    subject: id,
                    expression: expr,
                    view,
                    image,
                    mask: mask_path,
                });
            }
        }
        log::info!("subject {id}: {} images", cfg.n_expressions * views.len());
        subjects.push(SubjectEntry {
            id,
            shape_factors: spec.shape_factors.clone(),
            appearance: spec.appearance.clone(),
            texture: texture_rel,
            landmarks: landmarks_rel,
        });
    }
    let manifest = DatasetManifest {
        schema: SCHEMA_VERSION,
        config: cfg.clone(),
        cameras,
        subjects,
        images,
        split: split_subjects(cfg.n_subjects, cfg.train_ratio, cfg.seed),
    };
    write_json(&out_dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

fn texture_image(tex: &TextureMap) -> Image {
    Image::new(tex.side(), tex.side(), tex.pixels().to_vec()).expect("square RGB texture")
}

#[derive(Debug, Clone)]
pub struct LoadedSubject {
    pub id: usize,
    pub shape_factors: Vec<f64>,
    pub texture: TextureMap,
    /// Indexed by expression label.
    pub landmarks: Vec<LandmarkSet>,
}

#[derive(Debug, Clone)]
pub struct Sample {
    pub subject: usize,
    pub expression: usize,
    pub view: usize,
    pub image: Image,
    pub mask: Mask,
}

/// A dataset loaded fully into memory.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: DatasetManifest,
    pub subjects: Vec<LoadedSubject>,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn load(root: &Path) -> Result<Self> {
        let manifest_path = root.join("manifest.json");
        let raw: serde_json::Value = read_json(&manifest_path)?;
        let version = raw.get("schema").and_then(|v| v.as_u64());
        if version != Some(SCHEMA_VERSION as u64) {
            return Err(Error::schema(
                &manifest_path,
                format!("unsupported schema {version:?}, expected {SCHEMA_VERSION}"),
            ));
        }
        let manifest: DatasetManifest =
            serde_json::from_value(raw).map_err(|e| Error::schema(&manifest_path, e.to_string()))?;
        let mut subjects = Vec::with_capacity(manifest.subjects.len());
        for (i, s) in manifest.subjects.iter().enumerate() {
            if s.id != i {
                return Err(Error::schema(&manifest_path, format!("subject {i} has id {}", s.id)));
            }
            let tex_path = root.join(&s.texture);
            let img = Image::read_png(&tex_path)?;
            if img.width != img.height {
                return Err(Error::schema(&tex_path, "texture is not square"));
            }
            let texture = TextureMap::new(img.width, img.data)?;
            let lm: LandmarkFile = read_json(&root.join(&s.landmarks))?;
            let landmarks = lm.expressions.into_iter().map(LandmarkSet::new).collect::<Result<Vec<_>>>()?;
            subjects.push(LoadedSubject {
                id: s.id,
                shape_factors: s.shape_factors.clone(),
                texture,
                landmarks,
            });
        }
        let mut samples = Vec::with_capacity(manifest.images.len());
        for e in &manifest.images {
            let bad = e.subject >= subjects.len()
                || e.view >= manifest.cameras.len()
                || e.expression >= subjects[e.subject].landmarks.len();
            if bad {
                return Err(Error::schema(&manifest_path, format!("image entry {:?} out of range", e.image)));
            }
            samples.push(Sample {
                subject: e.subject,
                expression: e.expression,
                view: e.view,
                image: Image::read_png(&root.join(&e.image))?,
                mask: Mask::read_png(&root.join(&e.mask))?,
            });
        }
        Ok(Self {
            root: root.to_path_buf(),
            manifest,
            subjects,
            samples,
        })
    }

    pub fn n_expressions(&self) -> usize {
        self.manifest.config.n_expressions
    }

    pub fn camera(&self, view: usize) -> &Camera {
        &self.manifest.cameras[view]
    }

    /// Indices of samples whose subject is in the training split.
    pub fn train_indices(&self) -> Vec<usize> {
        self.split_indices(&self.manifest.split.train)
    }

    pub fn test_indices(&self) -> Vec<usize> {
        self.split_indices(&self.manifest.split.test)
    }

    fn split_indices(&self, ids: &[usize]) -> Vec<usize> {
        (0..self.samples.len())
            .filter(|i| ids.contains(&self.samples[*i].subject))
            .collect()
    }

    /// Visible landmark pixels `(row, col)` of a sample.
    pub fn landmarks_2d(&self, sample: usize) -> Vec<[f64; 2]> {
        let s = &self.samples[sample];
        visible_points(&self.subjects[s.subject].landmarks[s.expression].project(self.camera(s.view)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_is_a_partition() {
        for n in 1..20 {
            let s = split_subjects(n, 0.75, 9);
            let mut all: Vec<usize> = s.train.iter().chain(&s.test).copied().collect();
            all.sort_unstable();
            assert_eq!(all, (0..n).collect::<Vec<_>>());
            assert!(!s.train.is_empty());
        }
    }

    #[test]
    fn spread_views_are_distinct() {
        let v = ViewSelection::Spread(30).resolve(120).unwrap();
        assert_eq!(v.len(), 30);
        assert!(v.windows(2).all(|w| w[0] < w[1]));
        assert!(ViewSelection::Indices(vec![120]).resolve(120).is_err());
    }
}
