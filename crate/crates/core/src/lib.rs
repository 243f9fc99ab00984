//! Morphable neural radiance field for human faces: a code-conditioned field,
//! differentiable volume rendering, synthetic training data, training and
//! code fitting, and morphing utilities.

pub mod camera;
pub mod checkpoint;
pub mod codes;
pub mod encoding;
pub mod error;
pub mod field;
pub mod fit;
mod fsutil;
pub mod image;
pub mod metrics;
pub mod model;
pub mod morph;
pub mod nn;
pub mod optim;
pub mod real;
pub mod render;
pub mod sampler;
pub mod synth;
pub mod tem;
pub mod train;

pub use codes::{CodeKind, FaceCodes, APPEARANCE_DIM};
pub use error::{Error, Result};
pub use field::{evaluate_field, ism_modulate, FieldConfig, FieldInput, FieldOutput, FieldWeights, Level};
pub use tem::{tem_encode, Tem, TextureMap};
pub use camera::{Camera, Ray};
pub use image::{Image, Mask};
pub use render::{composite, hierarchical_resample, render_image, stratified_sample, RenderSettings};
pub use sampler::{project_landmarks, sample_pixels, LandmarkSet, PixelSampler, LANDMARK_COUNT};
pub use metrics::{psnr, ssim, MetricReport};
