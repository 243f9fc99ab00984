//! Procedural face corpus: parametric heads, painted UV textures, expression
//! displacements, multi-view renders and the on-disk dataset.

pub mod dataset;
pub mod geometry;
pub mod subject;
pub mod texture;

pub use dataset::{build_dataset, Dataset, DatasetConfig, DatasetManifest, ViewSelection};
pub use geometry::{expression_name, Geometry, DEFAULT_EXPRESSIONS, MOTION_UNITS};
pub use subject::{landmarks_for, make_subject, render_ground_truth, SubjectOptions, SubjectSpec};
pub use texture::{uv_of, AppearanceParams};
