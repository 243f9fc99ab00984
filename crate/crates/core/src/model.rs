//! Read-only inference bundle: trained weights plus the code bank.

use std::path::Path;

use crate::camera::Camera;
use crate::checkpoint::load_checkpoint;
use crate::codes::FaceCodes;
use crate::error::{Error, Result};
use crate::field::FieldWeights;
use crate::image::Image;
use crate::render::{render_image, RenderSettings};
use crate::synth::expression_name;
use crate::train::{CodeBank, TrainConfig, TrainState};

#[derive(Debug, Clone)]
pub struct Model {
    pub config: TrainConfig,
    pub step: u64,
    pub weights: FieldWeights<f32>,
    pub bank: CodeBank,
}

impl Model {
    /// Requires an appearance snapshot for every subject.
    pub fn from_state(state: TrainState) -> Result<Self> {
        if state.bank.appearance.len() != state.bank.shape.len() {
            return Err(Error::Config(format!(
                "appearance snapshot covers {} of {} subjects",
                state.bank.appearance.len(),
                state.bank.shape.len()
            )));
        }
        Ok(Self {
            config: state.config,
            step: state.step,
            weights: state.weights,
            bank: state.bank,
        })
    }

    pub fn load(dir: &Path) -> Result<Self> {
        Self::from_state(load_checkpoint(dir)?)
    }

    pub fn n_subjects(&self) -> usize {
        self.bank.n_subjects()
    }

    pub fn n_expressions(&self) -> usize {
        self.bank.n_expressions()
    }

    pub fn expression_labels(&self) -> Vec<String> {
        (0..self.n_expressions()).map(expression_name).collect()
    }

    pub fn codes(&self, subject: usize, expression: usize) -> Result<FaceCodes<f32>> {
        self.bank.codes(subject, expression)
    }

    /// Render settings from the training configuration.
    pub fn render_settings(&self) -> RenderSettings {
        self.config.render_settings()
    }

    pub fn render(&self, codes: &FaceCodes<f32>, cam: &Camera, settings: &RenderSettings) -> Result<Image> {
        render_image(&self.weights, codes, cam, settings)
    }
}

/// Per-dimension `[min, max]` of each code component over the bank.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CodeRanges {
    pub shape: Vec<[f32; 2]>,
    pub appearance: Vec<[f32; 2]>,
    pub expression: Vec<[f32; 2]>,
}

fn ranges(rows: &[Vec<f32>]) -> Vec<[f32; 2]> {
    let dim = rows.first().map_or(0, Vec::len);
    (0..dim)
        .map(|d| {
            rows.iter()
                .fold([f32::INFINITY, f32::NEG_INFINITY], |[lo, hi], r| [lo.min(r[d]), hi.max(r[d])])
        })
        .collect()
}

impl Model {
    pub fn code_ranges(&self) -> CodeRanges {
        CodeRanges {
            shape: ranges(&self.bank.shape),
            appearance: ranges(&self.bank.appearance),
            expression: ranges(&self.bank.expression),
        }
    }
}
