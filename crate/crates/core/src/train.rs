//! Joint optimization of network weights and the code bank.

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::codes::FaceCodes;
use crate::error::{Error, Result};
use crate::camera::{Camera, Ray};
use crate::field::{Conditioning, FieldConfig, FieldWeights};
use crate::fsutil::{create_dir, write_json};
use crate::nn::Parameters;
use crate::optim::{adam_update, exponential_lr, AdamConfig, VecAdam};
use crate::render::{backward_rays, forward_rays, CondGrads, RenderSettings};
use crate::sampler::PixelSampler;
use crate::synth::Dataset;
use crate::tem::TextureMap;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub field: FieldConfig,
    pub rays_per_iter: usize,
    pub n_coarse: usize,
    pub n_fine: usize,
    /// Rays per network batch inside one iteration.
    pub chunk: usize,
    pub background: [f64; 3],
    pub lr_start: f64,
    pub lr_end: f64,
    pub adam: AdamConfig,
    pub total_iters: u64,
    pub seed: u64,
    pub sampler: PixelSampler,
    /// Randomize sample depths within their strata.
    pub jitter: bool,
    /// Draw the appearance code through the encoder's noise each step.
    pub tem_stochastic: bool,
    pub expr_init_std: f64,
    /// Where a diagnostic dump goes when the loss stops being finite.
    pub dump_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            field: FieldConfig::default(),
            rays_per_iter: 1024,
            n_coarse: 64,
            n_fine: 64,
            chunk: 64,
            background: [0.0; 3],
            lr_start: 5e-4,
            lr_end: 2e-5,
            adam: AdamConfig::default(),
            total_iters: 200_000,
            seed: 0,
            sampler: PixelSampler::default(),
            jitter: true,
            tem_stochastic: true,
            expr_init_std: 1.0,
            dump_dir: None,
        }
    }
}

impl TrainConfig {
    pub fn render_settings(&self) -> RenderSettings {
        RenderSettings {
            n_coarse: self.n_coarse,
            n_fine: self.n_fine,
            background: self.background,
            coarse_only: false,
            chunk: self.chunk,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.field.validate()?;
        self.render_settings().validate()?;
        if self.rays_per_iter == 0 || !(self.lr_start > 0.0) || !(self.lr_end > 0.0) {
            return Err(Error::Config("rays per iteration and learning rates must be positive".into()));
        }
        Ok(())
    }

    pub fn lr_at(&self, step: u64) -> f64 {
        exponential_lr(self.lr_start, self.lr_end, step, self.total_iters)
    }
}

/// Per-subject and per-expression latent codes.
#[derive(Debug, Clone, PartialEq)]
pub struct CodeBank {
    /// Fixed at initialization from the generator's shape factors.
    pub shape: Vec<Vec<f32>>,
    /// Deterministic encoder snapshots; filled by [`TrainState::snapshot_appearance`].
    pub appearance: Vec<Vec<f32>>,
    /// Learned, shared across subjects, indexed by expression label.
    pub expression: Vec<Vec<f32>>,
    pub expression_optim: Vec<VecAdam>,
}

impl CodeBank {
    pub fn n_subjects(&self) -> usize {
        self.shape.len()
    }

    pub fn n_expressions(&self) -> usize {
        self.expression.len()
    }

    pub fn codes(&self, subject: usize, expression: usize) -> Result<FaceCodes<f32>> {
        let beta = self
            .shape
            .get(subject)
            .ok_or_else(|| Error::InvalidInput(format!("unknown subject {subject}")))?;
        let alpha = self
            .appearance
            .get(subject)
            .ok_or_else(|| Error::InvalidInput(format!("no appearance snapshot for subject {subject}")))?;
        let eps = self
            .expression
            .get(expression)
            .ok_or_else(|| Error::InvalidInput(format!("unknown expression {expression}")))?;
        Ok(FaceCodes {
            beta: beta.clone(),
            alpha: alpha.clone(),
            eps: eps.clone(),
        })
    }
}

/// Everything needed to resume training bit-exactly.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub config: TrainConfig,
    pub weights: FieldWeights<f32>,
    pub adam_m: FieldWeights<f32>,
    pub adam_v: FieldWeights<f32>,
    pub bank: CodeBank,
    pub step: u64,
    pub rng: ChaCha8Rng,
}

impl TrainState {
    pub fn new(config: TrainConfig, data: &Dataset) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let weights = FieldWeights::<f32>::new(config.field.clone(), &mut rng)?;
        let sd = config.field.shape_dim;
        let mut shape = Vec::with_capacity(data.subjects.len());
        for s in &data.subjects {
            if s.shape_factors.len() != sd {
                return Err(Error::Config(format!(
                    "dataset has {} shape factors per subject, model expects {sd}",
                    s.shape_factors.len()
                )));
            }
            shape.push(s.shape_factors.iter().map(|v| *v as f32).collect());
        }
        if let Some(s) = data.subjects.iter().find(|s| s.texture.side() != config.field.texture_size) {
            return Err(Error::Config(format!(
                "texture side {} does not match encoder input {}",
                s.texture.side(),
                config.field.texture_size
            )));
        }
        let ed = config.field.expr_dim;
        let normal = Normal::new(0.0, config.expr_init_std).map_err(|e| Error::Config(e.to_string()))?;
        let expression = (0..data.n_expressions())
            .map(|_| (0..ed).map(|_| normal.sample(&mut rng) as f32).collect())
            .collect();
        let bank = CodeBank {
            shape,
            appearance: Vec::new(),
            expression,
            expression_optim: (0..data.n_expressions()).map(|_| VecAdam::new(ed)).collect(),
        };
        Ok(Self {
            adam_m: weights.zeros_like(),
            adam_v: weights.zeros_like(),
            weights,
            bank,
            step: 0,
            rng,
            config,
        })
    }

    /// Deterministic appearance codes for every subject texture.
    pub fn snapshot_appearance(&mut self, textures: &[&TextureMap]) -> Result<()> {
        self.bank.appearance = textures
            .iter()
            .map(|t| Ok(self.weights.tem.encode::<ChaCha8Rng>(t, None)?.alpha))
            .collect::<Result<Vec<_>>>()?;
        Ok(())
    }
}

/// Mean over rays of the squared coarse and fine color errors.
pub fn loss(pred_coarse: &[[f64; 3]], pred_fine: &[[f64; 3]], gt: &[[f64; 3]]) -> Result<f64> {
    if pred_coarse.len() != gt.len() || pred_fine.len() != gt.len() {
        return Err(Error::InvalidInput("prediction and target batches differ in length".into()));
    }
    if gt.is_empty() {
        return Ok(0.0);
    }
    let sq = |a: &[f64; 3], b: &[f64; 3]| (0..3).map(|k| (a[k] - b[k]).powi(2)).sum::<f64>();
    let total: f64 = gt
        .iter()
        .enumerate()
        .map(|(i, g)| sq(&pred_coarse[i], g) + sq(&pred_fine[i], g))
        .sum();
    Ok(total / gt.len() as f64)
}

/// Loss and conditioning gradients of one ray batch.
#[derive(Debug, Clone)]
pub struct BatchGrad {
    /// Mean over rays of the summed coarse and fine squared errors.
    pub loss: f64,
    /// Mean squared error of the final colors per channel.
    pub fine_mse: f64,
    pub cond: CondGrads<f32>,
}

/// Forward and backward over `rays` in chunks, accumulating weight gradients
/// into `grad`. `target(row, col)` supplies the reference color.
#[allow(clippy::too_many_arguments)]
pub fn batch_backward<R: Rng + ?Sized>(
    weights: &FieldWeights<f32>,
    cond: &Conditioning<f32>,
    cam: &Camera,
    rays: &[Ray],
    target: impl Fn(usize, usize) -> [f64; 3],
    settings: &RenderSettings,
    mut jitter: Option<&mut R>,
    grad: &mut FieldWeights<f32>,
) -> Result<BatchGrad> {
    let n = rays.len().max(1) as f64;
    let mut total = 0.0;
    let mut fine_se = 0.0;
    let mut cond_grad = CondGrads::zeros(cond.trunk_code.len(), cond.alpha.len());
    for chunk in rays.chunks(settings.chunk) {
        let pass = forward_rays(weights, cond, chunk, cam.near, cam.far, settings, jitter.as_deref_mut())?;
        let gt: Vec<[f64; 3]> = chunk.iter().map(|r| target(r.pixel.0, r.pixel.1)).collect();
        let pc = pass.coarse.ray_colors();
        let pf = pass.final_colors();
        let mut dc = Vec::with_capacity(gt.len());
        let mut df = Vec::with_capacity(gt.len());
        for i in 0..gt.len() {
            let mut a = [0.0; 3];
            let mut b = [0.0; 3];
            for k in 0..3 {
                let ec = pc[i][k] - gt[i][k];
                let ef = pf[i][k] - gt[i][k];
                total += ec * ec + ef * ef;
                fine_se += ef * ef;
                a[k] = 2.0 * ec / n;
                b[k] = 2.0 * ef / n;
            }
            dc.push(a);
            df.push(b);
        }
        let fine_d = pass.fine.as_ref().map(|_| df.as_slice());
        let coarse_d = if pass.fine.is_some() {
            dc
        } else {
            // coarse-only: both loss terms land on the coarse colors
            dc.iter().zip(&df).map(|(a, b)| [a[0] + b[0], a[1] + b[1], a[2] + b[2]]).collect()
        };
        let g = backward_rays(weights, cond, &pass, Some(&coarse_d), fine_d, settings.background, grad);
        cond_grad.add(&g);
    }
    Ok(BatchGrad {
        loss: total / n,
        fine_mse: fine_se / (3.0 * n),
        cond: cond_grad,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GradNorms {
    pub coarse: f64,
    pub fine: f64,
    pub ism: f64,
    pub tem: f64,
    pub expression: f64,
    /// Shape codes are never updated, so this is always zero.
    pub shape: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: u64,
    pub loss: f64,
    /// PSNR of the fine colors on this batch.
    pub psnr_probe: f64,
    pub lr: f64,
    pub subject: usize,
    pub expression: usize,
    pub view: usize,
    pub grad_norms: GradNorms,
    #[serde(skip)]
    pub sample: usize,
    #[serde(skip)]
    pub pixels: Vec<(usize, usize)>,
}

/// Drives [`TrainState`] over a loaded dataset.
pub struct Trainer<'a> {
    data: &'a Dataset,
    pub state: TrainState,
    grad: FieldWeights<f32>,
    train_samples: Vec<usize>,
}

fn norm(x: &[f32]) -> f64 {
    x.iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt()
}

impl<'a> Trainer<'a> {
    pub fn new(data: &'a Dataset, config: TrainConfig) -> Result<Self> {
        let state = TrainState::new(config, data)?;
        Self::with_state(data, state)
    }

    pub fn with_state(data: &'a Dataset, state: TrainState) -> Result<Self> {
        let train_samples = data.train_indices();
        if train_samples.is_empty() {
            return Err(Error::Config("training split has no images".into()));
        }
        if state.bank.n_subjects() != data.subjects.len() || state.bank.n_expressions() != data.n_expressions() {
            return Err(Error::Config("code bank does not match the dataset".into()));
        }
        Ok(Self {
            grad: state.weights.zeros_like(),
            data,
            state,
            train_samples,
        })
    }

    pub fn dataset(&self) -> &Dataset {
        self.data
    }

    pub fn into_state(self) -> TrainState {
        self.state
    }

    /// Loss of `weights` on a fixed batch with deterministic depths and codes.
    pub fn batch_loss(&self, weights: &FieldWeights<f32>, sample: usize, pixels: &[(usize, usize)]) -> Result<f64> {
        let s = &self.data.samples[sample];
        let tex = &self.data.subjects[s.subject].texture;
        let alpha = weights.tem.encode::<ChaCha8Rng>(tex, None)?.alpha;
        let codes = FaceCodes {
            beta: self.state.bank.shape[s.subject].clone(),
            alpha,
            eps: self.state.bank.expression[s.expression].clone(),
        };
        let cond = weights.condition(&codes)?;
        let cam = self.data.camera(s.view);
        let rays = cam.generate_rays(pixels)?;
        let settings = self.state.config.render_settings();
        let (mut pc, mut pf, mut gt) = (Vec::new(), Vec::new(), Vec::new());
        for chunk in rays.chunks(settings.chunk) {
            let pass = forward_rays::<f32, ChaCha8Rng>(weights, &cond, chunk, cam.near, cam.far, &settings, None)?;
            pc.extend(pass.coarse.ray_colors());
            pf.extend(pass.final_colors());
            gt.extend(chunk.iter().map(|r| s.image.pixel(r.pixel.0, r.pixel.1).map(|v| v as f64)));
        }
        loss(&pc, &pf, &gt)
    }

    pub fn step(&mut self) -> Result<StepMetrics> {
        let st = &mut self.state;
        let cfg = st.config.clone();
        let lr = cfg.lr_at(st.step);
        let sample = self.train_samples[st.rng.random_range(0..self.train_samples.len())];
        let s = &self.data.samples[sample];
        let cam = self.data.camera(s.view);
        let lms = self.data.landmarks_2d(sample);
        let pixels = cfg.sampler.sample(cam.height, cam.width, &lms, cfg.rays_per_iter, &mut st.rng)?;

        let tex = &self.data.subjects[s.subject].texture;
        let tem_out = if cfg.tem_stochastic {
            st.weights.tem.encode(tex, Some(&mut st.rng))?
        } else {
            st.weights.tem.encode::<ChaCha8Rng>(tex, None)?
        };
        let codes = FaceCodes {
            beta: st.bank.shape[s.subject].clone(),
            alpha: tem_out.alpha.clone(),
            eps: st.bank.expression[s.expression].clone(),
        };
        let cond = st.weights.condition(&codes)?;
        let rays = cam.generate_rays(&pixels)?;
        let settings = cfg.render_settings();
        self.grad.fill_zero();

        let jitter = if cfg.jitter { Some(&mut st.rng) } else { None };
        let batch = batch_backward(
            &st.weights,
            &cond,
            cam,
            &rays,
            |r, c| s.image.pixel(r, c).map(|v| v as f64),
            &settings,
            jitter,
            &mut self.grad,
        )?;
        let n = rays.len() as f64;
        let (total, fine_se, cond_grad) = (batch.loss * n, batch.fine_mse * 3.0 * n, batch.cond);
        let loss_value = total / n;
        if !loss_value.is_finite() {
            return Err(self.non_finite(loss_value, sample));
        }
        let st = &mut self.state;

        let (_d_beta, d_eps) = st.weights.condition_backward(&codes, &cond, &cond_grad.trunk_code, &mut self.grad);
        st.weights.tem.backward(&tem_out, &cond_grad.alpha, &mut self.grad.tem);

        let grad_norms = GradNorms {
            coarse: self.grad.coarse.sum_squares().sqrt(),
            fine: self.grad.fine.sum_squares().sqrt(),
            ism: self.grad.ism.as_ref().map_or(0.0, |g| g.sum_squares().sqrt()),
            tem: self.grad.tem.sum_squares().sqrt(),
            expression: norm(&d_eps),
            shape: 0.0,
        };

        let t = st.step + 1;
        {
            let params = st.weights.tensors_mut();
            let grads = self.grad.tensors();
            let ms = st.adam_m.tensors_mut();
            let vs = st.adam_v.tensors_mut();
            for (((p, g), m), v) in params.into_iter().zip(grads).zip(ms).zip(vs) {
                adam_update(p, g.data, m, v, lr, t, &cfg.adam);
            }
        }
        if !d_eps.is_empty() {
            let e = s.expression;
            st.bank.expression_optim[e].step(&mut st.bank.expression[e], &d_eps, lr, &cfg.adam);
        }
        st.step = t;
        Ok(StepMetrics {
            step: t,
            loss: loss_value,
            psnr_probe: crate::metrics::psnr_from_mse(fine_se / (3.0 * n)),
            lr,
            subject: s.subject,
            expression: s.expression,
            view: s.view,
            grad_norms,
            sample,
            pixels,
        })
    }

    fn non_finite(&self, loss_value: f64, sample: usize) -> Error {
        let st = &self.state;
        let s = &self.data.samples[sample];
        let dump = serde_json::json!({
            "step": st.step,
            "loss": loss_value.to_string(),
            "lr": st.config.lr_at(st.step),
            "subject": s.subject,
            "expression": s.expression,
            "view": s.view,
            "weights_finite": st.weights.all_finite(),
            "expression_codes_finite": st.bank.expression.iter().flatten().all(|v| v.is_finite()),
            "weight_norm": st.weights.sum_squares().sqrt(),
        });
        let mut diagnostics = dump.to_string();
        if let Some(dir) = &st.config.dump_dir {
            let path = dir.join(format!("nonfinite_step{}.json", st.step));
            match create_dir(dir).and_then(|_| write_json(&path, &dump)) {
                Ok(()) => diagnostics.push_str(&format!(" (dump written to {})", path.display())),
                Err(e) => diagnostics.push_str(&format!(" (dump failed: {e})")),
            }
        }
        Error::NonFiniteLoss {
            step: st.step,
            diagnostics,
        }
    }

    /// Fills the appearance snapshot from the dataset textures.
    pub fn snapshot_appearance(&mut self) -> Result<()> {
        let textures: Vec<&TextureMap> = self.data.subjects.iter().map(|s| &s.texture).collect();
        self.state.snapshot_appearance(&textures)
    }
}
