//! Inversion of a trained model against a single masked image: landmark
//! alignment for the view, then gradient descent on the codes with the
//! network weights frozen.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::camera::{Camera, DEFAULT_FOV_DEG, DEFAULT_RADIUS};
use crate::codes::{FaceCodes, APPEARANCE_DIM};
use crate::error::{Error, Result};
use crate::field::FieldWeights;
use crate::image::{Image, Mask};
use crate::nn::Parameters;
use crate::optim::{AdamConfig, VecAdam};
use crate::render::{render_pixels, RenderSettings};
use crate::sampler::{LandmarkSet, PixelSampler, LANDMARK_COUNT};
use crate::train::batch_backward;

/// A segmented photo with its 64 landmarks as `(row, col)` pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitTarget {
    pub image: Image,
    pub mask: Mask,
    pub landmarks2d: Vec<[f64; 2]>,
}

impl FitTarget {
    pub fn new(image: Image, mask: Mask, landmarks2d: Vec<[f64; 2]>) -> Result<Self> {
        let t = Self {
            image,
            mask,
            landmarks2d,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if self.image.width != self.mask.width || self.image.height != self.mask.height {
            return Err(Error::InvalidInput(format!(
                "mask is {}x{}, image is {}x{}",
                self.mask.width, self.mask.height, self.image.width, self.image.height
            )));
        }
        if self.image.data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidInput("image values must lie in [0, 1]".into()));
        }
        if self.mask.count() == 0 {
            return Err(Error::InvalidInput("mask is empty".into()));
        }
        if self.landmarks2d.len() != LANDMARK_COUNT {
            return Err(Error::InvalidInput(format!(
                "expected {LANDMARK_COUNT} landmarks, got {}",
                self.landmarks2d.len()
            )));
        }
        if self.landmarks2d.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("landmarks must be finite".into()));
        }
        Ok(())
    }

    /// Indices of landmarks whose nearest pixel lies inside the mask.
    pub fn masked_landmarks(&self) -> Vec<usize> {
        let (h, w) = (self.mask.height as f64, self.mask.width as f64);
        (0..self.landmarks2d.len())
            .filter(|&i| {
                let [r, c] = self.landmarks2d[i];
                let (r, c) = (r.round(), c.round());
                r >= 0.0 && c >= 0.0 && r < h && c < w && self.mask.get(r as usize, c as usize)
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlignOptions {
    /// Also solve an in-plane translation of the projected landmarks.
    pub translation: bool,
    /// RMS residual above which alignment fails; `None` uses 5% of the
    /// shorter image side.
    pub threshold_px: Option<f64>,
    pub grid_step_deg: f64,
    pub yaw_range: (f64, f64),
    pub pitch_range: (f64, f64),
    pub radius: f64,
    pub fov_deg: f64,
}

impl Default for AlignOptions {
    fn default() -> Self {
        Self {
            translation: false,
            threshold_px: None,
            grid_step_deg: 5.0,
            yaw_range: (-90.0, 90.0),
            pitch_range: (-30.0, 45.0),
            radius: DEFAULT_RADIUS,
            fov_deg: DEFAULT_FOV_DEG,
        }
    }
}

/// View recovered by landmark alignment. Projected canonical landmarks map
/// to `c + scale * (p - c) + translation` with `c` the principal point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignedView {
    pub yaw_deg: f64,
    pub pitch_deg: f64,
    pub scale: f64,
    /// `(row, col)` offset in pixels; zero unless translation was solved.
    pub translation: [f64; 2],
    pub used_translation: bool,
    pub radius: f64,
    pub fov_deg: f64,
    pub residual_px: f64,
    pub landmarks_used: usize,
}

impl AlignedView {
    /// Camera reproducing the aligned projection at the given resolution.
    pub fn camera(&self, width: usize, height: usize) -> Result<Camera> {
        let mut cam = Camera::orbit_with_fov(self.yaw_deg, self.pitch_deg, self.radius, width, height, self.fov_deg)?
            .with_focal_scale(self.scale);
        cam.cy += self.translation[0];
        cam.cx += self.translation[1];
        cam.validate()?;
        Ok(cam)
    }
}

struct Similarity {
    scale: f64,
    translation: [f64; 2],
    rms: f64,
}

/// Least-squares scale (and optional translation) about the principal point.
fn fit_similarity(proj: &[[f64; 2]], target: &[[f64; 2]], center: [f64; 2], translation: bool) -> Option<Similarity> {
    let n = proj.len() as f64;
    let a: Vec<[f64; 2]> = proj.iter().map(|p| [p[0] - center[0], p[1] - center[1]]).collect();
    let b: Vec<[f64; 2]> = target.iter().map(|p| [p[0] - center[0], p[1] - center[1]]).collect();
    let mean = |v: &[[f64; 2]]| {
        let s = v.iter().fold([0.0; 2], |acc, p| [acc[0] + p[0], acc[1] + p[1]]);
        [s[0] / n, s[1] / n]
    };
    let (ma, mb) = if translation { (mean(&a), mean(&b)) } else { ([0.0; 2], [0.0; 2]) };
    let mut num = 0.0;
    let mut den = 0.0;
    for (p, q) in a.iter().zip(&b) {
        for k in 0..2 {
            num += (p[k] - ma[k]) * (q[k] - mb[k]);
            den += (p[k] - ma[k]).powi(2);
        }
    }
    if !(den > 0.0) {
        return None;
    }
    let scale = num / den;
    if !(scale > 0.0) {
        return None;
    }
    let t = [mb[0] - scale * ma[0], mb[1] - scale * ma[1]];
    let se: f64 = a
        .iter()
        .zip(&b)
        .map(|(p, q)| (scale * p[0] + t[0] - q[0]).powi(2) + (scale * p[1] + t[1] - q[1]).powi(2))
        .sum();
    Some(Similarity {
        scale,
        translation: t,
        rms: (se / n).sqrt(),
    })
}

/// Minimizes `f` over two variables with the Nelder–Mead simplex method.
fn nelder_mead(f: &dyn Fn([f64; 2]) -> f64, start: [f64; 2], step: f64, tol: f64, max_iter: usize) -> ([f64; 2], f64) {
    let mut pts = [start, [start[0] + step, start[1]], [start[0], start[1] + step]];
    let mut vals = pts.map(f);
    let lerp = |a: [f64; 2], b: [f64; 2], t: f64| [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])];
    for _ in 0..max_iter {
        let mut idx = [0, 1, 2];
        idx.sort_by(|&i, &j| vals[i].total_cmp(&vals[j]));
        pts = idx.map(|i| pts[i]);
        vals = idx.map(|i| vals[i]);
        let spread = (pts[1][0] - pts[0][0]).abs().max((pts[1][1] - pts[0][1]).abs())
            .max((pts[2][0] - pts[0][0]).abs())
            .max((pts[2][1] - pts[0][1]).abs());
        if spread < tol {
            break;
        }
        let centroid = lerp(pts[0], pts[1], 0.5);
        let reflected = lerp(centroid, pts[2], -1.0);
        let fr = f(reflected);
        if fr < vals[0] {
            let expanded = lerp(centroid, pts[2], -2.0);
            let fe = f(expanded);
            if fe < fr {
                pts[2] = expanded;
                vals[2] = fe;
            } else {
                pts[2] = reflected;
                vals[2] = fr;
            }
            continue;
        }
        if fr < vals[1] {
            pts[2] = reflected;
            vals[2] = fr;
            continue;
        }
        let contracted = if fr < vals[2] {
            lerp(centroid, reflected, 0.5)
        } else {
            lerp(centroid, pts[2], 0.5)
        };
        let fc = f(contracted);
        if fc < vals[2].min(fr) {
            pts[2] = contracted;
            vals[2] = fc;
            continue;
        }
        for i in 1..3 {
            pts[i] = lerp(pts[0], pts[i], 0.5);
            vals[i] = f(pts[i]);
        }
    }
    let best = (0..3).min_by(|&i, &j| vals[i].total_cmp(&vals[j])).expect("three vertices");
    (pts[best], vals[best])
}

/// Solves yaw, pitch and scale (plus an optional translation) that best map
/// the projected `canonical` landmarks onto the target's.
pub fn align_landmarks(target: &FitTarget, canonical: &LandmarkSet, opts: &AlignOptions) -> Result<AlignedView> {
    target.validate()?;
    if !(opts.grid_step_deg > 0.0) || opts.yaw_range.0 > opts.yaw_range.1 || opts.pitch_range.0 > opts.pitch_range.1 {
        return Err(Error::InvalidInput("invalid alignment search ranges".into()));
    }
    let (w, h) = (target.image.width, target.image.height);
    let threshold = opts.threshold_px.unwrap_or(0.05 * w.min(h) as f64);
    let used = target.masked_landmarks();
    let min_points = if opts.translation { 4 } else { 3 };
    if used.len() < min_points {
        return Err(Error::AlignmentFailed {
            residual_px: f64::INFINITY,
            threshold_px: threshold,
            yaw_deg: f64::NAN,
            pitch_deg: f64::NAN,
            scale: f64::NAN,
        });
    }
    let tgt: Vec<[f64; 2]> = used.iter().map(|&i| target.landmarks2d[i]).collect();
    let evaluate = |yaw: f64, pitch: f64| -> Option<(Similarity, [f64; 2])> {
        let cam = Camera::orbit_with_fov(yaw, pitch, opts.radius, w, h, opts.fov_deg).ok()?;
        let mut proj = Vec::with_capacity(used.len());
        for &i in &used {
            let p = cam.project(canonical.points3d[i]);
            if !p.row.is_finite() {
                return None;
            }
            proj.push([p.row, p.col]);
        }
        let center = [cam.cy, cam.cx];
        fit_similarity(&proj, &tgt, center, opts.translation).map(|s| (s, center))
    };
    let cost = |x: [f64; 2]| evaluate(x[0], x[1]).map_or(f64::INFINITY, |(s, _)| s.rms);

    let mut best = ([0.0, 0.0], f64::INFINITY);
    let steps = |lo: f64, hi: f64| ((hi - lo) / opts.grid_step_deg + 1e-9).floor() as usize;
    for i in 0..=steps(opts.yaw_range.0, opts.yaw_range.1) {
        for j in 0..=steps(opts.pitch_range.0, opts.pitch_range.1) {
            let x = [
                opts.yaw_range.0 + i as f64 * opts.grid_step_deg,
                opts.pitch_range.0 + j as f64 * opts.grid_step_deg,
            ];
            let c = cost(x);
            if c < best.1 {
                best = (x, c);
            }
        }
    }
    if best.1.is_finite() {
        best = nelder_mead(&cost, best.0, 0.5 * opts.grid_step_deg, 1e-7, 500);
    }
    let Some((sim, _)) = evaluate(best.0[0], best.0[1]) else {
        return Err(Error::AlignmentFailed {
            residual_px: f64::INFINITY,
            threshold_px: threshold,
            yaw_deg: best.0[0],
            pitch_deg: best.0[1],
            scale: f64::NAN,
        });
    };
    if !(sim.rms <= threshold) {
        return Err(Error::AlignmentFailed {
            residual_px: sim.rms,
            threshold_px: threshold,
            yaw_deg: best.0[0],
            pitch_deg: best.0[1],
            scale: sim.scale,
        });
    }
    Ok(AlignedView {
        yaw_deg: best.0[0],
        pitch_deg: best.0[1],
        scale: sim.scale,
        translation: sim.translation,
        used_translation: opts.translation,
        radius: opts.radius,
        fov_deg: opts.fov_deg,
        residual_px: sim.rms,
        landmarks_used: used.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    pub iters: usize,
    pub lr_shape: f64,
    pub lr_appearance: f64,
    pub lr_expression: f64,
    pub adam: AdamConfig,
    pub rays_per_iter: usize,
    /// Size of the fixed landmark-sampled ray set used to score iterates.
    pub eval_rays: usize,
    pub eval_every: usize,
    pub sampler: PixelSampler,
    pub render: RenderSettings,
    /// Abort once the error exceeds this multiple of the initial error.
    pub divergence_factor: f64,
    /// Errors below this MSE never count as divergence.
    pub divergence_floor: f64,
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            iters: 500,
            lr_shape: 1e-2,
            lr_appearance: 1e-2,
            lr_expression: 1e-2,
            adam: AdamConfig::default(),
            rays_per_iter: 1024,
            eval_rays: 1024,
            eval_every: 10,
            sampler: PixelSampler::landmark_only(),
            render: RenderSettings::default(),
            divergence_factor: 10.0,
            divergence_floor: 1e-4,
            seed: 0,
        }
    }
}

impl FitOptions {
    pub fn validate(&self) -> Result<()> {
        self.render.validate()?;
        if self.rays_per_iter == 0 || self.eval_rays == 0 || self.eval_every == 0 {
            return Err(Error::Config("ray counts and eval interval must be positive".into()));
        }
        let lrs = [self.lr_shape, self.lr_appearance, self.lr_expression];
        if lrs.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::Config("learning rates must be finite and non-negative".into()));
        }
        if !(self.divergence_factor > 1.0) || !(self.divergence_floor >= 0.0) {
            return Err(Error::Config("divergence factor must exceed 1 and the floor be non-negative".into()));
        }
        Ok(())
    }
}

/// Gaussian initial shape and appearance codes with the given expression code.
pub fn random_init(shape_dim: usize, eps: Vec<f32>, std: f64, seed: u64) -> Result<FaceCodes<f32>> {
    let normal = Normal::new(0.0, std).map_err(|e| Error::InvalidInput(format!("init std: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |n: usize| (0..n).map(|_| normal.sample(&mut rng) as f32).collect::<Vec<f32>>();
    let beta = draw(shape_dim);
    let alpha = draw(APPEARANCE_DIM);
    Ok(FaceCodes { beta, alpha, eps })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub iteration: usize,
    /// Training-batch loss; absent for the initial score.
    pub batch_loss: Option<f64>,
    /// Final-color MSE on the fixed evaluation rays, when scored.
    pub error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub codes: FaceCodes<f32>,
    pub view: AlignedView,
    pub error: f64,
    pub initial_error: f64,
    pub best_iteration: usize,
    pub trace: Vec<TracePoint>,
}

/// Progress report passed to the callback after each iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitProgress {
    pub iteration: usize,
    pub total: usize,
    pub best_error: f64,
}

fn eval_error(weights: &FieldWeights<f32>, codes: &FaceCodes<f32>, cam: &Camera, pixels: &[(usize, usize)], image: &Image, settings: &RenderSettings) -> Result<f64> {
    let cond = weights.condition(codes)?;
    let colors = render_pixels(weights, &cond, cam, pixels, settings)?;
    let mut se = 0.0;
    for (c, &(r, col)) in colors.iter().zip(pixels) {
        let t = image.pixel(r, col);
        se += (0..3).map(|k| (c[k] - t[k] as f64).powi(2)).sum::<f64>();
    }
    Ok(se / (3.0 * pixels.len() as f64))
}

/// [`fit_codes_with_progress`] without a callback.
pub fn fit_codes(
    target: &FitTarget,
    weights: &FieldWeights<f32>,
    view: &AlignedView,
    init: FaceCodes<f32>,
    opts: &FitOptions,
) -> Result<FitResult> {
    fit_codes_with_progress(target, weights, view, init, opts, &mut |_| {})
}

/// Optimizes all three codes against `target` seen from `view`. The weights
/// are only read. Returns the best-scoring iterate.
pub fn fit_codes_with_progress(
    target: &FitTarget,
    weights: &FieldWeights<f32>,
    view: &AlignedView,
    init: FaceCodes<f32>,
    opts: &FitOptions,
    progress: &mut dyn FnMut(&FitProgress),
) -> Result<FitResult> {
    target.validate()?;
    opts.validate()?;
    let cfg = &weights.config;
    init.validate(cfg.shape_dim, cfg.expr_dim)?;
    let (w, h) = (target.image.width, target.image.height);
    let cam = view.camera(w, h)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let anchors = &target.landmarks2d;
    let eval_pixels = opts.sampler.sample(h, w, anchors, opts.eval_rays, &mut rng)?;
    let target_color = |r: usize, c: usize| target.image.pixel(r, c).map(|v| v as f64);

    let mut codes = init;
    let initial = eval_error(weights, &codes, &cam, &eval_pixels, &target.image, &opts.render)?;
    if !initial.is_finite() {
        return Err(Error::InvalidInput("initial codes give a non-finite error".into()));
    }
    let mut best = (initial, 0usize, codes.clone());
    let mut trace = vec![TracePoint {
        iteration: 0,
        batch_loss: None,
        error: Some(initial),
    }];
    let mut opt_beta = VecAdam::new(codes.beta.len());
    let mut opt_alpha = VecAdam::new(codes.alpha.len());
    let mut opt_eps = VecAdam::new(codes.eps.len());
    let mut grad = weights.zeros_like();

    for it in 1..=opts.iters {
        let pixels = opts.sampler.sample(h, w, anchors, opts.rays_per_iter, &mut rng)?;
        let rays = cam.generate_rays(&pixels)?;
        grad.fill_zero();
        let cond = weights.condition(&codes)?;
        let batch = batch_backward::<ChaCha8Rng>(weights, &cond, &cam, &rays, target_color, &opts.render, None, &mut grad)?;
        let (d_beta, d_eps) = weights.condition_backward(&codes, &cond, &batch.cond.trunk_code, &mut grad);
        opt_beta.step(&mut codes.beta, &d_beta, opts.lr_shape, &opts.adam);
        opt_alpha.step(&mut codes.alpha, &batch.cond.alpha, opts.lr_appearance, &opts.adam);
        opt_eps.step(&mut codes.eps, &d_eps, opts.lr_expression, &opts.adam);

        let scored = it % opts.eval_every == 0 || it == opts.iters;
        let error = if scored {
            let e = eval_error(weights, &codes, &cam, &eval_pixels, &target.image, &opts.render)?;
            if !e.is_finite() || e > (opts.divergence_factor * initial).max(opts.divergence_floor) {
                let errors = trace.iter().filter_map(|p| p.error).chain([e]).collect();
                return Err(Error::FitDiverged {
                    iteration: it,
                    error: e,
                    initial,
                    trace: errors,
                });
            }
            if e < best.0 {
                best = (e, it, codes.clone());
            }
            Some(e)
        } else {
            None
        };
        trace.push(TracePoint {
            iteration: it,
            batch_loss: Some(batch.loss),
            error,
        });
        progress(&FitProgress {
            iteration: it,
            total: opts.iters,
            best_error: best.0,
        });
    }
    Ok(FitResult {
        codes: best.2,
        view: *view,
        error: best.0,
        initial_error: initial,
        best_iteration: best.1,
        trace,
    })
}
