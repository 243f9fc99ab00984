//! Depth sampling, alpha compositing and batched coarse/fine rendering with
//! hand-written backward passes.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::camera::{Camera, Ray};
use crate::codes::FaceCodes;
use crate::error::{Error, Result};
use crate::field::{Conditioning, FieldCache, FieldWeights, Level};
use crate::image::Image;
use crate::real::Real;

/// Result of compositing one ray.
#[derive(Debug, Clone, PartialEq)]
pub struct Composite {
    pub color: [f64; 3],
    /// `w_i = T_i (1 - exp(-sigma_i delta_i))`.
    pub weights: Vec<f64>,
    /// `T_1 .. T_{N+1}`; the last entry is the residual transmittance.
    pub transmittance: Vec<f64>,
    pub deltas: Vec<f64>,
}

impl Composite {
    pub fn opacity(&self) -> f64 {
        1.0 - self.transmittance.last().copied().unwrap_or(1.0)
    }
}

fn check_ascending(depths: &[f64]) -> Result<()> {
    if depths.iter().any(|z| !z.is_finite()) {
        return Err(Error::InvalidInput("non-finite sample depth".into()));
    }
    if let Some(i) = depths.windows(2).position(|w| w[1] < w[0]) {
        return Err(Error::InvalidInput(format!(
            "sample depths descend at index {}: {} > {}",
            i + 1,
            depths[i],
            depths[i + 1]
        )));
    }
    Ok(())
}

/// Alpha-composites samples along one ray. `delta_i = z_{i+1} - z_i`, the last
/// interval is `last_delta`; unabsorbed light picks up `background`.
pub fn composite(
    depths: &[f64],
    sigmas: &[f64],
    colors: &[[f64; 3]],
    last_delta: f64,
    background: [f64; 3],
) -> Result<Composite> {
    if depths.len() != sigmas.len() || depths.len() != colors.len() {
        return Err(Error::InvalidInput(format!(
            "sample arrays disagree: {} depths, {} densities, {} colors",
            depths.len(),
            sigmas.len(),
            colors.len()
        )));
    }
    check_ascending(depths)?;
    if !(last_delta >= 0.0) || sigmas.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
        return Err(Error::InvalidInput("densities and last interval must be finite and non-negative".into()));
    }
    Ok(composite_unchecked(depths, sigmas, colors, last_delta, background))
}

fn composite_unchecked(
    depths: &[f64],
    sigmas: &[f64],
    colors: &[[f64; 3]],
    last_delta: f64,
    background: [f64; 3],
) -> Composite {
    let n = depths.len();
    let mut deltas = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    let mut transmittance = Vec::with_capacity(n + 1);
    let mut t = 1.0;
    let mut color = [0.0; 3];
    for i in 0..n {
        let delta = if i + 1 < n { depths[i + 1] - depths[i] } else { last_delta };
        let tau = sigmas[i] * delta;
        let a = -(-tau).exp_m1();
        let w = t * a;
        transmittance.push(t);
        deltas.push(delta);
        weights.push(w);
        for k in 0..3 {
            color[k] += w * colors[i][k];
        }
        t *= (-tau).exp();
    }
    transmittance.push(t);
    let residual = 1.0 - weights.iter().sum::<f64>();
    for k in 0..3 {
        color[k] += residual * background[k];
    }
    Composite {
        color,
        weights,
        transmittance,
        deltas,
    }
}

/// Gradients of `g . C` with respect to densities and colors.
pub fn composite_backward(comp: &Composite, colors: &[[f64; 3]], background: [f64; 3], g: [f64; 3]) -> (Vec<f64>, Vec<[f64; 3]>) {
    let n = comp.weights.len();
    let ge: Vec<f64> = colors
        .iter()
        .map(|c| (0..3).map(|k| g[k] * (c[k] - background[k])).sum())
        .collect();
    let mut d_sigma = vec![0.0; n];
    let mut suffix = 0.0;
    for k in (0..n).rev() {
        d_sigma[k] = comp.deltas[k] * (comp.transmittance[k + 1] * ge[k] - suffix);
        suffix += comp.weights[k] * ge[k];
    }
    let d_color = comp.weights.iter().map(|w| [w * g[0], w * g[1], w * g[2]]).collect();
    (d_sigma, d_color)
}

/// `n` depths in `[near, far]`, one per equal-width bin: the bin midpoint, or
/// a uniform draw inside the bin when a jitter RNG is supplied.
pub fn stratified_sample<R: Rng + ?Sized>(near: f64, far: f64, n: usize, jitter: Option<&mut R>) -> Vec<f64> {
    let width = (far - near) / n as f64;
    match jitter {
        Some(rng) => (0..n)
            .map(|i| near + (i as f64 + rng.random::<f64>()) * width)
            .collect(),
        None => (0..n).map(|i| near + (i as f64 + 0.5) * width).collect(),
    }
}

/// Inverse-CDF sampling of `n_f` extra depths from the piecewise-constant
/// density proportional to `w` over the bins around `z`, merged with `z`.
/// All-zero weights fall back to a uniform density. Without an RNG the
/// quantiles are the stratum midpoints `(j + 0.5) / n_f`.
pub fn hierarchical_resample<R: Rng + ?Sized>(z: &[f64], w: &[f64], n_f: usize, rng: Option<&mut R>) -> Result<Vec<f64>> {
    if z.len() != w.len() {
        return Err(Error::InvalidInput(format!("{} depths but {} weights", z.len(), w.len())));
    }
    if w.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
        return Err(Error::InvalidInput("weights must be finite and non-negative".into()));
    }
    check_ascending(z)?;
    let mut out = z.to_vec();
    if z.is_empty() || n_f == 0 {
        return Ok(out);
    }
    let edges = bin_edges(z);
    let total: f64 = w.iter().sum();
    let n = z.len();
    let probs: Vec<f64> = if total > 0.0 {
        w.iter().map(|v| v / total).collect()
    } else {
        vec![1.0 / n as f64; n]
    };
    let mut cdf = Vec::with_capacity(n + 1);
    cdf.push(0.0);
    for p in &probs {
        cdf.push(cdf.last().unwrap() + p);
    }
    let quantiles: Vec<f64> = match rng {
        Some(rng) => (0..n_f).map(|_| rng.random::<f64>()).collect(),
        None => (0..n_f).map(|j| (j as f64 + 0.5) / n_f as f64).collect(),
    };
    for u in quantiles {
        let mut j = cdf.partition_point(|c| *c <= u).saturating_sub(1).min(n - 1);
        while probs[j] == 0.0 && j > 0 {
            j -= 1;
        }
        let t = if probs[j] > 0.0 { ((u - cdf[j]) / probs[j]).clamp(0.0, 1.0) } else { 0.5 };
        out.push(edges[j] + t * (edges[j + 1] - edges[j]));
    }
    out.sort_by(f64::total_cmp);
    Ok(out)
}

/// Bin boundaries halfway between samples, padded by half a spacing at the ends.
fn bin_edges(z: &[f64]) -> Vec<f64> {
    let n = z.len();
    if n == 1 {
        return vec![z[0], z[0]];
    }
    let mut edges = Vec::with_capacity(n + 1);
    edges.push(z[0] - 0.5 * (z[1] - z[0]));
    for i in 1..n {
        edges.push(0.5 * (z[i - 1] + z[i]));
    }
    edges.push(z[n - 1] + 0.5 * (z[n - 1] - z[n - 2]));
    edges
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderSettings {
    pub n_coarse: usize,
    pub n_fine: usize,
    pub background: [f64; 3],
    /// Skip the fine pass and report the coarse estimate.
    pub coarse_only: bool,
    /// Rays per network batch.
    pub chunk: usize,
}

impl Default for RenderSettings {
    fn default() -> Self {
        Self {
            n_coarse: 64,
            n_fine: 64,
            background: [0.0; 3],
            coarse_only: false,
            chunk: 64,
        }
    }
}

impl RenderSettings {
    pub fn validate(&self) -> Result<()> {
        if self.n_coarse == 0 || self.chunk == 0 {
            return Err(Error::Config("coarse sample count and chunk size must be positive".into()));
        }
        Ok(())
    }
}

/// One level's network evaluation over a batch of rays.
#[derive(Debug, Clone)]
pub struct LevelPass<T> {
    pub level: Level,
    pub samples_per_ray: usize,
    pub depths: Vec<Vec<f64>>,
    pub composites: Vec<Composite>,
    colors: Vec<Vec<[f64; 3]>>,
    cache: FieldCache<T>,
}

impl<T: Real> LevelPass<T> {
    pub fn ray_colors(&self) -> Vec<[f64; 3]> {
        self.composites.iter().map(|c| c.color).collect()
    }
}

/// Coarse pass plus the optional fine pass for a batch of rays.
#[derive(Debug, Clone)]
pub struct RayPass<T> {
    pub coarse: LevelPass<T>,
    pub fine: Option<LevelPass<T>>,
}

impl<T: Real> RayPass<T> {
    /// Fine colors when the fine pass ran, coarse colors otherwise.
    pub fn final_colors(&self) -> Vec<[f64; 3]> {
        self.fine.as_ref().unwrap_or(&self.coarse).ray_colors()
    }
}

fn run_level<T: Real>(
    weights: &FieldWeights<T>,
    cond: &Conditioning<T>,
    level: Level,
    rays: &[Ray],
    depths: Vec<Vec<f64>>,
    last_delta: f64,
    background: [f64; 3],
) -> Result<LevelPass<T>> {
    let s = depths.first().map_or(0, Vec::len);
    if depths.iter().any(|d| d.len() != s) || depths.len() != rays.len() {
        return Err(Error::InvalidInput("ragged sample depths".into()));
    }
    let n = rays.len() * s;
    let mut pos = Vec::with_capacity(n * 3);
    let mut dirs = Vec::with_capacity(n * 3);
    for (ray, zs) in rays.iter().zip(&depths) {
        for &z in zs {
            pos.extend(ray.at(z).iter().map(|v| T::c(*v)));
            dirs.extend(ray.dir.iter().map(|v| T::c(*v)));
        }
    }
    let cache = weights.net(level).forward(&pos, &dirs, &cond.trunk_code, &cond.alpha);
    let mut composites = Vec::with_capacity(rays.len());
    let mut colors = Vec::with_capacity(rays.len());
    for (r, zs) in depths.iter().enumerate() {
        let sig: Vec<f64> = cache.sigma[r * s..(r + 1) * s].iter().map(|v| v.f64()).collect();
        let col: Vec<[f64; 3]> = (r * s..(r + 1) * s)
            .map(|i| [cache.color[i * 3].f64(), cache.color[i * 3 + 1].f64(), cache.color[i * 3 + 2].f64()])
            .collect();
        check_ascending(zs)?;
        composites.push(composite_unchecked(zs, &sig, &col, last_delta, background));
        colors.push(col);
    }
    Ok(LevelPass {
        level,
        samples_per_ray: s,
        depths,
        composites,
        colors,
        cache,
    })
}

/// Gradients of a loss with respect to the conditioning, from one batch.
#[derive(Debug, Clone)]
pub struct CondGrads<T> {
    pub trunk_code: Vec<T>,
    pub alpha: Vec<T>,
}

impl<T: Real> CondGrads<T> {
    pub fn zeros(trunk_dim: usize, alpha_dim: usize) -> Self {
        Self {
            trunk_code: vec![T::zero(); trunk_dim],
            alpha: vec![T::zero(); alpha_dim],
        }
    }

    pub fn add(&mut self, other: &CondGrads<T>) {
        self.trunk_code.iter_mut().zip(&other.trunk_code).for_each(|(a, b)| *a += *b);
        self.alpha.iter_mut().zip(&other.alpha).for_each(|(a, b)| *a += *b);
    }
}

fn level_backward<T: Real>(
    weights: &FieldWeights<T>,
    cond: &Conditioning<T>,
    pass: &LevelPass<T>,
    d_rays: &[[f64; 3]],
    background: [f64; 3],
    grad: &mut FieldWeights<T>,
) -> CondGrads<T> {
    let s = pass.samples_per_ray;
    let n = pass.composites.len() * s;
    let mut d_sigma = vec![T::zero(); n];
    let mut d_color = vec![T::zero(); n * 3];
    for (r, (comp, g)) in pass.composites.iter().zip(d_rays).enumerate() {
        let (ds, dc) = composite_backward(comp, &pass.colors[r], background, *g);
        for i in 0..s {
            d_sigma[r * s + i] = T::c(ds[i]);
            for k in 0..3 {
                d_color[(r * s + i) * 3 + k] = T::c(dc[i][k]);
            }
        }
    }
    let g = weights.net(pass.level).backward(
        &pass.cache,
        &cond.trunk_code,
        &cond.alpha,
        &d_sigma,
        &d_color,
        grad.net_mut(pass.level),
        false,
    );
    CondGrads {
        trunk_code: g.trunk_code,
        alpha: g.alpha,
    }
}

/// Per-level sampling interval used for the final sample.
pub fn last_delta(near: f64, far: f64, samples: usize) -> f64 {
    (far - near) / samples.max(1) as f64
}

/// Forward pass with explicit depths. `fine_depths` of `None` skips the fine level.
#[allow(clippy::too_many_arguments)]
pub fn forward_with_depths<T: Real>(
    weights: &FieldWeights<T>,
    cond: &Conditioning<T>,
    rays: &[Ray],
    near: f64,
    far: f64,
    coarse_depths: Vec<Vec<f64>>,
    fine_depths: Option<Vec<Vec<f64>>>,
    background: [f64; 3],
) -> Result<RayPass<T>> {
    let sc = coarse_depths.first().map_or(0, Vec::len);
    let coarse = run_level(weights, cond, Level::Coarse, rays, coarse_depths, last_delta(near, far, sc), background)?;
    let fine = match fine_depths {
        Some(fd) => {
            let sf = fd.first().map_or(0, Vec::len);
            Some(run_level(weights, cond, Level::Fine, rays, fd, last_delta(near, far, sf), background)?)
        }
        None => None,
    };
    Ok(RayPass { coarse, fine })
}

/// Coarse pass on stratified depths, then a fine pass on the coarse depths
/// merged with importance samples. A `jitter` RNG randomizes both samplers.
pub fn forward_rays<T: Real, R: Rng + ?Sized>(
    weights: &FieldWeights<T>,
    cond: &Conditioning<T>,
    rays: &[Ray],
    near: f64,
    far: f64,
    settings: &RenderSettings,
    mut jitter: Option<&mut R>,
) -> Result<RayPass<T>> {
    let coarse_depths: Vec<Vec<f64>> = rays
        .iter()
        .map(|_| stratified_sample(near, far, settings.n_coarse, jitter.as_deref_mut()))
        .collect();
    let sc = settings.n_coarse;
    let coarse = run_level(
        weights,
        cond,
        Level::Coarse,
        rays,
        coarse_depths,
        last_delta(near, far, sc),
        settings.background,
    )?;
    if settings.coarse_only {
        return Ok(RayPass { coarse, fine: None });
    }
    let fine_depths = coarse
        .depths
        .iter()
        .zip(&coarse.composites)
        .map(|(z, c)| hierarchical_resample(z, &c.weights, settings.n_fine, jitter.as_deref_mut()))
        .collect::<Result<Vec<_>>>()?;
    let sf = sc + settings.n_fine;
    let fine = run_level(
        weights,
        cond,
        Level::Fine,
        rays,
        fine_depths,
        last_delta(near, far, sf),
        settings.background,
    )?;
    Ok(RayPass { coarse, fine: Some(fine) })
}

/// Backpropagates per-ray color gradients of both levels into `grad`.
/// Depths are treated as constants.
pub fn backward_rays<T: Real>(
    weights: &FieldWeights<T>,
    cond: &Conditioning<T>,
    pass: &RayPass<T>,
    d_coarse: Option<&[[f64; 3]]>,
    d_fine: Option<&[[f64; 3]]>,
    background: [f64; 3],
    grad: &mut FieldWeights<T>,
) -> CondGrads<T> {
    let mut out = CondGrads::zeros(cond.trunk_code.len(), cond.alpha.len());
    if let Some(d) = d_coarse {
        out.add(&level_backward(weights, cond, &pass.coarse, d, background, grad));
    }
    if let (Some(d), Some(fine)) = (d_fine, pass.fine.as_ref()) {
        out.add(&level_backward(weights, cond, fine, d, background, grad));
    }
    out
}

/// Deterministic render of the given pixels (final-level colors).
pub fn render_pixels<T: Real>(
    weights: &FieldWeights<T>,
    cond: &Conditioning<T>,
    cam: &Camera,
    pixels: &[(usize, usize)],
    settings: &RenderSettings,
) -> Result<Vec<[f64; 3]>> {
    settings.validate()?;
    let rays = cam.generate_rays(pixels)?;
    let mut out = Vec::with_capacity(rays.len());
    for chunk in rays.chunks(settings.chunk) {
        let pass = forward_rays::<T, rand_chacha::ChaCha8Rng>(weights, cond, chunk, cam.near, cam.far, settings, None)?;
        out.extend(pass.final_colors());
    }
    Ok(out)
}

/// Full-frame deterministic render.
pub fn render_image<T: Real>(
    weights: &FieldWeights<T>,
    codes: &FaceCodes<T>,
    cam: &Camera,
    settings: &RenderSettings,
) -> Result<Image> {
    let cond = weights.condition(codes)?;
    let colors = render_pixels(weights, &cond, cam, &cam.all_pixels(), settings)?;
    let data = colors
        .iter()
        .flat_map(|c| c.map(|v| v.clamp(0.0, 1.0) as f32))
        .collect();
    Image::new(cam.width, cam.height, data)
}
