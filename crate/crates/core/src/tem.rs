//! Texture encoder: a strided CNN that maps a UV texture atlas to the
//! appearance code, with a reparameterized Gaussian bottleneck.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::codes::APPEARANCE_DIM;
use crate::error::{Error, Result};
use crate::nn::{join, leaky, Conv2d, ConvCache, Linear, Parameters, TensorRef};
use crate::real::Real;

pub const CONV_CHANNELS: [usize; 7] = [32, 32, 32, 32, 64, 128, 256];
const CONV_SLOPE: f64 = 0.2;
const LINEAR_SLOPE: f64 = 0.1;
const HIDDEN: usize = 512;
const MIN_TEXTURE: usize = 128;
/// Initial bias of the log-std head; keeps early reparameterization noise small.
const LOGSTD_INIT_BIAS: f64 = -3.0;

/// UV-space appearance atlas, row-major `side x side x 3`, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TextureMap {
    side: usize,
    pixels: Vec<f32>,
}

impl TextureMap {
    pub fn new(side: usize, pixels: Vec<f32>) -> Result<Self> {
        Tem::<f32>::check_texture_size(side)?;
        if pixels.len() != side * side * 3 {
            return Err(Error::InvalidInput(format!(
                "texture buffer has {} values, expected {}",
                pixels.len(),
                side * side * 3
            )));
        }
        if pixels.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidInput("texture values must lie in [0, 1]".into()));
        }
        Ok(Self { side, pixels })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    /// Bilinear lookup with clamped edges; `u` runs along columns, `v` along rows.
    pub fn sample(&self, u: f64, v: f64) -> [f64; 3] {
        let s = self.side as f64;
        let x = (u * s - 0.5).clamp(0.0, s - 1.0);
        let y = (v * s - 0.5).clamp(0.0, s - 1.0);
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let x1 = (x0 + 1).min(self.side - 1);
        let y1 = (y0 + 1).min(self.side - 1);
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let px = |r: usize, c: usize, ch: usize| self.pixels[(r * self.side + c) * 3 + ch] as f64;
        let mut out = [0.0; 3];
        for (ch, o) in out.iter_mut().enumerate() {
            let top = px(y0, x0, ch) * (1.0 - fx) + px(y0, x1, ch) * fx;
            let bottom = px(y1, x0, ch) * (1.0 - fx) + px(y1, x1, ch) * fx;
            *o = top * (1.0 - fy) + bottom * fy;
        }
        out
    }

    /// Column-mirrored copy.
    pub fn mirrored(&self) -> Self {
        let s = self.side;
        let mut pixels = vec![0.0; self.pixels.len()];
        for r in 0..s {
            for c in 0..s {
                let src = (r * s + c) * 3;
                let dst = (r * s + (s - 1 - c)) * 3;
                pixels[dst..dst + 3].copy_from_slice(&self.pixels[src..src + 3]);
            }
        }
        Self { side: s, pixels }
    }

    fn to_chw<T: Real>(&self) -> Vec<T> {
        let s = self.side;
        let mut out = vec![T::zero(); 3 * s * s];
        for i in 0..s * s {
            for ch in 0..3 {
                out[ch * s * s + i] = T::c(self.pixels[i * 3 + ch] as f64);
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tem<T> {
    pub texture_size: usize,
    pub convs: Vec<Conv2d<T>>,
    pub line1: Linear<T>,
    pub mu: Linear<T>,
    pub logstd: Linear<T>,
    pub line2: Linear<T>,
    pub line3: Linear<T>,
    pub app: Linear<T>,
}

/// Encoder output plus the activations needed for backpropagation.
#[derive(Debug, Clone)]
pub struct TemOutput<T> {
    pub alpha: Vec<T>,
    pub mu: Vec<T>,
    pub logstd: Vec<T>,
    cache: TemCache<T>,
}

#[derive(Debug, Clone)]
struct TemCache<T> {
    conv_caches: Vec<ConvCache<T>>,
    conv_acts: Vec<Vec<T>>,
    flat: Vec<T>,
    line1: Vec<T>,
    noise: Option<Vec<T>>,
    latent: Vec<T>,
    line2: Vec<T>,
    line3: Vec<T>,
    app: Vec<T>,
}

fn leaky_mask<T: Real>(d: &mut [T], act: &[T], slope: T) {
    for (g, a) in d.iter_mut().zip(act) {
        if *a <= T::zero() {
            *g *= slope;
        }
    }
}

impl<T: Real> Tem<T> {
    pub fn check_texture_size(side: usize) -> Result<()> {
        if side < MIN_TEXTURE || !side.is_power_of_two() {
            return Err(Error::InvalidInput(format!(
                "texture side {side} must be a power of two >= {MIN_TEXTURE}"
            )));
        }
        Ok(())
    }

    /// Spatial side of the last conv output.
    pub fn final_conv_side(texture_size: usize) -> usize {
        texture_size >> CONV_CHANNELS.len()
    }

    pub fn flat_dim(texture_size: usize) -> usize {
        let s = Self::final_conv_side(texture_size);
        CONV_CHANNELS[CONV_CHANNELS.len() - 1] * s * s
    }

    pub fn new<R: Rng + ?Sized>(texture_size: usize, rng: &mut R) -> Result<Self> {
        Self::check_texture_size(texture_size)?;
        let mut in_ch = 3;
        let convs = CONV_CHANNELS
            .iter()
            .map(|&c| {
                let conv = Conv2d::new(in_ch, c, 4, 2, 1, rng);
                in_ch = c;
                conv
            })
            .collect();
        let mut logstd = Linear::new(HIDDEN, APPEARANCE_DIM, rng);
        logstd.bias.iter_mut().for_each(|b| *b = T::c(LOGSTD_INIT_BIAS));
        Ok(Self {
            texture_size,
            convs,
            line1: Linear::new(Self::flat_dim(texture_size), HIDDEN, rng),
            mu: Linear::new(HIDDEN, APPEARANCE_DIM, rng),
            logstd,
            line2: Linear::new(APPEARANCE_DIM, APPEARANCE_DIM, rng),
            line3: Linear::new(APPEARANCE_DIM, APPEARANCE_DIM, rng),
            app: Linear::new(APPEARANCE_DIM, APPEARANCE_DIM, rng),
        })
    }

    pub fn zeros_like(&self) -> Self {
        let zl = |l: &Linear<T>| Linear::zeros(l.in_dim, l.out_dim);
        Self {
            texture_size: self.texture_size,
            convs: self.convs.iter().map(Conv2d::zeros_like).collect(),
            line1: zl(&self.line1),
            mu: zl(&self.mu),
            logstd: zl(&self.logstd),
            line2: zl(&self.line2),
            line3: zl(&self.line3),
            app: zl(&self.app),
        }
    }

    /// Encodes a texture. With `noise` the latent is `mu + exp(logstd) * eta`
    /// for standard-normal `eta`; without it the latent is `mu`.
    pub fn encode<R: Rng + ?Sized>(&self, tex: &TextureMap, noise: Option<&mut R>) -> Result<TemOutput<T>> {
        if tex.side() != self.texture_size {
            return Err(Error::InvalidInput(format!(
                "texture side {} does not match encoder input {}",
                tex.side(),
                self.texture_size
            )));
        }
        let conv_slope = T::c(CONV_SLOPE);
        let lin_slope = T::c(LINEAR_SLOPE);
        let mut x = tex.to_chw::<T>();
        let mut side = tex.side();
        let mut conv_caches = Vec::with_capacity(self.convs.len());
        let mut conv_acts = Vec::with_capacity(self.convs.len());
        for conv in &self.convs {
            let (mut y, cache) = conv.forward(&x, side, side);
            y.iter_mut().for_each(|v| *v = leaky(*v, conv_slope));
            side = cache.out_h;
            conv_caches.push(cache);
            conv_acts.push(y.clone());
            x = y;
        }
        let flat = x;
        let mut line1 = self.line1.apply(&flat);
        line1.iter_mut().for_each(|v| *v = leaky(*v, lin_slope));
        let mu = self.mu.apply(&line1);
        let logstd = self.logstd.apply(&line1);
        let (latent, noise) = match noise {
            Some(rng) => {
                let eta: Vec<T> = (0..mu.len())
                    .map(|_| {
                        let e: f64 = StandardNormal.sample(rng);
                        T::c(e)
                    })
                    .collect();
                let z = mu
                    .iter()
                    .zip(&logstd)
                    .zip(&eta)
                    .map(|((m, l), e)| *m + l.exp() * *e)
                    .collect();
                (z, Some(eta))
            }
            None => (mu.clone(), None),
        };
        let act = |l: &Linear<T>, v: &[T]| -> Vec<T> { l.apply(v).into_iter().map(|a| leaky(a, lin_slope)).collect() };
        let line2 = act(&self.line2, &latent);
        let line3 = act(&self.line3, &line2);
        let app = act(&self.app, &line3);
        Ok(TemOutput {
            alpha: app.clone(),
            mu,
            logstd,
            cache: TemCache {
                conv_caches,
                conv_acts,
                flat,
                line1,
                noise,
                latent,
                line2,
                line3,
                app,
            },
        })
    }

    /// Accumulates parameter gradients for `d loss / d alpha`.
    pub fn backward(&self, out: &TemOutput<T>, d_alpha: &[T], grad: &mut Tem<T>) {
        let c = &out.cache;
        let lin_slope = T::c(LINEAR_SLOPE);
        let conv_slope = T::c(CONV_SLOPE);
        let mut d = d_alpha.to_vec();
        leaky_mask(&mut d, &c.app, lin_slope);
        let mut d = self.app.backward_vec(&c.line3, &d, &mut grad.app);
        leaky_mask(&mut d, &c.line3, lin_slope);
        let mut d = self.line3.backward_vec(&c.line2, &d, &mut grad.line3);
        leaky_mask(&mut d, &c.line2, lin_slope);
        let d_latent = self.line2.backward_vec(&c.latent, &d, &mut grad.line2);

        let d_mu = d_latent.clone();
        let d_logstd: Vec<T> = match &c.noise {
            Some(eta) => d_latent
                .iter()
                .zip(eta)
                .zip(&out.logstd)
                .map(|((g, e), l)| *g * *e * l.exp())
                .collect(),
            None => vec![T::zero(); d_latent.len()],
        };
        let mut d_line1 = self.mu.backward_vec(&c.line1, &d_mu, &mut grad.mu);
        let d2 = self.logstd.backward_vec(&c.line1, &d_logstd, &mut grad.logstd);
        for (a, b) in d_line1.iter_mut().zip(d2) {
            *a += b;
        }
        leaky_mask(&mut d_line1, &c.line1, lin_slope);
        let mut d = self.line1.backward_vec(&c.flat, &d_line1, &mut grad.line1);
        for l in (0..self.convs.len()).rev() {
            leaky_mask(&mut d, &c.conv_acts[l], conv_slope);
            d = self.convs[l].backward(&c.conv_caches[l], &d, &mut grad.convs[l]);
        }
    }

    /// Spatial sizes of every conv output for the configured input.
    pub fn conv_output_sides(&self) -> Vec<usize> {
        let mut side = self.texture_size;
        self.convs
            .iter()
            .map(|c| {
                side = c.output_size(side);
                side
            })
            .collect()
    }
}

impl<T: Real> Parameters<T> for Tem<T> {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<TensorRef<'a, T>>) {
        for (i, conv) in self.convs.iter().enumerate() {
            conv.collect(&join(prefix, &format!("conv{}", i + 1)), out);
        }
        self.line1.collect(&join(prefix, "line1"), out);
        self.mu.collect(&join(prefix, "mu"), out);
        self.logstd.collect(&join(prefix, "logstd"), out);
        self.line2.collect(&join(prefix, "line2"), out);
        self.line3.collect(&join(prefix, "line3"), out);
        self.app.collect(&join(prefix, "app"), out);
    }

    fn collect_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [T]>) {
        for conv in &mut self.convs {
            conv.collect_mut(out);
        }
        self.line1.collect_mut(out);
        self.mu.collect_mut(out);
        self.logstd.collect_mut(out);
        self.line2.collect_mut(out);
        self.line3.collect_mut(out);
        self.app.collect_mut(out);
    }
}

/// Free-function form of [`Tem::encode`]; `stochastic` draws reparameterization noise from `rng`.
pub fn tem_encode<T: Real, R: Rng + ?Sized>(
    tex: &TextureMap,
    tem: &Tem<T>,
    stochastic: bool,
    rng: &mut R,
) -> Result<TemOutput<T>> {
    if stochastic {
        tem.encode(tex, Some(rng))
    } else {
        tem.encode::<R>(tex, None)
    }
}
