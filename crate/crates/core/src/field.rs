//! The conditioned radiance field `(x, d, beta, alpha, eps) -> (c, sigma)`.
//!
//! Density comes from the trunk alone, which sees the encoded position, the
//! shape code and the identity-modulated expression code. The appearance code
//! and the encoded view direction enter only the color branch, so density is
//! independent of both by construction.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::codes::{FaceCodes, APPEARANCE_DIM};
use crate::encoding::{encode_backward, encode_batch, encoded_len};
use crate::error::{Error, Result};
use crate::nn::{join, relu, sigmoid, softplus, CondLinear, Linear, Parameters, TensorRef};
use crate::real::Real;
use crate::tem::Tem;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldConfig {
    pub shape_dim: usize,
    /// Zero selects the expressionless variant: no modulation, no expression input.
    pub expr_dim: usize,
    pub depth: usize,
    pub width: usize,
    /// Trunk layer that re-reads the trunk input; `>= depth` disables the skip.
    pub skip_layer: usize,
    pub pos_freqs: usize,
    pub dir_freqs: usize,
    pub ism_hidden: usize,
    pub texture_size: usize,
}

impl Default for FieldConfig {
    fn default() -> Self {
        Self {
            shape_dim: 50,
            expr_dim: 32,
            depth: 8,
            width: 256,
            skip_layer: 4,
            pos_freqs: 10,
            dir_freqs: 4,
            ism_hidden: 64,
            texture_size: 512,
        }
    }
}

impl FieldConfig {
    pub fn pos_enc_dim(&self) -> usize {
        encoded_len(3, self.pos_freqs)
    }

    pub fn dir_enc_dim(&self) -> usize {
        encoded_len(3, self.dir_freqs)
    }

    pub fn trunk_code_dim(&self) -> usize {
        self.shape_dim + self.expr_dim
    }

    pub fn color_hidden(&self) -> usize {
        (self.width / 2).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.width == 0 {
            return Err(Error::Config("trunk depth and width must be positive".into()));
        }
        if self.expr_dim > 0 && self.ism_hidden == 0 {
            return Err(Error::Config("modulation hidden width must be positive".into()));
        }
        Tem::<f32>::check_texture_size(self.texture_size)
    }
}

/// Query point: position in canonical head space and unit view direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldInput {
    pub x: [f64; 3],
    pub d: [f64; 3],
}

impl FieldInput {
    pub fn new(x: [f64; 3], d: [f64; 3]) -> Result<Self> {
        let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidInput(format!("view direction norm {norm} is not 1")));
        }
        if x.iter().chain(d.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite field input".into()));
        }
        Ok(Self { x, d })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldOutput {
    pub sigma: f64,
    pub color: [f64; 3],
}

/// Identity-specific modulation `eps' = M_s(beta) * eps + M_b(beta)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Ism<T> {
    pub scale_hidden: Linear<T>,
    pub scale_out: Linear<T>,
    pub bias_hidden: Linear<T>,
    pub bias_out: Linear<T>,
}

#[derive(Debug, Clone)]
pub struct IsmCache<T> {
    scale_h: Vec<T>,
    bias_h: Vec<T>,
    scale: Vec<T>,
}

impl<T: Real> Ism<T> {
    pub fn new<R: Rng + ?Sized>(shape_dim: usize, expr_dim: usize, hidden: usize, rng: &mut R) -> Self {
        let mut scale_out = Linear::new(hidden, expr_dim, rng);
        // Start close to the identity modulation.
        for b in &mut scale_out.bias {
            *b += T::one();
        }
        Self {
            scale_hidden: Linear::new(shape_dim, hidden, rng),
            scale_out,
            bias_hidden: Linear::new(shape_dim, hidden, rng),
            bias_out: Linear::new(hidden, expr_dim, rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            scale_hidden: Linear::zeros(self.scale_hidden.in_dim, self.scale_hidden.out_dim),
            scale_out: Linear::zeros(self.scale_out.in_dim, self.scale_out.out_dim),
            bias_hidden: Linear::zeros(self.bias_hidden.in_dim, self.bias_hidden.out_dim),
            bias_out: Linear::zeros(self.bias_out.in_dim, self.bias_out.out_dim),
        }
    }

    pub fn forward(&self, beta: &[T], eps: &[T]) -> (Vec<T>, IsmCache<T>) {
        let scale_h: Vec<T> = self.scale_hidden.apply(beta).into_iter().map(relu).collect();
        let scale = self.scale_out.apply(&scale_h);
        let bias_h: Vec<T> = self.bias_hidden.apply(beta).into_iter().map(relu).collect();
        let shift = self.bias_out.apply(&bias_h);
        let out = eps
            .iter()
            .zip(scale.iter().zip(&shift))
            .map(|(e, (s, b))| *s * *e + *b)
            .collect();
        (out, IsmCache { scale_h, bias_h, scale })
    }

    /// Returns `(d beta, d eps)` and accumulates parameter gradients.
    pub fn backward(
        &self,
        beta: &[T],
        eps: &[T],
        cache: &IsmCache<T>,
        d_out: &[T],
        grad: &mut Ism<T>,
    ) -> (Vec<T>, Vec<T>) {
        let d_eps: Vec<T> = d_out.iter().zip(&cache.scale).map(|(d, s)| *d * *s).collect();
        let d_scale: Vec<T> = d_out.iter().zip(eps).map(|(d, e)| *d * *e).collect();

        let mut d_scale_h = self.scale_out.backward_vec(&cache.scale_h, &d_scale, &mut grad.scale_out);
        for (d, h) in d_scale_h.iter_mut().zip(&cache.scale_h) {
            if *h <= T::zero() {
                *d = T::zero();
            }
        }
        let mut d_beta = self.scale_hidden.backward_vec(beta, &d_scale_h, &mut grad.scale_hidden);

        let mut d_bias_h = self.bias_out.backward_vec(&cache.bias_h, d_out, &mut grad.bias_out);
        for (d, h) in d_bias_h.iter_mut().zip(&cache.bias_h) {
            if *h <= T::zero() {
                *d = T::zero();
            }
        }
        let d_beta2 = self.bias_hidden.backward_vec(beta, &d_bias_h, &mut grad.bias_hidden);
        for (a, b) in d_beta.iter_mut().zip(d_beta2) {
            *a += b;
        }
        (d_beta, d_eps)
    }
}

impl<T: Real> Parameters<T> for Ism<T> {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<TensorRef<'a, T>>) {
        self.scale_hidden.collect(&join(prefix, "scale_hidden"), out);
        self.scale_out.collect(&join(prefix, "scale_out"), out);
        self.bias_hidden.collect(&join(prefix, "bias_hidden"), out);
        self.bias_out.collect(&join(prefix, "bias_out"), out);
    }

    fn collect_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [T]>) {
        self.scale_hidden.collect_mut(out);
        self.scale_out.collect_mut(out);
        self.bias_hidden.collect_mut(out);
        self.bias_out.collect_mut(out);
    }
}

/// Trunk plus density and color heads for one sampling level.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldNet<T> {
    pub trunk: Vec<CondLinear<T>>,
    pub density: Linear<T>,
    pub feature: Linear<T>,
    pub color_hidden: CondLinear<T>,
    pub color_out: Linear<T>,
    pos_freqs: usize,
    dir_freqs: usize,
    skip_layer: usize,
}

/// Activations retained by a batched forward pass.
#[derive(Debug, Clone)]
pub struct FieldCache<T> {
    pub n: usize,
    pos: Vec<T>,
    pe_x: Vec<T>,
    skip_input: Vec<T>,
    acts: Vec<Vec<T>>,
    raw_sigma: Vec<T>,
    color_in: Vec<T>,
    color_h: Vec<T>,
    pub sigma: Vec<T>,
    pub color: Vec<T>,
}

/// Gradients with respect to the network inputs from one backward pass.
#[derive(Debug, Clone)]
pub struct FieldInputGrads<T> {
    /// `n x 3`, only filled when requested.
    pub positions: Option<Vec<T>>,
    pub trunk_code: Vec<T>,
    pub alpha: Vec<T>,
}

impl<T: Real> FieldNet<T> {
    pub fn new<R: Rng + ?Sized>(cfg: &FieldConfig, rng: &mut R) -> Self {
        let px = cfg.pos_enc_dim();
        let code = cfg.trunk_code_dim();
        let w = cfg.width;
        let trunk = (0..cfg.depth)
            .map(|l| {
                if l == 0 {
                    CondLinear::new(px, code, w, rng)
                } else if l == cfg.skip_layer {
                    CondLinear::new(w + px, code, w, rng)
                } else {
                    CondLinear::new(w, 0, w, rng)
                }
            })
            .collect();
        Self {
            trunk,
            density: Linear::new(w, 1, rng),
            feature: Linear::new(w, w, rng),
            color_hidden: CondLinear::new(w + cfg.dir_enc_dim(), APPEARANCE_DIM, cfg.color_hidden(), rng),
            color_out: Linear::new(cfg.color_hidden(), 3, rng),
            pos_freqs: cfg.pos_freqs,
            dir_freqs: cfg.dir_freqs,
            skip_layer: cfg.skip_layer,
        }
    }

    pub fn zeros_like(&self) -> Self {
        let zl = |l: &Linear<T>| Linear::zeros(l.in_dim, l.out_dim);
        let zc = |l: &CondLinear<T>| CondLinear::zeros(l.sample.in_dim, l.code_dim, l.out_dim());
        Self {
            trunk: self.trunk.iter().map(zc).collect(),
            density: zl(&self.density),
            feature: zl(&self.feature),
            color_hidden: zc(&self.color_hidden),
            color_out: zl(&self.color_out),
            ..self.clone()
        }
    }

    fn width(&self) -> usize {
        self.trunk[0].out_dim()
    }

    fn trunk_code_for<'c>(&self, layer: usize, code: &'c [T]) -> &'c [T] {
        if layer == 0 || layer == self.skip_layer {
            code
        } else {
            &code[..0]
        }
    }

    /// Batched forward pass over `n` points (`pos`, `dirs` are `n x 3`).
    pub fn forward(&self, pos: &[T], dirs: &[T], trunk_code: &[T], alpha: &[T]) -> FieldCache<T> {
        let n = pos.len() / 3;
        assert_eq!(dirs.len(), n * 3);
        let w = self.width();
        let pe_x = encode_batch(pos, 3, self.pos_freqs);
        let px = encoded_len(3, self.pos_freqs);
        let mut acts: Vec<Vec<T>> = Vec::with_capacity(self.trunk.len());
        let mut skip_input = Vec::new();
        for (l, layer) in self.trunk.iter().enumerate() {
            let code = self.trunk_code_for(l, trunk_code);
            let mut h = if l == 0 {
                layer.forward(&pe_x, n, code)
            } else if l == self.skip_layer {
                skip_input = vec![T::zero(); n * (w + px)];
                let prev = &acts[l - 1];
                for r in 0..n {
                    let row = &mut skip_input[r * (w + px)..(r + 1) * (w + px)];
                    row[..w].copy_from_slice(&prev[r * w..(r + 1) * w]);
                    row[w..].copy_from_slice(&pe_x[r * px..(r + 1) * px]);
                }
                layer.forward(&skip_input, n, code)
            } else {
                layer.forward(&acts[l - 1], n, code)
            };
            h.iter_mut().for_each(|v| *v = relu(*v));
            acts.push(h);
        }
        let last = acts.last().expect("depth >= 1");
        let raw_sigma = self.density.forward(last, n);
        let sigma = raw_sigma.iter().map(|v| softplus(*v)).collect();

        let feat = self.feature.forward(last, n);
        let pe_d = encode_batch(dirs, 3, self.dir_freqs);
        let pd = encoded_len(3, self.dir_freqs);
        let mut color_in = vec![T::zero(); n * (w + pd)];
        for r in 0..n {
            let row = &mut color_in[r * (w + pd)..(r + 1) * (w + pd)];
            row[..w].copy_from_slice(&feat[r * w..(r + 1) * w]);
            row[w..].copy_from_slice(&pe_d[r * pd..(r + 1) * pd]);
        }
        let mut color_h = self.color_hidden.forward(&color_in, n, alpha);
        color_h.iter_mut().for_each(|v| *v = relu(*v));
        let mut color = self.color_out.forward(&color_h, n);
        color.iter_mut().for_each(|v| *v = sigmoid(*v));

        FieldCache {
            n,
            pos: pos.to_vec(),
            pe_x,
            skip_input,
            acts,
            raw_sigma,
            color_in,
            color_h,
            sigma,
            color,
        }
    }

    /// Backpropagates `d sigma` (`n`) and `d color` (`n x 3`).
    pub fn backward(
        &self,
        cache: &FieldCache<T>,
        trunk_code: &[T],
        alpha: &[T],
        d_sigma: &[T],
        d_color: &[T],
        grad: &mut FieldNet<T>,
        want_positions: bool,
    ) -> FieldInputGrads<T> {
        let n = cache.n;
        let w = self.width();
        let px = encoded_len(3, self.pos_freqs);
        let ch = self.color_hidden.out_dim();
        let mut d_trunk_code = vec![T::zero(); trunk_code.len()];
        let mut d_alpha = vec![T::zero(); alpha.len()];

        let d_raw_color: Vec<T> = d_color
            .iter()
            .zip(&cache.color)
            .map(|(d, c)| *d * *c * (T::one() - *c))
            .collect();
        let mut d_color_h = vec![T::zero(); n * ch];
        self.color_out
            .backward(&cache.color_h, &d_raw_color, n, &mut grad.color_out, Some(&mut d_color_h));
        for (d, h) in d_color_h.iter_mut().zip(&cache.color_h) {
            if *h <= T::zero() {
                *d = T::zero();
            }
        }
        let cin = self.color_hidden.sample.in_dim;
        let mut d_color_in = vec![T::zero(); n * cin];
        self.color_hidden.backward(
            &cache.color_in,
            alpha,
            &d_color_h,
            n,
            &mut grad.color_hidden,
            Some(&mut d_color_in),
            &mut d_alpha,
        );
        let mut d_feat = vec![T::zero(); n * w];
        for r in 0..n {
            d_feat[r * w..(r + 1) * w].copy_from_slice(&d_color_in[r * cin..r * cin + w]);
        }

        let last = cache.acts.last().expect("depth >= 1");
        let mut d_h = vec![T::zero(); n * w];
        self.feature.backward(last, &d_feat, n, &mut grad.feature, Some(&mut d_h));
        let d_raw_sigma: Vec<T> = d_sigma
            .iter()
            .zip(&cache.raw_sigma)
            .map(|(d, r)| *d * sigmoid(*r))
            .collect();
        let mut d_h2 = vec![T::zero(); n * w];
        self.density.backward(last, &d_raw_sigma, n, &mut grad.density, Some(&mut d_h2));
        for (a, b) in d_h.iter_mut().zip(&d_h2) {
            *a += *b;
        }

        let mut d_pe_x = if want_positions { Some(vec![T::zero(); n * px]) } else { None };
        for l in (0..self.trunk.len()).rev() {
            for (d, h) in d_h.iter_mut().zip(&cache.acts[l]) {
                if *h <= T::zero() {
                    *d = T::zero();
                }
            }
            let layer = &self.trunk[l];
            let code = self.trunk_code_for(l, trunk_code);
            let code_len = code.len();
            let mut d_code_local = vec![T::zero(); code_len];
            if l == 0 {
                let mut dx = d_pe_x.as_ref().map(|_| vec![T::zero(); n * px]);
                layer.backward(&cache.pe_x, code, &d_h, n, &mut grad.trunk[l], dx.as_deref_mut(), &mut d_code_local);
                if let (Some(acc), Some(dx)) = (d_pe_x.as_mut(), dx) {
                    acc.iter_mut().zip(dx).for_each(|(a, b)| *a += b);
                }
            } else if l == self.skip_layer {
                let mut dx = vec![T::zero(); n * (w + px)];
                layer.backward(&cache.skip_input, code, &d_h, n, &mut grad.trunk[l], Some(&mut dx), &mut d_code_local);
                let mut next = vec![T::zero(); n * w];
                for r in 0..n {
                    next[r * w..(r + 1) * w].copy_from_slice(&dx[r * (w + px)..r * (w + px) + w]);
                    if let Some(acc) = d_pe_x.as_mut() {
                        for j in 0..px {
                            acc[r * px + j] += dx[r * (w + px) + w + j];
                        }
                    }
                }
                d_h = next;
            } else {
                let mut dx = vec![T::zero(); n * w];
                layer.backward(&cache.acts[l - 1], code, &d_h, n, &mut grad.trunk[l], Some(&mut dx), &mut d_code_local);
                d_h = dx;
            }
            for (a, b) in d_trunk_code.iter_mut().zip(d_code_local) {
                *a += b;
            }
        }

        let positions = d_pe_x.map(|dpe| {
            let mut dp = vec![T::zero(); n * 3];
            for r in 0..n {
                encode_backward(
                    &cache.pos[r * 3..(r + 1) * 3],
                    self.pos_freqs,
                    &dpe[r * px..(r + 1) * px],
                    &mut dp[r * 3..(r + 1) * 3],
                );
            }
            dp
        });
        FieldInputGrads {
            positions,
            trunk_code: d_trunk_code,
            alpha: d_alpha,
        }
    }
}

impl<T: Real> Parameters<T> for FieldNet<T> {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<TensorRef<'a, T>>) {
        for (l, layer) in self.trunk.iter().enumerate() {
            layer.collect(&join(prefix, &format!("trunk{l}")), out);
        }
        self.density.collect(&join(prefix, "density"), out);
        self.feature.collect(&join(prefix, "feature"), out);
        self.color_hidden.collect(&join(prefix, "color_hidden"), out);
        self.color_out.collect(&join(prefix, "color_out"), out);
    }

    fn collect_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [T]>) {
        for layer in &mut self.trunk {
            layer.collect_mut(out);
        }
        self.density.collect_mut(out);
        self.feature.collect_mut(out);
        self.color_hidden.collect_mut(out);
        self.color_out.collect_mut(out);
    }
}

/// Which of the two sampling-level networks to query.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Level {
    Coarse,
    Fine,
}

/// Codes prepared for the trunk: `[beta, eps']` plus the appearance code.
#[derive(Debug, Clone)]
pub struct Conditioning<T> {
    pub trunk_code: Vec<T>,
    pub alpha: Vec<T>,
    ism_cache: Option<IsmCache<T>>,
}

/// All trainable network parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldWeights<T> {
    pub config: FieldConfig,
    pub coarse: FieldNet<T>,
    pub fine: FieldNet<T>,
    pub ism: Option<Ism<T>>,
    pub tem: Tem<T>,
}

impl<T: Real> FieldWeights<T> {
    pub fn new<R: Rng + ?Sized>(config: FieldConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let coarse = FieldNet::new(&config, rng);
        let fine = FieldNet::new(&config, rng);
        let ism = (config.expr_dim > 0)
            .then(|| Ism::new(config.shape_dim, config.expr_dim, config.ism_hidden, rng));
        let tem = Tem::new(config.texture_size, rng)?;
        Ok(Self {
            config,
            coarse,
            fine,
            ism,
            tem,
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            config: self.config.clone(),
            coarse: self.coarse.zeros_like(),
            fine: self.fine.zeros_like(),
            ism: self.ism.as_ref().map(Ism::zeros_like),
            tem: self.tem.zeros_like(),
        }
    }

    pub fn net(&self, level: Level) -> &FieldNet<T> {
        match level {
            Level::Coarse => &self.coarse,
            Level::Fine => &self.fine,
        }
    }

    pub fn net_mut(&mut self, level: Level) -> &mut FieldNet<T> {
        match level {
            Level::Coarse => &mut self.coarse,
            Level::Fine => &mut self.fine,
        }
    }

    /// Applies identity-specific modulation to the expression code.
    pub fn ism_modulate(&self, beta: &[T], eps: &[T]) -> Result<Vec<T>> {
        self.check_dims(beta.len(), eps.len())?;
        Ok(match &self.ism {
            Some(ism) => ism.forward(beta, eps).0,
            None => Vec::new(),
        })
    }

    fn check_dims(&self, shape: usize, expr: usize) -> Result<()> {
        if shape != self.config.shape_dim || expr != self.config.expr_dim {
            return Err(Error::Config(format!(
                "codes have shape/expression dims {shape}/{expr}, model expects {}/{}",
                self.config.shape_dim, self.config.expr_dim
            )));
        }
        Ok(())
    }

    pub fn condition(&self, codes: &FaceCodes<T>) -> Result<Conditioning<T>> {
        codes.validate(self.config.shape_dim, self.config.expr_dim)?;
        let (eps_mod, ism_cache) = match &self.ism {
            Some(ism) => {
                let (e, c) = ism.forward(&codes.beta, &codes.eps);
                (e, Some(c))
            }
            None => (Vec::new(), None),
        };
        let mut trunk_code = codes.beta.clone();
        trunk_code.extend_from_slice(&eps_mod);
        Ok(Conditioning {
            trunk_code,
            alpha: codes.alpha.clone(),
            ism_cache,
        })
    }

    /// Maps the trunk-code gradient back to `(d beta, d eps)`, accumulating
    /// modulation parameter gradients into `grad`.
    pub fn condition_backward(
        &self,
        codes: &FaceCodes<T>,
        cond: &Conditioning<T>,
        d_trunk_code: &[T],
        grad: &mut FieldWeights<T>,
    ) -> (Vec<T>, Vec<T>) {
        let sd = self.config.shape_dim;
        let mut d_beta = d_trunk_code[..sd].to_vec();
        let d_eps = match (&self.ism, &cond.ism_cache, grad.ism.as_mut()) {
            (Some(ism), Some(cache), Some(g)) => {
                let (db, de) = ism.backward(&codes.beta, &codes.eps, cache, &d_trunk_code[sd..], g);
                for (a, b) in d_beta.iter_mut().zip(db) {
                    *a += b;
                }
                de
            }
            _ => Vec::new(),
        };
        (d_beta, d_eps)
    }

    /// Single-point query of the fine network.
    pub fn evaluate(&self, inp: &FieldInput, codes: &FaceCodes<T>) -> Result<FieldOutput> {
        self.evaluate_level(Level::Fine, inp, codes)
    }

    pub fn evaluate_level(&self, level: Level, inp: &FieldInput, codes: &FaceCodes<T>) -> Result<FieldOutput> {
        let cond = self.condition(codes)?;
        let pos: Vec<T> = inp.x.iter().map(|v| T::c(*v)).collect();
        let dir: Vec<T> = inp.d.iter().map(|v| T::c(*v)).collect();
        let out = self.net(level).forward(&pos, &dir, &cond.trunk_code, &cond.alpha);
        Ok(FieldOutput {
            sigma: out.sigma[0].f64(),
            color: [out.color[0].f64(), out.color[1].f64(), out.color[2].f64()],
        })
    }

    pub fn cast<U: Real>(&self) -> FieldWeights<U> {
        let mut out = FieldWeights::<U>::shaped_like(self);
        for (dst, src) in out.tensors_mut().into_iter().zip(self.tensors()) {
            for (d, s) in dst.iter_mut().zip(src.data) {
                *d = U::c(s.f64());
            }
        }
        out
    }

    /// Zero-valued weights with the same architecture as `other`.
    pub fn shaped_like<S: Real>(other: &FieldWeights<S>) -> Self {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let mut w = FieldWeights::<T>::new(other.config.clone(), &mut rng).expect("config already validated");
        w.fill_zero();
        w
    }
}

impl<T: Real> Parameters<T> for FieldWeights<T> {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<TensorRef<'a, T>>) {
        self.coarse.collect(&join(prefix, "coarse"), out);
        self.fine.collect(&join(prefix, "fine"), out);
        if let Some(ism) = &self.ism {
            ism.collect(&join(prefix, "ism"), out);
        }
        self.tem.collect(&join(prefix, "tem"), out);
    }

    fn collect_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [T]>) {
        self.coarse.collect_mut(out);
        self.fine.collect_mut(out);
        if let Some(ism) = &mut self.ism {
            ism.collect_mut(out);
        }
        self.tem.collect_mut(out);
    }
}

/// Free-function form of [`FieldWeights::evaluate`].
pub fn evaluate_field<T: Real>(inp: &FieldInput, codes: &FaceCodes<T>, weights: &FieldWeights<T>) -> Result<FieldOutput> {
    weights.evaluate(inp, codes)
}

/// Free-function form of [`FieldWeights::ism_modulate`].
pub fn ism_modulate<T: Real>(beta: &[T], eps: &[T], weights: &FieldWeights<T>) -> Result<Vec<T>> {
    weights.ism_modulate(beta, eps)
}
