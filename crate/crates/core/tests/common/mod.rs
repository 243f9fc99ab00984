//! Shared helpers for integration tests: small model configs and
//! straight-line reference implementations.
#![allow(dead_code)]

use facefield::field::{FieldNet, FieldWeights};
use facefield::{FaceCodes, FieldConfig, APPEARANCE_DIM};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn small_config() -> FieldConfig {
    FieldConfig {
        shape_dim: 4,
        expr_dim: 3,
        depth: 4,
        width: 16,
        skip_layer: 2,
        pos_freqs: 3,
        dir_freqs: 2,
        ism_hidden: 8,
        texture_size: 128,
    }
}

pub fn small_weights(seed: u64) -> FieldWeights<f64> {
    FieldWeights::new(small_config(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

pub fn random_codes<R: Rng>(cfg: &FieldConfig, rng: &mut R, scale: f64) -> FaceCodes<f64> {
    let mut draw = |n: usize| (0..n).map(|_| rng.random_range(-scale..scale)).collect::<Vec<f64>>();
    FaceCodes {
        beta: draw(cfg.shape_dim),
        alpha: draw(APPEARANCE_DIM),
        eps: draw(cfg.expr_dim),
    }
}

pub fn random_unit<R: Rng>(rng: &mut R) -> [f64; 3] {
    loop {
        let v: [f64; 3] = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 0.1 && n <= 1.0 {
            return v.map(|c| c / n);
        }
    }
}

/// `[p, sin(pi p), cos(pi p), sin(2 pi p), ...]`, each block over all components.
pub fn encode(p: &[f64], freqs: usize) -> Vec<f64> {
    let mut out = p.to_vec();
    for k in 0..freqs {
        let f = 2f64.powi(k as i32) * std::f64::consts::PI;
        out.extend(p.iter().map(|v| (f * v).sin()));
        out.extend(p.iter().map(|v| (f * v).cos()));
    }
    out
}

fn affine(weight: &[f64], bias: &[f64], x: &[f64]) -> Vec<f64> {
    (0..bias.len())
        .map(|o| {
            let mut s = bias[o];
            for i in 0..x.len() {
                s += weight[o * x.len() + i] * x[i];
            }
            s
        })
        .collect()
}

fn relu(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        0.0
    }
}

/// Hand-rolled `M_s(beta) * eps + M_b(beta)`.
pub fn oracle_ism(w: &FieldWeights<f64>, beta: &[f64], eps: &[f64]) -> Vec<f64> {
    let ism = w.ism.as_ref().unwrap();
    let hs: Vec<f64> = affine(&ism.scale_hidden.weight, &ism.scale_hidden.bias, beta).into_iter().map(relu).collect();
    let s = affine(&ism.scale_out.weight, &ism.scale_out.bias, &hs);
    let hb: Vec<f64> = affine(&ism.bias_hidden.weight, &ism.bias_hidden.bias, beta).into_iter().map(relu).collect();
    let b = affine(&ism.bias_out.weight, &ism.bias_out.bias, &hb);
    (0..eps.len()).map(|i| s[i] * eps[i] + b[i]).collect()
}

/// Layer-by-layer single-point forward pass of one network level.
pub fn oracle_net(net: &FieldNet<f64>, cfg: &FieldConfig, x: [f64; 3], d: [f64; 3], trunk_code: &[f64], alpha: &[f64]) -> (f64, [f64; 3]) {
    let pe_x = encode(&x, cfg.pos_freqs);
    let mut h: Vec<f64> = Vec::new();
    for (l, layer) in net.trunk.iter().enumerate() {
        let input: Vec<f64> = if l == 0 {
            pe_x.clone()
        } else if l == cfg.skip_layer {
            h.iter().chain(&pe_x).copied().collect()
        } else {
            h.clone()
        };
        let mut y = affine(&layer.sample.weight, &layer.sample.bias, &input);
        if l == 0 || l == cfg.skip_layer {
            for (o, v) in y.iter_mut().enumerate() {
                for (j, c) in trunk_code.iter().enumerate() {
                    *v += layer.code_weight[o * trunk_code.len() + j] * c;
                }
            }
        }
        h = y.into_iter().map(relu).collect();
    }
    let raw = affine(&net.density.weight, &net.density.bias, &h)[0];
    let sigma = (1.0 + raw.exp()).ln();
    let feat = affine(&net.feature.weight, &net.feature.bias, &h);
    let color_in: Vec<f64> = feat.iter().copied().chain(encode(&d, cfg.dir_freqs)).collect();
    let mut ch = affine(&net.color_hidden.sample.weight, &net.color_hidden.sample.bias, &color_in);
    for (o, v) in ch.iter_mut().enumerate() {
        for (j, a) in alpha.iter().enumerate() {
            *v += net.color_hidden.code_weight[o * alpha.len() + j] * a;
        }
    }
    let ch: Vec<f64> = ch.into_iter().map(relu).collect();
    let c = affine(&net.color_out.weight, &net.color_out.bias, &ch);
    let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
    (sigma, [sig(c[0]), sig(c[1]), sig(c[2])])
}

/// Vector relative error `|a - b| / max(|a|, |b|)`, zero when both vanish.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Central differences of `f` at `x` with step `h`.
pub fn numeric_grad(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            p[i] = x[i] + h;
            let up = f(&p);
            p[i] = x[i] - h;
            let down = f(&p);
            p[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Central differences that also report whether `f` looks smooth around each
/// coordinate: estimates at `h` and `h / 2` must agree, otherwise a
/// piecewise-linear kink lies inside the stencil and the entry is `None`.
pub fn numeric_grad_smooth(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<Option<f64>> {
    let mut p = x.to_vec();
    let mut central = |i: usize, step: f64, p: &mut Vec<f64>| {
        p[i] = x[i] + step;
        let up = f(p);
        p[i] = x[i] - step;
        let down = f(p);
        p[i] = x[i];
        (up - down) / (2.0 * step)
    };
    (0..x.len())
        .map(|i| {
            let full = central(i, h, &mut p);
            let half = central(i, 0.5 * h, &mut p);
            ((full - half).abs() <= 1e-5 + 1e-4 * full.abs()).then_some(full)
        })
        .collect()
}

/// Compares analytic and numeric gradients on the smooth entries. Returns
/// the relative error and the fraction of entries skipped at kinks.
pub fn compare_smooth(analytic: &[f64], numeric: &[Option<f64>]) -> (f64, f64) {
    let (mut a, mut n) = (Vec::new(), Vec::new());
    for (x, y) in analytic.iter().zip(numeric) {
        if let Some(y) = y {
            a.push(*x);
            n.push(*y);
        }
    }
    let skipped = 1.0 - a.len() as f64 / analytic.len().max(1) as f64;
    (rel_err(&a, &n), skipped)
}

/// Builds a 2 subject x 2 expression x 4 view dataset at 24x24 into `dir`.
pub fn tiny_dataset(dir: &std::path::Path) -> facefield::synth::Dataset {
    use facefield::synth::{build_dataset, Dataset, DatasetConfig, ViewSelection};
    let cfg = DatasetConfig {
        n_subjects: 2,
        n_expressions: 2,
        views: ViewSelection::Indices(vec![28, 31, 48, 51]),
        resolution: 24,
        seed: 5,
        shape_dim: 4,
        texture_size: 128,
        train_ratio: 1.0,
        ..Default::default()
    };
    build_dataset(&cfg, dir).unwrap();
    Dataset::load(dir).unwrap()
}

pub fn tiny_train_config() -> facefield::train::TrainConfig {
    facefield::train::TrainConfig {
        field: small_config(),
        rays_per_iter: 48,
        n_coarse: 12,
        n_fine: 12,
        chunk: 32,
        lr_start: 1e-3,
        lr_end: 1e-4,
        total_iters: 100,
        seed: 3,
        ..Default::default()
    }
}

/// Weighted sum of densities and colors over a few points.
pub fn scalar_objective(w: &FieldWeights<f64>, level: facefield::field::Level, xs: &[f64], dirs: &[f64], codes: &facefield::FaceCodes<f64>, a: &[f64], b: &[f64]) -> f64 {
    let cond = w.condition(codes).unwrap();
    let out = w.net(level).forward(xs, dirs, &cond.trunk_code, &cond.alpha);
    out.sigma.iter().zip(a).map(|(s, k)| s * k).sum::<f64>() + out.color.iter().zip(b).map(|(c, k)| c * k).sum::<f64>()
}

/// Sum of `g`-weighted coarse and fine colors of a few rays on fixed depths.
pub fn mini_render(w: &facefield::FieldWeights<f64>, codes: &facefield::FaceCodes<f64>, rays: &[facefield::Ray], zc: &[Vec<f64>], zf: &[Vec<f64>], g: &[[f64; 3]]) -> f64 {
    let cond = w.condition(codes).unwrap();
    let pass = facefield::render::forward_with_depths(w, &cond, rays, 0.5, 2.5, zc.to_vec(), Some(zf.to_vec()), [0.1, 0.1, 0.1]).unwrap();
    let pc = pass.coarse.ray_colors();
    let pf = pass.final_colors();
    (0..rays.len()).map(|i| (0..3).map(|k| g[i][k] * (pc[i][k] + pf[i][k])).sum::<f64>()).sum()
}

pub struct GradCheck {
    pub name: String,
    /// Relative error over entries away from kinks.
    pub err: f64,
    /// Fraction of entries skipped at kinks.
    pub skipped: f64,
}

impl GradCheck {
    fn new(name: &str, analytic: &[f64], numeric: &[Option<f64>]) -> Self {
        let (err, skipped) = compare_smooth(analytic, numeric);
        Self { name: name.to_string(), err, skipped }
    }

    pub fn ok(&self) -> bool {
        self.err < 1e-3 && self.skipped <= 0.1
    }
}

/// Field output gradients w.r.t. positions, codes and sampled weights.
pub fn field_gradient_checks(seed: u64, level: facefield::field::Level) -> Vec<GradCheck> {
    use facefield::field::Level;
    use facefield::nn::Parameters;
    let cfg = small_config();
    let w = small_weights(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
    let codes = random_codes(&cfg, &mut rng, 0.5);
    let n = 8;
    let xs: Vec<f64> = (0..3 * n).map(|_| rng.random_range(-0.5..0.5)).collect();
    let dirs: Vec<f64> = (0..n).flat_map(|_| random_unit(&mut rng)).collect();
    let a: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let b: Vec<f64> = (0..3 * n).map(|_| rng.random_range(-1.0..1.0)).collect();

    let cond = w.condition(&codes).unwrap();
    let cache = w.net(level).forward(&xs, &dirs, &cond.trunk_code, &cond.alpha);
    let mut grad = w.zeros_like();
    let g = w.net(level).backward(&cache, &cond.trunk_code, &cond.alpha, &a, &b, grad.net_mut(level), true);
    let (d_beta, d_eps) = w.condition_backward(&codes, &cond, &g.trunk_code, &mut grad);

    let h = 1e-4;
    let mut out = vec![GradCheck::new(
        "positions",
        g.positions.as_ref().unwrap(),
        &numeric_grad_smooth(&xs, h, |p| scalar_objective(&w, level, p, &dirs, &codes, &a, &b)),
    )];
    let with = |kind: facefield::CodeKind, p: &[f64]| {
        let mut c = codes.clone();
        *c.component_mut(kind) = p.to_vec();
        scalar_objective(&w, level, &xs, &dirs, &c, &a, &b)
    };
    for (name, analytic, kind) in [
        ("beta", &d_beta, facefield::CodeKind::Shape),
        ("eps", &d_eps, facefield::CodeKind::Expression),
        ("alpha", &g.alpha, facefield::CodeKind::Appearance),
    ] {
        out.push(GradCheck::new(name, analytic, &numeric_grad_smooth(codes.component(kind), h, |p| with(kind, p))));
    }

    // a sample of parameter entries from every non-encoder tensor
    let names: Vec<String> = w.tensors().iter().map(|t| t.name.clone()).collect();
    let analytic: Vec<Vec<f64>> = grad.tensors().iter().map(|t| t.data.to_vec()).collect();
    let mut got = Vec::new();
    let mut want = Vec::new();
    for (ti, name) in names.iter().enumerate() {
        let relevant = name.starts_with(if level == Level::Coarse { "coarse" } else { "fine" }) || name.starts_with("ism");
        if !relevant || analytic[ti].is_empty() {
            continue;
        }
        for _ in 0..3 {
            let j = rng.random_range(0..analytic[ti].len());
            let mut wp = w.clone();
            let base = wp.tensors_mut()[ti][j];
            let num = numeric_grad_smooth(&[base], h, |p| {
                wp.tensors_mut()[ti][j] = p[0];
                scalar_objective(&wp, level, &xs, &dirs, &codes, &a, &b)
            });
            got.push(analytic[ti][j]);
            want.push(num[0]);
        }
    }
    out.push(GradCheck::new("weights", &got, &want));
    out
}

/// Code gradients of a four-ray coarse plus fine render.
pub fn mini_render_gradient_checks(seed: u64) -> Vec<GradCheck> {
    use facefield::{hierarchical_resample, stratified_sample, Camera};
    let cfg = small_config();
    let w = small_weights(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
    let codes = random_codes(&cfg, &mut rng, 0.5);
    let cam = Camera::orbit(15.0, 5.0, 1.5, 16, 16).unwrap();
    let rays = cam.generate_rays(&[(7, 7), (8, 9), (5, 10), (10, 6)]).unwrap();
    let zc: Vec<Vec<f64>> = rays.iter().map(|_| stratified_sample(0.5, 2.5, 16, Some(&mut rng))).collect();
    let zf: Vec<Vec<f64>> = zc
        .iter()
        .map(|z| {
            let wts: Vec<f64> = z.iter().map(|_| rng.random::<f64>()).collect();
            hierarchical_resample(z, &wts, 16, Some(&mut rng)).unwrap()
        })
        .collect();
    let g: Vec<[f64; 3]> = rays.iter().map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect();

    let cond = w.condition(&codes).unwrap();
    let pass = facefield::render::forward_with_depths(&w, &cond, &rays, 0.5, 2.5, zc.clone(), Some(zf.clone()), [0.1, 0.1, 0.1]).unwrap();
    let mut grad = w.zeros_like();
    let cg = facefield::render::backward_rays(&w, &cond, &pass, Some(&g), Some(&g), [0.1, 0.1, 0.1], &mut grad);
    let (d_beta, d_eps) = w.condition_backward(&codes, &cond, &cg.trunk_code, &mut grad);

    let with = |kind: facefield::CodeKind, p: &[f64]| {
        let mut c = codes.clone();
        *c.component_mut(kind) = p.to_vec();
        mini_render(&w, &c, &rays, &zc, &zf, &g)
    };
    [
        ("beta", &d_beta, facefield::CodeKind::Shape),
        ("eps", &d_eps, facefield::CodeKind::Expression),
        ("alpha", &cg.alpha, facefield::CodeKind::Appearance),
    ]
    .into_iter()
    .map(|(name, analytic, kind)| GradCheck::new(name, analytic, &numeric_grad_smooth(codes.component(kind), 1e-4, |p| with(kind, p))))
    .collect()
}

/// Asymptotic Kolmogorov distribution tail with Stephens' small-sample correction.
pub fn ks_p_value(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    let mut p = 0.0;
    for k in 1..=100 {
        let term = 2.0 * (-1f64).powi(k - 1) * (-2.0 * (k as f64 * lambda).powi(2)).exp();
        p += term;
        if term.abs() < 1e-12 {
            break;
        }
    }
    p.clamp(0.0, 1.0)
}

/// KS statistic of `samples` against the uniform distribution on `[lo, hi]`.
pub fn ks_uniform(samples: &mut [f64], lo: f64, hi: f64) -> f64 {
    samples.sort_by(f64::total_cmp);
    let n = samples.len() as f64;
    let mut d: f64 = 0.0;
    for (i, x) in samples.iter().enumerate() {
        let f = ((x - lo) / (hi - lo)).clamp(0.0, 1.0);
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    d
}
