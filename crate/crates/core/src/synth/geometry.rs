//! Analytic head geometry: a template signed-distance field warped by
//! radial-basis displacements driven by shape factors and expression labels.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type V3 = Vector3<f64>;

const SMOOTH_K: f64 = 0.02;
/// Radius of a sphere that contains every generated head.
pub const BOUNDING_RADIUS: f64 = 0.62;
const WARP_ITERS: usize = 14;
/// Number of shape factors with a named facial meaning; later ones add small bumps.
pub const NAMED_SHAPE_DIMS: usize = 12;
pub const DEFAULT_EXPRESSIONS: usize = 20;
const BUMP_SEED: u64 = 0x00c0_ffee;

fn v(x: f64, y: f64, z: f64) -> V3 {
    V3::new(x, y, z)
}

fn ellipsoid(p: V3, c: V3, r: V3) -> f64 {
    let q = (p - c).component_div(&r);
    (q.norm() - 1.0) * r.min()
}

fn smin(a: f64, b: f64, k: f64) -> f64 {
    let h = (0.5 + 0.5 * (b - a) / k).clamp(0.0, 1.0);
    b + (a - b) * h - k * h * (1.0 - h)
}

/// Canonical mean head before any warp.
pub fn template_sdf(q: V3) -> f64 {
    let mut d = ellipsoid(q, v(0.0, 0.0, 0.0), v(0.30, 0.40, 0.34));
    let parts = [
        (v(0.0, -0.03, 0.31), v(0.045, 0.09, 0.07)),
        (v(0.11, 0.115, 0.285), v(0.075, 0.018, 0.035)),
        (v(-0.11, 0.115, 0.285), v(0.075, 0.018, 0.035)),
        (v(0.0, -0.19, 0.275), v(0.085, 0.035, 0.04)),
        (v(0.105, 0.04, 0.28), v(0.045, 0.045, 0.045)),
        (v(-0.105, 0.04, 0.28), v(0.045, 0.045, 0.045)),
        (v(0.295, 0.0, -0.01), v(0.03, 0.075, 0.045)),
        (v(-0.295, 0.0, -0.01), v(0.03, 0.075, 0.045)),
    ];
    for (c, r) in parts {
        d = smin(d, ellipsoid(q, c, r), SMOOTH_K);
    }
    d
}

/// Gaussian displacement `exp(-|q - c|^2 / 2 s^2) * dir`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bump {
    pub center: V3,
    pub radius: f64,
    pub dir: V3,
}

impl Bump {
    fn new(center: V3, radius: f64, dir: V3) -> Self {
        Self { center, radius, dir }
    }

    /// Same bump reflected through the `x = 0` plane.
    fn mirrored(&self) -> Self {
        Self {
            center: v(-self.center.x, self.center.y, self.center.z),
            radius: self.radius,
            dir: v(-self.dir.x, self.dir.y, self.dir.z),
        }
    }

    fn scaled(&self, k: f64) -> Self {
        Self { dir: self.dir * k, ..*self }
    }
}

fn pair(b: Bump) -> Vec<Bump> {
    vec![b, b.mirrored()]
}

/// Displacement basis for named shape factors 3..12 (factors 0..3 scale the axes).
fn named_shape_basis(index: usize) -> Vec<Bump> {
    match index {
        3 => vec![Bump::new(v(0.0, -0.03, 0.37), 0.06, v(0.0, 0.0, 0.012))],
        4 => pair(Bump::new(v(0.04, -0.06, 0.34), 0.04, v(0.008, 0.0, 0.0))),
        5 => pair(Bump::new(v(0.105, 0.04, 0.3), 0.055, v(0.01, 0.0, 0.0))),
        6 => pair(Bump::new(v(0.105, 0.04, 0.3), 0.055, v(0.0, 0.01, 0.0))),
        7 => pair(Bump::new(v(0.08, -0.19, 0.28), 0.045, v(0.01, 0.0, 0.0))),
        8 => vec![Bump::new(v(0.0, -0.19, 0.29), 0.07, v(0.0, 0.01, 0.0))],
        9 => pair(Bump::new(v(0.11, 0.115, 0.3), 0.06, v(0.0, 0.01, 0.0))),
        10 => pair(Bump::new(v(0.24, -0.22, 0.1), 0.1, v(0.015, 0.0, 0.0))),
        11 => vec![Bump::new(v(0.0, -0.33, 0.2), 0.09, v(0.0, -0.015, 0.005))],
        _ => Vec::new(),
    }
}

/// Outward bump on the template for shape factors beyond the named ones, with
/// amplitude decaying in the factor index.
fn detail_bump(index: usize) -> Bump {
    let mut rng = ChaCha8Rng::seed_from_u64(BUMP_SEED ^ index as u64);
    let lon: f64 = rng.random_range(-2.6..2.6);
    let lat: f64 = rng.random_range(-0.9..1.1);
    let n = v(lat.cos() * lon.sin(), lat.sin(), lat.cos() * lon.cos());
    let center = v(0.30 * n.x, 0.40 * n.y, 0.34 * n.z);
    let amp = 0.008 * 0.96f64.powi((index - NAMED_SHAPE_DIMS) as i32);
    Bump::new(center, 0.08, n * amp)
}

pub const MOTION_UNITS: [&str; 10] = [
    "jaw_drop",
    "smile",
    "frown",
    "pucker",
    "brow_raise",
    "brow_furrow",
    "cheek_puff",
    "mouth_left",
    "mouth_right",
    "squint",
];

fn motion_unit(index: usize) -> Vec<Bump> {
    let corner = v(0.08, -0.185, 0.28);
    let brow = v(0.11, 0.115, 0.3);
    match index {
        0 => vec![
            Bump::new(v(0.0, -0.3, 0.2), 0.12, v(0.0, -0.035, 0.0)),
            Bump::new(v(0.0, -0.21, 0.3), 0.04, v(0.0, -0.015, 0.0)),
        ],
        1 => {
            let mut b = pair(Bump::new(corner, 0.04, v(0.012, 0.015, -0.005)));
            b.extend(pair(Bump::new(v(0.13, -0.08, 0.26), 0.06, v(0.0, 0.008, 0.008))));
            b
        }
        2 => pair(Bump::new(corner, 0.04, v(0.0, -0.015, 0.0))),
        3 => {
            let mut b = vec![Bump::new(v(0.0, -0.19, 0.3), 0.05, v(0.0, 0.0, 0.02))];
            b.extend(pair(Bump::new(corner, 0.04, v(-0.012, 0.0, 0.0))));
            b
        }
        4 => pair(Bump::new(brow, 0.06, v(0.0, 0.02, 0.0))),
        5 => pair(Bump::new(v(0.06, 0.11, 0.3), 0.05, v(-0.01, -0.01, 0.0))),
        6 => pair(Bump::new(v(0.14, -0.12, 0.24), 0.07, v(0.015, 0.0, 0.01))),
        7 => vec![Bump::new(v(0.0, -0.19, 0.29), 0.07, v(0.02, 0.0, 0.0))],
        8 => vec![Bump::new(v(0.0, -0.19, 0.29), 0.07, v(-0.02, 0.0, 0.0))],
        9 => pair(Bump::new(v(0.105, 0.02, 0.3), 0.05, v(0.0, 0.008, -0.006))),
        _ => Vec::new(),
    }
}

/// Motion-unit weights of an expression label; label 0 is neutral.
pub fn expression_mix(label: usize) -> Vec<(usize, f64)> {
    let u = MOTION_UNITS.len();
    match label {
        0 => Vec::new(),
        l if l <= u => vec![(l - 1, 1.0)],
        l => {
            let k = l - u - 1;
            vec![(k % u, 0.7), ((k + 3) % u, 0.6)]
        }
    }
}

/// Readable name of an expression label: `neutral`, a motion unit, or a
/// `unit+unit` blend.
pub fn expression_name(label: usize) -> String {
    match expression_mix(label).as_slice() {
        [] => "neutral".to_string(),
        [(u, _)] => MOTION_UNITS[*u].to_string(),
        mix => mix.iter().map(|(u, _)| MOTION_UNITS[*u]).collect::<Vec<_>>().join("+"),
    }
}

/// Geometry of one subject under one expression.
#[derive(Debug, Clone)]
pub struct Geometry {
    scale: V3,
    bumps: Vec<Bump>,
}

impl Geometry {
    pub fn new(shape_factors: &[f64], expression: usize) -> Self {
        let f = |i: usize| shape_factors.get(i).copied().unwrap_or(0.0).clamp(-2.0, 2.0);
        let scale = v(1.0 + 0.06 * f(0), 1.0 + 0.06 * f(1), 1.0 + 0.06 * f(2));
        let mut bumps = Vec::new();
        for i in 3..shape_factors.len() {
            let b = f(i);
            if b == 0.0 {
                continue;
            }
            if i < NAMED_SHAPE_DIMS {
                bumps.extend(named_shape_basis(i).into_iter().map(|x| x.scaled(b)));
            } else {
                bumps.push(detail_bump(i).scaled(b));
            }
        }
        for (unit, w) in expression_mix(expression) {
            bumps.extend(motion_unit(unit).into_iter().map(|x| x.scaled(w)));
        }
        Self { scale, bumps }
    }

    fn displacement(&self, q: V3) -> V3 {
        let mut d = V3::zeros();
        for b in &self.bumps {
            let r2 = (q - b.center).norm_squared();
            let s2 = b.radius * b.radius;
            if r2 < 16.0 * s2 {
                d += b.dir * (-0.5 * r2 / s2).exp();
            }
        }
        d
    }

    /// Template point to subject space.
    pub fn warp(&self, q: V3) -> V3 {
        (q + self.displacement(q)).component_mul(&self.scale)
    }

    /// Subject point back to the template by fixed-point iteration.
    pub fn unwarp(&self, p: V3) -> V3 {
        let base = p.component_div(&self.scale);
        if self.bumps.is_empty() {
            return base;
        }
        let mut q = base;
        for _ in 0..WARP_ITERS {
            q = base - self.displacement(q);
        }
        q
    }

    /// Signed distance estimate (not exact; callers step conservatively).
    pub fn sdf(&self, p: V3) -> f64 {
        template_sdf(self.unwarp(p)) * self.scale.min()
    }

    pub fn normal(&self, p: V3) -> V3 {
        let h = 1e-4;
        let dx = self.sdf(p + v(h, 0.0, 0.0)) - self.sdf(p - v(h, 0.0, 0.0));
        let dy = self.sdf(p + v(0.0, h, 0.0)) - self.sdf(p - v(0.0, h, 0.0));
        let dz = self.sdf(p + v(0.0, 0.0, h)) - self.sdf(p - v(0.0, 0.0, h));
        let n = v(dx, dy, dz);
        let len = n.norm();
        if len > 0.0 {
            n / len
        } else {
            v(0.0, 0.0, 1.0)
        }
    }

    /// First surface hit along `o + t d` for `t` in `[t_min, t_max]`.
    pub fn trace(&self, o: V3, d: V3, t_min: f64, t_max: f64) -> Option<(f64, V3)> {
        // clip to the bounding sphere
        let b = o.dot(&d);
        let c = o.norm_squared() - BOUNDING_RADIUS * BOUNDING_RADIUS;
        let disc = b * b - c;
        if disc <= 0.0 {
            return None;
        }
        let root = disc.sqrt();
        let mut t = (-b - root).max(t_min);
        let t_end = (-b + root).min(t_max);
        let mut prev_t = t;
        let mut prev_d = self.sdf(o + d * t);
        if prev_d <= 0.0 {
            return Some((t, o + d * t));
        }
        for _ in 0..400 {
            let step = (0.5 * prev_d).max(2e-4);
            t += step;
            if t > t_end {
                return None;
            }
            let dist = self.sdf(o + d * t);
            if dist <= 0.0 {
                let (mut lo, mut hi) = (prev_t, t);
                for _ in 0..30 {
                    let mid = 0.5 * (lo + hi);
                    if self.sdf(o + d * mid) > 0.0 {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                return Some((hi, o + d * hi));
            }
            if dist < 1e-5 {
                return Some((t, o + d * t));
            }
            prev_t = t;
            prev_d = dist;
        }
        None
    }
}

/// Template anchor points in front view `(x, y)`, in landmark order:
/// brows 12, eyes 16, nose 12, mouth 24.
fn landmark_anchors_2d() -> Vec<(f64, f64)> {
    let mut pts = Vec::with_capacity(64);
    for side in [1.0, -1.0] {
        for k in 0..6 {
            let t = k as f64 / 5.0;
            let x = 0.045 + 0.13 * t;
            let y = 0.112 + 0.02 * (1.0 - (2.0 * t - 0.8).powi(2));
            pts.push((side * x, y));
        }
    }
    for side in [1.0, -1.0] {
        for k in 0..8 {
            let a = k as f64 * std::f64::consts::FRAC_PI_4;
            pts.push((side * 0.105 + 0.035 * a.cos(), 0.04 + 0.016 * a.sin()));
        }
    }
    for y in [0.06, 0.03, 0.0, -0.03] {
        pts.push((0.0, y));
    }
    pts.push((0.0, -0.06));
    for (x, y) in [(0.02, -0.085), (0.035, -0.075), (0.045, -0.06)] {
        pts.push((x, y));
        pts.push((-x, y));
    }
    pts.push((0.0, -0.095));
    for (rx, ry) in [(0.08, 0.03), (0.05, 0.01)] {
        for k in 0..12 {
            let a = k as f64 * std::f64::consts::PI / 6.0;
            pts.push((rx * a.cos(), -0.19 + ry * a.sin()));
        }
    }
    pts
}

/// Anchors lifted onto the template surface along `-z`.
pub fn template_landmarks() -> Vec<V3> {
    landmark_anchors_2d()
        .into_iter()
        .map(|(x, y)| {
            let (mut lo, mut hi) = (0.0f64, 0.6f64);
            // march from the front until inside, then bisect
            let mut z = hi;
            while z > 0.0 && template_sdf(v(x, y, z)) > 0.0 {
                hi = z;
                z -= 0.005;
            }
            lo = lo.max(z);
            for _ in 0..50 {
                let mid = 0.5 * (lo + hi);
                if template_sdf(v(x, y, mid)) > 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            v(x, y, 0.5 * (lo + hi))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn neutral_label_has_no_motion() {
        assert!(expression_mix(0).is_empty());
        let g = Geometry::new(&[0.0; 50], 0);
        let p = v(0.1, -0.2, 0.3);
        assert_eq!(g.warp(p), p);
        assert_eq!(g.unwarp(p), p);
    }

    #[test]
    fn every_label_has_motion() {
        for l in 1..DEFAULT_EXPRESSIONS {
            assert!(!expression_mix(l).is_empty());
        }
    }

    #[test]
    fn unwarp_inverts_warp() {
        let factors: Vec<f64> = (0..50).map(|i| ((i * 7 % 11) as f64 / 5.0 - 1.0) * 1.8).collect();
        for expr in [0, 1, 4, 13] {
            let g = Geometry::new(&factors, expr);
            for q in template_landmarks() {
                let back = g.unwarp(g.warp(q));
                assert!((back - q).norm() < 1e-6, "expr {expr}: {}", (back - q).norm());
            }
        }
    }

    #[test]
    fn landmarks_sit_on_template_surface() {
        let lms = template_landmarks();
        assert_eq!(lms.len(), 64);
        for q in lms {
            assert!(template_sdf(q).abs() < 1e-6);
            assert!(q.z > 0.2);
        }
    }

    #[test]
    fn heads_fit_inside_bounding_sphere() {
        let extreme = vec![2.0; 50];
        for expr in 0..DEFAULT_EXPRESSIONS {
            let g = Geometry::new(&extreme, expr);
            for i in 0..400 {
                let a = i as f64 * 2.399;
                let y = 1.0 - 2.0 * (i as f64 + 0.5) / 400.0;
                let r = (1.0 - y * y).sqrt();
                let dir = v(r * a.cos(), y, r * a.sin());
                assert!(g.sdf(dir * BOUNDING_RADIUS) > 0.0);
            }
        }
    }
}
