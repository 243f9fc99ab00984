//! UV-space appearance painting for synthetic subjects.

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::tem::TextureMap;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppearanceParams {
    pub skin: [f64; 3],
    pub lips: [f64; 3],
    pub iris: [f64; 3],
    pub hair: [f64; 3],
    pub beard: bool,
    /// Latitude (radians) where the hair cap starts.
    pub hairline: f64,
    pub blush: f64,
    pub skin_phase: [f64; 2],
}

const SKIN: [[f64; 3]; 5] = [
    [0.96, 0.80, 0.69],
    [0.90, 0.72, 0.58],
    [0.78, 0.57, 0.44],
    [0.60, 0.42, 0.30],
    [0.42, 0.28, 0.20],
];
const IRIS: [[f64; 3]; 4] = [[0.25, 0.15, 0.08], [0.20, 0.35, 0.55], [0.25, 0.45, 0.30], [0.10, 0.08, 0.06]];
const HAIR: [[f64; 3]; 5] = [
    [0.08, 0.06, 0.05],
    [0.30, 0.20, 0.10],
    [0.65, 0.50, 0.30],
    [0.50, 0.15, 0.08],
    [0.60, 0.60, 0.60],
];

impl AppearanceParams {
    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let jitter = |c: [f64; 3], amt: f64, rng: &mut R| c.map(|v| (v + rng.random_range(-amt..amt)).clamp(0.0, 1.0));
        let skin = jitter(*SKIN.choose(rng).expect("non-empty palette"), 0.03, rng);
        let lip_dark = rng.random_range(0.65..0.85);
        let lips = [skin[0] * 0.95, skin[1] * lip_dark * 0.75, skin[2] * lip_dark * 0.8];
        let iris = jitter(*IRIS.choose(rng).expect("non-empty palette"), 0.03, rng);
        let hair = jitter(*HAIR.choose(rng).expect("non-empty palette"), 0.03, rng);
        Self {
            skin,
            lips,
            iris,
            hair,
            beard: rng.random_bool(0.3),
            hairline: rng.random_range(0.55..0.75),
            blush: rng.random_range(0.0..0.12),
            skin_phase: [rng.random_range(0.0..6.28), rng.random_range(0.0..6.28)],
        }
    }
}

/// `(longitude, latitude)` of a template point as used by the UV map.
pub fn lon_lat(q: [f64; 3]) -> (f64, f64) {
    let r = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2]).sqrt().max(1e-12);
    (q[0].atan2(q[2]), (q[1] / r).clamp(-1.0, 1.0).asin())
}

/// Texture coordinates of a template point; `u` follows longitude, `v` runs
/// from the top of the head (0) to the bottom (1).
pub fn uv_of(q: [f64; 3]) -> (f64, f64) {
    let (lon, lat) = lon_lat(q);
    (0.5 + lon / std::f64::consts::TAU, 0.5 - lat / std::f64::consts::PI)
}

fn smoothstep(e0: f64, e1: f64, x: f64) -> f64 {
    let t = ((x - e0) / (e1 - e0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Soft elliptical region in `(lon, lat)`, 1 inside, 0 outside.
fn region(lon: f64, lat: f64, c: (f64, f64), a: f64, b: f64) -> f64 {
    let dl = (lon - c.0) * c.1.cos() / a;
    let dt = (lat - c.1) / b;
    1.0 - smoothstep(0.85, 1.15, (dl * dl + dt * dt).sqrt())
}

fn mix(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    [a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t, a[2] + (b[2] - a[2]) * t]
}

/// Albedo at a UV location.
pub fn albedo(p: &AppearanceParams, lon: f64, lat: f64) -> [f64; 3] {
    let eye = lon_lat([0.105, 0.04, 0.325]);
    let brow = lon_lat([0.11, 0.12, 0.3]);
    let lips = lon_lat([0.0, -0.19, 0.3]);
    let shade = 1.0 + 0.05 * (3.0 * lon + p.skin_phase[0]).sin() * (2.0 * lat + p.skin_phase[1]).cos();
    let mut c = p.skin.map(|v| v * shade);

    for side in [1.0, -1.0] {
        let cheek = region(lon, lat, (side * 0.55, -0.2), 0.2, 0.2);
        c = mix(c, [0.85, 0.35, 0.35], p.blush * cheek);
    }
    if p.beard {
        let jaw = smoothstep(-0.6, -0.7, lat) * smoothstep(1.0, 0.85, lon.abs()) * smoothstep(-1.3, -1.15, lat);
        c = mix(c, p.hair.map(|v| v * 0.8), 0.75 * jaw);
    }
    c = mix(c, p.lips, region(lon, lat, lips, 0.23, 0.09));
    for side in [1.0, -1.0] {
        let ec = (side * eye.0, eye.1);
        c = mix(c, [0.93, 0.92, 0.90], region(lon, lat, ec, 0.105, 0.05));
        c = mix(c, p.iris, region(lon, lat, ec, 0.042 / ec.1.cos(), 0.042));
        c = mix(c, [0.03, 0.03, 0.03], region(lon, lat, ec, 0.018 / ec.1.cos(), 0.018));
        c = mix(c, p.hair.map(|v| v * 0.9), region(lon, lat, (side * brow.0, brow.1), 0.2, 0.035));
    }
    let cap = smoothstep(p.hairline - 0.05, p.hairline + 0.05, lat);
    let back = smoothstep(1.85, 2.1, lon.abs()) * smoothstep(-0.4, -0.25, lat);
    c = mix(c, p.hair, cap.max(back));
    c.map(|v| v.clamp(0.0, 1.0))
}

/// Paints a `side x side` atlas. Texel centers sit at `(i + 0.5) / side`.
/// Values are quantized to multiples of 1/255.
pub fn paint_texture(p: &AppearanceParams, side: usize) -> Result<TextureMap> {
    let mut pixels = Vec::with_capacity(side * side * 3);
    for row in 0..side {
        let v = (row as f64 + 0.5) / side as f64;
        let lat = (0.5 - v) * std::f64::consts::PI;
        for col in 0..side {
            let u = (col as f64 + 0.5) / side as f64;
            let lon = (u - 0.5) * std::f64::consts::TAU;
            // stored on the 8-bit grid so the PNG copy is exact
            pixels.extend(albedo(p, lon, lat).map(|x| ((x * 255.0).round() / 255.0) as f32));
        }
    }
    TextureMap::new(side, pixels)
}
