mod common;

use common::*;
use facefield::field::Level;
use facefield::morph::*;
use facefield::{render_image, Camera, CodeKind, FaceCodes, RenderSettings};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const ALL: [CodeKind; 3] = [CodeKind::Shape, CodeKind::Appearance, CodeKind::Expression];

fn codes(seed: u64) -> FaceCodes<f32> {
    random_codes(&small_config(), &mut ChaCha8Rng::seed_from_u64(seed), 1.0).cast::<f32>()
}

fn kinds() -> impl Strategy<Value = Vec<CodeKind>> {
    proptest::sample::subsequence(ALL.to_vec(), 0..=3)
}

proptest! {
    #[test]
    fn interpolation_is_affine_with_exact_endpoints(sa in any::<u64>(), sb in any::<u64>(), t in 0.0f64..=1.0, dims in kinds()) {
        let (a, b) = (codes(sa), codes(sb));
        prop_assert_eq!(interpolate(&a, &b, 0.0, &dims).unwrap(), a.clone());
        prop_assert_eq!(interpolate(&a, &b, 1.0, &ALL).unwrap(), b.clone());
        let m = interpolate(&a, &b, t, &dims).unwrap();
        for kind in ALL {
            let (x, y, z) = (a.component(kind), b.component(kind), m.component(kind));
            for i in 0..x.len() {
                let expect = if dims.contains(&kind) { (1.0 - t) * x[i] as f64 + t * y[i] as f64 } else { x[i] as f64 };
                prop_assert!((z[i] as f64 - expect).abs() <= 1e-6 * (1.0 + expect.abs()));
            }
        }
    }

    #[test]
    fn swapping_back_restores_the_original(sa in any::<u64>(), sb in any::<u64>(), w in 0usize..3) {
        let (a, b) = (codes(sa), codes(sb));
        let which = ALL[w];
        prop_assert_eq!(swap_attribute(&a, &a, which).unwrap(), a.clone());
        let s = swap_attribute(&a, &b, which).unwrap();
        prop_assert_eq!(s.component(which), b.component(which));
        prop_assert_eq!(swap_attribute(&s, &a, which).unwrap(), a);
    }
}

#[test]
fn midpoint_on_shape_only() {
    let (a, b) = (codes(1), codes(2));
    let m = interpolate(&a, &b, 0.5, &[CodeKind::Shape]).unwrap();
    for i in 0..a.beta.len() {
        assert!((m.beta[i] - 0.5 * (a.beta[i] + b.beta[i])).abs() < 1e-6);
    }
    assert_eq!((&m.alpha, &m.eps), (&a.alpha, &a.eps));
    assert!(interpolate(&a, &b, -0.1, &ALL).is_err());
}

#[test]
fn appearance_swap_leaves_density_and_iso_surface_unchanged() {
    let w = small_weights(7).cast::<f32>();
    let (a, b) = (codes(3), codes(4));
    let s = swap_attribute(&a, &b, CodeKind::Appearance).unwrap();
    let res = 24;
    for level in [Level::Coarse, Level::Fine] {
        let ga = density_grid(&w, level, &a, res, 0.7).unwrap();
        let gs = density_grid(&w, level, &s, res, 0.7).unwrap();
        assert_eq!(ga.sigma, gs.sigma);
        let median = {
            let mut v = ga.sigma.clone();
            v.sort_by(f64::total_cmp);
            v[v.len() / 2]
        };
        let (pa, ps) = (ga.iso_points(median), gs.iso_points(median));
        assert!(!pa.is_empty());
        assert!(chamfer_distance(&pa, &ps) < ga.voxel_size());
    }
}

#[test]
fn shape_swap_matches_direct_codes() {
    let w = small_weights(8).cast::<f32>();
    let (a, b) = (codes(5), codes(6));
    let s = swap_attribute(&a, &b, CodeKind::Shape).unwrap();
    let direct = FaceCodes { beta: b.beta.clone(), alpha: a.alpha.clone(), eps: a.eps.clone() };
    let g1 = density_grid(&w, Level::Fine, &s, 8, 0.6).unwrap();
    let g2 = density_grid(&w, Level::Fine, &direct, 8, 0.6).unwrap();
    assert_eq!(g1, g2);
}

#[test]
fn rig_sequences_broadcast_and_match_direct_renders() {
    let w = small_weights(9).cast::<f32>();
    let c = codes(10);
    let settings = RenderSettings { n_coarse: 8, n_fine: 8, ..Default::default() };
    let cams: Vec<Camera> = [-20.0, 0.0, 20.0].iter().map(|y| Camera::orbit(*y, 0.0, 1.5, 12, 12).unwrap()).collect();
    let eps = vec![c.eps.clone()];
    let frames = rig_sequence(&w, &c.beta, &c.alpha, &eps, &cams, &settings).unwrap();
    assert_eq!(frames.len(), 3);
    for (f, cam) in frames.iter().zip(&cams) {
        assert_eq!(f, &render_image(&w, &c, cam, &settings).unwrap());
    }
    let keys = vec![codes(11).eps, codes(12).eps];
    let track = expression_track(&keys, 3).unwrap();
    let frames = rig_sequence(&w, &c.beta, &c.alpha, &track, &cams[..1], &settings).unwrap();
    assert_eq!(frames.len(), 4);
    let end = FaceCodes { eps: keys[1].clone(), ..c.clone() };
    assert_eq!(frames[3], render_image(&w, &end, &cams[0], &settings).unwrap());
    assert!(rig_sequence(&w, &c.beta, &c.alpha, &[], &cams, &settings).unwrap().is_empty());
    assert!(rig_sequence(&w, &c.beta, &c.alpha, &track, &cams, &settings).is_err());
}

#[test]
fn frames_are_written_with_an_index() {
    let tmp = tempfile::tempdir().unwrap();
    let frames = vec![facefield::Image::filled(4, 4, [0.2; 3]), facefield::Image::filled(4, 4, [0.8; 3])];
    let idx = write_frames(tmp.path(), &frames, serde_json::json!({"t": [0.0, 1.0]})).unwrap();
    assert_eq!(idx.frames, vec!["frame_0000.png", "frame_0001.png"]);
    let back: FrameIndex = serde_json::from_slice(&std::fs::read(tmp.path().join("index.json")).unwrap()).unwrap();
    assert_eq!(back, idx);
    assert_eq!(facefield::Image::read_png(&tmp.path().join("frame_0001.png")).unwrap(), frames[1].quantized());
}

#[test]
fn iso_threshold_gives_half_opacity() {
    let delta = 2.0 / 64.0;
    let s = iso_threshold(delta);
    assert!((1.0 - (-s * delta).exp() - 0.5).abs() < 1e-12);
}
