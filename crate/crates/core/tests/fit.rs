mod common;

use common::*;
use facefield::fit::{align_landmarks, fit_codes, fit_codes_with_progress, random_init, AlignOptions, FitOptions, FitTarget};
use facefield::synth::landmarks_for;
use facefield::{render_image, Camera, Error, FaceCodes, Image, LandmarkSet, Mask, RenderSettings};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn canonical() -> LandmarkSet {
    landmarks_for(&[0.3, -0.2, 0.1, 0.5, -0.4, 0.2, 0.0, 0.1, 0.6, -0.3, 0.2, 0.1], 0)
}

fn full_mask(w: usize, h: usize) -> Mask {
    Mask::new(w, h, vec![true; w * h]).unwrap()
}

fn target_at(cam: &Camera, lm: &LandmarkSet) -> FitTarget {
    let pts = lm.project(cam).iter().map(|p| [p.row, p.col]).collect();
    FitTarget::new(Image::filled(cam.width, cam.height, [0.5; 3]), full_mask(cam.width, cam.height), pts).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, ..ProptestConfig::default() })]
    #[test]
    fn known_pose_is_recovered(yaw in -80.0f64..80.0, pitch in -25.0f64..40.0, scale in 0.7f64..1.3) {
        let lm = canonical();
        let cam = Camera::orbit(yaw, pitch, 1.5, 96, 96).unwrap().with_focal_scale(scale);
        let view = align_landmarks(&target_at(&cam, &lm), &lm, &AlignOptions::default()).unwrap();
        prop_assert!((view.yaw_deg - yaw).abs() < 1.0, "yaw {} vs {}", view.yaw_deg, yaw);
        prop_assert!((view.pitch_deg - pitch).abs() < 1.0, "pitch {} vs {}", view.pitch_deg, pitch);
        prop_assert!((view.scale / scale - 1.0).abs() < 0.01);
        prop_assert!(!view.used_translation);
    }
}

#[test]
fn frontal_view_of_symmetric_landmarks_has_zero_yaw() {
    let lm = landmarks_for(&[0.0; 12], 0);
    let cam = Camera::orbit(0.0, 12.0, 1.5, 64, 64).unwrap();
    let view = align_landmarks(&target_at(&cam, &lm), &lm, &AlignOptions::default()).unwrap();
    assert!(view.yaw_deg.abs() < 1.0, "{}", view.yaw_deg);
}

#[test]
fn doubling_target_scale_doubles_the_estimate() {
    let lm = canonical();
    let cam = Camera::orbit(20.0, 5.0, 1.5, 128, 128).unwrap().with_focal_scale(0.5);
    let base = target_at(&cam, &lm);
    let mut doubled = base.clone();
    for p in &mut doubled.landmarks2d {
        p[0] = cam.cy + 2.0 * (p[0] - cam.cy);
        p[1] = cam.cx + 2.0 * (p[1] - cam.cx);
    }
    let a = align_landmarks(&base, &lm, &AlignOptions::default()).unwrap();
    let b = align_landmarks(&doubled, &lm, &AlignOptions::default()).unwrap();
    assert!((b.scale / a.scale - 2.0).abs() < 0.02);
    assert!((a.yaw_deg - b.yaw_deg).abs() < 1.0 && (a.pitch_deg - b.pitch_deg).abs() < 1.0);
}

#[test]
fn translation_term_recovers_a_shift() {
    let lm = canonical();
    let mut cam = Camera::orbit(-30.0, 10.0, 1.5, 96, 96).unwrap();
    cam.cx += 6.0;
    cam.cy -= 4.0;
    let t = target_at(&cam, &lm);
    let opts = AlignOptions { translation: true, ..Default::default() };
    let view = align_landmarks(&t, &lm, &opts).unwrap();
    assert!(view.used_translation);
    assert!((view.translation[0] + 4.0).abs() < 0.1 && (view.translation[1] - 6.0).abs() < 0.1);
    assert!((view.yaw_deg + 30.0).abs() < 1.0);
}

#[test]
fn mask_without_landmarks_fails_alignment() {
    let lm = canonical();
    let cam = Camera::orbit(0.0, 0.0, 1.5, 64, 64).unwrap();
    let mut t = target_at(&cam, &lm);
    let mut data = vec![false; 64 * 64];
    data[0] = true;
    t.mask = Mask::new(64, 64, data).unwrap();
    assert!(t.masked_landmarks().is_empty());
    assert!(matches!(align_landmarks(&t, &lm, &AlignOptions::default()), Err(Error::AlignmentFailed { .. })));
}

#[test]
fn unrelated_landmarks_fail_the_residual_threshold() {
    let lm = canonical();
    let cam = Camera::orbit(0.0, 0.0, 1.5, 64, 64).unwrap();
    let mut t = target_at(&cam, &lm);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    use rand::Rng;
    for p in &mut t.landmarks2d {
        *p = [rng.random_range(0.0..63.0), rng.random_range(0.0..63.0)];
    }
    assert!(matches!(align_landmarks(&t, &lm, &AlignOptions::default()), Err(Error::AlignmentFailed { .. })));
}

struct Scene {
    weights: facefield::FieldWeights<f32>,
    codes: FaceCodes<f32>,
    target: FitTarget,
    view: facefield::fit::AlignedView,
    opts: FitOptions,
}

fn scene() -> Scene {
    let weights = small_weights(40).cast::<f32>();
    let codes = random_codes(&small_config(), &mut ChaCha8Rng::seed_from_u64(41), 0.5).cast::<f32>();
    let lm = landmarks_for(&[0.0; 4], 0);
    let cam = Camera::orbit(10.0, 5.0, 1.5, 24, 24).unwrap();
    let render = RenderSettings { n_coarse: 12, n_fine: 12, ..Default::default() };
    let image = render_image(&weights, &codes, &cam, &render).unwrap();
    let mut target = target_at(&cam, &lm);
    target.image = image;
    let view = align_landmarks(&target, &lm, &AlignOptions::default()).unwrap();
    let opts = FitOptions { iters: 20, rays_per_iter: 64, eval_rays: 128, eval_every: 2, render, ..Default::default() };
    Scene { weights, codes, target, view, opts }
}

#[test]
fn ground_truth_init_is_a_fixed_point() {
    let mut s = scene();
    // exact pose so the target is reproduced to floating point
    s.view.yaw_deg = 10.0;
    s.view.pitch_deg = 5.0;
    s.view.scale = 1.0;
    let before = s.weights.clone();
    let r = fit_codes(&s.target, &s.weights, &s.view, s.codes.clone(), &s.opts).unwrap();
    assert_eq!(s.weights, before);
    assert!(r.error <= r.initial_error);
    assert!(r.initial_error < 1e-10, "{}", r.initial_error);
    let drift = |a: &[f32], b: &[f32]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0f32, f32::max);
    assert!(drift(&r.codes.beta, &s.codes.beta) < 1e-3);
    assert!(drift(&r.codes.alpha, &s.codes.alpha) < 1e-3);
    assert!(drift(&r.codes.eps, &s.codes.eps) < 1e-3);
}

#[test]
fn fitting_is_deterministic_and_best_error_never_rises() {
    let s = scene();
    let init = random_init(4, vec![0.0; 3], 0.5, 9).unwrap();
    let mut bests = Vec::new();
    let a = fit_codes_with_progress(&s.target, &s.weights, &s.view, init.clone(), &s.opts, &mut |p| bests.push(p.best_error)).unwrap();
    let b = fit_codes(&s.target, &s.weights, &s.view, init, &s.opts).unwrap();
    assert_eq!(a, b);
    assert_eq!(bests.len(), 20);
    assert!(bests.windows(2).all(|w| w[1] <= w[0]));
    assert!(a.error < a.initial_error);
    let scored: Vec<f64> = a.trace.iter().filter_map(|t| t.error).collect();
    assert_eq!(a.error, scored.iter().cloned().fold(f64::INFINITY, f64::min));
}

#[test]
fn invalid_options_are_rejected() {
    let s = scene();
    let bad = FitOptions { eval_every: 0, ..s.opts.clone() };
    assert!(fit_codes(&s.target, &s.weights, &s.view, s.codes.clone(), &bad).is_err());
    let wrong_dims = FaceCodes { beta: vec![0.0; 2], ..s.codes.clone() };
    assert!(fit_codes(&s.target, &s.weights, &s.view, wrong_dims, &s.opts).is_err());
}

#[test]
fn target_validation() {
    let img = Image::filled(8, 8, [0.5; 3]);
    assert!(FitTarget::new(img.clone(), full_mask(8, 8), vec![[1.0, 1.0]; 10]).is_err());
    assert!(FitTarget::new(img.clone(), full_mask(8, 9), vec![[1.0, 1.0]; 64]).is_err());
    assert!(FitTarget::new(img.clone(), Mask::new(8, 8, vec![false; 64]).unwrap(), vec![[1.0, 1.0]; 64]).is_err());
    assert!(FitTarget::new(Image::filled(8, 8, [1.5; 3]), full_mask(8, 8), vec![[1.0, 1.0]; 64]).is_err());
    assert!(FitTarget::new(img, full_mask(8, 8), vec![[1.0, 1.0]; 64]).is_ok());
}
