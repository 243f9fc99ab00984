use std::fs;

use facefield::camera::camera_rig;
use facefield::synth::dataset::{build_rig, split_subjects, RigConfig};
use facefield::synth::subject::render_with_texture;
use facefield::synth::*;
use facefield::{Camera, Error};
use proptest::prelude::*;

fn small_config() -> DatasetConfig {
    DatasetConfig {
        n_subjects: 2,
        n_expressions: 2,
        views: ViewSelection::Spread(8),
        resolution: 24,
        seed: 3,
        shape_dim: 12,
        texture_size: 128,
        ..Default::default()
    }
}

#[test]
fn default_rig_has_120_cameras_looking_at_the_origin() {
    let rig = build_rig(&DatasetConfig::default()).unwrap();
    assert_eq!(rig.len(), 120);
    for cam in &rig {
        let c = cam.center();
        let f = cam.forward_axis();
        // distance from the origin to the optical axis line
        let t = -(c[0] * f[0] + c[1] * f[1] + c[2] * f[2]);
        let closest = [c[0] + t * f[0], c[1] + t * f[1], c[2] + t * f[2]];
        assert!(closest.iter().all(|v| v.abs() < 1e-6));
    }
}

#[test]
fn single_pitch_at_zero_keeps_cameras_on_the_equator() {
    let rig = camera_rig(1, 7, (0.0, 0.0), (-90.0, 90.0), 1.5, 16, 16).unwrap();
    assert!(rig.iter().all(|c| c.center()[1].abs() < 1e-12));
}

#[test]
fn subjects_are_deterministic_and_separable() {
    let opts = SubjectOptions { shape_dim: 20, texture_size: 128 };
    let a = make_subject(4, 11, &opts).unwrap();
    assert_eq!(a, make_subject(4, 11, &opts).unwrap());
    let other = make_subject(5, 11, &opts).unwrap();
    let b = SubjectSpec::from_parts(9, a.shape_factors.clone(), other.appearance.clone(), 128).unwrap();
    assert_eq!(a.landmarks3d, b.landmarks3d);
    assert_ne!(a.texture, b.texture);
    for e in 0..4 {
        assert_eq!(a.landmarks(e), b.landmarks(e));
    }
}

#[test]
fn mean_head_matches_template_and_neutral_has_no_displacement() {
    let g = Geometry::new(&[0.0; 12], 0);
    let p = nalgebra::Vector3::new(0.1, -0.2, 0.3);
    assert_eq!(g.warp(p), p);
    let zero = landmarks_for(&[0.0; 12], 0);
    assert_eq!(zero, landmarks_for(&[], 0));
    assert_ne!(landmarks_for(&[0.0; 12], 1), zero);
}

#[test]
fn mask_coverage_of_mean_head_is_plausible() {
    let spec = SubjectSpec::from_parts(0, vec![0.0; 12], make_subject(0, 0, &SubjectOptions { shape_dim: 12, texture_size: 128 }).unwrap().appearance, 128).unwrap();
    let (_, mask) = render_ground_truth(&spec, 0, &Camera::orbit(0.0, 0.0, 1.5, 64, 64).unwrap());
    let frac = mask.count() as f64 / (64.0 * 64.0);
    assert!((0.1..=0.7).contains(&frac), "{frac}");
}

#[test]
fn mirrored_texture_and_yaw_mirror_the_image() {
    // named shape factors come in bilateral pairs, so this head is symmetric
    let spec = make_subject(1, 5, &SubjectOptions { shape_dim: 12, texture_size: 128 }).unwrap();
    let geom = spec.geometry(0);
    for yaw in [0.0, 25.0, 60.0] {
        let (a, ma) = render_with_texture(&geom, &spec.texture, &Camera::orbit(yaw, 10.0, 1.5, 48, 48).unwrap());
        let (b, mb) = render_with_texture(&geom, &spec.texture.mirrored(), &Camera::orbit(-yaw, 10.0, 1.5, 48, 48).unwrap());
        let b = b.mirrored();
        let mut mask_diff = 0;
        for r in 0..48 {
            for c in 0..48 {
                if ma.get(r, c) != mb.get(r, 47 - c) {
                    mask_diff += 1;
                }
            }
        }
        assert!(mask_diff <= 5, "yaw {yaw}: {mask_diff} mask pixels differ");
        let mad = a.data.iter().zip(&b.data).map(|(x, y)| (x - y).abs() as f64).sum::<f64>() / a.data.len() as f64;
        assert!(mad < 5e-3, "yaw {yaw}: mean abs diff {mad}");
    }
}

#[test]
fn build_counts_and_rebuild_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let (d1, d2) = (tmp.path().join("a"), tmp.path().join("b"));
    let cfg = small_config();
    let m = build_dataset(&cfg, &d1).unwrap();
    build_dataset(&cfg, &d2).unwrap();
    assert_eq!(m.images.len(), 32);
    assert_eq!(fs::read_dir(d1.join("images")).unwrap().count(), 64);
    assert_eq!(fs::read(d1.join("manifest.json")).unwrap(), fs::read(d2.join("manifest.json")).unwrap());
    for e in &m.images {
        assert_eq!(fs::read(d1.join(&e.image)).unwrap(), fs::read(d2.join(&e.image)).unwrap());
    }

    let data = Dataset::load(&d1).unwrap();
    assert_eq!(data.samples.len(), 32);
    let opts = SubjectOptions { shape_dim: cfg.shape_dim, texture_size: cfg.texture_size };
    for s in &data.samples {
        let spec = make_subject(s.subject, cfg.seed, &opts).unwrap();
        let (img, mask) = render_ground_truth(&spec, s.expression, data.camera(s.view));
        assert_eq!(s.image, img.quantized());
        assert_eq!(s.mask, mask);
        assert_eq!(data.subjects[s.subject].texture, spec.texture);
    }
}

#[test]
fn unknown_schema_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    build_dataset(&DatasetConfig { n_subjects: 1, n_expressions: 1, views: ViewSelection::Indices(vec![0]), ..small_config() }, tmp.path()).unwrap();
    let path = tmp.path().join("manifest.json");
    let mut v: serde_json::Value = serde_json::from_slice(&fs::read(&path).unwrap()).unwrap();
    v["schema"] = 99.into();
    fs::write(&path, serde_json::to_vec(&v).unwrap()).unwrap();
    assert!(matches!(Dataset::load(tmp.path()), Err(Error::Schema { .. })));
}

#[test]
fn invalid_view_selection_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = DatasetConfig { views: ViewSelection::Indices(vec![500]), ..small_config() };
    assert!(matches!(build_dataset(&cfg, tmp.path()), Err(Error::Config(_))));
    assert!(ViewSelection::Spread(121).resolve(120).is_err());
    assert_eq!(ViewSelection::Spread(120).resolve(120).unwrap(), (0..120).collect::<Vec<_>>());
    let _ = RigConfig::default();
}

#[test]
fn expression_names_cover_the_bank() {
    assert_eq!(expression_name(0), "neutral");
    for i in 1..DEFAULT_EXPRESSIONS {
        assert!(!expression_name(i).is_empty());
    }
    assert_eq!(MOTION_UNITS.len(), 10);
}

proptest! {
    #[test]
    fn split_partitions_subjects(n in 1usize..40, ratio in 0.0f64..1.0, seed in any::<u64>()) {
        let s = split_subjects(n, ratio, seed);
        let mut all: Vec<usize> = s.train.iter().chain(&s.test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        prop_assert!(!s.train.is_empty());
    }

    #[test]
    fn rig_cameras_share_intrinsics_but_not_poses(n_pitch in 1usize..5, n_yaw in 2usize..8) {
        let rig = camera_rig(n_pitch, n_yaw, (-30.0, 45.0), (-90.0, 90.0), 1.5, 20, 20).unwrap();
        prop_assert_eq!(rig.len(), n_pitch * n_yaw);
        for (i, c) in rig.iter().enumerate() {
            prop_assert_eq!((c.fx, c.fy, c.cx, c.cy), (rig[0].fx, rig[0].fy, rig[0].cx, rig[0].cy));
            for d in &rig[..i] {
                prop_assert!(c.pose != d.pose);
            }
        }
    }
}
