mod common;

use common::*;
use facefield::field::{FieldNet, Ism, Level};
use facefield::nn::Parameters;
use facefield::{evaluate_field, ism_modulate, Error, FieldInput, FieldWeights, APPEARANCE_DIM};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn forward_matches_layer_by_layer_oracle() {
    let w = small_weights(11);
    let cfg = small_config();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let codes = random_codes(&cfg, &mut rng, 1.0);
        let x = [rng.random_range(-0.6..0.6), rng.random_range(-0.6..0.6), rng.random_range(-0.6..0.6)];
        let d = random_unit(&mut rng);
        let out = evaluate_field(&FieldInput::new(x, d).unwrap(), &codes, &w).unwrap();
        let mut trunk = codes.beta.clone();
        trunk.extend(oracle_ism(&w, &codes.beta, &codes.eps));
        let (sigma, color) = oracle_net(&w.fine, &cfg, x, d, &trunk, &codes.alpha);
        assert!((out.sigma - sigma).abs() < 1e-8, "{} vs {}", out.sigma, sigma);
        for k in 0..3 {
            assert!((out.color[k] - color[k]).abs() < 1e-8);
        }
    }
}

#[test]
fn ism_matches_two_layer_oracle() {
    let w = small_weights(3);
    let cfg = small_config();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..10 {
        let c = random_codes(&cfg, &mut rng, 2.0);
        let got = ism_modulate(&c.beta, &c.eps, &w).unwrap();
        let want = oracle_ism(&w, &c.beta, &c.eps);
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() < 1e-10);
        }
    }
}

fn force_identity(ism: &mut Ism<f64>) {
    ism.scale_out.weight.iter_mut().for_each(|v| *v = 0.0);
    ism.scale_out.bias.iter_mut().for_each(|v| *v = 1.0);
    ism.bias_out.weight.iter_mut().for_each(|v| *v = 0.0);
    ism.bias_out.bias.iter_mut().for_each(|v| *v = 0.0);
}

#[test]
fn identity_modulation_passes_expression_through() {
    let mut w = small_weights(4);
    force_identity(w.ism.as_mut().unwrap());
    let cfg = small_config();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..10 {
        let c = random_codes(&cfg, &mut rng, 3.0);
        assert_eq!(ism_modulate(&c.beta, &c.eps, &w).unwrap(), c.eps);
    }
}

#[test]
fn zero_expression_yields_bias_branch() {
    let w = small_weights(6);
    let cfg = small_config();
    let c = random_codes(&cfg, &mut ChaCha8Rng::seed_from_u64(2), 1.0);
    let zero = vec![0.0; cfg.expr_dim];
    let got = ism_modulate(&c.beta, &zero, &w).unwrap();
    let mut bias_only = w.clone();
    let ism = bias_only.ism.as_mut().unwrap();
    ism.scale_out.weight.iter_mut().for_each(|v| *v = 0.0);
    ism.scale_out.bias.iter_mut().for_each(|v| *v = 0.0);
    let want = ism_modulate(&c.beta, &c.eps, &bias_only).unwrap();
    for (a, b) in got.iter().zip(&want) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn dimension_mismatch_is_config_error() {
    let w = small_weights(1);
    let err = ism_modulate(&[0.0; 5], &[0.0; 3], &w).unwrap_err();
    assert!(matches!(err, Error::Config(_)));
    let mut codes = random_codes(&small_config(), &mut ChaCha8Rng::seed_from_u64(0), 1.0);
    codes.alpha.pop();
    let inp = FieldInput::new([0.0; 3], [0.0, 0.0, 1.0]).unwrap();
    assert!(evaluate_field(&inp, &codes, &w).is_err());
}

#[test]
fn non_unit_direction_rejected() {
    assert!(FieldInput::new([0.0; 3], [0.0, 0.0, 1.1]).is_err());
}

#[test]
fn expressionless_variant_has_no_modulation() {
    let mut cfg = small_config();
    cfg.expr_dim = 0;
    let w = FieldWeights::<f64>::new(cfg.clone(), &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    assert!(w.ism.is_none());
    assert!(w.tensors().iter().all(|t| !t.name.starts_with("ism")));
    let codes = random_codes(&cfg, &mut ChaCha8Rng::seed_from_u64(3), 1.0);
    assert!(codes.eps.is_empty());
    let out = evaluate_field(&FieldInput::new([0.1, 0.2, 0.3], [0.0, 1.0, 0.0]).unwrap(), &codes, &w).unwrap();
    assert!(out.sigma >= 0.0);
}

/// Density of one point from a freshly drawn network with the given codes.
fn sigma_of(net: &FieldNet<f64>, x: [f64; 3], d: [f64; 3], trunk: &[f64], alpha: &[f64]) -> f64 {
    net.forward(&x, &d, trunk, alpha).sigma[0]
}

#[test]
fn density_is_bitwise_invariant_to_appearance_and_direction() {
    let cfg = small_config();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..1000 {
        let net = FieldNet::<f64>::new(&cfg, &mut rng);
        let ism = Ism::<f64>::new(cfg.shape_dim, cfg.expr_dim, cfg.ism_hidden, &mut rng);
        let c = random_codes(&cfg, &mut rng, 2.0);
        let mut trunk = c.beta.clone();
        trunk.extend(ism.forward(&c.beta, &c.eps).0);
        let x = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let other_alpha: Vec<f64> = (0..APPEARANCE_DIM).map(|_| rng.random_range(-5.0..5.0)).collect();
        let (d1, d2) = (random_unit(&mut rng), random_unit(&mut rng));
        let base = sigma_of(&net, x, d1, &trunk, &c.alpha);
        assert_eq!(base.to_bits(), sigma_of(&net, x, d1, &trunk, &other_alpha).to_bits());
        assert_eq!(base.to_bits(), sigma_of(&net, x, d2, &trunk, &c.alpha).to_bits());
    }
}

#[test]
fn appearance_changes_color() {
    let w = small_weights(9);
    let cfg = small_config();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let a = random_codes(&cfg, &mut rng, 1.0);
    let mut b = a.clone();
    b.alpha = random_codes(&cfg, &mut rng, 1.0).alpha;
    let inp = FieldInput::new([0.1, 0.0, 0.2], [0.0, 0.0, 1.0]).unwrap();
    let (oa, ob) = (evaluate_field(&inp, &a, &w).unwrap(), evaluate_field(&inp, &b, &w).unwrap());
    assert_eq!(oa.sigma.to_bits(), ob.sigma.to_bits());
    assert_ne!(oa.color, ob.color);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn outputs_stay_in_range_for_arbitrary_weights(seed in any::<u64>(), gain in 0.1f64..50.0) {
        let mut w = small_weights(seed);
        for t in w.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= gain);
        }
        let cfg = small_config();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x55);
        let c = random_codes(&cfg, &mut rng, 3.0);
        for _ in 0..8 {
            let x = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
            let out = evaluate_field(&FieldInput::new(x, random_unit(&mut rng)).unwrap(), &c, &w).unwrap();
            prop_assert!(out.sigma >= 0.0 && out.sigma.is_finite());
            for v in out.color {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }
    }

    #[test]
    fn modulation_is_affine_in_expression(seed in any::<u64>(), a in -2.0f64..2.0) {
        let w = small_weights(seed % 64);
        let cfg = small_config();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c1 = random_codes(&cfg, &mut rng, 2.0);
        let e2 = random_codes(&cfg, &mut rng, 2.0).eps;
        let mix: Vec<f64> = c1.eps.iter().zip(&e2).map(|(x, y)| a * x + (1.0 - a) * y).collect();
        let lhs = ism_modulate(&c1.beta, &mix, &w).unwrap();
        let m1 = ism_modulate(&c1.beta, &c1.eps, &w).unwrap();
        let m2 = ism_modulate(&c1.beta, &e2, &w).unwrap();
        for i in 0..lhs.len() {
            prop_assert!((lhs[i] - (a * m1[i] + (1.0 - a) * m2[i])).abs() < 1e-8);
        }
    }
}

#[test]
fn field_gradients_match_central_differences() {
    for (seed, level) in [(1u64, Level::Coarse), (2, Level::Fine), (3, Level::Fine)] {
        for c in field_gradient_checks(seed, level) {
            assert!(c.ok(), "{:?} {}: relative error {}, {} skipped at kinks", level, c.name, c.err, c.skipped);
        }
    }
}
