mod common;

use common::*;
use facefield::train::{loss, TrainConfig, Trainer};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn loss_examples() {
    let g = [[0.2, 0.4, 0.6]];
    assert_eq!(loss(&g, &g, &g).unwrap(), 0.0);
    assert_eq!(loss(&[[1.0; 3]], &[[1.0; 3]], &[[0.0; 3]]).unwrap(), 6.0);
    assert!(loss(&[[0.0; 3]], &[], &[[0.0; 3]]).is_err());
}

proptest! {
    #[test]
    fn loss_matches_scalar_loop(seed in any::<u64>(), n in 1usize..50) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = || (0..n).map(|_| [rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()]).collect::<Vec<_>>();
        let (pc, pf, gt) = (draw(), draw(), draw());
        let mut total = 0.0;
        for i in 0..n {
            for k in 0..3 {
                total += (pc[i][k] - gt[i][k]) * (pc[i][k] - gt[i][k]);
                total += (pf[i][k] - gt[i][k]) * (pf[i][k] - gt[i][k]);
            }
        }
        let got = loss(&pc, &pf, &gt).unwrap();
        prop_assert!(got >= 0.0);
        prop_assert!((got - total / n as f64).abs() < 1e-10);
    }
}

#[test]
fn learning_rate_decays_geometrically_between_endpoints() {
    let cfg = TrainConfig { total_iters: 1000, ..Default::default() };
    assert!((cfg.lr_at(0) - 5e-4).abs() < 1e-15);
    assert!((cfg.lr_at(1000) - 2e-5).abs() < 1e-15);
    let mid = (5e-4f64 * 2e-5).sqrt();
    assert!((cfg.lr_at(500) - mid).abs() < 1e-12);
}

#[test]
fn identical_seeds_give_identical_weights() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tiny_dataset(tmp.path());
    let run = || {
        let mut t = Trainer::new(&data, tiny_train_config()).unwrap();
        let m: Vec<f64> = (0..3).map(|_| t.step().unwrap().loss).collect();
        (m, t.into_state())
    };
    let (la, a) = run();
    let (lb, b) = run();
    assert_eq!(la, lb);
    assert_eq!(a.weights, b.weights);
    assert_eq!(a.bank, b.bank);
}

#[test]
fn shape_codes_stay_frozen_and_absent_expressions_stay_put() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tiny_dataset(tmp.path());
    let mut t = Trainer::new(&data, tiny_train_config()).unwrap();
    let shape0 = t.state.bank.shape.clone();
    for s in &data.subjects {
        let expect: Vec<f32> = s.shape_factors.iter().map(|v| *v as f32).collect();
        assert_eq!(shape0[s.id], expect);
    }
    for _ in 0..8 {
        let before = t.state.bank.expression.clone();
        let m = t.step().unwrap();
        assert_eq!(m.grad_norms.shape, 0.0);
        assert!(m.grad_norms.expression > 0.0);
        assert_eq!(t.state.bank.shape, shape0);
        for (e, code) in t.state.bank.expression.iter().enumerate() {
            if e != m.expression {
                assert_eq!(code, &before[e]);
            }
        }
        assert_ne!(t.state.bank.expression[m.expression], before[m.expression]);
    }
}

#[test]
fn deterministic_replay_reproduces_logged_loss() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tiny_dataset(tmp.path());
    let cfg = TrainConfig { jitter: false, tem_stochastic: false, ..tiny_train_config() };
    let mut t = Trainer::new(&data, cfg).unwrap();
    for _ in 0..5 {
        let before = t.state.clone();
        let m = t.step().unwrap();
        let frozen = Trainer::with_state(&data, before).unwrap();
        let replay = frozen.batch_loss(&frozen.state.weights, m.sample, &m.pixels).unwrap();
        assert!((replay - m.loss).abs() < 1e-6, "{replay} vs {}", m.loss);
    }
}

#[test]
fn loss_drops_over_a_short_run() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tiny_dataset(tmp.path());
    let cfg = TrainConfig { total_iters: 600, lr_start: 2e-3, lr_end: 2e-4, ..tiny_train_config() };
    let mut t = Trainer::new(&data, cfg).unwrap();
    let losses: Vec<f64> = (0..600).map(|_| t.step().unwrap().loss).collect();
    let first = losses[..100].iter().sum::<f64>() / 100.0;
    let last = losses[500..].iter().sum::<f64>() / 100.0;
    assert!(last < 0.5 * first, "{first} -> {last}");
}

#[test]
fn mismatched_shape_dim_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tiny_dataset(tmp.path());
    let mut cfg = tiny_train_config();
    cfg.field.shape_dim = 7;
    assert!(matches!(Trainer::new(&data, cfg), Err(facefield::Error::Config(_))));
}
