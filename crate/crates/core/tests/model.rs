use laglm::distribution::{constrain, weighted_nll};
use laglm::featurize::LagSet;
use laglm::model::{rmsnorm, Checkpoint, Model, ModelConfig, TrainingMeta};
use laglm_tensor::{rope_vector, Graph, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn config(layers: usize, heads: usize, dim_per_head: usize, context: usize) -> ModelConfig {
    ModelConfig {
        n_layers: layers,
        n_heads: heads,
        dim_per_head,
        context_length: context,
        lag_set: LagSet::new(vec![1, 2, 3]).unwrap(),
        ..ModelConfig::table4_optimal()
    }
}

fn random_features(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()
}

/// Replaces the small initial weights with larger random ones so that every
/// gradient is well above finite-difference noise.
fn roughen(model: &Model, seed: u64) -> Model {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = model.params().to_vec();
    for p in &mut params {
        for v in p.data_mut() {
            *v += rng.random_range(-0.4..0.4);
        }
    }
    Model::from_params(model.config().clone(), params).unwrap()
}

#[test]
fn optimal_config_runs_forward() {
    let cfg = ModelConfig::table4_optimal();
    let m = Model::init(cfg.clone(), 0).unwrap();
    assert_eq!(m.num_params(), cfg.analytic_param_count());
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random_features(&mut rng, 32 * cfg.token_dim());
    let out = m.forward_sequence(&x, 32).unwrap();
    assert_eq!(out.len(), 32);
    assert!(out.iter().flatten().all(|v| v.is_finite()));
}

#[test]
fn causal_for_every_layer_count() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for layers in 1..=9 {
        let m = roughen(&Model::init(config(layers, 2, 4, 8), layers as u64).unwrap(), 9);
        let din = m.config().token_dim();
        let x = random_features(&mut rng, 8 * din);
        let base = m.forward_sequence(&x, 8).unwrap();
        for t0 in [1, 4, 7] {
            let mut y = x.clone();
            for v in &mut y[t0 * din..] {
                *v += 3.0;
            }
            let out = m.forward_sequence(&y, 8).unwrap();
            assert_eq!(&out[..t0], &base[..t0], "layers={layers} t0={t0}");
            assert_ne!(out[t0], base[t0]);
        }
    }
}

#[test]
fn forward_is_deterministic() {
    let m = Model::init(config(2, 2, 4, 8), 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random_features(&mut rng, 8 * m.config().token_dim());
    assert_eq!(m.forward_sequence(&x, 8).unwrap(), m.forward_sequence(&x, 8).unwrap());
}

#[test]
fn kv_cache_matches_full_forward() {
    let m = roughen(&Model::init(config(3, 3, 4, 16), 6).unwrap(), 7);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = random_features(&mut rng, 16 * m.config().token_dim());
    let full = m.forward_sequence(&x, 16).unwrap();
    let cached = m.forward_cached(&x, 16).unwrap();
    let err = full
        .iter()
        .flatten()
        .zip(cached.iter().flatten())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(err < 1e-8, "max deviation {err}");
}

#[test]
fn rope_relative_positions() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let q = random_features(&mut rng, 16);
    let k = random_features(&mut rng, 16);
    let dot = |m: usize, n: usize| -> f64 {
        rope_vector(&q, m, 1e4)
            .iter()
            .zip(rope_vector(&k, n, 1e4))
            .map(|(a, b)| a * b)
            .sum()
    };
    assert!((dot(5, 2) - dot(10, 7)).abs() < 1e-9);
    assert_eq!(rope_vector(&q, 0, 1e4), q);
}

#[test]
fn odd_head_dim_is_a_config_error() {
    assert!(Model::init(config(1, 2, 3, 8), 0).is_err());
}

#[test]
fn end_to_end_gradient_check() {
    let m = roughen(&Model::init(config(2, 2, 4, 8), 11).unwrap(), 12);
    assert_eq!(m.config().hidden_dim(), 8);
    let din = m.config().token_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let x = random_features(&mut rng, 8 * din);
    let ys = random_features(&mut rng, 8);

    let loss_of = |model: &Model| -> f64 {
        model
            .forward_sequence(&x, 8)
            .unwrap()
            .iter()
            .zip(&ys)
            .map(|(r, &y)| constrain(*r).nll(y))
            .sum()
    };

    let g = Graph::new();
    let params = m.bind(&g);
    let inputs = g.constant(Tensor::new([1, 8, din], x.clone()).unwrap());
    let raw = m.forward(&g, &params, inputs, None).unwrap().reshape(&[8, 3]).unwrap();
    let loss = weighted_nll(&g, raw, &ys, &[1.0; 8]).unwrap();
    assert!((loss.value().item() - loss_of(&m)).abs() < 1e-10);
    let grads = g.backward(loss).unwrap();

    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for (pi, p) in params.iter().enumerate() {
        let analytic = grads.get(*p).unwrap().data().to_vec();
        for i in 0..analytic.len() {
            let shifted = |delta: f64| {
                let mut ps = m.params().to_vec();
                ps[pi].data_mut()[i] += delta;
                loss_of(&Model::from_params(m.config().clone(), ps).unwrap())
            };
            let fd = (shifted(h) - shifted(-h)) / (2.0 * h);
            let err = (analytic[i] - fd).abs() / analytic[i].abs().max(fd.abs()).max(1e-3);
            worst = worst.max(err);
        }
    }
    assert!(worst < 1e-4, "max relative error {worst}");
}

#[test]
fn checkpoint_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck").join("model.lglm");
    let ck = Checkpoint {
        model: Model::init(config(2, 2, 4, 8), 14).unwrap(),
        training: TrainingMeta {
            mode: "pretrain".into(),
            seed: 14,
            epochs_run: 3,
            best_epoch: 2,
            best_val_loss: Some(1.5),
            datasets: vec!["a".into()],
        },
    };
    ck.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back.training, ck.training);
    assert_eq!(back.model, Checkpoint::round_trip_model(&ck.model).unwrap());
    assert_eq!(&std::fs::read(&path).unwrap()[..4], b"LGLM");
}

proptest! {
    #[test]
    fn rope_preserves_norm(x in prop::collection::vec(-10.0f64..10.0, 8), pos in 0usize..5000) {
        let n0: f64 = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let n1: f64 = rope_vector(&x, pos, 1e4).iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assert!((n0 - n1).abs() < 1e-10);
    }

    #[test]
    fn rmsnorm_unit_rms_and_scale_invariant(
        x in prop::collection::vec(-10.0f64..10.0, 8),
        gain in prop::collection::vec(0.5f64..2.0, 8),
        c in 1.0f64..100.0,
    ) {
        // ε = 1e-5 perturbs the result by about ε / (2·mean(x²)); rms ≥ 3
        // keeps that under 1e-6.
        let ms: f64 = x.iter().map(|v| v * v).sum::<f64>() / 8.0;
        prop_assume!(ms >= 9.0);
        let y = rmsnorm(&x, &gain);
        let unscaled: Vec<f64> = y.iter().zip(&gain).map(|(a, g)| a / g).collect();
        let rms = (unscaled.iter().map(|v| v * v).sum::<f64>() / 8.0).sqrt();
        prop_assert!((rms - 1.0).abs() < 1e-6);
        let cx: Vec<f64> = x.iter().map(|v| v * c).collect();
        let ycx = rmsnorm(&cx, &gain);
        for (a, b) in y.iter().zip(&ycx) {
            prop_assert!((a - b).abs() < 1e-6 * a.abs().max(1.0));
        }
    }
}
