use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rwkv_ts::block::Mode;
use rwkv_ts::commands::{cmd_grad_check, random_trial_config};
use rwkv_ts::model::{Model, ModelConfig};
use rwkv_ts::numeric::{Matrix, OpKind, Precision};
use rwkv_ts::Error;

fn config(channels_seed: u64) -> ModelConfig {
    ModelConfig {
        input_len: 48,
        horizon: 12,
        patch_len: 8,
        stride: 4,
        d_model: 16,
        n_heads: 2,
        n_layers: 2,
        precision: Precision::F64,
        seed: channels_seed,
        ..ModelConfig::default()
    }
}

fn window(rng: &mut ChaCha8Rng, len: usize, channels: usize) -> Matrix<f64> {
    let data = (0..len * channels)
        .map(|i| (i as f64 * 0.21).sin() * 3.0 + rng.random_range(-1.0..1.0))
        .collect();
    Matrix::from_vec(len, channels, data).unwrap()
}

#[test]
fn output_shape_is_batch_horizon_channels() {
    let m = Model::<f64>::init_randomized(&config(1), 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let w: Vec<Matrix<f64>> = (0..3).map(|_| window(&mut rng, 48, 5)).collect();
    let refs: Vec<&Matrix<f64>> = w.iter().collect();
    let out = m.forward(&refs).unwrap();
    assert_eq!(out.len(), 3);
    assert!(out.iter().all(|o| o.shape() == (12, 5)));
    let short = Matrix::<f64>::zeros(40, 5);
    assert!(matches!(m.forward(&[&short]), Err(Error::Shape { .. })));
    let mut bad = w[0].clone();
    bad.set(3, 2, f64::NAN);
    assert!(m.forward(&[&bad]).is_err());
}

#[test]
fn channel_permutation_commutes() {
    let m = Model::<f64>::init_randomized(&config(2), 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = window(&mut rng, 48, 4);
    let perm = [2, 0, 3, 1];
    let mut px = Matrix::zeros(48, 4);
    for t in 0..48 {
        for (c, &src) in perm.iter().enumerate() {
            px.set(t, c, x.get(t, src));
        }
    }
    let y = m.forward(&[&x]).unwrap().remove(0);
    let py = m.forward(&[&px]).unwrap().remove(0);
    for t in 0..12 {
        for (c, &src) in perm.iter().enumerate() {
            assert_eq!(py.get(t, c), y.get(t, src));
        }
    }
}

#[test]
fn affine_maps_of_a_channel_pass_through() {
    let m = Model::<f64>::init_randomized(&config(3), 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..20 {
        let x = window(&mut rng, 48, 2);
        let a = rng.random_range(0.5..20.0);
        let b = rng.random_range(-50.0..50.0);
        let mut ax = x.clone();
        for t in 0..48 {
            ax.set(t, 1, a * x.get(t, 1) + b);
        }
        let y = m.forward(&[&x]).unwrap().remove(0);
        let ay = m.forward(&[&ax]).unwrap().remove(0);
        for t in 0..12 {
            assert_eq!(ay.get(t, 0), y.get(t, 0));
            let expect = a * y.get(t, 1) + b;
            assert!((ay.get(t, 1) - expect).abs() < 1e-6 * (1.0 + expect.abs()), "{} vs {expect}", ay.get(t, 1));
        }
    }
}

#[test]
fn streaming_matches_parallel() {
    for seed in 0..10 {
        let cfg = random_trial_config(seed, Precision::F64);
        let m = Model::<f64>::init_randomized(&cfg, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = window(&mut rng, cfg.input_len, 2);
        let par = m.forward_with_mode(&[&x], Mode::Parallel).unwrap();
        let rec = m.forward_with_mode(&[&x], Mode::Recurrent).unwrap();
        assert!(par[0].max_abs_diff(&rec[0]).unwrap() < 1e-9);

        let m32: Model<f32> = m.cast();
        let x32 = x.cast::<f32>();
        let par = m32.forward_with_mode(&[&x32], Mode::Parallel).unwrap();
        let rec = m32.forward_with_mode(&[&x32], Mode::Recurrent).unwrap();
        assert!(par[0].max_abs_diff(&rec[0]).unwrap() < 1e-4);
    }
}

#[test]
fn streaming_tokens_match_backbone() {
    let cfg = config(4);
    let m = Model::<f64>::init_randomized(&cfg, 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = window(&mut rng, 48, 1);
    let batch = m.prepare(&[&x]).unwrap();
    let mut tape = rwkv_ts::numeric::Tape::new();
    let vars = m.params.to_tape(&mut tape);
    let n = cfg.n_patches();
    let tokens = m.encode_tape(&mut tape, &vars, batch.patches.clone(), n).unwrap();
    let mut state = m.start_stream(batch.stats[0]);
    let raw = rwkv_ts::preprocessing::make_patches(x.as_slice(), cfg.patch_len, cfg.stride).unwrap();
    for i in 0..n {
        let tok = m.forward_streaming(&mut state, raw.patches.row(i)).unwrap();
        let want = tape.value(tokens).row(i);
        for (a, b) in tok.iter().zip(want) {
            assert!((a - b).abs() < 1e-10);
        }
    }
    assert_eq!(state.consumed, n);
}

#[test]
fn untrained_model_forecasts_the_window_mean() {
    let m = Model::<f64>::init(&config(5), 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = window(&mut rng, 48, 3);
    for mode in [Mode::Parallel, Mode::Recurrent] {
        let y = m.forward_with_mode(&[&x], mode).unwrap().remove(0);
        for c in 0..3 {
            let mean = (0..48).map(|t| x.get(t, c)).sum::<f64>() / 48.0;
            for t in 0..12 {
                assert!((y.get(t, c) - mean).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn parameter_count_structure() {
    let count = |d: usize, layers: usize| {
        let mut c = config(0);
        c.d_model = d;
        c.n_layers = layers;
        Model::<f32>::init(&c, 0).unwrap().count_parameters()
    };
    let (one, two, three) = (count(16, 1), count(16, 2), count(16, 3));
    assert_eq!(three - two, two - one);
    assert!(count(32, 2) > 2 * count(16, 2));
    let default = Model::<f32>::init(&ModelConfig::default(), 0).unwrap().count_parameters();
    assert!((100_000..10_000_000).contains(&default), "{default}");
}

#[test]
fn full_model_gradients() {
    for seed in 0..3 {
        let r = cmd_grad_check(seed, None).unwrap();
        assert!(r.passed, "seed {seed}: {} at {}", r.max_rel_error, r.worst_group);
    }
}

#[test]
fn gradient_check_catches_broken_rules() {
    for kind in [OpKind::Wkv, OpKind::GroupNorm, OpKind::TokenShift, OpKind::MatMul, OpKind::Mse] {
        let r = cmd_grad_check(0, Some(kind)).unwrap();
        assert!(!r.passed, "{kind:?} corruption went unnoticed");
        assert!(r.max_rel_error > 1e-2);
    }
}
