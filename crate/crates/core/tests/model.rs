use mcseg_core::model::{
    build_encoder, load_weights, save_weights, NetConfig, Segmenter, Variant,
};
use mcseg_core::tensor::{AdamState, Shape4, Tensor4};
use mcseg_core::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: Shape4, seed: u64) -> Tensor4<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor4::from_vec(shape, (0..shape.len()).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap()
}

fn toy(variant: Variant) -> NetConfig {
    NetConfig::toy().with_variant(variant)
}

#[test]
fn full_width_encoder_feature_pyramid() {
    let config = NetConfig::default();
    let enc = build_encoder(&config, "encoder_frame").unwrap();
    assert_eq!(enc.channels(), [64, 256, 512, 1024, 2048]);
    let weights = enc.init_weights(0);
    let feats = enc.features(&weights, &random(Shape4::new(1, 3, 224, 224), 1)).unwrap();
    let dims: Vec<(usize, usize)> = feats.iter().map(|f| (f.shape().c, f.shape().h)).collect();
    assert_eq!(dims, vec![(64, 56), (256, 56), (512, 28), (1024, 14), (2048, 7)]);
}

#[test]
fn segmenter_rejects_sizes_not_divisible_by_32() {
    let net = Segmenter::new(toy(Variant::Single), 0).unwrap();
    for (h, w) in [(48, 64), (64, 40), (0, 32)] {
        let err = net.predict(&Tensor4::zeros(Shape4::new(1, 3, h, w)), None).unwrap_err();
        assert!(matches!(err, Error::InvalidInput(_)), "{h}x{w}: {err}");
    }
    let ok = net.predict(&Tensor4::zeros(Shape4::new(1, 3, 64, 96)), None).unwrap();
    assert_eq!(ok.shape(), Shape4::new(1, 2, 64, 96));
}

#[test]
fn eval_forward_is_deterministic() {
    let net = Segmenter::new(toy(Variant::DualDiff), 3).unwrap();
    let frame = random(Shape4::new(2, 3, 32, 32), 4);
    let cue = random(Shape4::new(2, 3, 32, 32), 5);
    let a = net.predict(&frame, Some(&cue)).unwrap();
    let b = net.predict(&frame, Some(&cue)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn eval_output_follows_batch_permutation() {
    let net = Segmenter::new(toy(Variant::DualDiff), 1).unwrap();
    let frames: Vec<Tensor4<f32>> = (0..3).map(|i| random(Shape4::new(1, 3, 32, 32), 10 + i)).collect();
    let cues: Vec<Tensor4<f32>> = (0..3).map(|i| random(Shape4::new(1, 3, 32, 32), 20 + i)).collect();
    let order = [2, 0, 1];
    let stack = |items: &[Tensor4<f32>], idx: &[usize]| {
        Tensor4::stack(&idx.iter().map(|&i| items[i].clone()).collect::<Vec<_>>()).unwrap()
    };
    let base = net.predict(&stack(&frames, &[0, 1, 2]), Some(&stack(&cues, &[0, 1, 2]))).unwrap();
    let perm = net.predict(&stack(&frames, &order), Some(&stack(&cues, &order))).unwrap();
    for (pos, &src) in order.iter().enumerate() {
        assert_eq!(perm.item(pos), base.item(src));
    }
}

#[test]
fn one_small_step_lowers_the_loss() {
    let frame = random(Shape4::new(2, 3, 32, 32), 7);
    let cue = random(Shape4::new(2, 3, 32, 32), 8);
    let mask: Vec<u8> = (0..2 * 32 * 32).map(|i| u8::from((i % 32) < 12)).collect();
    for seed in 0..5 {
        let mut net = Segmenter::new(toy(Variant::DualDiff), seed).unwrap();
        let mut adam = AdamState::new(1e-3);
        let before = net.train_step(&frame, Some(&cue), &mask, &mut adam).unwrap();
        let after = net.train_step(&frame, Some(&cue), &mask, &mut adam).unwrap();
        assert!(after < before, "seed {seed}: {before} -> {after}");
    }
}

#[test]
fn checkpoint_round_trip_restores_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.mcsegw");
    let mut net = Segmenter::new(toy(Variant::Single), 2).unwrap();
    let frame = random(Shape4::new(1, 3, 32, 32), 9);
    let mask = vec![1u8; 32 * 32];
    net.train_step(&frame, None, &mask, &mut AdamState::new(1e-3)).unwrap();
    save_weights(net.config(), net.weights(), &path).unwrap();
    let (config, weights) = load_weights(&path).unwrap();
    let restored = Segmenter::from_weights(config, weights).unwrap();
    assert_eq!(restored.predict(&frame, None).unwrap(), net.predict(&frame, None).unwrap());
}

#[test]
fn weights_do_not_cross_variants() {
    let dual = Segmenter::new(toy(Variant::DualDiff), 0).unwrap();
    let err = Segmenter::from_weights(toy(Variant::Single), dual.weights().clone()).unwrap_err();
    assert!(err.to_string().contains("single"), "{err}");
    // Both dual variants share one architecture.
    assert!(Segmenter::from_weights(toy(Variant::DualFlow), dual.weights().clone()).is_ok());
}
