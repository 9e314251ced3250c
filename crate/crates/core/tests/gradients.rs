use mcseg_core::tensor::check::check_gradients;
use mcseg_core::tensor::{BnMode, Graph, RunningStats, Shape4, Tensor4, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rng: &mut ChaCha8Rng, shape: Shape4) -> Tensor4<f64> {
    Tensor4::from_vec(shape, (0..shape.len()).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

#[test]
fn decoder_stage_chain() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let inputs = vec![
        random(&mut rng, Shape4::new(2, 2, 4, 4)),
        random(&mut rng, Shape4::new(3, 2, 3, 3)),
        random(&mut rng, Shape4::new(1, 3, 1, 1)),
        random(&mut rng, Shape4::new(1, 3, 1, 1)),
        random(&mut rng, Shape4::new(2, 1, 8, 8)),
        random(&mut rng, Shape4::new(2, 4, 1, 1)),
        random(&mut rng, Shape4::new(1, 2, 1, 1)),
    ];
    let labels: Vec<u8> = (0..2 * 8 * 8).map(|i| u8::from(i % 3 == 0)).collect();
    let build = |g: &mut Graph<f64>, v: &[Var]| {
        let x = g.conv2d(v[0], v[1], None, 1, 1)?;
        let mut stats = RunningStats::new(3);
        let x = g.batchnorm2d(x, v[2], v[3], BnMode::Train(&mut stats))?;
        let x = g.upsample_bilinear2x(x);
        let x = g.concat_channels(x, v[4])?;
        let head = g.conv2d(x, v[5], Some(v[6]), 1, 0)?;
        g.softmax_cross_entropy(head, &labels, None)
    };
    let report = check_gradients(&inputs, &[1.0], 1e-6, build).unwrap();
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}

#[test]
fn residual_branch_with_slice() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let inputs = vec![
        random(&mut rng, Shape4::new(1, 4, 6, 6)),
        random(&mut rng, Shape4::new(2, 4, 3, 3)),
    ];
    let proj: Vec<f64> = (0..2 * 3 * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
    let build = |g: &mut Graph<f64>, v: &[Var]| {
        let branch = g.conv2d(v[0], v[1], None, 2, 1)?;
        let skip = g.slice_channels(v[0], 1, 2)?;
        let skip = g.maxpool2d(skip, 1, 2, 0)?;
        g.add(branch, skip)
    };
    let report = check_gradients(&inputs, &proj, 1e-6, build).unwrap();
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}
