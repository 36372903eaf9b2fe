mod common;

use common::{max_rel_diff, naive_conv2d, naive_dense, naive_depthwise};
use hmgc::tensorcore::{conv_out_extent, BnMode, ConvAlgo, RunningStats, Tape, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn conv2d_matches_loop_nest(
        seed in any::<u64>(),
        n in 1usize..3, cin in 1usize..4, cout in 1usize..4,
        h in 1usize..7, k in prop::sample::select(vec![1usize, 3, 5]), stride in 1usize..3,
        direct in any::<bool>(),
    ) {
        let pad = k / 2;
        prop_assume!(h + 2 * pad >= k);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = rand_vec(&mut rng, n * cin * h * h);
        let w = rand_vec(&mut rng, cout * cin * k * k);
        let (expect, shape) = naive_conv2d(&x, [n, cin, h, h], &w, [cout, cin, k, k], stride, pad);
        let algo = if direct { ConvAlgo::Direct } else { ConvAlgo::Im2col };
        let mut tape = Tape::<f64>::new().with_conv_algo(algo);
        let xv = tape.leaf(Tensor::new(vec![n, cin, h, h], x).unwrap(), false);
        let wv = tape.leaf(Tensor::new(vec![cout, cin, k, k], w).unwrap(), false);
        let y = tape.conv2d(xv, wv, stride, pad).unwrap();
        prop_assert_eq!(tape.value(y).shape(), &shape[..]);
        prop_assert!(max_rel_diff(tape.value(y).data(), &expect, 1.0) < 1e-12);
    }

    #[test]
    fn depthwise_matches_loop_nest(
        seed in any::<u64>(), n in 1usize..3, c in 1usize..5, h in 1usize..8,
        k in prop::sample::select(vec![1usize, 3, 5]), stride in 1usize..3,
    ) {
        let pad = k / 2;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = rand_vec(&mut rng, n * c * h * h);
        let w = rand_vec(&mut rng, c * k * k);
        let (expect, shape) = naive_depthwise(&x, [n, c, h, h], &w, k, stride, pad);
        let mut tape = Tape::<f64>::new();
        let xv = tape.leaf(Tensor::new(vec![n, c, h, h], x).unwrap(), false);
        let wv = tape.leaf(Tensor::new(vec![c, 1, k, k], w).unwrap(), false);
        let y = tape.depthwise_conv2d(xv, wv, stride, pad).unwrap();
        prop_assert_eq!(tape.value(y).shape(), &shape[..]);
        prop_assert!(max_rel_diff(tape.value(y).data(), &expect, 1.0) < 1e-12);
    }

    #[test]
    fn dense_matches_loop_nest(seed in any::<u64>(), n in 1usize..5, f in 1usize..9, g in 1usize..7, bias in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = rand_vec(&mut rng, n * f);
        let w = rand_vec(&mut rng, g * f);
        let b = rand_vec(&mut rng, g);
        let expect = naive_dense(&x, n, f, &w, g, bias.then_some(&b[..]));
        let mut tape = Tape::<f64>::new();
        let xv = tape.leaf(Tensor::new(vec![n, f], x).unwrap(), false);
        let wv = tape.leaf(Tensor::new(vec![g, f], w).unwrap(), false);
        let bv = tape.leaf(Tensor::new(vec![g], b).unwrap(), false);
        let y = tape.dense(xv, wv, bias.then_some(bv)).unwrap();
        prop_assert!(max_rel_diff(tape.value(y).data(), &expect, 1.0) < 1e-12);
    }

    #[test]
    fn conv_extent_is_floor(h in 1usize..300, k in prop::sample::select(vec![1usize, 3, 5]), s in 1usize..4) {
        let p = k / 2;
        let expect = (h + 2 * p - k) / s + 1;
        prop_assert_eq!(conv_out_extent(h, k, s, p).unwrap(), expect);
    }
}

#[test]
fn every_primitive_passes_finite_differences() {
    for seed in 0..4 {
        for s in common::grad::scenarios(seed).unwrap() {
            assert!(s.report.checked > 0, "{}: every coordinate excluded", s.name);
            assert!(
                s.report.max_rel_error < s.tolerance,
                "seed {seed} {}: rel error {:.3e} >= {:.0e}",
                s.name,
                s.report.max_rel_error,
                s.tolerance
            );
        }
    }
}

#[test]
fn batchnorm_updates_running_stats() {
    // mean 2.5 and unbiased var 5/3 for one channel holding 1..=4
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(Tensor::new(vec![4, 1, 1, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap(), false);
    let g = tape.leaf(Tensor::full(&[1], 1.0), false);
    let b = tape.leaf(Tensor::zeros(&[1]), false);
    let mut stats = RunningStats::new(1);
    tape.batchnorm2d(x, g, b, &mut stats, BnMode::Train).unwrap();
    assert!((stats.mean[0] - 0.25).abs() < 1e-12);
    assert!((stats.var[0] - (0.9 + 0.1 * 5.0 / 3.0)).abs() < 1e-12);
}

#[test]
fn batchnorm_eval_uses_running_stats() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(Tensor::new(vec![1, 1, 1, 2], vec![3.0, 5.0]).unwrap(), false);
    let g = tape.leaf(Tensor::full(&[1], 2.0), false);
    let b = tape.leaf(Tensor::full(&[1], 1.0), false);
    let mut stats = RunningStats { mean: vec![1.0], var: vec![4.0] };
    let y = tape.batchnorm2d(x, g, b, &mut stats, BnMode::Eval).unwrap();
    let d = (4.0f64 + 1e-5).sqrt();
    let expect = [1.0 + 2.0 * 2.0 / d, 1.0 + 2.0 * 4.0 / d];
    assert!(max_rel_diff(tape.value(y).data(), &expect, 1.0) < 1e-12);
    assert_eq!(stats.mean, vec![1.0]);
}

#[test]
fn softmax_cross_entropy_uniform_is_ln_k() {
    let mut tape = Tape::<f64>::new();
    let l = tape.leaf(Tensor::zeros(&[3, 16]), true);
    let (loss, probs) = tape.softmax_cross_entropy(l, &[0, 5, 15]).unwrap();
    assert!((tape.value(loss).data()[0] - 16f64.ln()).abs() < 1e-12);
    assert!(probs.data().iter().all(|p| (p - 1.0 / 16.0).abs() < 1e-15));
}

#[test]
fn backward_requires_scalar_loss() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(Tensor::zeros(&[2, 2]), true);
    let y = tape.relu(x).unwrap();
    assert!(tape.backward(y).is_err());
}

#[test]
fn non_finite_values_are_rejected() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(Tensor::full(&[1, 2], 1e300), true);
    assert!(tape.scale(x, 1e300).is_err());
}

#[test]
fn shape_errors_name_the_op() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(Tensor::zeros(&[1, 2, 4, 4]), false);
    let w = tape.leaf(Tensor::zeros(&[3, 5, 3, 3]), false);
    let err = tape.conv2d(x, w, 1, 1).unwrap_err().to_string();
    assert!(err.contains("conv2d"), "{err}");
}
