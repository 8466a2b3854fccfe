mod common;

use common::*;
use macnn::tensor::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

proptest! {
    #[test]
    fn softmax_sums_to_one_and_ignores_shifts(a in -50.0f64..50.0, b in -50.0f64..50.0, shift in -100.0f64..100.0) {
        let p = softmax2(&Tensor::from_vec(vec![a, b])).unwrap();
        prop_assert!((p.data()[0] + p.data()[1] - 1.0).abs() <= 1e-12);
        let q = softmax2(&Tensor::from_vec(vec![a + shift, b + shift])).unwrap();
        for (x, y) in p.data().iter().zip(q.data()) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn conv_matches_loop_oracle_and_grad_shapes_follow_inputs(
        seed in any::<u64>(),
        c_in in 1usize..4,
        c_out in 1usize..4,
        h in 3usize..12,
        w in 3usize..12,
        k in 1usize..4,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let input = random_tensor(&mut rng, &[c_in, h, w]);
        let kernels = random_tensor(&mut rng, &[c_out, c_in, k, k]);
        let bias = random_tensor(&mut rng, &[c_out]);
        let out = conv2d_forward(&input, &kernels, &bias).unwrap();
        prop_assert_eq!(out.shape(), &[c_out, h - k + 1, w - k + 1]);
        for (a, b) in out.data().iter().zip(conv_oracle(&input, &kernels, &bias)) {
            prop_assert!((a - b).abs() < 1e-9);
        }
        let d_out = random_tensor(&mut rng, out.shape());
        let g = conv2d_backward(&input, &kernels, &d_out).unwrap();
        prop_assert_eq!(g.d_input.shape(), input.shape());
        prop_assert_eq!(g.d_params[0].shape(), kernels.shape());
        prop_assert_eq!(g.d_params[1].shape(), bias.shape());
        prop_assert!(g.d_input.all_finite());
    }

    #[test]
    fn pool_and_dense_gradients_have_input_shapes(seed in any::<u64>(), c in 1usize..4, h in 2usize..9, w in 2usize..9, n_out in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_tensor(&mut rng, &[c, h, w]);
        let (y, idx) = maxpool2_forward(&x).unwrap();
        prop_assert_eq!(y.shape(), &[c, h / 2, w / 2]);
        let g = maxpool2_backward(&idx, &random_tensor(&mut rng, y.shape())).unwrap();
        prop_assert_eq!(g.d_input.shape(), x.shape());

        let v = random_tensor(&mut rng, &[c * h * w]);
        let wts = random_tensor(&mut rng, &[n_out, c * h * w]);
        let b = random_tensor(&mut rng, &[n_out]);
        let out = fully_connected_forward(&v, &wts, &b).unwrap();
        let g = fully_connected_backward(&v, &wts, &random_tensor(&mut rng, out.shape())).unwrap();
        prop_assert_eq!(g.d_input.shape(), v.shape());
        prop_assert_eq!(g.d_params[0].shape(), wts.shape());
        prop_assert_eq!(g.d_params[1].shape(), b.shape());
    }
}

#[test]
fn dropout_is_deterministic_for_a_fixed_rng_state() {
    let x = random_tensor(&mut ChaCha8Rng::seed_from_u64(1), &[4, 8, 8]);
    let run = || dropout(&x, 0.25, &mut ChaCha8Rng::seed_from_u64(9), true).unwrap().0;
    assert_eq!(run(), run());
}

#[test]
fn bce_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..200 {
        let p = rand::Rng::random_range(&mut rng, 0.01..0.99);
        let t = if rand::Rng::random_bool(&mut rng, 0.5) { 1.0 } else { 0.0 };
        let (_, d) = bce_loss(p, t).unwrap();
        let f = |x: &[f64]| bce_loss(x[0], t).unwrap().0;
        assert!(fd_worst(f, &[p], &[d], 1e-4) < 1e-3);
    }
}
