use super::*;
use crate::autodiff::finite_difference_check_many;
use approx::assert_abs_diff_eq;
use ndarray::{array, Array2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
    Array2::from_shape_fn((r, c), |_| rng.gen_range(-1.0..1.0))
}

struct Setup {
    tape: Tape,
    state: LevelState,
    kernel: DiagConvKernel,
}

fn setup(
    rng: &mut ChaCha8Rng,
    n: usize,
    in_e: usize,
    in_n: usize,
    k: usize,
    out: usize,
) -> (
    Setup,
    Vec<Array2<f64>>,
    Array2<f64>,
    Array2<f64>,
    Array2<f64>,
) {
    let es: Vec<_> = (0..in_e).map(|_| rand_mat(rng, n, n)).collect();
    let h = rand_mat(rng, n, in_n);
    let (wr, wc) = diag_kernel_shape(in_e, in_n, k, out);
    let w = rand_mat(rng, wr, wc);
    let b = rand_mat(rng, 1, out);
    let mut tape = Tape::new();
    let hv = tape.var(h.clone());
    let ev: Vec<_> = es.iter().map(|e| tape.var(e.clone())).collect();
    let state = LevelState::new(&tape, hv, ev).unwrap();
    let kernel = DiagConvKernel {
        w: tape.var(w.clone()),
        b: tape.var(b.clone()),
    };
    (
        Setup {
            tape,
            state,
            kernel,
        },
        es,
        h,
        w,
        b,
    )
}

/// Direct evaluation of the windowed sums, no unfolding.
fn conv_oracle(
    es: &[Array2<f64>],
    h: &Array2<f64>,
    w: &Array2<f64>,
    b: &Array2<f64>,
    k: usize,
    s: usize,
) -> Array2<f64> {
    let n = h.nrows();
    let d = h.ncols();
    let n_out = (n - k) / s + 1;
    let out_c = w.ncols();
    let mut out = Array2::zeros((n_out, out_c));
    for j in 0..n_out {
        let i = s * j;
        for o in 0..out_c {
            let mut acc = b[[0, o]];
            for (c, e) in es.iter().enumerate() {
                for p in 0..k {
                    for q in 0..k {
                        acc += w[[c * k * k + p * k + q, o]] * e[[i + p, i + q]];
                    }
                }
            }
            for p in 0..k {
                for t in 0..d {
                    acc += w[[es.len() * k * k + p * d + t, o]] * h[[i + p, t]];
                }
            }
            out[[j, o]] = acc;
        }
    }
    out
}

#[test]
fn length_example_n10_k3_s2() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut su, ..) = setup(&mut rng, 10, 1, 2, 3, 4);
    let y = diagonal_conv(&mut su.tape, &su.state, &su.kernel, 3, 2).unwrap();
    assert_eq!(su.tape.shape(y), (4, 4));
    assert_eq!(output_len(10, 3, 2), 4);
}

#[test]
fn node_only_averaging_kernel_gives_window_means() {
    let h = array![[1.0], [2.0], [4.0], [8.0], [16.0]];
    let mut t = Tape::new();
    let hv = t.constant(h);
    let e = t.constant(Array2::from_elem((5, 5), 3.0));
    let state = LevelState::new(&t, hv, vec![e]).unwrap();
    let mut w = Array2::zeros(diag_kernel_shape(1, 1, 2, 1));
    w[[4, 0]] = 0.5;
    w[[5, 0]] = 0.5;
    let kernel = DiagConvKernel {
        w: t.constant(w),
        b: t.constant(Array2::zeros((1, 1))),
    };
    let y = diagonal_conv(&mut t, &state, &kernel, 2, 1).unwrap();
    assert_eq!(t.value(y), &array![[1.5], [3.0], [6.0], [12.0]]);
}

#[test]
fn single_window_covers_everything() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut su, es, h, w, b) = setup(&mut rng, 4, 1, 3, 4, 2);
    let y = diagonal_conv(&mut su.tape, &su.state, &su.kernel, 4, 1).unwrap();
    assert_eq!(su.tape.shape(y), (1, 2));
    let want = conv_oracle(&es, &h, &w, &b, 4, 1);
    for (a, b) in su.tape.value(y).iter().zip(want.iter()) {
        assert_abs_diff_eq!(a, b, epsilon = 1e-12);
    }
}

#[test]
fn short_input_is_a_size_error() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut su, ..) = setup(&mut rng, 2, 1, 1, 3, 1);
    assert!(matches!(
        diagonal_conv(&mut su.tape, &su.state, &su.kernel, 3, 1),
        Err(CocnError::Size(_))
    ));
}

#[test]
fn parameter_count_formula() {
    let (r, c) = diag_kernel_shape(2, 5, 3, 7);
    assert_eq!(r * c + c, diag_kernel_param_count(2, 5, 3, 7));
    assert_eq!(diag_kernel_param_count(2, 5, 3, 7), 7 * (2 * 9 + 5 * 3 + 1));
}

#[test]
fn tri_full_band_and_maxpool_identity() {
    let mut t = Tape::new();
    let e = t.constant(Array2::ones((5, 5)));
    let z = edge_update_tri(&mut t, &[e], 5).unwrap();
    assert_eq!(t.value(z[0]).sum(), 0.0);
    let id = t.constant(Array2::eye(4));
    let p = edge_update_maxpool(&mut t, &[id], 2, 2).unwrap();
    assert_eq!(t.value(p[0]), &Array2::<f64>::eye(2));
    let zero = t.constant(Array2::zeros((6, 6)));
    let p = edge_update_maxpool(&mut t, &[zero], 3, 3).unwrap();
    assert_eq!(t.value(p[0]), &Array2::<f64>::zeros((2, 2)));
    let m = t.constant(array![[1.0, -2.0], [7.0, 3.0]]);
    let p = edge_update_maxpool(&mut t, &[m], 2, 2).unwrap();
    assert_eq!(t.value(p[0]), &array![[7.0]]);
}

fn zero_kernel(t: &mut Tape, in_e: usize, in_n: usize, k: usize, out: usize) -> DiagConvKernel {
    DiagConvKernel {
        w: t.constant(Array2::zeros(diag_kernel_shape(in_e, in_n, k, out))),
        b: t.constant(Array2::zeros((1, out))),
    }
}

#[test]
fn zero_kernel_layers() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let h = rand_mat(&mut rng, 9, 3);
    let mut t = Tape::new();
    let hv = t.constant(h.clone());
    let e = t.constant(rand_mat(&mut rng, 9, 9));
    let state = LevelState::new(&t, hv, vec![e]).unwrap();
    let kernel = zero_kernel(&mut t, 1, 3, 3, 3);
    let cfg = LayerConfig {
        k: 3,
        s: 3,
        out_channels: 3,
        residual: true,
        inception_ks: None,
    };
    let out = compressed_conv_layer(&mut t, &state, &cfg, &kernel).unwrap();
    let pooled = t.avg_pool_1d(hv, 3, 3).unwrap();
    assert_eq!(t.value(out.h), t.value(pooled));
    assert_eq!(t.shape(out.e[0]), (3, 3));

    let vanilla = LayerConfig {
        residual: false,
        ..cfg
    };
    let out = compressed_conv_layer(&mut t, &state, &vanilla, &kernel).unwrap();
    assert!(t.value(out.h).iter().all(|&v| v == 0.0));
}

#[test]
fn unit_kernel_unit_step_keeps_length() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut su, es, ..) = setup(&mut rng, 6, 1, 2, 1, 2);
    let cfg = LayerConfig {
        k: 1,
        s: 1,
        out_channels: 2,
        residual: false,
        inception_ks: None,
    };
    let out = compressed_conv_layer(&mut su.tape, &su.state, &cfg, &su.kernel).unwrap();
    assert_eq!(su.tape.shape(out.h).0, 6);
    let mut want = es[0].clone();
    for i in 0..6 {
        want[[i, i]] = 0.0;
    }
    assert_eq!(su.tape.value(out.e[0]), &want);
}

#[test]
fn short_state_is_circularly_padded() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut su, ..) = setup(&mut rng, 2, 1, 2, 3, 2);
    let cfg = LayerConfig {
        k: 3,
        s: 3,
        out_channels: 2,
        residual: true,
        inception_ks: None,
    };
    let out = compressed_conv_layer(&mut su.tape, &su.state, &cfg, &su.kernel).unwrap();
    assert_eq!(su.tape.shape(out.h), (1, 2));
    assert_eq!(su.tape.shape(out.e[0]), (1, 1));
}

#[test]
fn transposed_degenerate_kernel() {
    let h = array![[1.0, -2.0], [-0.5, 3.0], [0.0, -1.0]];
    let mut t = Tape::new();
    let hv = t.constant(h.clone());
    let unit = TConvKernel {
        w: t.constant(Array2::eye(2)),
        b: t.constant(Array2::zeros((1, 2))),
    };
    let y = transposed_conv_layer(&mut t, hv, 1, 1, 3, &unit).unwrap();
    assert_eq!(t.value(y), &(h.mapv(|v: f64| v.max(0.0)) - &h));

    let zero = TConvKernel {
        w: t.constant(Array2::zeros((2, 2))),
        b: t.constant(Array2::zeros((1, 2))),
    };
    let y = transposed_conv_layer(&mut t, hv, 1, 1, 3, &zero).unwrap();
    assert_eq!(t.value(y), &h.mapv(|v: f64| v.max(0.0)));
}

#[test]
fn transposed_zero_kernel_is_relu_of_pooled_dilation() {
    let h = array![[2.0], [4.0], [-6.0], [8.0]];
    let mut t = Tape::new();
    let hv = t.constant(h);
    let zero = TConvKernel {
        w: t.constant(Array2::zeros((1, 3))),
        b: t.constant(Array2::zeros((1, 1))),
    };
    let y = transposed_conv_layer(&mut t, hv, 3, 2, 10, &zero).unwrap();
    // dilated: 2 0 4 0 -6 0 8, padded left with two copies of 2 and right with
    // three copies of 8, then windows of three.
    let padded = [2.0, 2.0, 2.0, 0.0, 4.0, 0.0, -6.0, 0.0, 8.0, 8.0, 8.0, 8.0];
    let want: Vec<f64> = (0..10)
        .map(|i| ((padded[i] + padded[i + 1] + padded[i + 2]) / 3.0f64).max(0.0))
        .collect();
    for i in 0..10 {
        assert_abs_diff_eq!(t.value(y)[[i, 0]], want[i], epsilon = 1e-12);
    }
}

#[test]
fn round_trip_lengths() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut su, ..) = setup(&mut rng, 10, 1, 2, 3, 2);
    let cfg = LayerConfig {
        k: 3,
        s: 2,
        out_channels: 2,
        residual: false,
        inception_ks: None,
    };
    let down = compressed_conv_layer(&mut su.tape, &su.state, &cfg, &su.kernel).unwrap();
    assert_eq!(su.tape.shape(down.h).0, 4);
    let kernel = TConvKernel {
        w: su.tape.var(rand_mat(&mut rng, 2, 6)),
        b: su.tape.var(rand_mat(&mut rng, 1, 2)),
    };
    let up = transposed_conv_layer(&mut su.tape, down.h, 3, 2, 10, &kernel).unwrap();
    assert_eq!(su.tape.shape(up), (10, 2));
    assert!(matches!(
        transposed_conv_layer(&mut su.tape, down.h, 3, 2, 12, &kernel),
        Err(CocnError::Size(_))
    ));
}

#[test]
fn inception_singleton_equals_plain_layer() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mut su, ..) = setup(&mut rng, 9, 1, 2, 3, 2);
    let plain = LayerConfig {
        k: 3,
        s: 1,
        out_channels: 2,
        residual: true,
        inception_ks: None,
    };
    let incep = LayerConfig {
        inception_ks: Some(vec![3]),
        ..plain.clone()
    };
    let a = compressed_conv_layer(&mut su.tape, &su.state, &plain, &su.kernel).unwrap();
    let b = inception_layer(&mut su.tape, &su.state, &incep, &[su.kernel]).unwrap();
    assert_eq!(su.tape.value(a.h), su.tape.value(b.h));
    assert_eq!(su.tape.value(a.e[0]), su.tape.value(b.e[0]));
}

#[test]
fn inception_branch_lengths_and_zero_branch() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (mut su, ..) = setup(&mut rng, 11, 1, 2, 3, 2);
    let cfg = LayerConfig {
        k: 3,
        s: 1,
        out_channels: 2,
        residual: false,
        inception_ks: Some(vec![3, 5]),
    };
    let zero = zero_kernel(&mut su.tape, 1, 2, 5, 2);
    let out = inception_layer(&mut su.tape, &su.state, &cfg, &[su.kernel, zero]).unwrap();
    assert_eq!(su.tape.shape(out.h), (7, 2));
    assert_eq!(su.tape.shape(out.e[0]), (7, 7));

    let first = diagonal_conv(&mut su.tape, &su.state, &su.kernel, 3, 1).unwrap();
    let first = su.tape.relu(first);
    assert_eq!(su.tape.shape(first).0, 9);
    let pooled = su.tape.avg_pool_1d(first, 3, 1).unwrap();
    assert_eq!(su.tape.value(out.h), su.tape.value(pooled));
    assert!(inception_layer(
        &mut su.tape,
        &su.state,
        &LayerConfig {
            inception_ks: Some(vec![]),
            ..cfg
        },
        &[]
    )
    .is_err());
}

#[test]
fn residual_stack_reproduces_iterated_pooling() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let h = rand_mat(&mut rng, 20, 2);
    let mut t = Tape::new();
    let hv = t.constant(h);
    let e = t.constant(rand_mat(&mut rng, 20, 20));
    let mut state = LevelState::new(&t, hv, vec![e]).unwrap();
    let mut pooled = hv;
    for (k, s) in [(2, 1), (3, 3), (2, 2)] {
        let cfg = LayerConfig {
            k,
            s,
            out_channels: 2,
            residual: true,
            inception_ks: None,
        };
        let kernel = zero_kernel(&mut t, 1, 2, k, 2);
        state = compressed_conv_layer(&mut t, &state, &cfg, &kernel).unwrap();
        pooled = t.avg_pool_1d(pooled, k, s).unwrap();
    }
    assert_eq!(t.value(state.h), t.value(pooled));
}

#[test]
fn two_layer_stack_gradcheck() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let n = 9;
    // Keep pre-activations away from the ReLU kink with a positive bias.
    let inputs = vec![
        rand_mat(&mut rng, n, 2),
        rand_mat(&mut rng, n, n),
        rand_mat(&mut rng, 8, 3) * 0.3,
        Array2::from_elem((1, 3), 3.0),
        rand_mat(&mut rng, 18, 3) * 0.3,
        Array2::from_elem((1, 3), 3.0),
    ];
    let err = finite_difference_check_many(
        |t, v| {
            let state = LevelState::new(t, v[0], vec![v[1]])?;
            let l1 = LayerConfig {
                k: 2,
                s: 1,
                out_channels: 3,
                residual: false,
                inception_ks: None,
            };
            let l2 = LayerConfig {
                k: 3,
                s: 3,
                out_channels: 3,
                residual: true,
                inception_ks: None,
            };
            let s1 = compressed_conv_layer(t, &state, &l1, &DiagConvKernel { w: v[2], b: v[3] })?;
            let s2 = compressed_conv_layer(t, &s1, &l2, &DiagConvKernel { w: v[4], b: v[5] })?;
            let sq = t.mul(s2.h, s2.h)?;
            Ok(t.sum(sq))
        },
        &inputs,
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-4, "{err}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn diag_conv_matches_triple_loop(
        seed in 0u64..10_000,
        n in 1usize..=16,
        kf in 0.0f64..1.0,
        sf in 0.0f64..1.0,
        in_e in 1usize..3,
        in_n in 1usize..4,
    ) {
        let k = 1 + (kf * n as f64) as usize % n;
        let s = 1 + (sf * k as f64) as usize % k;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut su, es, h, w, b) = setup(&mut rng, n, in_e, in_n, k, 3);
        let y = diagonal_conv(&mut su.tape, &su.state, &su.kernel, k, s).unwrap();
        let want = conv_oracle(&es, &h, &w, &b, k, s);
        prop_assert_eq!(su.tape.shape(y), want.dim());
        for (a, b) in su.tape.value(y).iter().zip(want.iter()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn layer_length_law(n in 1usize..=32, kf in 0.0f64..1.0, sf in 0.0f64..1.0, residual: bool) {
        let k = 1 + (kf * n as f64) as usize % n;
        let s = 1 + (sf * k as f64) as usize % k;
        let mut rng = ChaCha8Rng::seed_from_u64(n as u64);
        let (mut su, ..) = setup(&mut rng, n, 1, 2, k, 2);
        let cfg = LayerConfig { k, s, out_channels: 2, residual, inception_ks: None };
        let out = compressed_conv_layer(&mut su.tape, &su.state, &cfg, &su.kernel).unwrap();
        let want = (n - k) / s + 1;
        prop_assert_eq!(su.tape.shape(out.h).0, want);
        prop_assert_eq!(su.tape.shape(out.e[0]), (want, want));
    }

    #[test]
    fn tri_composes_by_max(n in 1usize..12, k1 in 1usize..12, k2 in 1usize..12, seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = Tape::new();
        let e = t.constant(rand_mat(&mut rng, n, n));
        let a = t.tri(e, k1).unwrap();
        let a = t.tri(a, k2).unwrap();
        let b = t.tri(e, k1.max(k2)).unwrap();
        prop_assert_eq!(t.value(a), t.value(b));
    }
}
