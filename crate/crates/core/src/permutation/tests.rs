use super::*;
use crate::graph::{normalized_adjacency, random_gnp, shortest_path_distances_default, Graph};
use approx::assert_abs_diff_eq;
use ndarray::array;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn col(v: &[f64]) -> Array2<f64> {
    Array2::from_shape_vec((v.len(), 1), v.to_vec()).unwrap()
}

fn ranks_from(tape: &Tape, r: Var) -> Vec<usize> {
    tape.value(r).iter().map(|&v| v as usize).collect()
}

/// Least squares on the unreduced n²×n system, one row per ordered pair.
fn implicit_lstsq_oracle(d: &Array2<f64>) -> Vec<f64> {
    let n = d.nrows();
    let nf = n as f64;
    let mut b = DMatrix::<f64>::zeros(n * n, n);
    let mut y = DVector::<f64>::zeros(n * n);
    for i in 0..n {
        for j in 0..n {
            let row = i * n + j;
            b[(row, i)] += 2.0 / nf * d[[i, j]] - 1.0;
            b[(row, j)] += 1.0;
            y[row] = d[[i, j]];
        }
    }
    let qr = b.qr();
    let qty = qr.q().transpose() * y;
    qr.r()
        .solve_upper_triangular(&qty)
        .expect("full column rank")
        .iter()
        .copied()
        .collect()
}

#[test]
fn explicit_t0_is_plain_mlp() {
    let g = Graph::new(3, [(0, 1), (1, 2)]).unwrap();
    let a = Arc::new(normalized_adjacency(&g));
    let mut t = Tape::new();
    let x = t.constant(array![[1.0, 2.0], [0.5, -1.0], [0.0, 3.0]]);
    let w = t.var(array![[1.0], [0.5]]);
    let b = t.var(array![[0.25]]);
    let mlp = PositionMlp {
        layers: vec![(w, b)],
    };
    let r = regress_position_explicit(&mut t, x, &a, &mlp, 0).unwrap();
    assert_eq!(t.value(r), &array![[2.25], [0.25], [1.75]]);
}

#[test]
fn explicit_path_smoothing_example() {
    let g = Graph::new(3, [(0, 1), (1, 2)]).unwrap();
    let a = Arc::new(normalized_adjacency(&g));
    let mut t = Tape::new();
    let x = t.constant(col(&[1.0, 0.0, 0.0]));
    let w = t.var(array![[1.0]]);
    let b = t.var(array![[0.0]]);
    let mlp = PositionMlp {
        layers: vec![(w, b)],
    };
    let r = regress_position_explicit(&mut t, x, &a, &mlp, 1).unwrap();
    let v = t.value(r);
    assert_abs_diff_eq!(v[[0, 0]], 0.0);
    assert_abs_diff_eq!(v[[1, 0]], 1.0 / 2f64.sqrt(), epsilon = 1e-15);
    assert_abs_diff_eq!(v[[2, 0]], 0.0);
}

#[test]
fn explicit_identical_rows_give_identical_positions() {
    let g = Graph::new(4, [(0, 1), (2, 3)]).unwrap();
    let a = Arc::new(normalized_adjacency(&g));
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut t = Tape::new();
    let x = t.constant(Array2::from_elem((4, 3), 0.7));
    let w1 = t.var(Array2::from_shape_fn((3, 5), |_| rng.gen_range(-1.0..1.0)));
    let b1 = t.var(Array2::from_shape_fn((1, 5), |_| rng.gen_range(-1.0..1.0)));
    let w2 = t.var(Array2::from_shape_fn((5, 2), |_| rng.gen_range(-1.0..1.0)));
    let b2 = t.var(Array2::zeros((1, 2)));
    let mlp = PositionMlp {
        layers: vec![(w1, b1), (w2, b2)],
    };
    let r = regress_position_explicit(&mut t, x, &a, &mlp, 0).unwrap();
    let v = t.value(r);
    for h in 0..2 {
        assert!((1..4).all(|i| v[[i, h]] == v[[0, h]]));
    }
}

#[test]
fn implicit_matches_lstsq_oracle_small_cases() {
    let single = Graph::new(2, [(0, 1)]).unwrap();
    let p4 = Graph::new(4, [(0, 1), (1, 2), (2, 3)]).unwrap();
    let split = Graph::new(5, [(0, 1), (2, 3)]).unwrap();
    for g in [single, p4, split] {
        let d = shortest_path_distances_default(&g);
        let got = regress_position_implicit(&d, 1).unwrap();
        let want = implicit_lstsq_oracle(&d.d_scaled);
        for i in 0..g.n() {
            assert_abs_diff_eq!(got[[i, 0]], want[i], epsilon = 1e-8);
        }
    }
}

#[test]
fn implicit_complete_graph_is_uniform() {
    let edges: Vec<_> = (0..6)
        .flat_map(|i| (i + 1..6).map(move |j| (i, j)))
        .collect();
    let g = Graph::new(6, edges).unwrap();
    let r = regress_position_implicit(&shortest_path_distances_default(&g), 1).unwrap();
    assert!((1..6).all(|i| r[[i, 0]] == r[[0, 0]]));
}

#[test]
fn implicit_solution_is_half_n_and_orders_by_index() {
    // Every symmetric distance matrix with zero diagonal is solved exactly by
    // r = n/2 (each pair residual is ((2/n)d − 1)(n/2) + n/2 − d = 0), so the
    // ordering along a path comes from index tie-breaking.
    let g = Graph::new(4, [(0, 1), (1, 2), (2, 3)]).unwrap();
    let r = regress_position_implicit(&shortest_path_distances_default(&g), 1).unwrap();
    for i in 0..4 {
        assert_eq!(r[[i, 0]], 2.0);
    }
    let ranks = ranks_of(r.column(0).as_slice().unwrap());
    assert_eq!(ranks, vec![0, 1, 2, 3]);
}

#[test]
fn implicit_heads_differ_by_jitter() {
    let g = Graph::new(3, [(0, 1), (1, 2)]).unwrap();
    let r = regress_position_implicit(&shortest_path_distances_default(&g), 3).unwrap();
    assert_eq!(r.ncols(), 3);
    assert_abs_diff_eq!(
        r[[2, 2]] - r[[2, 0]],
        2.0 * HEAD_JITTER * 2.0 / 3.0,
        epsilon = 1e-12
    );
}

#[test]
fn absolute_position_examples() {
    for grad in [RankGrad::Dense, RankGrad::Sparse] {
        let mut t = Tape::new();
        let a = t.var(col(&[0.5, -1.2, 3.0]));
        let r = absolute_position(&mut t, a, grad).unwrap();
        assert_eq!(ranks_from(&t, r), vec![1, 0, 2]);
        let b = t.var(col(&[7.0, 7.0]));
        let r = absolute_position(&mut t, b, grad).unwrap();
        assert_eq!(ranks_from(&t, r), vec![0, 1]);
        let c = t.var(col(&[3.0, -1.2, 0.5]));
        let r = absolute_position(&mut t, c, grad).unwrap();
        assert_eq!(ranks_from(&t, r), vec![2, 0, 1]);
    }
}

#[test]
fn relaxed_permutation_examples() {
    let mut t = Tape::new();
    let r = t.var(col(&[2.0, 0.0, 1.0]));
    let p = t.relaxed_perm(r, 10f64.ln()).unwrap();
    let v = t.value(p);
    assert_abs_diff_eq!(v[[0, 0]], 0.1, epsilon = 1e-14);
    assert_abs_diff_eq!(v[[1, 0]], 0.01, epsilon = 1e-14);
    assert_abs_diff_eq!(v[[2, 0]], 1.0, epsilon = 1e-14);

    let hard = t.relaxed_perm(r, 200.0).unwrap();
    let want = hard_permutation(&[2, 0, 1]);
    assert_eq!(want[[2, 0]], 1.0);
    assert_eq!(want[[0, 1]], 1.0);
    assert_eq!(want[[1, 2]], 1.0);
    for (a, b) in t.value(hard).iter().zip(want.iter()) {
        assert!((a - b).abs() < 1e-80);
    }

    let one = t.var(col(&[0.0]));
    let p1 = t.relaxed_perm(one, 1.0).unwrap();
    assert_eq!(t.value(p1), &array![[1.0]]);
}

#[test]
fn sparse_permutation_examples() {
    let mut t = Tape::new();
    let a = t.var(col(&[0.5, -1.2, 3.0]));
    let sp = sparse_permutation(&mut t, a).unwrap();
    assert_eq!(sp.rank_of, vec![1, 0, 2]);
    assert_eq!(t.value(sp.weight), &Array2::<f64>::ones((3, 1)));
    let b = t.var(col(&[4.2]));
    let sp1 = sparse_permutation(&mut t, b).unwrap();
    assert_eq!(sp1.rank_of, vec![0]);
}

#[test]
fn two_node_swap_moves_features() {
    let g = Graph::new(2, [(0, 1)]).unwrap();
    let adj = Arc::new(g.adjacency_csr());
    for sparse in [false, true] {
        let mut t = Tape::new();
        let ra = t.var(col(&[1.0, 0.0]));
        let perm = Permutation::from_positions(&mut t, ra, 60.0, sparse).unwrap();
        let x = t.constant(array![[1.0], [2.0]]);
        let (xh, _) = perm.permute(&mut t, x, &adj).unwrap();
        let v = t.value(xh);
        assert_abs_diff_eq!(v[[0, 0]], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(v[[1, 0]], 1.0, epsilon = 1e-12);
    }
}

#[test]
fn identity_ranks_leave_inputs_unchanged() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let g = random_gnp(6, 0.5, &mut rng).unwrap();
    let adj = Arc::new(g.adjacency_csr());
    let mut t = Tape::new();
    let ra = t.var(col(&[0.0, 1.0, 2.0, 3.0, 4.0, 5.0]));
    let perm = Permutation::from_positions(&mut t, ra, 1.0, true).unwrap();
    let xv = Array2::from_shape_fn((6, 2), |(i, j)| (i * 2 + j) as f64);
    let x = t.constant(xv.clone());
    let (xh, ah) = perm.permute(&mut t, x, &adj).unwrap();
    assert_eq!(t.value(xh), &xv);
    assert_eq!(t.value(ah), &g.adjacency_dense());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn implicit_matches_oracle_random(seed in 0u64..10_000, n in 1usize..=10, p in 0.1f64..0.9) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_gnp(n, p, &mut rng).unwrap();
        let d = shortest_path_distances_default(&g);
        let got = regress_position_implicit(&d, 1).unwrap();
        let want = if n == 1 { vec![0.0] } else { implicit_lstsq_oracle(&d.d_scaled) };
        for i in 0..n {
            prop_assert!((got[[i, 0]] - want[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn relaxed_columns_hold_a_single_one(seed in 0u64..10_000, n in 1usize..20, tau in 0.05f64..20.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() { perm.swap(i, rng.gen_range(0..=i)); }
        let mut t = Tape::new();
        let r = t.var(Array2::from_shape_fn((n, 1), |(i, _)| perm[i] as f64));
        let p = t.relaxed_perm(r, tau).unwrap();
        let bound: f64 = (0..n).map(|k| (-tau * k as f64).exp()).sum();
        for j in 0..n {
            let column = t.value(p).column(j);
            prop_assert_eq!(column.iter().filter(|&&v| v == 1.0).count(), 1);
            prop_assert_eq!(column[perm[j]], 1.0);
            prop_assert!(column.iter().all(|&v| v > 0.0 && v <= 1.0));
            prop_assert!(column.sum() <= bound + 1e-12);
        }
    }

    #[test]
    fn sparse_matches_hard_dense(seed in 0u64..10_000, n in 1usize..=8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_gnp(n, 0.4, &mut rng).unwrap();
        let adj = Arc::new(g.adjacency_csr());
        let ra: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let xv = Array2::from_shape_fn((n, 3), |_| rng.gen_range(-1.0..1.0));

        let mut t = Tape::new();
        let rav = t.var(col(&ra));
        let perm = Permutation::from_positions(&mut t, rav, 1.0, true).unwrap();
        let x = t.constant(xv.clone());
        let (xh, ah) = perm.permute(&mut t, x, &adj).unwrap();

        let hard = hard_permutation(&ranks_of(&ra));
        let a = g.adjacency_dense();
        prop_assert_eq!(t.value(xh), &hard.dot(&xv));
        prop_assert_eq!(t.value(ah), &hard.dot(&a).dot(&hard.t()));

        if let Permutation::Sparse(sp) = &perm {
            prop_assert_eq!(&sp.rank_of, &ranks_of(&ra));
        }
        let back = perm.unpermute(&mut t, xh).unwrap();
        prop_assert_eq!(t.value(back), &xv);
    }

    #[test]
    fn explicit_is_equivariant(seed in 0u64..10_000, n in 2usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_gnp(n, 0.4, &mut rng).unwrap();
        let mut q: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() { q.swap(i, rng.gen_range(0..=i)); }
        let xv = Array2::from_shape_fn((n, 3), |_| rng.gen_range(-1.0..1.0));
        let gq = g.clone().with_features(xv.clone()).unwrap().relabel(&q).unwrap();
        let w1 = Array2::from_shape_fn((3, 4), |_| rng.gen_range(-1.0..1.0));
        let w2 = Array2::from_shape_fn((4, 2), |_| rng.gen_range(-1.0..1.0));

        let run = |graph: &Graph, x: &Array2<f64>| {
            let a = Arc::new(normalized_adjacency(graph));
            let mut t = Tape::new();
            let xv = t.constant(x.clone());
            let l1 = (t.var(w1.clone()), t.var(Array2::zeros((1, 4))));
            let l2 = (t.var(w2.clone()), t.var(Array2::zeros((1, 2))));
            let mlp = PositionMlp { layers: vec![l1, l2] };
            let r = regress_position_explicit(&mut t, xv, &a, &mlp, 2).unwrap();
            t.value(r).clone()
        };
        let base = run(&g, &xv);
        let moved = run(&gq, gq.features().unwrap());
        for i in 0..n {
            for h in 0..2 {
                prop_assert!((moved[[q[i], h]] - base[[i, h]]).abs() < 1e-10);
            }
        }
    }
}
