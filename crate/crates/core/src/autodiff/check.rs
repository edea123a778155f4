use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Tape, Var};
use crate::error::Result;

/// Central-difference check of a scalar function of one matrix.
///
/// Returns `max |g_fd − g_ad| / (|g_fd| + 1e-8)` over all entries.
pub fn finite_difference_check<F>(f: F, x: &Array2<f64>, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    finite_difference_check_many(|t, vs| f(t, vs[0]), std::slice::from_ref(x), eps)
}

/// Same as [`finite_difference_check`] over several inputs at once.
pub fn finite_difference_check_many<F>(f: F, inputs: &[Array2<f64>], eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |xs: &[Array2<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.var(x.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.scalar(out))
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.var(x.clone())).collect();
    let out = f(&mut tape, &vars)?;
    tape.backward(out)?;
    let analytic: Vec<Array2<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, x)| {
            tape.grad(v)
                .cloned()
                .unwrap_or_else(|| Array2::zeros(x.dim()))
        })
        .collect();

    let mut worst = 0.0f64;
    let mut work: Vec<Array2<f64>> = inputs.to_vec();
    for (which, ga) in analytic.iter().enumerate() {
        for idx in 0..inputs[which].len() {
            let (r, c) = (idx / inputs[which].ncols(), idx % inputs[which].ncols());
            let orig = work[which][[r, c]];
            work[which][[r, c]] = orig + eps;
            let up = eval(&work)?;
            work[which][[r, c]] = orig - eps;
            let down = eval(&work)?;
            work[which][[r, c]] = orig;
            let fd = (up - down) / (2.0 * eps);
            let err = (fd - ga[[r, c]]).abs() / (fd.abs() + 1e-8);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
    Array2::from_shape_fn((r, c), |_| rng.gen_range(-1.0..1.0))
}

// Weighted sum with fixed pseudo-random weights, so every output entry matters.
fn probe(t: &mut Tape, y: Var) -> Result<Var> {
    let (r, c) = t.shape(y);
    let w = Array2::from_shape_fn((r, c), |(i, j)| 0.3 + ((i * 7 + j * 13) % 11) as f64 / 10.0);
    let w = t.constant(w);
    let p = t.mul(y, w)?;
    Ok(t.sum(p))
}

/// Finite-difference error of every smooth primitive on fixed random inputs.
pub fn primitive_gradient_suite() -> Result<Vec<(&'static str, f64)>> {
    let eps = 1e-5;
    let fd_probe = |f: &dyn Fn(&mut Tape, &[Var]) -> Result<Var>, inputs: &[Array2<f64>]| {
        finite_difference_check_many(
            |t, v| {
                let y = f(t, v)?;
                probe(t, y)
            },
            inputs,
            eps,
        )
    };
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let a = rand_mat(&mut rng, 4, 3);
    let b = rand_mat(&mut rng, 4, 3);
    let sq = rand_mat(&mut rng, 6, 6);
    let row = rand_mat(&mut rng, 1, 3);
    let col = rand_mat(&mut rng, 4, 1);
    let csr = std::sync::Arc::new(crate::graph::CsrMatrix::from_triplets(
        4,
        4,
        &[(0, 1, 0.5), (1, 0, 0.5), (2, 3, -1.0), (3, 3, 1.7)],
    ));
    let cases: Vec<(&'static str, f64)> = vec![
        (
            "matmul",
            fd_probe(
                &|t, v| {
                    let bt = t.transpose(v[1]);
                    t.matmul(v[0], bt)
                },
                &[a.clone(), b.clone()],
            )?,
        ),
        (
            "matmul_nt",
            fd_probe(&|t, v| t.matmul_nt(v[0], v[1]), &[a.clone(), b.clone()])?,
        ),
        (
            "matmul_tn",
            fd_probe(&|t, v| t.matmul_tn(v[0], v[1]), &[a.clone(), b.clone()])?,
        ),
        ("spmm", fd_probe(&|t, v| t.spmm(&csr, v[0]), &[a.clone()])?),
        (
            "mul_sparse",
            fd_probe(
                &|t, v| {
                    let x = t.transpose(v[0]);
                    t.mul_sparse(x, &csr)
                },
                &[a.clone()],
            )?,
        ),
        (
            "add",
            fd_probe(&|t, v| t.add(v[0], v[1]), &[a.clone(), b.clone()])?,
        ),
        (
            "sub",
            fd_probe(&|t, v| t.sub(v[0], v[1]), &[a.clone(), b.clone()])?,
        ),
        (
            "mul",
            fd_probe(&|t, v| t.mul(v[0], v[1]), &[a.clone(), b.clone()])?,
        ),
        (
            "add_row",
            fd_probe(&|t, v| t.add_row(v[0], v[1]), &[a.clone(), row.clone()])?,
        ),
        (
            "mul_row",
            fd_probe(&|t, v| t.mul_row(v[0], v[1]), &[a.clone(), row.clone()])?,
        ),
        (
            "mul_col",
            fd_probe(&|t, v| t.mul_col(v[0], v[1]), &[a.clone(), col.clone()])?,
        ),
        (
            "scale",
            fd_probe(&|t, v| Ok(t.scale(v[0], -1.7)), &[a.clone()])?,
        ),
        (
            "add_scalar",
            fd_probe(&|t, v| Ok(t.add_scalar(v[0], 0.3)), &[a.clone()])?,
        ),
        ("relu", fd_probe(&|t, v| Ok(t.relu(v[0])), &[a.clone()])?),
        (
            "sigmoid",
            fd_probe(&|t, v| Ok(t.sigmoid(v[0])), &[a.clone()])?,
        ),
        ("exp", fd_probe(&|t, v| Ok(t.exp(v[0])), &[a.clone()])?),
        ("mean", fd_probe(&|t, v| Ok(t.mean(v[0])), &[a.clone()])?),
        (
            "concat_cols",
            fd_probe(
                &|t, v| t.concat_cols(&[v[0], v[1]]),
                &[a.clone(), b.clone()],
            )?,
        ),
        (
            "concat_rows",
            fd_probe(
                &|t, v| t.concat_rows(&[v[0], v[1]]),
                &[a.clone(), b.clone()],
            )?,
        ),
        (
            "slice",
            fd_probe(&|t, v| t.slice(v[0], 1..3, 0..2), &[a.clone()])?,
        ),
        (
            "gather_rows",
            fd_probe(&|t, v| t.gather_rows(v[0], &[3, 0, 0, 2]), &[a.clone()])?,
        ),
        (
            "gather_square",
            fd_probe(&|t, v| t.gather_square(v[0], &[5, 1, 2, 1]), &[sq.clone()])?,
        ),
        (
            "max_rows",
            fd_probe(&|t, v| Ok(t.max_rows(v[0])), &[a.clone()])?,
        ),
        (
            "max_pool_2d",
            fd_probe(&|t, v| t.max_pool_2d(v[0], 2, 2), &[sq.clone()])?,
        ),
        (
            "avg_pool_1d",
            fd_probe(&|t, v| t.avg_pool_1d(v[0], 2, 1), &[a.clone()])?,
        ),
        (
            "dilate_1d",
            fd_probe(&|t, v| t.dilate_1d(v[0], 3), &[a.clone()])?,
        ),
        (
            "pad_rows_edge",
            fd_probe(&|t, v| Ok(t.pad_rows_edge(v[0], 2, 1)), &[a.clone()])?,
        ),
        (
            "fold_rows",
            fd_probe(
                &|t, v| t.fold_rows(v[0], 3, 2, 10),
                &[rand_mat(&mut rng.clone(), 4, 6)],
            )?,
        ),
        (
            "diag_unfold",
            fd_probe(&|t, v| t.diag_unfold(v[0], 3, 2), &[sq.clone()])?,
        ),
        (
            "row_unfold",
            fd_probe(&|t, v| t.row_unfold(v[0], 2, 1), &[a.clone()])?,
        ),
        ("tri", fd_probe(&|t, v| t.tri(v[0], 2), &[sq.clone()])?),
        (
            "outer_diff",
            fd_probe(
                &|t, v| t.outer_diff(v[0], v[1]),
                &[col.clone(), col.clone()],
            )?,
        ),
        (
            "layer_norm",
            fd_probe(&|t, v| Ok(t.layer_norm(v[0], 1e-5)), &[a.clone()])?,
        ),
        (
            "cross_entropy",
            finite_difference_check(|t, x| t.cross_entropy(x, &[0, 2, 1, 2]), &a, eps)?,
        ),
        (
            "bce_with_logits",
            finite_difference_check(
                |t, x| t.bce_with_logits(x, &[0.0, 1.0, 1.0, 0.0]),
                &col,
                eps,
            )?,
        ),
        (
            "sparse_permute_adj",
            fd_probe(
                &|t, v| t.sparse_permute_adj(v[0], &csr, &[2, 0, 3, 1]),
                &[col.clone()],
            )?,
        ),
    ];
    let r = Array2::from_shape_vec((4, 1), vec![0.3, 2.6, 1.4, 3.2]).expect("4 entries");
    let mut cases = cases;
    cases.push((
        "relaxed_perm",
        fd_probe(&|t, v| t.relaxed_perm(v[0], 1.3), &[r.clone()])?,
    ));
    cases.push((
        "mod_shift",
        fd_probe(&|t, v| Ok(t.mod_shift(v[0], 4.0)), &[r])?,
    ));
    Ok(cases)
}
