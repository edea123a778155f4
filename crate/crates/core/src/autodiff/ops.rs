use std::sync::Arc;

use ndarray::{s, Array2, Axis, Zip};

use super::{dim_err, Op, Tape, Var};
use crate::error::{CocnError, Result};
use crate::graph::CsrMatrix;

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Slope of `sigmoid(relu(x))`, used as the backward of the step function.
pub(crate) fn surrogate_slope(x: f64) -> f64 {
    if x > 0.0 {
        let s = sigmoid(x);
        s * (1.0 - s)
    } else {
        0.0
    }
}

pub(crate) fn band_zero(m: &mut Array2<f64>, k: usize) {
    for i in 0..m.nrows() {
        let lo = i.saturating_sub(k - 1);
        let hi = (i + k).min(m.ncols());
        if lo < hi {
            m.slice_mut(s![i, lo..hi]).fill(0.0);
        }
    }
}

/// Ascending ranks with ties broken by index.
pub fn ranks_of(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let mut ranks = vec![0; values.len()];
    for (rank, &node) in order.iter().enumerate() {
        ranks[node] = rank;
    }
    ranks
}

pub(crate) fn abs_pos_dense_backward(ra: &Array2<f64>, g: &Array2<f64>) -> Array2<f64> {
    let n = ra.nrows();
    let mut out = Array2::zeros((n, 1));
    for i in 0..n {
        for j in 0..n {
            let slope = surrogate_slope(ra[[i, 0]] - ra[[j, 0]]);
            if slope != 0.0 {
                out[[i, 0]] += g[[i, 0]] * slope;
                out[[j, 0]] -= g[[i, 0]] * slope;
            }
        }
    }
    out
}

/// `d/dr_A` of `(1/4) Σ_i g_i (r_i r_A,i − Σ_{r_j < r_i} r_A,j)` with ranks held fixed.
pub(crate) fn rank_approx_backward(ranks: &[usize], g: &Array2<f64>) -> Array2<f64> {
    let n = ranks.len();
    let mut by_rank = vec![0.0; n];
    for (i, &r) in ranks.iter().enumerate() {
        by_rank[r] = g[[i, 0]];
    }
    // suffix[r] = sum of g over nodes ranked strictly above r
    let mut suffix = vec![0.0; n + 1];
    for r in (0..n).rev() {
        suffix[r] = suffix[r + 1] + by_rank[r];
    }
    let mut out = Array2::zeros((n, 1));
    for (k, &r) in ranks.iter().enumerate() {
        out[[k, 0]] = 0.25 * (g[[k, 0]] * r as f64 - suffix[r + 1]);
    }
    out
}

fn check_same(op: &'static str, a: &Array2<f64>, b: &Array2<f64>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(dim_err(op, a.dim(), b.dim()));
    }
    Ok(())
}

fn check_col(op: &'static str, a: &Array2<f64>) -> Result<()> {
    if a.ncols() != 1 {
        return Err(dim_err(op, a.dim(), (a.nrows(), 1)));
    }
    Ok(())
}

fn window_count(n: usize, k: usize, s: usize, op: &str) -> Result<usize> {
    if k == 0 || s == 0 {
        return Err(CocnError::Config(format!(
            "{op}: kernel and step must be positive"
        )));
    }
    if n < k {
        return Err(CocnError::Size(format!(
            "{op}: length {n} is shorter than kernel {k}; pad the input first"
        )));
    }
    Ok((n - k) / s + 1)
}

impl Tape {
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.ncols() != vb.nrows() {
            return Err(dim_err("matmul", va.dim(), vb.dim()));
        }
        let out = va.dot(vb);
        Ok(self.push(out, Op::MatMul(a, b), &[a, b]))
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.ncols() != vb.ncols() {
            return Err(dim_err("matmul_nt", va.dim(), vb.dim()));
        }
        let out = va.dot(&vb.t());
        Ok(self.push(out, Op::MatMulNT(a, b), &[a, b]))
    }

    /// `aᵀ · b`.
    pub fn matmul_tn(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.nrows() != vb.nrows() {
            return Err(dim_err("matmul_tn", va.dim(), vb.dim()));
        }
        let out = va.t().dot(vb);
        Ok(self.push(out, Op::MatMulTN(a, b), &[a, b]))
    }

    /// `m · x` for a constant sparse `m`.
    pub fn spmm(&mut self, m: &Arc<CsrMatrix>, x: Var) -> Result<Var> {
        let vx = self.value(x);
        if m.shape().1 != vx.nrows() {
            return Err(dim_err("spmm", m.shape(), vx.dim()));
        }
        let out = m.mul_dense(vx);
        Ok(self.push(out, Op::SpMatMul(Arc::clone(m), x), &[x]))
    }

    /// `x · m` for a constant sparse `m`.
    pub fn mul_sparse(&mut self, x: Var, m: &Arc<CsrMatrix>) -> Result<Var> {
        let vx = self.value(x);
        if vx.ncols() != m.shape().0 {
            return Err(dim_err("mul_sparse", vx.dim(), m.shape()));
        }
        let out = m.left_mul_dense(vx);
        Ok(self.push(out, Op::MatMulSp(x, Arc::clone(m)), &[x]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        check_same("add", self.value(a), self.value(b))?;
        let out = self.value(a) + self.value(b);
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        check_same("sub", self.value(a), self.value(b))?;
        let out = self.value(a) - self.value(b);
        Ok(self.push(out, Op::Sub(a, b), &[a, b]))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        check_same("mul", self.value(a), self.value(b))?;
        let out = self.value(a) * self.value(b);
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    /// Adds a 1×c row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (va, vr) = (self.value(a), self.value(row));
        if vr.nrows() != 1 || vr.ncols() != va.ncols() {
            return Err(dim_err("add_row", va.dim(), vr.dim()));
        }
        let out = va + vr;
        Ok(self.push(out, Op::AddRow(a, row), &[a, row]))
    }

    /// Multiplies every row of `a` elementwise by a 1×c row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (va, vr) = (self.value(a), self.value(row));
        if vr.nrows() != 1 || vr.ncols() != va.ncols() {
            return Err(dim_err("mul_row", va.dim(), vr.dim()));
        }
        let out = va * vr;
        Ok(self.push(out, Op::MulRow(a, row), &[a, row]))
    }

    /// Scales row `i` of `a` by `w[i]` for an n×1 column `w`.
    pub fn mul_col(&mut self, a: Var, w: Var) -> Result<Var> {
        let (va, vw) = (self.value(a), self.value(w));
        if vw.ncols() != 1 || vw.nrows() != va.nrows() {
            return Err(dim_err("mul_col", va.dim(), vw.dim()));
        }
        let out = va * vw;
        Ok(self.push(out, Op::MulCol(a, w), &[a, w]))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a) * c;
        self.push(out, Op::Scale(a, c), &[a])
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a) + c;
        self.push(out, Op::AddScalar(a), &[a])
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).t().to_owned();
        self.push(out, Op::Transpose(a), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(|v| v.max(0.0));
        self.push(out, Op::Relu(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(sigmoid);
        self.push(out, Op::Sigmoid(a), &[a])
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(f64::exp);
        self.push(out, Op::Exp(a), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Array2::from_elem((1, 1), self.value(a).sum());
        self.push(out, Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let out = Array2::from_elem((1, 1), v.sum() / v.len() as f64);
        self.push(out, Op::Mean(a), &[a])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| CocnError::Size("concat of zero parts".into()))?;
        let rows = self.value(*first).nrows();
        for &p in parts {
            if self.value(p).nrows() != rows {
                return Err(dim_err("concat_cols", self.shape(*first), self.shape(p)));
            }
        }
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let out = ndarray::concatenate(Axis(1), &views).expect("row counts checked");
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), parts))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| CocnError::Size("concat of zero parts".into()))?;
        let cols = self.value(*first).ncols();
        for &p in parts {
            if self.value(p).ncols() != cols {
                return Err(dim_err("concat_rows", self.shape(*first), self.shape(p)));
            }
        }
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let out = ndarray::concatenate(Axis(0), &views).expect("column counts checked");
        Ok(self.push(out, Op::ConcatRows(parts.to_vec()), parts))
    }

    /// Sub-block `rows × cols` (half-open ranges).
    pub fn slice(
        &mut self,
        x: Var,
        rows: std::ops::Range<usize>,
        cols: std::ops::Range<usize>,
    ) -> Result<Var> {
        let v = self.value(x);
        if rows.end > v.nrows() || cols.end > v.ncols() || rows.is_empty() || cols.is_empty() {
            return Err(dim_err("slice", v.dim(), (rows.end, cols.end)));
        }
        let out = v.slice(s![rows.clone(), cols.clone()]).to_owned();
        Ok(self.push(
            out,
            Op::Slice {
                x,
                r0: rows.start,
                c0: cols.start,
            },
            &[x],
        ))
    }

    /// `out[i] = x[idx[i]]`.
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let v = self.value(x);
        if let Some(&bad) = idx.iter().find(|&&i| i >= v.nrows()) {
            return Err(CocnError::Bounds {
                index: bad,
                n: v.nrows(),
            });
        }
        let out = v.select(Axis(0), idx);
        Ok(self.push(
            out,
            Op::GatherRows {
                x,
                idx: idx.to_vec(),
            },
            &[x],
        ))
    }

    /// `out[p, q] = x[idx[p], idx[q]]`.
    pub fn gather_square(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let v = self.value(x);
        if v.nrows() != v.ncols() {
            return Err(dim_err("gather_square", v.dim(), (v.nrows(), v.nrows())));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= v.nrows()) {
            return Err(CocnError::Bounds {
                index: bad,
                n: v.nrows(),
            });
        }
        let out = v.select(Axis(0), idx).select(Axis(1), idx);
        Ok(self.push(
            out,
            Op::GatherSquare {
                x,
                idx: idx.to_vec(),
            },
            &[x],
        ))
    }

    /// Column-wise maximum over rows, giving a 1×c row.
    pub fn max_rows(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let mut argmax = Vec::with_capacity(v.ncols());
        let mut out = Array2::zeros((1, v.ncols()));
        for (c, col) in v.axis_iter(Axis(1)).enumerate() {
            let mut best = 0;
            for r in 1..col.len() {
                if col[r] > col[best] {
                    best = r;
                }
            }
            argmax.push(best);
            out[[0, c]] = col[best];
        }
        self.push(out, Op::MaxRows { x, argmax }, &[x])
    }

    /// 2-D max pooling with square window `k` and step `s`.
    pub fn max_pool_2d(&mut self, x: Var, k: usize, s: usize) -> Result<Var> {
        let v = self.value(x);
        let nr = window_count(v.nrows(), k, s, "max_pool_2d")?;
        let nc = window_count(v.ncols(), k, s, "max_pool_2d")?;
        let mut out = Array2::zeros((nr, nc));
        let mut argmax = Vec::with_capacity(nr * nc);
        for a in 0..nr {
            for b in 0..nc {
                let (mut best, mut at) = (f64::NEG_INFINITY, (a * s, b * s));
                for p in 0..k {
                    for q in 0..k {
                        let val = v[[a * s + p, b * s + q]];
                        if val > best {
                            best = val;
                            at = (a * s + p, b * s + q);
                        }
                    }
                }
                out[[a, b]] = best;
                argmax.push(at);
            }
        }
        Ok(self.push(out, Op::MaxPool2d { x, argmax }, &[x]))
    }

    /// Mean over row windows of length `k` taken every `s` rows.
    pub fn avg_pool_1d(&mut self, x: Var, k: usize, s: usize) -> Result<Var> {
        let v = self.value(x);
        let n_out = window_count(v.nrows(), k, s, "avg_pool_1d")?;
        let mut out = Array2::zeros((n_out, v.ncols()));
        for j in 0..n_out {
            let window = v.slice(s![s * j..s * j + k, ..]);
            out.row_mut(j)
                .assign(&window.mean_axis(Axis(0)).expect("window is non-empty"));
        }
        Ok(self.push(out, Op::AvgPool1d { x, k, s }, &[x]))
    }

    /// Inserts `s − 1` zero rows between consecutive rows.
    pub fn dilate_1d(&mut self, x: Var, s: usize) -> Result<Var> {
        if s == 0 {
            return Err(CocnError::Config("dilate_1d: step must be positive".into()));
        }
        let v = self.value(x);
        let n = v.nrows();
        let mut out = Array2::zeros(((n - 1) * s + 1, v.ncols()));
        for i in 0..n {
            out.row_mut(i * s).assign(&v.row(i));
        }
        Ok(self.push(out, Op::Dilate1d { x, s }, &[x]))
    }

    /// Replicates the first row `left` times and the last row `right` times.
    pub fn pad_rows_edge(&mut self, x: Var, left: usize, right: usize) -> Var {
        let v = self.value(x);
        let n = v.nrows();
        let idx: Vec<usize> = (0..left + n + right)
            .map(|r| r.saturating_sub(left).min(n - 1))
            .collect();
        let out = v.select(Axis(0), &idx);
        self.push(out, Op::PadRowsEdge { x, left }, &[x])
    }

    /// Overlap-add of `k` row blocks: `x` is n×(k·c), output is `out_len`×c with
    /// row `s·j + p` receiving block `p` of input row `j`.
    pub fn fold_rows(&mut self, x: Var, k: usize, s: usize, out_len: usize) -> Result<Var> {
        let v = self.value(x);
        if k == 0 || v.ncols() % k != 0 {
            return Err(dim_err("fold_rows", v.dim(), (k, 0)));
        }
        let c = v.ncols() / k;
        let needed = (v.nrows() - 1) * s + k;
        if needed > out_len {
            return Err(CocnError::Size(format!(
                "fold_rows: {needed} rows produced but target length is {out_len}"
            )));
        }
        let mut out = Array2::zeros((out_len, c));
        for j in 0..v.nrows() {
            for p in 0..k {
                let mut dst = out.row_mut(s * j + p);
                dst += &v.slice(s![j, p * c..(p + 1) * c]);
            }
        }
        Ok(self.push(out, Op::FoldRows { x, k, s }, &[x]))
    }

    /// Flattens each k×k diagonal block of a square matrix into a row.
    pub fn diag_unfold(&mut self, x: Var, k: usize, s: usize) -> Result<Var> {
        let v = self.value(x);
        if v.nrows() != v.ncols() {
            return Err(dim_err("diag_unfold", v.dim(), (v.nrows(), v.nrows())));
        }
        let n_out = window_count(v.nrows(), k, s, "diag_unfold")?;
        let mut out = Array2::zeros((n_out, k * k));
        for j in 0..n_out {
            let i = s * j;
            for p in 0..k {
                for q in 0..k {
                    out[[j, p * k + q]] = v[[i + p, i + q]];
                }
            }
        }
        Ok(self.push(out, Op::DiagUnfold { x, k, s }, &[x]))
    }

    /// Concatenates each window of `k` consecutive rows into one row.
    pub fn row_unfold(&mut self, x: Var, k: usize, s: usize) -> Result<Var> {
        let v = self.value(x);
        let d = v.ncols();
        let n_out = window_count(v.nrows(), k, s, "row_unfold")?;
        let mut out = Array2::zeros((n_out, k * d));
        for j in 0..n_out {
            for p in 0..k {
                out.slice_mut(s![j, p * d..(p + 1) * d])
                    .assign(&v.row(s * j + p));
            }
        }
        Ok(self.push(out, Op::RowUnfold { x, k, s }, &[x]))
    }

    /// Zeroes the band `|i − j| < k`.
    pub fn tri(&mut self, x: Var, k: usize) -> Result<Var> {
        if k == 0 {
            return Err(CocnError::Config("tri: k must be positive".into()));
        }
        let mut out = self.value(x).clone();
        band_zero(&mut out, k);
        Ok(self.push(out, Op::Tri { x, k }, &[x]))
    }

    /// Step function forward, `sigmoid(relu(x))` slope backward.
    pub fn sign_surrogate(&mut self, x: Var) -> Var {
        let out = self.value(x).mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
        self.push(out, Op::SignSurrogate(x), &[x])
    }

    /// Entrywise `x mod n` into `[0, n)`, identity backward.
    pub fn mod_shift(&mut self, x: Var, n: f64) -> Var {
        let out = self.value(x).mapv(|v| v.rem_euclid(n));
        self.push(out, Op::ModShift(x), &[x])
    }

    /// `out[i, j] = a[i] − b[j]` for column vectors `a`, `b`.
    pub fn outer_diff(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        check_col("outer_diff", va)?;
        check_col("outer_diff", vb)?;
        let mut out = Array2::zeros((va.nrows(), vb.nrows()));
        Zip::indexed(&mut out).for_each(|(i, j), o| *o = va[[i, 0]] - vb[[j, 0]]);
        Ok(self.push(out, Op::OuterDiff(a, b), &[a, b]))
    }

    /// Ranks of an n×1 column; the backward pass uses the pairwise surrogate.
    pub fn abs_pos_dense(&mut self, ra: Var) -> Result<Var> {
        let v = self.value(ra);
        check_col("abs_pos_dense", v)?;
        let ranks = ranks_of(v.as_slice().expect("column is contiguous"));
        let out = Array2::from_shape_fn((ranks.len(), 1), |(i, _)| ranks[i] as f64);
        Ok(self.push(out, Op::AbsPosDense(ra), &[ra]))
    }

    /// Ranks of an n×1 column; the backward pass uses the first-order rank
    /// approximation evaluated in `O(n log n)`.
    pub fn rank_approx(&mut self, ra: Var) -> Result<Var> {
        let v = self.value(ra);
        check_col("rank_approx", v)?;
        let ranks = ranks_of(v.as_slice().expect("column is contiguous"));
        let out = Array2::from_shape_fn((ranks.len(), 1), |(i, _)| ranks[i] as f64);
        Ok(self.push(out, Op::RankApprox { x: ra, ranks }, &[ra]))
    }

    /// `P[i, j] = exp(−τ · ((i − r_j + n) mod n))` for an n×1 rank column `r`.
    pub fn relaxed_perm(&mut self, r: Var, tau: f64) -> Result<Var> {
        let v = self.value(r);
        check_col("relaxed_perm", v)?;
        let n = v.nrows();
        let nf = n as f64;
        let out = Array2::from_shape_fn((n, n), |(i, j)| {
            let shift = (i as f64 - v[[j, 0]] + nf).rem_euclid(nf);
            (-tau * shift).exp()
        });
        Ok(self.push(out, Op::RelaxedPerm { r, tau }, &[r]))
    }

    /// `out[rank_of[a], rank_of[b]] = w[a] · adj[a, b] · w[b]`, a dense n×n result.
    pub fn sparse_permute_adj(
        &mut self,
        w: Var,
        adj: &Arc<CsrMatrix>,
        rank_of: &[usize],
    ) -> Result<Var> {
        let vw = self.value(w);
        let n = rank_of.len();
        if vw.dim() != (n, 1) || adj.shape() != (n, n) {
            return Err(dim_err("sparse_permute_adj", vw.dim(), adj.shape()));
        }
        let mut out = Array2::zeros((n, n));
        for (a, b, val) in adj.iter() {
            out[[rank_of[a], rank_of[b]]] += vw[[a, 0]] * val * vw[[b, 0]];
        }
        Ok(self.push(
            out,
            Op::SparsePermuteAdj {
                w,
                adj: Arc::clone(adj),
                rank_of: rank_of.to_vec(),
            },
            &[w],
        ))
    }

    /// Row-wise standardisation without affine terms.
    pub fn layer_norm(&mut self, x: Var, eps: f64) -> Var {
        let v = self.value(x);
        let c = v.ncols() as f64;
        let mut xhat = v.clone();
        let mut inv_std = Vec::with_capacity(v.nrows());
        for mut row in xhat.axis_iter_mut(Axis(0)) {
            let mu = row.sum() / c;
            let var = row.iter().map(|&a| (a - mu) * (a - mu)).sum::<f64>() / c;
            let is = 1.0 / (var + eps).sqrt();
            row.mapv_inplace(|a| (a - mu) * is);
            inv_std.push(is);
        }
        let out = xhat.clone();
        self.push(out, Op::LayerNorm { x, xhat, inv_std }, &[x])
    }

    /// Mean softmax cross-entropy of B×C logits against class indices.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let v = self.value(logits);
        if v.nrows() != labels.len() {
            return Err(dim_err("cross_entropy", v.dim(), (labels.len(), v.ncols())));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= v.ncols()) {
            return Err(CocnError::Bounds {
                index: bad,
                n: v.ncols(),
            });
        }
        let mut probs = v.clone();
        let mut loss = 0.0;
        for (r, mut row) in probs.axis_iter_mut(Axis(0)).enumerate() {
            let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            row.mapv_inplace(|a| (a - m).exp());
            let z = row.sum();
            row /= z;
            loss -= (v[[r, labels[r]]] - m) - z.ln();
        }
        let out = Array2::from_elem((1, 1), loss / labels.len() as f64);
        Ok(self.push(
            out,
            Op::CrossEntropy {
                logits,
                probs,
                labels: labels.to_vec(),
            },
            &[logits],
        ))
    }

    /// Mean binary cross-entropy of B×1 logits against targets in [0, 1].
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[f64]) -> Result<Var> {
        let v = self.value(logits);
        if v.dim() != (targets.len(), 1) {
            return Err(dim_err("bce_with_logits", v.dim(), (targets.len(), 1)));
        }
        let loss: f64 = targets
            .iter()
            .enumerate()
            .map(|(r, &y)| {
                let x = v[[r, 0]];
                x.max(0.0) - x * y + (-x.abs()).exp().ln_1p()
            })
            .sum();
        let out = Array2::from_elem((1, 1), loss / targets.len() as f64);
        Ok(self.push(
            out,
            Op::BceWithLogits {
                logits,
                targets: targets.to_vec(),
            },
            &[logits],
        ))
    }

    /// `x · w + b` with `w` of shape in×out and `b` of shape 1×out.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = self.matmul(x, w)?;
        self.add_row(y, b)
    }
}
