//! Learned node orderings: position regression, ranking and the relaxed or
//! sparse permutation matrices built from the ranks.

use std::sync::Arc;

use log::warn;
use nalgebra::{DMatrix, DVector};
use ndarray::{Array2, Axis};

use crate::autodiff::{Tape, Var};
use crate::error::{CocnError, Result};
use crate::graph::{CsrMatrix, DistanceMatrix};

pub use crate::autodiff::ranks_of;

/// Jitter scale separating the implicit-position heads.
pub const HEAD_JITTER: f64 = 1e-4;
/// Grid onto which implicit positions are snapped before ranking.
const SNAP: f64 = 1e-9;
const RIDGE: f64 = 1e-8;

/// MLP weights for explicit position regression, already on a tape.
///
/// Hidden layers use ReLU; the final projection is linear and has one output
/// column per head.
#[derive(Debug, Clone)]
pub struct PositionMlp {
    pub layers: Vec<(Var, Var)>,
}

/// `r_A = Ã^t · MLP(x)`, one column per head.
pub fn regress_position_explicit(
    tape: &mut Tape,
    x: Var,
    a_norm: &Arc<CsrMatrix>,
    mlp: &PositionMlp,
    t: usize,
) -> Result<Var> {
    let mut h = x;
    let last = mlp.layers.len().saturating_sub(1);
    for (i, &(w, b)) in mlp.layers.iter().enumerate() {
        h = tape.linear(h, w, b)?;
        if i < last {
            h = tape.relu(h);
        }
    }
    for _ in 0..t {
        h = tape.spmm(a_norm, h)?;
    }
    Ok(h)
}

/// Least-squares positions from scaled distances, one column per head.
///
/// Each ordered pair `(i, j)`, `i ≠ j`, contributes the residual
/// `((2/n) d_ij − 1) r_i + r_j − d_ij`. The normal equations are solved
/// directly; head `h` then adds `h · 1e-4 · i / n` to node `i`.
pub fn regress_position_implicit(dist: &DistanceMatrix, heads: usize) -> Result<Array2<f64>> {
    let d = &dist.d_scaled;
    let n = d.nrows();
    if d.ncols() != n {
        return Err(CocnError::Dimension {
            op: "regress_position_implicit",
            lhs: d.dim(),
            rhs: (n, n),
        });
    }
    let base = implicit_solve(d)?;
    let mut out = Array2::zeros((n, heads.max(1)));
    for (h, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
        for i in 0..n {
            let snapped = (base[i] / SNAP).round() * SNAP;
            col[i] = snapped + h as f64 * HEAD_JITTER * i as f64 / n as f64;
        }
    }
    Ok(out)
}

/// Normal equations `L r = b` with
/// `L = diag(((2/n)d − 1)^∘2 1) + (4/n)d − 2J + nI` and `b = (2/n)(d^∘2) 1`.
pub fn implicit_normal_equations(d: &Array2<f64>) -> (Array2<f64>, Vec<f64>) {
    let n = d.nrows();
    let nf = n as f64;
    let mut lhs = Array2::zeros((n, n));
    let mut rhs = vec![0.0; n];
    for k in 0..n {
        let mut diag = 0.0;
        for j in 0..n {
            let a = 2.0 / nf * d[[k, j]] - 1.0;
            diag += a * a;
            rhs[k] += 2.0 / nf * d[[k, j]] * d[[k, j]];
            if j != k {
                lhs[[k, j]] = 4.0 / nf * d[[k, j]] - 2.0;
            }
        }
        lhs[[k, k]] = diag + nf - 2.0;
    }
    (lhs, rhs)
}

fn implicit_solve(d: &Array2<f64>) -> Result<Vec<f64>> {
    let n = d.nrows();
    if n == 1 {
        return Ok(vec![0.0]);
    }
    let (lhs, rhs) = implicit_normal_equations(d);
    let m = DMatrix::from_fn(n, n, |i, j| lhs[[i, j]]);
    let b = DVector::from_vec(rhs);
    if let Some(chol) = m.clone().cholesky() {
        let x = chol.solve(&b);
        if x.iter().all(|v| v.is_finite()) {
            return Ok(x.iter().copied().collect());
        }
    }
    warn!("implicit position system is singular; solving with ridge {RIDGE}");
    let ridged = m + DMatrix::identity(n, n) * RIDGE;
    ridged
        .lu()
        .solve(&b)
        .map(|x| x.iter().copied().collect())
        .ok_or_else(|| {
            CocnError::Size("implicit position system is singular even with ridge".into())
        })
}

/// How ranks are differentiated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RankGrad {
    /// Pairwise sigmoid-of-ReLU surrogate, `O(n²)`.
    Dense,
    /// First-order rank approximation, `O(n log n)`.
    Sparse,
}

/// Ranks of an n×1 position column.
pub fn absolute_position(tape: &mut Tape, ra: Var, grad: RankGrad) -> Result<Var> {
    match grad {
        RankGrad::Dense => tape.abs_pos_dense(ra),
        RankGrad::Sparse => tape.rank_approx(ra),
    }
}

/// Hard 0/1 permutation with ones at `(rank_of[j], j)`.
pub fn hard_permutation(rank_of: &[usize]) -> Array2<f64> {
    let n = rank_of.len();
    let mut p = Array2::zeros((n, n));
    for (j, &r) in rank_of.iter().enumerate() {
        p[[r, j]] = 1.0;
    }
    p
}

/// Rank map plus a gradient-carrying weight `w_j = exp(Rank_j − r_j)`,
/// identically 1 in the forward pass.
#[derive(Debug, Clone)]
pub struct SparsePermutation {
    pub rank_of: Vec<usize>,
    /// `order[i]` is the node placed at position `i`.
    pub order: Vec<usize>,
    pub weight: Var,
}

pub fn sparse_permutation(tape: &mut Tape, ra: Var) -> Result<SparsePermutation> {
    let r = tape.rank_approx(ra)?;
    let rank_of: Vec<usize> = tape.value(r).iter().map(|&v| v as usize).collect();
    let frozen = tape.constant(tape.value(r).clone());
    let diff = tape.sub(frozen, r)?;
    let weight = tape.exp(diff);
    let mut order = vec![0; rank_of.len()];
    for (j, &rk) in rank_of.iter().enumerate() {
        order[rk] = j;
    }
    Ok(SparsePermutation {
        rank_of,
        order,
        weight,
    })
}

/// A permutation ready to apply to node features and adjacency.
#[derive(Debug, Clone)]
pub enum Permutation {
    /// Relaxed n×n matrix `P̂`.
    Dense(Var),
    Sparse(SparsePermutation),
}

impl Permutation {
    /// Builds the permutation for one n×1 position column.
    pub fn from_positions(tape: &mut Tape, ra: Var, tau: f64, sparse: bool) -> Result<Self> {
        if sparse {
            return Ok(Permutation::Sparse(sparse_permutation(tape, ra)?));
        }
        let r = absolute_position(tape, ra, RankGrad::Dense)?;
        Ok(Permutation::Dense(tape.relaxed_perm(r, tau)?))
    }

    pub fn size(&self, tape: &Tape) -> usize {
        match self {
            Permutation::Dense(p) => tape.shape(*p).0,
            Permutation::Sparse(s) => s.rank_of.len(),
        }
    }

    /// `(P X, P A Pᵀ)`; the adjacency comes back dense.
    pub fn permute(&self, tape: &mut Tape, x: Var, adj: &Arc<CsrMatrix>) -> Result<(Var, Var)> {
        let n = self.size(tape);
        if tape.shape(x).0 != n || adj.shape() != (n, n) {
            return Err(CocnError::Dimension {
                op: "permute",
                lhs: (n, n),
                rhs: tape.shape(x),
            });
        }
        match self {
            Permutation::Dense(p) => {
                let xh = tape.matmul(*p, x)?;
                let pa = tape.mul_sparse(*p, adj)?;
                let ah = tape.matmul_nt(pa, *p)?;
                Ok((xh, ah))
            }
            Permutation::Sparse(sp) => {
                let scaled = tape.mul_col(x, sp.weight)?;
                let xh = tape.gather_rows(scaled, &sp.order)?;
                let ah = tape.sparse_permute_adj(sp.weight, adj, &sp.rank_of)?;
                Ok((xh, ah))
            }
        }
    }

    /// Maps sequence-ordered rows back to node order: `Pᵀ H`.
    pub fn unpermute(&self, tape: &mut Tape, h: Var) -> Result<Var> {
        match self {
            Permutation::Dense(p) => tape.matmul_tn(*p, h),
            Permutation::Sparse(sp) => {
                let back = tape.gather_rows(h, &sp.rank_of)?;
                tape.mul_col(back, sp.weight)
            }
        }
    }
}

#[cfg(test)]
mod tests;
