//! Reverse-mode differentiation over dense `f64` matrices.
//!
//! A [`Tape`] records every operation in creation order. Calling
//! [`Tape::backward`] on a scalar walks the record in reverse, accumulating
//! gradients into the inputs of each node. Leaf gradients are kept; gradients
//! of intermediate nodes are dropped as soon as they have been propagated.

mod check;
mod ops;
mod optim;

pub use check::{finite_difference_check, finite_difference_check_many, primitive_gradient_suite};
pub use ops::ranks_of;
pub use optim::{adam_step, AdamConfig, Parameter};

use std::sync::Arc;

use ndarray::{s, Array2, Axis, Zip};

use crate::error::{CocnError, Result};
use crate::graph::CsrMatrix;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
pub(crate) enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    MatMulTN(Var, Var),
    SpMatMul(Arc<CsrMatrix>, Var),
    MatMulSp(Var, Arc<CsrMatrix>),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Transpose(Var),
    Relu(Var),
    Sigmoid(Var),
    Exp(Var),
    Sum(Var),
    Mean(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Slice {
        x: Var,
        r0: usize,
        c0: usize,
    },
    GatherRows {
        x: Var,
        idx: Vec<usize>,
    },
    GatherSquare {
        x: Var,
        idx: Vec<usize>,
    },
    MaxRows {
        x: Var,
        argmax: Vec<usize>,
    },
    MaxPool2d {
        x: Var,
        argmax: Vec<(usize, usize)>,
    },
    AvgPool1d {
        x: Var,
        k: usize,
        s: usize,
    },
    Dilate1d {
        x: Var,
        s: usize,
    },
    PadRowsEdge {
        x: Var,
        left: usize,
    },
    FoldRows {
        x: Var,
        k: usize,
        s: usize,
    },
    DiagUnfold {
        x: Var,
        k: usize,
        s: usize,
    },
    RowUnfold {
        x: Var,
        k: usize,
        s: usize,
    },
    Tri {
        x: Var,
        k: usize,
    },
    SignSurrogate(Var),
    ModShift(Var),
    OuterDiff(Var, Var),
    AbsPosDense(Var),
    RankApprox {
        x: Var,
        ranks: Vec<usize>,
    },
    RelaxedPerm {
        r: Var,
        tau: f64,
    },
    SparsePermuteAdj {
        w: Var,
        adj: Arc<CsrMatrix>,
        rank_of: Vec<usize>,
    },
    LayerNorm {
        x: Var,
        xhat: Array2<f64>,
        inv_std: Vec<f64>,
    },
    CrossEntropy {
        logits: Var,
        probs: Array2<f64>,
        labels: Vec<usize>,
    },
    BceWithLogits {
        logits: Var,
        targets: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Array2<f64>,
    op: Op,
    needs_grad: bool,
}

/// Record of a computation, owning every intermediate value.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Array2<f64>>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A differentiable input.
    pub fn var(&mut self, value: Array2<f64>) -> Var {
        self.push_raw(value, Op::Leaf, true)
    }

    /// A non-differentiable input.
    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push_raw(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Gradient of the last `backward` call with respect to a leaf.
    pub fn grad(&self, v: Var) -> Option<&Array2<f64>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Array2<f64>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }

    fn push_raw(&mut self, value: Array2<f64>, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub(crate) fn push(&mut self, value: Array2<f64>, op: Op, inputs: &[Var]) -> Var {
        let needs = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.push_raw(value, op, needs)
    }

    /// Back-propagates from a 1×1 node. Previous gradients are discarded.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        let shape = self.shape(root);
        if shape != (1, 1) {
            return Err(CocnError::Dimension {
                op: "backward (scalar root)",
                lhs: shape,
                rhs: (1, 1),
            });
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[root.0] = Some(Array2::ones((1, 1)));
        for i in (0..=root.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            if matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            self.propagate(i, g);
        }
        Ok(())
    }

    fn acc(&mut self, v: Var, g: Array2<f64>) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut self.grads[v.0] {
            Some(existing) => *existing += &g,
            slot @ None => *slot = Some(g),
        }
    }

    fn acc_with(&mut self, v: Var, f: impl FnOnce(&mut Array2<f64>)) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        let dim = self.nodes[v.0].value.dim();
        let slot = self.grads[v.0].get_or_insert_with(|| Array2::zeros(dim));
        f(slot);
    }

    fn val(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    fn propagate(&mut self, i: usize, g: Array2<f64>) {
        // Temporarily move the op out so inputs can be borrowed mutably.
        let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
        match &op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.needs_grad(*a) {
                    let ga = g.dot(&self.val(*b).t());
                    self.acc(*a, ga);
                }
                if self.needs_grad(*b) {
                    let gb = self.val(*a).t().dot(&g);
                    self.acc(*b, gb);
                }
            }
            Op::MatMulNT(a, b) => {
                if self.needs_grad(*a) {
                    let ga = g.dot(self.val(*b));
                    self.acc(*a, ga);
                }
                if self.needs_grad(*b) {
                    let gb = g.t().dot(self.val(*a));
                    self.acc(*b, gb);
                }
            }
            Op::MatMulTN(a, b) => {
                if self.needs_grad(*a) {
                    let ga = self.val(*b).dot(&g.t());
                    self.acc(*a, ga);
                }
                if self.needs_grad(*b) {
                    let gb = self.val(*a).dot(&g);
                    self.acc(*b, gb);
                }
            }
            Op::SpMatMul(m, x) => {
                let gx = m.transpose().mul_dense(&g);
                self.acc(*x, gx);
            }
            Op::MatMulSp(x, m) => {
                let gx = m.transpose().left_mul_dense(&g);
                self.acc(*x, gx);
            }
            Op::Add(a, b) => {
                self.acc(*b, g.clone());
                self.acc(*a, g);
            }
            Op::Sub(a, b) => {
                self.acc(*b, -&g);
                self.acc(*a, g);
            }
            Op::Mul(a, b) => {
                let ga = &g * self.val(*b);
                let gb = &g * self.val(*a);
                self.acc(*a, ga);
                self.acc(*b, gb);
            }
            Op::AddRow(a, b) => {
                let gb = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                self.acc(*b, gb);
                self.acc(*a, g);
            }
            Op::MulRow(a, b) => {
                let gb = (&g * self.val(*a)).sum_axis(Axis(0)).insert_axis(Axis(0));
                let ga = &g * self.val(*b);
                self.acc(*a, ga);
                self.acc(*b, gb);
            }
            Op::MulCol(a, w) => {
                let gw = (&g * self.val(*a)).sum_axis(Axis(1)).insert_axis(Axis(1));
                let ga = &g * self.val(*w);
                self.acc(*a, ga);
                self.acc(*w, gw);
            }
            Op::Scale(a, c) => self.acc(*a, g * *c),
            Op::AddScalar(a) | Op::ModShift(a) => self.acc(*a, g),
            Op::Transpose(a) => self.acc(*a, g.t().to_owned()),
            Op::Relu(a) => {
                let mut ga = g;
                Zip::from(&mut ga)
                    .and(&self.nodes[i].value)
                    .for_each(|gv, &y| {
                        if y <= 0.0 {
                            *gv = 0.0;
                        }
                    });
                self.acc(*a, ga);
            }
            Op::Sigmoid(a) => {
                let y = &self.nodes[i].value;
                let ga = &g * &y.mapv(|v| v * (1.0 - v));
                self.acc(*a, ga);
            }
            Op::Exp(a) => {
                let ga = &g * &self.nodes[i].value;
                self.acc(*a, ga);
            }
            Op::Sum(a) => {
                let dim = self.val(*a).dim();
                self.acc(*a, Array2::from_elem(dim, g[[0, 0]]));
            }
            Op::Mean(a) => {
                let dim = self.val(*a).dim();
                let n = (dim.0 * dim.1) as f64;
                self.acc(*a, Array2::from_elem(dim, g[[0, 0]] / n));
            }
            Op::ConcatCols(parts) => {
                let mut c0 = 0;
                for &p in parts {
                    let w = self.val(p).ncols();
                    self.acc(p, g.slice(s![.., c0..c0 + w]).to_owned());
                    c0 += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut r0 = 0;
                for &p in parts {
                    let h = self.val(p).nrows();
                    self.acc(p, g.slice(s![r0..r0 + h, ..]).to_owned());
                    r0 += h;
                }
            }
            Op::Slice { x, r0, c0 } => {
                let (r, c) = g.dim();
                let (r0, c0) = (*r0, *c0);
                self.acc_with(*x, |acc| {
                    let mut view = acc.slice_mut(s![r0..r0 + r, c0..c0 + c]);
                    view += &g;
                });
            }
            Op::GatherRows { x, idx } => self.acc_with(*x, |acc| {
                for (row, &src) in idx.iter().enumerate() {
                    let mut dst = acc.row_mut(src);
                    dst += &g.row(row);
                }
            }),
            Op::GatherSquare { x, idx } => self.acc_with(*x, |acc| {
                for (p, &ip) in idx.iter().enumerate() {
                    for (q, &iq) in idx.iter().enumerate() {
                        acc[[ip, iq]] += g[[p, q]];
                    }
                }
            }),
            Op::MaxRows { x, argmax } => self.acc_with(*x, |acc| {
                for (c, &r) in argmax.iter().enumerate() {
                    acc[[r, c]] += g[[0, c]];
                }
            }),
            Op::MaxPool2d { x, argmax } => {
                let cols = g.ncols();
                self.acc_with(*x, |acc| {
                    for (flat, &(r, c)) in argmax.iter().enumerate() {
                        acc[[r, c]] += g[[flat / cols, flat % cols]];
                    }
                });
            }
            Op::AvgPool1d { x, k, s } => {
                let (k, s) = (*k, *s);
                let inv = 1.0 / k as f64;
                self.acc_with(*x, |acc| {
                    for j in 0..g.nrows() {
                        for p in 0..k {
                            acc.row_mut(s * j + p).scaled_add(inv, &g.row(j));
                        }
                    }
                });
            }
            Op::Dilate1d { x, s } => {
                let n = self.val(*x).nrows();
                let gx = g.select(Axis(0), &(0..n).map(|i| i * s).collect::<Vec<_>>());
                self.acc(*x, gx);
            }
            Op::PadRowsEdge { x, left } => {
                let n = self.val(*x).nrows();
                let left = *left;
                self.acc_with(*x, |acc| {
                    for r in 0..g.nrows() {
                        let src = r.saturating_sub(left).min(n - 1);
                        let mut dst = acc.row_mut(src);
                        dst += &g.row(r);
                    }
                });
            }
            Op::FoldRows { x, k, s } => {
                let (rows, width) = self.val(*x).dim();
                let c = width / k;
                let mut gx = Array2::zeros((rows, width));
                for j in 0..rows {
                    for p in 0..*k {
                        gx.slice_mut(s![j, p * c..(p + 1) * c])
                            .assign(&g.row(s * j + p));
                    }
                }
                self.acc(*x, gx);
            }
            Op::DiagUnfold { x, k, s } => {
                let (k, s) = (*k, *s);
                self.acc_with(*x, |acc| {
                    for j in 0..g.nrows() {
                        let i = s * j;
                        for p in 0..k {
                            for q in 0..k {
                                acc[[i + p, i + q]] += g[[j, p * k + q]];
                            }
                        }
                    }
                });
            }
            Op::RowUnfold { x, k, s } => {
                let d = self.val(*x).ncols();
                let (k, s) = (*k, *s);
                self.acc_with(*x, |acc| {
                    for j in 0..g.nrows() {
                        for p in 0..k {
                            let mut dst = acc.row_mut(s * j + p);
                            dst += &g.slice(s![j, p * d..(p + 1) * d]);
                        }
                    }
                });
            }
            Op::Tri { x, k } => {
                let mut gx = g;
                ops::band_zero(&mut gx, *k);
                self.acc(*x, gx);
            }
            Op::SignSurrogate(a) => {
                let ga = Zip::from(&g)
                    .and(self.val(*a))
                    .map_collect(|&gv, &x| gv * ops::surrogate_slope(x));
                self.acc(*a, ga);
            }
            Op::OuterDiff(a, b) => {
                let ga = g.sum_axis(Axis(1)).insert_axis(Axis(1));
                let gb = -g.sum_axis(Axis(0)).insert_axis(Axis(1));
                self.acc(*a, ga);
                self.acc(*b, gb);
            }
            Op::AbsPosDense(a) => {
                let ga = ops::abs_pos_dense_backward(self.val(*a), &g);
                self.acc(*a, ga);
            }
            Op::RankApprox { x, ranks } => {
                let ga = ops::rank_approx_backward(ranks, &g);
                self.acc(*x, ga);
            }
            Op::RelaxedPerm { r, tau } => {
                let p = &self.nodes[i].value;
                let gr = (&g * p).sum_axis(Axis(0)).insert_axis(Axis(1)) * *tau;
                self.acc(*r, gr);
            }
            Op::SparsePermuteAdj { w, adj, rank_of } => {
                let wv = self.val(*w);
                let mut gw = Array2::zeros(wv.dim());
                for (a, b, v) in adj.iter() {
                    let gab = g[[rank_of[a], rank_of[b]]] * v;
                    gw[[a, 0]] += gab * wv[[b, 0]];
                    gw[[b, 0]] += gab * wv[[a, 0]];
                }
                self.acc(*w, gw);
            }
            Op::LayerNorm { x, xhat, inv_std } => {
                let c = xhat.ncols() as f64;
                let mut gx = Array2::zeros(xhat.dim());
                for (r, mut row) in gx.axis_iter_mut(Axis(0)).enumerate() {
                    let gr = g.row(r);
                    let xr = xhat.row(r);
                    let sum_g = gr.sum();
                    let sum_gx = gr.dot(&xr);
                    for col in 0..row.len() {
                        row[col] = inv_std[r] / c * (c * gr[col] - sum_g - xr[col] * sum_gx);
                    }
                }
                self.acc(*x, gx);
            }
            Op::CrossEntropy {
                logits,
                probs,
                labels,
            } => {
                let b = labels.len() as f64;
                let mut gl = probs.clone();
                for (r, &y) in labels.iter().enumerate() {
                    gl[[r, y]] -= 1.0;
                }
                self.acc(*logits, gl * (g[[0, 0]] / b));
            }
            Op::BceWithLogits { logits, targets } => {
                let b = targets.len() as f64;
                let x = self.val(*logits);
                let mut gl = Array2::zeros(x.dim());
                for (r, &y) in targets.iter().enumerate() {
                    gl[[r, 0]] = (ops::sigmoid(x[[r, 0]]) - y) * g[[0, 0]] / b;
                }
                self.acc(*logits, gl);
            }
        }
        self.nodes[i].op = op;
    }
}

pub(crate) fn dim_err(op: &'static str, lhs: (usize, usize), rhs: (usize, usize)) -> CocnError {
    CocnError::Dimension { op, lhs, rhs }
}
