use std::sync::Arc;

use ndarray::Array2;

use super::{Model, ModelConfig, PositionMode, PreparedGraph};
use crate::error::{CocnError, Result};
use crate::graph::{normalized_adjacency, shortest_path_distances_default, Graph};
use crate::permutation::{ranks_of, regress_position_implicit};

/// Windows of `b` consecutive entries of `order`, one starting at every
/// position, wrapping around the end.
pub fn segment_windows(order: &[usize], b: usize) -> Result<Vec<Vec<usize>>> {
    let n = order.len();
    if b == 0 || b > n {
        return Err(CocnError::Config(format!(
            "segment size {b} must lie in [1, {n}]"
        )));
    }
    Ok((0..n)
        .map(|i| (0..b).map(|j| order[(i + j) % n]).collect())
        .collect())
}

/// A batch of segments cut from one globally sorted graph.
#[derive(Debug, Clone)]
pub struct SegmentBatch {
    /// First node of each segment; the node a node-level prediction is for.
    pub anchor_nodes: Vec<usize>,
    /// Original node ids of each segment, in sorted order.
    pub nodes: Vec<Vec<usize>>,
    pub x_b: Vec<Array2<f64>>,
    /// Induced adjacency of each segment.
    pub a_b: Vec<Array2<f64>>,
    /// Global positions of the segment nodes, one row per segment.
    pub r_a_b: Array2<f64>,
}

impl SegmentBatch {
    pub fn len(&self) -> usize {
        self.anchor_nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchor_nodes.is_empty()
    }

    fn from_windows(prep: &PreparedGraph, positions: &[f64], windows: &[Vec<usize>]) -> Self {
        let b = windows.first().map_or(0, Vec::len);
        let mut r_a_b = Array2::zeros((windows.len(), b));
        let mut x_b = Vec::with_capacity(windows.len());
        let mut a_b = Vec::with_capacity(windows.len());
        for (s, nodes) in windows.iter().enumerate() {
            let mut x = Array2::zeros((b, prep.x.ncols()));
            let mut a = Array2::zeros((b, b));
            for (p, &u) in nodes.iter().enumerate() {
                x.row_mut(p).assign(&prep.x.row(u));
                r_a_b[[s, p]] = positions[u];
                for (v, w) in prep.adj.row(u) {
                    if let Some(q) = nodes.iter().position(|&t| t == v) {
                        a[[p, q]] = w;
                    }
                }
            }
            x_b.push(x);
            a_b.push(a);
        }
        SegmentBatch {
            anchor_nodes: windows.iter().map(|w| w[0]).collect(),
            nodes: windows.to_vec(),
            x_b,
            a_b,
            r_a_b,
        }
    }

    /// Operators for segment `i` as a standalone graph.
    pub(crate) fn prepare(&self, cfg: &ModelConfig, i: usize) -> Result<PreparedGraph> {
        let a = &self.a_b[i];
        let b = a.nrows();
        let edges = (0..b).flat_map(|p| {
            ((p + 1)..b)
                .filter(move |&q| a[[p, q]] != 0.0)
                .map(move |q| (p, q))
        });
        let g = Graph::new(b, edges)?;
        let implicit = match cfg.position_mode {
            PositionMode::Implicit => Some(regress_position_implicit(
                &shortest_path_distances_default(&g),
                cfg.heads,
            )?),
            PositionMode::Explicit => None,
        };
        Ok(PreparedGraph {
            x: self.x_b[i].clone(),
            adj: Arc::new(g.adjacency_csr()),
            a_norm: Arc::new(normalized_adjacency(&g)),
            implicit,
        })
    }
}

impl Model {
    /// Sorts the graph once by its global positions and cuts all `n`
    /// segments, grouped into batches of `segment_batch_nb`.
    pub fn segment_batches(&self, prep: &PreparedGraph) -> Result<Vec<SegmentBatch>> {
        let (positions, order) = self.global_order(prep)?;
        let windows = segment_windows(&order, self.cfg.segment_b)?;
        Ok(self.batch_windows(prep, &positions, &windows))
    }

    /// Segments anchored at the given nodes, in the given order.
    pub fn segment_batches_for(
        &self,
        prep: &PreparedGraph,
        anchors: &[usize],
    ) -> Result<Vec<SegmentBatch>> {
        let (positions, order) = self.global_order(prep)?;
        let n = order.len();
        let b = self.cfg.segment_b;
        if b > n {
            return Err(CocnError::Config(format!(
                "segment size {b} exceeds {n} nodes"
            )));
        }
        let mut rank = vec![0; n];
        for (r, &v) in order.iter().enumerate() {
            rank[v] = r;
        }
        let mut windows = Vec::with_capacity(anchors.len());
        for &a in anchors {
            if a >= n {
                return Err(CocnError::Bounds { index: a, n });
            }
            windows.push((0..b).map(|j| order[(rank[a] + j) % n]).collect());
        }
        Ok(self.batch_windows(prep, &positions, &windows))
    }

    fn global_order(&self, prep: &PreparedGraph) -> Result<(Vec<f64>, Vec<usize>)> {
        let positions = self.global_positions(prep)?;
        let ranks = ranks_of(&positions);
        let mut order = vec![0; ranks.len()];
        for (node, &r) in ranks.iter().enumerate() {
            order[r] = node;
        }
        Ok((positions, order))
    }

    fn batch_windows(
        &self,
        prep: &PreparedGraph,
        positions: &[f64],
        windows: &[Vec<usize>],
    ) -> Vec<SegmentBatch> {
        windows
            .chunks(self.cfg.segment_batch_nb)
            .map(|w| SegmentBatch::from_windows(prep, positions, w))
            .collect()
    }
}
