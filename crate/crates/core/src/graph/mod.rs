//! Graph data model, dataset loaders and precomputed graph operators.

mod generators;
mod io;
mod ops;
mod sparse;

pub use generators::{erdos_renyi, grid_graph, random_connected, random_gnp, ring_graph};
pub use io::{
    load_edge_list, load_graph6, load_tu_dataset, parse_edge_list, parse_graph6_line,
    write_edge_list, write_graph6_line,
};
pub use ops::{
    degree_onehot_features, normalized_adjacency, shortest_path_distances,
    shortest_path_distances_default,
};
pub use sparse::CsrMatrix;

use std::collections::BTreeSet;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{CocnError, Result};

/// Undirected simple graph with optional node features and labels.
///
/// Edges are stored once as `(i, j)` with `i < j`, sorted, without
/// duplicates or self-loops.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    n: usize,
    edges: Vec<(usize, usize)>,
    features: Option<Array2<f64>>,
    graph_label: Option<usize>,
    node_labels: Option<Vec<usize>>,
}

impl Graph {
    /// Creates a graph, normalising the edge list. Self-loops are dropped.
    pub fn new(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        if n == 0 {
            return Err(CocnError::Size("a graph needs at least one node".into()));
        }
        let mut set = BTreeSet::new();
        for (a, b) in edges {
            for idx in [a, b] {
                if idx >= n {
                    return Err(CocnError::Bounds { index: idx, n });
                }
            }
            if a != b {
                set.insert((a.min(b), a.max(b)));
            }
        }
        Ok(Graph {
            n,
            edges: set.into_iter().collect(),
            features: None,
            graph_label: None,
            node_labels: None,
        })
    }

    pub fn with_features(mut self, features: Array2<f64>) -> Result<Self> {
        if features.nrows() != self.n {
            return Err(CocnError::Dimension {
                op: "graph features",
                lhs: (self.n, 0),
                rhs: features.dim(),
            });
        }
        self.features = Some(features);
        Ok(self)
    }

    pub fn with_graph_label(mut self, label: usize) -> Self {
        self.graph_label = Some(label);
        self
    }

    pub fn with_node_labels(mut self, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != self.n {
            return Err(CocnError::Dimension {
                op: "node labels",
                lhs: (self.n, 1),
                rhs: (labels.len(), 1),
            });
        }
        self.node_labels = Some(labels);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn features(&self) -> Option<&Array2<f64>> {
        self.features.as_ref()
    }

    pub fn graph_label(&self) -> Option<usize> {
        self.graph_label
    }

    pub fn node_labels(&self) -> Option<&[usize]> {
        self.node_labels.as_deref()
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.n];
        for &(a, b) in &self.edges {
            deg[a] += 1;
            deg[b] += 1;
        }
        deg
    }

    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n];
        for &(a, b) in &self.edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        adj
    }

    pub fn adjacency_dense(&self) -> Array2<f64> {
        let mut a = Array2::zeros((self.n, self.n));
        for &(i, j) in &self.edges {
            a[[i, j]] = 1.0;
            a[[j, i]] = 1.0;
        }
        a
    }

    pub fn adjacency_csr(&self) -> CsrMatrix {
        let mut trip = Vec::with_capacity(2 * self.edges.len());
        for &(i, j) in &self.edges {
            trip.push((i, j, 1.0));
            trip.push((j, i, 1.0));
        }
        CsrMatrix::from_triplets(self.n, self.n, &trip)
    }

    /// Dense adjacency of the subgraph induced by `nodes`, in the given order.
    pub fn induced_adjacency(&self, nodes: &[usize]) -> Array2<f64> {
        let mut pos = vec![usize::MAX; self.n];
        for (k, &v) in nodes.iter().enumerate() {
            pos[v] = k;
        }
        let b = nodes.len();
        let mut a = Array2::zeros((b, b));
        for &(i, j) in &self.edges {
            let (pi, pj) = (pos[i], pos[j]);
            if pi != usize::MAX && pj != usize::MAX {
                a[[pi, pj]] = 1.0;
                a[[pj, pi]] = 1.0;
            }
        }
        a
    }

    /// Relabels nodes: old node `i` becomes node `perm[i]`.
    pub fn relabel(&self, perm: &[usize]) -> Result<Graph> {
        if perm.len() != self.n {
            return Err(CocnError::Size(format!(
                "relabeling has length {} for {} nodes",
                perm.len(),
                self.n
            )));
        }
        let mut g = Graph::new(self.n, self.edges.iter().map(|&(a, b)| (perm[a], perm[b])))?;
        if let Some(x) = &self.features {
            let mut y = Array2::zeros(x.dim());
            for (i, &p) in perm.iter().enumerate() {
                y.row_mut(p).assign(&x.row(i));
            }
            g.features = Some(y);
        }
        if let Some(l) = &self.node_labels {
            let mut m = vec![0; self.n];
            for (i, &p) in perm.iter().enumerate() {
                m[p] = l[i];
            }
            g.node_labels = Some(m);
        }
        g.graph_label = self.graph_label;
        Ok(g)
    }
}

/// Learning task a dataset is prepared for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    GraphClassification,
    NodeClassification,
    IsomorphismPairs,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub graphs: Vec<Graph>,
    pub task: Task,
    pub num_classes: usize,
}

impl Dataset {
    pub fn new(graphs: Vec<Graph>, task: Task, num_classes: usize) -> Result<Self> {
        if graphs.is_empty() {
            return Err(CocnError::Integrity("dataset has no graphs".into()));
        }
        for (gi, g) in graphs.iter().enumerate() {
            let bad_graph = g.graph_label.is_some_and(|l| l >= num_classes);
            let bad_node = g
                .node_labels
                .as_ref()
                .is_some_and(|ls| ls.iter().any(|&l| l >= num_classes));
            let out_of_range = match task {
                Task::GraphClassification => bad_graph,
                Task::NodeClassification => bad_node,
                Task::IsomorphismPairs => false,
            };
            if out_of_range {
                return Err(CocnError::Integrity(format!(
                    "graph {gi} carries a label outside [0, {num_classes})"
                )));
            }
        }
        Ok(Dataset {
            graphs,
            task,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    pub fn feature_dim(&self) -> Option<usize> {
        self.graphs[0].features().map(|x| x.ncols())
    }

    pub fn max_degree(&self) -> usize {
        self.graphs
            .iter()
            .flat_map(|g| g.degrees())
            .max()
            .unwrap_or(0)
    }

    /// Fills in one-hot degree features for every graph lacking features.
    pub fn with_degree_features(mut self, max_degree: usize) -> Result<Self> {
        for g in &mut self.graphs {
            if g.features.is_none() {
                g.features = Some(degree_onehot_features(g, max_degree)?);
            }
        }
        Ok(self)
    }
}

/// Scaled all-pairs hop distances.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    pub d_scaled: Array2<f64>,
    pub scale: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_normalises_edges() {
        let g = Graph::new(3, [(1, 0), (0, 1), (2, 2), (2, 1)]).unwrap();
        assert_eq!(g.edges(), &[(0, 1), (1, 2)]);
    }

    #[test]
    fn out_of_range_endpoint_is_rejected() {
        assert!(matches!(
            Graph::new(2, [(0, 2)]),
            Err(CocnError::Bounds { index: 2, n: 2 })
        ));
    }

    #[test]
    fn adjacency_is_symmetric_with_zero_diagonal() {
        let g = Graph::new(4, [(0, 1), (1, 2), (2, 3), (3, 0)]).unwrap();
        let a = g.adjacency_dense();
        assert_eq!(a, a.t());
        assert!((0..4).all(|i| a[[i, i]] == 0.0));
    }

    #[test]
    fn relabel_moves_features_with_nodes() {
        let x = ndarray::array![[1.0], [2.0], [3.0]];
        let g = Graph::new(3, [(0, 1)]).unwrap().with_features(x).unwrap();
        let h = g.relabel(&[2, 0, 1]).unwrap();
        assert_eq!(h.edges(), &[(0, 2)]);
        assert_eq!(
            h.features().unwrap().column(0).to_vec(),
            vec![2.0, 3.0, 1.0]
        );
    }

    #[test]
    fn induced_adjacency_follows_node_order() {
        let g = Graph::new(4, [(0, 1), (1, 2), (2, 3)]).unwrap();
        let a = g.induced_adjacency(&[2, 0, 1]);
        assert_eq!(a[[0, 2]], 1.0);
        assert_eq!(a[[1, 2]], 1.0);
        assert_eq!(a[[0, 1]], 0.0);
    }
}
