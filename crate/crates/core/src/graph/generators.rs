//! Synthetic graph families used by the experiments.

use ndarray::Array2;
use rand::seq::index::sample;
use rand::Rng;
use std::collections::BTreeSet;

use super::Graph;
use crate::error::{CocnError, Result};

/// Cycle on `n` nodes with unit-circle coordinates as features.
pub fn ring_graph(n: usize) -> Result<Graph> {
    if n < 3 {
        return Err(CocnError::Size(format!(
            "a ring needs at least 3 nodes, got {n}"
        )));
    }
    let edges = (0..n).map(|i| (i, (i + 1) % n));
    let mut x = Array2::zeros((n, 2));
    for i in 0..n {
        let t = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
        x[[i, 0]] = t.cos();
        x[[i, 1]] = t.sin();
    }
    Graph::new(n, edges)?.with_features(x)
}

/// `rows x cols` lattice; node `r * cols + c` carries coordinates scaled to [0, 1].
pub fn grid_graph(rows: usize, cols: usize) -> Result<Graph> {
    if rows == 0 || cols == 0 {
        return Err(CocnError::Size("grid dimensions must be positive".into()));
    }
    let id = |r: usize, c: usize| r * cols + c;
    let mut edges = Vec::new();
    let mut x = Array2::zeros((rows * cols, 2));
    let norm = |v: usize, len: usize| {
        if len > 1 {
            v as f64 / (len - 1) as f64
        } else {
            0.0
        }
    };
    for r in 0..rows {
        for c in 0..cols {
            if c + 1 < cols {
                edges.push((id(r, c), id(r, c + 1)));
            }
            if r + 1 < rows {
                edges.push((id(r, c), id(r + 1, c)));
            }
            x[[id(r, c), 0]] = norm(r, rows);
            x[[id(r, c), 1]] = norm(c, cols);
        }
    }
    Graph::new(rows * cols, edges)?.with_features(x)
}

/// Uniform `G(n, m)` graph with `m = round(n * avg_degree / 2)` edges.
pub fn erdos_renyi<R: Rng + ?Sized>(n: usize, avg_degree: f64, rng: &mut R) -> Result<Graph> {
    let max_edges = n * n.saturating_sub(1) / 2;
    let m = ((n as f64 * avg_degree) / 2.0).round() as usize;
    if m > max_edges {
        return Err(CocnError::Size(format!(
            "{m} edges requested but only {max_edges} possible on {n} nodes"
        )));
    }
    let mut set = BTreeSet::new();
    if 2 * m > max_edges {
        // Dense regime: sample edge indices directly.
        for k in sample(rng, max_edges, m) {
            set.insert(unrank_pair(k));
        }
    } else {
        while set.len() < m {
            let a = rng.gen_range(0..n);
            let b = rng.gen_range(0..n);
            if a != b {
                set.insert((a.min(b), a.max(b)));
            }
        }
    }
    Graph::new(n, set)
}

/// Each pair present independently with probability `p`.
pub fn random_gnp<R: Rng + ?Sized>(n: usize, p: f64, rng: &mut R) -> Result<Graph> {
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.gen::<f64>() < p {
                edges.push((i, j));
            }
        }
    }
    Graph::new(n, edges)
}

/// A random spanning tree (node `i` attaches to a uniform earlier node) plus
/// independent extra edges with probability `p`. Always connected.
pub fn random_connected<R: Rng + ?Sized>(n: usize, p: f64, rng: &mut R) -> Result<Graph> {
    let mut edges = Vec::new();
    for j in 1..n {
        edges.push((rng.gen_range(0..j), j));
    }
    for i in 0..n {
        for j in i + 1..n {
            if rng.gen::<f64>() < p {
                edges.push((i, j));
            }
        }
    }
    Graph::new(n, edges)
}

// Index k over pairs (i, j), i < j, ordered by j then i.
fn unrank_pair(k: usize) -> (usize, usize) {
    let mut j = ((((8 * k + 1) as f64).sqrt() + 1.0) / 2.0) as usize;
    while j * (j - 1) / 2 > k {
        j -= 1;
    }
    while (j + 1) * j / 2 <= k {
        j += 1;
    }
    (k - j * (j - 1) / 2, j)
}
