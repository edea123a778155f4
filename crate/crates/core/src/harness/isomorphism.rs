//! Pairwise distinguishability of non-isomorphic graphs under randomly
//! initialised models, and brute-force canonical labelling for small graphs.

use ndarray::Array2;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::error::{CocnError, Result};
use crate::graph::{random_gnp, Graph, Task};
use crate::model::{Model, ModelConfig, PositionMode};

/// Parameter budget of the isomorphism protocol.
pub const ISO_PARAM_BUDGET: usize = 30_000;

/// Small implicit-position model used by the protocol.
pub fn iso_model_config(input_dim: usize) -> ModelConfig {
    ModelConfig {
        task: Task::GraphClassification,
        input_dim,
        heads: 4,
        hidden: 32,
        l1: 1,
        l2: 1,
        kernel_sizes: vec![3],
        position_mode: PositionMode::Implicit,
        tau: 1.0,
        ..ModelConfig::default()
    }
}

/// Pooled pre-classifier embedding of `g`.
pub fn graph_embedding(model: &Model, g: &Graph) -> Result<Array2<f64>> {
    let prep = model.prepare(g)?;
    let mut tape = Tape::new();
    let b = model.bind(&mut tape);
    let out = model.forward_graph(&mut tape, &b, &prep, None)?;
    Ok(tape.value(out.embedding).clone())
}

fn max_norm(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsoReport {
    pub pairs: usize,
    /// Pairs closer than `eps` under every seed.
    pub undistinguished: usize,
    pub undistinguished_per_seed: Vec<usize>,
    /// Smallest over pairs of the largest distance across seeds.
    pub min_distance: f64,
    pub num_params: usize,
}

/// Counts pairs whose embeddings stay within `eps` (max-norm) under every
/// seed. Graphs without features get one-hot degree features.
pub fn isomorphism_test(
    pairs: &[(Graph, Graph)],
    cfg: &ModelConfig,
    seeds: &[u64],
    eps: f64,
) -> Result<IsoReport> {
    if seeds.is_empty() {
        return Err(CocnError::Config("at least one seed is required".into()));
    }
    let mut close_all = vec![true; pairs.len()];
    let mut best_dist = vec![0.0f64; pairs.len()];
    let mut per_seed = Vec::with_capacity(seeds.len());
    let mut num_params = 0;
    for &seed in seeds {
        let model = Model::new(cfg.clone(), seed)?;
        num_params = model.num_params();
        let dists: Vec<f64> = pairs
            .par_iter()
            .map(|(a, b)| {
                Ok(max_norm(
                    &graph_embedding(&model, a)?,
                    &graph_embedding(&model, b)?,
                ))
            })
            .collect::<Result<_>>()?;
        let mut count = 0;
        for (i, &d) in dists.iter().enumerate() {
            let close = d < eps;
            count += usize::from(close);
            close_all[i] &= close;
            best_dist[i] = best_dist[i].max(d);
        }
        per_seed.push(count);
    }
    Ok(IsoReport {
        pairs: pairs.len(),
        undistinguished: close_all.iter().filter(|&&c| c).count(),
        undistinguished_per_seed: per_seed,
        min_distance: best_dist.iter().copied().fold(f64::INFINITY, f64::min),
        num_params,
    })
}

/// All unordered pairs of a graph collection (15 graphs give 105 pairs).
pub fn all_pairs(graphs: &[Graph]) -> Vec<(Graph, Graph)> {
    let mut out = Vec::new();
    for i in 0..graphs.len() {
        for j in i + 1..graphs.len() {
            out.push((graphs[i].clone(), graphs[j].clone()));
        }
    }
    out
}

/// Largest graph accepted by [`canonical_form`].
pub const CANON_MAX_NODES: usize = 11;

/// Canonical upper-triangle bit string: the lexicographically largest
/// adjacency code over all relabellings that list nodes by non-increasing
/// degree. Two graphs are isomorphic iff their forms agree.
pub fn canonical_form(g: &Graph) -> Result<u64> {
    let n = g.n();
    if n > CANON_MAX_NODES {
        return Err(CocnError::Size(format!(
            "canonical labelling is brute force and limited to {CANON_MAX_NODES} nodes"
        )));
    }
    let deg = g.degrees();
    let adj = g.adjacency_dense();
    let mut nodes: Vec<usize> = (0..n).collect();
    nodes.sort_by(|&a, &b| deg[b].cmp(&deg[a]).then(a.cmp(&b)));
    // Degree classes as contiguous ranges of `nodes`.
    let mut classes = Vec::new();
    let mut start = 0;
    for i in 1..=n {
        if i == n || deg[nodes[i]] != deg[nodes[start]] {
            classes.push(start..i);
            start = i;
        }
    }
    let mut best = 0u64;
    let mut order = nodes.clone();
    permute_classes(&classes, 0, &mut order, &mut |o| {
        let mut code = 0u64;
        for i in 0..n {
            for j in i + 1..n {
                code = (code << 1) | u64::from(adj[[o[i], o[j]]] != 0.0);
            }
        }
        best = best.max(code);
    });
    Ok(best)
}

fn permute_classes(
    classes: &[std::ops::Range<usize>],
    c: usize,
    order: &mut Vec<usize>,
    visit: &mut impl FnMut(&[usize]),
) {
    if c == classes.len() {
        visit(order);
        return;
    }
    let r = classes[c].clone();
    heap_permute(order, r.start, r.end - r.start, &mut |o| {
        let mut copy = o.to_vec();
        permute_classes(classes, c + 1, &mut copy, visit);
    });
}

// Heap's algorithm over order[start..start + k].
fn heap_permute(order: &mut [usize], start: usize, k: usize, visit: &mut impl FnMut(&[usize])) {
    if k <= 1 {
        visit(order);
        return;
    }
    for i in 0..k - 1 {
        heap_permute(order, start, k - 1, visit);
        if k % 2 == 0 {
            order.swap(start + i, start + k - 1);
        } else {
            order.swap(start, start + k - 1);
        }
    }
    heap_permute(order, start, k - 1, visit);
}

/// `count` pairs of random `G(n, 1/2)` graphs, each pair certified
/// non-isomorphic by [`canonical_form`].
pub fn random_non_isomorphic_pairs<R: Rng + ?Sized>(
    count: usize,
    n: usize,
    rng: &mut R,
) -> Result<Vec<(Graph, Graph)>> {
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let a = random_gnp(n, 0.5, rng)?;
        let b = random_gnp(n, 0.5, rng)?;
        if canonical_form(&a)? != canonical_form(&b)? {
            out.push((a, b));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn canonical_form_is_relabelling_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..30 {
            let g = random_gnp(7, 0.4, &mut rng).unwrap();
            let mut p: Vec<usize> = (0..7).collect();
            p.shuffle(&mut rng);
            assert_eq!(
                canonical_form(&g).unwrap(),
                canonical_form(&g.relabel(&p).unwrap()).unwrap()
            );
        }
    }

    #[test]
    fn canonical_form_separates_small_classes() {
        // Unlabelled graphs on 4 nodes: 11 classes.
        let mut forms = std::collections::BTreeSet::new();
        for mask in 0u32..64 {
            let pairs = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];
            let edges = pairs
                .iter()
                .enumerate()
                .filter(|(i, _)| mask & (1 << i) != 0)
                .map(|(_, &e)| e);
            forms.insert(canonical_form(&Graph::new(4, edges).unwrap()).unwrap());
        }
        assert_eq!(forms.len(), 11);
        let path = Graph::new(4, [(0, 1), (1, 2), (2, 3)]).unwrap();
        let star = Graph::new(4, [(0, 1), (0, 2), (0, 3)]).unwrap();
        assert_ne!(
            canonical_form(&path).unwrap(),
            canonical_form(&star).unwrap()
        );
    }

    #[test]
    fn identical_pair_is_undistinguished() {
        let g = Graph::new(6, [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5)]).unwrap();
        let cfg = iso_model_config(3);
        let r = isomorphism_test(&[(g.clone(), g)], &cfg, &[1, 2], 1e-4).unwrap();
        assert_eq!(r.undistinguished, 1);
        assert_eq!(r.min_distance, 0.0);
    }

    #[test]
    fn one_edge_difference_is_distinguished() {
        let a = Graph::new(8, [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 6), (6, 7)]).unwrap();
        let b = Graph::new(
            8,
            [
                (0, 1),
                (1, 2),
                (2, 3),
                (3, 4),
                (4, 5),
                (5, 6),
                (6, 7),
                (7, 0),
            ],
        )
        .unwrap();
        let cfg = iso_model_config(3);
        let r = isomorphism_test(&[(a, b)], &cfg, &[0, 1, 2, 3, 4], 1e-4).unwrap();
        assert_eq!(r.undistinguished_per_seed, vec![0; 5]);
        assert!(r.num_params <= ISO_PARAM_BUDGET);
    }

    #[test]
    fn sr25_pair_count() {
        let graphs: Vec<Graph> = (0..15).map(|_| Graph::new(2, []).unwrap()).collect();
        assert_eq!(all_pairs(&graphs).len(), 105);
    }
}
