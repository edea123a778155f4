use std::collections::VecDeque;

use ndarray::Array2;

use super::{CsrMatrix, DistanceMatrix, Graph};
use crate::error::{CocnError, Result};

/// Symmetric normalisation `D^{-1/2} A D^{-1/2}`. Isolated nodes get zero rows.
pub fn normalized_adjacency(g: &Graph) -> CsrMatrix {
    let deg = g.degrees();
    let mut trip = Vec::with_capacity(2 * g.num_edges());
    for &(i, j) in g.edges() {
        let w = 1.0 / ((deg[i] * deg[j]) as f64).sqrt();
        trip.push((i, j, w));
        trip.push((j, i, w));
    }
    CsrMatrix::from_triplets(g.n(), g.n(), &trip)
}

/// All-pairs hop distances times `scale`; unreachable pairs get `scale * n`.
pub fn shortest_path_distances(g: &Graph, scale: f64) -> Result<DistanceMatrix> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(CocnError::Config(format!(
            "distance scale must be positive, got {scale}"
        )));
    }
    let n = g.n();
    let adj = g.neighbors();
    let sentinel = scale * n as f64;
    let mut d = Array2::from_elem((n, n), sentinel);
    let mut hops = vec![usize::MAX; n];
    let mut queue = VecDeque::new();
    for src in 0..n {
        hops.fill(usize::MAX);
        hops[src] = 0;
        queue.push_back(src);
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                if hops[v] == usize::MAX {
                    hops[v] = hops[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        for (dst, &h) in hops.iter().enumerate() {
            if h != usize::MAX {
                d[[src, dst]] = h as f64 * scale;
            }
        }
    }
    Ok(DistanceMatrix { d_scaled: d, scale })
}

/// Distances with the default scale `1/n`.
pub fn shortest_path_distances_default(g: &Graph) -> DistanceMatrix {
    shortest_path_distances(g, 1.0 / g.n() as f64).expect("1/n is a valid scale")
}

pub fn degree_onehot_features(g: &Graph, max_degree: usize) -> Result<Array2<f64>> {
    let deg = g.degrees();
    let mut x = Array2::zeros((g.n(), max_degree + 1));
    for (i, &d) in deg.iter().enumerate() {
        if d > max_degree {
            return Err(CocnError::Capacity {
                observed: d,
                max: max_degree,
            });
        }
        x[[i, d]] = 1.0;
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn path3() -> Graph {
        Graph::new(3, [(0, 1), (1, 2)]).unwrap()
    }

    fn triangle() -> Graph {
        Graph::new(3, [(0, 1), (1, 2), (0, 2)]).unwrap()
    }

    #[test]
    fn normalized_path() {
        let a = normalized_adjacency(&path3());
        let h = 1.0 / 2f64.sqrt();
        assert_abs_diff_eq!(a.get(0, 1), h, epsilon = 1e-12);
        assert_abs_diff_eq!(a.get(1, 2), h, epsilon = 1e-12);
        assert_abs_diff_eq!(a.get(2, 1), h, epsilon = 1e-12);
        for i in 0..3 {
            assert_eq!(a.get(i, i), 0.0);
        }
    }

    #[test]
    fn normalized_single_edge_and_triangle() {
        let a = normalized_adjacency(&Graph::new(2, [(0, 1)]).unwrap());
        assert_eq!(a.get(0, 1), 1.0);
        assert_eq!(a.get(1, 0), 1.0);
        let t = normalized_adjacency(&triangle()).to_dense();
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 0.0 } else { 0.5 };
                assert_abs_diff_eq!(t[[i, j]], want, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn isolated_rows_are_zero() {
        let a = normalized_adjacency(&Graph::new(3, [(0, 1)]).unwrap());
        assert_eq!(a.row(2).count(), 0);
    }

    #[test]
    fn distances_examples() {
        let d = shortest_path_distances(&path3(), 1.0).unwrap();
        assert_eq!(d.d_scaled[[0, 2]], 2.0);
        let d = shortest_path_distances(&Graph::new(2, []).unwrap(), 1.0).unwrap();
        assert_eq!(d.d_scaled[[0, 1]], 2.0);
        let d = shortest_path_distances(&triangle(), 0.5).unwrap();
        assert_eq!(d.d_scaled[[0, 1]], 0.5);
        assert_eq!(d.d_scaled[[2, 0]], 0.5);
        assert_eq!(d.d_scaled[[1, 1]], 0.0);
    }

    #[test]
    fn default_scale_is_inverse_n() {
        let d = shortest_path_distances_default(&path3());
        assert_abs_diff_eq!(d.scale, 1.0 / 3.0);
        assert_abs_diff_eq!(d.d_scaled[[0, 2]], 2.0 / 3.0);
    }

    #[test]
    fn nonpositive_scale_rejected() {
        assert!(shortest_path_distances(&path3(), 0.0).is_err());
    }

    #[test]
    fn degree_onehot_examples() {
        let x = degree_onehot_features(&path3(), 2).unwrap();
        assert_eq!(x.row(0).to_vec(), vec![0.0, 1.0, 0.0]);
        assert_eq!(x.row(1).to_vec(), vec![0.0, 0.0, 1.0]);
        assert_eq!(x.row(2).to_vec(), vec![0.0, 1.0, 0.0]);
        let x = degree_onehot_features(&Graph::new(2, [(0, 0)]).unwrap(), 1).unwrap();
        assert_eq!(x.row(0).to_vec(), vec![1.0, 0.0]);
        let star = Graph::new(4, [(0, 1), (0, 2), (0, 3)]).unwrap();
        let x = degree_onehot_features(&star, 3).unwrap();
        assert_eq!(x[[0, 3]], 1.0);
        assert!(matches!(
            degree_onehot_features(&star, 2),
            Err(CocnError::Capacity {
                observed: 3,
                max: 2
            })
        ));
    }
}
