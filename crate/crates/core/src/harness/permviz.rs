//! Permuted structure and feature-similarity matrices for heatmaps.

use ndarray::Array2;

use crate::autodiff::Tape;
use crate::error::Result;
use crate::graph::Graph;
use crate::model::Model;
use crate::permutation::Permutation;

/// `(P̂AP̂ᵀ, P̂XXᵀP̂ᵀ)` with the relaxed permutation of the model's first
/// position head at relaxation `tau`.
pub fn permuted_matrices(model: &Model, g: &Graph, tau: f64) -> Result<(Array2<f64>, Array2<f64>)> {
    let prep = model.prepare(g)?;
    let positions = model.global_positions(&prep)?;
    let n = positions.len();
    let mut tape = Tape::new();
    let ra = tape.constant(Array2::from_shape_vec((n, 1), positions).expect("n x 1"));
    let perm = Permutation::from_positions(&mut tape, ra, tau, false)?;
    let x = tape.constant(prep.x.clone());
    let (xh, ah) = perm.permute(&mut tape, x, &prep.adj)?;
    let sim = tape.matmul_nt(xh, xh)?;
    Ok((tape.value(ah).clone(), tape.value(sim).clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{ring_graph, Task};
    use crate::model::ModelConfig;

    #[test]
    fn sharp_permutation_preserves_edge_count() {
        let g = ring_graph(12).unwrap();
        let cfg = ModelConfig {
            task: Task::GraphClassification,
            input_dim: 2,
            hidden: 8,
            ..ModelConfig::default()
        };
        let model = Model::new(cfg, 1).unwrap();
        let (a, s) = permuted_matrices(&model, &g, 50.0).unwrap();
        assert_eq!(a.dim(), (12, 12));
        assert!((a.sum() - 24.0).abs() < 1e-9);
        assert!(
            (s.sum()
                - g.features()
                    .unwrap()
                    .sum_axis(ndarray::Axis(0))
                    .mapv(|v| v * v)
                    .sum())
            .abs()
                < 1e-9
        );
    }
}
