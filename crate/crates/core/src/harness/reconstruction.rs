//! Permutation autoencoder on synthetic graphs with coordinate features.
//!
//! The encoder orders the nodes and applies the relaxed permutation,
//! `X̂ = P̂X`; the decoder maps back with `X̃ = P̂ᵀX̂W + b`. Only a relaxed
//! `P̂` loses information, so the error measures how far `P̂` is from a
//! permutation.

use std::sync::Arc;

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{adam_step, AdamConfig, Parameter, Tape};
use crate::error::{CocnError, Result};
use crate::graph::{normalized_adjacency, Graph};
use crate::permutation::{absolute_position, regress_position_explicit, PositionMlp, RankGrad};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconstructionConfig {
    pub epochs: usize,
    pub lr: f64,
    pub position_hidden: usize,
    pub smoothness_t: usize,
    pub seed: u64,
}

impl Default for ReconstructionConfig {
    fn default() -> Self {
        ReconstructionConfig {
            epochs: 100,
            lr: 1e-2,
            position_hidden: 16,
            smoothness_t: 2,
            seed: 0,
        }
    }
}

/// One recovered coordinate row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoordRow {
    pub node: usize,
    pub x: f64,
    pub y: f64,
    pub x_rec: f64,
    pub y_rec: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionResult {
    pub tau: f64,
    /// Error of the trained autoencoder.
    pub mse: f64,
    /// Error before the first update.
    pub initial_mse: f64,
    pub coords: Vec<CoordRow>,
}

fn init(cfg: &ReconstructionConfig, d: usize) -> Vec<Parameter> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut uniform = |r: usize, c: usize| {
        let a = (6.0 / r as f64).sqrt();
        Array2::from_shape_fn((r, c), |_| rng.gen_range(-a..a))
    };
    let h = cfg.position_hidden;
    vec![
        Parameter::new("pos.0.w", uniform(d, h)),
        Parameter::new("pos.0.b", Array2::zeros((1, h))),
        Parameter::new("pos.1.w", uniform(h, 1)),
        Parameter::new("pos.1.b", Array2::zeros((1, 1))),
        Parameter::new("dec.w", Array2::eye(d)),
        Parameter::new("dec.b", Array2::zeros((1, d))),
    ]
}

/// Forward pass; returns the loss and the reconstruction, and fills the
/// parameter gradients when `grad` is set.
fn step(
    params: &mut [Parameter],
    x: &Array2<f64>,
    a_norm: &Arc<crate::graph::CsrMatrix>,
    tau: f64,
    t: usize,
    grad: bool,
) -> Result<(f64, Array2<f64>)> {
    let mut tape = Tape::new();
    let v: Vec<_> = params.iter().map(|p| tape.var(p.value.clone())).collect();
    let xv = tape.constant(x.clone());
    let mlp = PositionMlp {
        layers: vec![(v[0], v[1]), (v[2], v[3])],
    };
    let ra = regress_position_explicit(&mut tape, xv, a_norm, &mlp, t)?;
    let r = absolute_position(&mut tape, ra, RankGrad::Dense)?;
    let p = tape.relaxed_perm(r, tau)?;
    let xh = tape.matmul(p, xv)?;
    let back = tape.matmul_tn(p, xh)?;
    let rec = tape.linear(back, v[4], v[5])?;
    let diff = tape.sub(rec, xv)?;
    let sq = tape.mul(diff, diff)?;
    let loss = tape.mean(sq);
    let value = tape.scalar(loss);
    let out = tape.value(rec).clone();
    if grad {
        tape.backward(loss)?;
        for (p, &var) in params.iter_mut().zip(&v) {
            match tape.grad(var) {
                Some(g) => p.grad.assign(g),
                None => p.zero_grad(),
            }
        }
    }
    Ok((value, out))
}

/// Trains one autoencoder per `tau` and reports its final error.
pub fn reconstruction_experiment(
    g: &Graph,
    taus: &[f64],
    cfg: &ReconstructionConfig,
) -> Result<Vec<ReconstructionResult>> {
    let x = g
        .features()
        .ok_or_else(|| CocnError::Config("reconstruction needs coordinate features".into()))?
        .clone();
    if !(cfg.lr > 0.0) || cfg.position_hidden == 0 {
        return Err(CocnError::Config(
            "reconstruction needs lr > 0 and position_hidden > 0".into(),
        ));
    }
    let a_norm = Arc::new(normalized_adjacency(g));
    let adam = AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    };
    let mut out = Vec::with_capacity(taus.len());
    for &tau in taus {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(CocnError::Config(format!(
                "tau must be positive, got {tau}"
            )));
        }
        let mut params = init(cfg, x.ncols());
        let (initial_mse, _) = step(&mut params, &x, &a_norm, tau, cfg.smoothness_t, false)?;
        for epoch in 0..cfg.epochs {
            let (loss, _) = step(&mut params, &x, &a_norm, tau, cfg.smoothness_t, true)?;
            if !loss.is_finite() {
                return Err(CocnError::Diverged { epoch });
            }
            adam_step(&mut params, &adam);
        }
        let (mse, rec) = step(&mut params, &x, &a_norm, tau, cfg.smoothness_t, false)?;
        let coords = (0..x.nrows())
            .map(|i| CoordRow {
                node: i,
                x: x[[i, 0]],
                y: if x.ncols() > 1 { x[[i, 1]] } else { 0.0 },
                x_rec: rec[[i, 0]],
                y_rec: if x.ncols() > 1 { rec[[i, 1]] } else { 0.0 },
            })
            .collect();
        out.push(ReconstructionResult {
            tau,
            mse,
            initial_mse,
            coords,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{grid_graph, ring_graph};

    #[test]
    fn near_hard_permutation_is_lossless_without_training() {
        let g = ring_graph(16).unwrap();
        let cfg = ReconstructionConfig {
            epochs: 0,
            ..ReconstructionConfig::default()
        };
        let r = reconstruction_experiment(&g, &[50.0], &cfg).unwrap();
        assert!(r[0].mse < 1e-12, "{}", r[0].mse);
    }

    #[test]
    fn sharper_permutation_reconstructs_better() {
        let g = ring_graph(32).unwrap();
        let cfg = ReconstructionConfig {
            epochs: 20,
            ..ReconstructionConfig::default()
        };
        let r = reconstruction_experiment(&g, &[0.1, 10.0], &cfg).unwrap();
        assert!(r[1].mse < r[0].mse, "{} vs {}", r[1].mse, r[0].mse);
    }

    #[test]
    fn grid_emits_one_row_per_node() {
        let g = grid_graph(6, 6).unwrap();
        let cfg = ReconstructionConfig {
            epochs: 5,
            ..ReconstructionConfig::default()
        };
        let r = reconstruction_experiment(&g, &[10.0], &cfg).unwrap();
        assert_eq!(r[0].coords.len(), 36);
        let worst = r[0]
            .coords
            .iter()
            .map(|c| (c.x - c.x_rec).abs().max((c.y - c.y_rec).abs()))
            .fold(0.0, f64::max);
        assert!(worst < 0.05, "{worst}");
    }

    #[test]
    fn missing_features_are_rejected() {
        let g = Graph::new(4, [(0, 1), (1, 2), (2, 3)]).unwrap();
        let err = reconstruction_experiment(&g, &[1.0], &ReconstructionConfig::default());
        assert!(matches!(err, Err(CocnError::Config(_))));
    }
}
