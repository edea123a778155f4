//! The finite-difference suite run by `cocn gradcheck`.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{finite_difference_check_many, primitive_gradient_suite, ranks_of, Tape};
use crate::convolution::{compressed_conv_layer, DiagConvKernel, LayerConfig, LevelState};
use crate::error::Result;

/// Relative error bound for smooth operations.
pub const FD_TOLERANCE: f64 = 1e-4;
/// Absolute error bound for the rank backward against its dense form.
pub const RANK_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckEntry {
    pub name: String,
    pub max_error: f64,
    pub tolerance: f64,
}

impl GradcheckEntry {
    pub fn passed(&self) -> bool {
        self.max_error < self.tolerance
    }
}

fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
    Array2::from_shape_fn((r, c), |_| rng.gen_range(-1.0..1.0))
}

/// Unit-step layer (k = 2) followed by a residual pooling layer (k = 3) on a
/// 9-node input; returns the worst relative error over every input.
pub fn conv_stack_gradcheck(seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 9;
    // Positive biases keep pre-activations away from the ReLU kink.
    let inputs = vec![
        rand_mat(&mut rng, n, 2),
        rand_mat(&mut rng, n, n),
        rand_mat(&mut rng, 8, 3) * 0.3,
        Array2::from_elem((1, 3), 3.0),
        rand_mat(&mut rng, 18, 3) * 0.3,
        Array2::from_elem((1, 3), 3.0),
    ];
    finite_difference_check_many(
        |t, v| {
            let state = LevelState::new(t, v[0], vec![v[1]])?;
            let unit = LayerConfig {
                k: 2,
                s: 1,
                out_channels: 3,
                residual: false,
                inception_ks: None,
            };
            let pool = LayerConfig {
                k: 3,
                s: 3,
                out_channels: 3,
                residual: true,
                inception_ks: None,
            };
            let s1 = compressed_conv_layer(t, &state, &unit, &DiagConvKernel { w: v[2], b: v[3] })?;
            let s2 = compressed_conv_layer(t, &s1, &pool, &DiagConvKernel { w: v[4], b: v[5] })?;
            let sq = t.mul(s2.h, s2.h)?;
            Ok(t.sum(sq))
        },
        &inputs,
        1e-5,
    )
}

/// Dense surrogate `r̂_i = Rank_i · r_A,i − Σ_{Rank_j < Rank_i} r_A,j`.
fn rhat_dense(ra: &[f64], ranks: &[usize]) -> Vec<f64> {
    (0..ra.len())
        .map(|i| {
            let below: f64 = (0..ra.len())
                .filter(|&j| ranks[j] < ranks[i])
                .map(|j| ra[j])
                .sum();
            ranks[i] as f64 * ra[i] - below
        })
        .collect()
}

/// Worst absolute gap between the rank backward and the dense surrogate's
/// gradient on one random position vector of length `n`.
pub fn rank_oracle_check(n: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ra: Vec<f64> = (0..n)
        .map(|i| i as f64 * 0.37 + rng.gen_range(0.0..0.3))
        .collect();
    ra.shuffle(&mut rng);
    let g: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let ranks = ranks_of(&ra);

    let mut t = Tape::new();
    let x = t.var(Array2::from_shape_vec((n, 1), ra.clone()).expect("n x 1"));
    let r = t.rank_approx(x)?;
    let gw = t.constant(Array2::from_shape_vec((n, 1), g.clone()).expect("n x 1"));
    let p = t.mul(r, gw)?;
    let s = t.sum(p);
    t.backward(s)?;
    let got = t.grad(x).cloned().unwrap_or_else(|| Array2::zeros((n, 1)));

    // Linear in r_A once ranks are frozen, so a unit difference is exact.
    let loss = |v: &[f64]| -> f64 {
        rhat_dense(v, &ranks)
            .iter()
            .zip(&g)
            .map(|(a, b)| 0.25 * a * b)
            .sum()
    };
    let base = loss(&ra);
    let mut worst = 0.0f64;
    for k in 0..n {
        let mut bumped = ra.clone();
        bumped[k] += 1.0;
        worst = worst.max((loss(&bumped) - base - got[[k, 0]]).abs());
    }
    Ok(worst)
}

/// Every smooth primitive, the two-layer convolution stack and the rank
/// backward for sizes up to 64.
pub fn full_gradient_suite() -> Result<Vec<GradcheckEntry>> {
    let mut out: Vec<GradcheckEntry> = primitive_gradient_suite()?
        .into_iter()
        .map(|(name, e)| GradcheckEntry {
            name: name.to_string(),
            max_error: e,
            tolerance: FD_TOLERANCE,
        })
        .collect();
    out.push(GradcheckEntry {
        name: "compressed_conv_stack".into(),
        max_error: conv_stack_gradcheck(12)?,
        tolerance: FD_TOLERANCE,
    });
    let mut worst = 0.0f64;
    for n in [1, 2, 3, 8, 17, 32, 64] {
        for seed in 0..4 {
            worst = worst.max(rank_oracle_check(n, seed)?);
        }
    }
    out.push(GradcheckEntry {
        name: "rank_approx_backward".into(),
        max_error: worst,
        tolerance: RANK_TOLERANCE,
    });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes() {
        let suite = full_gradient_suite().unwrap();
        for e in &suite {
            assert!(e.passed(), "{} {}", e.name, e.max_error);
        }
        assert!(suite.iter().any(|e| e.name == "compressed_conv_stack"));
    }

    #[test]
    fn oracle_surrogate_by_hand() {
        let ra = [2.0, 5.0, 1.0];
        assert_eq!(rhat_dense(&ra, &ranks_of(&ra)), vec![1.0, 7.0, 0.0]);
    }
}
