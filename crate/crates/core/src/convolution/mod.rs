//! Diagonal convolution and the compressed convolution layers built on it.
//!
//! Node-set features `H` (n×c) and structure features `E` (a list of n×n
//! channels) evolve together. Each layer slides a k×k window along the main
//! diagonal of `E` and the matching k rows of `H`, then compresses `E`.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{CocnError, Result};

/// Kernel weights on a tape, im2col layout.
///
/// `w` has `in_e·k² + in_n·k` rows and `out` columns. Row `c·k² + p·k + q`
/// holds the edge weight for channel `c` at offset `(p, q)`; row
/// `in_e·k² + p·in_n + t` holds the node weight for row offset `p`, feature `t`.
#[derive(Debug, Clone, Copy)]
pub struct DiagConvKernel {
    pub w: Var,
    pub b: Var,
}

/// Shape of the im2col weight matrix for a diagonal kernel.
pub fn diag_kernel_shape(in_e: usize, in_n: usize, k: usize, out: usize) -> (usize, usize) {
    (in_e * k * k + in_n * k, out)
}

pub fn diag_kernel_param_count(in_e: usize, in_n: usize, k: usize, out: usize) -> usize {
    out * (in_e * k * k + in_n * k + 1)
}

/// Weights of a 1-D transposed convolution: `w` is `in × (k·out)`, `b` is `1 × out`.
#[derive(Debug, Clone, Copy)]
pub struct TConvKernel {
    pub w: Var,
    pub b: Var,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerConfig {
    pub k: usize,
    pub s: usize,
    pub out_channels: usize,
    #[serde(default)]
    pub residual: bool,
    #[serde(default)]
    pub inception_ks: Option<Vec<usize>>,
}

impl LayerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.s == 0 {
            return Err(CocnError::Config(
                "kernel size and step must be at least 1".into(),
            ));
        }
        if let Some(ks) = &self.inception_ks {
            if ks.is_empty() || ks.contains(&0) {
                return Err(CocnError::Config(
                    "inception kernel list must be non-empty and positive".into(),
                ));
            }
        }
        Ok(())
    }

    /// Kernel sizes of the branches (a single entry for a plain layer).
    pub fn branch_ks(&self) -> Vec<usize> {
        self.inception_ks.clone().unwrap_or_else(|| vec![self.k])
    }
}

/// Output length `⌊(n − k)/s⌋ + 1` after padding short inputs up to `k`.
pub fn output_len(n: usize, k: usize, s: usize) -> usize {
    (n.max(k) - k) / s + 1
}

/// Node-set features and structure channels at one level.
#[derive(Debug, Clone)]
pub struct LevelState {
    pub h: Var,
    pub e: Vec<Var>,
}

impl LevelState {
    pub fn new(tape: &Tape, h: Var, e: Vec<Var>) -> Result<Self> {
        let n = tape.shape(h).0;
        for &c in &e {
            if tape.shape(c) != (n, n) {
                return Err(CocnError::Dimension {
                    op: "level state",
                    lhs: tape.shape(h),
                    rhs: tape.shape(c),
                });
            }
        }
        Ok(LevelState { h, e })
    }

    pub fn len(&self, tape: &Tape) -> usize {
        tape.shape(self.h).0
    }

    pub fn is_empty(&self, tape: &Tape) -> bool {
        self.len(tape) == 0
    }
}

/// Circularly extends a state shorter than `k` to exactly `k` rows.
pub fn circular_pad(tape: &mut Tape, state: &LevelState, k: usize) -> Result<LevelState> {
    let n = state.len(tape);
    if n >= k {
        return Ok(state.clone());
    }
    let idx: Vec<usize> = (0..k).map(|i| i % n).collect();
    let h = tape.gather_rows(state.h, &idx)?;
    let e = state
        .e
        .iter()
        .map(|&c| tape.gather_square(c, &idx))
        .collect::<Result<Vec<_>>>()?;
    Ok(LevelState { h, e })
}

/// `S_j = Σ w·E[i+p, i+q] + Σ v·H[i+p, t] + b` for `i = s·j`, before activation.
pub fn diagonal_conv(
    tape: &mut Tape,
    state: &LevelState,
    kernel: &DiagConvKernel,
    k: usize,
    s: usize,
) -> Result<Var> {
    let n = state.len(tape);
    if n < k {
        return Err(CocnError::Size(format!(
            "diagonal_conv: {n} node sets but kernel {k}; circular-pad the state first"
        )));
    }
    let mut cols = Vec::with_capacity(state.e.len() + 1);
    for &c in &state.e {
        cols.push(tape.diag_unfold(c, k, s)?);
    }
    cols.push(tape.row_unfold(state.h, k, s)?);
    let patches = if cols.len() == 1 {
        cols[0]
    } else {
        tape.concat_cols(&cols)?
    };
    tape.linear(patches, kernel.w, kernel.b)
}

/// Removes the diagonal band `|i − j| < k` from every channel.
pub fn edge_update_tri(tape: &mut Tape, e: &[Var], k: usize) -> Result<Vec<Var>> {
    e.iter().map(|&c| tape.tri(c, k)).collect()
}

/// 2-D max pooling of every channel with window `k` and step `s`.
pub fn edge_update_maxpool(tape: &mut Tape, e: &[Var], k: usize, s: usize) -> Result<Vec<Var>> {
    e.iter().map(|&c| tape.max_pool_2d(c, k, s)).collect()
}

/// Structure update matched to a layer's step. With unit step the band is
/// removed and a unit-stride k×k max pool aligns `E` with the shorter `H`.
fn compress_edges(tape: &mut Tape, e: &[Var], k: usize, s: usize) -> Result<Vec<Var>> {
    if s == 1 {
        let banded = edge_update_tri(tape, e, k)?;
        edge_update_maxpool(tape, &banded, k, 1)
    } else {
        edge_update_maxpool(tape, e, k, s)
    }
}

fn conv_branch(
    tape: &mut Tape,
    state: &LevelState,
    kernel: &DiagConvKernel,
    k: usize,
    s: usize,
    residual: bool,
) -> Result<Var> {
    let conv = diagonal_conv(tape, state, kernel, k, s)?;
    let act = tape.relu(conv);
    if residual {
        let shortcut = tape.avg_pool_1d(state.h, k, s)?;
        tape.add(act, shortcut)
    } else {
        Ok(act)
    }
}

/// One compressed convolution layer (plain or residual).
pub fn compressed_conv_layer(
    tape: &mut Tape,
    state: &LevelState,
    cfg: &LayerConfig,
    kernel: &DiagConvKernel,
) -> Result<LevelState> {
    cfg.validate()?;
    let padded = circular_pad(tape, state, cfg.k)?;
    let h = conv_branch(tape, &padded, kernel, cfg.k, cfg.s, cfg.residual)?;
    let e = compress_edges(tape, &padded.e, cfg.k, cfg.s)?;
    LevelState::new(tape, h, e)
}

/// Parallel branches with different kernel sizes, average-pooled to the
/// shortest branch length and summed. `E` follows the largest kernel.
pub fn inception_layer(
    tape: &mut Tape,
    state: &LevelState,
    cfg: &LayerConfig,
    kernels: &[DiagConvKernel],
) -> Result<LevelState> {
    cfg.validate()?;
    let ks = cfg.branch_ks();
    if kernels.len() != ks.len() {
        return Err(CocnError::Config(format!(
            "{} branch kernels supplied for {} kernel sizes",
            kernels.len(),
            ks.len()
        )));
    }
    let kmax = *ks.iter().max().expect("validated non-empty");
    let padded = circular_pad(tape, state, kmax)?;
    let target = ks
        .iter()
        .map(|&k| output_len(padded.len(tape), k, cfg.s))
        .min()
        .expect("validated non-empty");
    let mut total: Option<Var> = None;
    for (&k, kernel) in ks.iter().zip(kernels) {
        let branch = conv_branch(tape, &padded, kernel, k, cfg.s, cfg.residual)?;
        let len = tape.shape(branch).0;
        let pooled = if len > target {
            tape.avg_pool_1d(branch, len - target + 1, 1)?
        } else {
            branch
        };
        total = Some(match total {
            None => pooled,
            Some(acc) => tape.add(acc, pooled)?,
        });
    }
    let h = total.expect("at least one branch");
    let e = compress_edges(tape, &padded.e, kmax, cfg.s)?;
    LevelState::new(tape, h, e)
}

/// Runs a plain, residual or inception layer according to `cfg`.
pub fn apply_layer(
    tape: &mut Tape,
    state: &LevelState,
    cfg: &LayerConfig,
    kernels: &[DiagConvKernel],
) -> Result<LevelState> {
    if cfg.inception_ks.is_some() {
        inception_layer(tape, state, cfg, kernels)
    } else {
        let kernel = kernels
            .first()
            .ok_or_else(|| CocnError::Config("layer has no kernel".into()))?;
        compressed_conv_layer(tape, state, cfg, kernel)
    }
}

/// `ReLU(AvgPool(Dilat(Ĥ))) − TConv(Ĥ)`, restoring `target_len` rows.
///
/// `Dilat` inserts `s − 1` zero rows between rows of `Ĥ`. The result is
/// edge-padded (first row `k − 1` times, last row as needed) so a unit-step
/// window of `k` yields exactly `target_len` rows.
pub fn transposed_conv_layer(
    tape: &mut Tape,
    h_hat: Var,
    k: usize,
    s: usize,
    target_len: usize,
    kernel: &TConvKernel,
) -> Result<Var> {
    let m = tape.shape(h_hat).0;
    let expected = output_len(target_len, k, s);
    if m != expected {
        return Err(CocnError::Size(format!(
            "transposed layer got {m} rows, but a length-{target_len} input produces {expected}"
        )));
    }
    let dilated = tape.dilate_1d(h_hat, s)?;
    let span = (m - 1) * s + 1;
    let right = target_len.saturating_sub(span);
    let padded = tape.pad_rows_edge(dilated, k - 1, right);
    let pooled = tape.avg_pool_1d(padded, k, 1)?;
    let pooled = if tape.shape(pooled).0 > target_len {
        let c = tape.shape(pooled).1;
        tape.slice(pooled, 0..target_len, 0..c)?
    } else {
        pooled
    };
    let shortcut = tape.relu(pooled);

    let blocks = tape.matmul(h_hat, kernel.w)?;
    let fold_len = target_len.max((m - 1) * s + k);
    let folded = tape.fold_rows(blocks, k, s, fold_len)?;
    let c_out = tape.shape(folded).1;
    let folded = if fold_len > target_len {
        tape.slice(folded, 0..target_len, 0..c_out)?
    } else {
        folded
    };
    let tconv = tape.add_row(folded, kernel.b)?;
    tape.sub(shortcut, tconv)
}

#[cfg(test)]
mod tests;
