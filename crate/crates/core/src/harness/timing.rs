//! Wall-clock per training epoch on random graphs of growing size.

use std::time::Instant;

use log::{info, warn};
use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::train::{train_model, Item, TrainConfig};
use crate::error::{CocnError, Result};
use crate::graph::{erdos_renyi, Task};
use crate::model::{Model, ModelConfig, Variant, EXPANDED_MAX_NODES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimingStatus {
    Ok,
    /// Skipped because the dense buffers would not fit in memory.
    Oom,
    /// Rejected by the model, e.g. above the expanded-variant cap.
    Refused,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub variant: Variant,
    pub n: usize,
    pub seconds_per_epoch: Option<f64>,
    pub status: TimingStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub variants: Vec<Variant>,
    pub sizes: Vec<usize>,
    pub avg_degree: f64,
    pub feature_dim: usize,
    pub hidden: usize,
    pub kernel_size: usize,
    pub segment_b: usize,
    /// Anchors per segment epoch.
    pub segment_batch_nb: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Memory available to dense buffers; read from the system when unset.
    pub mem_budget_bytes: Option<u64>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            variants: vec![Variant::Expanded, Variant::Sparse, Variant::Segment],
            sizes: vec![100, 1000, 5000],
            avg_degree: 8.0,
            feature_dim: 8,
            hidden: 16,
            kernel_size: 3,
            segment_b: 8,
            segment_batch_nb: 100,
            epochs: 1,
            seed: 0,
            mem_budget_bytes: None,
        }
    }
}

impl BenchConfig {
    /// Node-classification model timed for `variant`.
    pub fn model_config(&self, variant: Variant) -> ModelConfig {
        ModelConfig {
            variant,
            task: Task::NodeClassification,
            input_dim: self.feature_dim,
            num_classes: 2,
            heads: 1,
            l1: 1,
            l2: 1,
            kernel_sizes: vec![self.kernel_size],
            hidden: self.hidden,
            segment_b: self.segment_b,
            segment_batch_nb: self.segment_batch_nb,
            ..ModelConfig::default()
        }
    }
}

/// Number of live n×n f64 buffers a node-level epoch holds at its peak.
fn dense_buffers(variant: Variant) -> f64 {
    match variant {
        Variant::Vanilla | Variant::Expanded => 16.0,
        Variant::Sparse => 8.0,
        Variant::Segment => 0.0,
    }
}

/// Rough peak of the n×n buffers of one epoch.
pub fn estimated_bytes(variant: Variant, n: usize) -> u64 {
    (dense_buffers(variant) * (n as f64).powi(2) * 8.0) as u64
}

/// Three quarters of `MemAvailable`, or 4 GiB when it cannot be read.
pub fn available_memory() -> u64 {
    let fallback = 4 << 30;
    let Ok(text) = std::fs::read_to_string("/proc/meminfo") else {
        return fallback;
    };
    text.lines()
        .find_map(|l| l.strip_prefix("MemAvailable:"))
        .and_then(|v| v.trim().trim_end_matches("kB").trim().parse::<u64>().ok())
        .map(|kb| kb * 1024 / 4 * 3)
        .unwrap_or(fallback)
}

fn time_one(cfg: &BenchConfig, variant: Variant, n: usize, budget: u64) -> Result<TimingRow> {
    let row = |seconds, status| TimingRow {
        variant,
        n,
        seconds_per_epoch: seconds,
        status,
    };
    if matches!(variant, Variant::Expanded) && n > EXPANDED_MAX_NODES {
        return Ok(row(None, TimingStatus::Refused));
    }
    if estimated_bytes(variant, n) > budget {
        warn!("{variant:?} at n = {n} would exceed the memory budget; skipped");
        return Ok(row(None, TimingStatus::Oom));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ n as u64);
    let x = Array2::from_shape_fn((n, cfg.feature_dim), |_| rng.gen_range(-1.0..1.0));
    let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..2)).collect();
    let g = erdos_renyi(n, cfg.avg_degree, &mut rng)?
        .with_features(x)?
        .with_node_labels(labels.clone())?;
    let mut model = match Model::new(cfg.model_config(variant), cfg.seed) {
        Ok(m) => m,
        Err(CocnError::Config(msg)) => {
            warn!("{variant:?} at n = {n} refused: {msg}");
            return Ok(row(None, TimingStatus::Refused));
        }
        Err(e) => return Err(e),
    };
    let prep = match model.prepare(&g) {
        Ok(p) => p,
        Err(CocnError::Config(msg)) => {
            warn!("{variant:?} at n = {n} refused: {msg}");
            return Ok(row(None, TimingStatus::Refused));
        }
        Err(e) => return Err(e),
    };
    let anchors = if variant == Variant::Segment {
        cfg.segment_batch_nb.min(n)
    } else {
        n
    };
    let items: Vec<(Item, usize)> = (0..anchors)
        .map(|v| (Item::Node { graph: 0, node: v }, labels[v]))
        .collect();
    let tcfg = TrainConfig {
        max_epochs: cfg.epochs,
        early_stop_patience: cfg.epochs,
        batch_size: 1,
        seed: cfg.seed,
        ..TrainConfig::default()
    };
    let start = Instant::now();
    let hist = train_model(&mut model, std::slice::from_ref(&prep), &items, &[], &tcfg)?;
    let per_epoch = start.elapsed().as_secs_f64() / hist.train_loss.len().max(1) as f64;
    info!("{variant:?} n = {n}: {per_epoch:.4} s/epoch");
    Ok(row(Some(per_epoch), TimingStatus::Ok))
}

/// One row per (variant, size). A segment epoch covers `segment_batch_nb`
/// anchors; the other variants train on every node.
pub fn timing_benchmark(cfg: &BenchConfig) -> Result<Vec<TimingRow>> {
    if cfg.epochs == 0 || cfg.variants.is_empty() || cfg.sizes.is_empty() {
        return Err(CocnError::Config(
            "bench needs epochs > 0 and at least one variant and size".into(),
        ));
    }
    let budget = cfg.mem_budget_bytes.unwrap_or_else(available_memory);
    let mut rows = Vec::new();
    for &n in &cfg.sizes {
        for &variant in &cfg.variants {
            rows.push(time_one(cfg, variant, n, budget)?);
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_variant_reports_at_small_size() {
        let cfg = BenchConfig {
            sizes: vec![100],
            variants: vec![
                Variant::Vanilla,
                Variant::Expanded,
                Variant::Sparse,
                Variant::Segment,
            ],
            segment_batch_nb: 20,
            ..BenchConfig::default()
        };
        let rows = timing_benchmark(&cfg).unwrap();
        assert_eq!(rows.len(), 4);
        for r in &rows {
            assert_eq!(r.status, TimingStatus::Ok);
            assert!(r.seconds_per_epoch.unwrap() > 0.0);
        }
    }

    #[test]
    fn expanded_is_refused_above_the_cap() {
        let cfg = BenchConfig::default();
        let r = time_one(&cfg, Variant::Expanded, EXPANDED_MAX_NODES + 1, u64::MAX).unwrap();
        assert_eq!(r.status, TimingStatus::Refused);
        assert_eq!(r.seconds_per_epoch, None);
    }

    #[test]
    fn memory_budget_marks_rows() {
        let cfg = BenchConfig::default();
        let r = time_one(&cfg, Variant::Sparse, 1000, 1024).unwrap();
        assert_eq!(r.status, TimingStatus::Oom);
        let r = time_one(&cfg, Variant::Segment, 200, 1024).unwrap();
        assert_eq!(r.status, TimingStatus::Ok);
    }
}
