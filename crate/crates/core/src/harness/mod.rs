//! Training, evaluation and benchmarking protocols.

pub mod gradcheck;
pub mod isomorphism;
pub mod metrics;
pub mod output;
pub mod permviz;
pub mod reconstruction;
pub mod timing;
pub mod train;

use serde_json::{Map, Value};

use crate::error::{CocnError, Result};
use crate::model::ModelConfig;

pub use gradcheck::{full_gradient_suite, GradcheckEntry};
pub use isomorphism::{
    all_pairs, canonical_form, graph_embedding, iso_model_config, isomorphism_test,
    random_non_isomorphic_pairs, IsoReport,
};
pub use metrics::{accuracy, mean_std, roc_auc};
pub use output::{read_csv, read_pgm, write_csv, write_json, write_metrics, write_pgm};
pub use permviz::permuted_matrices;
pub use reconstruction::{reconstruction_experiment, ReconstructionConfig, ReconstructionResult};
pub use timing::{timing_benchmark, BenchConfig, TimingRow, TimingStatus};
pub use train::{
    cross_validate, evaluate, labelled_items, prepare_dataset, stratified_folds, task_loss,
    train_model, EarlyStopping, Evaluation, FoldReport, Item, MetricsReport, StopDecision,
    TrainConfig, TrainHistory,
};

/// Environment variable overriding the configured seed.
pub const SEED_ENV: &str = "COCN_SEED";

fn keys_of<T: serde::Serialize>(value: &T) -> Vec<String> {
    match serde_json::to_value(value) {
        Ok(Value::Object(m)) => m.keys().cloned().collect(),
        _ => Vec::new(),
    }
}

/// Splits one flat JSON object into model and training settings. Keys are
/// the field names of [`ModelConfig`] and [`TrainConfig`]; any other key is
/// an error.
pub fn parse_run_config(text: &str) -> Result<(ModelConfig, TrainConfig)> {
    let value: Value = serde_json::from_str(text)?;
    let Value::Object(obj) = value else {
        return Err(CocnError::Config("config must be a JSON object".into()));
    };
    let model_keys = keys_of(&ModelConfig::default());
    let train_keys = keys_of(&TrainConfig::default());
    let (mut model, mut train) = (Map::new(), Map::new());
    for (k, v) in obj {
        if model_keys.contains(&k) {
            model.insert(k, v);
        } else if train_keys.contains(&k) {
            train.insert(k, v);
        } else {
            return Err(CocnError::Config(format!("unknown config key `{k}`")));
        }
    }
    let mcfg: ModelConfig = serde_json::from_value(Value::Object(model))?;
    let tcfg: TrainConfig = serde_json::from_value(Value::Object(train))?;
    Ok((mcfg, tcfg))
}

/// Seed from [`SEED_ENV`] when set.
pub fn seed_from_env() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(s) => s.trim().parse().map(Some).map_err(|_| {
            CocnError::Config(format!("{SEED_ENV} must be an unsigned integer, got `{s}`"))
        }),
        Err(_) => Ok(None),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Variant;

    #[test]
    fn flat_config_is_split() {
        let (m, t) = parse_run_config(
            r#"{"variant": "sparse", "hidden": 32, "lr": 0.01, "folds": 3, "seed": 9}"#,
        )
        .unwrap();
        assert_eq!(m.variant, Variant::Sparse);
        assert_eq!(m.hidden, 32);
        assert_eq!(t.lr, 0.01);
        assert_eq!(t.folds, 3);
        assert_eq!(t.seed, 9);
        assert_eq!(t.max_epochs, TrainConfig::default().max_epochs);
    }

    #[test]
    fn unknown_key_is_rejected() {
        let err = parse_run_config(r#"{"hiddn": 3}"#).unwrap_err();
        assert!(err.to_string().contains("hiddn"));
        assert!(parse_run_config("[1]").is_err());
    }
}
