//! Load, train, checkpoint and evaluate through the public API.

use std::path::PathBuf;

use cocn::graph::{load_graph6, load_tu_dataset, ring_graph, write_graph6_line, Dataset, Task};
use cocn::harness::output::FoldRow;
use cocn::harness::{
    cross_validate, evaluate, labelled_items, prepare_dataset, read_csv, train_model,
    write_metrics, TrainConfig,
};
use cocn::model::{load_checkpoint, save_checkpoint, Model, ModelConfig};
use cocn::CocnError;

fn mutag_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/MUTAG")
}

fn small_mutag(n: usize) -> Dataset {
    let full = load_tu_dataset(mutag_dir()).unwrap();
    // Alternate classes so both appear in the subset.
    let (pos, neg): (Vec<_>, Vec<_>) = full
        .graphs
        .into_iter()
        .partition(|g| g.graph_label() == Some(1));
    let graphs = pos
        .into_iter()
        .zip(neg)
        .flat_map(|(a, b)| [a, b])
        .take(n)
        .collect();
    Dataset::new(graphs, full.task, full.num_classes).unwrap()
}

fn small_config(data: &Dataset) -> ModelConfig {
    ModelConfig {
        input_dim: data.feature_dim().unwrap(),
        num_classes: data.num_classes,
        hidden: 8,
        kernel_sizes: vec![3],
        ..ModelConfig::default()
    }
}

#[test]
fn mutag_shape() {
    let data = load_tu_dataset(mutag_dir()).unwrap();
    assert_eq!(data.len(), 188);
    assert_eq!(data.task, Task::GraphClassification);
    assert_eq!(data.num_classes, 2);
    assert_eq!(data.feature_dim(), Some(7));
    let positives = data
        .graphs
        .iter()
        .filter(|g| g.graph_label() == Some(1))
        .count();
    assert_eq!(positives, 125);
    let edges: usize = data.graphs.iter().map(|g| g.num_edges()).sum();
    assert_eq!(edges, 7442 / 2);
}

#[test]
fn checkpoint_round_trip_preserves_evaluation() {
    let data = small_mutag(16);
    let cfg = small_config(&data);
    let items = labelled_items(&data).unwrap();
    let preps = prepare_dataset(&cfg, &data).unwrap();
    let mut model = Model::new(cfg, 3).unwrap();
    let tcfg = TrainConfig {
        lr: 1e-2,
        max_epochs: 3,
        early_stop_patience: 3,
        ..TrainConfig::default()
    };
    let history = train_model(&mut model, &preps, &items, &[], &tcfg).unwrap();
    assert_eq!(history.train_loss.len(), 3);
    assert!(history.train_loss.iter().all(|l| l.is_finite()));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    save_checkpoint(&path, &model).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    let a = evaluate(&model, &preps, &items).unwrap();
    let b = evaluate(&loaded, &preps, &items).unwrap();
    assert_eq!(a, b);
}

#[test]
fn two_fold_report_is_written() {
    let data = small_mutag(12);
    let cfg = small_config(&data);
    let tcfg = TrainConfig {
        folds: 2,
        max_epochs: 2,
        early_stop_patience: 2,
        ..TrainConfig::default()
    };
    let (report, models) = cross_validate(&data, &cfg, &tcfg).unwrap();
    assert_eq!(models.len(), 2);
    assert_eq!(report.folds.len(), 2);
    assert!((0.0..=1.0).contains(&report.accuracy_mean));

    let dir = tempfile::tempdir().unwrap();
    write_metrics(dir.path(), &report).unwrap();
    let rows: Vec<FoldRow> = read_csv(&dir.path().join("folds.csv")).unwrap();
    assert_eq!(rows, FoldRow::from_report(&report));
    let sizes: usize = rows.iter().map(|r| r.test_size).sum();
    assert_eq!(sizes, 12);
}

#[test]
fn mismatched_task_is_rejected() {
    let data = small_mutag(8);
    let cfg = ModelConfig {
        num_classes: 3,
        ..small_config(&data)
    };
    let err = cross_validate(&data, &cfg, &TrainConfig::default()).unwrap_err();
    assert!(matches!(err, CocnError::Config(_)));
}

#[test]
fn graph6_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("rings.g6");
    let rings: Vec<_> = (3..9).map(|n| ring_graph(n).unwrap()).collect();
    let text: String = rings.iter().map(|g| write_graph6_line(g) + "\n").collect();
    std::fs::write(&path, text).unwrap();
    let back = load_graph6(&path).unwrap();
    assert_eq!(back.len(), rings.len());
    for (a, b) in rings.iter().zip(&back) {
        assert_eq!(a.adjacency_dense(), b.adjacency_dense());
    }
}
