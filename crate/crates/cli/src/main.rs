use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use cocn::graph::{grid_graph, load_graph6, load_tu_dataset, ring_graph, Dataset, Graph, Task};
use cocn::harness::output::{write_coords, write_timings, MseRow};
use cocn::harness::{
    all_pairs, cross_validate, evaluate, full_gradient_suite, iso_model_config, isomorphism_test,
    labelled_items, parse_run_config, permuted_matrices, random_non_isomorphic_pairs,
    reconstruction_experiment, seed_from_env, timing_benchmark, write_csv, write_json,
    write_metrics, write_pgm, BenchConfig, ReconstructionConfig,
};
use cocn::model::{load_checkpoint, save_checkpoint, Model, ModelConfig, PositionMode, Variant};
use cocn::CocnError;

#[derive(Parser, Debug)]
#[command(
    name = "cocn",
    version,
    about = "Compressed convolution networks on graphs"
)]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Cross-validated training on a TU-format dataset.
    Train(TrainArgs),
    /// Evaluates a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Counts non-isomorphic pairs that random models fail to separate.
    Isotest(IsoArgs),
    /// Permutation autoencoder on a ring or grid.
    Reconstruct(ReconArgs),
    /// Heatmaps of the permuted adjacency and feature similarity.
    Permviz(PermvizArgs),
    /// Finite-difference gradient suite.
    Gradcheck,
    /// Epoch wall-clock on random graphs.
    Bench(BenchArgs),
}

#[derive(clap::Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Flat JSON with model and training keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    variant: Option<VariantArg>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    tau: Option<f64>,
}

#[derive(clap::Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(clap::Args, Debug)]
struct IsoArgs {
    /// graph6 file, or a directory of graph6 files; omitted for random pairs.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value_t = 1e-4)]
    eps: f64,
    #[arg(long, default_value_t = 5)]
    seeds: u64,
    /// Random non-isomorphic pairs to generate when --data is absent.
    #[arg(long, default_value_t = 500)]
    random: usize,
    #[arg(long, default_value_t = 8)]
    nodes: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Shape {
    Ring,
    Grid,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum VariantArg {
    Vanilla,
    Expanded,
    Sparse,
    Segment,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Vanilla => Variant::Vanilla,
            VariantArg::Expanded => Variant::Expanded,
            VariantArg::Sparse => Variant::Sparse,
            VariantArg::Segment => Variant::Segment,
        }
    }
}

#[derive(clap::Args, Debug)]
struct ReconArgs {
    #[arg(long, value_enum, default_value = "ring")]
    graph: Shape,
    /// Ring length or grid side.
    #[arg(long)]
    size: Option<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = [0.1, 1.0, 10.0])]
    tau: Vec<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(clap::Args, Debug)]
struct PermvizArgs {
    /// TU dataset directory, graph6 file, `ring:N` or `grid:N`.
    #[arg(long)]
    data: String,
    /// Graph index within the dataset.
    #[arg(long, default_value_t = 0)]
    index: usize,
    #[arg(long, default_value_t = 1.0)]
    tau: f64,
    #[arg(long, default_value_t = 6)]
    t: usize,
    /// Trained model; a seeded random one otherwise.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(clap::Args, Debug)]
struct BenchArgs {
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [VariantArg::Expanded, VariantArg::Sparse, VariantArg::Segment])]
    variants: Vec<VariantArg>,
    #[arg(long, value_delimiter = ',', default_values_t = [100usize, 1000, 5000])]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = 8.0)]
    degree: f64,
    #[arg(long, default_value_t = 100)]
    nb: usize,
    #[arg(long, default_value_t = 1)]
    epochs: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// 1 for invalid input or configuration, 2 for failures while running.
fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<CocnError>() {
        Some(
            CocnError::Io { .. }
            | CocnError::Diverged { .. }
            | CocnError::Checkpoint(_)
            | CocnError::Csv(_),
        ) => 2,
        Some(_) => 1,
        None if e.downcast_ref::<Failure>().is_some() => 2,
        None => 1,
    }
}

/// A check that ran to completion and failed.
#[derive(Debug)]
struct Failure(String);

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Failure {}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(t) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .context("configuring the thread pool")?;
    }
    match cli.command {
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Isotest(a) => isotest(a),
        Command::Reconstruct(a) => reconstruct(a),
        Command::Permviz(a) => permviz(a),
        Command::Gradcheck => gradcheck(),
        Command::Bench(a) => bench(a),
    }
}

/// Flag, then `COCN_SEED`, then the configured value.
fn resolve_seed(flag: Option<u64>, configured: u64) -> anyhow::Result<u64> {
    Ok(match flag {
        Some(s) => s,
        None => seed_from_env()?.unwrap_or(configured),
    })
}

/// Fills the dataset-dependent model fields.
fn fit_to_dataset(mcfg: &mut ModelConfig, data: &Dataset) {
    mcfg.task = data.task;
    mcfg.num_classes = data.num_classes;
    match data.feature_dim() {
        Some(d) => mcfg.input_dim = d,
        None => {
            mcfg.position_mode = PositionMode::Implicit;
            mcfg.input_dim = data.max_degree() + 1;
        }
    }
}

fn load_dataset(path: &Path) -> anyhow::Result<Dataset> {
    let data = load_tu_dataset(path)?;
    info!("loaded {} graphs from {}", data.len(), path.display());
    Ok(data)
}

fn train(a: TrainArgs) -> anyhow::Result<()> {
    let (mut mcfg, mut tcfg) = match &a.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CocnError::Io {
                path: p.clone(),
                source: e,
            })?;
            parse_run_config(&text)?
        }
        None => (ModelConfig::default(), Default::default()),
    };
    let data = load_dataset(&a.data)?;
    fit_to_dataset(&mut mcfg, &data);
    tcfg.seed = resolve_seed(a.seed, tcfg.seed)?;
    if let Some(v) = a.folds {
        tcfg.folds = v;
    }
    if let Some(v) = a.epochs {
        tcfg.max_epochs = v;
        tcfg.early_stop_patience = tcfg.early_stop_patience.min(v);
    }
    if let Some(v) = a.patience {
        tcfg.early_stop_patience = v;
    }
    if let Some(v) = a.lr {
        tcfg.lr = v;
    }
    if let Some(v) = a.batch_size {
        tcfg.batch_size = v;
    }
    if let Some(v) = a.variant {
        mcfg.variant = v.into();
    }
    if let Some(v) = a.hidden {
        mcfg.hidden = v;
    }
    if let Some(v) = a.heads {
        mcfg.heads = v;
    }
    if let Some(v) = a.tau {
        mcfg.tau = v;
    }
    let (report, models) = cross_validate(&data, &mcfg, &tcfg)?;
    write_metrics(&a.out, &report)?;
    let best = report
        .folds
        .iter()
        .enumerate()
        .max_by(|x, y| x.1.accuracy.total_cmp(&y.1.accuracy))
        .map(|(i, _)| i)
        .unwrap_or(0);
    save_checkpoint(a.out.join("model.ckpt"), &models[best])?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    info!(
        "accuracy {:.4} ± {:.4} over {} folds; outputs in {}",
        report.accuracy_mean,
        report.accuracy_std,
        report.folds.len(),
        a.out.display()
    );
    Ok(())
}

fn eval(a: EvalArgs) -> anyhow::Result<()> {
    let model = load_checkpoint(&a.checkpoint)?;
    let data = load_dataset(&a.data)?;
    let data = match data.feature_dim() {
        None => {
            let d = model.cfg.input_dim.saturating_sub(1);
            data.with_degree_features(d)?
        }
        Some(_) => data,
    };
    let preps = data
        .graphs
        .iter()
        .map(|g| model.prepare(g))
        .collect::<cocn::Result<Vec<_>>>()?;
    let items = labelled_items(&data)?;
    let result = evaluate(&model, &preps, &items)?;
    let summary = serde_json::json!({
        "loss": result.loss,
        "accuracy": result.accuracy,
        "auc": result.auc,
        "items": items.len(),
    });
    if let Some(out) = &a.out {
        write_json(&out.join("eval.json"), &summary)?;
    }
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn load_graph6_source(path: &Path) -> anyhow::Result<Vec<Graph>> {
    if !path.is_dir() {
        return Ok(load_graph6(path)?);
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(path)
        .map_err(|e| CocnError::Io {
            path: path.to_path_buf(),
            source: e,
        })?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "g6"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CocnError::MissingFile(path.join("*.g6")).into());
    }
    let mut graphs = Vec::new();
    for f in files {
        graphs.extend(load_graph6(&f)?);
    }
    Ok(graphs)
}

fn isotest(a: IsoArgs) -> anyhow::Result<()> {
    if a.seeds == 0 {
        bail!(CocnError::Config("--seeds must be positive".into()));
    }
    let pairs = match &a.data {
        Some(p) => all_pairs(&load_graph6_source(p)?),
        None => {
            let seed = resolve_seed(a.seed, 0)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            random_non_isomorphic_pairs(a.random, a.nodes, &mut rng)?
        }
    };
    let max_deg = pairs
        .iter()
        .flat_map(|(x, y)| x.degrees().into_iter().chain(y.degrees()))
        .max()
        .unwrap_or(0);
    let cfg = iso_model_config(max_deg + 1);
    let seeds: Vec<u64> = (0..a.seeds).collect();
    let report = isomorphism_test(&pairs, &cfg, &seeds, a.eps)?;
    if let Some(out) = &a.out {
        write_json(&out.join("isotest.json"), &report)?;
    }
    println!(
        "undistinguished {} of {} pairs (eps {:e}, {} seeds, {} parameters)",
        report.undistinguished, report.pairs, a.eps, a.seeds, report.num_params
    );
    Ok(())
}

fn reconstruct(a: ReconArgs) -> anyhow::Result<()> {
    let g = match a.graph {
        Shape::Ring => ring_graph(a.size.unwrap_or(32))?,
        Shape::Grid => {
            let s = a.size.unwrap_or(6);
            grid_graph(s, s)?
        }
    };
    let defaults = ReconstructionConfig::default();
    let cfg = ReconstructionConfig {
        epochs: a.epochs.unwrap_or(defaults.epochs),
        seed: resolve_seed(a.seed, defaults.seed)?,
        ..defaults
    };
    let results = reconstruction_experiment(&g, &a.tau, &cfg)?;
    let rows: Vec<MseRow> = results
        .iter()
        .map(|r| MseRow {
            tau: r.tau,
            initial_mse: r.initial_mse,
            mse: r.mse,
        })
        .collect();
    write_csv(&a.out.join("reconstruction.csv"), &rows)?;
    for r in &results {
        write_coords(&a.out.join(format!("coords_tau{}.csv", r.tau)), &r.coords)?;
        println!("tau {:>8}: mse {:.6e}", r.tau, r.mse);
    }
    Ok(())
}

fn permviz_graph(spec: &str, index: usize) -> anyhow::Result<Graph> {
    let size = |s: &str| -> anyhow::Result<usize> {
        s.parse()
            .map_err(|_| CocnError::Config(format!("bad size in `{spec}`")).into())
    };
    if let Some(n) = spec.strip_prefix("ring:") {
        return Ok(ring_graph(size(n)?)?);
    }
    if let Some(n) = spec.strip_prefix("grid:") {
        let n = size(n)?;
        return Ok(grid_graph(n, n)?);
    }
    let path = Path::new(spec);
    let graphs = if path.is_dir() {
        load_dataset(path)?.graphs
    } else {
        load_graph6(path)?
    };
    let count = graphs.len();
    graphs.into_iter().nth(index).ok_or_else(|| {
        CocnError::Config(format!("graph index {index} out of range ({count} graphs)")).into()
    })
}

fn permviz(a: PermvizArgs) -> anyhow::Result<()> {
    let g = permviz_graph(&a.data, a.index)?;
    let model = match &a.checkpoint {
        Some(p) => load_checkpoint(p)?,
        None => {
            let (input_dim, mode) = match g.features() {
                Some(x) => (x.ncols(), PositionMode::Explicit),
                None => (
                    g.degrees().into_iter().max().unwrap_or(0) + 1,
                    PositionMode::Implicit,
                ),
            };
            let cfg = ModelConfig {
                task: Task::GraphClassification,
                input_dim,
                position_mode: mode,
                smoothness_t: a.t,
                tau: a.tau,
                ..ModelConfig::default()
            };
            Model::new(cfg, resolve_seed(a.seed, 0)?)?
        }
    };
    let (adj, sim) = permuted_matrices(&model, &g, a.tau)?;
    write_pgm(&a.out.join("permuted_adjacency.pgm"), &adj)?;
    write_pgm(&a.out.join("permuted_similarity.pgm"), &sim)?;
    println!(
        "wrote {0}x{0} heatmaps to {1}",
        adj.nrows(),
        a.out.display()
    );
    Ok(())
}

fn gradcheck() -> anyhow::Result<()> {
    let suite = full_gradient_suite()?;
    let mut failed = 0;
    for e in &suite {
        let mark = if e.passed() { "ok" } else { "FAIL" };
        println!(
            "{:<28} {:.3e}  (< {:.0e})  {mark}",
            e.name, e.max_error, e.tolerance
        );
        failed += usize::from(!e.passed());
    }
    if failed > 0 {
        return Err(Failure(format!("{failed} gradient checks failed")).into());
    }
    Ok(())
}

fn bench(a: BenchArgs) -> anyhow::Result<()> {
    let defaults = BenchConfig::default();
    let cfg = BenchConfig {
        variants: a.variants.into_iter().map(Variant::from).collect(),
        sizes: a.sizes,
        avg_degree: a.degree,
        segment_batch_nb: a.nb,
        epochs: a.epochs,
        seed: resolve_seed(a.seed, defaults.seed)?,
        ..defaults
    };
    let rows = timing_benchmark(&cfg)?;
    write_timings(&a.out.join("timings.csv"), &rows)?;
    for r in &rows {
        let secs = r
            .seconds_per_epoch
            .map_or_else(|| "-".to_string(), |s| format!("{s:.4}"));
        println!(
            "{:<9} n={:<7} {:>10} s/epoch  {:?}",
            format!("{:?}", r.variant),
            r.n,
            secs,
            r.status
        );
    }
    Ok(())
}
