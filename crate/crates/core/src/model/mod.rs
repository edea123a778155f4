//! Network assembly: input module, per-head permutation, shared compressed
//! convolution stack and task heads.

mod checkpoint;
mod segment;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use segment::{segment_windows, SegmentBatch};

use std::sync::Arc;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Parameter, Tape, Var};
use crate::convolution::{
    apply_layer, diag_kernel_shape, output_len, transposed_conv_layer, DiagConvKernel, LayerConfig,
    LevelState, TConvKernel,
};
use crate::error::{CocnError, Result};
use crate::graph::{
    degree_onehot_features, normalized_adjacency, shortest_path_distances_default, CsrMatrix,
    Graph, Task,
};
use crate::permutation::{
    regress_position_explicit, regress_position_implicit, Permutation, PositionMlp,
};

/// Largest graph the expanded variant accepts.
pub const EXPANDED_MAX_NODES: usize = 20_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Vanilla,
    Expanded,
    Sparse,
    Segment,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositionMode {
    Explicit,
    Implicit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: Variant,
    pub task: Task,
    pub input_dim: usize,
    pub num_classes: usize,
    pub heads: usize,
    pub l1: usize,
    pub l2: usize,
    /// One entry per down layer, or a single entry used everywhere.
    pub kernel_sizes: Vec<usize>,
    pub hidden: usize,
    pub tau: f64,
    pub smoothness_t: usize,
    pub position_mode: PositionMode,
    pub position_hidden: usize,
    pub segment_b: usize,
    pub segment_batch_nb: usize,
    pub residual: bool,
    pub inception: bool,
    pub inception_kernel_sizes: Vec<usize>,
    /// Extra unit-step layer after the pooling layers. Defaults to on for
    /// graph-level outputs and off for node-level ones.
    pub final_uco: Option<bool>,
    pub dropout: f64,
    pub layer_norm_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            variant: Variant::Vanilla,
            task: Task::GraphClassification,
            input_dim: 1,
            num_classes: 2,
            heads: 1,
            l1: 1,
            l2: 1,
            kernel_sizes: vec![5],
            hidden: 64,
            tau: 1.0,
            smoothness_t: 6,
            position_mode: PositionMode::Explicit,
            position_hidden: 32,
            segment_b: 8,
            segment_batch_nb: 1000,
            residual: false,
            inception: false,
            inception_kernel_sizes: vec![3, 5],
            final_uco: None,
            dropout: 0.0,
            layer_norm_eps: 1e-5,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(CocnError::Config(m));
        if self.input_dim == 0 || self.hidden == 0 || self.heads == 0 {
            return fail("input_dim, hidden and heads must be positive".into());
        }
        if self.num_classes < 2 {
            return fail(format!(
                "num_classes must be at least 2, got {}",
                self.num_classes
            ));
        }
        if self.l1 + self.l2 == 0 {
            return fail("at least one convolution layer is required (l1 + l2 ≥ 1)".into());
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return fail(format!("tau must be positive, got {}", self.tau));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if self.position_mode == PositionMode::Explicit && self.position_hidden == 0 {
            return fail("position_hidden must be positive".into());
        }
        let count = self.down_layer_count();
        if self.kernel_sizes.is_empty()
            || (self.kernel_sizes.len() != 1 && self.kernel_sizes.len() != count)
            || self.kernel_sizes.contains(&0)
        {
            return fail(format!(
                "kernel_sizes needs 1 or {count} positive entries, got {:?}",
                self.kernel_sizes
            ));
        }
        match self.variant {
            Variant::Vanilla if self.residual || self.inception => {
                return fail("the vanilla variant has no residual or inception layers".into());
            }
            Variant::Segment => {
                let kmax = self.max_kernel();
                if self.segment_b < kmax {
                    return fail(format!(
                        "segment_b = {} is below the largest kernel size {kmax}",
                        self.segment_b
                    ));
                }
                if self.segment_batch_nb == 0 {
                    return fail("segment_batch_nb must be positive".into());
                }
            }
            _ => {}
        }
        if self.inception
            && (self.inception_kernel_sizes.is_empty() || self.inception_kernel_sizes.contains(&0))
        {
            return fail("inception_kernel_sizes must be non-empty and positive".into());
        }
        if self.task == Task::IsomorphismPairs && self.position_mode != PositionMode::Implicit {
            return fail("isomorphism pairs use implicit positions".into());
        }
        Ok(())
    }

    pub fn final_uco_enabled(&self) -> bool {
        self.final_uco
            .unwrap_or(self.task != Task::NodeClassification || self.variant == Variant::Segment)
    }

    /// Whether node logits come from the up-sampling path.
    pub fn has_up_path(&self) -> bool {
        self.task == Task::NodeClassification && self.variant != Variant::Segment
    }

    fn down_layer_count(&self) -> usize {
        self.l1 + self.l2 + usize::from(self.final_uco_enabled())
    }

    fn kernel_at(&self, i: usize) -> usize {
        if self.kernel_sizes.len() == 1 {
            self.kernel_sizes[0]
        } else {
            self.kernel_sizes[i]
        }
    }

    pub fn max_kernel(&self) -> usize {
        let mut k = self.kernel_sizes.iter().copied().max().unwrap_or(1);
        if self.inception {
            k = k.max(
                self.inception_kernel_sizes
                    .iter()
                    .copied()
                    .max()
                    .unwrap_or(1),
            );
        }
        k
    }

    /// Down-sampling layers in order: unit-step, pooling, optional unit-step.
    pub fn down_layers(&self) -> Vec<LayerConfig> {
        let unit = |k: usize| {
            if self.inception {
                let ks = self.inception_kernel_sizes.clone();
                LayerConfig {
                    k: *ks.iter().max().expect("validated"),
                    s: 1,
                    out_channels: self.hidden,
                    residual: self.residual,
                    inception_ks: Some(ks),
                }
            } else {
                LayerConfig {
                    k,
                    s: 1,
                    out_channels: self.hidden,
                    residual: self.residual,
                    inception_ks: None,
                }
            }
        };
        let mut out = Vec::with_capacity(self.down_layer_count());
        for i in 0..self.l1 {
            out.push(unit(self.kernel_at(i)));
        }
        for j in 0..self.l2 {
            let k = self.kernel_at(self.l1 + j);
            out.push(LayerConfig {
                k,
                s: k,
                out_channels: self.hidden,
                residual: self.residual,
                inception_ks: None,
            });
        }
        if self.final_uco_enabled() {
            out.push(unit(self.kernel_at(self.l1 + self.l2)));
        }
        out
    }

    /// `(k, s)` of each transposed layer. The down path is mirrored in
    /// reverse; without the final unit-step layer a `(1, 1)` layer is appended
    /// so that there are always `l1 + l2 + 1` of them.
    pub fn up_layers(&self) -> Vec<(usize, usize)> {
        if !self.has_up_path() {
            return Vec::new();
        }
        let mut out: Vec<_> = self
            .down_layers()
            .iter()
            .rev()
            .map(|l| (l.k, l.s))
            .collect();
        if !self.final_uco_enabled() {
            out.push((1, 1));
        }
        out
    }

    /// Width of the classifier output: one logit for binary problems.
    pub fn output_dim(&self) -> usize {
        if self.num_classes == 2 {
            1
        } else {
            self.num_classes
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Init {
    Uniform(usize),
    Zeros,
    Ones,
}

#[derive(Debug, Clone, PartialEq)]
struct ParamSpec {
    name: String,
    shape: (usize, usize),
    init: Init,
}

/// Indices into the flat parameter list.
#[derive(Debug, Clone, PartialEq)]
struct Layout {
    specs: Vec<ParamSpec>,
    input: (usize, usize),
    norm: (usize, usize),
    pos: Vec<(usize, usize)>,
    down: Vec<Vec<(usize, usize)>>,
    up: Vec<(usize, usize)>,
    cls: (usize, usize),
}

struct LayoutBuilder {
    specs: Vec<ParamSpec>,
}

impl LayoutBuilder {
    fn add(&mut self, name: String, shape: (usize, usize), init: Init) -> usize {
        self.specs.push(ParamSpec { name, shape, init });
        self.specs.len() - 1
    }

    fn pair(&mut self, name: &str, rows: usize, cols: usize, fan_in: usize) -> (usize, usize) {
        let w = self.add(format!("{name}.w"), (rows, cols), Init::Uniform(fan_in));
        let b = self.add(format!("{name}.b"), (1, cols), Init::Zeros);
        (w, b)
    }
}

impl Layout {
    fn new(cfg: &ModelConfig) -> Layout {
        let mut lb = LayoutBuilder { specs: Vec::new() };
        let h = cfg.hidden;
        let input = lb.pair("input", cfg.input_dim, h, cfg.input_dim);
        let norm = (
            lb.add("input.norm.gain".into(), (1, h), Init::Ones),
            lb.add("input.norm.bias".into(), (1, h), Init::Zeros),
        );
        let mut pos = Vec::new();
        if cfg.position_mode == PositionMode::Explicit {
            pos.push(lb.pair("pos.0", h, cfg.position_hidden, h));
            pos.push(lb.pair("pos.1", cfg.position_hidden, cfg.heads, cfg.position_hidden));
        }
        let mut down = Vec::new();
        for (i, layer) in cfg.down_layers().iter().enumerate() {
            let mut branches = Vec::new();
            for (j, &k) in layer.branch_ks().iter().enumerate() {
                let (r, c) = diag_kernel_shape(1, h, k, h);
                branches.push(lb.pair(&format!("down.{i}.{j}"), r, c, r));
            }
            down.push(branches);
        }
        let mut up = Vec::new();
        for (i, &(k, _)) in cfg.up_layers().iter().enumerate() {
            let w = lb.add(format!("up.{i}.w"), (h, k * h), Init::Uniform(h));
            let b = lb.add(format!("up.{i}.b"), (1, h), Init::Zeros);
            up.push((w, b));
        }
        let cls = lb.pair("cls", cfg.heads * h, cfg.output_dim(), cfg.heads * h);
        Layout {
            specs: lb.specs,
            input,
            norm,
            pos,
            down,
            up,
            cls,
        }
    }
}

/// Deterministic fan-in uniform initialisation `U(±sqrt(6 / fan_in))`.
pub fn init_params(cfg: &ModelConfig, seed: u64) -> Result<Vec<Parameter>> {
    cfg.validate()?;
    let layout = Layout::new(cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(layout
        .specs
        .iter()
        .map(|s| {
            let value = match s.init {
                Init::Uniform(fan_in) => {
                    let a = (6.0 / fan_in.max(1) as f64).sqrt();
                    Array2::from_shape_fn(s.shape, |_| rng.gen_range(-a..a))
                }
                Init::Zeros => Array2::zeros(s.shape),
                Init::Ones => Array2::ones(s.shape),
            };
            Parameter::new(s.name.clone(), value)
        })
        .collect())
}

/// Per-graph inputs computed once and reused across epochs.
#[derive(Debug, Clone)]
pub struct PreparedGraph {
    pub x: Array2<f64>,
    pub adj: Arc<CsrMatrix>,
    pub a_norm: Arc<CsrMatrix>,
    /// Implicit positions, one column per head.
    pub implicit: Option<Array2<f64>>,
}

impl PreparedGraph {
    pub fn n(&self) -> usize {
        self.x.nrows()
    }
}

/// Parameters bound to one tape, in declaration order.
#[derive(Debug, Clone)]
pub struct Bound {
    pub vars: Vec<Var>,
}

#[derive(Debug, Clone, Copy)]
pub struct GraphOutput {
    pub logits: Var,
    /// Pooled, head-concatenated representation before the classifier.
    pub embedding: Var,
}

/// Configuration plus parameters.
#[derive(Debug, Clone)]
pub struct Model {
    pub cfg: ModelConfig,
    pub params: Vec<Parameter>,
    layout: Layout,
}

impl Model {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Model> {
        let params = init_params(&cfg, seed)?;
        let layout = Layout::new(&cfg);
        Ok(Model {
            cfg,
            params,
            layout,
        })
    }

    /// Wraps existing values; shapes must match the configuration.
    pub fn from_values(cfg: ModelConfig, values: Vec<Array2<f64>>) -> Result<Model> {
        cfg.validate()?;
        let layout = Layout::new(&cfg);
        if values.len() != layout.specs.len() {
            return Err(CocnError::Checkpoint(format!(
                "expected {} tensors, got {}",
                layout.specs.len(),
                values.len()
            )));
        }
        let mut params = Vec::with_capacity(values.len());
        for (spec, v) in layout.specs.iter().zip(values) {
            if v.dim() != spec.shape {
                return Err(CocnError::Checkpoint(format!(
                    "{} has shape {:?}, expected {:?}",
                    spec.name,
                    v.dim(),
                    spec.shape
                )));
            }
            params.push(Parameter::new(spec.name.clone(), v));
        }
        Ok(Model {
            cfg,
            params,
            layout,
        })
    }

    /// Tensor shapes in declaration order.
    pub fn shapes(&self) -> Vec<(usize, usize)> {
        self.layout.specs.iter().map(|s| s.shape).collect()
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(Parameter::len).sum()
    }

    pub fn bind(&self, tape: &mut Tape) -> Bound {
        Bound {
            vars: self
                .params
                .iter()
                .map(|p| tape.var(p.value.clone()))
                .collect(),
        }
    }

    /// Adds the tape gradients of `bound` into the parameter gradients.
    pub fn accumulate_grads(&mut self, tape: &Tape, bound: &Bound) {
        for (p, &v) in self.params.iter_mut().zip(&bound.vars) {
            if let Some(g) = tape.grad(v) {
                p.grad += g;
            }
        }
    }

    pub fn zero_grads(&mut self) {
        self.params.iter_mut().for_each(Parameter::zero_grad);
    }

    /// Validates `g` against the configuration and precomputes operators.
    pub fn prepare(&self, g: &Graph) -> Result<PreparedGraph> {
        prepare_graph(&self.cfg, g)
    }

    fn pair(&self, b: &Bound, idx: (usize, usize)) -> (Var, Var) {
        (b.vars[idx.0], b.vars[idx.1])
    }

    fn kernels(&self, b: &Bound) -> Vec<Vec<DiagConvKernel>> {
        self.layout
            .down
            .iter()
            .map(|br| {
                br.iter()
                    .map(|&idx| {
                        let (w, b) = self.pair(b, idx);
                        DiagConvKernel { w, b }
                    })
                    .collect()
            })
            .collect()
    }

    fn input_module(
        &self,
        tape: &mut Tape,
        b: &Bound,
        x: &Array2<f64>,
        dropout: Option<&mut ChaCha8Rng>,
    ) -> Result<Var> {
        let xv = tape.constant(x.clone());
        let (w, bias) = self.pair(b, self.layout.input);
        let h = tape.linear(xv, w, bias)?;
        let h = tape.layer_norm(h, self.cfg.layer_norm_eps);
        let (gain, shift) = self.pair(b, self.layout.norm);
        let h = tape.mul_row(h, gain)?;
        let h = tape.add_row(h, shift)?;
        let h = tape.relu(h);
        self.dropout(tape, h, dropout)
    }

    fn dropout(&self, tape: &mut Tape, x: Var, rng: Option<&mut ChaCha8Rng>) -> Result<Var> {
        let p = self.cfg.dropout;
        match rng {
            Some(rng) if p > 0.0 => {
                let keep = 1.0 / (1.0 - p);
                let mask = Array2::from_shape_fn(tape.shape(x), |_| {
                    if rng.gen::<f64>() < p {
                        0.0
                    } else {
                        keep
                    }
                });
                let m = tape.constant(mask);
                tape.mul(x, m)
            }
            _ => Ok(x),
        }
    }

    /// Approximate positions, n × heads.
    fn positions(&self, tape: &mut Tape, b: &Bound, h0: Var, prep: &PreparedGraph) -> Result<Var> {
        match self.cfg.position_mode {
            PositionMode::Explicit => {
                let mlp = PositionMlp {
                    layers: self.layout.pos.iter().map(|&p| self.pair(b, p)).collect(),
                };
                regress_position_explicit(tape, h0, &prep.a_norm, &mlp, self.cfg.smoothness_t)
            }
            PositionMode::Implicit => {
                let r = prep.implicit.clone().ok_or_else(|| {
                    CocnError::Config("implicit positions were not prepared".into())
                })?;
                Ok(tape.constant(r))
            }
        }
    }

    fn permutations(
        &self,
        tape: &mut Tape,
        b: &Bound,
        h0: Var,
        prep: &PreparedGraph,
    ) -> Result<Vec<Permutation>> {
        let ra = self.positions(tape, b, h0, prep)?;
        let n = prep.n();
        let sparse = self.cfg.variant == Variant::Sparse;
        (0..self.cfg.heads)
            .map(|h| {
                let col = tape.slice(ra, 0..n, h..h + 1)?;
                Permutation::from_positions(tape, col, self.cfg.tau, sparse)
            })
            .collect()
    }

    /// Runs the shared down-sampling stack; returns the final state and the
    /// input length of every layer.
    fn down(
        &self,
        tape: &mut Tape,
        kernels: &[Vec<DiagConvKernel>],
        mut state: LevelState,
    ) -> Result<(LevelState, Vec<usize>)> {
        let layers = self.cfg.down_layers();
        let mut lens = Vec::with_capacity(layers.len());
        for (cfg, ks) in layers.iter().zip(kernels) {
            lens.push(state.len(tape));
            state = apply_layer(tape, &state, cfg, ks)?;
        }
        Ok((state, lens))
    }

    fn head_pooled(
        &self,
        tape: &mut Tape,
        b: &Bound,
        prep: &PreparedGraph,
        dropout: Option<&mut ChaCha8Rng>,
    ) -> Result<Var> {
        let h0 = self.input_module(tape, b, &prep.x, dropout)?;
        let perms = self.permutations(tape, b, h0, prep)?;
        let kernels = self.kernels(b);
        let mut pooled = Vec::with_capacity(perms.len());
        for perm in &perms {
            let (xh, ah) = perm.permute(tape, h0, &prep.adj)?;
            let state = LevelState::new(tape, xh, vec![ah])?;
            let (out, _) = self.down(tape, &kernels, state)?;
            pooled.push(tape.max_rows(out.h));
        }
        concat(tape, &pooled)
    }

    fn classify(
        &self,
        tape: &mut Tape,
        b: &Bound,
        x: Var,
        dropout: Option<&mut ChaCha8Rng>,
    ) -> Result<Var> {
        let x = self.dropout(tape, x, dropout)?;
        let (w, bias) = self.pair(b, self.layout.cls);
        tape.linear(x, w, bias)
    }

    /// Graph logits (1 × output_dim) and the pooled embedding.
    pub fn forward_graph(
        &self,
        tape: &mut Tape,
        b: &Bound,
        prep: &PreparedGraph,
        mut dropout: Option<&mut ChaCha8Rng>,
    ) -> Result<GraphOutput> {
        if self.cfg.variant == Variant::Segment {
            return Err(CocnError::Config(
                "segment models run through segment_forward".into(),
            ));
        }
        let embedding = self.head_pooled(tape, b, prep, dropout.as_deref_mut())?;
        let logits = self.classify(tape, b, embedding, dropout)?;
        Ok(GraphOutput { logits, embedding })
    }

    /// Node logits, n × output_dim, in input node order.
    pub fn forward_node(
        &self,
        tape: &mut Tape,
        b: &Bound,
        prep: &PreparedGraph,
        mut dropout: Option<&mut ChaCha8Rng>,
    ) -> Result<Var> {
        if !self.cfg.has_up_path() {
            return Err(CocnError::Config(
                "forward_node needs a non-segment model built for node classification".into(),
            ));
        }
        let h0 = self.input_module(tape, b, &prep.x, dropout.as_deref_mut())?;
        let perms = self.permutations(tape, b, h0, prep)?;
        let kernels = self.kernels(b);
        let ups = self.cfg.up_layers();
        let n = prep.n();
        let mut per_head = Vec::with_capacity(perms.len());
        for perm in &perms {
            let (xh, ah) = perm.permute(tape, h0, &prep.adj)?;
            let state = LevelState::new(tape, xh, vec![ah])?;
            let (out, lens) = self.down(tape, &kernels, state)?;
            let mut h = out.h;
            for (i, &(k, s)) in ups.iter().enumerate() {
                let target = lens.iter().rev().nth(i).copied().unwrap_or(n);
                debug_assert_eq!(tape.shape(h).0, output_len(target, k, s));
                let (w, bias) = self.pair(b, self.layout.up[i]);
                h = transposed_conv_layer(tape, h, k, s, target, &TConvKernel { w, b: bias })?;
            }
            per_head.push(perm.unpermute(tape, h)?);
        }
        let cat = concat(tape, &per_head)?;
        self.classify(tape, b, cat, dropout)
    }

    /// Positions used to sort the whole graph before segmentation (head 0, no
    /// gradient).
    pub fn global_positions(&self, prep: &PreparedGraph) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let b = self.bind(&mut tape);
        let h0 = self.input_module(&mut tape, &b, &prep.x, None)?;
        let ra = self.positions(&mut tape, &b, h0, prep)?;
        Ok(tape.value(ra).column(0).to_vec())
    }

    /// Pooled embedding of every segment in `batch`, one row each.
    pub fn segment_embeddings(
        &self,
        tape: &mut Tape,
        b: &Bound,
        batch: &SegmentBatch,
        mut dropout: Option<&mut ChaCha8Rng>,
    ) -> Result<Var> {
        if self.cfg.variant != Variant::Segment {
            return Err(CocnError::Config(
                "segment models need the segment variant".into(),
            ));
        }
        if batch.is_empty() {
            return Err(CocnError::Size("empty segment batch".into()));
        }
        let mut reps = Vec::with_capacity(batch.len());
        for i in 0..batch.len() {
            let prep = batch.prepare(&self.cfg, i)?;
            reps.push(self.head_pooled(tape, b, &prep, dropout.as_deref_mut())?);
        }
        if reps.len() == 1 {
            Ok(reps[0])
        } else {
            tape.concat_rows(&reps)
        }
    }

    /// Logits for a batch of segments: one row per anchor for node tasks, a
    /// single row (max over segment embeddings) for graph tasks.
    pub fn segment_forward(
        &self,
        tape: &mut Tape,
        b: &Bound,
        batch: &SegmentBatch,
        mut dropout: Option<&mut ChaCha8Rng>,
    ) -> Result<Var> {
        let stacked = self.segment_embeddings(tape, b, batch, dropout.as_deref_mut())?;
        let features = match self.cfg.task {
            Task::NodeClassification => stacked,
            _ => tape.max_rows(stacked),
        };
        self.classify(tape, b, features, dropout)
    }

    /// Graph logits from every segment of a graph, max-pooled across batches.
    pub fn segment_graph_forward(
        &self,
        tape: &mut Tape,
        b: &Bound,
        batches: &[SegmentBatch],
        mut dropout: Option<&mut ChaCha8Rng>,
    ) -> Result<Var> {
        let mut pooled = Vec::with_capacity(batches.len());
        for batch in batches {
            let e = self.segment_embeddings(tape, b, batch, dropout.as_deref_mut())?;
            pooled.push(tape.max_rows(e));
        }
        let all = if pooled.len() == 1 {
            pooled[0]
        } else {
            tape.concat_rows(&pooled)?
        };
        let features = tape.max_rows(all);
        self.classify(tape, b, features, dropout)
    }
}

fn concat(tape: &mut Tape, parts: &[Var]) -> Result<Var> {
    if parts.len() == 1 {
        Ok(parts[0])
    } else {
        tape.concat_cols(parts)
    }
}

pub(crate) fn prepare_graph(cfg: &ModelConfig, g: &Graph) -> Result<PreparedGraph> {
    cfg.validate()?;
    let n = g.n();
    if cfg.variant == Variant::Expanded && n > EXPANDED_MAX_NODES {
        return Err(CocnError::Config(format!(
            "the expanded variant is capped at {EXPANDED_MAX_NODES} nodes; graph has {n}"
        )));
    }
    if cfg.variant == Variant::Segment && cfg.segment_b > n {
        return Err(CocnError::Config(format!(
            "segment_b = {} exceeds the graph size {n}",
            cfg.segment_b
        )));
    }
    let x = match g.features() {
        Some(x) => x.clone(),
        None if cfg.position_mode == PositionMode::Implicit => {
            degree_onehot_features(g, cfg.input_dim - 1)?
        }
        None => {
            return Err(CocnError::Config(
                "graph has no node features and position_mode is explicit".into(),
            ))
        }
    };
    if x.ncols() != cfg.input_dim {
        return Err(CocnError::Config(format!(
            "graph features have {} columns but input_dim is {}",
            x.ncols(),
            cfg.input_dim
        )));
    }
    let implicit = match cfg.position_mode {
        PositionMode::Implicit => {
            // Segment models only sort with these; segments get their own.
            let heads = if cfg.variant == Variant::Segment {
                1
            } else {
                cfg.heads
            };
            Some(regress_position_implicit(
                &shortest_path_distances_default(g),
                heads,
            )?)
        }
        PositionMode::Explicit => None,
    };
    Ok(PreparedGraph {
        x,
        adj: Arc::new(g.adjacency_csr()),
        a_norm: Arc::new(normalized_adjacency(g)),
        implicit,
    })
}
