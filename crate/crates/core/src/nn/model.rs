//! Model configuration, parameters and the full forward pass.

use std::fmt;
use std::rc::Rc;
use std::str::FromStr;

use ndarray::{Array3, ArrayD, Axis, IxDyn};
use rand::distributions::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layers::{self, BlockVars, BnVars, LayerVars, Mode, ResidualVars, RunningStats, StructuralInput};
use super::ops::{self, BatchStats};
use super::tape::{Tape, Var};
use crate::graph::{GraphSpec, SpatialAdjacency, DEFAULT_ALPHA, DEFAULT_MAX_HOP};
use crate::struct_adj::StructuralAdjacency;
use crate::{Error, FeatureTensor, Result};

/// One entry of the channel plan: output width and temporal stride.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Stage {
    pub width: usize,
    pub stride: usize,
}

/// Channel plan written as comma-separated widths, `/2` marking stride 2, e.g.
/// `32,32,48/2,48,64/2`. The first entry is the initial block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelPlan(pub Vec<Stage>);

impl FromStr for ChannelPlan {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let stages = s
            .split(',')
            .map(|part| {
                let part = part.trim();
                let (width, stride) = match part.split_once('/') {
                    Some((w, st)) => (w.trim(), st.trim()),
                    None => (part, "1"),
                };
                let bad = || Error::InvalidConfig(format!("bad channel plan entry `{part}`"));
                Ok(Stage {
                    width: width.parse().map_err(|_| bad())?,
                    stride: stride.parse().map_err(|_| bad())?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self(stages))
    }
}

impl fmt::Display for ChannelPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .0
            .iter()
            .map(|s| if s.stride == 1 { s.width.to_string() } else { format!("{}/{}", s.width, s.stride) })
            .collect();
        f.write_str(&parts.join(","))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub in_channels: usize,
    pub plan: ChannelPlan,
    pub kernel: usize,
    pub dropout: f64,
    pub classes: usize,
    pub structural: bool,
    pub max_hop: usize,
    pub alpha: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            in_channels: 6,
            plan: "32,32,48/2,48,64/2".parse().expect("valid plan"),
            kernel: 5,
            dropout: 0.25,
            classes: 60,
            structural: true,
            max_hop: DEFAULT_MAX_HOP,
            alpha: DEFAULT_ALPHA,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.plan.0.len() < 2 {
            return bad(format!("plan `{}` needs an initial block and at least one block", self.plan));
        }
        if self.plan.0.iter().any(|s| s.width == 0 || s.stride == 0) || self.in_channels == 0 {
            return bad(format!("plan `{}` has a zero width or stride", self.plan));
        }
        if self.kernel % 2 == 0 {
            return bad(format!("temporal kernel {} must be odd", self.kernel));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.classes == 0 {
            return bad("class count must be positive".into());
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha {} must be positive", self.alpha));
        }
        Ok(())
    }

    pub fn to_kv(&self) -> String {
        format!(
            "in_channels = {}\nplan = {}\nkernel = {}\ndropout = {}\nclasses = {}\nstructural = {}\nmax_hop = {}\nalpha = {}\n",
            self.in_channels, self.plan, self.kernel, self.dropout, self.classes, self.structural, self.max_hop, self.alpha
        )
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidConfig(format!("expected `key = value`, got `{line}`")))?;
            let (key, value) = (key.trim(), value.trim());
            let bad = || Error::InvalidConfig(format!("bad value `{value}` for `{key}`"));
            match key {
                "in_channels" => cfg.in_channels = value.parse().map_err(|_| bad())?,
                "plan" => cfg.plan = value.parse()?,
                "kernel" => cfg.kernel = value.parse().map_err(|_| bad())?,
                "dropout" => cfg.dropout = value.parse().map_err(|_| bad())?,
                "classes" => cfg.classes = value.parse().map_err(|_| bad())?,
                "structural" => cfg.structural = value.parse().map_err(|_| bad())?,
                "max_hop" => cfg.max_hop = value.parse().map_err(|_| bad())?,
                "alpha" => cfg.alpha = value.parse().map_err(|_| bad())?,
                other => return Err(Error::InvalidConfig(format!("unknown model key `{other}`"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Named parameter arrays in a fixed order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<ArrayD<f64>>,
}

impl ParamStore {
    pub fn push(&mut self, name: impl Into<String>, value: ArrayD<f64>) -> usize {
        self.names.push(name.into());
        self.values.push(value);
        self.values.len() - 1
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[ArrayD<f64>] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [ArrayD<f64>] {
        &mut self.values
    }

    pub fn get(&self, name: &str) -> Option<&ArrayD<f64>> {
        self.names.iter().position(|n| n == name).map(|i| &self.values[i])
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(ArrayD::len).sum()
    }

    /// Places every parameter on `tape`, returning handles in store order.
    pub fn bind(&self, tape: &Tape) -> Vec<Var> {
        self.values.iter().map(|v| tape.parameter(v.clone())).collect()
    }
}

#[derive(Debug, Clone, Copy)]
struct BnIdx {
    gamma: usize,
    beta: usize,
    stats: usize,
}

#[derive(Debug, Clone, Copy)]
enum ResidualIdx {
    None,
    Identity,
    Projection { w: usize, bn: BnIdx },
}

#[derive(Debug, Clone, Copy)]
struct BlockIdx {
    w: usize,
    b: usize,
    m: Option<usize>,
    bn: BnIdx,
    tcn_w: usize,
    tcn_b: usize,
    stride: usize,
    residual: ResidualIdx,
}

/// Output of [`Model::forward`].
#[derive(Debug, Clone)]
pub struct ForwardPass {
    /// `(N, classes)` scores.
    pub logits: Var,
    /// Output of the last block, `(N·M, C, T, V)`.
    pub features: Var,
    /// Batch statistics of every normalization, in the order of [`Model::running_stats`].
    pub batch_stats: Vec<BatchStats>,
}

/// Whether dropout and batch statistics are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunMode {
    Train { dropout_seed: u64 },
    Eval,
}

/// Stable 64-bit FNV-1a hash, used to give each named parameter its own random stream.
fn name_stream(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

fn uniform_init(seed: u64, name: &str, shape: &[usize], fan_in: usize) -> ArrayD<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(name_stream(name));
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound);
    ArrayD::from_shape_simple_fn(IxDyn(shape), || dist.sample(&mut rng))
}

/// The SpSt-GCN classifier: input normalization, an initial block, the GCN blocks,
/// pooling, dropout and a linear classifier.
#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    graph: GraphSpec,
    a_hat: ArrayD<f64>,
    params: ParamStore,
    running: Vec<RunningStats>,
    running_names: Vec<String>,
    data_bn: BnIdx,
    blocks: Vec<BlockIdx>,
    fc: (usize, usize),
}

impl Model {
    /// Builds a freshly initialized model. Each parameter draws from its own stream
    /// keyed by name, so toggling the structural branch leaves all shared
    /// parameters unchanged.
    pub fn new(config: ModelConfig, graph: GraphSpec, seed: u64) -> Result<Self> {
        config.validate()?;
        let spatial = SpatialAdjacency::build(&graph, config.max_hop, config.alpha);
        let (k, v) = (spatial.partitions(), spatial.joints());
        let a_hat = spatial.stacked().into_dyn();

        let mut params = ParamStore::default();
        let mut running = Vec::new();
        let mut running_names = Vec::new();
        let mut bn = |params: &mut ParamStore, name: &str, c: usize| {
            running.push(RunningStats::new(c));
            running_names.push(name.to_string());
            BnIdx {
                gamma: params.push(format!("{name}.gamma"), ArrayD::ones(IxDyn(&[c]))),
                beta: params.push(format!("{name}.beta"), ArrayD::zeros(IxDyn(&[c]))),
                stats: running_names.len() - 1,
            }
        };

        let data_bn = bn(&mut params, "data_bn", config.in_channels);
        let mut blocks = Vec::new();
        let mut c_in = config.in_channels;
        for (i, stage) in config.plan.0.iter().enumerate() {
            let name = if i == 0 { "init".to_string() } else { format!("block{i}") };
            let c_out = stage.width;
            let p = |s: &str| format!("{name}.{s}");
            let w = params.push(p("gcn.w"), uniform_init(seed, &p("gcn.w"), &[k, c_out, c_in], k * c_in));
            let b = params.push(p("gcn.b"), ArrayD::zeros(IxDyn(&[k, v, v])));
            let m = config
                .structural
                .then(|| params.push(p("gcn.m"), uniform_init(seed, &p("gcn.m"), &[c_out, c_in], c_in)));
            let bn_idx = bn(&mut params, &p("bn"), c_out);
            let tcn_w = params.push(
                p("tcn.w"),
                uniform_init(seed, &p("tcn.w"), &[c_out, c_out, config.kernel], c_out * config.kernel),
            );
            let tcn_b = params.push(p("tcn.bias"), ArrayD::zeros(IxDyn(&[c_out])));
            let residual = if i == 0 {
                ResidualIdx::None
            } else if c_in == c_out && stage.stride == 1 {
                ResidualIdx::Identity
            } else {
                let w = params.push(p("res.w"), uniform_init(seed, &p("res.w"), &[c_out, c_in, 1], c_in));
                ResidualIdx::Projection { w, bn: bn(&mut params, &p("res.bn"), c_out) }
            };
            blocks.push(BlockIdx { w, b, m, bn: bn_idx, tcn_w, tcn_b, stride: stage.stride, residual });
            c_in = c_out;
        }
        let fc_w = params.push("fc.w", uniform_init(seed, "fc.w", &[config.classes, c_in], c_in));
        let fc_b = params.push("fc.bias", ArrayD::zeros(IxDyn(&[config.classes])));

        Ok(Self {
            config,
            graph,
            a_hat,
            params,
            running,
            running_names,
            data_bn,
            blocks,
            fc: (fc_w, fc_b),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn graph(&self) -> &GraphSpec {
        &self.graph
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn running_stats(&self) -> &[RunningStats] {
        &self.running
    }

    pub fn running_names(&self) -> &[String] {
        &self.running_names
    }

    pub fn running_stats_mut(&mut self) -> &mut [RunningStats] {
        &mut self.running
    }

    /// Folds the batch statistics of a training pass into the running statistics.
    pub fn update_running_stats(&mut self, stats: &[BatchStats]) -> Result<()> {
        if stats.len() != self.running.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} batch statistics for {} normalization layers",
                stats.len(),
                self.running.len()
            )));
        }
        for (r, s) in self.running.iter_mut().zip(stats) {
            r.update(s);
        }
        Ok(())
    }

    /// The same model with the structural branch removed and every other parameter
    /// and statistic carried over.
    pub fn without_structural(&self) -> Result<Self> {
        let config = ModelConfig { structural: false, ..self.config.clone() };
        let mut out = Model::new(config, self.graph.clone(), 0)?;
        for (name, value) in out.params.names.iter().zip(out.params.values.iter_mut()) {
            *value = self.params.get(name).expect("shared parameter").clone();
        }
        out.running = self.running.clone();
        Ok(out)
    }

    /// Runs the network on `x` `(N·bodies, C, T, V)`; `structural` must be present
    /// when the structural branch is enabled.
    pub fn forward(
        &self,
        tape: &Tape,
        params: &[Var],
        x: Var,
        structural: Option<&StructuralInput>,
        bodies: usize,
        mode: RunMode,
    ) -> Result<ForwardPass> {
        if params.len() != self.params.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} bound parameters for a model with {}",
                params.len(),
                self.params.len()
            )));
        }
        let layer_mode = match mode {
            RunMode::Train { .. } => Mode::Train,
            RunMode::Eval => Mode::Eval,
        };
        let structural = if self.config.structural { structural } else { None };
        let bn = |idx: BnIdx| BnVars {
            gamma: params[idx.gamma],
            beta: params[idx.beta],
            running: &self.running[idx.stats],
        };
        let mut stats = Vec::new();

        let mut h = layers::batch_norm(tape, x, &bn(self.data_bn), layer_mode, &mut stats)?;
        for block in &self.blocks {
            let vars = BlockVars {
                gcn: LayerVars { w: params[block.w], b: params[block.b], m: block.m.map(|m| params[m]) },
                bn: bn(block.bn),
                tcn_w: params[block.tcn_w],
                tcn_b: params[block.tcn_b],
                stride: block.stride,
                residual: match block.residual {
                    ResidualIdx::None => ResidualVars::None,
                    ResidualIdx::Identity => ResidualVars::Identity,
                    ResidualIdx::Projection { w, bn: b } => ResidualVars::Projection { w: params[w], bn: bn(b) },
                },
            };
            h = layers::gcn_block(tape, h, &self.a_hat, &vars, structural, layer_mode, &mut stats)?;
        }
        let features = h;
        let mut pooled = ops::pool(tape, h, bodies)?;
        if let RunMode::Train { dropout_seed } = mode {
            if self.config.dropout > 0.0 {
                let mut rng = ChaCha8Rng::seed_from_u64(dropout_seed);
                pooled = ops::dropout(tape, pooled, self.config.dropout, &mut rng);
            }
        }
        let logits = ops::linear(tape, pooled, params[self.fc.0], params[self.fc.1])?;
        Ok(ForwardPass { logits, features, batch_stats: stats })
    }

    /// Eval-mode logits for a batch of samples.
    pub fn predict(&self, samples: &[&FeatureTensor], structural: &[&StructuralAdjacency]) -> Result<ArrayD<f64>> {
        let tape = Tape::new();
        let vars = self.params.bind(&tape);
        let (input, bodies) = batch_input(samples)?;
        let st = if self.config.structural {
            Some(StructuralInput { adjacency: Rc::new(batch_adjacency(structural)?), bodies })
        } else {
            None
        };
        let x = tape.input(input);
        let pass = self.forward(&tape, &vars, x, st.as_ref(), bodies, RunMode::Eval)?;
        Ok((*tape.value(pass.logits)).clone())
    }
}

/// Stacks `(C, T, V, M)` samples into the network layout `(N·M, C, T, V)`.
pub fn batch_input(samples: &[&FeatureTensor]) -> Result<(ArrayD<f64>, usize)> {
    let first = samples.first().ok_or_else(|| Error::ShapeMismatch("empty batch".into()))?;
    let (c, t, v, m) = first.dims();
    let mut out = ndarray::Array5::zeros((samples.len(), m, c, t, v));
    for (n, s) in samples.iter().enumerate() {
        if s.dims() != (c, t, v, m) {
            return Err(Error::ShapeMismatch(format!(
                "batch mixes sample shapes {:?} and {:?}",
                first.dims(),
                s.dims()
            )));
        }
        out.index_axis_mut(Axis(0), n).assign(&s.data().view().permuted_axes([3, 0, 1, 2]));
    }
    let out = out.into_shape_with_order(IxDyn(&[samples.len() * m, c, t, v])).expect("contiguous");
    Ok((out, m))
}

/// Stacks per-sample structural matrices into `(N, V, V)`.
pub fn batch_adjacency(mats: &[&StructuralAdjacency]) -> Result<Array3<f64>> {
    let v = mats.first().map_or(0, |m| m.joints());
    let mut out = Array3::zeros((mats.len(), v, v));
    for (n, m) in mats.iter().enumerate() {
        if m.joints() != v {
            return Err(Error::ShapeMismatch(format!("structural matrices of size {v} and {}", m.joints())));
        }
        out.index_axis_mut(Axis(0), n).assign(&m.matrix);
    }
    Ok(out)
}

/// Mean pairwise cosine similarity between the feature columns of `nodes`, averaged
/// over entries of an `(E, C, T, V)` activation.
pub fn edge_node_similarity(features: &ArrayD<f64>, nodes: &[usize]) -> Result<f64> {
    let f = features
        .view()
        .into_dimensionality::<ndarray::Ix4>()
        .map_err(|_| Error::ShapeMismatch(format!("expected rank 4 features, got {:?}", features.shape())))?;
    let v = f.dim().3;
    if nodes.len() < 2 || nodes.iter().any(|&n| n >= v) {
        return Err(Error::ShapeMismatch(format!("need two or more nodes below {v}, got {nodes:?}")));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for entry in f.outer_iter() {
        let cols: Vec<Vec<f64>> = nodes.iter().map(|&n| entry.index_axis(Axis(2), n).iter().copied().collect()).collect();
        for i in 0..cols.len() {
            for j in i + 1..cols.len() {
                let dot: f64 = cols[i].iter().zip(&cols[j]).map(|(a, b)| a * b).sum();
                let na = cols[i].iter().map(|a| a * a).sum::<f64>().sqrt();
                let nb = cols[j].iter().map(|b| b * b).sum::<f64>().sqrt();
                if na > 0.0 && nb > 0.0 {
                    total += dot / (na * nb);
                    count += 1;
                }
            }
        }
    }
    Ok(if count == 0 { 0.0 } else { total / count as f64 })
}

/// Array with entries drawn uniformly from `[-1, 1)`.
pub fn random_array<R: Rng>(rng: &mut R, shape: &[usize]) -> ArrayD<f64> {
    ArrayD::from_shape_simple_fn(IxDyn(shape), || rng.gen_range(-1.0..1.0))
}
