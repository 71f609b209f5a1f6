//! Small deterministic sequence-learning engine.
//!
//! A [`ModelGraph`] is a list of nodes in topological order. Activations are
//! batch-major `Array2<f64>` (rows are samples); sequence inputs are one
//! such matrix per time step. LSTM gates are laid out `[i, f, g, o]` along
//! the column axis of the kernels.

mod checkpoint;
mod gradcheck;
mod train;

use std::collections::BTreeMap;

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};
pub use gradcheck::{gradient_check, GradCheckReport};
pub use train::{
    adam_step, bce, composite_loss, AdamState, EpochStats, LossSpec, LossValue, RegKind,
    TrainConfig, TrainSet,
};

#[derive(Debug, Error)]
pub enum NnetError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid graph: {0}")]
    InvalidGraph(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("input `{0}` not provided")]
    MissingInput(String),
    #[error("non-finite values in layer `{layer}`")]
    NumericalFailure { layer: String },
    #[error("empty dataset")]
    EmptyDataset,
    #[error("model has not been trained")]
    Untrained,
    #[error("checkpoint version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, NnetError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Linear,
    Tanh,
    Relu,
    Sigmoid,
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Linear => x,
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => sigmoid(x),
        }
    }

    /// Derivative expressed through the activation output `y`.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Linear => 1.0,
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = NnetError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Self::Linear),
            "tanh" => Ok(Self::Tanh),
            "relu" => Ok(Self::Relu),
            "sigmoid" => Ok(Self::Sigmoid),
            _ => Err(NnetError::InvalidConfig(format!("unknown activation `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NodeKind {
    /// Features × time matrix supplied per sample.
    SequenceInput { source: String, features: usize },
    /// A 1 × width row supplied per sample.
    VectorInput { source: String, width: usize },
    /// Returns the final hidden state.
    Lstm { input: usize, units: usize },
    Dense {
        input: usize,
        units: usize,
        activation: Activation,
    },
    Dropout { input: usize, rate: f64 },
    Concat { inputs: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub name: String,
    #[serde(flatten)]
    pub kind: NodeKind,
}

/// Supplies named inputs for one sample. Sequence inputs are
/// features × time; vector inputs are 1 × width.
pub trait InputSource {
    fn input(&self, name: &str) -> Option<ArrayView2<'_, f64>>;
}

impl InputSource for BTreeMap<String, Array2<f64>> {
    fn input(&self, name: &str) -> Option<ArrayView2<'_, f64>> {
        self.get(name).map(|a| a.view())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelGraph {
    pub nodes: Vec<Node>,
    /// Per node: LSTM `[w_x, w_h, b]`, dense `[w, b]`, otherwise empty.
    /// Biases are stored as 1 × n.
    #[serde(skip)]
    pub params: Vec<Vec<Array2<f64>>>,
    pub output: usize,
    /// Node whose output is regressed onto a teacher vector, if any.
    pub embedding: Option<usize>,
    pub seed: u64,
    pub trained_epochs: usize,
}

/// Builds a graph node by node; every node may only read earlier nodes.
#[derive(Debug, Clone)]
pub struct GraphBuilder {
    nodes: Vec<Node>,
    seed: u64,
}

impl GraphBuilder {
    pub fn new(seed: u64) -> Self {
        Self {
            nodes: Vec::new(),
            seed,
        }
    }

    fn push(&mut self, name: &str, kind: NodeKind) -> usize {
        self.nodes.push(Node {
            name: name.to_string(),
            kind,
        });
        self.nodes.len() - 1
    }

    pub fn sequence_input(&mut self, source: &str, features: usize) -> usize {
        self.push(
            source,
            NodeKind::SequenceInput {
                source: source.to_string(),
                features,
            },
        )
    }

    pub fn vector_input(&mut self, source: &str, width: usize) -> usize {
        self.push(
            source,
            NodeKind::VectorInput {
                source: source.to_string(),
                width,
            },
        )
    }

    pub fn lstm(&mut self, name: &str, input: usize, units: usize) -> usize {
        self.push(name, NodeKind::Lstm { input, units })
    }

    pub fn dense(&mut self, name: &str, input: usize, units: usize, activation: Activation) -> usize {
        self.push(
            name,
            NodeKind::Dense {
                input,
                units,
                activation,
            },
        )
    }

    pub fn dropout(&mut self, name: &str, input: usize, rate: f64) -> usize {
        self.push(name, NodeKind::Dropout { input, rate })
    }

    pub fn concat(&mut self, name: &str, inputs: &[usize]) -> usize {
        self.push(
            name,
            NodeKind::Concat {
                inputs: inputs.to_vec(),
            },
        )
    }

    pub fn build(self, output: usize, embedding: Option<usize>) -> Result<ModelGraph> {
        let mut graph = ModelGraph {
            nodes: self.nodes,
            params: Vec::new(),
            output,
            embedding,
            seed: self.seed,
            trained_epochs: 0,
        };
        graph.check()?;
        graph.init_params();
        Ok(graph)
    }
}

fn glorot(rng: &mut impl Rng, fan_in: usize, fan_out: usize) -> Array2<f64> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Array2::from_shape_simple_fn((fan_in, fan_out), || rng.random_range(-limit..limit))
}

/// Activations of one node for a batch.
#[derive(Debug, Clone)]
enum Value {
    Seq(Vec<Array2<f64>>),
    Vec(Array2<f64>),
}

impl Value {
    fn mat(&self) -> &Array2<f64> {
        match self {
            Value::Vec(m) => m,
            Value::Seq(_) => unreachable!("graph check rejects sequence values here"),
        }
    }
}

#[derive(Debug, Clone)]
struct LstmStep {
    h_prev: Array2<f64>,
    c_prev: Array2<f64>,
    /// Post-activation gates, batch × 4u.
    gates: Array2<f64>,
    tanh_c: Array2<f64>,
}

#[derive(Debug, Clone)]
enum Cache {
    None,
    Lstm(Vec<LstmStep>),
    Mask(Array2<f64>),
}

/// How dropout behaves during a forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Eval,
    /// Masks are keyed by (graph seed, epoch, batch, node).
    Train { epoch: u64, batch: u64 },
}

/// Batched inputs: one matrix per time step for sequence sources, one
/// matrix for vector sources.
#[derive(Debug, Clone)]
pub struct Batch {
    pub size: usize,
    seqs: BTreeMap<String, Vec<Array2<f64>>>,
    vecs: BTreeMap<String, Array2<f64>>,
}

/// Everything the backward pass needs from a forward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    values: Vec<Value>,
    caches: Vec<Cache>,
    output: usize,
}

impl Tape {
    /// Sigmoid output, one probability per sample.
    pub fn probabilities(&self) -> Vec<f64> {
        self.values[self.output].mat().column(0).to_vec()
    }

    pub fn node_output(&self, node: usize) -> Option<&Array2<f64>> {
        match &self.values[node] {
            Value::Vec(m) => Some(m),
            Value::Seq(_) => None,
        }
    }
}

/// Gradients shaped like [`ModelGraph::params`].
pub type Grads = Vec<Vec<Array2<f64>>>;

impl ModelGraph {
    pub fn width(&self, node: usize) -> usize {
        match &self.nodes[node].kind {
            NodeKind::SequenceInput { features, .. } => *features,
            NodeKind::VectorInput { width, .. } => *width,
            NodeKind::Lstm { units, .. } | NodeKind::Dense { units, .. } => *units,
            NodeKind::Dropout { input, .. } => self.width(*input),
            NodeKind::Concat { inputs } => inputs.iter().map(|&i| self.width(i)).sum(),
        }
    }

    pub fn node_index(&self, name: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.name == name)
    }

    fn is_sequence(&self, node: usize) -> bool {
        matches!(self.nodes[node].kind, NodeKind::SequenceInput { .. })
    }

    pub(crate) fn check(&self) -> Result<()> {
        let bad = |m: String| Err(NnetError::InvalidGraph(m));
        let mut names = std::collections::BTreeSet::new();
        for (idx, node) in self.nodes.iter().enumerate() {
            if !names.insert(node.name.as_str()) {
                return bad(format!("duplicate node name `{}`", node.name));
            }
            let reads: Vec<usize> = match &node.kind {
                NodeKind::SequenceInput { features: w, .. } | NodeKind::VectorInput { width: w, .. } => {
                    if *w == 0 {
                        return bad(format!("input `{}` has zero width", node.name));
                    }
                    vec![]
                }
                NodeKind::Lstm { input, units } => {
                    if *units == 0 {
                        return bad(format!("`{}` has zero units", node.name));
                    }
                    if *input >= idx || !self.is_sequence(*input) {
                        return bad(format!("`{}` must read an earlier sequence input", node.name));
                    }
                    continue;
                }
                NodeKind::Dense { input, units, .. } => {
                    if *units == 0 {
                        return bad(format!("`{}` has zero units", node.name));
                    }
                    vec![*input]
                }
                NodeKind::Dropout { input, rate } => {
                    if !(0.0..1.0).contains(rate) {
                        return bad(format!("`{}` rate {rate} outside [0, 1)", node.name));
                    }
                    vec![*input]
                }
                NodeKind::Concat { inputs } => {
                    if inputs.is_empty() {
                        return bad(format!("`{}` concatenates nothing", node.name));
                    }
                    inputs.clone()
                }
            };
            for r in reads {
                if r >= idx {
                    return bad(format!("`{}` reads a later node", node.name));
                }
                if self.is_sequence(r) {
                    return bad(format!("`{}` cannot read a sequence directly", node.name));
                }
            }
        }
        match self.nodes.get(self.output).map(|n| &n.kind) {
            Some(NodeKind::Dense {
                units: 1,
                activation: Activation::Sigmoid,
                ..
            }) => {}
            _ => return bad("output must be a single-unit sigmoid dense node".into()),
        }
        if let Some(e) = self.embedding {
            if e >= self.nodes.len() || self.is_sequence(e) {
                return bad("embedding must be a vector-valued node".into());
            }
        }
        Ok(())
    }

    fn init_params(&mut self) {
        self.params = (0..self.nodes.len())
            .map(|idx| {
                let mut rng = rng::stream(self.seed, &[0x1417, idx as u64]);
                match &self.nodes[idx].kind {
                    NodeKind::Lstm { input, units } => {
                        let u = *units;
                        let w_x = glorot(&mut rng, self.width(*input), 4 * u);
                        let w_h = glorot(&mut rng, u, 4 * u);
                        let mut b = Array2::zeros((1, 4 * u));
                        b.slice_mut(s![.., u..2 * u]).fill(1.0);
                        vec![w_x, w_h, b]
                    }
                    NodeKind::Dense { input, units, .. } => {
                        vec![glorot(&mut rng, self.width(*input), *units), Array2::zeros((1, *units))]
                    }
                    _ => vec![],
                }
            })
            .collect();
    }

    /// Shapes every parameter tensor must have.
    pub(crate) fn param_shapes(&self) -> Vec<Vec<(usize, usize)>> {
        (0..self.nodes.len())
            .map(|idx| match &self.nodes[idx].kind {
                NodeKind::Lstm { input, units } => {
                    let u = *units;
                    vec![(self.width(*input), 4 * u), (u, 4 * u), (1, 4 * u)]
                }
                NodeKind::Dense { input, units, .. } => {
                    vec![(self.width(*input), *units), (1, *units)]
                }
                _ => vec![],
            })
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().flatten().map(Array2::len).sum()
    }

    pub fn fill_params(&mut self, value: f64) {
        self.params.iter_mut().flatten().for_each(|p| p.fill(value));
    }

    pub fn zero_grads(&self) -> Grads {
        self.params
            .iter()
            .map(|ps| ps.iter().map(|p| Array2::zeros(p.raw_dim())).collect())
            .collect()
    }

    /// Names of the sources this graph reads.
    pub fn input_sources(&self) -> Vec<&str> {
        self.nodes
            .iter()
            .filter_map(|n| match &n.kind {
                NodeKind::SequenceInput { source, .. } | NodeKind::VectorInput { source, .. } => {
                    Some(source.as_str())
                }
                _ => None,
            })
            .collect()
    }

    /// Stacks the inputs of `samples` into a batch, checking shapes.
    pub fn assemble<S: InputSource + ?Sized>(&self, samples: &[&S]) -> Result<Batch> {
        if samples.is_empty() {
            return Err(NnetError::EmptyDataset);
        }
        let mut batch = Batch {
            size: samples.len(),
            seqs: BTreeMap::new(),
            vecs: BTreeMap::new(),
        };
        for node in &self.nodes {
            match &node.kind {
                NodeKind::SequenceInput { source, features } => {
                    let first = samples[0]
                        .input(source)
                        .ok_or_else(|| NnetError::MissingInput(source.clone()))?;
                    let steps = first.ncols();
                    if first.nrows() != *features || steps == 0 {
                        return Err(NnetError::ShapeMismatch(format!(
                            "`{source}` is {}×{}, expected {features}×T with T ≥ 1",
                            first.nrows(),
                            steps
                        )));
                    }
                    let mut per_step = vec![Array2::zeros((samples.len(), *features)); steps];
                    for (b, s) in samples.iter().enumerate() {
                        let m = s.input(source).ok_or_else(|| NnetError::MissingInput(source.clone()))?;
                        if m.dim() != (*features, steps) {
                            return Err(NnetError::ShapeMismatch(format!(
                                "`{source}` of sample {b} is {:?}, expected {:?}",
                                m.dim(),
                                (*features, steps)
                            )));
                        }
                        for (t, step) in per_step.iter_mut().enumerate() {
                            step.row_mut(b).assign(&m.column(t));
                        }
                    }
                    batch.seqs.insert(source.clone(), per_step);
                }
                NodeKind::VectorInput { source, width } => {
                    let mut out = Array2::zeros((samples.len(), *width));
                    for (b, s) in samples.iter().enumerate() {
                        let m = s.input(source).ok_or_else(|| NnetError::MissingInput(source.clone()))?;
                        if m.len() != *width {
                            return Err(NnetError::ShapeMismatch(format!(
                                "`{source}` of sample {b} has {} values, expected {width}",
                                m.len()
                            )));
                        }
                        out.row_mut(b).assign(&ndarray::Array1::from_iter(m.iter().copied()));
                    }
                    batch.vecs.insert(source.clone(), out);
                }
                _ => {}
            }
        }
        Ok(batch)
    }

    fn finite_or_fail(&self, node: usize, m: &Array2<f64>) -> Result<()> {
        if m.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(NnetError::NumericalFailure {
                layer: self.nodes[node].name.clone(),
            })
        }
    }

    pub fn forward(&self, batch: &Batch, mode: Mode) -> Result<Tape> {
        let n = batch.size;
        let mut values: Vec<Value> = Vec::with_capacity(self.nodes.len());
        let mut caches = Vec::with_capacity(self.nodes.len());
        for (idx, node) in self.nodes.iter().enumerate() {
            let (value, cache) = match &node.kind {
                NodeKind::SequenceInput { source, .. } => (
                    Value::Seq(
                        batch
                            .seqs
                            .get(source)
                            .ok_or_else(|| NnetError::MissingInput(source.clone()))?
                            .clone(),
                    ),
                    Cache::None,
                ),
                NodeKind::VectorInput { source, .. } => (
                    Value::Vec(
                        batch
                            .vecs
                            .get(source)
                            .ok_or_else(|| NnetError::MissingInput(source.clone()))?
                            .clone(),
                    ),
                    Cache::None,
                ),
                NodeKind::Lstm { input, units } => {
                    let Value::Seq(xs) = &values[*input] else {
                        unreachable!("graph check guarantees sequence input")
                    };
                    let (h, steps) = self.lstm_forward(idx, xs, *units, n);
                    (Value::Vec(h), Cache::Lstm(steps))
                }
                NodeKind::Dense {
                    input, activation, ..
                } => {
                    let x = values[*input].mat();
                    let [w, b] = &self.params[idx][..] else { unreachable!() };
                    let mut y = x.dot(w);
                    y += b;
                    y.mapv_inplace(|v| activation.apply(v));
                    (Value::Vec(y), Cache::None)
                }
                NodeKind::Dropout { input, rate } => {
                    let x = values[*input].mat();
                    match mode {
                        Mode::Train { epoch, batch } if *rate > 0.0 => {
                            let mut rng = rng::stream(self.seed, &[epoch, batch, idx as u64]);
                            let keep = 1.0 / (1.0 - rate);
                            let mask = Array2::from_shape_simple_fn(x.raw_dim(), || {
                                if rng.random::<f64>() < *rate {
                                    0.0
                                } else {
                                    keep
                                }
                            });
                            (Value::Vec(x * &mask), Cache::Mask(mask))
                        }
                        _ => (Value::Vec(x.clone()), Cache::None),
                    }
                }
                NodeKind::Concat { inputs } => {
                    let views: Vec<_> = inputs.iter().map(|&i| values[i].mat().view()).collect();
                    (
                        Value::Vec(ndarray::concatenate(Axis(1), &views).expect("batch sizes agree")),
                        Cache::None,
                    )
                }
            };
            if let Value::Vec(m) = &value {
                self.finite_or_fail(idx, m)?;
            }
            values.push(value);
            caches.push(cache);
        }
        Ok(Tape {
            values,
            caches,
            output: self.output,
        })
    }

    fn lstm_forward(&self, idx: usize, xs: &[Array2<f64>], u: usize, n: usize) -> (Array2<f64>, Vec<LstmStep>) {
        let [w_x, w_h, b] = &self.params[idx][..] else { unreachable!() };
        let mut h = Array2::zeros((n, u));
        let mut c = Array2::<f64>::zeros((n, u));
        let mut steps = Vec::with_capacity(xs.len());
        for x in xs {
            let mut z = Array2::zeros((n, 4 * u));
            z.assign(&b.broadcast((n, 4 * u)).unwrap());
            general_mat_mul(1.0, x, w_x, 1.0, &mut z);
            general_mat_mul(1.0, &h, w_h, 1.0, &mut z);
            let mut c_new = Array2::zeros((n, u));
            let mut tanh_c = Array2::zeros((n, u));
            let mut h_new = Array2::zeros((n, u));
            for r in 0..n {
                let zr = z.row_mut(r).into_slice().unwrap();
                for j in 0..u {
                    zr[j] = sigmoid(zr[j]);
                    zr[u + j] = sigmoid(zr[u + j]);
                    zr[2 * u + j] = zr[2 * u + j].tanh();
                    zr[3 * u + j] = sigmoid(zr[3 * u + j]);
                    let cv = zr[u + j] * c[[r, j]] + zr[j] * zr[2 * u + j];
                    let tc = cv.tanh();
                    c_new[[r, j]] = cv;
                    tanh_c[[r, j]] = tc;
                    h_new[[r, j]] = zr[3 * u + j] * tc;
                }
            }
            steps.push(LstmStep {
                h_prev: std::mem::replace(&mut h, h_new),
                c_prev: std::mem::replace(&mut c, c_new),
                gates: z,
                tanh_c,
            });
        }
        (h, steps)
    }

    /// Reverse pass. `seeds` holds dL/d(output) for any nodes that feed the
    /// loss directly (the sigmoid head and, for distillation, the embedding).
    pub fn backward(&self, tape: &Tape, seeds: Vec<(usize, Array2<f64>)>) -> Result<Grads> {
        let mut grads = self.zero_grads();
        let mut upstream: Vec<Option<Array2<f64>>> = vec![None; self.nodes.len()];
        let add = |slot: &mut Option<Array2<f64>>, g: Array2<f64>| match slot {
            Some(acc) => *acc += &g,
            None => *slot = Some(g),
        };
        for (node, g) in seeds {
            add(&mut upstream[node], g);
        }
        for idx in (0..self.nodes.len()).rev() {
            let Some(dy) = upstream[idx].take() else { continue };
            match &self.nodes[idx].kind {
                NodeKind::SequenceInput { .. } | NodeKind::VectorInput { .. } => {}
                NodeKind::Dense {
                    input, activation, ..
                } => {
                    let y = tape.values[idx].mat();
                    let mut dz = dy;
                    Zip::from(&mut dz)
                        .and(y)
                        .for_each(|d, &y| *d *= activation.derivative_from_output(y));
                    let x = tape.values[*input].mat();
                    grads[idx][0] = x.t().dot(&dz);
                    grads[idx][1] = dz.sum_axis(Axis(0)).insert_axis(Axis(0));
                    if !self.is_input(*input) {
                        add(&mut upstream[*input], dz.dot(&self.params[idx][0].t()));
                    }
                }
                NodeKind::Dropout { input, .. } => {
                    let dx = match &tape.caches[idx] {
                        Cache::Mask(mask) => dy * mask,
                        _ => dy,
                    };
                    if !self.is_input(*input) {
                        add(&mut upstream[*input], dx);
                    }
                }
                NodeKind::Concat { inputs } => {
                    let mut col = 0;
                    for &i in inputs {
                        let w = self.width(i);
                        if !self.is_input(i) {
                            add(&mut upstream[i], dy.slice(s![.., col..col + w]).to_owned());
                        }
                        col += w;
                    }
                }
                NodeKind::Lstm { input, units } => {
                    let Cache::Lstm(steps) = &tape.caches[idx] else { unreachable!() };
                    let Value::Seq(xs) = &tape.values[*input] else { unreachable!() };
                    self.lstm_backward(idx, xs, steps, *units, dy, &mut grads[idx]);
                }
            }
            for g in &grads[idx] {
                self.finite_or_fail(idx, g)?;
            }
        }
        Ok(grads)
    }

    fn is_input(&self, node: usize) -> bool {
        matches!(
            self.nodes[node].kind,
            NodeKind::SequenceInput { .. } | NodeKind::VectorInput { .. }
        )
    }

    fn lstm_backward(
        &self,
        idx: usize,
        xs: &[Array2<f64>],
        steps: &[LstmStep],
        u: usize,
        dh_final: Array2<f64>,
        grads: &mut [Array2<f64>],
    ) {
        let w_h = &self.params[idx][1];
        let n = dh_final.nrows();
        let mut dh = dh_final;
        let mut dc = Array2::<f64>::zeros((n, u));
        let mut dz = Array2::<f64>::zeros((n, 4 * u));
        let (gx, rest) = grads.split_at_mut(1);
        let (gh, gb) = rest.split_at_mut(1);
        for (x, st) in xs.iter().zip(steps).rev() {
            for r in 0..n {
                let g = st.gates.row(r);
                let dzr = dz.row_mut(r).into_slice().unwrap();
                for j in 0..u {
                    let (i, f, gg, o) = (g[j], g[u + j], g[2 * u + j], g[3 * u + j]);
                    let tc = st.tanh_c[[r, j]];
                    let dhv = dh[[r, j]];
                    let dcv = dc[[r, j]] + dhv * o * (1.0 - tc * tc);
                    dzr[j] = dcv * gg * i * (1.0 - i);
                    dzr[u + j] = dcv * st.c_prev[[r, j]] * f * (1.0 - f);
                    dzr[2 * u + j] = dcv * i * (1.0 - gg * gg);
                    dzr[3 * u + j] = dhv * tc * o * (1.0 - o);
                    dc[[r, j]] = dcv * f;
                }
            }
            general_mat_mul(1.0, &x.t(), &dz, 1.0, &mut gx[0]);
            general_mat_mul(1.0, &st.h_prev.t(), &dz, 1.0, &mut gh[0]);
            gb[0] += &dz.sum_axis(Axis(0)).insert_axis(Axis(0));
            general_mat_mul(1.0, &dz, &w_h.t(), 0.0, &mut dh);
        }
    }

    /// Eval-mode outputs of `node` for every sample, computed in chunks.
    pub fn node_values<S: InputSource + ?Sized>(&self, samples: &[&S], node: usize) -> Result<Array2<f64>> {
        if samples.is_empty() {
            return Ok(Array2::zeros((0, self.width(node))));
        }
        let mut parts = Vec::new();
        for chunk in samples.chunks(256) {
            let tape = self.forward(&self.assemble(chunk)?, Mode::Eval)?;
            parts.push(
                tape.node_output(node)
                    .ok_or_else(|| NnetError::InvalidGraph("node is a sequence input".into()))?
                    .clone(),
            );
        }
        let views: Vec<_> = parts.iter().map(|a| a.view()).collect();
        Ok(ndarray::concatenate(Axis(0), &views).expect("widths agree"))
    }

    /// Sick-class probabilities in eval mode.
    pub fn predict<S: InputSource + ?Sized>(&self, samples: &[&S]) -> Result<Vec<f64>> {
        Ok(self.node_values(samples, self.output)?.column(0).to_vec())
    }
}
