//! Stochastic attention encoder, batch-shared soft cluster assignment,
//! hierarchical coarsening and per-layer readouts.
//!
//! Conventions: node features live in rows. A layer receives a square
//! `n × n` matrix `h` (the first layer optionally shifts its input to zero
//! mean), computes per-head attention logits
//! `S = (h W_Q)(h W_K)ᵀ / √d_K`, optionally perturbs them with logistic
//! noise, and uses the same perturbed logits twice:
//!
//! * propagation: `X' = mean_m softmax(S_m) · h W_V`
//! * assignment:  `A = softmax(mean_batch(mean_m S_m · W_A))`
//!
//! The next layer input is `Aᵀ · MLP(X')`, a `C × C` matrix, and each layer
//! has a readout MLP on its flattened output. The prediction is the mean of
//! the readout logits.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::tensor::{mean_vars, Tape, Tensor, TensorError, Var};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// Which clustering layer sits between encoder and readout.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterMode {
    /// Attention-driven assignment shared across the batch.
    #[default]
    Full,
    /// No pooling; every layer keeps all nodes.
    NoCluster,
    /// Input-independent assignment: softmax of a free parameter matrix.
    LinearCluster,
}

impl ClusterMode {
    pub const ALL: [ClusterMode; 3] = [Self::Full, Self::NoCluster, Self::LinearCluster];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Full => "full",
            Self::NoCluster => "no_cluster",
            Self::LinearCluster => "linear_cluster",
        }
    }
}

impl fmt::Display for ClusterMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ClusterMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown ablation `{s}` (expected full, no_cluster or linear_cluster)"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Node count `V` of the input adjacency.
    pub input_size: usize,
    /// Cluster counts per layer, strictly decreasing.
    pub schedule: Vec<usize>,
    pub heads: usize,
    pub key_dim: usize,
    pub value_dim: usize,
    pub readout_hidden: usize,
    pub classes: usize,
    pub cluster_mode: ClusterMode,
    /// Subtract each input matrix's mean entry before the first layer.
    #[serde(default)]
    pub center_input: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_size: 360,
            schedule: vec![20, 4],
            heads: 4,
            key_dim: 64,
            value_dim: 64,
            readout_hidden: 32,
            classes: 2,
            cluster_mode: ClusterMode::Full,
            center_input: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(ModelError::Config(msg));
        if self.schedule.is_empty() {
            return fail("schedule needs at least one layer".into());
        }
        if self.heads == 0 || self.key_dim == 0 || self.value_dim == 0 || self.readout_hidden == 0 {
            return fail("heads, key_dim, value_dim and readout_hidden must be positive".into());
        }
        if self.classes < 2 {
            return fail(format!("need at least 2 classes, got {}", self.classes));
        }
        if self.input_size == 0 {
            return fail("input size must be positive".into());
        }
        let mut prev = self.input_size;
        for &c in &self.schedule {
            if c == 0 || c >= prev {
                return fail(format!(
                    "schedule {:?} must strictly decrease below the input size {} and stay >= 1",
                    self.schedule, self.input_size
                ));
            }
            prev = c;
        }
        Ok(())
    }

    pub fn depth(&self) -> usize {
        self.schedule.len()
    }

    /// `(input nodes, output nodes)` for each layer.
    pub fn layer_sizes(&self) -> Vec<(usize, usize)> {
        match self.cluster_mode {
            ClusterMode::NoCluster => vec![(self.input_size, self.input_size); self.depth()],
            _ => {
                let mut prev = self.input_size;
                self.schedule
                    .iter()
                    .map(|&c| {
                        let pair = (prev, c);
                        prev = c;
                        pair
                    })
                    .collect()
            }
        }
    }
}

/// Index of a tensor inside [`ThcModel::params`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamId(usize);

#[derive(Clone, Debug)]
struct MlpIds {
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

#[derive(Clone, Debug)]
enum AssignIds {
    Attention(ParamId),
    Free(ParamId),
    None,
}

/// Parameter handles of one encoder/cluster layer.
#[derive(Clone, Debug)]
pub struct LayerParams {
    inputs: usize,
    outputs: usize,
    w_q: Vec<ParamId>,
    w_k: Vec<ParamId>,
    w_v: ParamId,
    assign: AssignIds,
    mlp: MlpIds,
}

impl LayerParams {
    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    pub fn heads(&self) -> usize {
        self.w_q.len()
    }
}

/// Named parameter tensors in a fixed order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    fn push(&mut self, name: String, tensor: Tensor) -> ParamId {
        self.names.push(name);
        self.tensors.push(tensor);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }
}

/// All learnable parameters plus the layout that interprets them.
#[derive(Clone, Debug)]
pub struct ThcModel {
    config: ModelConfig,
    store: ParamStore,
    layers: Vec<LayerParams>,
    readouts: Vec<MlpIds>,
}

fn glorot(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let std = (2.0 / (rows + cols) as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("positive std");
    Tensor::from_fn(rows, cols, |_, _| normal.sample(rng))
}

impl ThcModel {
    /// Fresh model with Glorot-normal weights and zero biases.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::default();
        let mlp = |store: &mut ParamStore, prefix: &str, inp: usize, hid: usize, out: usize, rng: &mut ChaCha8Rng| MlpIds {
            w1: store.push(format!("{prefix}.w1"), glorot(inp, hid, rng)),
            b1: store.push(format!("{prefix}.b1"), Tensor::zeros(1, hid)),
            w2: store.push(format!("{prefix}.w2"), glorot(hid, out, rng)),
            b2: store.push(format!("{prefix}.b2"), Tensor::zeros(1, out)),
        };
        let mut layers = Vec::new();
        for (i, (inputs, outputs)) in config.layer_sizes().into_iter().enumerate() {
            let mut w_q = Vec::new();
            let mut w_k = Vec::new();
            for m in 0..config.heads {
                w_q.push(store.push(format!("layer{i}.w_q{m}"), glorot(inputs, config.key_dim, &mut rng)));
                w_k.push(store.push(format!("layer{i}.w_k{m}"), glorot(inputs, config.key_dim, &mut rng)));
            }
            let w_v = store.push(format!("layer{i}.w_v"), glorot(inputs, config.value_dim, &mut rng));
            let assign = match config.cluster_mode {
                ClusterMode::Full => {
                    AssignIds::Attention(store.push(format!("layer{i}.w_a"), glorot(inputs, outputs, &mut rng)))
                }
                ClusterMode::LinearCluster => {
                    AssignIds::Free(store.push(format!("layer{i}.assign"), glorot(inputs, outputs, &mut rng)))
                }
                ClusterMode::NoCluster => AssignIds::None,
            };
            let mlp = mlp(
                &mut store,
                &format!("layer{i}.mlp"),
                config.value_dim,
                2 * outputs,
                outputs,
                &mut rng,
            );
            layers.push(LayerParams {
                inputs,
                outputs,
                w_q,
                w_k,
                w_v,
                assign,
                mlp,
            });
        }
        let readouts = layers
            .iter()
            .enumerate()
            .map(|(i, l)| {
                mlp(
                    &mut store,
                    &format!("readout{i}"),
                    l.outputs * l.outputs,
                    config.readout_hidden,
                    config.classes,
                    &mut rng,
                )
            })
            .collect();
        Ok(Self {
            config,
            store,
            layers,
            readouts,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layers(&self) -> &[LayerParams] {
        &self.layers
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Replaces every tensor; shapes must match the current layout.
    pub fn load_params(&mut self, tensors: Vec<Tensor>) -> Result<()> {
        if tensors.len() != self.store.len() {
            return Err(ModelError::Config(format!(
                "expected {} parameter tensors, got {}",
                self.store.len(),
                tensors.len()
            )));
        }
        for (name, (old, new)) in self.store.names.iter().zip(self.store.tensors.iter().zip(&tensors)) {
            if old.shape() != new.shape() {
                return Err(ModelError::Config(format!(
                    "parameter {name}: expected shape {:?}, got {:?}",
                    old.shape(),
                    new.shape()
                )));
            }
        }
        self.store.tensors = tensors;
        Ok(())
    }

    /// Registers every parameter as a leaf on `tape`.
    pub fn bind<'t>(&self, tape: &'t Tape) -> Binding<'t> {
        Binding {
            tape,
            vars: self.store.tensors.iter().map(|t| tape.leaf(t.clone())).collect(),
        }
    }

    /// Encoder half of layer `index`: attention logits (with noise in
    /// training mode), propagation and, for the full model, the
    /// per-sample assignment logits.
    pub fn encode<'t, R: Rng + ?Sized>(
        &self,
        b: &Binding<'t>,
        index: usize,
        h: Var<'t>,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Encoded<'t>> {
        let layer = &self.layers[index];
        check_square("encode", h, layer.inputs)?;
        let h = if index == 0 && self.config.center_input {
            h.sub(h.mean())?
        } else {
            h
        };
        let mut scores_raw = Vec::with_capacity(layer.heads());
        let mut scores = Vec::with_capacity(layer.heads());
        for (&q, &k) in layer.w_q.iter().zip(&layer.w_k) {
            let s = attention_scores(h, b.var(q), b.var(k))?;
            let noisy = match mode {
                Mode::Eval => s,
                Mode::Train => {
                    let (r, c) = s.shape();
                    s.add(b.tape.constant(logistic_noise(r, c, rng)))?
                }
            };
            scores_raw.push(s);
            scores.push(noisy);
        }
        let embedded = propagate(h, &scores, b.var(layer.w_v))?;
        let mean_scores = mean_vars(&scores)?;
        let assign_logits = match layer.assign {
            AssignIds::Attention(w_a) => Some(mean_scores.matmul(b.var(w_a))?),
            _ => None,
        };
        Ok(Encoded {
            scores_raw,
            scores,
            mean_scores,
            embedded,
            assign_logits,
        })
    }

    /// Shared assignment for a batch of encoded samples, or `None` when the
    /// layer does not cluster.
    pub fn assignment<'t>(&self, b: &Binding<'t>, index: usize, batch: &[Encoded<'t>]) -> Result<Option<Var<'t>>> {
        match self.layers[index].assign {
            AssignIds::Attention(_) => {
                let logits: Vec<Var<'t>> = batch
                    .iter()
                    .map(|e| e.assign_logits.expect("attention layers always produce logits"))
                    .collect();
                Ok(Some(shared_assignment(&logits)?))
            }
            AssignIds::Free(p) => Ok(Some(b.var(p).softmax_rows()?)),
            AssignIds::None => Ok(None),
        }
    }

    /// Next-layer input: `Aᵀ · MLP(X')`, or `MLP(X')` without clustering.
    pub fn coarsen<'t>(&self, b: &Binding<'t>, index: usize, embedded: Var<'t>, assignment: Option<Var<'t>>) -> Result<Var<'t>> {
        let layer = &self.layers[index];
        let z = b.mlp(&layer.mlp, embedded)?;
        match assignment {
            Some(a) => Ok(coarsen(a, z)?),
            None => Ok(z),
        }
    }

    /// Class logits of readout `index` for one layer output.
    pub fn readout<'t>(&self, b: &Binding<'t>, index: usize, next: Var<'t>) -> Result<Var<'t>> {
        b.mlp(&self.readouts[index], next.flatten())
    }

    /// Full forward pass over a batch that shares one assignment per layer.
    pub fn forward_batch<'t, R: Rng + ?Sized>(
        &self,
        b: &Binding<'t>,
        inputs: &[Var<'t>],
        mode: Mode,
        rng: &mut R,
    ) -> Result<BatchForward<'t>> {
        if inputs.is_empty() {
            return Err(ModelError::Config("forward over an empty batch".into()));
        }
        let mut hs = inputs.to_vec();
        let mut layers = Vec::with_capacity(self.layers.len());
        for index in 0..self.layers.len() {
            let encoded = hs
                .iter()
                .map(|&h| self.encode(b, index, h, mode, rng))
                .collect::<Result<Vec<_>>>()?;
            let assignment = self.assignment(b, index, &encoded)?;
            let next = encoded
                .iter()
                .map(|e| self.coarsen(b, index, e.embedded, assignment))
                .collect::<Result<Vec<_>>>()?;
            let logits = next
                .iter()
                .map(|&n| self.readout(b, index, n))
                .collect::<Result<Vec<_>>>()?;
            hs.clone_from(&next);
            layers.push(LayerRecord {
                encoded,
                assignment,
                next,
                logits,
            });
        }
        let logits = (0..inputs.len())
            .map(|s| {
                let per_layer: Vec<Var<'t>> = layers.iter().map(|l| l.logits[s]).collect();
                mean_vars(&per_layer)
            })
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(BatchForward { layers, logits })
    }

    /// Single-sample forward returning plain values.
    pub fn forward<R: Rng + ?Sized>(&self, x: &Tensor, mode: Mode, rng: &mut R) -> Result<ForwardTrace> {
        let tape = Tape::new();
        let b = self.bind(&tape);
        let out = self.forward_batch(&b, &[tape.constant(x.clone())], mode, rng)?;
        Ok(out.trace(0))
    }

    /// Eval-mode score `y[1] - y[0]` for each input, one sample per forward.
    pub fn scores(&self, inputs: &[&Tensor]) -> Result<Vec<f64>> {
        let one = |x: &&Tensor| -> Result<f64> {
            let trace = self.forward(x, Mode::Eval, &mut NoRng)?;
            Ok(trace.logits.data()[1] - trace.logits.data()[0])
        };
        #[cfg(feature = "parallel")]
        {
            use rayon::prelude::*;
            inputs.par_iter().map(one).collect()
        }
        #[cfg(not(feature = "parallel"))]
        {
            inputs.iter().map(one).collect()
        }
    }
}

fn check_square(op: &'static str, h: Var<'_>, n: usize) -> Result<()> {
    if h.shape() != (n, n) {
        return Err(TensorError::Shape {
            op,
            left: h.shape(),
            right: (n, n),
        }
        .into());
    }
    Ok(())
}

/// Model parameters registered on one tape.
pub struct Binding<'t> {
    tape: &'t Tape,
    vars: Vec<Var<'t>>,
}

impl<'t> Binding<'t> {
    pub fn var(&self, id: ParamId) -> Var<'t> {
        self.vars[id.0]
    }

    /// Leaves in [`ParamStore`] order.
    pub fn vars(&self) -> &[Var<'t>] {
        &self.vars
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    fn mlp(&self, ids: &MlpIds, x: Var<'t>) -> Result<Var<'t>> {
        let h = x.matmul(self.var(ids.w1))?.add(self.var(ids.b1))?.gelu();
        Ok(h.matmul(self.var(ids.w2))?.add(self.var(ids.b2))?)
    }
}

/// Encoder outputs of one sample at one layer.
#[derive(Clone, Debug)]
pub struct Encoded<'t> {
    /// Attention logits before noise, one per head.
    pub scores_raw: Vec<Var<'t>>,
    /// Logits actually consumed by propagation and assignment.
    pub scores: Vec<Var<'t>>,
    pub mean_scores: Var<'t>,
    /// Propagated embedding `X'`.
    pub embedded: Var<'t>,
    pub assign_logits: Option<Var<'t>>,
}

#[derive(Clone, Debug)]
pub struct LayerRecord<'t> {
    pub encoded: Vec<Encoded<'t>>,
    pub assignment: Option<Var<'t>>,
    pub next: Vec<Var<'t>>,
    pub logits: Vec<Var<'t>>,
}

#[derive(Clone, Debug)]
pub struct BatchForward<'t> {
    pub layers: Vec<LayerRecord<'t>>,
    /// Averaged prediction per sample.
    pub logits: Vec<Var<'t>>,
}

impl BatchForward<'_> {
    /// Plain-value trace of sample `s`.
    pub fn trace(&self, s: usize) -> ForwardTrace {
        let vals = |v: &[Var<'_>]| v.iter().map(Var::to_tensor).collect::<Vec<_>>();
        ForwardTrace {
            layers: self
                .layers
                .iter()
                .map(|l| {
                    let e = &l.encoded[s];
                    LayerTrace {
                        scores_raw: vals(&e.scores_raw),
                        scores: vals(&e.scores),
                        mean_scores: e.mean_scores.to_tensor(),
                        embedded: e.embedded.to_tensor(),
                        assign_logits: e.assign_logits.map(|v| v.to_tensor()),
                        assignment: l.assignment.map(|v| v.to_tensor()),
                        next: l.next[s].to_tensor(),
                        logits: l.logits[s].to_tensor(),
                    }
                })
                .collect(),
            logits: self.logits[s].to_tensor(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerTrace {
    pub scores_raw: Vec<Tensor>,
    pub scores: Vec<Tensor>,
    pub mean_scores: Tensor,
    pub embedded: Tensor,
    pub assign_logits: Option<Tensor>,
    pub assignment: Option<Tensor>,
    pub next: Tensor,
    pub logits: Tensor,
}

/// Everything one forward pass produced for a single sample.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardTrace {
    pub layers: Vec<LayerTrace>,
    /// Mean of the per-layer logits.
    pub logits: Tensor,
}

impl ForwardTrace {
    pub fn assignments(&self) -> Vec<&Tensor> {
        self.layers.iter().filter_map(|l| l.assignment.as_ref()).collect()
    }
}

/// `(x W_Q)(x W_K)ᵀ / √d_K` with `d_K` the column count of `W_Q`.
pub fn attention_scores<'t>(x: Var<'t>, w_q: Var<'t>, w_k: Var<'t>) -> std::result::Result<Var<'t>, TensorError> {
    let key_dim = w_q.shape().1;
    let q = x.matmul(w_q)?;
    let k = x.matmul(w_k)?;
    Ok(q.matmul_nt(k)?.scale(1.0 / (key_dim as f64).sqrt()))
}

/// `mean_m softmax(S_m) · x W_V`.
pub fn propagate<'t>(x: Var<'t>, scores: &[Var<'t>], w_v: Var<'t>) -> std::result::Result<Var<'t>, TensorError> {
    let v = x.matmul(w_v)?;
    let heads = scores
        .iter()
        .map(|s| s.softmax_rows()?.matmul(v))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    mean_vars(&heads)
}

/// Row softmax of the batch-mean assignment logits.
pub fn shared_assignment<'t>(logits: &[Var<'t>]) -> std::result::Result<Var<'t>, TensorError> {
    mean_vars(logits)?.softmax_rows()
}

/// `Aᵀ · z`: soft pooling of node rows into cluster rows.
pub fn coarsen<'t>(assignment: Var<'t>, z: Var<'t>) -> std::result::Result<Var<'t>, TensorError> {
    assignment.matmul_tn(z)
}

/// Draws `log(u / (1 - u))` with `u` uniform on the open interval (0, 1).
pub fn logistic_noise<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    Tensor::from_fn(rows, cols, |_, _| {
        let u = loop {
            let u: f64 = rng.random();
            if u > 0.0 && u < 1.0 {
                break u;
            }
        };
        (u / (1.0 - u)).ln()
    })
}

/// Attention logits perturbed with logistic noise; identity in eval mode.
pub fn add_stochastic_noise<R: Rng + ?Sized>(scores: &Tensor, mode: Mode, rng: &mut R) -> Tensor {
    match mode {
        Mode::Eval => scores.clone(),
        Mode::Train => {
            let noise = logistic_noise(scores.rows(), scores.cols(), rng);
            let mut out = scores.clone();
            for (o, n) in out.data_mut().iter_mut().zip(noise.data()) {
                *o += n;
            }
            out
        }
    }
}

/// `A¹ · A² · … · Aᵏ`, the single-level assignment from inputs to the
/// coarsest clusters.
pub fn flatten_assignments(stack: &[Tensor]) -> std::result::Result<Tensor, TensorError> {
    let (first, rest) = stack
        .split_first()
        .ok_or_else(|| TensorError::Contract("empty assignment stack".into()))?;
    rest.iter().try_fold(first.clone(), |acc, a| acc.matmul(a))
}

/// Rng stand-in for eval-mode calls, which never draw.
pub struct NoRng;

impl rand::RngCore for NoRng {
    fn next_u32(&mut self) -> u32 {
        unreachable!("eval mode does not sample")
    }

    fn next_u64(&mut self) -> u64 {
        unreachable!("eval mode does not sample")
    }

    fn fill_bytes(&mut self, _dst: &mut [u8]) {
        unreachable!("eval mode does not sample")
    }
}
