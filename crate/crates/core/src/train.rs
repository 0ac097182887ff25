//! Optimisation loop: stratified splits, Adam, per-epoch metrics, best
//! validation snapshot selection and extraction of the final global
//! assignment.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;

use crate::cluster_eval::{accuracy, auroc, compose_hard, EvalError};
use crate::data::BrainGraph;
use crate::model::{flatten_assignments, ClusterMode, Mode, ModelConfig, ModelError, ParamStore, ThcModel, NoRng};
use crate::objective::{batch_loss, LossWeights};
use crate::tensor::{Tape, Tensor, TensorError};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("non-finite {component} loss in epoch {epoch}, batch {batch}")]
    NonFinite {
        epoch: usize,
        batch: usize,
        component: &'static str,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

pub type Result<T> = std::result::Result<T, TrainError>;

/// Architecture section of the config file. Input size and class count come
/// from the dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub schedule: Vec<usize>,
    pub heads: usize,
    pub key_dim: usize,
    pub value_dim: usize,
    pub readout_hidden: usize,
    pub ablation: ClusterMode,
    pub center_input: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::default();
        Self {
            schedule: m.schedule,
            heads: m.heads,
            key_dim: m.key_dim,
            value_dim: m.value_dim,
            readout_hidden: m.readout_hidden,
            ablation: m.cluster_mode,
            center_input: m.center_input,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Train, validation and test fractions.
    pub split: [f64; 3],
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 16,
            seed: 0,
            split: [0.7, 0.2, 0.1],
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub model: ModelSection,
    pub optimizer: OptimizerConfig,
    pub loss: LossWeights,
    pub run: RunConfig,
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> std::result::Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn model_config(&self, input_size: usize, classes: usize) -> ModelConfig {
        ModelConfig {
            input_size,
            schedule: self.model.schedule.clone(),
            heads: self.model.heads,
            key_dim: self.model.key_dim,
            value_dim: self.model.value_dim,
            readout_hidden: self.model.readout_hidden,
            classes,
            cluster_mode: self.model.ablation,
            center_input: self.model.center_input,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.run.split;
        if s.iter().any(|&r| !(0.0..=1.0).contains(&r)) || (s.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(TrainError::Config(format!("split ratios {s:?} must be in [0, 1] and sum to 1")));
        }
        if self.run.batch_size == 0 {
            return Err(TrainError::Config("batch size must be positive".into()));
        }
        let o = &self.optimizer;
        if !(o.learning_rate >= 0.0 && o.learning_rate.is_finite()) {
            return Err(TrainError::Config(format!("learning rate {} must be finite and >= 0", o.learning_rate)));
        }
        if !((0.0..1.0).contains(&o.beta1) && (0.0..1.0).contains(&o.beta2) && o.epsilon > 0.0) {
            return Err(TrainError::Config("need 0 <= beta1, beta2 < 1 and epsilon > 0".into()));
        }
        if !(self.loss.sparsity.is_finite() && self.loss.entropy.is_finite()) {
            return Err(TrainError::Config("loss weights must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Stratified random split. Each class is shuffled independently; samples
/// are then interleaved by their relative position within their class, so
/// every prefix of the ordering carries close to the global class ratio.
pub fn split(labels: &[usize], ratios: [f64; 3], seed: u64) -> Result<Splits> {
    let n = labels.len();
    if n == 0 {
        return Err(TrainError::Config("cannot split an empty dataset".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let classes = labels.iter().copied().max().unwrap() + 1;
    let mut keyed: Vec<(f64, usize, usize)> = Vec::with_capacity(n);
    for c in 0..classes {
        let mut members: Vec<usize> = (0..n).filter(|&i| labels[i] == c).collect();
        members.shuffle(&mut rng);
        let size = members.len() as f64;
        keyed.extend(members.iter().enumerate().map(|(r, &i)| ((r as f64 + 0.5) / size, c, i)));
    }
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let order: Vec<usize> = keyed.into_iter().map(|k| k.2).collect();
    let n_train = (ratios[0] * n as f64).round() as usize;
    let n_val = ((ratios[0] + ratios[1]) * n as f64).round() as usize - n_train;
    let n_test = n - n_train - n_val;
    for (name, size, ratio) in [("train", n_train, ratios[0]), ("validation", n_val, ratios[1]), ("test", n_test, ratios[2])] {
        if size == 0 && ratio > 0.0 {
            return Err(TrainError::Config(format!(
                "{name} split of {n} samples at ratio {ratio} would be empty"
            )));
        }
    }
    Ok(Splits {
        train: order[..n_train].to_vec(),
        val: order[n_train..n_train + n_val].to_vec(),
        test: order[n_train + n_val..].to_vec(),
    })
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: OptimizerConfig,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(config: OptimizerConfig, params: &[Tensor]) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.rows(), p.cols())).collect();
        Self {
            config,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[Tensor], &[Tensor]) {
        (&self.m, &self.v)
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) {
        let c = &self.config;
        self.step += 1;
        let t = self.step as i32;
        let bias1 = 1.0 - c.beta1.powi(t);
        let bias2 = 1.0 - c.beta2.powi(t);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for (j, (w, &gj)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * gj;
                v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * gj * gj;
                if c.learning_rate != 0.0 {
                    let mhat = m[j] / bias1;
                    let vhat = v[j] / bias2;
                    *w -= c.learning_rate * mhat / (vhat.sqrt() + c.epsilon);
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub ce: f64,
    pub sparsity: f64,
    pub entropy: f64,
    pub total: f64,
    pub train_auroc: f64,
    pub val_auroc: f64,
    pub val_acc: f64,
}

#[derive(Clone, Debug)]
pub struct Snapshot {
    pub epoch: usize,
    pub val_auroc: f64,
    pub params: ParamStore,
}

pub struct TrainState {
    pub model: ThcModel,
    pub optimizer: Adam,
    pub epoch: usize,
    pub best: Option<Snapshot>,
    pub history: Vec<EpochMetrics>,
    rng: ChaCha8Rng,
}

impl TrainState {
    pub fn new(model: ThcModel, optimizer: OptimizerConfig, seed: u64) -> Self {
        let optimizer = Adam::new(optimizer, model.params().tensors());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        Self {
            model,
            optimizer,
            epoch: 0,
            best: None,
            history: Vec::new(),
            rng,
        }
    }

    /// Records `metrics`, replacing the snapshot only on a strictly higher
    /// validation AUROC so ties keep the earliest epoch.
    pub fn record(&mut self, metrics: EpochMetrics) {
        let better = match &self.best {
            None => !metrics.val_auroc.is_nan(),
            Some(b) => metrics.val_auroc > b.val_auroc,
        };
        if better {
            self.best = Some(Snapshot {
                epoch: metrics.epoch,
                val_auroc: metrics.val_auroc,
                params: self.model.params().clone(),
            });
        }
        self.history.push(metrics);
        self.epoch += 1;
    }
}

fn auroc_or_nan(scores: &[f64], labels: &[usize]) -> Result<f64> {
    match auroc(scores, labels) {
        Ok(v) => Ok(v),
        Err(EvalError::SingleClass) => Ok(f64::NAN),
        Err(e) => Err(e.into()),
    }
}

/// Predicted class per sample from `y[1] - y[0]` scores; ties go to class 0.
pub fn predictions(scores: &[f64]) -> Vec<usize> {
    scores.iter().map(|&s| usize::from(s > 0.0)).collect()
}

/// One pass over the shuffled training set with an Adam step per batch.
pub fn train_epoch(state: &mut TrainState, graphs: &[BrainGraph], splits: &Splits, config: &TrainConfig) -> Result<EpochMetrics> {
    if splits.train.is_empty() {
        return Err(TrainError::Config("training split is empty".into()));
    }
    let mut order = splits.train.clone();
    order.shuffle(&mut state.rng);
    let (mut ce, mut sps, mut ent, mut tot) = (0.0, 0.0, 0.0, 0.0);
    let mut train_scores = Vec::with_capacity(order.len());
    let mut train_labels = Vec::with_capacity(order.len());
    for (batch_index, batch) in order.chunks(config.run.batch_size).enumerate() {
        let tape = Tape::new();
        let binding = state.model.bind(&tape);
        let inputs: Vec<_> = batch.iter().map(|&i| tape.constant(graphs[i].adjacency.clone())).collect();
        let labels: Vec<usize> = batch.iter().map(|&i| graphs[i].label).collect();
        let out = state.model.forward_batch(&binding, &inputs, Mode::Train, &mut state.rng)?;
        let (loss, parts) = batch_loss(&out, &labels, &config.loss)?;
        for (component, v) in [("cross-entropy", parts.ce), ("sparsity", parts.sparsity), ("entropy", parts.entropy), ("total", parts.total)] {
            if !v.is_finite() {
                return Err(TrainError::NonFinite {
                    epoch: state.epoch,
                    batch: batch_index,
                    component,
                });
            }
        }
        for l in &out.logits {
            let v = l.to_tensor();
            train_scores.push(v.data()[1] - v.data()[0]);
        }
        train_labels.extend_from_slice(&labels);
        let mut grads = tape.backward(loss)?;
        let grads: Vec<Tensor> = binding.vars().iter().map(|&v| grads.take(v)).collect();
        drop(out);
        state.optimizer.step(state.model.params_mut().tensors_mut(), &grads);
        let w = batch.len() as f64;
        ce += parts.ce * w;
        sps += parts.sparsity * w;
        ent += parts.entropy * w;
        tot += parts.total * w;
    }
    let n = order.len() as f64;
    let (val_auroc, val_acc) = evaluate(&state.model, graphs, &splits.val)?;
    let metrics = EpochMetrics {
        epoch: state.epoch,
        ce: ce / n,
        sparsity: sps / n,
        entropy: ent / n,
        total: tot / n,
        train_auroc: auroc_or_nan(&train_scores, &train_labels)?,
        val_auroc,
        val_acc,
    };
    state.record(metrics.clone());
    Ok(metrics)
}

/// Eval-mode AUROC (NaN for single-class or empty sets) and accuracy.
pub fn evaluate(model: &ThcModel, graphs: &[BrainGraph], indices: &[usize]) -> Result<(f64, f64)> {
    if indices.is_empty() {
        return Ok((f64::NAN, f64::NAN));
    }
    let inputs: Vec<&Tensor> = indices.iter().map(|&i| &graphs[i].adjacency).collect();
    let labels: Vec<usize> = indices.iter().map(|&i| graphs[i].label).collect();
    let scores = model.scores(&inputs)?;
    Ok((auroc_or_nan(&scores, &labels)?, accuracy(&predictions(&scores), &labels)?))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestMetrics {
    pub best_epoch: Option<usize>,
    pub val_auroc: f64,
    pub test_auroc: f64,
    pub test_acc: f64,
}

/// Restores the best validation snapshot (if any epoch completed) and
/// scores the test split.
pub fn select_and_test(state: &mut TrainState, graphs: &[BrainGraph], splits: &Splits) -> Result<TestMetrics> {
    let (best_epoch, val_auroc) = match &state.best {
        Some(b) => {
            state.model.load_params(b.params.tensors().to_vec())?;
            (Some(b.epoch), b.val_auroc)
        }
        None => (None, f64::NAN),
    };
    let (test_auroc, test_acc) = evaluate(&state.model, graphs, &splits.test)?;
    Ok(TestMetrics {
        best_epoch,
        val_auroc,
        test_auroc,
        test_acc,
    })
}

/// Global assignment averaged over a sample set.
#[derive(Clone, Debug, PartialEq)]
pub struct FinalAssignment {
    /// Soft assignment per layer.
    pub soft: Vec<Tensor>,
    /// Row argmax of each layer's soft assignment over that layer's inputs.
    pub hard: Vec<Vec<usize>>,
    /// Node-level hard partition per layer, composed through earlier layers.
    pub node_hard: Vec<Vec<usize>>,
    /// `A¹ · … · Aᵏ`.
    pub flat: Tensor,
    pub flat_hard: Vec<usize>,
}

/// Averages the per-sample assignment logits of every input (eval mode),
/// one layer at a time, and softmaxes once per layer.
pub fn finalize_assignment(model: &ThcModel, inputs: &[&Tensor]) -> Result<FinalAssignment> {
    if model.config().cluster_mode == ClusterMode::NoCluster {
        return Err(TrainError::Config("the no_cluster ablation has no assignment to extract".into()));
    }
    if inputs.is_empty() {
        return Err(TrainError::Config("cannot extract an assignment from zero samples".into()));
    }
    let mut hs: Vec<Tensor> = inputs.iter().map(|&x| x.clone()).collect();
    let mut soft = Vec::with_capacity(model.layers().len());
    for index in 0..model.layers().len() {
        let tape = Tape::new();
        let b = model.bind(&tape);
        let encoded = hs
            .iter()
            .map(|h| model.encode(&b, index, tape.constant(h.clone()), Mode::Eval, &mut NoRng))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let a = model.assignment(&b, index, &encoded)?.expect("clustering layers assign");
        hs = encoded
            .iter()
            .map(|e| Ok(model.coarsen(&b, index, e.embedded, Some(a))?.to_tensor()))
            .collect::<Result<Vec<_>>>()?;
        soft.push(a.to_tensor());
    }
    let flat = flatten_assignments(&soft)?;
    Ok(FinalAssignment {
        hard: soft.iter().map(Tensor::argmax_rows).collect(),
        node_hard: compose_hard(&soft),
        flat_hard: flat.argmax_rows(),
        flat,
        soft,
    })
}

/// Everything a finished training run produced.
pub struct TrainOutcome {
    pub state: TrainState,
    pub splits: Splits,
    pub test: TestMetrics,
}

/// Number of classes implied by the labels, at least two.
pub fn class_count(graphs: &[BrainGraph]) -> usize {
    graphs.iter().map(|g| g.label + 1).max().unwrap_or(2).max(2)
}

/// Builds the model from `config`, trains for `config.run.epochs` epochs on
/// `splits` and selects the best validation epoch. `on_epoch` runs after
/// every epoch, e.g. to write a checkpoint.
pub fn run_training(
    config: &TrainConfig,
    graphs: &[BrainGraph],
    splits: Splits,
    mut on_epoch: impl FnMut(&TrainState) -> std::io::Result<()>,
) -> Result<TrainOutcome> {
    config.validate()?;
    let first = graphs.first().ok_or_else(|| TrainError::Config("dataset is empty".into()))?;
    let model = ThcModel::new(config.model_config(first.nodes(), class_count(graphs)), config.run.seed)?;
    let mut state = TrainState::new(model, config.optimizer.clone(), config.run.seed);
    for _ in 0..config.run.epochs {
        train_epoch(&mut state, graphs, &splits, config)?;
        on_epoch(&state).map_err(|e| TrainError::Config(format!("epoch hook failed: {e}")))?;
    }
    let test = select_and_test(&mut state, graphs, &splits)?;
    Ok(TrainOutcome { state, splits, test })
}

pub fn write_metrics_csv<W: Write>(history: &[EpochMetrics], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["epoch", "ce", "sparsity", "entropy", "total", "train_auroc", "val_auroc", "val_acc"])?;
    for m in history {
        w.serialize(m)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, PlantedSpec};
    use crate::model::ModelConfig;

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            model: ModelSection {
                schedule: vec![4, 2],
                heads: 2,
                key_dim: 4,
                value_dim: 4,
                readout_hidden: 4,
                ablation: ClusterMode::Full,
                center_input: true,
            },
            run: RunConfig {
                epochs: 2,
                batch_size: 4,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    fn tiny_data(n: usize) -> Vec<BrainGraph> {
        generate(
            &PlantedSpec {
                nodes: 8,
                fine_blocks: 4,
                coarse_blocks: 2,
                effect_blocks: vec![[0, 0]],
                class_shift: 0.5,
                ..Default::default()
            },
            n,
        )
        .unwrap()
        .graphs
    }

    #[test]
    fn split_sizes_follow_ratios() {
        let labels = [0, 1, 0, 1, 0, 1, 0, 1, 0, 1];
        let s = split(&labels, [0.7, 0.2, 0.1], 3).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (7, 2, 1));
        let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        all.sort();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert_eq!(split(&labels, [0.7, 0.2, 0.1], 3).unwrap(), s);
    }

    #[test]
    fn split_is_stratified() {
        let labels: Vec<usize> = (0..200).map(|i| usize::from(i % 10 < 3)).collect();
        let s = split(&labels, [0.7, 0.2, 0.1], 9).unwrap();
        for part in [&s.train, &s.val, &s.test] {
            let frac = part.iter().filter(|&&i| labels[i] == 1).count() as f64 / part.len() as f64;
            assert!((frac - 0.3).abs() <= 0.05, "{frac}");
        }
    }

    #[test]
    fn split_rejects_empty_parts() {
        assert!(split(&[0, 1, 0], [0.7, 0.2, 0.1], 0).is_err());
        assert!(split(&[], [0.7, 0.2, 0.1], 0).is_err());
    }

    #[test]
    fn adam_converges_on_quadratic_bowl() {
        let target = [3.0, -2.0, 0.5];
        let mut p = vec![Tensor::row(vec![0.0, 0.0, 0.0])];
        let mut opt = Adam::new(
            OptimizerConfig {
                learning_rate: 0.1,
                ..Default::default()
            },
            &p,
        );
        for _ in 0..1000 {
            let g: Vec<f64> = p[0].data().iter().zip(&target).map(|(x, t)| 2.0 * (x - t)).collect();
            opt.step(&mut p, &[Tensor::row(g)]);
        }
        for (x, t) in p[0].data().iter().zip(&target) {
            assert!((x - t).abs() < 1e-6, "{x} vs {t}");
        }
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_bit_exact() {
        let graphs = tiny_data(12);
        let mut cfg = tiny_config();
        cfg.optimizer.learning_rate = 0.0;
        let splits = split(&graphs.iter().map(|g| g.label).collect::<Vec<_>>(), cfg.run.split, 0).unwrap();
        let model = ThcModel::new(cfg.model_config(8, 2), 0).unwrap();
        let before = model.params().clone();
        let mut state = TrainState::new(model, cfg.optimizer.clone(), 0);
        train_epoch(&mut state, &graphs, &splits, &cfg).unwrap();
        assert_eq!(state.model.params().tensors(), before.tensors());
        assert_eq!(state.history.len(), 1);
    }

    #[test]
    fn single_sample_step_descends_on_convex_readout() {
        // Only the last readout bias moves: CE is convex in it.
        let graphs = tiny_data(4);
        let cfg = tiny_config();
        let mut model = ThcModel::new(cfg.model_config(8, 2), 1).unwrap();
        let x = &graphs[0].adjacency;
        let y = graphs[0].label;
        let loss = |m: &ThcModel| {
            let t = m.forward(x, Mode::Eval, &mut NoRng).unwrap();
            crate::objective::total_loss(&t, y, &cfg.loss).unwrap().ce
        };
        let before = loss(&model);
        let tape = Tape::new();
        let b = model.bind(&tape);
        let out = model.forward_batch(&b, &[tape.constant(x.clone())], Mode::Eval, &mut NoRng).unwrap();
        let ce = crate::objective::cross_entropy(out.logits[0], y).unwrap();
        let g = tape.backward(ce).unwrap();
        let last = b.vars().len() - 1;
        let grad = g.wrt(b.vars()[last]);
        drop(out);
        let bias = &mut model.params_mut().tensors_mut()[last];
        for (w, d) in bias.data_mut().iter_mut().zip(grad.data()) {
            *w -= 0.1 * d;
        }
        assert!(loss(&model) < before);
    }

    #[test]
    fn selection_prefers_earliest_tie_and_latest_improvement() {
        let model = ThcModel::new(ModelConfig { input_size: 8, schedule: vec![4], ..tiny_model() }, 0).unwrap();
        let mut state = TrainState::new(model, OptimizerConfig::default(), 0);
        let m = |epoch, val_auroc| EpochMetrics {
            epoch,
            ce: 0.0,
            sparsity: 0.0,
            entropy: 0.0,
            total: 0.0,
            train_auroc: 0.5,
            val_auroc,
            val_acc: 0.5,
        };
        state.record(m(0, 0.6));
        state.record(m(1, 0.8));
        state.record(m(2, 0.8));
        assert_eq!(state.best.as_ref().unwrap().epoch, 1);
        state.record(m(3, 0.9));
        assert_eq!(state.best.as_ref().unwrap().epoch, 3);
        assert_eq!(state.history.len(), state.epoch);
    }

    fn tiny_model() -> ModelConfig {
        tiny_config().model_config(8, 2)
    }

    #[test]
    fn training_is_deterministic() {
        let graphs = tiny_data(20);
        let cfg = tiny_config();
        let labels: Vec<usize> = graphs.iter().map(|g| g.label).collect();
        let run = || {
            let s = split(&labels, cfg.run.split, cfg.run.seed).unwrap();
            run_training(&cfg, &graphs, s, |_| Ok(())).unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.state.history, b.state.history);
        assert_eq!(a.state.model.params().tensors(), b.state.model.params().tensors());
        assert_eq!(a.test, b.test);
    }

    #[test]
    fn final_assignment_of_one_sample_is_its_eval_assignment() {
        let graphs = tiny_data(2);
        let model = ThcModel::new(tiny_model(), 4).unwrap();
        let fa = finalize_assignment(&model, &[&graphs[0].adjacency]).unwrap();
        let t = model.forward(&graphs[0].adjacency, Mode::Eval, &mut NoRng).unwrap();
        let own: Vec<Tensor> = t.assignments().into_iter().cloned().collect();
        assert_eq!(fa.soft, own);
        for (h, a) in fa.hard.iter().zip(&fa.soft) {
            assert_eq!(h.len(), a.rows());
            assert!(h.iter().all(|&c| c < a.cols()));
        }
    }

    #[test]
    fn duplicated_samples_do_not_change_the_assignment() {
        let graphs = tiny_data(2);
        let model = ThcModel::new(tiny_model(), 5).unwrap();
        let x = &graphs[1].adjacency;
        let one = finalize_assignment(&model, &[x]).unwrap();
        let two = finalize_assignment(&model, &[x, x]).unwrap();
        for (a, b) in one.soft.iter().zip(&two.soft) {
            assert!(a.max_abs_diff(b) < 1e-15);
        }
    }

    #[test]
    fn single_layer_flat_equals_first_assignment() {
        let graphs = tiny_data(3);
        let cfg = ModelConfig {
            schedule: vec![3],
            ..tiny_model()
        };
        let model = ThcModel::new(cfg, 2).unwrap();
        let fa = finalize_assignment(&model, &[&graphs[0].adjacency, &graphs[1].adjacency]).unwrap();
        assert_eq!(fa.flat, fa.soft[0]);
    }

    #[test]
    fn metrics_csv_header() {
        let mut buf = Vec::new();
        write_metrics_csv(&[], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "epoch,ce,sparsity,entropy,total,train_auroc,val_auroc,val_acc\n");
    }

    #[test]
    fn config_round_trips_through_toml() {
        let cfg = tiny_config();
        assert_eq!(TrainConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
        assert!(TrainConfig::from_toml("[run]\nepochz = 3\n").is_err());
    }
}
