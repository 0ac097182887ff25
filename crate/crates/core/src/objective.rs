//! Training objective: classification cross-entropy plus the sparsity and
//! elementwise-entropy regularisers on every assignment matrix.

use serde::{Deserialize, Serialize};

use crate::model::{BatchForward, ForwardTrace};
use crate::tensor::{mean_vars, Tape, Tensor, TensorError, Var};

/// Clamp applied inside the logarithms of the entropy term.
pub const LOG_CLAMP: f64 = 1e-12;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntropyForm {
    /// `-(A log A + (1 - A) log(1 - A))`, averaged over entries.
    #[default]
    Binary,
    /// `-(S̄ · log A + (1 - A) log(1 - A))` with `S̄` the mean attention logits
    /// and `·` a matrix product.
    Literal,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub sparsity: f64,
    pub entropy: f64,
    pub entropy_form: EntropyForm,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            sparsity: 1.0,
            entropy: 1.0,
            entropy_form: EntropyForm::Binary,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown {
    pub ce: f64,
    pub sparsity: f64,
    pub entropy: f64,
    pub total: f64,
    pub weights: LossWeights,
}

/// `-log softmax(logits)[label]` for a `1 × classes` row.
pub fn cross_entropy<'t>(logits: Var<'t>, label: usize) -> Result<Var<'t>, TensorError> {
    let (rows, classes) = logits.shape();
    if rows != 1 || label >= classes {
        return Err(TensorError::Contract(format!(
            "label {label} is not a valid class for logits of shape {rows}x{classes}"
        )));
    }
    let mut onehot = Tensor::zeros(1, classes);
    onehot.set(0, label, 1.0);
    let picked = logits
        .log_softmax_rows()?
        .mul(logits.tape().constant(onehot))?
        .sum();
    Ok(picked.neg())
}

/// Sum of all entries.
pub fn sparsity_loss<'t>(assignment: Var<'t>) -> Var<'t> {
    assignment.sum()
}

/// Mean elementwise entropy of an assignment matrix. `scores` is required
/// for [`EntropyForm::Literal`].
pub fn entropy_loss<'t>(
    assignment: Var<'t>,
    form: EntropyForm,
    scores: Option<Var<'t>>,
) -> Result<Var<'t>, TensorError> {
    let log_a = assignment.clamp(LOG_CLAMP, 1.0).log()?;
    let one_minus = assignment.neg().add_scalar(1.0);
    let tail = one_minus.mul(one_minus.clamp(LOG_CLAMP, 1.0).log()?)?;
    let head = match form {
        EntropyForm::Binary => assignment.mul(log_a)?,
        EntropyForm::Literal => {
            let s = scores.ok_or_else(|| {
                TensorError::Contract("literal entropy form needs attention logits".into())
            })?;
            s.matmul(log_a)?
        }
    };
    Ok(head.add(tail)?.mean().neg())
}

/// Loss of a batch: mean cross-entropy over samples, plus the weighted
/// regularisers of each layer's shared assignment.
pub fn batch_loss<'t>(
    out: &BatchForward<'t>,
    labels: &[usize],
    weights: &LossWeights,
) -> Result<(Var<'t>, LossBreakdown), TensorError> {
    if labels.len() != out.logits.len() {
        return Err(TensorError::Contract(format!(
            "{} labels for a batch of {}",
            labels.len(),
            out.logits.len()
        )));
    }
    let ces = out
        .logits
        .iter()
        .zip(labels)
        .map(|(&l, &y)| cross_entropy(l, y))
        .collect::<Result<Vec<_>, _>>()?;
    let ce = mean_vars(&ces)?;
    let mut sparsity = Vec::new();
    let mut entropy = Vec::new();
    for layer in &out.layers {
        if let Some(a) = layer.assignment {
            sparsity.push(sparsity_loss(a));
            let scores = match weights.entropy_form {
                EntropyForm::Binary => None,
                EntropyForm::Literal => {
                    let per_sample: Vec<Var<'t>> =
                        layer.encoded.iter().map(|e| e.mean_scores).collect();
                    Some(mean_vars(&per_sample)?)
                }
            };
            entropy.push(entropy_loss(a, weights.entropy_form, scores)?);
        }
    }
    let tape = ce.tape();
    let zero = || tape.constant(Tensor::scalar(0.0));
    let sps = sparsity.iter().try_fold(zero(), |acc, v| acc.add(*v))?;
    let ent = entropy.iter().try_fold(zero(), |acc, v| acc.add(*v))?;
    let total = ce
        .add(sps.scale(weights.sparsity))?
        .add(ent.scale(weights.entropy))?;
    let breakdown = LossBreakdown {
        ce: ce.item(),
        sparsity: sps.item(),
        entropy: ent.item(),
        total: total.item(),
        weights: *weights,
    };
    Ok((total, breakdown))
}

/// Loss of a single-sample trace, evaluated on plain values.
pub fn total_loss(
    trace: &ForwardTrace,
    label: usize,
    weights: &LossWeights,
) -> Result<LossBreakdown, TensorError> {
    let tape = Tape::new();
    let ce = cross_entropy(tape.constant(trace.logits.clone()), label)?.item();
    let mut sparsity = 0.0;
    let mut entropy = 0.0;
    for layer in &trace.layers {
        if let Some(a) = &layer.assignment {
            let a = tape.constant(a.clone());
            sparsity += sparsity_loss(a).item();
            let scores = tape.constant(layer.mean_scores.clone());
            entropy += entropy_loss(a, weights.entropy_form, Some(scores))?.item();
        }
    }
    Ok(LossBreakdown {
        ce,
        sparsity,
        entropy,
        total: ce + weights.sparsity * sparsity + weights.entropy * entropy,
        weights: *weights,
    })
}
