//! Dense reference implementation of the output and input vocabulary layers,
//! monolithic and sharded along the vocabulary dimension.
//!
//! All arithmetic is `f64`. The sharded variants are checked against
//! [`oracle_output_layer`] to within 1e-10.

mod check;
mod input;
mod shard;

pub use check::{
    compare_outputs, finite_difference_grads, random_instance, run_pipeline, verify, Fault,
    Instance, OutputErrors, Pipeline, VerifyDims, VerifyReport,
};
pub use input::{embedding_grad, embedding_lookup, input_backward, input_forward};
pub use shard::{
    alg1_output, alg1_pass_s, alg1_pass_t, alg2_barrier_c1, alg2_output, alg2_pass_s, alg2_pass_t,
    concat_shards, merge_max_sum, naive_partitioned_output, shard_weights, EmbeddingShard,
    GlobalStats, ShardState,
};

use ndarray::{Array1, Array2, Axis};

use crate::error::{Error, Result};

/// Output of the last transformer layer together with the target labels.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenBatch {
    /// `[n_tok × h]`
    pub x: Array2<f64>,
    pub labels: Vec<usize>,
}

impl TokenBatch {
    pub fn new(x: Array2<f64>, labels: Vec<usize>) -> Result<Self> {
        if x.nrows() == 0 {
            return Err(Error::Empty("token batch"));
        }
        if labels.len() != x.nrows() {
            return Err(Error::Dimension(format!(
                "{} labels for {} tokens",
                labels.len(),
                x.nrows()
            )));
        }
        Ok(TokenBatch { x, labels })
    }

    pub fn tokens(&self) -> usize {
        self.x.nrows()
    }

    pub fn hidden(&self) -> usize {
        self.x.ncols()
    }

    fn check_labels(&self, vocab: usize) -> Result<()> {
        match self.labels.iter().find(|&&g| g >= vocab) {
            Some(&label) => Err(Error::LabelOutOfRange { label, vocab }),
            None => Ok(()),
        }
    }
}

/// Softmax, per-token loss and both gradients of the output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputResult {
    /// `[n_tok × V]`
    pub softmax: Array2<f64>,
    /// Per-token cross entropy.
    pub loss: Array1<f64>,
    /// `[n_tok × h]`
    pub grad_x: Array2<f64>,
    /// `[V × h]`
    pub grad_w: Array2<f64>,
}

impl OutputResult {
    pub fn total_loss(&self) -> f64 {
        self.loss.sum()
    }
}

/// Monolithic output layer: `Y = X Wᵀ`, safe softmax, cross entropy and gradients.
pub fn oracle_output_layer(batch: &TokenBatch, w: &Array2<f64>) -> Result<OutputResult> {
    if w.ncols() != batch.hidden() {
        return Err(Error::Dimension(format!(
            "weights have {} columns, activations have {}",
            w.ncols(),
            batch.hidden()
        )));
    }
    if w.nrows() == 0 {
        return Err(Error::Empty("vocabulary"));
    }
    batch.check_labels(w.nrows())?;
    let y = batch.x.dot(&w.t());
    Ok(output_from_logits(&y, batch, w))
}

/// Finishes the oracle from precomputed logits `y`.
///
/// Exposed so tests can perturb the logits directly (for example shifting a
/// row by a constant) without going through `X Wᵀ`.
pub fn output_from_logits(y: &Array2<f64>, batch: &TokenBatch, w: &Array2<f64>) -> OutputResult {
    let n = y.nrows();
    let mut softmax = Array2::zeros(y.raw_dim());
    let mut loss = Array1::zeros(n);
    for (i, row) in y.axis_iter(Axis(0)).enumerate() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let e = row.mapv(|v| (v - m).exp());
        let sum = e.sum();
        softmax.row_mut(i).assign(&(e / sum));
        loss[i] = m + sum.ln() - row[batch.labels[i]];
    }
    let mut grad_y = softmax.clone();
    for (i, &g) in batch.labels.iter().enumerate() {
        grad_y[[i, g]] -= 1.0;
    }
    OutputResult {
        grad_x: grad_y.dot(w),
        grad_w: grad_y.t().dot(&batch.x),
        softmax,
        loss,
    }
}

/// Row-wise maximum and shifted exp-sum of a logits block.
pub(crate) fn row_max_sum(y: &Array2<f64>) -> (Array1<f64>, Array1<f64>) {
    let m = y.map_axis(Axis(1), |r| r.fold(f64::NEG_INFINITY, |a, &b| a.max(b)));
    let mut sum = Array1::zeros(y.nrows());
    for (i, row) in y.axis_iter(Axis(0)).enumerate() {
        sum[i] = row.iter().map(|&v| (v - m[i]).exp()).sum();
    }
    (m, sum)
}

pub(crate) fn max_abs_diff<D: ndarray::Dimension>(
    a: &ndarray::Array<f64, D>,
    b: &ndarray::Array<f64, D>,
) -> f64 {
    if a.shape() != b.shape() {
        return f64::INFINITY;
    }
    a.iter().zip(b.iter()).fold(0.0, |acc, (x, y)| acc.max((x - y).abs()))
}
