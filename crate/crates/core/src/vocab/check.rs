use std::fmt;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::shard::{alg1_with, alg2_with, naive_with, Correction};
use super::{
    embedding_grad, embedding_lookup, input_backward, input_forward, max_abs_diff,
    oracle_output_layer, shard_weights, OutputResult, TokenBatch,
};
use crate::error::Result;

/// Tolerance for sharded-vs-monolithic agreement.
pub const EXACT_TOL: f64 = 1e-10;
/// Tolerance for analytic-vs-finite-difference gradients (relative).
pub const FD_TOL: f64 = 1e-6;
pub const FD_STEP: f64 = 1e-5;

/// A random output-layer problem: activations, labels, weights and input tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub batch: TokenBatch,
    /// `[V × h]`, shared by the input and output layers.
    pub w: Array2<f64>,
    pub tokens: Vec<usize>,
}

/// Deterministic instance with entries uniform in [-1, 1).
pub fn random_instance(n_tok: usize, h: usize, v: usize, seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Array2::from_shape_fn((n_tok, h), |_| rng.gen_range(-1.0..1.0));
    let w = Array2::from_shape_fn((v, h), |_| rng.gen_range(-1.0..1.0));
    let labels = (0..n_tok).map(|_| rng.gen_range(0..v)).collect();
    let tokens = (0..n_tok).map(|_| rng.gen_range(0..v)).collect();
    Instance {
        batch: TokenBatch::new(x, labels).expect("shape built consistently"),
        w,
        tokens,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Pipeline {
    /// Three barriers.
    Naive,
    /// Two barriers.
    Alg1,
    /// One barrier.
    Alg2,
}

impl Pipeline {
    pub const ALL: [Pipeline; 3] = [Pipeline::Naive, Pipeline::Alg1, Pipeline::Alg2];

    pub fn name(self) -> &'static str {
        match self {
            Pipeline::Naive => "naive",
            Pipeline::Alg1 => "alg1",
            Pipeline::Alg2 => "alg2",
        }
    }
}

/// Deliberate numerical fault, used to check that verification catches it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Drop the max-shift term of the softmax rescaling in one pipeline.
    DropMaxCorrection(Pipeline),
}

pub fn run_pipeline(
    pipeline: Pipeline,
    batch: &TokenBatch,
    shards: &[super::EmbeddingShard],
    fault: Option<Fault>,
) -> Result<OutputResult> {
    let correction = match fault {
        Some(Fault::DropMaxCorrection(target)) if target == pipeline => Correction::SkipMaxShift,
        _ => Correction::Exact,
    };
    match pipeline {
        Pipeline::Naive => naive_with(batch, shards, correction),
        Pipeline::Alg1 => alg1_with(batch, shards, correction),
        Pipeline::Alg2 => alg2_with(batch, shards, correction),
    }
}

/// Largest absolute deviation of each output component.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OutputErrors {
    pub softmax: f64,
    pub loss: f64,
    pub grad_x: f64,
    pub grad_w: f64,
}

impl OutputErrors {
    pub fn max(&self) -> f64 {
        // f64::max drops NaN
        [self.softmax, self.loss, self.grad_x, self.grad_w]
            .into_iter()
            .fold(0.0, |m, e| if e.is_nan() || m.is_nan() { f64::NAN } else { m.max(e) })
    }
}

pub fn compare_outputs(a: &OutputResult, b: &OutputResult) -> OutputErrors {
    OutputErrors {
        softmax: max_abs_diff(&a.softmax, &b.softmax),
        loss: max_abs_diff(&a.loss, &b.loss),
        grad_x: max_abs_diff(&a.grad_x, &b.grad_x),
        grad_w: max_abs_diff(&a.grad_w, &b.grad_w),
    }
}

/// Central finite differences of the total loss with respect to `X` and `W`.
pub fn finite_difference_grads(batch: &TokenBatch, w: &Array2<f64>, step: f64) -> Result<(Array2<f64>, Array2<f64>)> {
    let loss = |b: &TokenBatch, w: &Array2<f64>| oracle_output_layer(b, w).map(|o| o.total_loss());
    let mut gx = Array2::zeros(batch.x.raw_dim());
    let mut probe = batch.clone();
    for idx in ndarray::indices(batch.x.dim()) {
        let orig = probe.x[idx];
        probe.x[idx] = orig + step;
        let up = loss(&probe, w)?;
        probe.x[idx] = orig - step;
        let down = loss(&probe, w)?;
        probe.x[idx] = orig;
        gx[idx] = (up - down) / (2.0 * step);
    }
    let mut gw = Array2::zeros(w.raw_dim());
    let mut wp = w.clone();
    for idx in ndarray::indices(w.dim()) {
        let orig = wp[idx];
        wp[idx] = orig + step;
        let up = loss(batch, &wp)?;
        wp[idx] = orig - step;
        let down = loss(batch, &wp)?;
        wp[idx] = orig;
        gw[idx] = (up - down) / (2.0 * step);
    }
    Ok((gx, gw))
}

pub(crate) fn relative_error(analytic: &Array2<f64>, reference: &Array2<f64>) -> f64 {
    let scale = reference.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
    max_abs_diff(analytic, reference) / scale.max(f64::MIN_POSITIVE)
}

/// Problem size for [`verify`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VerifyDims {
    pub b: usize,
    pub s: usize,
    pub h: usize,
    pub v: usize,
    pub p: usize,
}

impl Default for VerifyDims {
    fn default() -> Self {
        VerifyDims { b: 2, s: 4, h: 8, v: 32, p: 4 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyReport {
    pub dims: VerifyDims,
    pub seed: u64,
    pub pipelines: Vec<(Pipeline, OutputErrors)>,
    /// Sum of shard partial embeddings vs. monolithic lookup.
    pub input_forward: f64,
    /// Stacked shard embedding gradients vs. monolithic scatter-add.
    pub input_backward: f64,
    /// Oracle gradients vs. finite differences, relative.
    pub fd_grad_x: f64,
    pub fd_grad_w: f64,
}

impl VerifyReport {
    /// Names of the checks that exceeded their tolerance.
    pub fn failures(&self) -> Vec<String> {
        // NaN counts as a failure
        let over = |e: f64, tol: f64| e.is_nan() || e > tol;
        let mut out: Vec<String> = self
            .pipelines
            .iter()
            .filter(|(_, e)| over(e.max(), EXACT_TOL))
            .map(|(p, _)| p.name().to_string())
            .collect();
        for (name, e, tol) in [
            ("input_forward", self.input_forward, EXACT_TOL),
            ("input_backward", self.input_backward, EXACT_TOL),
            ("fd_grad_x", self.fd_grad_x, FD_TOL),
            ("fd_grad_w", self.fd_grad_w, FD_TOL),
        ] {
            if over(e, tol) {
                out.push(name.into());
            }
        }
        out
    }

    pub fn passed(&self) -> bool {
        self.failures().is_empty()
    }
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let d = self.dims;
        writeln!(f, "dims b={} s={} h={} V={} p={} seed={}", d.b, d.s, d.h, d.v, d.p, self.seed)?;
        let verdict = |ok: bool| if ok { "PASS" } else { "FAIL" };
        for (p, e) in &self.pipelines {
            writeln!(
                f,
                "{:<15} softmax={:.3e} loss={:.3e} grad_x={:.3e} grad_w={:.3e} {}",
                p.name(),
                e.softmax,
                e.loss,
                e.grad_x,
                e.grad_w,
                verdict(e.max() <= EXACT_TOL)
            )?;
        }
        writeln!(f, "{:<15} {:.3e} {}", "input_forward", self.input_forward, verdict(self.input_forward <= EXACT_TOL))?;
        writeln!(f, "{:<15} {:.3e} {}", "input_backward", self.input_backward, verdict(self.input_backward <= EXACT_TOL))?;
        writeln!(f, "{:<15} {:.3e} {}", "fd_grad_x", self.fd_grad_x, verdict(self.fd_grad_x <= FD_TOL))?;
        writeln!(f, "{:<15} {:.3e} {}", "fd_grad_w", self.fd_grad_w, verdict(self.fd_grad_w <= FD_TOL))?;
        write!(f, "{}", verdict(self.passed()))
    }
}

/// Runs every sharded pipeline and the input layer against the monolithic
/// reference, and the reference against finite differences.
pub fn verify(dims: VerifyDims, seed: u64, fault: Option<Fault>) -> Result<VerifyReport> {
    let inst = random_instance(dims.b * dims.s, dims.h, dims.v, seed);
    let shards = shard_weights(&inst.w, dims.p)?;
    let oracle = oracle_output_layer(&inst.batch, &inst.w)?;
    let pipelines = Pipeline::ALL
        .iter()
        .map(|&p| Ok((p, compare_outputs(&run_pipeline(p, &inst.batch, &shards, fault)?, &oracle))))
        .collect::<Result<Vec<_>>>()?;

    let lookup = embedding_lookup(&inst.tokens, &inst.w)?;
    let mut summed = Array2::zeros(lookup.raw_dim());
    for shard in &shards {
        summed += &input_forward(&inst.tokens, shard)?;
    }
    // the output gradient doubles as an arbitrary upstream gradient
    let upstream = &oracle.grad_x;
    let full = embedding_grad(upstream, &inst.tokens, dims.v)?;
    let parts = shards
        .iter()
        .map(|s| input_backward(upstream, &inst.tokens, s))
        .collect::<Result<Vec<_>>>()?;
    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    let stacked = ndarray::concatenate(ndarray::Axis(0), &views).expect("equal hidden size");

    let (fx, fw) = finite_difference_grads(&inst.batch, &inst.w, FD_STEP)?;
    Ok(VerifyReport {
        dims,
        seed,
        pipelines,
        input_forward: max_abs_diff(&summed, &lookup),
        input_backward: max_abs_diff(&stacked, &full),
        fd_grad_x: relative_error(&oracle.grad_x, &fx),
        fd_grad_w: relative_error(&oracle.grad_w, &fw),
    })
}
