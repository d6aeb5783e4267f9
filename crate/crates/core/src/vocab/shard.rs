use std::ops::Range;

use ndarray::{concatenate, s, Array1, Array2, Axis};

use super::{row_max_sum, OutputResult, TokenBatch};
use crate::error::{Error, Result};

/// Contiguous block of embedding rows owned by one device.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingShard {
    pub index: usize,
    pub rows: Range<usize>,
    /// Size of the full vocabulary.
    pub vocab: usize,
    /// `[V/p × h]`
    pub weights: Array2<f64>,
}

impl EmbeddingShard {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Local row index of a global vocabulary id, if this shard owns it.
    pub fn local(&self, id: usize) -> Option<usize> {
        self.rows.contains(&id).then(|| id - self.rows.start)
    }
}

/// Local intermediates of one shard after the S pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ShardState {
    /// Local logits `[n_tok × V/p]`.
    pub yp: Array2<f64>,
    pub m_loc: Array1<f64>,
    pub sum_loc: Array1<f64>,
    /// Locally normalized softmax `[n_tok × V/p]`.
    pub sm_loc: Array2<f64>,
    /// `sm_loc · W_k`, second algorithm only.
    pub a: Option<Array2<f64>>,
    /// `G_k · W_k`, second algorithm only.
    pub bm: Option<Array2<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlobalStats {
    pub m: Array1<f64>,
    pub sum: Array1<f64>,
}

/// Splits `w` into `p` contiguous row blocks of equal size.
pub fn shard_weights(w: &Array2<f64>, p: usize) -> Result<Vec<EmbeddingShard>> {
    let vocab = w.nrows();
    if p == 0 || !vocab.is_multiple_of(p) || vocab == 0 {
        return Err(Error::NotShardable { vocab, shards: p });
    }
    let rows = vocab / p;
    Ok((0..p)
        .map(|k| EmbeddingShard {
            index: k,
            rows: k * rows..(k + 1) * rows,
            vocab,
            weights: w.slice(s![k * rows..(k + 1) * rows, ..]).to_owned(),
        })
        .collect())
}

/// Stacks shard weights back into the full matrix.
pub fn concat_shards(shards: &[EmbeddingShard]) -> Array2<f64> {
    let views: Vec<_> = shards.iter().map(|s| s.weights.view()).collect();
    concatenate(Axis(0), &views).expect("shards share the hidden dimension")
}

/// Combines per-shard `(max, exp-sum)` pairs into global statistics.
pub fn merge_max_sum(parts: &[(&Array1<f64>, &Array1<f64>)]) -> Result<GlobalStats> {
    let (first, _) = parts.first().ok_or(Error::Empty("max/sum parts"))?;
    let n = first.len();
    if parts.iter().any(|(m, s)| m.len() != n || s.len() != n) {
        return Err(Error::Dimension("max/sum parts differ in length".into()));
    }
    let mut m = Array1::from_elem(n, f64::NEG_INFINITY);
    for (m_loc, _) in parts {
        m.zip_mut_with(m_loc, |a, &b| *a = a.max(b));
    }
    let mut sum = Array1::zeros(n);
    for (m_loc, sum_loc) in parts {
        for i in 0..n {
            sum[i] += sum_loc[i] * (m_loc[i] - m[i]).exp();
        }
    }
    Ok(GlobalStats { m, sum })
}

impl GlobalStats {
    pub fn from_states(states: &[ShardState]) -> Result<Self> {
        let parts: Vec<_> = states.iter().map(|s| (&s.m_loc, &s.sum_loc)).collect();
        merge_max_sum(&parts)
    }
}

/// How a shard rescales its local softmax to the global one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Correction {
    Exact,
    /// Omits the `e^{m' - m}` term; only used to check that verification
    /// notices a broken rescaling.
    SkipMaxShift,
}

fn check_shard(batch: &TokenBatch, shard: &EmbeddingShard) -> Result<()> {
    if shard.weights.ncols() != batch.hidden() {
        return Err(Error::Dimension(format!(
            "shard has {} columns, activations have {}",
            shard.weights.ncols(),
            batch.hidden()
        )));
    }
    if shard.weights.nrows() != shard.rows.len() {
        return Err(Error::Dimension("shard rows do not match its weights".into()));
    }
    batch.check_labels(shard.vocab)
}

fn check_state(state: &ShardState, stats: &GlobalStats, batch: &TokenBatch, shard: &EmbeddingShard) -> Result<()> {
    let n = batch.tokens();
    if state.m_loc.len() != n || stats.m.len() != n || stats.sum.len() != n {
        return Err(Error::Dimension("state, stats and batch disagree on token count".into()));
    }
    if state.sm_loc.ncols() != shard.len() {
        return Err(Error::Dimension("state width does not match shard".into()));
    }
    Ok(())
}

/// Scale turning the local softmax of a shard into its slice of the global one.
fn row_scale(state: &ShardState, stats: &GlobalStats, correction: Correction) -> Array1<f64> {
    Array1::from_shape_fn(stats.m.len(), |i| {
        let shift = match correction {
            Correction::Exact => (state.m_loc[i] - stats.m[i]).exp(),
            Correction::SkipMaxShift => 1.0,
        };
        state.sum_loc[i] * shift / stats.sum[i]
    })
}

/// Global softmax columns of this shard minus its slice of the one-hot labels.
fn shard_grad_y(
    state: &ShardState,
    stats: &GlobalStats,
    batch: &TokenBatch,
    shard: &EmbeddingShard,
    correction: Correction,
) -> Array2<f64> {
    let scale = row_scale(state, stats, correction);
    let mut gy = &state.sm_loc * &scale.insert_axis(Axis(1));
    for (i, &g) in batch.labels.iter().enumerate() {
        if let Some(j) = shard.local(g) {
            gy[[i, j]] -= 1.0;
        }
    }
    gy
}

/// S pass of the two-barrier algorithm: local logits and local softmax.
pub fn alg1_pass_s(batch: &TokenBatch, shard: &EmbeddingShard) -> Result<ShardState> {
    check_shard(batch, shard)?;
    let yp = batch.x.dot(&shard.weights.t());
    let (m_loc, sum_loc) = row_max_sum(&yp);
    let mut sm_loc = yp.clone();
    for (i, mut row) in sm_loc.axis_iter_mut(Axis(0)).enumerate() {
        row.mapv_inplace(|v| (v - m_loc[i]).exp() / sum_loc[i]);
    }
    Ok(ShardState { yp, m_loc, sum_loc, sm_loc, a: None, bm: None })
}

/// T pass of the two-barrier algorithm: this shard's share of `∇X` and its rows of `∇W`.
pub fn alg1_pass_t(
    state: &ShardState,
    stats: &GlobalStats,
    batch: &TokenBatch,
    shard: &EmbeddingShard,
) -> Result<(Array2<f64>, Array2<f64>)> {
    alg1_pass_t_with(state, stats, batch, shard, Correction::Exact)
}

pub(crate) fn alg1_pass_t_with(
    state: &ShardState,
    stats: &GlobalStats,
    batch: &TokenBatch,
    shard: &EmbeddingShard,
    correction: Correction,
) -> Result<(Array2<f64>, Array2<f64>)> {
    check_shard(batch, shard)?;
    check_state(state, stats, batch, shard)?;
    let gy = shard_grad_y(state, stats, batch, shard, correction);
    Ok((gy.dot(&shard.weights), gy.t().dot(&batch.x)))
}

/// S pass of the one-barrier algorithm: adds `A = softmax'·W_k` and `B = G_k·W_k`.
pub fn alg2_pass_s(batch: &TokenBatch, shard: &EmbeddingShard) -> Result<ShardState> {
    let mut state = alg1_pass_s(batch, shard)?;
    let mut bm = Array2::zeros((batch.tokens(), batch.hidden()));
    for (i, &g) in batch.labels.iter().enumerate() {
        if let Some(j) = shard.local(g) {
            bm.row_mut(i).assign(&shard.weights.row(j));
        }
    }
    state.a = Some(state.sm_loc.dot(&shard.weights));
    state.bm = Some(bm);
    Ok(state)
}

/// The single barrier of the second algorithm: global statistics and the full `∇X`.
pub fn alg2_barrier_c1(states: &[ShardState]) -> Result<(GlobalStats, Array2<f64>)> {
    alg2_barrier_c1_with(states, Correction::Exact)
}

pub(crate) fn alg2_barrier_c1_with(
    states: &[ShardState],
    correction: Correction,
) -> Result<(GlobalStats, Array2<f64>)> {
    let stats = GlobalStats::from_states(states)?;
    let first = states[0].a.as_ref().ok_or(Error::MissingState("A"))?;
    let mut grad_x = Array2::zeros(first.raw_dim());
    for state in states {
        let a = state.a.as_ref().ok_or(Error::MissingState("A"))?;
        let bm = state.bm.as_ref().ok_or(Error::MissingState("B"))?;
        if a.raw_dim() != grad_x.raw_dim() || bm.raw_dim() != grad_x.raw_dim() {
            return Err(Error::Dimension("A/B shapes differ across shards".into()));
        }
        let scale = row_scale(state, &stats, correction).insert_axis(Axis(1));
        grad_x = grad_x + a * &scale - bm;
    }
    Ok((stats, grad_x))
}

/// T pass of the one-barrier algorithm: this shard's rows of `∇W`.
pub fn alg2_pass_t(
    state: &ShardState,
    stats: &GlobalStats,
    batch: &TokenBatch,
    shard: &EmbeddingShard,
) -> Result<Array2<f64>> {
    check_shard(batch, shard)?;
    check_state(state, stats, batch, shard)?;
    let gy = shard_grad_y(state, stats, batch, shard, Correction::Exact);
    Ok(gy.t().dot(&batch.x))
}

fn check_shards(batch: &TokenBatch, shards: &[EmbeddingShard]) -> Result<()> {
    if shards.is_empty() {
        return Err(Error::Empty("shard list"));
    }
    let vocab = shards[0].vocab;
    let mut next = 0;
    for shard in shards {
        if shard.rows.start != next || shard.vocab != vocab {
            return Err(Error::Dimension("shards do not partition the vocabulary".into()));
        }
        next = shard.rows.end;
        check_shard(batch, shard)?;
    }
    if next != vocab {
        return Err(Error::Dimension("shards do not cover the vocabulary".into()));
    }
    Ok(())
}

/// Softmax and loss assembled from per-shard states and global statistics.
fn assemble(
    batch: &TokenBatch,
    shards: &[EmbeddingShard],
    states: &[ShardState],
    stats: &GlobalStats,
    correction: Correction,
) -> (Array2<f64>, Array1<f64>) {
    let blocks: Vec<_> = states
        .iter()
        .map(|st| &st.sm_loc * &row_scale(st, stats, correction).insert_axis(Axis(1)))
        .collect();
    let views: Vec<_> = blocks.iter().map(|b| b.view()).collect();
    let softmax = concatenate(Axis(1), &views).expect("equal token counts");
    let loss = Array1::from_shape_fn(batch.tokens(), |i| {
        let g = batch.labels[i];
        let (k, shard) = shards
            .iter()
            .enumerate()
            .find(|(_, s)| s.rows.contains(&g))
            .expect("labels checked against the vocabulary");
        stats.m[i] + stats.sum[i].ln() - states[k].yp[[i, g - shard.rows.start]]
    });
    (softmax, loss)
}

fn stack_rows(blocks: &[Array2<f64>]) -> Array2<f64> {
    let views: Vec<_> = blocks.iter().map(|b| b.view()).collect();
    concatenate(Axis(0), &views).expect("equal hidden size")
}

/// Sharded output layer with three barriers: global max, global sum, `∇X` reduce.
pub fn naive_partitioned_output(batch: &TokenBatch, shards: &[EmbeddingShard]) -> Result<OutputResult> {
    naive_with(batch, shards, Correction::Exact)
}

pub(crate) fn naive_with(
    batch: &TokenBatch,
    shards: &[EmbeddingShard],
    correction: Correction,
) -> Result<OutputResult> {
    check_shards(batch, shards)?;
    let n = batch.tokens();
    // local logits and local max, then the first all-reduce (max)
    let logits: Vec<Array2<f64>> = shards.iter().map(|s| batch.x.dot(&s.weights.t())).collect();
    let mut m = Array1::from_elem(n, f64::NEG_INFINITY);
    let mut local_max = Vec::with_capacity(shards.len());
    for y in &logits {
        let (mk, _) = row_max_sum(y);
        m.zip_mut_with(&mk, |a, &b| *a = a.max(b));
        local_max.push(mk);
    }
    // local exp-sums against the global max, then the second all-reduce (sum)
    let shifted: Vec<Array2<f64>> = logits
        .iter()
        .zip(&local_max)
        .map(|(y, mk)| {
            let mut e = y.clone();
            for (i, mut row) in e.axis_iter_mut(Axis(0)).enumerate() {
                // the broken variant exponentiates against the stale local max
                let base = match correction {
                    Correction::Exact => m[i],
                    Correction::SkipMaxShift => mk[i],
                };
                row.mapv_inplace(|v| (v - base).exp());
            }
            e
        })
        .collect();
    let mut sum = Array1::<f64>::zeros(n);
    for e in &shifted {
        sum += &e.sum_axis(Axis(1));
    }
    // local softmax and gradients, then the reduce of ∇X
    let mut softmax_blocks = Vec::with_capacity(shards.len());
    let mut grad_x = Array2::zeros((n, batch.hidden()));
    let mut grad_w = Vec::with_capacity(shards.len());
    for (shard, e) in shards.iter().zip(&shifted) {
        let sm = e / &sum.view().insert_axis(Axis(1));
        let mut gy = sm.clone();
        for (i, &g) in batch.labels.iter().enumerate() {
            if let Some(j) = shard.local(g) {
                gy[[i, j]] -= 1.0;
            }
        }
        grad_x = grad_x + gy.dot(&shard.weights);
        grad_w.push(gy.t().dot(&batch.x));
        softmax_blocks.push(sm);
    }
    let loss = Array1::from_shape_fn(n, |i| {
        let g = batch.labels[i];
        let k = shards.iter().position(|s| s.rows.contains(&g)).expect("labels checked");
        m[i] + sum[i].ln() - logits[k][[i, g - shards[k].rows.start]]
    });
    Ok(OutputResult {
        softmax: stack_cols(&softmax_blocks),
        loss,
        grad_x,
        grad_w: stack_rows(&grad_w),
    })
}

fn stack_cols(blocks: &[Array2<f64>]) -> Array2<f64> {
    let views: Vec<_> = blocks.iter().map(|b| b.view()).collect();
    concatenate(Axis(1), &views).expect("equal token counts")
}

/// Runs S on every shard, merges statistics, runs T and reduces `∇X`.
pub fn alg1_output(batch: &TokenBatch, shards: &[EmbeddingShard]) -> Result<OutputResult> {
    alg1_with(batch, shards, Correction::Exact)
}

pub(crate) fn alg1_with(
    batch: &TokenBatch,
    shards: &[EmbeddingShard],
    correction: Correction,
) -> Result<OutputResult> {
    check_shards(batch, shards)?;
    let states = shards.iter().map(|s| alg1_pass_s(batch, s)).collect::<Result<Vec<_>>>()?;
    let stats = GlobalStats::from_states(&states)?;
    let mut grad_x = Array2::zeros((batch.tokens(), batch.hidden()));
    let mut grad_w = Vec::with_capacity(shards.len());
    for (state, shard) in states.iter().zip(shards) {
        let (gx, gw) = alg1_pass_t_with(state, &stats, batch, shard, correction)?;
        grad_x += &gx;
        grad_w.push(gw);
    }
    let (softmax, loss) = assemble(batch, shards, &states, &stats, correction);
    Ok(OutputResult { softmax, loss, grad_x, grad_w: stack_rows(&grad_w) })
}

/// Runs S (with `A`, `B`) on every shard, the single barrier, then T.
pub fn alg2_output(batch: &TokenBatch, shards: &[EmbeddingShard]) -> Result<OutputResult> {
    alg2_with(batch, shards, Correction::Exact)
}

pub(crate) fn alg2_with(
    batch: &TokenBatch,
    shards: &[EmbeddingShard],
    correction: Correction,
) -> Result<OutputResult> {
    check_shards(batch, shards)?;
    let states = shards.iter().map(|s| alg2_pass_s(batch, s)).collect::<Result<Vec<_>>>()?;
    let (stats, grad_x) = alg2_barrier_c1_with(&states, correction)?;
    let grad_w = states
        .iter()
        .zip(shards)
        .map(|(st, sh)| alg2_pass_t(st, &stats, batch, sh))
        .collect::<Result<Vec<_>>>()?;
    let (softmax, loss) = assemble(batch, shards, &states, &stats, correction);
    Ok(OutputResult { softmax, loss, grad_x, grad_w: stack_rows(&grad_w) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vocab::{max_abs_diff, oracle_output_layer, random_instance};
    use ndarray::array;

    #[test]
    fn contiguous_split() {
        let w = Array2::from_shape_fn((8, 2), |(i, j)| (i * 2 + j) as f64);
        let shards = shard_weights(&w, 4).unwrap();
        let rows: Vec<_> = shards.iter().map(|s| s.rows.clone()).collect();
        assert_eq!(rows, vec![0..2, 2..4, 4..6, 6..8]);
        assert_eq!(concat_shards(&shards), w);
        assert_eq!(shard_weights(&w, 1).unwrap()[0].weights, w);
        assert_eq!(
            shard_weights(&w, 3).unwrap_err(),
            Error::NotShardable { vocab: 8, shards: 3 }
        );
    }

    #[test]
    fn merge_examples() {
        let z = array![0.0];
        let one = array![1.0];
        let st = merge_max_sum(&[(&z, &one), (&z, &one)]).unwrap();
        assert_eq!((st.m[0], st.sum[0]), (0.0, 2.0));
        let st = merge_max_sum(&[(&one, &one), (&z, &one)]).unwrap();
        assert_eq!(st.m[0], 1.0);
        assert!((st.sum[0] - (1.0 + (-1.0f64).exp())).abs() < 1e-15);
        let rev = merge_max_sum(&[(&z, &one), (&one, &one)]).unwrap();
        assert_eq!(st, rev);
        assert_eq!(merge_max_sum(&[]).unwrap_err(), Error::Empty("max/sum parts"));
        let two = array![1.0, 2.0];
        assert!(matches!(merge_max_sum(&[(&z, &one), (&two, &two)]), Err(Error::Dimension(_))));
    }

    #[test]
    fn single_column_shard_softmax_is_one() {
        let inst = random_instance(4, 3, 4, 1);
        let shards = shard_weights(&inst.w, 4).unwrap();
        let st = alg1_pass_s(&inst.batch, &shards[2]).unwrap();
        assert!(st.sm_loc.iter().all(|&v| (v - 1.0).abs() < 1e-15));
    }

    #[test]
    fn single_shard_matches_oracle_tightly() {
        let inst = random_instance(6, 4, 8, 5);
        let oracle = oracle_output_layer(&inst.batch, &inst.w).unwrap();
        let shards = shard_weights(&inst.w, 1).unwrap();
        let st = alg1_pass_s(&inst.batch, &shards[0]).unwrap();
        assert!(max_abs_diff(&st.sm_loc, &oracle.softmax) < 1e-12);
        for out in [
            naive_partitioned_output(&inst.batch, &shards).unwrap(),
            alg1_output(&inst.batch, &shards).unwrap(),
            alg2_output(&inst.batch, &shards).unwrap(),
        ] {
            assert!(max_abs_diff(&out.grad_x, &oracle.grad_x) < 1e-12);
            assert!(max_abs_diff(&out.grad_w, &oracle.grad_w) < 1e-12);
            assert!(max_abs_diff(&out.loss, &oracle.loss) < 1e-12);
        }
    }

    #[test]
    fn labels_inside_first_shard() {
        let mut inst = random_instance(6, 4, 8, 9);
        inst.batch.labels = vec![0, 1, 2, 3, 0, 1];
        let oracle = oracle_output_layer(&inst.batch, &inst.w).unwrap();
        let shards = shard_weights(&inst.w, 2).unwrap();
        let states: Vec<_> = shards.iter().map(|s| alg1_pass_s(&inst.batch, s).unwrap()).collect();
        let stats = GlobalStats::from_states(&states).unwrap();
        let (gx1, _) = alg1_pass_t(&states[1], &stats, &inst.batch, &shards[1]).unwrap();
        // no label term: the second shard contributes softmax[:, 4..8] · W[4..8]
        let expected = oracle.softmax.slice(s![.., 4..8]).dot(&shards[1].weights);
        assert!(max_abs_diff(&gx1, &expected) < 1e-12);
    }

    #[test]
    fn alg2_state_contents() {
        let mut inst = random_instance(5, 3, 8, 2);
        inst.batch.labels = vec![0, 1, 0, 1, 1];
        let shards = shard_weights(&inst.w, 2).unwrap();
        let st = alg2_pass_s(&inst.batch, &shards[1]).unwrap();
        assert!(st.bm.as_ref().unwrap().iter().all(|&v| v == 0.0));
        assert_eq!(st.a.as_ref().unwrap(), &st.sm_loc.dot(&shards[1].weights));
        let st0 = alg2_pass_s(&inst.batch, &shards[0]).unwrap();
        assert_eq!(st0.bm.as_ref().unwrap().row(2), inst.w.row(0));
        // C1 only needs [n_tok × h] matrices and per-row scalars
        assert_eq!(st0.a.as_ref().unwrap().dim(), (5, 3));
    }

    #[test]
    fn alg2_barrier_needs_a_and_b() {
        let inst = random_instance(3, 2, 4, 0);
        let shards = shard_weights(&inst.w, 2).unwrap();
        let states: Vec<_> = shards.iter().map(|s| alg1_pass_s(&inst.batch, s).unwrap()).collect();
        assert_eq!(alg2_barrier_c1(&states).unwrap_err(), Error::MissingState("A"));
        assert_eq!(alg2_barrier_c1(&[]).unwrap_err(), Error::Empty("max/sum parts"));
    }

    #[test]
    fn t_pass_rejects_mismatched_state() {
        let inst = random_instance(3, 2, 4, 0);
        let shards = shard_weights(&inst.w, 2).unwrap();
        let st = alg1_pass_s(&inst.batch, &shards[0]).unwrap();
        let stats = GlobalStats::from_states(std::slice::from_ref(&st)).unwrap();
        let other = random_instance(4, 2, 4, 1);
        assert!(alg1_pass_t(&st, &stats, &other.batch, &shards[0]).is_err());
        assert!(alg2_pass_t(&st, &stats, &other.batch, &shards[0]).is_err());
    }

    #[test]
    fn broken_rescaling_is_visible() {
        let inst = random_instance(6, 4, 8, 4);
        let oracle = oracle_output_layer(&inst.batch, &inst.w).unwrap();
        let shards = shard_weights(&inst.w, 4).unwrap();
        let bad = alg1_with(&inst.batch, &shards, Correction::SkipMaxShift).unwrap();
        assert!(max_abs_diff(&bad.softmax, &oracle.softmax) > 1e-3);
    }
}
