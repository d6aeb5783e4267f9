use ndarray::Array2;

use super::EmbeddingShard;
use crate::error::{Error, Result};

fn check_tokens(tokens: &[usize], vocab: usize) -> Result<()> {
    match tokens.iter().find(|&&t| t >= vocab) {
        Some(&label) => Err(Error::LabelOutOfRange { label, vocab }),
        None => Ok(()),
    }
}

/// Monolithic embedding lookup.
pub fn embedding_lookup(tokens: &[usize], w: &Array2<f64>) -> Result<Array2<f64>> {
    check_tokens(tokens, w.nrows())?;
    let mut out = Array2::zeros((tokens.len(), w.ncols()));
    for (i, &t) in tokens.iter().enumerate() {
        out.row_mut(i).assign(&w.row(t));
    }
    Ok(out)
}

/// Monolithic embedding gradient: scatter-add of `grad_out` rows.
pub fn embedding_grad(grad_out: &Array2<f64>, tokens: &[usize], vocab: usize) -> Result<Array2<f64>> {
    check_tokens(tokens, vocab)?;
    if grad_out.nrows() != tokens.len() {
        return Err(Error::Dimension(format!(
            "{} gradient rows for {} tokens",
            grad_out.nrows(),
            tokens.len()
        )));
    }
    let mut g = Array2::zeros((vocab, grad_out.ncols()));
    for (i, &t) in tokens.iter().enumerate() {
        let mut row = g.row_mut(t);
        row += &grad_out.row(i);
    }
    Ok(g)
}

/// Partial embedding from one shard; rows of tokens owned elsewhere are zero.
/// Summing the partials over all shards gives the full lookup.
pub fn input_forward(tokens: &[usize], shard: &EmbeddingShard) -> Result<Array2<f64>> {
    check_tokens(tokens, shard.vocab)?;
    let mut out = Array2::zeros((tokens.len(), shard.weights.ncols()));
    for (i, &t) in tokens.iter().enumerate() {
        if let Some(j) = shard.local(t) {
            out.row_mut(i).assign(&shard.weights.row(j));
        }
    }
    Ok(out)
}

/// Gradient of this shard's embedding rows, given the broadcast output gradient.
pub fn input_backward(
    grad_out: &Array2<f64>,
    tokens: &[usize],
    shard: &EmbeddingShard,
) -> Result<Array2<f64>> {
    check_tokens(tokens, shard.vocab)?;
    if grad_out.nrows() != tokens.len() || grad_out.ncols() != shard.weights.ncols() {
        return Err(Error::Dimension("gradient shape does not match tokens and shard".into()));
    }
    let mut g = Array2::zeros(shard.weights.raw_dim());
    for (i, &t) in tokens.iter().enumerate() {
        if let Some(j) = shard.local(t) {
            let mut row = g.row_mut(j);
            row += &grad_out.row(i);
        }
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vocab::shard_weights;
    use ndarray::array;

    fn table() -> Array2<f64> {
        Array2::from_shape_fn((4, 2), |(i, j)| (10 * i + j) as f64)
    }

    #[test]
    fn unowned_tokens_give_zero_rows() {
        let shards = shard_weights(&table(), 2).unwrap();
        let part = input_forward(&[0, 1, 1], &shards[1]).unwrap();
        assert!(part.iter().all(|&v| v == 0.0));
        let part = input_forward(&[0, 3], &shards[1]).unwrap();
        assert_eq!(part, array![[0.0, 0.0], [30.0, 31.0]]);
    }

    #[test]
    fn single_shard_is_lookup() {
        let w = table();
        let shards = shard_weights(&w, 1).unwrap();
        let toks = [3, 0, 2, 2];
        assert_eq!(input_forward(&toks, &shards[0]).unwrap(), embedding_lookup(&toks, &w).unwrap());
    }

    #[test]
    fn repeated_tokens_accumulate() {
        let shards = shard_weights(&table(), 2).unwrap();
        let grad = array![[1.0, 2.0], [0.5, 0.25], [9.0, 9.0]];
        let g = input_backward(&grad, &[1, 1, 2], &shards[0]).unwrap();
        assert_eq!(g, array![[0.0, 0.0], [1.5, 2.25]]);
        let g = input_backward(&grad, &[0, 0, 1], &shards[1]).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn out_of_range_tokens() {
        let shards = shard_weights(&table(), 2).unwrap();
        assert_eq!(
            input_forward(&[4], &shards[0]).unwrap_err(),
            Error::LabelOutOfRange { label: 4, vocab: 4 }
        );
        assert!(input_backward(&array![[1.0, 1.0]], &[7], &shards[0]).is_err());
        assert!(input_backward(&array![[1.0]], &[0], &shards[0]).is_err());
        assert!(embedding_grad(&array![[1.0]], &[0, 1], 4).is_err());
    }
}
