use crate::cost::{CostTable, ModelConfig};

/// Transformer layers per pipeline stage, with the vocabulary layers pinned
/// to the first (input) and last (output) stage.
#[derive(Debug, Clone, PartialEq)]
pub struct StageAssignment {
    pub layers_per_stage: Vec<usize>,
    /// Longest stage, in units of one transformer layer's compute.
    pub objective: f64,
}

/// Stage costs in transformer-layer units for a given assignment.
pub fn stage_costs(layers: &[usize], output_ratio: f64, input_ratio: f64) -> Vec<f64> {
    let p = layers.len();
    let mut costs: Vec<f64> = layers.iter().map(|&c| c as f64).collect();
    if p > 0 {
        costs[0] += input_ratio;
        costs[p - 1] += output_ratio;
    }
    costs
}

fn max_cost(costs: &[f64]) -> f64 {
    costs.iter().copied().fold(0.0, f64::max)
}

/// Exact minimizer of the longest stage for `l` homogeneous layers on `p` stages.
///
/// The optimum is one of the values `k + pinned_d`; for each candidate in
/// increasing order the stage capacities are checked against `l`. Among
/// optimal assignments the extra layers go to the lowest-indexed stages.
pub fn redistribute(l: usize, p: usize, output_ratio: f64, input_ratio: f64) -> StageAssignment {
    assert!(p > 0, "at least one stage");
    let pinned = stage_costs(&vec![0; p], output_ratio, input_ratio);
    let floor = max_cost(&pinned);
    let mut candidates: Vec<f64> = pinned
        .iter()
        .flat_map(|&c| (0..=l).map(move |k| k as f64 + c))
        .filter(|&t| t >= floor)
        .collect();
    candidates.push(floor);
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();
    // layer count that keeps a stage at or under `t`
    let capacity = |t: f64, c: f64| ((t - c) + 1e-9).floor().max(0.0) as usize;
    for t in candidates {
        let caps: Vec<usize> = pinned.iter().map(|&c| capacity(t, c)).collect();
        if caps.iter().sum::<usize>() < l {
            continue;
        }
        let mut left = l;
        let layers: Vec<usize> = caps
            .iter()
            .map(|&cap| {
                let take = cap.min(left);
                left -= take;
                take
            })
            .collect();
        let objective = max_cost(&stage_costs(&layers, output_ratio, input_ratio));
        return StageAssignment { layers_per_stage: layers, objective };
    }
    unreachable!("the largest candidate always fits every layer")
}

/// Redistribution with the vocabulary costs taken from the cost model.
pub fn redistribute_layers(cfg: &ModelConfig) -> StageAssignment {
    let t = CostTable::new(cfg);
    redistribute(
        cfg.l,
        cfg.p,
        t.output.flops / t.transformer.flops,
        t.input.flops / t.transformer.flops,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn documented_examples() {
        let a = redistribute(8, 4, 2.4, 0.0);
        assert_eq!(a.layers_per_stage, vec![3, 3, 2, 0]);
        assert_eq!(a.objective, 3.0);
        let a = redistribute(2, 2, 5.0, 0.0);
        assert_eq!(a.layers_per_stage, vec![2, 0]);
        assert_eq!(a.objective, 5.0);
    }

    #[test]
    fn uniform_without_vocabulary() {
        assert_eq!(redistribute(12, 4, 0.0, 0.0).layers_per_stage, vec![3, 3, 3, 3]);
        assert_eq!(redistribute(0, 3, 0.0, 0.0).layers_per_stage, vec![0, 0, 0]);
    }

    #[test]
    fn single_stage_holds_everything() {
        let a = redistribute(5, 1, 2.0, 0.5);
        assert_eq!(a.layers_per_stage, vec![5]);
        assert_eq!(a.objective, 7.5);
    }

    #[test]
    fn config_version_counts_the_input_layer() {
        let cfg = ModelConfig { b: 1, s: 2048, h: 4096, v: 128_000, l: 8, p: 4, n: 8 };
        let a = redistribute_layers(&cfg);
        // the small input cost makes the first stage one layer lighter
        assert_eq!(a.layers_per_stage, vec![2, 3, 3, 0]);
        assert_eq!(a.objective, 3.0);
    }
}
