//! FLOPs and parameter accounting.
//!
//! One FLOP is one multiply-accumulate. A conv layer costs
//! `n_eff · h' · w' · m_eff · s²` and a dense layer `out · in_eff`; other
//! layers are free. `n_eff` is the number of filters left after pruning at a
//! uniform rate; `m_eff` is the width of the tensor feeding the layer, which
//! depends on how pruned channels travel through residual additions
//! ([`PruneScope`]).

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::graph::{LayerKind, ModelGraph};
use crate::prune::pruned_count;

/// How pruned channels propagate through residual additions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PruneScope {
    /// Every residual addition restores the full trunk width (pruned
    /// channels come back as zeros), so the first conv of each block sees a
    /// full-width input.
    #[default]
    ResidualRestores,
    /// The addition output is as narrow as its main branch.
    Propagate,
}

/// How the remaining filter count of a pruned layer is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ChannelRounding {
    /// `n · (1 − P)`, fractional; per-layer FLOPs are rounded to the nearest
    /// integer. This is the analytic accounting used for reported tables.
    #[default]
    Exact,
    /// `n − floor(n · P)`: the widths a mask at rate `P` actually produces.
    Floor,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlopsReport {
    /// Conv and dense layers in declaration order.
    pub per_layer: Vec<(String, u64)>,
    pub total: u64,
    pub params_total: u64,
}

impl FlopsReport {
    pub fn get(&self, layer: &str) -> Option<u64> {
        self.per_layer.iter().find(|(n, _)| n == layer).map(|&(_, f)| f)
    }

    /// Fraction of `baseline.total` removed by this report.
    pub fn pruned_fraction(&self, baseline: &FlopsReport) -> f64 {
        1.0 - self.total as f64 / baseline.total as f64
    }
}

/// Counts forward FLOPs and parameters of `model` when every conv layer in
/// the default prune scope keeps its share of filters at `prune_rate`.
pub fn count_flops(
    model: &ModelGraph,
    prune_rate: f64,
    scope: PruneScope,
    rounding: ChannelRounding,
) -> Result<FlopsReport> {
    if !(0.0..=1.0).contains(&prune_rate) {
        return Err(Error::Input(format!("prune rate {prune_rate} outside [0, 1]")));
    }
    let keep = |n: usize| -> f64 {
        match rounding {
            ChannelRounding::Exact => n as f64 * (1.0 - prune_rate),
            ChannelRounding::Floor => (n - pruned_count(n, prune_rate).min(n)) as f64,
        }
    };

    // effective leading-axis width of each layer output
    let mut widths: Vec<f64> = Vec::with_capacity(model.layers().len());
    let mut per_layer = Vec::new();
    let mut params_total = 0.0f64;
    let mut total = 0u64;
    for (i, layer) in model.layers().iter().enumerate() {
        let in_shape = model.input_shape_of(i);
        let out_shape = model.output_shape_of(i);
        let in_width = if i == 0 { in_shape[0] as f64 } else { widths[i - 1] };
        let width = match &layer.kind {
            LayerKind::Conv {
                out_channels,
                kernel_size,
                bias,
                prunable,
                ..
            } => {
                let n_eff = if *prunable {
                    keep(*out_channels)
                } else {
                    *out_channels as f64
                };
                let taps = (kernel_size * kernel_size) as f64;
                let flops = libm::round(n_eff * (out_shape[1] * out_shape[2]) as f64 * in_width * taps) as u64;
                per_layer.push((layer.name.clone(), flops));
                total += flops;
                params_total += libm::round(n_eff * in_width * taps) + if *bias { libm::round(n_eff) } else { 0.0 };
                n_eff
            }
            LayerKind::Dense { out_features, .. } => {
                let flops = libm::round(*out_features as f64 * in_width) as u64;
                per_layer.push((layer.name.clone(), flops));
                total += flops;
                params_total += flops as f64 + *out_features as f64;
                *out_features as f64
            }
            LayerKind::Flatten => {
                let plane: usize = in_shape[1..].iter().product();
                in_width * plane as f64
            }
            LayerKind::ResidualAdd { channels, .. } => match scope {
                PruneScope::ResidualRestores => *channels as f64,
                PruneScope::Propagate => in_width,
            },
            LayerKind::Relu | LayerKind::Identity | LayerKind::AvgPool { .. } => in_width,
        };
        widths.push(width);
    }
    Ok(FlopsReport {
        per_layer,
        total,
        params_total: params_total as u64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::{make_resnet_cifar, make_toy_cnn};
    use crate::graph::LayerSpec;
    use alloc::vec;

    #[test]
    fn single_conv_direct_formula() {
        let m = ModelGraph::new(vec![3, 32, 32], vec![LayerSpec::conv("c", 3, 16, 3, 1, 1)]).unwrap();
        let r = count_flops(&m, 0.0, PruneScope::default(), ChannelRounding::Exact).unwrap();
        assert_eq!(r.total, 442_368);
        assert_eq!(r.params_total, 16 * 3 * 9);
    }

    #[test]
    fn total_is_sum_of_layers() {
        let m = make_resnet_cifar(20).unwrap();
        for rate in [0.0, 0.3, 0.7] {
            let r = count_flops(&m, rate, PruneScope::ResidualRestores, ChannelRounding::Exact).unwrap();
            assert_eq!(r.total, r.per_layer.iter().map(|x| x.1).sum::<u64>());
        }
    }

    #[test]
    fn rejects_rate_out_of_range() {
        let m = make_toy_cnn([1, 4, 4], 2, 2).unwrap();
        assert!(count_flops(&m, 1.5, PruneScope::default(), ChannelRounding::Exact).is_err());
        assert!(count_flops(&m, -0.1, PruneScope::default(), ChannelRounding::Exact).is_err());
    }

    #[test]
    fn floor_counts_whole_filters() {
        let m = make_toy_cnn([1, 4, 4], 16, 2).unwrap();
        let r = count_flops(&m, 0.2, PruneScope::default(), ChannelRounding::Floor).unwrap();
        // 3 of 16 filters removed from each conv
        assert_eq!(r.get("conv1"), Some(13 * 16 * 9));
        assert_eq!(r.get("conv2"), Some(13 * 16 * 13 * 9));
        assert_eq!(r.get("fc"), Some(2 * 13 * 4));
    }

    #[test]
    fn propagate_narrows_the_trunk() {
        let m = make_resnet_cifar(20).unwrap();
        let restore = count_flops(&m, 0.4, PruneScope::ResidualRestores, ChannelRounding::Exact).unwrap();
        let prop = count_flops(&m, 0.4, PruneScope::Propagate, ChannelRounding::Exact).unwrap();
        assert!(prop.total < restore.total);
    }
}
