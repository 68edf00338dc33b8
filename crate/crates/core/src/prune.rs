//! Filter ranking, mask selection, soft mask application and compaction.
//!
//! A mask marks, per conv layer, which filters (or individual weights) are
//! kept. Applying a mask with decay factor `alpha` multiplies every pruned
//! filter by `alpha` and leaves kept filters untouched: `alpha = 0` zeroes
//! them outright, `alpha = 1` is the identity. Masks are recomputed from the
//! current weights each time, so a pruned filter can grow back into the kept
//! set.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::exact::{fsum, two_prod, two_sum};
use crate::graph::{LayerKind, ModelGraph, Param};
use crate::tensor::Tensor;

/// Slack applied before flooring `total · rate`, so that products such as
/// `100 · 0.29 = 28.999999999999996` count as 29.
const COUNT_SLACK: f64 = 1e-9;

/// Number of units pruned out of `total` at `rate`: `floor(total · rate)`.
pub fn pruned_count(total: usize, rate: f64) -> usize {
    libm::floor(total as f64 * rate + COUNT_SLACK) as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Granularity {
    /// Whole output filters.
    #[default]
    Filter,
    /// Individual kernel weights.
    Weight,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Norm {
    #[default]
    L2,
    L1,
}

/// Which layers a prune configuration covers.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum LayerScope {
    /// Every conv layer marked prunable in the model.
    #[default]
    AllConv,
    /// Exactly these conv layers.
    Named(Vec<String>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PruneConfig {
    /// Fraction of units pruned per layer, in `[0, 1)`.
    pub rate: f64,
    pub granularity: Granularity,
    pub norm: Norm,
    pub scope: LayerScope,
}

impl Default for PruneConfig {
    fn default() -> Self {
        PruneConfig {
            rate: 0.0,
            granularity: Granularity::Filter,
            norm: Norm::L2,
            scope: LayerScope::AllConv,
        }
    }
}

impl PruneConfig {
    pub fn with_rate(rate: f64) -> Self {
        PruneConfig {
            rate,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rate >= 0.0 && self.rate < 1.0) {
            return Err(Error::Config(format!("prune rate {} must lie in [0, 1)", self.rate)));
        }
        Ok(())
    }
}

/// Per-layer keep flags (`true` = kept). For filter granularity each vector
/// has one entry per output filter; for weight granularity one entry per
/// kernel weight in row-major order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FilterMask {
    pub granularity: Granularity,
    pub layers: BTreeMap<String, Vec<bool>>,
}

impl FilterMask {
    pub fn empty(granularity: Granularity) -> Self {
        FilterMask {
            granularity,
            layers: BTreeMap::new(),
        }
    }

    /// Builds a mask from lists of pruned indices, sizing each layer from the
    /// model.
    pub fn from_pruned(
        model: &ModelGraph,
        granularity: Granularity,
        pruned: impl IntoIterator<Item = (String, Vec<usize>)>,
    ) -> Result<Self> {
        let mut mask = Self::empty(granularity);
        for (name, indices) in pruned {
            let weight = conv_weight(model, &name)?;
            let len = match granularity {
                Granularity::Filter => weight.shape()[0],
                Granularity::Weight => weight.len(),
            };
            let mut keep = vec![true; len];
            for i in indices {
                if i >= len {
                    return Err(Error::Input(format!(
                        "pruned index {i} out of range for layer {name} with {len} units"
                    )));
                }
                keep[i] = false;
            }
            mask.layers.insert(name, keep);
        }
        Ok(mask)
    }

    /// Pruned indices per layer, ascending.
    pub fn pruned_indices(&self) -> impl Iterator<Item = (&str, Vec<usize>)> {
        self.layers.iter().map(|(name, keep)| {
            let pruned = keep.iter().enumerate().filter(|(_, &k)| !k).map(|(i, _)| i).collect();
            (name.as_str(), pruned)
        })
    }

    pub fn pruned_count(&self, layer: &str) -> Option<usize> {
        self.layers.get(layer).map(|k| k.iter().filter(|&&v| !v).count())
    }

    pub fn kept_count(&self, layer: &str) -> Option<usize> {
        self.layers.get(layer).map(|k| k.iter().filter(|&&v| v).count())
    }

    pub fn total_pruned(&self) -> usize {
        self.layers.values().map(|k| k.iter().filter(|&&v| !v).count()).sum()
    }
}

fn conv_weight<'a>(model: &'a ModelGraph, layer: &str) -> Result<&'a Tensor> {
    match model.layer(layer) {
        Some(l) if l.kind.is_conv() => Ok(&model.param(layer).expect("conv has params").weight),
        Some(l) => Err(Error::Input(format!(
            "layer {layer} is {}, not a conv layer",
            l.kind.tag()
        ))),
        None => Err(Error::Input(format!("unknown layer {layer}"))),
    }
}

fn filter_norm(values: &[f64], norm: Norm) -> f64 {
    match norm {
        Norm::L2 => libm::sqrt(values.iter().map(|v| v * v).sum()),
        Norm::L1 => values.iter().map(|v| libm::fabs(*v)).sum(),
    }
}

/// Sorts `(index, value)` pairs ascending by value; equal values keep index
/// order.
fn sort_ascending(scores: &mut [(usize, f64)]) {
    scores.sort_by(|a, b| a.1.total_cmp(&b.1));
}

/// Norms of every filter of a conv layer, sorted ascending (stable in the
/// filter index).
pub fn rank_filters(model: &ModelGraph, layer: &str, norm: Norm) -> Result<Vec<(usize, f64)>> {
    let w = conv_weight(model, layer)?;
    let per_filter = w.len() / w.shape()[0];
    let mut scores: Vec<(usize, f64)> = w
        .data()
        .chunks_exact(per_filter)
        .map(|f| filter_norm(f, norm))
        .enumerate()
        .collect();
    sort_ascending(&mut scores);
    Ok(scores)
}

/// Conv layers a config applies to, in declaration order.
pub fn scoped_layers(model: &ModelGraph, scope: &LayerScope) -> Result<Vec<String>> {
    match scope {
        LayerScope::AllConv => Ok(model
            .layers()
            .iter()
            .filter(|l| matches!(l.kind, LayerKind::Conv { prunable: true, .. }))
            .map(|l| l.name.clone())
            .collect()),
        LayerScope::Named(names) => {
            for n in names {
                conv_weight(model, n)?;
            }
            Ok(names.clone())
        }
    }
}

/// Marks the `floor(n·P)` lowest-norm filters (or lowest-magnitude weights)
/// of each in-scope layer as pruned. Ties prune the lower index first.
pub fn select_mask(model: &ModelGraph, config: &PruneConfig) -> Result<FilterMask> {
    config.validate()?;
    let mut mask = FilterMask::empty(config.granularity);
    for name in scoped_layers(model, &config.scope)? {
        let scores = match config.granularity {
            Granularity::Filter => rank_filters(model, &name, config.norm)?,
            Granularity::Weight => {
                let w = conv_weight(model, &name)?;
                let mut s: Vec<(usize, f64)> = w.data().iter().map(|v| libm::fabs(*v)).enumerate().collect();
                sort_ascending(&mut s);
                s
            }
        };
        let total = scores.len();
        let k = pruned_count(total, config.rate);
        if k >= total {
            return Err(Error::Config(format!(
                "rate {} would prune all {total} units of layer {name}",
                config.rate
            )));
        }
        let mut keep = vec![true; total];
        for &(i, _) in &scores[..k] {
            keep[i] = false;
        }
        mask.layers.insert(name, keep);
    }
    Ok(mask)
}

/// Multiplies the pruned entries of `weight` by `alpha`, writing `+0.0`
/// when `alpha` is zero. Kept entries are not touched.
pub fn scale_pruned(weight: &mut Tensor, keep: &[bool], granularity: Granularity, alpha: f64) -> Result<()> {
    let unit = match granularity {
        Granularity::Filter => {
            if keep.len() != weight.shape()[0] {
                return Err(Error::State(format!(
                    "mask has {} filters, weight has {}",
                    keep.len(),
                    weight.shape()[0]
                )));
            }
            weight.len() / keep.len()
        }
        Granularity::Weight => {
            if keep.len() != weight.len() {
                return Err(Error::State(format!(
                    "mask has {} weights, layer has {}",
                    keep.len(),
                    weight.len()
                )));
            }
            1
        }
    };
    for (chunk, &k) in weight.data_mut().chunks_exact_mut(unit).zip(keep) {
        if k {
            continue;
        }
        if alpha == 0.0 {
            chunk.fill(0.0);
        } else {
            for v in chunk {
                *v *= alpha;
            }
        }
    }
    Ok(())
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Input(format!("decay factor {alpha} outside [0, 1]")));
    }
    Ok(())
}

/// Decays the pruned filters of `model` by `alpha` in place.
pub fn apply_mask(model: &mut ModelGraph, mask: &FilterMask, alpha: f64) -> Result<()> {
    check_alpha(alpha)?;
    for (name, keep) in &mask.layers {
        conv_weight(model, name)
            .map_err(|_| Error::State(format!("mask layer {name} is not a conv layer of the model")))?;
        let p = model.param_mut(name).expect("checked");
        scale_pruned(&mut p.weight, keep, mask.granularity, alpha)?;
    }
    Ok(())
}

/// One decay step written as gradient descent on an ℓ2 penalty:
/// `alpha0 · wp − λ · wp` with `λ = alpha0 − alpha`, which equals
/// `alpha · wp`.
///
/// `λ` is carried as an exact two-term expansion and the expression is
/// evaluated with a correctly rounded sum, so the result is bit-identical to
/// `alpha * wp` (zeros take the sign of that product).
pub fn decay_step_as_regularization(wp: &Tensor, alpha: f64, alpha0: f64) -> Result<Tensor> {
    if !(0.0..=1.0).contains(&alpha0) || !(0.0..=alpha0).contains(&alpha) {
        return Err(Error::Input(format!(
            "need 0 <= alpha <= alpha0 <= 1, got alpha {alpha}, alpha0 {alpha0}"
        )));
    }
    let (lambda_hi, lambda_lo) = two_sum(alpha0, -alpha);
    let mut out = wp.clone();
    for v in out.data_mut() {
        let w = *v;
        let (a1, a2) = two_prod(alpha0, w);
        let (b1, b2) = two_prod(lambda_hi, w);
        let (c1, c2) = two_prod(lambda_lo, w);
        let r = fsum(&[a1, a2, -b1, -b2, -c1, -c2]);
        *v = if r == 0.0 {
            if alpha.is_sign_negative() != w.is_sign_negative() {
                -0.0
            } else {
                0.0
            }
        } else {
            r
        };
    }
    Ok(out)
}

/// Physically removes pruned filters.
///
/// Every pruned filter must already be exactly zero (and carry a zero bias).
/// Consumers of a pruned layer lose the matching input channels (or dense
/// input features); residual additions restore the removed channels as zeros
/// so the trunk keeps its width. The compacted model computes the same
/// function as the masked one.
pub fn compact(model: &ModelGraph, mask: &FilterMask) -> Result<ModelGraph> {
    if mask.granularity == Granularity::Weight {
        return Err(Error::Unsupported(
            "compaction needs filter granularity; weight masks leave dense kernels".into(),
        ));
    }
    for (name, keep) in &mask.layers {
        let w = conv_weight(model, name).map_err(|e| Error::State(format!("mask does not match model: {e}")))?;
        if keep.len() != w.shape()[0] {
            return Err(Error::State(format!(
                "mask for {name} has {} filters, layer has {}",
                keep.len(),
                w.shape()[0]
            )));
        }
        let p = model.param(name).expect("conv");
        let per = w.len() / keep.len();
        for (j, _) in keep.iter().enumerate().filter(|(_, &k)| !k) {
            let filter_zero = w.data()[j * per..(j + 1) * per].iter().all(|&v| v == 0.0);
            let bias_zero = p.bias.as_ref().is_none_or(|b| b.data()[j] == 0.0);
            if !filter_zero || !bias_zero {
                return Err(Error::State(format!(
                    "model not fully decayed: pruned filter {j} of {name} is nonzero"
                )));
            }
        }
    }

    let mut layers = Vec::with_capacity(model.layers().len());
    let mut params: BTreeMap<String, Param> = BTreeMap::new();
    // original indices (along the leading axis) that survive in each output
    let mut kept: Vec<Vec<usize>> = Vec::with_capacity(model.layers().len());
    for (i, layer) in model.layers().iter().enumerate() {
        let in_kept: Vec<usize> = if i == 0 {
            (0..model.input_shape()[0]).collect()
        } else {
            kept[i - 1].clone()
        };
        let mut spec = layer.clone();
        let out_kept = match &mut spec.kind {
            LayerKind::Conv {
                in_channels,
                out_channels,
                kernel_size,
                ..
            } => {
                let p = model.param(&layer.name).expect("conv");
                let filters: Vec<usize> = match mask.layers.get(&layer.name) {
                    Some(keep) => keep.iter().enumerate().filter(|(_, &k)| k).map(|(j, _)| j).collect(),
                    None => (0..*out_channels).collect(),
                };
                let taps = *kernel_size * *kernel_size;
                let mut data = Vec::with_capacity(filters.len() * in_kept.len() * taps);
                for &j in &filters {
                    for &c in &in_kept {
                        let start = (j * *in_channels + c) * taps;
                        data.extend_from_slice(&p.weight.data()[start..start + taps]);
                    }
                }
                let weight = Tensor::new(vec![filters.len(), in_kept.len(), *kernel_size, *kernel_size], data)?;
                let bias = p
                    .bias
                    .as_ref()
                    .map(|b| Tensor::from_fn(&[filters.len()], |k| b.data()[filters[k]]));
                params.insert(layer.name.clone(), Param { weight, bias });
                *in_channels = in_kept.len();
                *out_channels = filters.len();
                filters
            }
            LayerKind::Dense {
                in_features,
                out_features,
            } => {
                let p = model.param(&layer.name).expect("dense");
                let old_in = *in_features;
                let weight = Tensor::from_fn(&[*out_features, in_kept.len()], |idx| {
                    let (o, c) = (idx / in_kept.len(), idx % in_kept.len());
                    p.weight.data()[o * old_in + in_kept[c]]
                });
                params.insert(
                    layer.name.clone(),
                    Param {
                        weight,
                        bias: p.bias.clone(),
                    },
                );
                *in_features = in_kept.len();
                (0..*out_features).collect()
            }
            LayerKind::Flatten => {
                let in_shape = model.input_shape_of(i);
                let plane: usize = in_shape[1..].iter().product();
                in_kept.iter().flat_map(|&c| c * plane..(c + 1) * plane).collect()
            }
            LayerKind::ResidualAdd {
                from,
                channels,
                main_map,
                shortcut_map,
                ..
            } => {
                let src = model.layer_index(from).expect("validated");
                *main_map = in_kept.iter().map(|&c| main_map[c]).collect();
                *shortcut_map = kept[src].iter().map(|&c| shortcut_map[c]).collect();
                (0..*channels).collect()
            }
            LayerKind::Relu | LayerKind::Identity | LayerKind::AvgPool { .. } => in_kept,
        };
        layers.push(spec);
        kept.push(out_kept);
    }
    ModelGraph::with_params(model.input_shape().to_vec(), layers, params)
}
