//! Layer-graph models: an ordered list of layers with named parameters and
//! residual additions, plus forward/backward orchestration over the kernels in
//! [`crate::tensor`].

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::{self, Tensor};

/// What a layer computes.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerKind {
    /// 2-D cross-correlation with a `[out, in, k, k]` kernel.
    Conv {
        in_channels: usize,
        out_channels: usize,
        kernel_size: usize,
        stride: usize,
        padding: usize,
        /// Whether the layer owns a per-filter bias.
        bias: bool,
        /// Whether the default prune scope covers this layer.
        prunable: bool,
    },
    /// Fully connected layer with bias; input must be rank 1.
    Dense {
        in_features: usize,
        out_features: usize,
    },
    Relu,
    /// Non-overlapping average pooling with a square window.
    AvgPool {
        window: usize,
    },
    /// Placeholder for batch normalization, which these models do not use.
    Identity,
    /// Adds the output of an earlier layer (the shortcut) to this layer's
    /// input (the main branch).
    ///
    /// Main channel `i` lands in output channel `main_map[i]`; shortcut
    /// channel `j`, spatially subsampled by `stride`, lands in
    /// `shortcut_map[j]`. Output channels not covered by a map receive zero
    /// from that branch, which is how a narrower shortcut is zero-padded and
    /// how removed channels are restored after compaction.
    ResidualAdd {
        from: String,
        stride: usize,
        channels: usize,
        main_map: Vec<usize>,
        shortcut_map: Vec<usize>,
    },
    Flatten,
}

impl LayerKind {
    pub fn tag(&self) -> &'static str {
        match self {
            LayerKind::Conv { .. } => "conv",
            LayerKind::Dense { .. } => "dense",
            LayerKind::Relu => "relu",
            LayerKind::AvgPool { .. } => "avgpool",
            LayerKind::Identity => "identity",
            LayerKind::ResidualAdd { .. } => "residual-add",
            LayerKind::Flatten => "flatten",
        }
    }

    pub fn is_conv(&self) -> bool {
        matches!(self, LayerKind::Conv { .. })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
}

impl LayerSpec {
    pub fn new(name: impl Into<String>, kind: LayerKind) -> Self {
        LayerSpec {
            name: name.into(),
            kind,
        }
    }

    /// A convolution without bias.
    pub fn conv(
        name: impl Into<String>,
        in_channels: usize,
        out_channels: usize,
        kernel_size: usize,
        stride: usize,
        padding: usize,
    ) -> Self {
        Self::new(
            name,
            LayerKind::Conv {
                in_channels,
                out_channels,
                kernel_size,
                stride,
                padding,
                bias: false,
                prunable: true,
            },
        )
    }

    pub fn dense(name: impl Into<String>, in_features: usize, out_features: usize) -> Self {
        Self::new(
            name,
            LayerKind::Dense {
                in_features,
                out_features,
            },
        )
    }

    pub fn relu(name: impl Into<String>) -> Self {
        Self::new(name, LayerKind::Relu)
    }
}

/// Weight and optional bias of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub weight: Tensor,
    pub bias: Option<Tensor>,
}

impl Param {
    pub fn zeros_like(&self) -> Param {
        Param {
            weight: Tensor::zeros(self.weight.shape()),
            bias: self.bias.as_ref().map(|b| Tensor::zeros(b.shape())),
        }
    }

    pub fn len(&self) -> usize {
        self.weight.len() + self.bias.as_ref().map_or(0, Tensor::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn add_assign(&mut self, other: &Param) -> Result<()> {
        self.weight.add_assign(&other.weight)?;
        match (&mut self.bias, &other.bias) {
            (Some(a), Some(b)) => a.add_assign(b),
            (None, None) => Ok(()),
            _ => Err(Error::State("bias presence differs between parameter sets".into())),
        }
    }

    fn scale(&mut self, factor: f64) {
        self.weight.scale(factor);
        if let Some(b) = &mut self.bias {
            b.scale(factor);
        }
    }

    fn all_finite(&self) -> bool {
        self.weight.all_finite() && self.bias.as_ref().is_none_or(Tensor::all_finite)
    }
}

/// Per-layer parameter gradients, keyed by layer name.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Gradients {
    pub layers: BTreeMap<String, Param>,
}

impl Gradients {
    pub fn get(&self, layer: &str) -> Option<&Param> {
        self.layers.get(layer)
    }

    /// Element-wise accumulation; both sides must cover the same layers.
    pub fn accumulate(&mut self, other: &Gradients) -> Result<()> {
        if self.layers.is_empty() {
            self.layers = other.layers.clone();
            return Ok(());
        }
        for (name, g) in &other.layers {
            let mine = self
                .layers
                .get_mut(name)
                .ok_or_else(|| Error::State(format!("gradient for unknown layer {name}")))?;
            mine.add_assign(g)?;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.layers.values_mut() {
            g.scale(factor);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.layers.values().all(Param::all_finite)
    }
}

/// Activations recorded by [`ModelGraph::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    generation: u64,
    input: Tensor,
    outputs: Vec<Tensor>,
}

impl ForwardCache {
    /// Output of the layer at `index`.
    pub fn output(&self, index: usize) -> Option<&Tensor> {
        self.outputs.get(index)
    }
}

/// A sequential model with named parameters and residual additions.
#[derive(Debug, Clone)]
pub struct ModelGraph {
    input_shape: Vec<usize>,
    layers: Vec<LayerSpec>,
    shapes: Vec<Vec<usize>>,
    residual_sources: Vec<Option<usize>>,
    params: BTreeMap<String, Param>,
    generation: u64,
}

impl PartialEq for ModelGraph {
    fn eq(&self, other: &Self) -> bool {
        self.input_shape == other.input_shape && self.layers == other.layers && self.params == other.params
    }
}

impl ModelGraph {
    /// Validates the layer list and allocates zero-valued parameters.
    pub fn new(input_shape: Vec<usize>, layers: Vec<LayerSpec>) -> Result<Self> {
        if input_shape.is_empty() || input_shape.contains(&0) {
            return Err(Error::Input(format!("invalid input shape {input_shape:?}")));
        }
        let mut index_of = BTreeMap::new();
        for (i, l) in layers.iter().enumerate() {
            if index_of.insert(l.name.clone(), i).is_some() {
                return Err(Error::Input(format!("duplicate layer name {}", l.name)));
            }
        }

        let mut shapes: Vec<Vec<usize>> = Vec::with_capacity(layers.len());
        let mut residual_sources = vec![None; layers.len()];
        let mut params = BTreeMap::new();
        for (i, layer) in layers.iter().enumerate() {
            let input = if i == 0 { &input_shape } else { &shapes[i - 1] };
            let ctx = |expected: String| Error::dim(format!("layer {}", layer.name), expected, format!("{input:?}"));
            let out = match &layer.kind {
                LayerKind::Conv {
                    in_channels,
                    out_channels,
                    kernel_size,
                    stride,
                    padding,
                    bias,
                    ..
                } => {
                    if input.len() != 3 || input[0] != *in_channels {
                        return Err(ctx(format!("[{in_channels}, h, w]")));
                    }
                    if *out_channels == 0 || *kernel_size == 0 || *stride == 0 {
                        return Err(Error::Input(format!("layer {}: zero-sized conv", layer.name)));
                    }
                    let oh = tensor::conv_output_len(input[1], *kernel_size, *stride, *padding);
                    let ow = tensor::conv_output_len(input[2], *kernel_size, *stride, *padding);
                    let (Some(oh), Some(ow)) = (oh, ow) else {
                        return Err(ctx(format!("spatial size >= kernel {kernel_size}")));
                    };
                    params.insert(
                        layer.name.clone(),
                        Param {
                            weight: Tensor::zeros(&[*out_channels, *in_channels, *kernel_size, *kernel_size]),
                            bias: bias.then(|| Tensor::zeros(&[*out_channels])),
                        },
                    );
                    vec![*out_channels, oh, ow]
                }
                LayerKind::Dense {
                    in_features,
                    out_features,
                } => {
                    if input.len() != 1 || input[0] != *in_features {
                        return Err(ctx(format!("[{in_features}]")));
                    }
                    if *out_features == 0 {
                        return Err(Error::Input(format!("layer {}: zero-sized dense", layer.name)));
                    }
                    params.insert(
                        layer.name.clone(),
                        Param {
                            weight: Tensor::zeros(&[*out_features, *in_features]),
                            bias: Some(Tensor::zeros(&[*out_features])),
                        },
                    );
                    vec![*out_features]
                }
                LayerKind::Relu | LayerKind::Identity => input.clone(),
                LayerKind::AvgPool { window } => {
                    if input.len() != 3 || *window == 0 || input[1] % window != 0 || input[2] % window != 0 {
                        return Err(ctx(format!("[c, h, w] with h, w multiples of {window}")));
                    }
                    vec![input[0], input[1] / window, input[2] / window]
                }
                LayerKind::Flatten => vec![input.iter().product()],
                LayerKind::ResidualAdd {
                    from,
                    stride,
                    channels,
                    main_map,
                    shortcut_map,
                } => {
                    let src = *index_of
                        .get(from)
                        .ok_or_else(|| Error::Input(format!("layer {}: unknown residual source {from}", layer.name)))?;
                    if src >= i {
                        return Err(Error::Input(format!(
                            "layer {}: residual source {from} must precede the add point",
                            layer.name
                        )));
                    }
                    let src_shape = &shapes[src];
                    if input.len() != 3 || src_shape.len() != 3 || *stride == 0 {
                        return Err(ctx("rank-3 main and shortcut tensors".into()));
                    }
                    if src_shape[1].div_ceil(*stride) != input[1] || src_shape[2].div_ceil(*stride) != input[2] {
                        return Err(Error::dim(
                            format!("layer {} shortcut spatial axes", layer.name),
                            format!("{:?} after stride {stride}", &input[1..]),
                            format!("{:?}", &src_shape[1..]),
                        ));
                    }
                    check_channel_map(&layer.name, "main", main_map, input[0], *channels)?;
                    check_channel_map(&layer.name, "shortcut", shortcut_map, src_shape[0], *channels)?;
                    residual_sources[i] = Some(src);
                    vec![*channels, input[1], input[2]]
                }
            };
            shapes.push(out);
        }
        Ok(ModelGraph {
            input_shape,
            layers,
            shapes,
            residual_sources,
            params,
            generation: 0,
        })
    }

    /// Like [`ModelGraph::new`] but takes every parameter from `params`,
    /// which must match the layer shapes exactly.
    pub fn with_params(
        input_shape: Vec<usize>,
        layers: Vec<LayerSpec>,
        mut params: BTreeMap<String, Param>,
    ) -> Result<Self> {
        let mut model = Self::new(input_shape, layers)?;
        for (name, slot) in model.params.iter_mut() {
            let p = params
                .remove(name)
                .ok_or_else(|| Error::Input(format!("missing parameters for layer {name}")))?;
            if p.weight.shape() != slot.weight.shape()
                || p.bias.as_ref().map(|b| b.shape().to_vec()) != slot.bias.as_ref().map(|b| b.shape().to_vec())
            {
                return Err(Error::dim(
                    format!("parameters of layer {name}"),
                    format!("weight {:?}", slot.weight.shape()),
                    format!("weight {:?}", p.weight.shape()),
                ));
            }
            *slot = p;
        }
        if let Some(extra) = params.keys().next() {
            return Err(Error::Input(format!("parameters given for unknown layer {extra}")));
        }
        Ok(model)
    }

    /// He-normal initialization of all weights from `seed`; biases are zeroed.
    pub fn init_he(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in &self.layers {
            let fan_in = match &layer.kind {
                LayerKind::Conv {
                    in_channels,
                    kernel_size,
                    ..
                } => in_channels * kernel_size * kernel_size,
                LayerKind::Dense { in_features, .. } => *in_features,
                _ => continue,
            };
            let std = libm::sqrt(2.0 / fan_in as f64);
            let normal = Normal::new(0.0, std).expect("positive std");
            let p = self.params.get_mut(&layer.name).expect("registered");
            for v in p.weight.data_mut() {
                *v = normal.sample(&mut rng);
            }
            if let Some(b) = &mut p.bias {
                b.data_mut().fill(0.0);
            }
        }
        self.generation += 1;
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn layer(&self, name: &str) -> Option<&LayerSpec> {
        self.layers.iter().find(|l| l.name == name)
    }

    pub fn layer_index(&self, name: &str) -> Option<usize> {
        self.layers.iter().position(|l| l.name == name)
    }

    /// Input shape of the layer at `index`.
    pub fn input_shape_of(&self, index: usize) -> &[usize] {
        if index == 0 {
            &self.input_shape
        } else {
            &self.shapes[index - 1]
        }
    }

    /// Output shape of the layer at `index`.
    pub fn output_shape_of(&self, index: usize) -> &[usize] {
        &self.shapes[index]
    }

    pub fn output_shape(&self) -> &[usize] {
        self.shapes.last().map_or(&self.input_shape, |s| s.as_slice())
    }

    /// `(source layer, add-point layer)` pairs of every residual addition.
    pub fn residual_links(&self) -> Vec<(&str, &str)> {
        self.layers
            .iter()
            .zip(&self.residual_sources)
            .filter_map(|(l, src)| src.map(|s| (self.layers[s].name.as_str(), l.name.as_str())))
            .collect()
    }

    pub fn conv_layers(&self) -> impl Iterator<Item = &LayerSpec> {
        self.layers.iter().filter(|l| l.kind.is_conv())
    }

    pub fn param(&self, layer: &str) -> Option<&Param> {
        self.params.get(layer)
    }

    /// Mutable access to a layer's parameters. Invalidates outstanding
    /// forward caches.
    pub fn param_mut(&mut self, layer: &str) -> Option<&mut Param> {
        self.generation += 1;
        self.params.get_mut(layer)
    }

    /// Parameters in layer declaration order.
    pub fn params(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.layers
            .iter()
            .filter_map(|l| self.params.get(&l.name).map(|p| (l.name.as_str(), p)))
    }

    pub fn param_count(&self) -> usize {
        self.params.values().map(Param::len).sum()
    }

    /// Runs the model on one sample, recording activations for
    /// [`ModelGraph::backward`].
    pub fn forward(&self, input: &Tensor) -> Result<(Tensor, ForwardCache)> {
        if input.shape() != self.input_shape.as_slice() {
            return Err(Error::dim(
                "model input",
                format!("{:?}", self.input_shape),
                format!("{:?}", input.shape()),
            ));
        }
        let mut outputs: Vec<Tensor> = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let x = if i == 0 { input } else { &outputs[i - 1] };
            let y = self.layer_forward(i, layer, x, &outputs)?;
            outputs.push(y);
        }
        let logits = outputs.last().cloned().unwrap_or_else(|| input.clone());
        Ok((
            logits,
            ForwardCache {
                generation: self.generation,
                input: input.clone(),
                outputs,
            },
        ))
    }

    /// Logits for one sample.
    pub fn predict(&self, input: &Tensor) -> Result<Tensor> {
        self.forward(input).map(|(logits, _)| logits)
    }

    fn layer_forward(&self, i: usize, layer: &LayerSpec, x: &Tensor, outputs: &[Tensor]) -> Result<Tensor> {
        let named = |e: Error| match e {
            Error::Dimension {
                context,
                expected,
                actual,
            } => Error::Dimension {
                context: format!("layer {}: {context}", layer.name),
                expected,
                actual,
            },
            other => other,
        };
        Ok(match &layer.kind {
            LayerKind::Conv { stride, padding, .. } => {
                let p = &self.params[&layer.name];
                let mut y = tensor::conv2d_forward(x, &p.weight, *stride, *padding).map_err(named)?;
                if let Some(b) = &p.bias {
                    add_channel_bias(&mut y, b);
                }
                y
            }
            LayerKind::Dense { .. } => {
                let p = &self.params[&layer.name];
                tensor::dense_forward(x, &p.weight, p.bias.as_ref()).map_err(named)?
            }
            LayerKind::Relu => tensor::relu_forward(x),
            LayerKind::AvgPool { window } => tensor::avgpool_forward(x, *window).map_err(named)?,
            LayerKind::Identity => x.clone(),
            LayerKind::Flatten => x.clone().reshape(&[x.len()])?,
            LayerKind::ResidualAdd {
                stride,
                channels,
                main_map,
                shortcut_map,
                ..
            } => {
                let src = &outputs[self.residual_sources[i].expect("validated")];
                let (h, w) = (x.shape()[1], x.shape()[2]);
                let plane = h * w;
                let mut y = Tensor::zeros(&[*channels, h, w]);
                let yd = y.data_mut();
                for (c, &dst) in main_map.iter().enumerate() {
                    yd[dst * plane..(dst + 1) * plane].copy_from_slice(&x.data()[c * plane..(c + 1) * plane]);
                }
                let (sh, sw) = (src.shape()[1], src.shape()[2]);
                for (c, &dst) in shortcut_map.iter().enumerate() {
                    for oy in 0..h {
                        for ox in 0..w {
                            yd[dst * plane + oy * w + ox] += src.data()[(c * sh + oy * stride) * sw + ox * stride];
                        }
                    }
                }
                y
            }
        })
    }

    /// Back-propagates `grad_logits` through the activations in `cache`,
    /// returning gradients for every parameterized layer.
    pub fn backward(&self, cache: &ForwardCache, grad_logits: &Tensor) -> Result<Gradients> {
        if cache.generation != self.generation || cache.outputs.len() != self.layers.len() {
            return Err(Error::State(
                "forward cache is stale: the model changed after the forward pass".into(),
            ));
        }
        let n = self.layers.len();
        if n == 0 {
            return Ok(Gradients::default());
        }
        if grad_logits.shape() != self.shapes[n - 1].as_slice() {
            return Err(Error::dim(
                "grad_logits",
                format!("{:?}", self.shapes[n - 1]),
                format!("{:?}", grad_logits.shape()),
            ));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; n];
        grads[n - 1] = Some(grad_logits.clone());
        let mut out = Gradients::default();
        for i in (0..n).rev() {
            let layer = &self.layers[i];
            let g = match grads[i].take() {
                Some(g) => g,
                None => Tensor::zeros(&self.shapes[i]),
            };
            let x = if i == 0 { &cache.input } else { &cache.outputs[i - 1] };
            let gx = match &layer.kind {
                LayerKind::Conv { stride, padding, .. } => {
                    let p = &self.params[&layer.name];
                    let (gx, gw) = tensor::conv2d_backward(x, &p.weight, &g, *stride, *padding)?;
                    let gb = p.bias.as_ref().map(|_| channel_sums(&g));
                    out.layers.insert(layer.name.clone(), Param { weight: gw, bias: gb });
                    gx
                }
                LayerKind::Dense { .. } => {
                    let p = &self.params[&layer.name];
                    let (gx, gw, gb) = tensor::dense_backward(x, &p.weight, &g)?;
                    out.layers.insert(
                        layer.name.clone(),
                        Param {
                            weight: gw,
                            bias: Some(gb),
                        },
                    );
                    gx
                }
                LayerKind::Relu => tensor::relu_backward(x, &g)?,
                LayerKind::AvgPool { window } => tensor::avgpool_backward(x.shape(), *window, &g)?,
                LayerKind::Identity => g,
                LayerKind::Flatten => g.reshape(x.shape())?,
                LayerKind::ResidualAdd {
                    stride,
                    main_map,
                    shortcut_map,
                    ..
                } => {
                    let src = self.residual_sources[i].expect("validated");
                    let (h, w) = (x.shape()[1], x.shape()[2]);
                    let plane = h * w;
                    let mut gx = Tensor::zeros(x.shape());
                    for (c, &dst) in main_map.iter().enumerate() {
                        gx.data_mut()[c * plane..(c + 1) * plane]
                            .copy_from_slice(&g.data()[dst * plane..(dst + 1) * plane]);
                    }
                    let src_shape = &self.shapes[src];
                    let (sh, sw) = (src_shape[1], src_shape[2]);
                    let gs = grads[src].get_or_insert_with(|| Tensor::zeros(src_shape));
                    for (c, &dst) in shortcut_map.iter().enumerate() {
                        for oy in 0..h {
                            for ox in 0..w {
                                gs.data_mut()[(c * sh + oy * stride) * sw + ox * stride] +=
                                    g.data()[dst * plane + oy * w + ox];
                            }
                        }
                    }
                    gx
                }
            };
            if i > 0 {
                match &mut grads[i - 1] {
                    Some(acc) => acc.add_assign(&gx)?,
                    slot @ None => *slot = Some(gx),
                }
            }
        }
        Ok(out)
    }

    /// Mean softmax cross-entropy over `samples` and the mean gradient, with
    /// per-sample gradients summed in order before scaling.
    pub fn loss_and_gradients<'a>(
        &self,
        samples: impl IntoIterator<Item = (&'a Tensor, usize)>,
    ) -> Result<(f64, Gradients)> {
        let mut total = Gradients::default();
        let mut loss = 0.0;
        let mut count = 0usize;
        for (x, label) in samples {
            let (logits, cache) = self.forward(x)?;
            let (l, gl) = tensor::softmax_cross_entropy(&logits, label)?;
            let g = self.backward(&cache, &gl)?;
            total.accumulate(&g)?;
            loss += l;
            count += 1;
        }
        if count == 0 {
            return Err(Error::Input("no samples".into()));
        }
        let inv = 1.0 / count as f64;
        total.scale(inv);
        Ok((loss * inv, total))
    }
}

fn check_channel_map(layer: &str, which: &str, map: &[usize], len: usize, channels: usize) -> Result<()> {
    if map.len() != len {
        return Err(Error::dim(
            format!("layer {layer} {which} channel map"),
            format!("{len} entries"),
            format!("{}", map.len()),
        ));
    }
    let mut seen = vec![false; channels];
    for &c in map {
        if c >= channels || seen[c] {
            return Err(Error::Input(format!(
                "layer {layer}: {which} channel map entry {c} is out of range or repeated"
            )));
        }
        seen[c] = true;
    }
    Ok(())
}

fn add_channel_bias(y: &mut Tensor, bias: &Tensor) {
    let plane = y.shape()[1] * y.shape()[2];
    for (c, &b) in bias.data().iter().enumerate() {
        for v in &mut y.data_mut()[c * plane..(c + 1) * plane] {
            *v += b;
        }
    }
}

fn channel_sums(g: &Tensor) -> Tensor {
    let (c, plane) = (g.shape()[0], g.shape()[1] * g.shape()[2]);
    Tensor::from_fn(&[c], |ch| g.data()[ch * plane..(ch + 1) * plane].iter().sum())
}

/// Identity channel map `0..n`.
pub fn identity_map(n: usize) -> Vec<usize> {
    (0..n).collect()
}

impl core::fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "{} ({})", self.name, self.kind.tag())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;

    fn identity_conv_model(channels: usize) -> ModelGraph {
        let mut m = ModelGraph::new(
            vec![channels, 4, 4],
            vec![LayerSpec::conv("conv", channels, channels, 3, 1, 1)],
        )
        .unwrap();
        let w = &mut m.param_mut("conv").unwrap().weight;
        for c in 0..channels {
            // centre tap of filter c, input channel c
            w.data_mut()[((c * channels + c) * 3 + 1) * 3 + 1] = 1.0;
        }
        m
    }

    #[test]
    fn identity_kernel_reproduces_input() {
        let m = identity_conv_model(2);
        let x = Tensor::from_fn(&[2, 4, 4], |i| (i as f64 * 0.37).sin());
        assert_eq!(m.predict(&x).unwrap(), x);
    }

    #[test]
    fn zero_weights_give_zero_logits() {
        let m = crate::arch::make_toy_cnn([1, 4, 4], 3, 5).unwrap();
        let x = Tensor::filled(&[1, 4, 4], 0.5);
        assert!(m.predict(&x).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn duplicate_names_rejected() {
        let err = ModelGraph::new(vec![4], vec![LayerSpec::relu("a"), LayerSpec::relu("a")]).unwrap_err();
        assert!(matches!(err, Error::Input(_)));
    }

    #[test]
    fn incompatible_layers_rejected_with_layer_name() {
        let err = ModelGraph::new(
            vec![3, 8, 8],
            vec![
                LayerSpec::conv("c1", 3, 4, 3, 1, 1),
                LayerSpec::conv("c2", 5, 4, 3, 1, 1),
            ],
        )
        .unwrap_err();
        assert!(err.to_string().contains("c2"), "{err}");
    }

    #[test]
    fn forward_rejects_wrong_input_shape() {
        let m = identity_conv_model(2);
        assert!(matches!(
            m.predict(&Tensor::zeros(&[3, 4, 4])),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn stale_cache_is_a_state_error() {
        let mut m = identity_conv_model(1);
        let x = Tensor::filled(&[1, 4, 4], 1.0);
        let (y, cache) = m.forward(&x).unwrap();
        m.param_mut("conv").unwrap().weight.data_mut()[0] = 2.0;
        assert!(matches!(m.backward(&cache, &y), Err(Error::State(_))));
    }

    #[test]
    fn residual_add_pads_and_subsamples_shortcut() {
        let layers = vec![
            LayerSpec::new("id", LayerKind::Identity),
            LayerSpec::conv("down", 1, 2, 1, 2, 0),
            LayerSpec::new(
                "add",
                LayerKind::ResidualAdd {
                    from: "id".into(),
                    stride: 2,
                    channels: 2,
                    main_map: vec![0, 1],
                    shortcut_map: vec![1],
                },
            ),
        ];
        let m = ModelGraph::new(vec![1, 4, 4], layers).unwrap();
        let x = Tensor::from_fn(&[1, 4, 4], |i| i as f64);
        let y = m.predict(&x).unwrap();
        assert_eq!(y.shape(), &[2, 2, 2]);
        // zero conv weights: channel 0 is empty, channel 1 carries x[::2, ::2]
        assert_eq!(y.data(), &[0.0, 0.0, 0.0, 0.0, 0.0, 2.0, 8.0, 10.0]);
        assert_eq!(m.residual_links(), vec![("id", "add")]);
    }

    #[test]
    fn residual_source_must_precede() {
        let layers = vec![LayerSpec::new(
            "add",
            LayerKind::ResidualAdd {
                from: "add".into(),
                stride: 1,
                channels: 1,
                main_map: vec![0],
                shortcut_map: vec![0],
            },
        )];
        assert!(ModelGraph::new(vec![1, 2, 2], layers).is_err());
    }

    #[test]
    fn with_params_checks_shapes() {
        let layers = vec![LayerSpec::dense("fc", 3, 2)];
        let mut params = BTreeMap::new();
        params.insert(
            "fc".to_string(),
            Param {
                weight: Tensor::zeros(&[3, 2]),
                bias: Some(Tensor::zeros(&[2])),
            },
        );
        assert!(ModelGraph::with_params(vec![3], layers, params).is_err());
    }
}
