//! Built-in architecture descriptors.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::graph::{identity_map, LayerKind, LayerSpec, ModelGraph};

/// A small classifier: two 3×3 convolutions of `width` filters with ReLU,
/// 2×2 average pooling and a dense head. `input` is `[channels, h, w]` with
/// even `h` and `w`. Parameters start at zero; call
/// [`ModelGraph::init_he`] to randomize them.
pub fn make_toy_cnn(input: [usize; 3], width: usize, classes: usize) -> Result<ModelGraph> {
    let [c, h, w] = input;
    if width == 0 || classes == 0 || h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Input(format!(
            "toy cnn needs positive width/classes and even spatial size, got width {width}, classes {classes}, input {input:?}"
        )));
    }
    let layers = vec![
        LayerSpec::conv("conv1", c, width, 3, 1, 1),
        LayerSpec::relu("relu1"),
        LayerSpec::conv("conv2", width, width, 3, 1, 1),
        LayerSpec::relu("relu2"),
        LayerSpec::new("pool", LayerKind::AvgPool { window: 2 }),
        LayerSpec::new("flatten", LayerKind::Flatten),
        LayerSpec::dense("fc", width * (h / 2) * (w / 2), classes),
    ];
    ModelGraph::new(input.to_vec(), layers)
}

/// CIFAR-style ResNet of depth 20, 56 or 110: a 3×3 stem of 16 filters,
/// three stages of `(depth - 2) / 6` basic blocks with widths 16/32/64
/// (stages two and three downsample in their first block with a
/// stride-2 conv and a subsampled, zero-padded identity shortcut), global
/// average pooling and a 10-way dense head. Identity layers stand in for
/// batch normalization. The stem is excluded from the default prune scope.
pub fn make_resnet_cifar(depth: usize) -> Result<ModelGraph> {
    if !matches!(depth, 20 | 56 | 110) {
        return Err(Error::Input(format!(
            "unsupported ResNet depth {depth}; expected 20, 56 or 110"
        )));
    }
    let blocks = (depth - 2) / 6;
    let mut layers: Vec<LayerSpec> = Vec::with_capacity(9 * blocks * 3 + 6);
    layers.push(LayerSpec::new(
        "conv1",
        LayerKind::Conv {
            in_channels: 3,
            out_channels: 16,
            kernel_size: 3,
            stride: 1,
            padding: 1,
            bias: false,
            prunable: false,
        },
    ));
    layers.push(LayerSpec::new("bn1", LayerKind::Identity));
    layers.push(LayerSpec::relu("relu1"));

    let mut trunk = String::from("relu1");
    let mut in_width = 16;
    for (stage, width) in [16usize, 32, 64].into_iter().enumerate() {
        for b in 0..blocks {
            let stride = if stage > 0 && b == 0 { 2 } else { 1 };
            let p = format!("layer{}.{}", stage + 1, b);
            layers.push(LayerSpec::conv(format!("{p}.conv1"), in_width, width, 3, stride, 1));
            layers.push(LayerSpec::new(format!("{p}.bn1"), LayerKind::Identity));
            layers.push(LayerSpec::relu(format!("{p}.relu1")));
            layers.push(LayerSpec::conv(format!("{p}.conv2"), width, width, 3, 1, 1));
            layers.push(LayerSpec::new(format!("{p}.bn2"), LayerKind::Identity));
            // narrower shortcut is centred in the wider trunk
            let pad = (width - in_width) / 2;
            layers.push(LayerSpec::new(
                format!("{p}.add"),
                LayerKind::ResidualAdd {
                    from: trunk.clone(),
                    stride,
                    channels: width,
                    main_map: identity_map(width),
                    shortcut_map: (pad..pad + in_width).collect(),
                },
            ));
            layers.push(LayerSpec::relu(format!("{p}.relu2")));
            trunk = format!("{p}.relu2");
            in_width = width;
        }
    }
    layers.push(LayerSpec::new("pool", LayerKind::AvgPool { window: 8 }));
    layers.push(LayerSpec::new("flatten", LayerKind::Flatten));
    layers.push(LayerSpec::dense("fc", 64, 10));
    ModelGraph::new(vec![3, 32, 32], layers)
}
