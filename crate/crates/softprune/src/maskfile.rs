//! Mask files: one `layer: i j k` line per pruned layer, listing the pruned
//! filter indices in ascending order. Weight-level masks start with the
//! line `# granularity: weight` and list flat kernel indices instead. Other
//! lines starting with `#` are comments.

use std::path::Path;

use softprune_core::prune::{FilterMask, Granularity};
use softprune_core::ModelGraph;

use crate::error::{Error, Result};

const WEIGHT_DIRECTIVE: &str = "# granularity: weight";

pub fn to_string(mask: &FilterMask) -> String {
    let mut out = String::new();
    if mask.granularity == Granularity::Weight {
        out.push_str(WEIGHT_DIRECTIVE);
        out.push('\n');
    }
    for (name, pruned) in mask.pruned_indices() {
        out.push_str(name);
        out.push(':');
        for i in pruned {
            out.push(' ');
            out.push_str(&i.to_string());
        }
        out.push('\n');
    }
    out
}

pub fn save(mask: &FilterMask, path: &Path) -> Result<()> {
    std::fs::write(path, to_string(mask)).map_err(|e| Error::io(path, e))
}

/// Reads a mask and checks it against `model`. A layer missing from the
/// model, or an index beyond a layer's size, is a state error.
pub fn load(path: &Path, model: &ModelGraph) -> Result<FilterMask> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse(&text, path, model)
}

pub fn parse(text: &str, path: &Path, model: &ModelGraph) -> Result<FilterMask> {
    let mut granularity = Granularity::Filter;
    let mut entries = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let at = format!("line {}", i + 1);
        let line = line.trim();
        if line == WEIGHT_DIRECTIVE {
            granularity = Granularity::Weight;
            continue;
        }
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (name, rest) = line
            .split_once(':')
            .ok_or_else(|| Error::parse(path, &at, format!("expected `layer: indices`, found {line:?}")))?;
        let indices = rest
            .split_whitespace()
            .map(|t| {
                t.parse::<usize>()
                    .map_err(|_| Error::parse(path, &at, format!("bad index {t:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        entries.push((name.trim().to_string(), indices));
    }
    for (name, indices) in &entries {
        let weight = match model.layer(name) {
            Some(l) if l.kind.is_conv() => &model.param(name).expect("conv has params").weight,
            _ => {
                return Err(softprune_core::Error::State(format!(
                    "mask names layer {name}, which is not a conv layer of this model"
                ))
                .into())
            }
        };
        let size = match granularity {
            Granularity::Filter => weight.shape()[0],
            Granularity::Weight => weight.len(),
        };
        if let Some(bad) = indices.iter().find(|&&i| i >= size) {
            return Err(softprune_core::Error::State(format!(
                "mask index {bad} is out of range for layer {name} with {size} units"
            ))
            .into());
        }
    }
    Ok(FilterMask::from_pruned(model, granularity, entries)?)
}
