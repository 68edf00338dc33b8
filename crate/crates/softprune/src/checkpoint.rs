//! Model checkpoints.
//!
//! A checkpoint is a UTF-8 header followed by raw parameters:
//!
//! ```text
//! softprune-checkpoint 1
//! input 1 8 8
//! layer conv conv1 in=1 out=8 kernel=3 stride=1 padding=1 bias=false prunable=true
//! layer relu relu1
//! layer avgpool pool window=2
//! layer flatten flatten
//! layer dense fc in=128 out=10
//! layer identity bn1
//! layer residual-add layer1.0.add from=relu1 stride=1 channels=16 main=0,1,... shortcut=0,1,...
//! param conv1 weight 8 1 3 3
//! param fc weight 10 128
//! param fc bias 10
//! end
//! ```
//!
//! Each `param` line announces one blob; the blobs follow the `end\n` line
//! back to back, in the same order, as little-endian IEEE-754 `f64` values
//! in row-major order. Parameters appear in layer declaration order, weight
//! before bias. Layer names may not contain whitespace.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use softprune_core::{LayerKind, LayerSpec, ModelGraph, Param, Tensor};

use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "softprune-checkpoint";

pub fn to_bytes(model: &ModelGraph) -> Result<Vec<u8>> {
    let mut header = format!("{MAGIC} {FORMAT_VERSION}\ninput");
    for d in model.input_shape() {
        write!(header, " {d}").unwrap();
    }
    header.push('\n');
    for l in model.layers() {
        if l.name.is_empty() || l.name.chars().any(char::is_whitespace) {
            return Err(softprune_core::Error::Input(format!("layer name {:?} cannot be stored", l.name)).into());
        }
        writeln!(header, "layer {} {}{}", l.kind.tag(), l.name, layer_fields(&l.kind)).unwrap();
    }
    let mut blobs: Vec<&Tensor> = Vec::new();
    for (name, p) in model.params() {
        for (part, t) in [("weight", Some(&p.weight)), ("bias", p.bias.as_ref())] {
            if let Some(t) = t {
                write!(header, "param {name} {part}").unwrap();
                for d in t.shape() {
                    write!(header, " {d}").unwrap();
                }
                header.push('\n');
                blobs.push(t);
            }
        }
    }
    header.push_str("end\n");
    let mut out = header.into_bytes();
    for t in blobs {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

fn layer_fields(kind: &LayerKind) -> String {
    let list = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
    match kind {
        LayerKind::Conv {
            in_channels,
            out_channels,
            kernel_size,
            stride,
            padding,
            bias,
            prunable,
        } => format!(
            " in={in_channels} out={out_channels} kernel={kernel_size} stride={stride} padding={padding} bias={bias} prunable={prunable}"
        ),
        LayerKind::Dense { in_features, out_features } => format!(" in={in_features} out={out_features}"),
        LayerKind::AvgPool { window } => format!(" window={window}"),
        LayerKind::ResidualAdd {
            from,
            stride,
            channels,
            main_map,
            shortcut_map,
        } => format!(
            " from={from} stride={stride} channels={channels} main={} shortcut={}",
            list(main_map),
            list(shortcut_map)
        ),
        LayerKind::Relu | LayerKind::Identity | LayerKind::Flatten => String::new(),
    }
}

pub fn save(model: &ModelGraph, path: &Path) -> Result<()> {
    let bytes = to_bytes(model)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<ModelGraph> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes, path)
}

/// Parses a checkpoint; `path` only labels errors.
pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<ModelGraph> {
    let end =
        find_header_end(bytes).ok_or_else(|| Error::parse(path, "header", "no `end` line terminating the header"))?;
    let header = std::str::from_utf8(&bytes[..end])
        .map_err(|e| Error::parse(path, format!("byte {}", e.valid_up_to()), "header is not UTF-8"))?;

    let mut input = None;
    let mut layers = Vec::new();
    let mut blobs: Vec<(String, bool, Vec<usize>)> = Vec::new();
    for (i, line) in header.lines().enumerate() {
        let at = format!("line {}", i + 1);
        let mut tok = line.split_whitespace();
        let head = tok.next().unwrap_or("");
        if i == 0 {
            let version = tok.next();
            if head != MAGIC || version != Some(&FORMAT_VERSION.to_string()) {
                return Err(Error::parse(
                    path,
                    at,
                    format!("expected `{MAGIC} {FORMAT_VERSION}`, found {line:?}"),
                ));
            }
            continue;
        }
        match head {
            "input" => input = Some(parse_dims(tok, path, &at)?),
            "layer" => layers.push(parse_layer(tok.collect(), path, &at)?),
            "param" => {
                let name = tok
                    .next()
                    .ok_or_else(|| Error::parse(path, &at, "param line without a layer name"))?;
                let bias = match tok.next() {
                    Some("weight") => false,
                    Some("bias") => true,
                    other => {
                        return Err(Error::parse(
                            path,
                            &at,
                            format!("expected weight or bias, found {other:?}"),
                        ))
                    }
                };
                blobs.push((name.to_string(), bias, parse_dims(tok, path, &at)?));
            }
            "end" => break,
            other => return Err(Error::parse(path, at, format!("unknown header entry {other:?}"))),
        }
    }
    let input = input.ok_or_else(|| Error::parse(path, "header", "missing `input` line"))?;

    let data = &bytes[end..];
    let expected: usize = blobs.iter().map(|b| b.2.iter().product::<usize>() * 8).sum();
    if data.len() != expected {
        return Err(Error::parse(
            path,
            format!("byte {}", end + data.len().min(expected)),
            format!(
                "parameter data should be {expected} bytes after the header, found {}",
                data.len()
            ),
        ));
    }
    let mut params: BTreeMap<String, Param> = BTreeMap::new();
    let mut offset = 0;
    for (name, bias, shape) in blobs {
        let n: usize = shape.iter().product();
        let values = data[offset..offset + 8 * n]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        offset += 8 * n;
        let t = Tensor::new(shape, values)?;
        let entry = params.entry(name.clone());
        match (bias, entry) {
            (false, std::collections::btree_map::Entry::Vacant(v)) => {
                v.insert(Param { weight: t, bias: None });
            }
            (true, std::collections::btree_map::Entry::Occupied(mut o)) if o.get().bias.is_none() => {
                o.get_mut().bias = Some(t);
            }
            _ => {
                return Err(Error::parse(
                    path,
                    "header",
                    format!("parameters of layer {name} are duplicated or out of order"),
                ))
            }
        }
    }
    Ok(ModelGraph::with_params(input, layers, params)?)
}

fn find_header_end(bytes: &[u8]) -> Option<usize> {
    let mut line_start = 0;
    for (i, &b) in bytes.iter().enumerate() {
        if b == b'\n' {
            if &bytes[line_start..i] == b"end" {
                return Some(i + 1);
            }
            line_start = i + 1;
        }
    }
    None
}

fn parse_dims<'a>(tok: impl Iterator<Item = &'a str>, path: &Path, at: &str) -> Result<Vec<usize>> {
    let dims = tok
        .map(|t| {
            t.parse::<usize>()
                .map_err(|_| Error::parse(path, at, format!("bad dimension {t:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    if dims.is_empty() {
        return Err(Error::parse(path, at, "missing dimensions"));
    }
    Ok(dims)
}

fn parse_layer(tok: Vec<&str>, path: &Path, at: &str) -> Result<LayerSpec> {
    let (kind, name) = match tok.as_slice() {
        [kind, name, ..] => (*kind, name.to_string()),
        _ => return Err(Error::parse(path, at, "layer line needs a kind and a name")),
    };
    let mut fields = BTreeMap::new();
    for t in &tok[2..] {
        let (k, v) = t
            .split_once('=')
            .ok_or_else(|| Error::parse(path, at, format!("expected key=value, found {t:?}")))?;
        fields.insert(k, v);
    }
    let get = |key: &str| -> Result<&str> {
        fields
            .get(key)
            .copied()
            .ok_or_else(|| Error::parse(path, at, format!("{kind} layer {name} is missing `{key}`")))
    };
    let num = |key: &str| -> Result<usize> {
        let v = get(key)?;
        v.parse()
            .map_err(|_| Error::parse(path, at, format!("`{key}` is not a count: {v:?}")))
    };
    let flag = |key: &str| -> Result<bool> {
        let v = get(key)?;
        v.parse()
            .map_err(|_| Error::parse(path, at, format!("`{key}` is not true/false: {v:?}")))
    };
    let list = |key: &str| -> Result<Vec<usize>> {
        let v = get(key)?;
        if v.is_empty() {
            return Ok(Vec::new());
        }
        v.split(',')
            .map(|x| {
                x.parse()
                    .map_err(|_| Error::parse(path, at, format!("bad index {x:?} in `{key}`")))
            })
            .collect()
    };
    let kind = match kind {
        "conv" => LayerKind::Conv {
            in_channels: num("in")?,
            out_channels: num("out")?,
            kernel_size: num("kernel")?,
            stride: num("stride")?,
            padding: num("padding")?,
            bias: flag("bias")?,
            prunable: flag("prunable")?,
        },
        "dense" => LayerKind::Dense {
            in_features: num("in")?,
            out_features: num("out")?,
        },
        "relu" => LayerKind::Relu,
        "avgpool" => LayerKind::AvgPool { window: num("window")? },
        "identity" => LayerKind::Identity,
        "flatten" => LayerKind::Flatten,
        "residual-add" => LayerKind::ResidualAdd {
            from: get("from")?.to_string(),
            stride: num("stride")?,
            channels: num("channels")?,
            main_map: list("main")?,
            shortcut_map: list("shortcut")?,
        },
        other => return Err(Error::parse(path, at, format!("unknown layer kind {other:?}"))),
    };
    Ok(LayerSpec::new(name, kind))
}
