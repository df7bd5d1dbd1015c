//! Plain-text model files and architecture descriptions.
//!
//! ```text
//! GRADFORGE v1 pcg32
//! input 1 1 2
//! dense 2 2 sigmoid
//! w <row-major weights>
//! b <biases>
//! pool max 2 2 identity
//! ```
//!
//! Numbers are written with 17 significant digits so a save/load round trip
//! reproduces every parameter bit for bit.

use std::path::Path;

use crate::conv::{ConvLayer, PoolLayer, PoolMode, Shape3};
use crate::data::fmt17;
use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};
use crate::network::{DenseLayer, Layer, NetworkSpec};
use crate::rng::PRNG_NAME;

const MAGIC: &str = "GRADFORGE";
const VERSION: &str = "v1";

/// One-line description of a layer's architecture (no parameters).
pub fn layer_line(layer: &Layer) -> String {
    match layer {
        Layer::Dense(d) => format!("dense {} {} {}", d.weights.cols(), d.weights.rows(), d.activation),
        Layer::Conv(c) => format!(
            "conv {} {} {} {} {} {} {}",
            c.fh, c.fw, c.in_channels, c.out_channels, c.stride, c.pad, c.activation
        ),
        Layer::Pool(p) => format!("pool {} {} {} {}", p.mode.as_str(), p.window, p.stride, p.activation),
    }
}

fn parse_usize(word: &str, what: &str) -> Result<usize> {
    word.parse()
        .map_err(|_| Error::config("layer", format!("{what} must be a nonnegative integer, got `{word}`")))
}

/// Parses a zero-initialized layer from its description:
/// `dense <in> <out> <act>`, `conv <fh> <fw> <in> <out> <stride> <pad> <act>`
/// or `pool max|avg <window> <stride> [act]`.
pub fn parse_layer_line(line: &str) -> Result<Layer> {
    let words: Vec<&str> = line.split_whitespace().collect();
    let arity = |n: &[usize], usage: &str| {
        if n.contains(&words.len()) {
            Ok(())
        } else {
            Err(Error::config("layer", format!("expected `{usage}`, got `{line}`")))
        }
    };
    match words.first().copied() {
        Some("dense") => {
            arity(&[4], "dense <in> <out> <activation>")?;
            let inputs = parse_usize(words[1], "dense input width")?;
            let outputs = parse_usize(words[2], "dense output width")?;
            if inputs == 0 || outputs == 0 {
                return Err(Error::config("layer", "dense widths must be positive"));
            }
            Ok(Layer::Dense(DenseLayer::zeros(inputs, outputs, words[3].parse()?)))
        }
        Some("conv") => {
            arity(&[8], "conv <fh> <fw> <in> <out> <stride> <pad> <activation>")?;
            let n: Vec<usize> = words[1..7]
                .iter()
                .map(|w| parse_usize(w, "conv size"))
                .collect::<Result<_>>()?;
            Ok(Layer::Conv(ConvLayer::zeros((n[0], n[1]), n[2], n[3], n[4], n[5], words[7].parse()?)?))
        }
        Some("pool") => {
            arity(&[4, 5], "pool max|avg <window> <stride> [activation]")?;
            let mode = match words[1] {
                "max" => PoolMode::Max,
                "avg" => PoolMode::Average,
                m => return Err(Error::config("layer", format!("unknown pool mode `{m}`"))),
            };
            let mut pool = PoolLayer::new(mode, parse_usize(words[2], "pool window")?, parse_usize(words[3], "pool stride")?)?;
            if let Some(act) = words.get(4) {
                pool.activation = act.parse()?;
            }
            Ok(Layer::Pool(pool))
        }
        _ => Err(Error::config("layer", format!("unknown layer `{line}`"))),
    }
}

/// Parses `H W C` (or a single width `n`, meaning `1 1 n`).
pub fn parse_shape(text: &str) -> Result<Shape3> {
    let n: Vec<usize> = text
        .split_whitespace()
        .map(|w| parse_usize(w, "input size"))
        .collect::<Result<_>>()
        .map_err(|_| Error::config("input", format!("expected `H W C` or a width, got `{text}`")))?;
    let shape = match n[..] {
        [w] => Shape3::flat(w),
        [h, w, c] => Shape3::new(h, w, c),
        _ => return Err(Error::config("input", format!("expected `H W C` or a width, got `{text}`"))),
    };
    if [shape.height, shape.width, shape.channels].contains(&0) {
        return Err(Error::config("input", "input dimensions must be positive"));
    }
    Ok(shape)
}

fn join(values: &[f64]) -> String {
    values.iter().map(|&v| fmt17(v)).collect::<Vec<_>>().join(" ")
}

/// Serializes a network (architecture and parameters).
pub fn to_text(net: &NetworkSpec) -> String {
    let s = net.input_shape();
    let mut out = format!("{MAGIC} {VERSION} {PRNG_NAME}\ninput {} {} {}\n", s.height, s.width, s.channels);
    for layer in net.layers() {
        out.push_str(&layer_line(layer));
        out.push('\n');
        if let (Some(w), Some(b)) = (layer.weights(), layer.biases()) {
            out.push_str(&format!("w {}\nb {}\n", join(w.as_slice()), join(b.as_slice())));
        }
    }
    out
}

fn parse_values(line: &str, tag: &str, expected: usize, lineno: usize) -> Result<Vec<f64>> {
    let rest = line
        .strip_prefix(tag)
        .filter(|r| r.is_empty() || r.starts_with(' '))
        .ok_or_else(|| Error::parse(lineno, format!("expected a `{tag}` line")))?;
    let values = rest
        .split_whitespace()
        .map(|w| w.parse::<f64>().map_err(|_| Error::parse(lineno, format!("bad number `{w}`"))))
        .collect::<Result<Vec<_>>>()?;
    if values.len() != expected {
        return Err(Error::parse(lineno, format!("expected {expected} values, found {}", values.len())));
    }
    Ok(values)
}

/// Parses the output of [`to_text`].
pub fn from_text(text: &str) -> Result<NetworkSpec> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty());
    let (n, header) = lines.next().ok_or_else(|| Error::parse(1, "empty model file"))?;
    let h: Vec<&str> = header.split_whitespace().collect();
    if h.len() != 3 || h[0] != MAGIC || h[1] != VERSION {
        return Err(Error::parse(n, format!("expected header `{MAGIC} {VERSION} <prng>`")));
    }
    let (n, input) = lines.next().ok_or_else(|| Error::parse(n + 1, "missing `input` line"))?;
    let shape = input
        .strip_prefix("input ")
        .ok_or_else(|| Error::parse(n, "expected `input H W C`"))
        .and_then(|s| parse_shape(s).map_err(|e| Error::parse(n, e.to_string())))?;

    let mut layers = Vec::new();
    while let Some((n, line)) = lines.next() {
        let mut layer = parse_layer_line(line).map_err(|e| Error::parse(n, e.to_string()))?;
        if let Some(rows) = layer.weights().map(Matrix::rows) {
            let cols = layer.weights().map_or(0, Matrix::cols);
            let (wn, wline) = lines.next().ok_or_else(|| Error::parse(n + 1, "missing `w` line"))?;
            let w = parse_values(wline, "w", rows * cols, wn)?;
            let (bn, bline) = lines.next().ok_or_else(|| Error::parse(wn + 1, "missing `b` line"))?;
            let b = parse_values(bline, "b", layer.biases().map_or(0, Vector::len), bn)?;
            *layer.weights_mut().expect("weighted layer") = Matrix::new(rows, cols, w)?;
            *layer.biases_mut().expect("weighted layer") = Vector::new(b);
        }
        layers.push(layer);
    }
    NetworkSpec::new(shape, layers)
}

pub fn save(net: &NetworkSpec, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_text(net)).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load(path: impl AsRef<Path>) -> Result<NetworkSpec> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    from_text(&text).map_err(|e| e.with_path(path))
}
