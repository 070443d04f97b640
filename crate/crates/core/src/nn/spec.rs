//! Layer-by-layer model description and its text form.
//!
//! ```text
//! input 1 28 28
//! conv 8 3 1 1     # out_channels kernel stride padding
//! relu
//! maxpool
//! flatten
//! dense 10
//! ```

use std::fmt;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layer {
    Conv2d {
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    Relu,
    /// 2x2 window, stride 2.
    MaxPool2d,
    GlobalAvgPool,
    Flatten,
    Dense {
        out_features: usize,
    },
}

impl Layer {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Conv2d { .. } => "conv",
            Layer::Relu => "relu",
            Layer::MaxPool2d => "maxpool",
            Layer::GlobalAvgPool => "gap",
            Layer::Flatten => "flatten",
            Layer::Dense { .. } => "dense",
        }
    }

    pub fn has_params(&self) -> bool {
        matches!(self, Layer::Conv2d { .. } | Layer::Dense { .. })
    }
}

impl fmt::Display for Layer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Layer::Conv2d {
                out_channels,
                kernel,
                stride,
                padding,
            } => write!(f, "conv {out_channels} {kernel} {stride} {padding}"),
            Layer::Dense { out_features } => write!(f, "dense {out_features}"),
            other => f.write_str(other.kind()),
        }
    }
}

/// Activation shape between layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Spatial { c: usize, h: usize, w: usize },
    Flat(usize),
}

impl Shape {
    pub fn len(&self) -> usize {
        match *self {
            Shape::Spatial { c, h, w } => c * h * w,
            Shape::Flat(n) => n,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelSpec {
    /// `[C, H, W]` of one input image.
    pub input: [usize; 3],
    pub layers: Vec<Layer>,
}

impl ModelSpec {
    pub fn new(input: [usize; 3], layers: Vec<Layer>) -> Result<Self> {
        let spec = Self { input, layers };
        spec.shapes()?;
        Ok(spec)
    }

    /// Activation shapes: `shapes[i]` is the input of layer `i`, the last
    /// entry is the logits shape.
    pub fn shapes(&self) -> Result<Vec<Shape>> {
        let [c, h, w] = self.input;
        if c == 0 || h == 0 || w == 0 {
            return Err(Error::invalid(format!("input shape {:?} has a zero dimension", self.input)));
        }
        let mut shapes = vec![Shape::Spatial { c, h, w }];
        for (index, layer) in self.layers.iter().enumerate() {
            let err = |message: String| Error::Layer {
                index,
                kind: layer.kind(),
                message,
            };
            let current = *shapes.last().unwrap();
            let next = match (*layer, current) {
                (
                    Layer::Conv2d {
                        out_channels,
                        kernel,
                        stride,
                        padding,
                    },
                    Shape::Spatial { h, w, .. },
                ) => {
                    if out_channels == 0 || kernel == 0 || stride == 0 {
                        return Err(err("channels, kernel and stride must be positive".into()));
                    }
                    if h + 2 * padding < kernel || w + 2 * padding < kernel {
                        return Err(err(format!("kernel {kernel} larger than padded {h}x{w} input")));
                    }
                    Shape::Spatial {
                        c: out_channels,
                        h: (h + 2 * padding - kernel) / stride + 1,
                        w: (w + 2 * padding - kernel) / stride + 1,
                    }
                }
                (Layer::MaxPool2d, Shape::Spatial { c, h, w }) => {
                    if h < 2 || w < 2 {
                        return Err(err(format!("cannot pool a {h}x{w} map")));
                    }
                    Shape::Spatial { c, h: h / 2, w: w / 2 }
                }
                (Layer::GlobalAvgPool, Shape::Spatial { c, .. }) => Shape::Flat(c),
                (Layer::Flatten, s @ Shape::Spatial { .. }) => Shape::Flat(s.len()),
                (Layer::Dense { out_features }, Shape::Flat(_)) => {
                    if out_features == 0 {
                        return Err(err("dense layer needs at least one output".into()));
                    }
                    Shape::Flat(out_features)
                }
                (Layer::Relu, s) => s,
                (_, s) => return Err(err(format!("cannot consume activation of shape {s:?}"))),
            };
            shapes.push(next);
        }
        match shapes.last() {
            Some(Shape::Flat(_)) => Ok(shapes),
            other => Err(Error::invalid(format!("model must end in a flat logits vector, ends in {other:?}"))),
        }
    }

    pub fn classes(&self) -> usize {
        match self.shapes() {
            Ok(shapes) => shapes.last().map_or(0, Shape::len),
            Err(_) => 0,
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut input = None;
        let mut layers = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |m: &str| Error::format("model spec", format!("line {}: {m}: '{line}'", lineno + 1));
            let mut words = line.split_whitespace();
            let head = words.next().unwrap();
            let nums = words
                .map(|w| w.parse::<usize>().map_err(|_| err("expected an integer")))
                .collect::<Result<Vec<_>>>()?;
            let layer = match (head, nums.as_slice()) {
                ("input", &[c, h, w]) => {
                    input = Some([c, h, w]);
                    continue;
                }
                ("conv", &[out_channels, kernel, stride, padding]) => Layer::Conv2d {
                    out_channels,
                    kernel,
                    stride,
                    padding,
                },
                ("dense", &[out_features]) => Layer::Dense { out_features },
                ("relu", []) => Layer::Relu,
                ("maxpool", []) => Layer::MaxPool2d,
                ("gap", []) => Layer::GlobalAvgPool,
                ("flatten", []) => Layer::Flatten,
                _ => return Err(err("unrecognized layer")),
            };
            layers.push(layer);
        }
        let input = input.ok_or_else(|| Error::format("model spec", "missing 'input C H W' line"))?;
        Self::new(input, layers)
    }

    /// Short stable fingerprint of the canonical text form.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_string().as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Built-in architectures, parameterized by input shape and class count.
    pub fn preset(name: &str, input: [usize; 3], classes: usize) -> Result<Self> {
        use Layer::*;
        let conv = |out_channels, kernel, stride, padding| Conv2d {
            out_channels,
            kernel,
            stride,
            padding,
        };
        let head = Dense { out_features: classes };
        let layers = match name {
            "tiny" => vec![
                conv(8, 3, 1, 1),
                Relu,
                MaxPool2d,
                conv(16, 3, 1, 1),
                Relu,
                MaxPool2d,
                Flatten,
                head,
            ],
            "wide" => vec![
                conv(16, 5, 1, 2),
                Relu,
                MaxPool2d,
                Flatten,
                Dense { out_features: 32 },
                Relu,
                head,
            ],
            "strided" => vec![conv(8, 3, 2, 1), Relu, conv(16, 3, 2, 1), Relu, Flatten, head],
            "deep" => vec![
                conv(6, 3, 1, 1),
                Relu,
                MaxPool2d,
                conv(12, 3, 1, 1),
                Relu,
                conv(12, 3, 1, 1),
                Relu,
                MaxPool2d,
                Flatten,
                Dense { out_features: 32 },
                Relu,
                head,
            ],
            "gap" => vec![conv(8, 3, 1, 1), Relu, MaxPool2d, conv(16, 3, 1, 1), Relu, GlobalAvgPool, head],
            other => return Err(Error::invalid(format!("unknown preset '{other}'"))),
        };
        Self::new(input, layers)
    }

    pub const PRESETS: [&'static str; 5] = ["tiny", "wide", "strided", "deep", "gap"];
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [c, h, w] = self.input;
        write!(f, "input {c} {h} {w}")?;
        for layer in &self.layers {
            write!(f, "\n{layer}")?;
        }
        Ok(())
    }
}
