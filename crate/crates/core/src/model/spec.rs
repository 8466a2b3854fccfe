use std::fmt::{self, Write as _};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Patch side length both networks consume.
pub const PATCH_SIZE: usize = 101;

/// Index of the microaneurysm class in the softmax output.
pub const MA_CLASS: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LayerSpec {
    /// Valid, stride-1 square convolution.
    Conv { out_channels: usize, kernel: usize },
    /// 2×2 max pool, stride 2, floor semantics.
    MaxPool2,
    LeakyRelu { slope: f64 },
    Dropout { p: f64 },
    FullyConnected { out: usize },
    /// Pairwise maxout halving the width of the preceding layer.
    Maxout,
    /// Two-way softmax; must be last.
    Softmax,
}

impl LayerSpec {
    pub fn has_params(&self) -> bool {
        matches!(self, LayerSpec::Conv { .. } | LayerSpec::FullyConnected { .. })
    }

    fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Conv { .. } => "conv",
            LayerSpec::MaxPool2 => "maxpool2",
            LayerSpec::LeakyRelu { .. } => "leaky_relu",
            LayerSpec::Dropout { .. } => "dropout",
            LayerSpec::FullyConnected { .. } => "fully_connected",
            LayerSpec::Maxout => "maxout",
            LayerSpec::Softmax => "softmax",
        }
    }
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            LayerSpec::Conv { out_channels, kernel } => write!(f, "conv {out_channels} {kernel}"),
            LayerSpec::MaxPool2 => write!(f, "maxpool2"),
            LayerSpec::LeakyRelu { slope } => write!(f, "leaky_relu {slope:?}"),
            LayerSpec::Dropout { p } => write!(f, "dropout {p:?}"),
            LayerSpec::FullyConnected { out } => write!(f, "fully_connected {out}"),
            LayerSpec::Maxout => write!(f, "maxout"),
            LayerSpec::Softmax => write!(f, "softmax"),
        }
    }
}

/// Wiring knobs shared by the two stock architectures.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArchOptions {
    pub leaky_slope: f64,
    pub dropout: f64,
    /// Pairwise maxout after the first fully connected layer.
    pub maxout: bool,
}

impl Default for ArchOptions {
    fn default() -> Self {
        Self {
            leaky_slope: 0.01,
            dropout: 0.25,
            maxout: true,
        }
    }
}

/// Declarative, validated layer list.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    name: String,
    input_shape: [usize; 3],
    layers: Vec<LayerSpec>,
}

impl NetworkSpec {
    /// Validates the layer chain with [`infer_shapes`] and requires a final
    /// two-way softmax.
    pub fn new(name: impl Into<String>, input_shape: [usize; 3], layers: Vec<LayerSpec>) -> Result<Self> {
        let name = name.into();
        if name.is_empty() || name.chars().any(char::is_whitespace) {
            return Err(Error::Spec {
                layer: 0,
                reason: format!("invalid network name `{name}`"),
            });
        }
        let spec = Self {
            name,
            input_shape,
            layers,
        };
        spec.validate()?;
        Ok(spec)
    }

    fn validate(&self) -> Result<()> {
        for (i, l) in self.layers.iter().enumerate() {
            let bad = match *l {
                LayerSpec::Conv { out_channels, kernel } => out_channels == 0 || kernel == 0,
                LayerSpec::FullyConnected { out } => out == 0,
                LayerSpec::Dropout { p } => !(0.0..1.0).contains(&p),
                LayerSpec::LeakyRelu { slope } => !(slope >= 0.0 && slope.is_finite()),
                _ => false,
            };
            if bad {
                return Err(Error::Spec {
                    layer: i,
                    reason: format!("invalid parameters for `{l}`"),
                });
            }
            if matches!(l, LayerSpec::Softmax) && i + 1 != self.layers.len() {
                return Err(Error::Spec {
                    layer: i,
                    reason: "softmax must be the last layer".into(),
                });
            }
        }
        if self.layers.last() != Some(&LayerSpec::Softmax) {
            return Err(Error::Spec {
                layer: self.layers.len(),
                reason: "network must end in a softmax".into(),
            });
        }
        let shapes = infer_shapes(self)?;
        if shapes.last().map(Vec::as_slice) != Some(&[2][..]) {
            return Err(Error::Spec {
                layer: self.layers.len() - 1,
                reason: "softmax must see exactly two logits".into(),
            });
        }
        Ok(())
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.input_shape
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    /// Canonical one-line-per-layer text; round-trips through [`Self::parse`].
    pub fn canonical_text(&self) -> String {
        let [c, h, w] = self.input_shape;
        let mut s = format!("network {}\ninput {c} {h} {w}\n", self.name);
        for l in &self.layers {
            let _ = writeln!(s, "{l}");
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let err = |line: usize, reason: String| Error::Spec { layer: line, reason };
        let mut lines = text.lines();
        let name = lines
            .next()
            .and_then(|l| l.strip_prefix("network "))
            .ok_or_else(|| err(0, "missing `network` line".into()))?;
        let dims: Vec<usize> = lines
            .next()
            .and_then(|l| l.strip_prefix("input "))
            .ok_or_else(|| err(0, "missing `input` line".into()))?
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| err(0, format!("bad input dim `{t}`"))))
            .collect::<Result<_>>()?;
        let input_shape: [usize; 3] = dims
            .try_into()
            .map_err(|_| err(0, "input needs three dims".into()))?;
        let mut layers = Vec::new();
        for (i, line) in lines.enumerate() {
            let toks: Vec<&str> = line.split_whitespace().collect();
            let num = |k: usize| -> Result<f64> {
                toks.get(k)
                    .and_then(|t| t.parse::<f64>().ok())
                    .ok_or_else(|| err(i, format!("bad layer line `{line}`")))
            };
            let int = |k: usize| -> Result<usize> {
                toks.get(k)
                    .and_then(|t| t.parse::<usize>().ok())
                    .ok_or_else(|| err(i, format!("bad layer line `{line}`")))
            };
            let layer = match toks.first().copied() {
                Some("conv") => LayerSpec::Conv {
                    out_channels: int(1)?,
                    kernel: int(2)?,
                },
                Some("maxpool2") => LayerSpec::MaxPool2,
                Some("leaky_relu") => LayerSpec::LeakyRelu { slope: num(1)? },
                Some("dropout") => LayerSpec::Dropout { p: num(1)? },
                Some("fully_connected") => LayerSpec::FullyConnected { out: int(1)? },
                Some("maxout") => LayerSpec::Maxout,
                Some("softmax") => LayerSpec::Softmax,
                _ => return Err(err(i, format!("unknown layer `{line}`"))),
            };
            layers.push(layer);
        }
        Self::new(name, input_shape, layers)
    }

    /// SHA-256 of the canonical text, hex encoded.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_text().as_bytes()))
    }

    /// Parameter tensor shapes of each layer (empty for parameter-free ones).
    pub fn param_shapes(&self) -> Result<Vec<Vec<Vec<usize>>>> {
        let shapes = infer_shapes(self)?;
        let mut prev: Vec<usize> = self.input_shape.to_vec();
        let mut out = Vec::with_capacity(self.layers.len());
        for (l, shape) in self.layers.iter().zip(&shapes) {
            out.push(match *l {
                LayerSpec::Conv { out_channels, kernel } => vec![
                    vec![out_channels, prev[0], kernel, kernel],
                    vec![out_channels],
                ],
                LayerSpec::FullyConnected { out } => {
                    vec![vec![out, prev.iter().product()], vec![out]]
                }
                _ => Vec::new(),
            });
            prev = shape.clone();
        }
        Ok(out)
    }

    pub fn param_count(&self) -> usize {
        self.param_shapes()
            .map(|layers| {
                layers
                    .iter()
                    .flatten()
                    .map(|s| s.iter().product::<usize>())
                    .sum()
            })
            .unwrap_or(0)
    }
}

/// Output shape of every layer under valid convolution and floor pooling.
pub fn infer_shapes(spec: &NetworkSpec) -> Result<Vec<Vec<usize>>> {
    let mut shape: Vec<usize> = spec.input_shape.to_vec();
    if shape.iter().any(|&d| d == 0) {
        return Err(Error::Spec {
            layer: 0,
            reason: format!("empty input shape {shape:?}"),
        });
    }
    let mut out = Vec::with_capacity(spec.layers.len());
    for (i, l) in spec.layers.iter().enumerate() {
        let fail = |reason: String| Error::Spec {
            layer: i,
            reason: format!("{} on {shape:?}: {reason}", l.kind()),
        };
        shape = match *l {
            LayerSpec::Conv { out_channels, kernel } => {
                if shape.len() != 3 {
                    return Err(fail("needs a [C, H, W] input".into()));
                }
                if kernel > shape[1] || kernel > shape[2] {
                    return Err(fail(format!("{kernel}x{kernel} kernel underflows the input")));
                }
                vec![out_channels, shape[1] - kernel + 1, shape[2] - kernel + 1]
            }
            LayerSpec::MaxPool2 => {
                if shape.len() != 3 {
                    return Err(fail("needs a [C, H, W] input".into()));
                }
                if shape[1] < 2 || shape[2] < 2 {
                    return Err(fail("spatial size below 2".into()));
                }
                vec![shape[0], shape[1] / 2, shape[2] / 2]
            }
            LayerSpec::LeakyRelu { .. } | LayerSpec::Dropout { .. } => shape.clone(),
            LayerSpec::FullyConnected { out } => vec![out],
            LayerSpec::Maxout => {
                let n: usize = shape.iter().product();
                if shape.len() != 1 || n % 2 != 0 {
                    return Err(fail("needs an even-length vector".into()));
                }
                vec![n / 2]
            }
            LayerSpec::Softmax => {
                if shape != [2] {
                    return Err(fail("needs two logits".into()));
                }
                vec![2]
            }
        };
        out.push(shape.clone());
    }
    Ok(out)
}

/// Spatial side after every convolution and pooling layer, in order.
pub fn spatial_chain(spec: &NetworkSpec) -> Result<Vec<usize>> {
    Ok(spec
        .layers
        .iter()
        .zip(infer_shapes(spec)?)
        .filter(|(l, _)| matches!(l, LayerSpec::Conv { .. } | LayerSpec::MaxPool2))
        .map(|(_, s)| s[1])
        .collect())
}

fn conv_block(layers: &mut Vec<LayerSpec>, kernel: usize, opts: &ArchOptions, dropout: bool) {
    layers.push(LayerSpec::Conv {
        out_channels: 16,
        kernel,
    });
    layers.push(LayerSpec::LeakyRelu {
        slope: opts.leaky_slope,
    });
    layers.push(LayerSpec::MaxPool2);
    if dropout && opts.dropout > 0.0 {
        layers.push(LayerSpec::Dropout { p: opts.dropout });
    }
}

/// Stage-one network: three conv/pool blocks (16 filters of 6, 5 and 3
/// pixels) each followed by dropout, then FC 200 → maxout → FC 100 → FC 2.
pub fn build_basic_spec() -> NetworkSpec {
    build_basic_spec_with(&ArchOptions::default())
}

pub fn build_basic_spec_with(opts: &ArchOptions) -> NetworkSpec {
    let mut layers = Vec::new();
    for k in [6, 5, 3] {
        conv_block(&mut layers, k, opts, true);
    }
    layers.push(LayerSpec::FullyConnected { out: 200 });
    if opts.maxout {
        layers.push(LayerSpec::Maxout);
    }
    layers.push(LayerSpec::FullyConnected { out: 100 });
    layers.push(LayerSpec::FullyConnected { out: 2 });
    layers.push(LayerSpec::Softmax);
    NetworkSpec::new("basic", [3, PATCH_SIZE, PATCH_SIZE], layers).expect("stock basic spec is valid")
}

/// Stage-two network: five conv/pool blocks (16 filters of 6, 5, 3, 2 and 2
/// pixels) with dropout after the first and third, then FC 100 → maxout →
/// FC 2.
pub fn build_final_spec() -> NetworkSpec {
    build_final_spec_with(&ArchOptions::default())
}

pub fn build_final_spec_with(opts: &ArchOptions) -> NetworkSpec {
    let mut layers = Vec::new();
    for (i, k) in [6, 5, 3, 2, 2].into_iter().enumerate() {
        conv_block(&mut layers, k, opts, i == 0 || i == 2);
    }
    layers.push(LayerSpec::FullyConnected { out: 100 });
    if opts.maxout {
        layers.push(LayerSpec::Maxout);
    }
    layers.push(LayerSpec::FullyConnected { out: 2 });
    layers.push(LayerSpec::Softmax);
    NetworkSpec::new("final", [3, PATCH_SIZE, PATCH_SIZE], layers).expect("stock final spec is valid")
}
