use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Linear,
    Relu,
    Tanh,
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Linear => "linear",
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        })
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" | "identity" => Ok(Activation::Linear),
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::InvalidSpec(format!("unknown activation `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LayerKind {
    Dense {
        inputs: usize,
        outputs: usize,
    },
    /// Valid-padding convolution over `[H, W, C]` samples.
    Conv2d {
        in_h: usize,
        in_w: usize,
        in_c: usize,
        out_c: usize,
        kernel: usize,
        stride: usize,
    },
    Flatten,
    Reshape {
        shape: Vec<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn dense(inputs: usize, outputs: usize, activation: Activation) -> Self {
        Self {
            kind: LayerKind::Dense { inputs, outputs },
            activation,
        }
    }

    pub fn flatten() -> Self {
        Self {
            kind: LayerKind::Flatten,
            activation: Activation::Linear,
        }
    }

    pub fn reshape(shape: Vec<usize>) -> Self {
        Self {
            kind: LayerKind::Reshape { shape },
            activation: Activation::Linear,
        }
    }

    pub fn has_params(&self) -> bool {
        matches!(self.kind, LayerKind::Dense { .. } | LayerKind::Conv2d { .. })
    }

    /// Output shape for one sample of shape `input`.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let size: usize = input.iter().product();
        match &self.kind {
            LayerKind::Dense { inputs, outputs } => {
                if input != [*inputs] {
                    return Err(Error::InvalidSpec(format!(
                        "dense layer expects [{inputs}], receives {input:?}"
                    )));
                }
                Ok(vec![*outputs])
            }
            LayerKind::Conv2d {
                in_h,
                in_w,
                in_c,
                out_c,
                kernel,
                stride,
            } => {
                if input != [*in_h, *in_w, *in_c] {
                    return Err(Error::InvalidSpec(format!(
                        "conv layer expects [{in_h}, {in_w}, {in_c}], receives {input:?}"
                    )));
                }
                if *kernel == 0 || *stride == 0 || kernel > in_h || kernel > in_w || *out_c == 0 {
                    return Err(Error::InvalidSpec(format!(
                        "conv kernel {kernel} / stride {stride} invalid for {input:?}"
                    )));
                }
                Ok(vec![
                    (in_h - kernel) / stride + 1,
                    (in_w - kernel) / stride + 1,
                    *out_c,
                ])
            }
            LayerKind::Flatten => Ok(vec![size]),
            LayerKind::Reshape { shape } => {
                if shape.iter().product::<usize>() != size || shape.contains(&0) {
                    return Err(Error::InvalidSpec(format!(
                        "cannot reshape {input:?} into {shape:?}"
                    )));
                }
                Ok(shape.clone())
            }
        }
    }

    /// `(shape, fan_in, fan_out)` of the weight tensor, plus the bias length.
    pub(crate) fn weight_layout(&self) -> Option<(Vec<usize>, usize, usize, usize)> {
        match &self.kind {
            LayerKind::Dense { inputs, outputs } => {
                Some((vec![*inputs, *outputs], *inputs, *outputs, *outputs))
            }
            LayerKind::Conv2d {
                in_c,
                out_c,
                kernel,
                ..
            } => {
                let area = kernel * kernel;
                Some((
                    vec![*kernel, *kernel, *in_c, *out_c],
                    area * in_c,
                    area * out_c,
                    *out_c,
                ))
            }
            _ => None,
        }
    }
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            LayerKind::Dense { inputs, outputs } => {
                write!(f, "dense {inputs} {outputs} {}", self.activation)
            }
            LayerKind::Conv2d {
                in_h,
                in_w,
                in_c,
                out_c,
                kernel,
                stride,
            } => write!(
                f,
                "conv {in_h} {in_w} {in_c} {out_c} {kernel} {stride} {}",
                self.activation
            ),
            LayerKind::Flatten => f.write_str("flatten"),
            LayerKind::Reshape { shape } => {
                f.write_str("reshape")?;
                for d in shape {
                    write!(f, " {d}")?;
                }
                Ok(())
            }
        }
    }
}

impl FromStr for LayerSpec {
    type Err = Error;

    /// Parses `dense IN OUT ACT`, `conv H W C OUT K STRIDE ACT`, `flatten`
    /// or `reshape D...`.
    fn from_str(line: &str) -> Result<Self> {
        let words: Vec<&str> = line.split_whitespace().collect();
        let bad = || Error::InvalidSpec(format!("cannot parse layer `{line}`"));
        let num = |w: &str| w.parse::<usize>().map_err(|_| bad());
        match words.as_slice() {
            ["dense", i, o, act] => Ok(Self {
                kind: LayerKind::Dense {
                    inputs: num(i)?,
                    outputs: num(o)?,
                },
                activation: act.parse()?,
            }),
            ["conv", h, w, c, o, k, s, act] => Ok(Self {
                kind: LayerKind::Conv2d {
                    in_h: num(h)?,
                    in_w: num(w)?,
                    in_c: num(c)?,
                    out_c: num(o)?,
                    kernel: num(k)?,
                    stride: num(s)?,
                },
                activation: act.parse()?,
            }),
            ["flatten"] => Ok(Self::flatten()),
            ["reshape", dims @ ..] if !dims.is_empty() => Ok(Self::reshape(
                dims.iter().map(|d| num(d)).collect::<Result<_>>()?,
            )),
            _ => Err(bad()),
        }
    }
}

/// Where a named feature is read from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TapRef {
    /// The network input itself.
    Input,
    /// Post-activation output of layer `i`.
    Layer(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tap {
    pub name: String,
    pub at: TapRef,
}

impl Tap {
    pub fn layer(name: impl Into<String>, index: usize) -> Self {
        Self {
            name: name.into(),
            at: TapRef::Layer(index),
        }
    }

    pub fn input(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            at: TapRef::Input,
        }
    }
}

/// Ordered layer list plus named feature taps.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelSpec {
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
    pub taps: Vec<Tap>,
}

impl ModelSpec {
    pub fn new(input_shape: Vec<usize>, layers: Vec<LayerSpec>, taps: Vec<Tap>) -> Result<Self> {
        let spec = Self {
            input_shape,
            layers,
            taps,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// MLP over `dims` (`[in, h1, ..., out]`) with relu hidden layers and a
    /// linear output. Every hidden layer gets a tap named `h{i}`.
    pub fn mlp(dims: &[usize]) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::InvalidSpec("an MLP needs at least two dims".into()));
        }
        let n = dims.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let act = if i + 1 == n {
                    Activation::Linear
                } else {
                    Activation::Relu
                };
                LayerSpec::dense(dims[i], dims[i + 1], act)
            })
            .collect();
        let taps = (0..n.saturating_sub(1))
            .map(|i| Tap::layer(format!("h{}", i + 1), i))
            .collect();
        Self::new(vec![dims[0]], layers, taps)
    }

    /// Per-sample activation shapes: entry 0 is the input, entry `i + 1` the
    /// output of layer `i`.
    pub fn activation_shapes(&self) -> Result<Vec<Vec<usize>>> {
        if self.input_shape.is_empty() || self.input_shape.contains(&0) {
            return Err(Error::InvalidSpec(format!(
                "invalid input shape {:?}",
                self.input_shape
            )));
        }
        let mut shapes = vec![self.input_shape.clone()];
        for (i, layer) in self.layers.iter().enumerate() {
            let next = layer
                .output_shape(shapes.last().expect("non-empty"))
                .map_err(|e| Error::InvalidSpec(format!("layer {i}: {e}")))?;
            shapes.push(next);
        }
        Ok(shapes)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::InvalidSpec("no layers".into()));
        }
        self.activation_shapes()?;
        for (i, tap) in self.taps.iter().enumerate() {
            if let TapRef::Layer(l) = tap.at {
                if l >= self.layers.len() {
                    return Err(Error::InvalidSpec(format!(
                        "tap `{}` refers to layer {l} of {}",
                        tap.name,
                        self.layers.len()
                    )));
                }
            }
            if self.taps[..i].iter().any(|t| t.name == tap.name) {
                return Err(Error::InvalidSpec(format!("duplicate tap `{}`", tap.name)));
            }
            if tap.name.is_empty() || tap.name.contains(char::is_whitespace) {
                return Err(Error::InvalidSpec(format!("bad tap name `{}`", tap.name)));
            }
        }
        Ok(())
    }

    pub fn output_shape(&self) -> Vec<usize> {
        self.activation_shapes()
            .expect("validated spec")
            .pop()
            .expect("non-empty")
    }

    pub fn input_size(&self) -> usize {
        self.input_shape.iter().product()
    }

    pub fn tap(&self, name: &str) -> Result<&Tap> {
        self.taps
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::UnknownTap(name.to_string()))
    }

    pub fn tap_names(&self) -> Vec<String> {
        self.taps.iter().map(|t| t.name.clone()).collect()
    }

    /// Total number of scalar parameters.
    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .filter_map(LayerSpec::weight_layout)
            .map(|(shape, _, _, bias)| shape.iter().product::<usize>() + bias)
            .sum()
    }

    /// Line-oriented text form used inside model files.
    pub fn to_descriptor(&self) -> String {
        let mut out = String::from("input");
        for d in &self.input_shape {
            out.push_str(&format!(" {d}"));
        }
        out.push('\n');
        for layer in &self.layers {
            out.push_str(&layer.to_string());
            out.push('\n');
        }
        for tap in &self.taps {
            match tap.at {
                TapRef::Input => out.push_str(&format!("tap {} input\n", tap.name)),
                TapRef::Layer(i) => out.push_str(&format!("tap {} {i}\n", tap.name)),
            }
        }
        out
    }

    pub fn from_descriptor(text: &str) -> Result<Self> {
        let mut input_shape = None;
        let mut layers = Vec::new();
        let mut taps = Vec::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let words: Vec<&str> = line.split_whitespace().collect();
            match words.as_slice() {
                ["input", dims @ ..] => {
                    let dims = dims
                        .iter()
                        .map(|d| {
                            d.parse::<usize>()
                                .map_err(|_| Error::InvalidSpec(format!("bad input line `{line}`")))
                        })
                        .collect::<Result<Vec<_>>>()?;
                    input_shape = Some(dims);
                }
                ["tap", name, "input"] => taps.push(Tap::input(*name)),
                ["tap", name, idx] => {
                    let idx = idx
                        .parse()
                        .map_err(|_| Error::InvalidSpec(format!("bad tap line `{line}`")))?;
                    taps.push(Tap::layer(*name, idx));
                }
                _ => layers.push(line.parse()?),
            }
        }
        let input_shape =
            input_shape.ok_or_else(|| Error::InvalidSpec("missing `input` line".into()))?;
        Self::new(input_shape, layers, taps)
    }
}
