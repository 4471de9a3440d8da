use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::autodiff::{glorot_uniform, rng_from_seed, Graph, NodeId, Parameter};
use crate::error::{Error, Result};
use crate::nets::spec::{Activation, LayerKind, ModelSpec, TapRef};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NetKind {
    Classifier,
    Encoder,
    Decoder,
    /// Encoder layers `[0, encoder_layers)` followed by decoder layers.
    EncoderDecoder { encoder_layers: usize },
}

impl fmt::Display for NetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NetKind::Classifier => f.write_str("classifier"),
            NetKind::Encoder => f.write_str("encoder"),
            NetKind::Decoder => f.write_str("decoder"),
            NetKind::EncoderDecoder { encoder_layers } => {
                write!(f, "encoder_decoder {encoder_layers}")
            }
        }
    }
}

impl FromStr for NetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let words: Vec<&str> = s.split_whitespace().collect();
        match words.as_slice() {
            ["classifier"] => Ok(NetKind::Classifier),
            ["encoder"] => Ok(NetKind::Encoder),
            ["decoder"] => Ok(NetKind::Decoder),
            ["encoder_decoder", n] => n
                .parse()
                .map(|encoder_layers| NetKind::EncoderDecoder { encoder_layers })
                .map_err(|_| Error::InvalidSpec(format!("bad kind `{s}`"))),
            _ => Err(Error::InvalidSpec(format!("unknown network kind `{s}`"))),
        }
    }
}

/// An instantiated [`ModelSpec`]. Parameters are stored in layer order,
/// weight before bias, named `l{index}.weight` / `l{index}.bias`.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    spec: ModelSpec,
    params: Vec<Parameter>,
    kind: NetKind,
}

pub(crate) fn param_names(layer: usize) -> (String, String) {
    (format!("l{layer}.weight"), format!("l{layer}.bias"))
}

impl Network {
    /// Builds a classifier with Glorot-uniform weights and zero biases.
    pub fn build(spec: ModelSpec, seed: u64) -> Result<Self> {
        Self::build_as(spec, NetKind::Classifier, seed)
    }

    pub fn build_as(spec: ModelSpec, kind: NetKind, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = rng_from_seed(seed);
        let mut params = Vec::new();
        for (i, layer) in spec.layers.iter().enumerate() {
            if let Some((shape, fan_in, fan_out, bias)) = layer.weight_layout() {
                let (wn, bn) = param_names(i);
                params.push(Parameter::new(wn, glorot_uniform(&mut rng, &shape, fan_in, fan_out)));
                params.push(Parameter::new(bn, Tensor::zeros(&[bias])));
            }
        }
        Ok(Self { spec, params, kind })
    }

    /// Assembles a network from explicit parameters, checking they cover the
    /// spec's layer shapes exactly.
    pub fn from_parts(spec: ModelSpec, kind: NetKind, params: Vec<Parameter>) -> Result<Self> {
        spec.validate()?;
        let mut expected = Vec::new();
        for (i, layer) in spec.layers.iter().enumerate() {
            if let Some((shape, _, _, bias)) = layer.weight_layout() {
                let (wn, bn) = param_names(i);
                expected.push((wn, shape));
                expected.push((bn, vec![bias]));
            }
        }
        if expected.len() != params.len() {
            return Err(Error::InvalidSpec(format!(
                "spec needs {} parameter tensors, got {}",
                expected.len(),
                params.len()
            )));
        }
        for ((name, shape), p) in expected.iter().zip(&params) {
            if &p.name != name || p.tensor.shape() != shape.as_slice() {
                return Err(Error::InvalidSpec(format!(
                    "parameter `{}` {:?} does not match expected `{name}` {shape:?}",
                    p.name,
                    p.tensor.shape()
                )));
            }
        }
        if let NetKind::EncoderDecoder { encoder_layers } = kind {
            if encoder_layers == 0 || encoder_layers >= spec.layers.len() {
                return Err(Error::InvalidSpec(format!(
                    "encoder split {encoder_layers} outside 1..{}",
                    spec.layers.len()
                )));
            }
        }
        Ok(Self { spec, params, kind })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn kind(&self) -> NetKind {
        self.kind
    }

    pub fn params(&self) -> &[Parameter] {
        &self.params
    }

    /// Mutable access for training.
    pub fn params_mut(&mut self) -> &mut [Parameter] {
        &mut self.params
    }

    pub fn into_parts(self) -> (ModelSpec, NetKind, Vec<Parameter>) {
        (self.spec, self.kind, self.params)
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    /// Concatenated little-endian bytes of every parameter.
    pub fn param_bytes(&self) -> Vec<u8> {
        self.params.iter().flat_map(|p| p.tensor.to_le_bytes()).collect()
    }

    /// Deep copy. The copy shares no storage with `self`.
    pub fn duplicate(&self) -> Self {
        self.clone()
    }

    fn layer_params(&self, layer: usize) -> Option<(&Parameter, &Parameter)> {
        let (wn, _) = param_names(layer);
        let pos = self.params.iter().position(|p| p.name == wn)?;
        Some((&self.params[pos], &self.params[pos + 1]))
    }

    /// Checks `x` is `[B, ...input_shape]`.
    pub fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.rank() < 2 || x.shape()[1..] != self.spec.input_shape[..] {
            return Err(Error::shape(
                "network input",
                format!(
                    "expected [B, {:?}], got {:?}",
                    self.spec.input_shape,
                    x.shape()
                ),
            ));
        }
        Ok(())
    }

    /// Records the forward pass of layers `[0, upto)` on `g`. Returns the
    /// post-activation node of each layer.
    pub fn forward_layers(&self, g: &mut Graph, x: NodeId, upto: usize) -> Result<Vec<NodeId>> {
        self.check_input(g.value(x))?;
        let mut outputs = Vec::with_capacity(upto);
        let mut h = x;
        for (i, layer) in self.spec.layers.iter().take(upto).enumerate() {
            let batch = g.value(h).rows();
            let pre = match &layer.kind {
                LayerKind::Dense { .. } => {
                    let (w, b) = self.layer_params(i).expect("validated parameters");
                    let (w, b) = (g.param(w)?, g.param(b)?);
                    g.dense(h, w, b)?
                }
                LayerKind::Conv2d { stride, .. } => {
                    let (w, b) = self.layer_params(i).expect("validated parameters");
                    let (w, b) = (g.param(w)?, g.param(b)?);
                    g.conv2d(h, w, b, *stride)?
                }
                LayerKind::Flatten => g.flatten(h)?,
                LayerKind::Reshape { shape } => {
                    let mut full = vec![batch];
                    full.extend_from_slice(shape);
                    g.reshape(h, &full)?
                }
            };
            h = match layer.activation {
                Activation::Linear => pre,
                Activation::Relu => g.relu(pre)?,
                Activation::Tanh => g.tanh(pre)?,
            };
            outputs.push(h);
        }
        Ok(outputs)
    }

    /// Records the full forward pass and returns the output node.
    pub fn forward(&self, g: &mut Graph, x: NodeId) -> Result<NodeId> {
        let outs = self.forward_layers(g, x, self.spec.layers.len())?;
        Ok(*outs.last().expect("at least one layer"))
    }

    /// Output for a batch, without keeping the graph.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let input = g.input(x.clone())?;
        let out = self.forward(&mut g, input)?;
        Ok(g.value(out).clone())
    }

    /// Argmax of the output per row.
    pub fn predict_classes(&self, x: &Tensor) -> Result<Vec<usize>> {
        let out = self.predict(x)?;
        Ok((0..out.rows()).map(|r| argmax(out.row(r))).collect())
    }

    /// Records the layers needed for `taps` and returns one `[B, d]` feature
    /// node per tap. Spatial activations are mean-pooled per channel.
    pub fn feature_nodes(&self, g: &mut Graph, x: NodeId, taps: &[String]) -> Result<Vec<NodeId>> {
        let refs = taps
            .iter()
            .map(|t| self.spec.tap(t).map(|tap| tap.at))
            .collect::<Result<Vec<_>>>()?;
        let depth = refs
            .iter()
            .map(|r| match r {
                TapRef::Input => 0,
                TapRef::Layer(i) => i + 1,
            })
            .max()
            .unwrap_or(0);
        let outputs = self.forward_layers(g, x, depth)?;
        let mut nodes = Vec::with_capacity(taps.len());
        for r in refs {
            let node = match r {
                TapRef::Input => x,
                TapRef::Layer(i) => outputs[i],
            };
            let node = match g.value(node).rank() {
                2 => node,
                4 => g.mean_pool(node)?,
                _ => g.flatten(node)?,
            };
            nodes.push(node);
        }
        Ok(nodes)
    }

    /// Per-tap feature matrices `[B, d]` for a batch.
    pub fn extract_features(&self, x: &Tensor, taps: &[String]) -> Result<BTreeMap<String, Tensor>> {
        let mut g = Graph::new();
        let input = g.input(x.clone())?;
        let nodes = self.feature_nodes(&mut g, input, taps)?;
        Ok(taps
            .iter()
            .zip(nodes)
            .map(|(t, n)| (t.clone(), g.value(n).clone()))
            .collect())
    }

    /// The first `n` layers as a standalone network of the given kind. Taps
    /// pointing past the cut are dropped.
    pub fn truncate(&self, n: usize, kind: NetKind) -> Result<Self> {
        if n == 0 || n > self.spec.layers.len() {
            return Err(Error::InvalidSurgery(format!(
                "cannot keep {n} of {} layers",
                self.spec.layers.len()
            )));
        }
        let taps = self
            .spec
            .taps
            .iter()
            .filter(|t| match t.at {
                TapRef::Input => true,
                TapRef::Layer(i) => i < n,
            })
            .cloned()
            .collect();
        let spec = ModelSpec::new(
            self.spec.input_shape.clone(),
            self.spec.layers[..n].to_vec(),
            taps,
        )?;
        let keep: Vec<String> = (0..n)
            .flat_map(|i| {
                let (w, b) = param_names(i);
                [w, b]
            })
            .collect();
        let params = self
            .params
            .iter()
            .filter(|p| keep.contains(&p.name))
            .cloned()
            .collect();
        Self::from_parts(spec, kind, params)
    }

    /// For an encoder-decoder, the encoder half.
    pub fn encoder_half(&self) -> Result<Self> {
        match self.kind {
            NetKind::EncoderDecoder { encoder_layers } => {
                self.truncate(encoder_layers, NetKind::Encoder)
            }
            other => Err(Error::InvalidSurgery(format!(
                "network of kind {other} has no encoder half"
            ))),
        }
    }
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}
