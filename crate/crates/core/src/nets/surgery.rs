use crate::error::{Error, Result};
use crate::nets::network::{param_names, NetKind, Network};
use crate::nets::spec::{Activation, LayerSpec, ModelSpec};

/// Where to cut a classifier and what to attach in place of its head.
///
/// `sever_at` counts the classifier layers kept as the encoder, so the
/// decoder reads the output of layer `sever_at - 1` (activation index
/// `sever_at`, with index 0 being the input).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SurgeryPlan {
    pub sever_at: usize,
    pub decoder: ModelSpec,
}

impl SurgeryPlan {
    /// Mirror of the kept encoder: the encoder's parametric layer widths in
    /// reverse order, relu hidden layers and a linear output, followed by a
    /// reshape when the input is not a flat vector.
    pub fn mirrored(classifier: &ModelSpec, sever_at: usize) -> Result<Self> {
        check_sever(classifier, sever_at)?;
        let shapes = classifier.activation_shapes()?;
        let code_shape = shapes[sever_at].clone();
        let mut widths = vec![classifier.input_size()];
        for (i, layer) in classifier.layers[..sever_at].iter().enumerate() {
            if layer.has_params() {
                widths.push(shapes[i + 1].iter().product());
            }
        }
        let code_size: usize = code_shape.iter().product();
        if widths.last() != Some(&code_size) {
            widths.push(code_size);
        }
        widths.reverse();
        let mut layers = Vec::new();
        if code_shape.len() > 1 {
            layers.push(LayerSpec::flatten());
        }
        let n = widths.len() - 1;
        for i in 0..n {
            let act = if i + 1 == n {
                Activation::Linear
            } else {
                Activation::Relu
            };
            layers.push(LayerSpec::dense(widths[i], widths[i + 1], act));
        }
        if classifier.input_shape.len() > 1 {
            layers.push(LayerSpec::reshape(classifier.input_shape.clone()));
        }
        let decoder = ModelSpec::new(code_shape, layers, vec![])?;
        Ok(Self { sever_at, decoder })
    }

    pub fn validate(&self, classifier: &ModelSpec) -> Result<()> {
        check_sever(classifier, self.sever_at)?;
        let shapes = classifier.activation_shapes()?;
        if self.decoder.input_shape != shapes[self.sever_at] {
            return Err(Error::InvalidSurgery(format!(
                "decoder input {:?} does not match activation {:?} at layer {}",
                self.decoder.input_shape, shapes[self.sever_at], self.sever_at
            )));
        }
        let out = self.decoder.output_shape();
        if out != classifier.input_shape {
            return Err(Error::InvalidSurgery(format!(
                "decoder output {out:?} does not match network input {:?}",
                classifier.input_shape
            )));
        }
        Ok(())
    }
}

fn check_sever(classifier: &ModelSpec, sever_at: usize) -> Result<()> {
    let n = classifier.layers.len();
    if sever_at == 0 || sever_at >= n {
        return Err(Error::InvalidSurgery(format!(
            "sever_at must be in 1..{n} (keeps at least one layer and drops at least one), got {sever_at}"
        )));
    }
    Ok(())
}

/// Cuts `net` after `plan.sever_at` layers and appends a freshly initialized
/// decoder. The encoder layers keep their weights.
pub fn sever_and_attach(net: &Network, plan: &SurgeryPlan, seed: u64) -> Result<Network> {
    if net.kind() != NetKind::Classifier {
        return Err(Error::InvalidSurgery(format!(
            "surgery needs a classifier, got {}",
            net.kind()
        )));
    }
    plan.validate(net.spec())?;
    let encoder = net.truncate(plan.sever_at, NetKind::Encoder)?;
    let decoder = Network::build_as(plan.decoder.clone(), NetKind::Decoder, seed)?;
    let offset = plan.sever_at;

    let (enc_spec, _, mut params) = encoder.into_parts();
    let (dec_spec, _, dec_params) = decoder.into_parts();
    for (j, layer) in dec_spec.layers.iter().enumerate() {
        if layer.has_params() {
            let (wn, bn) = param_names(j);
            let (new_w, new_b) = param_names(j + offset);
            for p in &dec_params {
                if p.name == wn {
                    params.push(crate::autodiff::Parameter::new(new_w.clone(), p.tensor.clone()));
                } else if p.name == bn {
                    params.push(crate::autodiff::Parameter::new(new_b.clone(), p.tensor.clone()));
                }
            }
        }
    }
    let mut layers = enc_spec.layers;
    layers.extend(dec_spec.layers);
    let spec = ModelSpec::new(enc_spec.input_shape, layers, enc_spec.taps)?;
    Network::from_parts(
        spec,
        NetKind::EncoderDecoder {
            encoder_layers: offset,
        },
        params,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{Graph, Sgd};
    use crate::tensor::Tensor;

    fn classifier() -> Network {
        Network::build(ModelSpec::mlp(&[2, 8, 4, 3]).unwrap(), 21).unwrap()
    }

    #[test]
    fn mirrored_decoder_shape() {
        let net = classifier();
        let plan = SurgeryPlan::mirrored(net.spec(), 1).unwrap();
        assert_eq!(plan.decoder.layers, vec![LayerSpec::dense(8, 2, Activation::Linear)]);
        let ed = sever_and_attach(&net, &plan, 3).unwrap();
        assert_eq!(ed.kind(), NetKind::EncoderDecoder { encoder_layers: 1 });
        let x = Tensor::new(vec![5, 2], vec![0.5; 10]).unwrap();
        assert_eq!(ed.predict(&x).unwrap().shape(), &[5, 2]);
    }

    #[test]
    fn deeper_mirror() {
        let net = classifier();
        let plan = SurgeryPlan::mirrored(net.spec(), 2).unwrap();
        assert_eq!(
            plan.decoder.layers,
            vec![
                LayerSpec::dense(4, 8, Activation::Relu),
                LayerSpec::dense(8, 2, Activation::Linear)
            ]
        );
    }

    #[test]
    fn sever_at_last_layer_rejected() {
        let net = classifier();
        assert!(matches!(
            SurgeryPlan::mirrored(net.spec(), 3),
            Err(Error::InvalidSurgery(_))
        ));
        assert!(SurgeryPlan::mirrored(net.spec(), 0).is_err());
    }

    #[test]
    fn decoder_shape_mismatch_rejected() {
        let net = classifier();
        let plan = SurgeryPlan {
            sever_at: 1,
            decoder: ModelSpec::mlp(&[8, 3]).unwrap(),
        };
        assert!(matches!(
            sever_and_attach(&net, &plan, 0),
            Err(Error::InvalidSurgery(_))
        ));
    }

    #[test]
    fn only_classifiers_can_be_severed() {
        let net = classifier();
        let plan = SurgeryPlan::mirrored(net.spec(), 1).unwrap();
        let ed = sever_and_attach(&net, &plan, 0).unwrap();
        assert!(sever_and_attach(&ed, &plan, 0).is_err());
    }

    #[test]
    fn encoder_weights_retained() {
        let net = classifier();
        let plan = SurgeryPlan::mirrored(net.spec(), 2).unwrap();
        let ed = sever_and_attach(&net, &plan, 4).unwrap();
        assert_eq!(&ed.params()[..4], &net.params()[..4]);
        let enc = ed.encoder_half().unwrap();
        assert_eq!(enc.params(), &net.params()[..4]);
    }

    #[test]
    fn duplicate_is_isolated() {
        let net = classifier();
        let before = net.param_bytes();
        let mut copy = net.duplicate();
        assert_eq!(copy, net);
        assert_eq!(copy.duplicate(), net);

        let mut g = Graph::new();
        let x = g.input(Tensor::new(vec![1, 2], vec![1.0, -1.0]).unwrap()).unwrap();
        let out = copy.forward(&mut g, x).unwrap();
        let loss = g.softmax_cross_entropy(out, &[1]).unwrap();
        g.backward(loss).unwrap();
        Sgd::new(0.5).unwrap().step(copy.params_mut(), &g.param_grads()).unwrap();

        assert_ne!(copy.param_bytes(), before);
        assert_eq!(net.param_bytes(), before);
    }

    #[test]
    fn conv_mirror_reshapes_to_input() {
        let spec = ModelSpec::new(
            vec![8, 8, 1],
            vec![
                "conv 8 8 1 3 3 1 relu".parse().unwrap(),
                LayerSpec::flatten(),
                LayerSpec::dense(108, 2, Activation::Linear),
            ],
            vec![],
        )
        .unwrap();
        let net = Network::build(spec, 1).unwrap();
        let plan = SurgeryPlan::mirrored(net.spec(), 1).unwrap();
        assert_eq!(
            plan.decoder.layers,
            vec![
                LayerSpec::flatten(),
                LayerSpec::dense(108, 64, Activation::Linear),
                LayerSpec::reshape(vec![8, 8, 1]),
            ]
        );
        let ed = sever_and_attach(&net, &plan, 2).unwrap();
        let x = Tensor::new(vec![2, 8, 8, 1], vec![0.1; 128]).unwrap();
        assert_eq!(ed.predict(&x).unwrap().shape(), &[2, 8, 8, 1]);
    }
}
