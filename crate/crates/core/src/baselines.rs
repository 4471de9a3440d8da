//! Softmax-based comparison detectors: maximum softmax probability with a
//! temperature, and ODIN (temperature plus a signed-gradient input nudge).

use crate::autodiff::{softmax_rows, Graph};
use crate::error::{Error, Result};
use crate::nets::network::argmax;
use crate::nets::Network;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaselineConfig {
    pub temperature: f64,
    pub epsilon: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            temperature: 1000.0,
            epsilon: 0.001,
        }
    }
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<()> {
        check_temperature(self.temperature)?;
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "epsilon must be >= 0, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

fn check_temperature(t: f64) -> Result<()> {
    if !(t.is_finite() && t > 0.0) {
        return Err(Error::InvalidConfig(format!("temperature must be > 0, got {t}")));
    }
    Ok(())
}

/// Largest entry of each row of `softmax(logits / T)`.
pub fn msp_from_logits(logits: &Tensor, temperature: f64) -> Result<Vec<f64>> {
    check_temperature(temperature)?;
    let probs = softmax_rows(logits, temperature);
    Ok((0..probs.rows())
        .map(|r| probs.row(r).iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect())
}

pub fn msp_score(classifier: &Network, x: &Tensor, temperature: f64) -> Result<Vec<f64>> {
    classifier.check_input(x)?;
    msp_from_logits(&classifier.predict(x)?, temperature)
}

/// Gradient of `log max_c softmax(logits / T)_c` with respect to the input.
pub fn log_msp_input_grad(classifier: &Network, x: &Tensor, temperature: f64) -> Result<Tensor> {
    check_temperature(temperature)?;
    classifier.check_input(x)?;
    let mut g = Graph::new();
    let input = g.input(x.clone())?;
    let logits = classifier.forward(&mut g, input)?;
    let lv = g.value(logits);
    let probs = softmax_rows(lv, temperature);
    let k = lv.row_len();
    let mut seed = Vec::with_capacity(lv.len());
    for r in 0..lv.rows() {
        let p = probs.row(r);
        let top = argmax(p);
        seed.extend((0..k).map(|j| (f64::from(u8::from(j == top)) - p[j]) / temperature));
    }
    g.backward_seeded(&[(logits, seed)])?;
    let grad = g
        .grad(input)
        .map_or_else(|| vec![0.0; x.len()], <[f64]>::to_vec);
    Tensor::new(x.shape().to_vec(), grad)
}

/// MSP at temperature `T` after moving `x` by `ε · sign(∇ log MSP)`.
/// With `ε = 0` this is exactly [`msp_score`].
pub fn odin_score(classifier: &Network, x: &Tensor, cfg: &BaselineConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    if cfg.epsilon == 0.0 {
        return msp_score(classifier, x, cfg.temperature);
    }
    let grad = log_msp_input_grad(classifier, x, cfg.temperature)?;
    let nudged: Vec<f64> = x
        .data()
        .iter()
        .zip(grad.data())
        .map(|(v, g)| {
            let s = if *g > 0.0 {
                1.0
            } else if *g < 0.0 {
                -1.0
            } else {
                0.0
            };
            v + cfg.epsilon * s
        })
        .collect();
    msp_score(classifier, &Tensor::new(x.shape().to_vec(), nudged)?, cfg.temperature)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::ModelSpec;

    fn logits(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn reference_values() {
        let s = msp_from_logits(&logits(&[&[1000.0, 0.0], &[2.0, 1.0]]), 1.0).unwrap();
        assert!((s[0] - 1.0).abs() < 1e-15);
        let e = (2f64).exp() / ((2f64).exp() + 1f64.exp());
        assert!((s[1] - e).abs() < 1e-15);
        assert!((s[1] - 0.7311).abs() < 1e-4);
        assert_eq!(msp_from_logits(&logits(&[&[0.0; 4]]), 1.0).unwrap(), vec![0.25]);
        let uniform = msp_from_logits(&logits(&[&[0.0; 4]]), 37.0).unwrap();
        assert_eq!(uniform, vec![0.25]);
    }

    #[test]
    fn high_temperature_flattens() {
        let s = msp_from_logits(&logits(&[&[3.0, -1.0, 0.5]]), 1e6).unwrap();
        assert!((s[0] - 1.0 / 3.0).abs() < 1e-4);
        assert!(msp_from_logits(&logits(&[&[1.0]]), 0.0).is_err());
    }

    #[test]
    fn odin_reduces_to_msp() {
        let net = Network::build(ModelSpec::mlp(&[3, 5, 4]).unwrap(), 2).unwrap();
        let x = Tensor::from_rows(&[vec![0.3, -1.0, 2.0], vec![1.0, 1.0, -0.5]]).unwrap();
        for t in [1.0, 1000.0] {
            let cfg = BaselineConfig {
                temperature: t,
                epsilon: 0.0,
            };
            assert_eq!(odin_score(&net, &x, &cfg).unwrap(), msp_score(&net, &x, t).unwrap());
        }
    }

    #[test]
    fn odin_raises_max_softmax() {
        let net = Network::build(ModelSpec::mlp(&[3, 5, 4]).unwrap(), 2).unwrap();
        let x = Tensor::from_rows(&[vec![0.3, -1.0, 2.0], vec![1.0, 1.0, -0.5]]).unwrap();
        let cfg = BaselineConfig {
            temperature: 1.0,
            epsilon: 1e-3,
        };
        let odin = odin_score(&net, &x, &cfg).unwrap();
        let msp = msp_score(&net, &x, 1.0).unwrap();
        assert!(odin.iter().zip(&msp).all(|(o, m)| o >= m));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let net = Network::build(ModelSpec::mlp(&[2, 6, 3]).unwrap(), 11).unwrap();
        let x = Tensor::from_rows(&[vec![0.4, -0.7]]).unwrap();
        let t = 2.0;
        let g = log_msp_input_grad(&net, &x, t).unwrap();
        let h = 1e-6;
        for i in 0..2 {
            let mut plus = x.clone();
            plus.data_mut()[i] += h;
            let mut minus = x.clone();
            minus.data_mut()[i] -= h;
            let f = |v: &Tensor| msp_score(&net, v, t).unwrap()[0].ln();
            let fd = (f(&plus) - f(&minus)) / (2.0 * h);
            assert!((fd - g.data()[i]).abs() < 1e-6, "{fd} vs {}", g.data()[i]);
        }
    }
}
