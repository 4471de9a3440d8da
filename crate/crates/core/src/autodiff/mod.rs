//! Reverse-mode differentiation over a recorded tape, plus plain SGD.
//!
//! The op set is deliberately small: dense, strided conv2d, relu, tanh,
//! elementwise add/mul, reshape/flatten, global mean pooling, and the three
//! losses (fused softmax cross-entropy, MSE, binary cross-entropy on logits).

mod graph;

pub use graph::{log_sum_exp, softmax_rows, GradMap, Graph, NodeId};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A named trainable tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub tensor: Tensor,
}

impl Parameter {
    pub fn new(name: impl Into<String>, tensor: Tensor) -> Self {
        Self {
            name: name.into(),
            tensor,
        }
    }
}

/// Plain stochastic gradient descent: `w' = w - η·g`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sgd {
    learning_rate: f64,
    step_count: u64,
}

impl Sgd {
    /// `learning_rate` must be finite and non-negative. Zero is accepted and
    /// turns every step into the identity.
    pub fn new(learning_rate: f64) -> Result<Self> {
        if !learning_rate.is_finite() || learning_rate < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "learning rate must be finite and >= 0, got {learning_rate}"
            )));
        }
        Ok(Self {
            learning_rate,
            step_count: 0,
        })
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// Applies one update to every parameter. Fails without touching anything
    /// if a gradient is missing or has the wrong shape.
    pub fn step(&mut self, params: &mut [Parameter], grads: &GradMap) -> Result<()> {
        for p in params.iter() {
            let g = grads
                .get(&p.name)
                .ok_or_else(|| Error::MissingGradient(p.name.clone()))?;
            if g.shape() != p.tensor.shape() {
                return Err(Error::shape(
                    "sgd_step",
                    format!("{}: grad {:?} vs param {:?}", p.name, g.shape(), p.tensor.shape()),
                ));
            }
            if !g.all_finite() {
                return Err(Error::NonFiniteGradient(p.name.clone()));
            }
        }
        for p in params.iter_mut() {
            let g = &grads[&p.name];
            for (w, &d) in p.tensor.data_mut().iter_mut().zip(g.data()) {
                *w -= self.learning_rate * d;
            }
        }
        self.step_count += 1;
        Ok(())
    }
}

/// Seeded generator used for every random draw in the crate.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Glorot-uniform weights: `U(-a, a)` with `a = sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform<R: Rng>(rng: &mut R, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape product matches")
}
