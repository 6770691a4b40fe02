use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::mlp::Mlp;
use super::tape::Matrix;
use crate::error::{Error, Result};
use crate::registry::Registry;

pub const RMSPROP_DECAY: f64 = 0.99;
pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Rmsprop,
    Adam,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Rmsprop => "rmsprop",
            Algorithm::Adam => "adam",
        }
    }
}

pub fn optimizer_registry() -> Registry<Algorithm> {
    let mut r: Registry<Algorithm> = Registry::new("optimizer");
    r.register("rmsprop", Algorithm::Rmsprop)
        .register("adam", Algorithm::Adam);
    r
}

/// Per-parameter moment accumulators of one network's optimizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub algorithm: Algorithm,
    pub learning_rate: f64,
    /// Adam first moment; unused by RMSprop.
    first: Vec<Matrix>,
    /// Running mean of squared gradients.
    second: Vec<Matrix>,
    step: u64,
}

impl OptimizerState {
    pub fn new(algorithm: Algorithm, learning_rate: f64, params: &[Matrix]) -> Self {
        let zeros = || {
            params
                .iter()
                .map(|p| Array2::zeros(p.dim()))
                .collect::<Vec<_>>()
        };
        OptimizerState {
            algorithm,
            learning_rate,
            first: if algorithm == Algorithm::Adam {
                zeros()
            } else {
                Vec::new()
            },
            second: zeros(),
            step: 0,
        }
    }

    pub fn for_net(algorithm: Algorithm, learning_rate: f64, net: &Mlp) -> Self {
        Self::new(algorithm, learning_rate, net.params())
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update of `params` in place. Non-finite gradients abort the step
    /// before anything is modified.
    pub fn step(&mut self, params: &mut [Matrix], grads: &[Matrix]) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.second.len() {
            return Err(Error::Shape(format!(
                "{} parameter blocks, {} gradients, optimizer tracks {}",
                params.len(),
                grads.len(),
                self.second.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.dim() != g.dim() {
                return Err(Error::Shape(format!(
                    "{}: {:?} vs {:?}",
                    Mlp::block_name(i),
                    p.dim(),
                    g.dim()
                )));
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient(Mlp::block_name(i)));
            }
        }
        self.step += 1;
        let lr = self.learning_rate;
        match self.algorithm {
            Algorithm::Rmsprop => {
                for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut self.second) {
                    ndarray::Zip::from(p).and(g).and(v).for_each(|p, &g, v| {
                        *v = RMSPROP_DECAY * *v + (1.0 - RMSPROP_DECAY) * g * g;
                        *p -= lr * g / (v.sqrt() + EPSILON);
                    });
                }
            }
            Algorithm::Adam => {
                let t = self.step as i32;
                let c1 = 1.0 - ADAM_BETA1.powi(t);
                let c2 = 1.0 - ADAM_BETA2.powi(t);
                for (((p, g), m), v) in params
                    .iter_mut()
                    .zip(grads)
                    .zip(&mut self.first)
                    .zip(&mut self.second)
                {
                    ndarray::Zip::from(p)
                        .and(g)
                        .and(m)
                        .and(v)
                        .for_each(|p, &g, m, v| {
                            *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                            *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + EPSILON);
                        });
                }
            }
        }
        Ok(())
    }
}
