//! Small dense networks with a reverse-mode tape, optimizers and
//! JSON checkpoints.

mod checkpoint;
mod mlp;
mod optim;
mod tape;

pub use checkpoint::{load_json, save_json};
pub use mlp::{Activation, Mlp, ParamVars};
pub use optim::{optimizer_registry, Algorithm, OptimizerState};
pub use tape::{sigmoid, Matrix, Tape, Var};

use rand::Rng;
use rand_distr::{Distribution, Normal};

/// `dim` independent draws from N(0, std²).
pub fn gaussian_noise(dim: usize, std: f64, rng: &mut impl Rng) -> Vec<f64> {
    if std == 0.0 {
        return vec![0.0; dim];
    }
    let normal = Normal::new(0.0, std).expect("finite positive std");
    (0..dim).map(|_| normal.sample(rng)).collect()
}
