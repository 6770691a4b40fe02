use ndarray::{Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tape::{sigmoid, Matrix, Tape, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Tanh,
    Sigmoid,
}

impl Activation {
    fn apply(self, m: &mut Matrix) {
        match self {
            Activation::Identity => {}
            Activation::Tanh => m.mapv_inplace(f64::tanh),
            Activation::Sigmoid => m.mapv_inplace(sigmoid),
        }
    }

    fn record(self, tape: &mut Tape, v: Var) -> Var {
        match self {
            Activation::Identity => v,
            Activation::Tanh => tape.tanh(v),
            Activation::Sigmoid => tape.sigmoid(v),
        }
    }
}

/// Fully connected network. Parameters are stored as `[W0, b0, W1, b1, …]`
/// with `W_k: in × out` and `b_k: 1 × out`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    sizes: Vec<usize>,
    hidden: Activation,
    output: Activation,
    params: Vec<Matrix>,
}

/// Parameter handles of one taped forward pass.
#[derive(Debug, Clone)]
pub struct ParamVars(Vec<Var>);

impl ParamVars {
    /// Gradients in parameter order, read from a tape after `backward`.
    pub fn grads(&self, tape: &Tape) -> Vec<Matrix> {
        self.0.iter().map(|&v| tape.grad(v)).collect()
    }
}

impl Mlp {
    /// Uniform init in `±1/√fan_in` for weights and biases.
    pub fn new(
        sizes: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut impl Rng,
    ) -> Self {
        let mut net = Self::zeros(sizes, hidden, output);
        for k in 0..sizes.len() - 1 {
            let bound = 1.0 / (sizes[k] as f64).sqrt();
            for p in &mut net.params[2 * k..2 * k + 2] {
                p.mapv_inplace(|_| rng.random_range(-bound..=bound));
            }
        }
        net
    }

    pub fn zeros(sizes: &[usize], hidden: Activation, output: Activation) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output sizes");
        let params = sizes
            .windows(2)
            .flat_map(|w| [Array2::zeros((w[0], w[1])), Array2::zeros((1, w[1]))])
            .collect();
        Mlp {
            sizes: sizes.to_vec(),
            hidden,
            output,
            params,
        }
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn params(&self) -> &[Matrix] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Matrix] {
        &mut self.params
    }

    pub fn n_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    /// Human-readable name of parameter block `i`.
    pub fn block_name(i: usize) -> String {
        format!(
            "layer {} {}",
            i / 2,
            if i % 2 == 0 { "weights" } else { "biases" }
        )
    }

    fn check_input(&self, cols: usize) -> Result<()> {
        if cols != self.input_dim() {
            return Err(Error::Shape(format!(
                "input width {cols}, network expects {}",
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Batched forward pass without recording.
    pub fn forward(&self, input: ArrayView2<f64>) -> Result<Matrix> {
        self.check_input(input.ncols())?;
        let mut h = input.to_owned();
        for k in 0..self.n_layers() {
            let mut z = h.dot(&self.params[2 * k]) + &self.params[2 * k + 1];
            let act = if k + 1 == self.n_layers() {
                self.output
            } else {
                self.hidden
            };
            act.apply(&mut z);
            h = z;
        }
        Ok(h)
    }

    /// Single-sample forward pass.
    pub fn forward_vec(&self, input: &[f64]) -> Result<Vec<f64>> {
        let x = ArrayView2::from_shape((1, input.len()), input).expect("row vector");
        Ok(self.forward(x)?.into_raw_vec_and_offset().0)
    }

    /// Records the forward pass of `input` on `tape`.
    pub fn forward_tape(&self, tape: &mut Tape, input: Var) -> Result<(Var, ParamVars)> {
        self.check_input(tape.value(input).ncols())?;
        let mut vars = Vec::with_capacity(self.params.len());
        let mut h = input;
        for k in 0..self.n_layers() {
            let w = tape.leaf(self.params[2 * k].clone());
            let b = tape.leaf(self.params[2 * k + 1].clone());
            vars.extend([w, b]);
            let z = tape.matmul(h, w)?;
            let z = tape.add_row(z, b)?;
            let act = if k + 1 == self.n_layers() {
                self.output
            } else {
                self.hidden
            };
            h = act.record(tape, z);
        }
        Ok((h, ParamVars(vars)))
    }

    /// Records `mean((net(input) − target)²)`.
    pub fn mse_tape(
        &self,
        tape: &mut Tape,
        input: &Matrix,
        target: &Matrix,
    ) -> Result<(Var, ParamVars)> {
        let x = tape.leaf(input.clone());
        let (q, pv) = self.forward_tape(tape, x)?;
        let t = tape.leaf(target.clone());
        let d = tape.sub(q, t)?;
        let sq = tape.square(d);
        Ok((tape.mean(sq), pv))
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.iter().all(|v| v.is_finite()))
    }
}
