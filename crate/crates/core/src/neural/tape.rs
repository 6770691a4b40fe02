//! Reverse-mode gradient tape over row-batched matrices.
//!
//! Every value is a `batch × features` matrix. Nodes are appended in
//! evaluation order, so a backward sweep in reverse index order visits each
//! node after all of its consumers.

use ndarray::{s, Array2, Axis};

use crate::error::{Error, Result};

pub type Matrix = Array2<f64>;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddRow(Var, Var),
    Tanh(Var),
    Sigmoid(Var),
    Concat(Vec<Var>),
    Column(Var, usize),
    Mul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Affine(Var, f64),
    Square(Var),
    Mean(Var),
    SumCols(Var),
}

#[derive(Debug, Clone)]
struct Node {
    value: Matrix,
    op: Op,
}

#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Matrix>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    /// Input, constant, or parameter.
    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.ncols() != bv.nrows() {
            return Err(Error::Shape(format!(
                "matmul {:?} · {:?}",
                av.dim(),
                bv.dim()
            )));
        }
        let v = av.dot(bv);
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    /// `a + row`, broadcasting a `1 × n` row over the batch.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (av, rv) = (self.value(a), self.value(row));
        if rv.nrows() != 1 || rv.ncols() != av.ncols() {
            return Err(Error::Shape(format!(
                "add_row {:?} + {:?}",
                av.dim(),
                rv.dim()
            )));
        }
        let v = av + rv;
        Ok(self.push(v, Op::AddRow(a, row)))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    /// Column-wise concatenation; zero-width parts are allowed.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts
            .first()
            .map(|&p| self.value(p).nrows())
            .ok_or_else(|| Error::Shape("concat of nothing".into()))?;
        if parts.iter().any(|&p| self.value(p).nrows() != rows) {
            return Err(Error::Shape("concat parts differ in batch size".into()));
        }
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).map_err(|e| Error::Shape(e.to_string()))?;
        Ok(self.push(v, Op::Concat(parts.to_vec())))
    }

    pub fn column(&mut self, a: Var, j: usize) -> Result<Var> {
        let av = self.value(a);
        if j >= av.ncols() {
            return Err(Error::Shape(format!("column {j} of {:?}", av.dim())));
        }
        let v = av.slice(s![.., j..j + 1]).to_owned();
        Ok(self.push(v, Op::Column(a, j)))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.value(a).dim() != self.value(b).dim() {
            return Err(Error::Shape(format!(
                "{what} {:?} vs {:?}",
                self.value(a).dim(),
                self.value(b).dim()
            )));
        }
        Ok(())
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let v = self.value(a) * self.value(b);
        Ok(self.push(v, Op::Mul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let v = self.value(a) + self.value(b);
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let v = self.value(a) - self.value(b);
        Ok(self.push(v, Op::Sub(a, b)))
    }

    /// `scale · a + shift`.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        let v = self.value(a).mapv(|x| scale * x + shift);
        self.push(v, Op::Affine(a, scale))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x * x);
        self.push(v, Op::Square(a))
    }

    /// Mean of all entries as a `1 × 1` value.
    pub fn mean(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let m = av.sum() / av.len().max(1) as f64;
        self.push(Array2::from_elem((1, 1), m), Op::Mean(a))
    }

    /// Row sums as a `batch × 1` value.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let v = self.value(a).sum_axis(Axis(1)).insert_axis(Axis(1));
        self.push(v, Op::SumCols(a))
    }

    /// Propagates `seed` (shaped like `output`) back through the recorded graph.
    pub fn backward(&mut self, output: Var, seed: Matrix) -> Result<()> {
        if self.nodes.is_empty() || output.0 >= self.nodes.len() {
            return Err(Error::EmptyTape);
        }
        if seed.dim() != self.value(output).dim() {
            return Err(Error::Shape(format!(
                "seed {:?} for output {:?}",
                seed.dim(),
                self.value(output).dim()
            )));
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(seed);

        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let mut acc = |v: Var, delta: Matrix| match &mut grads[v.0] {
                Some(existing) => *existing += &delta,
                slot @ None => *slot = Some(delta),
            };
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    acc(*a, g.dot(&bv.t()));
                    acc(*b, av.t().dot(&g));
                }
                Op::AddRow(a, row) => {
                    acc(*row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    acc(*a, g.clone());
                }
                Op::Tanh(a) => acc(*a, &g * &node.value.mapv(|y| 1.0 - y * y)),
                Op::Sigmoid(a) => acc(*a, &g * &node.value.mapv(|y| y * (1.0 - y))),
                Op::Concat(parts) => {
                    let mut col = 0;
                    for p in parts {
                        let w = self.nodes[p.0].value.ncols();
                        acc(*p, g.slice(s![.., col..col + w]).to_owned());
                        col += w;
                    }
                }
                Op::Column(a, j) => {
                    let mut d = Array2::zeros(self.nodes[a.0].value.dim());
                    d.slice_mut(s![.., *j..*j + 1]).assign(&g);
                    acc(*a, d);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    acc(*a, &g * bv);
                    acc(*b, &g * av);
                }
                Op::Add(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, g.clone());
                }
                Op::Sub(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, -&g);
                }
                Op::Affine(a, scale) => acc(*a, &g * *scale),
                Op::Square(a) => acc(*a, &g * &self.nodes[a.0].value.mapv(|x| 2.0 * x)),
                Op::Mean(a) => {
                    let av = &self.nodes[a.0].value;
                    acc(
                        *a,
                        Array2::from_elem(av.dim(), g[[0, 0]] / av.len().max(1) as f64),
                    );
                }
                Op::SumCols(a) => {
                    let dim = self.nodes[a.0].value.dim();
                    acc(
                        *a,
                        g.broadcast(dim).expect("batch × 1 broadcasts").to_owned(),
                    );
                }
            }
            grads[i] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    /// Gradient of the last backward output w.r.t. `v`; zeros if `v` did
    /// not influence it.
    pub fn grad(&self, v: Var) -> Matrix {
        self.grads
            .get(v.0)
            .and_then(|g| g.clone())
            .unwrap_or_else(|| Array2::zeros(self.value(v).dim()))
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
