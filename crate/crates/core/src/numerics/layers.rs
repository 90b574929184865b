//! Fully connected layers and multi-layer perceptrons.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{ops, Graph, Matrix, NodeId};
use crate::scalar::Scalar;

/// Glorot-uniform matrix: entries in `±sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform<S: Scalar, R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Matrix<S> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Matrix::from_fn(fan_in, fan_out, |_, _| S::of(rng.random_range(-limit..=limit)))
}

/// Affine map `x W + b` applied row-wise; `W` is `in x out`, `b` is `1 x out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense<S> {
    pub weight: Matrix<S>,
    pub bias: Matrix<S>,
}

#[derive(Clone, Copy, Debug)]
pub struct DenseIds {
    pub weight: NodeId,
    pub bias: NodeId,
}

impl<S: Scalar> Dense<S> {
    pub fn init<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        Self {
            weight: glorot_uniform(fan_in, fan_out, rng),
            bias: Matrix::zeros(1, fan_out),
        }
    }

    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: Matrix::zeros(fan_in, fan_out),
            bias: Matrix::zeros(1, fan_out),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.rows()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.cols()
    }

    pub fn bind<'a>(&'a self, g: &mut Graph<'a, S>) -> DenseIds {
        DenseIds {
            weight: g.param(&self.weight),
            bias: g.param(&self.bias),
        }
    }

    pub fn forward(ids: DenseIds, g: &mut Graph<'_, S>, x: NodeId) -> Result<NodeId> {
        let xw = g.matmul(x, ids.weight)?;
        g.add_row(xw, ids.bias)
    }

    /// Graph-free evaluation.
    pub fn eval(&self, x: &Matrix<S>) -> Result<Matrix<S>> {
        let mut out = x.matmul(&self.weight)?;
        let cols = out.cols();
        for row in out.data_mut().chunks_mut(cols.max(1)) {
            for (o, &b) in row.iter_mut().zip(self.bias.data()) {
                *o += b;
            }
        }
        Ok(out)
    }

    pub fn tensors(&self) -> [&Matrix<S>; 2] {
        [&self.weight, &self.bias]
    }

    pub fn tensors_mut(&mut self) -> [&mut Matrix<S>; 2] {
        [&mut self.weight, &mut self.bias]
    }
}

/// Stack of [`Dense`] layers with ReLU between them and a linear output.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp<S> {
    pub layers: Vec<Dense<S>>,
}

#[derive(Clone, Debug)]
pub struct MlpIds(pub Vec<DenseIds>);

impl<S: Scalar> Mlp<S> {
    /// `widths` lists input width, hidden widths, then output width.
    pub fn init<R: Rng + ?Sized>(widths: &[usize], rng: &mut R) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::Param(format!(
                "an MLP needs at least input and output widths, got {widths:?}"
            )));
        }
        if let Some(&w) = widths.iter().find(|&&w| w == 0) {
            return Err(Error::Param(format!("MLP width must be >= 1, got {w}")));
        }
        let layers = widths.windows(2).map(|w| Dense::init(w[0], w[1], rng)).collect();
        Ok(Self { layers })
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn output_width(&self) -> usize {
        self.layers[self.layers.len() - 1].fan_out()
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_width()];
        w.extend(self.layers.iter().map(Dense::fan_out));
        w
    }

    pub fn bind<'a>(&'a self, g: &mut Graph<'a, S>) -> MlpIds {
        MlpIds(self.layers.iter().map(|l| l.bind(g)).collect())
    }

    pub fn forward(ids: &MlpIds, g: &mut Graph<'_, S>, x: NodeId) -> Result<NodeId> {
        let last = ids.0.len() - 1;
        let mut h = x;
        for (i, layer) in ids.0.iter().enumerate() {
            h = Dense::forward(*layer, g, h)?;
            if i < last {
                h = g.relu(h);
            }
        }
        Ok(h)
    }

    pub fn eval(&self, x: &Matrix<S>) -> Result<Matrix<S>> {
        if x.cols() != self.input_width() {
            return Err(Error::shape(
                "mlp",
                format!("input width {} but MLP expects {}", x.cols(), self.input_width()),
            ));
        }
        let last = self.layers.len() - 1;
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.eval(&h)?;
            if i < last {
                h = ops::relu(&h);
            }
        }
        Ok(h)
    }

    /// `(name, tensor)` pairs in binding order.
    pub fn named_tensors(&self, prefix: &str) -> Vec<(String, &Matrix<S>)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| {
                [
                    (format!("{prefix}.layer{i}.weight"), &l.weight),
                    (format!("{prefix}.layer{i}.bias"), &l.bias),
                ]
            })
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix<S>> {
        self.layers.iter_mut().flat_map(|l| l.tensors_mut()).collect()
    }
}

impl MlpIds {
    pub fn ids(&self) -> Vec<NodeId> {
        self.0.iter().flat_map(|d| [d.weight, d.bias]).collect()
    }
}
