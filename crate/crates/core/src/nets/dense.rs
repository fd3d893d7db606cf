use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Value, Var};
use crate::{Error, Result};

use super::Parameters;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Linear,
    Tanh,
    Sigmoid,
    Relu,
    Silu,
}

impl Activation {
    pub fn apply(self, g: &mut Graph, x: Var) -> Result<Var> {
        Ok(match self {
            Activation::Linear => x,
            Activation::Tanh => g.tanh(x)?,
            Activation::Sigmoid => g.sigmoid(x)?,
            Activation::Relu => g.relu(x)?,
            Activation::Silu => g.silu(x)?,
        })
    }
}

/// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
pub(crate) fn init_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> Value {
    let bound = 1.0 / (cols.max(1) as f64).sqrt();
    Value::matrix(rows, cols, (0..rows * cols).map(|_| rng.random_range(-bound..=bound)).collect())
}

/// `z + b` where `z` is `[n]` or `[n, batch]` and `b` is `[n]`.
pub(crate) fn add_bias(g: &mut Graph, z: Var, b: Var) -> Result<Var> {
    if g.shape(z) == g.shape(b) {
        return Ok(g.add(z, b)?);
    }
    let shape = g.shape(z).to_vec();
    let bb = g.expand(b, &shape)?;
    Ok(g.add(z, bb)?)
}

/// One fully-connected layer: `a(W x + b)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    pub w: Value,
    pub b: Value,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn init(rng: &mut impl Rng, inputs: usize, outputs: usize, activation: Activation) -> Self {
        Self { w: init_matrix(rng, outputs, inputs), b: Value::zeros(&[outputs]), activation }
    }

    pub fn zeros(inputs: usize, outputs: usize, activation: Activation) -> Self {
        Self { w: Value::zeros(&[outputs, inputs]), b: Value::zeros(&[outputs]), activation }
    }

    pub fn inputs(&self) -> usize {
        self.w.dims().1
    }

    pub fn outputs(&self) -> usize {
        self.w.dims().0
    }

    pub fn bind(&self, g: &mut Graph) -> Result<BoundLayer> {
        Ok(BoundLayer { w: g.leaf(self.w.clone())?, b: g.leaf(self.b.clone())?, activation: self.activation })
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BoundLayer {
    pub w: Var,
    pub b: Var,
    pub activation: Activation,
}

impl BoundLayer {
    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let z = g.matmul(self.w, x)?;
        let z = add_bias(g, z, self.b)?;
        self.activation.apply(g, z)
    }
}

/// A feed-forward network. Hidden layers share one activation, the output
/// layer is linear.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseStack {
    layers: Vec<DenseLayer>,
}

impl DenseStack {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self> {
        for pair in layers.windows(2) {
            if pair[1].inputs() != pair[0].outputs() {
                return Err(Error::Dimension(format!(
                    "layer expects {} inputs but previous layer has {} outputs",
                    pair[1].inputs(),
                    pair[0].outputs()
                )));
            }
        }
        for l in &layers {
            if l.b.len() != l.outputs() {
                return Err(Error::Dimension("bias length differs from layer width".into()));
            }
        }
        Ok(Self { layers })
    }

    /// Randomly initialized stack with widths `[input, hidden..., output]`.
    pub fn init(rng: &mut impl Rng, widths: &[usize], hidden: Activation) -> Self {
        Self::build(widths, hidden, |i, o, a| DenseLayer::init(rng, i, o, a))
    }

    pub fn zeros(widths: &[usize], hidden: Activation) -> Self {
        Self::build(widths, hidden, DenseLayer::zeros)
    }

    fn build(widths: &[usize], hidden: Activation, mut make: impl FnMut(usize, usize, Activation) -> DenseLayer) -> Self {
        let n = widths.len().saturating_sub(1);
        let layers = (0..n)
            .map(|l| {
                let act = if l + 1 == n { Activation::Linear } else { hidden };
                make(widths[l], widths[l + 1], act)
            })
            .collect();
        Self { layers }
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn input_width(&self) -> usize {
        self.layers.first().map_or(0, |l| l.inputs())
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().map_or(0, |l| l.outputs())
    }

    /// Sum of `(n_in + 1) * n_out` over all layers.
    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| (l.inputs() + 1) * l.outputs()).sum()
    }

    pub fn bind(&self, g: &mut Graph) -> Result<BoundStack> {
        let layers = self.layers.iter().map(|l| l.bind(g)).collect::<Result<_>>()?;
        Ok(BoundStack { layers })
    }

    /// Evaluates the stack on one input vector.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_width() {
            return Err(Error::Dimension(format!(
                "input has {} entries, stack expects {}",
                x.len(),
                self.input_width()
            )));
        }
        let mut g = Graph::new();
        let bound = self.bind(&mut g)?;
        let xv = g.leaf(Value::vector(x.to_vec()))?;
        let y = bound.forward(&mut g, xv)?;
        Ok(g.value(y).data().to_vec())
    }
}

impl Parameters for DenseStack {
    fn named_params(&self) -> Vec<(String, &Value)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| [(format!("layer{i}.W"), &l.w), (format!("layer{i}.b"), &l.b)])
            .collect()
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Value)> {
        self.layers
            .iter_mut()
            .enumerate()
            .flat_map(|(i, l)| [(format!("layer{i}.W"), &mut l.w), (format!("layer{i}.b"), &mut l.b)])
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct BoundStack {
    layers: Vec<BoundLayer>,
}

impl BoundStack {
    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        self.layers.iter().try_fold(x, |h, l| l.forward(g, h))
    }

    pub fn vars(&self) -> Vec<Var> {
        self.layers.iter().flat_map(|l| [l.w, l.b]).collect()
    }
}
