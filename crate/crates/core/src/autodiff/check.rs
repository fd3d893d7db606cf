//! Finite-difference oracles and random graph generators used to validate
//! the reverse passes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Graph, GraphError, Value, Var};

/// Relative discrepancy `|a - b| / max(|a|, |b|, floor)`.
///
/// The floor keeps components whose true gradient is near zero from turning
/// rounding noise into a large ratio.
pub fn relative_discrepancy(a: f64, b: f64, floor: f64) -> f64 {
    let scale = a.abs().max(b.abs()).max(floor);
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// Scale floor used by [`finite_difference_check`].
pub const DISCREPANCY_FLOOR: f64 = 1e-3;

/// Compares [`Graph::backward`] against central differences of `f` at `x`.
///
/// `f` builds a scalar output from the lifted input. Returns the maximum
/// relative discrepancy over all components of `x`.
pub fn finite_difference_check<F, E>(f: F, x: &Value, step: f64) -> Result<f64, E>
where
    F: Fn(&mut Graph, Var) -> Result<Var, E>,
    E: From<GraphError>,
{
    assert!(step > 0.0, "finite-difference step must be positive");
    let mut g = Graph::new();
    let xv = g.leaf(x.clone())?;
    let out = f(&mut g, xv)?;
    let analytic = g.backward(out, &[xv])?.into_values().remove(0);

    let eval = |point: Value| -> Result<f64, E> {
        let mut g = Graph::new();
        let xv = g.leaf(point)?;
        let out = f(&mut g, xv)?;
        Ok(g.value(out).item())
    };

    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let mut plus = x.clone();
        plus.data_mut()[i] += step;
        let mut minus = x.clone();
        minus.data_mut()[i] -= step;
        let fd = (eval(plus)? - eval(minus)?) / (2.0 * step);
        worst = worst.max(relative_discrepancy(analytic.data()[i], fd, DISCREPANCY_FLOOR));
    }
    Ok(worst)
}

/// Second derivative of a scalar function through two nested reverse passes.
pub fn nested_second_derivative<F, E>(f: F, x: f64) -> Result<f64, E>
where
    F: Fn(&mut Graph, Var) -> Result<Var, E>,
    E: From<GraphError>,
{
    let mut g = Graph::new();
    let xv = g.leaf(Value::scalar(x))?;
    let y = f(&mut g, xv)?;
    let dy = g.backward_as_graph(y, &[xv])?[0];
    let d2 = g.backward_as_graph(dy, &[xv])?[0];
    Ok(g.value(d2).item())
}

/// Second-order central difference `(f(x+h) - 2 f(x) + f(x-h)) / h^2`.
pub fn second_difference<F, E>(f: F, x: f64, step: f64) -> Result<f64, E>
where
    F: Fn(&mut Graph, Var) -> Result<Var, E>,
    E: From<GraphError>,
{
    let eval = |p: f64| -> Result<f64, E> {
        let mut g = Graph::new();
        let xv = g.leaf(Value::scalar(p))?;
        let y = f(&mut g, xv)?;
        Ok(g.value(y).item())
    };
    Ok((eval(x + step)? - 2.0 * eval(x)? + eval(x - step)?) / (step * step))
}

#[derive(Clone, Debug)]
enum Layer {
    Dense { w: Value, b: Value, act: u8 },
    Hadamard { scale: Value },
    Residual { act: u8 },
}

/// A randomly generated differentiable program over one vector input.
///
/// Layers draw from the full elementary set (matrix products, Hadamard
/// products, tanh, sigmoid, ReLU, SiLU, abs, add/sub, scaling) and the
/// program ends with a sum-reduce so it is scalar valued.
#[derive(Clone, Debug)]
pub struct RandomGraph {
    input_width: usize,
    layers: Vec<Layer>,
}

impl RandomGraph {
    /// Depth at most 6, widths at most 8, weights in `[-1, 1]`.
    pub fn generate(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let input_width = rng.random_range(1..=8);
        let depth = rng.random_range(1..=6);
        let mut width = input_width;
        let mut layers = Vec::with_capacity(depth);
        for _ in 0..depth {
            match rng.random_range(0..3) {
                0 | 1 => {
                    let out = rng.random_range(1..=8);
                    let w = (0..out * width).map(|_| rng.random_range(-1.0..1.0)).collect();
                    let b = (0..out).map(|_| rng.random_range(-1.0..1.0)).collect();
                    layers.push(Layer::Dense {
                        w: Value::matrix(out, width, w),
                        b: Value::vector(b),
                        act: rng.random_range(0..6),
                    });
                    width = out;
                }
                2 => {
                    if rng.random_bool(0.5) {
                        let s = (0..width).map(|_| rng.random_range(-1.5..1.5)).collect();
                        layers.push(Layer::Hadamard { scale: Value::vector(s) });
                    } else {
                        layers.push(Layer::Residual { act: rng.random_range(0..4) });
                    }
                }
                _ => unreachable!(),
            }
        }
        Self { input_width, layers }
    }

    pub fn input_width(&self) -> usize {
        self.input_width
    }

    /// Draws an input with entries in `[-2, 2]`.
    pub fn sample_input(&self, seed: u64) -> Value {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
        Value::vector((0..self.input_width).map(|_| rng.random_range(-2.0..2.0)).collect())
    }

    /// True when the program only uses smooth operations.
    pub fn is_smooth(&self) -> bool {
        self.layers.iter().all(|l| match l {
            Layer::Dense { act, .. } => *act != 3 && *act != 5,
            _ => true,
        })
    }

    pub fn build(&self, g: &mut Graph, x: Var) -> Result<Var, GraphError> {
        let mut h = x;
        for layer in &self.layers {
            h = match layer {
                Layer::Dense { w, b, act } => {
                    let w = g.constant(w.clone())?;
                    let b = g.constant(b.clone())?;
                    let z = g.matmul(w, h)?;
                    let z = g.add(z, b)?;
                    apply(g, *act, z)?
                }
                Layer::Hadamard { scale } => {
                    let s = g.constant(scale.clone())?;
                    let sh = g.mul(s, h)?;
                    g.mul(sh, h)?
                }
                Layer::Residual { act } => {
                    let a = apply(g, *act, h)?;
                    let a = g.scale(a, 0.5)?;
                    if *act % 2 == 0 {
                        g.add(h, a)?
                    } else {
                        g.sub(h, a)?
                    }
                }
            };
        }
        g.sum(h)
    }
}

fn apply(g: &mut Graph, act: u8, z: Var) -> Result<Var, GraphError> {
    match act {
        0 => g.tanh(z),
        1 => g.sigmoid(z),
        2 => g.silu(z),
        3 => g.relu(z),
        4 => Ok(z),
        _ => g.abs(z),
    }
}

/// Random scalar composition of smooth operations (tanh, sigmoid, silu,
/// products and sums) used to test second derivatives.
#[derive(Clone, Debug)]
pub struct RandomScalarProgram {
    steps: Vec<(u8, f64, f64)>,
}

impl RandomScalarProgram {
    pub fn generate(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(1..=6);
        let steps = (0..n)
            .map(|_| (rng.random_range(0..5), rng.random_range(-1.5..1.5), rng.random_range(-1.0..1.0)))
            .collect();
        Self { steps }
    }

    pub fn build(&self, g: &mut Graph, x: Var) -> Result<Var, GraphError> {
        let mut h = x;
        for &(kind, a, b) in &self.steps {
            let lin = g.scale(h, a)?;
            let lin = g.shift(lin, b)?;
            h = match kind {
                0 => g.tanh(lin)?,
                1 => g.sigmoid(lin)?,
                2 => g.silu(lin)?,
                3 => {
                    let p = g.mul(lin, h)?;
                    g.add(p, x)?
                }
                _ => {
                    let t = g.tanh(lin)?;
                    let p = g.mul(t, x)?;
                    g.add(p, h)?
                }
            };
        }
        Ok(h)
    }
}
