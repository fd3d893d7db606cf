//! Reverse-mode differentiation over an append-only graph of small dense tensors.
//!
//! Every operation is evaluated eagerly when it is recorded, so a [`Var`] always
//! has a cached value. Two reverse passes are available:
//!
//! - [`Graph::backward`] computes plain numeric gradients.
//! - [`Graph::backward_as_graph`] records the adjoint computation as new nodes,
//!   so the returned gradients can themselves be differentiated. This is how
//!   losses that contain `dF/d(input)` terms are trained.
//!
//! Tensors have at most two dimensions. Batched models keep one sample per
//! column; no operation mixes columns except the explicit reductions, which
//! makes the gradient of a column-sum equal to the per-column gradients.

pub mod check;
mod value;

pub use value::Value;

use std::cell::Cell;
use std::sync::atomic::{AtomicU64, Ordering};

use thiserror::Error;

use value::dims_of;

static NEXT_GRAPH_ID: AtomicU64 = AtomicU64::new(1);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("backward requires a scalar output, got shape {0:?}")]
    NonScalarOutput(Vec<usize>),
    #[error("handle belongs to a different graph")]
    ForeignHandle,
    #[error("cannot differentiate with respect to a constant node")]
    NotDifferentiable,
    #[error("invalid argument for {op}: {msg}")]
    Invalid { op: &'static str, msg: String },
}

pub type Result<T> = std::result::Result<T, GraphError>;

/// Handle to a node of one particular [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    graph: u64,
    index: usize,
}

impl Var {
    pub fn index(&self) -> usize {
        self.index
    }
}

/// The public operation set accepted by [`Graph::elementary`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OpKind {
    Add,
    Sub,
    /// Multiplication by a fixed scalar.
    Scale(f64),
    /// `W x` for a matrix `W` and a vector or matrix `x`.
    MatMul,
    /// Elementwise (Hadamard) product.
    Mul,
    Tanh,
    Sigmoid,
    Relu,
    Silu,
    /// Sum of all entries.
    Sum,
    Abs,
}

#[derive(Clone, Debug)]
enum Op {
    Input,
    Add,
    Sub,
    Mul,
    Scale(f64),
    Shift(f64),
    MatMul,
    Transpose,
    Reshape,
    Tanh,
    Sigmoid,
    Relu,
    Silu,
    Abs,
    Expand,
    ReduceTo,
    Concat,
    Slice(usize),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Scale(_) => "scale",
            Op::Shift(_) => "shift",
            Op::MatMul => "matmul",
            Op::Transpose => "transpose",
            Op::Reshape => "reshape",
            Op::Tanh => "tanh",
            Op::Sigmoid => "sigmoid",
            Op::Relu => "relu",
            Op::Silu => "silu",
            Op::Abs => "abs",
            Op::Expand => "expand",
            Op::ReduceTo => "reduce",
            Op::Concat => "concat",
            Op::Slice(_) => "slice",
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    parents: Vec<usize>,
    value: Value,
    differentiable: bool,
}

/// Counters describing points where an adjoint was not classically defined.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Diagnostics {
    /// ReLU or abs adjoints evaluated at an input of exactly zero
    /// (the subgradient 0 was used).
    pub nondifferentiable_points: usize,
}

/// Gradients returned by [`Graph::backward`], one per requested node.
#[derive(Clone, Debug, Default)]
pub struct GradientMap {
    entries: Vec<(Var, Value)>,
}

impl GradientMap {
    pub fn get(&self, var: Var) -> Option<&Value> {
        self.entries.iter().find(|(v, _)| *v == var).map(|(_, g)| g)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (Var, &Value)> {
        self.entries.iter().map(|(v, g)| (*v, g))
    }

    pub fn into_values(self) -> Vec<Value> {
        self.entries.into_iter().map(|(_, g)| g).collect()
    }
}

/// Append-only computation graph. Single owner, not shared across threads.
pub struct Graph {
    id: u64,
    nodes: Vec<Node>,
    nondiff: Cell<usize>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self {
            id: NEXT_GRAPH_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            nondiff: Cell::new(0),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn diagnostics(&self) -> Diagnostics {
        Diagnostics { nondifferentiable_points: self.nondiff.get() }
    }

    /// Adds an input node. `differentiable` marks it as a leaf that gradients
    /// may be requested for; other inputs are constants.
    pub fn lift(&mut self, value: Value, differentiable: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(GraphError::NonFinite("lift"));
        }
        Ok(self.push_unchecked(Op::Input, Vec::new(), value, differentiable))
    }

    pub fn constant(&mut self, value: Value) -> Result<Var> {
        self.lift(value, false)
    }

    pub fn leaf(&mut self, value: Value) -> Result<Var> {
        self.lift(value, true)
    }

    pub fn value(&self, var: Var) -> &Value {
        assert_eq!(var.graph, self.id, "handle belongs to a different graph");
        &self.nodes[var.index].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.value(var).shape()
    }

    fn check(&self, var: Var) -> Result<usize> {
        if var.graph != self.id || var.index >= self.nodes.len() {
            return Err(GraphError::ForeignHandle);
        }
        Ok(var.index)
    }

    fn var(&self, index: usize) -> Var {
        Var { graph: self.id, index }
    }

    fn push_unchecked(&mut self, op: Op, parents: Vec<usize>, value: Value, differentiable: bool) -> Var {
        self.nodes.push(Node { op, parents, value, differentiable });
        self.var(self.nodes.len() - 1)
    }

    fn push(&mut self, op: Op, parents: Vec<usize>, target_shape: Option<&[usize]>) -> Result<Var> {
        let value = {
            let inputs: Vec<&Value> = parents.iter().map(|&p| &self.nodes[p].value).collect();
            forward(&op, &inputs, target_shape)?
        };
        if !value.is_finite() {
            return Err(GraphError::NonFinite(op.name()));
        }
        let differentiable = parents.iter().any(|&p| self.nodes[p].differentiable);
        Ok(self.push_unchecked(op, parents, value, differentiable))
    }

    fn unary(&mut self, op: Op, a: Var) -> Result<Var> {
        let a = self.check(a)?;
        self.push(op, vec![a], None)
    }

    fn binary(&mut self, op: Op, a: Var, b: Var) -> Result<Var> {
        let (a, b) = (self.check(a)?, self.check(b)?);
        self.push(op, vec![a, b], None)
    }

    /// Records one operation from the public [`OpKind`] set.
    pub fn elementary(&mut self, kind: OpKind, inputs: &[Var]) -> Result<Var> {
        let arity = match kind {
            OpKind::Add | OpKind::Sub | OpKind::Mul | OpKind::MatMul => 2,
            _ => 1,
        };
        if inputs.len() != arity {
            return Err(GraphError::Invalid {
                op: "elementary",
                msg: format!("{kind:?} takes {arity} input(s), got {}", inputs.len()),
            });
        }
        match kind {
            OpKind::Add => self.add(inputs[0], inputs[1]),
            OpKind::Sub => self.sub(inputs[0], inputs[1]),
            OpKind::Mul => self.mul(inputs[0], inputs[1]),
            OpKind::MatMul => self.matmul(inputs[0], inputs[1]),
            OpKind::Scale(c) => self.scale(inputs[0], c),
            OpKind::Tanh => self.tanh(inputs[0]),
            OpKind::Sigmoid => self.sigmoid(inputs[0]),
            OpKind::Relu => self.relu(inputs[0]),
            OpKind::Silu => self.silu(inputs[0]),
            OpKind::Sum => self.sum(inputs[0]),
            OpKind::Abs => self.abs(inputs[0]),
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Op::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Op::Sub, a, b)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Op::Mul, a, b)
    }

    pub fn matmul(&mut self, w: Var, x: Var) -> Result<Var> {
        self.binary(Op::MatMul, w, x)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.unary(Op::Scale(c), a)
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.scale(a, -1.0)
    }

    /// Adds a fixed scalar to every entry.
    pub fn shift(&mut self, a: Var, c: f64) -> Result<Var> {
        self.unary(Op::Shift(c), a)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        self.unary(Op::Transpose, a)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let a = self.check(a)?;
        self.push(Op::Reshape, vec![a], Some(shape))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(Op::Tanh, a)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(Op::Sigmoid, a)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(Op::Relu, a)
    }

    pub fn silu(&mut self, a: Var) -> Result<Var> {
        self.unary(Op::Silu, a)
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        self.unary(Op::Abs, a)
    }

    /// Sum of all entries, as a scalar.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.reduce_to(a, &[])
    }

    /// Broadcasts `a` to `shape`; dimensions of size 1 in the 2-D view are repeated.
    pub fn expand(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let a = self.check(a)?;
        self.push(Op::Expand, vec![a], Some(shape))
    }

    /// Sums `a` down to `shape`, the reverse of [`Graph::expand`].
    pub fn reduce_to(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let a = self.check(a)?;
        self.push(Op::ReduceTo, vec![a], Some(shape))
    }

    /// Per-column sums: `[r, c] -> [1, c]`.
    pub fn sum_rows(&mut self, a: Var) -> Result<Var> {
        let (_, c) = self.value(a).dims();
        if self.value(a).shape().len() < 2 {
            return self.sum(a);
        }
        self.reduce_to(a, &[1, c])
    }

    /// Stacks inputs vertically. All inputs need the same number of columns.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let idx = parts.iter().map(|&p| self.check(p)).collect::<Result<Vec<_>>>()?;
        if idx.is_empty() {
            return Err(GraphError::Invalid { op: "concat", msg: "no inputs".into() });
        }
        self.push(Op::Concat, idx, None)
    }

    /// Rows `start..start + len` of `a`.
    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let ai = self.check(a)?;
        let v = &self.nodes[ai].value;
        let (r, c) = v.dims();
        if start + len > r || len == 0 {
            return Err(GraphError::Invalid {
                op: "slice",
                msg: format!("rows {start}..{} of {r}", start + len),
            });
        }
        let shape = if v.shape().len() < 2 { vec![len] } else { vec![len, c] };
        self.push(Op::Slice(start), vec![ai], Some(&shape))
    }

    fn relevance(&self, output: usize, wrt: &[usize]) -> Vec<bool> {
        let mut relevant = vec![false; output + 1];
        for &w in wrt {
            if w <= output {
                relevant[w] = true;
            }
        }
        let start = wrt.iter().copied().min().unwrap_or(output + 1);
        for i in start..=output {
            if !relevant[i] {
                relevant[i] = self.nodes[i].parents.iter().any(|&p| relevant[p]);
            }
        }
        relevant
    }

    fn prepare_backward(&self, output: Var, wrt: &[Var]) -> Result<(usize, Vec<usize>)> {
        let out = self.check(output)?;
        if !self.nodes[out].value.is_scalar() && self.nodes[out].value.len() != 1 {
            return Err(GraphError::NonScalarOutput(self.nodes[out].value.shape().to_vec()));
        }
        let mut idx = Vec::with_capacity(wrt.len());
        for &w in wrt {
            let i = self.check(w)?;
            if !self.nodes[i].differentiable {
                return Err(GraphError::NotDifferentiable);
            }
            idx.push(i);
        }
        Ok((out, idx))
    }

    /// Numeric reverse pass from a scalar `output`.
    ///
    /// `wrt` may name leaves or interior nodes; for an interior node the
    /// result is the adjoint accumulated at that node. Nodes that do not
    /// influence `output` get zero gradients.
    pub fn backward(&self, output: Var, wrt: &[Var]) -> Result<GradientMap> {
        let (out, wrt_idx) = self.prepare_backward(output, wrt)?;
        let relevant = self.relevance(out, &wrt_idx);
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; out + 1];
        if relevant[out] {
            adj[out] = Some(vec![1.0]);
        }
        let lowest = wrt_idx.iter().copied().min().unwrap_or(out);
        let mut found: Vec<Option<Vec<f64>>> = vec![None; wrt_idx.len()];
        for i in (lowest..=out).rev() {
            let Some(g) = adj[i].take() else { continue };
            for (k, &w) in wrt_idx.iter().enumerate() {
                if w == i {
                    found[k] = Some(g.clone());
                }
            }
            let node = &self.nodes[i];
            for (pos, &p) in node.parents.iter().enumerate() {
                if !relevant[p] {
                    continue;
                }
                let contribution = self.vjp_numeric(i, pos, &g);
                match &mut adj[p] {
                    Some(acc) => acc.iter_mut().zip(&contribution).for_each(|(a, c)| *a += c),
                    slot @ None => *slot = Some(contribution),
                }
            }
        }
        let mut map = GradientMap::default();
        for (k, &w) in wrt_idx.iter().enumerate() {
            let var = self.var(w);
            if map.get(var).is_some() {
                continue;
            }
            let shape = self.nodes[w].value.shape();
            let g = match found[k].take() {
                Some(data) => Value::new(shape.to_vec(), data),
                None => Value::zeros(shape),
            };
            map.entries.push((var, g));
        }
        Ok(map)
    }

    /// Reverse pass that records the adjoints as graph nodes.
    ///
    /// Returns one handle per entry of `wrt`, each holding the gradient of
    /// `output` with respect to that node and differentiable again.
    pub fn backward_as_graph(&mut self, output: Var, wrt: &[Var]) -> Result<Vec<Var>> {
        let (out, wrt_idx) = self.prepare_backward(output, wrt)?;
        let relevant = self.relevance(out, &wrt_idx);
        let mut adj: Vec<Option<Var>> = vec![None; out + 1];
        if relevant[out] {
            let shape = self.nodes[out].value.shape().to_vec();
            adj[out] = Some(self.constant(Value::filled(&shape, 1.0))?);
        }
        let lowest = wrt_idx.iter().copied().min().unwrap_or(out);
        let mut found: Vec<Option<Var>> = vec![None; wrt_idx.len()];
        for i in (lowest..=out).rev() {
            let Some(g) = adj[i].take() else { continue };
            for (k, &w) in wrt_idx.iter().enumerate() {
                if w == i {
                    found[k] = Some(g);
                }
            }
            let parents = self.nodes[i].parents.clone();
            for (pos, &p) in parents.iter().enumerate() {
                if !relevant[p] {
                    continue;
                }
                let mut contribution = self.vjp_graph(i, pos, g)?;
                let want = self.nodes[p].value.shape().to_vec();
                if self.nodes[contribution.index].value.shape() != want.as_slice() {
                    contribution = self.reshape(contribution, &want)?;
                }
                adj[p] = Some(match adj[p] {
                    Some(acc) => self.add(acc, contribution)?,
                    None => contribution,
                });
            }
        }
        let mut result = Vec::with_capacity(wrt_idx.len());
        for (k, &w) in wrt_idx.iter().enumerate() {
            let g = match found[k] {
                Some(g) => g,
                None => {
                    let shape = self.nodes[w].value.shape().to_vec();
                    self.constant(Value::zeros(&shape))?
                }
            };
            result.push(g);
        }
        Ok(result)
    }

    fn vjp_numeric(&self, node: usize, pos: usize, g: &[f64]) -> Vec<f64> {
        let n = &self.nodes[node];
        let parent = |k: usize| &self.nodes[n.parents[k]].value;
        match &n.op {
            Op::Input => unreachable!("inputs have no parents"),
            Op::Add | Op::Reshape | Op::Shift(_) => g.to_vec(),
            Op::Sub => {
                if pos == 0 {
                    g.to_vec()
                } else {
                    g.iter().map(|x| -x).collect()
                }
            }
            Op::Mul => {
                let other = parent(1 - pos).data();
                g.iter().zip(other).map(|(a, b)| a * b).collect()
            }
            Op::Scale(c) => g.iter().map(|x| x * c).collect(),
            Op::MatMul => {
                let (a, b) = (parent(0), parent(1));
                let (m, k) = a.dims();
                let (_, nc) = b.dims();
                if pos == 0 {
                    // dA = G B^T
                    let mut out = vec![0.0; m * k];
                    for i in 0..m {
                        for j in 0..nc {
                            let gij = g[i * nc + j];
                            if gij == 0.0 {
                                continue;
                            }
                            for p in 0..k {
                                out[i * k + p] += gij * b.data()[p * nc + j];
                            }
                        }
                    }
                    out
                } else {
                    // dB = A^T G
                    let mut out = vec![0.0; k * nc];
                    for i in 0..m {
                        for p in 0..k {
                            let aip = a.data()[i * k + p];
                            if aip == 0.0 {
                                continue;
                            }
                            let row = &g[i * nc..(i + 1) * nc];
                            let dst = &mut out[p * nc..(p + 1) * nc];
                            for (d, gv) in dst.iter_mut().zip(row) {
                                *d += aip * gv;
                            }
                        }
                    }
                    out
                }
            }
            Op::Transpose => {
                let (r, c) = parent(0).dims();
                let mut out = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        out[i * c + j] = g[j * r + i];
                    }
                }
                out
            }
            Op::Tanh => g.iter().zip(n.value.data()).map(|(g, y)| g * (1.0 - y * y)).collect(),
            Op::Sigmoid => g.iter().zip(n.value.data()).map(|(g, y)| g * y * (1.0 - y)).collect(),
            Op::Relu => {
                let x = parent(0).data();
                if x.contains(&0.0) {
                    self.nondiff.set(self.nondiff.get() + 1);
                }
                g.iter().zip(x).map(|(g, &x)| if x > 0.0 { *g } else { 0.0 }).collect()
            }
            Op::Abs => {
                let x = parent(0).data();
                if x.contains(&0.0) {
                    self.nondiff.set(self.nondiff.get() + 1);
                }
                g.iter().zip(x).map(|(g, &x)| g * sign(x)).collect()
            }
            Op::Silu => {
                let x = parent(0).data();
                g.iter()
                    .zip(x)
                    .map(|(g, &x)| {
                        let s = sigmoid(x);
                        g * (s + x * s * (1.0 - s))
                    })
                    .collect()
            }
            Op::Expand => reduce_data(g, n.value.dims(), parent(0).dims()),
            Op::ReduceTo => expand_data(g, n.value.dims(), parent(0).dims()),
            Op::Concat => {
                let offset: usize = n.parents[..pos].iter().map(|&p| self.nodes[p].value.len()).sum();
                g[offset..offset + parent(pos).len()].to_vec()
            }
            Op::Slice(start) => {
                let src = parent(0);
                let (_, c) = src.dims();
                let mut out = vec![0.0; src.len()];
                out[start * c..start * c + g.len()].copy_from_slice(g);
                out
            }
        }
    }

    fn vjp_graph(&mut self, node: usize, pos: usize, g: Var) -> Result<Var> {
        let op = self.nodes[node].op.clone();
        let parents = self.nodes[node].parents.clone();
        let pv = |k: usize| self.var(parents[k]);
        match op {
            Op::Input => unreachable!("inputs have no parents"),
            Op::Add | Op::Shift(_) => Ok(g),
            Op::Reshape => {
                let shape = self.nodes[parents[0]].value.shape().to_vec();
                self.reshape(g, &shape)
            }
            Op::Sub => {
                if pos == 0 {
                    Ok(g)
                } else {
                    self.neg(g)
                }
            }
            Op::Mul => self.mul(g, pv(1 - pos)),
            Op::Scale(c) => self.scale(g, c),
            Op::MatMul => {
                if pos == 0 {
                    let bt = self.transpose(pv(1))?;
                    self.matmul(g, bt)
                } else {
                    let at = self.transpose(pv(0))?;
                    self.matmul(at, g)
                }
            }
            Op::Transpose => self.transpose(g),
            Op::Tanh => {
                let y = self.var(node);
                let y2 = self.mul(y, y)?;
                let d = self.scale(y2, -1.0)?;
                let d = self.shift(d, 1.0)?;
                self.mul(g, d)
            }
            Op::Sigmoid => {
                let y = self.var(node);
                let one_minus = self.scale(y, -1.0)?;
                let one_minus = self.shift(one_minus, 1.0)?;
                let d = self.mul(y, one_minus)?;
                self.mul(g, d)
            }
            Op::Silu => {
                let x = pv(0);
                let s = self.sigmoid(x)?;
                let one_minus = self.scale(s, -1.0)?;
                let one_minus = self.shift(one_minus, 1.0)?;
                let ds = self.mul(s, one_minus)?;
                let xds = self.mul(x, ds)?;
                let d = self.add(s, xds)?;
                self.mul(g, d)
            }
            Op::Relu | Op::Abs => {
                let x = &self.nodes[parents[0]].value;
                if x.data().contains(&0.0) {
                    self.nondiff.set(self.nondiff.get() + 1);
                }
                let mask: Vec<f64> = if matches!(op, Op::Relu) {
                    x.data().iter().map(|&v| if v > 0.0 { 1.0 } else { 0.0 }).collect()
                } else {
                    x.data().iter().map(|&v| sign(v)).collect()
                };
                let mask = self.constant(Value::new(x.shape().to_vec(), mask))?;
                self.mul(g, mask)
            }
            Op::Expand => {
                let shape = self.nodes[parents[0]].value.shape().to_vec();
                self.reduce_to(g, &shape)
            }
            Op::ReduceTo => {
                let shape = self.nodes[parents[0]].value.shape().to_vec();
                self.expand(g, &shape)
            }
            Op::Concat => {
                let (r_before, rows) = {
                    let before: usize = parents[..pos].iter().map(|&p| self.nodes[p].value.dims().0).sum();
                    (before, self.nodes[parents[pos]].value.dims().0)
                };
                self.slice_rows(g, r_before, rows)
            }
            Op::Slice(start) => {
                let src = &self.nodes[parents[0]].value;
                let (r, c) = src.dims();
                let matrix = src.shape().len() == 2;
                let rows = self.nodes[node].value.dims().0;
                let block = |n: usize| if matrix { vec![n, c] } else { vec![n] };
                let mut parts = Vec::with_capacity(3);
                if start > 0 {
                    parts.push(self.constant(Value::zeros(&block(start)))?);
                }
                parts.push(g);
                if start + rows < r {
                    parts.push(self.constant(Value::zeros(&block(r - start - rows)))?);
                }
                self.concat_rows(&parts)
            }
        }
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn mismatch(op: &'static str, a: &Value, b: &Value) -> GraphError {
    GraphError::ShapeMismatch { op, lhs: a.shape().to_vec(), rhs: b.shape().to_vec() }
}

fn map(a: &Value, f: impl Fn(f64) -> f64) -> Value {
    Value::new(a.shape().to_vec(), a.data().iter().map(|&x| f(x)).collect())
}

fn zip(op: &'static str, a: &Value, b: &Value, f: impl Fn(f64, f64) -> f64) -> Result<Value> {
    if a.shape() != b.shape() {
        return Err(mismatch(op, a, b));
    }
    Ok(Value::new(
        a.shape().to_vec(),
        a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
    ))
}

fn expand_data(src: &[f64], src_dims: (usize, usize), dims: (usize, usize)) -> Vec<f64> {
    let (r0, c0) = src_dims;
    let (r, c) = dims;
    let mut out = Vec::with_capacity(r * c);
    for i in 0..r {
        let si = if r0 == 1 { 0 } else { i };
        for j in 0..c {
            let sj = if c0 == 1 { 0 } else { j };
            out.push(src[si * c0 + sj]);
        }
    }
    out
}

fn reduce_data(src: &[f64], src_dims: (usize, usize), dims: (usize, usize)) -> Vec<f64> {
    let (r, c) = src_dims;
    let (r0, c0) = dims;
    let mut out = vec![0.0; r0 * c0];
    for i in 0..r {
        let ti = if r0 == 1 { 0 } else { i };
        for j in 0..c {
            let tj = if c0 == 1 { 0 } else { j };
            out[ti * c0 + tj] += src[i * c + j];
        }
    }
    out
}

fn broadcast_compatible(small: (usize, usize), large: (usize, usize)) -> bool {
    (small.0 == large.0 || small.0 == 1) && (small.1 == large.1 || small.1 == 1)
}

fn forward(op: &Op, inputs: &[&Value], target: Option<&[usize]>) -> Result<Value> {
    let a = inputs[0];
    Ok(match op {
        Op::Input => unreachable!("inputs are lifted directly"),
        Op::Add => zip("add", a, inputs[1], |x, y| x + y)?,
        Op::Sub => zip("sub", a, inputs[1], |x, y| x - y)?,
        Op::Mul => zip("mul", a, inputs[1], |x, y| x * y)?,
        Op::Scale(c) => map(a, |x| x * c),
        Op::Shift(c) => map(a, |x| x + c),
        Op::Tanh => map(a, f64::tanh),
        Op::Sigmoid => map(a, sigmoid),
        Op::Relu => map(a, |x| x.max(0.0)),
        Op::Silu => map(a, |x| x * sigmoid(x)),
        Op::Abs => map(a, f64::abs),
        Op::MatMul => {
            let b = inputs[1];
            if a.shape().is_empty() {
                return Err(mismatch("matmul", a, b));
            }
            let (m, k) = a.dims();
            let (k2, n) = b.dims();
            if k != k2 {
                return Err(mismatch("matmul", a, b));
            }
            let mut out = vec![0.0; m * n];
            let (ad, bd) = (a.data(), b.data());
            for i in 0..m {
                let dst = &mut out[i * n..(i + 1) * n];
                for p in 0..k {
                    let aip = ad[i * k + p];
                    if aip == 0.0 {
                        continue;
                    }
                    for (d, bv) in dst.iter_mut().zip(&bd[p * n..(p + 1) * n]) {
                        *d += aip * bv;
                    }
                }
            }
            let shape = if b.shape().len() <= 1 { vec![m] } else { vec![m, n] };
            Value::new(shape, out)
        }
        Op::Transpose => {
            if a.is_scalar() {
                a.clone()
            } else {
                let (r, c) = a.dims();
                let d = a.data();
                let mut out = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        out[j * r + i] = d[i * c + j];
                    }
                }
                Value::matrix(c, r, out)
            }
        }
        Op::Reshape => {
            let shape = target.expect("reshape target");
            if shape.len() > 2 || shape.iter().product::<usize>() != a.len() {
                return Err(GraphError::ShapeMismatch {
                    op: "reshape",
                    lhs: a.shape().to_vec(),
                    rhs: shape.to_vec(),
                });
            }
            a.clone().with_shape(shape)
        }
        Op::Expand | Op::ReduceTo => {
            let shape = target.expect("broadcast target");
            let bad = || GraphError::ShapeMismatch {
                op: if matches!(op, Op::Expand) { "expand" } else { "reduce" },
                lhs: a.shape().to_vec(),
                rhs: shape.to_vec(),
            };
            if shape.len() > 2 {
                return Err(bad());
            }
            let dims = dims_of(shape);
            if matches!(op, Op::Expand) {
                if !broadcast_compatible(a.dims(), dims) {
                    return Err(bad());
                }
                Value::new(shape.to_vec(), expand_data(a.data(), a.dims(), dims))
            } else {
                if !broadcast_compatible(dims, a.dims()) {
                    return Err(bad());
                }
                Value::new(shape.to_vec(), reduce_data(a.data(), a.dims(), dims))
            }
        }
        Op::Concat => {
            let cols = a.dims().1;
            let mut rows = 0;
            let mut data = Vec::new();
            let mut matrix = false;
            for v in inputs {
                if v.dims().1 != cols {
                    return Err(mismatch("concat", a, v));
                }
                matrix |= v.shape().len() == 2;
                rows += v.dims().0;
                data.extend_from_slice(v.data());
            }
            let shape = if matrix { vec![rows, cols] } else { vec![rows] };
            Value::new(shape, data)
        }
        Op::Slice(start) => {
            let shape = target.expect("slice shape");
            let (_, c) = a.dims();
            let len = shape.iter().product::<usize>();
            Value::new(shape.to_vec(), a.data()[start * c..start * c + len].to_vec())
        }
    })
}
