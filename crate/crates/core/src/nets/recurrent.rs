//! Vanilla RNN and GRU cells. Parameters are shared by every unrolled step.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Value, Var};
use crate::{Error, Result};

use super::dense::{add_bias, init_matrix, Activation, BoundLayer, DenseLayer};
use super::Parameters;

/// `h_n = a(W_hh h_{n-1} + W_xh x_n + b_h)`, `y_n = W_hy h_n + b_y`.
#[derive(Clone, Debug, PartialEq)]
pub struct VanillaRnnCell {
    pub w_hh: Value,
    pub w_xh: Value,
    pub b_h: Value,
    pub head: DenseLayer,
    pub activation: Activation,
}

impl VanillaRnnCell {
    pub fn init(rng: &mut impl Rng, inputs: usize, hidden: usize, outputs: usize, activation: Activation) -> Self {
        Self {
            w_hh: init_matrix(rng, hidden, hidden),
            w_xh: init_matrix(rng, hidden, inputs),
            b_h: Value::zeros(&[hidden]),
            head: DenseLayer::init(rng, hidden, outputs, Activation::Linear),
            activation,
        }
    }

    pub fn zeros(inputs: usize, hidden: usize, outputs: usize, activation: Activation) -> Self {
        Self {
            w_hh: Value::zeros(&[hidden, hidden]),
            w_xh: Value::zeros(&[hidden, inputs]),
            b_h: Value::zeros(&[hidden]),
            head: DenseLayer::zeros(hidden, outputs, Activation::Linear),
            activation,
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_hh.dims().0
    }

    pub fn inputs(&self) -> usize {
        self.w_xh.dims().1
    }

    pub fn bind(&self, g: &mut Graph) -> Result<BoundVanilla> {
        Ok(BoundVanilla {
            w_hh: g.leaf(self.w_hh.clone())?,
            w_xh: g.leaf(self.w_xh.clone())?,
            b_h: g.leaf(self.b_h.clone())?,
            head: self.head.bind(g)?,
            activation: self.activation,
        })
    }
}

impl Parameters for VanillaRnnCell {
    fn named_params(&self) -> Vec<(String, &Value)> {
        vec![
            ("W_hh".into(), &self.w_hh),
            ("W_xh".into(), &self.w_xh),
            ("b_h".into(), &self.b_h),
            ("W_hy".into(), &self.head.w),
            ("b_y".into(), &self.head.b),
        ]
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Value)> {
        vec![
            ("W_hh".into(), &mut self.w_hh),
            ("W_xh".into(), &mut self.w_xh),
            ("b_h".into(), &mut self.b_h),
            ("W_hy".into(), &mut self.head.w),
            ("b_y".into(), &mut self.head.b),
        ]
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BoundVanilla {
    pub w_hh: Var,
    pub w_xh: Var,
    pub b_h: Var,
    pub head: BoundLayer,
    pub activation: Activation,
}

impl BoundVanilla {
    /// Parameter handles in [`Parameters::named_params`] order.
    pub fn vars(&self) -> Vec<Var> {
        vec![self.w_hh, self.w_xh, self.b_h, self.head.w, self.head.b]
    }

    pub fn step(&self, g: &mut Graph, h_prev: Var, x: Var) -> Result<Var> {
        let rec = g.matmul(self.w_hh, h_prev)?;
        let inp = g.matmul(self.w_xh, x)?;
        let z = g.add(rec, inp)?;
        let z = add_bias(g, z, self.b_h)?;
        self.activation.apply(g, z)
    }
}

/// Gated recurrent unit.
///
/// ```text
/// r = sigmoid(W_hr h + W_xr x + b_r)
/// u = sigmoid(W_hu h + W_xu x + b_u)
/// c = tanh(r * (W_hc h) + W_xc x + b_c)
/// h' = u * h + (1 - u) * c + b_h
/// y = W_hy h' + b_y            (optional head)
/// ```
#[derive(Clone, Debug, PartialEq)]
pub struct GruCell {
    pub w_hr: Value,
    pub w_xr: Value,
    pub b_r: Value,
    pub w_hu: Value,
    pub w_xu: Value,
    pub b_u: Value,
    pub w_hc: Value,
    pub w_xc: Value,
    pub b_c: Value,
    pub b_h: Value,
    pub head: Option<DenseLayer>,
}

impl GruCell {
    pub fn init(rng: &mut impl Rng, inputs: usize, hidden: usize, outputs: Option<usize>) -> Self {
        let mut m = |r, c| init_matrix(rng, r, c);
        let (w_hr, w_xr) = (m(hidden, hidden), m(hidden, inputs));
        let (w_hu, w_xu) = (m(hidden, hidden), m(hidden, inputs));
        let (w_hc, w_xc) = (m(hidden, hidden), m(hidden, inputs));
        let zeros = || Value::zeros(&[hidden]);
        Self {
            w_hr,
            w_xr,
            b_r: zeros(),
            w_hu,
            w_xu,
            b_u: zeros(),
            w_hc,
            w_xc,
            b_c: zeros(),
            b_h: zeros(),
            head: outputs.map(|o| DenseLayer::init(rng, hidden, o, Activation::Linear)),
        }
    }

    pub fn zeros(inputs: usize, hidden: usize, outputs: Option<usize>) -> Self {
        let hh = || Value::zeros(&[hidden, hidden]);
        let hx = || Value::zeros(&[hidden, inputs]);
        let b = || Value::zeros(&[hidden]);
        Self {
            w_hr: hh(),
            w_xr: hx(),
            b_r: b(),
            w_hu: hh(),
            w_xu: hx(),
            b_u: b(),
            w_hc: hh(),
            w_xc: hx(),
            b_c: b(),
            b_h: b(),
            head: outputs.map(|o| DenseLayer::zeros(hidden, o, Activation::Linear)),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_hr.dims().0
    }

    pub fn inputs(&self) -> usize {
        self.w_xr.dims().1
    }

    pub fn bind(&self, g: &mut Graph) -> Result<BoundGru> {
        let mut leaf = |v: &Value| g.leaf(v.clone());
        Ok(BoundGru {
            w_hr: leaf(&self.w_hr)?,
            w_xr: leaf(&self.w_xr)?,
            b_r: leaf(&self.b_r)?,
            w_hu: leaf(&self.w_hu)?,
            w_xu: leaf(&self.w_xu)?,
            b_u: leaf(&self.b_u)?,
            w_hc: leaf(&self.w_hc)?,
            w_xc: leaf(&self.w_xc)?,
            b_c: leaf(&self.b_c)?,
            b_h: leaf(&self.b_h)?,
            head: self.head.as_ref().map(|h| h.bind(g)).transpose()?,
        })
    }

    /// One step on plain vectors. Returns the new hidden state, the head
    /// output when a head exists, and the reset and update gate values.
    pub fn step(&self, h_prev: &[f64], x: &[f64]) -> Result<GruStep> {
        if h_prev.len() != self.hidden() || x.len() != self.inputs() {
            return Err(Error::Dimension(format!(
                "gru step expects hidden {} and input {}, got {} and {}",
                self.hidden(),
                self.inputs(),
                h_prev.len(),
                x.len()
            )));
        }
        let mut g = Graph::new();
        let bound = self.bind(&mut g)?;
        let h = g.leaf(Value::vector(h_prev.to_vec()))?;
        let xv = g.leaf(Value::vector(x.to_vec()))?;
        let parts = bound.step_parts(&mut g, h, xv)?;
        let y = match &bound.head {
            Some(head) => {
                let y = head.forward(&mut g, parts.h)?;
                Some(g.value(y).data().to_vec())
            }
            None => None,
        };
        Ok(GruStep {
            h: g.value(parts.h).data().to_vec(),
            y,
            reset: g.value(parts.reset).data().to_vec(),
            update: g.value(parts.update).data().to_vec(),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GruStep {
    pub h: Vec<f64>,
    pub y: Option<Vec<f64>>,
    pub reset: Vec<f64>,
    pub update: Vec<f64>,
}

impl Parameters for GruCell {
    fn named_params(&self) -> Vec<(String, &Value)> {
        let mut out: Vec<(String, &Value)> = vec![
            ("W_hr".into(), &self.w_hr),
            ("W_xr".into(), &self.w_xr),
            ("b_r".into(), &self.b_r),
            ("W_hu".into(), &self.w_hu),
            ("W_xu".into(), &self.w_xu),
            ("b_u".into(), &self.b_u),
            ("W_hc".into(), &self.w_hc),
            ("W_xc".into(), &self.w_xc),
            ("b_c".into(), &self.b_c),
            ("b_h".into(), &self.b_h),
        ];
        if let Some(head) = &self.head {
            out.push(("W_hy".into(), &head.w));
            out.push(("b_y".into(), &head.b));
        }
        out
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Value)> {
        let mut out: Vec<(String, &mut Value)> = vec![
            ("W_hr".into(), &mut self.w_hr),
            ("W_xr".into(), &mut self.w_xr),
            ("b_r".into(), &mut self.b_r),
            ("W_hu".into(), &mut self.w_hu),
            ("W_xu".into(), &mut self.w_xu),
            ("b_u".into(), &mut self.b_u),
            ("W_hc".into(), &mut self.w_hc),
            ("W_xc".into(), &mut self.w_xc),
            ("b_c".into(), &mut self.b_c),
            ("b_h".into(), &mut self.b_h),
        ];
        if let Some(head) = &mut self.head {
            out.push(("W_hy".into(), &mut head.w));
            out.push(("b_y".into(), &mut head.b));
        }
        out
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BoundGru {
    pub w_hr: Var,
    pub w_xr: Var,
    pub b_r: Var,
    pub w_hu: Var,
    pub w_xu: Var,
    pub b_u: Var,
    pub w_hc: Var,
    pub w_xc: Var,
    pub b_c: Var,
    pub b_h: Var,
    pub head: Option<BoundLayer>,
}

pub(crate) struct GruParts {
    pub h: Var,
    pub reset: Var,
    pub update: Var,
}

impl BoundGru {
    /// Parameter handles in [`Parameters::named_params`] order.
    pub fn vars(&self) -> Vec<Var> {
        let mut v = vec![
            self.w_hr, self.w_xr, self.b_r, self.w_hu, self.w_xu, self.b_u, self.w_hc, self.w_xc, self.b_c, self.b_h,
        ];
        if let Some(head) = &self.head {
            v.extend([head.w, head.b]);
        }
        v
    }

    fn gate(&self, g: &mut Graph, wh: Var, wx: Var, b: Var, h: Var, x: Var) -> Result<Var> {
        let a = g.matmul(wh, h)?;
        let c = g.matmul(wx, x)?;
        let s = g.add(a, c)?;
        let s = add_bias(g, s, b)?;
        Ok(g.sigmoid(s)?)
    }

    pub(crate) fn step_parts(&self, g: &mut Graph, h: Var, x: Var) -> Result<GruParts> {
        let reset = self.gate(g, self.w_hr, self.w_xr, self.b_r, h, x)?;
        let update = self.gate(g, self.w_hu, self.w_xu, self.b_u, h, x)?;
        let rec = g.matmul(self.w_hc, h)?;
        let rec = g.mul(reset, rec)?;
        let inp = g.matmul(self.w_xc, x)?;
        let cand = g.add(rec, inp)?;
        let cand = add_bias(g, cand, self.b_c)?;
        let cand = g.tanh(cand)?;
        // u * h + (1 - u) * c = c + u * (h - c)
        let diff = g.sub(h, cand)?;
        let keep = g.mul(update, diff)?;
        let next = g.add(cand, keep)?;
        let next = add_bias(g, next, self.b_h)?;
        Ok(GruParts { h: next, reset, update })
    }

    pub fn step(&self, g: &mut Graph, h: Var, x: Var) -> Result<Var> {
        Ok(self.step_parts(g, h, x)?.h)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    Gru,
    Vanilla,
}

/// A recurrent cell of either kind, with a linear output head.
#[derive(Clone, Debug, PartialEq)]
pub enum RecurrentCell {
    Vanilla(VanillaRnnCell),
    Gru(GruCell),
}

impl RecurrentCell {
    /// Random cell with a linear head of width `outputs`. `activation` only
    /// applies to the vanilla cell; GRU gates are fixed.
    pub fn init(
        rng: &mut impl Rng,
        kind: CellKind,
        inputs: usize,
        hidden: usize,
        outputs: usize,
        activation: Activation,
    ) -> Self {
        match kind {
            CellKind::Vanilla => Self::Vanilla(VanillaRnnCell::init(rng, inputs, hidden, outputs, activation)),
            CellKind::Gru => Self::Gru(GruCell::init(rng, inputs, hidden, Some(outputs))),
        }
    }

    pub fn zeros(kind: CellKind, inputs: usize, hidden: usize, outputs: usize, activation: Activation) -> Self {
        match kind {
            CellKind::Vanilla => Self::Vanilla(VanillaRnnCell::zeros(inputs, hidden, outputs, activation)),
            CellKind::Gru => Self::Gru(GruCell::zeros(inputs, hidden, Some(outputs))),
        }
    }

    pub fn kind(&self) -> CellKind {
        match self {
            Self::Vanilla(_) => CellKind::Vanilla,
            Self::Gru(_) => CellKind::Gru,
        }
    }

    pub fn hidden(&self) -> usize {
        match self {
            Self::Vanilla(c) => c.hidden(),
            Self::Gru(c) => c.hidden(),
        }
    }

    pub fn inputs(&self) -> usize {
        match self {
            Self::Vanilla(c) => c.inputs(),
            Self::Gru(c) => c.inputs(),
        }
    }

    pub fn head(&self) -> &DenseLayer {
        match self {
            Self::Vanilla(c) => &c.head,
            Self::Gru(c) => c.head.as_ref().expect("recurrent cells carry an output head"),
        }
    }

    pub fn head_mut(&mut self) -> &mut DenseLayer {
        match self {
            Self::Vanilla(c) => &mut c.head,
            Self::Gru(c) => c.head.as_mut().expect("recurrent cells carry an output head"),
        }
    }

    pub fn outputs(&self) -> usize {
        self.head().outputs()
    }

    pub fn bind(&self, g: &mut Graph) -> Result<BoundCell> {
        Ok(match self {
            Self::Vanilla(c) => BoundCell::Vanilla(c.bind(g)?),
            Self::Gru(c) => BoundCell::Gru(c.bind(g)?),
        })
    }
}

impl Parameters for RecurrentCell {
    fn named_params(&self) -> Vec<(String, &Value)> {
        match self {
            Self::Vanilla(c) => c.named_params(),
            Self::Gru(c) => c.named_params(),
        }
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Value)> {
        match self {
            Self::Vanilla(c) => c.named_params_mut(),
            Self::Gru(c) => c.named_params_mut(),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub enum BoundCell {
    Vanilla(BoundVanilla),
    Gru(BoundGru),
}

impl BoundCell {
    pub fn vars(&self) -> Vec<Var> {
        match self {
            Self::Vanilla(c) => c.vars(),
            Self::Gru(c) => c.vars(),
        }
    }

    pub fn step(&self, g: &mut Graph, h: Var, x: Var) -> Result<Var> {
        match self {
            Self::Vanilla(c) => c.step(g, h, x),
            Self::Gru(c) => c.step(g, h, x),
        }
    }

    pub fn head(&self, g: &mut Graph, h: Var) -> Result<Var> {
        match self {
            Self::Vanilla(c) => c.head.forward(g, h),
            Self::Gru(c) => c.head.expect("recurrent cells carry an output head").forward(g, h),
        }
    }
}

/// Unrolls a vanilla cell over `xs` from `h0`; returns every head output and
/// the final hidden state.
pub fn vanilla_rnn_rollout(cell: &VanillaRnnCell, xs: &[Vec<f64>], h0: &[f64]) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    if h0.len() != cell.hidden() {
        return Err(Error::Dimension(format!("h0 has {} entries, cell has {}", h0.len(), cell.hidden())));
    }
    let mut g = Graph::new();
    let bound = cell.bind(&mut g)?;
    let mut h = g.constant(Value::vector(h0.to_vec()))?;
    let mut ys = Vec::with_capacity(xs.len());
    for x in xs {
        if x.len() != cell.inputs() {
            return Err(Error::Dimension(format!("input has {} entries, cell expects {}", x.len(), cell.inputs())));
        }
        let xv = g.constant(Value::vector(x.clone()))?;
        h = bound.step(&mut g, h, xv)?;
        let y = bound.head.forward(&mut g, h)?;
        ys.push(g.value(y).data().to_vec());
    }
    Ok((ys, g.value(h).data().to_vec()))
}
