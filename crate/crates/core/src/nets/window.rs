//! Input windows for recurrent constitutive models and the batched rollout.
//!
//! Each step is fed as one column vector laid out as `[strain; stress; T]`.
//! The current step has no stress, so its stress rows are zero, which removes
//! the stress term from that step's transform exactly.

use crate::autodiff::{Graph, Value, Var};
use crate::{Error, Result};

use super::recurrent::BoundCell;

#[derive(Clone, Debug, PartialEq)]
pub struct StepState {
    pub strain: Vec<f64>,
    pub stress: Vec<f64>,
    pub temperature: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CurrentStep {
    pub strain: Vec<f64>,
    pub temperature: Option<f64>,
}

/// History steps carrying strain and stress, followed by a current step
/// carrying strain only.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceWindow {
    pub history: Vec<StepState>,
    pub current: CurrentStep,
}

/// Width of one step input: strain, stress and an optional temperature.
pub fn step_input_width(strain_dim: usize, thermal: bool) -> usize {
    2 * strain_dim + usize::from(thermal)
}

impl SequenceWindow {
    pub fn new(history: Vec<StepState>, current: CurrentStep) -> Result<Self> {
        let w = Self { history, current };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.current.strain.len();
        if d == 0 {
            return Err(Error::Dimension("window strain has no components".into()));
        }
        let thermal = self.current.temperature.is_some();
        for (i, s) in self.history.iter().enumerate() {
            if s.strain.len() != d || s.stress.len() != d {
                return Err(Error::Dimension(format!(
                    "history step {i} has strain/stress of length {}/{}, expected {d}",
                    s.strain.len(),
                    s.stress.len()
                )));
            }
            if s.temperature.is_some() != thermal {
                return Err(Error::Dimension(format!("history step {i} disagrees on temperature")));
            }
        }
        Ok(())
    }

    pub fn strain_dim(&self) -> usize {
        self.current.strain.len()
    }

    pub fn is_thermal(&self) -> bool {
        self.current.temperature.is_some()
    }

    /// History length plus the current step.
    pub fn steps(&self) -> usize {
        self.history.len() + 1
    }

    /// One input vector per step, oldest first.
    pub fn step_inputs(&self) -> Vec<Vec<f64>> {
        let d = self.strain_dim();
        let mut out: Vec<Vec<f64>> = self
            .history
            .iter()
            .map(|s| {
                let mut v = Vec::with_capacity(2 * d + 1);
                v.extend_from_slice(&s.strain);
                v.extend_from_slice(&s.stress);
                v.extend(s.temperature);
                v
            })
            .collect();
        let mut v = Vec::with_capacity(2 * d + 1);
        v.extend_from_slice(&self.current.strain);
        v.extend(std::iter::repeat_n(0.0, d));
        v.extend(self.current.temperature);
        out.push(v);
        out
    }

    /// Flat feed-forward input: per history step strain, stress, then
    /// temperature; then the current strain and temperature.
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::new();
        for s in &self.history {
            v.extend_from_slice(&s.strain);
            v.extend_from_slice(&s.stress);
            v.extend(s.temperature);
        }
        v.extend_from_slice(&self.current.strain);
        v.extend(self.current.temperature);
        v
    }
}

/// Stacks the step inputs of several windows into one `[width, batch]`
/// matrix per step, one window per column.
pub fn batch_inputs(windows: &[SequenceWindow]) -> Result<Vec<Value>> {
    let first = windows.first().ok_or_else(|| Error::MissingData("empty window batch".into()))?;
    let steps = first.steps();
    let width = step_input_width(first.strain_dim(), first.is_thermal());
    let b = windows.len();
    let mut mats = vec![vec![0.0; width * b]; steps];
    for (col, w) in windows.iter().enumerate() {
        if w.steps() != steps || w.strain_dim() != first.strain_dim() || w.is_thermal() != first.is_thermal() {
            return Err(Error::Dimension("windows in one batch must share their layout".into()));
        }
        for (m, x) in mats.iter_mut().zip(w.step_inputs()) {
            for (row, v) in x.into_iter().enumerate() {
                m[row * b + col] = v;
            }
        }
    }
    Ok(mats.into_iter().map(|m| Value::matrix(width, b, m)).collect())
}

/// Unrolls `cell` over per-step inputs from a zero state and returns the
/// hidden state after every step.
pub fn rollout(g: &mut Graph, cell: &BoundCell, hidden: usize, inputs: &[Var]) -> Result<Vec<Var>> {
    let first = inputs.first().ok_or_else(|| Error::MissingData("rollout needs at least one step".into()))?;
    let shape = g.shape(*first).to_vec();
    let h0 = if shape.len() == 2 { Value::zeros(&[hidden, shape[1]]) } else { Value::zeros(&[hidden]) };
    let mut h = g.constant(h0)?;
    let mut states = Vec::with_capacity(inputs.len());
    for &x in inputs {
        h = cell.step(g, h, x)?;
        states.push(h);
    }
    Ok(states)
}
