//! Black-box constitutive baselines: a recurrent cell or a feed-forward stack
//! mapping a strain/stress window to stress (total form) or to a stress
//! increment (incremental form).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Value, Var};
use crate::{Error, Result};

use super::dense::{Activation, BoundStack, DenseStack};
use super::recurrent::{BoundCell, CellKind, RecurrentCell};
use super::window::{rollout, step_input_width, SequenceWindow};
use super::Parameters;

/// What the current step carries. In the total form it is the total strain
/// and the output is total stress; in the incremental form it is the strain
/// increment and the output is the stress increment. History steps always
/// carry total strain and stress.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Form {
    Total,
    Incremental,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConstitutiveRnn {
    pub cell: RecurrentCell,
    pub form: Form,
    pub strain_dim: usize,
    pub thermal: bool,
}

impl ConstitutiveRnn {
    #[allow(clippy::too_many_arguments)]
    pub fn init(
        rng: &mut impl Rng,
        kind: CellKind,
        strain_dim: usize,
        thermal: bool,
        hidden: usize,
        activation: Activation,
        form: Form,
    ) -> Self {
        let inputs = step_input_width(strain_dim, thermal);
        Self { cell: RecurrentCell::init(rng, kind, inputs, hidden, strain_dim, activation), form, strain_dim, thermal }
    }

    /// Output `[d, batch]` (or `[d]`) from per-step inputs.
    pub fn forward_graph(&self, g: &mut Graph, bound: &BoundCell, inputs: &[Var]) -> Result<Var> {
        let states = rollout(g, bound, self.cell.hidden(), inputs)?;
        bound.head(g, *states.last().expect("rollout returns one state per step"))
    }

    pub fn forward(&self, window: &SequenceWindow) -> Result<Vec<f64>> {
        if window.strain_dim() != self.strain_dim || window.is_thermal() != self.thermal {
            return Err(Error::Dimension("window layout does not match the model".into()));
        }
        constitutive_forward(&self.cell, window)
    }
}

impl Parameters for ConstitutiveRnn {
    fn named_params(&self) -> Vec<(String, &Value)> {
        self.cell.named_params()
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Value)> {
        self.cell.named_params_mut()
    }
}

/// Runs `cell` over the window from a zero state and applies its head to the
/// final hidden state.
pub fn constitutive_forward(cell: &RecurrentCell, window: &SequenceWindow) -> Result<Vec<f64>> {
    window.validate()?;
    let width = step_input_width(window.strain_dim(), window.is_thermal());
    if width != cell.inputs() {
        return Err(Error::Dimension(format!("window steps have {width} inputs, cell expects {}", cell.inputs())));
    }
    let mut g = Graph::new();
    let bound = cell.bind(&mut g)?;
    let inputs = window
        .step_inputs()
        .into_iter()
        .map(|x| g.constant(Value::vector(x)))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let states = rollout(&mut g, &bound, cell.hidden(), &inputs)?;
    let y = bound.head(&mut g, *states.last().expect("at least one step"))?;
    Ok(g.value(y).data().to_vec())
}

/// Feed-forward baseline with a fixed number of history steps.
#[derive(Clone, Debug, PartialEq)]
pub struct DnnConstitutive {
    pub stack: DenseStack,
    pub form: Form,
    pub history_len: usize,
    pub strain_dim: usize,
    pub thermal: bool,
}

impl DnnConstitutive {
    pub fn input_width(history_len: usize, strain_dim: usize, thermal: bool) -> usize {
        history_len * step_input_width(strain_dim, thermal) + strain_dim + usize::from(thermal)
    }

    pub fn new(stack: DenseStack, form: Form, history_len: usize, strain_dim: usize, thermal: bool) -> Result<Self> {
        let expected = Self::input_width(history_len, strain_dim, thermal);
        if stack.input_width() != expected || stack.output_width() != strain_dim {
            return Err(Error::Dimension(format!(
                "stack maps {} -> {}, window needs {expected} -> {strain_dim}",
                stack.input_width(),
                stack.output_width()
            )));
        }
        Ok(Self { stack, form, history_len, strain_dim, thermal })
    }

    #[allow(clippy::too_many_arguments)]
    pub fn init(
        rng: &mut impl Rng,
        hidden: &[usize],
        activation: Activation,
        form: Form,
        history_len: usize,
        strain_dim: usize,
        thermal: bool,
    ) -> Self {
        let mut widths = vec![Self::input_width(history_len, strain_dim, thermal)];
        widths.extend_from_slice(hidden);
        widths.push(strain_dim);
        Self { stack: DenseStack::init(rng, &widths, activation), form, history_len, strain_dim, thermal }
    }

    pub fn forward_graph(&self, g: &mut Graph, bound: &BoundStack, x: Var) -> Result<Var> {
        bound.forward(g, x)
    }

    pub fn forward(&self, window: &SequenceWindow) -> Result<Vec<f64>> {
        dnn_constitutive_forward(self, window)
    }
}

impl Parameters for DnnConstitutive {
    fn named_params(&self) -> Vec<(String, &Value)> {
        self.stack.named_params()
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Value)> {
        self.stack.named_params_mut()
    }
}

pub fn dnn_constitutive_forward(model: &DnnConstitutive, window: &SequenceWindow) -> Result<Vec<f64>> {
    window.validate()?;
    if window.history.len() != model.history_len {
        return Err(Error::Dimension(format!(
            "model was built for {} history steps, window has {}",
            model.history_len,
            window.history.len()
        )));
    }
    if window.strain_dim() != model.strain_dim || window.is_thermal() != model.thermal {
        return Err(Error::Dimension("window layout does not match the model".into()));
    }
    model.stack.forward(&window.flatten())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::recurrent::{vanilla_rnn_rollout, GruCell, VanillaRnnCell};
    use crate::nets::window::{CurrentStep, StepState};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn window(points: &[(f64, f64)], current: f64) -> SequenceWindow {
        let history = points
            .iter()
            .map(|&(e, s)| StepState { strain: vec![e], stress: vec![s], temperature: None })
            .collect();
        SequenceWindow::new(history, CurrentStep { strain: vec![current], temperature: None }).unwrap()
    }

    #[test]
    fn zero_parameters_give_zero() {
        let cell = RecurrentCell::zeros(CellKind::Gru, 2, 4, 1, Activation::Tanh);
        assert_eq!(constitutive_forward(&cell, &window(&[(0.3, 1.0), (0.4, 2.0)], 0.5)).unwrap(), vec![0.0]);
        let cell = RecurrentCell::zeros(CellKind::Vanilla, 2, 4, 1, Activation::Tanh);
        assert_eq!(constitutive_forward(&cell, &window(&[], 0.5)).unwrap(), vec![0.0]);
    }

    #[test]
    fn unit_weights_at_zero_state() {
        let mut cell = VanillaRnnCell::zeros(2, 1, 1, Activation::Tanh);
        cell.w_hh = Value::matrix(1, 1, vec![1.0]);
        cell.w_xh = Value::matrix(1, 2, vec![1.0, 1.0]);
        cell.head.w = Value::matrix(1, 1, vec![1.0]);
        let y = constitutive_forward(&RecurrentCell::Vanilla(cell), &window(&[(0.0, 0.0)], 0.0)).unwrap();
        assert_eq!(y, vec![0.0]);
    }

    #[test]
    fn zero_stress_weights_reduce_to_strain_rollout() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut full = VanillaRnnCell::init(&mut rng, 2, 5, 1, Activation::Tanh);
        let strain_only: Vec<f64> = (0..5).map(|r| full.w_xh.get(r, 0)).collect();
        for r in 0..5 {
            full.w_xh.data_mut()[r * 2 + 1] = 0.0;
        }
        let mut reduced = full.clone();
        reduced.w_xh = Value::matrix(5, 1, strain_only);
        let w = window(&[(0.1, 7.0), (0.2, -3.0), (0.25, 11.0)], 0.3);
        let strains: Vec<Vec<f64>> = [0.1, 0.2, 0.25, 0.3].iter().map(|&e| vec![e]).collect();
        let (ys, _) = vanilla_rnn_rollout(&reduced, &strains, &[0.0; 5]).unwrap();
        let y = constitutive_forward(&RecurrentCell::Vanilla(full), &w).unwrap();
        assert_eq!(y, *ys.last().unwrap());
    }

    #[test]
    fn gru_step_by_step_matches_rollout() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let gru = GruCell::init(&mut rng, 2, 6, Some(1));
        let w = window(&[(0.4, -0.7)], 0.9);
        let s1 = gru.step(&[0.0; 6], &[0.4, -0.7]).unwrap();
        let s2 = gru.step(&s1.h, &[0.9, 0.0]).unwrap();
        let y = constitutive_forward(&RecurrentCell::Gru(gru), &w).unwrap();
        assert_eq!(s2.y.unwrap(), y);
    }

    #[test]
    fn dnn_baseline() {
        let zero = DnnConstitutive::new(DenseStack::zeros(&[3, 4, 1], Activation::Tanh), Form::Total, 1, 1, false)
            .unwrap();
        assert_eq!(zero.forward(&window(&[(1.0, 2.0)], 3.0)).unwrap(), vec![0.0]);

        let mut lin = DenseStack::zeros(&[3, 1], Activation::Linear);
        lin.layers_mut()[0].w = Value::matrix(1, 3, vec![1.0, 10.0, 100.0]);
        let model = DnnConstitutive::new(lin, Form::Incremental, 1, 1, false).unwrap();
        assert_eq!(model.forward(&window(&[(1.0, 2.0)], 3.0)).unwrap(), vec![321.0]);
        assert!(model.forward(&window(&[(1.0, 2.0), (1.0, 2.0)], 3.0)).is_err());
        assert!(model.forward(&window(&[], 3.0)).is_err());
    }

    #[test]
    fn parameter_count_is_independent_of_window_length() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let model = ConstitutiveRnn::init(&mut rng, CellKind::Gru, 1, false, 5, Activation::Tanh, Form::Total);
        for len in [1, 5, 40] {
            let w = window(&vec![(0.1, 0.2); len - 1], 0.3);
            let mut g = Graph::new();
            let bound = model.cell.bind(&mut g).unwrap();
            let inputs: Vec<Var> =
                w.step_inputs().into_iter().map(|x| g.constant(Value::vector(x)).unwrap()).collect();
            model.forward_graph(&mut g, &bound, &inputs).unwrap();
            let n: usize = bound.vars().iter().map(|&v| g.value(v).len()).sum();
            assert_eq!(n, model.param_count());
        }
    }
}
