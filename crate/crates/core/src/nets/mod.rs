//! Network building blocks over the autodiff graph.

pub mod constitutive;
pub mod dense;
pub mod recurrent;
pub mod window;

pub use constitutive::{constitutive_forward, dnn_constitutive_forward, ConstitutiveRnn, DnnConstitutive, Form};
pub use dense::{Activation, BoundLayer, BoundStack, DenseLayer, DenseStack};
pub use recurrent::{
    vanilla_rnn_rollout, BoundCell, BoundGru, BoundVanilla, CellKind, GruCell, GruStep, RecurrentCell, VanillaRnnCell,
};
pub use window::{batch_inputs, rollout, step_input_width, CurrentStep, SequenceWindow, StepState};

use crate::autodiff::Value;

/// Named access to trainable tensors, in a fixed order.
pub trait Parameters {
    fn named_params(&self) -> Vec<(String, &Value)>;

    fn named_params_mut(&mut self) -> Vec<(String, &mut Value)>;

    fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, v)| v.len()).sum()
    }
}
