//! Teacher-forced training windows.

use crate::datagen::MaterialPath;
use crate::nets::{CurrentStep, SequenceWindow, StepState};
use crate::thermo::{TcrnnModel, ThermoInput};
use crate::{Error, Result};

/// Supervision for one window, in physical units and always from the clean
/// columns.
#[derive(Clone, Debug, PartialEq)]
pub struct Targets {
    pub stress: Vec<f64>,
    pub free_energy: Option<f64>,
    pub dissipation: Option<f64>,
    pub entropy: Option<f64>,
    pub isv: Option<Vec<f64>>,
}

/// A physical window ending at step `step` of path `path`, with the rates of
/// every window input and the time step into `step`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingWindow {
    pub path: usize,
    pub step: usize,
    pub window: SequenceWindow,
    pub rates: SequenceWindow,
    pub dt: f64,
    pub targets: Targets,
}

impl TrainingWindow {
    pub fn standardized(&self, model: &TcrnnModel) -> Result<ThermoInput> {
        Ok(ThermoInput { window: model.standardize_window(&self.window)?, rates: Some(self.rates.clone()), dt: self.dt })
    }
}

/// Backward-difference rate of `col` at step `k`; zero at the first step.
pub fn backward_rate(col: &[Vec<f64>], time: &[f64], k: usize) -> Vec<f64> {
    if k == 0 {
        return vec![0.0; col[0].len()];
    }
    let dt = time[k] - time[k - 1];
    col[k].iter().zip(&col[k - 1]).map(|(a, b)| (a - b) / dt).collect()
}

fn scalar_rate(col: &Option<Vec<f64>>, time: &[f64], k: usize) -> Option<f64> {
    col.as_ref().map(|c| if k == 0 { 0.0 } else { (c[k] - c[k - 1]) / (time[k] - time[k - 1]) })
}

/// First target step of a path for `rnn_steps`.
pub fn first_target(rnn_steps: usize, padding: bool) -> usize {
    if padding {
        1
    } else {
        rnn_steps.saturating_sub(1).max(1)
    }
}

/// Window ending at step `n`. History entries before the start of the path
/// repeat step 0 and carry zero rates. `history_stress` supplies the stress
/// fed as history input (possibly perturbed) and `rate_stress` the stress
/// whose backward differences give the history stress rates.
pub fn window_at(
    path: &MaterialPath,
    history_stress: &[Vec<f64>],
    rate_stress: &[Vec<f64>],
    rnn_steps: usize,
    n: usize,
) -> (SequenceWindow, SequenceWindow) {
    let d = path.strain_dim();
    let temp = |k: usize| path.temperature.as_ref().map(|t| t[k]);
    let mut history = Vec::with_capacity(rnn_steps - 1);
    let mut rates = Vec::with_capacity(rnn_steps - 1);
    for back in (1..rnn_steps).rev() {
        let (k, padded) = if back > n { (0, true) } else { (n - back, false) };
        history.push(StepState { strain: path.strain[k].clone(), stress: history_stress[k].clone(), temperature: temp(k) });
        rates.push(if padded {
            StepState { strain: vec![0.0; d], stress: vec![0.0; d], temperature: temp(k).map(|_| 0.0) }
        } else {
            StepState {
                strain: backward_rate(&path.strain, &path.time, k),
                stress: backward_rate(rate_stress, &path.time, k),
                temperature: scalar_rate(&path.temperature, &path.time, k),
            }
        });
    }
    let window = SequenceWindow { history, current: CurrentStep { strain: path.strain[n].clone(), temperature: temp(n) } };
    let rate = SequenceWindow {
        history: rates,
        current: CurrentStep {
            strain: backward_rate(&path.strain, &path.time, n),
            temperature: scalar_rate(&path.temperature, &path.time, n),
        },
    };
    (window, rate)
}

/// Sliding windows over every path. With `padding` every step `n >= 1` is a
/// target; without it targets start once a full history exists.
pub fn make_windows(
    dataset: &[MaterialPath],
    noisy: Option<&[MaterialPath]>,
    rnn_steps: usize,
    padding: bool,
) -> Result<Vec<TrainingWindow>> {
    if rnn_steps == 0 {
        return Err(Error::Config("rnn_steps must be positive".into()));
    }
    if let Some(n) = noisy {
        if n.len() != dataset.len() {
            return Err(Error::Dimension("noisy and clean datasets differ in length".into()));
        }
    }
    let mut out = Vec::new();
    for (pi, path) in dataset.iter().enumerate() {
        path.validate()?;
        if path.len() < rnn_steps {
            return Err(Error::MissingData(format!(
                "path {pi} has {} steps, fewer than the {rnn_steps} RNN steps",
                path.len()
            )));
        }
        let history_stress = match noisy {
            Some(n) if n[pi].stress.len() == path.len() => &n[pi].stress,
            Some(_) => return Err(Error::Dimension(format!("noisy path {pi} has a different length"))),
            None => &path.stress,
        };
        for n in first_target(rnn_steps, padding)..path.len() {
            let (window, rates) = window_at(path, history_stress, &path.stress, rnn_steps, n);
            out.push(TrainingWindow {
                path: pi,
                step: n,
                window,
                rates,
                dt: path.dt(n),
                targets: Targets {
                    stress: path.stress[n].clone(),
                    free_energy: path.free_energy.as_ref().map(|f| f[n]),
                    dissipation: path.dissipation.as_ref().map(|d| d[n]),
                    entropy: None,
                    isv: path.reference_isv.as_ref().map(|z| z[n].clone()),
                },
            });
        }
    }
    Ok(out)
}
