//! Training of the black-box recurrent baselines in total and incremental form.

use crate::autodiff::{Graph, Value};
use crate::datagen::MaterialPath;
use crate::nets::{batch_inputs, Activation, CellKind, ConstitutiveRnn, CurrentStep, Form, Parameters, SequenceWindow, StepState};
use crate::rng;
use crate::{Error, Result};

use super::adam::{adam_step, AdamState};
use super::loss::stress_only;
use super::stats::{fit_stats, FeatureStats, StandardizationStats};
use super::train::{batches, check_finite, diverged, noisy_copy, TrainConfig};
use super::windows::make_windows;

/// A [`ConstitutiveRnn`] with its statistics and window length.
#[derive(Clone, Debug, PartialEq)]
pub struct BaselineModel {
    pub net: ConstitutiveRnn,
    pub stats: StandardizationStats,
    pub rnn_steps: usize,
}

impl BaselineModel {
    pub fn init(
        kind: CellKind,
        hidden: usize,
        form: Form,
        rnn_steps: usize,
        dataset: &[MaterialPath],
        seed: u64,
    ) -> Result<Self> {
        if rnn_steps == 0 || hidden == 0 {
            return Err(Error::Config("baseline needs positive rnn_steps and hidden size".into()));
        }
        let stats = fit_stats(dataset, false)?;
        if form == Form::Incremental && (stats.strain_increment.is_none() || stats.stress_increment.is_none()) {
            return Err(Error::ConstantColumn("deps".into()));
        }
        let d = stats.strain_dim();
        let mut rng = rng::stream(seed, &[0xBA5E]);
        let net = ConstitutiveRnn::init(&mut rng, kind, d, false, hidden, Activation::Tanh, form);
        Ok(Self { net, stats, rnn_steps })
    }

    fn increments(&self) -> (&FeatureStats, &FeatureStats) {
        (
            self.stats.strain_increment.as_ref().expect("checked at construction"),
            self.stats.stress_increment.as_ref().expect("checked at construction"),
        )
    }

    /// Standardized network input for a physical window; `prev_strain` is the
    /// strain of the step before the current one.
    pub fn standardize(&self, raw: &SequenceWindow, prev_strain: &[f64]) -> SequenceWindow {
        let s = &self.stats;
        let history = raw
            .history
            .iter()
            .map(|h| StepState { strain: s.strain.standardize(&h.strain), stress: s.stress.standardize(&h.stress), temperature: None })
            .collect();
        let strain = match self.net.form {
            Form::Total => s.strain.standardize(&raw.current.strain),
            Form::Incremental => {
                let de: Vec<f64> = raw.current.strain.iter().zip(prev_strain).map(|(a, b)| a - b).collect();
                self.increments().0.standardize(&de)
            }
        };
        SequenceWindow { history, current: CurrentStep { strain, temperature: None } }
    }

    /// Standardized target for stress `stress` after `prev_stress`.
    pub fn target(&self, stress: &[f64], prev_stress: &[f64]) -> Vec<f64> {
        match self.net.form {
            Form::Total => self.stats.stress.standardize(stress),
            Form::Incremental => {
                let ds: Vec<f64> = stress.iter().zip(prev_stress).map(|(a, b)| a - b).collect();
                self.increments().1.standardize(&ds)
            }
        }
    }

    /// Physical stress predicted for a physical window.
    pub fn predict(&self, raw: &SequenceWindow, prev_strain: &[f64], prev_stress: &[f64]) -> Result<Vec<f64>> {
        let y = self.net.forward(&self.standardize(raw, prev_strain))?;
        Ok(match self.net.form {
            Form::Total => self.stats.stress.destandardize(&y),
            Form::Incremental => {
                let ds = self.increments().1.destandardize(&y);
                prev_stress.iter().zip(&ds).map(|(a, b)| a + b).collect()
            }
        })
    }
}

impl Parameters for BaselineModel {
    fn named_params(&self) -> Vec<(String, &Value)> {
        self.net.named_params()
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Value)> {
        self.net.named_params_mut()
    }
}

/// Teacher-forced training on stress data with the same noise, batching and
/// optimizer settings as the energy-based model.
pub fn train_baseline(model: &mut BaselineModel, dataset: &[MaterialPath], config: &TrainConfig) -> Result<Vec<f64>> {
    config.validate()?;
    let s = model.rnn_steps;
    let clean = make_windows(dataset, None, s, config.padding)?;
    let targets: Vec<Vec<f64>> = clean
        .iter()
        .map(|w| {
            let p = &dataset[w.path];
            model.target(&p.stress[w.step], &p.stress[w.step - 1])
        })
        .collect();
    let mut state = AdamState::new(model.named_params().into_iter().map(|(_, v)| v));
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let windows = match noisy_copy(dataset, config, epoch)? {
            Some(noisy) => make_windows(dataset, Some(&noisy), s, config.padding)?,
            None => clean.clone(),
        };
        let inputs: Vec<SequenceWindow> = windows
            .iter()
            .map(|w| model.standardize(&w.window, &dataset[w.path].strain[w.step - 1]))
            .collect();
        let mut total = 0.0;
        for batch in batches(inputs.len(), config.batch_size, config.seed, epoch) {
            let bw: Vec<SequenceWindow> = batch.iter().map(|&i| inputs[i].clone()).collect();
            let bt: Vec<Vec<f64>> = batch.iter().map(|&i| targets[i].clone()).collect();
            let mut g = Graph::new();
            let bound = model.net.cell.bind(&mut g)?;
            let steps = batch_inputs(&bw)?
                .into_iter()
                .map(|m| g.constant(m))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            let y = model.net.forward_graph(&mut g, &bound, &steps).map_err(|e| diverged(e, epoch))?;
            let l = stress_only(&mut g, y, &bt, config.loss.norm).map_err(|e| diverged(e, epoch))?;
            let vars = bound.vars();
            let grads = g.backward(l, &vars)?;
            let grads: Vec<Value> =
                vars.iter().map(|v| grads.get(*v).cloned().unwrap_or_else(|| Value::zeros(g.shape(*v)))).collect();
            let lv = g.value(l).item();
            check_finite(lv, &grads, epoch)?;
            total += lv;
            let mut params: Vec<&mut Value> = model.named_params_mut().into_iter().map(|(_, v)| v).collect();
            adam_step(&mut params, &grads, &mut state, config.learning_rate)?;
        }
        history.push(total);
    }
    Ok(history)
}
