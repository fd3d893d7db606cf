//! Teacher-forced training of [`TcrnnModel`]s.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Value};
use crate::datagen::{augment_time_consistency, perturb_stress, MaterialPath};
use crate::nets::Parameters;
use crate::rng;
use crate::thermo::{RateSource, TcrnnModel, TcrnnSpec, ThermoInput};
use crate::{Error, Result};

use super::adam::{adam_step, AdamState};
use super::loss::{loss, LossWeights, Predictions};
use super::stats::fit_stats;
use super::windows::{make_windows, Targets, TrainingWindow};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Windows per optimizer step; `None` trains full batch.
    pub batch_size: Option<usize>,
    pub learning_rate: f64,
    /// Noise standard deviation on history stress, as a fraction of max |stress|.
    pub noise_ratio: f64,
    /// Draw fresh noise every epoch instead of once.
    pub resample_noise: bool,
    /// Duplicate every `stride`-th step with a zero increment; 0 disables.
    pub time_consistency_stride: usize,
    pub seed: u64,
    /// Pad the first windows of each path with its first step.
    pub padding: bool,
    pub loss: LossWeights,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: None,
            learning_rate: 1e-3,
            noise_ratio: 0.0,
            resample_noise: true,
            time_consistency_stride: 0,
            seed: 0,
            padding: true,
            loss: LossWeights::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if !(self.noise_ratio >= 0.0 && self.noise_ratio.is_finite()) {
            return Err(Error::Config("noise ratio must be non-negative".into()));
        }
        if self.batch_size == Some(0) {
            return Err(Error::Config("batch size must be positive".into()));
        }
        self.loss.validate()
    }
}

/// Trained model plus the loss of every epoch (sum over its batches,
/// evaluated before each update).
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: TcrnnModel,
    pub history: Vec<f64>,
}

impl TrainOutcome {
    pub fn final_loss(&self) -> Option<f64> {
        self.history.last().copied()
    }
}

/// Fits statistics on `dataset` and draws initial weights from `seed`.
pub fn init_model(spec: TcrnnSpec, dataset: &[MaterialPath], seed: u64) -> Result<TcrnnModel> {
    let stats = fit_stats(dataset, spec.is_thermal())?;
    let mut rng = rng::stream(seed, &[0x1417]);
    TcrnnModel::init(&mut rng, spec, stats)
}

/// Perturbed copies of `dataset` for `epoch`, or `None` without noise.
pub(crate) fn noisy_copy(dataset: &[MaterialPath], config: &TrainConfig, epoch: usize) -> Result<Option<Vec<MaterialPath>>> {
    if config.noise_ratio == 0.0 {
        return Ok(None);
    }
    let label = if config.resample_noise { epoch as u64 } else { 0 };
    dataset
        .iter()
        .enumerate()
        .map(|(i, p)| perturb_stress(p, config.noise_ratio, rng::derive(config.seed, &[label, i as u64])))
        .collect::<Result<Vec<_>>>()
        .map(Some)
}

/// Index batches for one epoch; full batch keeps the natural order.
pub(crate) fn batches(n: usize, batch_size: Option<usize>, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    match batch_size {
        Some(b) if b < n => {
            idx.shuffle(&mut rng::stream(seed, &[0xBA7C, epoch as u64]));
            idx.chunks(b).map(<[usize]>::to_vec).collect()
        }
        _ => vec![idx],
    }
}

pub(crate) fn training_paths(dataset: &[MaterialPath], config: &TrainConfig) -> Result<Vec<MaterialPath>> {
    if config.time_consistency_stride > 0 {
        augment_time_consistency(dataset, config.time_consistency_stride)
    } else {
        Ok(dataset.to_vec())
    }
}

/// Loss of `model` on standardized inputs and its gradient with respect to
/// every parameter, in [`Parameters`] order.
pub fn loss_and_gradient(
    model: &TcrnnModel,
    inputs: &[ThermoInput],
    targets: &[Targets],
    weights: &LossWeights,
) -> Result<(f64, Vec<Value>)> {
    let mut g = Graph::new();
    let bound = model.bind(&mut g)?;
    let nodes = model.build(&mut g, &bound, inputs, Some(RateSource::from(model.spec.variant)))?;
    let pred = Predictions::from_nodes(&nodes)?;
    let l = loss(&mut g, &pred, targets, &model.stats, weights)?;
    let vars = bound.vars();
    let grads = g.backward(l, &vars)?;
    let out = vars
        .iter()
        .map(|v| grads.get(*v).cloned().unwrap_or_else(|| Value::zeros(g.shape(*v))))
        .collect();
    Ok((g.value(l).item(), out))
}

/// Non-finite intermediate values surface as divergence at `epoch`.
pub(crate) fn diverged(e: Error, epoch: usize) -> Error {
    if e.is_numerical() {
        Error::Diverged { epoch }
    } else {
        e
    }
}

pub(crate) fn check_finite(loss: f64, grads: &[Value], epoch: usize) -> Result<()> {
    if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::Diverged { epoch });
    }
    Ok(())
}

/// Noise-free full-batch loss of `model` on the training windows of `dataset`.
pub fn dataset_loss(model: &TcrnnModel, dataset: &[MaterialPath], config: &TrainConfig) -> Result<f64> {
    let paths = training_paths(dataset, config)?;
    let windows = make_windows(&paths, None, model.spec.rnn_steps, config.padding)?;
    let inputs = windows.iter().map(|w| w.standardized(model)).collect::<Result<Vec<_>>>()?;
    let targets: Vec<Targets> = windows.into_iter().map(|w| w.targets).collect();
    Ok(loss_and_gradient(model, &inputs, &targets, &config.loss)?.0)
}

/// Trains `model` (whose statistics are already fitted) on `dataset`.
pub fn train(mut model: TcrnnModel, dataset: &[MaterialPath], config: &TrainConfig) -> Result<TrainOutcome> {
    let history = train_with(&mut model, dataset, config, |_, _| {})?;
    Ok(TrainOutcome { model, history })
}

/// [`train`] in place, calling `on_epoch(epoch, loss)` after every epoch.
pub fn train_with(
    model: &mut TcrnnModel,
    dataset: &[MaterialPath],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<Vec<f64>> {
    config.validate()?;
    model.spec.validate()?;
    let paths = training_paths(dataset, config)?;
    let clean = make_windows(&paths, None, model.spec.rnn_steps, config.padding)?;
    if clean.is_empty() {
        return Err(Error::MissingData("no training windows".into()));
    }
    let targets: Vec<Targets> = clean.iter().map(|w| w.targets.clone()).collect();
    let standardize = |ws: &[TrainingWindow], m: &TcrnnModel| -> Result<Vec<ThermoInput>> {
        ws.iter().map(|w| w.standardized(m)).collect()
    };
    let mut fixed_inputs = None;
    let mut state = AdamState::new(model.named_params().into_iter().map(|(_, v)| v));
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let inputs = match noisy_copy(&paths, config, epoch)? {
            Some(noisy) if config.resample_noise || epoch == 0 => {
                let ws = make_windows(&paths, Some(&noisy), model.spec.rnn_steps, config.padding)?;
                let inp = standardize(&ws, model)?;
                if !config.resample_noise {
                    fixed_inputs = Some(inp.clone());
                }
                inp
            }
            Some(_) => fixed_inputs.clone().expect("noise drawn in the first epoch"),
            None => {
                if fixed_inputs.is_none() {
                    fixed_inputs = Some(standardize(&clean, model)?);
                }
                fixed_inputs.clone().unwrap()
            }
        };
        let mut total = 0.0;
        for batch in batches(inputs.len(), config.batch_size, config.seed, epoch) {
            let bi: Vec<ThermoInput> = batch.iter().map(|&i| inputs[i].clone()).collect();
            let bt: Vec<Targets> = batch.iter().map(|&i| targets[i].clone()).collect();
            let (l, grads) = loss_and_gradient(model, &bi, &bt, &config.loss).map_err(|e| diverged(e, epoch))?;
            check_finite(l, &grads, epoch)?;
            total += l;
            let mut params: Vec<&mut Value> = model.named_params_mut().into_iter().map(|(_, v)| v).collect();
            adam_step(&mut params, &grads, &mut state, config.learning_rate)?;
        }
        history.push(total);
        on_epoch(epoch, total);
    }
    Ok(history)
}
