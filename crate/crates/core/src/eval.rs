//! Open-loop rollout, error metrics, ISV correlation and parametric sweeps.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::datagen::{generate_path, ElastoPlasticParams, LoadingProgram, MaterialPath};
use crate::nets::SequenceWindow;
use crate::pipeline::{first_target, init_model, train, window_at, BaselineModel, TrainConfig};
use crate::rng;
use crate::thermo::{TcrnnModel, TcrnnSpec, ThermoInput, ThermoOutputs};
use crate::{Error, Result};

/// How the stress history before the first predicted step is filled.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HistorySeed {
    #[default]
    Truth,
    Zeros,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Train,
    Test,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Train => "train",
            Role::Test => "test",
        }
    }
}

/// Per-step model outputs along a path, in physical units.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub stress: Vec<Vec<f64>>,
    pub free_energy: Vec<f64>,
    pub dissipation: Vec<f64>,
    pub entropy: Option<Vec<f64>>,
    pub isv: Vec<Vec<f64>>,
}

impl Trace {
    fn push(&mut self, o: &ThermoOutputs) {
        self.stress.push(o.stress.clone());
        self.free_energy.push(o.free_energy);
        self.dissipation.push(o.dissipation.unwrap_or(0.0));
        if let Some(s) = o.entropy {
            self.entropy.get_or_insert_with(Vec::new).push(s);
        }
        self.isv.push(o.isv.clone());
    }

    pub fn len(&self) -> usize {
        self.stress.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stress.is_empty()
    }
}

/// Time step into step `n`; step 0 borrows the first interval.
fn dt_at(path: &MaterialPath, n: usize) -> f64 {
    path.dt(n.max(1))
}

fn thermo_input(model: &TcrnnModel, window: &SequenceWindow, rates: SequenceWindow, dt: f64) -> Result<ThermoInput> {
    Ok(ThermoInput { window: model.standardize_window(window)?, rates: Some(rates), dt })
}

fn check_path(model_steps: usize, strain_dim: usize, path: &MaterialPath) -> Result<()> {
    path.validate()?;
    if path.len() < model_steps {
        return Err(Error::MissingData(format!(
            "sequence of {} steps is shorter than the {model_steps} RNN steps",
            path.len()
        )));
    }
    if path.strain_dim() != strain_dim {
        return Err(Error::Dimension(format!(
            "path has {} strain components, model expects {strain_dim}",
            path.strain_dim()
        )));
    }
    Ok(())
}

/// Generic open loop: `predict(history_stress, n)` returns the stress at
/// step `n` given the stress fed back so far. Steps before the first
/// predicted step are seeded from the data (or zeros).
fn open_loop_with(
    path: &MaterialPath,
    rnn_steps: usize,
    seed: HistorySeed,
    mut predict: impl FnMut(&[Vec<f64>], usize) -> Result<Vec<f64>>,
) -> Result<Vec<Vec<f64>>> {
    let first = first_target(rnn_steps, false);
    let d = path.strain_dim();
    let mut fed: Vec<Vec<f64>> = (0..first)
        .map(|k| match seed {
            HistorySeed::Truth => path.stress[k].clone(),
            HistorySeed::Zeros => vec![0.0; d],
        })
        .collect();
    let mut out = Vec::with_capacity(path.len());
    for n in 0..path.len() {
        let y = predict(&fed, n)?;
        if n >= first {
            fed.push(y.clone());
        }
        out.push(y);
    }
    Ok(out)
}

/// Open-loop rollout: every window's history stress is the model's own
/// earlier prediction, and history stress rates are differences of those
/// predictions. Only the strain (and temperature) columns and the seeded
/// initial history are read from `path`.
pub fn open_loop_rollout(model: &TcrnnModel, path: &MaterialPath, seed: HistorySeed) -> Result<Trace> {
    let s = model.spec.rnn_steps;
    check_path(s, model.spec.strain_dim, path)?;
    let mut trace = Trace::default();
    open_loop_with(path, s, seed, |fed, n| {
        // Steps not yet predicted are never read by window_at; pad to length.
        let mut stress = fed.to_vec();
        stress.resize(path.len(), vec![0.0; path.strain_dim()]);
        let (w, r) = window_at(path, &stress, &stress, s, n);
        let input = thermo_input(model, &w, r, dt_at(path, n))?;
        let o = model.forward_batch(std::slice::from_ref(&input))?.remove(0);
        trace.push(&o);
        Ok(o.stress)
    })?;
    Ok(trace)
}

/// Teacher-forced evaluation: true stress history in every window.
pub fn teacher_forced(model: &TcrnnModel, path: &MaterialPath) -> Result<Trace> {
    let s = model.spec.rnn_steps;
    check_path(s, model.spec.strain_dim, path)?;
    let inputs = (0..path.len())
        .map(|n| {
            let (w, r) = window_at(path, &path.stress, &path.stress, s, n);
            thermo_input(model, &w, r, dt_at(path, n))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut trace = Trace::default();
    for o in model.forward_batch(&inputs)? {
        trace.push(&o);
    }
    Ok(trace)
}

/// Open-loop stress of a black-box baseline; the incremental form adds each
/// predicted increment to its previous prediction.
pub fn baseline_open_loop(model: &BaselineModel, path: &MaterialPath, seed: HistorySeed) -> Result<Vec<Vec<f64>>> {
    let s = model.rnn_steps;
    check_path(s, model.net.strain_dim, path)?;
    open_loop_with(path, s, seed, |fed, n| {
        let mut stress = fed.to_vec();
        stress.resize(path.len(), vec![0.0; path.strain_dim()]);
        let (w, _) = window_at(path, &stress, &stress, s, n);
        let k = n.saturating_sub(1);
        model.predict(&w, &path.strain[k], &stress[k])
    })
}

/// `||data - pred|| / ||data||` over all steps and components.
pub fn relative_error(data: &[Vec<f64>], pred: &[Vec<f64>]) -> Result<f64> {
    if data.len() != pred.len() || data.iter().zip(pred).any(|(a, b)| a.len() != b.len()) {
        return Err(Error::Dimension("data and prediction lengths differ".into()));
    }
    let (mut num, mut den) = (0.0, 0.0);
    for (a, b) in data.iter().flatten().zip(pred.iter().flatten()) {
        num += (a - b) * (a - b);
        den += a * a;
    }
    if den == 0.0 {
        return Err(Error::Numerical("relative error of an all-zero sequence".into()));
    }
    Ok((num / den).sqrt())
}

/// Average ranks (1-based), ties sharing the mean of their positions.
fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut r = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Dimension("spearman inputs differ in length".into()));
    }
    if x.len() < 3 {
        return Err(Error::MissingData("spearman needs at least three points".into()));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::Numerical("spearman input is not finite".into()));
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Numerical("spearman correlation of a constant sequence is undefined".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Physical stress from the model next to the central difference of the
/// destandardized free energy with respect to physical strain, ISVs held
/// fixed, at one standardized input. `h` is the physical strain step.
pub fn stress_energy_check(model: &TcrnnModel, input: &ThermoInput, h: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let out = model.forward_batch(std::slice::from_ref(input))?.remove(0);
    let st = &model.stats;
    let (mean_f, std_f) = st.energy();
    let z = crate::thermo::infer_isv(model, &input.window)?;
    let eps = st.strain.destandardize(&input.window.current.strain);
    let temp = input.window.current.temperature;
    let energy = |e: &[f64]| -> Result<f64> {
        Ok(mean_f + std_f * crate::thermo::free_energy(model, &st.strain.standardize(e), temp, &z)?)
    };
    let mut fd = Vec::with_capacity(eps.len());
    for i in 0..eps.len() {
        let mut up = eps.clone();
        let mut dn = eps.clone();
        up[i] += h;
        dn[i] -= h;
        fd.push((energy(&up)? - energy(&dn)?) / (2.0 * h));
    }
    Ok((out.stress, fd))
}

/// Evaluation of one path.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PathReport {
    pub id: String,
    pub role: Role,
    pub open_loop_error: f64,
    pub teacher_forced_error: f64,
    pub open_loop: Trace,
    pub teacher_forced: Trace,
    /// Spearman correlation of each ISV component with the first reference
    /// ISV, when the path has one.
    pub isv_correlation: Option<Vec<Option<f64>>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalReport {
    pub paths: Vec<PathReport>,
    pub mean_train_error: Option<f64>,
    pub mean_test_error: Option<f64>,
    pub wall_seconds: f64,
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let v: Vec<f64> = xs.collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Open-loop and teacher-forced evaluation of every path.
pub fn evaluate(model: &TcrnnModel, paths: &[(String, Role, MaterialPath)], seed: HistorySeed) -> Result<EvalReport> {
    let start = Instant::now();
    let mut reports = Vec::with_capacity(paths.len());
    for (id, role, path) in paths {
        let open = open_loop_rollout(model, path, seed)?;
        let forced = teacher_forced(model, path)?;
        let isv_correlation = path.reference_isv.as_ref().map(|zr| {
            let r: Vec<f64> = zr.iter().map(|z| z[0]).collect();
            (0..model.spec.isv_dim)
                .map(|j| {
                    let zj: Vec<f64> = open.isv.iter().map(|z| z[j]).collect();
                    spearman(&zj, &r).ok()
                })
                .collect()
        });
        reports.push(PathReport {
            id: id.clone(),
            role: *role,
            open_loop_error: relative_error(&path.stress, &open.stress)?,
            teacher_forced_error: relative_error(&path.stress, &forced.stress)?,
            open_loop: open,
            teacher_forced: forced,
            isv_correlation,
        });
    }
    let by_role = |role: Role| mean(reports.iter().filter(|r| r.role == role).map(|r| r.open_loop_error));
    Ok(EvalReport {
        mean_train_error: by_role(Role::Train),
        mean_test_error: by_role(Role::Test),
        paths: reports,
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    RnnSteps,
    IsvDim,
    HiddenDim,
    StrainIncrement,
}

impl SweepAxis {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepAxis::RnnSteps => "rnn_steps",
            SweepAxis::IsvDim => "isv_dim",
            SweepAxis::HiddenDim => "hidden_dim",
            SweepAxis::StrainIncrement => "strain_increment",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    pub repetitions: usize,
    pub seed: u64,
    pub model: TcrnnSpec,
    pub train: TrainConfig,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() || self.repetitions == 0 {
            return Err(Error::Config("sweep needs at least one value and one repetition".into()));
        }
        for v in &self.values {
            let integral = v.fract() == 0.0 && *v >= 1.0;
            let ok = match self.axis {
                SweepAxis::StrainIncrement => *v > 0.0 && v.is_finite(),
                _ => integral,
            };
            if !ok {
                return Err(Error::Config(format!("invalid {} value {v}", self.axis.as_str())));
            }
        }
        self.train.validate()
    }

    /// Seed of one sweep cell.
    pub fn cell_seed(&self, value: f64, rep: usize) -> u64 {
        rng::derive(self.seed, &[value.to_bits(), rep as u64])
    }

    /// Model spec with only the swept hyperparameter changed.
    pub fn model_for(&self, value: f64) -> TcrnnSpec {
        let mut m = self.model.clone();
        match self.axis {
            SweepAxis::RnnSteps => m.rnn_steps = value as usize,
            SweepAxis::IsvDim => m.isv_dim = value as usize,
            SweepAxis::HiddenDim => m.hidden_dim = value as usize,
            SweepAxis::StrainIncrement => {}
        }
        m
    }
}

/// Training and test paths for a sweep. For a strain-increment sweep the
/// training paths are regenerated from `material` with the swept increment.
#[derive(Clone, Debug)]
pub struct SweepData {
    pub train: Vec<(String, MaterialPath)>,
    pub test: Vec<(String, MaterialPath)>,
    pub material: Option<ElastoPlasticParams>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: SweepAxis,
    pub value: f64,
    pub seed: u64,
    pub path_id: String,
    pub role: Role,
    pub relative_error: f64,
    pub wall_s: f64,
}

/// Trains and evaluates one sweep cell.
pub fn run_cell(spec: &SweepSpec, data: &SweepData, value: f64, rep: usize) -> Result<Vec<SweepRow>> {
    let start = Instant::now();
    let seed = spec.cell_seed(value, rep);
    let train_paths: Vec<(String, MaterialPath)> = match spec.axis {
        SweepAxis::StrainIncrement => {
            let params = data
                .material
                .as_ref()
                .ok_or_else(|| Error::Config("a strain-increment sweep needs synthetic material parameters".into()))?;
            vec![(format!("train_{value:e}"), generate_path(params, &LoadingProgram::benchmark(value))?)]
        }
        _ => data.train.clone(),
    };
    let dataset: Vec<MaterialPath> = train_paths.iter().map(|(_, p)| p.clone()).collect();
    let model = init_model(spec.model_for(value), &dataset, seed)?;
    let cfg = TrainConfig { seed, ..spec.train.clone() };
    let model = train(model, &dataset, &cfg)?.model;
    let mut rows = Vec::new();
    let all = train_paths.iter().map(|p| (p, Role::Train)).chain(data.test.iter().map(|p| (p, Role::Test)));
    let mut errors = Vec::new();
    for ((id, path), role) in all {
        let pred = open_loop_rollout(&model, path, HistorySeed::Truth)?;
        errors.push((id.clone(), role, relative_error(&path.stress, &pred.stress)?));
    }
    let wall = start.elapsed().as_secs_f64();
    for (path_id, role, relative_error) in errors {
        rows.push(SweepRow { axis: spec.axis, value, seed, path_id, role, relative_error, wall_s: wall });
    }
    Ok(rows)
}

/// Runs every (value, repetition) cell not excluded by `skip`, reporting the
/// rows of each finished cell to `on_rows`.
pub fn run_sweep_with(
    spec: &SweepSpec,
    data: &SweepData,
    skip: impl Fn(f64, u64) -> bool,
    mut on_rows: impl FnMut(&[SweepRow]) -> Result<()>,
) -> Result<Vec<SweepRow>> {
    spec.validate()?;
    let mut rows = Vec::new();
    for &value in &spec.values {
        for rep in 0..spec.repetitions {
            if skip(value, spec.cell_seed(value, rep)) {
                continue;
            }
            let cell = run_cell(spec, data, value, rep)?;
            on_rows(&cell)?;
            rows.extend(cell);
        }
    }
    Ok(rows)
}

pub fn run_sweep(spec: &SweepSpec, data: &SweepData) -> Result<Vec<SweepRow>> {
    run_sweep_with(spec, data, |_, _| false, |_| Ok(()))
}

/// Median of a non-empty sample.
pub fn median(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}
