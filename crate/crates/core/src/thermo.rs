//! The energy-based recurrent constitutive model.
//!
//! A recurrent cell reads a standardized strain/stress window and emits ISVs
//! `z` through a linear head. A SiLU network maps `(eps, [T], z)` to the
//! standardized free energy `Fb`. Then
//!
//! ```text
//! stress      = (std_F / std_eps) dFb/deps
//! entropy     = -(std_F / std_T) dFb/dT
//! dissipation = -std_F dFb/dz . zdot
//! F           = mean_F + std_F Fb
//! ```
//!
//! where the partials treat `z` as an independent energy input and `zdot` is
//! either the chain-rule rate through the ISV network (rate variant) or
//! `(z_n - z_{n-1}) / dt` read from the last two steps (increment variant).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Value, Var};
use crate::nets::{
    batch_inputs, rollout, step_input_width, Activation, BoundCell, BoundStack, CellKind, CurrentStep, DenseStack,
    Parameters, RecurrentCell, SequenceWindow, StepState,
};
use crate::pipeline::StandardizationStats;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// ISV rate by the chain rule through the ISV network.
    Rate,
    /// ISV rate approximated by the increment over the last two steps.
    Increment,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Thermal {
    Isothermal,
    NonIsothermal,
}

/// Architecture of a [`TcrnnModel`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TcrnnSpec {
    pub cell: CellKind,
    pub strain_dim: usize,
    pub hidden_dim: usize,
    pub isv_dim: usize,
    /// History steps plus the current step.
    pub rnn_steps: usize,
    pub energy_hidden: Vec<usize>,
    pub variant: Variant,
    pub thermal: Thermal,
    /// Hidden activation of a vanilla cell; GRU gates are fixed.
    pub activation: Activation,
}

impl Default for TcrnnSpec {
    fn default() -> Self {
        Self {
            cell: CellKind::Gru,
            strain_dim: 1,
            hidden_dim: 30,
            isv_dim: 1,
            rnn_steps: 5,
            energy_hidden: vec![20, 20],
            variant: Variant::Rate,
            thermal: Thermal::Isothermal,
            activation: Activation::Silu,
        }
    }
}

impl TcrnnSpec {
    pub fn validate(&self) -> Result<()> {
        if self.strain_dim == 0 || self.hidden_dim == 0 || self.isv_dim == 0 || self.rnn_steps == 0 {
            return Err(Error::Config("strain, hidden and ISV dimensions and RNN steps must be positive".into()));
        }
        if self.variant == Variant::Increment && self.rnn_steps < 2 {
            return Err(Error::Config("the increment variant needs at least two RNN steps".into()));
        }
        if self.energy_hidden.contains(&0) {
            return Err(Error::Config("energy head widths must be positive".into()));
        }
        Ok(())
    }

    pub fn is_thermal(&self) -> bool {
        self.thermal == Thermal::NonIsothermal
    }

    pub fn step_width(&self) -> usize {
        step_input_width(self.strain_dim, self.is_thermal())
    }

    /// `d + [1] + |z|`.
    pub fn energy_input_width(&self) -> usize {
        self.strain_dim + usize::from(self.is_thermal()) + self.isv_dim
    }

    fn energy_widths(&self) -> Vec<usize> {
        let mut w = vec![self.energy_input_width()];
        w.extend_from_slice(&self.energy_hidden);
        w.push(1);
        w
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TcrnnModel {
    pub spec: TcrnnSpec,
    pub isv_cell: RecurrentCell,
    pub energy_head: DenseStack,
    pub stats: StandardizationStats,
}

/// Where the ISV rate comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RateSource {
    Exact,
    Increment,
}

impl From<Variant> for RateSource {
    fn from(v: Variant) -> Self {
        match v {
            Variant::Rate => RateSource::Exact,
            Variant::Increment => RateSource::Increment,
        }
    }
}

/// One standardized window with what the ISV rate needs: physical rates of
/// every window input (same layout as the window) and the time step.
#[derive(Clone, Debug, PartialEq)]
pub struct ThermoInput {
    pub window: SequenceWindow,
    pub rates: Option<SequenceWindow>,
    pub dt: f64,
}

/// Physical predictions for one window.
#[derive(Clone, Debug, PartialEq)]
pub struct ThermoOutputs {
    pub stress: Vec<f64>,
    pub free_energy: f64,
    pub dissipation: Option<f64>,
    pub entropy: Option<f64>,
    pub isv: Vec<f64>,
    pub isv_prev: Option<Vec<f64>>,
    pub isv_rate: Option<Vec<f64>>,
}

#[derive(Clone, Debug)]
pub struct BoundTcrnn {
    pub cell: BoundCell,
    pub energy: BoundStack,
}

impl BoundTcrnn {
    /// Parameter handles in [`Parameters::named_params`] order.
    pub fn vars(&self) -> Vec<Var> {
        let mut v = self.cell.vars();
        v.extend(self.energy.vars());
        v
    }
}

/// Graph handles of one batched forward pass; matrices hold one window per
/// column.
#[derive(Clone, Debug)]
pub struct ThermoNodes {
    pub steps: Vec<Var>,
    pub energy_strain: Var,
    pub energy_temperature: Option<Var>,
    pub isv: Var,
    pub isv_prev: Option<Var>,
    pub isv_rate: Option<Var>,
    pub energy_bar: Var,
    pub d_energy_d_strain: Var,
    pub d_energy_d_temperature: Option<Var>,
    pub d_energy_d_isv: Var,
    pub stress: Var,
    pub entropy: Option<Var>,
    pub dissipation: Option<Var>,
    pub free_energy: Var,
}

impl ThermoNodes {
    pub fn outputs(&self, g: &Graph) -> Vec<ThermoOutputs> {
        let b = g.value(self.stress).dims().1;
        let col = |v: Var, c: usize| g.value(v).column(c);
        (0..b)
            .map(|c| ThermoOutputs {
                stress: col(self.stress, c),
                free_energy: col(self.free_energy, c)[0],
                dissipation: self.dissipation.map(|v| col(v, c)[0]),
                entropy: self.entropy.map(|v| col(v, c)[0]),
                isv: col(self.isv, c),
                isv_prev: self.isv_prev.map(|v| col(v, c)),
                isv_rate: self.isv_rate.map(|v| col(v, c)),
            })
            .collect()
    }
}

/// Multiplies row `i` of `x` by `factors[i]`.
fn scale_rows(g: &mut Graph, x: Var, factors: &[f64]) -> Result<Var> {
    if factors.iter().all(|&f| f == factors[0]) {
        return Ok(g.scale(x, factors[0])?);
    }
    let (r, c) = g.value(x).dims();
    let data = (0..r).flat_map(|i| std::iter::repeat_n(factors[i], c)).collect();
    let k = g.constant(Value::matrix(r, c, data))?;
    Ok(g.mul(x, k)?)
}

impl TcrnnModel {
    pub fn init(rng: &mut impl Rng, spec: TcrnnSpec, stats: StandardizationStats) -> Result<Self> {
        spec.validate()?;
        let isv_cell =
            RecurrentCell::init(rng, spec.cell, spec.step_width(), spec.hidden_dim, spec.isv_dim, spec.activation);
        let energy_head = DenseStack::init(rng, &spec.energy_widths(), Activation::Silu);
        Self::assemble(spec, isv_cell, energy_head, stats)
    }

    pub fn zeros(spec: TcrnnSpec, stats: StandardizationStats) -> Result<Self> {
        spec.validate()?;
        let isv_cell = RecurrentCell::zeros(spec.cell, spec.step_width(), spec.hidden_dim, spec.isv_dim, spec.activation);
        let energy_head = DenseStack::zeros(&spec.energy_widths(), Activation::Silu);
        Self::assemble(spec, isv_cell, energy_head, stats)
    }

    pub fn assemble(
        spec: TcrnnSpec,
        isv_cell: RecurrentCell,
        energy_head: DenseStack,
        stats: StandardizationStats,
    ) -> Result<Self> {
        spec.validate()?;
        if isv_cell.inputs() != spec.step_width()
            || isv_cell.hidden() != spec.hidden_dim
            || isv_cell.outputs() != spec.isv_dim
            || isv_cell.kind() != spec.cell
        {
            return Err(Error::Dimension("ISV cell does not match the model spec".into()));
        }
        if energy_head.input_width() != spec.energy_input_width() || energy_head.output_width() != 1 {
            return Err(Error::Dimension("energy head does not match the model spec".into()));
        }
        if stats.strain_dim() != spec.strain_dim || stats.stress.len() != spec.strain_dim {
            return Err(Error::Dimension("statistics do not match the strain dimension".into()));
        }
        if spec.is_thermal() && stats.temperature.is_none() {
            return Err(Error::MissingData("temperature statistics".into()));
        }
        Ok(Self { spec, isv_cell, energy_head, stats })
    }

    pub fn bind(&self, g: &mut Graph) -> Result<BoundTcrnn> {
        Ok(BoundTcrnn { cell: self.isv_cell.bind(g)?, energy: self.energy_head.bind(g)? })
    }

    /// Standardizes a physical window with the model's statistics.
    pub fn standardize_window(&self, raw: &SequenceWindow) -> Result<SequenceWindow> {
        let s = &self.stats;
        let temp = |t: Option<f64>| -> Result<Option<f64>> {
            match (t, &s.temperature) {
                (Some(t), Some(st)) => Ok(Some(st.standardize(&[t])[0])),
                (None, _) => Ok(None),
                (Some(_), None) => Err(Error::MissingData("temperature statistics".into())),
            }
        };
        let history = raw
            .history
            .iter()
            .map(|h| {
                Ok(StepState {
                    strain: s.strain.standardize(&h.strain),
                    stress: s.stress.standardize(&h.stress),
                    temperature: temp(h.temperature)?,
                })
            })
            .collect::<Result<_>>()?;
        let current =
            CurrentStep { strain: s.strain.standardize(&raw.current.strain), temperature: temp(raw.current.temperature)? };
        Ok(SequenceWindow { history, current })
    }

    fn check_window(&self, w: &SequenceWindow) -> Result<()> {
        w.validate()?;
        if w.steps() != self.spec.rnn_steps {
            return Err(Error::Dimension(format!(
                "window has {} steps, model uses {}",
                w.steps(),
                self.spec.rnn_steps
            )));
        }
        if w.strain_dim() != self.spec.strain_dim || w.is_thermal() != self.spec.is_thermal() {
            return Err(Error::Dimension("window layout does not match the model".into()));
        }
        Ok(())
    }

    /// Standardized rate matrices `[width, batch]`, one per step.
    fn rate_matrices(&self, inputs: &[ThermoInput]) -> Result<Vec<Value>> {
        let s = &self.stats;
        let t_std = if self.spec.is_thermal() { Some(s.temperature_std()?) } else { None };
        let scaled = inputs
            .iter()
            .map(|inp| {
                let r = inp.rates.as_ref().ok_or_else(|| Error::MissingData("window rates".into()))?;
                if r.steps() != inp.window.steps() || r.strain_dim() != inp.window.strain_dim() {
                    return Err(Error::Dimension("rates do not match the window layout".into()));
                }
                let t = |x: Option<f64>| x.zip(t_std).map(|(x, s)| x / s);
                Ok(SequenceWindow {
                    history: r
                        .history
                        .iter()
                        .map(|h| StepState {
                            strain: s.strain.scale(&h.strain),
                            stress: s.stress.scale(&h.stress),
                            temperature: t(h.temperature),
                        })
                        .collect(),
                    current: CurrentStep { strain: s.strain.scale(&r.current.strain), temperature: t(r.current.temperature) },
                })
            })
            .collect::<Result<Vec<_>>>()?;
        batch_inputs(&scaled)
    }

    /// Builds the whole composite for a batch of windows in `g`.
    pub fn build(
        &self,
        g: &mut Graph,
        bound: &BoundTcrnn,
        inputs: &[ThermoInput],
        source: Option<RateSource>,
    ) -> Result<ThermoNodes> {
        for inp in inputs {
            self.check_window(&inp.window)?;
        }
        let windows: Vec<SequenceWindow> = inputs.iter().map(|i| i.window.clone()).collect();
        let mats = batch_inputs(&windows)?;
        let b = inputs.len();
        let d = self.spec.strain_dim;
        let thermal = self.spec.is_thermal();

        let steps = mats.into_iter().map(|m| g.leaf(m)).collect::<std::result::Result<Vec<_>, _>>()?;
        let states = rollout(g, &bound.cell, self.spec.hidden_dim, &steps)?;
        let isv = bound.cell.head(g, states[states.len() - 1])?;
        let isv_prev = match source {
            Some(RateSource::Increment) => {
                if states.len() < 2 {
                    return Err(Error::Config("ISV increments need at least two RNN steps".into()));
                }
                Some(bound.cell.head(g, states[states.len() - 2])?)
            }
            _ => None,
        };

        let strain: Vec<f64> =
            (0..d).flat_map(|r| windows.iter().map(move |w| w.current.strain[r])).collect();
        let energy_strain = g.leaf(Value::matrix(d, b, strain))?;
        let energy_temperature = if thermal {
            let t = windows.iter().map(|w| w.current.temperature.unwrap_or(0.0)).collect();
            Some(g.leaf(Value::matrix(1, b, t))?)
        } else {
            None
        };
        let mut parts = vec![energy_strain];
        parts.extend(energy_temperature);
        parts.push(isv);
        let energy_in = g.concat_rows(&parts)?;
        let energy_bar = bound.energy.forward(g, energy_in)?;

        let total = g.sum(energy_bar)?;
        let mut wrt = vec![energy_strain];
        wrt.extend(energy_temperature);
        wrt.push(isv);
        let grads = g.backward_as_graph(total, &wrt)?;
        let d_energy_d_strain = grads[0];
        let d_energy_d_temperature = energy_temperature.map(|_| grads[1]);
        let d_energy_d_isv = *grads.last().unwrap();

        let isv_rate = match source {
            Some(RateSource::Exact) => Some(self.exact_rate(g, isv, &steps, inputs)?),
            Some(RateSource::Increment) => {
                let prev = isv_prev.unwrap();
                let dz = g.sub(isv, prev)?;
                let m = self.spec.isv_dim;
                let mut inv = Vec::with_capacity(m * b);
                for _ in 0..m {
                    for inp in inputs {
                        if !(inp.dt > 0.0 && inp.dt.is_finite()) {
                            return Err(Error::Config(format!("time step must be positive, got {}", inp.dt)));
                        }
                        inv.push(1.0 / inp.dt);
                    }
                }
                let inv = g.constant(Value::matrix(m, b, inv))?;
                Some(g.mul(dz, inv)?)
            }
            None => None,
        };

        let (mean_f, std_f) = self.stats.energy();
        let factors: Vec<f64> = self.stats.strain.std.iter().map(|s| std_f / s).collect();
        let stress = scale_rows(g, d_energy_d_strain, &factors)?;
        let entropy = match d_energy_d_temperature {
            Some(dt) => Some(g.scale(dt, -std_f / self.stats.temperature_std()?)?),
            None => None,
        };
        let dissipation = match isv_rate {
            Some(zdot) => {
                let p = g.mul(d_energy_d_isv, zdot)?;
                let p = g.sum_rows(p)?;
                Some(g.scale(p, -std_f)?)
            }
            None => None,
        };
        let free_energy = g.scale(energy_bar, std_f)?;
        let free_energy = g.shift(free_energy, mean_f)?;

        Ok(ThermoNodes {
            steps,
            energy_strain,
            energy_temperature,
            isv,
            isv_prev,
            isv_rate,
            energy_bar,
            d_energy_d_strain,
            d_energy_d_temperature,
            d_energy_d_isv,
            stress,
            entropy,
            dissipation,
            free_energy,
        })
    }

    /// `sum_k dz/dx_k . xdot_k / std` over every step input of the window.
    fn exact_rate(&self, g: &mut Graph, isv: Var, steps: &[Var], inputs: &[ThermoInput]) -> Result<Var> {
        let rates = self.rate_matrices(inputs)?;
        let rate_vars = rates.into_iter().map(|r| g.constant(r)).collect::<std::result::Result<Vec<_>, _>>()?;
        let m = self.spec.isv_dim;
        let mut rows = Vec::with_capacity(m);
        for j in 0..m {
            let zj = if m == 1 { isv } else { g.slice_rows(isv, j, 1)? };
            let sj = g.sum(zj)?;
            let grads = g.backward_as_graph(sj, steps)?;
            let mut acc: Option<Var> = None;
            for (gk, rk) in grads.into_iter().zip(&rate_vars) {
                let p = g.mul(gk, *rk)?;
                let p = g.sum_rows(p)?;
                acc = Some(match acc {
                    Some(a) => g.add(a, p)?,
                    None => p,
                });
            }
            rows.push(acc.expect("at least one step"));
        }
        Ok(if m == 1 { rows[0] } else { g.concat_rows(&rows)? })
    }

    /// Every output for a batch of windows, with the rate source given by the
    /// model variant.
    pub fn forward_batch(&self, inputs: &[ThermoInput]) -> Result<Vec<ThermoOutputs>> {
        let mut g = Graph::new();
        let bound = self.bind(&mut g)?;
        let nodes = self.build(&mut g, &bound, inputs, Some(self.spec.variant.into()))?;
        Ok(nodes.outputs(&g))
    }

    fn single(&self, input: ThermoInput, source: Option<RateSource>) -> Result<ThermoOutputs> {
        let mut g = Graph::new();
        let bound = self.bind(&mut g)?;
        let nodes = self.build(&mut g, &bound, std::slice::from_ref(&input), source)?;
        Ok(nodes.outputs(&g).remove(0))
    }

    fn plain(window: &SequenceWindow) -> ThermoInput {
        ThermoInput { window: window.clone(), rates: None, dt: 1.0 }
    }
}

impl Parameters for TcrnnModel {
    fn named_params(&self) -> Vec<(String, &Value)> {
        let mut out: Vec<(String, &Value)> =
            self.isv_cell.named_params().into_iter().map(|(n, v)| (isv_name(&n), v)).collect();
        out.extend(self.energy_head.named_params().into_iter().map(|(n, v)| (format!("energy.{n}"), v)));
        out
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Value)> {
        let mut out: Vec<(String, &mut Value)> =
            self.isv_cell.named_params_mut().into_iter().map(|(n, v)| (isv_name(&n), v)).collect();
        out.extend(self.energy_head.named_params_mut().into_iter().map(|(n, v)| (format!("energy.{n}"), v)));
        out
    }
}

fn isv_name(n: &str) -> String {
    match n {
        "W_hy" => "isv.W_hz".into(),
        "b_y" => "isv.b_z".into(),
        other => format!("isv.{other}"),
    }
}

/// ISVs inferred from a standardized window.
pub fn infer_isv(model: &TcrnnModel, window: &SequenceWindow) -> Result<Vec<f64>> {
    model.check_window(window)?;
    let mut g = Graph::new();
    let cell = model.isv_cell.bind(&mut g)?;
    let steps = window
        .step_inputs()
        .into_iter()
        .map(|x| g.constant(Value::matrix(x.len(), 1, x)))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let states = rollout(&mut g, &cell, model.spec.hidden_dim, &steps)?;
    let z = cell.head(&mut g, *states.last().unwrap())?;
    Ok(g.value(z).data().to_vec())
}

/// Standardized free energy for standardized strain, temperature and ISVs.
pub fn free_energy(model: &TcrnnModel, strain: &[f64], temperature: Option<f64>, isv: &[f64]) -> Result<f64> {
    if strain.len() != model.spec.strain_dim
        || isv.len() != model.spec.isv_dim
        || temperature.is_some() != model.spec.is_thermal()
    {
        return Err(Error::Dimension("energy inputs do not match the model".into()));
    }
    let mut x = strain.to_vec();
    x.extend(temperature);
    x.extend_from_slice(isv);
    Ok(model.energy_head.forward(&x)?[0])
}

/// Physical stress for a standardized window.
pub fn predict_stress(model: &TcrnnModel, window: &SequenceWindow) -> Result<Vec<f64>> {
    Ok(model.single(TcrnnModel::plain(window), None)?.stress)
}

pub fn predict_entropy(model: &TcrnnModel, window: &SequenceWindow) -> Result<f64> {
    if !model.spec.is_thermal() {
        return Err(Error::Config("entropy is only predicted by non-isothermal models".into()));
    }
    Ok(model.single(TcrnnModel::plain(window), None)?.entropy.unwrap())
}

/// Chain-rule ISV rate from physical rates of every window input.
pub fn isv_rate_exact(model: &TcrnnModel, window: &SequenceWindow, rates: &SequenceWindow) -> Result<Vec<f64>> {
    let input = ThermoInput { window: window.clone(), rates: Some(rates.clone()), dt: 1.0 };
    Ok(model.single(input, Some(RateSource::Exact))?.isv_rate.unwrap())
}

/// `(z_{n-1}, z_n, z_n - z_{n-1})` read from the last two steps of one rollout.
pub fn isv_increment(model: &TcrnnModel, window: &SequenceWindow) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let out = model.single(TcrnnModel::plain(window), Some(RateSource::Increment))?;
    let prev = out.isv_prev.unwrap();
    let dz = out.isv.iter().zip(&prev).map(|(a, b)| a - b).collect();
    Ok((prev, out.isv, dz))
}

/// Dissipation rate; `source` must match the model variant.
pub fn predict_dissipation(
    model: &TcrnnModel,
    window: &SequenceWindow,
    rates: Option<&SequenceWindow>,
    source: RateSource,
    dt: f64,
) -> Result<f64> {
    if source != RateSource::from(model.spec.variant) {
        return Err(Error::Config("rate source does not match the model variant".into()));
    }
    if source == RateSource::Increment && !(dt > 0.0) {
        return Err(Error::Config(format!("time step must be positive, got {dt}")));
    }
    let input = ThermoInput { window: window.clone(), rates: rates.cloned(), dt };
    Ok(model.single(input, Some(source))?.dissipation.unwrap())
}

/// Every output for one standardized window.
pub fn forward_all(model: &TcrnnModel, input: &ThermoInput) -> Result<ThermoOutputs> {
    model.single(input.clone(), Some(model.spec.variant.into()))
}

#[cfg(test)]
mod tests;
