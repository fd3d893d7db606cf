//! Training losses. Every term compares standardized quantities.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Value, Var};
use crate::thermo::ThermoNodes;
use crate::{Error, Result};

use super::stats::StandardizationStats;
use super::windows::Targets;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossVariant {
    /// Stress, free energy, dissipation and entropy data.
    Full,
    /// Stress and free energy data; dissipation only constrained to be non-negative.
    DConstraint,
    /// Stress data only; free energy and dissipation constrained non-negative.
    Unsupervised,
    /// As `Unsupervised` plus data for the leading ISVs.
    Hybrid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossNorm {
    /// `(sum_i |r_i|)^2` per step.
    L1sq,
    /// `mean_i r_i^2` per step.
    Mse,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub beta1: f64,
    pub beta2: f64,
    pub beta3: f64,
    pub beta4: f64,
    pub variant: LossVariant,
    pub norm: LossNorm,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { beta1: 1.0, beta2: 1.0, beta3: 0.0, beta4: 1.0, variant: LossVariant::Full, norm: LossNorm::L1sq }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if [self.beta1, self.beta2, self.beta3, self.beta4].iter().any(|b| !(b.is_finite() && *b >= 0.0)) {
            return Err(Error::Config("loss weights must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// Model predictions entering the losses; matrices hold one window per column.
#[derive(Clone, Copy, Debug)]
pub struct Predictions {
    /// Physical stress `[d, B]`.
    pub stress: Var,
    /// Standardized free energy `[1, B]`.
    pub energy_bar: Var,
    /// Physical free energy `[1, B]`.
    pub free_energy: Var,
    /// Physical dissipation `[1, B]`.
    pub dissipation: Var,
    pub entropy: Option<Var>,
    /// ISVs `[m, B]`.
    pub isv: Var,
}

impl Predictions {
    pub fn from_nodes(n: &ThermoNodes) -> Result<Self> {
        Ok(Self {
            stress: n.stress,
            energy_bar: n.energy_bar,
            free_energy: n.free_energy,
            dissipation: n.dissipation.ok_or_else(|| Error::MissingData("dissipation prediction".into()))?,
            entropy: n.entropy,
            isv: n.isv,
        })
    }
}

fn norm_sum(g: &mut Graph, residual: Var, norm: LossNorm) -> Result<Var> {
    Ok(match norm {
        LossNorm::L1sq => {
            let a = g.abs(residual)?;
            let s = g.sum_rows(a)?;
            let sq = g.mul(s, s)?;
            g.sum(sq)?
        }
        LossNorm::Mse => {
            let rows = g.value(residual).dims().0;
            let sq = g.mul(residual, residual)?;
            let s = g.sum(sq)?;
            g.scale(s, 1.0 / rows as f64)?
        }
    })
}

/// `pred * scale - target` where `target` is a constant `[rows, B]` matrix.
fn residual(g: &mut Graph, pred: Var, scale: &[f64], target: Vec<f64>) -> Result<Var> {
    let (r, c) = g.value(pred).dims();
    let data = (0..r).flat_map(|i| std::iter::repeat_n(scale[i], c)).collect();
    let k = g.constant(Value::matrix(r, c, data))?;
    let p = g.mul(pred, k)?;
    let t = g.constant(Value::matrix(r, c, target))?;
    Ok(g.sub(p, t)?)
}

/// Row-major `[rows, B]` data from per-window vectors.
fn matrix(cols: &[Vec<f64>]) -> Vec<f64> {
    let r = cols[0].len();
    (0..r).flat_map(|i| cols.iter().map(move |c| c[i])).collect()
}

fn require<T: Clone>(xs: impl Iterator<Item = Option<T>>, what: &str) -> Result<Vec<T>> {
    xs.map(|x| x.ok_or_else(|| Error::MissingData(format!("{what} targets"))))
        .collect()
}

fn stress_term(
    g: &mut Graph,
    pred: &Predictions,
    targets: &[Targets],
    stats: &StandardizationStats,
    norm: LossNorm,
) -> Result<Var> {
    let inv: Vec<f64> = stats.stress.std.iter().map(|s| 1.0 / s).collect();
    let t: Vec<Vec<f64>> = targets.iter().map(|t| stats.stress.scale(&t.stress)).collect();
    let r = residual(g, pred.stress, &inv, matrix(&t))?;
    norm_sum(g, r, norm)
}

fn add_weighted(g: &mut Graph, acc: Var, term: Var, beta: f64) -> Result<Var> {
    if beta == 0.0 {
        return Ok(acc);
    }
    let t = g.scale(term, beta)?;
    Ok(g.add(acc, t)?)
}

fn energy_term(
    g: &mut Graph,
    pred: &Predictions,
    targets: &[Targets],
    stats: &StandardizationStats,
    norm: LossNorm,
) -> Result<Var> {
    let (mean, std) = stats.energy();
    let f = require(targets.iter().map(|t| t.free_energy), "free energy")?;
    let t: Vec<f64> = f.iter().map(|f| (f - mean) / std).collect();
    let r = residual(g, pred.energy_bar, &[1.0], t)?;
    norm_sum(g, r, norm)
}

/// `sum ReLU(-x / scale)` over the batch.
fn negativity_penalty(g: &mut Graph, x: Var, scale: f64) -> Result<Var> {
    let n = g.scale(x, -1.0 / scale)?;
    let r = g.relu(n)?;
    Ok(g.sum(r)?)
}

/// Stress, free-energy, dissipation and entropy data terms.
pub fn loss_full(
    g: &mut Graph,
    pred: &Predictions,
    targets: &[Targets],
    stats: &StandardizationStats,
    w: &LossWeights,
) -> Result<Var> {
    let mut loss = stress_term(g, pred, targets, stats, w.norm)?;
    if w.beta1 != 0.0 {
        let t = energy_term(g, pred, targets, stats, w.norm)?;
        loss = add_weighted(g, loss, t, w.beta1)?;
    }
    if w.beta2 != 0.0 {
        let sd = stats.dissipation_scale();
        let d = require(targets.iter().map(|t| t.dissipation), "dissipation")?;
        let r = residual(g, pred.dissipation, &[1.0 / sd], d.iter().map(|d| d / sd).collect())?;
        let t = norm_sum(g, r, w.norm)?;
        loss = add_weighted(g, loss, t, w.beta2)?;
    }
    if w.beta3 != 0.0 {
        let s = require(targets.iter().map(|t| t.entropy), "entropy")?;
        let e = pred.entropy.ok_or_else(|| Error::Config("entropy loss needs a non-isothermal model".into()))?;
        // Entropy has no statistics of its own; its scale is std_F / std_T.
        let scale = stats.energy().1 / stats.temperature_std()?;
        let r = residual(g, e, &[1.0 / scale], s.iter().map(|s| s / scale).collect())?;
        let t = norm_sum(g, r, w.norm)?;
        loss = add_weighted(g, loss, t, w.beta3)?;
    }
    Ok(loss)
}

/// Stress and free-energy data plus a penalty on negative dissipation.
pub fn loss_d_constraint(
    g: &mut Graph,
    pred: &Predictions,
    targets: &[Targets],
    stats: &StandardizationStats,
    w: &LossWeights,
) -> Result<Var> {
    let mut loss = stress_term(g, pred, targets, stats, w.norm)?;
    if w.beta1 != 0.0 {
        let t = energy_term(g, pred, targets, stats, w.norm)?;
        loss = add_weighted(g, loss, t, w.beta1)?;
    }
    let p = negativity_penalty(g, pred.dissipation, stats.dissipation_scale())?;
    add_weighted(g, loss, p, w.beta2)
}

/// Stress data plus penalties on negative free energy and dissipation.
pub fn loss_unsupervised(
    g: &mut Graph,
    pred: &Predictions,
    targets: &[Targets],
    stats: &StandardizationStats,
    w: &LossWeights,
) -> Result<Var> {
    let loss = stress_term(g, pred, targets, stats, w.norm)?;
    let pf = negativity_penalty(g, pred.free_energy, stats.energy().1)?;
    let loss = add_weighted(g, loss, pf, w.beta1)?;
    let pd = negativity_penalty(g, pred.dissipation, stats.dissipation_scale())?;
    add_weighted(g, loss, pd, w.beta2)
}

/// [`loss_unsupervised`] plus data for the first `|z_p|` ISVs.
pub fn loss_hybrid(
    g: &mut Graph,
    pred: &Predictions,
    targets: &[Targets],
    stats: &StandardizationStats,
    w: &LossWeights,
) -> Result<Var> {
    let known = require(targets.iter().map(|t| t.isv.clone()), "known ISV")?;
    let p = known[0].len();
    let m = g.value(pred.isv).dims().0;
    if m <= p {
        return Err(Error::Config(format!("ISV dimension {m} must exceed the {p} known ISVs")));
    }
    let loss = loss_unsupervised(g, pred, targets, stats, w)?;
    if w.beta4 == 0.0 {
        return Ok(loss);
    }
    let isv_stats = stats.isv.as_ref().ok_or_else(|| Error::MissingData("known ISV statistics".into()))?;
    let t: Vec<Vec<f64>> = known.iter().map(|z| isv_stats.standardize(z)).collect();
    let lead = g.slice_rows(pred.isv, 0, p)?;
    let r = residual(g, lead, &vec![1.0; p], matrix(&t))?;
    let term = norm_sum(g, r, w.norm)?;
    add_weighted(g, loss, term, w.beta4)
}

/// Dispatches on `w.variant`.
pub fn loss(
    g: &mut Graph,
    pred: &Predictions,
    targets: &[Targets],
    stats: &StandardizationStats,
    w: &LossWeights,
) -> Result<Var> {
    w.validate()?;
    if targets.is_empty() {
        return Err(Error::MissingData("empty batch".into()));
    }
    match w.variant {
        LossVariant::Full => loss_full(g, pred, targets, stats, w),
        LossVariant::DConstraint => loss_d_constraint(g, pred, targets, stats, w),
        LossVariant::Unsupervised => loss_unsupervised(g, pred, targets, stats, w),
        LossVariant::Hybrid => loss_hybrid(g, pred, targets, stats, w),
    }
}

/// Stress-only data term for the constitutive baselines, on standardized
/// predictions and targets.
pub fn stress_only(g: &mut Graph, pred: Var, targets: &[Vec<f64>], norm: LossNorm) -> Result<Var> {
    let r = residual(g, pred, &vec![1.0; targets[0].len()], matrix(targets))?;
    norm_sum(g, r, norm)
}
