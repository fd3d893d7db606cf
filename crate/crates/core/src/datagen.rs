//! Synthetic 1-D elasto-plastic data with linear kinematic hardening.
//!
//! Free energy `F = E/2 (eps - eps_p)^2 + H/2 eps_p^2`, stress
//! `sigma = E (eps - eps_p)` and dissipation `D = (sigma - H eps_p) d(eps_p)/dt`.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::{rng, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ElastoPlasticParams {
    /// Young's modulus `E` in Pa.
    pub young_modulus: f64,
    /// Kinematic hardening modulus `H` in Pa.
    pub hardening_modulus: f64,
    /// Yield stress `k` in Pa.
    pub yield_stress: f64,
}

impl Default for ElastoPlasticParams {
    fn default() -> Self {
        Self { young_modulus: 100e9, hardening_modulus: 100e9, yield_stress: 100e6 }
    }
}

impl ElastoPlasticParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.young_modulus > 0.0 && self.hardening_modulus >= 0.0 && self.yield_stress > 0.0;
        if !ok || !(self.young_modulus + self.hardening_modulus + self.yield_stress).is_finite() {
            return Err(Error::Config("elasto-plastic parameters need E > 0, H >= 0, k > 0".into()));
        }
        Ok(())
    }

    /// Slope of the stress-strain curve during plastic flow, `EH / (E + H)`.
    pub fn plastic_tangent(&self) -> f64 {
        let (e, h) = (self.young_modulus, self.hardening_modulus);
        e * h / (e + h)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReturnMapOutput {
    pub stress: f64,
    pub plastic_strain: f64,
    /// `D * dt` for the step.
    pub dissipation_increment: f64,
    pub free_energy: f64,
}

/// Radial return from state `(strain, plastic_strain)` under `d_strain`.
pub fn return_map_step(p: &ElastoPlasticParams, strain: f64, plastic_strain: f64, d_strain: f64) -> ReturnMapOutput {
    let (e, h, k) = (p.young_modulus, p.hardening_modulus, p.yield_stress);
    let eps = strain + d_strain;
    let trial = e * (eps - plastic_strain);
    let relative = trial - h * plastic_strain;
    let f = relative.abs() - k;
    let new_plastic = if f <= 0.0 { plastic_strain } else { plastic_strain + f / (e + h) * relative.signum() };
    let stress = e * (eps - new_plastic);
    let elastic = eps - new_plastic;
    ReturnMapOutput {
        stress,
        plastic_strain: new_plastic,
        dissipation_increment: (stress - h * new_plastic) * (new_plastic - plastic_strain),
        free_energy: 0.5 * e * elastic * elastic + 0.5 * h * new_plastic * new_plastic,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Segment {
    pub target: f64,
    pub increment: f64,
}

/// A strain program starting from zero strain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LoadingProgram {
    Segments {
        segments: Vec<Segment>,
    },
    /// Each cycle loads by `loading_strain` then unloads by `unloading_strain`.
    Cyclic {
        cycles: usize,
        loading_strain: f64,
        unloading_strain: f64,
        increment: f64,
    },
}

/// Strain increments of the five benchmark paths.
pub const BENCHMARK_INCREMENTS: [f64; 5] = [3.75e-5, 4.29e-5, 5.0e-5, 6.0e-5, 7.5e-5];
/// Increment of the benchmark training path.
pub const BENCHMARK_TRAIN_INCREMENT: f64 = 5.0e-5;

impl LoadingProgram {
    /// Two cycles, loading 1e-2 and unloading 5e-3 per cycle.
    pub fn benchmark(increment: f64) -> Self {
        Self::Cyclic { cycles: 2, loading_strain: 1e-2, unloading_strain: 5e-3, increment }
    }

    pub fn segments(&self) -> Result<Vec<Segment>> {
        let segs = match self {
            Self::Segments { segments } => segments.clone(),
            Self::Cyclic { cycles, loading_strain, unloading_strain, increment } => {
                if *cycles == 0 {
                    return Err(Error::Config("loading program needs at least one cycle".into()));
                }
                let mut out = Vec::with_capacity(2 * cycles);
                let mut at = 0.0;
                for _ in 0..*cycles {
                    at += loading_strain;
                    out.push(Segment { target: at, increment: *increment });
                    at -= unloading_strain;
                    out.push(Segment { target: at, increment: *increment });
                }
                out
            }
        };
        if segs.is_empty() {
            return Err(Error::Config("loading program has no segments".into()));
        }
        for s in &segs {
            if !(s.increment > 0.0 && s.increment.is_finite() && s.target.is_finite()) {
                return Err(Error::Config("segment increments must be positive and finite".into()));
            }
        }
        Ok(segs)
    }

    /// Strain at every step, starting with zero. The last substep of each
    /// segment is shortened so the target is hit exactly.
    pub fn strains(&self) -> Result<Vec<f64>> {
        let mut out = vec![0.0];
        let mut at = 0.0f64;
        for s in self.segments()? {
            let span = s.target - at;
            let n = ((span.abs() / s.increment) - 1e-9).ceil().max(0.0) as usize;
            let dir = span.signum();
            for i in 1..n {
                out.push(at + dir * s.increment * i as f64);
            }
            if n > 0 {
                out.push(s.target);
            }
            at = s.target;
        }
        if out.len() < 2 {
            return Err(Error::Config("loading program produces fewer than two steps".into()));
        }
        Ok(out)
    }
}

/// One material time series. Strain, stress and `reference_isv` hold one
/// vector per step.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct MaterialPath {
    pub time: Vec<f64>,
    pub strain: Vec<Vec<f64>>,
    pub stress: Vec<Vec<f64>>,
    pub temperature: Option<Vec<f64>>,
    pub free_energy: Option<Vec<f64>>,
    /// Dissipation rate per step; the first step carries zero.
    pub dissipation: Option<Vec<f64>>,
    pub reference_isv: Option<Vec<Vec<f64>>>,
}

impl MaterialPath {
    pub fn len(&self) -> usize {
        self.time.len()
    }

    pub fn is_empty(&self) -> bool {
        self.time.is_empty()
    }

    pub fn strain_dim(&self) -> usize {
        self.strain.first().map_or(0, Vec::len)
    }

    pub fn isv_dim(&self) -> usize {
        self.reference_isv.as_ref().and_then(|z| z.first()).map_or(0, Vec::len)
    }

    pub fn dt(&self, n: usize) -> f64 {
        self.time[n] - self.time[n - 1]
    }

    pub fn max_abs_stress(&self) -> f64 {
        self.stress.iter().flatten().fold(0.0f64, |m, s| m.max(s.abs()))
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if n < 2 {
            return Err(Error::MissingData("a path needs at least two steps".into()));
        }
        let d = self.strain_dim();
        let same = |len: usize, name: &str| {
            if len == n {
                Ok(())
            } else {
                Err(Error::Dimension(format!("column {name} has {len} rows, time has {n}")))
            }
        };
        same(self.strain.len(), "strain")?;
        same(self.stress.len(), "stress")?;
        if d == 0 || self.strain.iter().chain(&self.stress).any(|v| v.len() != d) {
            return Err(Error::Dimension("strain and stress need one shared, nonzero dimension".into()));
        }
        if let Some(c) = &self.temperature {
            same(c.len(), "temperature")?;
        }
        if let Some(c) = &self.free_energy {
            same(c.len(), "free_energy")?;
        }
        if let Some(c) = &self.dissipation {
            same(c.len(), "dissipation")?;
        }
        if let Some(z) = &self.reference_isv {
            same(z.len(), "reference_isv")?;
            let m = self.isv_dim();
            if m == 0 || z.iter().any(|v| v.len() != m) {
                return Err(Error::Dimension("reference ISVs need one shared, nonzero dimension".into()));
            }
        }
        if self.time.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Config("time must be strictly increasing".into()));
        }
        Ok(())
    }
}

/// Steps the return map along `program`. Time is the step index.
pub fn generate_path(params: &ElastoPlasticParams, program: &LoadingProgram) -> Result<MaterialPath> {
    params.validate()?;
    let strains = program.strains()?;
    let n = strains.len();
    let mut path = MaterialPath {
        time: (0..n).map(|i| i as f64).collect(),
        strain: Vec::with_capacity(n),
        stress: Vec::with_capacity(n),
        temperature: None,
        free_energy: Some(Vec::with_capacity(n)),
        dissipation: Some(Vec::with_capacity(n)),
        reference_isv: Some(Vec::with_capacity(n)),
    };
    let mut plastic = 0.0;
    let mut prev = 0.0;
    for (i, &eps) in strains.iter().enumerate() {
        let out = return_map_step(params, prev, plastic, eps - prev);
        // The step lands exactly on the program strain; `prev + (eps - prev)`
        // may differ from `eps` in the last bit.
        let stress = params.young_modulus * (eps - out.plastic_strain);
        let elastic = eps - out.plastic_strain;
        let energy = 0.5 * params.young_modulus * elastic * elastic
            + 0.5 * params.hardening_modulus * out.plastic_strain * out.plastic_strain;
        let dt = if i == 0 { 1.0 } else { path.time[i] - path.time[i - 1] };
        path.strain.push(vec![eps]);
        path.stress.push(vec![stress]);
        path.free_energy.as_mut().unwrap().push(energy);
        path.dissipation.as_mut().unwrap().push(out.dissipation_increment / dt);
        path.reference_isv.as_mut().unwrap().push(vec![out.plastic_strain]);
        plastic = out.plastic_strain;
        prev = eps;
    }
    Ok(path)
}

/// The five benchmark paths, ordered as [`BENCHMARK_INCREMENTS`].
pub fn benchmark_dataset(params: &ElastoPlasticParams) -> Result<Vec<MaterialPath>> {
    BENCHMARK_INCREMENTS.iter().map(|&inc| generate_path(params, &LoadingProgram::benchmark(inc))).collect()
}

/// Copy of `path` whose stress has i.i.d. Gaussian noise of standard
/// deviation `r * max|stress|` added.
pub fn perturb_stress(path: &MaterialPath, r: f64, seed: u64) -> Result<MaterialPath> {
    if !(r >= 0.0 && r.is_finite()) {
        return Err(Error::Config(format!("noise ratio must be non-negative, got {r}")));
    }
    let mut out = path.clone();
    if r == 0.0 {
        return Ok(out);
    }
    let normal = Normal::new(0.0, r * path.max_abs_stress())
        .map_err(|e| Error::Config(format!("invalid noise distribution: {e}")))?;
    let mut rng = rng::stream(seed, &[]);
    for v in out.stress.iter_mut().flatten() {
        *v += normal.sample(&mut rng);
    }
    Ok(out)
}

/// Inserts a copy of every `stride`-th step (steps `stride, 2 stride, ...`)
/// right after it, so the inserted step has zero strain and stress increments
/// and zero dissipation. Later times shift by the local time step.
pub fn augment_time_consistency(dataset: &[MaterialPath], stride: usize) -> Result<Vec<MaterialPath>> {
    if stride == 0 {
        return Err(Error::Config("time-consistency stride must be at least 1".into()));
    }
    dataset.iter().map(|p| augment_path(p, stride)).collect()
}

fn augment_path(p: &MaterialPath, stride: usize) -> Result<MaterialPath> {
    p.validate()?;
    let mut out = MaterialPath {
        temperature: p.temperature.as_ref().map(|_| Vec::new()),
        free_energy: p.free_energy.as_ref().map(|_| Vec::new()),
        dissipation: p.dissipation.as_ref().map(|_| Vec::new()),
        reference_isv: p.reference_isv.as_ref().map(|_| Vec::new()),
        ..Default::default()
    };
    let mut offset = 0.0;
    for i in 0..p.len() {
        let copies = if i > 0 && i % stride == 0 { 2 } else { 1 };
        for c in 0..copies {
            if c == 1 {
                offset += p.dt(i);
            }
            out.time.push(p.time[i] + offset);
            out.strain.push(p.strain[i].clone());
            out.stress.push(p.stress[i].clone());
            if let (Some(o), Some(s)) = (&mut out.temperature, &p.temperature) {
                o.push(s[i]);
            }
            if let (Some(o), Some(s)) = (&mut out.free_energy, &p.free_energy) {
                o.push(s[i]);
            }
            if let (Some(o), Some(s)) = (&mut out.dissipation, &p.dissipation) {
                o.push(if c == 1 { 0.0 } else { s[i] });
            }
            if let (Some(o), Some(s)) = (&mut out.reference_isv, &p.reference_isv) {
                o.push(s[i].clone());
            }
        }
    }
    Ok(out)
}
