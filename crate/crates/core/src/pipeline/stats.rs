use serde::{Deserialize, Serialize};

use crate::datagen::MaterialPath;
use crate::{Error, Result};

/// Per-component mean and population standard deviation of one feature group.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FeatureStats {
    pub fn new(mean: Vec<f64>, std: Vec<f64>) -> Result<Self> {
        if mean.len() != std.len() {
            return Err(Error::Dimension("mean and std lengths differ".into()));
        }
        if std.iter().any(|s| !(*s > 0.0 && s.is_finite())) || mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::Config("standardization needs finite means and positive deviations".into()));
        }
        Ok(Self { mean, std })
    }

    pub fn identity(n: usize) -> Self {
        Self { mean: vec![0.0; n], std: vec![1.0; n] }
    }

    pub fn scalar(mean: f64, std: f64) -> Result<Self> {
        Self::new(vec![mean], vec![std])
    }

    /// Fits over `rows`, naming offending columns `{name}_{i}`.
    pub fn fit<'a>(name: &str, rows: impl IntoIterator<Item = &'a [f64]>) -> Result<Self> {
        let rows: Vec<&[f64]> = rows.into_iter().collect();
        let first = rows.first().ok_or_else(|| Error::MissingData(format!("no rows for {name}")))?;
        let d = first.len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; d];
        for r in &rows {
            if r.len() != d {
                return Err(Error::Dimension(format!("{name} rows have differing widths")));
            }
            for (m, x) in mean.iter_mut().zip(r.iter()) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for r in &rows {
            for ((v, x), m) in var.iter_mut().zip(r.iter()).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
        let std: Vec<f64> = var.iter().map(|v| (v / n).sqrt()).collect();
        for (i, (s, m)) in std.iter().zip(&mean).enumerate() {
            if !(*s > 1e-12 * m.abs().max(f64::MIN_POSITIVE)) || !s.is_finite() {
                let vector = ["eps", "sig", "isv", "deps", "dsig"].contains(&name);
                let col = if vector { format!("{name}_{i}") } else { name.to_string() };
                return Err(Error::ConstantColumn(col));
            }
        }
        Ok(Self { mean, std })
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn standardize(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.mean).zip(&self.std).map(|((x, m), s)| (x - m) / s).collect()
    }

    pub fn destandardize(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.mean).zip(&self.std).map(|((x, m), s)| m + s * x).collect()
    }

    /// Divides by the deviation without removing the mean; used for rates
    /// and increments.
    pub fn scale(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.std).map(|(x, s)| x / s).collect()
    }
}

/// Standardization statistics for every feature group.
///
/// Free energy and dissipation fall back to derived scales when the data has
/// no such columns: `std_F = mean_i(std_sig_i * std_eps_i)` with zero mean,
/// and `std_D = std_F` (per unit time).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StandardizationStats {
    pub strain: FeatureStats,
    pub stress: FeatureStats,
    pub temperature: Option<FeatureStats>,
    pub free_energy: Option<FeatureStats>,
    pub dissipation: Option<FeatureStats>,
    pub isv: Option<FeatureStats>,
    pub strain_increment: Option<FeatureStats>,
    pub stress_increment: Option<FeatureStats>,
}

impl StandardizationStats {
    /// Identity statistics for `d` strain components.
    pub fn identity(d: usize, thermal: bool) -> Self {
        Self {
            strain: FeatureStats::identity(d),
            stress: FeatureStats::identity(d),
            temperature: thermal.then(|| FeatureStats::identity(1)),
            free_energy: None,
            dissipation: None,
            isv: None,
            strain_increment: None,
            stress_increment: None,
        }
    }

    pub fn strain_dim(&self) -> usize {
        self.strain.len()
    }

    /// `(mean, std)` of the free energy.
    pub fn energy(&self) -> (f64, f64) {
        match &self.free_energy {
            Some(f) => (f.mean[0], f.std[0]),
            None => {
                let d = self.strain.len() as f64;
                let s = self.stress.std.iter().zip(&self.strain.std).map(|(a, b)| a * b).sum::<f64>() / d;
                (0.0, s)
            }
        }
    }

    /// Scale for dissipation; the mean is never removed so the sign survives.
    pub fn dissipation_scale(&self) -> f64 {
        self.dissipation.as_ref().map_or_else(|| self.energy().1, |s| s.std[0])
    }

    pub fn temperature_std(&self) -> Result<f64> {
        self.temperature
            .as_ref()
            .map(|t| t.std[0])
            .ok_or_else(|| Error::MissingData("temperature statistics".into()))
    }
}

/// Population statistics over every step of `dataset`. Optional groups are
/// fitted when every path carries them; `thermal` makes temperature required.
pub fn fit_stats(dataset: &[MaterialPath], thermal: bool) -> Result<StandardizationStats> {
    if dataset.is_empty() {
        return Err(Error::MissingData("cannot fit statistics to an empty dataset".into()));
    }
    for p in dataset {
        p.validate()?;
    }
    let all = |f: fn(&MaterialPath) -> bool| dataset.iter().all(f);
    let strain = FeatureStats::fit("eps", dataset.iter().flat_map(|p| p.strain.iter().map(Vec::as_slice)))?;
    let stress = FeatureStats::fit("sig", dataset.iter().flat_map(|p| p.stress.iter().map(Vec::as_slice)))?;
    let scalar = |name: &str, col: fn(&MaterialPath) -> &Option<Vec<f64>>| -> Result<FeatureStats> {
        FeatureStats::fit(name, dataset.iter().flat_map(|p| col(p).as_ref().unwrap().iter().map(std::slice::from_ref)))
    };
    let temperature = if thermal {
        if !all(|p| p.temperature.is_some()) {
            return Err(Error::MissingData("temperature column required for non-isothermal models".into()));
        }
        Some(scalar("temp", |p| &p.temperature)?)
    } else {
        None
    };
    // Optional groups that turn out constant (an elastic-only path has zero
    // dissipation throughout) fall back to the derived scales.
    let free_energy = if all(|p| p.free_energy.is_some()) { scalar("free_energy", |p| &p.free_energy).ok() } else { None };
    let dissipation = if all(|p| p.dissipation.is_some()) { scalar("dissipation", |p| &p.dissipation).ok() } else { None };
    let isv = if all(|p| p.reference_isv.is_some()) {
        FeatureStats::fit("isv", dataset.iter().flat_map(|p| p.reference_isv.as_ref().unwrap().iter().map(Vec::as_slice)))
            .ok()
    } else {
        None
    };
    let diffs = |col: fn(&MaterialPath) -> &Vec<Vec<f64>>| -> Vec<Vec<f64>> {
        dataset
            .iter()
            .flat_map(|p| {
                let c = col(p);
                (1..c.len()).map(move |n| c[n].iter().zip(&c[n - 1]).map(|(a, b)| a - b).collect())
            })
            .collect()
    };
    let de = diffs(|p| &p.strain);
    let ds = diffs(|p| &p.stress);
    Ok(StandardizationStats {
        strain,
        stress,
        temperature,
        free_energy,
        dissipation,
        isv,
        strain_increment: FeatureStats::fit("deps", de.iter().map(Vec::as_slice)).ok(),
        stress_increment: FeatureStats::fit("dsig", ds.iter().map(Vec::as_slice)).ok(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate_path, ElastoPlasticParams, LoadingProgram};

    #[test]
    fn population_statistics() {
        let rows = [[1.0], [2.0], [3.0]];
        let s = FeatureStats::fit("x", rows.iter().map(|r| r.as_slice())).unwrap();
        assert_eq!(s.mean, vec![2.0]);
        assert!((s.std[0] - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
        let z: Vec<f64> = rows.iter().map(|r| s.standardize(r)[0]).collect();
        let mean = z.iter().sum::<f64>() / 3.0;
        let var = z.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 3.0;
        assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-10);
    }

    #[test]
    fn constant_column_is_named() {
        let rows = [[5.0, 1.0], [5.0, 2.0], [5.0, 3.0]];
        match FeatureStats::fit("sig", rows.iter().map(|r| r.as_slice())) {
            Err(Error::ConstantColumn(c)) => assert_eq!(c, "sig_0"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn round_trip() {
        let path = generate_path(&ElastoPlasticParams::default(), &LoadingProgram::benchmark(5e-5)).unwrap();
        let stats = fit_stats(std::slice::from_ref(&path), false).unwrap();
        for s in &path.stress {
            let back = stats.stress.destandardize(&stats.stress.standardize(s));
            assert!((back[0] - s[0]).abs() <= 1e-12 * s[0].abs().max(1.0));
        }
        assert!(stats.free_energy.is_some() && stats.dissipation.is_some() && stats.isv.is_some());
        assert!(stats.temperature.is_none());
        assert!(fit_stats(&[path], true).is_err());
        assert!(fit_stats(&[], false).is_err());
    }

    #[test]
    fn derived_energy_scale_without_energy_data() {
        let mut path = generate_path(&ElastoPlasticParams::default(), &LoadingProgram::benchmark(5e-4)).unwrap();
        path.free_energy = None;
        path.dissipation = None;
        let stats = fit_stats(&[path], false).unwrap();
        let (m, s) = stats.energy();
        assert_eq!(m, 0.0);
        assert_eq!(s, stats.stress.std[0] * stats.strain.std[0]);
        assert_eq!(stats.dissipation_scale(), s);
    }
}
