use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tcrnn::datagen::{generate_path, MaterialPath};
use tcrnn::eval::{evaluate, run_sweep_with, HistorySeed, PathReport, Role, SweepData, SweepRow, Trace};
use tcrnn::io::{read_path, read_path_mapped, write_path};
use tcrnn::pipeline::{dataset_loss, init_model, load_checkpoint, save_checkpoint, train_with, TrainConfig};
use tcrnn::thermo::TcrnnModel;
use tcrnn::{Error, Result};

use crate::config::{DataSection, RunConfig};

/// A path with its identifier and role.
pub type LabeledPath = (String, Role, MaterialPath);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub files: Vec<ManifestEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    pub file: String,
    pub role: Role,
}

pub const MANIFEST: &str = "manifest.json";

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).map_err(|e| Error::Csv { path: path.display().to_string(), msg: e.to_string() })
}

fn csv_fail(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::Csv { path: path.display().to_string(), msg: e.to_string() }
}

/// Paths from a generated data directory.
pub fn read_data_dir(dir: &Path) -> Result<Vec<LabeledPath>> {
    let manifest_path = dir.join(MANIFEST);
    let text = fs::read_to_string(&manifest_path)
        .map_err(|_| Error::MissingData(format!("data not found: {}", manifest_path.display())))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{MANIFEST}: {e}")))?;
    manifest.files.iter().map(|f| Ok((f.id.clone(), f.role, read_path(&dir.join(&f.file))?))).collect()
}

/// Paths for a run: from `data_dir` when given, otherwise from the config's
/// data section. Role overrides from the eval section are applied last.
pub fn load_data(cfg: &RunConfig, config_dir: &Path, data_dir: Option<&Path>) -> Result<Vec<LabeledPath>> {
    let mut paths = match (data_dir, &cfg.data) {
        (Some(dir), _) => read_data_dir(dir)?,
        (None, DataSection::Synthetic(s)) => s
            .paths
            .iter()
            .map(|p| Ok((p.id.clone(), p.role, generate_path(&s.material, &p.program)?)))
            .collect::<Result<_>>()?,
        (None, DataSection::Csv(c)) => {
            let mut out = Vec::new();
            for spec in &c.files {
                let pattern = config_dir.join(&spec.pattern);
                let pattern = pattern.to_string_lossy();
                let mut matches: Vec<PathBuf> = glob::glob(&pattern)
                    .map_err(|e| Error::Config(format!("bad pattern {pattern}: {e}")))?
                    .filter_map(std::result::Result::ok)
                    .collect();
                matches.sort();
                if matches.is_empty() {
                    return Err(Error::MissingData(format!("data not found: {pattern}")));
                }
                for m in matches {
                    let id = m.file_stem().map_or_else(|| m.display().to_string(), |s| s.to_string_lossy().into_owned());
                    out.push((id, spec.role, read_path_mapped(&m, &c.columns)?));
                }
            }
            out
        }
    };
    for (id, role, _) in &mut paths {
        if let Some(r) = cfg.eval.roles.get(id) {
            *role = *r;
        }
    }
    Ok(paths)
}

fn with_role(paths: &[LabeledPath], role: Role) -> Vec<(String, MaterialPath)> {
    paths.iter().filter(|(_, r, _)| *r == role).map(|(id, _, p)| (id.clone(), p.clone())).collect()
}

/// Writes one CSV per synthetic path plus a manifest.
pub fn cmd_generate(cfg: &RunConfig, out: &Path) -> Result<Manifest> {
    let DataSection::Synthetic(s) = &cfg.data else {
        return Err(Error::Config("generate needs a synthetic data section".into()));
    };
    create_dir(out)?;
    let mut files = Vec::with_capacity(s.paths.len());
    for p in &s.paths {
        let path = generate_path(&s.material, &p.program)?;
        let file = format!("{}.csv", p.id);
        write_path(&out.join(&file), &path)?;
        files.push(ManifestEntry { id: p.id.clone(), file, role: p.role });
    }
    let manifest = Manifest { files };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Config(e.to_string()))?;
    write_text(&out.join(MANIFEST), &(text + "\n"))?;
    Ok(manifest)
}

pub const CHECKPOINT: &str = "checkpoint.json";
pub const LOSS_HISTORY: &str = "loss_history.csv";

fn training_config(cfg: &RunConfig, seed: Option<u64>) -> TrainConfig {
    let mut t = cfg.training.clone();
    if let Some(s) = seed {
        t.seed = s;
    }
    t
}

/// Trains on the paths with role `train`; writes the checkpoint and the
/// per-epoch loss history. Returns the trained model.
pub fn cmd_train(
    cfg: &RunConfig,
    config_dir: &Path,
    data_dir: Option<&Path>,
    out: &Path,
    seed: Option<u64>,
    mut progress: impl FnMut(usize, f64),
) -> Result<TcrnnModel> {
    let paths = load_data(cfg, config_dir, data_dir)?;
    let dataset: Vec<MaterialPath> = with_role(&paths, Role::Train).into_iter().map(|(_, p)| p).collect();
    if dataset.is_empty() {
        return Err(Error::MissingData("no paths with role `train`".into()));
    }
    let tc = training_config(cfg, seed);
    create_dir(out)?;
    let mut model = init_model(cfg.model.clone(), &dataset, tc.seed)?;
    let history = train_with(&mut model, &dataset, &tc, &mut progress)?;
    let loss_path = out.join(LOSS_HISTORY);
    let mut w = csv_writer(&loss_path)?;
    w.write_record(["epoch", "loss"]).map_err(csv_fail(&loss_path))?;
    for (e, l) in history.iter().enumerate() {
        w.write_record([e.to_string(), l.to_string()]).map_err(csv_fail(&loss_path))?;
    }
    w.flush().map_err(|e| io_err(&loss_path, e))?;
    let final_loss = dataset_loss(&model, &dataset, &tc)?;
    let echo = serde_json::to_value(&tc).map_err(|e| Error::Config(e.to_string()))?;
    save_checkpoint(&model, &out.join(CHECKPOINT), echo, Some(final_loss))?;
    Ok(model)
}

fn trace_header(model: &TcrnnModel, t: &Trace) -> Vec<String> {
    let d = model.spec.strain_dim;
    let mut h = vec!["step".to_string(), "t".to_string()];
    h.extend((0..d).map(|i| format!("eps_{i}")));
    h.extend((0..d).map(|i| format!("sig_data_{i}")));
    h.extend((0..d).map(|i| format!("sig_pred_{i}")));
    h.push("free_energy_pred".into());
    h.push("dissipation_pred".into());
    if t.entropy.is_some() {
        h.push("entropy_pred".into());
    }
    h.extend((0..model.spec.isv_dim).map(|j| format!("z_{j}")));
    h
}

fn write_trace(file: &Path, model: &TcrnnModel, path: &MaterialPath, t: &Trace) -> Result<()> {
    let mut w = csv_writer(file)?;
    w.write_record(trace_header(model, t)).map_err(csv_fail(file))?;
    for n in 0..path.len() {
        let mut row = vec![n.to_string(), path.time[n].to_string()];
        row.extend(path.strain[n].iter().map(f64::to_string));
        row.extend(path.stress[n].iter().map(f64::to_string));
        row.extend(t.stress[n].iter().map(f64::to_string));
        row.push(t.free_energy[n].to_string());
        row.push(t.dissipation[n].to_string());
        if let Some(s) = &t.entropy {
            row.push(s[n].to_string());
        }
        row.extend(t.isv[n].iter().map(f64::to_string));
        w.write_record(row).map_err(csv_fail(file))?;
    }
    w.flush().map_err(|e| io_err(file, e))
}

pub const SUMMARY: &str = "summary.csv";

/// Evaluates a checkpoint on every path: open-loop and teacher-forced traces
/// per path under `traces/`, and a summary of relative errors.
pub fn cmd_eval(
    checkpoint: &Path,
    paths: &[LabeledPath],
    seed_mode: HistorySeed,
    out: &Path,
) -> Result<Vec<PathReport>> {
    let model = load_checkpoint(checkpoint)?;
    let report = evaluate(&model, paths, seed_mode)?;
    let traces = out.join("traces");
    create_dir(&traces)?;
    for (r, (_, _, path)) in report.paths.iter().zip(paths) {
        write_trace(&traces.join(format!("{}.csv", r.id)), &model, path, &r.open_loop)?;
        write_trace(&traces.join(format!("{}_teacher_forced.csv", r.id)), &model, path, &r.teacher_forced)?;
    }
    let summary = out.join(SUMMARY);
    let mut w = csv_writer(&summary)?;
    let mut header = vec!["path_id".to_string(), "role".into(), "open_loop_error".into(), "teacher_forced_error".into()];
    header.extend((0..model.spec.isv_dim).map(|j| format!("isv_spearman_{j}")));
    w.write_record(&header).map_err(csv_fail(&summary))?;
    for r in &report.paths {
        let mut row = vec![
            r.id.clone(),
            r.role.as_str().to_string(),
            r.open_loop_error.to_string(),
            r.teacher_forced_error.to_string(),
        ];
        for j in 0..model.spec.isv_dim {
            let rho = r.isv_correlation.as_ref().and_then(|c| c[j]);
            row.push(rho.map_or_else(String::new, |x| x.to_string()));
        }
        w.write_record(row).map_err(csv_fail(&summary))?;
    }
    w.flush().map_err(|e| io_err(&summary, e))?;
    Ok(report.paths)
}

pub const SWEEP_TABLE: &str = "sweep.csv";
const SWEEP_HEADER: [&str; 7] = ["axis", "value", "seed", "path_id", "role", "relative_error", "wall_s"];

/// `(value, seed)` cells already present in a results table.
fn completed_cells(table: &Path) -> Result<BTreeSet<(u64, u64)>> {
    let mut done = BTreeSet::new();
    if !table.exists() {
        return Ok(done);
    }
    let mut r = csv::Reader::from_path(table).map_err(csv_fail(table))?;
    for rec in r.records() {
        let rec = rec.map_err(csv_fail(table))?;
        let parse = |i: usize| rec.get(i).and_then(|s| s.parse::<f64>().ok());
        let seed = rec.get(2).and_then(|s| s.parse::<u64>().ok());
        if let (Some(v), Some(s)) = (parse(1), seed) {
            done.insert((v.to_bits(), s));
        }
    }
    Ok(done)
}

/// Runs the configured sweep, appending one row per (cell, path) to
/// `sweep.csv`. Cells already in the table are skipped.
pub fn cmd_sweep(
    cfg: &RunConfig,
    config_dir: &Path,
    data_dir: Option<&Path>,
    out: &Path,
    seed: Option<u64>,
) -> Result<Vec<SweepRow>> {
    let section = cfg.sweep.as_ref().ok_or_else(|| Error::Config("config has no sweep section".into()))?;
    let tc = training_config(cfg, seed);
    let spec = cfg.sweep_spec(section, tc.seed);
    let paths = load_data(cfg, config_dir, data_dir)?;
    let material = match &cfg.data {
        DataSection::Synthetic(s) => Some(s.material),
        DataSection::Csv(_) => None,
    };
    let data = SweepData { train: with_role(&paths, Role::Train), test: with_role(&paths, Role::Test), material };
    create_dir(out)?;
    let table = out.join(SWEEP_TABLE);
    let done = completed_cells(&table)?;
    let fresh = !table.exists();
    let file = fs::OpenOptions::new().create(true).append(true).open(&table).map_err(|e| io_err(&table, e))?;
    let mut w = csv::Writer::from_writer(file);
    if fresh {
        w.write_record(SWEEP_HEADER).map_err(csv_fail(&table))?;
        w.flush().map_err(|e| io_err(&table, e))?;
    }
    run_sweep_with(
        &spec,
        &data,
        |v, s| done.contains(&(v.to_bits(), s)),
        |rows| {
            for r in rows {
                w.write_record([
                    r.axis.as_str().to_string(),
                    r.value.to_string(),
                    r.seed.to_string(),
                    r.path_id.clone(),
                    r.role.as_str().to_string(),
                    r.relative_error.to_string(),
                    format!("{:.3}", r.wall_s),
                ])
                .map_err(csv_fail(&table))?;
            }
            w.flush().map_err(|e| io_err(&table, e))
        },
    )
}
