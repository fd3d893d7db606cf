//! CSV path format: a header row with `t`, `eps_0..`, `sig_0..` and the
//! optional `temp`, `free_energy`, `dissipation`, `isv_0..` columns.

use std::collections::BTreeMap;
use std::path::Path;

use crate::datagen::MaterialPath;
use crate::{Error, Result};

fn csv_err(path: &Path, msg: impl ToString) -> Error {
    Error::Csv { path: path.display().to_string(), msg: msg.to_string() }
}

/// Header for a path, in canonical column order.
pub fn header(p: &MaterialPath) -> Vec<String> {
    let d = p.strain_dim();
    let mut h = vec!["t".to_string()];
    h.extend((0..d).map(|i| format!("eps_{i}")));
    h.extend((0..d).map(|i| format!("sig_{i}")));
    if p.temperature.is_some() {
        h.push("temp".into());
    }
    if p.free_energy.is_some() {
        h.push("free_energy".into());
    }
    if p.dissipation.is_some() {
        h.push("dissipation".into());
    }
    h.extend((0..p.isv_dim()).map(|i| format!("isv_{i}")));
    h
}

pub fn write_path(file: &Path, p: &MaterialPath) -> Result<()> {
    p.validate()?;
    let mut w = csv::Writer::from_path(file).map_err(|e| csv_err(file, e))?;
    w.write_record(header(p)).map_err(|e| csv_err(file, e))?;
    for n in 0..p.len() {
        let mut row = vec![p.time[n]];
        row.extend(&p.strain[n]);
        row.extend(&p.stress[n]);
        for col in [&p.temperature, &p.free_energy, &p.dissipation].into_iter().flatten() {
            row.push(col[n]);
        }
        if let Some(z) = &p.reference_isv {
            row.extend(&z[n]);
        }
        w.write_record(row.iter().map(|x| x.to_string())).map_err(|e| csv_err(file, e))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a path, rejecting files without a required column by name.
pub fn read_path(file: &Path) -> Result<MaterialPath> {
    read_path_mapped(file, &BTreeMap::new())
}

/// [`read_path`] where `columns` maps canonical names (`t`, `eps_0`, ...) to
/// the names used in the file.
pub fn read_path_mapped(file: &Path, columns: &BTreeMap<String, String>) -> Result<MaterialPath> {
    if !file.exists() {
        return Err(Error::MissingData(format!("data not found: {}", file.display())));
    }
    let mut r = csv::Reader::from_path(file).map_err(|e| csv_err(file, e))?;
    let headers: Vec<String> = r
        .headers()
        .map_err(|e| csv_err(file, e))?
        .iter()
        .map(|h| {
            let h = h.trim();
            columns.iter().find(|(_, src)| src.as_str() == h).map_or_else(|| h.to_string(), |(canon, _)| canon.clone())
        })
        .collect();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let need = |name: &str| find(name).ok_or_else(|| csv_err(file, format!("missing required column `{name}`")));
    let indexed = |prefix: &str| -> Vec<usize> {
        (0..).map_while(|i| find(&format!("{prefix}_{i}"))).collect()
    };
    let t = need("t")?;
    let eps = indexed("eps");
    if eps.is_empty() {
        need("eps_0")?;
    }
    let d = eps.len();
    let sig: Vec<usize> = (0..d).map(|i| need(&format!("sig_{i}"))).collect::<Result<_>>()?;
    let temp = find("temp");
    let fe = find("free_energy");
    let dis = find("dissipation");
    let isv = indexed("isv");

    let mut p = MaterialPath {
        temperature: temp.map(|_| Vec::new()),
        free_energy: fe.map(|_| Vec::new()),
        dissipation: dis.map(|_| Vec::new()),
        reference_isv: (!isv.is_empty()).then(Vec::new),
        ..Default::default()
    };
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(file, e))?;
        let num = |i: usize| -> Result<f64> {
            let field = rec.get(i).ok_or_else(|| csv_err(file, format!("row {} is missing field {}", line + 2, headers[i])))?;
            field
                .trim()
                .parse::<f64>()
                .map_err(|_| csv_err(file, format!("row {}: `{}` in column {} is not a number", line + 2, field, headers[i])))
        };
        p.time.push(num(t)?);
        p.strain.push(eps.iter().map(|&i| num(i)).collect::<Result<_>>()?);
        p.stress.push(sig.iter().map(|&i| num(i)).collect::<Result<_>>()?);
        for (idx, col) in [(temp, &mut p.temperature), (fe, &mut p.free_energy), (dis, &mut p.dissipation)] {
            if let (Some(i), Some(c)) = (idx, col.as_mut()) {
                c.push(num(i)?);
            }
        }
        if let Some(z) = p.reference_isv.as_mut() {
            z.push(isv.iter().map(|&i| num(i)).collect::<Result<_>>()?);
        }
    }
    p.validate().map_err(|e| csv_err(file, e))?;
    Ok(p)
}
