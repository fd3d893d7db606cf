//! Portable JSON checkpoints.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::nets::Parameters;
use crate::thermo::{TcrnnModel, TcrnnSpec};
use crate::{Error, Result};

use super::stats::StandardizationStats;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub model: TcrnnSpec,
    pub stats: StandardizationStats,
    /// Flat row-major tensors keyed by canonical name.
    pub params: BTreeMap<String, Vec<f64>>,
    pub config_echo: serde_json::Value,
    pub final_loss: Option<f64>,
}

impl Checkpoint {
    pub fn from_model(model: &TcrnnModel, config_echo: serde_json::Value, final_loss: Option<f64>) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            model: model.spec.clone(),
            stats: model.stats.clone(),
            params: model.named_params().into_iter().map(|(n, v)| (n, v.data().to_vec())).collect(),
            config_echo,
            final_loss,
        }
    }

    pub fn to_model(&self) -> Result<TcrnnModel> {
        let mut model = TcrnnModel::zeros(self.model.clone(), self.stats.clone())?;
        let mut used = 0;
        for (name, value) in model.named_params_mut() {
            let data = self
                .params
                .get(&name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?;
            if data.len() != value.len() {
                return Err(Error::Checkpoint(format!(
                    "parameter {name} has {} entries, expected {}",
                    data.len(),
                    value.len()
                )));
            }
            value.data_mut().copy_from_slice(data);
            used += 1;
        }
        if used != self.params.len() {
            return Err(Error::Checkpoint("checkpoint has parameters the model does not use".into()));
        }
        Ok(model)
    }

    pub fn to_json(&self) -> Result<String> {
        to_json_17(self)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::Checkpoint(e.to_string()))?;
        match raw.get("format_version").and_then(serde_json::Value::as_u64) {
            Some(v) if v == u64::from(FORMAT_VERSION) => {}
            Some(v) => {
                return Err(Error::Version { found: u32::try_from(v).unwrap_or(u32::MAX), expected: FORMAT_VERSION })
            }
            None => return Err(Error::Checkpoint("missing format_version".into())),
        }
        serde_json::from_value(raw).map_err(|e| Error::Checkpoint(e.to_string()))
    }
}

/// Writes every `f64` with 17 significant digits.
struct Digits17;

impl serde_json::ser::Formatter for Digits17 {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> std::io::Result<()> {
        if value == 0.0 && value.is_sign_negative() {
            writer.write_all(b"-0.0")
        } else if value == 0.0 {
            writer.write_all(b"0.0")
        } else {
            write!(writer, "{value:.16e}")
        }
    }
}

/// Compact JSON with 17-significant-digit floats.
pub fn to_json_17<T: Serialize>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, Digits17);
    value.serialize(&mut ser).map_err(|e| Error::Checkpoint(e.to_string()))?;
    buf.push(b'\n');
    String::from_utf8(buf).map_err(|e| Error::Checkpoint(e.to_string()))
}

pub fn save_checkpoint(
    model: &TcrnnModel,
    path: &Path,
    config_echo: serde_json::Value,
    final_loss: Option<f64>,
) -> Result<()> {
    let text = Checkpoint::from_model(model, config_echo, final_loss).to_json()?;
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = std::fs::read_to_string(path)?;
    Checkpoint::from_json(&text)
}

pub fn load_checkpoint(path: &Path) -> Result<TcrnnModel> {
    read_checkpoint(path)?.to_model()
}
