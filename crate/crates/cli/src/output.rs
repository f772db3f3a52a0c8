//! Artifact writers. JSON has sorted keys; CSV has `#` comment lines with
//! the tool version, config hash and units, then a header row.

use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;

use crate::error::CliError;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// 15 significant digits.
pub fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.14e}")
    } else {
        format!("{v}")
    }
}

pub struct Artifacts {
    pub dir: PathBuf,
    pub config_hash: String,
    pub written: Vec<PathBuf>,
}

impl Artifacts {
    pub fn new(dir: &Path, config_hash: String) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir)?;
        Ok(Artifacts {
            dir: dir.to_path_buf(),
            config_hash,
            written: Vec::new(),
        })
    }

    /// Adds `tool_version` and `config_hash` to the top-level object.
    pub fn stamp(&self, value: &impl Serialize) -> Value {
        let mut v = serde_json::to_value(value).expect("artifact serializes");
        match v.as_object_mut() {
            Some(obj) => {
                obj.insert("tool_version".into(), TOOL_VERSION.into());
                obj.insert("config_hash".into(), self.config_hash.clone().into());
                v
            }
            None => serde_json::json!({
                "value": v,
                "tool_version": TOOL_VERSION,
                "config_hash": self.config_hash,
            }),
        }
    }

    pub fn json(&mut self, name: &str, value: &impl Serialize) -> Result<PathBuf, CliError> {
        let path = self.dir.join(name);
        let mut text = serde_json::to_string_pretty(&self.stamp(value)).expect("json");
        text.push('\n');
        std::fs::write(&path, text)?;
        self.written.push(path.clone());
        Ok(path)
    }

    pub fn csv(&mut self, name: &str, units: &str, header: &[&str], rows: &[Vec<String>]) -> Result<PathBuf, CliError> {
        let path = self.dir.join(name);
        let mut buf = format!(
            "# tool_version = {TOOL_VERSION}\n# config_hash = {}\n# units: {units}\n",
            self.config_hash
        )
        .into_bytes();
        {
            let mut w = csv::WriterBuilder::new()
                .terminator(csv::Terminator::Any(b'\n'))
                .from_writer(&mut buf);
            w.write_record(header).map_err(csv_err)?;
            for r in rows {
                w.write_record(r).map_err(csv_err)?;
            }
            w.flush()?;
        }
        std::fs::write(&path, buf)?;
        self.written.push(path.clone());
        Ok(path)
    }
}

fn csv_err(e: csv::Error) -> CliError {
    CliError::Io(std::io::Error::other(e.to_string()))
}
