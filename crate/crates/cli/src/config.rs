//! Experiment configuration: TOML with nested sections whose keys match the
//! field names of the library types.

use std::path::Path;

use blender_lab::ModelSpec;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Subcommand {
    Certificate,
    Covering,
    Cones,
    Kq,
    Orbit,
    Scatter,
    Bifurcate,
    Rates,
}

impl Subcommand {
    pub fn name(self) -> &'static str {
        match self {
            Subcommand::Certificate => "certificate",
            Subcommand::Covering => "covering",
            Subcommand::Cones => "cones",
            Subcommand::Kq => "kq",
            Subcommand::Orbit => "orbit",
            Subcommand::Scatter => "scatter",
            Subcommand::Bifurcate => "bifurcate",
            Subcommand::Rates => "rates",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSpec {
    pub cone_grid: usize,
    pub covering_discs: usize,
    pub covering_steps: usize,
    pub disc_per_axis: usize,
    pub phase_grid: usize,
    pub deviation_grid: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            cone_grid: 16,
            covering_discs: 200,
            covering_steps: 10,
            disc_per_axis: 33,
            phase_grid: 400,
            deviation_grid: 8,
        }
    }
}

#[allow(non_snake_case)]
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TolSpec {
    pub L: f64,
    pub kappa: f64,
    pub newton: f64,
    pub covering_margin: f64,
    pub expansion_min: f64,
    pub contraction_max: f64,
    pub rate_exponent: f64,
    pub monotone_slack: f64,
}

impl Default for TolSpec {
    fn default() -> Self {
        TolSpec {
            L: 0.1,
            kappa: 0.05,
            newton: 1e-9,
            covering_margin: 0.025,
            expansion_min: 2.5,
            contraction_max: 0.45,
            rate_exponent: 0.4,
            monotone_slack: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OrbitSpec {
    pub q: i64,
    /// Explicit periodic words; when empty, `n_words` seeded random words.
    pub words: Vec<Vec<i64>>,
    pub n_words: usize,
    pub max_len: usize,
    pub min_separation: f64,
    /// Optional start point `(r, phi, x.., y..)` for a plain `T0` trajectory.
    pub start: Vec<f64>,
    pub steps: usize,
}

impl Default for OrbitSpec {
    fn default() -> Self {
        OrbitSpec {
            q: 144,
            words: Vec::new(),
            n_words: 50,
            max_len: 4,
            min_separation: 1e-6,
            start: Vec::new(),
            steps: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScatterSpec {
    pub b11: f64,
    pub b12: f64,
    pub b21: f64,
    pub b22: f64,
    pub mu: f64,
    pub nu: f64,
    /// Shear coefficient of the nonlinear scattering model.
    pub quad: f64,
    pub radii: Vec<f64>,
    pub r_target: f64,
    pub residual_exponent: f64,
    pub kam_r_lo: f64,
    pub kam_r_hi: f64,
    pub kam_ratio: f64,
    pub chain_start: f64,
    pub chain_end: f64,
    pub eta: f64,
}

impl Default for ScatterSpec {
    fn default() -> Self {
        ScatterSpec {
            b11: 1.5,
            b12: 0.5,
            b21: 0.4,
            b22: 0.8,
            mu: 0.0,
            nu: 0.0,
            quad: 0.7,
            radii: vec![1e-4, 2e-4, 5e-4, 1e-3, 2e-3, 5e-3],
            r_target: 1e-3,
            residual_exponent: 1.4,
            kam_r_lo: 0.01,
            kam_r_hi: 0.04,
            kam_ratio: 1.1,
            chain_start: 0.01,
            chain_end: 0.04,
            eta: 0.05,
        }
    }
}

#[allow(non_snake_case)]
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BifurcateSpec {
    pub B: Vec<f64>,
    /// Finite return times for the perturbed cubic system (the limit is always solved).
    pub k: Vec<u64>,
    pub b: f64,
    pub a12: f64,
    pub a22: f64,
    pub k_secondary: Vec<u64>,
}

impl Default for BifurcateSpec {
    fn default() -> Self {
        BifurcateSpec {
            B: vec![1.0, -1.0, 8.0],
            k: vec![100, 1000],
            b: 0.5,
            a12: 1.0,
            a22: 0.5,
            k_secondary: vec![100],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    #[serde(default)]
    pub subcommand: Option<Subcommand>,
    pub model: ModelSpec,
    /// Empty means the subcommand's default list.
    #[serde(default)]
    pub q_list: Vec<i64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out: Option<String>,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default)]
    pub tol: TolSpec,
    #[serde(default)]
    pub orbit: OrbitSpec,
    #[serde(default)]
    pub scatter: ScatterSpec,
    #[serde(default)]
    pub bifurcate: BifurcateSpec,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec {
            subcommand: None,
            model: ModelSpec::canonical(),
            q_list: Vec::new(),
            seed: 0,
            out: None,
            grid: GridSpec::default(),
            tol: TolSpec::default(),
            orbit: OrbitSpec::default(),
            scatter: ScatterSpec::default(),
            bifurcate: BifurcateSpec::default(),
        }
    }
}

impl ExperimentSpec {
    /// SHA-256 of the sorted-key JSON form, without the output location.
    pub fn config_hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("spec serializes");
        if let Some(obj) = v.as_object_mut() {
            obj.remove("out");
        }
        hex::encode(Sha256::digest(v.to_string().as_bytes()))
    }
}

/// Parse and validate a config. Missing model fields take the canonical
/// values, except `rho`, which is required.
pub fn parse_config(text: &str) -> Result<ExperimentSpec, CliError> {
    let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| CliError::Input(format!("parse error: {e}")))?;
    let model = table
        .get_mut("model")
        .ok_or_else(|| CliError::Input("missing [model] section".into()))?
        .as_table_mut()
        .ok_or_else(|| CliError::Input("`model` must be a table".into()))?;
    if !model.contains_key("rho") {
        return Err(CliError::Input("model: missing required field `rho`".into()));
    }
    let defaults = toml::Table::try_from(ModelSpec::canonical()).expect("canonical model serializes");
    for (key, value) in defaults {
        model.entry(key).or_insert(value);
    }
    let spec: ExperimentSpec = table
        .try_into()
        .map_err(|e: toml::de::Error| CliError::Input(format!("invalid config: {e}")))?;
    spec.model
        .validate()
        .map_err(|e| CliError::Input(format!("invalid model: {e}")))?;
    Ok(spec)
}

pub fn load_config(path: &Path) -> Result<ExperimentSpec, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
    parse_config(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config() {
        let spec = parse_config("subcommand = \"certificate\"\n[model]\nrho = \"golden\"\n").unwrap();
        assert_eq!(spec.subcommand, Some(Subcommand::Certificate));
        assert_eq!(spec.model, ModelSpec::canonical());
    }

    #[test]
    fn bad_configs() {
        let e = parse_config("[model]\nrho = \"golden\"\nhyp_block = [[1.01, 1.0], [1.0, 2.0]]\n").unwrap_err();
        assert!(e.to_string().contains("hyp_block"), "{e}");
        let e = parse_config("[model]\nalpha = 3.0\n").unwrap_err();
        assert!(e.to_string().contains("rho"), "{e}");
        let e = parse_config("[model]\nrho = \"golden\"\nalpha = 1.0\n").unwrap_err();
        assert!(e.to_string().contains("alpha"), "{e}");
        let e = parse_config("[model\nrho = 1").unwrap_err();
        assert!(e.to_string().contains("line"), "{e}");
    }

    #[test]
    fn hash_is_stable() {
        let a = ExperimentSpec::default();
        let mut b = a.clone();
        b.out = Some("elsewhere".into());
        assert_eq!(a.config_hash(), b.config_hash());
        b.seed = 1;
        assert_ne!(a.config_hash(), b.config_hash());
    }
}
