//! TOML run configuration. Every key is optional; explicit flags win.

use std::path::Path;

use armington_core::panel::ColumnSchema;
use armington_core::simulator::DgpConfig;
use armington_core::{Error, Result};
use clap::ValueEnum;
use serde::Deserialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Json,
    Tsv,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub method: Option<String>,
    pub theta: Option<String>,
    pub instruments: Option<String>,
    pub min_obs: Option<usize>,
    pub format: Option<Format>,
    pub strict: Option<bool>,
    pub sur_iterate: Option<bool>,
    pub fm_differences: Option<bool>,
    pub apply_correction: Option<bool>,
    pub seed: Option<u64>,
    pub reps: Option<usize>,
    pub columns: Option<Columns>,
    pub dgp: Option<DgpConfig>,
}

/// Input header names, for files that do not use the default schema.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Columns {
    pub country: Option<String>,
    pub period: Option<String>,
    pub value: Option<String>,
    pub quantity: Option<String>,
    pub fx_rate: Option<String>,
    pub stri: Option<String>,
}

impl Columns {
    pub fn schema(&self) -> ColumnSchema {
        let d = ColumnSchema::default();
        let pick = |v: &Option<String>, default: String| v.clone().unwrap_or(default);
        ColumnSchema {
            country: pick(&self.country, d.country),
            period: pick(&self.period, d.period),
            value: pick(&self.value, d.value),
            quantity: pick(&self.quantity, d.quantity),
            fx_rate: pick(&self.fx_rate, d.fx_rate),
            stri: pick(&self.stri, d.stri),
        }
    }
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        toml::from_str(&text)
            .map_err(|e| Error::InvalidConfig(format!("{}: {}", path.display(), e.message())))
    }

    pub fn schema(&self) -> ColumnSchema {
        self.columns.clone().unwrap_or_default().schema()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_every_section() {
        let cfg: FileConfig = toml::from_str(
            r#"
            method = "sur,ivfe"
            theta = "min-rss"
            format = "tsv"
            seed = 11
            [columns]
            country = "exporter"
            [dgp]
            sigma = 2.5
            n = 8
            "#,
        )
        .unwrap();
        assert_eq!(cfg.format, Some(Format::Tsv));
        assert_eq!(cfg.schema().country, "exporter");
        assert_eq!(cfg.schema().period, "period");
        let dgp = cfg.dgp.unwrap();
        assert_eq!((dgp.sigma, dgp.n, dgp.t), (2.5, 8, DgpConfig::default().t));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<FileConfig>("methd = \"sur\"").is_err());
        assert!(toml::from_str::<FileConfig>("[dgp]\nsigmaa = 2.0").is_err());
    }
}
