use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clinnote::attribution::{ReferenceMode, Target};
use clinnote::corpus::ColumnMap;
use clinnote::eval::CiMethod;
use clinnote::model::ModelConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

/// Everything that determines a run. Echoed into every artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    #[serde(flatten)]
    pub model: ModelConfig,
    pub corpus: Option<PathBuf>,
    pub out_dir: PathBuf,
    /// Stop-word list, one word per line; the built-in English list when unset.
    pub stopwords: Option<PathBuf>,
    pub folds: usize,
    pub stratified: bool,
    pub min_stay_hours: f64,
    pub require_nursing: bool,
    pub reference_mode: ReferenceMode,
    pub attribution_target: Target,
    pub ci_method: CiMethod,
    /// Logical column key → CSV header name.
    pub columns: BTreeMap<String, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::default(),
            corpus: None,
            out_dir: PathBuf::from("out"),
            stopwords: None,
            folds: 5,
            stratified: true,
            min_stay_hours: 48.0,
            require_nursing: true,
            reference_mode: ReferenceMode::FrequencyWeightedMean,
            attribution_target: Target::Probability,
            ci_method: CiMethod::StudentT,
            columns: BTreeMap::new(),
        }
    }
}

impl RunConfig {
    /// Reads a TOML file, or JSON when the extension is `.json`.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let parsed = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| e.to_string())
        } else {
            toml::from_str(&text).map_err(|e| e.to_string())
        };
        parsed.map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))
    }

    pub fn column_map(&self) -> Result<ColumnMap, CliError> {
        let mut map = ColumnMap::default();
        for (k, v) in &self.columns {
            map.set(k, v).map_err(|e| CliError::Usage(e.to_string()))?;
        }
        Ok(map)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.model.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        if self.folds < 2 {
            return Err(CliError::Usage(format!("--folds must be at least 2, got {}", self.folds)));
        }
        if !(self.model.window_hours > 0.0) {
            return Err(CliError::Usage("--window-hours must be positive".into()));
        }
        if !(self.min_stay_hours > 0.0) {
            return Err(CliError::Usage("--min-stay-hours must be positive".into()));
        }
        self.column_map()?;
        Ok(())
    }
}

/// Parses `key=value`.
pub fn parse_column(s: &str) -> Result<(String, String), String> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| format!("expected key=column, got `{s}`"))?;
    if k.is_empty() || v.is_empty() {
        return Err(format!("expected key=column, got `{s}`"));
    }
    Ok((k.to_owned(), v.to_owned()))
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// The provenance block embedded in artifacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub command: String,
    pub run_config: RunConfig,
    pub corpus_sha256: Option<String>,
}

impl Provenance {
    pub fn new(command: &str, run_config: &RunConfig, corpus_sha256: Option<String>) -> Self {
        Provenance {
            tool: format!("clinnote {}", env!("CARGO_PKG_VERSION")),
            command: command.into(),
            run_config: run_config.clone(),
            corpus_sha256,
        }
    }

    pub fn json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("provenance serializes")
    }
}
