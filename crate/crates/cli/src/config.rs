//! Run configuration: one TOML document, layered with environment and
//! `--set` overrides.

use std::path::{Path, PathBuf};

use lfvar_core::eval::{ClassifierConfig, DEFAULT_EXTRACTOR_SEED};
use lfvar_core::tokenizer::VqVaeConfig;
use lfvar_core::var::{ConditionMode, VarConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

/// Prefix of environment overrides; `__` separates key segments, e.g.
/// `LFVAR_VAR__DEPTH=4` sets `var.depth`.
pub const ENV_PREFIX: &str = "LFVAR_";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
#[derive(Default)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub toy: ToyConfig,
    pub tokenizer: VqVaeConfig,
    pub var: VarConfig,
    pub measurements: MeasurementConfig,
    pub evaluation: EvaluationConfig,
    pub ablation: AblationFlags,
}


#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Dataset directory, relative to the output directory unless absolute.
    pub dir: PathBuf,
    /// Raw inputs for `prepare-data`.
    pub image_dir: Option<PathBuf>,
    pub mask_dir: Option<PathBuf>,
    pub label_table: Option<PathBuf>,
    pub mask_suffix: String,
    pub class_names: Option<Vec<String>>,
    pub resolution: (usize, usize),
    pub train_fraction: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("data"),
            image_dir: None,
            mask_dir: None,
            label_table: None,
            mask_suffix: "_segmentation".into(),
            class_names: None,
            resolution: (64, 64),
            train_fraction: 0.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyConfig {
    pub num_classes: usize,
    pub samples_per_class: usize,
    pub resolution: (usize, usize),
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            num_classes: 3,
            samples_per_class: 100,
            resolution: (64, 64),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeasurementConfig {
    /// Class-average measurement codebook, relative to the run's checkpoint
    /// directory unless absolute. Empty disables it.
    pub codebook: Option<PathBuf>,
}

impl Default for MeasurementConfig {
    fn default() -> Self {
        Self {
            codebook: Some(PathBuf::from("measurement_codebook.csv")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GenerationMode {
    /// Measurements extracted from real images of the class.
    Intra,
    /// Class-average measurements from the codebook.
    Inter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    pub samples_per_class: usize,
    pub mode: GenerationMode,
    pub extractor_seed: u64,
    pub is_splits: usize,
    pub classifier: ClassifierConfig,
    /// Images per (source, target) pair for the FID confusion matrix; 0
    /// skips the matrix.
    pub matrix_samples: usize,
    pub downstream: bool,
    pub downstream_per_class: usize,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            samples_per_class: 20,
            mode: GenerationMode::Intra,
            extractor_seed: DEFAULT_EXTRACTOR_SEED,
            is_splits: 10,
            classifier: ClassifierConfig::default(),
            matrix_samples: 0,
            downstream: false,
            downstream_per_class: 500,
        }
    }
}

/// Ablation switches: lesion-focus loss, fixed measurement embedding,
/// adaptive (class-average) measurement embedding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationFlags {
    #[serde(rename = "LF", alias = "lf")]
    pub lf: bool,
    #[serde(rename = "FM", alias = "fm")]
    pub fm: bool,
    #[serde(rename = "AM", alias = "am")]
    pub am: bool,
}

impl Default for AblationFlags {
    fn default() -> Self {
        Self {
            lf: true,
            fm: false,
            am: true,
        }
    }
}

impl AblationFlags {
    pub fn condition_mode(&self) -> ConditionMode {
        if self.am {
            ConditionMode::Measured
        } else if self.fm {
            ConditionMode::Fixed
        } else {
            ConditionMode::ClassOnly
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        let f = &self.ablation;
        if f.fm && f.am {
            return Err(CliError::validation("ablation flags FM and AM are mutually exclusive"));
        }
        if f.am && self.codebook_setting().is_none() {
            return Err(CliError::validation("AM requires measurements.codebook to name a codebook path"));
        }
        if !(self.data.train_fraction > 0.0 && self.data.train_fraction < 1.0) {
            return Err(CliError::validation(format!(
                "data.train_fraction must lie in (0, 1), got {}",
                self.data.train_fraction
            )));
        }
        self.effective_tokenizer().validate()?;
        self.check_var_matches_tokenizer(&self.effective_tokenizer())?;
        Ok(())
    }

    /// Generator and tokenizer must agree on the token space.
    pub fn check_var_matches_tokenizer(&self, tok: &VqVaeConfig) -> Result<(), CliError> {
        if self.var.scales != tok.scales {
            return Err(CliError::validation(format!(
                "tokenizer scales {:?} differ from var scales {:?}",
                tok.scales, self.var.scales
            )));
        }
        if self.var.vocab != tok.vocab_size || self.var.code_dim != tok.code_dim {
            return Err(CliError::validation(format!(
                "var vocab/code_dim {}/{} differ from tokenizer {}/{}",
                self.var.vocab, self.var.code_dim, tok.vocab_size, tok.code_dim
            )));
        }
        Ok(())
    }

    fn codebook_setting(&self) -> Option<&Path> {
        self.measurements
            .codebook
            .as_deref()
            .filter(|p| !p.as_os_str().is_empty())
    }

    /// Tokenizer settings with the run seed and LF flag applied.
    pub fn effective_tokenizer(&self) -> VqVaeConfig {
        VqVaeConfig {
            seed: self.seed,
            lesion_focus: self.ablation.lf,
            ..self.tokenizer.clone()
        }
    }

    /// Generator settings with the run seed, conditioning mode and dataset
    /// class count applied.
    pub fn effective_var(&self, num_classes: usize) -> VarConfig {
        let mut v = VarConfig {
            seed: self.seed.wrapping_add(1),
            conditioning: self.ablation.condition_mode(),
            num_classes,
            ..self.var.clone()
        };
        v.sampler.seed = self.seed.wrapping_add(2);
        v
    }

    /// Sections that determine trained artifacts; evaluation settings are
    /// left out so evaluating with different options reuses checkpoints.
    fn identity_json(&self) -> serde_json::Value {
        serde_json::json!({
            "seed": self.seed,
            "data": self.data,
            "toy": self.toy,
            "tokenizer": self.tokenizer,
            "var": self.var,
            "measurements": self.measurements,
            "ablation": self.ablation,
        })
    }

    /// SHA-256 of the canonical (sorted-key) JSON form.
    pub fn config_hash(&self) -> String {
        sha256_hex(canonical_json(&self.identity_json()).as_bytes())
    }

    pub fn run_id(&self) -> String {
        self.config_hash()[..12].to_string()
    }

    pub fn codebook_path(&self, checkpoints: &Path) -> Option<PathBuf> {
        self.codebook_setting().map(|p| checkpoints.join(p))
    }
}

pub fn canonical_json(v: &serde_json::Value) -> String {
    // serde_json's default map is a BTreeMap, so keys serialise sorted.
    serde_json::to_string(v).expect("JSON values always serialise")
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.to_string())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Set `a.b.c = value` inside a TOML table, creating tables on the way.
pub fn apply_override(root: &mut toml::Table, key: &str, raw: &str) -> Result<(), CliError> {
    let parts: Vec<&str> = key.split('.').map(str::trim).collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::validation(format!("malformed override key `{key}`")));
    }
    let mut table = root;
    for p in &parts[..parts.len() - 1] {
        let entry = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| CliError::validation(format!("override `{key}`: `{p}` is not a section")))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), parse_value(raw));
    Ok(())
}

/// Key/value pairs from `LFVAR_*` variables.
pub fn env_overrides(vars: &[(String, String)]) -> Vec<(String, String)> {
    vars.iter()
        .filter_map(|(k, v)| {
            let rest = k.strip_prefix(ENV_PREFIX)?;
            if rest.is_empty() {
                return None;
            }
            Some((rest.to_lowercase().replace("__", "."), v.clone()))
        })
        .collect()
}

/// Defaults ← config file ← environment ← `--set` ← `--seed`.
pub fn load_config(
    path: Option<&Path>,
    env: &[(String, String)],
    sets: &[String],
    seed: Option<u64>,
) -> Result<RunConfig, CliError> {
    let mut table = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::validation(format!("cannot read config {}: {e}", p.display())))?;
            text.parse::<toml::Table>()
                .map_err(|e| CliError::validation(format!("{}: {e}", p.display())))?
        }
        None => toml::Table::new(),
    };
    for (k, v) in env_overrides(env) {
        apply_override(&mut table, &k, &v)?;
    }
    for s in sets {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| CliError::validation(format!("override `{s}` is not key=value")))?;
        apply_override(&mut table, k.trim(), v.trim())?;
    }
    if let Some(seed) = seed {
        table.insert("seed".into(), toml::Value::Integer(seed as i64));
    }
    let mut cfg: RunConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| CliError::validation(format!("config: {}", e.message())))?;
    if cfg.measurements.codebook.as_deref().is_some_and(|p| p.as_os_str().is_empty()) {
        cfg.measurements.codebook = None;
    }
    cfg.validate()?;
    Ok(cfg)
}
