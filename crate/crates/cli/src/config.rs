//! Run configuration (TOML) and the backend file it points to.
//!
//! Relative paths resolve against the directory holding the config file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use sdoh_core::corpus::{SdohCode, DEFAULT_RATIO_TOLERANCE, DEFAULT_TARGET_POSITIVE_FRACTION};
use sdoh_core::gateway::BackendsFile;
use sdoh_core::synth;
use sdoh_core::{CodeRegistry, Gateway, IndeterminatePolicy, ModelId, PromptKit};

use crate::error::CliError;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    /// Notes, one `{note_id, text}` record per line.
    pub corpus: Option<PathBuf>,
    /// Annotations, one `{note_id, code_id, evidence_text}` record per line.
    pub annotations: Option<PathBuf>,
    pub templates: Option<PathBuf>,
    pub backends: Option<PathBuf>,
    #[serde(default = "defaults::datasets")]
    pub datasets: PathBuf,
    #[serde(default = "defaults::synthetic")]
    pub synthetic: PathBuf,
    #[serde(default = "defaults::matrix")]
    pub matrix: PathBuf,
    #[serde(default = "defaults::routing_table")]
    pub routing_table: PathBuf,
    #[serde(default = "defaults::reports")]
    pub reports: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            corpus: None,
            annotations: None,
            templates: None,
            backends: None,
            datasets: defaults::datasets(),
            synthetic: defaults::synthetic(),
            matrix: defaults::matrix(),
            routing_table: defaults::routing_table(),
            reports: defaults::reports(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Params {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "defaults::max_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "defaults::target_positive_fraction")]
    pub target_positive_fraction: f64,
    #[serde(default = "defaults::ratio_tolerance")]
    pub ratio_tolerance: f64,
    /// Size of the negative pool sampled per code at ingest.
    #[serde(default = "defaults::negatives_per_code")]
    pub negatives_per_code: usize,
    #[serde(default)]
    pub restrict_social_history: bool,
    #[serde(default)]
    pub indeterminate: IndeterminatePolicy,
    #[serde(default = "defaults::exemplars")]
    pub exemplars: usize,
    #[serde(default = "defaults::per_variant")]
    pub per_variant: usize,
    #[serde(default = "defaults::round_cap")]
    pub round_cap: usize,
    #[serde(default = "defaults::generation_temperature")]
    pub generation_temperature: f64,
    pub generator: Option<ModelId>,
    /// Defaults to the generator.
    pub verifier: Option<ModelId>,
    /// Models to evaluate; defaults to every configured backend.
    #[serde(default)]
    pub models: Vec<ModelId>,
    pub baseline: Option<ModelId>,
    /// Fixed provenance timestamp for routing tables; defaults to the current time.
    pub trained_at: Option<String>,
}

impl Default for Params {
    fn default() -> Self {
        toml::from_str("").expect("all params have defaults")
    }
}

mod defaults {
    use super::*;

    pub fn datasets() -> PathBuf {
        "datasets".into()
    }
    pub fn synthetic() -> PathBuf {
        "synthetic".into()
    }
    pub fn matrix() -> PathBuf {
        "eval/matrix.jsonl".into()
    }
    pub fn routing_table() -> PathBuf {
        "routing_table.jsonl".into()
    }
    pub fn reports() -> PathBuf {
        "reports".into()
    }
    pub fn max_in_flight() -> usize {
        4
    }
    pub fn target_positive_fraction() -> f64 {
        DEFAULT_TARGET_POSITIVE_FRACTION
    }
    pub fn ratio_tolerance() -> f64 {
        DEFAULT_RATIO_TOLERANCE
    }
    pub fn negatives_per_code() -> usize {
        1000
    }
    pub fn exemplars() -> usize {
        synth::DEFAULT_EXEMPLARS
    }
    pub fn per_variant() -> usize {
        synth::DEFAULT_PER_VARIANT
    }
    pub fn round_cap() -> usize {
        synth::DEFAULT_ROUND_CAP
    }
    pub fn generation_temperature() -> f64 {
        synth::DEFAULT_GENERATION_TEMPERATURE
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub paths: Paths,
    /// Code registry; the seven standard codes when empty.
    #[serde(default)]
    pub codes: Vec<SdohCode>,
    #[serde(default)]
    pub params: Params,
}

/// A parsed config together with where it was loaded from.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub config: RunConfig,
    pub base: PathBuf,
    pub registry: CodeRegistry,
}

impl Loaded {
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("config {}: {e}", path.display())))?;
        let config: RunConfig = toml::from_str(&text)
            .map_err(|e| CliError::usage(format!("config {}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Loaded::new(config, base)
    }

    pub fn new(config: RunConfig, base: PathBuf) -> Result<Self, CliError> {
        let registry = if config.codes.is_empty() {
            CodeRegistry::standard()
        } else {
            CodeRegistry::new(config.codes.clone()).map_err(|e| CliError::usage(format!("codes: {e}")))?
        };
        if config.params.max_in_flight == 0 {
            return Err(CliError::usage("max_in_flight must be at least 1"));
        }
        Ok(Loaded { config, base, registry })
    }

    pub fn params(&self) -> &Params {
        &self.config.params
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    /// A configured input path that must exist.
    pub fn input(&self, name: &str, p: Option<&PathBuf>) -> Result<PathBuf, CliError> {
        let p = p.ok_or_else(|| CliError::usage(format!("config has no paths.{name}")))?;
        let full = self.resolve(p);
        if !full.exists() {
            return Err(CliError::usage(format!("paths.{name}: {} does not exist", full.display())));
        }
        Ok(full)
    }

    pub fn datasets_dir(&self) -> PathBuf {
        self.resolve(&self.config.paths.datasets)
    }

    pub fn gold_file(&self, code_id: &str) -> PathBuf {
        self.datasets_dir().join("gold").join(format!("{code_id}.jsonl"))
    }

    pub fn negatives_file(&self, code_id: &str) -> PathBuf {
        self.datasets_dir().join("negatives").join(format!("{code_id}.jsonl"))
    }

    pub fn dataset_file(&self, code_id: &str) -> PathBuf {
        self.datasets_dir().join(format!("{code_id}.jsonl"))
    }

    pub fn synthetic_file(&self, code_id: &str) -> PathBuf {
        self.resolve(&self.config.paths.synthetic).join(format!("{code_id}.jsonl"))
    }

    pub fn synthetic_stats_file(&self, code_id: &str) -> PathBuf {
        self.resolve(&self.config.paths.synthetic).join(format!("{code_id}.stats.json"))
    }

    /// Look a code up by id or keyword phrase.
    pub fn code(&self, input: &str) -> Result<&SdohCode, CliError> {
        self.registry
            .resolve(input)
            .ok_or_else(|| CliError::usage(format!("unknown code {input:?}")))
    }

    /// The listed codes, or every registered code when the list is empty.
    pub fn codes(&self, inputs: &[String]) -> Result<Vec<SdohCode>, CliError> {
        if inputs.is_empty() {
            return Ok(self.registry.codes().to_vec());
        }
        inputs.iter().map(|c| self.code(c).cloned()).collect()
    }

    pub fn gateway(&self) -> Result<Gateway, CliError> {
        let path = self.input("backends", self.config.paths.backends.as_ref())?;
        let text = fs::read_to_string(&path).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
        let file: BackendsFile =
            toml::from_str(&text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
        let configs = file
            .backends
            .into_iter()
            .map(|b| b.into_config())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
        let mut gateway = Gateway::from_configs(configs)?;
        if let Some(t) = &self.config.paths.templates {
            let path = self.input("templates", Some(t))?;
            let source = fs::read_to_string(&path).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
            gateway = gateway.with_prompts(PromptKit::from_template_file(&source)?);
        }
        Ok(gateway)
    }
}
