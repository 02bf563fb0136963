//! Run configuration: one declarative TOML file per run.
//!
//! Relative paths resolve against the config file's directory. Secrets never
//! live in the file; HTTP backends name an environment variable instead.
//! Validation reports stable error codes so scripts can match on them.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::gateway::{BackendConfig, BackendKind};
use crate::metrics::{
    ConstantNli, ExactMatchScorer, HttpEmbeddingScorer, HttpNliScorer, NliScorer, TableNli,
    TokenSimilarityScorer,
};
use crate::prompt::{FewShotExample, TemplateSet};
use crate::report::RunMode;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("failed to read config file {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("failed to parse config file {path}: {source}")]
    Parse {
        path: String,
        source: toml::de::Error,
    },
    #[error("invalid config: {0}")]
    Invalid(String),
}

fn default_k() -> usize {
    3
}
fn default_threshold() -> f64 {
    0.9
}
fn default_letter_limit() -> usize {
    300
}
fn default_identity() -> String {
    "psychiatrist".to_string()
}
fn default_max_in_flight() -> usize {
    4
}
fn default_failure_threshold() -> f64 {
    0.25
}
fn default_http_path() -> String {
    "/v1/chat/completions".to_string()
}
fn default_max_tokens() -> u32 {
    1024
}
fn default_timeout_secs() -> u64 {
    60
}
fn default_max_retries() -> u32 {
    3
}
fn default_backoff_ms() -> u64 {
    250
}

#[derive(Debug, Clone, Deserialize)]
pub struct PathsSection {
    pub corpus: PathBuf,
    pub lexicon: PathBuf,
    #[serde(default)]
    pub few_shot: Option<PathBuf>,
    #[serde(default)]
    pub templates: Option<PathBuf>,
    pub output: PathBuf,
    #[serde(default)]
    pub gold: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct RolesSection {
    pub extraction: String,
    pub summarizers: Vec<String>,
    pub evaluator: String,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendSection {
    Http {
        base_url: String,
        model: String,
        #[serde(default = "default_http_path")]
        path: String,
        #[serde(default)]
        api_key_env: Option<String>,
        #[serde(default)]
        temperature: f64,
        #[serde(default = "default_max_tokens")]
        max_tokens: u32,
        #[serde(default = "default_timeout_secs")]
        timeout_secs: u64,
        #[serde(default = "default_max_retries")]
        max_retries: u32,
        #[serde(default = "default_backoff_ms")]
        retry_backoff_ms: u64,
        #[serde(default)]
        split_system_line: bool,
    },
    Mock {
        script: PathBuf,
        #[serde(default = "default_max_retries")]
        max_retries: u32,
    },
}

impl BackendSection {
    pub fn is_mock(&self) -> bool {
        matches!(self, BackendSection::Mock { .. })
    }

    /// Short descriptor used in the run manifest.
    pub fn descriptor(&self) -> String {
        match self {
            BackendSection::Http { model, .. } => format!("http:{model}"),
            BackendSection::Mock { script, .. } => format!("mock:{}", script.display()),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EmbeddingScorerSection {
    ExactStub,
    Http {
        base_url: String,
        model: String,
        #[serde(default)]
        api_key_env: Option<String>,
    },
}

impl Default for EmbeddingScorerSection {
    fn default() -> Self {
        Self::ExactStub
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NliScorerSection {
    ConstantStub {
        #[serde(default)]
        contradiction: f64,
    },
    TableStub {
        path: PathBuf,
        #[serde(default)]
        default: f64,
    },
    Http {
        base_url: String,
        model: String,
        #[serde(default)]
        api_key_env: Option<String>,
    },
}

impl Default for NliScorerSection {
    fn default() -> Self {
        Self::ConstantStub { contradiction: 0.0 }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
pub struct ScorersSection {
    #[serde(default)]
    pub embedding: EmbeddingScorerSection,
    #[serde(default)]
    pub nli: NliScorerSection,
}

/// The declarative run configuration.
#[derive(Debug, Clone, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(default = "default_k")]
    pub k_candidates: usize,
    #[serde(default = "default_threshold")]
    pub fuzzy_threshold: f64,
    #[serde(default = "default_letter_limit")]
    pub letter_limit: usize,
    #[serde(default = "default_identity")]
    pub expert_identity: String,
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
    /// Fraction of per-item failures tolerated before the run exits with
    /// the partial-failure code.
    #[serde(default = "default_failure_threshold")]
    pub failure_threshold: f64,
    /// Include ungrounded phrases in the submission view.
    #[serde(default)]
    pub submission_include_ungrounded: bool,
    pub paths: PathsSection,
    pub roles: RolesSection,
    pub backends: BTreeMap<String, BackendSection>,
    #[serde(default)]
    pub scorers: ScorersSection,
    /// Filled during load; not part of the file.
    #[serde(skip)]
    pub config_sha256: String,
}

/// One failed validation check, with a stable code.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CheckFailure {
    pub code: &'static str,
    pub message: String,
}

impl CheckFailure {
    fn new(code: &'static str, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

impl RunConfig {
    /// Loads and parses a config file, resolving relative paths against the
    /// file's directory and recording the file hash for the manifest.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let raw = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut config: RunConfig =
            toml::from_str(&raw).map_err(|source| ConfigError::Parse {
                path: path.display().to_string(),
                source,
            })?;
        let mut hasher = Sha256::new();
        hasher.update(raw.as_bytes());
        config.config_sha256 = hasher
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect();

        let base = path.parent().unwrap_or_else(|| Path::new("."));
        config.resolve_paths(base);
        Ok(config)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&p);
            }
        };
        resolve(&mut self.paths.corpus);
        resolve(&mut self.paths.lexicon);
        resolve(&mut self.paths.output);
        if let Some(p) = self.paths.few_shot.as_mut() {
            resolve(p);
        }
        if let Some(p) = self.paths.templates.as_mut() {
            resolve(p);
        }
        if let Some(p) = self.paths.gold.as_mut() {
            resolve(p);
        }
        for backend in self.backends.values_mut() {
            if let BackendSection::Mock { script, .. } = backend {
                resolve(script);
            }
        }
        if let NliScorerSection::TableStub { path, .. } = &mut self.scorers.nli {
            resolve(path);
        }
    }

    /// Static validation: file existence, numeric invariants, role wiring
    /// and template/context slot compatibility. No network access.
    pub fn check_static(&self, offline: bool) -> Vec<CheckFailure> {
        let mut failures = Vec::new();

        for (field, path) in [
            ("paths.corpus", Some(&self.paths.corpus)),
            ("paths.lexicon", Some(&self.paths.lexicon)),
            ("paths.few_shot", self.paths.few_shot.as_ref()),
            ("paths.templates", self.paths.templates.as_ref()),
            ("paths.gold", self.paths.gold.as_ref()),
        ] {
            if let Some(path) = path {
                if !path.exists() {
                    failures.push(CheckFailure::new(
                        "CFG_FILE_MISSING",
                        format!("{field}: `{}` does not exist", path.display()),
                    ));
                }
            }
        }

        if self.k_candidates < 1 {
            failures.push(CheckFailure::new(
                "CFG_K_INVALID",
                format!("k_candidates must be >= 1, got {}", self.k_candidates),
            ));
        }
        if !(self.fuzzy_threshold > 0.0 && self.fuzzy_threshold <= 1.0) {
            failures.push(CheckFailure::new(
                "CFG_THRESHOLD_INVALID",
                format!("fuzzy_threshold must be in (0,1], got {}", self.fuzzy_threshold),
            ));
        }
        if self.letter_limit == 0 {
            failures.push(CheckFailure::new(
                "CFG_LETTER_LIMIT_INVALID",
                "letter_limit must be positive",
            ));
        }
        if self.expert_identity.trim().is_empty() {
            failures.push(CheckFailure::new(
                "CFG_IDENTITY_EMPTY",
                "expert_identity must be non-empty",
            ));
        }
        if self.max_in_flight == 0 {
            failures.push(CheckFailure::new(
                "CFG_MAX_IN_FLIGHT",
                "max_in_flight must be >= 1",
            ));
        }

        let mut role_backends = vec![("roles.extraction", &self.roles.extraction)];
        for name in &self.roles.summarizers {
            role_backends.push(("roles.summarizers", name));
        }
        role_backends.push(("roles.evaluator", &self.roles.evaluator));
        for (field, name) in role_backends {
            match self.backends.get(name) {
                None => failures.push(CheckFailure::new(
                    "CFG_ROLE_UNKNOWN_BACKEND",
                    format!("{field}: backend `{name}` is not defined"),
                )),
                Some(section) => {
                    if offline && !section.is_mock() {
                        failures.push(CheckFailure::new(
                            "CFG_OFFLINE_HTTP",
                            format!("offline run but backend `{name}` is not a mock"),
                        ));
                    }
                    if let BackendSection::Mock { script, .. } = section {
                        if !script.exists() {
                            failures.push(CheckFailure::new(
                                "CFG_FILE_MISSING",
                                format!(
                                    "backends.{name}.script: `{}` does not exist",
                                    script.display()
                                ),
                            ));
                        }
                    }
                }
            }
        }
        if self.roles.summarizers.is_empty() {
            failures.push(CheckFailure::new(
                "CFG_ROLE_UNKNOWN_BACKEND",
                "roles.summarizers must list at least one backend",
            ));
        }

        for backend in self.backends.values() {
            if let BackendSection::Http { temperature, max_tokens, .. } = backend {
                if *temperature < 0.0 {
                    failures.push(CheckFailure::new(
                        "CFG_TEMPERATURE_INVALID",
                        format!("temperature must be >= 0, got {temperature}"),
                    ));
                }
                if *max_tokens == 0 {
                    failures.push(CheckFailure::new(
                        "CFG_MAX_TOKENS_INVALID",
                        "max_tokens must be positive",
                    ));
                }
            }
        }

        match self.load_templates() {
            Err(e) => failures.push(CheckFailure::new("CFG_TEMPLATES_INVALID", e.to_string())),
            Ok(templates) => {
                if let Err(e) = templates.check_slots() {
                    failures.push(CheckFailure::new("CFG_TEMPLATE_SLOTS", e.to_string()));
                }
            }
        }

        failures
    }

    /// Templates from the configured directory, or the embedded v1 set.
    pub fn load_templates(&self) -> Result<TemplateSet, crate::prompt::PromptError> {
        match &self.paths.templates {
            Some(dir) => TemplateSet::from_dir(dir),
            None => Ok(TemplateSet::builtin()),
        }
    }

    /// Few-shot examples from the configured file; empty means zero-shot.
    pub fn load_few_shot(&self) -> Result<Vec<FewShotExample>, ConfigError> {
        let Some(path) = &self.paths.few_shot else {
            return Ok(Vec::new());
        };
        let content = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut examples = Vec::new();
        for (idx, line) in content.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let example: FewShotExample = serde_json::from_str(line).map_err(|e| {
                ConfigError::Invalid(format!("few-shot line {}: {e}", idx + 1))
            })?;
            examples.push(example);
        }
        Ok(examples)
    }

    pub fn run_mode(&self) -> RunMode {
        if self.paths.few_shot.is_some() {
            RunMode::FewShot
        } else {
            RunMode::ZeroShot
        }
    }

    /// Gateway configs for every backend referenced by a role.
    pub fn backend_configs(&self) -> Vec<BackendConfig> {
        let mut wanted: Vec<&str> = vec![self.roles.extraction.as_str()];
        wanted.extend(self.roles.summarizers.iter().map(String::as_str));
        wanted.push(self.roles.evaluator.as_str());
        wanted.sort_unstable();
        wanted.dedup();

        wanted
            .into_iter()
            .filter_map(|name| {
                let section = self.backends.get(name)?;
                Some(match section {
                    BackendSection::Http {
                        base_url,
                        model,
                        path,
                        api_key_env,
                        temperature,
                        max_tokens,
                        timeout_secs,
                        max_retries,
                        retry_backoff_ms,
                        split_system_line,
                    } => BackendConfig {
                        name: name.to_string(),
                        kind: BackendKind::Http {
                            base_url: base_url.clone(),
                            path: path.clone(),
                            model: model.clone(),
                            api_key_env: api_key_env.clone(),
                            split_system_line: *split_system_line,
                        },
                        temperature: *temperature,
                        max_tokens: *max_tokens,
                        timeout: Duration::from_secs(*timeout_secs),
                        max_retries: *max_retries,
                        retry_backoff: Duration::from_millis(*retry_backoff_ms),
                    },
                    BackendSection::Mock { script, max_retries } => {
                        let mut config = BackendConfig::mock(name, script.clone());
                        config.max_retries = *max_retries;
                        config
                    }
                })
            })
            .collect()
    }

    /// Builds the configured similarity scorer.
    pub fn build_embedding_scorer(&self) -> Arc<dyn TokenSimilarityScorer> {
        match &self.scorers.embedding {
            EmbeddingScorerSection::ExactStub => Arc::new(ExactMatchScorer),
            EmbeddingScorerSection::Http {
                base_url,
                model,
                api_key_env,
            } => Arc::new(HttpEmbeddingScorer::new(base_url, model, api_key_env.clone())),
        }
    }

    /// Builds the configured NLI scorer. The table stub reads a JSON-lines
    /// file of `{"premise":..,"hypothesis":..,"contradiction":..}` records.
    pub fn build_nli_scorer(&self) -> Result<Arc<dyn NliScorer>, ConfigError> {
        Ok(match &self.scorers.nli {
            NliScorerSection::ConstantStub { contradiction } => {
                Arc::new(ConstantNli(*contradiction))
            }
            NliScorerSection::TableStub { path, default } => {
                #[derive(Deserialize)]
                struct Row {
                    premise: String,
                    hypothesis: String,
                    contradiction: f64,
                }
                let content = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
                    path: path.display().to_string(),
                    source,
                })?;
                let mut entries = Vec::new();
                for (idx, line) in content.lines().enumerate() {
                    if line.trim().is_empty() {
                        continue;
                    }
                    let row: Row = serde_json::from_str(line).map_err(|e| {
                        ConfigError::Invalid(format!("NLI table line {}: {e}", idx + 1))
                    })?;
                    entries.push(((row.premise, row.hypothesis), row.contradiction));
                }
                Arc::new(TableNli::new(entries, *default))
            }
            NliScorerSection::Http {
                base_url,
                model,
                api_key_env,
            } => Arc::new(HttpNliScorer::new(base_url, model, api_key_env.clone())),
        })
    }
}

/// Reproducibility record written into every run's output directory.
///
/// Deliberately excludes wall-clock time and absolute paths: two runs with
/// the same config, seed and mock scripts must produce byte-identical files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub tool_version: String,
    pub command: String,
    pub config_sha256: String,
    pub seed: u64,
    pub template_version: String,
    pub mode: String,
    pub expert_identity: String,
    pub k_candidates: usize,
    pub fuzzy_threshold: f64,
    pub letter_limit: usize,
    pub extraction_backend: String,
    pub summarizer_backends: Vec<String>,
    pub evaluator_backend: String,
    pub backends: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn new(config: &RunConfig, command: &str, template_version: &str) -> Self {
        Self {
            tool: "evidex".to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            config_sha256: config.config_sha256.clone(),
            seed: config.seed,
            template_version: template_version.to_string(),
            mode: config.run_mode().label().to_string(),
            expert_identity: config.expert_identity.clone(),
            k_candidates: config.k_candidates,
            fuzzy_threshold: config.fuzzy_threshold,
            letter_limit: config.letter_limit,
            extraction_backend: config.roles.extraction.clone(),
            summarizer_backends: config.roles.summarizers.clone(),
            evaluator_backend: config.roles.evaluator.clone(),
            backends: config
                .backends
                .iter()
                .map(|(name, section)| (name.clone(), section.descriptor()))
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_file(dir: &Path, name: &str, content: &str) -> PathBuf {
        let path = dir.join(name);
        let mut file = std::fs::File::create(&path).unwrap();
        file.write_all(content.as_bytes()).unwrap();
        path
    }

    fn minimal_config(dir: &Path) -> String {
        write_file(
            dir,
            "corpus.jsonl",
            r#"{"post_id":"p1","user_id":"u1","timestamp":1,"text":"hello","label":"low"}"#,
        );
        write_file(dir, "lexicon.csv", "die,severe\n");
        write_file(dir, "mock.jsonl", r#"{"match":"any","response":"1. hello"}"#);
        r#"
seed = 1

[paths]
corpus = "corpus.jsonl"
lexicon = "lexicon.csv"
output = "out"

[roles]
extraction = "extractor"
summarizers = ["solar"]
evaluator = "judge"

[backends.extractor]
kind = "mock"
script = "mock.jsonl"

[backends.solar]
kind = "mock"
script = "mock.jsonl"

[backends.judge]
kind = "mock"
script = "mock.jsonl"
"#
        .to_string()
    }

    #[test]
    fn loads_and_validates_minimal_config() {
        let dir = tempfile::tempdir().unwrap();
        let content = minimal_config(dir.path());
        let path = write_file(dir.path(), "run.toml", &content);
        let config = RunConfig::load(&path).unwrap();
        assert_eq!(config.k_candidates, 3);
        assert_eq!(config.fuzzy_threshold, 0.9);
        assert_eq!(config.expert_identity, "psychiatrist");
        assert!(config.paths.corpus.is_absolute() || config.paths.corpus.exists());
        assert!(config.check_static(true).is_empty());
        assert_eq!(config.config_sha256.len(), 64);
    }

    #[test]
    fn missing_lexicon_reported_with_field_name() {
        let dir = tempfile::tempdir().unwrap();
        let content = minimal_config(dir.path()).replace("lexicon.csv", "nope.csv");
        let path = write_file(dir.path(), "run.toml", &content);
        let config = RunConfig::load(&path).unwrap();
        let failures = config.check_static(false);
        assert!(failures
            .iter()
            .any(|f| f.code == "CFG_FILE_MISSING" && f.message.contains("paths.lexicon")));
    }

    #[test]
    fn zero_k_is_invariant_violation() {
        let dir = tempfile::tempdir().unwrap();
        let content = format!("k_candidates = 0\n{}", minimal_config(dir.path()));
        let path = write_file(dir.path(), "run.toml", &content);
        let config = RunConfig::load(&path).unwrap();
        let failures = config.check_static(false);
        assert!(failures.iter().any(|f| f.code == "CFG_K_INVALID"));
    }

    #[test]
    fn unknown_role_backend_detected() {
        let dir = tempfile::tempdir().unwrap();
        let content = minimal_config(dir.path()).replace("evaluator = \"judge\"", "evaluator = \"ghost\"");
        let path = write_file(dir.path(), "run.toml", &content);
        let config = RunConfig::load(&path).unwrap();
        let failures = config.check_static(false);
        assert!(failures.iter().any(|f| f.code == "CFG_ROLE_UNKNOWN_BACKEND"));
    }

    #[test]
    fn offline_flags_http_backends() {
        let dir = tempfile::tempdir().unwrap();
        let content = minimal_config(dir.path()).replace(
            "[backends.judge]\nkind = \"mock\"\nscript = \"mock.jsonl\"",
            "[backends.judge]\nkind = \"http\"\nbase_url = \"http://example.test\"\nmodel = \"m\"",
        );
        let path = write_file(dir.path(), "run.toml", &content);
        let config = RunConfig::load(&path).unwrap();
        assert!(config
            .check_static(true)
            .iter()
            .any(|f| f.code == "CFG_OFFLINE_HTTP"));
        assert!(!config
            .check_static(false)
            .iter()
            .any(|f| f.code == "CFG_OFFLINE_HTTP"));
    }

    #[test]
    fn manifest_is_deterministic_for_same_config() {
        let dir = tempfile::tempdir().unwrap();
        let content = minimal_config(dir.path());
        let path = write_file(dir.path(), "run.toml", &content);
        let a = RunConfig::load(&path).unwrap();
        let b = RunConfig::load(&path).unwrap();
        let manifest_a = RunManifest::new(&a, "highlight", "v1");
        let manifest_b = RunManifest::new(&b, "highlight", "v1");
        assert_eq!(
            serde_json::to_string(&manifest_a).unwrap(),
            serde_json::to_string(&manifest_b).unwrap()
        );
        assert_eq!(manifest_a.mode, "zero-shot");
    }
}
