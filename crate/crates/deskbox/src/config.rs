use std::fs;
use std::path::{Path, PathBuf};

use deskbox_core::dataset::{DatasetSchema, EvalMode, PromptTemplate, Tokenizer};
use deskbox_core::model::ModelConfig;
use deskbox_core::scoring::GenerationConfig;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};

/// Environment variable naming the default config file.
pub const CONFIG_ENV: &str = "DESKBOX_CONFIG";

/// Built-in model names accepted by `-m`.
pub const MODEL_NAMES: [&str; 2] = ["toy", "toy-tiny"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub name: String,
    pub config: ModelConfig,
}

impl ModelSpec {
    pub fn named(name: &str) -> Result<Self> {
        let config = match name {
            "toy" => ModelConfig {
                vocab_size: 256,
                num_layers: 2,
                hidden_size: 32,
                num_heads: 4,
                max_seq_len: 2048,
                seed: 42,
            },
            "toy-tiny" => ModelConfig {
                vocab_size: 256,
                num_layers: 1,
                hidden_size: 16,
                num_heads: 2,
                max_seq_len: 1024,
                seed: 42,
            },
            _ => {
                return Err(Error::Usage(format!(
                    "unknown model {name:?}; known models: {}",
                    MODEL_NAMES.join(", ")
                )))
            }
        };
        Ok(Self {
            name: name.into(),
            config,
        })
    }
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self::named("toy").expect("built-in model")
    }
}

/// How a generated sample becomes an answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Extractor {
    #[default]
    LastNumber,
    /// The whole sample up to its first newline, trimmed.
    FirstLine,
}

impl Extractor {
    pub fn extract(self, text: &str) -> Option<String> {
        match self {
            Extractor::LastNumber => deskbox_core::scoring::last_number(text),
            Extractor::FirstLine => {
                let line = text.lines().next().unwrap_or("").trim();
                (!line.is_empty()).then(|| line.to_string())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CacheConfig {
    pub enabled: bool,
    /// Token budget of the prefix cache; unlimited when absent.
    pub max_cached_tokens: Option<usize>,
}

impl Default for CacheConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            max_cached_tokens: None,
        }
    }
}

fn default_mode() -> EvalMode {
    EvalMode::PplOptions
}

/// Everything that determines an evaluation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub model: ModelSpec,
    pub dataset: PathBuf,
    #[serde(default)]
    pub schema: DatasetSchema,
    #[serde(default = "default_mode")]
    pub mode: EvalMode,
    #[serde(default)]
    pub shots: usize,
    #[serde(default)]
    pub template: PromptTemplate,
    /// `seed` inside is ignored; sampling uses the run seed.
    #[serde(default)]
    pub generation: GenerationConfig,
    #[serde(default)]
    pub extractor: Extractor,
    #[serde(default)]
    pub cache: CacheConfig,
    #[serde(default)]
    pub seed: u64,
    /// Report path; stdout when absent. Not echoed in the report.
    #[serde(default, skip_serializing)]
    pub output: Option<PathBuf>,
    /// Worker threads; does not affect results and is not echoed.
    #[serde(default, skip_serializing)]
    pub workers: Option<usize>,
}

impl RunConfig {
    pub fn new(dataset: impl Into<PathBuf>, mode: EvalMode) -> Self {
        Self {
            model: ModelSpec::default(),
            dataset: dataset.into(),
            schema: DatasetSchema::default(),
            mode,
            shots: 0,
            template: PromptTemplate::default(),
            generation: GenerationConfig::default(),
            extractor: Extractor::default(),
            cache: CacheConfig::default(),
            seed: 0,
            output: None,
            workers: None,
        }
    }

    /// Checks everything that can be checked without reading the dataset.
    pub fn validate(&mut self, tokenizer: &dyn Tokenizer) -> Result<()> {
        self.generation.seed = self.seed;
        self.model.config.validate()?;
        if self.model.config.vocab_size < tokenizer.vocab_size() {
            return Err(Error::Invalid(deskbox_core::Error::Config(format!(
                "model vocab_size {} is smaller than the tokenizer's {}",
                self.model.config.vocab_size,
                tokenizer.vocab_size()
            ))));
        }
        self.generation.validate()?;
        if self.workers == Some(0) {
            return Err(Error::Usage("workers must be at least 1".into()));
        }
        Ok(())
    }
}

/// Reads one top-level table (`eval`, `pack`) from a TOML or JSON config
/// file. A missing table gives an empty object.
pub fn load_section(path: &Path, section: &str) -> Result<Map<String, Value>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let is_json = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("json"));
    let root: Value = if is_json {
        serde_json::from_str(&text).map_err(|e| Error::Usage(format!("{}: {e}", path.display())))?
    } else {
        let t: toml::Value =
            toml::from_str(&text).map_err(|e| Error::Usage(format!("{}: {e}", path.display())))?;
        serde_json::to_value(t).map_err(|e| Error::Usage(format!("{}: {e}", path.display())))?
    };
    match root.get(section) {
        None => Ok(Map::new()),
        Some(Value::Object(m)) => Ok(m.clone()),
        Some(_) => Err(Error::Usage(format!(
            "{}: [{section}] must be a table",
            path.display()
        ))),
    }
}

/// Sets `value` at a dotted key path, creating intermediate tables.
pub fn set_path(root: &mut Map<String, Value>, key: &str, value: Value) {
    let mut parts = key.split('.').peekable();
    let mut cur = root;
    while let Some(part) = parts.next() {
        if parts.peek().is_none() {
            cur.insert(part.to_string(), value);
            return;
        }
        let slot = cur
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Map::new()));
        if !slot.is_object() {
            *slot = Value::Object(Map::new());
        }
        cur = slot.as_object_mut().expect("just made an object");
    }
}

/// Deserializes a merged config table.
pub fn from_table<T: serde::de::DeserializeOwned>(
    table: Map<String, Value>,
    what: &str,
) -> Result<T> {
    serde_json::from_value(Value::Object(table))
        .map_err(|e| Error::Usage(format!("invalid {what} config: {e}")))
}
