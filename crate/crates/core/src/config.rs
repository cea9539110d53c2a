//! TOML pipeline configuration, `key=value` overrides, and construction of
//! the runnable pipeline for one (prompt, aggregation, exclusion) setting.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::corpus::{
    corpus_paths, generate_cohort, ingest_corpus, CohortSpec, CorpusError, Ingested, Split,
};
use crate::decisions::ExclusionMode;
use crate::llm_client::{BackendConfig, BackendError, LlmClient};
use crate::mapreduce::{AggregationMethod, Pipeline, ReduceBudget};
use crate::prompting::{
    AnyPositiveTemplate, Design, PromptTemplate, SteeringPolarity, DISREGARD_IMAGING,
};
use crate::retrieval::{
    echo_ct_exclusion_patterns, ChunkerConfig, PatternSet, RetrievalError, Tokenizer,
};
use crate::structured_phenotype::RuleSet;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config: {0}")]
    Invalid(String),
    #[error("config field `{field}`: {message}")]
    Field { field: String, message: String },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// Record files on disk. `dir` is shorthand for the three default names
/// inside one directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusFiles {
    pub notes: PathBuf,
    pub events: PathBuf,
    pub labels: PathBuf,
}

/// Exactly one of `dir`, `files` or `synthetic`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSource {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub files: Option<CorpusFiles>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<CohortSpec>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TemplateFiles {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub snippet: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub any_positive: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReduceConfig {
    /// Aggregation context budget; larger contexts are reduced as a tree.
    pub max_context_tokens: Option<usize>,
    pub tokenizer: Tokenizer,
}

impl Default for ReduceConfig {
    fn default() -> Self {
        Self {
            max_context_tokens: Some(16_000),
            tokenizer: Tokenizer::Whitespace,
        }
    }
}

impl From<ReduceConfig> for ReduceBudget {
    fn from(c: ReduceConfig) -> Self {
        ReduceBudget {
            max_context_tokens: c.max_context_tokens,
            tokenizer: c.tokenizer,
        }
    }
}

/// Settings swept by `grid`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub prompts: Vec<Design>,
    pub aggregations: Vec<AggregationMethod>,
    pub exclusions: Vec<ExclusionMode>,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            prompts: Design::ALL.to_vec(),
            aggregations: AggregationMethod::ALL.to_vec(),
            exclusions: ExclusionMode::ALL.to_vec(),
        }
    }
}

impl GridSpec {
    pub fn expand(&self) -> Vec<(Design, AggregationMethod, ExclusionMode)> {
        let mut out = Vec::new();
        for &p in &self.prompts {
            for &a in &self.aggregations {
                for &e in &self.exclusions {
                    if !out.contains(&(p, a, e)) {
                        out.push((p, a, e));
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub output_dir: PathBuf,
    /// Restrict runs to one split; `None` runs every patient.
    pub split: Option<Split>,
    pub patient_workers: usize,
    pub prompt: Design,
    pub steering: SteeringPolarity,
    pub aggregation: AggregationMethod,
    pub exclusion: ExclusionMode,
    pub corpus: CorpusSource,
    pub chunker: ChunkerConfig,
    pub patterns: PatternSet,
    pub templates: TemplateFiles,
    pub reduce: ReduceConfig,
    pub backend: BackendConfig,
    /// Structured-code rule file; the shipped table when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rules: Option<PathBuf>,
    pub grid: GridSpec,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            output_dir: PathBuf::from("out"),
            split: Some(Split::Test),
            patient_workers: 4,
            prompt: Design::A,
            steering: SteeringPolarity::Strict,
            aggregation: AggregationMethod::Max,
            exclusion: ExclusionMode::Regex,
            corpus: CorpusSource::default(),
            chunker: ChunkerConfig::default(),
            patterns: PatternSet::default(),
            templates: TemplateFiles::default(),
            reduce: ReduceConfig::default(),
            backend: BackendConfig::default(),
            rules: None,
            grid: GridSpec::default(),
            base_dir: PathBuf::from("."),
        }
    }
}

/// Parses a `--set` value: TOML literal when it parses, bare string otherwise.
fn override_value(raw: &str) -> toml::Value {
    let wrapped = format!("v = {raw}");
    match toml::from_str::<toml::Table>(&wrapped) {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn apply_override(root: &mut toml::Table, spec: &str) -> Result<(), ConfigError> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| ConfigError::Invalid(format!("override `{spec}` is not key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(ConfigError::Invalid(format!(
            "override key `{key}` is malformed"
        )));
    }
    let mut table = root;
    for part in &parts[..parts.len() - 1] {
        let entry = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry.as_table_mut().ok_or_else(|| ConfigError::Field {
            field: key.trim().into(),
            message: format!("`{part}` is not a table"),
        })?;
    }
    table.insert(
        parts[parts.len() - 1].to_string(),
        override_value(raw.trim()),
    );
    Ok(())
}

impl PipelineConfig {
    /// Parses TOML text after applying `key=value` overrides. Unknown or
    /// mistyped fields are reported by their dotted path.
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut root: toml::Table =
            toml::from_str(text).map_err(|e| ConfigError::Invalid(e.message().to_string()))?;
        for o in overrides {
            apply_override(&mut root, o)?;
        }
        let cfg: PipelineConfig = serde_path_to_error::deserialize(toml::Value::Table(root))
            .map_err(|e| ConfigError::Field {
                field: e.path().to_string(),
                message: e.inner().to_string(),
            })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::from_toml_str(&text, overrides)?;
        cfg.base_dir = path
            .parent()
            .map_or_else(|| PathBuf::from("."), Path::to_path_buf);
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let sources = [
            self.corpus.dir.is_some(),
            self.corpus.files.is_some(),
            self.corpus.synthetic.is_some(),
        ];
        if sources.iter().filter(|&&s| s).count() > 1 {
            return Err(ConfigError::Invalid(
                "corpus: set only one of `dir`, `files` or `synthetic`".into(),
            ));
        }
        if self.patient_workers == 0 {
            return Err(ConfigError::Invalid("patient_workers must be >= 1".into()));
        }
        if self.backend.max_concurrency == 0 {
            return Err(ConfigError::Invalid(
                "backend.max_concurrency must be >= 1".into(),
            ));
        }
        if self.reduce.max_context_tokens == Some(0) {
            return Err(ConfigError::Invalid(
                "reduce.max_context_tokens must be >= 1".into(),
            ));
        }
        if self.grid.prompts.is_empty()
            || self.grid.aggregations.is_empty()
            || self.grid.exclusions.is_empty()
        {
            return Err(ConfigError::Invalid("grid lists must be non-empty".into()));
        }
        self.chunker.validate()?;
        self.patterns.compile()?;
        Ok(())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.output_dir)
    }

    pub fn load_corpus(&self) -> Result<Ingested, ConfigError> {
        let c = &self.corpus;
        if let Some(spec) = &c.synthetic {
            return Ok(Ingested {
                corpus: generate_cohort(spec)?,
                warnings: Vec::new(),
            });
        }
        let (notes, events, labels) = match (&c.dir, &c.files) {
            (Some(dir), _) => corpus_paths(&self.resolve(dir)),
            (None, Some(f)) => (
                self.resolve(&f.notes),
                self.resolve(&f.events),
                self.resolve(&f.labels),
            ),
            (None, None) => {
                return Err(ConfigError::Invalid(
                    "no corpus configured (corpus.dir, corpus.files or corpus.synthetic)".into(),
                ))
            }
        };
        Ok(ingest_corpus(&notes, &events, &labels)?)
    }

    pub fn rule_set(&self) -> Result<RuleSet, ConfigError> {
        let Some(path) = &self.rules else {
            return Ok(RuleSet::default());
        };
        let path = self.resolve(path);
        let text = read(&path)?;
        let rules: RuleSet = toml::from_str(&text).map_err(|e| ConfigError::Field {
            field: "rules".into(),
            message: format!("{}: {}", path.display(), e.message()),
        })?;
        rules.validate().map_err(ConfigError::Invalid)?;
        Ok(rules)
    }

    pub fn client(&self) -> Result<Arc<LlmClient>, ConfigError> {
        Ok(Arc::new(LlmClient::from_config(&self.backend)?))
    }

    pub fn pipeline(&self, client: Arc<LlmClient>) -> Result<Pipeline, ConfigError> {
        self.pipeline_for(self.prompt, self.aggregation, self.exclusion, client)
    }

    /// Pipeline for one grid cell. `regex` adds the ECHO/CT exclusion
    /// patterns; `prompt_amended` adds the disregard-imaging amendment.
    pub fn pipeline_for(
        &self,
        prompt: Design,
        aggregation: AggregationMethod,
        exclusion: ExclusionMode,
        client: Arc<LlmClient>,
    ) -> Result<Pipeline, ConfigError> {
        let mut patterns = self.patterns.clone();
        let mut template = PromptTemplate::for_design(prompt).with_polarity(self.steering);
        if let Some(p) = &self.templates.snippet {
            template = template.with_body(read(&self.resolve(p))?);
        }
        match exclusion {
            ExclusionMode::None => {}
            ExclusionMode::Regex => {
                patterns = patterns.with_exclusions(echo_ct_exclusion_patterns())
            }
            ExclusionMode::PromptAmended => template = template.with_amendment(DISREGARD_IMAGING),
        }
        let mut any_positive = AnyPositiveTemplate::default();
        if let Some(p) = &self.templates.any_positive {
            any_positive.body = read(&self.resolve(p))?;
        }
        let pipeline = Pipeline {
            chunker: self.chunker,
            retriever: patterns.compile()?,
            template,
            aggregation,
            any_positive,
            reduce_budget: self.reduce.into(),
            client,
        };
        pipeline
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(pipeline)
    }
}

fn read(path: &Path) -> Result<String, ConfigError> {
    std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips() {
        let cfg = PipelineConfig::default();
        let back = PipelineConfig::from_toml_str(&cfg.to_toml(), &[]).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn empty_file_is_default() {
        assert_eq!(
            PipelineConfig::from_toml_str("", &[]).unwrap(),
            PipelineConfig::default()
        );
    }

    #[test]
    fn overrides_apply() {
        let cfg = PipelineConfig::from_toml_str(
            "prompt = \"B\"\n",
            &[
                "aggregation=llm_same_prompt".into(),
                "backend.max_concurrency=3".into(),
                "corpus.synthetic.n_patients=12".into(),
                "chunker.snippet_size=100".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.prompt, Design::B);
        assert_eq!(cfg.aggregation, AggregationMethod::LlmSamePrompt);
        assert_eq!(cfg.backend.max_concurrency, 3);
        assert_eq!(cfg.corpus.synthetic.as_ref().unwrap().n_patients, 12);
    }

    #[test]
    fn unknown_field_names_path() {
        let err =
            PipelineConfig::from_toml_str("[backend]\nmax_concurency = 3\n", &[]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("backend"), "{msg}");
        assert!(msg.contains("max_concurency"), "{msg}");
        let err = PipelineConfig::from_toml_str("", &["backend.max_concurrency=\"x\"".into()])
            .unwrap_err();
        assert!(err.to_string().contains("backend.max_concurrency"), "{err}");
    }

    #[test]
    fn invalid_settings_rejected() {
        assert!(PipelineConfig::from_toml_str("patient_workers = 0", &[]).is_err());
        assert!(PipelineConfig::from_toml_str("[chunker]\nsnippet_size = 0", &[]).is_err());
        let both = "[corpus]\ndir = \"d\"\n[corpus.synthetic]\nn_patients = 3\n";
        assert!(PipelineConfig::from_toml_str(both, &[]).is_err());
        assert!(PipelineConfig::from_toml_str("[patterns]\ninclude = [\"(\"]", &[]).is_err());
    }

    #[test]
    fn exclusion_modes_shape_pipeline() {
        let cfg = PipelineConfig::default();
        let client = cfg.client().unwrap();
        let none = cfg
            .pipeline_for(
                Design::A,
                AggregationMethod::Max,
                ExclusionMode::None,
                client.clone(),
            )
            .unwrap();
        let regex = cfg
            .pipeline_for(
                Design::A,
                AggregationMethod::Max,
                ExclusionMode::Regex,
                client.clone(),
            )
            .unwrap();
        let amended = cfg
            .pipeline_for(
                Design::A,
                AggregationMethod::Max,
                ExclusionMode::PromptAmended,
                client,
            )
            .unwrap();
        assert!(none.retriever.patterns().exclude.is_empty());
        assert_eq!(
            regex.retriever.patterns().exclude.len(),
            echo_ct_exclusion_patterns().len()
        );
        assert!(amended.retriever.patterns().exclude.is_empty());
        assert_eq!(
            amended.template.amendments,
            vec![DISREGARD_IMAGING.to_string()]
        );
    }

    #[test]
    fn grid_expands_all_cells() {
        assert_eq!(GridSpec::default().expand().len(), 5 * 3 * 3);
    }
}
