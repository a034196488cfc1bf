//! Run configuration: one declarative TOML file, CLI-overridable, with a
//! content digest that changes whenever any semantically meaningful field
//! changes.

use std::collections::BTreeSet;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::decontam::{EntailmentAggregation, LexicalParams};
use crate::gateway::{ProviderProfile, ProviderRole, ReplayMode};
use crate::phase1::GenParams;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse config: {0}")]
    Parse(#[from] toml::de::Error),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct Thresholds {
    /// Peer-review consensus threshold (non-reference default, flagged).
    pub tau_review: f64,
    pub tau_jac: f64,
    pub tau_txt: f64,
    pub tau_form: f64,
    pub tau_xenc: f64,
    pub epsilon: f64,
    pub entailment_aggregation: EntailmentAggregation,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            tau_review: 0.75,
            tau_jac: 0.8,
            tau_txt: 0.86,
            tau_form: 0.90,
            tau_xenc: 0.60,
            epsilon: 1e-3,
            entailment_aggregation: EntailmentAggregation::Min,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct MinHashConfig {
    pub shingle_k: usize,
    pub num_hashes: usize,
    pub bands: usize,
    pub rows: usize,
}

impl Default for MinHashConfig {
    fn default() -> Self {
        MinHashConfig {
            shingle_k: 5,
            num_hashes: 128,
            bands: 32,
            rows: 4,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SemanticConfig {
    pub top_k: usize,
    pub eq_samples: usize,
    pub domain_range: (f64, f64),
}

impl Default for SemanticConfig {
    fn default() -> Self {
        SemanticConfig {
            top_k: 50,
            eq_samples: 20,
            domain_range: (0.1, 100.0),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationConfig {
    /// Candidates generated per teacher across the whole seed set.
    pub per_teacher: usize,
    pub params: GenParams,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            per_teacher: 30,
            params: GenParams::default(),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    pub seeds: Option<PathBuf>,
    pub benchmark: Option<PathBuf>,
    pub efficiency_csv: Option<PathBuf>,
    /// JSON list of {model, thinking, pass1} for the derived-metric table.
    pub accuracy: Option<PathBuf>,
    pub lexicon_logical: Option<PathBuf>,
    pub lexicon_domain: Option<PathBuf>,
    pub templates_dir: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
}

/// The whole run configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub run_seed: u64,
    pub domain: String,
    pub providers: Vec<ProviderProfile>,
    /// Teacher ids in priority order (tie-break order for selection).
    pub teacher_priority: Vec<String>,
    pub student: String,
    pub judge: String,
    pub style_summarizer: String,
    pub embedder: String,
    /// Teacher that integrates knowledge summaries; first teacher if unset.
    pub integrator: Option<String>,
    pub thresholds: Thresholds,
    pub minhash: MinHashConfig,
    pub semantic: SemanticConfig,
    pub reward_weights: [f64; 4],
    pub generation: GenerationConfig,
    pub style_corpus_cap: usize,
    pub workers: usize,
    pub replay: ReplayMode,
    pub paths: Paths,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            run_seed: 0,
            domain: "telecom".into(),
            providers: Vec::new(),
            teacher_priority: Vec::new(),
            student: String::new(),
            judge: String::new(),
            style_summarizer: String::new(),
            embedder: String::new(),
            integrator: None,
            thresholds: Thresholds::default(),
            minhash: MinHashConfig::default(),
            semantic: SemanticConfig::default(),
            reward_weights: [0.5, 0.2, 0.2, 0.1],
            generation: GenerationConfig::default(),
            style_corpus_cap: 200,
            workers: 1,
            replay: ReplayMode::Off,
            paths: Paths::default(),
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &std::path::Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(toml::from_str(&text)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn profile(&self, id: &str) -> Option<&ProviderProfile> {
        self.providers.iter().find(|p| p.id == id)
    }

    pub fn teachers(&self) -> Vec<&ProviderProfile> {
        self.teacher_priority
            .iter()
            .filter_map(|id| self.profile(id))
            .collect()
    }

    pub fn integrator_id(&self) -> Option<&str> {
        self.integrator
            .as_deref()
            .or_else(|| self.teacher_priority.first().map(|s| s.as_str()))
    }

    pub fn lexical_params(&self) -> LexicalParams {
        LexicalParams {
            shingle_k: self.minhash.shingle_k,
            num_hashes: self.minhash.num_hashes,
            bands: self.minhash.bands,
            rows: self.minhash.rows,
            tau_jac: self.thresholds.tau_jac,
        }
    }

    pub fn semantic_params(&self) -> crate::decontam::SemanticParams {
        crate::decontam::SemanticParams {
            top_k: self.semantic.top_k,
            tau_txt: self.thresholds.tau_txt,
            tau_form: self.thresholds.tau_form,
            tau_xenc: self.thresholds.tau_xenc,
            epsilon: self.thresholds.epsilon,
            eq_samples: self.semantic.eq_samples,
            entailment_aggregation: self.thresholds.entailment_aggregation,
        }
    }

    pub fn domain_ranges(&self) -> crate::decontam::DomainRanges {
        crate::decontam::DomainRanges {
            default: self.semantic.domain_range,
            per_var: Default::default(),
        }
    }
}

/// Validation outcome: violations fail the run, warnings flag non-reference
/// defaults by name.
#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    pub violations: Vec<String>,
    pub warnings: Vec<String>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Check every config invariant; violations are the return value, not errors.
pub fn validate(cfg: &RunConfig) -> ValidationReport {
    let mut report = ValidationReport::default();
    let mut violation = |msg: String| report.violations.push(msg);

    let weight_sum: f64 = cfg.reward_weights.iter().sum();
    if (weight_sum - 1.0).abs() > 1e-9 {
        violation(format!("reward weights must sum to 1, got {weight_sum}"));
    }
    if cfg.reward_weights.iter().any(|w| *w < 0.0) {
        violation("reward weights must be non-negative".into());
    }
    for (name, value) in [
        ("tau_review", cfg.thresholds.tau_review),
        ("tau_jac", cfg.thresholds.tau_jac),
        ("tau_txt", cfg.thresholds.tau_txt),
        ("tau_form", cfg.thresholds.tau_form),
        ("tau_xenc", cfg.thresholds.tau_xenc),
    ] {
        if !(0.0..=1.0).contains(&value) {
            violation(format!("threshold {name}={value} must lie in [0, 1]"));
        }
    }
    if !(cfg.thresholds.epsilon > 0.0) {
        violation("epsilon must be positive".into());
    }
    if cfg.minhash.bands * cfg.minhash.rows != cfg.minhash.num_hashes {
        violation(format!(
            "bands*rows must cover the hash count: {}x{} != {}",
            cfg.minhash.bands, cfg.minhash.rows, cfg.minhash.num_hashes
        ));
    }
    if cfg.minhash.shingle_k == 0 {
        violation("shingle_k must be at least 1".into());
    }
    if cfg.teacher_priority.is_empty() {
        violation("teacher list must be non-empty".into());
    }
    if cfg.workers == 0 {
        violation("workers must be at least 1".into());
    }
    if cfg.semantic.domain_range.0 >= cfg.semantic.domain_range.1 {
        violation("domain_range must have low < high".into());
    }

    let mut ids = BTreeSet::new();
    for profile in &cfg.providers {
        if !ids.insert(profile.id.clone()) {
            violation(format!("duplicate provider id `{}`", profile.id));
        }
        if profile.max_concurrent == 0 {
            violation(format!("provider `{}` needs max_concurrent >= 1", profile.id));
        }
        if profile.request_timeout_secs == 0 {
            violation(format!("provider `{}` needs a positive timeout", profile.id));
        }
        if !(profile.is_mock()
            || profile.endpoint.starts_with("http://")
            || profile.endpoint.starts_with("https://"))
        {
            violation(format!(
                "provider `{}` endpoint `{}` is neither http(s) nor mock",
                profile.id, profile.endpoint
            ));
        }
    }
    let mut require = |id: &str, what: &str, role: ProviderRole| match cfg.profile(id) {
        None => violation(format!("{what} `{id}` is not a configured provider")),
        Some(p) if p.role != role => {
            violation(format!("{what} `{id}` must have role {role:?}"))
        }
        Some(_) => {}
    };
    for teacher in &cfg.teacher_priority {
        require(teacher, "teacher", ProviderRole::Teacher);
    }
    if !cfg.student.is_empty() {
        require(&cfg.student, "student", ProviderRole::Student);
    } else {
        violation("student profile id must be set".into());
    }
    if !cfg.judge.is_empty() {
        require(&cfg.judge, "judge", ProviderRole::Judge);
    } else {
        violation("judge profile id must be set".into());
    }
    if !cfg.style_summarizer.is_empty() {
        require(
            &cfg.style_summarizer,
            "style_summarizer",
            ProviderRole::StyleSummarizer,
        );
    } else {
        violation("style_summarizer profile id must be set".into());
    }
    if !cfg.embedder.is_empty() {
        require(&cfg.embedder, "embedder", ProviderRole::Embedder);
    } else {
        violation("embedder profile id must be set".into());
    }
    if let Some(student) = cfg.profile(&cfg.student) {
        // Perplexity scoring needs per-token log-probabilities; reject at
        // validation rather than approximating silently.
        if !student.supports_logprobs {
            report.violations.push(format!(
                "student `{}` must support log-probabilities for reflection scoring",
                student.id
            ));
        }
    }
    if let Some(integrator) = &cfg.integrator {
        if !cfg.teacher_priority.contains(integrator) {
            report
                .violations
                .push(format!("integrator `{integrator}` must be one of the teachers"));
        }
    }

    report.warnings.push(format!(
        "tau_review={} is a non-reference default (no published value)",
        cfg.thresholds.tau_review
    ));
    report.warnings.push(format!(
        "generation sampling (temperature={}, top_p={}) is a non-reference default",
        cfg.generation.params.temperature, cfg.generation.params.top_p
    ));
    report
}

/// SHA-256 over the canonical JSON rendering (sorted keys), hex-encoded.
pub fn config_digest(cfg: &RunConfig) -> String {
    let value = serde_json::to_value(cfg).expect("config serializes");
    crate::jsonl::sha256_hex(value.to_string().as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn mock_config() -> RunConfig {
        let teacher = |id: &str| ProviderProfile {
            id: id.into(),
            endpoint: format!("mock://{id}"),
            model_name: format!("model-{id}"),
            role: ProviderRole::Teacher,
            max_concurrent: 4,
            request_timeout_secs: 30,
            api_key_env: None,
            embedding_dim: None,
            supports_logprobs: false,
        };
        RunConfig {
            providers: vec![
                teacher("t1"),
                teacher("t2"),
                teacher("t3"),
                ProviderProfile {
                    id: "student".into(),
                    endpoint: "mock://student".into(),
                    model_name: "student".into(),
                    role: ProviderRole::Student,
                    max_concurrent: 4,
                    request_timeout_secs: 30,
                    api_key_env: None,
                    embedding_dim: None,
                    supports_logprobs: true,
                },
                ProviderProfile {
                    id: "judge".into(),
                    endpoint: "mock://judge".into(),
                    model_name: "judge".into(),
                    role: ProviderRole::Judge,
                    max_concurrent: 4,
                    request_timeout_secs: 30,
                    api_key_env: None,
                    embedding_dim: None,
                    supports_logprobs: false,
                },
                ProviderProfile {
                    id: "styler".into(),
                    endpoint: "mock://styler".into(),
                    model_name: "styler".into(),
                    role: ProviderRole::StyleSummarizer,
                    max_concurrent: 4,
                    request_timeout_secs: 30,
                    api_key_env: None,
                    embedding_dim: None,
                    supports_logprobs: false,
                },
                ProviderProfile {
                    id: "embedder".into(),
                    endpoint: "mock://embedder".into(),
                    model_name: "embedder".into(),
                    role: ProviderRole::Embedder,
                    max_concurrent: 4,
                    request_timeout_secs: 30,
                    api_key_env: None,
                    embedding_dim: Some(64),
                    supports_logprobs: false,
                },
            ],
            teacher_priority: vec!["t1".into(), "t2".into(), "t3".into()],
            student: "student".into(),
            judge: "judge".into(),
            style_summarizer: "styler".into(),
            embedder: "embedder".into(),
            ..RunConfig::default()
        }
    }

    #[test]
    fn reference_defaults_validate() {
        let report = validate(&mock_config());
        assert!(report.is_ok(), "violations: {:?}", report.violations);
        assert!(!report.warnings.is_empty());
    }

    #[test]
    fn weight_sum_violation_detected() {
        let mut cfg = mock_config();
        cfg.reward_weights = [0.5, 0.2, 0.1, 0.1];
        let report = validate(&cfg);
        assert!(report
            .violations
            .iter()
            .any(|v| v.contains("reward weights")));
    }

    #[test]
    fn band_layout_violation_detected() {
        let mut cfg = mock_config();
        cfg.minhash.bands = 16;
        let report = validate(&cfg);
        assert!(report.violations.iter().any(|v| v.contains("bands*rows")));
    }

    #[test]
    fn logprob_requirement_enforced() {
        let mut cfg = mock_config();
        cfg.providers
            .iter_mut()
            .find(|p| p.id == "student")
            .unwrap()
            .supports_logprobs = false;
        let report = validate(&cfg);
        assert!(report
            .violations
            .iter()
            .any(|v| v.contains("log-probabilities")));
    }

    #[test]
    fn digest_changes_with_semantic_fields() {
        let cfg = mock_config();
        let base = config_digest(&cfg);

        let mut changed = cfg.clone();
        changed.run_seed = 99;
        assert_ne!(config_digest(&changed), base);

        let mut changed = cfg.clone();
        changed.thresholds.tau_review = 0.8;
        assert_ne!(config_digest(&changed), base);

        let mut changed = cfg.clone();
        changed.reward_weights = [0.4, 0.3, 0.2, 0.1];
        assert_ne!(config_digest(&changed), base);

        let mut changed = cfg.clone();
        changed.teacher_priority.reverse();
        assert_ne!(config_digest(&changed), base);

        assert_eq!(config_digest(&cfg), base);
    }

    #[test]
    fn toml_round_trip() {
        let cfg = mock_config();
        let text = cfg.to_toml();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(config_digest(&back), config_digest(&cfg));
    }
}
