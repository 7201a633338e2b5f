//! Run configuration: one TOML file per run, with command-line overrides.

use std::path::{Path, PathBuf};

use anno_audit_core::biasaudit::StdErrorKind;
use anno_audit_core::corpus::{Covariate, Split};
use anno_audit_core::learners::LearnerFamily;
use anno_audit_core::llmbridge::{ProviderKind, ProviderSpec, StubRule};
use anno_audit_core::pipeline::{Aggregation, SearchSpace, DEFAULT_FOLDS, DEFAULT_RESOLUTION};
use anno_audit_core::synthlab::{ErrorModel, SynthSpec};
use anno_audit_core::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    pub corpus: PathBuf,
    pub covariates: PathBuf,
    /// JSON list of code definitions; the 19-code default when absent.
    #[serde(default)]
    pub codebook: Option<PathBuf>,
    #[serde(default)]
    pub embeddings: Option<PathBuf>,
    #[serde(default)]
    pub embedding_dim: Option<usize>,
    #[serde(default = "default_run_dir")]
    pub run_dir: PathBuf,
}

fn default_run_dir() -> PathBuf {
    PathBuf::from("run")
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchPreset {
    #[default]
    Compact,
    Full,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub k: usize,
    pub seed: u64,
    /// Gold interviews set aside for evaluation when the corpus names none.
    pub n_test: usize,
    pub aggregation: Aggregation,
    pub search: SearchPreset,
    pub resolution: usize,
    /// Learner families kept from the preset; all when empty.
    pub families: Vec<LearnerFamily>,
    /// Codes to train; the whole codebook when empty.
    pub codes: Vec<String>,
    /// Train on the output of `augment` as well.
    pub use_augmented: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            k: DEFAULT_FOLDS,
            seed: 42,
            n_test: 200,
            aggregation: Aggregation::Mean,
            search: SearchPreset::Compact,
            resolution: DEFAULT_RESOLUTION,
            families: Vec::new(),
            codes: Vec::new(),
            use_augmented: false,
        }
    }
}

impl PipelineConfig {
    pub fn search_space(&self, n_train: usize) -> SearchSpace {
        let mut space = match self.search {
            SearchPreset::Compact => SearchSpace::compact(self.seed),
            SearchPreset::Full => SearchSpace::full(self.resolution, n_train, self.seed),
        };
        if !self.families.is_empty() {
            space.learner_grid.retain(|l| self.families.contains(&l.family()));
        }
        space
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmConfig {
    pub provider: ProviderSpec,
    /// Codes to annotate; the pipeline codes when empty.
    pub codes: Vec<String>,
    pub targets: Vec<Split>,
    pub n_per_unit: usize,
    /// Extra templates overriding the bundled ones.
    pub templates_dir: Option<PathBuf>,
    pub cache: bool,
    /// Stub behavior for `augment`, where the annotation rule cannot apply.
    pub augment_stub: StubRule,
}

impl Default for LlmConfig {
    fn default() -> Self {
        Self {
            provider: ProviderSpec::default(),
            codes: Vec::new(),
            targets: vec![Split::HoldoutTest],
            n_per_unit: 1,
            templates_dir: None,
            cache: true,
            augment_stub: StubRule::Echo { prefix: String::new() },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditConfig {
    /// Covariate names; all twelve when empty.
    pub regressors: Vec<String>,
    pub alpha: Vec<f64>,
    pub std_errors: StdErrorKind,
    /// Annotation sources to audit against gold; every source in the run
    /// directory when empty.
    pub sources: Vec<String>,
    /// Code for the coefficient comparison; the first audited code when unset.
    pub comparison_code: Option<String>,
}

impl Default for AuditConfig {
    fn default() -> Self {
        Self {
            regressors: Vec::new(),
            alpha: vec![0.01, 0.05, 0.1],
            std_errors: StdErrorKind::Iid,
            sources: Vec::new(),
            comparison_code: None,
        }
    }
}

impl AuditConfig {
    pub fn covariates(&self) -> Result<Vec<Covariate>> {
        if self.regressors.is_empty() {
            return Ok(Covariate::ALL.to_vec());
        }
        self.regressors
            .iter()
            .map(|n| Covariate::from_name(n).ok_or_else(|| Error::Config(format!("unknown regressor `{n}`"))))
            .collect()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub spec: SynthSpec,
    /// Restricts the generated codes.
    pub codes: Vec<String>,
    /// Writes a synthetic annotation source derived from gold.
    pub errors: Option<SynthErrors>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthErrors {
    pub source_id: String,
    #[serde(flatten)]
    pub model: ErrorModel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub paths: PathsConfig,
    #[serde(default)]
    pub pipeline: PipelineConfig,
    #[serde(default)]
    pub llm: LlmConfig,
    #[serde(default)]
    pub audit: AuditConfig,
    #[serde(default)]
    pub synth: SynthConfig,
}

/// Command-line values that replace config keys.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub codes: Option<Vec<String>>,
    pub provider: Option<ProviderKind>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))
    }

    /// Reads `path`, resolves relative paths against its directory and
    /// applies `overrides`.
    pub fn load(path: &Path, overrides: &Overrides) -> Result<(Self, Vec<u8>)> {
        let bytes = std::fs::read(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let text = String::from_utf8(bytes.clone())
            .map_err(|_| Error::Config(format!("{} is not UTF-8", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve(base);
        cfg.apply(overrides);
        Ok((cfg, bytes))
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.paths.corpus);
        fix(&mut self.paths.covariates);
        fix(&mut self.paths.run_dir);
        if let Some(p) = &mut self.paths.codebook {
            fix(p);
        }
        if let Some(p) = &mut self.paths.embeddings {
            fix(p);
        }
        if let Some(p) = &mut self.llm.templates_dir {
            fix(p);
        }
    }

    fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.pipeline.seed = seed;
            self.synth.spec.seed = seed;
        }
        if let Some(out) = &o.out {
            self.paths.run_dir = out.clone();
        }
        if let Some(codes) = &o.codes {
            self.pipeline.codes = codes.clone();
            self.llm.codes = codes.clone();
            self.synth.codes = codes.clone();
        }
        if let Some(kind) = o.provider {
            self.llm.provider.kind = kind;
        }
    }

    /// Checks values and that every input file exists.
    pub fn validate(&self, need_inputs: bool) -> Result<()> {
        if self.pipeline.k < 2 {
            return Err(Error::Config("pipeline.k must be at least 2".into()));
        }
        if self.pipeline.resolution == 0 {
            return Err(Error::Config("pipeline.resolution must be positive".into()));
        }
        if self.audit.alpha.iter().any(|a| !(*a > 0.0 && *a < 1.0)) {
            return Err(Error::Config("audit.alpha levels must lie in (0, 1)".into()));
        }
        self.audit.covariates()?;
        self.llm.provider.validate()?;
        if self.llm.n_per_unit == 0 {
            return Err(Error::Config("llm.n_per_unit must be at least 1".into()));
        }
        if self.paths.embeddings.is_some() != self.paths.embedding_dim.is_some() {
            return Err(Error::Config("paths.embeddings and paths.embedding_dim go together".into()));
        }
        if need_inputs {
            let mut required = vec![&self.paths.corpus, &self.paths.covariates];
            required.extend(self.paths.codebook.as_ref());
            required.extend(self.paths.embeddings.as_ref());
            required.extend(self.llm.templates_dir.as_ref());
            if let Some(missing) = required.into_iter().find(|p| !p.exists()) {
                return Err(Error::Config(format!("path does not exist: {}", missing.display())));
            }
        }
        Ok(())
    }

    /// Content hash of the effective configuration.
    pub fn sha256(&self) -> String {
        let json = serde_json::to_vec(self).unwrap_or_default();
        anno_audit_core::pipeline::sha256_hex(&json)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "[paths]\ncorpus = \"c.jsonl\"\ncovariates = \"cov.csv\"\n";

    #[test]
    fn defaults_fill_missing_sections() {
        let cfg = RunConfig::parse(MINIMAL).unwrap();
        assert_eq!(cfg.pipeline.k, 5);
        assert_eq!(cfg.llm.provider.kind, ProviderKind::Stub);
        assert_eq!(cfg.audit.covariates().unwrap().len(), 12);
        assert_eq!(cfg.paths.run_dir, PathBuf::from("run"));
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::parse(&format!("{MINIMAL}[pipeline]\nfolds = 3\n")).is_err());
    }

    #[test]
    fn flags_win() {
        let mut cfg = RunConfig::parse(MINIMAL).unwrap();
        cfg.apply(&Overrides {
            seed: Some(7),
            out: Some("elsewhere".into()),
            codes: Some(vec!["marriage".into()]),
            provider: Some(ProviderKind::HttpChat),
        });
        assert_eq!(cfg.pipeline.seed, 7);
        assert_eq!(cfg.paths.run_dir, PathBuf::from("elsewhere"));
        assert_eq!(cfg.llm.codes, vec!["marriage".to_string()]);
        assert_eq!(cfg.llm.provider.kind, ProviderKind::HttpChat);
    }

    #[test]
    fn family_filter() {
        let mut p = PipelineConfig::default();
        p.families = vec![LearnerFamily::LinearSvm];
        let space = p.search_space(100);
        assert_eq!(space.learner_grid.len(), 1);
    }

    #[test]
    fn nested_sections_parse() {
        let text = format!(
            "{MINIMAL}[llm.provider]\nkind = \"http_chat\"\nendpoint = \"http://localhost:1/v1/chat/completions\"\napi_key_env = \"KEY\"\n\
             [synth.spec]\nn_interviews = 30\n[synth.errors]\nsource_id = \"noisy\"\nkind = \"covariate_flip\"\nbase_rate = 0.05\ncovariate = \"refugee\"\ndelta = 0.1\n"
        );
        let cfg = RunConfig::parse(&text).unwrap();
        assert_eq!(cfg.llm.provider.api_key_env.as_deref(), Some("KEY"));
        assert_eq!(cfg.synth.spec.n_interviews, 30);
        let errors = cfg.synth.errors.unwrap();
        assert_eq!(errors.model.covariate, Some(Covariate::Refugee));
    }
}
