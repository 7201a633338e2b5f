//! LLM annotation and dialogue augmentation.
//!
//! Each (QA pair, code) is annotated independently with a few-shot
//! chain-of-thought prompt; the model's free-text answer is reduced to a
//! binary label by reading its final `Label:` line. Providers sit behind
//! [`ChatProvider`], with a content-addressed response cache, retry with
//! backoff and an optional request-rate budget.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{
    AnnotationSet, CellKey, CodeDefinition, Corpus, Provenance, QaPair, Split, NEGATIVE_LABEL,
};
use crate::error::{Error, Result};

pub const INPUT_MARKER: &str = "### Input:";
pub const OUTPUT_MARKER: &str = "### Output:";
pub const INTERPRETATION_MARKER: &str = "Interpretation:";
pub const LABEL_MARKER: &str = "Label:";
pub const FEW_SHOT_COUNT: usize = 4;

/// System prompt for producing one paraphrased revision of a dialogue.
pub const AUGMENTATION_SYSTEM_PROMPT: &str = "Revise a given dialogue between an interviewer and respondent while maintaining the core meaning.\nAdditionally, you may alter names, places, and other identifying information while preserving the core meaning of the dialogue.\n\nCreate a single revision of the dialogue in the following format:\n    Interviewer: (question/statement by the interviewer)\n    Respondent: (answer by the respondent)";

pub const ANNOTATION_TEMPERATURE: f64 = 0.0;
pub const AUGMENTATION_TEMPERATURE: f64 = 0.7;

/// Offset added (times the revision number) to the source `qa_index` of an
/// augmented unit.
pub const AUGMENTED_INDEX_STRIDE: usize = 1_000_000;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FewShotExample {
    /// `Interviewer: ...\nRespondent: ...`
    pub input: String,
    pub interpretation: String,
    pub label: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub code_name: String,
    #[serde(default)]
    pub title: String,
    #[serde(default)]
    pub group: String,
    pub positive_label: String,
    pub system_prompt: String,
    pub few_shot: Vec<FewShotExample>,
    /// False for templates completed rather than transcribed.
    #[serde(default)]
    pub verbatim: bool,
}

impl PromptTemplate {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("template `{}`: {m}", self.code_name)));
        if self.system_prompt.trim().is_empty() {
            return bad("empty system prompt".into());
        }
        if self.few_shot.len() != FEW_SHOT_COUNT {
            return bad(format!("expected {FEW_SHOT_COUNT} examples, found {}", self.few_shot.len()));
        }
        for (i, ex) in self.few_shot.iter().enumerate() {
            if ex.label != self.positive_label && ex.label != NEGATIVE_LABEL {
                return bad(format!("example {i} has label `{}`", ex.label));
            }
            if ex.interpretation.trim().is_empty() {
                return bad(format!("example {i} has no interpretation"));
            }
            let (Some(q), Some(a)) = (ex.input.find("Interviewer:"), ex.input.find("Respondent:")) else {
                return bad(format!("example {i} is not an Interviewer/Respondent dialogue"));
            };
            if q > a {
                return bad(format!("example {i} lists the respondent first"));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let t: PromptTemplate = serde_json::from_str(text)?;
        t.validate()?;
        Ok(t)
    }

    /// The output half of a few-shot block.
    pub fn example_output(ex: &FewShotExample) -> String {
        format!("{INTERPRETATION_MARKER} {} {LABEL_MARKER} {}", ex.interpretation, ex.label)
    }

    pub fn code_definition(&self) -> CodeDefinition {
        CodeDefinition {
            code_name: self.code_name.clone(),
            positive_label_string: self.positive_label.clone(),
            negative_label_string: NEGATIVE_LABEL.to_string(),
            group: match self.group.as_str() {
                "ambition" => crate::corpus::CodeGroup::Ambition,
                "capacity" => crate::corpus::CodeGroup::Capacity,
                _ => crate::corpus::CodeGroup::Aspiration,
            },
        }
    }
}

macro_rules! bundled {
    ($($name:literal),* $(,)?) => {
        &[$(($name, include_str!(concat!("../templates/", $name, ".json")))),*]
    };
}

const BUNDLED: &[(&str, &str)] = bundled!(
    "ability_high",
    "ability_low",
    "aspiration_religious",
    "aspiration_secular",
    "awareness_high",
    "awareness_low",
    "budget_high",
    "budget_low",
    "education_high",
    "education_low",
    "education_neutral",
    "education_religious",
    "entrepreneur",
    "job_secular",
    "marriage",
    "migration",
    "no_ambition",
    "reliance_on_god",
    "vocational_training",
);

/// Templates by code name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TemplateStore {
    templates: BTreeMap<String, PromptTemplate>,
}

impl TemplateStore {
    /// The 19 templates shipped with the crate.
    pub fn bundled() -> Self {
        let mut store = Self::default();
        for (name, text) in BUNDLED {
            let t = PromptTemplate::from_json(text).unwrap_or_else(|e| panic!("bundled template {name}: {e}"));
            store.templates.insert(t.code_name.clone(), t);
        }
        store
    }

    /// Reads every `*.json` in `dir`; these override bundled templates of
    /// the same code when layered with [`TemplateStore::extend`].
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let mut store = Self::default();
        let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        let mut paths: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        paths.sort();
        for p in paths {
            let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
            let t = PromptTemplate::from_json(&text)?;
            store.templates.insert(t.code_name.clone(), t);
        }
        Ok(store)
    }

    pub fn extend(&mut self, other: TemplateStore) {
        self.templates.extend(other.templates);
    }

    pub fn insert(&mut self, t: PromptTemplate) -> Result<()> {
        t.validate()?;
        self.templates.insert(t.code_name.clone(), t);
        Ok(())
    }

    pub fn get(&self, code: &str) -> Result<&PromptTemplate> {
        self.templates
            .get(code)
            .ok_or_else(|| Error::Config(format!("no prompt template for code `{code}`")))
    }

    pub fn iter(&self) -> impl Iterator<Item = &PromptTemplate> {
        self.templates.values()
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }
}

/// Whether instructions travel as a system message or are prepended to the
/// user message.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptLayout {
    #[default]
    SystemAndUser,
    SingleUser,
}

fn apply_layout(system: String, user: String, layout: PromptLayout) -> Vec<Message> {
    match layout {
        PromptLayout::SystemAndUser => vec![Message::system(system), Message::user(user)],
        PromptLayout::SingleUser => vec![Message::user(format!("{system}\n\n{user}"))],
    }
}

pub fn dialogue(qa: &QaPair) -> String {
    format!("Interviewer: {}\nRespondent: {}", qa.question, qa.answer)
}

pub fn build_annotation_prompt(template: &PromptTemplate, qa: &QaPair) -> Vec<Message> {
    build_annotation_prompt_with(template, qa, PromptLayout::SystemAndUser)
}

pub fn build_annotation_prompt_with(template: &PromptTemplate, qa: &QaPair, layout: PromptLayout) -> Vec<Message> {
    let mut blocks: Vec<String> = template
        .few_shot
        .iter()
        .map(|ex| {
            format!(
                "{INPUT_MARKER}\n{}\n{OUTPUT_MARKER}\n{}",
                ex.input,
                PromptTemplate::example_output(ex)
            )
        })
        .collect();
    blocks.push(format!("{INPUT_MARKER}\n{}\n{OUTPUT_MARKER}", dialogue(qa)));
    apply_layout(template.system_prompt.clone(), blocks.join("\n\n"), layout)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelOutcome {
    Positive,
    Negative,
    Malformed,
}

impl LabelOutcome {
    pub fn cell(self) -> u8 {
        u8::from(self == LabelOutcome::Positive)
    }
}

fn normalize_label(s: &str) -> String {
    let trimmed = s.trim().trim_matches(|c: char| {
        c.is_whitespace() || matches!(c, '"' | '\'' | '*' | '`' | '“' | '”' | '‘' | '’' | '[' | ']' | '(' | ')')
    });
    let trimmed = trimmed.trim_end_matches(|c: char| c.is_ascii_punctuation() || c.is_whitespace());
    let trimmed = trimmed.trim_matches(|c: char| {
        c.is_whitespace() || matches!(c, '"' | '\'' | '*' | '`' | '“' | '”' | '‘' | '’')
    });
    trimmed.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

fn singular_plural_match(candidate: &str, label: &str) -> bool {
    candidate == label
        || candidate.strip_suffix('s') == Some(label)
        || label.strip_suffix('s') == Some(candidate)
}

/// Reads the text after the last `Label:` (up to the end of that line).
pub fn parse_label_response(raw: &str, code: &CodeDefinition) -> LabelOutcome {
    let Some(pos) = raw.rfind(LABEL_MARKER) else {
        return LabelOutcome::Malformed;
    };
    let rest = &raw[pos + LABEL_MARKER.len()..];
    let line = rest.lines().map(str::trim).find(|l| !l.is_empty()).unwrap_or("");
    let candidate = normalize_label(line);
    if candidate.is_empty() {
        return LabelOutcome::Malformed;
    }
    if singular_plural_match(&candidate, &normalize_label(&code.positive_label_string)) {
        LabelOutcome::Positive
    } else if candidate == normalize_label(&code.negative_label_string) {
        LabelOutcome::Negative
    } else {
        LabelOutcome::Malformed
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub temperature: f64,
    pub messages: Vec<Message>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl ChatRequest {
    /// Content address of the request: model, temperature, seed and the
    /// exact prompt bytes.
    pub fn cache_key(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.model.as_bytes());
        h.update([0]);
        h.update(self.temperature.to_bits().to_le_bytes());
        h.update([0]);
        if let Some(seed) = self.seed {
            h.update(seed.to_le_bytes());
        }
        h.update([0]);
        for m in &self.messages {
            h.update(format!("{:?}", m.role).as_bytes());
            h.update([0]);
            h.update(m.content.as_bytes());
            h.update([0]);
        }
        hex::encode(h.finalize())
    }

    pub fn prompt_hash(&self) -> String {
        let mut h = Sha256::new();
        for m in &self.messages {
            h.update(m.content.as_bytes());
            h.update([0]);
        }
        hex::encode(h.finalize())
    }
}

pub trait ChatProvider: Send + Sync {
    fn model_id(&self) -> &str;
    /// One completion. Transport failures are `Error::Provider`.
    fn complete(&self, request: &ChatRequest) -> Result<String>;
}

/// Deterministic offline responses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum StubRule {
    /// Always the same text.
    Constant { response: String },
    /// Positive label when the final dialogue's answer contains `needle`
    /// (case-insensitive), otherwise the negative label.
    Keyword { needle: String },
    /// Repeats the final dialogue with `prefix` prepended to the answer.
    Echo { prefix: String },
}

impl Default for StubRule {
    fn default() -> Self {
        StubRule::Constant {
            response: format!("{INTERPRETATION_MARKER} stub. {LABEL_MARKER} {NEGATIVE_LABEL}"),
        }
    }
}

pub struct StubProvider {
    pub rule: StubRule,
    model_id: String,
    calls: AtomicUsize,
}

impl StubProvider {
    pub fn new(rule: StubRule) -> Self {
        Self {
            rule,
            model_id: "stub".into(),
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

/// Question and answer of the last dialogue in the user message.
fn final_dialogue(messages: &[Message]) -> Option<(String, String)> {
    let user = messages.iter().rev().find(|m| m.role == Role::User)?;
    let text = &user.content;
    let start = text.rfind("Interviewer:")?;
    let tail = &text[start + "Interviewer:".len()..];
    let split = tail.find("\nRespondent:")?;
    let question = tail[..split].trim().to_string();
    let answer = &tail[split + "\nRespondent:".len()..];
    let answer = answer.split(OUTPUT_MARKER).next().unwrap_or("").trim().to_string();
    Some((question, answer))
}

/// The non-negative label used by the prompt's own examples.
fn positive_label_in_prompt(messages: &[Message]) -> Option<String> {
    let user = messages.iter().rev().find(|m| m.role == Role::User)?;
    user.content
        .lines()
        .filter_map(|l| l.rfind(LABEL_MARKER).map(|p| l[p + LABEL_MARKER.len()..].trim().to_string()))
        .find(|l| l != NEGATIVE_LABEL)
}

impl ChatProvider for StubProvider {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn complete(&self, request: &ChatRequest) -> Result<String> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        match &self.rule {
            StubRule::Constant { response } => Ok(response.clone()),
            StubRule::Keyword { needle } => {
                let (_, answer) = final_dialogue(&request.messages)
                    .ok_or_else(|| Error::Provider("stub: no dialogue in prompt".into()))?;
                let hit = answer.to_lowercase().contains(&needle.to_lowercase());
                let label = if hit {
                    positive_label_in_prompt(&request.messages)
                        .ok_or_else(|| Error::Provider("stub: prompt has no positive example".into()))?
                } else {
                    NEGATIVE_LABEL.to_string()
                };
                Ok(format!("{INTERPRETATION_MARKER} keyword stub. {LABEL_MARKER} {label}"))
            }
            StubRule::Echo { prefix } => {
                let (q, a) = final_dialogue(&request.messages)
                    .ok_or_else(|| Error::Provider("stub: no dialogue in prompt".into()))?;
                Ok(format!("Interviewer: {q}\nRespondent: {prefix}{a}"))
            }
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    #[default]
    Stub,
    HttpChat,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProviderSpec {
    pub kind: ProviderKind,
    pub model_id: String,
    pub temperature: f64,
    pub augmentation_temperature: f64,
    pub max_retries: u32,
    pub timeout_secs: u64,
    /// Chat-completions URL (http only).
    pub endpoint: Option<String>,
    /// Name of the environment variable holding the bearer token.
    pub api_key_env: Option<String>,
    pub requests_per_minute: Option<u32>,
    pub parallelism: usize,
    pub backoff_base_ms: u64,
    pub layout: PromptLayout,
    pub stub: StubRule,
}

impl Default for ProviderSpec {
    fn default() -> Self {
        Self {
            kind: ProviderKind::Stub,
            model_id: "stub".into(),
            temperature: ANNOTATION_TEMPERATURE,
            augmentation_temperature: AUGMENTATION_TEMPERATURE,
            max_retries: 3,
            timeout_secs: 60,
            endpoint: None,
            api_key_env: None,
            requests_per_minute: None,
            parallelism: 4,
            backoff_base_ms: 1000,
            layout: PromptLayout::SystemAndUser,
            stub: StubRule::default(),
        }
    }
}

impl ProviderSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature >= 0.0 && self.augmentation_temperature >= 0.0) {
            return Err(Error::Config("temperature must be non-negative".into()));
        }
        if self.parallelism == 0 {
            return Err(Error::Config("parallelism must be at least 1".into()));
        }
        if self.kind == ProviderKind::HttpChat && self.endpoint.is_none() {
            return Err(Error::Config("http_chat provider needs an endpoint".into()));
        }
        if self.requests_per_minute == Some(0) {
            return Err(Error::Config("requests_per_minute must be positive".into()));
        }
        Ok(())
    }

    pub fn retry_policy(&self) -> RetryPolicy {
        RetryPolicy {
            max_retries: self.max_retries,
            base_delay: Duration::from_millis(self.backoff_base_ms),
            factor: 2.0,
        }
    }

    /// Instantiates the provider this spec describes.
    pub fn build(&self) -> Result<Box<dyn ChatProvider>> {
        self.validate()?;
        Ok(match self.kind {
            ProviderKind::Stub => Box::new(StubProvider::new(self.stub.clone())),
            ProviderKind::HttpChat => Box::new(HttpChatProvider::new(self)?),
        })
    }
}

/// OpenAI-style chat-completions over HTTP. The bearer token is read from
/// the environment on each request and never stored.
pub struct HttpChatProvider {
    agent: ureq::Agent,
    endpoint: String,
    model_id: String,
    api_key_env: Option<String>,
}

impl HttpChatProvider {
    pub fn new(spec: &ProviderSpec) -> Result<Self> {
        let endpoint = spec
            .endpoint
            .clone()
            .ok_or_else(|| Error::Config("http_chat provider needs an endpoint".into()))?;
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(spec.timeout_secs)))
            .build()
            .into();
        Ok(Self {
            agent,
            endpoint,
            model_id: spec.model_id.clone(),
            api_key_env: spec.api_key_env.clone(),
        })
    }
}

/// Pulls the completion text out of the common chat response shapes.
pub fn extract_completion(body: &serde_json::Value) -> Option<String> {
    body.pointer("/choices/0/message/content")
        .or_else(|| body.pointer("/message/content"))
        .or_else(|| body.pointer("/choices/0/text"))
        .and_then(|v| v.as_str())
        .map(str::to_string)
}

impl ChatProvider for HttpChatProvider {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn complete(&self, request: &ChatRequest) -> Result<String> {
        let mut req = self.agent.post(&self.endpoint).header("Content-Type", "application/json");
        if let Some(var) = &self.api_key_env {
            let key = std::env::var(var)
                .map_err(|_| Error::Config(format!("environment variable `{var}` is not set")))?;
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(request)
            .map_err(|e| Error::Provider(format!("{}: {e}", self.endpoint)))?;
        let body: serde_json::Value = resp
            .body_mut()
            .read_json()
            .map_err(|e| Error::Provider(format!("unreadable response: {e}")))?;
        extract_completion(&body).ok_or_else(|| Error::Provider("response has no completion text".into()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay: Duration,
    pub factor: f64,
}

impl RetryPolicy {
    /// Wait before retry number `attempt` (1-based).
    pub fn delay(&self, attempt: u32) -> Duration {
        self.base_delay.mul_f64(self.factor.powi(attempt.saturating_sub(1) as i32))
    }
}

/// Spaces requests at least `60 / rpm` seconds apart.
pub struct RateLimiter {
    interval: Duration,
    next: Mutex<Instant>,
}

impl RateLimiter {
    pub fn per_minute(rpm: u32) -> Self {
        Self {
            interval: Duration::from_secs_f64(60.0 / rpm.max(1) as f64),
            next: Mutex::new(Instant::now()),
        }
    }

    pub fn acquire(&self) {
        let wait = {
            let mut next = self.next.lock().unwrap_or_else(|e| e.into_inner());
            let now = Instant::now();
            let slot = (*next).max(now);
            *next = slot + self.interval;
            slot - now
        };
        if !wait.is_zero() {
            thread::sleep(wait);
        }
    }
}

#[derive(Serialize, Deserialize)]
struct CachedResponse {
    model: String,
    temperature: f64,
    response: String,
}

/// Response store keyed by [`ChatRequest::cache_key`].
pub enum ResponseCache {
    Disabled,
    Memory(Mutex<HashMap<String, String>>),
    /// `<dir>/<key[0..2]>/<key>.json`
    Directory(PathBuf),
}

impl ResponseCache {
    pub fn memory() -> Self {
        ResponseCache::Memory(Mutex::new(HashMap::new()))
    }

    pub fn directory(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(ResponseCache::Directory(dir))
    }

    fn path(dir: &Path, key: &str) -> PathBuf {
        dir.join(&key[..2]).join(format!("{key}.json"))
    }

    pub fn get(&self, key: &str) -> Option<String> {
        match self {
            ResponseCache::Disabled => None,
            ResponseCache::Memory(m) => m.lock().unwrap_or_else(|e| e.into_inner()).get(key).cloned(),
            ResponseCache::Directory(dir) => {
                let text = fs::read_to_string(Self::path(dir, key)).ok()?;
                serde_json::from_str::<CachedResponse>(&text).ok().map(|c| c.response)
            }
        }
    }

    pub fn put(&self, key: &str, request: &ChatRequest, response: &str) -> Result<()> {
        match self {
            ResponseCache::Disabled => Ok(()),
            ResponseCache::Memory(m) => {
                m.lock()
                    .unwrap_or_else(|e| e.into_inner())
                    .insert(key.to_string(), response.to_string());
                Ok(())
            }
            ResponseCache::Directory(dir) => {
                let path = Self::path(dir, key);
                let parent = path.parent().unwrap_or(dir);
                fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
                let body = serde_json::to_string(&CachedResponse {
                    model: request.model.clone(),
                    temperature: request.temperature,
                    response: response.to_string(),
                })?;
                // write-then-rename keeps concurrent readers from seeing partial files
                let tmp = path.with_extension(format!("tmp{}", std::process::id()));
                fs::write(&tmp, body).map_err(|e| Error::io(&tmp, e))?;
                fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))?;
                Ok(())
            }
        }
    }
}

/// Shared request machinery: cache, retry, rate limit.
pub struct Caller<'a> {
    pub provider: &'a dyn ChatProvider,
    pub cache: &'a ResponseCache,
    pub retry: RetryPolicy,
    pub limiter: Option<RateLimiter>,
    pub calls: AtomicUsize,
}

/// Result of one logical request after retries.
#[derive(Clone, Debug, PartialEq)]
pub struct CallOutcome<V> {
    pub value: Option<V>,
    pub raw: Option<String>,
    pub retries: u32,
    pub cache_hit: bool,
    pub error: Option<String>,
}

impl<'a> Caller<'a> {
    pub fn new(provider: &'a dyn ChatProvider, cache: &'a ResponseCache, spec: &ProviderSpec) -> Self {
        Self {
            provider,
            cache,
            retry: spec.retry_policy(),
            limiter: spec.requests_per_minute.map(RateLimiter::per_minute),
            calls: AtomicUsize::new(0),
        }
    }

    fn fetch(&self, request: &ChatRequest) -> Result<String> {
        if let Some(l) = &self.limiter {
            l.acquire();
        }
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.provider.complete(request)
    }

    /// Sends `request` until `parse` accepts a response or retries run out.
    /// The first attempt may be served from cache; retries after an
    /// unparseable answer always go to the provider. Transport errors back
    /// off exponentially.
    pub fn call<V>(&self, request: &ChatRequest, parse: impl Fn(&str) -> Option<V>) -> CallOutcome<V> {
        let key = request.cache_key();
        let mut out = CallOutcome {
            value: None,
            raw: None,
            retries: 0,
            cache_hit: false,
            error: None,
        };
        if let Some(hit) = self.cache.get(&key) {
            out.cache_hit = true;
            out.value = parse(&hit);
            out.raw = Some(hit);
            if out.value.is_some() {
                return out;
            }
            out.retries = 1;
        }
        loop {
            match self.fetch(request) {
                Ok(text) => {
                    if let Err(e) = self.cache.put(&key, request, &text) {
                        log::warn!("cache write failed: {e}");
                    }
                    out.value = parse(&text);
                    out.raw = Some(text);
                    out.error = None;
                    if out.value.is_some() {
                        return out;
                    }
                }
                Err(e) => {
                    out.error = Some(e.to_string());
                    if out.retries < self.retry.max_retries {
                        thread::sleep(self.retry.delay(out.retries + 1));
                    }
                }
            }
            if out.retries >= self.retry.max_retries {
                return out;
            }
            out.retries += 1;
        }
    }

    pub fn provider_calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunLogEntry {
    pub interview_id: String,
    pub qa_index: usize,
    pub code: String,
    pub prompt_sha256: String,
    pub raw_response: Option<String>,
    pub outcome: LabelOutcome,
    pub retries: u32,
    pub cache_hit: bool,
    /// Transport error left after the final retry; no cell is written then.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRunLog {
    pub model_id: String,
    pub temperature: f64,
    pub provider_calls: usize,
    /// Ordered by (interview, qa_index, code).
    pub entries: Vec<RunLogEntry>,
}

impl AnnotationRunLog {
    pub fn count(&self, outcome: LabelOutcome) -> usize {
        self.entries.iter().filter(|e| e.outcome == outcome).count()
    }

    pub fn failed(&self) -> usize {
        self.entries.iter().filter(|e| e.error.is_some()).count()
    }

    pub fn cache_hits(&self) -> usize {
        self.entries.iter().filter(|e| e.cache_hit).count()
    }

    pub fn write_jsonl(&self, mut w: impl std::io::Write) -> Result<()> {
        for e in &self.entries {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n")
                .map_err(|e| Error::Invalid(format!("write failed: {e}")))?;
        }
        Ok(())
    }
}

fn run_in_pool<R: Send>(parallelism: usize, job: impl FnOnce() -> R + Send) -> R {
    match rayon::ThreadPoolBuilder::new().num_threads(parallelism).build() {
        Ok(pool) => pool.install(job),
        Err(_) => job(),
    }
}

/// Annotates every QA pair of the interviews in `targets` for every code.
/// Cells whose request never produced a response are left out; unparseable
/// answers become the negative label and are logged as malformed.
pub fn annotate_corpus(
    corpus: &Corpus,
    codes: &[CodeDefinition],
    templates: &TemplateStore,
    targets: &[Split],
    provider: &dyn ChatProvider,
    spec: &ProviderSpec,
    cache: &ResponseCache,
    source_id: &str,
) -> Result<(AnnotationSet, AnnotationRunLog)> {
    spec.validate()?;
    let mut jobs: Vec<(&QaPair, &CodeDefinition, &PromptTemplate)> = Vec::new();
    for code in codes {
        templates.get(&code.code_name)?;
    }
    for interview in corpus.interviews.iter().filter(|i| targets.contains(&i.split)) {
        for qa in &interview.qa_pairs {
            for code in codes {
                jobs.push((qa, code, templates.get(&code.code_name)?));
            }
        }
    }
    jobs.sort_by(|a, b| {
        (&a.0.interview_id, a.0.qa_index, &a.1.code_name).cmp(&(&b.0.interview_id, b.0.qa_index, &b.1.code_name))
    });

    let caller = Caller::new(provider, cache, spec);
    let entries: Vec<RunLogEntry> = run_in_pool(spec.parallelism, || {
        jobs.par_iter()
            .map(|(qa, code, template)| {
                let request = ChatRequest {
                    model: provider.model_id().to_string(),
                    temperature: spec.temperature,
                    messages: build_annotation_prompt_with(template, qa, spec.layout),
                    seed: None,
                };
                let out = caller.call(&request, |raw| match parse_label_response(raw, code) {
                    LabelOutcome::Malformed => None,
                    ok => Some(ok),
                });
                RunLogEntry {
                    interview_id: qa.interview_id.clone(),
                    qa_index: qa.qa_index,
                    code: code.code_name.clone(),
                    prompt_sha256: request.prompt_hash(),
                    raw_response: out.raw,
                    outcome: out.value.unwrap_or(LabelOutcome::Malformed),
                    retries: out.retries,
                    cache_hit: out.cache_hit,
                    error: out.error,
                }
            })
            .collect()
    });

    let mut set = AnnotationSet::new(source_id, Provenance::LlmPrediction);
    for e in &entries {
        if e.error.is_none() {
            set.insert(CellKey::new(e.interview_id.clone(), e.qa_index, e.code.clone()), e.outcome.cell())?;
        }
    }
    let log = AnnotationRunLog {
        model_id: provider.model_id().to_string(),
        temperature: spec.temperature,
        provider_calls: caller.provider_calls(),
        entries,
    };
    if log.failed() > 0 {
        log::warn!("{} requests failed after retries; their cells are missing", log.failed());
    }
    Ok((set, log))
}

pub fn build_augmentation_prompt(qa: &QaPair) -> Vec<Message> {
    build_augmentation_prompt_with(qa, PromptLayout::SystemAndUser)
}

pub fn build_augmentation_prompt_with(qa: &QaPair, layout: PromptLayout) -> Vec<Message> {
    apply_layout(AUGMENTATION_SYSTEM_PROMPT.to_string(), dialogue(qa), layout)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueDraft {
    pub question: String,
    pub answer: String,
}

/// Exactly one `Interviewer:` line followed later by exactly one
/// `Respondent:` line. Continuation lines join their speaker's text.
pub fn parse_augmented_dialogue(raw: &str) -> Option<DialogueDraft> {
    #[derive(PartialEq)]
    enum Speaker {
        None,
        Interviewer,
        Respondent,
    }
    let mut current = Speaker::None;
    let (mut question, mut answer) = (Vec::new(), Vec::new());
    let (mut n_q, mut n_a) = (0, 0);
    for line in raw.lines() {
        let t = line.trim();
        if let Some(rest) = t.strip_prefix("Interviewer:") {
            if n_a > 0 {
                return None;
            }
            n_q += 1;
            current = Speaker::Interviewer;
            question.push(rest.trim());
        } else if let Some(rest) = t.strip_prefix("Respondent:") {
            if n_q == 0 {
                return None;
            }
            n_a += 1;
            current = Speaker::Respondent;
            answer.push(rest.trim());
        } else if !t.is_empty() {
            match current {
                Speaker::Interviewer => question.push(t),
                Speaker::Respondent => answer.push(t),
                Speaker::None => {}
            }
        }
    }
    if n_q != 1 || n_a != 1 {
        return None;
    }
    let question = question.join(" ").trim().to_string();
    let answer = answer.join(" ").trim().to_string();
    (!question.is_empty() && !answer.is_empty()).then_some(DialogueDraft { question, answer })
}

/// A QA pair with its labels for every code.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledQa {
    pub qa: QaPair,
    pub labels: BTreeMap<String, u8>,
    #[serde(default)]
    pub augmented: bool,
    /// `(interview, qa_index)` of the source unit for augmented rows.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_qa_index: Option<usize>,
}

/// Gold-labeled units of the interviews in `splits`, all codes attached.
pub fn labeled_units(corpus: &Corpus, splits: &[Split]) -> Result<Vec<LabeledQa>> {
    let gold = corpus
        .gold()
        .ok_or_else(|| Error::Invalid("corpus has no gold annotation set".into()))?;
    Ok(corpus
        .interviews
        .iter()
        .filter(|i| splits.contains(&i.split))
        .flat_map(|i| &i.qa_pairs)
        .map(|qa| LabeledQa {
            labels: gold.unit_labels(&qa.key()),
            qa: qa.clone(),
            augmented: false,
            source_qa_index: None,
        })
        .filter(|u| !u.labels.is_empty())
        .collect())
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AugmentationLog {
    pub requested: usize,
    pub accepted: usize,
    pub provider_calls: usize,
    /// `(interview, qa_index, revision, reason)` for each dropped revision.
    pub dropped: Vec<(String, usize, usize, String)>,
}

/// Appends up to `n_per_unit` paraphrased revisions of each unit, carrying
/// the source unit's labels unchanged. Originals always come first.
pub fn augment_labeled_set(
    units: &[LabeledQa],
    provider: &dyn ChatProvider,
    spec: &ProviderSpec,
    cache: &ResponseCache,
    n_per_unit: usize,
    seed: u64,
) -> Result<(Vec<LabeledQa>, AugmentationLog)> {
    if n_per_unit == 0 {
        return Err(Error::Config("n_per_unit must be at least 1".into()));
    }
    spec.validate()?;
    let caller = Caller::new(provider, cache, spec);
    let jobs: Vec<(usize, usize)> = (0..units.len())
        .flat_map(|u| (1..=n_per_unit).map(move |r| (u, r)))
        .collect();
    let results: Vec<CallOutcome<DialogueDraft>> = run_in_pool(spec.parallelism, || {
        jobs.par_iter()
            .map(|&(u, r)| {
                let request = ChatRequest {
                    model: provider.model_id().to_string(),
                    temperature: spec.augmentation_temperature,
                    messages: build_augmentation_prompt_with(&units[u].qa, spec.layout),
                    seed: Some(seed.wrapping_add(r as u64)),
                };
                caller.call(&request, parse_augmented_dialogue)
            })
            .collect()
    });

    let mut out: Vec<LabeledQa> = units.to_vec();
    let mut log = AugmentationLog {
        requested: jobs.len(),
        ..Default::default()
    };
    for (&(u, r), res) in jobs.iter().zip(results) {
        let src = &units[u];
        if let Some(e) = &res.error {
            if res.value.is_none() {
                return Err(Error::Provider(format!(
                    "augmenting {}#{}: {e}",
                    src.qa.interview_id, src.qa.qa_index
                )));
            }
        }
        match res.value {
            Some(draft) => {
                log.accepted += 1;
                out.push(LabeledQa {
                    qa: QaPair {
                        interview_id: src.qa.interview_id.clone(),
                        qa_index: src.qa.qa_index + r * AUGMENTED_INDEX_STRIDE,
                        question: draft.question,
                        answer: draft.answer,
                    },
                    labels: src.labels.clone(),
                    augmented: true,
                    source_qa_index: Some(src.qa.qa_index),
                });
            }
            None => {
                log::info!("dropped malformed revision {r} of {}#{}", src.qa.interview_id, src.qa.qa_index);
                log.dropped.push((src.qa.interview_id.clone(), src.qa.qa_index, r, "malformed".into()));
            }
        }
    }
    log.provider_calls = caller.provider_calls();
    Ok((out, log))
}

/// Per-code training units from labeled rows, augmented rows flagged.
pub fn training_units_for(rows: &[LabeledQa], code: &str) -> Vec<crate::pipeline::TrainingUnit> {
    rows.iter()
        .filter_map(|r| {
            r.labels.get(code).map(|&label| crate::pipeline::TrainingUnit {
                qa: r.qa.clone(),
                label,
                augmented: r.augmented,
            })
        })
        .collect()
}

/// Labels of augmented rows as an annotation set.
pub fn augmented_annotations(rows: &[LabeledQa], source_id: &str) -> Result<AnnotationSet> {
    let mut set = AnnotationSet::new(source_id, Provenance::Augmented);
    for r in rows.iter().filter(|r| r.augmented) {
        for (code, &label) in &r.labels {
            set.insert(CellKey::new(r.qa.interview_id.clone(), r.qa.qa_index, code.clone()), label)?;
        }
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::default_codebook;

    fn worked_qa() -> QaPair {
        QaPair {
            interview_id: "worked".into(),
            qa_index: 0,
            question: "What is your dream about your son who is studying in class one?".into(),
            answer: "Still in Noorani. After reading Noorani, he will read Hafezi. By the grace of Allah, he will teach in a madrasa when he becomes a hafez. That is my dream.".into(),
        }
    }

    fn code(name: &str) -> CodeDefinition {
        default_codebook().into_iter().find(|c| c.code_name == name).unwrap()
    }

    #[test]
    fn bundled_templates_cover_codebook() {
        let store = TemplateStore::bundled();
        assert_eq!(store.len(), 19);
        for c in default_codebook() {
            let t = store.get(&c.code_name).unwrap();
            assert_eq!(t.positive_label, c.positive_label_string);
            assert!(t.verbatim);
        }
    }

    #[test]
    fn prompt_layout() {
        let store = TemplateStore::bundled();
        let t = store.get("aspiration_religious").unwrap();
        let msgs = build_annotation_prompt(t, &worked_qa());
        assert_eq!(msgs.len(), 2);
        assert_eq!(msgs[0].role, Role::System);
        assert_eq!(msgs[0].content, t.system_prompt);
        let user = &msgs[1].content;
        assert_eq!(user.matches(INPUT_MARKER).count(), 5);
        assert!(user.ends_with(
            "### Input:\nInterviewer: What is your dream about your son who is studying in class one?\nRespondent: Still in Noorani. After reading Noorani, he will read Hafezi. By the grace of Allah, he will teach in a madrasa when he becomes a hafez. That is my dream.\n### Output:"
        ));
        assert_eq!(msgs, build_annotation_prompt(t, &worked_qa()));
        let single = build_annotation_prompt_with(t, &worked_qa(), PromptLayout::SingleUser);
        assert_eq!(single.len(), 1);
        assert!(single[0].content.starts_with(&t.system_prompt));
    }

    #[test]
    fn three_examples_rejected() {
        let mut t = TemplateStore::bundled().get("marriage").unwrap().clone();
        t.few_shot.pop();
        assert!(t.validate().is_err());
        let mut t2 = TemplateStore::bundled().get("marriage").unwrap().clone();
        t2.few_shot[0].label = "Maybe".into();
        assert!(t2.validate().is_err());
    }

    #[test]
    fn label_parsing() {
        let c = code("aspiration_religious");
        let worked_out = "Interpretation: The parent wants the child to become a hafez and teach in a madrasa. Label: Religious Aspiration";
        assert_eq!(parse_label_response(worked_out, &c), LabelOutcome::Positive);
        assert_eq!(parse_label_response("Interpretation: none. Label: Not Applicable", &c), LabelOutcome::Negative);
        assert_eq!(parse_label_response("I cannot determine this.", &c), LabelOutcome::Malformed);
        assert_eq!(parse_label_response("Label: religious aspirations.", &c), LabelOutcome::Positive);
        assert_eq!(parse_label_response("Label: \"Religious Aspiration\"", &c), LabelOutcome::Positive);
        assert_eq!(parse_label_response("Label: **not applicable**\n", &c), LabelOutcome::Negative);
        assert_eq!(
            parse_label_response("Label: Not Applicable ... on reflection Label: Religious Aspiration", &c),
            LabelOutcome::Positive
        );
        assert_eq!(parse_label_response("Label: Secular Aspiration", &c), LabelOutcome::Malformed);
        assert_eq!(parse_label_response("Label:", &c), LabelOutcome::Malformed);
    }

    #[test]
    fn exemplar_outputs_round_trip() {
        let store = TemplateStore::bundled();
        let mut n = 0;
        for t in store.iter() {
            let c = t.code_definition();
            for ex in &t.few_shot {
                let want = if ex.label == NEGATIVE_LABEL {
                    LabelOutcome::Negative
                } else {
                    LabelOutcome::Positive
                };
                assert_eq!(parse_label_response(&PromptTemplate::example_output(ex), &c), want, "{}", t.code_name);
                n += 1;
            }
        }
        assert_eq!(n, 76);
    }

    #[test]
    fn augmentation_prompt_and_parse() {
        let msgs = build_augmentation_prompt(&worked_qa());
        assert!(msgs[0].content.starts_with("Revise a given dialogue"));
        assert!(msgs[0].content.contains("Interviewer: (question/statement by the interviewer)"));
        assert!(msgs[1].content.starts_with("Interviewer: What is your dream"));
        assert_eq!(msgs, build_augmentation_prompt(&worked_qa()));

        assert_eq!(
            parse_augmented_dialogue("Interviewer: X?\nRespondent: Y."),
            Some(DialogueDraft { question: "X?".into(), answer: "Y.".into() })
        );
        assert_eq!(parse_augmented_dialogue("Interviewer: X?\nRespondent: Y.\nRespondent: Z."), None);
        assert_eq!(parse_augmented_dialogue("Respondent: Y.\nInterviewer: X?"), None);
        assert_eq!(parse_augmented_dialogue("nothing here"), None);
        assert_eq!(
            parse_augmented_dialogue("Sure, here it is:\n  Interviewer: A\n  Respondent: B\n  more of B"),
            Some(DialogueDraft { question: "A".into(), answer: "B more of B".into() })
        );
    }

    #[test]
    fn cache_keys_separate_model_temperature_and_seed() {
        let base = ChatRequest {
            model: "m".into(),
            temperature: 0.0,
            messages: vec![Message::user("hi")],
            seed: None,
        };
        let k = base.cache_key();
        assert_eq!(k, base.clone().cache_key());
        assert_ne!(k, ChatRequest { model: "n".into(), ..base.clone() }.cache_key());
        assert_ne!(k, ChatRequest { temperature: 0.7, ..base.clone() }.cache_key());
        assert_ne!(k, ChatRequest { seed: Some(1), ..base.clone() }.cache_key());
    }

    #[test]
    fn retry_delays_double() {
        let p = ProviderSpec::default().retry_policy();
        assert_eq!(p.delay(1), Duration::from_secs(1));
        assert_eq!(p.delay(2), Duration::from_secs(2));
        assert_eq!(p.delay(3), Duration::from_secs(4));
    }

    #[test]
    fn completion_shapes() {
        let openai = serde_json::json!({"choices": [{"message": {"role": "assistant", "content": "Label: X"}}]});
        assert_eq!(extract_completion(&openai).as_deref(), Some("Label: X"));
        let ollama = serde_json::json!({"message": {"content": "hi"}});
        assert_eq!(extract_completion(&ollama).as_deref(), Some("hi"));
        assert_eq!(extract_completion(&serde_json::json!({"error": "x"})), None);
    }

    struct Flaky {
        fail_first: usize,
        calls: AtomicUsize,
    }

    impl ChatProvider for Flaky {
        fn model_id(&self) -> &str {
            "flaky"
        }
        fn complete(&self, _: &ChatRequest) -> Result<String> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            if n < self.fail_first {
                Err(Error::Provider("connection reset".into()))
            } else {
                Ok("Label: Not Applicable".into())
            }
        }
    }

    #[test]
    fn caller_retries_transport_errors() {
        let spec = ProviderSpec {
            backoff_base_ms: 1,
            max_retries: 2,
            ..Default::default()
        };
        let req = ChatRequest {
            model: "flaky".into(),
            temperature: 0.0,
            messages: vec![Message::user("x")],
            seed: None,
        };
        let parse = |s: &str| (s.contains("Label:")).then_some(());
        let cache = ResponseCache::Disabled;
        let ok = Flaky { fail_first: 2, calls: AtomicUsize::new(0) };
        let out = Caller::new(&ok, &cache, &spec).call(&req, parse);
        assert_eq!(out.value, Some(()));
        assert_eq!(out.retries, 2);
        assert!(out.error.is_none());
        let down = Flaky { fail_first: 10, calls: AtomicUsize::new(0) };
        let out = Caller::new(&down, &cache, &spec).call(&req, parse);
        assert_eq!(out.value, None);
        assert!(out.error.is_some());
        assert_eq!(down.calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn directory_cache_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::directory(dir.path()).unwrap();
        let req = ChatRequest {
            model: "m".into(),
            temperature: 0.0,
            messages: vec![Message::user("x")],
            seed: None,
        };
        let key = req.cache_key();
        assert_eq!(cache.get(&key), None);
        cache.put(&key, &req, "Label: A").unwrap();
        assert_eq!(cache.get(&key).as_deref(), Some("Label: A"));
        let reopened = ResponseCache::directory(dir.path()).unwrap();
        assert_eq!(reopened.get(&key).as_deref(), Some("Label: A"));
    }

    #[test]
    fn rate_limiter_spaces_requests() {
        let l = RateLimiter::per_minute(1200);
        let start = Instant::now();
        for _ in 0..4 {
            l.acquire();
        }
        assert!(start.elapsed() >= Duration::from_millis(140));
    }
}
