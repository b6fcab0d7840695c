//! LLM-as-a-judge client for the three judged scores: context relevancy,
//! answer relevancy, and context adherence.
//!
//! Replies must carry a JSON object with a `score` field in [0, 1]; anything
//! else is retried up to the configured budget and then surfaced with the
//! raw reply attached. Scores are cached by prompt hash so warm-cache runs
//! are deterministic and free.

use std::collections::VecDeque;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cache::{content_key, CacheError, DiskCache};

pub const DEFAULT_CONTEXT_RELEVANCY_PROMPT: &str =
    include_str!("../assets/prompt_context_relevancy.txt");
pub const DEFAULT_ANSWER_RELEVANCY_PROMPT: &str =
    include_str!("../assets/prompt_answer_relevancy.txt");
pub const DEFAULT_CONTEXT_ADHERENCE_PROMPT: &str =
    include_str!("../assets/prompt_context_adherence.txt");

#[derive(Debug, Error)]
pub enum JudgeError {
    #[error("empty {0}")]
    EmptyInput(&'static str),
    #[error("judge reply carries no JSON object with a \"score\" field; raw reply: {raw:?}")]
    NoScore { raw: String },
    #[error("judge score has wrong type; raw reply: {raw:?}")]
    ScoreType { raw: String },
    #[error("judge score {value} outside [0, 1]; raw reply: {raw:?}")]
    OutOfRange { value: f64, raw: String },
    #[error("judge provider failed after {attempts} attempts: {message}")]
    Provider { attempts: usize, message: String },
    #[error("offline run with cold judge cache; missing keys: {}", .missing.join(", "))]
    Offline { missing: Vec<String> },
    #[error(transparent)]
    Cache(#[from] CacheError),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JudgeConfig {
    pub endpoint_url: String,
    pub model_id: String,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_retries")]
    pub max_retries: usize,
    #[serde(default = "default_adherence_threshold")]
    pub adherence_threshold: f64,
    #[serde(default)]
    pub cache_path: Option<String>,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    #[serde(default)]
    pub api_key_env: Option<String>,
    /// Cache-only mode: any cache miss fails fast, no network is touched.
    #[serde(default)]
    pub offline: bool,
}

fn default_retries() -> usize {
    2
}
fn default_adherence_threshold() -> f64 {
    0.7
}
fn default_timeout_secs() -> u64 {
    60
}

/// One judged score with its provenance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JudgeScore {
    pub value: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rationale: Option<String>,
    pub judge_model: String,
    pub prompt_hash: String,
    /// Provider calls beyond the first needed to get a usable reply.
    #[serde(default)]
    pub retry_count: usize,
}

/// Prompt templates with `{{question}}`, `{{context}}`, `{{answer}}`
/// placeholders. Shipped defaults are editable files.
#[derive(Debug, Clone)]
pub struct PromptTemplates {
    pub context_relevancy: String,
    pub answer_relevancy: String,
    pub context_adherence: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self {
            context_relevancy: DEFAULT_CONTEXT_RELEVANCY_PROMPT.to_string(),
            answer_relevancy: DEFAULT_ANSWER_RELEVANCY_PROMPT.to_string(),
            context_adherence: DEFAULT_CONTEXT_ADHERENCE_PROMPT.to_string(),
        }
    }
}

fn render(template: &str, question: &str, context: &str, answer: &str) -> String {
    template
        .replace("{{question}}", question)
        .replace("{{context}}", context)
        .replace("{{answer}}", answer)
}

/// Extracts the first JSON object containing a `score` field and validates
/// its range. Tolerates prose around the JSON.
pub fn parse_judge_reply(raw: &str) -> Result<(f64, Option<String>), JudgeError> {
    for (idx, _) in raw.char_indices().filter(|(_, c)| *c == '{') {
        let mut stream =
            serde_json::Deserializer::from_str(&raw[idx..]).into_iter::<serde_json::Value>();
        if let Some(Ok(value)) = stream.next() {
            if let Some(score) = value.get("score") {
                let score = score.as_f64().ok_or_else(|| JudgeError::ScoreType {
                    raw: raw.to_string(),
                })?;
                if !(0.0..=1.0).contains(&score) {
                    return Err(JudgeError::OutOfRange {
                        value: score,
                        raw: raw.to_string(),
                    });
                }
                let rationale = value
                    .get("rationale")
                    .and_then(|r| r.as_str())
                    .map(str::to_string);
                return Ok((score, rationale));
            }
        }
    }
    Err(JudgeError::NoScore {
        raw: raw.to_string(),
    })
}

/// Completion provider behind the judge; lets tests script replies.
pub trait ChatBackend: Send + Sync {
    fn complete(&self, prompt: &str, config: &JudgeConfig) -> Result<String, String>;
}

/// Chat-completion wire client:
/// `{model, messages:[{role, content}], temperature}` ->
/// `{choices:[{message:{content}}]}`.
pub struct HttpChatBackend {
    client: reqwest::blocking::Client,
}

impl HttpChatBackend {
    pub fn new(timeout_secs: u64) -> Result<Self, JudgeError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(timeout_secs.max(1)))
            .build()
            .map_err(|e| JudgeError::Provider {
                attempts: 0,
                message: e.to_string(),
            })?;
        Ok(Self { client })
    }
}

impl ChatBackend for HttpChatBackend {
    fn complete(&self, prompt: &str, config: &JudgeConfig) -> Result<String, String> {
        let body = serde_json::json!({
            "model": config.model_id,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": config.temperature,
        });
        let mut request = self.client.post(&config.endpoint_url).json(&body);
        if let Some(env_name) = &config.api_key_env {
            if let Ok(key) = std::env::var(env_name) {
                request = request.bearer_auth(key);
            }
        }
        let response = request.send().map_err(|e| e.to_string())?;
        if !response.status().is_success() {
            return Err(format!("http status {}", response.status()));
        }
        let value: serde_json::Value = response.json().map_err(|e| e.to_string())?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| "reply carries no choices[0].message.content".to_string())
    }
}

/// Scripted backend for tests: pops one canned reply per call.
pub struct ScriptedBackend {
    replies: Mutex<VecDeque<Result<String, String>>>,
    pub calls: std::sync::atomic::AtomicUsize,
}

impl ScriptedBackend {
    pub fn new(replies: Vec<Result<String, String>>) -> Self {
        Self {
            replies: Mutex::new(replies.into_iter().collect()),
            calls: std::sync::atomic::AtomicUsize::new(0),
        }
    }

    pub fn call_count(&self) -> usize {
        self.calls.load(std::sync::atomic::Ordering::SeqCst)
    }
}

impl ChatBackend for ScriptedBackend {
    fn complete(&self, _prompt: &str, _config: &JudgeConfig) -> Result<String, String> {
        self.calls.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
        self.replies
            .lock()
            .unwrap()
            .pop_front()
            .unwrap_or_else(|| Err("scripted backend exhausted".to_string()))
    }
}

impl<T: ChatBackend> ChatBackend for std::sync::Arc<T> {
    fn complete(&self, prompt: &str, config: &JudgeConfig) -> Result<String, String> {
        (**self).complete(prompt, config)
    }
}

#[derive(Clone, Serialize, Deserialize)]
struct CachedScore {
    value: f64,
    rationale: Option<String>,
}

/// The judge client: templates + backend + cache + retry budget.
pub struct Judge {
    pub config: JudgeConfig,
    pub templates: PromptTemplates,
    backend: Box<dyn ChatBackend>,
    cache: DiskCache<CachedScore>,
}

impl Judge {
    pub fn new(config: JudgeConfig, backend: Box<dyn ChatBackend>) -> Result<Self, JudgeError> {
        let cache = match &config.cache_path {
            Some(path) => DiskCache::open(path)?,
            None => DiskCache::ephemeral(),
        };
        Ok(Self {
            config,
            templates: PromptTemplates::default(),
            backend,
            cache,
        })
    }

    pub fn with_templates(mut self, templates: PromptTemplates) -> Self {
        self.templates = templates;
        self
    }

    pub fn http(config: JudgeConfig) -> Result<Self, JudgeError> {
        let backend = Box::new(HttpChatBackend::new(config.timeout_secs)?);
        Self::new(config, backend)
    }

    fn prompt_hash(&self, prompt: &str) -> String {
        content_key(&[
            &self.config.model_id,
            &format!("{}", self.config.temperature),
            prompt,
        ])
    }

    fn judge_prompt(&self, prompt: &str) -> Result<JudgeScore, JudgeError> {
        let hash = self.prompt_hash(prompt);
        if let Some(cached) = self.cache.get(&hash) {
            return Ok(JudgeScore {
                value: cached.value,
                rationale: cached.rationale,
                judge_model: self.config.model_id.clone(),
                prompt_hash: hash,
                retry_count: 0,
            });
        }
        if self.config.offline {
            return Err(JudgeError::Offline { missing: vec![hash] });
        }
        let attempts = self.config.max_retries + 1;
        let mut last_err: Option<JudgeError> = None;
        for attempt in 0..attempts {
            match self.backend.complete(prompt, &self.config) {
                Ok(raw) => match parse_judge_reply(&raw) {
                    Ok((value, rationale)) => {
                        self.cache.put(
                            &hash,
                            CachedScore {
                                value,
                                rationale: rationale.clone(),
                            },
                        )?;
                        return Ok(JudgeScore {
                            value,
                            rationale,
                            judge_model: self.config.model_id.clone(),
                            prompt_hash: hash,
                            retry_count: attempt,
                        });
                    }
                    Err(e) => last_err = Some(e),
                },
                Err(message) => {
                    last_err = Some(JudgeError::Provider { attempts, message })
                }
            }
        }
        Err(last_err.unwrap_or(JudgeError::Provider {
            attempts,
            message: "no reply".into(),
        }))
    }

    /// How well a retrieved context can potentially answer the question.
    pub fn judge_context_relevancy(
        &self,
        question: &str,
        context: &str,
    ) -> Result<JudgeScore, JudgeError> {
        if question.is_empty() {
            return Err(JudgeError::EmptyInput("question"));
        }
        if context.is_empty() {
            return Err(JudgeError::EmptyInput("context"));
        }
        let prompt = render(&self.templates.context_relevancy, question, context, "");
        self.judge_prompt(&prompt)
    }

    /// Whether the answer directly and completely addresses the question.
    pub fn judge_answer_relevancy(
        &self,
        question: &str,
        answer: &str,
    ) -> Result<JudgeScore, JudgeError> {
        if question.is_empty() {
            return Err(JudgeError::EmptyInput("question"));
        }
        if answer.is_empty() {
            return Err(JudgeError::EmptyInput("answer"));
        }
        let prompt = render(&self.templates.answer_relevancy, question, "", answer);
        self.judge_prompt(&prompt)
    }

    /// Whether the answer is grounded in the rank-labeled contexts, judged
    /// against all of them jointly.
    pub fn judge_context_adherence(
        &self,
        answer: &str,
        contexts: &[String],
    ) -> Result<JudgeScore, JudgeError> {
        if answer.is_empty() {
            return Err(JudgeError::EmptyInput("answer"));
        }
        if contexts.is_empty() {
            return Err(JudgeError::EmptyInput("contexts"));
        }
        let labeled: Vec<String> = contexts
            .iter()
            .enumerate()
            .map(|(i, c)| format!("Context {}: {}", i + 1, c))
            .collect();
        let prompt = render(
            &self.templates.context_adherence,
            "",
            &labeled.join("\n"),
            answer,
        );
        self.judge_prompt(&prompt)
    }
}
