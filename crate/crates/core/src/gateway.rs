//! Chat-completion access: a live HTTP client with retries, and a
//! fingerprint-keyed record/replay store for deterministic offline runs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::prompt::PromptBundle;

pub const API_KEY_VAR: &str = "PRIVSTORY_API_KEY";
pub const BASE_URL_VAR: &str = "PRIVSTORY_BASE_URL";
pub const DEFAULT_BASE_URL: &str = "https://api.openai.com/v1";
pub const DEFAULT_TEMPERATURE: f64 = 0.7;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    #[default]
    RemoteChat,
    Replay,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub initial_backoff_ms: u64,
    pub max_backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 4,
            initial_backoff_ms: 1000,
            max_backoff_ms: 30_000,
        }
    }
}

impl RetryPolicy {
    /// Exponential backoff before attempt `attempt + 1` (attempts count from 1).
    pub fn backoff(&self, attempt: u32) -> Duration {
        let factor = 1u64 << (attempt.saturating_sub(1)).min(20);
        Duration::from_millis(self.initial_backoff_ms.saturating_mul(factor).min(self.max_backoff_ms))
    }
}

fn default_temperature() -> f64 {
    DEFAULT_TEMPERATURE
}

fn default_max_tokens() -> u32 {
    4096
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default)]
    pub provider_kind: ProviderKind,
    pub model_name: String,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_output_tokens: u32,
    #[serde(default)]
    pub retry: RetryPolicy,
    #[serde(default)]
    pub request_timeout_secs: Option<u64>,
}

impl ModelConfig {
    pub fn new(model_name: impl Into<String>) -> Self {
        ModelConfig {
            provider_kind: ProviderKind::RemoteChat,
            model_name: model_name.into(),
            temperature: DEFAULT_TEMPERATURE,
            max_output_tokens: default_max_tokens(),
            retry: RetryPolicy::default(),
            request_timeout_secs: None,
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.model_name.trim().is_empty() {
            return Err(GatewayError::Config("model_name is empty".into()));
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(GatewayError::Config(format!(
                "temperature must be >= 0, got {}",
                self.temperature
            )));
        }
        if self.retry.max_attempts == 0 {
            return Err(GatewayError::Config("retry.max_attempts must be >= 1".into()));
        }
        Ok(())
    }
}

/// Hex SHA-256 over the request identity.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Fingerprint(pub String);

impl std::fmt::Display for Fingerprint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

fn hash_fields(fields: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for f in fields {
        h.update((f.len() as u64).to_le_bytes());
        h.update(f);
    }
    hex::encode(h.finalize())
}

/// Fingerprint of (system text, user text, model, temperature, response index).
pub fn fingerprint(
    system_text: &str,
    user_text: &str,
    model_name: &str,
    temperature: f64,
    response_index: u32,
) -> Fingerprint {
    Fingerprint(hash_fields(&[
        b"privstory-request-v1",
        system_text.as_bytes(),
        user_text.as_bytes(),
        model_name.as_bytes(),
        &temperature.to_bits().to_le_bytes(),
        &response_index.to_le_bytes(),
    ]))
}

pub fn bundle_fingerprint(b: &PromptBundle, cfg: &ModelConfig, response_index: u32) -> Fingerprint {
    fingerprint(
        &b.system_text,
        &b.user_text,
        &cfg.model_name,
        cfg.temperature,
        response_index,
    )
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawResponse {
    pub document_id: String,
    pub response_index: u32,
    pub request_fingerprint: Fingerprint,
    pub model_name: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency_ms: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_tokens: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub completion_tokens: Option<u64>,
    pub attempt: u32,
}

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("model config: {0}")]
    Config(String),
    #[error("endpoint failed for `{document_id}` after {attempts} attempt(s): {message}")]
    Endpoint {
        document_id: String,
        attempts: u32,
        message: String,
    },
    #[error("no recorded response for fingerprint {fingerprint} (document `{document_id}`, response {response_index})")]
    MissingRecord {
        fingerprint: Fingerprint,
        document_id: String,
        response_index: u32,
    },
    #[error("empty response text for `{0}`")]
    EmptyResponse(String),
    #[error("replay store {path}: {message}")]
    Store { path: String, message: String },
}

// ---- wire schema -------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
}

#[derive(Debug, Deserialize)]
struct ChatResponseWire {
    choices: Vec<ChoiceWire>,
    #[serde(default)]
    usage: Option<UsageWire>,
}

#[derive(Debug, Deserialize)]
struct ChoiceWire {
    message: MessageWire,
}

#[derive(Debug, Deserialize)]
struct MessageWire {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Debug, Deserialize)]
struct UsageWire {
    #[serde(default)]
    prompt_tokens: Option<u64>,
    #[serde(default)]
    completion_tokens: Option<u64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChatReply {
    pub text: String,
    pub prompt_tokens: Option<u64>,
    pub completion_tokens: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct BackendError {
    /// Worth retrying (transport failure, 408, 429, 5xx).
    pub transient: bool,
    pub message: String,
}

pub trait ChatBackend: Send + Sync {
    fn send(&self, request: &ChatRequest) -> Result<ChatReply, BackendError>;
}

pub fn chat_request(bundle: &PromptBundle, cfg: &ModelConfig) -> ChatRequest {
    ChatRequest {
        model: cfg.model_name.clone(),
        messages: vec![
            ChatMessage {
                role: "system".into(),
                content: bundle.system_text.clone(),
            },
            ChatMessage {
                role: "user".into(),
                content: bundle.user_text.clone(),
            },
        ],
        temperature: cfg.temperature,
        max_tokens: cfg.max_output_tokens,
    }
}

/// `POST {base}/chat/completions` with bearer auth.
pub struct HttpChatBackend {
    base_url: String,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl HttpChatBackend {
    pub fn new(base_url: impl Into<String>, api_key: Option<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        HttpChatBackend {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key: api_key.filter(|k| !k.is_empty()),
            agent,
        }
    }

    /// Base URL from `PRIVSTORY_BASE_URL` (default OpenAI), key from `PRIVSTORY_API_KEY`.
    pub fn from_env(cfg: &ModelConfig) -> Self {
        let base = std::env::var(BASE_URL_VAR).unwrap_or_else(|_| DEFAULT_BASE_URL.to_string());
        let key = std::env::var(API_KEY_VAR).ok();
        Self::new(
            base,
            key,
            Duration::from_secs(cfg.request_timeout_secs.unwrap_or(300)),
        )
    }
}

impl ChatBackend for HttpChatBackend {
    fn send(&self, request: &ChatRequest) -> Result<ChatReply, BackendError> {
        let body = serde_json::to_vec(request).map_err(|e| BackendError {
            transient: false,
            message: e.to_string(),
        })?;
        let mut req = self
            .agent
            .post(&format!("{}/chat/completions", self.base_url))
            .header("Content-Type", "application/json");
        if let Some(k) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {k}"));
        }
        let mut resp = req.send(&body[..]).map_err(|e| BackendError {
            transient: true,
            message: e.to_string(),
        })?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(|e| BackendError {
            transient: true,
            message: e.to_string(),
        })?;
        if !(200..300).contains(&status) {
            return Err(BackendError {
                transient: status == 408 || status == 429 || status >= 500,
                message: format!("HTTP {status}: {}", text.chars().take(500).collect::<String>()),
            });
        }
        let wire: ChatResponseWire = serde_json::from_str(&text).map_err(|e| BackendError {
            transient: false,
            message: format!("unparseable completion: {e}"),
        })?;
        let content = wire
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .unwrap_or_default();
        Ok(ChatReply {
            text: content,
            prompt_tokens: wire.usage.as_ref().and_then(|u| u.prompt_tokens),
            completion_tokens: wire.usage.as_ref().and_then(|u| u.completion_tokens),
        })
    }
}

// ---- providers ---------------------------------------------------------

pub trait CompletionProvider: Send + Sync {
    fn config(&self) -> &ModelConfig;

    fn complete(&self, bundle: &PromptBundle, response_index: u32) -> Result<RawResponse, GatewayError>;
}

/// Live completions through a [`ChatBackend`], retrying transient failures.
pub struct LiveProvider<B> {
    config: ModelConfig,
    backend: B,
}

impl<B: ChatBackend> LiveProvider<B> {
    pub fn new(config: ModelConfig, backend: B) -> Result<Self, GatewayError> {
        config.validate()?;
        Ok(LiveProvider { config, backend })
    }
}

impl<B: ChatBackend> CompletionProvider for LiveProvider<B> {
    fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn complete(&self, bundle: &PromptBundle, response_index: u32) -> Result<RawResponse, GatewayError> {
        let request = chat_request(bundle, &self.config);
        let fp = bundle_fingerprint(bundle, &self.config, response_index);
        let mut attempt = 0;
        loop {
            attempt += 1;
            let started = Instant::now();
            match self.backend.send(&request) {
                Ok(reply) => {
                    if reply.text.trim().is_empty() {
                        return Err(GatewayError::EmptyResponse(bundle.document_id.clone()));
                    }
                    return Ok(RawResponse {
                        document_id: bundle.document_id.clone(),
                        response_index,
                        request_fingerprint: fp,
                        model_name: self.config.model_name.clone(),
                        text: reply.text,
                        latency_ms: Some(started.elapsed().as_millis() as u64),
                        prompt_tokens: reply.prompt_tokens,
                        completion_tokens: reply.completion_tokens,
                        attempt,
                    });
                }
                Err(e) if e.transient && attempt < self.config.retry.max_attempts => {
                    let wait = self.config.retry.backoff(attempt);
                    log::warn!(
                        "{}: attempt {attempt} failed ({}); retrying in {wait:?}",
                        bundle.document_id,
                        e.message
                    );
                    std::thread::sleep(wait);
                }
                Err(e) => {
                    return Err(GatewayError::Endpoint {
                        document_id: bundle.document_id.clone(),
                        attempts: attempt,
                        message: e.message,
                    })
                }
            }
        }
    }
}

/// Serves recorded responses by fingerprint. Never touches the network.
pub struct ReplayProvider {
    config: ModelConfig,
    store: Arc<ReplayStore>,
}

impl ReplayProvider {
    pub fn new(config: ModelConfig, store: Arc<ReplayStore>) -> Self {
        ReplayProvider { config, store }
    }
}

impl CompletionProvider for ReplayProvider {
    fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn complete(&self, bundle: &PromptBundle, response_index: u32) -> Result<RawResponse, GatewayError> {
        let fp = bundle_fingerprint(bundle, &self.config, response_index);
        let text = self.store.get(&fp)?.ok_or_else(|| GatewayError::MissingRecord {
            fingerprint: fp.clone(),
            document_id: bundle.document_id.clone(),
            response_index,
        })?;
        if text.trim().is_empty() {
            return Err(GatewayError::EmptyResponse(bundle.document_id.clone()));
        }
        Ok(RawResponse {
            document_id: bundle.document_id.clone(),
            response_index,
            request_fingerprint: fp,
            model_name: self.config.model_name.clone(),
            text,
            latency_ms: None,
            prompt_tokens: None,
            completion_tokens: None,
            attempt: 1,
        })
    }
}

/// Wraps a provider and persists every response into a store.
pub struct Recorder<P> {
    inner: P,
    store: Arc<ReplayStore>,
}

impl<P: CompletionProvider> Recorder<P> {
    pub fn new(inner: P, store: Arc<ReplayStore>) -> Self {
        Recorder { inner, store }
    }
}

impl<P: CompletionProvider> CompletionProvider for Recorder<P> {
    fn config(&self) -> &ModelConfig {
        self.inner.config()
    }

    fn complete(&self, bundle: &PromptBundle, response_index: u32) -> Result<RawResponse, GatewayError> {
        record(&self.inner, bundle, response_index, &self.store)
    }
}

/// Complete through `provider` and persist the result; re-recording the same
/// fingerprint overwrites.
pub fn record(
    provider: &dyn CompletionProvider,
    bundle: &PromptBundle,
    response_index: u32,
    store: &ReplayStore,
) -> Result<RawResponse, GatewayError> {
    let resp = provider.complete(bundle, response_index)?;
    store.put(bundle, provider.config(), &resp)?;
    Ok(resp)
}

// ---- replay store ------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoreEntry {
    pub document_id: String,
    pub response_index: u32,
    pub model_name: String,
    pub temperature: f64,
    /// Hash of (system, user) text; the prompt lives in `prompts/<hash>.json`.
    pub prompt_hash: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoredPrompt {
    pub system_text: String,
    pub user_text: String,
}

/// Directory layout:
///
/// ```text
/// index.json              fingerprint -> StoreEntry
/// records/<fp>.txt        response text
/// prompts/<hash>.json     system + user prompt
/// ```
pub struct ReplayStore {
    dir: PathBuf,
    index: RwLock<BTreeMap<Fingerprint, StoreEntry>>,
    writer: Mutex<()>,
}

impl ReplayStore {
    /// Open (creating if needed) a store directory.
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, GatewayError> {
        let dir = dir.into();
        let store_err = |m: String| GatewayError::Store {
            path: dir.display().to_string(),
            message: m,
        };
        std::fs::create_dir_all(dir.join("records")).map_err(|e| store_err(e.to_string()))?;
        std::fs::create_dir_all(dir.join("prompts")).map_err(|e| store_err(e.to_string()))?;
        let index_path = dir.join("index.json");
        let index = if index_path.exists() {
            let bytes = std::fs::read(&index_path).map_err(|e| store_err(e.to_string()))?;
            serde_json::from_slice(&bytes).map_err(|e| store_err(format!("bad index: {e}")))?
        } else {
            BTreeMap::new()
        };
        Ok(ReplayStore {
            dir,
            index: RwLock::new(index),
            writer: Mutex::new(()),
        })
    }

    /// Open an existing store without creating anything.
    pub fn open_existing(dir: &Path) -> Result<Self, GatewayError> {
        if !dir.join("index.json").exists() {
            return Err(GatewayError::Store {
                path: dir.display().to_string(),
                message: "no index.json; record responses first".into(),
            });
        }
        Self::open(dir)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn err(&self, message: impl Into<String>) -> GatewayError {
        GatewayError::Store {
            path: self.dir.display().to_string(),
            message: message.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.index.read().expect("index lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, fp: &Fingerprint) -> bool {
        self.index.read().expect("index lock").contains_key(fp)
    }

    pub fn get(&self, fp: &Fingerprint) -> Result<Option<String>, GatewayError> {
        if !self.contains(fp) {
            return Ok(None);
        }
        let path = self.dir.join("records").join(format!("{fp}.txt"));
        std::fs::read_to_string(&path)
            .map(Some)
            .map_err(|e| self.err(format!("{}: {e}", path.display())))
    }

    pub fn entries(&self) -> Vec<(Fingerprint, StoreEntry)> {
        self.index
            .read()
            .expect("index lock")
            .iter()
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect()
    }

    /// Recorded response for a document and response index, optionally
    /// restricted to one model. Ties go to the smallest fingerprint.
    pub fn find(
        &self,
        document_id: &str,
        response_index: u32,
        model_name: Option<&str>,
    ) -> Option<(Fingerprint, StoreEntry)> {
        self.index
            .read()
            .expect("index lock")
            .iter()
            .find(|(_, e)| {
                e.document_id == document_id
                    && e.response_index == response_index
                    && model_name.is_none_or(|m| e.model_name == m)
            })
            .map(|(k, v)| (k.clone(), v.clone()))
    }

    pub fn prompt(&self, entry: &StoreEntry) -> Result<StoredPrompt, GatewayError> {
        let path = self.dir.join("prompts").join(format!("{}.json", entry.prompt_hash));
        let bytes = std::fs::read(&path).map_err(|e| self.err(format!("{}: {e}", path.display())))?;
        serde_json::from_slice(&bytes).map_err(|e| self.err(e.to_string()))
    }

    pub fn put(
        &self,
        bundle: &PromptBundle,
        cfg: &ModelConfig,
        resp: &RawResponse,
    ) -> Result<(), GatewayError> {
        let _guard = self.writer.lock().expect("writer lock");
        let prompt_hash = hash_fields(&[bundle.system_text.as_bytes(), bundle.user_text.as_bytes()]);
        let prompt = StoredPrompt {
            system_text: bundle.system_text.clone(),
            user_text: bundle.user_text.clone(),
        };
        let prompt_path = self.dir.join("prompts").join(format!("{prompt_hash}.json"));
        write_atomic(
            &prompt_path,
            &serde_json::to_vec_pretty(&prompt).expect("prompt serializes"),
        )
        .map_err(|e| self.err(e.to_string()))?;
        let record_path = self
            .dir
            .join("records")
            .join(format!("{}.txt", resp.request_fingerprint));
        write_atomic(&record_path, resp.text.as_bytes()).map_err(|e| self.err(e.to_string()))?;

        let snapshot = {
            let mut index = self.index.write().expect("index lock");
            index.insert(
                resp.request_fingerprint.clone(),
                StoreEntry {
                    document_id: resp.document_id.clone(),
                    response_index: resp.response_index,
                    model_name: cfg.model_name.clone(),
                    temperature: cfg.temperature,
                    prompt_hash,
                },
            );
            index.clone()
        };
        let mut json = serde_json::to_vec_pretty(&snapshot).expect("index serializes");
        json.push(b'\n');
        write_atomic(&self.dir.join("index.json"), &json).map_err(|e| self.err(e.to_string()))
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompt::TemplateVariant;
    use std::sync::atomic::{AtomicU32, Ordering};

    fn bundle(id: &str, user: &str) -> PromptBundle {
        PromptBundle {
            document_id: id.into(),
            system_text: "sys".into(),
            user_text: user.into(),
            icl_document_ids: vec![],
            tag_contract: vec![],
            taxonomy_version: "t".into(),
            template_version: "v".into(),
            variant: TemplateVariant::Full,
            warnings: vec![],
        }
    }

    struct Scripted {
        fail_first: u32,
        calls: AtomicU32,
        seen: Mutex<Vec<ChatRequest>>,
    }

    impl ChatBackend for Scripted {
        fn send(&self, request: &ChatRequest) -> Result<ChatReply, BackendError> {
            self.seen.lock().unwrap().push(request.clone());
            let n = self.calls.fetch_add(1, Ordering::SeqCst) + 1;
            if n <= self.fail_first {
                return Err(BackendError {
                    transient: true,
                    message: "503".into(),
                });
            }
            Ok(ChatReply {
                text: format!("reply to {}", request.messages[1].content),
                prompt_tokens: Some(10),
                completion_tokens: Some(5),
            })
        }
    }

    fn scripted(fail_first: u32) -> Scripted {
        Scripted {
            fail_first,
            calls: AtomicU32::new(0),
            seen: Mutex::new(vec![]),
        }
    }

    fn fast_cfg() -> ModelConfig {
        let mut c = ModelConfig::new("m");
        c.retry.initial_backoff_ms = 1;
        c
    }

    #[test]
    fn fingerprint_depends_on_every_field() {
        let base = fingerprint("s", "u", "m", 0.7, 0);
        assert_eq!(base, fingerprint("s", "u", "m", 0.7, 0));
        assert_ne!(base, fingerprint("s2", "u", "m", 0.7, 0));
        assert_ne!(base, fingerprint("s", "u2", "m", 0.7, 0));
        assert_ne!(base, fingerprint("s", "u", "m2", 0.7, 0));
        assert_ne!(base, fingerprint("s", "u", "m", 0.0, 0));
        assert_ne!(base, fingerprint("s", "u", "m", 0.7, 1));
        // field boundaries matter
        assert_ne!(fingerprint("ab", "c", "m", 0.7, 0), fingerprint("a", "bc", "m", 0.7, 0));
    }

    #[test]
    fn temperature_defaults_when_omitted() {
        let cfg: ModelConfig = toml::from_str("model_name = \"llama\"").unwrap();
        assert_eq!(cfg.temperature, 0.7);
        let backend = scripted(0);
        let p = LiveProvider::new(cfg, backend).unwrap();
        p.complete(&bundle("d", "u"), 0).unwrap();
        assert_eq!(p.backend.seen.lock().unwrap()[0].temperature, 0.7);
    }

    #[test]
    fn retries_transient_failures() {
        let p = LiveProvider::new(fast_cfg(), scripted(2)).unwrap();
        let r = p.complete(&bundle("d", "u"), 0).unwrap();
        assert_eq!(r.attempt, 3);
        assert_eq!(r.prompt_tokens, Some(10));
    }

    #[test]
    fn gives_up_after_max_attempts() {
        let p = LiveProvider::new(fast_cfg(), scripted(10)).unwrap();
        match p.complete(&bundle("d", "u"), 0) {
            Err(GatewayError::Endpoint { attempts, .. }) => assert_eq!(attempts, 4),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn invalid_config_rejected() {
        let mut c = ModelConfig::new("m");
        c.temperature = -1.0;
        assert!(LiveProvider::new(c, scripted(0)).is_err());
    }

    #[test]
    fn record_then_replay() {
        let dir = tempfile::tempdir().unwrap();
        let store = Arc::new(ReplayStore::open(dir.path()).unwrap());
        let live = LiveProvider::new(fast_cfg(), scripted(0)).unwrap();
        let b = bundle("d", "hello");
        let recorded = record(&live, &b, 0, &store).unwrap();
        // overwrite is idempotent
        record(&live, &b, 0, &store).unwrap();
        assert_eq!(store.len(), 1);

        let reopened = Arc::new(ReplayStore::open_existing(dir.path()).unwrap());
        let replay = ReplayProvider::new(fast_cfg(), reopened.clone());
        let r = replay.complete(&b, 0).unwrap();
        assert_eq!(r.text, recorded.text);
        assert_eq!(r.request_fingerprint, recorded.request_fingerprint);
        let (_, entry) = reopened.find("d", 0, Some("m")).unwrap();
        assert_eq!(reopened.prompt(&entry).unwrap().user_text, "hello");
    }

    #[test]
    fn replay_misses_name_the_fingerprint() {
        let dir = tempfile::tempdir().unwrap();
        let store = Arc::new(ReplayStore::open(dir.path()).unwrap());
        let replay = ReplayProvider::new(fast_cfg(), store);
        let b = bundle("d", "never recorded");
        let want = bundle_fingerprint(&b, &fast_cfg(), 0);
        match replay.complete(&b, 0) {
            Err(GatewayError::MissingRecord { fingerprint, .. }) => assert_eq!(fingerprint, want),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn distinct_bundles_distinct_entries() {
        let dir = tempfile::tempdir().unwrap();
        let store = Arc::new(ReplayStore::open(dir.path()).unwrap());
        let rec = Recorder::new(LiveProvider::new(fast_cfg(), scripted(0)).unwrap(), store.clone());
        let a = rec.complete(&bundle("a", "x"), 0).unwrap();
        let b = rec.complete(&bundle("b", "y"), 0).unwrap();
        assert_ne!(a.request_fingerprint, b.request_fingerprint);
        assert_eq!(store.len(), 2);
    }

    #[test]
    fn backoff_grows_and_caps() {
        let p = RetryPolicy {
            max_attempts: 5,
            initial_backoff_ms: 100,
            max_backoff_ms: 250,
        };
        assert_eq!(p.backoff(1), Duration::from_millis(100));
        assert_eq!(p.backoff(2), Duration::from_millis(200));
        assert_eq!(p.backoff(3), Duration::from_millis(250));
    }
}
