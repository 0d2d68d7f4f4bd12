//! Document embeddings and in-context example selection.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::corpus::{Document, Manifest};
use crate::par::Exec;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    values: Vec<f64>,
    provider_tag: String,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>, provider_tag: impl Into<String>) -> Result<Self, EmbeddingError> {
        if values.is_empty() {
            return Err(EmbeddingError::EmptyVector);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmbeddingError::NonFinite);
        }
        Ok(EmbeddingVector {
            values,
            provider_tag: provider_tag.into(),
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn provider_tag(&self) -> &str {
        &self.provider_tag
    }
}

#[derive(Debug, thiserror::Error)]
pub enum EmbeddingError {
    #[error("cannot embed empty text")]
    EmptyText,
    #[error("embedding has no coordinates")]
    EmptyVector,
    #[error("embedding has non-finite coordinates")]
    NonFinite,
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("cosine undefined for a zero vector")]
    ZeroVector,
    #[error("embedding provider failed{}: {message}", .document_id.as_ref().map(|d| format!(" for `{d}`")).unwrap_or_default())]
    Provider {
        document_id: Option<String>,
        message: String,
    },
    #[error("no gold-annotated document other than `{0}` to use as an example")]
    EmptyPool(String),
    #[error("document `{0}` has no embedding in the index")]
    NotIndexed(String),
}

pub trait EmbeddingProvider: Send + Sync {
    fn tag(&self) -> &str;

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbeddingError>;

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
        Exec::auto().try_map(texts, |t| self.embed(t))
    }
}

/// Embed one text, rejecting empty input.
pub fn embed(text: &str, provider: &dyn EmbeddingProvider) -> Result<EmbeddingVector, EmbeddingError> {
    if text.trim().is_empty() {
        return Err(EmbeddingError::EmptyText);
    }
    provider.embed(text)
}

pub fn cosine(u: &EmbeddingVector, v: &EmbeddingVector) -> Result<f64, EmbeddingError> {
    if u.dim() != v.dim() {
        return Err(EmbeddingError::DimensionMismatch {
            left: u.dim(),
            right: v.dim(),
        });
    }
    let (mut dot, mut nu, mut nv) = (0.0, 0.0, 0.0);
    for (a, b) in u.values.iter().zip(&v.values) {
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        return Err(EmbeddingError::ZeroVector);
    }
    Ok((dot / (nu.sqrt() * nv.sqrt())).clamp(-1.0, 1.0))
}

fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
}

/// Deterministic offline embedder: TF-IDF weights over a vocabulary fitted on a
/// corpus. Terms outside the vocabulary are ignored.
#[derive(Clone, Debug)]
pub struct TfIdfEmbedder {
    vocab: BTreeMap<String, usize>,
    idf: Vec<f64>,
}

impl TfIdfEmbedder {
    pub const TAG: &'static str = "tfidf-local";

    /// Fit vocabulary and smoothed idf, `ln((1+N)/(1+df)) + 1`. The result does
    /// not depend on corpus order.
    pub fn fit<'a>(corpus: impl IntoIterator<Item = &'a str>) -> Self {
        let mut df: BTreeMap<String, usize> = BTreeMap::new();
        let mut n_docs = 0usize;
        for doc in corpus {
            n_docs += 1;
            let terms: BTreeSet<String> = tokenize(doc).collect();
            for term in terms {
                *df.entry(term).or_insert(0) += 1;
            }
        }
        let n = n_docs as f64;
        let mut vocab = BTreeMap::new();
        let mut idf = Vec::with_capacity(df.len());
        for (i, (term, count)) in df.into_iter().enumerate() {
            idf.push(((1.0 + n) / (1.0 + count as f64)).ln() + 1.0);
            vocab.insert(term, i);
        }
        TfIdfEmbedder { vocab, idf }
    }

    pub fn dim(&self) -> usize {
        self.vocab.len()
    }

    pub fn vocabulary(&self) -> impl Iterator<Item = &str> {
        self.vocab.keys().map(String::as_str)
    }
}

impl EmbeddingProvider for TfIdfEmbedder {
    fn tag(&self) -> &str {
        Self::TAG
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbeddingError> {
        if text.trim().is_empty() {
            return Err(EmbeddingError::EmptyText);
        }
        if self.vocab.is_empty() {
            return Err(EmbeddingError::Provider {
                document_id: None,
                message: "tf-idf vocabulary is empty".into(),
            });
        }
        let mut counts: HashMap<usize, f64> = HashMap::new();
        let mut total = 0usize;
        for tok in tokenize(text) {
            total += 1;
            if let Some(&i) = self.vocab.get(&tok) {
                *counts.entry(i).or_insert(0.0) += 1.0;
            }
        }
        let mut values = vec![0.0; self.vocab.len()];
        for (i, c) in counts {
            values[i] = c / total as f64 * self.idf[i];
        }
        EmbeddingVector::new(values, Self::TAG)
    }
}

#[derive(Serialize)]
struct EmbeddingsRequest<'a> {
    model: &'a str,
    input: &'a [&'a str],
}

#[derive(Deserialize)]
struct EmbeddingsResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    embedding: Vec<f64>,
    #[serde(default)]
    index: Option<usize>,
}

/// Client for an `/embeddings` endpoint using the common
/// `{model, input: [...]}` → `{data: [{embedding, index}]}` wire shape.
pub struct HttpEmbeddingProvider {
    base_url: String,
    api_key: Option<String>,
    model: String,
    agent: ureq::Agent,
    tag: String,
}

impl HttpEmbeddingProvider {
    pub const BASE_URL_VAR: &'static str = "PRIVSTORY_EMBEDDINGS_BASE_URL";
    pub const MODEL_VAR: &'static str = "PRIVSTORY_EMBEDDINGS_MODEL";
    const BATCH: usize = 64;

    pub fn new(base_url: impl Into<String>, api_key: Option<String>, model: impl Into<String>) -> Self {
        let model = model.into();
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(120)))
            .http_status_as_error(false)
            .build()
            .into();
        HttpEmbeddingProvider {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key: api_key.filter(|k| !k.is_empty()),
            tag: format!("remote:{model}"),
            model,
            agent,
        }
    }

    /// Base URL from `PRIVSTORY_EMBEDDINGS_BASE_URL` (falling back to
    /// `PRIVSTORY_BASE_URL`), key from `PRIVSTORY_API_KEY`.
    pub fn from_env() -> Option<Self> {
        let base = std::env::var(Self::BASE_URL_VAR)
            .or_else(|_| std::env::var(crate::gateway::BASE_URL_VAR))
            .ok()?;
        let key = std::env::var(crate::gateway::API_KEY_VAR).ok();
        let model = std::env::var(Self::MODEL_VAR).unwrap_or_else(|_| "all-MiniLM-L6-v2".into());
        Some(Self::new(base, key, model))
    }

    fn request(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
        let fail = |message: String| EmbeddingError::Provider {
            document_id: None,
            message,
        };
        let mut req = self
            .agent
            .post(&format!("{}/embeddings", self.base_url))
            .header("Content-Type", "application/json");
        if let Some(k) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {k}"));
        }
        let body = serde_json::to_vec(&EmbeddingsRequest {
            model: &self.model,
            input: texts,
        })
        .map_err(|e| fail(e.to_string()))?;
        let mut resp = req.send(&body[..]).map_err(|e| fail(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| fail(e.to_string()))?;
        if !(200..300).contains(&status) {
            return Err(fail(format!("HTTP {status}: {text}")));
        }
        let parsed: EmbeddingsResponse =
            serde_json::from_str(&text).map_err(|e| fail(format!("bad response: {e}")))?;
        if parsed.data.len() != texts.len() {
            return Err(fail(format!(
                "expected {} embeddings, got {}",
                texts.len(),
                parsed.data.len()
            )));
        }
        let mut slots: Vec<Option<EmbeddingVector>> = vec![None; texts.len()];
        for (pos, d) in parsed.data.into_iter().enumerate() {
            let i = d.index.unwrap_or(pos);
            let slot = slots
                .get_mut(i)
                .ok_or_else(|| fail(format!("embedding index {i} out of range")))?;
            *slot = Some(EmbeddingVector::new(d.embedding, self.tag.clone())?);
        }
        slots
            .into_iter()
            .map(|s| s.ok_or_else(|| fail("missing embedding in response".into())))
            .collect()
    }
}

impl EmbeddingProvider for HttpEmbeddingProvider {
    fn tag(&self) -> &str {
        &self.tag
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbeddingError> {
        Ok(self.request(&[text])?.remove(0))
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
        let mut out = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(Self::BATCH) {
            out.extend(self.request(chunk)?);
        }
        Ok(out)
    }
}

/// Embeddings for every document of a manifest, for repeated example selection.
#[derive(Clone, Debug)]
pub struct EmbeddingIndex {
    vectors: BTreeMap<String, EmbeddingVector>,
    /// Documents that have gold annotations and may serve as examples.
    candidates: BTreeSet<String>,
}

impl EmbeddingIndex {
    pub fn build(m: &Manifest, provider: &dyn EmbeddingProvider) -> Result<Self, EmbeddingError> {
        let texts: Vec<&str> = m.documents.iter().map(|d| d.text.as_str()).collect();
        let vectors = provider.embed_batch(&texts)?;
        Ok(EmbeddingIndex {
            vectors: m
                .documents
                .iter()
                .map(|d| d.id.clone())
                .zip(vectors)
                .collect(),
            candidates: m
                .documents
                .iter()
                .filter(|d| m.gold.contains_key(&d.id))
                .map(|d| d.id.clone())
                .collect(),
        })
    }

    pub fn from_vectors(
        vectors: impl IntoIterator<Item = (String, EmbeddingVector)>,
        candidates: impl IntoIterator<Item = String>,
    ) -> Self {
        EmbeddingIndex {
            vectors: vectors.into_iter().collect(),
            candidates: candidates.into_iter().collect(),
        }
    }

    pub fn vector(&self, id: &str) -> Option<&EmbeddingVector> {
        self.vectors.get(id)
    }

    /// Top-`k` candidates by cosine to `target`, excluding the target itself.
    /// Ties go to the lexicographically smaller id; candidates with a zero
    /// vector rank last.
    pub fn nearest_to(
        &self,
        target_id: &str,
        target: &EmbeddingVector,
        k: usize,
    ) -> Result<Vec<String>, EmbeddingError> {
        let mut scored: Vec<(f64, &str)> = Vec::new();
        for id in self.candidates.iter().filter(|id| id.as_str() != target_id) {
            let v = self
                .vectors
                .get(id)
                .ok_or_else(|| EmbeddingError::NotIndexed(id.clone()))?;
            let score = match cosine(target, v) {
                Ok(c) => c,
                Err(EmbeddingError::ZeroVector) if !is_zero(target) => f64::NEG_INFINITY,
                Err(e) => return Err(e),
            };
            scored.push((score, id.as_str()));
        }
        if scored.is_empty() {
            return Err(EmbeddingError::EmptyPool(target_id.to_string()));
        }
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
        Ok(scored.into_iter().take(k.max(1)).map(|(_, id)| id.to_string()).collect())
    }

    /// Top-`k` examples for an indexed document.
    pub fn select(&self, target_id: &str, k: usize) -> Result<Vec<String>, EmbeddingError> {
        let target = self
            .vectors
            .get(target_id)
            .ok_or_else(|| EmbeddingError::NotIndexed(target_id.to_string()))?;
        self.nearest_to(target_id, target, k)
    }
}

fn is_zero(v: &EmbeddingVector) -> bool {
    v.values.iter().all(|x| *x == 0.0)
}

/// The gold-annotated document of `pool` most similar to `target`, never the
/// target itself.
pub fn select_icl_example(
    target: &Document,
    pool: &Manifest,
    provider: &dyn EmbeddingProvider,
) -> Result<String, EmbeddingError> {
    let eligible: Vec<&Document> = pool
        .documents
        .iter()
        .filter(|d| d.id != target.id && pool.gold.contains_key(&d.id))
        .collect();
    if eligible.is_empty() {
        return Err(EmbeddingError::EmptyPool(target.id.clone()));
    }
    let target_vec = embed(&target.text, provider).map_err(|e| with_doc(e, &target.id))?;
    let texts: Vec<&str> = eligible.iter().map(|d| d.text.as_str()).collect();
    let vectors = provider.embed_batch(&texts)?;
    let index = EmbeddingIndex::from_vectors(
        eligible.iter().map(|d| d.id.clone()).zip(vectors),
        eligible.iter().map(|d| d.id.clone()),
    );
    Ok(index.nearest_to(&target.id, &target_vec, 1)?.remove(0))
}

fn with_doc(e: EmbeddingError, id: &str) -> EmbeddingError {
    match e {
        EmbeddingError::Provider { message, .. } => EmbeddingError::Provider {
            document_id: Some(id.to_string()),
            message,
        },
        other => other,
    }
}
