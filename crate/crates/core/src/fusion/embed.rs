//! Text embedding providers.
//!
//! `Fallback` derives a unit vector from the SHA-256 of the text; `Remote`
//! posts text batches to an HTTP endpoint. Both cache by content hash, in
//! memory and optionally on disk as raw little-endian `f64` files.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Deserialize;
use sha2::{Digest, Sha256};

use super::{FusionError, SemanticEmbedding, EMBED_DIM};

const RETRIES: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct RemoteEmbedConfig {
    pub endpoint: String,
    pub model: String,
    pub api_key: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EmbedMode {
    Fallback,
    Remote(RemoteEmbedConfig),
}

impl EmbedMode {
    /// Remote when `EMBED_ENDPOINT` is set, fallback otherwise.
    pub fn from_env() -> Self {
        match std::env::var("EMBED_ENDPOINT") {
            Ok(endpoint) if !endpoint.trim().is_empty() => EmbedMode::Remote(RemoteEmbedConfig {
                endpoint,
                model: std::env::var("EMBED_MODEL").unwrap_or_else(|_| "gte-base".into()),
                api_key: std::env::var("EMBED_API_KEY").ok(),
            }),
            _ => EmbedMode::Fallback,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            EmbedMode::Fallback => "deterministic-fallback",
            EmbedMode::Remote(_) => "remote",
        }
    }

    fn cache_tag(&self) -> String {
        match self {
            EmbedMode::Fallback => "fallback".into(),
            EmbedMode::Remote(c) => format!("remote:{}", c.model),
        }
    }
}

pub struct EmbeddingProvider {
    mode: EmbedMode,
    cache_dir: Option<PathBuf>,
    memo: Mutex<HashMap<String, Vec<f64>>>,
}

impl EmbeddingProvider {
    pub fn new(mode: EmbedMode, cache_dir: Option<PathBuf>) -> Self {
        EmbeddingProvider {
            mode,
            cache_dir,
            memo: Mutex::new(HashMap::new()),
        }
    }

    pub fn fallback() -> Self {
        Self::new(EmbedMode::Fallback, None)
    }

    pub fn mode(&self) -> &EmbedMode {
        &self.mode
    }

    fn key(&self, text: &str) -> String {
        let mut h = Sha256::new();
        h.update(self.mode.cache_tag().as_bytes());
        h.update([0u8]);
        h.update(text.as_bytes());
        hex::encode(h.finalize())
    }

    fn cache_path(&self, key: &str) -> Option<PathBuf> {
        self.cache_dir
            .as_ref()
            .map(|d| d.join(format!("{key}.f64")))
    }

    pub fn embed_text(&self, text: &str) -> Result<SemanticEmbedding, FusionError> {
        Ok(self.embed_batch(&[text])?.remove(0))
    }

    /// Embeds several texts, calling the remote endpoint at most once for the
    /// uncached ones.
    pub fn embed_batch(&self, texts: &[&str]) -> Result<Vec<SemanticEmbedding>, FusionError> {
        if let Some(t) = texts.iter().find(|t| t.trim().is_empty()) {
            return Err(FusionError::EmptyText(t.to_string()));
        }
        let keys: Vec<String> = texts.iter().map(|t| self.key(t)).collect();
        let mut found: Vec<Option<Vec<f64>>> = Vec::with_capacity(texts.len());
        {
            let memo = self.memo.lock().unwrap();
            for k in &keys {
                let hit = memo.get(k).cloned().or_else(|| self.read_disk(k));
                found.push(hit);
            }
        }
        let missing: Vec<usize> = (0..texts.len()).filter(|&i| found[i].is_none()).collect();
        if !missing.is_empty() {
            let fresh = match &self.mode {
                EmbedMode::Fallback => missing.iter().map(|&i| fallback_vector(texts[i])).collect(),
                EmbedMode::Remote(cfg) => {
                    let batch: Vec<&str> = missing.iter().map(|&i| texts[i]).collect();
                    remote_embed(cfg, &batch)?
                }
            };
            let mut memo = self.memo.lock().unwrap();
            for (&i, v) in missing.iter().zip(fresh) {
                self.write_disk(&keys[i], &v)?;
                memo.insert(keys[i].clone(), v.clone());
                found[i] = Some(v);
            }
        }
        Ok(texts
            .iter()
            .zip(found)
            .map(|(t, v)| SemanticEmbedding {
                vector: v.expect("filled"),
                source_text: t.to_string(),
            })
            .collect())
    }

    fn read_disk(&self, key: &str) -> Option<Vec<f64>> {
        let bytes = fs::read(self.cache_path(key)?).ok()?;
        if bytes.len() != EMBED_DIM * 8 {
            return None;
        }
        Some(
            bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        )
    }

    fn write_disk(&self, key: &str, v: &[f64]) -> Result<(), FusionError> {
        let Some(path) = self.cache_path(key) else {
            return Ok(());
        };
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| FusionError::Cache(e.to_string()))?;
        }
        let bytes: Vec<u8> = v.iter().flat_map(|x| x.to_le_bytes()).collect();
        fs::write(&path, bytes).map_err(|e| FusionError::Cache(format!("{}: {e}", path.display())))
    }

    pub fn cache_dir(&self) -> Option<&Path> {
        self.cache_dir.as_deref()
    }
}

/// Unit-norm Gaussian direction seeded by the text's SHA-256.
pub fn fallback_vector(text: &str) -> Vec<f64> {
    let digest = Sha256::digest(text.as_bytes());
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&digest);
    let mut rng = ChaCha8Rng::from_seed(seed);
    let mut v: Vec<f64> = (0..EMBED_DIM)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    for x in &mut v {
        *x /= norm;
    }
    v
}

#[derive(Deserialize)]
struct OpenAiItem {
    embedding: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum EmbedResponse {
    Data { data: Vec<OpenAiItem> },
    Plain { embeddings: Vec<Vec<f64>> },
}

fn remote_embed(cfg: &RemoteEmbedConfig, texts: &[&str]) -> Result<Vec<Vec<f64>>, FusionError> {
    let body = serde_json::json!({ "model": cfg.model, "input": texts });
    let mut last_err = String::new();
    for attempt in 0..RETRIES {
        if attempt > 0 {
            thread::sleep(Duration::from_millis(200 << attempt));
        }
        let mut req = ureq::post(&cfg.endpoint).header("Content-Type", "application/json");
        if let Some(k) = &cfg.api_key {
            req = req.header("Authorization", &format!("Bearer {k}"));
        }
        match req.send_json(&body) {
            Ok(mut resp) => {
                let parsed: EmbedResponse = resp
                    .body_mut()
                    .read_json()
                    .map_err(|e| FusionError::Malformed(e.to_string()))?;
                let vectors = match parsed {
                    EmbedResponse::Data { data } => {
                        data.into_iter().map(|d| d.embedding).collect::<Vec<_>>()
                    }
                    EmbedResponse::Plain { embeddings } => embeddings,
                };
                if vectors.len() != texts.len() {
                    return Err(FusionError::Malformed(format!(
                        "{} vectors for {} texts",
                        vectors.len(),
                        texts.len()
                    )));
                }
                if let Some(v) = vectors
                    .iter()
                    .find(|v| v.len() != EMBED_DIM || v.iter().any(|x| !x.is_finite()))
                {
                    return Err(FusionError::Malformed(format!(
                        "vector of length {} (want {EMBED_DIM})",
                        v.len()
                    )));
                }
                return Ok(vectors);
            }
            Err(e) => {
                log::warn!("embedding request attempt {} failed: {e}", attempt + 1);
                last_err = e.to_string();
            }
        }
    }
    Err(FusionError::Transport(last_err))
}
