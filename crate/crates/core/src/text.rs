//! Utterance-level text embeddings from a frozen contextual encoder.
//!
//! The embedding of an utterance is the mean over the last four encoder
//! layers and over every non-padding token (sentence-boundary specials
//! included). Encoders plug in through [`ContextualEncoder`]; the default
//! [`FrozenHashEncoder`] needs no downloaded weights.

use std::collections::HashMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const TEXT_DIM: usize = 768;
const LAYERS_AVERAGED: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct TextEmbedding {
    pub values: Vec<f32>,
    pub encoder_id: String,
}

impl TextEmbedding {
    /// All-zero embedding, used to silence the text branch.
    pub fn zeros(encoder_id: impl Into<String>) -> Self {
        Self {
            values: vec![0.0; TEXT_DIM],
            encoder_id: encoder_id.into(),
        }
    }
}

/// A frozen transformer-style text encoder exposing per-layer token states.
pub trait ContextualEncoder: Send + Sync {
    fn encoder_id(&self) -> &str;
    /// Maximum tokens per call, specials included.
    fn max_tokens(&self) -> usize;
    /// Tokens including sentence-boundary specials.
    fn tokenize(&self, text: &str) -> Vec<String>;
    /// Hidden states indexed `[layer][token][dim]`; layer 0 is the embedding layer.
    fn hidden_states(&self, tokens: &[String]) -> Result<Vec<Vec<Vec<f32>>>>;
}

/// Collapses whitespace runs and trims.
pub fn normalize_text(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn seeded(tag: &str, extra: &[u8]) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(tag.as_bytes());
    h.update(extra);
    let d = h.finalize();
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&d[..32]);
    ChaCha8Rng::from_seed(seed)
}

/// Deterministic stand-in encoder: hashed token embeddings plus sinusoidal
/// positions, followed by layers that mix each token with the sequence
/// context. Word-level tokenisation with `[CLS]`/`[SEP]` specials.
pub struct FrozenHashEncoder {
    id: String,
    layers: Vec<MixLayer>,
    max_tokens: usize,
}

struct MixLayer {
    self_gain: Vec<f32>,
    context_gain: Vec<f32>,
    neighbour_gain: Vec<f32>,
    bias: Vec<f32>,
    shift: usize,
}

impl Default for FrozenHashEncoder {
    fn default() -> Self {
        Self::new(6, 512)
    }
}

impl FrozenHashEncoder {
    pub fn new(n_layers: usize, max_tokens: usize) -> Self {
        let id = format!("frozen-hash-encoder/v1/{TEXT_DIM}x{n_layers}");
        let layers = (0..n_layers)
            .map(|l| {
                let mut rng = seeded(&id, &(l as u64).to_le_bytes());
                let mut vec = |lo: f32, hi: f32| -> Vec<f32> {
                    (0..TEXT_DIM).map(|_| rng.random_range(lo..hi)).collect()
                };
                let self_gain = vec(0.6, 1.2);
                let context_gain = vec(-0.6, 0.6);
                let neighbour_gain = vec(-0.4, 0.4);
                let bias = vec(-0.1, 0.1);
                MixLayer {
                    self_gain,
                    context_gain,
                    neighbour_gain,
                    bias,
                    shift: 1 + l * 7 % (TEXT_DIM - 1),
                }
            })
            .collect();
        Self {
            id,
            layers,
            max_tokens,
        }
    }

    fn token_vector(&self, token: &str, position: usize) -> Vec<f32> {
        let mut rng = seeded(&self.id, token.as_bytes());
        let scale = 1.0 / (TEXT_DIM as f32).sqrt();
        (0..TEXT_DIM)
            .map(|i| {
                let e: f32 = rng.random_range(-1.0f32..1.0) * 3f32.sqrt() * scale * 4.0;
                let rate = 1.0 / 10_000f32.powf((2 * (i / 2)) as f32 / TEXT_DIM as f32);
                let p = position as f32 * rate;
                let pos = if i % 2 == 0 { p.sin() } else { p.cos() };
                e + 0.1 * pos
            })
            .collect()
    }
}

impl ContextualEncoder for FrozenHashEncoder {
    fn encoder_id(&self) -> &str {
        &self.id
    }

    fn max_tokens(&self) -> usize {
        self.max_tokens
    }

    fn tokenize(&self, text: &str) -> Vec<String> {
        let mut tokens = vec!["[CLS]".to_string()];
        let lower = text.to_lowercase();
        let mut word = String::new();
        for ch in lower.chars() {
            if ch.is_alphanumeric() || ch == '\'' {
                word.push(ch);
            } else {
                if !word.is_empty() {
                    tokens.push(std::mem::take(&mut word));
                }
                if !ch.is_whitespace() {
                    tokens.push(ch.to_string());
                }
            }
        }
        if !word.is_empty() {
            tokens.push(word);
        }
        tokens.push("[SEP]".to_string());
        tokens
    }

    fn hidden_states(&self, tokens: &[String]) -> Result<Vec<Vec<Vec<f32>>>> {
        if tokens.is_empty() {
            return Err(Error::InvalidInput("no tokens".into()));
        }
        let mut states = Vec::with_capacity(self.layers.len() + 1);
        let mut h: Vec<Vec<f32>> = tokens
            .iter()
            .enumerate()
            .map(|(p, t)| self.token_vector(t, p))
            .collect();
        states.push(h.clone());
        for layer in &self.layers {
            let n = h.len() as f32;
            let ctx: Vec<f32> = (0..TEXT_DIM)
                .map(|d| h.iter().map(|row| row[d]).sum::<f32>() / n)
                .collect();
            h = h
                .iter()
                .map(|row| {
                    (0..TEXT_DIM)
                        .map(|d| {
                            let nb = row[(d + layer.shift) % TEXT_DIM];
                            (layer.self_gain[d] * row[d]
                                + layer.context_gain[d] * ctx[d]
                                + layer.neighbour_gain[d] * nb
                                + layer.bias[d])
                                .tanh()
                        })
                        .collect()
                })
                .collect();
            states.push(h.clone());
        }
        Ok(states)
    }
}

/// Embeds utterances with a frozen encoder. Counts encoder invocations so
/// cache behaviour is observable.
pub struct TextEmbedder {
    encoder: Arc<dyn ContextualEncoder>,
    invocations: AtomicUsize,
}

impl Default for TextEmbedder {
    fn default() -> Self {
        Self::new(Arc::new(FrozenHashEncoder::default()))
    }
}

impl TextEmbedder {
    pub fn new(encoder: Arc<dyn ContextualEncoder>) -> Self {
        Self {
            encoder,
            invocations: AtomicUsize::new(0),
        }
    }

    /// Rebuilds the embedder a checkpoint was trained with. Only the built-in
    /// hash encoder can be reconstructed from its id.
    pub fn for_encoder_id(id: &str) -> Result<Self> {
        let layers = id
            .strip_prefix(&format!("frozen-hash-encoder/v1/{TEXT_DIM}x"))
            .and_then(|n| n.parse::<usize>().ok())
            .ok_or_else(|| Error::Config(format!("text encoder `{id}` is not available in this build")))?;
        Ok(Self::new(Arc::new(FrozenHashEncoder::new(layers, 512))))
    }

    pub fn encoder_id(&self) -> &str {
        self.encoder.encoder_id()
    }

    pub fn encoder(&self) -> &dyn ContextualEncoder {
        self.encoder.as_ref()
    }

    pub fn invocations(&self) -> usize {
        self.invocations.load(Ordering::Relaxed)
    }

    pub fn embed_utterance(&self, text: &str) -> Result<TextEmbedding> {
        let norm = normalize_text(text);
        if norm.is_empty() {
            return Err(Error::InvalidInput("text is empty after whitespace normalization".into()));
        }
        let mut tokens = self.encoder.tokenize(&norm);
        let max = self.encoder.max_tokens();
        if tokens.len() > max {
            warn!("text of {} tokens truncated to {max}", tokens.len());
            let last = tokens.pop().expect("non-empty");
            tokens.truncate(max.saturating_sub(1));
            tokens.push(last);
        }
        self.invocations.fetch_add(1, Ordering::Relaxed);
        let states = self.encoder.hidden_states(&tokens)?;
        if states.len() < LAYERS_AVERAGED {
            return Err(Error::InvalidInput(format!(
                "encoder exposes {} layers, need at least {LAYERS_AVERAGED}",
                states.len()
            )));
        }
        let top = &states[states.len() - LAYERS_AVERAGED..];
        let mut acc = vec![0f64; TEXT_DIM];
        let mut count = 0usize;
        for layer in top {
            for token in layer {
                if token.len() != TEXT_DIM {
                    return Err(Error::Shape(format!(
                        "encoder state width {} != {TEXT_DIM}",
                        token.len()
                    )));
                }
                for (a, &v) in acc.iter_mut().zip(token) {
                    *a += v as f64;
                }
                count += 1;
            }
        }
        Ok(TextEmbedding {
            values: acc.into_iter().map(|a| (a / count as f64) as f32).collect(),
            encoder_id: self.encoder.encoder_id().to_string(),
        })
    }
}

const CACHE_MAGIC: &[u8; 8] = b"SARCEMB1";

/// Cache key: SHA-256 over `normalized text \0 encoder id`.
pub fn cache_key(text: &str, encoder_id: &str) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(normalize_text(text).as_bytes());
    h.update([0u8]);
    h.update(encoder_id.as_bytes());
    let d = h.finalize();
    let mut k = [0u8; 32];
    k.copy_from_slice(&d[..32]);
    k
}

fn record_checksum(key: &[u8; 32], encoder_id: &str, values: &[f32]) -> [u8; 8] {
    let mut h = Sha256::new();
    h.update(key);
    h.update(encoder_id.as_bytes());
    for v in values {
        h.update(v.to_le_bytes());
    }
    let d = h.finalize();
    let mut c = [0u8; 8];
    c.copy_from_slice(&d[..8]);
    c
}

/// Binary record store: magic, then records of
/// `key[32] | id_len u16 | encoder_id | 768 × f32 LE | checksum[8]`.
#[derive(Default)]
pub struct EmbeddingCache {
    entries: HashMap<[u8; 32], TextEmbedding>,
    corrupt: usize,
}

impl EmbeddingCache {
    pub fn load(path: &Path) -> Result<Self> {
        let mut cache = Self::default();
        let mut bytes = Vec::new();
        match fs::File::open(path) {
            Ok(mut f) => {
                f.read_to_end(&mut bytes)?;
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(cache),
            Err(e) => return Err(e.into()),
        }
        if bytes.len() < 8 || &bytes[..8] != CACHE_MAGIC {
            warn!("embedding cache {} has a bad header; ignoring it", path.display());
            cache.corrupt += 1;
            return Ok(cache);
        }
        let mut pos = 8;
        let rec_tail = TEXT_DIM * 4 + 8;
        while pos < bytes.len() {
            if pos + 34 > bytes.len() {
                cache.corrupt += 1;
                break;
            }
            let mut key = [0u8; 32];
            key.copy_from_slice(&bytes[pos..pos + 32]);
            let id_len = u16::from_le_bytes([bytes[pos + 32], bytes[pos + 33]]) as usize;
            pos += 34;
            if pos + id_len + rec_tail > bytes.len() {
                cache.corrupt += 1;
                break;
            }
            let encoder_id = String::from_utf8_lossy(&bytes[pos..pos + id_len]).into_owned();
            pos += id_len;
            let values: Vec<f32> = bytes[pos..pos + TEXT_DIM * 4]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            pos += TEXT_DIM * 4;
            let stored = &bytes[pos..pos + 8];
            pos += 8;
            if stored != record_checksum(&key, &encoder_id, &values) || values.iter().any(|v| !v.is_finite()) {
                cache.corrupt += 1;
                continue;
            }
            cache.entries.insert(key, TextEmbedding { values, encoder_id });
        }
        if cache.corrupt > 0 {
            warn!(
                "embedding cache {}: {} corrupt entries will be recomputed",
                path.display(),
                cache.corrupt
            );
        }
        Ok(cache)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn corrupt_entries(&self) -> usize {
        self.corrupt
    }

    pub fn get(&self, key: &[u8; 32]) -> Option<&TextEmbedding> {
        self.entries.get(key)
    }

    pub fn insert(&mut self, key: [u8; 32], emb: TextEmbedding) {
        self.entries.insert(key, emb);
    }

    /// Atomic rewrite (temp file + rename). Entries are written in key order.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut keys: Vec<&[u8; 32]> = self.entries.keys().collect();
        keys.sort();
        let mut buf = Vec::with_capacity(8 + keys.len() * (TEXT_DIM * 4 + 80));
        buf.extend_from_slice(CACHE_MAGIC);
        for key in keys {
            let e = &self.entries[key];
            buf.extend_from_slice(key);
            buf.extend_from_slice(&(e.encoder_id.len() as u16).to_le_bytes());
            buf.extend_from_slice(e.encoder_id.as_bytes());
            for v in &e.values {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            buf.extend_from_slice(&record_checksum(key, &e.encoder_id, &e.values));
        }
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let tmp = path.with_extension(format!("tmp{}", std::process::id()));
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&buf)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }
}

static CACHE_WRITER: Mutex<()> = Mutex::new(());

/// Embeds `texts`, reading and updating the cache at `cache_path`.
/// Hits are returned bit-exactly; corrupt entries are recomputed and overwritten.
pub fn embed_batch_cached(embedder: &TextEmbedder, texts: &[String], cache_path: &Path) -> Result<Vec<TextEmbedding>> {
    let _guard = CACHE_WRITER.lock().unwrap_or_else(|p| p.into_inner());
    let mut cache = EmbeddingCache::load(cache_path)?;
    let mut dirty = cache.corrupt_entries() > 0;
    let mut out = Vec::with_capacity(texts.len());
    for text in texts {
        let key = cache_key(text, embedder.encoder_id());
        let hit = cache
            .get(&key)
            .filter(|e| e.encoder_id == embedder.encoder_id())
            .cloned();
        let emb = match hit {
            Some(e) => e,
            None => {
                let e = embedder.embed_utterance(text)?;
                cache.insert(key, e.clone());
                dirty = true;
                e
            }
        };
        out.push(emb);
    }
    if dirty {
        cache.save(cache_path)?;
    }
    Ok(out)
}
