use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{top_k, tokenize, RetrievalError, Retriever, ScoredDoc};
use crate::corpus::Document;
use crate::http::{EndpointConfig, HttpError, JsonClient};

pub const HASHED_EMBEDDING_DIM: usize = 256;

/// Maps texts to fixed-dimension vectors.
pub trait Embedder: Send + Sync {
    fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>, RetrievalError>;

    /// Human-readable backend description recorded with the index.
    fn descriptor(&self) -> String;
}

/// Offline stand-in: signed feature hashing of the token bag, L2-normalized.
#[derive(Debug, Clone)]
pub struct HashedEmbedder {
    dim: usize,
    seed: u64,
}

impl HashedEmbedder {
    pub fn new(seed: u64) -> Self {
        Self::with_dim(HASHED_EMBEDDING_DIM, seed)
    }

    pub fn with_dim(dim: usize, seed: u64) -> Self {
        HashedEmbedder { dim: dim.max(1), seed }
    }

    fn hash(&self, token: &str) -> u64 {
        // FNV-1a over the seed and token, then a splitmix64 finalizer
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for byte in self.seed.to_le_bytes().iter().chain(token.as_bytes()) {
            h ^= *byte as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        h ^= h >> 30;
        h = h.wrapping_mul(0xbf58_476d_1ce4_e5b9);
        h ^= h >> 27;
        h = h.wrapping_mul(0x94d0_49bb_1331_11eb);
        h ^ (h >> 31)
    }

    pub fn embed_one(&self, text: &str) -> Vec<f32> {
        let mut v = vec![0f64; self.dim];
        for token in tokenize(text).iter() {
            let h = self.hash(token);
            let bucket = (h % self.dim as u64) as usize;
            v[bucket] += if h >> 63 == 0 { 1.0 } else { -1.0 };
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.into_iter()
            .map(|x| if norm > 0.0 { (x / norm) as f32 } else { 0.0 })
            .collect()
    }
}

impl Embedder for HashedEmbedder {
    fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>, RetrievalError> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }

    fn descriptor(&self) -> String {
        format!("hashed-bow:{}d:seed={}", self.dim, self.seed)
    }
}

#[derive(Serialize)]
struct EmbeddingRequest<'a> {
    model: &'a str,
    input: &'a [&'a str],
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    embedding: Vec<f32>,
    #[serde(default)]
    index: Option<usize>,
}

/// Client for the common `{model, input}` -> `{data: [{embedding}]}` API.
#[derive(Debug, Clone)]
pub struct HttpEmbedder {
    client: JsonClient,
    batch_size: usize,
}

impl HttpEmbedder {
    pub fn new(config: EndpointConfig, batch_size: usize) -> Result<Self, HttpError> {
        Ok(HttpEmbedder {
            client: JsonClient::new(config)?,
            batch_size: batch_size.max(1),
        })
    }
}

impl Embedder for HttpEmbedder {
    fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>, RetrievalError> {
        let mut out = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(self.batch_size) {
            let request = EmbeddingRequest {
                model: self.client.model(),
                input: chunk,
            };
            let response: EmbeddingResponse = self.client.post(&request)?;
            if response.data.len() != chunk.len() {
                return Err(RetrievalError::BatchSize {
                    expected: chunk.len(),
                    got: response.data.len(),
                });
            }
            let mut data = response.data;
            if data.iter().all(|d| d.index.is_some()) {
                data.sort_by_key(|d| d.index);
            }
            out.extend(data.into_iter().map(|d| d.embedding));
        }
        Ok(out)
    }

    fn descriptor(&self) -> String {
        format!("remote:{}:{}", self.client.config().url, self.client.model())
    }
}

/// Cosine similarity; zero when either vector has zero norm.
pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let (mut dot, mut na, mut nb) = (0f64, 0f64, 0f64);
    for (x, y) in a.iter().zip(b) {
        let (x, y) = (*x as f64, *y as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na.sqrt() * nb.sqrt())
    }
}

/// Exact brute-force vector store.
#[derive(Debug, Clone, Default)]
pub struct VectorIndex {
    backend: String,
    dim: Option<usize>,
    doc_ids: Vec<String>,
    vectors: Vec<Vec<f32>>,
    lookup: std::collections::HashSet<String>,
}

impl VectorIndex {
    pub fn new(backend: impl Into<String>) -> Self {
        VectorIndex {
            backend: backend.into(),
            ..Default::default()
        }
    }

    pub fn backend(&self) -> &str {
        &self.backend
    }

    pub fn dim(&self) -> Option<usize> {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_ids.is_empty()
    }

    fn check(&self, id: &str, v: &[f32], dim: Option<usize>) -> Result<(), RetrievalError> {
        if let Some(expected) = dim {
            if v.len() != expected {
                return Err(RetrievalError::DimensionMismatch {
                    expected,
                    got: v.len(),
                });
            }
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(RetrievalError::NonFinite(id.to_string()));
        }
        Ok(())
    }

    /// Inserts a batch atomically.
    pub fn insert(&mut self, items: Vec<(String, Vec<f32>)>) -> Result<(), RetrievalError> {
        let mut dim = self.dim;
        let mut batch = std::collections::HashSet::new();
        for (id, v) in &items {
            if self.lookup.contains(id) || !batch.insert(id.as_str()) {
                return Err(RetrievalError::AlreadyIndexed(id.clone()));
            }
            self.check(id, v, dim)?;
            dim.get_or_insert(v.len());
        }
        self.dim = dim;
        for (id, v) in items {
            self.lookup.insert(id.clone());
            self.doc_ids.push(id);
            self.vectors.push(v);
        }
        Ok(())
    }

    pub fn search_vector(&self, query: &[f32], k: usize) -> Result<Vec<ScoredDoc>, RetrievalError> {
        if k == 0 {
            return Err(RetrievalError::ZeroK);
        }
        self.check("<query>", query, self.dim)?;
        let scored = self
            .doc_ids
            .iter()
            .zip(&self.vectors)
            .map(|(id, v)| ScoredDoc {
                doc_id: id.clone(),
                score: cosine(query, v),
            })
            .collect();
        Ok(top_k(scored, k))
    }
}

/// Dense retrieval: embeds with an [`Embedder`] and scans a [`VectorIndex`].
pub struct DenseRetriever {
    index: VectorIndex,
    embedder: Arc<dyn Embedder>,
}

impl DenseRetriever {
    pub fn new(embedder: Arc<dyn Embedder>) -> Self {
        DenseRetriever {
            index: VectorIndex::new(embedder.descriptor()),
            embedder,
        }
    }

    pub fn index(&self) -> &VectorIndex {
        &self.index
    }
}

impl Retriever for DenseRetriever {
    fn index_documents(&mut self, docs: &[Document]) -> Result<(), RetrievalError> {
        if docs.is_empty() {
            return Ok(());
        }
        for doc in docs {
            if self.index.lookup.contains(&doc.doc_id) {
                return Err(RetrievalError::AlreadyIndexed(doc.doc_id.clone()));
            }
        }
        let texts: Vec<&str> = docs.iter().map(|d| d.text.as_str()).collect();
        let vectors = self.embedder.embed(&texts)?;
        if vectors.len() != docs.len() {
            return Err(RetrievalError::BatchSize {
                expected: docs.len(),
                got: vectors.len(),
            });
        }
        self.index.insert(
            docs.iter()
                .map(|d| d.doc_id.clone())
                .zip(vectors)
                .collect(),
        )
    }

    fn search(&self, query: &str, k: usize) -> Result<Vec<ScoredDoc>, RetrievalError> {
        if k == 0 {
            return Err(RetrievalError::ZeroK);
        }
        let mut embedded = self.embedder.embed(&[query])?;
        let q = embedded.pop().ok_or(RetrievalError::BatchSize {
            expected: 1,
            got: 0,
        })?;
        self.index.search_vector(&q, k)
    }

    fn doc_count(&self) -> usize {
        self.index.len()
    }
}
