//! Embodiment store: chunked identity documents with exact cosine retrieval,
//! plus bundle loading and system-prompt assembly.

pub mod bundle;

use std::cmp::Ordering;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::{cosine, Embedder, HashEmbedder};

pub use bundle::{
    build_system_prompt, AssetKind, AssetSpec, EmbodimentCondition, IdentityBundle, PromptOptions,
};

pub const DEFAULT_CHUNK_SIZE: usize = 512;
pub const DEFAULT_CHUNK_OVERLAP: usize = 64;
pub const MIN_CHUNK_SIZE: usize = 32;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WhoamiError {
    #[error("document {0:?} is empty")]
    EmptyDocument(String),
    #[error("chunk size {size} with overlap {overlap} is invalid")]
    InvalidChunking { size: usize, overlap: usize },
    #[error("the store is empty")]
    EmptyStore,
    #[error("k must be positive")]
    InvalidK,
    #[error("unknown asset {0:?}")]
    UnknownAsset(String),
    #[error("asset {0:?} is not an image")]
    WrongKind(String),
    #[error("{0}")]
    Io(String),
    #[error("invalid bundle: {0}")]
    InvalidBundle(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceDocument {
    pub id: String,
    pub title: String,
    pub body: String,
}

impl SourceDocument {
    pub fn new(id: &str, title: &str, body: &str) -> Self {
        Self {
            id: id.into(),
            title: title.into(),
            body: body.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chunk {
    pub doc_id: String,
    pub seq: usize,
    /// Character offsets `[start, end)` into the document body.
    pub span: (usize, usize),
    pub text: String,
    pub vector: Vec<f64>,
}

/// Number of chunks for a body of `len` characters.
pub fn chunk_count(len: usize, size: usize, overlap: usize) -> usize {
    let step = size - overlap;
    len.saturating_sub(overlap).max(1).div_ceil(step)
}

/// Character spans `[start, end)` of every chunk.
pub fn chunk_spans(len: usize, size: usize, overlap: usize) -> Vec<(usize, usize)> {
    let step = size - overlap;
    (0..chunk_count(len, size, overlap))
        .map(|k| {
            let start = k * step;
            (start, (start + size).min(len))
        })
        .collect()
}

pub struct ChunkStore {
    chunks: Vec<Chunk>,
    embedder: Arc<dyn Embedder>,
}

impl std::fmt::Debug for ChunkStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ChunkStore")
            .field("chunks", &self.chunks.len())
            .finish()
    }
}

pub fn ingest(
    docs: &[SourceDocument],
    size: usize,
    overlap: usize,
    embedder: Arc<dyn Embedder>,
) -> Result<ChunkStore, WhoamiError> {
    if size < MIN_CHUNK_SIZE || overlap >= size {
        return Err(WhoamiError::InvalidChunking { size, overlap });
    }
    let mut chunks = Vec::new();
    for d in docs {
        if d.body.is_empty() {
            return Err(WhoamiError::EmptyDocument(d.id.clone()));
        }
        let chars: Vec<char> = d.body.chars().collect();
        for (seq, (start, end)) in chunk_spans(chars.len(), size, overlap)
            .into_iter()
            .enumerate()
        {
            let text: String = chars[start..end].iter().collect();
            let vector = embedder.embed_one(&text);
            chunks.push(Chunk {
                doc_id: d.id.clone(),
                seq,
                span: (start, end),
                text,
                vector,
            });
        }
    }
    Ok(ChunkStore { chunks, embedder })
}

impl ChunkStore {
    /// Store with the default chunking and the hash embedder.
    pub fn with_defaults(docs: &[SourceDocument]) -> Result<Self, WhoamiError> {
        ingest(
            docs,
            DEFAULT_CHUNK_SIZE,
            DEFAULT_CHUNK_OVERLAP,
            Arc::new(HashEmbedder::default()),
        )
    }

    /// Store from chunks that already carry vectors.
    pub fn from_chunks(chunks: Vec<Chunk>, embedder: Arc<dyn Embedder>) -> Self {
        Self { chunks, embedder }
    }

    pub fn chunks(&self) -> &[Chunk] {
        &self.chunks
    }

    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    /// Exact top-k by cosine similarity, ties broken by (doc_id, seq).
    pub fn query(&self, question: &str, k: usize) -> Result<Vec<(Chunk, f64)>, WhoamiError> {
        if k == 0 {
            return Err(WhoamiError::InvalidK);
        }
        if self.chunks.is_empty() {
            return Err(WhoamiError::EmptyStore);
        }
        let q = self.embedder.embed_one(question);
        Ok(self.rank(&q, k))
    }

    pub fn rank(&self, q: &[f64], k: usize) -> Vec<(Chunk, f64)> {
        let mut scored: Vec<(&Chunk, f64)> = self
            .chunks
            .iter()
            .map(|c| (c, cosine(q, &c.vector)))
            .collect();
        scored.sort_by(|a, b| {
            b.1.total_cmp(&a.1)
                .then_with(|| a.0.doc_id.cmp(&b.0.doc_id))
                .then_with(|| a.0.seq.cmp(&b.0.seq))
        });
        scored
            .into_iter()
            .take(k)
            .map(|(c, s)| (c.clone(), s))
            .collect()
    }
}

/// Sort order used by [`ChunkStore::query`], for callers building oracles.
pub fn rank_order(a: (&str, usize, f64), b: (&str, usize, f64)) -> Ordering {
    b.2.total_cmp(&a.2)
        .then_with(|| a.0.cmp(b.0))
        .then_with(|| a.1.cmp(&b.1))
}
