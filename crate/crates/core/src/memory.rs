//! Long-term memory: five chunked, embedded stores with exact cosine search,
//! a key-value record store, and per-session conversation logs.
//!
//! On disk (when a directory is attached):
//!
//! ```text
//! <dir>/stores/<store_kind>.jsonl      one chunk per line
//! <dir>/records.json                   user_structured key-value records
//! <dir>/conversations/<session>.jsonl  one archived message per line
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernel::{MemoryPolicy, StoreKind};

pub const EMBED_DIM: usize = 64;
pub const CHUNK_WINDOW: usize = 512;
pub const CHUNK_OVERLAP: usize = 64;
pub const CHUNK_STRIDE: usize = CHUNK_WINDOW - CHUNK_OVERLAP;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

#[derive(Debug, Error)]
pub enum MemoryError {
    #[error("document '{doc_id}' already ingested into {store}")]
    DuplicateDoc { store: StoreKind, doc_id: String },
    #[error("memory policy denies {0}")]
    PolicyDenied(&'static str),
    #[error("memory io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt memory file {path}: {reason}")]
    Corrupt { path: String, reason: String },
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, b| (h ^ u64::from(*b)).wrapping_mul(FNV_PRIME))
}

/// Lowercased alphanumeric runs.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_owned)
        .collect()
}

/// Signed feature hashing into 64 buckets, L2-normalized.
pub fn embed_text(text: &str) -> Vec<f64> {
    let mut vector = vec![0.0f64; EMBED_DIM];
    for token in tokenize(text) {
        let h = fnv1a64(token.as_bytes());
        let index = (h % EMBED_DIM as u64) as usize;
        let sign = if (h >> 6) & 1 == 0 { 1.0 } else { -1.0 };
        vector[index] += sign;
    }
    let norm = vector.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in &mut vector {
            *x /= norm;
        }
    }
    vector
}

pub trait Embedder: Send + Sync {
    fn embed(&self, text: &str) -> Vec<f64>;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct HashingEmbedder;

impl Embedder for HashingEmbedder {
    fn embed(&self, text: &str) -> Vec<f64> {
        embed_text(text)
    }
}

/// Cosine similarity; zero if either vector is zero.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (na * nb)
}

/// Whitespace tokens in windows of 512 starting every 448 tokens.
pub fn chunk_document(text: &str) -> Vec<String> {
    let tokens: Vec<&str> = text.split_whitespace().collect();
    (0..tokens.len())
        .step_by(CHUNK_STRIDE)
        .map(|start| {
            let end = (start + CHUNK_WINDOW).min(tokens.len());
            tokens[start..end].join(" ")
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chunk {
    pub chunk_id: String,
    pub store: StoreKind,
    pub text: String,
    pub vector: Vec<f64>,
    pub source_doc: String,
    pub ordinal: usize,
}

/// One line of a store file.
#[derive(Debug, Serialize, Deserialize)]
struct ChunkLine {
    chunk_id: String,
    doc_id: String,
    ordinal: usize,
    text: String,
    vector: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchHit {
    pub chunk_id: String,
    pub score: f64,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchivedMessage {
    pub role: String,
    pub text: String,
}

#[derive(Debug, Default)]
struct StoreIndex {
    chunks: Vec<Chunk>,
    docs: BTreeSet<String>,
}

pub struct LongTermMemory {
    embedder: Arc<dyn Embedder>,
    policy: RwLock<MemoryPolicy>,
    stores: BTreeMap<StoreKind, RwLock<StoreIndex>>,
    records: RwLock<BTreeMap<String, String>>,
    pending: Mutex<Vec<(String, String)>>,
    conversations: RwLock<BTreeMap<String, Vec<ArchivedMessage>>>,
    dir: Option<PathBuf>,
}

impl std::fmt::Debug for LongTermMemory {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LongTermMemory")
            .field("dir", &self.dir)
            .finish_non_exhaustive()
    }
}

impl Default for LongTermMemory {
    fn default() -> Self {
        Self::in_memory(MemoryPolicy::default())
    }
}

impl LongTermMemory {
    pub fn in_memory(policy: MemoryPolicy) -> Self {
        Self::with_embedder(policy, Arc::new(HashingEmbedder), None)
    }

    pub fn with_embedder(policy: MemoryPolicy, embedder: Arc<dyn Embedder>, dir: Option<PathBuf>) -> Self {
        Self {
            embedder,
            policy: RwLock::new(policy),
            stores: StoreKind::ALL
                .into_iter()
                .map(|k| (k, RwLock::new(StoreIndex::default())))
                .collect(),
            records: RwLock::new(BTreeMap::new()),
            pending: Mutex::new(Vec::new()),
            conversations: RwLock::new(BTreeMap::new()),
            dir,
        }
    }

    /// Opens (or creates) a memory directory, loading whatever it holds.
    pub fn open(dir: impl Into<PathBuf>, policy: MemoryPolicy) -> Result<Self, MemoryError> {
        let dir = dir.into();
        fs::create_dir_all(dir.join("stores"))?;
        fs::create_dir_all(dir.join("conversations"))?;
        let memory = Self::with_embedder(policy, Arc::new(HashingEmbedder), Some(dir.clone()));

        for kind in StoreKind::ALL {
            let path = store_path(&dir, kind);
            if !path.exists() {
                continue;
            }
            let mut index = memory.stores[&kind].write();
            for (n, line) in fs::read_to_string(&path)?.lines().enumerate() {
                let parsed: ChunkLine = serde_json::from_str(line).map_err(|e| MemoryError::Corrupt {
                    path: path.display().to_string(),
                    reason: format!("line {}: {e}", n + 1),
                })?;
                index.docs.insert(parsed.doc_id.clone());
                index.chunks.push(Chunk {
                    chunk_id: parsed.chunk_id,
                    store: kind,
                    text: parsed.text,
                    vector: parsed.vector,
                    source_doc: parsed.doc_id,
                    ordinal: parsed.ordinal,
                });
            }
        }

        let records_path = dir.join("records.json");
        if records_path.exists() {
            let records =
                serde_json::from_str(&fs::read_to_string(&records_path)?).map_err(|e| MemoryError::Corrupt {
                    path: records_path.display().to_string(),
                    reason: e.to_string(),
                })?;
            *memory.records.write() = records;
        }

        let mut conversations = memory.conversations.write();
        for entry in fs::read_dir(dir.join("conversations"))? {
            let path = entry?.path();
            let Some(session) = path
                .file_name()
                .and_then(|n| n.to_str())
                .and_then(|n| n.strip_suffix(".jsonl"))
            else {
                continue;
            };
            let mut messages = Vec::new();
            for line in fs::read_to_string(&path)?.lines() {
                messages.push(serde_json::from_str(line).map_err(|e| MemoryError::Corrupt {
                    path: path.display().to_string(),
                    reason: e.to_string(),
                })?);
            }
            conversations.insert(session.to_owned(), messages);
        }
        drop(conversations);
        Ok(memory)
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    pub fn policy(&self) -> MemoryPolicy {
        *self.policy.read()
    }

    pub fn set_policy(&self, policy: MemoryPolicy) {
        *self.policy.write() = policy;
    }

    pub fn embed(&self, text: &str) -> Vec<f64> {
        self.embedder.embed(text)
    }

    /// Chunks, embeds and appends a document. Returns the chunk count.
    pub fn ingest_document(&self, store: StoreKind, doc_id: &str, text: &str) -> Result<usize, MemoryError> {
        if self.stores[&store].read().docs.contains(doc_id) {
            return Err(MemoryError::DuplicateDoc {
                store,
                doc_id: doc_id.to_owned(),
            });
        }
        let chunks: Vec<Chunk> = chunk_document(text)
            .into_iter()
            .enumerate()
            .map(|(ordinal, text)| Chunk {
                chunk_id: format!("{store}/{doc_id}#{ordinal}"),
                store,
                vector: self.embedder.embed(&text),
                text,
                source_doc: doc_id.to_owned(),
                ordinal,
            })
            .collect();

        let mut index = self.stores[&store].write();
        if !index.docs.insert(doc_id.to_owned()) {
            return Err(MemoryError::DuplicateDoc {
                store,
                doc_id: doc_id.to_owned(),
            });
        }
        if let Some(dir) = &self.dir {
            let mut file = OpenOptions::new()
                .create(true)
                .append(true)
                .open(store_path(dir, store))?;
            let mut buf = String::new();
            for chunk in &chunks {
                buf.push_str(&chunk_line(chunk));
                buf.push('\n');
            }
            file.write_all(buf.as_bytes())?;
        }
        let count = chunks.len();
        index.chunks.extend(chunks);
        Ok(count)
    }

    pub fn contains_doc(&self, store: StoreKind, doc_id: &str) -> bool {
        self.stores[&store].read().docs.contains(doc_id)
    }

    pub fn chunk_count(&self, store: StoreKind) -> usize {
        self.stores[&store].read().chunks.len()
    }

    pub fn chunks(&self, store: StoreKind) -> Vec<Chunk> {
        self.stores[&store].read().chunks.clone()
    }

    /// Exact top-k cosine search within one store. Ties keep insertion order.
    pub fn search(&self, store: StoreKind, query: &str, k: usize) -> Vec<SearchHit> {
        let query_vector = self.embedder.embed(query);
        if k == 0 || tokenize(query).is_empty() {
            return Vec::new();
        }
        let index = self.stores[&store].read();
        let mut scored: Vec<(f64, &Chunk)> = index
            .chunks
            .iter()
            .map(|c| (cosine(&query_vector, &c.vector), c))
            .collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0));
        scored
            .into_iter()
            .take(k)
            .map(|(score, c)| SearchHit {
                chunk_id: c.chunk_id.clone(),
                score,
                text: c.text.clone(),
            })
            .collect()
    }

    /// Writes a user_structured key-value record (write-behind; see [`Self::flush`]).
    pub fn put_record(&self, key: &str, value: &str) -> Result<(), MemoryError> {
        if !self.policy().store_user_profile {
            return Err(MemoryError::PolicyDenied("storing user records"));
        }
        self.records.write().insert(key.to_owned(), value.to_owned());
        self.pending.lock().push((key.to_owned(), value.to_owned()));
        Ok(())
    }

    pub fn get_record(&self, key: &str) -> Option<String> {
        self.records.read().get(key).cloned()
    }

    pub fn records(&self) -> BTreeMap<String, String> {
        self.records.read().clone()
    }

    pub fn pending_writes(&self) -> usize {
        self.pending.lock().len()
    }

    /// Durability barrier: every record written before the call is on disk
    /// when it returns.
    pub fn flush(&self) -> Result<(), MemoryError> {
        let mut pending = self.pending.lock();
        if pending.is_empty() {
            return Ok(());
        }
        if let Some(dir) = &self.dir {
            let rendered = self.render_records();
            let tmp = dir.join("records.json.tmp");
            fs::write(&tmp, rendered)?;
            fs::rename(tmp, dir.join("records.json"))?;
        }
        pending.clear();
        Ok(())
    }

    /// Appends messages to a session's conversation log. Returns the
    /// cumulative message count for the session.
    pub fn archive_conversation(&self, session_id: &str, messages: &[ArchivedMessage]) -> Result<usize, MemoryError> {
        if !self.policy().store_conversation {
            return Err(MemoryError::PolicyDenied("archiving conversations"));
        }
        let mut conversations = self.conversations.write();
        if let Some(dir) = &self.dir {
            let mut file = OpenOptions::new()
                .create(true)
                .append(true)
                .open(conversation_path(dir, session_id))?;
            let mut buf = String::new();
            for message in messages {
                buf.push_str(&serde_json::to_string(message).expect("message serializes"));
                buf.push('\n');
            }
            file.write_all(buf.as_bytes())?;
        }
        let log = conversations.entry(session_id.to_owned()).or_default();
        log.extend_from_slice(messages);
        Ok(log.len())
    }

    pub fn conversation(&self, session_id: &str) -> Vec<ArchivedMessage> {
        self.conversations.read().get(session_id).cloned().unwrap_or_default()
    }

    /// Ingests a session's whole log into user_structured as one document.
    /// Returns the chunk count, or zero if nothing was archived or the
    /// session was already closed.
    pub fn close_conversation(&self, session_id: &str) -> Result<usize, MemoryError> {
        let log = self.conversation(session_id);
        let doc_id = format!("conversation:{session_id}");
        if log.is_empty() || self.contains_doc(StoreKind::UserStructured, &doc_id) {
            return Ok(0);
        }
        let text = log
            .iter()
            .map(|m| format!("{}: {}", m.role, m.text))
            .collect::<Vec<_>>()
            .join("\n");
        self.ingest_document(StoreKind::UserStructured, &doc_id, &text)
    }

    /// Canonical contents of every memory file, keyed by path relative to the
    /// memory directory. Byte-identical to what is on disk after a flush.
    pub fn render_files(&self) -> BTreeMap<String, String> {
        let mut files = BTreeMap::new();
        for kind in StoreKind::ALL {
            let index = self.stores[&kind].read();
            if index.chunks.is_empty() {
                continue;
            }
            let mut text = String::new();
            for chunk in &index.chunks {
                text.push_str(&chunk_line(chunk));
                text.push('\n');
            }
            files.insert(format!("stores/{}.jsonl", kind.as_str()), text);
        }
        if !self.records.read().is_empty() {
            files.insert("records.json".into(), self.render_records());
        }
        for (session, messages) in self.conversations.read().iter() {
            let mut text = String::new();
            for message in messages {
                text.push_str(&serde_json::to_string(message).expect("message serializes"));
                text.push('\n');
            }
            files.insert(format!("conversations/{session}.jsonl"), text);
        }
        files
    }

    /// Writes `files` (as produced by [`Self::render_files`]) under `dir` and
    /// opens the result.
    pub fn restore_files(
        dir: impl Into<PathBuf>,
        policy: MemoryPolicy,
        files: &BTreeMap<String, String>,
    ) -> Result<Self, MemoryError> {
        let dir = dir.into();
        for (relative, contents) in files {
            let relative = Path::new(relative);
            if relative
                .components()
                .any(|c| !matches!(c, std::path::Component::Normal(_)))
            {
                return Err(MemoryError::Corrupt {
                    path: relative.display().to_string(),
                    reason: "path escapes the memory directory".into(),
                });
            }
            let path = dir.join(relative);
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent)?;
            }
            fs::write(path, contents)?;
        }
        Self::open(dir, policy)
    }

    fn render_records(&self) -> String {
        serde_json::to_string_pretty(&*self.records.read()).expect("records serialize")
    }
}

fn store_path(dir: &Path, kind: StoreKind) -> PathBuf {
    dir.join("stores").join(format!("{}.jsonl", kind.as_str()))
}

fn conversation_path(dir: &Path, session_id: &str) -> PathBuf {
    dir.join("conversations").join(format!("{session_id}.jsonl"))
}

fn chunk_line(chunk: &Chunk) -> String {
    serde_json::to_string(&ChunkLine {
        chunk_id: chunk.chunk_id.clone(),
        doc_id: chunk.source_doc.clone(),
        ordinal: chunk.ordinal,
        text: chunk.text.clone(),
        vector: chunk.vector.clone(),
    })
    .expect("chunk serializes")
}
