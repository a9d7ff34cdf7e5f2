//! Per-token vectors for a jointly encoded sentence pair.
//!
//! Row layout of an [`EmbeddingMatrix`] for source length `n` and reference
//! length `m`:
//!
//! ```text
//! 0            BOS marker
//! 1 ..= n      source tokens
//! n + 1        SEP marker
//! n + 2 ..     reference tokens (m rows)
//! n + m + 2    SEP marker
//! ```
//!
//! # Store format
//!
//! Little-endian throughout. Header: magic `PSEM`, version `u32`, dim `u32`,
//! entry count `u64`. Each entry: key length `u32` + UTF-8 key, `n: u32`,
//! `m: u32`, then `(n + m + 3) · dim` `f32` values row-major. The key is the
//! SHA-256 hex digest of `source_raw + "\n" + reference_raw`. A companion
//! JSON object at `<store>.index.json` maps key → byte offset of the entry.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{Span, TokenizedSentence};

pub const STORE_MAGIC: &[u8; 4] = b"PSEM";
pub const STORE_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 4 + 8;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    n: usize,
    m: usize,
    dim: usize,
    data: Vec<f32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Source,
    Reference,
}

impl EmbeddingMatrix {
    pub fn new(n: usize, m: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        if n == 0 || m == 0 || dim == 0 {
            return Err(Error::InvalidInput("embedding matrix needs n, m, dim ≥ 1".into()));
        }
        let expected = (n + m + 3) * dim;
        if data.len() != expected {
            return Err(Error::DimMismatch {
                expected,
                found: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericalError("embedding matrix"));
        }
        Ok(Self { n, m, dim, data })
    }

    pub fn source_len(&self) -> usize {
        self.n
    }

    pub fn reference_len(&self) -> usize {
        self.m
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> usize {
        self.n + self.m + 3
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f32] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    fn base(&self, side: Side) -> usize {
        match side {
            Side::Source => 1,
            Side::Reference => self.n + 2,
        }
    }

    fn side_len(&self, side: Side) -> usize {
        match side {
            Side::Source => self.n,
            Side::Reference => self.m,
        }
    }

    /// Row index of token `i` on `side`.
    pub fn row_index(&self, side: Side, i: usize) -> usize {
        self.base(side) + i
    }
}

/// Mean of the rows covered by `span` on `side`.
pub fn span_pool(m: &EmbeddingMatrix, span: Span, side: Side) -> Result<Vec<f64>> {
    span.check(m.side_len(side))?;
    let mut out = vec![0.0f64; m.dim];
    for i in span.indices() {
        for (o, &v) in out.iter_mut().zip(m.row(m.row_index(side, i))) {
            *o += v as f64;
        }
    }
    let len = span.len() as f64;
    out.iter_mut().for_each(|o| *o /= len);
    Ok(out)
}

/// Contextual token vectors for sentence pairs.
pub trait EmbeddingProvider: Send + Sync {
    fn dim(&self) -> usize;
    fn embed_pair(&self, source: &TokenizedSentence, reference: &TokenizedSentence) -> Result<EmbeddingMatrix>;
}

/// Deterministic stand-in encoder.
///
/// Each token's FNV-1a hash seeds a pseudo-random unit vector; a token row is
/// `normalize(0.6 · self + 0.4 · mean(neighbours within ±2 in the same
/// sentence))`. Marker rows are the unit vectors of `[CLS]` and `[SEP]`.
#[derive(Debug, Clone, Copy)]
pub struct HashEmbedder {
    dim: usize,
}

impl HashEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dim must be positive");
        Self { dim }
    }

    pub fn token_vector(&self, token: &str) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(fnv1a64(token.as_bytes()));
        let mut v: Vec<f64> = (0..self.dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        normalize(&mut v);
        v
    }

    fn sentence_rows(&self, tokens: &[String]) -> Vec<Vec<f64>> {
        let base: Vec<Vec<f64>> = tokens.iter().map(|t| self.token_vector(t)).collect();
        (0..tokens.len())
            .map(|i| {
                let lo = i.saturating_sub(2);
                let hi = (i + 2).min(tokens.len() - 1);
                let neighbours: Vec<usize> = (lo..=hi).filter(|&j| j != i).collect();
                let mut row: Vec<f64> = if neighbours.is_empty() {
                    base[i].clone()
                } else {
                    let k = neighbours.len() as f64;
                    (0..self.dim)
                        .map(|d| 0.6 * base[i][d] + 0.4 * neighbours.iter().map(|&j| base[j][d]).sum::<f64>() / k)
                        .collect()
                };
                normalize(&mut row);
                row
            })
            .collect()
    }
}

impl EmbeddingProvider for HashEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_pair(&self, source: &TokenizedSentence, reference: &TokenizedSentence) -> Result<EmbeddingMatrix> {
        let cls = self.token_vector("[CLS]");
        let sep = self.token_vector("[SEP]");
        let mut data = Vec::with_capacity((source.len() + reference.len() + 3) * self.dim);
        let mut push = |row: &[f64]| data.extend(row.iter().map(|&v| v as f32));
        push(&cls);
        self.sentence_rows(source.tokens()).iter().for_each(|r| push(r));
        push(&sep);
        self.sentence_rows(reference.tokens()).iter().for_each(|r| push(r));
        push(&sep);
        EmbeddingMatrix::new(source.len(), reference.len(), self.dim, data)
    }
}

fn normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Content address of a sentence pair in an embedding store.
pub fn pair_key(source_raw: &str, reference_raw: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(source_raw.as_bytes());
    hasher.update(b"\n");
    hasher.update(reference_raw.as_bytes());
    hex::encode(hasher.finalize())
}

pub fn index_path(store: &Path) -> PathBuf {
    let mut s = store.as_os_str().to_owned();
    s.push(".index.json");
    PathBuf::from(s)
}

/// In-memory embedding store; also usable directly as a provider.
#[derive(Debug, Clone)]
pub struct EmbeddingStore {
    dim: usize,
    entries: BTreeMap<String, EmbeddingMatrix>,
}

impl EmbeddingStore {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            entries: BTreeMap::new(),
        }
    }

    /// Insert under the pair's key. Returns false (and keeps the existing
    /// entry) when the key is already present.
    pub fn insert(&mut self, source: &TokenizedSentence, reference: &TokenizedSentence, m: EmbeddingMatrix) -> Result<bool> {
        if m.dim() != self.dim {
            return Err(Error::DimMismatch {
                expected: self.dim,
                found: m.dim(),
            });
        }
        check_shape(&m, source, reference)?;
        let key = pair_key(source.raw_text(), reference.raw_text());
        if self.entries.contains_key(&key) {
            return Ok(false);
        }
        self.entries.insert(key, m);
        Ok(true)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Write the binary store and its JSON index.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut buf = Vec::new();
        buf.extend_from_slice(STORE_MAGIC);
        buf.extend_from_slice(&STORE_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.dim as u32).to_le_bytes());
        buf.extend_from_slice(&(self.entries.len() as u64).to_le_bytes());
        let mut index = BTreeMap::new();
        for (key, m) in &self.entries {
            index.insert(key.clone(), buf.len() as u64);
            buf.extend_from_slice(&(key.len() as u32).to_le_bytes());
            buf.extend_from_slice(key.as_bytes());
            buf.extend_from_slice(&(m.n as u32).to_le_bytes());
            buf.extend_from_slice(&(m.m as u32).to_le_bytes());
            for v in &m.data {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        std::fs::write(path, &buf).map_err(|e| Error::io(path, e))?;
        let idx = index_path(path);
        std::fs::write(&idx, serde_json::to_vec(&index)?).map_err(|e| Error::io(&idx, e))?;
        Ok(())
    }
}

impl EmbeddingProvider for EmbeddingStore {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_pair(&self, source: &TokenizedSentence, reference: &TokenizedSentence) -> Result<EmbeddingMatrix> {
        let key = pair_key(source.raw_text(), reference.raw_text());
        let m = self.entries.get(&key).ok_or(Error::PairNotFound { key })?;
        check_shape(m, source, reference)?;
        Ok(m.clone())
    }
}

fn check_shape(m: &EmbeddingMatrix, source: &TokenizedSentence, reference: &TokenizedSentence) -> Result<()> {
    if m.n != source.len() || m.m != reference.len() {
        return Err(Error::format(
            "embedding entry",
            format!(
                "entry has n={}, m={} but the pair has {} and {} tokens",
                m.n,
                m.m,
                source.len(),
                reference.len()
            ),
        ));
    }
    Ok(())
}

/// Read-only provider over a binary store file, as written by the exporter.
#[derive(Debug)]
pub struct FileStoreProvider {
    dim: usize,
    bytes: Vec<u8>,
    index: HashMap<String, u64>,
}

impl FileStoreProvider {
    /// Open `path`. When `expected_dim` is given the header must match it.
    /// The companion index is used when present, otherwise the file is
    /// scanned.
    pub fn open(path: impl AsRef<Path>, expected_dim: Option<usize>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let (dim, count) = parse_header(&bytes)?;
        if let Some(expected) = expected_dim {
            if expected != dim {
                return Err(Error::DimMismatch { expected, found: dim });
            }
        }
        let idx = index_path(path);
        let index = if idx.exists() {
            let text = std::fs::read(&idx).map_err(|e| Error::io(&idx, e))?;
            serde_json::from_slice(&text)?
        } else {
            scan_entries(&bytes, dim, count)?
        };
        let provider = Self { dim, bytes, index };
        if provider.index.len() as u64 != count {
            return Err(Error::format(
                "embedding store",
                format!("header count {count} but index has {} entries", provider.index.len()),
            ));
        }
        Ok(provider)
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    /// Check that every index offset points at an entry carrying its key.
    pub fn validate(&self) -> Result<()> {
        for (key, &off) in &self.index {
            let (found, _, _) = read_entry(&self.bytes, off as usize, self.dim)?;
            if found != *key {
                return Err(Error::format("embedding index", format!("offset {off} holds {found}, not {key}")));
            }
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Result<EmbeddingMatrix> {
        let off = *self.index.get(key).ok_or_else(|| Error::PairNotFound { key: key.to_string() })?;
        let (found, m, _) = read_entry(&self.bytes, off as usize, self.dim)?;
        if found != key {
            return Err(Error::format("embedding index", format!("offset {off} holds {found}, not {key}")));
        }
        Ok(m)
    }
}

impl EmbeddingProvider for FileStoreProvider {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_pair(&self, source: &TokenizedSentence, reference: &TokenizedSentence) -> Result<EmbeddingMatrix> {
        let m = self.get(&pair_key(source.raw_text(), reference.raw_text()))?;
        check_shape(&m, source, reference)?;
        Ok(m)
    }
}

fn truncated() -> Error {
    Error::format("embedding store", "unexpected end of file")
}

fn read_u32(bytes: &[u8], at: usize) -> Result<u32> {
    let b = bytes.get(at..at + 4).ok_or_else(truncated)?;
    Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
}

fn parse_header(bytes: &[u8]) -> Result<(usize, u64)> {
    if bytes.len() < HEADER_LEN || &bytes[..4] != STORE_MAGIC {
        return Err(Error::format("embedding store", "bad magic"));
    }
    let version = read_u32(bytes, 4)?;
    if version != STORE_VERSION {
        return Err(Error::format("embedding store", format!("unsupported version {version}")));
    }
    let dim = read_u32(bytes, 8)? as usize;
    if dim == 0 {
        return Err(Error::format("embedding store", "dim is zero"));
    }
    let count = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes"));
    Ok((dim, count))
}

/// Parse one entry at `off`; returns (key, matrix, offset past the entry).
fn read_entry(bytes: &[u8], off: usize, dim: usize) -> Result<(String, EmbeddingMatrix, usize)> {
    let key_len = read_u32(bytes, off)? as usize;
    let key_at = off + 4;
    let key = std::str::from_utf8(bytes.get(key_at..key_at + key_len).ok_or_else(truncated)?)
        .map_err(|e| Error::format("embedding store", e.to_string()))?
        .to_string();
    let mut at = key_at + key_len;
    let n = read_u32(bytes, at)? as usize;
    let m = read_u32(bytes, at + 4)? as usize;
    at += 8;
    let count = (n + m + 3) * dim;
    let raw = bytes.get(at..at + 4 * count).ok_or_else(truncated)?;
    let data = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Ok((key, EmbeddingMatrix::new(n, m, dim, data)?, at + 4 * count))
}

fn scan_entries(bytes: &[u8], dim: usize, count: u64) -> Result<HashMap<String, u64>> {
    let mut index = HashMap::new();
    let mut off = HEADER_LEN;
    for _ in 0..count {
        let (key, _, next) = read_entry(bytes, off, dim)?;
        index.insert(key, off as u64);
        off = next;
    }
    Ok(index)
}
