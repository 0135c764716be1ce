//! Declaration index with exact cosine top-k search.
//!
//! File format: a header line `LFIDX1 <dimension> <commit_pin>` followed by
//! one line per entry, `name\tkind\tbase64(statement)\tbase64(f32 LE vector)`.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAGIC: &str = "LFIDX1";
/// Allowed deviation of a stored vector's norm from 1.
pub const NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("index format error at line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("index commit pin '{found}' does not match expected '{expected}'")]
    PinMismatch { expected: String, found: String },
    #[error("k must be at least 1")]
    InvalidK,
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DeclKind {
    Theorem,
    Lemma,
    Def,
}

impl fmt::Display for DeclKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DeclKind::Theorem => "theorem",
            DeclKind::Lemma => "lemma",
            DeclKind::Def => "def",
        })
    }
}

impl FromStr for DeclKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "theorem" => Ok(DeclKind::Theorem),
            "lemma" => Ok(DeclKind::Lemma),
            "def" => Ok(DeclKind::Def),
            other => Err(format!("unknown declaration kind '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexEntry {
    pub name: String,
    pub kind: DeclKind,
    pub statement: String,
    pub vector: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchIndex {
    pub commit_pin: String,
    pub dimension: usize,
    pub entries: Vec<IndexEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchHit<'a> {
    pub entry: &'a IndexEntry,
    pub score: f64,
}

pub fn norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt()
}

/// Cosine similarity computed in f64, clamped to [-1, 1].
pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum();
    let n = norm(a) * norm(b);
    if n == 0.0 {
        0.0
    } else {
        (dot / n).clamp(-1.0, 1.0)
    }
}

/// Scales a vector to unit length. Zero vectors are returned unchanged.
pub fn normalize(v: &mut [f32]) {
    let n = norm(v);
    if n > 0.0 {
        for x in v.iter_mut() {
            *x = (*x as f64 / n) as f32;
        }
    }
}

pub fn encode_vector(v: &[f32]) -> String {
    let bytes: Vec<u8> = v.iter().flat_map(|x| x.to_le_bytes()).collect();
    B64.encode(bytes)
}

pub fn decode_vector(s: &str) -> Result<Vec<f32>, String> {
    let bytes = B64.decode(s.trim()).map_err(|e| format!("vector is not base64: {e}"))?;
    if bytes.len() % 4 != 0 {
        return Err(format!("vector byte length {} is not a multiple of 4", bytes.len()));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

// Ordering for the top-k heap: greater means ranked earlier.
struct Ranked<'a> {
    score: f64,
    entry: &'a IndexEntry,
}

impl Ord for Ranked<'_> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.score
            .total_cmp(&other.score)
            .then_with(|| other.entry.name.cmp(&self.entry.name))
    }
}

impl PartialOrd for Ranked<'_> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for Ranked<'_> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Ranked<'_> {}

impl SearchIndex {
    pub fn new(commit_pin: impl Into<String>, dimension: usize) -> Self {
        SearchIndex {
            commit_pin: commit_pin.into(),
            dimension,
            entries: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn parse(text: &str) -> Result<Self, IndexError> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or(IndexError::Format {
            line: 1,
            message: "empty file".into(),
        })?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 3 || fields[0] != MAGIC {
            return Err(IndexError::Format {
                line: 1,
                message: format!("expected '{MAGIC} <dimension> <commit_pin>'"),
            });
        }
        let dimension: usize = fields[1].parse().map_err(|_| IndexError::Format {
            line: 1,
            message: format!("bad dimension '{}'", fields[1]),
        })?;
        let mut index = SearchIndex::new(fields[2], dimension);
        for (i, line) in lines {
            let lineno = i + 1;
            if line.is_empty() {
                continue;
            }
            let err = |message: String| IndexError::Format {
                line: lineno,
                message,
            };
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 4 {
                return Err(err(format!("expected 4 tab-separated fields, found {}", cols.len())));
            }
            let kind = cols[1].parse::<DeclKind>().map_err(err)?;
            let statement = B64
                .decode(cols[2])
                .map_err(|e| err(format!("statement is not base64: {e}")))
                .and_then(|b| String::from_utf8(b).map_err(|e| err(format!("statement is not UTF-8: {e}"))))?;
            let mut vector = decode_vector(cols[3]).map_err(err)?;
            if vector.len() != dimension {
                return Err(IndexError::DimensionMismatch {
                    expected: dimension,
                    found: vector.len(),
                });
            }
            let n = norm(&vector);
            if n == 0.0 || !n.is_finite() {
                return Err(err("vector has zero or non-finite norm".into()));
            }
            if (n - 1.0).abs() > NORM_TOLERANCE {
                normalize(&mut vector);
            }
            index.entries.push(IndexEntry {
                name: cols[0].to_string(),
                kind,
                statement,
                vector,
            });
        }
        Ok(index)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, IndexError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Loads and checks the commit pin.
    pub fn load_pinned(path: impl AsRef<Path>, expected_pin: &str) -> Result<Self, IndexError> {
        let index = Self::load(path)?;
        if index.commit_pin != expected_pin {
            return Err(IndexError::PinMismatch {
                expected: expected_pin.to_string(),
                found: index.commit_pin,
            });
        }
        Ok(index)
    }

    pub fn serialize(&self) -> String {
        let mut out = format!("{MAGIC} {} {}\n", self.dimension, self.commit_pin);
        for e in &self.entries {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\n",
                e.name,
                e.kind,
                B64.encode(e.statement.as_bytes()),
                encode_vector(&e.vector)
            ));
        }
        out
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), IndexError> {
        std::fs::write(path, self.serialize())?;
        Ok(())
    }

    /// Top-k entries by cosine similarity, descending, ties by ascending name.
    pub fn search(&self, query: &[f32], k: usize) -> Result<Vec<SearchHit<'_>>, IndexError> {
        if k == 0 {
            return Err(IndexError::InvalidK);
        }
        if query.len() != self.dimension {
            return Err(IndexError::DimensionMismatch {
                expected: self.dimension,
                found: query.len(),
            });
        }
        // min-heap of the best k seen so far
        let mut heap: BinaryHeap<std::cmp::Reverse<Ranked<'_>>> = BinaryHeap::with_capacity(k + 1);
        for entry in &self.entries {
            let r = Ranked {
                score: cosine(query, &entry.vector),
                entry,
            };
            if heap.len() < k {
                heap.push(std::cmp::Reverse(r));
            } else if heap.peek().is_some_and(|worst| r > worst.0) {
                heap.pop();
                heap.push(std::cmp::Reverse(r));
            }
        }
        let mut hits: Vec<Ranked<'_>> = heap.into_iter().map(|r| r.0).collect();
        hits.sort_by(|a, b| b.cmp(a));
        Ok(hits
            .into_iter()
            .map(|r| SearchHit {
                entry: r.entry,
                score: r.score,
            })
            .collect())
    }
}
