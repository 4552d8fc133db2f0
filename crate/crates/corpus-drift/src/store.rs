//! Embedding store: header `m=<dim> model=<tag>`, then one record per line,
//! `doc_id<TAB>year<TAB>base64(little-endian f32[m])`.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use corpus_drift_core::embed::{EmbedError, EmbeddingVector};

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}:{line}: {reason}")]
    Format { path: PathBuf, line: usize, reason: String },
    #[error("record {doc_id}: dimension {found}, store has {expected}")]
    DimensionMismatch { doc_id: String, expected: usize, found: usize },
    #[error("record {doc_id}: model {found}, store has {expected}")]
    ModelMismatch { doc_id: String, expected: String, found: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct StoredEmbedding {
    pub doc_id: String,
    pub year: i32,
    pub vector: EmbeddingVector,
}

pub fn encode_vector(values: &[f32]) -> String {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    STANDARD.encode(bytes)
}

pub fn decode_vector(encoded: &str) -> Result<Vec<f32>, String> {
    let bytes = STANDARD.decode(encoded.trim()).map_err(|e| e.to_string())?;
    if bytes.len() % 4 != 0 {
        return Err(format!("{} bytes is not a whole number of f32", bytes.len()));
    }
    Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
}

/// Single-writer, append-only.
pub struct StoreWriter {
    out: BufWriter<File>,
    path: PathBuf,
    dimension: usize,
    model_tag: String,
    written: usize,
}

impl StoreWriter {
    pub fn create(path: &Path, dimension: usize, model_tag: &str) -> Result<Self, StoreError> {
        let io_err = |source| StoreError::Io { path: path.to_path_buf(), source };
        let mut out = BufWriter::new(File::create(path).map_err(io_err)?);
        writeln!(out, "m={dimension} model={model_tag}").map_err(io_err)?;
        Ok(Self { out, path: path.to_path_buf(), dimension, model_tag: model_tag.to_string(), written: 0 })
    }

    pub fn append(&mut self, doc_id: &str, year: i32, vector: &EmbeddingVector) -> Result<(), StoreError> {
        if vector.dimension() != self.dimension {
            return Err(StoreError::DimensionMismatch {
                doc_id: doc_id.to_string(),
                expected: self.dimension,
                found: vector.dimension(),
            });
        }
        if vector.model_tag() != self.model_tag {
            return Err(StoreError::ModelMismatch {
                doc_id: doc_id.to_string(),
                expected: self.model_tag.clone(),
                found: vector.model_tag().to_string(),
            });
        }
        writeln!(self.out, "{doc_id}\t{year}\t{}", encode_vector(vector.values()))
            .map_err(|source| StoreError::Io { path: self.path.clone(), source })?;
        self.written += 1;
        Ok(())
    }

    pub fn written(&self) -> usize {
        self.written
    }

    pub fn finish(mut self) -> Result<usize, StoreError> {
        self.out.flush().map_err(|source| StoreError::Io { path: self.path.clone(), source })?;
        Ok(self.written)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    pub dimension: usize,
    pub model_tag: String,
    pub records: Vec<StoredEmbedding>,
}

fn parse_header(line: &str) -> Option<(usize, String)> {
    let rest = line.strip_prefix("m=")?;
    let (dim, rest) = rest.split_once(' ')?;
    let tag = rest.strip_prefix("model=")?;
    Some((dim.parse().ok()?, tag.to_string()))
}

pub fn read_store(path: &Path) -> Result<EmbeddingStore, StoreError> {
    let file = File::open(path).map_err(|source| StoreError::Io { path: path.to_path_buf(), source })?;
    let format = |line: usize, reason: String| StoreError::Format { path: path.to_path_buf(), line, reason };
    let mut lines = BufReader::new(file).lines();
    let header = match lines.next() {
        Some(line) => line.map_err(|source| StoreError::Io { path: path.to_path_buf(), source })?,
        None => return Err(format(1, "missing header".into())),
    };
    let (dimension, model_tag) =
        parse_header(header.trim_end()).ok_or_else(|| format(1, format!("bad header {header:?}")))?;
    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        let line = line.map_err(|source| StoreError::Io { path: path.to_path_buf(), source })?;
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let (Some(doc_id), Some(year), Some(encoded), None) =
            (fields.next(), fields.next(), fields.next(), fields.next())
        else {
            return Err(format(lineno, "expected 3 tab-separated fields".into()));
        };
        let year: i32 = year.parse().map_err(|_| format(lineno, format!("bad year {year:?}")))?;
        let values = decode_vector(encoded).map_err(|e| format(lineno, e))?;
        if values.len() != dimension {
            return Err(StoreError::DimensionMismatch {
                doc_id: doc_id.to_string(),
                expected: dimension,
                found: values.len(),
            });
        }
        let vector = EmbeddingVector::from_unit(values, model_tag.as_str())
            .map_err(|e: EmbedError| format(lineno, e.to_string()))?;
        records.push(StoredEmbedding { doc_id: doc_id.to_string(), year, vector });
    }
    Ok(EmbeddingStore { dimension, model_tag, records })
}
