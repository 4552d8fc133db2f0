//! Unit-norm embedding vectors and the signed feature-hash backend.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use xxhash_rust::xxh64::xxh64;

use crate::text;

pub const DEFAULT_DIMENSION: usize = 1024;
pub const DEFAULT_HASH_SEED: u64 = 0x5eed_c0de_2013_2025;

/// Allowed deviation of a vector's L2 norm from 1.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EmbedError {
    #[error("text has no tokens")]
    EmptyText,
    #[error("embedding dimension must be at least 2, got {0}")]
    InvalidDimension(usize),
    #[error("embedding has zero norm")]
    ZeroNorm,
    #[error("embedding contains a non-finite component")]
    NonFinite,
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("vector norm {0} is not within tolerance of 1")]
    NotUnitNorm(f64),
}

/// An L2-normalized embedding together with the tag of the backend that
/// produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    values: Vec<f32>,
    model_tag: String,
}

impl EmbeddingVector {
    /// Normalizes `raw` and wraps it. Fails on zero or non-finite input.
    pub fn normalized(raw: &[f64], model_tag: impl Into<String>) -> Result<Self, EmbedError> {
        if raw.len() < 2 {
            return Err(EmbedError::InvalidDimension(raw.len()));
        }
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(EmbedError::NonFinite);
        }
        let norm = libm::sqrt(raw.iter().map(|v| v * v).sum::<f64>());
        if norm == 0.0 || !norm.is_finite() {
            return Err(EmbedError::ZeroNorm);
        }
        let values = raw.iter().map(|v| (v / norm) as f32).collect();
        Ok(Self { values, model_tag: model_tag.into() })
    }

    /// Same as [`normalized`](Self::normalized) for single-precision input.
    pub fn normalized_f32(raw: &[f32], model_tag: impl Into<String>) -> Result<Self, EmbedError> {
        let wide: Vec<f64> = raw.iter().map(|&v| f64::from(v)).collect();
        Self::normalized(&wide, model_tag)
    }

    /// Wraps values that are already unit-norm without touching them.
    pub fn from_unit(values: Vec<f32>, model_tag: impl Into<String>) -> Result<Self, EmbedError> {
        if values.len() < 2 {
            return Err(EmbedError::InvalidDimension(values.len()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmbedError::NonFinite);
        }
        let v = Self { values, model_tag: model_tag.into() };
        let norm = v.norm();
        if (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
            return Err(EmbedError::NotUnitNorm(norm));
        }
        Ok(v)
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn dimension(&self) -> usize {
        self.values.len()
    }

    pub fn model_tag(&self) -> &str {
        &self.model_tag
    }

    pub fn norm(&self) -> f64 {
        libm::sqrt(self.values.iter().map(|&v| f64::from(v) * f64::from(v)).sum())
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }
}

impl AsRef<[f32]> for EmbeddingVector {
    fn as_ref(&self) -> &[f32] {
        &self.values
    }
}

/// Where a token lands in the hashed feature space.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Bucket {
    pub index: usize,
    pub positive: bool,
}

/// Signed feature hashing: each normalized token adds ±1 to bucket
/// `xxh64(token, seed) mod dimension`, with the sign taken from the top bit
/// of the same hash. The count vector is then L2-normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashEmbedder {
    dimension: usize,
    seed: u64,
}

impl HashEmbedder {
    pub fn new(dimension: usize) -> Result<Self, EmbedError> {
        Self::with_seed(dimension, DEFAULT_HASH_SEED)
    }

    pub fn with_seed(dimension: usize, seed: u64) -> Result<Self, EmbedError> {
        if dimension < 2 {
            return Err(EmbedError::InvalidDimension(dimension));
        }
        Ok(Self { dimension, seed })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Contains no whitespace so it can sit in an embedding store header.
    pub fn model_tag(&self) -> String {
        format!("feature-hash-xxh64-seed{:016x}", self.seed)
    }

    /// Bucket of an already-normalized token.
    pub fn bucket(&self, token: &str) -> Bucket {
        let h = xxh64(token.as_bytes(), self.seed);
        Bucket { index: (h % self.dimension as u64) as usize, positive: h >> 63 == 0 }
    }

    pub fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        let mut counts = vec![0.0f64; self.dimension];
        let mut any = false;
        for token in text::tokens(text) {
            let b = self.bucket(&token);
            counts[b.index] += if b.positive { 1.0 } else { -1.0 };
            any = true;
        }
        if !any {
            return Err(EmbedError::EmptyText);
        }
        // Tokens can cancel inside one bucket; an all-zero vector has no
        // direction and is reported as such.
        EmbeddingVector::normalized(&counts, self.model_tag())
    }
}

/// Hash embedding with the default seed.
pub fn hash_embed(text: &str, dimension: usize) -> Result<EmbeddingVector, EmbedError> {
    HashEmbedder::new(dimension)?.embed(text)
}
