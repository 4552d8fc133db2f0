//! Within-cohort similarity and diversity statistics.
//!
//! The central quantity is the mean cosine similarity over all unordered
//! distinct pairs `j < k` of a cohort, `q = (1/N) Σ cos(x_j, x_k)` with
//! `N = n(n-1)/2`. It can be computed exactly, or estimated from a seeded
//! uniform sample of pairs drawn without replacement when `N` is too large.
//!
//! Exact sums are accumulated per row `j` with compensated summation and the
//! row partials are merged in ascending `j`. Callers that parallelize over
//! rows (see [`PreparedCohort::row_sum`]) get bit-identical results as long
//! as they merge in the same order.

use alloc::collections::BTreeSet;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::sum::CompensatedSum;

/// Cosines may overshoot `[-1, 1]` by rounding; anything further out is a bug.
const CLAMP_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimilarityError {
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("vector {index} has zero norm")]
    ZeroNorm { index: usize },
    #[error("vector {index} has a non-finite component")]
    NonFinite { index: usize },
    #[error("cohort has {n} members, at least 2 are required")]
    CohortTooSmall { n: usize },
    #[error("cohort is empty")]
    EmptyCohort,
    #[error("pair budget must be at least 2, got {0}")]
    InvalidPairBudget(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Method {
    Exact,
    Sampled,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CohortSimilarityStat {
    pub year: i32,
    pub n: usize,
    pub mean_similarity: f64,
    pub pair_count_used: u64,
    pub total_pairs: u64,
    pub method: Method,
    /// Zero for exact results.
    pub std_error: f64,
    pub seed: Option<u64>,
}

impl CohortSimilarityStat {
    /// Sentence-embedding cohorts normally land in `[0, 1]`; a negative mean
    /// is reported rather than clamped.
    pub fn is_negative(&self) -> bool {
        self.mean_similarity < 0.0
    }
}

/// Number of unordered distinct pairs in a cohort of `n`.
pub fn total_pairs(n: usize) -> u64 {
    let n = n as u64;
    n * n.saturating_sub(1) / 2
}

fn row_offset(n: u64, j: u64) -> u64 {
    // Pairs in rows 0..j: (n-1) + (n-2) + ... + (n-j).
    j * (2 * n - j - 1) / 2
}

/// Lexicographic index of the pair `(j, k)`, `j < k < n`.
pub fn pair_index(n: usize, j: usize, k: usize) -> u64 {
    debug_assert!(j < k && k < n);
    row_offset(n as u64, j as u64) + (k - j - 1) as u64
}

/// Inverse of [`pair_index`].
pub fn pair_from_index(n: usize, index: u64) -> (usize, usize) {
    let nn = n as u64;
    debug_assert!(index < total_pairs(n));
    // Largest j with row_offset(j) <= index, from the quadratic, then fixed
    // up in exact integer arithmetic.
    let b = (2 * nn - 1) as f64;
    let disc = b * b - 8.0 * index as f64;
    let mut j = ((b - libm::sqrt(disc.max(0.0))) / 2.0) as u64;
    j = j.min(nn.saturating_sub(2));
    while j > 0 && row_offset(nn, j) > index {
        j -= 1;
    }
    while j + 1 < nn - 1 && row_offset(nn, j + 1) <= index {
        j += 1;
    }
    let k = index - row_offset(nn, j) + j + 1;
    (j as usize, k as usize)
}

fn dot(u: &[f32], v: &[f32]) -> f64 {
    u.iter().zip(v).map(|(&a, &b)| f64::from(a) * f64::from(b)).sum()
}

fn clamp_unit(c: f64) -> f64 {
    debug_assert!(c.abs() <= 1.0 + CLAMP_SLACK || c.is_nan(), "cosine {c} out of range");
    c.clamp(-1.0, 1.0)
}

/// `dot(u, v) / (|u| |v|)`.
pub fn cosine(u: &[f32], v: &[f32]) -> Result<f64, SimilarityError> {
    if u.len() != v.len() {
        return Err(SimilarityError::DimensionMismatch { expected: u.len(), found: v.len() });
    }
    let nu = dot(u, u);
    let nv = dot(v, v);
    for (index, sq) in [(0, nu), (1, nv)] {
        if !sq.is_finite() {
            return Err(SimilarityError::NonFinite { index });
        }
        if sq == 0.0 {
            return Err(SimilarityError::ZeroNorm { index });
        }
    }
    // sqrt(|u|²|v|²) rather than |u||v|: sqrt of a rounded square is exact,
    // so cos(u, u) == 1.
    Ok(clamp_unit(dot(u, v) / libm::sqrt(nu * nv)))
}

/// A validated cohort with cached squared norms.
#[derive(Debug)]
pub struct PreparedCohort<'a, V> {
    vectors: &'a [V],
    sq_norms: Vec<f64>,
}

impl<'a, V: AsRef<[f32]>> PreparedCohort<'a, V> {
    pub fn new(vectors: &'a [V]) -> Result<Self, SimilarityError> {
        let dim = vectors.first().map(|v| v.as_ref().len()).unwrap_or(0);
        let mut sq_norms = Vec::with_capacity(vectors.len());
        for (index, v) in vectors.iter().enumerate() {
            let v = v.as_ref();
            if v.len() != dim {
                return Err(SimilarityError::DimensionMismatch { expected: dim, found: v.len() });
            }
            let sq = dot(v, v);
            if !sq.is_finite() {
                return Err(SimilarityError::NonFinite { index });
            }
            if sq == 0.0 {
                return Err(SimilarityError::ZeroNorm { index });
            }
            sq_norms.push(sq);
        }
        Ok(Self { vectors, sq_norms })
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn total_pairs(&self) -> u64 {
        total_pairs(self.len())
    }

    pub fn pair_cosine(&self, j: usize, k: usize) -> f64 {
        let (u, v) = (self.vectors[j].as_ref(), self.vectors[k].as_ref());
        clamp_unit(dot(u, v) / libm::sqrt(self.sq_norms[j] * self.sq_norms[k]))
    }

    pub fn pair_cosine_at(&self, index: u64) -> f64 {
        let (j, k) = pair_from_index(self.len(), index);
        self.pair_cosine(j, k)
    }

    /// Compensated sum of `cos(j, k)` for all `k > j`.
    pub fn row_sum(&self, j: usize) -> CompensatedSum {
        (j + 1..self.len()).map(|k| self.pair_cosine(j, k)).collect()
    }

    /// Folds per-row partials (in ascending row order) into the exact stat.
    pub fn exact_from_rows<I>(&self, year: i32, rows: I) -> Result<CohortSimilarityStat, SimilarityError>
    where
        I: IntoIterator<Item = CompensatedSum>,
    {
        let n = self.len();
        if n < 2 {
            return Err(SimilarityError::CohortTooSmall { n });
        }
        let mut acc = CompensatedSum::new();
        for row in rows {
            acc.merge(&row);
        }
        let total = self.total_pairs();
        Ok(CohortSimilarityStat {
            year,
            n,
            mean_similarity: acc.value() / total as f64,
            pair_count_used: total,
            total_pairs: total,
            method: Method::Exact,
            std_error: 0.0,
            seed: None,
        })
    }

    pub fn exact(&self, year: i32) -> Result<CohortSimilarityStat, SimilarityError> {
        self.exact_from_rows(year, (0..self.len()).map(|j| self.row_sum(j)))
    }

    /// Builds the sampled stat from cosines evaluated at the indices returned
    /// by [`sample_pair_indices`], in that order.
    pub fn sampled_from_values(
        &self,
        year: i32,
        seed: u64,
        values: &[f64],
    ) -> Result<CohortSimilarityStat, SimilarityError> {
        let n = self.len();
        if n < 2 {
            return Err(SimilarityError::CohortTooSmall { n });
        }
        let used = values.len() as u64;
        if used < 2 {
            return Err(SimilarityError::InvalidPairBudget(used));
        }
        let mean = values.iter().copied().collect::<CompensatedSum>().value() / used as f64;
        let ss = values.iter().map(|v| (v - mean) * (v - mean)).collect::<CompensatedSum>().value();
        let sd = libm::sqrt(ss / (used - 1) as f64);
        Ok(CohortSimilarityStat {
            year,
            n,
            mean_similarity: mean,
            pair_count_used: used,
            total_pairs: self.total_pairs(),
            method: Method::Sampled,
            std_error: sd / libm::sqrt(used as f64),
            seed: Some(seed),
        })
    }

    pub fn sampled(&self, year: i32, num_pairs: u64, seed: u64) -> Result<CohortSimilarityStat, SimilarityError> {
        let n = self.len();
        if n < 2 {
            return Err(SimilarityError::CohortTooSmall { n });
        }
        if num_pairs < 2 {
            return Err(SimilarityError::InvalidPairBudget(num_pairs));
        }
        if num_pairs >= self.total_pairs() {
            return self.exact(year);
        }
        let indices = sample_pair_indices(self.total_pairs(), num_pairs, seed);
        let values: Vec<f64> = indices.iter().map(|&t| self.pair_cosine_at(t)).collect();
        self.sampled_from_values(year, seed, &values)
    }
}

/// `count` distinct indices drawn uniformly from `0..total` (Floyd's
/// algorithm), returned in ascending order. Deterministic in `seed`.
pub fn sample_pair_indices(total: u64, count: u64, seed: u64) -> Vec<u64> {
    let count = count.min(total);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = BTreeSet::new();
    for j in total - count..total {
        let t = rng.random_range(0..=j);
        if !chosen.insert(t) {
            chosen.insert(j);
        }
    }
    chosen.into_iter().collect()
}

/// Mean cosine over all unordered distinct pairs.
pub fn mean_pairwise_exact<V: AsRef<[f32]>>(vectors: &[V], year: i32) -> Result<CohortSimilarityStat, SimilarityError> {
    if vectors.len() < 2 {
        return Err(SimilarityError::CohortTooSmall { n: vectors.len() });
    }
    PreparedCohort::new(vectors)?.exact(year)
}

/// Mean cosine over `min(num_pairs, N)` pairs sampled without replacement.
/// Falls back to the exact computation when the budget covers every pair.
pub fn mean_pairwise_sampled<V: AsRef<[f32]>>(
    vectors: &[V],
    year: i32,
    num_pairs: u64,
    seed: u64,
) -> Result<CohortSimilarityStat, SimilarityError> {
    if vectors.len() < 2 {
        return Err(SimilarityError::CohortTooSmall { n: vectors.len() });
    }
    PreparedCohort::new(vectors)?.sampled(year, num_pairs, seed)
}

fn check_dims<V: AsRef<[f32]>>(vectors: &[V]) -> Result<usize, SimilarityError> {
    let dim = vectors.first().ok_or(SimilarityError::EmptyCohort)?.as_ref().len();
    for v in vectors {
        if v.as_ref().len() != dim {
            return Err(SimilarityError::DimensionMismatch { expected: dim, found: v.as_ref().len() });
        }
    }
    Ok(dim)
}

/// Componentwise arithmetic mean. Not re-normalized.
pub fn cohort_mean<V: AsRef<[f32]>>(vectors: &[V]) -> Result<Vec<f64>, SimilarityError> {
    let dim = check_dims(vectors)?;
    let mut acc = vec![CompensatedSum::new(); dim];
    for v in vectors {
        for (a, &x) in acc.iter_mut().zip(v.as_ref()) {
            a.add(f64::from(x));
        }
    }
    let n = vectors.len() as f64;
    Ok(acc.iter().map(|a| a.value() / n).collect())
}

/// Dense symmetric matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SymmetricMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl SymmetricMatrix {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i)).collect::<CompensatedSum>().value()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CovarianceMode {
    Full,
    /// Trace plus the `top_k` largest eigenvalues.
    Summary {
        top_k: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Covariance {
    Full(SymmetricMatrix),
    Summary { trace: f64, top_eigenvalues: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CohortDiversityStat {
    pub year: i32,
    pub n: usize,
    pub mean_vector: Vec<f64>,
    pub covariance: Covariance,
    pub trace: f64,
}

/// Unbiased sample covariance `1/(n-1) Σ (x - μ)(x - μ)ᵀ`.
///
/// In summary mode the matrix is never formed: products with it are taken
/// as `Cᵀ(C v) / (n-1)` over the centered data, and the leading eigenvalues
/// come from power iteration with deflation.
pub fn cohort_covariance<V: AsRef<[f32]>>(vectors: &[V], mode: CovarianceMode) -> Result<Covariance, SimilarityError> {
    let n = vectors.len();
    if n < 2 {
        return Err(SimilarityError::CohortTooSmall { n });
    }
    let mean = cohort_mean(vectors)?;
    match mode {
        CovarianceMode::Full => Ok(Covariance::Full(full_covariance(vectors, &mean))),
        CovarianceMode::Summary { top_k } => {
            let op = CenteredOperator { vectors, mean: &mean };
            let trace = op.trace();
            let top_eigenvalues = op.top_eigenvalues(top_k.min(mean.len()));
            Ok(Covariance::Summary { trace, top_eigenvalues })
        }
    }
}

fn full_covariance<V: AsRef<[f32]>>(vectors: &[V], mean: &[f64]) -> SymmetricMatrix {
    let dim = mean.len();
    let denom = (vectors.len() - 1) as f64;
    let mut data = vec![0.0; dim * dim];
    let mut centered = vec![0.0; dim];
    for v in vectors {
        for ((c, &x), m) in centered.iter_mut().zip(v.as_ref()).zip(mean) {
            *c = f64::from(x) - m;
        }
        for i in 0..dim {
            let ci = centered[i];
            let row = &mut data[i * dim..(i + 1) * dim];
            for j in i..dim {
                row[j] += ci * centered[j];
            }
        }
    }
    for i in 0..dim {
        for j in i..dim {
            let v = data[i * dim + j] / denom;
            data[i * dim + j] = v;
            data[j * dim + i] = v;
        }
    }
    SymmetricMatrix { dim, data }
}

struct CenteredOperator<'a, V> {
    vectors: &'a [V],
    mean: &'a [f64],
}

const POWER_MAX_ITERATIONS: usize = 2000;
const POWER_TOLERANCE: f64 = 1e-12;

impl<V: AsRef<[f32]>> CenteredOperator<'_, V> {
    fn denom(&self) -> f64 {
        (self.vectors.len() - 1) as f64
    }

    fn trace(&self) -> f64 {
        let mut acc = CompensatedSum::new();
        for v in self.vectors {
            for (&x, m) in v.as_ref().iter().zip(self.mean) {
                let c = f64::from(x) - m;
                acc.add(c * c);
            }
        }
        acc.value() / self.denom()
    }

    fn apply(&self, v: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        let mean_dot: f64 = self.mean.iter().zip(v).map(|(m, x)| m * x).sum();
        let mut weight_sum = 0.0;
        for x in self.vectors {
            let x = x.as_ref();
            let w = x.iter().zip(v).map(|(&a, b)| f64::from(a) * b).sum::<f64>() - mean_dot;
            weight_sum += w;
            for (o, &a) in out.iter_mut().zip(x) {
                *o += w * f64::from(a);
            }
        }
        let denom = self.denom();
        for (o, m) in out.iter_mut().zip(self.mean) {
            *o = (*o - weight_sum * m) / denom;
        }
    }

    fn top_eigenvalues(&self, k: usize) -> Vec<f64> {
        let dim = self.mean.len();
        let mut rng = ChaCha8Rng::seed_from_u64(0x00e1_9e75);
        let mut found: Vec<(f64, Vec<f64>)> = Vec::with_capacity(k);
        let mut next = vec![0.0; dim];
        for _ in 0..k {
            let mut v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            normalize(&mut v);
            let mut lambda = 0.0;
            for _ in 0..POWER_MAX_ITERATIONS {
                self.apply(&v, &mut next);
                for (l, u) in &found {
                    let proj: f64 = u.iter().zip(&v).map(|(a, b)| a * b).sum();
                    for (o, ui) in next.iter_mut().zip(u) {
                        *o -= l * proj * ui;
                    }
                }
                let rayleigh: f64 = next.iter().zip(&v).map(|(a, b)| a * b).sum();
                let norm = normalize(&mut next);
                core::mem::swap(&mut v, &mut next);
                if norm == 0.0 {
                    lambda = 0.0;
                    break;
                }
                let done = (rayleigh - lambda).abs() <= POWER_TOLERANCE * rayleigh.abs().max(1e-300);
                lambda = rayleigh;
                if done {
                    break;
                }
            }
            found.push((lambda.max(0.0), v));
        }
        found.into_iter().map(|(l, _)| l).collect()
    }
}

fn normalize(v: &mut [f64]) -> f64 {
    let norm = libm::sqrt(v.iter().map(|x| x * x).sum());
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    norm
}

/// Total variance across embedding dimensions.
pub fn diversity_trace(covariance: &Covariance) -> f64 {
    match covariance {
        Covariance::Full(m) => m.trace(),
        Covariance::Summary { trace, .. } => *trace,
    }
}

/// Mean vector, covariance and trace for one cohort.
pub fn cohort_diversity<V: AsRef<[f32]>>(
    vectors: &[V],
    year: i32,
    mode: CovarianceMode,
) -> Result<CohortDiversityStat, SimilarityError> {
    let covariance = cohort_covariance(vectors, mode)?;
    Ok(CohortDiversityStat {
        year,
        n: vectors.len(),
        mean_vector: cohort_mean(vectors)?,
        trace: diversity_trace(&covariance),
        covariance,
    })
}
