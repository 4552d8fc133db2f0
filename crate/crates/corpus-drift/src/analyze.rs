//! Per-year similarity and diversity over an embedding store.

use std::collections::BTreeMap;

use corpus_drift_core::similarity::{
    cohort_diversity, sample_pair_indices, CohortDiversityStat, CohortSimilarityStat, CovarianceMode, Method,
    PreparedCohort, SimilarityError,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::store::EmbeddingStore;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisConfig {
    pub method: Method,
    /// Pair budget for the sampled estimator.
    pub pairs: u64,
    pub seed: Option<u64>,
    pub workers: usize,
    /// Leading covariance eigenvalues to report; 0 reports the trace only.
    pub top_k: usize,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self { method: Method::Exact, pairs: 100_000, seed: None, workers: 1, top_k: 5 }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum AnalyzeError {
    #[error("sampled method needs a seed")]
    MissingSeed,
    #[error("workers must be >= 1")]
    NoWorkers,
    #[error("year {year}: cohort mixes model tags {first} and {second}")]
    MixedModels { year: i32, first: String, second: String },
    #[error("year {year}: {source}")]
    Similarity { year: i32, source: SimilarityError },
    #[error("no cohort has two or more documents")]
    NothingToAnalyze,
    #[error("thread pool: {0}")]
    Pool(#[from] rayon::ThreadPoolBuildError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedCohort {
    pub year: i32,
    pub n: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Analysis {
    pub model_tag: String,
    pub dimension: usize,
    pub similarity: Vec<CohortSimilarityStat>,
    pub diversity: Vec<CohortDiversityStat>,
    pub skipped: Vec<SkippedCohort>,
    /// Years whose mean similarity came out negative.
    pub negative_years: Vec<i32>,
}

impl Analysis {
    /// `(year, q)` points for the fit.
    pub fn points(&self) -> Vec<(f64, f64)> {
        self.similarity.iter().map(|s| (f64::from(s.year), s.mean_similarity)).collect()
    }
}

fn pool(workers: usize) -> Result<rayon::ThreadPool, AnalyzeError> {
    if workers == 0 {
        return Err(AnalyzeError::NoWorkers);
    }
    Ok(rayon::ThreadPoolBuilder::new().num_threads(workers).build()?)
}

/// Mean pairwise similarity for one cohort. Output is independent of the
/// pool size: rows (or sampled pairs) are evaluated in parallel and reduced
/// in index order.
pub fn cohort_similarity<V>(
    year: i32,
    vectors: &[V],
    config: &AnalysisConfig,
    pool: &rayon::ThreadPool,
) -> Result<CohortSimilarityStat, AnalyzeError>
where
    V: AsRef<[f32]> + Sync,
{
    let wrap = |source| AnalyzeError::Similarity { year, source };
    let prepared = PreparedCohort::new(vectors).map_err(wrap)?;
    if prepared.len() < 2 {
        return Err(wrap(SimilarityError::CohortTooSmall { n: prepared.len() }));
    }
    let exact = |prepared: &PreparedCohort<V>| {
        let rows: Vec<_> = pool.install(|| (0..prepared.len()).into_par_iter().map(|j| prepared.row_sum(j)).collect());
        prepared.exact_from_rows(year, rows).map_err(wrap)
    };
    match config.method {
        Method::Exact => exact(&prepared),
        Method::Sampled => {
            let seed = config.seed.ok_or(AnalyzeError::MissingSeed)?;
            if config.pairs < 2 {
                return Err(wrap(SimilarityError::InvalidPairBudget(config.pairs)));
            }
            if config.pairs >= prepared.total_pairs() {
                return exact(&prepared);
            }
            let indices = sample_pair_indices(prepared.total_pairs(), config.pairs, seed);
            let values: Vec<f64> = pool.install(|| indices.par_iter().map(|&t| prepared.pair_cosine_at(t)).collect());
            prepared.sampled_from_values(year, seed, &values).map_err(wrap)
        }
    }
}

/// Analyzes every year present in `cohorts`. Years with fewer than two
/// documents are listed in `skipped`.
pub fn analyze_cohorts(
    model_tag: &str,
    dimension: usize,
    cohorts: &BTreeMap<i32, Vec<&[f32]>>,
    config: &AnalysisConfig,
) -> Result<Analysis, AnalyzeError> {
    if config.method == Method::Sampled && config.seed.is_none() {
        return Err(AnalyzeError::MissingSeed);
    }
    let pool = pool(config.workers)?;
    let mode = CovarianceMode::Summary { top_k: config.top_k };
    let mut analysis = Analysis {
        model_tag: model_tag.to_string(),
        dimension,
        similarity: Vec::new(),
        diversity: Vec::new(),
        skipped: Vec::new(),
        negative_years: Vec::new(),
    };
    for (&year, vectors) in cohorts {
        if vectors.len() < 2 {
            analysis.skipped.push(SkippedCohort { year, n: vectors.len(), reason: "fewer than two documents".into() });
            continue;
        }
        let stat = cohort_similarity(year, vectors, config, &pool)?;
        if stat.is_negative() {
            log::warn!("year {year}: negative mean similarity {}", stat.mean_similarity);
            analysis.negative_years.push(year);
        }
        analysis.similarity.push(stat);
        let diversity = pool
            .install(|| cohort_diversity(vectors, year, mode))
            .map_err(|source| AnalyzeError::Similarity { year, source })?;
        analysis.diversity.push(diversity);
    }
    if analysis.similarity.is_empty() {
        return Err(AnalyzeError::NothingToAnalyze);
    }
    Ok(analysis)
}

pub fn analyze_store(store: &EmbeddingStore, config: &AnalysisConfig) -> Result<Analysis, AnalyzeError> {
    let mut cohorts: BTreeMap<i32, Vec<&[f32]>> = BTreeMap::new();
    let mut first_tag: BTreeMap<i32, &str> = BTreeMap::new();
    for record in &store.records {
        let tag = record.vector.model_tag();
        let first = *first_tag.entry(record.year).or_insert(tag);
        if first != tag {
            return Err(AnalyzeError::MixedModels { year: record.year, first: first.into(), second: tag.into() });
        }
        cohorts.entry(record.year).or_default().push(record.vector.values());
    }
    analyze_cohorts(&store.model_tag, store.dimension, &cohorts, config)
}
