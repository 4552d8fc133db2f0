//! Allocation-only kernels for measuring how homogeneous a text corpus is
//! over time and forecasting when that homogeneity saturates.
//!
//! The crate is `no_std` (it needs `alloc`). Everything that touches files,
//! the network or the command line lives in the `corpus-drift` crate.
//!
//! - [`text`]: whitespace tokenization shared by the language check and the
//!   hash embedder.
//! - [`lang`]: stopword-ratio English detection over a bounded word prefix.
//! - [`embed`]: unit-norm embedding vectors and the signed feature-hash backend.
//! - [`similarity`]: pairwise cosine statistics, cohort mean and covariance.
//! - [`saturation`]: the exponential saturation model, its gradient-descent
//!   fit and saturation-year inversion.
#![no_std]

extern crate alloc;
#[cfg(any(feature = "std", test))]
extern crate std;

pub mod embed;
pub mod lang;
pub mod saturation;
pub mod similarity;
pub mod sum;
pub mod text;

pub use embed::{hash_embed, EmbedError, EmbeddingVector, HashEmbedder};
pub use lang::{LanguageDetector, LanguageVerdict, StopwordDetector, Stopwords};

pub use saturation::{
    fit, loss, loss_gradient, model_eval, saturation_table, saturation_year, FitConfig, FitError, SaturationError,
    SaturationModel, SaturationYear,
};
pub use similarity::{
    cohort_covariance, cohort_mean, cosine, diversity_trace, mean_pairwise_exact, mean_pairwise_sampled,
    CohortDiversityStat, CohortSimilarityStat, Covariance, CovarianceMode, Method, SimilarityError,
};
