//! Stage runners. Each stage reads the previous stage's artifact from the
//! output directory and writes its own, so any stage can be re-run alone.
//!
//! | stage   | reads                     | writes                                        |
//! |---------|---------------------------|-----------------------------------------------|
//! | ingest  | input WET files           | `documents.jsonl`, `cohorts.tsv`, `ingest.json` |
//! | embed   | `documents.jsonl`         | `embeddings.store`                            |
//! | analyze | `embeddings.store`        | `analysis.json`                               |
//! | fit     | `analysis.json`           | `fit.json`                                    |
//! | report  | all of the above          | `similarity.csv`, `trend.svg`, `report.json`  |

use std::collections::BTreeMap;
use std::fmt;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use corpus_drift_core::lang::{StopwordDetector, Stopwords};
use corpus_drift_core::saturation::{fit, saturation_table, FitConfig, SaturationModel, SaturationYear};
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::analyze::{analyze_store, Analysis};
use crate::config::{Layered, PipelineConfig};
use crate::embedder::embed_batch;
use crate::ingest::{expand_inputs, ingest_files, write_manifest, Document, IngestCounters, IngestOutcome};
use crate::report::{
    render_plot_svg, write_report_json, write_similarity_csv, DiversitySummary, FitSection, Meta, RunReport,
};
use crate::store::{read_store, StoreWriter};

pub const DOCUMENTS: &str = "documents.jsonl";
pub const COHORTS: &str = "cohorts.tsv";
pub const INGEST: &str = "ingest.json";
pub const EMBEDDINGS: &str = "embeddings.store";
pub const ANALYSIS: &str = "analysis.json";
pub const FIT: &str = "fit.json";
pub const SIMILARITY_CSV: &str = "similarity.csv";
pub const TREND_SVG: &str = "trend.svg";
pub const REPORT: &str = "report.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Config,
    Ingest,
    Embed,
    Analyze,
    Fit,
    Report,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Config => "config",
            Stage::Ingest => "ingest",
            Stage::Embed => "embed",
            Stage::Analyze => "analyze",
            Stage::Fit => "fit",
            Stage::Report => "report",
        })
    }
}

#[derive(Debug, thiserror::Error)]
#[error("{stage} stage failed: {source}")]
pub struct StageError {
    pub stage: Stage,
    #[source]
    pub source: Box<dyn std::error::Error + Send + Sync>,
}

fn stage<E>(stage: Stage) -> impl FnOnce(E) -> StageError
where
    E: Into<Box<dyn std::error::Error + Send + Sync>>,
{
    move |e| StageError { stage, source: e.into() }
}

fn io_context(path: &Path, e: std::io::Error) -> String {
    format!("{}: {e}", path.display())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), String> {
    let mut body = serde_json::to_string_pretty(value).map_err(|e| e.to_string())?;
    body.push('\n');
    fs::write(path, body).map_err(|e| io_context(path, e))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, String> {
    let text = fs::read_to_string(path).map_err(|e| io_context(path, e))?;
    serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
}

fn ensure_out_dir(config: &PipelineConfig, at: Stage) -> Result<(), StageError> {
    fs::create_dir_all(&config.out_dir).map_err(|e| stage(at)(io_context(&config.out_dir, e)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub counters: IngestCounters,
    /// Documents per year.
    pub cohorts: BTreeMap<i32, usize>,
    pub inputs: Vec<PathBuf>,
}

pub fn detector(config: &PipelineConfig) -> Result<StopwordDetector, String> {
    let stopwords = match &config.stopwords {
        Some(path) => Stopwords::parse(&fs::read_to_string(path).map_err(|e| io_context(path, e))?),
        None => Stopwords::builtin(),
    };
    StopwordDetector::new(stopwords, config.lang_max_words, config.lang_threshold).map_err(|e| e.to_string())
}

pub fn run_ingest(config: &PipelineConfig) -> Result<IngestOutcome, StageError> {
    let err = stage(Stage::Ingest);
    config.require_inputs().map_err(stage(Stage::Config))?;
    ensure_out_dir(config, Stage::Ingest)?;
    let detector = detector(config).map_err(stage(Stage::Ingest))?;
    let inputs = expand_inputs(&config.inputs).map_err(stage(Stage::Ingest))?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(config.workers).build().map_err(stage(Stage::Ingest))?;
    let outcome = pool.install(|| ingest_files(&inputs, &config.ingest, &detector)).map_err(stage(Stage::Ingest))?;

    let docs_path = config.out_dir.join(DOCUMENTS);
    let write_docs = || -> Result<(), String> {
        let file = File::create(&docs_path).map_err(|e| io_context(&docs_path, e))?;
        let mut out = BufWriter::new(file);
        for doc in outcome.documents() {
            serde_json::to_writer(&mut out, doc).map_err(|e| e.to_string())?;
            out.write_all(b"\n").map_err(|e| io_context(&docs_path, e))?;
        }
        out.flush().map_err(|e| io_context(&docs_path, e))
    };
    write_docs().map_err(stage(Stage::Ingest))?;

    let manifest_path = config.out_dir.join(COHORTS);
    let file = File::create(&manifest_path).map_err(|e| err(io_context(&manifest_path, e)))?;
    write_manifest(&outcome, BufWriter::new(file)).map_err(|e| stage(Stage::Ingest)(io_context(&manifest_path, e)))?;

    let summary = IngestSummary {
        counters: outcome.counters.clone(),
        cohorts: outcome.cohorts.iter().map(|(y, c)| (*y, c.n())).collect(),
        inputs,
    };
    write_json(&config.out_dir.join(INGEST), &summary).map_err(stage(Stage::Ingest))?;
    log::info!("ingest: {} documents accepted in {} years", summary.counters.accepted, summary.cohorts.len());
    Ok(outcome)
}

pub fn read_documents(path: &Path) -> Result<Vec<Document>, String> {
    let file = File::open(path).map_err(|e| io_context(path, e))?;
    BufReader::new(file)
        .lines()
        .enumerate()
        .filter(|(_, l)| !matches!(l, Ok(l) if l.trim().is_empty()))
        .map(|(i, line)| {
            let line = line.map_err(|e| io_context(path, e))?;
            serde_json::from_str(&line).map_err(|e| format!("{}:{}: {e}", path.display(), i + 1))
        })
        .collect()
}

/// Returns the number of vectors written.
pub fn run_embed(config: &PipelineConfig) -> Result<usize, StageError> {
    let err = stage(Stage::Embed);
    ensure_out_dir(config, Stage::Embed)?;
    let docs = read_documents(&config.out_dir.join(DOCUMENTS)).map_err(stage(Stage::Embed))?;
    if docs.is_empty() {
        return Err(err("no documents to embed; ingest accepted nothing"));
    }
    let texts: Vec<&str> = docs.iter().map(|d| d.text.as_str()).collect();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(config.workers).build().map_err(stage(Stage::Embed))?;
    let vectors = match config.embedder.backend {
        crate::embedder::Backend::Hash => {
            use rayon::prelude::*;
            let chunk = texts.len().div_ceil(config.workers).max(1);
            let parts: Vec<_> =
                pool.install(|| texts.par_chunks(chunk).map(|c| embed_batch(c, &config.embedder)).collect::<Vec<_>>());
            let mut all = Vec::with_capacity(texts.len());
            for part in parts {
                all.extend(part.map_err(stage(Stage::Embed))?);
            }
            all
        }
        crate::embedder::Backend::Remote => embed_batch(&texts, &config.embedder).map_err(stage(Stage::Embed))?,
    };
    let path = config.out_dir.join(EMBEDDINGS);
    let tag = vectors[0].model_tag().to_string();
    let mut writer = StoreWriter::create(&path, config.embedder.dimension, &tag).map_err(stage(Stage::Embed))?;
    for (doc, v) in docs.iter().zip(&vectors) {
        writer.append(&doc.id, doc.year, v).map_err(stage(Stage::Embed))?;
    }
    let n = writer.finish().map_err(stage(Stage::Embed))?;
    log::info!("embed: {n} vectors, model {tag}");
    Ok(n)
}

pub fn run_analyze(config: &PipelineConfig) -> Result<Analysis, StageError> {
    ensure_out_dir(config, Stage::Analyze)?;
    let store = read_store(&config.out_dir.join(EMBEDDINGS)).map_err(stage(Stage::Analyze))?;
    let analysis = analyze_store(&store, &config.analysis).map_err(stage(Stage::Analyze))?;
    write_json(&config.out_dir.join(ANALYSIS), &analysis).map_err(stage(Stage::Analyze))?;
    for s in &analysis.similarity {
        log::info!("analyze: {} n={} q={:.6}", s.year, s.n, s.mean_similarity);
    }
    Ok(analysis)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOutput {
    pub points: Vec<(f64, f64)>,
    pub model: SaturationModel,
    pub saturation: Vec<SaturationYear>,
}

pub fn fit_points(points: &[(f64, f64)], fit_config: &FitConfig, levels: &[f64]) -> Result<FitOutput, StageError> {
    let model = fit(points, fit_config).map_err(stage(Stage::Fit))?;
    let saturation = saturation_table(&model, levels).map_err(stage(Stage::Fit))?;
    Ok(FitOutput { points: points.to_vec(), model, saturation })
}

pub fn run_fit(config: &PipelineConfig) -> Result<FitOutput, StageError> {
    ensure_out_dir(config, Stage::Fit)?;
    let analysis: Analysis = read_json(&config.out_dir.join(ANALYSIS)).map_err(stage(Stage::Fit))?;
    let output = fit_points(&analysis.points(), &config.fit, &config.levels)?;
    write_json(&config.out_dir.join(FIT), &output).map_err(stage(Stage::Fit))?;
    let m = &output.model;
    log::info!("fit: a={} b={} loss={:e} converged={} after {}", m.a, m.b, m.final_loss, m.converged, m.iterations_run);
    Ok(output)
}

pub fn run_report(config: &PipelineConfig, layered: &Layered, started_at: &str) -> Result<RunReport, StageError> {
    let err = stage(Stage::Report);
    ensure_out_dir(config, Stage::Report)?;
    let dir = &config.out_dir;
    let analysis: Analysis = read_json(&dir.join(ANALYSIS)).map_err(stage(Stage::Report))?;
    let ingest: Option<IngestSummary> = if dir.join(INGEST).exists() {
        Some(read_json(&dir.join(INGEST)).map_err(stage(Stage::Report))?)
    } else {
        None
    };
    let fitted: Option<FitOutput> =
        if dir.join(FIT).exists() { Some(read_json(&dir.join(FIT)).map_err(stage(Stage::Report))?) } else { None };

    write_similarity_csv(&analysis.similarity, &dir.join(SIMILARITY_CSV)).map_err(stage(Stage::Report))?;
    let fit_section = match &fitted {
        Some(f) => {
            let points: Vec<(i32, f64)> = analysis.similarity.iter().map(|s| (s.year, s.mean_similarity)).collect();
            if points.len() >= 2 {
                render_plot_svg(&points, &f.model, config.horizon_years, &dir.join(TREND_SVG))
                    .map_err(stage(Stage::Report))?;
            }
            FitSection { model: Some(f.model.clone()), error: None }
        }
        None => FitSection { model: None, error: Some(format!("{FIT} not found; run the fit stage")) },
    };
    let report = RunReport {
        config: layered.snapshot(),
        ingest: ingest.map(|i| i.counters),
        similarity: analysis.similarity.clone(),
        diversity: analysis.diversity.iter().map(DiversitySummary::from).collect(),
        fit: fit_section,
        saturation: fitted.map(|f| f.saturation).unwrap_or_default(),
        meta: Meta {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            started_at: started_at.to_string(),
            finished_at: now(),
            model_tag: Some(analysis.model_tag.clone()),
            dimension: Some(analysis.dimension),
            skipped_cohorts: analysis.skipped.clone(),
            negative_years: analysis.negative_years.clone(),
        },
    };
    write_report_json(&report, &dir.join(REPORT)).map_err(stage(Stage::Report))?;
    if report.similarity.is_empty() {
        return Err(err("no similarity stats"));
    }
    Ok(report)
}

pub fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

/// ingest → embed → analyze → fit → report. Artifacts of completed stages
/// stay on disk when a later stage fails.
pub fn run_pipeline(config: &PipelineConfig, layered: &Layered) -> Result<RunReport, StageError> {
    let started = now();
    config.require_inputs().map_err(stage(Stage::Config))?;
    run_ingest(config)?;
    run_embed(config)?;
    run_analyze(config)?;
    run_fit(config)?;
    run_report(config, layered, &started)
}

/// Exit status for a finished run: success only with a converged fit.
pub fn succeeded(report: &RunReport) -> bool {
    report.fit.model.as_ref().is_some_and(|m| m.converged)
}
