//! Turns WET records into per-year cohorts of English documents from one
//! domain.
//!
//! Filters run cheapest first: record type, domain, year, empty body,
//! language, then exact-id duplicates. Every conversion record either ends
//! up in a cohort or increments exactly one drop counter.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::Datelike;
use corpus_drift_core::lang::LanguageDetector;
use corpus_drift_core::text;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::wet::{self, RecordType, WetError, WetRecord};

pub const DEFAULT_DOMAIN_PATTERN: &str = "wikipedia.";

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("invalid manifest line {line}: {reason}")]
    Manifest { line: usize, reason: String },
}

/// Lowercased host of an absolute URI.
pub fn uri_host(uri: &str) -> Option<String> {
    url::Url::parse(uri).ok()?.host_str().map(str::to_ascii_lowercase)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DomainCheck {
    Match,
    NoMatch,
    BadUri,
}

pub fn check_domain(record: &WetRecord, domain_pattern: &str) -> DomainCheck {
    match record.target_uri.as_deref().and_then(uri_host) {
        None => DomainCheck::BadUri,
        Some(host) if host.contains(&domain_pattern.to_ascii_lowercase()) => DomainCheck::Match,
        Some(_) => DomainCheck::NoMatch,
    }
}

/// True iff the lowercased host of the target URI contains `domain_pattern`.
pub fn filter_domain(record: &WetRecord, domain_pattern: &str) -> bool {
    check_domain(record, domain_pattern) == DomainCheck::Match
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("record has no usable WARC-Date and no year override")]
pub struct YearUnknown;

pub fn assign_year(record: &WetRecord, year_override: Option<i32>) -> Result<i32, YearUnknown> {
    match (year_override, record.warc_date) {
        (Some(year), _) => Ok(year),
        (None, Some(date)) => Ok(date.year()),
        (None, None) => Err(YearUnknown),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct YearWindow {
    pub min: i32,
    pub max: i32,
}

impl YearWindow {
    pub fn contains(&self, year: i32) -> bool {
        (self.min..=self.max).contains(&year)
    }
}

impl Default for YearWindow {
    fn default() -> Self {
        Self { min: 2013, max: 2025 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub year: i32,
    pub domain: String,
    pub uri: String,
    pub text: String,
    pub word_count: usize,
}

/// Stable id: first 128 bits of SHA-256 over `uri`, a newline and the raw
/// `WARC-Date` value.
pub fn document_id(uri: &str, raw_date: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(uri.as_bytes());
    hasher.update(b"\n");
    hasher.update(raw_date.as_bytes());
    hasher.finalize()[..16].iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct YearCohort {
    pub year: i32,
    /// Ingest order.
    pub documents: Vec<Document>,
}

impl YearCohort {
    pub fn n(&self) -> usize {
        self.documents.len()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DropCounters {
    pub domain: u64,
    pub bad_uri: u64,
    pub year_unknown: u64,
    pub year_window: u64,
    pub empty_text: u64,
    pub language: u64,
    pub duplicate: u64,
}

impl DropCounters {
    pub fn total(&self) -> u64 {
        self.domain
            + self.bad_uri
            + self.year_unknown
            + self.year_window
            + self.empty_text
            + self.language
            + self.duplicate
    }

    fn add(&mut self, other: &DropCounters) {
        self.domain += other.domain;
        self.bad_uri += other.bad_uri;
        self.year_unknown += other.year_unknown;
        self.year_window += other.year_window;
        self.empty_text += other.empty_text;
        self.language += other.language;
        self.duplicate += other.duplicate;
    }
}

/// Counts for one ingest run. `drops` covers conversion records only, so
/// `accepted + drops.total() == conversion_records`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestCounters {
    pub conversion_records: u64,
    pub accepted: u64,
    pub drops: DropCounters,
    pub other_records: u64,
    pub malformed_records: u64,
    pub truncated_streams: u64,
    pub files: u64,
}

impl IngestCounters {
    fn add(&mut self, other: &IngestCounters) {
        self.conversion_records += other.conversion_records;
        self.accepted += other.accepted;
        self.drops.add(&other.drops);
        self.other_records += other.other_records;
        self.malformed_records += other.malformed_records;
        self.truncated_streams += other.truncated_streams;
        self.files += other.files;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IngestOptions {
    pub domain_pattern: String,
    pub window: YearWindow,
    pub year_override: Option<i32>,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self { domain_pattern: DEFAULT_DOMAIN_PATTERN.to_string(), window: YearWindow::default(), year_override: None }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct IngestOutcome {
    /// Only non-empty cohorts, keyed by year.
    pub cohorts: BTreeMap<i32, YearCohort>,
    pub counters: IngestCounters,
}

impl IngestOutcome {
    pub fn documents(&self) -> impl Iterator<Item = &Document> {
        self.cohorts.values().flat_map(|c| c.documents.iter())
    }
}

/// Incremental cohort assembly.
pub struct CohortBuilder<'a, D: ?Sized> {
    options: &'a IngestOptions,
    detector: &'a D,
    seen: HashSet<String>,
    outcome: IngestOutcome,
}

impl<'a, D: LanguageDetector + ?Sized> CohortBuilder<'a, D> {
    pub fn new(options: &'a IngestOptions, detector: &'a D) -> Self {
        Self { options, detector, seen: HashSet::new(), outcome: IngestOutcome::default() }
    }

    /// Feeds one parse result. I/O errors are returned; everything else is
    /// counted.
    pub fn push(&mut self, item: Result<WetRecord, WetError>) -> Result<(), io::Error> {
        match item {
            Ok(record) => {
                self.push_record(record);
                Ok(())
            }
            Err(WetError::Io(e)) => Err(e),
            Err(WetError::MalformedHeader { .. }) => {
                self.outcome.counters.malformed_records += 1;
                Ok(())
            }
            Err(WetError::TruncatedBody { .. }) => {
                self.outcome.counters.truncated_streams += 1;
                Ok(())
            }
        }
    }

    pub fn push_record(&mut self, record: WetRecord) {
        let counters = &mut self.outcome.counters;
        if record.record_type != RecordType::Conversion {
            counters.other_records += 1;
            return;
        }
        counters.conversion_records += 1;
        let drops = &mut counters.drops;
        match check_domain(&record, &self.options.domain_pattern) {
            DomainCheck::Match => {}
            DomainCheck::NoMatch => return drops.domain += 1,
            DomainCheck::BadUri => return drops.bad_uri += 1,
        }
        let year = match assign_year(&record, self.options.year_override) {
            Ok(year) => year,
            Err(YearUnknown) => return drops.year_unknown += 1,
        };
        if !self.options.window.contains(year) {
            return drops.year_window += 1;
        }
        let word_count = text::word_count(&record.body);
        if word_count == 0 {
            return drops.empty_text += 1;
        }
        if !self.detector.is_english(&record.body) {
            return drops.language += 1;
        }
        let uri = record.target_uri.unwrap_or_default();
        let id = document_id(&uri, record.raw_date.as_deref().unwrap_or(""));
        if !self.seen.insert(id.clone()) {
            return drops.duplicate += 1;
        }
        counters.accepted += 1;
        let document =
            Document { id, year, domain: uri_host(&uri).unwrap_or_default(), uri, text: record.body, word_count };
        self.outcome
            .cohorts
            .entry(year)
            .or_insert_with(|| YearCohort { year, documents: Vec::new() })
            .documents
            .push(document);
    }

    /// Merges a finished outcome from another builder (appended after this
    /// one's documents). Ids already seen become duplicates.
    pub fn absorb(&mut self, other: IngestOutcome) {
        let mut counters = other.counters;
        for (year, cohort) in other.cohorts {
            for document in cohort.documents {
                if !self.seen.insert(document.id.clone()) {
                    counters.accepted -= 1;
                    counters.drops.duplicate += 1;
                    continue;
                }
                self.outcome
                    .cohorts
                    .entry(year)
                    .or_insert_with(|| YearCohort { year, documents: Vec::new() })
                    .documents
                    .push(document);
            }
        }
        self.outcome.counters.add(&counters);
    }

    pub fn finish(self) -> IngestOutcome {
        self.outcome
    }
}

/// Builds cohorts from one record stream.
pub fn build_cohorts<I, D>(records: I, options: &IngestOptions, detector: &D) -> Result<IngestOutcome, io::Error>
where
    I: IntoIterator<Item = Result<WetRecord, WetError>>,
    D: LanguageDetector + ?Sized,
{
    let mut builder = CohortBuilder::new(options, detector);
    for item in records {
        builder.push(item)?;
    }
    Ok(builder.finish())
}

fn ingest_file<D>(path: &Path, options: &IngestOptions, detector: &D) -> Result<IngestOutcome, IngestError>
where
    D: LanguageDetector + Sync + ?Sized,
{
    let io_err = |source| IngestError::Io { path: path.to_path_buf(), source };
    let reader = wet::open(path).map_err(io_err)?;
    let mut outcome = build_cohorts(reader, options, detector).map_err(io_err)?;
    outcome.counters.files = 1;
    Ok(outcome)
}

/// Parses files in parallel and merges them in sorted path order, so the
/// result does not depend on scheduling.
pub fn ingest_files<D>(paths: &[PathBuf], options: &IngestOptions, detector: &D) -> Result<IngestOutcome, IngestError>
where
    D: LanguageDetector + Sync + ?Sized,
{
    let mut sorted = paths.to_vec();
    sorted.sort();
    sorted.dedup();
    let parts: Vec<IngestOutcome> =
        sorted.par_iter().map(|p| ingest_file(p, options, detector)).collect::<Result<_, _>>()?;
    let mut builder = CohortBuilder::new(options, detector);
    for part in parts {
        builder.absorb(part);
    }
    Ok(builder.finish())
}

/// Expands list files (`.txt`/`.lst`, one path per line, `#` comments) into
/// the paths they name. Relative entries resolve against the list's folder.
pub fn expand_inputs(inputs: &[PathBuf]) -> Result<Vec<PathBuf>, IngestError> {
    let mut out = Vec::new();
    for input in inputs {
        let is_list = matches!(input.extension().and_then(|e| e.to_str()), Some("txt" | "lst"));
        if !is_list {
            out.push(input.clone());
            continue;
        }
        let file = File::open(input).map_err(|source| IngestError::Io { path: input.clone(), source })?;
        let base = input.parent().unwrap_or(Path::new("."));
        for line in BufReader::new(file).lines() {
            let line = line.map_err(|source| IngestError::Io { path: input.clone(), source })?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            out.push(base.join(line));
        }
    }
    Ok(out)
}

/// `year<TAB>doc_id<TAB>word_count<TAB>uri`, ascending year, ingest order
/// within a year.
pub fn write_manifest<W: Write>(outcome: &IngestOutcome, out: W) -> io::Result<()> {
    let mut out = BufWriter::new(out);
    for doc in outcome.documents() {
        let uri = doc.uri.replace(['\t', '\n', '\r'], " ");
        writeln!(out, "{}\t{}\t{}\t{}", doc.year, doc.id, doc.word_count, uri)?;
    }
    out.flush()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub year: i32,
    pub doc_id: String,
    pub word_count: usize,
    pub uri: String,
}

pub fn read_manifest<R: BufRead>(input: R) -> Result<Vec<ManifestEntry>, IngestError> {
    let mut entries = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(|source| IngestError::Io { path: PathBuf::from("<manifest>"), source })?;
        if line.is_empty() {
            continue;
        }
        let bad = |reason: &str| IngestError::Manifest { line: i + 1, reason: reason.to_string() };
        let mut fields = line.splitn(4, '\t');
        let (Some(year), Some(id), Some(wc), Some(uri)) = (fields.next(), fields.next(), fields.next(), fields.next())
        else {
            return Err(bad("expected 4 tab-separated fields"));
        };
        entries.push(ManifestEntry {
            year: year.parse().map_err(|_| bad("year is not an integer"))?,
            doc_id: id.to_string(),
            word_count: wc.parse().map_err(|_| bad("word_count is not an integer"))?,
            uri: uri.to_string(),
        });
    }
    Ok(entries)
}
