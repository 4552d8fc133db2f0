//! Fixture builders shared by the integration tests and the acceptance suite.
#![allow(dead_code)]

use std::io::{Cursor, Write};
use std::path::PathBuf;

use corpus_drift::wet::{parse_wet_stream, write_record, WetError, WetRecord};
use flate2::write::GzEncoder;
use flate2::Compression;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn manifest_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

pub fn corpus_dir() -> PathBuf {
    manifest_dir().join("fixtures/corpus")
}

pub fn wet_fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/wet").join(name)
}

pub fn parse(bytes: Vec<u8>) -> (Vec<Result<WetRecord, WetError>>, bool) {
    let mut reader = parse_wet_stream(Cursor::new(bytes)).unwrap();
    let items: Vec<_> = reader.by_ref().collect();
    (items, reader.is_partial())
}

pub fn plain_bytes() -> Vec<u8> {
    std::fs::read(wet_fixture("three.warc.wet")).unwrap()
}

pub fn replace_once(bytes: &[u8], from: &[u8], to: &[u8], nth: usize) -> Vec<u8> {
    let mut hits = bytes.windows(from.len()).enumerate().filter(|(_, w)| *w == from).map(|(i, _)| i);
    let at = hits.nth(nth).expect("pattern present");
    [&bytes[..at], to, &bytes[at + from.len()..]].concat()
}

const WORDS: &[&str] =
    &["the", "of", "and", "river", "city", "history", "is", "was", "music", "ancient", "trade", "language"];
const FOREIGN: &[&str] = &["der", "und", "ist", "la", "el", "que", "för", "och", "jest", "nie"];

pub struct Archive {
    pub bytes: Vec<u8>,
    pub conversion: u64,
    pub other: u64,
    pub malformed: u64,
}

/// 10k records over several gzip members. About 2% have a broken header.
pub fn synthetic_archive(seed: u64) -> Archive {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut archive = Archive { bytes: Vec::new(), conversion: 0, other: 0, malformed: 0 };
    let mut member = Vec::new();
    for i in 0..10_000u32 {
        let mut rec = Vec::new();
        let kind = rng.random_range(0..20);
        if kind == 0 {
            write_record(&mut rec, &[("WARC-Type", "warcinfo")], b"software: synthetic\r\n");
            archive.other += 1;
        } else {
            let host = if rng.random_bool(0.7) { "en.wikipedia.org" } else { "news.example.net" };
            let year = rng.random_range(2010..2028);
            let uri = format!("https://{host}/wiki/Page_{i}");
            let date = format!("{year}-06-{:02}T00:00:00Z", rng.random_range(1..29));
            let vocab = if rng.random_bool(0.8) { WORDS } else { FOREIGN };
            let n = rng.random_range(0..60);
            let body: Vec<&str> = (0..n).map(|_| vocab[rng.random_range(0..vocab.len())]).collect();
            let body = body.join(" ");
            write_record(
                &mut rec,
                &[("WARC-Type", "conversion"), ("WARC-Target-URI", &uri), ("WARC-Date", &date)],
                body.as_bytes(),
            );
            if rng.random_bool(0.02) {
                rec = replace_once(&rec, b"Content-Length: ", b"Content-Length ", 0);
                archive.malformed += 1;
            } else {
                archive.conversion += 1;
            }
        }
        member.extend_from_slice(&rec);
        if i % 2500 == 2499 {
            let mut gz = GzEncoder::new(Vec::new(), Compression::fast());
            gz.write_all(&member).unwrap();
            archive.bytes.extend(gz.finish().unwrap());
            member.clear();
        }
    }
    archive
}

/// Sorted `(file name, text)` pairs from `tests/fixtures/lang/<dir>`.
pub fn lang_fixtures(dir: &str) -> Vec<(String, String)> {
    let root = manifest_dir().join("tests/fixtures/lang").join(dir);
    let mut out: Vec<(String, String)> = std::fs::read_dir(&root)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read_to_string(&p).unwrap()))
        .collect();
    out.sort();
    out
}
