//! Streaming reader for WARC/1.0 framed WET files.
//!
//! A record is a version line (`WARC/1.0`), CRLF-terminated `Key: Value`
//! header lines up to a blank line, exactly `Content-Length` body bytes, and
//! a trailing blank-line separator. Gzip input (including the multi-member
//! files Common Crawl publishes) is detected from the magic bytes.
//!
//! The reader is an iterator of `Result<WetRecord, WetError>`. A malformed
//! header aborts only that record: the reader skips ahead to the next
//! version line and keeps going. A truncated body ends the stream and sets
//! [`WetReader::is_partial`].

use std::fs::File;
use std::io::{self, BufRead, BufReader, Read};
use std::path::Path;

use chrono::{DateTime, Utc};
use flate2::bufread::MultiGzDecoder;

const GZIP_MAGIC: [u8; 2] = [0x1f, 0x8b];

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RecordType {
    Warcinfo,
    Conversion,
    Other,
}

impl RecordType {
    fn parse(value: &str) -> Self {
        match value.trim().to_ascii_lowercase().as_str() {
            "warcinfo" => RecordType::Warcinfo,
            "conversion" => RecordType::Conversion,
            _ => RecordType::Other,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WetRecord {
    pub record_type: RecordType,
    pub target_uri: Option<String>,
    /// `None` when the `WARC-Date` header is missing or unparseable.
    pub warc_date: Option<DateTime<Utc>>,
    pub raw_date: Option<String>,
    pub content_length: u64,
    /// Lossy UTF-8 decoding of the body bytes.
    pub body: String,
    /// Every header in file order, including ones this reader does not use.
    pub headers: Vec<(String, String)>,
    /// Byte offset of the version line in the (decompressed) stream.
    pub offset: u64,
}

impl WetRecord {
    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers.iter().find(|(k, _)| k.eq_ignore_ascii_case(name)).map(|(_, v)| v.as_str())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum WetError {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
    #[error("malformed record header at byte {offset}: {reason}")]
    MalformedHeader { offset: u64, reason: String },
    #[error("record at byte {offset} truncated: expected {expected} body bytes, found {found}")]
    TruncatedBody { offset: u64, expected: u64, found: u64 },
}

pub struct WetReader<R> {
    inner: R,
    offset: u64,
    pending: Option<(Vec<u8>, u64)>,
    done: bool,
    partial: bool,
}

/// Opens a `.wet` or `.wet.gz` file.
pub fn open(path: impl AsRef<Path>) -> io::Result<WetReader<Box<dyn BufRead + Send>>> {
    let file = File::open(path)?;
    parse_wet_stream(file)
}

/// Wraps any byte stream, transparently decompressing gzip input.
pub fn parse_wet_stream<R: Read + Send + 'static>(reader: R) -> io::Result<WetReader<Box<dyn BufRead + Send>>> {
    let mut buffered = BufReader::with_capacity(1 << 16, reader);
    let is_gzip = {
        let head = buffered.fill_buf()?;
        head.len() >= 2 && head[..2] == GZIP_MAGIC
    };
    let inner: Box<dyn BufRead + Send> = if is_gzip {
        Box::new(BufReader::with_capacity(1 << 16, MultiGzDecoder::new(buffered)))
    } else {
        Box::new(buffered)
    };
    Ok(WetReader::new(inner))
}

fn trim_eol(line: &[u8]) -> &[u8] {
    let line = line.strip_suffix(b"\n").unwrap_or(line);
    line.strip_suffix(b"\r").unwrap_or(line)
}

fn is_version_line(line: &[u8]) -> bool {
    trim_eol(line).starts_with(b"WARC/")
}

impl<R: BufRead> WetReader<R> {
    /// Reader over an uncompressed stream.
    pub fn new(inner: R) -> Self {
        Self { inner, offset: 0, pending: None, done: false, partial: false }
    }

    /// True once the stream ended inside a record body.
    pub fn is_partial(&self) -> bool {
        self.partial
    }

    pub fn offset(&self) -> u64 {
        self.offset
    }

    fn read_line(&mut self) -> io::Result<Option<(Vec<u8>, u64)>> {
        if let Some(pending) = self.pending.take() {
            return Ok(Some(pending));
        }
        let start = self.offset;
        let mut line = Vec::new();
        let n = self.inner.read_until(b'\n', &mut line)?;
        if n == 0 {
            return Ok(None);
        }
        self.offset += n as u64;
        Ok(Some((line, start)))
    }

    /// Skips to the next version line and leaves it pending.
    fn resync(&mut self) -> io::Result<()> {
        while let Some((line, start)) = self.read_line()? {
            if is_version_line(&line) {
                self.pending = Some((line, start));
                return Ok(());
            }
        }
        self.done = true;
        Ok(())
    }

    fn malformed(&mut self, offset: u64, reason: impl Into<String>) -> Result<WetRecord, WetError> {
        self.resync()?;
        Err(WetError::MalformedHeader { offset, reason: reason.into() })
    }

    fn next_record(&mut self) -> Result<Option<WetRecord>, WetError> {
        let (version, offset) = loop {
            match self.read_line()? {
                None => return Ok(None),
                Some((line, _)) if trim_eol(&line).is_empty() => continue,
                Some(found) => break found,
            }
        };
        if !is_version_line(&version) {
            return self.malformed(offset, "missing WARC version line").map(Some);
        }

        let mut headers: Vec<(String, String)> = Vec::new();
        loop {
            let Some((line, line_offset)) = self.read_line()? else {
                self.done = true;
                self.partial = true;
                return Err(WetError::MalformedHeader {
                    offset,
                    reason: "stream ended inside the header block".into(),
                });
            };
            if !line.ends_with(b"\n") {
                self.done = true;
                self.partial = true;
                return Err(WetError::MalformedHeader {
                    offset,
                    reason: "stream ended inside the header block".into(),
                });
            }
            let content = trim_eol(&line);
            if content.is_empty() {
                break;
            }
            if content[0] == b' ' || content[0] == b'\t' {
                if let Some((_, value)) = headers.last_mut() {
                    value.push(' ');
                    value.push_str(String::from_utf8_lossy(content).trim());
                    continue;
                }
            }
            let text = String::from_utf8_lossy(content);
            let Some((key, value)) = text.split_once(':') else {
                // The offending line may itself be the next record's start.
                if is_version_line(&line) {
                    self.pending = Some((line, line_offset));
                    return Err(WetError::MalformedHeader { offset, reason: "header block not terminated".into() });
                }
                return self.malformed(offset, format!("header line without ':' at byte {line_offset}")).map(Some);
            };
            headers.push((key.trim().to_string(), value.trim().to_string()));
        }

        let find = |name: &str| headers.iter().find(|(k, _)| k.eq_ignore_ascii_case(name)).map(|(_, v)| v.clone());
        let Some(length_text) = find("Content-Length") else {
            return self.malformed(offset, "missing Content-Length").map(Some);
        };
        let Ok(content_length) = length_text.parse::<u64>() else {
            return self.malformed(offset, format!("unparseable Content-Length {length_text:?}")).map(Some);
        };

        let mut body = Vec::with_capacity(content_length.min(1 << 24) as usize);
        let found = (&mut self.inner).take(content_length).read_to_end(&mut body)? as u64;
        self.offset += found;
        if found < content_length {
            self.done = true;
            self.partial = true;
            return Err(WetError::TruncatedBody { offset, expected: content_length, found });
        }

        let record_type = find("WARC-Type").map(|t| RecordType::parse(&t)).unwrap_or(RecordType::Other);
        let target_uri = find("WARC-Target-URI");
        if record_type == RecordType::Conversion && target_uri.is_none() {
            return Err(WetError::MalformedHeader {
                offset,
                reason: "conversion record without WARC-Target-URI".into(),
            });
        }
        let raw_date = find("WARC-Date");
        let warc_date =
            raw_date.as_deref().and_then(|d| DateTime::parse_from_rfc3339(d).ok()).map(|d| d.with_timezone(&Utc));

        Ok(Some(WetRecord {
            record_type,
            target_uri,
            warc_date,
            raw_date,
            content_length,
            body: String::from_utf8_lossy(&body).into_owned(),
            headers,
            offset,
        }))
    }
}

impl<R: BufRead> Iterator for WetReader<R> {
    type Item = Result<WetRecord, WetError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        match self.next_record() {
            Ok(Some(record)) => Some(Ok(record)),
            Ok(None) => {
                self.done = true;
                None
            }
            Err(WetError::Io(e)) => {
                self.done = true;
                Some(Err(WetError::Io(e)))
            }
            Err(e) => Some(Err(e)),
        }
    }
}

/// Serializes one record in WET framing. Used to build fixtures and test
/// archives; `headers` must not contain `Content-Length`.
pub fn write_record(out: &mut Vec<u8>, headers: &[(&str, &str)], body: &[u8]) {
    out.extend_from_slice(b"WARC/1.0\r\n");
    for (k, v) in headers {
        out.extend_from_slice(format!("{k}: {v}\r\n").as_bytes());
    }
    out.extend_from_slice(format!("Content-Length: {}\r\n\r\n", body.len()).as_bytes());
    out.extend_from_slice(body);
    out.extend_from_slice(b"\r\n\r\n");
}
