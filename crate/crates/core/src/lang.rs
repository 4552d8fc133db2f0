//! Prefix-bounded English detection by stopword ratio.
//!
//! Only the first `max_words` whitespace-delimited words of a document are
//! examined; a document whose prefix looks English is treated as English in
//! full. The ratio `r = stopwords / tokens examined` is compared against a
//! threshold, and `confidence = min(1, r / (2 * threshold))`.

use alloc::collections::BTreeSet;
use alloc::string::{String, ToString};

use crate::text;

pub const DEFAULT_MAX_WORDS: usize = 2000;
pub const DEFAULT_THRESHOLD: f64 = 0.15;

/// The shipped English stopword list.
pub const BUILTIN_STOPWORDS: &str = include_str!("../data/stopwords-en.txt");

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LangError {
    #[error("threshold must lie in (0, 1), got {0}")]
    InvalidThreshold(f64),
    #[error("stopword list is empty")]
    EmptyStopwords,
}

/// A set of lowercase stopwords.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stopwords {
    words: BTreeSet<String>,
    version: Option<String>,
}

impl Stopwords {
    /// Parses a list with one word per line. `#` starts a comment line; a
    /// comment of the form `# version: X` records the list version.
    pub fn parse(source: &str) -> Self {
        let mut words = BTreeSet::new();
        let mut version = None;
        for line in source.lines() {
            let line = line.trim();
            if let Some(comment) = line.strip_prefix('#') {
                if let Some(v) = comment.trim().strip_prefix("version:") {
                    version = Some(v.trim().to_string());
                }
                continue;
            }
            if !line.is_empty() {
                words.insert(line.to_lowercase());
            }
        }
        Self { words, version }
    }

    pub fn builtin() -> Self {
        Self::parse(BUILTIN_STOPWORDS)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.words.contains(token)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn version(&self) -> Option<&str> {
        self.version.as_deref()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.words.iter().map(String::as_str)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LanguageVerdict {
    pub is_english: bool,
    /// In `[0, 1]`; monotone non-decreasing in `stopword_ratio`.
    pub confidence: f64,
    /// Normalized tokens examined (never more than `max_words`).
    pub words_examined: usize,
    pub stopword_ratio: f64,
}

impl LanguageVerdict {
    const fn rejected() -> Self {
        Self { is_english: false, confidence: 0.0, words_examined: 0, stopword_ratio: 0.0 }
    }
}

/// Anything that can decide whether a document is English. Ingest takes
/// this as a parameter so a stronger detector can be swapped in.
pub trait LanguageDetector {
    fn detect(&self, text: &str) -> LanguageVerdict;

    fn is_english(&self, text: &str) -> bool {
        self.detect(text).is_english
    }
}

impl<F> LanguageDetector for F
where
    F: Fn(&str) -> bool,
{
    fn detect(&self, text: &str) -> LanguageVerdict {
        let is_english = self(text);
        LanguageVerdict {
            is_english,
            confidence: if is_english { 1.0 } else { 0.0 },
            words_examined: text::word_count(text),
            stopword_ratio: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct StopwordDetector {
    stopwords: Stopwords,
    max_words: usize,
    threshold: f64,
}

impl Default for StopwordDetector {
    fn default() -> Self {
        Self { stopwords: Stopwords::builtin(), max_words: DEFAULT_MAX_WORDS, threshold: DEFAULT_THRESHOLD }
    }
}

impl StopwordDetector {
    pub fn new(stopwords: Stopwords, max_words: usize, threshold: f64) -> Result<Self, LangError> {
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(LangError::InvalidThreshold(threshold));
        }
        if stopwords.is_empty() {
            return Err(LangError::EmptyStopwords);
        }
        Ok(Self { stopwords, max_words, threshold })
    }

    pub fn max_words(&self) -> usize {
        self.max_words
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn stopwords(&self) -> &Stopwords {
        &self.stopwords
    }

    /// Stopword ratio over the first `max_words` words, with the number of
    /// tokens it was computed from.
    pub fn stopword_ratio(&self, text: &str) -> (f64, usize) {
        let mut examined = 0usize;
        let mut hits = 0usize;
        for raw in text.split_whitespace().take(self.max_words) {
            if let Some(token) = text::normalize_token(raw) {
                examined += 1;
                if self.stopwords.contains(&token) {
                    hits += 1;
                }
            }
        }
        if examined == 0 {
            (0.0, 0)
        } else {
            (hits as f64 / examined as f64, examined)
        }
    }
}

impl LanguageDetector for StopwordDetector {
    fn detect(&self, text: &str) -> LanguageVerdict {
        let (ratio, examined) = self.stopword_ratio(text);
        if examined == 0 {
            return LanguageVerdict::rejected();
        }
        let confidence = (ratio / (2.0 * self.threshold)).min(1.0);
        LanguageVerdict {
            is_english: ratio >= self.threshold,
            confidence,
            words_examined: examined,
            stopword_ratio: ratio,
        }
    }
}

/// Convenience wrapper over the shipped stopword list.
pub fn detect_english(text: &str, max_words: usize, threshold: f64) -> Result<LanguageVerdict, LangError> {
    Ok(StopwordDetector::new(Stopwords::builtin(), max_words, threshold)?.detect(text))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::format;
    use proptest::prelude::*;

    #[test]
    fn builtin_list_is_versioned_and_lowercase() {
        let sw = Stopwords::builtin();
        assert_eq!(sw.version(), Some("1"));
        assert!(sw.len() >= 140 && sw.len() <= 160, "{}", sw.len());
        assert!(sw.iter().all(|w| w == w.to_lowercase()));
    }

    #[test]
    fn cat_sentence_is_english() {
        // the, on, the, and, the are listed; cat/sat/mat/dog/ran are not.
        let v = detect_english("the cat sat on the mat and the dog ran", 2000, 0.15).unwrap();
        assert!(v.is_english);
        assert_eq!(v.words_examined, 10);
        assert_eq!(v.stopword_ratio, 0.5);
        assert_eq!(v.confidence, 1.0);
    }

    #[test]
    fn gibberish_is_not_english() {
        let v = detect_english("zzqx vprt klmn oooo pppp", 2000, 0.15).unwrap();
        assert!(!v.is_english);
        assert_eq!(v.stopword_ratio, 0.0);
        assert_eq!(v.confidence, 0.0);
    }

    #[test]
    fn empty_text_is_rejected_with_zero_confidence() {
        let v = StopwordDetector::default().detect("");
        assert!(!v.is_english);
        assert_eq!(v.confidence, 0.0);
        assert_eq!(v.words_examined, 0);
        let v = StopwordDetector::default().detect(" ... -- ");
        assert!(!v.is_english);
    }

    #[test]
    fn only_prefix_is_examined() {
        let english = "the history of the city is long and it was founded in the river valley ";
        let french = "le chat est sur la table avec une pomme rouge et verte ";
        let mut text = english.repeat(2000 / 14 + 1);
        text.push_str(&french.repeat(300));
        assert!(text::word_count(&text) > 5000 - 1000);
        let v = StopwordDetector::default().detect(&text);
        assert!(v.is_english);
        assert_eq!(v.words_examined, 2000);
    }

    #[test]
    fn threshold_validation() {
        assert!(matches!(StopwordDetector::new(Stopwords::builtin(), 10, 0.0), Err(LangError::InvalidThreshold(_))));
        assert!(StopwordDetector::new(Stopwords::builtin(), 10, 1.0).is_err());
        assert!(StopwordDetector::new(Stopwords::builtin(), 10, f64::NAN).is_err());
        assert_eq!(
            StopwordDetector::new(Stopwords::parse("# nothing\n"), 10, 0.5).unwrap_err(),
            LangError::EmptyStopwords
        );
    }

    #[test]
    fn punctuation_and_case_fold() {
        let v = detect_english("THE, Of; \"And\" zzz", 2000, 0.15).unwrap();
        assert_eq!(v.stopword_ratio, 0.75);
    }

    #[test]
    fn closure_detector() {
        let always = |_: &str| true;
        assert!(always.is_english("anything"));
    }

    fn word() -> impl Strategy<Value = &'static str> {
        prop::sample::select(alloc::vec![
            "the", "and", "zorb", "Kitten", "of,", "...", "río", "was", "qqq", "is", "Über",
        ])
    }

    proptest! {
        #[test]
        fn prefix_sufficiency(words in prop::collection::vec(word(), 0..60), max in 1usize..40) {
            let text = words.join(" ");
            let d = StopwordDetector::new(Stopwords::builtin(), max, 0.15).unwrap();
            prop_assert_eq!(d.detect(&text), d.detect(&text::truncate_words(&text, max)));
        }

        #[test]
        fn appending_stopwords_never_lowers_ratio(words in prop::collection::vec(word(), 1..30), extra in 1usize..10) {
            let d = StopwordDetector::new(Stopwords::builtin(), 2000, 0.15).unwrap();
            let text = words.join(" ");
            let extended = format!("{} {}", text, ["the"; 10][..extra].join(" "));
            let (before, _) = d.stopword_ratio(&text);
            let (after, _) = d.stopword_ratio(&extended);
            prop_assert!(after >= before);
        }

        #[test]
        fn confidence_is_monotone_in_ratio(a in prop::collection::vec(word(), 1..30), b in prop::collection::vec(word(), 1..30)) {
            let d = StopwordDetector::default();
            let (va, vb) = (d.detect(&a.join(" ")), d.detect(&b.join(" ")));
            if va.stopword_ratio <= vb.stopword_ratio {
                prop_assert!(va.confidence <= vb.confidence);
            }
            prop_assert!((0.0..=1.0).contains(&va.confidence));
        }
    }
}
