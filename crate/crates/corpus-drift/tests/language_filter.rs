mod common;

use common::lang_fixtures as load;
use corpus_drift_core::lang::{LanguageDetector, StopwordDetector, DEFAULT_MAX_WORDS};
use corpus_drift_core::text::{truncate_words, word_count};

/// Repeats `text` until it has at least `words` words.
fn repeat_to(text: &str, words: usize) -> String {
    let per = word_count(text).max(1);
    let copies = words.div_ceil(per);
    vec![text.trim(); copies].join(" ")
}

#[test]
fn fixture_classification_has_no_errors() {
    let detector = StopwordDetector::default();
    let english = load("en");
    let other = load("other");
    assert_eq!((english.len(), other.len()), (20, 20));
    let mut errors = Vec::new();
    for (name, text) in &english {
        let v = detector.detect(text);
        if !v.is_english {
            errors.push(format!("{name}: ratio {:.3} classified non-English", v.stopword_ratio));
        }
    }
    for (name, text) in &other {
        let v = detector.detect(text);
        if v.is_english {
            errors.push(format!("{name}: ratio {:.3} classified English", v.stopword_ratio));
        }
    }
    assert!(errors.is_empty(), "{errors:#?}");
}

#[test]
fn verdict_depends_only_on_the_prefix() {
    let detector = StopwordDetector::default();
    let english = load("en");
    let other = load("other");
    for ((_, en), (_, xx)) in english.iter().zip(&other) {
        let en_long = repeat_to(en, DEFAULT_MAX_WORDS);
        let xx_long = repeat_to(xx, DEFAULT_MAX_WORDS);

        let en_then_xx = format!("{en_long} {}", repeat_to(xx, 5000));
        let v = detector.detect(&en_then_xx);
        assert!(v.is_english);
        assert_eq!(v.words_examined, DEFAULT_MAX_WORDS);
        assert_eq!(v, detector.detect(&truncate_words(&en_then_xx, DEFAULT_MAX_WORDS)));

        if word_count(&xx_long) >= DEFAULT_MAX_WORDS {
            let xx_then_en = format!("{xx_long} {}", repeat_to(en, 5000));
            let v = detector.detect(&xx_then_en);
            assert!(!v.is_english);
            assert_eq!(v, detector.detect(&truncate_words(&xx_then_en, DEFAULT_MAX_WORDS)));
        }
    }
}

#[test]
fn unspaced_scripts_are_not_english() {
    let detector = StopwordDetector::default();
    for (name, text) in load("other").iter().filter(|(n, _)| n.starts_with("zh") || n.starts_with("ja")) {
        let v = detector.detect(text);
        assert!(!v.is_english, "{name}");
        assert!(v.words_examined < 10, "{name}: {}", v.words_examined);
    }
}
