//! Narrative diagnosis vectorization: tokenization, suffix stemming,
//! frequency-thresholded corpus, bag-of-words and TF-IDF vectors.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::split::Split;

/// Diagnoses shorter than this many characters are dropped at ingest.
pub const MIN_DIAGNOSIS_CHARS: usize = 5;

pub const STARTER_STEMMER_RULES: &str = include_str!("../rules/stemmer_rules.json");

#[derive(Debug, Error)]
pub enum TextError {
    #[error("minimum word frequency {0} excludes every stem")]
    EmptyCorpus(usize),
    #[error("corpus must be built from the training split, got {0}")]
    LeakageGuard(Split),
    #[error("invalid stemmer rules: {0}")]
    RulesInvalid(String),
}

/// Lowercases and splits on every non-alphanumeric character.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_owned)
        .collect()
}

/// True when a diagnosis is long enough to be kept.
pub fn accept_diagnosis(text: &str) -> bool {
    text.trim().chars().count() >= MIN_DIAGNOSIS_CHARS
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuffixRule {
    pub suffix: String,
    #[serde(default)]
    pub replacement: String,
}

/// Suffix-stripping rules. The longest matching suffix is applied once.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StemmerRules {
    pub min_stem_length: usize,
    pub rules: Vec<SuffixRule>,
}

impl Default for StemmerRules {
    fn default() -> Self {
        Self::from_json(STARTER_STEMMER_RULES).expect("bundled stemmer rules are valid")
    }
}

impl StemmerRules {
    /// No rules: every token is its own stem.
    pub fn identity() -> Self {
        Self { min_stem_length: 1, rules: Vec::new() }
    }

    pub fn from_json(s: &str) -> Result<Self, TextError> {
        let mut rules: StemmerRules = serde_json::from_str(s).map_err(|e| TextError::RulesInvalid(e.to_string()))?;
        if rules.rules.iter().any(|r| r.suffix.is_empty()) {
            return Err(TextError::RulesInvalid("empty suffix".into()));
        }
        // longest suffix first; ties keep file order
        rules.rules.sort_by_key(|r| std::cmp::Reverse(r.suffix.chars().count()));
        Ok(rules)
    }

    pub fn stem(&self, token: &str) -> String {
        let Some(rule) = self.rules.iter().find(|r| token.ends_with(&r.suffix)) else {
            return token.to_owned();
        };
        let base = &token[..token.len() - rule.suffix.len()];
        let stemmed = format!("{base}{}", rule.replacement);
        if stemmed.chars().count() < self.min_stem_length {
            token.to_owned()
        } else {
            stemmed
        }
    }

    pub fn stems(&self, text: &str) -> Vec<String> {
        tokenize(text).iter().map(|t| self.stem(t)).collect()
    }
}

/// Training vocabulary with document frequencies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    /// Lexicographically ordered stems.
    pub vocabulary: Vec<String>,
    pub document_frequency: Vec<usize>,
    /// Total occurrences of each stem across the training documents.
    pub occurrences: Vec<usize>,
    pub n_documents: usize,
    pub min_word_frequency: usize,
    pub stemmer: StemmerRules,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Corpus {
    pub fn build<S: AsRef<str>>(
        documents: &[S],
        split: Split,
        min_word_frequency: usize,
        stemmer: StemmerRules,
    ) -> Result<Self, TextError> {
        if split != Split::Train {
            return Err(TextError::LeakageGuard(split));
        }
        let mut counts: BTreeMap<String, (usize, usize)> = BTreeMap::new();
        for doc in documents {
            let stems = stemmer.stems(doc.as_ref());
            let mut seen = std::collections::HashSet::new();
            for s in stems {
                let entry = counts.entry(s.clone()).or_default();
                entry.0 += 1;
                if seen.insert(s) {
                    entry.1 += 1;
                }
            }
        }
        let mut vocabulary = Vec::new();
        let mut occurrences = Vec::new();
        let mut document_frequency = Vec::new();
        for (stem, (occ, df)) in counts {
            if occ >= min_word_frequency {
                vocabulary.push(stem);
                occurrences.push(occ);
                document_frequency.push(df);
            }
        }
        if vocabulary.is_empty() {
            return Err(TextError::EmptyCorpus(min_word_frequency));
        }
        let mut corpus = Self {
            vocabulary,
            document_frequency,
            occurrences,
            n_documents: documents.len(),
            min_word_frequency,
            stemmer,
            index: HashMap::new(),
        };
        corpus.reindex();
        Ok(corpus)
    }

    fn reindex(&mut self) {
        self.index = self.vocabulary.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        let mut c: Corpus = serde_json::from_str(s)?;
        c.reindex();
        Ok(c)
    }

    pub fn len(&self) -> usize {
        self.vocabulary.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vocabulary.is_empty()
    }

    /// Raw in-vocabulary stem counts.
    pub fn bow_vector(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.len()];
        for s in self.stemmer.stems(text) {
            if let Some(&i) = self.index.get(&s) {
                v[i] += 1.0;
            }
        }
        v
    }

    /// Smoothed inverse document frequency `ln((1 + N) / (1 + df)) + 1`.
    pub fn idf(&self) -> Vec<f64> {
        let n = self.n_documents as f64;
        self.document_frequency
            .iter()
            .map(|&df| ((1.0 + n) / (1.0 + df as f64)).ln() + 1.0)
            .collect()
    }

    /// Raw term counts weighted by idf, then L2-normalized.
    pub fn tfidf_vector(&self, text: &str) -> Vec<f64> {
        let mut v = self.bow_vector(text);
        for (x, w) in v.iter_mut().zip(self.idf()) {
            *x *= w;
        }
        l2_normalize(&mut v);
        v
    }
}

pub fn l2_normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TextVectorizer {
    Bow,
    Tfidf,
}

impl Corpus {
    pub fn vectorize(&self, text: &str, kind: TextVectorizer, normalize_bow: bool) -> Vec<f64> {
        match kind {
            TextVectorizer::Tfidf => self.tfidf_vector(text),
            TextVectorizer::Bow => {
                let mut v = self.bow_vector(text);
                if normalize_bow {
                    l2_normalize(&mut v);
                }
                v
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn plain(docs: &[&str], min: usize) -> Corpus {
        Corpus::build(docs, Split::Train, min, StemmerRules::identity()).unwrap()
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(tokenize("Fraktura, radiusa."), vec!["fraktura", "radiusa"]);
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("a;b:c"), vec!["a", "b", "c"]);
        assert_eq!(tokenize("  ČETIRI  Rebra!! "), vec!["četiri", "rebra"]);
    }

    #[test]
    fn stem_longest_suffix_wins() {
        let rules = StemmerRules::from_json(
            r#"{"min_stem_length": 2, "rules": [{"suffix": "a"}, {"suffix": "ama", "replacement": ""}]}"#,
        )
        .unwrap();
        assert_eq!(rules.stem("fraktura"), "fraktur");
        assert_eq!(rules.stem("frakturama"), "fraktur");
        assert_eq!(rules.stem("a"), "a");
        assert_eq!(rules.stem("xyz"), "xyz");
        let strict = StemmerRules { min_stem_length: 8, ..rules };
        assert_eq!(strict.stem("fraktura"), "fraktura");
    }

    #[test]
    fn starter_rules_load() {
        let rules = StemmerRules::default();
        assert!(!rules.rules.is_empty());
        assert_eq!(rules.stem("frakturama"), rules.stem("fraktura"));
    }

    #[test]
    fn corpus_thresholds() {
        let c = plain(&["a a b", "c"], 2);
        assert_eq!(c.vocabulary, vec!["a"]);
        let all = plain(&["a a b", "c"], 1);
        assert_eq!(all.vocabulary, vec!["a", "b", "c"]);
        assert!(matches!(
            Corpus::build(&["a"], Split::Train, 5, StemmerRules::identity()),
            Err(TextError::EmptyCorpus(5))
        ));
        assert!(matches!(
            Corpus::build(&["a"], Split::Validation, 1, StemmerRules::identity()),
            Err(TextError::LeakageGuard(Split::Validation))
        ));
    }

    #[test]
    fn bow_examples() {
        let c = plain(&["a b"], 1);
        assert_eq!(c.bow_vector("a a b"), vec![2.0, 1.0]);
        assert_eq!(c.bow_vector("zz yy"), vec![0.0, 0.0]);
        let c = plain(&["a b c"], 1);
        assert_eq!(c.bow_vector("c a"), vec![1.0, 0.0, 1.0]);
    }

    #[test]
    fn tfidf_examples() {
        let c = plain(&["a b", "a c"], 1);
        let idf_b = (3.0f64 / 2.0).ln() + 1.0;
        assert!((idf_b - 1.405).abs() < 1e-3);
        let norm = (1.0 + idf_b * idf_b).sqrt();
        let v = c.tfidf_vector("a b");
        assert!((v[0] - 1.0 / norm).abs() < 1e-12 && (v[0] - 0.580).abs() < 1e-3);
        assert!((v[1] - idf_b / norm).abs() < 1e-12 && (v[1] - 0.815).abs() < 1e-3);
        assert_eq!(v[2], 0.0);

        assert_eq!(c.tfidf_vector("zzz"), vec![0.0; 3]);
        let single = plain(&["x"], 1);
        assert_eq!(single.tfidf_vector("x"), vec![1.0]);
    }

    #[test]
    fn paper_grid_thresholds_are_accepted() {
        let doc = "x ".repeat(10_000);
        for t in [5, 10, 50, 100, 500, 1000, 2000, 3500, 5000, 10000] {
            assert_eq!(plain(&[doc.as_str()], t).vocabulary, vec!["x"]);
        }
    }

    #[test]
    fn short_diagnoses_rejected() {
        assert!(!accept_diagnosis(" abcd "));
        assert!(accept_diagnosis("abcde"));
        assert!(!accept_diagnosis(""));
    }

    #[test]
    fn corpus_json_roundtrip_keeps_index() {
        let c = plain(&["a b", "a c"], 1);
        let back = Corpus::from_json(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back.tfidf_vector("a b"), c.tfidf_vector("a b"));
    }

    proptest! {
        #[test]
        fn tfidf_is_unit_or_zero(docs in prop::collection::vec("[abcde ]{0,12}", 1..8), q in "[abcdez ]{0,12}") {
            let Ok(c) = Corpus::build(&docs, Split::Train, 1, StemmerRules::identity()) else { return Ok(()) };
            let n: f64 = c.tfidf_vector(&q).iter().map(|x| x * x).sum::<f64>().sqrt();
            prop_assert!(n == 0.0 || (n - 1.0).abs() < 1e-12);
        }

        #[test]
        fn raising_threshold_never_adds_stems(docs in prop::collection::vec("[abcde ]{1,12}", 1..8), t in 1usize..5) {
            let lo = Corpus::build(&docs, Split::Train, t, StemmerRules::identity());
            let hi = Corpus::build(&docs, Split::Train, t + 1, StemmerRules::identity());
            if let (Ok(lo), Ok(hi)) = (lo, hi) {
                prop_assert!(hi.vocabulary.iter().all(|s| lo.vocabulary.contains(s)));
            }
        }
    }
}
