//! Text preprocessing: condition merging, description/word dropout,
//! normalization, and a deterministic stand-in text embedder.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ConditioningError, ConditioningTensor};

/// A free-text description plus metadata tags (genre, bpm, key, ...).
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextAnnotation {
    pub description: String,
    pub tags: BTreeMap<String, String>,
}

impl TextAnnotation {
    pub fn new(description: impl Into<String>) -> Self {
        Self {
            description: description.into(),
            tags: BTreeMap::new(),
        }
    }

    pub fn with_tag(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.tags.insert(key.into(), value.into());
        self
    }

    /// `"key: value"` pairs in key order, comma separated.
    pub fn tag_string(&self) -> String {
        self.tags
            .iter()
            .map(|(k, v)| format!("{k}: {v}"))
            .collect::<Vec<_>>()
            .join(", ")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub merge_prob: f64,
    pub description_dropout: f64,
    pub word_dropout: f64,
    /// Probability of replacing a training batch's condition with the null
    /// condition (classifier-free guidance training).
    pub condition_dropout: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            merge_prob: 0.25,
            description_dropout: 0.5,
            word_dropout: 0.3,
            condition_dropout: 0.2,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<(), ConditioningError> {
        for (name, p) in [
            ("merge_prob", self.merge_prob),
            ("description_dropout", self.description_dropout),
            ("word_dropout", self.word_dropout),
            ("condition_dropout", self.condition_dropout),
        ] {
            check_probability(name, p)?;
        }
        Ok(())
    }
}

pub(crate) fn check_probability(name: &'static str, p: f64) -> Result<(), ConditioningError> {
    if !(0.0..=1.0).contains(&p) {
        return Err(ConditioningError::Probability { name, value: p });
    }
    Ok(())
}

/// What [`merge_conditions_traced`] decided.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MergeOutcome {
    pub text: String,
    pub merged: bool,
    pub description_dropped: bool,
}

/// Condition merging with its random decisions exposed.
///
/// With probability `merge_prob` the tags are appended to the description;
/// once merged, the description itself is dropped with probability
/// `description_dropout`. Annotations without tags are returned unchanged and
/// consume no randomness.
pub fn merge_conditions_traced<R: Rng + ?Sized>(ann: &TextAnnotation, cfg: &PreprocessConfig, rng: &mut R) -> MergeOutcome {
    if ann.tags.is_empty() {
        return MergeOutcome {
            text: ann.description.clone(),
            merged: false,
            description_dropped: false,
        };
    }
    let merged = rng.random::<f64>() < cfg.merge_prob;
    if !merged {
        return MergeOutcome {
            text: ann.description.clone(),
            merged,
            description_dropped: false,
        };
    }
    let description_dropped = rng.random::<f64>() < cfg.description_dropout;
    let tags = ann.tag_string();
    let text = if description_dropped || ann.description.trim().is_empty() {
        tags
    } else {
        format!("{}. {}", ann.description.trim_end_matches(['.', ' ']), tags)
    };
    MergeOutcome {
        text,
        merged,
        description_dropped,
    }
}

pub fn merge_conditions<R: Rng + ?Sized>(ann: &TextAnnotation, cfg: &PreprocessConfig, rng: &mut R) -> String {
    merge_conditions_traced(ann, cfg, rng).text
}

/// Drops each whitespace-delimited word independently with probability `p`.
pub fn word_dropout<R: Rng + ?Sized>(text: &str, p: f64, rng: &mut R) -> Result<String, ConditioningError> {
    check_probability("word_dropout", p)?;
    let kept: Vec<&str> = text
        .split_whitespace()
        .filter(|_| rng.random::<f64>() >= p)
        .collect();
    Ok(kept.join(" "))
}

/// Built-in stop words removed by [`text_normalize`].
pub const STOP_WORDS: &[&str] = &[
    "a", "about", "all", "also", "an", "and", "any", "are", "as", "at", "be", "been", "being", "both", "but",
    "by", "can", "did", "do", "does", "each", "few", "for", "from", "had", "has", "have", "he", "her", "his",
    "i", "if", "in", "into", "is", "it", "its", "just", "me", "more", "most", "my", "no", "nor", "not", "of",
    "on", "only", "or", "other", "our", "out", "over", "own", "s", "same", "she", "so", "some", "such", "t",
    "than", "that", "the", "their", "them", "then", "there", "these", "they", "this", "those", "to", "too",
    "under", "up", "very", "was", "we", "were", "what", "when", "where", "which", "while", "who", "will",
    "with", "you", "your",
];

/// Suffix rules `(suffix, replacement, minimum stem length)`, tried in order.
/// Only the first rule whose suffix matches is considered; it fires if the
/// remaining stem is long enough. Rules are reapplied until none fires.
pub const LEMMA_RULES: &[(&str, &str, usize)] = &[
    ("sses", "ss", 1),
    ("ies", "y", 2),
    ("ches", "ch", 1),
    ("shes", "sh", 1),
    ("xes", "x", 1),
    ("ing", "", 4),
    ("ed", "", 4),
    ("s", "", 3),
];

/// Endings the plural rule never strips ("bass", "chorus", "analysis").
pub const PROTECTED_ENDINGS: &[&str] = &["ss", "us", "is"];

fn lemma_step(word: &str) -> Option<String> {
    let (suffix, replacement, min_stem) = LEMMA_RULES
        .iter()
        .copied()
        .find(|(suffix, _, _)| word.ends_with(suffix))?;
    if suffix == "s" && PROTECTED_ENDINGS.iter().any(|e| word.ends_with(e)) {
        return None;
    }
    let stem = &word[..word.len() - suffix.len()];
    (stem.chars().count() >= min_stem).then(|| format!("{stem}{replacement}"))
}

/// Lemma of a lowercase word under [`LEMMA_RULES`].
pub fn lemmatize(word: &str) -> String {
    let mut current = word.to_string();
    while let Some(next) = lemma_step(&current) {
        if next == current {
            break;
        }
        current = next;
    }
    current
}

fn is_stop_word(word: &str) -> bool {
    STOP_WORDS.binary_search(&word).is_ok()
}

/// Lowercases, strips non-alphanumeric characters, removes stop words and
/// lemmatizes by suffix stripping. Idempotent.
pub fn text_normalize(text: &str) -> String {
    let mut out: Vec<String> = Vec::new();
    for raw in text.split_whitespace() {
        let word: String = raw
            .to_lowercase()
            .chars()
            .filter(|c| c.is_alphanumeric())
            .collect();
        if word.is_empty() || is_stop_word(&word) {
            continue;
        }
        let lemma = lemmatize(&word);
        if lemma.is_empty() || is_stop_word(&lemma) {
            continue;
        }
        out.push(lemma);
    }
    out.join(" ")
}

/// Merge, optionally normalize, then word dropout: the full text pipeline.
pub fn preprocess_text<R: Rng + ?Sized>(
    ann: &TextAnnotation,
    cfg: &PreprocessConfig,
    normalize: bool,
    rng: &mut R,
) -> Result<String, ConditioningError> {
    cfg.validate()?;
    let merged = merge_conditions(ann, cfg, rng);
    let text = if normalize { text_normalize(&merged) } else { merged };
    word_dropout(&text, cfg.word_dropout, rng)
}

/// Deterministic unit vector for a token string.
fn token_vector(token: &str, dim: usize) -> Vec<f64> {
    let digest = Sha256::digest(token.as_bytes());
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&digest);
    let mut rng = ChaCha8Rng::from_seed(seed);
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Toy text encoder: one hashed unit vector per whitespace token. Empty text
/// yields the empty (null) condition.
pub fn encode_text_toy(text: &str, dim: usize) -> Result<ConditioningTensor, ConditioningError> {
    if dim == 0 {
        return Err(ConditioningError::InvalidParameter("embedding dimension must be >= 1"));
    }
    let mut data = Vec::new();
    for token in text.split_whitespace() {
        data.extend(token_vector(token, dim));
    }
    Ok(ConditioningTensor::new(dim, data))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stop_words_are_sorted_for_binary_search() {
        assert!(STOP_WORDS.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn normalize_example() {
        assert_eq!(text_normalize("the guitars are playing"), "guitar play");
        assert_eq!(text_normalize(""), "");
        assert_eq!(text_normalize("Heavy DRUMS, distorted basses!"), "heavy drum distort bass");
        assert_eq!(text_normalize("sing the melodies"), "sing melody");
    }

    #[test]
    fn lemma_rules_block_short_stems() {
        assert_eq!(lemmatize("string"), "string");
        assert_eq!(lemmatize("speed"), "speed");
        assert_eq!(lemmatize("chorus"), "chorus");
        assert_eq!(lemmatize("bass"), "bass");
        assert_eq!(lemmatize("parties"), "party");
        assert_eq!(lemmatize("beats"), "beat");
    }

    #[test]
    fn word_dropout_extremes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let text = "a b c d";
        assert_eq!(word_dropout(text, 0.0, &mut rng).unwrap(), text);
        assert_eq!(word_dropout(text, 1.0, &mut rng).unwrap(), "");
        assert!(word_dropout(text, 1.5, &mut rng).is_err());
    }

    #[test]
    fn merge_without_tags_is_identity() {
        let ann = TextAnnotation::new("calm piano");
        for seed in 0..50 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            assert_eq!(merge_conditions(&ann, &PreprocessConfig::default(), &mut rng), "calm piano");
        }
    }

    #[test]
    fn merge_with_description_dropped_keeps_only_tags() {
        let ann = TextAnnotation::new("calm piano").with_tag("key", "C major").with_tag("bpm", "90");
        let always = PreprocessConfig {
            merge_prob: 1.0,
            description_dropout: 1.0,
            ..PreprocessConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let out = merge_conditions_traced(&ann, &always, &mut rng);
        assert!(out.merged && out.description_dropped);
        assert_eq!(out.text, "bpm: 90, key: C major");
        let keep = PreprocessConfig {
            merge_prob: 1.0,
            description_dropout: 0.0,
            ..PreprocessConfig::default()
        };
        assert_eq!(merge_conditions(&ann, &keep, &mut rng), "calm piano. bpm: 90, key: C major");
    }

    #[test]
    fn toy_encoder_rows_are_unit_and_deterministic() {
        let a = encode_text_toy("90s rock song", 16).unwrap();
        assert_eq!(a, encode_text_toy("90s rock song", 16).unwrap());
        assert_eq!(a.len(), 3);
        for row in a.rows() {
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-9);
        }
        assert_eq!(encode_text_toy("", 16).unwrap().len(), 0);
        assert!(encode_text_toy("x", 0).is_err());
    }
}
