//! Conditioning signals: melody (quantized chromagram) and text.
//!
//! Both end up as a [`ConditioningTensor`] of `T_C` rows of width `D`. The
//! empty tensor is the null condition used for classifier-free guidance.

pub mod chroma;
pub mod text;
pub mod wav;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use chroma::{
    chroma_cosine_similarity, chroma_energy_cosine, compute_chromagram, pitch_class, quantize_chroma,
    render_pitch_classes, Chromagram, QuantizedChroma, DEFAULT_HOP, DEFAULT_WINDOW, PITCH_CLASSES,
};
pub use text::{
    encode_text_toy, merge_conditions, merge_conditions_traced, preprocess_text, text_normalize, word_dropout,
    MergeOutcome, PreprocessConfig, TextAnnotation,
};

#[derive(Debug, Error)]
pub enum ConditioningError {
    #[error("audio has {samples} samples, shorter than one {window}-sample window")]
    TooShort { samples: usize, window: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(&'static str),
    #[error("cannot compare two empty chroma sequences")]
    EmptyComparison,
    #[error("pitch class {0} outside 0..12")]
    PitchClassOutOfRange(u8),
    #[error("{name} = {value} is not a probability")]
    Probability { name: &'static str, value: f64 },
    #[error("unsupported wav: {0}")]
    UnsupportedWav(String),
    #[error("malformed wav: {0}")]
    Wav(#[from] hound::Error),
}

/// Mono audio samples in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioBuffer {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioBuffer {
    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// `T_C x D` conditioning rows, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditioningTensor {
    dim: usize,
    data: Vec<f64>,
}

impl ConditioningTensor {
    pub fn new(dim: usize, data: Vec<f64>) -> Self {
        assert!(dim > 0 && data.len() % dim == 0, "data length must be a multiple of dim");
        Self { dim, data }
    }

    /// The null condition.
    pub fn empty(dim: usize) -> Self {
        Self::new(dim, Vec::new())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of rows `T_C`.
    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.dim)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// Embedding table for quantized chroma: 12 pitch-class rows plus a null row
/// used when the melody condition is dropped.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChromaEmbedder {
    dim: usize,
    table: Vec<f64>,
}

impl ChromaEmbedder {
    pub const NULL_ROW: usize = PITCH_CLASSES;

    /// Gaussian rows scaled by `1/sqrt(D)`.
    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(dim > 0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (dim as f64).sqrt();
        let table = (0..(PITCH_CLASSES + 1) * dim)
            .map(|_| scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
            .collect();
        Self { dim, table }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Row for a pitch class, or the null row for `None`.
    pub fn row(&self, class: Option<u8>) -> &[f64] {
        let i = class.map_or(Self::NULL_ROW, usize::from);
        &self.table[i * self.dim..(i + 1) * self.dim]
    }

    /// One row per chroma frame.
    pub fn embed(&self, chroma: &QuantizedChroma) -> ConditioningTensor {
        let data = chroma
            .classes
            .iter()
            .flat_map(|&c| self.row(Some(c)).iter().copied())
            .collect();
        ConditioningTensor::new(self.dim, data)
    }

    /// `frames` copies of the null row: a dropped melody condition of the same length.
    pub fn embed_null(&self, frames: usize) -> ConditioningTensor {
        let data = (0..frames).flat_map(|_| self.row(None).iter().copied()).collect();
        ConditioningTensor::new(self.dim, data)
    }
}

/// Quantized chroma as a prefix condition.
pub fn chroma_to_condition(chroma: &QuantizedChroma, embedder: &ChromaEmbedder) -> ConditioningTensor {
    embedder.embed(chroma)
}
