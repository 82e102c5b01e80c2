use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::AnalysisError;
use crate::conditioning::{
    chroma_cosine_similarity, compute_chromagram, quantize_chroma, render_pitch_classes, AudioBuffer, QuantizedChroma,
    DEFAULT_HOP, DEFAULT_WINDOW, PITCH_CLASSES,
};
use crate::grid::TokenGrid;
use crate::rvq::{rvq_decode, Codebook, LatentFrames};

/// Deterministic latent-to-audio rule. Each latent frame is assigned the
/// pitch class whose seeded unit direction has the largest dot product with
/// it, and that class is rendered as a sine for one chroma hop. This is not
/// a vocoder: it only gives the chroma metric something to listen to.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sonifier {
    directions: Vec<Vec<f64>>,
    pub sample_rate: u32,
    pub window: usize,
    pub hop: usize,
}

impl Sonifier {
    pub fn new(latent_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let directions = (0..PITCH_CLASSES)
            .map(|_| {
                let v: Vec<f64> = (0..latent_dim).map(|_| StandardNormal.sample(&mut rng)).collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
                v.into_iter().map(|x| x / norm).collect()
            })
            .collect();
        Self {
            directions,
            sample_rate: 32_000,
            window: DEFAULT_WINDOW,
            hop: DEFAULT_HOP,
        }
    }

    /// Same classification with a different chroma window and hop.
    pub fn with_frames(self, window: usize, hop: usize) -> Self {
        Self { window, hop, ..self }
    }

    pub fn latent_dim(&self) -> usize {
        self.directions[0].len()
    }

    /// Unit direction of `class`; classifies back to `class`.
    pub fn direction(&self, class: u8) -> &[f64] {
        &self.directions[class as usize]
    }

    /// Per-frame pitch class; ties go to the lower class.
    pub fn classes(&self, latents: &LatentFrames) -> Result<QuantizedChroma, AnalysisError> {
        if latents.dim() != self.latent_dim() {
            return Err(AnalysisError::Config(format!(
                "latent dim {} does not match sonifier dim {}",
                latents.dim(),
                self.latent_dim()
            )));
        }
        let classes = latents
            .frames()
            .map(|frame| {
                let score = |d: &Vec<f64>| d.iter().zip(frame).map(|(a, b)| a * b).sum::<f64>();
                let mut best = 0;
                for c in 1..PITCH_CLASSES {
                    if score(&self.directions[c]) > score(&self.directions[best]) {
                        best = c;
                    }
                }
                best as u8
            })
            .collect();
        Ok(QuantizedChroma::new(classes)?)
    }

    pub fn render(&self, classes: &QuantizedChroma) -> AudioBuffer {
        render_pitch_classes(classes, self.sample_rate, self.window, self.hop)
    }

    pub fn sonify(&self, latents: &LatentFrames) -> Result<AudioBuffer, AnalysisError> {
        Ok(self.render(&self.classes(latents)?))
    }

    /// Quantized chroma heard in `audio` with this sonifier's window and hop.
    pub fn listen(&self, audio: &AudioBuffer) -> Result<QuantizedChroma, AnalysisError> {
        Ok(quantize_chroma(&compute_chromagram(audio, self.window, self.hop)?))
    }
}

/// Similarity between `reference` and the chroma heard in already-sonified audio.
pub fn audio_adherence(audio: &AudioBuffer, sonifier: &Sonifier, reference: &QuantizedChroma) -> Result<f64, AnalysisError> {
    Ok(chroma_cosine_similarity(&sonifier.listen(audio)?, reference)?)
}

/// Decodes `grid`, sonifies it, and scores its chroma against `reference`.
/// The longer of the two sequences is truncated.
pub fn chroma_adherence(
    grid: &TokenGrid,
    codebooks: &[Codebook],
    sonifier: &Sonifier,
    reference: &QuantizedChroma,
) -> Result<f64, AnalysisError> {
    let latents = rvq_decode(grid, codebooks)?;
    audio_adherence(&sonifier.sonify(&latents)?, sonifier, reference)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Sonifier {
        Sonifier::new(6, 2).with_frames(4096, 1024)
    }

    #[test]
    fn directions_classify_to_themselves() {
        let s = small();
        let rows: Vec<Vec<f64>> = (0..12u8).map(|c| s.direction(c).iter().map(|x| 3.0 * x).collect()).collect();
        let q = s.classes(&LatentFrames::from_rows(&rows)).unwrap();
        assert_eq!(q.classes, (0..12u8).collect::<Vec<_>>());
        assert!(s.classes(&LatentFrames::from_rows(&[vec![0.0; 3]])).is_err());
    }

    #[test]
    fn closed_loop_and_transposition() {
        let s = small();
        let reference = QuantizedChroma::new(vec![0, 4, 7, 7, 11, 2, 5, 9]).unwrap();
        let audio = s.render(&reference);
        assert_eq!(audio_adherence(&audio, &s, &reference).unwrap(), 1.0);
        let shifted = s.render(&reference.transposed(1));
        assert_eq!(audio_adherence(&shifted, &s, &reference).unwrap(), 0.0);
    }
}
