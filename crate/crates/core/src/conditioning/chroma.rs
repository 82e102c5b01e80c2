//! Chromagrams, their argmax quantization, and a pitch-class sonifier that
//! closes the loop for chroma-adherence checks.

use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::{AudioBuffer, ConditioningError};

pub const PITCH_CLASSES: usize = 12;
pub const DEFAULT_WINDOW: usize = 1 << 14;
pub const DEFAULT_HOP: usize = 1 << 12;
/// Lowest analysed frequency (C1).
pub const MIN_FREQUENCY: f64 = 32.7;
const A4: f64 = 440.0;

/// `F x 12` nonnegative pitch-class energies, C first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Chromagram {
    pub frames: Vec<[f64; PITCH_CLASSES]>,
    pub frame_hop_seconds: f64,
}

impl Chromagram {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Per-frame dominant pitch class in `0..12`. Serializes as a bare JSON array.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct QuantizedChroma {
    pub classes: Vec<u8>,
}

impl QuantizedChroma {
    pub fn new(classes: Vec<u8>) -> Result<Self, ConditioningError> {
        if let Some(&c) = classes.iter().find(|&&c| c as usize >= PITCH_CLASSES) {
            return Err(ConditioningError::PitchClassOutOfRange(c));
        }
        Ok(Self { classes })
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    /// Every class shifted up by `semitones` (mod 12).
    pub fn transposed(&self, semitones: i32) -> Self {
        Self {
            classes: self
                .classes
                .iter()
                .map(|&c| (c as i32 + semitones).rem_euclid(PITCH_CLASSES as i32) as u8)
                .collect(),
        }
    }
}

/// Pitch class of a frequency with A4 = 440 Hz; 0 = C, 9 = A.
pub fn pitch_class(frequency: f64) -> usize {
    let semis = (12.0 * (frequency / A4).log2()).round() as i64;
    (semis + 9).rem_euclid(PITCH_CLASSES as i64) as usize
}

/// Frequency of pitch class `class` in the octave starting at C4.
pub fn class_frequency(class: u8) -> f64 {
    A4 * 2f64.powf((class as f64 - 9.0) / 12.0)
}

fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

/// Short-time chromagram: Hann-windowed power spectrum with each bin in
/// `[32.7 Hz, Nyquist)` folded onto its pitch class.
pub fn compute_chromagram(audio: &AudioBuffer, window: usize, hop: usize) -> Result<Chromagram, ConditioningError> {
    if window == 0 || hop == 0 {
        return Err(ConditioningError::InvalidParameter("window and hop must be positive"));
    }
    let n = audio.samples.len();
    if n < window {
        return Err(ConditioningError::TooShort { samples: n, window });
    }
    let sr = audio.sample_rate as f64;
    let nyquist = sr / 2.0;
    let bin_class: Vec<Option<usize>> = (0..window / 2 + 1)
        .map(|i| {
            let f = i as f64 * sr / window as f64;
            (f >= MIN_FREQUENCY && f < nyquist).then(|| pitch_class(f))
        })
        .collect();

    let fft = FftPlanner::<f64>::new().plan_fft_forward(window);
    let taper = hann(window);
    let mut buf = vec![Complex::new(0.0, 0.0); window];
    let mut frames = Vec::with_capacity(1 + (n - window) / hop);
    let mut start = 0;
    while start + window <= n {
        for ((b, x), w) in buf.iter_mut().zip(&audio.samples[start..start + window]).zip(&taper) {
            *b = Complex::new(x * w, 0.0);
        }
        fft.process(&mut buf);
        let mut energies = [0.0; PITCH_CLASSES];
        for (bin, class) in bin_class.iter().enumerate() {
            if let Some(c) = class {
                energies[*c] += buf[bin].norm_sqr();
            }
        }
        frames.push(energies);
        start += hop;
    }
    Ok(Chromagram {
        frames,
        frame_hop_seconds: hop as f64 / sr,
    })
}

/// Argmax per frame; ties (including all-zero frames) go to the lowest class.
pub fn quantize_chroma(chroma: &Chromagram) -> QuantizedChroma {
    let classes = chroma
        .frames
        .iter()
        .map(|frame| {
            let mut best = 0;
            for (i, &e) in frame.iter().enumerate() {
                if e > frame[best] {
                    best = i;
                }
            }
            best as u8
        })
        .collect();
    QuantizedChroma { classes }
}

/// Mean per-frame cosine similarity of one-hot frames, i.e. the fraction of
/// frames whose classes agree. The longer sequence is truncated.
pub fn chroma_cosine_similarity(a: &QuantizedChroma, b: &QuantizedChroma) -> Result<f64, ConditioningError> {
    let n = a.len().min(b.len());
    if n == 0 {
        return Err(ConditioningError::EmptyComparison);
    }
    let agree = a.classes.iter().zip(&b.classes).filter(|(x, y)| x == y).count();
    Ok(agree as f64 / n as f64)
}

/// Debug variant of [`chroma_cosine_similarity`] on raw energies. Frames with
/// zero energy on either side score 0.
pub fn chroma_energy_cosine(a: &Chromagram, b: &Chromagram) -> Result<f64, ConditioningError> {
    let n = a.len().min(b.len());
    if n == 0 {
        return Err(ConditioningError::EmptyComparison);
    }
    let total: f64 = a
        .frames
        .iter()
        .zip(&b.frames)
        .map(|(x, y)| {
            let dot: f64 = x.iter().zip(y).map(|(p, q)| p * q).sum();
            let nx = x.iter().map(|p| p * p).sum::<f64>().sqrt();
            let ny = y.iter().map(|q| q * q).sum::<f64>().sqrt();
            if nx == 0.0 || ny == 0.0 {
                0.0
            } else {
                dot / (nx * ny)
            }
        })
        .sum();
    Ok(total / n as f64)
}

/// A sine of the given frequency, `seconds` long.
pub fn sine(frequency: f64, sample_rate: u32, seconds: f64, amplitude: f64) -> AudioBuffer {
    let n = (seconds * sample_rate as f64).round() as usize;
    let step = 2.0 * PI * frequency / sample_rate as f64;
    AudioBuffer {
        samples: (0..n).map(|i| amplitude * (step * i as f64).sin()).collect(),
        sample_rate,
    }
}

/// Renders a pitch-class sequence as phase-continuous sines so that
/// [`compute_chromagram`] with the same `window`/`hop` recovers one frame per
/// class. Class `f` sounds during the hop-long segment centred on analysis
/// frame `f`'s window centre.
pub fn render_pitch_classes(classes: &QuantizedChroma, sample_rate: u32, window: usize, hop: usize) -> AudioBuffer {
    if classes.is_empty() {
        return AudioBuffer {
            samples: Vec::new(),
            sample_rate,
        };
    }
    let frames = classes.len();
    let total = (frames - 1) * hop + window;
    let first_boundary = (window / 2).saturating_sub(hop / 2);
    let mut samples = Vec::with_capacity(total);
    let mut phase = 0.0f64;
    for i in 0..total {
        let f = if i < first_boundary {
            0
        } else {
            ((i - first_boundary) / hop).min(frames - 1)
        };
        phase += 2.0 * PI * class_frequency(classes.classes[f]) / sample_rate as f64;
        if phase > 2.0 * PI {
            phase -= 2.0 * PI;
        }
        samples.push(0.5 * phase.sin());
    }
    AudioBuffer { samples, sample_rate }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pitch_class_formula() {
        assert_eq!(pitch_class(440.0), 9);
        assert_eq!(pitch_class(880.0), 9);
        assert_eq!(pitch_class(261.63), 0);
        assert_eq!(pitch_class(32.7), 0);
        assert_eq!(pitch_class(493.88), 11);
        for c in 0..12u8 {
            assert_eq!(pitch_class(class_frequency(c)), c as usize);
        }
    }

    #[test]
    fn a440_and_a880_are_class_nine() {
        for f in [440.0, 880.0] {
            let audio = sine(f, 32_000, 2.0, 0.5);
            let chroma = compute_chromagram(&audio, DEFAULT_WINDOW, DEFAULT_HOP).unwrap();
            assert_eq!(chroma.len(), 1 + (64_000 - DEFAULT_WINDOW) / DEFAULT_HOP);
            let q = quantize_chroma(&chroma);
            assert!(q.classes.iter().all(|&c| c == 9), "{f} Hz: {:?}", q.classes);
        }
    }

    #[test]
    fn silence_is_all_zero() {
        let audio = AudioBuffer {
            samples: vec![0.0; 40_000],
            sample_rate: 32_000,
        };
        let chroma = compute_chromagram(&audio, DEFAULT_WINDOW, DEFAULT_HOP).unwrap();
        assert!(chroma.frames.iter().all(|f| f.iter().all(|&e| e == 0.0)));
        assert!(quantize_chroma(&chroma).classes.iter().all(|&c| c == 0));
    }

    #[test]
    fn short_audio_is_rejected() {
        let audio = sine(440.0, 32_000, 0.1, 0.5);
        assert!(matches!(
            compute_chromagram(&audio, DEFAULT_WINDOW, DEFAULT_HOP),
            Err(ConditioningError::TooShort { .. })
        ));
    }

    #[test]
    fn quantize_ties_and_peaks() {
        let mut frame = [0.0; 12];
        frame[9] = 5.0;
        let chroma = Chromagram {
            frames: vec![frame, [0.0; 12], [1.0; 12]],
            frame_hop_seconds: 0.1,
        };
        assert_eq!(quantize_chroma(&chroma).classes, vec![9, 0, 0]);
    }

    #[test]
    fn similarity_edge_cases() {
        let a = QuantizedChroma::new(vec![0, 4, 7, 11]).unwrap();
        assert_eq!(chroma_cosine_similarity(&a, &a).unwrap(), 1.0);
        assert_eq!(chroma_cosine_similarity(&a, &a.transposed(1)).unwrap(), 0.0);
        let short = QuantizedChroma::new(vec![0, 4]).unwrap();
        assert_eq!(chroma_cosine_similarity(&a, &short).unwrap(), 1.0);
        let empty = QuantizedChroma::default();
        assert!(chroma_cosine_similarity(&empty, &empty).is_err());
        assert!(QuantizedChroma::new(vec![12]).is_err());
    }

    #[test]
    fn rendered_classes_round_trip() {
        let q = QuantizedChroma::new(vec![0, 9, 9, 2, 11, 4, 4, 4, 7, 1, 5]).unwrap();
        let audio = render_pitch_classes(&q, 32_000, DEFAULT_WINDOW, DEFAULT_HOP);
        let back = quantize_chroma(&compute_chromagram(&audio, DEFAULT_WINDOW, DEFAULT_HOP).unwrap());
        assert_eq!(back, q);
    }

    #[test]
    fn energy_cosine_of_identical_frames_is_one() {
        let audio = sine(330.0, 32_000, 1.0, 0.3);
        let c = compute_chromagram(&audio, DEFAULT_WINDOW, DEFAULT_HOP).unwrap();
        assert!((chroma_energy_cosine(&c, &c).unwrap() - 1.0).abs() < 1e-12);
    }
}
