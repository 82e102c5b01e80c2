//! 16-bit PCM WAV input and output. Multi-channel input is downmixed to mono
//! by averaging channels.

use std::io::{Read, Seek, Write};

use super::{AudioBuffer, ConditioningError};

pub fn read_wav<R: Read>(reader: R) -> Result<AudioBuffer, ConditioningError> {
    let mut wav = hound::WavReader::new(reader)?;
    let spec = wav.spec();
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(ConditioningError::UnsupportedWav(format!(
            "{:?} {}-bit samples (expected 16-bit PCM)",
            spec.sample_format, spec.bits_per_sample
        )));
    }
    let channels = usize::from(spec.channels.max(1));
    let raw = wav.samples::<i16>().collect::<Result<Vec<_>, _>>()?;
    let samples = raw
        .chunks(channels)
        .map(|frame| frame.iter().map(|&s| f64::from(s) / 32768.0).sum::<f64>() / channels as f64)
        .collect();
    Ok(AudioBuffer {
        samples,
        sample_rate: spec.sample_rate,
    })
}

pub fn read_wav_file(path: &std::path::Path) -> Result<AudioBuffer, ConditioningError> {
    let file = std::fs::File::open(path).map_err(hound::Error::IoError)?;
    read_wav(std::io::BufReader::new(file))
}

/// Writes mono 16-bit PCM; samples are clamped to `[-1, 1]`.
pub fn write_wav<W: Write + Seek>(audio: &AudioBuffer, writer: W) -> Result<(), ConditioningError> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: audio.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::new(writer, spec)?;
    for &s in &audio.samples {
        w.write_sample((s.clamp(-1.0, 1.0) * 32767.0).round() as i16)?;
    }
    w.finalize()?;
    Ok(())
}

pub fn write_wav_file(audio: &AudioBuffer, path: &std::path::Path) -> Result<(), ConditioningError> {
    let file = std::fs::File::create(path).map_err(hound::Error::IoError)?;
    write_wav(audio, std::io::BufWriter::new(file))
}

#[cfg(test)]
mod tests {
    use std::io::Cursor;

    use super::*;

    #[test]
    fn stereo_is_downmixed_by_averaging() {
        let spec = hound::WavSpec {
            channels: 2,
            sample_rate: 8000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut buf = Cursor::new(Vec::new());
        {
            let mut w = hound::WavWriter::new(&mut buf, spec).unwrap();
            for (l, r) in [(16384i16, 0i16), (-8192, -8192)] {
                w.write_sample(l).unwrap();
                w.write_sample(r).unwrap();
            }
            w.finalize().unwrap();
        }
        let audio = read_wav(Cursor::new(buf.into_inner())).unwrap();
        assert_eq!(audio.sample_rate, 8000);
        assert_eq!(audio.samples, vec![0.25, -0.25]);
    }

    #[test]
    fn mono_round_trip_is_quantized_to_16_bits() {
        let audio = AudioBuffer {
            samples: vec![0.0, 0.5, -0.5, 1.0],
            sample_rate: 32_000,
        };
        let mut buf = Cursor::new(Vec::new());
        write_wav(&audio, &mut buf).unwrap();
        let back = read_wav(Cursor::new(buf.into_inner())).unwrap();
        for (a, b) in audio.samples.iter().zip(&back.samples) {
            assert!((a - b).abs() < 1e-4);
        }
    }

    #[test]
    fn garbage_is_rejected() {
        assert!(matches!(
            read_wav(Cursor::new(b"not a wav file".to_vec())),
            Err(ConditioningError::Wav(_))
        ));
    }
}
