use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::AudioBuffer;
use crate::error::{Error, Result};

/// Sample encoding used when writing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WavEncoding {
    #[default]
    Pcm16,
    Float32,
}

/// Reads a PCM or IEEE-float WAV file, averaging channels down to mono.
pub fn load_wav(path: impl AsRef<Path>) -> Result<AudioBuffer> {
    let file = File::open(path.as_ref())?;
    // The file exists and opened; any read failure from here on means the
    // contents are short or malformed.
    let content = |e: hound::Error| match e {
        hound::Error::IoError(io) => Error::Format(format!("truncated or unreadable WAV data: {io}")),
        other => other.into(),
    };
    let reader = WavReader::new(BufReader::new(file)).map_err(content)?;
    let spec = reader.spec();
    let channels = usize::from(spec.channels.max(1));
    let expected = reader.len() as usize;
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, bits @ (16 | 24 | 32)) => {
            let scale = f64::from(1u32 << (bits - 1));
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| f64::from(v) / scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(content)?
        }
        (SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()
            .map_err(content)?,
        (fmt, bits) => return Err(Error::Unsupported(format!("{bits}-bit {fmt:?} WAV data"))),
    };
    if interleaved.len() < expected {
        return Err(Error::Format(format!(
            "data chunk declares {expected} samples but only {} are present",
            interleaved.len()
        )));
    }
    if !interleaved.len().is_multiple_of(channels) {
        return Err(Error::Format("partial trailing frame".into()));
    }
    let mono = interleaved.chunks_exact(channels).map(|frame| frame.iter().sum::<f64>() / channels as f64).collect();
    AudioBuffer::new(mono, spec.sample_rate)
}

pub fn save_wav(buf: &AudioBuffer, path: impl AsRef<Path>) -> Result<()> {
    save_wav_with(buf, path, WavEncoding::Pcm16)
}

pub fn save_wav_with(buf: &AudioBuffer, path: impl AsRef<Path>, enc: WavEncoding) -> Result<()> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: buf.sample_rate(),
        bits_per_sample: match enc {
            WavEncoding::Pcm16 => 16,
            WavEncoding::Float32 => 32,
        },
        sample_format: match enc {
            WavEncoding::Pcm16 => SampleFormat::Int,
            WavEncoding::Float32 => SampleFormat::Float,
        },
    };
    let mut writer = WavWriter::create(path.as_ref(), spec)?;
    for &s in buf.samples() {
        match enc {
            WavEncoding::Pcm16 => {
                let q = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                writer.write_sample(q)?;
            }
            WavEncoding::Float32 => writer.write_sample(s as f32)?,
        }
    }
    writer.finalize()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::{synth_tone, ToneKind};

    #[test]
    fn pcm16_round_trip_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.wav");
        let mut tone = synth_tone(440.0, 1.0, 24000, ToneKind::Sine).unwrap().into_samples();
        tone[10] = 1.0;
        tone[11] = -1.0;
        let buf = AudioBuffer::new(tone, 24000).unwrap();
        save_wav(&buf, &path).unwrap();
        let back = load_wav(&path).unwrap();
        assert_eq!(back.len(), 24000);
        assert_eq!(back.sample_rate(), 24000);
        let worst = buf.samples().iter().zip(back.samples()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(worst <= 2f64.powi(-15), "worst {worst}");
    }

    #[test]
    fn float32_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.wav");
        let buf = AudioBuffer::new(vec![0.25, -0.5, 0.125], 16000).unwrap();
        save_wav_with(&buf, &path, WavEncoding::Float32).unwrap();
        assert_eq!(load_wav(&path).unwrap(), buf);
    }

    #[test]
    fn empty_buffer_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.wav");
        save_wav(&AudioBuffer::silence(0, 24000).unwrap(), &path).unwrap();
        let back = load_wav(&path).unwrap();
        assert!(back.is_empty());
        assert_eq!(back.sample_rate(), 24000);
    }

    #[test]
    fn stereo_is_averaged() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.wav");
        let spec = WavSpec { channels: 2, sample_rate: 24000, bits_per_sample: 16, sample_format: SampleFormat::Int };
        let mut w = WavWriter::create(&path, spec).unwrap();
        for _ in 0..100 {
            w.write_sample(16384i16).unwrap();
            w.write_sample(-16384i16).unwrap();
        }
        w.finalize().unwrap();
        let back = load_wav(&path).unwrap();
        assert_eq!(back.len(), 100);
        assert!(back.samples().iter().all(|&s| s == 0.0));
    }

    #[test]
    fn truncated_file_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.wav");
        save_wav(&AudioBuffer::silence(1000, 24000).unwrap(), &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(load_wav(&path), Err(Error::Format(_))));
        assert!(matches!(load_wav(&path), Err(Error::Format(_))));
    }

    #[test]
    fn unsupported_encoding() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("u.wav");
        let spec = WavSpec { channels: 1, sample_rate: 8000, bits_per_sample: 8, sample_format: SampleFormat::Int };
        let mut w = WavWriter::create(&path, spec).unwrap();
        w.write_sample(3i8).unwrap();
        w.finalize().unwrap();
        assert!(matches!(load_wav(&path), Err(Error::Unsupported(_))));
    }

    #[test]
    fn missing_directory_is_io_error() {
        let buf = AudioBuffer::silence(4, 8000).unwrap();
        assert!(matches!(save_wav(&buf, "/nonexistent/dir/x.wav"), Err(Error::Io(_))));
    }
}
