use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::SpectralConfig;
use crate::error::{Error, Result};

/// Mono PCM audio with amplitudes in [-1, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct AudioClip {
    samples: Vec<f64>,
    sample_rate: u32,
    source_id: String,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32, source_id: impl Into<String>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Data("audio clip has no samples".into()));
        }
        if sample_rate == 0 {
            return Err(Error::Data("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite() || s.abs() > 1.0) {
            return Err(Error::Data(format!("sample {i} = {} is outside [-1, 1]", samples[i])));
        }
        Ok(AudioClip {
            samples,
            sample_rate,
            source_id: source_id.into(),
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn source_id(&self) -> &str {
        &self.source_id
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }
}

/// Reads a PCM16 or float32 RIFF/WAVE file, averaging channels to mono.
///
/// 16-bit samples map to `v / 32768`.
pub fn load_wav(path: impl AsRef<Path>, source_id: impl Into<String>) -> Result<AudioClip> {
    let path = path.as_ref();
    let fail = |reason: String| Error::Ingestion {
        path: path.to_path_buf(),
        reason,
    };
    let reader = WavReader::open(path).map_err(|e| fail(e.to_string()))?;
    let spec = reader.spec();
    let channels = usize::from(spec.channels);
    if channels == 0 || channels > 2 {
        return Err(fail(format!("{channels} channels; only mono and stereo are supported")));
    }
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| f64::from(v) / 32768.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| fail(e.to_string()))?,
        (SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| fail(e.to_string()))?,
        (fmt, bits) => return Err(fail(format!("unsupported codec: {fmt:?} {bits}-bit"))),
    };
    if interleaved.len() < channels {
        return Err(fail("no audio frames".into()));
    }
    let mut mono = Vec::with_capacity(interleaved.len() / channels);
    for frame in interleaved.chunks_exact(channels) {
        let v = frame.iter().sum::<f64>() / channels as f64;
        if !v.is_finite() {
            return Err(fail("non-finite sample".into()));
        }
        mono.push(v.clamp(-1.0, 1.0));
    }
    AudioClip::new(mono, spec.sample_rate, source_id).map_err(|e| fail(e.to_string()))
}

/// Writes mono 16-bit PCM, scaling by 32767 with rounding.
pub fn write_wav16(path: impl AsRef<Path>, samples: &[f64], sample_rate: u32) -> Result<()> {
    let path = path.as_ref();
    let spec = WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let wrap = |e: hound::Error| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::Data(format!("writing {}: {other}", path.display())),
    };
    let mut writer = WavWriter::create(path, spec).map_err(wrap)?;
    for &s in samples {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        writer.write_sample(v).map_err(wrap)?;
    }
    writer.finalize().map_err(wrap)
}

/// Cuts a clip into fixed windows of `clip_seconds` every `clip_hop_seconds`.
///
/// A trailing partial window is zero-padded and kept when it covers at least
/// half a window, otherwise dropped. A clip shorter than one window yields a
/// single padded segment. Segment ids are the source id when there is exactly
/// one segment and `"{id}#{k}"` otherwise.
pub fn segment(clip: &AudioClip, cfg: &SpectralConfig) -> Vec<AudioClip> {
    let sr = f64::from(clip.sample_rate);
    let window = ((cfg.clip_seconds * sr).round() as usize).max(1);
    let hop = ((cfg.clip_hop_seconds * sr).round() as usize).max(1);
    let total = clip.samples.len();

    let mut spans: Vec<(usize, usize)> = Vec::new();
    if total <= window {
        spans.push((0, total));
    } else {
        let mut start = 0;
        while start + window <= total {
            spans.push((start, window));
            start += hop;
        }
        if start < total && 2 * (total - start) >= window {
            spans.push((start, total - start));
        }
    }

    let single = spans.len() == 1;
    spans
        .into_iter()
        .enumerate()
        .map(|(k, (start, len))| {
            let mut samples = vec![0.0; window];
            samples[..len].copy_from_slice(&clip.samples[start..start + len]);
            let id = if single {
                clip.source_id.clone()
            } else {
                format!("{}#{k}", clip.source_id)
            };
            AudioClip {
                samples,
                sample_rate: clip.sample_rate,
                source_id: id,
            }
        })
        .collect()
}

/// Strips the `#k` segment suffix added by [`segment`].
pub fn base_id(segment_id: &str) -> &str {
    match segment_id.rsplit_once('#') {
        Some((base, k)) if !k.is_empty() && k.bytes().all(|b| b.is_ascii_digit()) => base,
        _ => segment_id,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clip_of(seconds: f64, sr: u32) -> AudioClip {
        let n = (seconds * f64::from(sr)) as usize;
        AudioClip::new(vec![0.25; n], sr, "c").unwrap()
    }

    fn cfg(window: f64, hop: f64) -> SpectralConfig {
        SpectralConfig {
            clip_seconds: window,
            clip_hop_seconds: hop,
            ..Default::default()
        }
    }

    #[test]
    fn segment_counts() {
        assert_eq!(segment(&clip_of(10.0, 100), &cfg(3.0, 3.0)).len(), 3);
        let five = segment(&clip_of(5.0, 100), &cfg(3.0, 3.0));
        assert_eq!(five.len(), 2);
        assert_eq!(five[1].samples().len(), 300);
        assert_eq!(five[1].samples()[199], 0.25);
        assert_eq!(five[1].samples()[200], 0.0);
        let two = segment(&clip_of(2.0, 100), &cfg(3.0, 3.0));
        assert_eq!(two.len(), 1);
        assert_eq!(two[0].source_id(), "c");
        assert_eq!(two[0].samples().len(), 300);
    }

    #[test]
    fn segment_ids_carry_index() {
        let segs = segment(&clip_of(10.0, 100), &cfg(3.0, 3.0));
        assert_eq!(segs[2].source_id(), "c#2");
        assert_eq!(base_id(segs[2].source_id()), "c");
        assert_eq!(base_id("plain"), "plain");
        assert_eq!(base_id("odd#x"), "odd#x");
    }

    #[test]
    fn clip_rejects_out_of_range() {
        assert!(AudioClip::new(vec![], 100, "e").is_err());
        assert!(AudioClip::new(vec![1.5], 100, "e").is_err());
        assert!(AudioClip::new(vec![f64::NAN], 100, "e").is_err());
    }

    fn write_raw(path: &Path, channels: u16, data: &[i16]) {
        let spec = WavSpec {
            channels,
            sample_rate: 8000,
            bits_per_sample: 16,
            sample_format: SampleFormat::Int,
        };
        let mut w = WavWriter::create(path, spec).unwrap();
        for &s in data {
            w.write_sample(s).unwrap();
        }
        w.finalize().unwrap();
    }

    #[test]
    fn pcm16_mapping_and_stereo_average() {
        let dir = tempfile::tempdir().unwrap();
        let mono = dir.path().join("m.wav");
        write_raw(&mono, 1, &[32767, -32768, 0]);
        let clip = load_wav(&mono, "m").unwrap();
        assert_eq!(clip.samples(), &[0.999_969_482_421_875, -1.0, 0.0]);
        assert_eq!(clip.sample_rate(), 8000);

        let stereo = dir.path().join("s.wav");
        write_raw(&stereo, 2, &[16384, -16384, 8192, 8192]);
        let clip = load_wav(&stereo, "s").unwrap();
        assert_eq!(clip.samples(), &[0.0, 0.25]);
    }

    #[test]
    fn float32_is_accepted() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.wav");
        let spec = WavSpec {
            channels: 1,
            sample_rate: 8000,
            bits_per_sample: 32,
            sample_format: SampleFormat::Float,
        };
        let mut w = WavWriter::create(&path, spec).unwrap();
        w.write_sample(0.5f32).unwrap();
        w.write_sample(-0.25f32).unwrap();
        w.finalize().unwrap();
        assert_eq!(load_wav(&path, "f").unwrap().samples(), &[0.5, -0.25]);
    }

    #[test]
    fn ingestion_errors() {
        let dir = tempfile::tempdir().unwrap();
        let junk = dir.path().join("junk.wav");
        std::fs::write(&junk, b"RIFF0000WAVEnope").unwrap();
        assert!(matches!(load_wav(&junk, "j"), Err(Error::Ingestion { .. })));

        let empty = dir.path().join("empty.wav");
        write_raw(&empty, 1, &[]);
        let err = load_wav(&empty, "e").unwrap_err();
        assert!(matches!(err, Error::Ingestion { .. }), "{err}");

        let eight = dir.path().join("8bit.wav");
        let spec = WavSpec {
            channels: 1,
            sample_rate: 8000,
            bits_per_sample: 8,
            sample_format: SampleFormat::Int,
        };
        let mut w = WavWriter::create(&eight, spec).unwrap();
        w.write_sample(3i8).unwrap();
        w.finalize().unwrap();
        let err = load_wav(&eight, "8").unwrap_err().to_string();
        assert!(err.contains("unsupported codec"), "{err}");
    }

    #[test]
    fn write_then_read_round_trips_within_quantisation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rt.wav");
        let samples: Vec<f64> = (0..100).map(|i| (i as f64 * 0.1).sin() * 0.9).collect();
        write_wav16(&path, &samples, 22_050).unwrap();
        let back = load_wav(&path, "rt").unwrap();
        for (a, b) in samples.iter().zip(back.samples()) {
            assert!((a - b).abs() < 1e-4);
        }
    }
}
