use serde::{Deserialize, Serialize};

use super::{resize_bilinear, AudioClip, Extractor, SpectralConfig};
use crate::error::{Error, Result};

/// Channel order inside every [`SpectralStack`].
pub const CHANNEL_NAMES: [&str; 3] = ["mel", "stft", "mfcc"];

/// Three `height x width` channels (log-mel, log-STFT, MFCC), row-major,
/// channel-major.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralStack {
    height: usize,
    width: usize,
    data: Vec<f64>,
    source_id: String,
}

impl SpectralStack {
    pub fn new(height: usize, width: usize, data: Vec<f64>, source_id: impl Into<String>) -> Result<Self> {
        if data.len() != 3 * height * width {
            return Err(Error::Dimension(format!(
                "stack 3x{height}x{width} needs {} values, got {}",
                3 * height * width,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("spectral stack contains non-finite values".into()));
        }
        Ok(SpectralStack {
            height,
            width,
            data,
            source_id: source_id.into(),
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn source_id(&self) -> &str {
        &self.source_id
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let plane = self.height * self.width;
        &self.data[c * plane..(c + 1) * plane]
    }

    pub fn standardized(&self, stats: &ChannelStats) -> SpectralStack {
        let plane = self.height * self.width;
        let mut data = self.data.clone();
        for c in 0..3 {
            let (mean, std) = (stats.mean[c], stats.std[c]);
            for v in &mut data[c * plane..(c + 1) * plane] {
                *v = (*v - mean) / std;
            }
        }
        SpectralStack {
            data,
            ..self.clone()
        }
    }
}

/// Dataset-level per-channel moments used to standardise stacks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: [f64; 3],
    /// Population standard deviation; 1 for a constant channel.
    pub std: [f64; 3],
}

impl ChannelStats {
    pub fn identity() -> Self {
        ChannelStats {
            mean: [0.0; 3],
            std: [1.0; 3],
        }
    }

    /// Moments over every cell of every stack, per channel.
    pub fn from_stacks<'a>(stacks: impl IntoIterator<Item = &'a SpectralStack>) -> Result<Self> {
        let mut sum = [0.0f64; 3];
        let mut count = 0usize;
        let stacks: Vec<&SpectralStack> = stacks.into_iter().collect();
        for s in &stacks {
            for (c, acc) in sum.iter_mut().enumerate() {
                *acc += s.channel(c).iter().sum::<f64>();
            }
            count += s.height * s.width;
        }
        if count == 0 {
            return Err(Error::Data("cannot compute channel statistics from no stacks".into()));
        }
        let mean = sum.map(|s| s / count as f64);
        let mut sq = [0.0f64; 3];
        for s in &stacks {
            for (c, acc) in sq.iter_mut().enumerate() {
                *acc += s.channel(c).iter().map(|v| (v - mean[c]).powi(2)).sum::<f64>();
            }
        }
        let std = sq.map(|s| {
            let sd = (s / count as f64).sqrt();
            if sd > 0.0 {
                sd
            } else {
                1.0
            }
        });
        Ok(ChannelStats { mean, std })
    }
}

impl Extractor {
    /// Unstandardised `[mel, stft, mfcc]` stack resized to `height x width`.
    pub fn stack(&self, clip: &AudioClip) -> Result<SpectralStack> {
        let cfg = self.config();
        let ch = self.channels(clip)?;
        let mut data = Vec::with_capacity(3 * cfg.height * cfg.width);
        for grid in [&ch.mel, &ch.stft, &ch.mfcc] {
            data.extend(resize_bilinear(grid, cfg.height, cfg.width)?.into_data());
        }
        SpectralStack::new(cfg.height, cfg.width, data, clip.source_id())
    }
}

/// Extracts the three channels, resizes them and, when `stats` is given,
/// standardises each channel.
pub fn build_spectral_stack(clip: &AudioClip, cfg: &SpectralConfig, stats: Option<&ChannelStats>) -> Result<SpectralStack> {
    let raw = Extractor::new(cfg)?.stack(clip)?;
    Ok(match stats {
        Some(s) => raw.standardized(s),
        None => raw,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(freq: f64, seconds: f64, cfg: &SpectralConfig) -> AudioClip {
        let sr = f64::from(cfg.sample_rate);
        let n = (seconds * sr) as usize;
        let s = (0..n).map(|i| 0.5 * (2.0 * std::f64::consts::PI * freq * i as f64 / sr).sin()).collect();
        AudioClip::new(s, cfg.sample_rate, format!("tone{freq}")).unwrap()
    }

    #[test]
    fn extents_do_not_depend_on_clip_length() {
        let cfg = SpectralConfig::default();
        for secs in [0.05, 1.0, 3.0] {
            let s = build_spectral_stack(&tone(1000.0, secs, &cfg), &cfg, None).unwrap();
            assert_eq!((s.height(), s.width(), s.data().len()), (64, 64, 3 * 64 * 64));
        }
    }

    #[test]
    fn identical_clips_give_identical_stacks() {
        let cfg = SpectralConfig::default();
        let a = build_spectral_stack(&tone(2000.0, 0.5, &cfg), &cfg, None).unwrap();
        let b = build_spectral_stack(&tone(2000.0, 0.5, &cfg), &cfg, None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn standardisation_zeroes_moments() {
        let cfg = SpectralConfig::default();
        let ex = Extractor::new(&cfg).unwrap();
        let stacks: Vec<_> = [500.0, 1500.0, 4000.0]
            .iter()
            .map(|&f| ex.stack(&tone(f, 0.3, &cfg)).unwrap())
            .collect();
        let stats = ChannelStats::from_stacks(&stacks).unwrap();
        let normed: Vec<_> = stacks.iter().map(|s| s.standardized(&stats)).collect();
        let again = ChannelStats::from_stacks(&normed).unwrap();
        for c in 0..3 {
            assert!(again.mean[c].abs() < 1e-6);
            assert!((again.std[c].powi(2) - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn constant_channel_keeps_unit_std() {
        let s = SpectralStack::new(1, 2, vec![1., 1., 2., 4., 3., 3.], "x").unwrap();
        let stats = ChannelStats::from_stacks([&s]).unwrap();
        assert_eq!(stats.std[0], 1.0);
        assert_eq!(stats.std[1], 1.0);
        assert_eq!(stats.mean[1], 3.0);
    }
}
