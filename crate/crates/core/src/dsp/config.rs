use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Parameters of the spectral front end.
///
/// Defaults target bird vocalisations at 22.05 kHz: most energy sits above
/// 150 Hz, and a 64x64 grid keeps the convolutional encoder small.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectralConfig {
    /// Expected sample rate; files at any other rate are rejected.
    pub sample_rate: u32,
    pub n_fft: usize,
    pub hop_length: usize,
    pub n_mels: usize,
    pub n_mfcc: usize,
    pub f_min: f64,
    pub f_max: f64,
    pub height: usize,
    pub width: usize,
    pub clip_seconds: f64,
    pub clip_hop_seconds: f64,
}

impl Default for SpectralConfig {
    fn default() -> Self {
        SpectralConfig {
            sample_rate: 22_050,
            n_fft: 1024,
            hop_length: 256,
            n_mels: 64,
            n_mfcc: 20,
            f_min: 150.0,
            f_max: 11_025.0,
            height: 64,
            width: 64,
            clip_seconds: 3.0,
            clip_hop_seconds: 3.0,
        }
    }
}

impl SpectralConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, reason: String| Err(Error::config(format!("spectral.{key}"), reason));
        if self.sample_rate == 0 {
            return bad("sample_rate", "must be positive".into());
        }
        if !self.n_fft.is_power_of_two() || self.n_fft < 2 {
            return bad("n_fft", format!("{} is not a power of two", self.n_fft));
        }
        if self.hop_length == 0 || self.hop_length > self.n_fft {
            return bad("hop_length", format!("must lie in 1..={}", self.n_fft));
        }
        if self.n_mels == 0 {
            return bad("n_mels", "must be positive".into());
        }
        if self.n_mfcc == 0 || self.n_mfcc > self.n_mels {
            return bad("n_mfcc", format!("must lie in 1..={}", self.n_mels));
        }
        let nyquist = f64::from(self.sample_rate) / 2.0;
        if !(self.f_min >= 0.0 && self.f_min < self.f_max) {
            return bad("f_min", format!("need 0 <= f_min < f_max, got {} / {}", self.f_min, self.f_max));
        }
        if self.f_max > nyquist {
            return bad("f_max", format!("{} exceeds Nyquist {nyquist}", self.f_max));
        }
        if self.height == 0 {
            return bad("height", "must be positive".into());
        }
        if self.width == 0 {
            return bad("width", "must be positive".into());
        }
        if !(self.clip_seconds > 0.0) {
            return bad("clip_seconds", "must be positive".into());
        }
        if !(self.clip_hop_seconds > 0.0) {
            return bad("clip_hop_seconds", "must be positive".into());
        }
        Ok(())
    }

    pub fn n_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid() {
        SpectralConfig::default().validate().unwrap();
    }

    #[test]
    fn invalid_fields_are_named() {
        let cfg = SpectralConfig { n_fft: 1000, ..Default::default() };
        assert!(cfg.validate().unwrap_err().to_string().contains("spectral.n_fft"));
        let cfg = SpectralConfig { n_mfcc: 65, ..Default::default() };
        assert!(cfg.validate().unwrap_err().to_string().contains("spectral.n_mfcc"));
        let cfg = SpectralConfig { f_max: 12_000.0, ..Default::default() };
        assert!(cfg.validate().unwrap_err().to_string().contains("spectral.f_max"));
    }
}
