use std::f64::consts::PI;

use num_complex::Complex64;

use super::{AudioClip, FftPlan, Grid, SpectralConfig};
use crate::error::{Error, Result};
use crate::numeric::LOG_FLOOR;

/// HTK mel scale, `2595 log10(1 + f / 700)`.
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular mel filters over the one-sided FFT bins.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterBank {
    /// `n_mels x (n_fft / 2 + 1)`, each row peak-normalised to 1.
    pub weights: Grid,
    pub center_frequencies: Vec<f64>,
}

impl FilterBank {
    /// Applies the filters to one spectral column.
    pub fn apply(&self, column: &[f64]) -> Vec<f64> {
        (0..self.weights.rows())
            .map(|m| self.weights.row(m).iter().zip(column).map(|(w, p)| w * p).sum())
            .collect()
    }
}

/// Builds `n_mels` triangles with mel-uniform peaks between `f_min` and `f_max`.
///
/// Fails when a filter falls between FFT bins and would have no support.
pub fn mel_filterbank(cfg: &SpectralConfig, sample_rate: u32) -> Result<FilterBank> {
    let probe = SpectralConfig {
        sample_rate,
        ..cfg.clone()
    };
    probe.validate()?;
    let n_bins = cfg.n_bins();
    let (lo, hi) = (hz_to_mel(cfg.f_min), hz_to_mel(cfg.f_max));
    let edges: Vec<f64> = (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.n_mels + 1) as f64))
        .collect();
    let bin_hz = f64::from(sample_rate) / cfg.n_fft as f64;

    let mut weights = Grid::filled(cfg.n_mels, n_bins, 0.0);
    for m in 0..cfg.n_mels {
        let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
        let mut peak = 0.0f64;
        for b in 0..n_bins {
            let f = b as f64 * bin_hz;
            let w = if f > left && f < center {
                (f - left) / (center - left)
            } else if f >= center && f < right {
                (right - f) / (right - center)
            } else {
                0.0
            };
            weights.set(m, b, w);
            peak = peak.max(w);
        }
        if peak <= 0.0 {
            return Err(Error::config(
                "spectral.n_mels",
                format!(
                    "filter {m} ({left:.1}-{right:.1} Hz) covers no FFT bin; \
                     reduce n_mels or increase n_fft"
                ),
            ));
        }
        for b in 0..n_bins {
            let w = weights.get(m, b);
            weights.set(m, b, w / peak);
        }
    }
    Ok(FilterBank {
        weights,
        center_frequencies: edges[1..=cfg.n_mels].to_vec(),
    })
}

/// Periodic Hann window, `0.5 - 0.5 cos(2 pi n / N)`.
pub fn hann_periodic(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

/// Orthonormal DCT-II basis, `n_out x n_in`.
pub fn dct2_matrix(n_out: usize, n_in: usize) -> Grid {
    let mut m = Grid::filled(n_out, n_in, 0.0);
    for k in 0..n_out {
        let scale = if k == 0 {
            (1.0 / n_in as f64).sqrt()
        } else {
            (2.0 / n_in as f64).sqrt()
        };
        for n in 0..n_in {
            m.set(k, n, scale * (PI * k as f64 * (2 * n + 1) as f64 / (2 * n_in) as f64).cos());
        }
    }
    m
}

fn floored_ln(v: f64) -> f64 {
    v.max(LOG_FLOOR).ln()
}

/// The three spectral views of one clip, before resizing.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralChannels {
    /// `n_mels x frames` log mel power.
    pub mel: Grid,
    /// `(n_fft/2 + 1) x frames` log magnitude.
    pub stft: Grid,
    /// `n_mfcc x frames`.
    pub mfcc: Grid,
}

/// Reusable front end: FFT plan, window, filterbank and DCT basis for one config.
#[derive(Clone, Debug)]
pub struct Extractor {
    cfg: SpectralConfig,
    plan: FftPlan,
    window: Vec<f64>,
    filterbank: FilterBank,
    dct: Grid,
}

impl Extractor {
    pub fn new(cfg: &SpectralConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Extractor {
            cfg: cfg.clone(),
            plan: FftPlan::new(cfg.n_fft)?,
            window: hann_periodic(cfg.n_fft),
            filterbank: mel_filterbank(cfg, cfg.sample_rate)?,
            dct: dct2_matrix(cfg.n_mfcc, cfg.n_mels),
        })
    }

    pub fn config(&self) -> &SpectralConfig {
        &self.cfg
    }

    pub fn filterbank(&self) -> &FilterBank {
        &self.filterbank
    }

    pub fn window(&self) -> &[f64] {
        &self.window
    }

    fn check_clip(&self, clip: &AudioClip) -> Result<()> {
        if clip.sample_rate() != self.cfg.sample_rate {
            return Err(Error::Data(format!(
                "clip `{}` is sampled at {} Hz but the front end expects {} Hz (resampling is not supported)",
                clip.source_id(),
                clip.sample_rate(),
                self.cfg.sample_rate
            )));
        }
        if clip.samples().len() < self.cfg.n_fft {
            return Err(Error::Usage(format!(
                "clip `{}` has {} samples, fewer than n_fft = {}; segment or zero-pad it first",
                clip.source_id(),
                clip.samples().len(),
                self.cfg.n_fft
            )));
        }
        Ok(())
    }

    /// Complex one-sided spectra of every Hann-windowed frame.
    pub fn spectra(&self, clip: &AudioClip) -> Result<Vec<Vec<Complex64>>> {
        self.check_clip(clip)?;
        let (n_fft, hop) = (self.cfg.n_fft, self.cfg.hop_length);
        let frames = 1 + (clip.samples().len() - n_fft) / hop;
        let mut scratch = Vec::with_capacity(n_fft);
        let mut windowed = vec![0.0; n_fft];
        (0..frames)
            .map(|t| {
                let frame = &clip.samples()[t * hop..t * hop + n_fft];
                for ((dst, &x), &w) in windowed.iter_mut().zip(frame).zip(&self.window) {
                    *dst = x * w;
                }
                self.plan.real_forward(&windowed, &mut scratch)
            })
            .collect()
    }

    /// `|STFT|` as a `(n_fft/2 + 1) x frames` grid.
    pub fn stft_magnitude(&self, clip: &AudioClip) -> Result<Grid> {
        let spectra = self.spectra(clip)?;
        Ok(columns_to_grid(self.cfg.n_bins(), spectra.iter().map(|s| s.iter().map(|c| c.norm()).collect())))
    }

    pub fn channels(&self, clip: &AudioClip) -> Result<SpectralChannels> {
        let magnitude = self.stft_magnitude(clip)?;
        let stft = map_grid(&magnitude, floored_ln);
        let mel = self.log_mel_from_magnitude(&magnitude);
        let mfcc = self.mfcc_from_log_mel(&mel);
        Ok(SpectralChannels { mel, stft, mfcc })
    }

    pub fn mel_spectrogram(&self, clip: &AudioClip) -> Result<Grid> {
        Ok(self.log_mel_from_magnitude(&self.stft_magnitude(clip)?))
    }

    pub fn mfcc(&self, clip: &AudioClip) -> Result<Grid> {
        Ok(self.mfcc_from_log_mel(&self.mel_spectrogram(clip)?))
    }

    fn log_mel_from_magnitude(&self, magnitude: &Grid) -> Grid {
        let cols = (0..magnitude.cols()).map(|t| {
            let power: Vec<f64> = magnitude.column(t).iter().map(|m| m * m).collect();
            self.filterbank.apply(&power).into_iter().map(floored_ln).collect()
        });
        columns_to_grid(self.cfg.n_mels, cols)
    }

    /// Orthonormal DCT-II of every column, keeping the first `n_mfcc` coefficients.
    pub fn mfcc_from_log_mel(&self, log_mel: &Grid) -> Grid {
        let cols = (0..log_mel.cols()).map(|t| {
            let column = log_mel.column(t);
            (0..self.dct.rows())
                .map(|k| self.dct.row(k).iter().zip(&column).map(|(a, b)| a * b).sum())
                .collect()
        });
        columns_to_grid(self.cfg.n_mfcc, cols)
    }
}

fn columns_to_grid(rows: usize, cols: impl Iterator<Item = Vec<f64>>) -> Grid {
    let cols: Vec<Vec<f64>> = cols.collect();
    let mut g = Grid::filled(rows, cols.len(), 0.0);
    for (t, col) in cols.iter().enumerate() {
        for (r, &v) in col.iter().enumerate() {
            g.set(r, t, v);
        }
    }
    g
}

fn map_grid(g: &Grid, f: impl Fn(f64) -> f64) -> Grid {
    Grid::new(g.rows(), g.cols(), g.data().iter().map(|&v| f(v)).collect()).expect("same extents")
}

pub fn stft_magnitude(clip: &AudioClip, cfg: &SpectralConfig) -> Result<Grid> {
    Extractor::new(cfg)?.stft_magnitude(clip)
}

pub fn mel_spectrogram(clip: &AudioClip, cfg: &SpectralConfig) -> Result<Grid> {
    Extractor::new(cfg)?.mel_spectrogram(clip)
}

pub fn mfcc(clip: &AudioClip, cfg: &SpectralConfig) -> Result<Grid> {
    Extractor::new(cfg)?.mfcc(clip)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mel_scale_reference_points() {
        assert_eq!(hz_to_mel(0.0), 0.0);
        // 2595 * log10(2)
        assert!((hz_to_mel(700.0) - 781.172_838_748_031_2).abs() < 1e-9);
        assert!((mel_to_hz(hz_to_mel(4321.0)) - 4321.0).abs() < 1e-9);
    }

    #[test]
    fn filterbank_rows_peak_at_one_with_contiguous_support() {
        let cfg = SpectralConfig::default();
        let fb = mel_filterbank(&cfg, cfg.sample_rate).unwrap();
        assert_eq!(fb.weights.rows(), 64);
        assert_eq!(fb.weights.cols(), 513);
        for m in 0..fb.weights.rows() {
            let row = fb.weights.row(m);
            let max = row.iter().copied().fold(0.0, f64::max);
            assert!((max - 1.0).abs() < 1e-15, "row {m} max {max}");
            let nz: Vec<usize> = (0..row.len()).filter(|&b| row[b] > 0.0).collect();
            assert!(nz.windows(2).all(|w| w[1] == w[0] + 1), "row {m} support not contiguous");
            assert!(row.iter().all(|&w| w >= 0.0));
        }
    }

    #[test]
    fn filterbank_covers_passband() {
        let cfg = SpectralConfig::default();
        let fb = mel_filterbank(&cfg, cfg.sample_rate).unwrap();
        let bin_hz = f64::from(cfg.sample_rate) / cfg.n_fft as f64;
        for b in 0..cfg.n_bins() {
            let f = b as f64 * bin_hz;
            if f > cfg.f_min && f < cfg.f_max {
                assert!((0..64).any(|m| fb.weights.get(m, b) > 0.0), "bin {b} ({f} Hz) uncovered");
            }
        }
    }

    #[test]
    fn too_many_mels_is_a_config_error() {
        let cfg = SpectralConfig {
            n_fft: 64,
            hop_length: 32,
            n_mels: 60,
            n_mfcc: 10,
            ..Default::default()
        };
        let err = mel_filterbank(&cfg, cfg.sample_rate).unwrap_err();
        assert!(matches!(err, Error::Config { ref key, .. } if key == "spectral.n_mels"), "{err}");
    }

    #[test]
    fn dct_of_constant_column() {
        let cfg = SpectralConfig::default();
        let ex = Extractor::new(&cfg).unwrap();
        let v = -4.5;
        let col = Grid::filled(cfg.n_mels, 1, v);
        let c = ex.mfcc_from_log_mel(&col);
        assert!((c.get(0, 0) - v * (cfg.n_mels as f64).sqrt()).abs() < 1e-12);
        for k in 1..cfg.n_mfcc {
            assert!(c.get(k, 0).abs() < 1e-12);
        }
    }

    #[test]
    fn dct_basis_is_orthonormal() {
        let n = 64;
        let d = dct2_matrix(n, n);
        for i in 0..n {
            let column: f64 = (0..n).map(|k| d.get(k, i).powi(2)).sum();
            assert!((column.sqrt() - 1.0).abs() < 1e-12);
            for j in 0..n {
                let dot: f64 = (0..n).map(|k| d.get(i, k) * d.get(j, k)).sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((dot - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn silence_hits_the_floor() {
        let cfg = SpectralConfig::default();
        let ex = Extractor::new(&cfg).unwrap();
        let clip = AudioClip::new(vec![0.0; 4096], cfg.sample_rate, "s").unwrap();
        let ch = ex.channels(&clip).unwrap();
        let floor = LOG_FLOOR.ln();
        assert!(ex.stft_magnitude(&clip).unwrap().data().iter().all(|&m| m == 0.0));
        assert!(ch.stft.data().iter().all(|&v| v == floor));
        assert!(ch.mel.data().iter().all(|&v| v == floor));
        assert_eq!(ch.mel.cols(), 1 + (4096 - 1024) / 256);
    }

    #[test]
    fn short_clip_and_wrong_rate_are_rejected() {
        let cfg = SpectralConfig::default();
        let ex = Extractor::new(&cfg).unwrap();
        let short = AudioClip::new(vec![0.0; 1000], cfg.sample_rate, "s").unwrap();
        assert!(matches!(ex.stft_magnitude(&short), Err(Error::Usage(_))));
        let wrong = AudioClip::new(vec![0.0; 4096], 16_000, "w").unwrap();
        assert!(matches!(ex.stft_magnitude(&wrong), Err(Error::Data(_))));
    }
}
