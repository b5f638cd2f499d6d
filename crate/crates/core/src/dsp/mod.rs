//! Audio ingestion and the spectral branch input: STFT, log-mel and MFCC
//! channels resized onto one grid and stacked.

mod archive;
mod audio;
mod config;
mod fft;
mod grid;
mod spectral;
mod stack;

pub use archive::{read_stack_archive, write_stack_archive, StackRecord, STACK_MAGIC, STACK_VERSION};
pub use audio::{base_id, load_wav, segment, write_wav16, AudioClip};
pub use config::SpectralConfig;
pub use fft::{fft_real, FftPlan};
pub use grid::{resize_bilinear, Grid};
pub use spectral::{
    dct2_matrix, hann_periodic, hz_to_mel, mel_filterbank, mel_spectrogram, mel_to_hz, mfcc, stft_magnitude,
    Extractor, FilterBank, SpectralChannels,
};
pub use stack::{build_spectral_stack, ChannelStats, SpectralStack, CHANNEL_NAMES};

pub(crate) use archive::{expect_eof, read_f32s, read_str, read_u16, read_u32, write_str};
