//! Deterministic signal primitives: waveforms, STFT, mixing, convolution and
//! clipping.

mod ops;
mod stft;
mod waveform;

pub(crate) use ops::fft_pair;
pub use ops::{
    clip, clip_samples, clip_threshold_for_snr, convolve_rir, convolve_truncated, db_ratio, measured_snr_db,
    mix_at_snr, snr_gain, ClipThreshold, CLIP_SEARCH_MAX_ITERS, CLIP_SEARCH_TOL_DB, DB_CAP,
};
pub use rustfft::num_complex::Complex64;
pub use stft::{istft, stft, ComplexSpectrogram, StftConfig, StftPlan, WindowKind};
pub use waveform::{dot, energy, Waveform, DEFAULT_SAMPLE_RATE};
