//! Short-time Fourier analysis and least-squares overlap-add synthesis.
//!
//! Frames start at `f * hop - (window - hop)`, so every sample of the signal
//! is covered by `window / hop` frames and synthesis normalises by the summed
//! squared window per sample. With that normalisation `istft(stft(x))`
//! reconstructs `x` over its whole length, not just the interior.
//!
//! The adjoint maps (`analysis_adjoint`, `synthesis_adjoint`) are what the
//! training code uses to push gradients through spectral masks and
//! spectrogram-domain losses.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::Waveform;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowKind {
    Hamming,
    Hann,
    Rectangular,
}

impl WindowKind {
    /// Periodic window of length `n`.
    pub fn coefficients(self, n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| {
                let phase = 2.0 * PI * i as f64 / n as f64;
                match self {
                    WindowKind::Hamming => 0.54 - 0.46 * phase.cos(),
                    WindowKind::Hann => 0.5 - 0.5 * phase.cos(),
                    WindowKind::Rectangular => 1.0,
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StftConfig {
    pub window_size: usize,
    pub hop_size: usize,
    pub fft_size: usize,
    pub window: WindowKind,
}

impl Default for StftConfig {
    /// 512-sample Hamming window, hop 128, 512-point DFT.
    fn default() -> Self {
        Self { window_size: 512, hop_size: 128, fft_size: 512, window: WindowKind::Hamming }
    }
}

impl StftConfig {
    pub fn new(window_size: usize, hop_size: usize, fft_size: usize, window: WindowKind) -> Result<Self> {
        let cfg = Self { window_size, hop_size, fft_size, window };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Hann-windowed config with `hop = fft / 4`, used for multi-resolution losses.
    pub fn with_fft(fft_size: usize) -> Self {
        Self { window_size: fft_size, hop_size: fft_size / 4, fft_size, window: WindowKind::Hann }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hop_size == 0 || self.hop_size > self.window_size || self.window_size > self.fft_size {
            return Err(Error::Parameter(format!(
                "need 0 < hop ({}) <= window ({}) <= fft ({})",
                self.hop_size, self.window_size, self.fft_size
            )));
        }
        if !self.fft_size.is_multiple_of(2) {
            return Err(Error::Parameter(format!("fft size {} must be even", self.fft_size)));
        }
        Ok(())
    }

    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    pub fn frame_count(&self, len: usize) -> usize {
        (len + self.window_size - 1) / self.hop_size
    }

    pub fn frame_start(&self, frame: usize) -> isize {
        (frame * self.hop_size) as isize - (self.window_size - self.hop_size) as isize
    }
}

/// Frames × bins complex matrix, row-major by frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram {
    values: Vec<Complex64>,
    frames: usize,
    config: StftConfig,
    sample_rate_hz: u32,
    signal_len: usize,
}

impl ComplexSpectrogram {
    pub fn new(
        values: Vec<Complex64>,
        frames: usize,
        config: StftConfig,
        sample_rate_hz: u32,
        signal_len: usize,
    ) -> Result<Self> {
        config.validate()?;
        if values.len() != frames * config.bins() {
            return Err(Error::Shape(format!(
                "{} values do not form {frames} frames of {} bins",
                values.len(),
                config.bins()
            )));
        }
        if frames != config.frame_count(signal_len) {
            return Err(Error::Shape(format!("{frames} frames inconsistent with signal length {signal_len}")));
        }
        if values.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::NonFinite("spectrogram contains non-finite values".into()));
        }
        Ok(Self { values, frames, config, sample_rate_hz, signal_len })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }
    pub fn bins(&self) -> usize {
        self.config.bins()
    }
    pub fn config(&self) -> &StftConfig {
        &self.config
    }
    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }
    pub fn signal_len(&self) -> usize {
        self.signal_len
    }
    pub fn values(&self) -> &[Complex64] {
        &self.values
    }
    pub fn frame(&self, f: usize) -> &[Complex64] {
        let b = self.bins();
        &self.values[f * b..(f + 1) * b]
    }
    pub fn magnitudes(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.norm()).collect()
    }
    /// Same shape, new values.
    pub fn with_values(&self, values: Vec<Complex64>) -> Result<Self> {
        Self::new(values, self.frames, self.config, self.sample_rate_hz, self.signal_len)
    }
}

pub fn stft(w: &Waveform, cfg: &StftConfig) -> Result<ComplexSpectrogram> {
    cfg.validate()?;
    if w.len() < cfg.window_size {
        return Err(Error::Length(format!(
            "signal of {} samples is shorter than one {}-sample window",
            w.len(),
            cfg.window_size
        )));
    }
    let plan = StftPlan::cached(cfg);
    let values = plan.analysis(w);
    ComplexSpectrogram::new(values, cfg.frame_count(w.len()), *cfg, w.sample_rate_hz(), w.len())
}

pub fn istft(spec: &ComplexSpectrogram) -> Result<Waveform> {
    let plan = StftPlan::cached(spec.config());
    let samples = plan.synthesis(spec.values(), spec.signal_len());
    Waveform::new(samples, spec.sample_rate_hz())
}

/// Precomputed window, FFTs and synthesis normalisation for one config.
pub struct StftPlan {
    cfg: StftConfig,
    window: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for StftPlan {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StftPlan").field("cfg", &self.cfg).finish()
    }
}

impl StftPlan {
    pub fn new(cfg: &StftConfig) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            cfg: *cfg,
            window: cfg.window.coefficients(cfg.window_size),
            forward: planner.plan_fft_forward(cfg.fft_size),
            inverse: planner.plan_fft_inverse(cfg.fft_size),
        }
    }

    /// Shared plan for `cfg`; plans are immutable so one per config suffices.
    pub fn cached(cfg: &StftConfig) -> Arc<StftPlan> {
        static PLANS: OnceLock<Mutex<HashMap<StftConfig, Arc<StftPlan>>>> = OnceLock::new();
        let mut map = PLANS.get_or_init(Default::default).lock().expect("plan cache poisoned");
        map.entry(*cfg).or_insert_with(|| Arc::new(StftPlan::new(cfg))).clone()
    }

    pub fn config(&self) -> &StftConfig {
        &self.cfg
    }

    fn frame_samples(&self, frame: usize, len: usize) -> impl Iterator<Item = (usize, usize)> {
        let start = self.cfg.frame_start(frame);
        (0..self.cfg.window_size).filter_map(move |n| {
            let m = start + n as isize;
            (m >= 0 && (m as usize) < len).then_some((n, m as usize))
        })
    }

    /// Summed squared window at each sample.
    pub fn synthesis_norm(&self, len: usize) -> Vec<f64> {
        let mut norm = vec![0.0; len];
        for f in 0..self.cfg.frame_count(len) {
            for (n, m) in self.frame_samples(f, len) {
                norm[m] += self.window[n] * self.window[n];
            }
        }
        norm
    }

    pub fn analysis(&self, x: &[f64]) -> Vec<Complex64> {
        let (n_fft, bins) = (self.cfg.fft_size, self.cfg.bins());
        let frames = self.cfg.frame_count(x.len());
        let mut out = Vec::with_capacity(frames * bins);
        let mut buf = vec![Complex64::new(0.0, 0.0); n_fft];
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.forward.get_inplace_scratch_len()];
        for f in 0..frames {
            buf.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
            for (n, m) in self.frame_samples(f, x.len()) {
                buf[n].re = self.window[n] * x[m];
            }
            self.forward.process_with_scratch(&mut buf, &mut scratch);
            out.extend_from_slice(&buf[..bins]);
        }
        out
    }

    /// Gradient w.r.t. the signal given the gradient w.r.t. each spectral
    /// value (`dL/dRe + i dL/dIm`).
    pub fn analysis_adjoint(&self, grad: &[Complex64], len: usize) -> Vec<f64> {
        let (n_fft, bins) = (self.cfg.fft_size, self.cfg.bins());
        let mut out = vec![0.0; len];
        let mut buf = vec![Complex64::new(0.0, 0.0); n_fft];
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.inverse.get_inplace_scratch_len()];
        for (f, g) in grad.chunks_exact(bins).enumerate() {
            buf[..bins].copy_from_slice(g);
            buf[bins..].iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
            self.inverse.process_with_scratch(&mut buf, &mut scratch);
            for (n, m) in self.frame_samples(f, len) {
                out[m] += self.window[n] * buf[n].re;
            }
        }
        out
    }

    pub fn synthesis(&self, spec: &[Complex64], len: usize) -> Vec<f64> {
        let (n_fft, bins) = (self.cfg.fft_size, self.cfg.bins());
        let scale = 1.0 / n_fft as f64;
        let norm = self.synthesis_norm(len);
        let mut out = vec![0.0; len];
        let mut buf = vec![Complex64::new(0.0, 0.0); n_fft];
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.inverse.get_inplace_scratch_len()];
        for (f, frame) in spec.chunks_exact(bins).enumerate() {
            hermitian_fill(frame, &mut buf);
            self.inverse.process_with_scratch(&mut buf, &mut scratch);
            for (n, m) in self.frame_samples(f, len) {
                out[m] += self.window[n] * buf[n].re * scale;
            }
        }
        for (o, d) in out.iter_mut().zip(&norm) {
            *o /= d;
        }
        out
    }

    /// Gradient w.r.t. the spectral values given the gradient w.r.t. the
    /// synthesised signal. Imaginary parts of the DC and Nyquist bins do not
    /// affect synthesis and receive zero gradient.
    pub fn synthesis_adjoint(&self, grad: &[f64]) -> Vec<Complex64> {
        let (n_fft, bins) = (self.cfg.fft_size, self.cfg.bins());
        let len = grad.len();
        let norm = self.synthesis_norm(len);
        let frames = self.cfg.frame_count(len);
        let mut out = Vec::with_capacity(frames * bins);
        let mut buf = vec![Complex64::new(0.0, 0.0); n_fft];
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.forward.get_inplace_scratch_len()];
        let scale = 1.0 / n_fft as f64;
        for f in 0..frames {
            buf.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
            for (n, m) in self.frame_samples(f, len) {
                buf[n].re = self.window[n] * grad[m] / norm[m];
            }
            self.forward.process_with_scratch(&mut buf, &mut scratch);
            for (k, v) in buf[..bins].iter().enumerate() {
                if k == 0 || k == bins - 1 {
                    out.push(Complex64::new(v.re * scale, 0.0));
                } else {
                    out.push(v * (2.0 * scale));
                }
            }
        }
        out
    }
}

fn hermitian_fill(half: &[Complex64], full: &mut [Complex64]) {
    let n = full.len();
    let bins = half.len();
    full[0] = Complex64::new(half[0].re, 0.0);
    full[n / 2] = Complex64::new(half[bins - 1].re, 0.0);
    for k in 1..bins - 1 {
        full[k] = half[k];
        full[n - k] = half[k].conj();
    }
}
