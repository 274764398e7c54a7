use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sample rate used throughout the desk-scale experiments.
pub const DEFAULT_SAMPLE_RATE: u32 = 16_000;

/// A finite, non-empty, mono sampled signal.
///
/// Samples are nominally in `[-1, 1]` but mixtures may exceed that range;
/// clamping happens only when exporting to 16-bit PCM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawWaveform", into = "RawWaveform")]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate_hz: u32,
}

#[derive(Serialize, Deserialize)]
struct RawWaveform {
    samples: Vec<f64>,
    sample_rate_hz: u32,
}

impl TryFrom<RawWaveform> for Waveform {
    type Error = Error;
    fn try_from(raw: RawWaveform) -> Result<Self> {
        Waveform::new(raw.samples, raw.sample_rate_hz)
    }
}

impl From<Waveform> for RawWaveform {
    fn from(w: Waveform) -> Self {
        RawWaveform { samples: w.samples, sample_rate_hz: w.sample_rate_hz }
    }
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate_hz: u32) -> Result<Self> {
        if sample_rate_hz == 0 {
            return Err(Error::Parameter("sample rate must be positive".into()));
        }
        if samples.is_empty() {
            return Err(Error::Length("waveform must contain at least one sample".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::NonFinite(format!("sample {i} is {}", samples[i])));
        }
        Ok(Self { samples, sample_rate_hz })
    }

    pub fn zeros(len: usize, sample_rate_hz: u32) -> Result<Self> {
        Self::new(vec![0.0; len], sample_rate_hz)
    }

    /// Builds a waveform with the same sample rate as `self`.
    pub fn with_samples(&self, samples: Vec<f64>) -> Result<Self> {
        Self::new(samples, self.sample_rate_hz)
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }

    pub fn energy(&self) -> f64 {
        energy(&self.samples)
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0f64, |m, s| m.max(s.abs()))
    }

    pub fn scaled(&self, gain: f64) -> Result<Self> {
        self.with_samples(self.samples.iter().map(|s| s * gain).collect())
    }

    pub(crate) fn check_compatible(&self, other: &Waveform, what: &str) -> Result<()> {
        if self.sample_rate_hz != other.sample_rate_hz {
            return Err(Error::Shape(format!(
                "{what}: sample rates {} and {} differ",
                self.sample_rate_hz, other.sample_rate_hz
            )));
        }
        crate::error::ensure_same_len(self.len(), other.len(), what)
    }
}

impl Deref for Waveform {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.samples
    }
}

impl AsRef<[f64]> for Waveform {
    fn as_ref(&self) -> &[f64] {
        &self.samples
    }
}

pub fn energy(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
