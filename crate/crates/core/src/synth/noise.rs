//! Synthetic noise families with disjoint partitions.

use std::f64::consts::PI;

use rand::Rng as _;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dsp::{fft_pair, Complex64, Waveform};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, substream, tag, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Partition {
    Obs,
    Add,
    Test,
}

impl Partition {
    pub const ALL: [Partition; 3] = [Partition::Obs, Partition::Add, Partition::Test];

    pub fn name(self) -> &'static str {
        match self {
            Partition::Obs => "obs",
            Partition::Add => "add",
            Partition::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "generator", rename_all = "snake_case")]
pub enum NoiseKind {
    /// Gaussian noise restricted to a band, with slow amplitude modulation.
    BandNoise { low_hz: f64, high_hz: f64, modulation_depth: f64 },
    /// A few drifting sinusoids inside the band.
    Tonal { low_hz: f64, high_hz: f64, tones: usize },
    /// Poisson-timed decaying bursts, band-limited.
    Impulsive { low_hz: f64, high_hz: f64, rate_hz: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseFamily {
    pub id: String,
    pub kind: NoiseKind,
    pub partition: Partition,
}

impl NoiseFamily {
    pub fn new(id: impl Into<String>, kind: NoiseKind, partition: Partition) -> Result<Self> {
        let f = NoiseFamily { id: id.into(), kind, partition };
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.passband();
        if !(lo >= 0.0 && hi > lo) {
            return Err(Error::Parameter(format!("family {}: bad passband [{lo}, {hi}]", self.id)));
        }
        match self.kind {
            NoiseKind::BandNoise { modulation_depth, .. } if !(0.0..1.0).contains(&modulation_depth) => {
                Err(Error::Parameter("modulation depth must lie in [0, 1)".into()))
            }
            NoiseKind::Tonal { tones: 0, .. } => Err(Error::Parameter("tonal family needs tones".into())),
            NoiseKind::Impulsive { rate_hz, .. } if !(rate_hz > 0.0) => {
                Err(Error::Parameter("impulse rate must be positive".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn passband(&self) -> (f64, f64) {
        match self.kind {
            NoiseKind::BandNoise { low_hz, high_hz, .. }
            | NoiseKind::Tonal { low_hz, high_hz, .. }
            | NoiseKind::Impulsive { low_hz, high_hz, .. } => (low_hz, high_hz),
        }
    }

    pub fn with_partition(&self, partition: Partition) -> Self {
        NoiseFamily { partition, ..self.clone() }
    }

    /// Seed of draw `index`; it depends on the family id and partition, so
    /// partitions never share a stream.
    pub fn stream_id(&self, index: u64) -> u64 {
        derive_seed(tag(&self.id), &[tag(self.partition.name()), index])
    }
}

/// The three stock families: speech-band noise, upper-band tones and
/// high-band impulses, with non-overlapping passbands.
pub fn standard_families(partition: Partition) -> [NoiseFamily; 3] {
    [
        NoiseFamily {
            id: "band".into(),
            kind: NoiseKind::BandNoise { low_hz: 250.0, high_hz: 2000.0, modulation_depth: 0.4 },
            partition,
        },
        NoiseFamily {
            id: "tonal".into(),
            kind: NoiseKind::Tonal { low_hz: 2000.0, high_hz: 3800.0, tones: 6 },
            partition,
        },
        NoiseFamily {
            id: "impulsive".into(),
            kind: NoiseKind::Impulsive { low_hz: 3800.0, high_hz: 7000.0, rate_hz: 6.0 },
            partition,
        },
    ]
}

/// Draw `index` of `family`, `len` samples, unit RMS.
pub fn generate_noise(family: &NoiseFamily, len: usize, sample_rate_hz: u32, index: u64) -> Result<Waveform> {
    family.validate()?;
    if len == 0 {
        return Err(Error::Length("noise length must be positive".into()));
    }
    let fs = sample_rate_hz as f64;
    let mut rng = substream(family.stream_id(index), &[]);
    let raw = match family.kind {
        NoiseKind::BandNoise { low_hz, high_hz, modulation_depth } => {
            let white: Vec<f64> = (0..len).map(|_| rng.sample(StandardNormal)).collect();
            let mut x = bandlimit(&white, fs, low_hz, high_hz);
            let rate = rng.random_range(0.5..2.0);
            let phase = rng.random_range(0.0..2.0 * PI);
            for (n, v) in x.iter_mut().enumerate() {
                *v *= 1.0 + modulation_depth * (2.0 * PI * rate * n as f64 / fs + phase).sin();
            }
            x
        }
        NoiseKind::Tonal { low_hz, high_hz, tones } => tonal(&mut rng, len, fs, low_hz, high_hz, tones),
        NoiseKind::Impulsive { low_hz, high_hz, rate_hz } => {
            let mut x = vec![0.0; len];
            let gap = Exp::new(rate_hz).map_err(|e| Error::Parameter(e.to_string()))?;
            let mut t = gap.sample(&mut rng) * 0.5;
            loop {
                let start = (t * fs) as usize;
                if start >= len {
                    break;
                }
                let tau = rng.random_range(0.003..0.012) * fs;
                let amp = rng.random_range(0.5..1.0);
                let stop = (start + (6.0 * tau) as usize).min(len);
                for (k, v) in x[start..stop].iter_mut().enumerate() {
                    let g: f64 = rng.sample(StandardNormal);
                    *v += amp * (-(k as f64) / tau).exp() * g;
                }
                t += gap.sample(&mut rng);
            }
            bandlimit(&x, fs, low_hz, high_hz)
        }
    };
    let rms = (raw.iter().map(|v| v * v).sum::<f64>() / len as f64).sqrt();
    if !(rms > 0.0) {
        // No event landed in a very short draw; a single centred burst.
        let (lo, hi) = family.passband();
        let mut x = vec![0.0; len];
        x[len / 2] = 1.0;
        let x = bandlimit(&x, fs, lo, hi);
        let rms = (x.iter().map(|v| v * v).sum::<f64>() / len as f64).sqrt().max(f64::MIN_POSITIVE);
        return Waveform::new(x.iter().map(|v| v / rms).collect(), sample_rate_hz);
    }
    Waveform::new(raw.iter().map(|v| v / rms).collect(), sample_rate_hz)
}

fn tonal(rng: &mut Rng, len: usize, fs: f64, lo: f64, hi: f64, tones: usize) -> Vec<f64> {
    let margin = 0.05 * (hi - lo);
    let mut x = vec![0.0; len];
    for _ in 0..tones {
        let f = rng.random_range(lo + margin..hi - margin);
        let amp = rng.random_range(0.3..1.0);
        let drift_rate = rng.random_range(0.2..1.0);
        let drift = rng.random_range(0.0..0.01) * f;
        let am_rate = rng.random_range(0.5..3.0);
        let mut ph = rng.random_range(0.0..2.0 * PI);
        for (n, v) in x.iter_mut().enumerate() {
            let t = n as f64 / fs;
            ph += 2.0 * PI * (f + drift * (2.0 * PI * drift_rate * t).sin()) / fs;
            *v += amp * (1.0 + 0.3 * (2.0 * PI * am_rate * t).sin()) * ph.sin();
        }
    }
    x
}

/// Zero-phase brick-wall band limiting with 20 Hz raised-cosine edges
/// inside the band.
pub fn bandlimit(x: &[f64], fs: f64, lo: f64, hi: f64) -> Vec<f64> {
    let n = x.len();
    let (fwd, inv) = fft_pair(n);
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fwd.process(&mut buf);
    let edge = 20.0;
    for (k, b) in buf.iter_mut().enumerate() {
        let f = k.min(n - k) as f64 * fs / n as f64;
        let g = if f < lo || f > hi {
            0.0
        } else {
            let d = (f - lo).min(hi - f);
            if d >= edge {
                1.0
            } else {
                0.5 * (1.0 - (PI * d / edge).cos())
            }
        };
        *b *= g / n as f64;
    }
    inv.process(&mut buf);
    buf.iter().map(|c| c.re).collect()
}

/// Fraction of the signal energy between `lo` and `hi` Hz.
pub fn band_energy_fraction(x: &[f64], fs: f64, lo: f64, hi: f64) -> f64 {
    let n = x.len();
    let (fwd, _) = fft_pair(n);
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fwd.process(&mut buf);
    let (mut inside, mut total) = (0.0, 0.0);
    for (k, b) in buf.iter().enumerate() {
        let f = k.min(n - k) as f64 * fs / n as f64;
        let e = b.norm_sqr();
        total += e;
        if f >= lo && f <= hi {
            inside += e;
        }
    }
    if total > 0.0 {
        inside / total
    } else {
        0.0
    }
}

/// Tiles (from a random circular offset) or randomly crops `noise` to `len`.
pub fn fit_to_length(noise: &[f64], len: usize, rng: &mut Rng) -> Result<Vec<f64>> {
    if noise.is_empty() {
        return Err(Error::Length("empty noise".into()));
    }
    if noise.len() >= len {
        let start = rng.random_range(0..=noise.len() - len);
        return Ok(noise[start..start + len].to_vec());
    }
    let offset = rng.random_range(0..noise.len());
    Ok((0..len).map(|i| noise[(offset + i) % noise.len()]).collect())
}
