//! Declarative corruption stages and their seeded application.

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::noise::{generate_noise, NoiseFamily};
use super::rir::{identity_rir, Rir};
use crate::dsp::{clip_samples, clip_threshold_for_snr, convolve_truncated, mix_at_snr, Waveform};
use crate::error::{Error, Result};
use crate::rng::{substream, Rng};

/// A signal-to-distortion level; `Infinite` means "leave the signal alone".
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SnrDb {
    Finite(f64),
    Infinite,
}

impl SnrDb {
    pub fn finite(self) -> Option<f64> {
        match self {
            SnrDb::Finite(v) => Some(v),
            SnrDb::Infinite => None,
        }
    }
}

impl From<f64> for SnrDb {
    fn from(v: f64) -> Self {
        if v == f64::INFINITY {
            SnrDb::Infinite
        } else {
            SnrDb::Finite(v)
        }
    }
}

impl fmt::Display for SnrDb {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SnrDb::Finite(v) => write!(f, "{v}"),
            SnrDb::Infinite => f.write_str("inf"),
        }
    }
}

impl Serialize for SnrDb {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            SnrDb::Finite(v) => s.serialize_f64(*v),
            SnrDb::Infinite => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for SnrDb {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) if v.is_finite() => Ok(SnrDb::Finite(v)),
            Raw::Str(s) if matches!(s.as_str(), "inf" | "Infinity" | "+inf") => Ok(SnrDb::Infinite),
            _ => Err(serde::de::Error::custom("SNR must be a finite number or \"inf\"")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SnrDist {
    /// Uniform over a finite list.
    Choice(Vec<SnrDb>),
    /// Uniform over a closed interval.
    Uniform(f64, f64),
}

impl SnrDist {
    pub fn fixed(v: f64) -> Self {
        SnrDist::Choice(vec![SnrDb::from(v)])
    }

    pub fn grid(values: &[f64]) -> Self {
        SnrDist::Choice(values.iter().map(|&v| SnrDb::from(v)).collect())
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            SnrDist::Choice(v) if v.is_empty() => Err(Error::Config("empty SNR list".into())),
            SnrDist::Choice(v) if v.iter().any(|s| matches!(s, SnrDb::Finite(x) if !x.is_finite())) => {
                Err(Error::Config("non-finite SNR".into()))
            }
            SnrDist::Uniform(lo, hi) if !(lo.is_finite() && hi.is_finite() && lo <= hi) => {
                Err(Error::Config(format!("bad SNR range [{lo}, {hi}]")))
            }
            _ => Ok(()),
        }
    }

    pub fn sample(&self, rng: &mut Rng) -> SnrDb {
        match self {
            SnrDist::Choice(v) => v[rng.random_range(0..v.len())],
            SnrDist::Uniform(lo, hi) if lo == hi => SnrDb::Finite(*lo),
            SnrDist::Uniform(lo, hi) => SnrDb::Finite(rng.random_range(*lo..=*hi)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CorruptionSpec {
    /// Noise from one of `noise` (picked uniformly per draw) mixed at a drawn SNR.
    AdditiveNoise { noise: Vec<NoiseFamily>, snr_db: SnrDist },
    /// Convolution with an RIR drawn from a named pool.
    Reverberation { rir_pool: String },
    /// Clipping at the threshold that yields a drawn SNR.
    Clipping { snr_db: SnrDist },
}

impl CorruptionSpec {
    /// The no-op corruption (infinite SNR), i.e. clean targets.
    pub fn identity() -> Self {
        CorruptionSpec::Clipping { snr_db: SnrDist::Choice(vec![SnrDb::Infinite]) }
    }

    pub fn additive(noise: Vec<NoiseFamily>, snr_db: SnrDist) -> Self {
        CorruptionSpec::AdditiveNoise { noise, snr_db }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            CorruptionSpec::AdditiveNoise { .. } => "additive_noise",
            CorruptionSpec::Reverberation { .. } => "reverberation",
            CorruptionSpec::Clipping { .. } => "clipping",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            CorruptionSpec::AdditiveNoise { noise, snr_db } => {
                if noise.is_empty() {
                    return Err(Error::Config("additive spec needs at least one noise family".into()));
                }
                noise.iter().try_for_each(NoiseFamily::validate)?;
                snr_db.validate()
            }
            CorruptionSpec::Reverberation { rir_pool } if rir_pool.is_empty() => {
                Err(Error::Config("empty RIR pool name".into()))
            }
            CorruptionSpec::Reverberation { .. } => Ok(()),
            CorruptionSpec::Clipping { snr_db } => {
                snr_db.validate()?;
                let positive = match snr_db {
                    SnrDist::Choice(v) => v.iter().all(|s| s.finite().is_none_or(|x| x > 0.0)),
                    SnrDist::Uniform(lo, _) => *lo > 0.0,
                };
                if positive {
                    Ok(())
                } else {
                    Err(Error::Config("clipping SNRs must be positive".into()))
                }
            }
        }
    }
}

/// Everything drawn while corrupting one signal; enough to replay it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DrawnParams {
    AdditiveNoise { family_id: String, source: usize, noise_index: u64, snr_db: SnrDb, gain: f64 },
    Reverberation { rir_pool: String, rir_index: usize, rt60_s: f64 },
    Clipping { snr_db: SnrDb, threshold: Option<f64>, saturated: bool },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corrupted {
    pub signal: Waveform,
    /// `signal - input`; for additive noise this is exactly the scaled noise.
    pub component: Waveform,
    pub params: DrawnParams,
}

pub const IDENTITY_POOL: &str = "identity";

/// Shared state for corruption: sample rate and the named RIR pools.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisContext {
    pub sample_rate_hz: u32,
    pub rir_pools: BTreeMap<String, Vec<Rir>>,
}

impl SynthesisContext {
    pub fn new(sample_rate_hz: u32) -> Self {
        let mut rir_pools = BTreeMap::new();
        rir_pools.insert(IDENTITY_POOL.to_string(), vec![identity_rir(sample_rate_hz)]);
        SynthesisContext { sample_rate_hz, rir_pools }
    }

    pub fn with_pool(mut self, name: impl Into<String>, rirs: Vec<Rir>) -> Self {
        self.rir_pools.insert(name.into(), rirs);
        self
    }

    fn pool(&self, name: &str) -> Result<&[Rir]> {
        match self.rir_pools.get(name) {
            Some(p) if !p.is_empty() => Ok(p),
            _ => Err(Error::Config(format!("unknown or empty RIR pool {name:?}"))),
        }
    }

    /// `corrupt` with a stream derived from `seed` alone.
    pub fn corrupt_seeded(&self, s: &Waveform, spec: &CorruptionSpec, seed: u64) -> Result<Corrupted> {
        self.corrupt(s, spec, &mut substream(seed, &[]))
    }

    pub fn corrupt(&self, s: &Waveform, spec: &CorruptionSpec, rng: &mut Rng) -> Result<Corrupted> {
        spec.validate()?;
        let params = match spec {
            CorruptionSpec::AdditiveNoise { noise, snr_db } => {
                let source = rng.random_range(0..noise.len());
                let noise_index = rng.random::<u64>();
                DrawnParams::AdditiveNoise {
                    family_id: noise[source].id.clone(),
                    source,
                    noise_index,
                    snr_db: snr_db.sample(rng),
                    gain: 0.0,
                }
            }
            CorruptionSpec::Reverberation { rir_pool } => {
                let pool = self.pool(rir_pool)?;
                let rir_index = rng.random_range(0..pool.len());
                DrawnParams::Reverberation { rir_pool: rir_pool.clone(), rir_index, rt60_s: pool[rir_index].rt60_s }
            }
            CorruptionSpec::Clipping { snr_db } => {
                DrawnParams::Clipping { snr_db: snr_db.sample(rng), threshold: None, saturated: false }
            }
        };
        self.replay(s, spec, &params)
    }

    /// Re-applies recorded draws; bit-identical to the original `corrupt`.
    pub fn replay(&self, s: &Waveform, spec: &CorruptionSpec, params: &DrawnParams) -> Result<Corrupted> {
        if s.sample_rate_hz() != self.sample_rate_hz {
            return Err(Error::Shape("signal sample rate differs from the synthesis context".into()));
        }
        match (spec, params) {
            (
                CorruptionSpec::AdditiveNoise { noise, .. },
                DrawnParams::AdditiveNoise { source, noise_index, snr_db, .. },
            ) => {
                let family = noise.get(*source).ok_or_else(|| Error::Config("noise source out of range".into()))?;
                let n = generate_noise(family, s.len(), self.sample_rate_hz, *noise_index)?;
                let (signal, component, gain) = match snr_db {
                    SnrDb::Finite(v) => {
                        let (mix, scaled) = mix_at_snr(s, &n, *v)?;
                        let gain = scaled.energy().sqrt() / n.energy().sqrt();
                        (mix, scaled, gain)
                    }
                    SnrDb::Infinite => (s.clone(), Waveform::zeros(s.len(), self.sample_rate_hz)?, 0.0),
                };
                let params = DrawnParams::AdditiveNoise {
                    family_id: family.id.clone(),
                    source: *source,
                    noise_index: *noise_index,
                    snr_db: *snr_db,
                    gain,
                };
                Ok(Corrupted { signal, component, params })
            }
            (CorruptionSpec::Reverberation { .. }, DrawnParams::Reverberation { rir_pool, rir_index, .. }) => {
                let pool = self.pool(rir_pool)?;
                let rir = pool.get(*rir_index).ok_or_else(|| Error::Config("RIR index out of range".into()))?;
                let signal = s.with_samples(convolve_truncated(s, &rir.taps))?;
                let component = s.with_samples(signal.iter().zip(s.iter()).map(|(a, b)| a - b).collect())?;
                let params = DrawnParams::Reverberation {
                    rir_pool: rir_pool.clone(),
                    rir_index: *rir_index,
                    rt60_s: rir.rt60_s,
                };
                Ok(Corrupted { signal, component, params })
            }
            (CorruptionSpec::Clipping { .. }, DrawnParams::Clipping { snr_db, .. }) => {
                let (signal, threshold, saturated) = match snr_db {
                    SnrDb::Finite(v) => {
                        let c = clip_threshold_for_snr(s, *v)?;
                        (s.with_samples(clip_samples(s, c.threshold))?, Some(c.threshold), c.saturated)
                    }
                    SnrDb::Infinite => (s.clone(), None, true),
                };
                let component = s.with_samples(signal.iter().zip(s.iter()).map(|(a, b)| a - b).collect())?;
                Ok(Corrupted {
                    signal,
                    component,
                    params: DrawnParams::Clipping { snr_db: *snr_db, threshold, saturated },
                })
            }
            _ => Err(Error::Config(format!("drawn parameters do not match a {} spec", spec.kind_name()))),
        }
    }
}
