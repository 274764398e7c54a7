//! Speech-like harmonic complexes.

use std::f64::consts::PI;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::dsp::Waveform;
use crate::error::{Error, Result};
use crate::rng::{substream, tag, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeechConfig {
    pub sample_rate_hz: u32,
    pub f0_range_hz: (f64, f64),
    /// Harmonics above this frequency are dropped.
    pub max_harmonic_hz: f64,
    pub syllable_ms: (f64, f64),
    pub gap_ms: (f64, f64),
    /// Target RMS of each item.
    pub rms: f64,
}

impl Default for SpeechConfig {
    fn default() -> Self {
        SpeechConfig {
            sample_rate_hz: crate::dsp::DEFAULT_SAMPLE_RATE,
            f0_range_hz: (90.0, 240.0),
            max_harmonic_hz: 4000.0,
            syllable_ms: (30.0, 100.0),
            gap_ms: (60.0, 250.0),
            rms: 0.1,
        }
    }
}

pub fn generate_clean_corpus(n_items: usize, duration_s: f64, seed: u64) -> Result<Vec<Waveform>> {
    generate_clean_corpus_with(&SpeechConfig::default(), n_items, duration_s, seed)
}

pub fn generate_clean_corpus_with(
    cfg: &SpeechConfig,
    n_items: usize,
    duration_s: f64,
    seed: u64,
) -> Result<Vec<Waveform>> {
    if n_items == 0 {
        return Err(Error::Parameter("corpus needs at least one item".into()));
    }
    (0..n_items).map(|i| generate_utterance(cfg, duration_s, seed, i as u64)).collect()
}

/// One utterance, drawn from its own substream so items are independent of
/// corpus size and generation order.
pub fn generate_utterance(cfg: &SpeechConfig, duration_s: f64, seed: u64, index: u64) -> Result<Waveform> {
    let fs = cfg.sample_rate_hz as f64;
    let len = (duration_s * fs).round();
    if !(len >= 1.0) || !len.is_finite() {
        return Err(Error::Parameter(format!("duration {duration_s} s gives no samples")));
    }
    let len = len as usize;
    let mut rng = substream(seed, &[tag("clean"), index]);
    let mut out = vec![0.0; len];
    let mut pos = (rng.random_range(cfg.gap_ms.0..=cfg.gap_ms.1) * 1e-3 * fs) as usize / 2;
    // Keep a speaker-like register per utterance.
    let base_f0 = rng.random_range(cfg.f0_range_hz.0..=cfg.f0_range_hz.1);
    while pos < len {
        let syl = (rng.random_range(cfg.syllable_ms.0..=cfg.syllable_ms.1) * 1e-3 * fs) as usize;
        let end = (pos + syl).min(len);
        syllable(&mut out[pos..end], syl, base_f0, cfg, fs, &mut rng);
        pos = end + (rng.random_range(cfg.gap_ms.0..=cfg.gap_ms.1) * 1e-3 * fs) as usize;
    }
    let rms = (out.iter().map(|v| v * v).sum::<f64>() / len as f64).sqrt();
    if rms > 0.0 {
        let g = cfg.rms / rms;
        out.iter_mut().for_each(|v| *v *= g);
    } else {
        // Too short for a syllable onset: fall back to a single tone.
        let f = base_f0;
        for (n, v) in out.iter_mut().enumerate() {
            *v = cfg.rms * 2f64.sqrt() * (2.0 * PI * f * n as f64 / fs).sin();
        }
    }
    Waveform::new(out, cfg.sample_rate_hz)
}

fn syllable(out: &mut [f64], nominal_len: usize, base_f0: f64, cfg: &SpeechConfig, fs: f64, rng: &mut Rng) {
    let f0_start = (base_f0 * rng.random_range(0.8..1.25)).clamp(cfg.f0_range_hz.0, cfg.f0_range_hz.1);
    let glide = rng.random_range(-0.25..0.25);
    let vib_rate = rng.random_range(4.0..7.0);
    let vib_depth = rng.random_range(0.0..0.03);
    let formants: [(f64, f64); 3] = [
        (rng.random_range(300.0..850.0), rng.random_range(80.0..160.0)),
        (rng.random_range(900.0..2300.0), rng.random_range(100.0..220.0)),
        (rng.random_range(2300.0..3400.0), rng.random_range(150.0..300.0)),
    ];
    let gain = rng.random_range(0.5..1.0);
    let n_harm = (cfg.max_harmonic_hz / cfg.f0_range_hz.0).ceil() as usize;
    let mut phases: Vec<f64> = (0..n_harm).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
    let attack = (0.015 * fs) as usize;
    let total = nominal_len.max(1) as f64;
    for (n, v) in out.iter_mut().enumerate() {
        let t = n as f64 / fs;
        let f0 = f0_start * (1.0 + glide * n as f64 / total) * (1.0 + vib_depth * (2.0 * PI * vib_rate * t).sin());
        let env = {
            let rise = ((n as f64) / attack as f64).min(1.0);
            let fall = ((nominal_len.saturating_sub(n)) as f64 / attack as f64).min(1.0);
            let a = rise.min(fall);
            // Raised-cosine edges with a slow swell in the middle.
            0.5 * (1.0 - (PI * a).cos()) * (1.0 - 0.3 * (PI * n as f64 / total - 0.5 * PI).cos().powi(2))
        };
        let mut acc = 0.0;
        for (k, ph) in phases.iter_mut().enumerate() {
            let fk = f0 * (k + 1) as f64;
            if fk >= cfg.max_harmonic_hz {
                break;
            }
            *ph += 2.0 * PI * fk / fs;
            acc += spectral_envelope(fk, &formants) * ph.sin();
        }
        for ph in phases.iter_mut() {
            *ph %= 2.0 * PI;
        }
        *v = gain * env * acc;
    }
}

/// Formant resonances over a -6 dB/octave tilt.
fn spectral_envelope(f: f64, formants: &[(f64, f64)]) -> f64 {
    let tilt = 100.0 / f.max(100.0);
    let res: f64 = formants
        .iter()
        .enumerate()
        .map(|(i, &(fc, bw))| {
            let d = (f - fc) / bw;
            (1.0 / (1.0 + d * d)) * [1.0, 0.7, 0.4][i]
        })
        .sum();
    tilt * (0.08 + res)
}
