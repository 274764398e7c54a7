use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::waveform::{energy, Waveform};
use crate::error::{Error, Result};

/// Finite stand-in for ±∞ dB, shared by SNR, SI-SDR and the SNR loss clamp.
pub const DB_CAP: f64 = 100.0;

/// Relative tolerance of the threshold search, in dB.
pub const CLIP_SEARCH_TOL_DB: f64 = 0.05;
pub const CLIP_SEARCH_MAX_ITERS: usize = 60;

pub fn db_ratio(num: f64, den: f64) -> f64 {
    10.0 * (num / den).log10()
}

/// `10 log10(|signal|^2 / |distortion|^2)`, with ±[`DB_CAP`] sentinels for
/// zero distortion or zero signal.
pub fn measured_snr_db(signal: &[f64], distortion: &[f64]) -> Result<f64> {
    crate::error::ensure_same_len(signal.len(), distortion.len(), "measured_snr_db")?;
    let (es, ed) = (energy(signal), energy(distortion));
    match (es > 0.0, ed > 0.0) {
        (false, false) => Err(Error::DegenerateInput("signal and distortion are both silent".into())),
        (true, false) => Ok(DB_CAP),
        (false, true) => Ok(-DB_CAP),
        (true, true) => Ok(db_ratio(es, ed).clamp(-DB_CAP, DB_CAP)),
    }
}

/// Gain that puts `noise` at `snr_db` below `target`.
pub fn snr_gain(target_energy: f64, noise_energy: f64, snr_db: f64) -> f64 {
    (target_energy / (noise_energy * 10f64.powf(snr_db / 10.0))).sqrt()
}

/// Scales `noise` so the target-to-noise ratio is `snr_db` and adds it to
/// `target`. The target itself is never rescaled. Returns
/// `(mixture, scaled_noise)`.
pub fn mix_at_snr(target: &Waveform, noise: &Waveform, snr_db: f64) -> Result<(Waveform, Waveform)> {
    target.check_compatible(noise, "mix_at_snr")?;
    if !snr_db.is_finite() {
        return Err(Error::Parameter(format!("snr {snr_db} dB is not finite")));
    }
    let (es, en) = (target.energy(), noise.energy());
    if es <= 0.0 || en <= 0.0 {
        return Err(Error::DegenerateInput("target or noise has zero energy".into()));
    }
    let g = snr_gain(es, en, snr_db);
    let scaled: Vec<f64> = noise.iter().map(|n| g * n).collect();
    let mixture = target.iter().zip(&scaled).map(|(s, n)| s + n).collect();
    Ok((target.with_samples(mixture)?, target.with_samples(scaled)?))
}

pub(crate) fn fft_pair(n: usize) -> (Arc<dyn Fft<f64>>, Arc<dyn Fft<f64>>) {
    type Cache = Mutex<HashMap<usize, (Arc<dyn Fft<f64>>, Arc<dyn Fft<f64>>)>>;
    static CACHE: OnceLock<Cache> = OnceLock::new();
    let mut map = CACHE.get_or_init(Default::default).lock().expect("fft cache poisoned");
    map.entry(n)
        .or_insert_with(|| {
            let mut p = FftPlanner::new();
            (p.plan_fft_forward(n), p.plan_fft_inverse(n))
        })
        .clone()
}

/// Linear convolution `x * h`, truncated to `x.len()` samples.
pub fn convolve_truncated(x: &[f64], h: &[f64]) -> Vec<f64> {
    let n = x.len();
    let taps = &h[..h.len().min(n)];
    if (n as u64) * (taps.len() as u64) <= 1 << 18 {
        let mut y = vec![0.0; n];
        for (k, &hk) in taps.iter().enumerate() {
            if hk == 0.0 {
                continue;
            }
            for (yi, xi) in y[k..].iter_mut().zip(x) {
                *yi += hk * xi;
            }
        }
        return y;
    }
    let size = (n + taps.len() - 1).next_power_of_two();
    let (fwd, inv) = fft_pair(size);
    let load = |v: &[f64]| {
        let mut b = vec![Complex64::new(0.0, 0.0); size];
        b.iter_mut().zip(v).for_each(|(o, &s)| o.re = s);
        fwd.process(&mut b);
        b
    };
    let mut a = load(x);
    let b = load(taps);
    a.iter_mut().zip(&b).for_each(|(p, q)| *p *= q);
    inv.process(&mut a);
    a[..n].iter().map(|v| v.re / size as f64).collect()
}

/// Reverberates `w` with `rir`; output keeps the input length so paired
/// signals stay aligned.
pub fn convolve_rir(w: &Waveform, rir: &Waveform) -> Result<Waveform> {
    if w.sample_rate_hz() != rir.sample_rate_hz() {
        return Err(Error::Shape("convolve_rir: sample rates differ".into()));
    }
    w.with_samples(convolve_truncated(w, rir))
}

pub fn clip_samples(x: &[f64], c: f64) -> Vec<f64> {
    x.iter().map(|&s| if s.abs() < c { s } else { c * s.signum() }).collect()
}

/// Hard clipping: samples with `|s| < c` pass, the rest saturate at `±c`.
pub fn clip(w: &Waveform, c: f64) -> Result<Waveform> {
    if !(c > 0.0) || !c.is_finite() {
        return Err(Error::Parameter(format!("clipping threshold {c} must be positive and finite")));
    }
    w.with_samples(clip_samples(w, c))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClipThreshold {
    pub threshold: f64,
    /// True when the requested SNR needs no meaningful clipping; the
    /// threshold is then the signal peak.
    pub saturated: bool,
    pub achieved_snr_db: f64,
}

fn clipping_snr_db(x: &[f64], es: f64, c: f64) -> f64 {
    let ed: f64 = x.iter().map(|s| (s.abs() - c).max(0.0).powi(2)).sum();
    if ed <= 0.0 {
        f64::INFINITY
    } else {
        db_ratio(es, ed)
    }
}

/// Finds `c` such that clipping `s` at `c` leaves a signal-to-clipping-
/// distortion ratio of `snr_db`. Bisection on `c`, which the ratio increases
/// with monotonically.
pub fn clip_threshold_for_snr(s: &[f64], snr_db: f64) -> Result<ClipThreshold> {
    if !snr_db.is_finite() {
        return Err(Error::Parameter(format!("snr {snr_db} dB is not finite")));
    }
    let es = energy(s);
    if es <= 0.0 {
        return Err(Error::DegenerateInput("cannot clip a silent signal to a target SNR".into()));
    }
    if snr_db <= 0.0 {
        return Err(Error::Parameter(format!(
            "clipping distortion never exceeds the signal; {snr_db} dB is unattainable"
        )));
    }
    let peak = s.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let saturated = ClipThreshold { threshold: peak, saturated: true, achieved_snr_db: f64::INFINITY };
    if snr_db >= DB_CAP {
        return Ok(saturated);
    }
    let (mut lo, mut hi) = (0.0, peak);
    for _ in 0..CLIP_SEARCH_MAX_ITERS {
        let mid = 0.5 * (lo + hi);
        let got = clipping_snr_db(s, es, mid);
        if (got - snr_db).abs() <= CLIP_SEARCH_TOL_DB {
            return Ok(ClipThreshold { threshold: mid, saturated: false, achieved_snr_db: got });
        }
        if got < snr_db {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    // Only reachable when the target sits within float resolution of the peak.
    Ok(saturated)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng as _, SeedableRng};
    use rand_distr::StandardNormal;

    fn wf(v: Vec<f64>) -> Waveform {
        Waveform::new(v, 16_000).unwrap()
    }

    fn gaussian(len: usize, seed: u64) -> Vec<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..len).map(|_| 0.2 * rng.sample::<f64, _>(StandardNormal)).collect()
    }

    #[test]
    fn equal_energy_gains() {
        let s = wf(vec![1.0, -1.0, 1.0, -1.0]);
        let n = wf(vec![1.0, 1.0, -1.0, -1.0]);
        let (_, scaled) = mix_at_snr(&s, &n, 0.0).unwrap();
        assert!((scaled[0] - 1.0).abs() < 1e-15);
        let (mix, scaled) = mix_at_snr(&s, &n, 20.0).unwrap();
        assert!((scaled[0] - 0.1).abs() < 1e-15);
        assert!((mix[0] - 1.1).abs() < 1e-15);
    }

    #[test]
    fn mixing_rejects_degenerate_inputs() {
        let s = wf(vec![1.0, 0.0]);
        let z = wf(vec![0.0, 0.0]);
        assert!(matches!(mix_at_snr(&s, &z, 0.0), Err(Error::DegenerateInput(_))));
        assert!(matches!(mix_at_snr(&z, &s, 0.0), Err(Error::DegenerateInput(_))));
        assert!(matches!(mix_at_snr(&s, &wf(vec![1.0]), 0.0), Err(Error::Shape(_))));
    }

    #[test]
    fn snr_sentinels_and_halving() {
        let s = [1.0, 2.0, 3.0];
        let d = [0.5, -0.25, 1.0];
        assert_eq!(measured_snr_db(&s, &s).unwrap(), 0.0);
        let half: Vec<f64> = d.iter().map(|v| v / 2.0).collect();
        let shift = measured_snr_db(&s, &half).unwrap() - measured_snr_db(&s, &d).unwrap();
        assert!((shift - 20.0 * 2f64.log10()).abs() < 1e-12);
        assert!((shift - 6.0206).abs() < 1e-4);
        assert_eq!(measured_snr_db(&[0.0; 3], &d).unwrap(), -DB_CAP);
        assert_eq!(measured_snr_db(&s, &[0.0; 3]).unwrap(), DB_CAP);
    }

    #[test]
    fn convolution_examples() {
        let x = wf(vec![1.0, 0.0, 0.0]);
        assert_eq!(convolve_rir(&x, &wf(vec![1.0, 0.5])).unwrap().samples(), &[1.0, 0.5, 0.0]);
        let y = wf(gaussian(100, 1));
        assert_eq!(convolve_rir(&y, &wf(vec![1.0])).unwrap(), y);
        let half = convolve_rir(&y, &wf(vec![0.5])).unwrap();
        assert!(half.iter().zip(y.iter()).all(|(a, b)| *a == 0.5 * b));
    }

    #[test]
    fn fft_path_matches_direct_sum() {
        let x = gaussian(3000, 2);
        let h = gaussian(2500, 3);
        let fast = convolve_truncated(&x, &h);
        for n in (0..3000).step_by(97) {
            let direct: f64 = (0..=n.min(h.len() - 1)).map(|k| h[k] * x[n - k]).sum();
            assert!((fast[n] - direct).abs() < 1e-10);
        }
    }

    #[test]
    fn clip_examples() {
        let s = wf(vec![0.5, -1.2, 0.3]);
        assert_eq!(clip(&s, 1.0).unwrap().samples(), &[0.5, -1.0, 0.3]);
        assert_eq!(clip(&s, 1.2).unwrap(), s);
        assert_eq!(clip(&s, 5.0).unwrap(), s);
        assert!(matches!(clip(&s, 0.0), Err(Error::Parameter(_))));
        assert!(matches!(clip(&s, -1.0), Err(Error::Parameter(_))));
    }

    #[test]
    fn threshold_search_hits_target() {
        let s = gaussian(16_000, 4);
        let c3 = clip_threshold_for_snr(&s, 3.0).unwrap();
        assert!(!c3.saturated);
        let clipped = clip_samples(&s, c3.threshold);
        let d: Vec<f64> = s.iter().zip(&clipped).map(|(a, b)| a - b).collect();
        // Oracle: re-measure independently of the search's own bookkeeping.
        let snr = 10.0 * (energy(&s) / energy(&d)).log10();
        assert!((snr - 3.0).abs() <= 0.05, "{snr}");
        let c7 = clip_threshold_for_snr(&s, 7.0).unwrap();
        assert!(c7.threshold > c3.threshold);
        let sat = clip_threshold_for_snr(&s, 200.0).unwrap();
        assert!(sat.saturated);
        assert_eq!(sat.threshold, s.iter().fold(0.0f64, |m, v| m.max(v.abs())));
        assert!(clip_threshold_for_snr(&s, -1.0).is_err());
        assert!(clip_threshold_for_snr(&[0.0; 8], 3.0).is_err());
    }

    proptest! {
        #[test]
        fn remixing_reports_requested_snr(seed in 0u64..1000, snr in -40.0f64..40.0) {
            let s = wf(gaussian(256, seed));
            let n = wf(gaussian(256, seed + 7777));
            let (_, scaled) = mix_at_snr(&s, &n, snr).unwrap();
            prop_assert!((measured_snr_db(&s, &scaled).unwrap() - snr).abs() < 1e-6);
        }

        #[test]
        fn clip_laws(v in prop::collection::vec(-2.0f64..2.0, 1..64), c1 in 0.01f64..2.5, c2 in 0.01f64..2.5) {
            let once = clip_samples(&v, c1);
            prop_assert_eq!(&clip_samples(&once, c1), &once);
            prop_assert!(once.iter().all(|s| s.abs() <= c1));
            // Per-sample case analysis oracle for the composition law.
            let m = c1.min(c2);
            let expected: Vec<f64> = v.iter().map(|&s| if s.abs() < m { s } else { m * s.signum() }).collect();
            prop_assert_eq!(clip_samples(&once, c2), expected);
        }

        #[test]
        fn convolution_is_linear(a in prop::collection::vec(-1.0f64..1.0, 1..40),
                                 h1 in prop::collection::vec(-1.0f64..1.0, 1..10),
                                 k in -3.0f64..3.0) {
            let h2: Vec<f64> = h1.iter().rev().cloned().collect();
            let hs: Vec<f64> = h1.iter().zip(&h2).map(|(p, q)| p + k * q).collect();
            let lhs = convolve_truncated(&a, &hs);
            let r1 = convolve_truncated(&a, &h1);
            let r2 = convolve_truncated(&a, &h2);
            for i in 0..a.len() {
                prop_assert!((lhs[i] - (r1[i] + k * r2[i])).abs() < 1e-12);
            }
        }
    }
}
