//! Image-source room impulse responses and Schroeder RT60 estimation.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::dsp::Waveform;
use crate::error::{Error, Result};
use crate::rng::{substream, tag, Rng};

pub const SPEED_OF_SOUND: f64 = 343.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rir {
    pub taps: Waveform,
    /// Measured from the taps.
    pub rt60_s: f64,
    pub target_rt60_s: f64,
    pub room_dims_m: [f64; 3],
    pub mic_source_distance_m: f64,
    /// Wall reflection coefficient used by the simulation.
    pub beta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rt60Bucket {
    pub low_s: f64,
    pub high_s: f64,
}

impl Rt60Bucket {
    pub const fn new(low_s: f64, high_s: f64) -> Self {
        Rt60Bucket { low_s, high_s }
    }

    pub fn contains(&self, rt60: f64) -> bool {
        rt60 >= self.low_s && rt60 < self.high_s
    }

    pub fn width(&self) -> f64 {
        self.high_s - self.low_s
    }

    pub fn label(&self) -> String {
        format!("[{:.2},{:.2})", self.low_s, self.high_s)
    }
}

pub const RT60_BUCKETS: [Rt60Bucket; 3] =
    [Rt60Bucket::new(0.2, 0.5), Rt60Bucket::new(0.5, 0.8), Rt60Bucket::new(0.8, 1.1)];

/// Room, source and microphone, all in metres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoomGeometry {
    pub dims: [f64; 3],
    pub source: [f64; 3],
    pub mic: [f64; 3],
}

impl RoomGeometry {
    pub fn distance(&self) -> f64 {
        (0..3).map(|i| (self.source[i] - self.mic[i]).powi(2)).sum::<f64>().sqrt()
    }

    fn validate(&self) -> Result<()> {
        for i in 0..3 {
            let d = self.dims[i];
            if !(d > 0.0 && d.is_finite()) {
                return Err(Error::Parameter("room dimensions must be positive".into()));
            }
            for p in [self.source[i], self.mic[i]] {
                if !(p > 0.0 && p < d) {
                    return Err(Error::Parameter("source and microphone must be inside the room".into()));
                }
            }
        }
        Ok(())
    }
}

/// Impulse response of a shoebox room with one reflection coefficient for
/// every wall. Taps use linear-interpolation fractional delays; gains are
/// `beta^reflections / distance`, not normalised.
pub fn image_source_rir(geom: &RoomGeometry, beta: f64, len: usize, sample_rate_hz: u32) -> Result<Vec<f64>> {
    geom.validate()?;
    if !(0.0..1.0).contains(&beta) {
        return Err(Error::Parameter(format!("reflection coefficient {beta} outside [0, 1)")));
    }
    if len == 0 {
        return Err(Error::Length("RIR length must be positive".into()));
    }
    let fs = sample_rate_hz as f64;
    let max_dist = len as f64 / fs * SPEED_OF_SOUND;
    // Per axis: (image offset from the mic, reflection count).
    let axis = |i: usize| -> Vec<(f64, u32)> {
        let l = geom.dims[i];
        let n_max = (max_dist / (2.0 * l)).ceil() as i64 + 1;
        let mut v = Vec::new();
        for n in -n_max..=n_max {
            for q in 0..2i64 {
                let pos = (1 - 2 * q) as f64 * geom.source[i] + 2.0 * n as f64 * l;
                let refl = ((n - q).abs() + n.abs()) as u32;
                if beta == 0.0 && refl > 0 {
                    continue;
                }
                v.push((pos - geom.mic[i], refl));
            }
        }
        v
    };
    let (ax, ay, az) = (axis(0), axis(1), axis(2));
    let max_refl = ax.iter().chain(&ay).chain(&az).map(|a| a.1).max().unwrap_or(0) as usize * 3;
    let mut pow = vec![1.0; max_refl + 1];
    for k in 1..pow.len() {
        pow[k] = pow[k - 1] * beta;
    }
    let max_d2 = max_dist * max_dist;
    let mut h = vec![0.0; len];
    for &(dx, rx) in &ax {
        let dx2 = dx * dx;
        if dx2 > max_d2 {
            continue;
        }
        for &(dy, ry) in &ay {
            let dxy2 = dx2 + dy * dy;
            if dxy2 > max_d2 {
                continue;
            }
            for &(dz, rz) in &az {
                let d2 = dxy2 + dz * dz;
                if d2 > max_d2 {
                    continue;
                }
                let g = pow[(rx + ry + rz) as usize];
                if g < 1e-12 {
                    continue;
                }
                let d = d2.sqrt();
                let t = d / SPEED_OF_SOUND * fs;
                let k = t.floor() as usize;
                let frac = t - k as f64;
                let a = g / d.max(1e-3);
                if k < len {
                    h[k] += a * (1.0 - frac);
                }
                if k + 1 < len {
                    h[k + 1] += a * frac;
                }
            }
        }
    }
    Ok(h)
}

/// Energy decay curve in dB (Schroeder backward integration).
pub fn energy_decay_curve_db(taps: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    let mut edc: Vec<f64> = taps
        .iter()
        .rev()
        .map(|v| {
            acc += v * v;
            acc
        })
        .collect();
    edc.reverse();
    let total = edc.first().copied().unwrap_or(0.0);
    edc.iter().map(|&e| if e > 0.0 { 10.0 * (e / total).log10() } else { f64::NEG_INFINITY }).collect()
}

/// RT60 from a linear fit of the decay curve between -5 and -25 dB,
/// extrapolated to -60 dB.
pub fn rt60_of(taps: &[f64], sample_rate_hz: u32) -> Result<f64> {
    if taps.is_empty() {
        return Err(Error::Length("empty taps".into()));
    }
    if !taps.iter().all(|v| v.is_finite()) || taps.iter().all(|&v| v == 0.0) {
        return Err(Error::Estimation("taps carry no finite energy".into()));
    }
    let fs = sample_rate_hz as f64;
    let edc = energy_decay_curve_db(taps);
    let first_below = |level: f64| edc.iter().position(|&e| e <= level);
    let (Some(i5), Some(i25)) = (first_below(-5.0), first_below(-25.0)) else {
        return Err(Error::Estimation("decay range shorter than 20 dB".into()));
    };
    let pts: Vec<(f64, f64)> = (i5..i25).filter(|&i| edc[i].is_finite()).map(|i| (i as f64 / fs, edc[i])).collect();
    if pts.len() < 2 {
        return Ok(3.0 * (i25 - i5) as f64 / fs);
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let me = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - me)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    let slope = sxy / sxx;
    if !(slope < 0.0) {
        return Err(Error::Estimation("decay curve does not decrease".into()));
    }
    Ok(-60.0 / slope)
}

/// Eyring estimate of the reflection coefficient for a target RT60.
fn eyring_beta(dims: [f64; 3], rt60: f64) -> f64 {
    let [w, d, h] = dims;
    let v = w * d * h;
    let s = 2.0 * (w * d + w * h + d * h);
    let neg_ln_1ma = 0.161 * v / (s * rt60);
    // 1 - alpha = exp(-neg_ln_1ma), beta = sqrt(1 - alpha)
    (-0.5 * neg_ln_1ma).exp()
}

fn rir_len(rt60: f64, fs: f64) -> usize {
    ((0.8 * rt60).max(0.1) * fs).ceil() as usize
}

/// Simulates a room with the given geometry whose measured RT60 is within
/// 20% of the target; the wall coefficient starts from Eyring's formula and
/// is refined against the measured decay.
pub fn generate_rir_in(geom: &RoomGeometry, target_rt60_s: f64, sample_rate_hz: u32) -> Result<Rir> {
    geom.validate()?;
    if !(target_rt60_s > 0.0 && target_rt60_s.is_finite()) {
        return Err(Error::Parameter("target RT60 must be positive".into()));
    }
    let fs = sample_rate_hz as f64;
    let len = rir_len(target_rt60_s, fs);
    let mut beta = eyring_beta(geom.dims, target_rt60_s).min(0.9999);
    let mut best: Option<(f64, Vec<f64>, f64, f64)> = None;
    for _ in 0..6 {
        let taps = image_source_rir(geom, beta, len, sample_rate_hz)?;
        let measured = rt60_of(&taps, sample_rate_hz).unwrap_or(0.0);
        let err = (measured / target_rt60_s - 1.0).abs();
        if best.as_ref().is_none_or(|b| err < b.0) {
            best = Some((err, taps, measured, beta));
        }
        if err < 0.03 || measured <= 0.0 {
            break;
        }
        // RT60 scales roughly with 1 / -ln(beta).
        let decay = -beta.ln() * measured / target_rt60_s;
        beta = (-decay).exp().clamp(0.0, 0.9999);
    }
    let (err, taps, measured, beta) = best.expect("at least one attempt");
    if err > 0.2 {
        return Err(Error::Infeasible(format!(
            "RT60 {target_rt60_s:.3} s not reachable in a {:?} m room (closest {measured:.3} s)",
            geom.dims
        )));
    }
    let peak = taps.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let taps = Waveform::new(taps.iter().map(|v| v / peak).collect(), sample_rate_hz)?;
    Ok(Rir {
        taps,
        rt60_s: measured,
        target_rt60_s,
        room_dims_m: geom.dims,
        mic_source_distance_m: geom.distance(),
        beta,
    })
}

/// Random source and microphone placement: microphone at least 0.5 m from
/// every wall, source `distance` away in a near-horizontal direction.
pub fn place_in_room(dims: [f64; 3], distance: f64, rng: &mut Rng) -> Result<RoomGeometry> {
    for d in dims {
        if !(2.0..=10.0).contains(&d) {
            return Err(Error::Parameter(format!("room dimension {d} m outside [2, 10] m")));
        }
    }
    if !(distance > 0.0) || distance > dims[0].min(dims[1]) - 0.6 {
        return Err(Error::Infeasible(format!("source distance {distance} m does not fit the room")));
    }
    for _ in 0..1000 {
        let mic = [
            rng.random_range(0.5..dims[0] - 0.5),
            rng.random_range(0.5..dims[1] - 0.5),
            rng.random_range(0.5..dims[2] - 0.5),
        ];
        let az = rng.random_range(0.0..std::f64::consts::TAU);
        let el: f64 = rng.random_range(-0.2..0.2);
        let source = [
            mic[0] + distance * el.cos() * az.cos(),
            mic[1] + distance * el.cos() * az.sin(),
            mic[2] + distance * el.sin(),
        ];
        if (0..3).all(|i| source[i] > 0.3 && source[i] < dims[i] - 0.3) {
            return Ok(RoomGeometry { dims, source, mic });
        }
    }
    Err(Error::Infeasible("could not place source and microphone".into()))
}

pub fn generate_rir(
    room_dims_m: [f64; 3],
    mic_source_distance_m: f64,
    target_rt60_s: f64,
    seed: u64,
    sample_rate_hz: u32,
) -> Result<Rir> {
    if !(0.2..=1.1).contains(&target_rt60_s) {
        return Err(Error::Parameter(format!("target RT60 {target_rt60_s} s outside [0.2, 1.1] s")));
    }
    let mut rng = substream(seed, &[tag("placement")]);
    let geom = place_in_room(room_dims_m, mic_source_distance_m, &mut rng)?;
    generate_rir_in(&geom, target_rt60_s, sample_rate_hz)
}

/// Draws `count` RIRs with RT60 targets uniform in `bucket`, rooms with
/// width and depth in [4, 8] m, height in [2, 6] m and a 1 m source distance.
/// The seed and pool label select the random streams, so pools with
/// different labels never share rooms. Pool RIRs are aligned to their direct
/// path and their measured RT60 lies inside the bucket.
pub fn generate_rir_pool(
    bucket: Rt60Bucket,
    label: &str,
    count: usize,
    seed: u64,
    sample_rate_hz: u32,
) -> Result<Vec<Rir>> {
    let mut out = Vec::with_capacity(count);
    let mut attempt = 0u64;
    while out.len() < count {
        if attempt > 20 * count as u64 + 20 {
            return Err(Error::Infeasible(format!("could not fill RIR pool {label}")));
        }
        let mut rng = substream(seed, &[tag("rir"), tag(label), (bucket.low_s * 1000.0) as u64, attempt]);
        attempt += 1;
        let dims = [rng.random_range(4.0..8.0), rng.random_range(4.0..8.0), rng.random_range(2.0..6.0)];
        let target = rng.random_range(bucket.low_s..bucket.high_s);
        let geom = place_in_room(dims, 1.0, &mut rng)?;
        match generate_rir_in(&geom, target, sample_rate_hz) {
            Ok(r) if bucket.contains(r.rt60_s) => out.push(r.aligned()?),
            Ok(_) | Err(Error::Infeasible(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

impl Rir {
    /// Drops the silent lead-in before the direct path, leaving less than a
    /// sample of propagation delay.
    pub fn aligned(&self) -> Result<Rir> {
        let start = self.taps.iter().position(|v| *v != 0.0).unwrap_or(0);
        Ok(Rir { taps: self.taps.with_samples(self.taps[start..].to_vec())?, ..self.clone() })
    }
}

/// A single unit impulse: the identity room.
pub fn identity_rir(sample_rate_hz: u32) -> Rir {
    Rir {
        taps: Waveform::new(vec![1.0], sample_rate_hz).expect("valid impulse"),
        rt60_s: 0.0,
        target_rt60_s: 0.0,
        room_dims_m: [0.0; 3],
        mic_source_distance_m: 0.0,
        beta: 0.0,
    }
}
