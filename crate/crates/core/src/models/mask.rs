//! T-F mask estimator: log-magnitude features over a frame context, a
//! two-layer tanh MLP, and per-bin masks applied to the input STFT.

use crate::dsp::{Complex64, StftConfig, StftPlan};
use crate::error::{Error, Result};

use super::linalg::{affine, affine_t, axpy, dot, outer_acc};

pub const FEATURE_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy)]
pub(crate) struct Dims {
    pub bins: usize,
    pub context: usize,
    pub hidden: usize,
    pub sources: usize,
    pub complex: bool,
}

impl Dims {
    pub fn taps(&self) -> usize {
        2 * self.context + 1
    }
    pub fn input(&self) -> usize {
        self.taps() * self.bins
    }
    /// Output values per source per frame.
    pub fn per_source(&self) -> usize {
        if self.complex {
            2 * self.bins
        } else {
            self.bins
        }
    }
    pub fn output(&self) -> usize {
        self.sources * self.per_source()
    }
    pub fn segments(&self) -> Vec<(&'static str, usize)> {
        let (d, h, o) = (self.input(), self.hidden, self.output());
        vec![("w1", h * d), ("b1", h), ("w2", h * h), ("b2", h), ("w3", o * h), ("b3", o)]
    }
}

pub(crate) struct Params<'a> {
    w1: &'a [f64],
    b1: &'a [f64],
    w2: &'a [f64],
    b2: &'a [f64],
    w3: &'a [f64],
    b3: &'a [f64],
}

fn split<'a>(d: &Dims, p: &'a [f64]) -> Params<'a> {
    let mut rest = p;
    let mut take = |n: usize| {
        let (a, b) = rest.split_at(n);
        rest = b;
        a
    };
    let s = d.segments();
    Params {
        w1: take(s[0].1),
        b1: take(s[1].1),
        w2: take(s[2].1),
        b2: take(s[3].1),
        w3: take(s[4].1),
        b3: take(s[5].1),
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Recorded intermediates of one forward pass.
#[derive(Debug, Clone)]
pub(crate) struct MaskTrace {
    pub spec: Vec<Complex64>,
    pub z: Vec<f64>,
    pub h1: Vec<f64>,
    pub h2: Vec<f64>,
    pub out: Vec<f64>,
}

pub(crate) fn features(spec: &[Complex64], mean: &[f64], std: &[f64]) -> Vec<f64> {
    let bins = mean.len();
    spec.chunks_exact(bins)
        .flat_map(|frame| frame.iter().enumerate().map(|(b, v)| ((v.norm() + FEATURE_EPS).ln() - mean[b]) / std[b]))
        .collect()
}

/// Raw log-magnitude features, for fitting the normaliser.
pub(crate) fn log_magnitudes(y: &[f64], stft: &StftConfig) -> Result<Vec<f64>> {
    check_len(y.len(), stft)?;
    Ok(StftPlan::cached(stft).analysis(y).iter().map(|v| (v.norm() + FEATURE_EPS).ln()).collect())
}

fn check_len(len: usize, stft: &StftConfig) -> Result<()> {
    if len < stft.window_size {
        return Err(Error::Length(format!(
            "input of {len} samples shorter than one {}-sample window",
            stft.window_size
        )));
    }
    Ok(())
}

pub(crate) fn forward(
    d: &Dims,
    stft: &StftConfig,
    p: &[f64],
    mean: &[f64],
    std: &[f64],
    y: &[f64],
) -> Result<(Vec<Vec<f64>>, Vec<Vec<Complex64>>, MaskTrace)> {
    check_len(y.len(), stft)?;
    let plan = StftPlan::cached(stft);
    let w = split(d, p);
    let spec = plan.analysis(y);
    let (bins, h, o) = (d.bins, d.hidden, d.output());
    let frames = spec.len() / bins;
    let z = features(&spec, mean, std);
    let mut h1 = vec![0.0; frames * h];
    let mut h2 = vec![0.0; frames * h];
    let mut out = vec![0.0; frames * o];
    let din = d.input();
    for f in 0..frames {
        let a1 = &mut h1[f * h..(f + 1) * h];
        a1.copy_from_slice(w.b1);
        for c in 0..d.taps() {
            let src = (f as isize + c as isize - d.context as isize).clamp(0, frames as isize - 1) as usize;
            let zf = &z[src * bins..(src + 1) * bins];
            for (i, a) in a1.iter_mut().enumerate() {
                *a += dot(&w.w1[i * din + c * bins..i * din + (c + 1) * bins], zf);
            }
        }
        a1.iter_mut().for_each(|v| *v = v.tanh());
        let a2 = &mut h2[f * h..(f + 1) * h];
        affine(w.w2, w.b2, &h1[f * h..(f + 1) * h], a2);
        a2.iter_mut().for_each(|v| *v = v.tanh());
        affine(w.w3, w.b3, &h2[f * h..(f + 1) * h], &mut out[f * o..(f + 1) * o]);
    }
    let mut outputs = Vec::with_capacity(d.sources);
    let mut masks = Vec::with_capacity(d.sources);
    for s in 0..d.sources {
        let mut mask = Vec::with_capacity(spec.len());
        for f in 0..frames {
            let row = &out[f * o + s * d.per_source()..f * o + (s + 1) * d.per_source()];
            for b in 0..bins {
                mask.push(if d.complex {
                    Complex64::new(row[b], row[bins + b])
                } else {
                    Complex64::new(softplus(row[b]), 0.0)
                });
            }
        }
        let masked: Vec<Complex64> = mask.iter().zip(&spec).map(|(m, v)| m * v).collect();
        outputs.push(plan.synthesis(&masked, y.len()));
        masks.push(mask);
    }
    Ok((outputs, masks, MaskTrace { spec, z, h1, h2, out }))
}

pub(crate) fn backward(d: &Dims, stft: &StftConfig, p: &[f64], tr: &MaskTrace, grads: &[Vec<f64>]) -> Vec<f64> {
    let plan = StftPlan::cached(stft);
    let w = split(d, p);
    let (bins, h, o, din) = (d.bins, d.hidden, d.output(), d.input());
    let frames = tr.spec.len() / bins;
    // dL/d(mask output), frames × o
    let mut d_out = vec![0.0; frames * o];
    for (s, g) in grads.iter().enumerate() {
        let ds = plan.synthesis_adjoint(g);
        for f in 0..frames {
            let row = &mut d_out[f * o + s * d.per_source()..f * o + (s + 1) * d.per_source()];
            let raw = &tr.out[f * o + s * d.per_source()..];
            for b in 0..bins {
                let dm = ds[f * bins + b] * tr.spec[f * bins + b].conj();
                if d.complex {
                    row[b] = dm.re;
                    row[bins + b] = dm.im;
                } else {
                    row[b] = dm.re * sigmoid(raw[b]);
                }
            }
        }
    }
    let segs = d.segments();
    let mut grad = vec![0.0; segs.iter().map(|s| s.1).sum()];
    let (gw1, rest) = grad.split_at_mut(segs[0].1);
    let (gb1, rest) = rest.split_at_mut(segs[1].1);
    let (gw2, rest) = rest.split_at_mut(segs[2].1);
    let (gb2, rest) = rest.split_at_mut(segs[3].1);
    let (gw3, gb3) = rest.split_at_mut(segs[4].1);
    let mut dh2 = vec![0.0; h];
    let mut dh1 = vec![0.0; h];
    for f in 0..frames {
        let dout = &d_out[f * o..(f + 1) * o];
        let (h1, h2) = (&tr.h1[f * h..(f + 1) * h], &tr.h2[f * h..(f + 1) * h]);
        outer_acc(dout, h2, gw3);
        axpy(1.0, dout, gb3);
        dh2.iter_mut().for_each(|v| *v = 0.0);
        affine_t(w.w3, dout, &mut dh2);
        dh2.iter_mut().zip(h2).for_each(|(g, a)| *g *= 1.0 - a * a);
        outer_acc(&dh2, h1, gw2);
        axpy(1.0, &dh2, gb2);
        dh1.iter_mut().for_each(|v| *v = 0.0);
        affine_t(w.w2, &dh2, &mut dh1);
        dh1.iter_mut().zip(h1).for_each(|(g, a)| *g *= 1.0 - a * a);
        axpy(1.0, &dh1, gb1);
        for c in 0..d.taps() {
            let src = (f as isize + c as isize - d.context as isize).clamp(0, frames as isize - 1) as usize;
            let zf = &tr.z[src * bins..(src + 1) * bins];
            for (i, &g) in dh1.iter().enumerate() {
                if g != 0.0 {
                    axpy(g, zf, &mut gw1[i * din + c * bins..i * din + (c + 1) * bins]);
                }
            }
        }
    }
    grad
}
