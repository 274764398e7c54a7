//! Causal waveform enhancer: strided encoder, pointwise mixing layer and a
//! transposed-convolution decoder added to the input.
//!
//! Encoder frame `t` sees samples `tS-K+1 ..= tS` and the decoder writes
//! samples `tS .. tS+K`, so no output depends on future input.
//!
//! The clip-aware variant also feeds a saturation indicator (a nonzero
//! sample equal to its predecessor), scales each encoder window to unit
//! peak, rescales that frame's decoder output by the same peak and gates it
//! with the indicator.

use crate::error::{Error, Result};

use super::linalg::{affine, affine_t, axpy, dot, outer_acc};

#[derive(Debug, Clone, Copy)]
pub(crate) struct Dims {
    pub kernel: usize,
    pub stride: usize,
    pub channels: usize,
    pub sources: usize,
    pub clip_aware: bool,
}

impl Dims {
    pub fn inputs(&self) -> usize {
        if self.clip_aware {
            2 * self.kernel
        } else {
            self.kernel
        }
    }

    pub fn segments(&self) -> Vec<(&'static str, usize)> {
        let (k, c) = (self.kernel, self.channels);
        vec![
            ("enc_w", c * self.inputs()),
            ("enc_b", c),
            ("mid_w", c * c),
            ("mid_b", c),
            ("dec_w", self.sources * k * c),
        ]
    }
}

#[derive(Debug, Clone)]
pub(crate) struct WaveTrace {
    pub x: Vec<f64>,
    pub gate: Option<Vec<f64>>,
    pub h: Vec<f64>,
    pub m: Vec<f64>,
}

/// 1 where a sample is nonzero and repeats its predecessor exactly.
pub(crate) fn saturation_indicator(x: &[f64]) -> Vec<f64> {
    let mut g = vec![0.0; x.len()];
    for n in 1..x.len() {
        if x[n] != 0.0 && x[n] == x[n - 1] {
            g[n] = 1.0;
        }
    }
    g
}

/// Fills the encoder input for frame `t` and returns the frame gain.
fn window(x: &[f64], gate: Option<&[f64]>, t: usize, d: &Dims, buf: &mut [f64]) -> f64 {
    let end = t * d.stride;
    let k = d.kernel;
    for j in 0..k {
        let idx = end as isize - (k - 1) as isize + j as isize;
        buf[j] = if idx >= 0 { x[idx as usize] } else { 0.0 };
        if let Some(g) = gate {
            buf[k + j] = if idx >= 0 { g[idx as usize] } else { 0.0 };
        }
    }
    if gate.is_none() {
        return 1.0;
    }
    let peak = buf[..k].iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        buf[..k].iter_mut().for_each(|v| *v /= peak);
    }
    peak
}

struct Params<'a> {
    enc_w: &'a [f64],
    enc_b: &'a [f64],
    mid_w: &'a [f64],
    mid_b: &'a [f64],
    dec_w: &'a [f64],
}

fn split<'a>(d: &Dims, p: &'a [f64]) -> Params<'a> {
    let s = d.segments();
    let (enc_w, r) = p.split_at(s[0].1);
    let (enc_b, r) = r.split_at(s[1].1);
    let (mid_w, r) = r.split_at(s[2].1);
    let (mid_b, dec_w) = r.split_at(s[3].1);
    Params { enc_w, enc_b, mid_w, mid_b, dec_w }
}

pub(crate) fn forward(d: &Dims, p: &[f64], x: &[f64]) -> Result<(Vec<Vec<f64>>, WaveTrace)> {
    if x.len() < d.kernel {
        return Err(Error::Length(format!(
            "input of {} samples shorter than the {}-sample receptive field",
            x.len(),
            d.kernel
        )));
    }
    let w = split(d, p);
    let (n, c, k) = (x.len(), d.channels, d.kernel);
    let frames = n.div_ceil(d.stride);
    let share = 1.0 / d.sources as f64;
    let mut outs: Vec<Vec<f64>> = (0..d.sources).map(|_| x.iter().map(|v| v * share).collect()).collect();
    let mut h = vec![0.0; frames * c];
    let mut m = vec![0.0; frames * c];
    let gate = d.clip_aware.then(|| saturation_indicator(x));
    let mut buf = vec![0.0; d.inputs()];
    for t in 0..frames {
        let gain = window(x, gate.as_deref(), t, d, &mut buf);
        let ht = &mut h[t * c..(t + 1) * c];
        affine(w.enc_w, w.enc_b, &buf, ht);
        ht.iter_mut().for_each(|v| *v = v.tanh());
        let mt = &mut m[t * c..(t + 1) * c];
        affine(w.mid_w, w.mid_b, &h[t * c..(t + 1) * c], mt);
        mt.iter_mut().for_each(|v| *v = v.tanh());
        let start = t * d.stride;
        for (s, out) in outs.iter_mut().enumerate() {
            for j in 0..k.min(n - start) {
                if gate.as_ref().is_some_and(|g| g[start + j] == 0.0) {
                    continue;
                }
                let row = &w.dec_w[(s * k + j) * c..(s * k + j + 1) * c];
                out[start + j] += gain * dot(row, mt);
            }
        }
    }
    Ok((outs, WaveTrace { x: x.to_vec(), gate, h, m }))
}

pub(crate) fn backward(d: &Dims, p: &[f64], tr: &WaveTrace, grads: &[Vec<f64>]) -> Vec<f64> {
    let w = split(d, p);
    let (n, c, k) = (tr.x.len(), d.channels, d.kernel);
    let frames = n.div_ceil(d.stride);
    let segs = d.segments();
    let mut grad = vec![0.0; segs.iter().map(|s| s.1).sum()];
    let (g_enc_w, r) = grad.split_at_mut(segs[0].1);
    let (g_enc_b, r) = r.split_at_mut(segs[1].1);
    let (g_mid_w, r) = r.split_at_mut(segs[2].1);
    let (g_mid_b, g_dec_w) = r.split_at_mut(segs[3].1);
    let mut dm = vec![0.0; c];
    let mut dh = vec![0.0; c];
    let mut buf = vec![0.0; d.inputs()];
    for t in 0..frames {
        let start = t * d.stride;
        let mt = &tr.m[t * c..(t + 1) * c];
        let ht = &tr.h[t * c..(t + 1) * c];
        let gain = window(&tr.x, tr.gate.as_deref(), t, d, &mut buf);
        dm.iter_mut().for_each(|v| *v = 0.0);
        for (s, g) in grads.iter().enumerate() {
            for j in 0..k.min(n - start) {
                let gj = gain * g[start + j] * tr.gate.as_ref().map_or(1.0, |q| q[start + j]);
                if gj == 0.0 {
                    continue;
                }
                let off = (s * k + j) * c;
                axpy(gj, mt, &mut g_dec_w[off..off + c]);
                axpy(gj, &w.dec_w[off..off + c], &mut dm);
            }
        }
        dm.iter_mut().zip(mt).for_each(|(g, a)| *g *= 1.0 - a * a);
        outer_acc(&dm, ht, g_mid_w);
        axpy(1.0, &dm, g_mid_b);
        dh.iter_mut().for_each(|v| *v = 0.0);
        affine_t(w.mid_w, &dm, &mut dh);
        dh.iter_mut().zip(ht).for_each(|(g, a)| *g *= 1.0 - a * a);
        outer_acc(&dh, &buf, g_enc_w);
        axpy(1.0, &dh, g_enc_b);
    }
    grad
}
