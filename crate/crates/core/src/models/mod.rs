//! Tiny differentiable enhancers with analytic gradients, Adam, and
//! checkpoints.

mod adam;
mod gradcheck;
mod linalg;
mod mask;
mod waveform;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

pub use adam::OptimizerState;
pub use gradcheck::{gradient_check, total_loss, GradCheck};
pub use mask::FEATURE_EPS;

use crate::dsp::{Complex64, StftConfig};
use crate::error::{Error, Result};
use crate::rng::{substream, tag};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArchitectureKind {
    ComplexMask,
    RealMask,
    Waveform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Architecture {
    /// Unbounded complex mask on the input STFT.
    ComplexMask { stft: StftConfig, hidden: usize, context: usize, sources: usize },
    /// Softplus magnitude mask; the input phase is kept.
    RealMask { stft: StftConfig, hidden: usize, context: usize, sources: usize },
    Waveform {
        kernel: usize,
        stride: usize,
        channels: usize,
        sources: usize,
        /// Feed a saturation indicator alongside the samples and restrict
        /// the learned correction to saturated samples.
        #[serde(default)]
        clip_aware: bool,
    },
}

impl Architecture {
    pub fn complex_mask(hidden: usize) -> Self {
        Architecture::ComplexMask { stft: StftConfig::default(), hidden, context: 2, sources: 1 }
    }

    pub fn real_mask(hidden: usize) -> Self {
        Architecture::RealMask { stft: StftConfig::default(), hidden, context: 2, sources: 1 }
    }

    pub fn waveform(kernel: usize, stride: usize, channels: usize) -> Self {
        Architecture::Waveform { kernel, stride, channels, sources: 1, clip_aware: false }
    }

    /// Waveform model that only rewrites saturated samples.
    pub fn declipper(kernel: usize, stride: usize, channels: usize) -> Self {
        Architecture::Waveform { kernel, stride, channels, sources: 1, clip_aware: true }
    }

    /// Same architecture with `n` output signals (three for MixIT).
    pub fn with_sources(mut self, n: usize) -> Self {
        match &mut self {
            Architecture::ComplexMask { sources, .. }
            | Architecture::RealMask { sources, .. }
            | Architecture::Waveform { sources, .. } => *sources = n,
        }
        self
    }

    pub fn kind(&self) -> ArchitectureKind {
        match self {
            Architecture::ComplexMask { .. } => ArchitectureKind::ComplexMask,
            Architecture::RealMask { .. } => ArchitectureKind::RealMask,
            Architecture::Waveform { .. } => ArchitectureKind::Waveform,
        }
    }

    pub fn sources(&self) -> usize {
        match *self {
            Architecture::ComplexMask { sources, .. }
            | Architecture::RealMask { sources, .. }
            | Architecture::Waveform { sources, .. } => sources,
        }
    }

    pub fn stft(&self) -> Option<&StftConfig> {
        match self {
            Architecture::ComplexMask { stft, .. } | Architecture::RealMask { stft, .. } => Some(stft),
            Architecture::Waveform { .. } => None,
        }
    }

    /// Shortest input the model accepts.
    pub fn min_len(&self) -> usize {
        match self {
            Architecture::ComplexMask { stft, .. } | Architecture::RealMask { stft, .. } => stft.window_size,
            Architecture::Waveform { kernel, .. } => *kernel,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sources() == 0 {
            return Err(Error::Config("model needs at least one output".into()));
        }
        match self {
            Architecture::ComplexMask { stft, hidden, .. } | Architecture::RealMask { stft, hidden, .. } => {
                stft.validate()?;
                if *hidden == 0 {
                    return Err(Error::Config("hidden width must be positive".into()));
                }
            }
            Architecture::Waveform { kernel, stride, channels, .. } => {
                if *kernel == 0 || *stride == 0 || *channels == 0 || stride > kernel {
                    return Err(Error::Config("waveform model needs 0 < stride <= kernel and channels > 0".into()));
                }
            }
        }
        Ok(())
    }

    fn mask_dims(&self) -> Option<mask::Dims> {
        match *self {
            Architecture::ComplexMask { stft, hidden, context, sources } => {
                Some(mask::Dims { bins: stft.bins(), context, hidden, sources, complex: true })
            }
            Architecture::RealMask { stft, hidden, context, sources } => {
                Some(mask::Dims { bins: stft.bins(), context, hidden, sources, complex: false })
            }
            Architecture::Waveform { .. } => None,
        }
    }

    fn wave_dims(&self) -> Option<waveform::Dims> {
        match *self {
            Architecture::Waveform { kernel, stride, channels, sources, clip_aware } => {
                Some(waveform::Dims { kernel, stride, channels, sources, clip_aware })
            }
            _ => None,
        }
    }

    fn raw_segments(&self) -> Vec<(&'static str, usize)> {
        match (self.mask_dims(), self.wave_dims()) {
            (Some(d), _) => d.segments(),
            (_, Some(d)) => d.segments(),
            _ => unreachable!(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

/// Intermediates recorded by a forward pass, consumed by the backward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    inner: TraceInner,
    len: usize,
}

#[derive(Debug, Clone)]
enum TraceInner {
    Mask(mask::MaskTrace),
    Wave(waveform::WaveTrace),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "RawModel")]
pub struct EnhancerModel {
    arch: Architecture,
    params: Vec<f64>,
    /// Per-bin feature normalisation (mask models); not trained.
    feature_mean: Vec<f64>,
    feature_std: Vec<f64>,
    #[serde(skip)]
    trace: Option<Trace>,
}

#[derive(Deserialize)]
struct RawModel {
    arch: Architecture,
    params: Vec<f64>,
    feature_mean: Vec<f64>,
    feature_std: Vec<f64>,
}

impl TryFrom<RawModel> for EnhancerModel {
    type Error = Error;
    fn try_from(r: RawModel) -> Result<Self> {
        let mut m = EnhancerModel::new(r.arch, 0)?;
        m.set_params(r.params)?;
        if r.feature_mean.len() != m.feature_mean.len() || r.feature_std.len() != m.feature_std.len() {
            return Err(Error::Shape("feature normalisation does not match the architecture".into()));
        }
        if r.feature_std.iter().any(|s| !(*s > 0.0)) || r.feature_mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("invalid feature normalisation".into()));
        }
        m.feature_mean = r.feature_mean;
        m.feature_std = r.feature_std;
        Ok(m)
    }
}

impl PartialEq for EnhancerModel {
    fn eq(&self, other: &Self) -> bool {
        self.arch == other.arch
            && self.params == other.params
            && self.feature_mean == other.feature_mean
            && self.feature_std == other.feature_std
    }
}

impl EnhancerModel {
    /// Hidden layers get small random (Xavier-uniform) weights; the output
    /// layer starts at the identity, so a fresh model passes its input
    /// through (split evenly across outputs).
    pub fn new(arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let segs = arch.raw_segments();
        let mut params = Vec::with_capacity(segs.iter().map(|s| s.1).sum());
        let mut rng = substream(seed, &[tag("init")]);
        let share = 1.0 / arch.sources() as f64;
        let (fan_in, bins) = match (arch.mask_dims(), arch.wave_dims()) {
            (Some(d), _) => ([d.input(), d.hidden], d.bins),
            (_, Some(d)) => ([d.inputs(), d.channels], 0),
            _ => unreachable!(),
        };
        for (name, len) in &segs {
            match *name {
                "w1" | "enc_w" | "w2" | "mid_w" => {
                    let fi = if matches!(*name, "w1" | "enc_w") { fan_in[0] } else { fan_in[1] };
                    let fo = len / fi;
                    let a = (6.0 / (fi + fo) as f64).sqrt();
                    params.extend((0..*len).map(|_| rng.random_range(-a..a)));
                }
                "b3" => match arch.kind() {
                    ArchitectureKind::ComplexMask => {
                        for _ in 0..arch.sources() {
                            params.extend(std::iter::repeat_n(share, bins));
                            params.extend(std::iter::repeat_n(0.0, bins));
                        }
                    }
                    _ => params.extend(std::iter::repeat_n(share.exp_m1().ln(), *len)),
                },
                _ => params.extend(std::iter::repeat_n(0.0, *len)),
            }
        }
        let nb = arch.mask_dims().map_or(0, |d| d.bins);
        Ok(EnhancerModel { arch, params, feature_mean: vec![0.0; nb], feature_std: vec![1.0; nb], trace: None })
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn kind(&self) -> ArchitectureKind {
        self.arch.kind()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        self.trace = None;
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn set_params(&mut self, params: Vec<f64>) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::Shape(format!("{} parameters for a model with {}", params.len(), self.params.len())));
        }
        if !params.iter().all(|p| p.is_finite()) {
            return Err(Error::NonFinite("non-finite parameter".into()));
        }
        self.params = params;
        self.trace = None;
        Ok(())
    }

    pub fn segments(&self) -> Vec<Segment> {
        let mut off = 0;
        self.arch
            .raw_segments()
            .into_iter()
            .map(|(name, len)| {
                let s = Segment { name: name.to_string(), offset: off, len };
                off += len;
                s
            })
            .collect()
    }

    pub fn segment_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let s = self.segments().into_iter().find(|s| s.name == name)?;
        self.trace = None;
        Some(&mut self.params[s.offset..s.offset + s.len])
    }

    /// Name of the layer producing the model outputs.
    pub fn output_segments(&self) -> &'static [&'static str] {
        match self.kind() {
            ArchitectureKind::Waveform => &["dec_w"],
            _ => &["w3", "b3"],
        }
    }

    pub fn feature_normalization(&self) -> (&[f64], &[f64]) {
        (&self.feature_mean, &self.feature_std)
    }

    /// Per-bin mean and standard deviation of the log-magnitude features of
    /// `inputs`. No-op for waveform models.
    pub fn fit_normalization(&mut self, inputs: &[&[f64]]) -> Result<()> {
        let Some(stft) = self.arch.stft().copied() else { return Ok(()) };
        if inputs.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let bins = stft.bins();
        let (mut s1, mut s2, mut n) = (vec![0.0; bins], vec![0.0; bins], 0usize);
        for y in inputs {
            let feats = mask::log_magnitudes(y, &stft)?;
            for frame in feats.chunks_exact(bins) {
                for b in 0..bins {
                    s1[b] += frame[b];
                    s2[b] += frame[b] * frame[b];
                }
                n += 1;
            }
        }
        let n = n as f64;
        for b in 0..bins {
            let mean = s1[b] / n;
            self.feature_mean[b] = mean;
            self.feature_std[b] = (s2[b] / n - mean * mean).max(0.0).sqrt().max(1e-3);
        }
        self.trace = None;
        Ok(())
    }

    /// All outputs for input `y`; each has `y.len()` samples.
    pub fn forward(&self, y: &[f64]) -> Result<Vec<Vec<f64>>> {
        Ok(self.forward_traced(y)?.0)
    }

    /// The enhanced signal: output 0.
    pub fn enhance(&self, y: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(y)?.swap_remove(0))
    }

    /// Mask models only: output 0 and its mask (frames × bins; real masks
    /// have zero imaginary part).
    pub fn forward_mask(&self, y: &[f64]) -> Result<(Vec<f64>, Vec<Complex64>)> {
        let (Some(d), Some(stft)) = (self.arch.mask_dims(), self.arch.stft()) else {
            return Err(Error::Config("forward_mask needs a mask model".into()));
        };
        let (mut outs, mut masks, _) = mask::forward(&d, stft, &self.params, &self.feature_mean, &self.feature_std, y)?;
        Ok((outs.swap_remove(0), masks.swap_remove(0)))
    }

    pub fn forward_traced(&self, y: &[f64]) -> Result<(Vec<Vec<f64>>, Trace)> {
        if !y.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("model input".into()));
        }
        if let (Some(d), Some(stft)) = (self.arch.mask_dims(), self.arch.stft()) {
            let (outs, _, tr) = mask::forward(&d, stft, &self.params, &self.feature_mean, &self.feature_std, y)?;
            Ok((outs, Trace { inner: TraceInner::Mask(tr), len: y.len() }))
        } else {
            let d = self.arch.wave_dims().expect("waveform dims");
            let (outs, tr) = waveform::forward(&d, &self.params, y)?;
            Ok((outs, Trace { inner: TraceInner::Wave(tr), len: y.len() }))
        }
    }

    /// Parameter gradient given `dL/d(output_s)` for each output.
    pub fn backward_traced(&self, trace: &Trace, grads: &[Vec<f64>]) -> Result<Vec<f64>> {
        if grads.len() != self.arch.sources() {
            return Err(Error::Shape(format!("{} output gradients for {} outputs", grads.len(), self.arch.sources())));
        }
        if grads.iter().any(|g| g.len() != trace.len) {
            return Err(Error::Shape("output gradient length differs from the recorded input".into()));
        }
        match (&trace.inner, self.arch.mask_dims(), self.arch.wave_dims()) {
            (TraceInner::Mask(tr), Some(d), _) => {
                Ok(mask::backward(&d, self.arch.stft().expect("mask stft"), &self.params, tr, grads))
            }
            (TraceInner::Wave(tr), _, Some(d)) => Ok(waveform::backward(&d, &self.params, tr, grads)),
            _ => Err(Error::State("trace was recorded by a different architecture".into())),
        }
    }

    /// Forward pass that keeps its intermediates for [`Self::backward`].
    pub fn forward_recorded(&mut self, y: &[f64]) -> Result<Vec<Vec<f64>>> {
        let (outs, tr) = self.forward_traced(y)?;
        self.trace = Some(tr);
        Ok(outs)
    }

    /// Consumes the recorded forward pass.
    pub fn backward(&mut self, grads: &[Vec<f64>]) -> Result<Vec<f64>> {
        let tr = self.trace.take().ok_or_else(|| Error::State("backward without a recorded forward pass".into()))?;
        self.backward_traced(&tr, grads)
    }
}

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub model: EnhancerModel,
    pub optimizer: Option<OptimizerState>,
    pub epoch: usize,
    pub config_fingerprint: String,
}

impl Checkpoint {
    pub fn new(
        model: EnhancerModel,
        optimizer: Option<OptimizerState>,
        epoch: usize,
        config_fingerprint: String,
    ) -> Self {
        Checkpoint { version: CHECKPOINT_VERSION, model, optimizer, epoch, config_fingerprint }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serialises")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let c: Checkpoint = serde_json::from_str(s).map_err(|e| Error::Config(format!("bad checkpoint: {e}")))?;
        if c.version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!("unsupported checkpoint version {}", c.version)));
        }
        if let Some(o) = &c.optimizer {
            if o.m.len() != c.model.param_count() || o.v.len() != c.model.param_count() {
                return Err(Error::Shape("optimizer state does not match the model".into()));
            }
        }
        Ok(c)
    }
}

#[cfg(test)]
mod tests;
