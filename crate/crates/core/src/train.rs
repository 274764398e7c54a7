//! CTT / NyTT / MixIT training loops and IterNyTT retargeting.
//!
//! CTT and NyTT are the same loop: the caller decides whether the targets
//! are clean or noisy. Each step corrupts the target afresh with the
//! additional-corruption spec to build the input.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dsp::Waveform;
use crate::error::{Error, Result};
use crate::fingerprint::{fingerprint, samples_hash};
use crate::losses::{mixit_loss_with_grad, Assignment, Loss};
use crate::models::{Architecture, Checkpoint, EnhancerModel, OptimizerState};
use crate::rng::{derive_seed, substream, tag};
use crate::synth::{CorruptionSpec, SynthesisContext};

/// Losses above this abort training.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    Ctt,
    Nytt,
    Mixit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub loss: Loss,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Builds the input from the target (n_add, r_add or c_add); its SNR
    /// distribution is SNR_y.
    pub add_spec: CorruptionSpec,
    pub validation_size: usize,
    /// Builds validation inputs instead of `add_spec` when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validation_spec: Option<CorruptionSpec>,
    #[serde(default = "one")]
    pub validation_every: usize,
    /// Stop after this many validations without improvement; off by default.
    #[serde(default)]
    pub patience: Option<usize>,
    /// Fit the mask-feature normaliser on a draw of training inputs first.
    #[serde(default = "yes")]
    pub fit_normalization: bool,
}

fn one() -> usize {
    1
}

fn yes() -> bool {
    true
}

impl TrainConfig {
    pub fn new(mode: TrainMode, loss: Loss, add_spec: CorruptionSpec) -> Self {
        TrainConfig {
            mode,
            loss,
            epochs: 100,
            batch_size: 12,
            learning_rate: 1e-4,
            seed: 0,
            add_spec,
            validation_size: 50,
            validation_spec: None,
            validation_every: 1,
            patience: None,
            fit_normalization: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.validation_every == 0 {
            return Err(Error::Config("epochs, batch size and validation cadence must be positive".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning rate must be finite and non-negative".into()));
        }
        if self.mode == TrainMode::Mixit && !matches!(self.add_spec, CorruptionSpec::AdditiveNoise { .. }) {
            return Err(Error::Config("MixIT needs additive noise".into()));
        }
        self.loss.validate()?;
        if let Some(v) = &self.validation_spec {
            v.validate()?;
        }
        self.add_spec.validate()
    }

    pub fn fingerprint(&self) -> String {
        fingerprint(self)
    }
}

/// A frozen input/target pair (plus the added component, used by MixIT).
#[derive(Debug, Clone, PartialEq)]
pub struct ValPair {
    pub input: Waveform,
    pub target: Waveform,
    pub added: Waveform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainResult {
    pub best_model: EnhancerModel,
    /// 1-based; 0 when no validation ran.
    pub best_epoch: usize,
    pub train_loss: Vec<f64>,
    /// `(epoch, loss)` for every validation.
    pub val_loss: Vec<(usize, f64)>,
    /// MixIT only: per epoch, how often each assignment won.
    pub assignments: Vec<[usize; 2]>,
    pub last: Checkpoint,
}

impl TrainResult {
    pub fn best_checkpoint(&self, cfg: &TrainConfig) -> Checkpoint {
        Checkpoint::new(self.best_model.clone(), None, self.best_epoch, cfg.fingerprint())
    }
}

pub fn build_validation_pairs(ctx: &SynthesisContext, targets: &[Waveform], cfg: &TrainConfig) -> Result<Vec<ValPair>> {
    targets
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let spec = cfg.validation_spec.as_ref().unwrap_or(&cfg.add_spec);
            let c = ctx.corrupt(t, spec, &mut substream(cfg.seed, &[tag("validation"), i as u64]))?;
            Ok(ValPair { input: c.signal, target: t.clone(), added: c.component })
        })
        .collect()
}

fn pair_loss(model: &EnhancerModel, p: &ValPair, mode: TrainMode, loss: &Loss) -> Result<f64> {
    let outs = model.forward(&p.input)?;
    match mode {
        TrainMode::Mixit => {
            let o = crate::losses::mixit_loss(&outs[0], &outs[1], &outs[2], &p.target, &p.added, loss)?;
            Ok(o.0.scalar)
        }
        _ => Ok(loss.eval(&outs[0], &p.target)?.scalar),
    }
}

/// Mean objective over a frozen split.
pub fn validate(model: &EnhancerModel, pairs: &[ValPair], loss: &Loss) -> Result<f64> {
    validate_mode(model, pairs, TrainMode::Nytt, loss)
}

pub fn validate_mode(model: &EnhancerModel, pairs: &[ValPair], mode: TrainMode, loss: &Loss) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut sum = 0.0;
    for p in pairs {
        sum += pair_loss(model, p, mode, loss)?;
    }
    Ok(sum / pairs.len() as f64)
}

/// Trains on `targets`, holding out the last `validation_size` of them for
/// best-epoch selection.
pub fn train(
    ctx: &SynthesisContext,
    model: EnhancerModel,
    targets: &[Waveform],
    cfg: &TrainConfig,
) -> Result<TrainResult> {
    if targets.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if cfg.validation_size >= targets.len() {
        return Err(Error::Config(format!(
            "validation split of {} leaves no training items out of {}",
            cfg.validation_size,
            targets.len()
        )));
    }
    let (tr, va) = targets.split_at(targets.len() - cfg.validation_size);
    train_with_validation(ctx, model, tr, va, cfg)
}

/// Trains on `targets` and selects the epoch with the lowest loss on pairs
/// built once from `validation_targets`.
pub fn train_with_validation(
    ctx: &SynthesisContext,
    mut model: EnhancerModel,
    targets: &[Waveform],
    validation_targets: &[Waveform],
    cfg: &TrainConfig,
) -> Result<TrainResult> {
    cfg.validate()?;
    if targets.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let sources = model.arch().sources();
    match cfg.mode {
        TrainMode::Mixit if sources != 3 => return Err(Error::Config("MixIT needs a three-output model".into())),
        TrainMode::Ctt | TrainMode::Nytt if sources != 1 => {
            return Err(Error::Config("CTT and NyTT need a single-output model".into()))
        }
        _ => {}
    }
    if let Some(t) = targets.iter().chain(validation_targets).find(|t| t.len() < model.arch().min_len()) {
        return Err(Error::Length(format!("target of {} samples is shorter than the model accepts", t.len())));
    }
    let val_pairs = build_validation_pairs(ctx, validation_targets, cfg)?;
    if cfg.fit_normalization {
        let inputs: Vec<Waveform> = targets
            .iter()
            .enumerate()
            .map(|(i, t)| {
                ctx.corrupt(t, &cfg.add_spec, &mut substream(cfg.seed, &[tag("normalizer"), i as u64]))
                    .map(|c| c.signal)
            })
            .collect::<Result<_>>()?;
        let refs: Vec<&[f64]> = inputs.iter().map(|w| w.samples()).collect();
        model.fit_normalization(&refs)?;
    }
    let mut opt = OptimizerState::adam(model.param_count(), cfg.learning_rate);
    let mut order: Vec<usize> = (0..targets.len()).collect();
    let mut train_loss = Vec::with_capacity(cfg.epochs);
    let mut val_loss = Vec::new();
    let mut assignments = Vec::new();
    let mut best: Option<(usize, f64, EnhancerModel)> = None;
    let mut since_best = 0usize;
    let mut step = 0usize;
    for epoch in 1..=cfg.epochs {
        order.sort_unstable();
        order.shuffle(&mut substream(cfg.seed, &[tag("shuffle"), epoch as u64]));
        let mut epoch_sum = 0.0;
        let mut counts = [0usize; 2];
        for batch in order.chunks(cfg.batch_size) {
            step += 1;
            let mut grad = vec![0.0; model.param_count()];
            for &i in batch {
                let mut rng = substream(cfg.seed, &[tag("draw"), epoch as u64, i as u64]);
                let c = ctx.corrupt(&targets[i], &cfg.add_spec, &mut rng)?;
                let (outs, trace) = model.forward_traced(&c.signal)?;
                let (value, out_grads) = match cfg.mode {
                    TrainMode::Mixit => {
                        let o =
                            mixit_loss_with_grad([&outs[0], &outs[1], &outs[2]], &targets[i], &c.component, &cfg.loss)?;
                        counts[(o.assignment == Assignment::Second) as usize] += 1;
                        (o.value.scalar, o.grads.expect("gradients").to_vec())
                    }
                    _ => {
                        let (v, g) = cfg.loss.eval_with_grad(&outs[0], &targets[i])?;
                        (v.scalar, vec![g])
                    }
                };
                if !value.is_finite() || value > DIVERGENCE_LIMIT {
                    return Err(Error::Divergence { epoch, step, loss: value });
                }
                epoch_sum += value;
                let g = model.backward_traced(&trace, &out_grads)?;
                let scale = 1.0 / batch.len() as f64;
                grad.iter_mut().zip(&g).for_each(|(a, b)| *a += scale * b);
            }
            let mut p = model.params().to_vec();
            opt.step(&mut p, &grad)?;
            model.set_params(p)?;
        }
        train_loss.push(epoch_sum / targets.len() as f64);
        if cfg.mode == TrainMode::Mixit {
            assignments.push(counts);
        }
        if !val_pairs.is_empty() && (epoch % cfg.validation_every == 0 || epoch == cfg.epochs) {
            let v = validate_mode(&model, &val_pairs, cfg.mode, &cfg.loss)?;
            if !v.is_finite() || v > DIVERGENCE_LIMIT {
                return Err(Error::Divergence { epoch, step, loss: v });
            }
            val_loss.push((epoch, v));
            if best.as_ref().is_none_or(|b| v < b.1) {
                best = Some((epoch, v, model.clone()));
                since_best = 0;
            } else {
                since_best += 1;
                if cfg.patience.is_some_and(|p| since_best >= p) {
                    break;
                }
            }
        }
    }
    let epochs_run = train_loss.len();
    let last = Checkpoint::new(model.clone(), Some(opt), epochs_run, cfg.fingerprint());
    let (best_epoch, best_model) = match best {
        Some((e, _, m)) => (e, m),
        None => (0, model),
    };
    Ok(TrainResult { best_model, best_epoch, train_loss, val_loss, assignments, last })
}

/// MixIT: the model emits three signals; output 0 is the enhanced one.
pub fn run_mixit(
    ctx: &SynthesisContext,
    model: EnhancerModel,
    targets: &[Waveform],
    cfg: &TrainConfig,
) -> Result<TrainResult> {
    if cfg.mode != TrainMode::Mixit {
        return Err(Error::Config("run_mixit needs mode = mixit".into()));
    }
    train(ctx, model, targets, cfg)
}

pub fn enhance(model: &EnhancerModel, y: &Waveform) -> Result<Waveform> {
    y.with_samples(model.enhance(y)?)
}

pub fn enhance_all(model: &EnhancerModel, ys: &[Waveform]) -> Result<Vec<Waveform>> {
    ys.iter().map(|y| enhance(model, y)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterNyttConfig {
    pub train: TrainConfig,
    pub iterations: usize,
    /// Additional-corruption spec for iterations 2, 3, ...; the last entry
    /// repeats. Empty means `train.add_spec` throughout.
    #[serde(default)]
    pub later_add_specs: Vec<CorruptionSpec>,
    /// Start each model from the previous one instead of a fresh init.
    #[serde(default)]
    pub warm_start: bool,
}

impl IterNyttConfig {
    pub fn add_spec(&self, iteration: usize) -> &CorruptionSpec {
        if iteration <= 1 || self.later_add_specs.is_empty() {
            &self.train.add_spec
        } else {
            &self.later_add_specs[(iteration - 2).min(self.later_add_specs.len() - 1)]
        }
    }

    pub fn train_config(&self, iteration: usize) -> TrainConfig {
        let mut c = self.train.clone();
        c.add_spec = self.add_spec(iteration).clone();
        if iteration > 1 {
            c.seed = derive_seed(self.train.seed, &[tag("iteration"), iteration as u64]);
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationState {
    pub iteration: usize,
    /// Hash of the targets this iteration trained on.
    pub targets_hash: String,
    /// Hash of the signals enhanced to make the next targets; always the
    /// original noisy targets.
    pub enhancement_input_hash: String,
    pub best_epoch: usize,
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<(usize, f64)>,
    pub model: EnhancerModel,
    #[serde(default)]
    pub metrics: BTreeMap<String, f64>,
}

#[derive(Debug, Clone)]
pub struct IterNyttOutcome {
    pub states: Vec<IterationState>,
    /// Targets produced by the last completed iteration.
    pub final_targets: Vec<Waveform>,
    /// Set when an iteration failed; earlier states are kept.
    pub error: Option<Error>,
}

pub fn corpus_hash(ws: &[Waveform]) -> String {
    let hashes: Vec<String> = ws.iter().map(|w| samples_hash(w)).collect();
    fingerprint(&hashes)
}

/// Observer called after each iteration with its state and the new targets;
/// what it returns is stored as the iteration's metrics.
pub type IterationObserver<'a> = dyn FnMut(&IterationState, &[Waveform]) -> Result<BTreeMap<String, f64>> + 'a;

/// IterNyTT: iteration `i` trains a model on targets `ŝ_{i-1}` (with
/// `ŝ_0 = x`), then enhances the original `x` to get `ŝ_i`.
pub fn run_iternytt(
    ctx: &SynthesisContext,
    arch: &Architecture,
    model_seed: u64,
    x: &[Waveform],
    cfg: &IterNyttConfig,
    mut observer: Option<&mut IterationObserver<'_>>,
) -> Result<IterNyttOutcome> {
    if cfg.iterations == 0 {
        return Err(Error::Config("IterNyTT needs at least one iteration".into()));
    }
    if x.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let x_hash = corpus_hash(x);
    let mut targets: Vec<Waveform> = x.to_vec();
    let mut states = Vec::new();
    let mut previous: Option<EnhancerModel> = None;
    for i in 1..=cfg.iterations {
        let tc = cfg.train_config(i);
        let model = match (&previous, cfg.warm_start) {
            (Some(m), true) => m.clone(),
            _ if i == 1 => EnhancerModel::new(arch.clone(), model_seed)?,
            _ => EnhancerModel::new(arch.clone(), derive_seed(model_seed, &[tag("iteration"), i as u64]))?,
        };
        let targets_hash = corpus_hash(&targets);
        let result = match train(ctx, model, &targets, &tc) {
            Ok(r) => r,
            Err(e) => return Ok(IterNyttOutcome { states, final_targets: targets, error: Some(e) }),
        };
        let next = match enhance_all(&result.best_model, x) {
            Ok(n) => n,
            Err(e) => return Ok(IterNyttOutcome { states, final_targets: targets, error: Some(e) }),
        };
        let mut state = IterationState {
            iteration: i,
            targets_hash,
            enhancement_input_hash: x_hash.clone(),
            best_epoch: result.best_epoch,
            train_loss: result.train_loss,
            val_loss: result.val_loss,
            model: result.best_model,
            metrics: BTreeMap::new(),
        };
        if let Some(obs) = observer.as_mut() {
            state.metrics = obs(&state, &next)?;
        }
        previous = Some(state.model.clone());
        states.push(state);
        targets = next;
    }
    Ok(IterNyttOutcome { states, final_targets: targets, error: None })
}

#[cfg(test)]
mod tests;
