//! Runs an experiment grid: corpora per seed, one training run per
//! (condition, method, seed) cell, evaluation on the shared test set, and a
//! results table assembled from per-cell records.
//!
//! Output layout under the run directory:
//!
//! ```text
//! run_manifest.json          config, seeds, corpus hashes, cell list
//! results.json               the table
//! seed<S>/                   RIR pools and the test-set manifest
//! cells/<condition>/<method>/seed<S>/
//!     record.json            rows of the cell (the resume marker)
//!     model.json, training.json, targets_manifest.json, eval.json
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use log::{info, warn};
use nytt_core::dsp::Waveform;
use nytt_core::fingerprint::fingerprint;
use nytt_core::metrics::{evaluate_corpus, si_sdr, EvalPair, Metric, MetricsReport};
use nytt_core::models::{Checkpoint, EnhancerModel};
use nytt_core::rng::{derive_seed, tag};
use nytt_core::synth::{
    build_dataset, generate_clean_corpus_with, generate_rir_pool, CleanReferences, CorruptionSpec, DatasetManifest,
    Rir, SynthesisContext,
};
use nytt_core::train::{
    enhance_all, run_iternytt, train_with_validation, IterNyttConfig, IterationState, TrainConfig, TrainMode,
};
use serde::{Deserialize, Serialize};

use crate::analysis::{analyze_triplet, axis_trends};
use crate::config::{
    Condition, ExperimentConfig, MethodKind, MethodSpec, RirPoolConfig, SweepAxis, ValidationTargets, VolumeSplit,
};
use crate::error::{Error, Result};
use crate::io::{read_json, write_atomic, write_json};
use crate::table::{AxisInfo, CellStatus, ResultRow, ResultsTable};

pub const RESULTS_FILE: &str = "results.json";
pub const RUN_MANIFEST_FILE: &str = "run_manifest.json";
const RECORD_FILE: &str = "record.json";

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    /// Reuse finished cells and checkpoints found under `out_dir`.
    pub resume: bool,
    pub workers: usize,
}

impl RunOptions {
    pub fn new(out_dir: impl Into<PathBuf>) -> Self {
        RunOptions { out_dir: out_dir.into(), resume: false, workers: 1 }
    }
}

/// Per-seed corpora shared by every cell.
pub struct SeedData {
    pub seed: u64,
    pub ctx: SynthesisContext,
    pub train_clean: Vec<Waveform>,
    pub validation_clean: Vec<Waveform>,
    pub test_clean: Vec<Waveform>,
    pub test_noisy: Vec<Waveform>,
    pub test_manifest: DatasetManifest,
    pub unprocessed: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub seed: u64,
    pub train_clean_hash: String,
    pub validation_clean_hash: String,
    pub test_clean_hash: String,
    pub test_manifest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellEntry {
    pub condition: String,
    pub method: String,
    pub seed: u64,
    pub dir: String,
    pub fingerprint: String,
}

/// The persisted record of a run; enough to rerun it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: ExperimentConfig,
    pub config_fingerprint: String,
    pub seeds: Vec<SeedRecord>,
    pub cells: Vec<CellEntry>,
}

/// Loads either an experiment config or a run manifest (taking its config).
pub fn load_experiment(path: &Path) -> Result<ExperimentConfig> {
    let value: serde_json::Value = read_json(path)?;
    let value = match value.get("config") {
        Some(c) if value.get("cells").is_some() => c.clone(),
        _ => value,
    };
    serde_json::from_value(value).map_err(|source| Error::Json { path: path.to_path_buf(), source })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CellRecord {
    fingerprint: String,
    rows: Vec<ResultRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TrainingSummary {
    best_epoch: usize,
    train_loss: Vec<f64>,
    val_loss: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PoolFile {
    config: RirPoolConfig,
    seed: u64,
    rirs: Vec<Rir>,
}

fn sanitize(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || "=.-_@".contains(c) { c } else { '_' }).collect()
}

fn cell_dir(condition: &Condition, method: &MethodSpec, seed: u64) -> String {
    format!("cells/{}/{}/seed{seed}", sanitize(&condition.key), sanitize(method.label()))
}

fn mean_si_sdr(est: &[Waveform], refs: &[Waveform]) -> Result<f64> {
    let mut sum = 0.0;
    for (e, s) in est.iter().zip(refs) {
        sum += si_sdr(e, s)?;
    }
    Ok(sum / est.len().max(1) as f64)
}

fn with_hash(rel: &str, value: &impl Serialize) -> String {
    format!("{rel}#{}", fingerprint(value))
}

fn rir_pool(cfg: &ExperimentConfig, pool: &RirPoolConfig, seed: u64, out: &Path) -> Result<Vec<Rir>> {
    let path = out.join(format!("seed{seed}/rir_pools/{}.json", sanitize(&pool.name)));
    if let Ok(f) = read_json::<PoolFile>(&path) {
        if f.config == *pool && f.seed == seed {
            return Ok(f.rirs);
        }
    }
    let rirs = generate_rir_pool(
        pool.bucket,
        &pool.name,
        pool.count,
        derive_seed(seed, &[tag("rir_pool")]),
        cfg.sample_rate_hz,
    )?;
    write_json(&path, &PoolFile { config: pool.clone(), seed, rirs: rirs.clone() })?;
    Ok(rirs)
}

/// Builds (or reloads) the corpora, RIR pools and test set of one seed.
pub fn prepare_seed(cfg: &ExperimentConfig, seed: u64, out: &Path) -> Result<SeedData> {
    let mut ctx = SynthesisContext::new(cfg.sample_rate_hz);
    for pool in &cfg.rir_pools {
        ctx = ctx.with_pool(pool.name.clone(), rir_pool(cfg, pool, seed, out)?);
    }
    let c = &cfg.corpus;
    let corpus = |n: usize, label: &str| {
        generate_clean_corpus_with(&c.speech, n, c.duration_s, derive_seed(seed, &[tag(label)]))
    };
    let train_clean = corpus(c.train_items, "train_clean")?;
    let validation_clean = corpus(c.validation_items, "validation_clean")?;
    let test_clean = corpus(c.test_items, "test_clean")?;
    let (test_noisy, test_manifest) =
        build_dataset(&ctx, &test_clean, &cfg.test_spec, derive_seed(seed, &[tag("test")]))?;
    write_json(&out.join(format!("seed{seed}/test_manifest.json")), &test_manifest)?;
    let unprocessed = evaluate(&test_noisy, &test_clean)?;
    Ok(SeedData { seed, ctx, train_clean, validation_clean, test_clean, test_noisy, test_manifest, unprocessed })
}

fn evaluate(est: &[Waveform], refs: &[Waveform]) -> Result<MetricsReport> {
    let ids: Vec<String> = (0..est.len()).map(|i| format!("item{i:05}")).collect();
    let pairs: Vec<EvalPair> =
        ids.iter().zip(est.iter().zip(refs)).map(|(id, (e, s))| (id.as_str(), e.samples(), s.samples())).collect();
    Ok(evaluate_corpus(&pairs, &[Metric::SiSdr, Metric::LogSpectralDistance])?)
}

/// Everything that determines a cell's outcome.
#[derive(Serialize)]
struct CellKey<'a> {
    config: CellConfig<'a>,
    condition: &'a Condition,
    method: &'a MethodSpec,
    seed: u64,
}

#[derive(Serialize)]
struct CellConfig<'a> {
    task: crate::config::Task,
    sample_rate_hz: u32,
    corpus: &'a crate::config::CorpusConfig,
    rir_pools: &'a [RirPoolConfig],
    test_spec: &'a CorruptionSpec,
    volume_clean_items: usize,
    model: &'a nytt_core::models::Architecture,
    training: &'a crate::config::TrainingSettings,
    validation: &'a crate::config::ValidationSettings,
    triplet: bool,
}

fn cell_fingerprint(cfg: &ExperimentConfig, condition: &Condition, method: &MethodSpec, seed: u64) -> String {
    fingerprint(&CellKey {
        config: CellConfig {
            task: cfg.task,
            sample_rate_hz: cfg.sample_rate_hz,
            corpus: &cfg.corpus,
            rir_pools: &cfg.rir_pools,
            test_spec: &cfg.test_spec,
            volume_clean_items: cfg.volume_clean_items,
            model: &cfg.model,
            training: &cfg.training,
            validation: &cfg.validation,
            triplet: cfg.triplet,
        },
        condition,
        method,
        seed,
    })
}

struct Cell<'a> {
    cfg: &'a ExperimentConfig,
    condition: &'a Condition,
    method: &'a MethodSpec,
    data: &'a SeedData,
    out: &'a Path,
    rel: String,
    fingerprint: String,
    resume: bool,
}

/// Training targets with the clean signal behind each one.
struct Targets {
    targets: Vec<Waveform>,
    refs: Vec<Waveform>,
    validation: Vec<Waveform>,
}

impl<'a> Cell<'a> {
    fn new(
        cfg: &'a ExperimentConfig,
        condition: &'a Condition,
        method: &'a MethodSpec,
        data: &'a SeedData,
        opts: &'a RunOptions,
    ) -> Self {
        Cell {
            cfg,
            condition,
            method,
            data,
            out: &opts.out_dir,
            rel: cell_dir(condition, method, data.seed),
            fingerprint: cell_fingerprint(cfg, condition, method, data.seed),
            resume: opts.resume,
        }
    }

    fn dir(&self) -> PathBuf {
        self.out.join(&self.rel)
    }

    fn seed(&self, label: &str) -> u64 {
        derive_seed(self.data.seed, &[tag(label)])
    }

    fn add_spec(&self) -> &CorruptionSpec {
        self.cfg.add_spec_for(self.method, self.condition)
    }

    fn train_config(&self, validation_size: usize) -> TrainConfig {
        let t = &self.cfg.training;
        let mode = match self.method.kind {
            MethodKind::Ctt => TrainMode::Ctt,
            MethodKind::Mixit => TrainMode::Mixit,
            MethodKind::Nytt | MethodKind::IterNytt => TrainMode::Nytt,
        };
        let loss = self.method.loss.clone().unwrap_or_else(|| t.loss.clone());
        let mut tc = TrainConfig::new(mode, loss, self.add_spec().clone());
        tc.epochs = t.epochs;
        tc.batch_size = t.batch_size;
        tc.learning_rate = t.learning_rate;
        tc.seed = self.seed("training");
        tc.validation_size = validation_size;
        tc.validation_spec = self.cfg.validation.spec.clone();
        tc.validation_every = t.validation_every;
        tc.patience = t.patience;
        tc
    }

    fn new_model(&self) -> Result<EnhancerModel> {
        let arch = match self.method.kind {
            MethodKind::Mixit => self.cfg.model.clone().with_sources(3),
            _ => self.cfg.model.clone(),
        };
        Ok(EnhancerModel::new(arch, self.seed("model"))?)
    }

    /// The observed (noisy) training and validation targets.
    fn observed(&self) -> Result<(Vec<Waveform>, Vec<Waveform>, DatasetManifest)> {
        let ctx = &self.data.ctx;
        let (x, manifest) = build_dataset(ctx, &self.data.train_clean, &self.condition.obs_spec, self.seed("obs"))?;
        let (xv, _) =
            build_dataset(ctx, &self.data.validation_clean, &self.condition.obs_spec, self.seed("obs_validation"))?;
        Ok((x, xv, manifest))
    }

    fn targets(&self, x: Vec<Waveform>, xv: Vec<Waveform>) -> Result<Targets> {
        let clean = &self.data.train_clean;
        let validation = match (self.cfg.validation.targets, self.method.kind) {
            (ValidationTargets::Clean, _) | (_, MethodKind::Ctt) => self.data.validation_clean.clone(),
            _ => xv,
        };
        if self.method.kind == MethodKind::Ctt {
            return Ok(Targets { targets: clean.clone(), refs: clean.clone(), validation });
        }
        let k = self.cfg.volume_clean_items;
        let (targets, refs) = match self.condition.volume {
            None => (x, clean.clone()),
            Some(VolumeSplit::CleanOnly) => (clean[..k].to_vec(), clean[..k].to_vec()),
            Some(VolumeSplit::NoisyOnly) => (x[k..].to_vec(), clean[k..].to_vec()),
            Some(VolumeSplit::CleanNoisy) => ([&clean[..k], &x[k..]].concat(), clean.clone()),
            Some(VolumeSplit::CleanEnhanced) => {
                let enhancer = self.clean_only_model()?;
                let enhanced = enhance_all(&enhancer, &x[k..])?;
                ([&clean[..k], &enhanced[..]].concat(), clean.clone())
            }
        };
        Ok(Targets { targets, refs, validation })
    }

    /// The clean-only model of the same volume study, from its checkpoint
    /// when present.
    fn clean_only_model(&self) -> Result<EnhancerModel> {
        let sibling_condition = self.condition.with_volume(VolumeSplit::CleanOnly);
        let opts = RunOptions { out_dir: self.out.to_path_buf(), resume: true, workers: 1 };
        let sibling = Cell::new(self.cfg, &sibling_condition, self.method, self.data, &opts);
        if let Some((m, _)) = sibling.load_checkpoint("model.json") {
            return Ok(m);
        }
        let (x, xv, _) = sibling.observed()?;
        let t = sibling.targets(x, xv)?;
        Ok(sibling.train_single(&t)?.0)
    }

    fn load_checkpoint(&self, name: &str) -> Option<(EnhancerModel, TrainingSummary)> {
        let text = std::fs::read_to_string(self.dir().join(name)).ok()?;
        let ck = Checkpoint::from_json(&text).ok()?;
        if ck.config_fingerprint != self.checkpoint_fingerprint(name) {
            return None;
        }
        let summary: TrainingSummary = read_json(&self.dir().join(name.replace("model", "training"))).ok()?;
        Some((ck.model, summary))
    }

    fn checkpoint_fingerprint(&self, name: &str) -> String {
        fingerprint(&(&self.fingerprint, name))
    }

    fn save_checkpoint(&self, name: &str, model: &EnhancerModel, summary: &TrainingSummary) -> Result<String> {
        let ck = Checkpoint::new(model.clone(), None, summary.best_epoch, self.checkpoint_fingerprint(name));
        write_atomic(&self.dir().join(name), ck.to_json().as_bytes())?;
        write_json(&self.dir().join(name.replace("model", "training")), summary)?;
        Ok(with_hash(&format!("{}/{name}", self.rel), &ck))
    }

    fn train_single(&self, t: &Targets) -> Result<(EnhancerModel, TrainingSummary)> {
        let tc = self.train_config(t.validation.len());
        let model = self.new_model()?;
        let r = train_with_validation(&self.data.ctx, model, &t.targets, &t.validation, &tc)?;
        Ok((r.best_model, TrainingSummary { best_epoch: r.best_epoch, train_loss: r.train_loss, val_loss: r.val_loss }))
    }

    fn base_row(&self, method: String) -> ResultRow {
        ResultRow {
            condition: self.condition.key.clone(),
            points: self.condition.points.clone(),
            seed: self.data.seed,
            method,
            status: CellStatus::Ok,
            metrics: BTreeMap::new(),
            artifacts: BTreeMap::from([(
                "test_manifest".to_string(),
                with_hash(&format!("seed{}/test_manifest.json", self.data.seed), &self.data.test_manifest),
            )]),
        }
    }

    fn test_metrics(&self, model: &EnhancerModel, row: &mut ResultRow, eval_name: &str) -> Result<()> {
        let enhanced = enhance_all(model, &self.data.test_noisy)?;
        let report = evaluate(&enhanced, &self.data.test_clean)?;
        write_json(&self.dir().join(eval_name), &report)?;
        let m = &mut row.metrics;
        let un = &self.data.unprocessed;
        for metric in [Metric::SiSdr, Metric::LogSpectralDistance] {
            let name = metric.name();
            m.insert(name.to_string(), report.mean(metric).expect("metric present"));
            m.insert(format!("unprocessed_{name}"), un.mean(metric).expect("metric present"));
        }
        m.insert("si_sdr_gain".into(), m["si_sdr"] - m["unprocessed_si_sdr"]);
        Ok(())
    }

    fn summary_metrics(row: &mut ResultRow, s: &TrainingSummary) {
        let m = &mut row.metrics;
        m.insert("best_epoch".into(), s.best_epoch as f64);
        m.insert("epochs_run".into(), s.train_loss.len() as f64);
        if let Some(v) = s.train_loss.last() {
            m.insert("final_train_loss".into(), *v);
        }
        if let Some(v) = s.val_loss.iter().find(|v| v.0 == s.best_epoch) {
            m.insert("best_val_loss".into(), v.1);
        }
    }

    fn run(&self) -> Vec<ResultRow> {
        if self.resume {
            if let Ok(rec) = read_json::<CellRecord>(&self.dir().join(RECORD_FILE)) {
                if rec.fingerprint == self.fingerprint {
                    return rec.rows;
                }
            }
        }
        let rows = match self.method.kind {
            MethodKind::IterNytt => self.run_iternytt(),
            _ => self.run_single().map(|r| vec![r]),
        };
        let rows = rows.unwrap_or_else(|e| {
            self.method
                .row_names()
                .into_iter()
                .map(|name| ResultRow { status: CellStatus::Failed { reason: e.to_string() }, ..self.base_row(name) })
                .collect()
        });
        let record = CellRecord { fingerprint: self.fingerprint.clone(), rows: rows.clone() };
        if let Err(e) = write_json(&self.dir().join(RECORD_FILE), &record) {
            warn!("{}: could not write the cell record: {e}", self.rel);
        }
        rows
    }

    fn run_single(&self) -> Result<ResultRow> {
        let (x, xv, manifest) = self.observed()?;
        write_json(&self.dir().join("targets_manifest.json"), &manifest)?;
        let t = self.targets(x, xv)?;
        let refs = CleanReferences::new(self.data.train_clean.clone());
        let cached = if self.resume { self.load_checkpoint("model.json") } else { None };
        let (model, summary) = match cached {
            Some(c) => c,
            None => {
                let _audit = (self.method.kind != MethodKind::Ctt).then(|| refs.lock());
                self.train_single(&t)?
            }
        };
        if refs.denied() > 0 {
            return Err(Error::Config("clean references were read during unsupervised training".into()));
        }
        let mut row = self.base_row(self.method.label().to_string());
        row.artifacts.insert("checkpoint".into(), self.save_checkpoint("model.json", &model, &summary)?);
        row.artifacts
            .insert("targets_manifest".into(), with_hash(&format!("{}/targets_manifest.json", self.rel), &manifest));
        Self::summary_metrics(&mut row, &summary);
        row.metrics.insert("target_si_sdr".into(), mean_si_sdr(&t.targets, &t.refs)?);
        self.test_metrics(&model, &mut row, "eval.json")?;
        if self.cfg.triplet && self.method.kind == MethodKind::Nytt && self.condition.volume.is_none() {
            let ctx = &self.data.ctx;
            let seed = self.seed("triplet");
            let train = analyze_triplet(ctx, &model, &t.targets, &refs, self.add_spec(), seed)?;
            let test_refs = CleanReferences::new(self.data.test_clean.clone());
            let test = analyze_triplet(ctx, &model, &self.data.test_noisy, &test_refs, self.add_spec(), seed)?;
            for (split, r) in [("train", train.mean), ("test", test.mean)] {
                row.metrics.insert(format!("triplet_{split}_x"), r.x);
                row.metrics.insert(format!("triplet_{split}_y"), r.y);
                row.metrics.insert(format!("triplet_{split}_fy"), r.fy);
            }
        }
        Ok(row)
    }

    fn run_iternytt(&self) -> Result<Vec<ResultRow>> {
        let (x, xv, manifest) = self.observed()?;
        write_json(&self.dir().join("targets_manifest.json"), &manifest)?;
        let n = x.len();
        // Validation items ride along at the end and are retargeted too.
        let all_x = [x, xv].concat();
        let k = self.method.iterations;
        let names: Vec<String> = (1..=k).map(|i| format!("model_i{i}.json")).collect();
        let cached: Option<Vec<_>> =
            if self.resume { names.iter().map(|nm| self.load_checkpoint(nm)).collect() } else { None };
        let (models, error) = match cached {
            Some(c) => (c, None),
            None => {
                let ic = IterNyttConfig {
                    train: self.train_config(self.data.validation_clean.len()),
                    iterations: k,
                    later_add_specs: self.method.later_add_specs.clone(),
                    warm_start: self.method.warm_start,
                };
                let arch = self.cfg.model.clone();
                let refs = CleanReferences::new(self.data.train_clean.clone());
                let outcome = {
                    let _audit = refs.lock();
                    run_iternytt(&self.data.ctx, &arch, self.seed("model"), &all_x, &ic, None)?
                };
                let models = outcome
                    .states
                    .into_iter()
                    .map(|s: IterationState| {
                        (
                            s.model,
                            TrainingSummary {
                                best_epoch: s.best_epoch,
                                train_loss: s.train_loss,
                                val_loss: s.val_loss,
                            },
                        )
                    })
                    .collect();
                (models, outcome.error)
            }
        };
        let mut rows = Vec::new();
        let mut targets = all_x.clone();
        for (i, (model, summary)) in models.iter().enumerate() {
            let mut row = self.base_row(format!("{}@{}", self.method.label(), i + 1));
            row.artifacts.insert("checkpoint".into(), self.save_checkpoint(&names[i], model, summary)?);
            row.artifacts.insert(
                "targets_manifest".into(),
                with_hash(&format!("{}/targets_manifest.json", self.rel), &manifest),
            );
            Self::summary_metrics(&mut row, summary);
            row.metrics.insert("iteration".into(), (i + 1) as f64);
            row.metrics.insert("target_si_sdr".into(), mean_si_sdr(&targets[..n], &self.data.train_clean)?);
            targets = enhance_all(model, &all_x)?;
            row.metrics.insert("next_target_si_sdr".into(), mean_si_sdr(&targets[..n], &self.data.train_clean)?);
            self.test_metrics(model, &mut row, &format!("eval_i{}.json", i + 1))?;
            rows.push(row);
        }
        for i in models.len()..k {
            let reason = error.as_ref().map_or("not run".to_string(), |e| e.to_string());
            rows.push(ResultRow {
                status: CellStatus::Failed { reason: format!("iteration {}: {reason}", i + 1) },
                ..self.base_row(format!("{}@{}", self.method.label(), i + 1))
            });
        }
        Ok(rows)
    }
}

fn axes_info(cfg: &ExperimentConfig) -> Vec<AxisInfo> {
    cfg.sweeps.iter().map(|a| AxisInfo { name: a.name().to_string(), numeric: a.is_numeric() }).collect()
}

/// Runs every cell of `cfg`, writing artifacts, the run manifest and the
/// table under `opts.out_dir`. Cell failures land in the table; only a bad
/// configuration or an unusable output directory is an error.
pub fn run_experiment(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<ResultsTable> {
    cfg.validate()?;
    std::fs::create_dir_all(&opts.out_dir).map_err(Error::io(&opts.out_dir))?;
    let conditions = cfg.conditions()?;
    let mut seeds = Vec::new();
    let mut seed_errors = BTreeMap::new();
    for &s in &cfg.seeds {
        match prepare_seed(cfg, s, &opts.out_dir) {
            Ok(d) => seeds.push(d),
            Err(e) => {
                warn!("seed {s}: {e}");
                seed_errors.insert(s, e.to_string());
            }
        }
    }
    let mut jobs = Vec::new();
    for ci in 0..conditions.len() {
        for mi in 0..cfg.methods.len() {
            jobs.extend(cfg.seeds.iter().map(|&s| (ci, mi, s)));
        }
    }
    let results: Mutex<Vec<Option<Vec<ResultRow>>>> = Mutex::new(vec![None; jobs.len()]);
    let next = AtomicUsize::new(0);
    let workers = opts.workers.clamp(1, jobs.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let j = next.fetch_add(1, Ordering::SeqCst);
                let Some(&(ci, mi, s)) = jobs.get(j) else { break };
                let (condition, method) = (&conditions[ci], &cfg.methods[mi]);
                let rows = match seeds.iter().find(|d| d.seed == s) {
                    Some(data) => {
                        let cell = Cell::new(cfg, condition, method, data, opts);
                        info!("cell {} ({}/{})", cell.rel, j + 1, jobs.len());
                        cell.run()
                    }
                    None => method
                        .row_names()
                        .into_iter()
                        .map(|name| ResultRow {
                            condition: condition.key.clone(),
                            points: condition.points.clone(),
                            seed: s,
                            method: name,
                            status: CellStatus::Failed { reason: format!("seed setup failed: {}", seed_errors[&s]) },
                            metrics: BTreeMap::new(),
                            artifacts: BTreeMap::new(),
                        })
                        .collect(),
                };
                results.lock().expect("results lock")[j] = Some(rows);
            });
        }
    });
    // Single writer: merge cell records in configuration order.
    let results = results.into_inner().expect("results lock");
    let mut by_cell: BTreeMap<(usize, usize, u64), Vec<ResultRow>> = BTreeMap::new();
    for (job, rows) in jobs.iter().zip(results) {
        by_cell.insert(*job, rows.expect("every job ran"));
    }
    let mut rows = Vec::new();
    for ci in 0..conditions.len() {
        for (mi, m) in cfg.methods.iter().enumerate() {
            for (ri, _) in m.row_names().iter().enumerate() {
                for &s in &cfg.seeds {
                    rows.push(by_cell[&(ci, mi, s)][ri].clone());
                }
            }
        }
    }
    let mut table = ResultsTable {
        experiment: cfg.name.clone(),
        config_fingerprint: cfg.fingerprint(),
        axes: axes_info(cfg),
        rows,
        trends: vec![],
    };
    table.trends = axis_trends(&table, Metric::SiSdr.name());
    let manifest = RunManifest {
        config: cfg.clone(),
        config_fingerprint: cfg.fingerprint(),
        seeds: seeds
            .iter()
            .map(|d| SeedRecord {
                seed: d.seed,
                train_clean_hash: nytt_core::train::corpus_hash(&d.train_clean),
                validation_clean_hash: nytt_core::train::corpus_hash(&d.validation_clean),
                test_clean_hash: nytt_core::train::corpus_hash(&d.test_clean),
                test_manifest: with_hash(&format!("seed{}/test_manifest.json", d.seed), &d.test_manifest),
            })
            .collect(),
        cells: jobs
            .iter()
            .map(|&(ci, mi, s)| CellEntry {
                condition: conditions[ci].key.clone(),
                method: cfg.methods[mi].label().to_string(),
                seed: s,
                dir: cell_dir(&conditions[ci], &cfg.methods[mi], s),
                fingerprint: cell_fingerprint(cfg, &conditions[ci], &cfg.methods[mi], s),
            })
            .collect(),
    };
    write_json(&opts.out_dir.join(RUN_MANIFEST_FILE), &manifest)?;
    write_json(&opts.out_dir.join(RESULTS_FILE), &table)?;
    Ok(table)
}

/// Runs `cfg` along a single axis (replacing any configured sweeps).
pub fn sweep(cfg: &ExperimentConfig, axis: SweepAxis, opts: &RunOptions) -> Result<ResultsTable> {
    let mut c = cfg.clone();
    c.sweeps = vec![axis];
    run_experiment(&c, opts)
}
