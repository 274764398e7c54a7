//! Command-line front end.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::info;
use nytt_core::metrics::{evaluate_corpus, EvalPair, Metric};
use nytt_core::models::Checkpoint;
use nytt_core::rng::{derive_seed, tag};
use nytt_core::synth::{
    build_dataset, generate_clean_corpus_with, generate_rir_pool, CorruptionSpec, DatasetManifest, SpeechConfig,
    SynthesisContext,
};
use nytt_core::train::enhance;
use serde::{Deserialize, Serialize};

use crate::config::{resolve, ExperimentConfig, MethodKind, RirPoolConfig};
use crate::error::{Error, Result};
use crate::harness::{load_experiment, run_experiment, RunOptions};
use crate::io::{read_json, read_wav, read_wav_dir, write_atomic, write_json, write_wav};
use crate::report::{emit_report, metrics_csv, ReportKind};
use crate::table::ResultsTable;

#[derive(Debug, Parser)]
#[command(name = "nytt", version, about = "Noisy-target training experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Config file (JSON).
    pub config: PathBuf,
    /// Overrides the configured seed(s).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Reuse finished work found in the output directory.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesise a clean corpus and its corrupted targets as WAV files.
    Synth(Common),
    /// Train the non-iterative methods of an experiment on its base condition.
    Train(Common),
    /// Enhance WAV files with a checkpoint.
    Enhance(Common),
    /// Score estimate WAVs against reference WAVs.
    Eval(Common),
    /// Run the IterNyTT methods of an experiment on its base condition.
    Iternytt(Common),
    /// Run a full experiment grid and write its report.
    Experiment {
        #[command(flatten)]
        common: Common,
        /// Cells trained in parallel.
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Render CSV, JSON and SVG files from a results table.
    Report(Common),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    #[serde(default = "default_items")]
    pub items: usize,
    #[serde(default = "default_duration")]
    pub duration_s: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub speech: SpeechConfig,
    #[serde(default)]
    pub rir_pools: Vec<RirPoolConfig>,
    /// Read clean items from this WAV directory instead of synthesising.
    #[serde(default)]
    pub clean_dir: Option<PathBuf>,
    pub spec: CorruptionSpec,
}

fn default_items() -> usize {
    10
}

fn default_duration() -> f64 {
    2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnhanceConfig {
    pub checkpoint: PathBuf,
    /// A WAV file or a directory of them.
    pub inputs: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub estimates: PathBuf,
    pub references: PathBuf,
}

fn base_dir(config: &Path) -> PathBuf {
    config.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn out_dir(c: &Common, fallback: PathBuf) -> PathBuf {
    c.out.clone().unwrap_or(fallback)
}

/// A synth document is either a full [`SynthConfig`] or a bare corruption
/// spec with default sizes.
fn load_synth(path: &Path) -> Result<SynthConfig> {
    let v: serde_json::Value = read_json(path)?;
    let json_err = |source| Error::Json { path: path.to_path_buf(), source };
    if v.get("spec").is_some() {
        serde_json::from_value(v).map_err(json_err)
    } else {
        let spec: CorruptionSpec = serde_json::from_value(v).map_err(json_err)?;
        Ok(SynthConfig {
            items: default_items(),
            duration_s: default_duration(),
            seed: 0,
            speech: SpeechConfig::default(),
            rir_pools: vec![],
            clean_dir: None,
            spec,
        })
    }
}

pub fn synth(c: &Common) -> Result<DatasetManifest> {
    let mut cfg = load_synth(&c.config)?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    let out = out_dir(c, PathBuf::from("nytt-out/synth"));
    let manifest_path = out.join("manifest.json");
    if c.resume {
        if let Ok(m) = read_json::<DatasetManifest>(&manifest_path) {
            if m.global_seed == cfg.seed && m.spec == cfg.spec {
                info!("{} is up to date", manifest_path.display());
                return Ok(m);
            }
        }
    }
    let rate = cfg.speech.sample_rate_hz;
    let mut ctx = SynthesisContext::new(rate);
    for p in &cfg.rir_pools {
        ctx = ctx.with_pool(
            p.name.clone(),
            generate_rir_pool(p.bucket, &p.name, p.count, derive_seed(cfg.seed, &[tag("rir_pool")]), rate)?,
        );
    }
    let clean = match &cfg.clean_dir {
        Some(d) => read_wav_dir(&resolve(&base_dir(&c.config), d))?.into_iter().map(|(_, w)| w).collect(),
        None => generate_clean_corpus_with(&cfg.speech, cfg.items, cfg.duration_s, cfg.seed)?,
    };
    let (targets, mut manifest) = build_dataset(&ctx, &clean, &cfg.spec, cfg.seed)?;
    for (item, (s, x)) in manifest.items.iter_mut().zip(clean.iter().zip(&targets)) {
        let clean_path = format!("clean/{}.wav", item.item_id);
        let target_path = format!("target/{}.wav", item.item_id);
        write_wav(&out.join(&clean_path), s)?;
        write_wav(&out.join(&target_path), x)?;
        item.clean_path = Some(clean_path);
        item.target_path = Some(target_path);
    }
    write_json(&manifest_path, &manifest)?;
    Ok(manifest)
}

fn experiment_config(c: &Common) -> Result<ExperimentConfig> {
    let mut cfg = load_experiment(&c.config)?;
    if let Some(s) = c.seed {
        cfg.seeds = vec![s];
    }
    if let Some(d) = &cfg.output_dir {
        cfg.output_dir = Some(resolve(&base_dir(&c.config), d));
    }
    Ok(cfg)
}

fn default_run_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.output_dir.clone().unwrap_or_else(|| PathBuf::from("nytt-out").join(&cfg.name))
}

fn run_subset(c: &Common, keep: impl Fn(MethodKind) -> bool, suffix: &str) -> Result<ResultsTable> {
    let mut cfg = experiment_config(c)?;
    cfg.sweeps.clear();
    cfg.methods.retain(|m| keep(m.kind));
    if cfg.methods.is_empty() {
        return Err(Error::Config(format!("no methods for `{suffix}` in {}", c.config.display())));
    }
    if c.seed.is_none() {
        cfg.seeds.truncate(1);
    }
    let out = out_dir(c, default_run_dir(&cfg).join(suffix));
    let mut opts = RunOptions::new(out);
    opts.resume = c.resume;
    run_experiment(&cfg, &opts)
}

pub fn train(c: &Common) -> Result<ResultsTable> {
    run_subset(c, |k| k != MethodKind::IterNytt, "train")
}

pub fn iternytt(c: &Common) -> Result<ResultsTable> {
    run_subset(c, |k| k == MethodKind::IterNytt, "iternytt")
}

pub fn experiment(c: &Common, workers: usize) -> Result<ResultsTable> {
    let cfg = experiment_config(c)?;
    let out = out_dir(c, default_run_dir(&cfg));
    let opts = RunOptions { out_dir: out.clone(), resume: c.resume, workers };
    let table = run_experiment(&cfg, &opts)?;
    emit_report(&table, &ReportKind::ALL, &out.join("report"))?;
    Ok(table)
}

pub fn enhance_files(c: &Common) -> Result<Vec<PathBuf>> {
    let cfg: EnhanceConfig = read_json(&c.config)?;
    let base = base_dir(&c.config);
    let ck_path = resolve(&base, &cfg.checkpoint);
    let text = std::fs::read_to_string(&ck_path).map_err(Error::io(&ck_path))?;
    let model = Checkpoint::from_json(&text)?.model;
    let inputs = resolve(&base, &cfg.inputs);
    let items = if inputs.is_dir() {
        read_wav_dir(&inputs)?
    } else {
        vec![(inputs.file_stem().unwrap_or_default().to_string_lossy().into_owned(), read_wav(&inputs)?)]
    };
    let out = out_dir(c, PathBuf::from("nytt-out/enhanced"));
    let mut written = Vec::new();
    for (name, y) in items {
        let p = out.join(format!("{name}.wav"));
        write_wav(&p, &enhance(&model, &y)?)?;
        written.push(p);
    }
    Ok(written)
}

pub fn eval(c: &Common) -> Result<nytt_core::metrics::MetricsReport> {
    let cfg: EvalConfig = read_json(&c.config)?;
    let base = base_dir(&c.config);
    let est = read_wav_dir(&resolve(&base, &cfg.estimates))?;
    let refs = read_wav_dir(&resolve(&base, &cfg.references))?;
    let mut pairs: Vec<EvalPair> = Vec::new();
    for (name, e) in &est {
        let r = refs
            .iter()
            .find(|(n, _)| n == name)
            .ok_or_else(|| Error::Config(format!("no reference for estimate {name}")))?;
        pairs.push((name.as_str(), e.samples(), r.1.samples()));
    }
    let report = evaluate_corpus(&pairs, &[Metric::SiSdr, Metric::LogSpectralDistance])?;
    let out = out_dir(c, PathBuf::from("nytt-out/eval"));
    write_json(&out.join("metrics.json"), &report)?;
    write_atomic(&out.join("metrics.csv"), &metrics_csv(&report)?)?;
    Ok(report)
}

pub fn report(c: &Common) -> Result<ResultsTable> {
    let table: ResultsTable = read_json(&c.config)?;
    let out = out_dir(c, base_dir(&c.config).join("report"));
    emit_report(&table, &ReportKind::ALL, &out)?;
    Ok(table)
}

/// Runs a command; `Ok(false)` means some configured cell failed.
pub fn run(cli: &Cli) -> Result<bool> {
    let finish = |t: ResultsTable| {
        for r in t.failed() {
            log::error!("failed: {} / {} / seed {}: {:?}", r.condition, r.method, r.seed, r.status);
        }
        println!("{} rows, {} failed", t.rows.len(), t.failed().count());
        t.all_ok()
    };
    match &cli.command {
        Command::Synth(c) => {
            let m = synth(c)?;
            println!("{} items", m.items.len());
            Ok(true)
        }
        Command::Train(c) => Ok(finish(train(c)?)),
        Command::Iternytt(c) => Ok(finish(iternytt(c)?)),
        Command::Experiment { common, workers } => Ok(finish(experiment(common, *workers)?)),
        Command::Enhance(c) => {
            let files = enhance_files(c)?;
            println!("{} files enhanced", files.len());
            Ok(true)
        }
        Command::Eval(c) => {
            let r = eval(c)?;
            for (k, v) in &r.aggregate {
                println!("{k}: {v:.3}");
            }
            Ok(true)
        }
        Command::Report(c) => Ok(finish(report(c)?)),
    }
}
