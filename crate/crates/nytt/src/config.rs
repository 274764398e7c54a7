//! Declarative experiment descriptions and their expansion into conditions.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use nytt_core::fingerprint::fingerprint;
use nytt_core::losses::Loss;
use nytt_core::models::Architecture;
use nytt_core::synth::{
    standard_families, CorruptionSpec, NoiseFamily, Partition, Rt60Bucket, SnrDist, SpeechConfig, IDENTITY_POOL,
};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Denoise,
    Dereverb,
    Declip,
}

impl Task {
    fn spec_kind(self) -> &'static str {
        match self {
            Task::Denoise => "additive_noise",
            Task::Dereverb => "reverberation",
            Task::Declip => "clipping",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub train_items: usize,
    pub validation_items: usize,
    pub test_items: usize,
    pub duration_s: f64,
    #[serde(default)]
    pub speech: SpeechConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RirPoolConfig {
    pub name: String,
    pub role: Partition,
    pub bucket: Rt60Bucket,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSettings {
    pub loss: Loss,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    #[serde(default = "one")]
    pub validation_every: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub patience: Option<usize>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValidationTargets {
    /// Same kind of target as training: clean for CTT, noisy otherwise.
    #[default]
    Matched,
    /// Clean utterances for every method.
    Clean,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationSettings {
    #[serde(default)]
    pub targets: ValidationTargets,
    /// Corruption for validation inputs; defaults to the method's add spec.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec: Option<CorruptionSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodKind {
    Ctt,
    Nytt,
    Mixit,
    IterNytt,
}

impl MethodKind {
    pub fn name(self) -> &'static str {
        match self {
            MethodKind::Ctt => "ctt",
            MethodKind::Nytt => "nytt",
            MethodKind::Mixit => "mixit",
            MethodKind::IterNytt => "iter_nytt",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSpec {
    pub kind: MethodKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    /// Replaces the experiment's add spec for this method.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub add_spec: Option<CorruptionSpec>,
    /// Replaces the training loss for this method.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss: Option<Loss>,
    #[serde(default = "one")]
    pub iterations: usize,
    /// IterNyTT: add specs for iterations 2, 3, ...; the last one repeats.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub later_add_specs: Vec<CorruptionSpec>,
    #[serde(default)]
    pub warm_start: bool,
}

impl MethodSpec {
    pub fn new(kind: MethodKind) -> Self {
        MethodSpec {
            kind,
            label: None,
            add_spec: None,
            loss: None,
            iterations: 1,
            later_add_specs: vec![],
            warm_start: false,
        }
    }

    pub fn label(&self) -> &str {
        self.label.as_deref().unwrap_or(self.kind.name())
    }

    /// Row names this method produces: one per IterNyTT iteration.
    pub fn row_names(&self) -> Vec<String> {
        match self.kind {
            MethodKind::IterNytt => (1..=self.iterations).map(|i| format!("{}@{i}", self.label())).collect(),
            _ => vec![self.label().to_string()],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VolumeSplit {
    CleanOnly,
    NoisyOnly,
    CleanNoisy,
    CleanEnhanced,
}

impl VolumeSplit {
    pub fn name(self) -> &'static str {
        match self {
            VolumeSplit::CleanOnly => "clean_only",
            VolumeSplit::NoisyOnly => "noisy_only",
            VolumeSplit::CleanNoisy => "clean_noisy",
            VolumeSplit::CleanEnhanced => "clean_enhanced",
        }
    }
}

/// Noise families (by catalog id) for the observation and added roles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseRoles {
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub obs: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub add: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "axis", content = "values", rename_all = "snake_case")]
pub enum SweepAxis {
    /// Fixed SNR of the observed corruption (noise or clipping).
    SnrX(Vec<f64>),
    /// Uniform SNR_y range `[low, high]` of the added noise.
    SnrY(Vec<[f64; 2]>),
    /// Names of the RIR pools used for the observed reverberation.
    Rt60(Vec<String>),
    ClipSnr(Vec<f64>),
    Volume(Vec<VolumeSplit>),
    NoiseRoles(Vec<NoiseRoles>),
}

impl SweepAxis {
    pub fn name(&self) -> &'static str {
        match self {
            SweepAxis::SnrX(_) => "snr_x",
            SweepAxis::SnrY(_) => "snr_y",
            SweepAxis::Rt60(_) => "rt60",
            SweepAxis::ClipSnr(_) => "clip_snr",
            SweepAxis::Volume(_) => "volume",
            SweepAxis::NoiseRoles(_) => "noise_roles",
        }
    }

    pub fn len(&self) -> usize {
        match self {
            SweepAxis::SnrX(v) | SweepAxis::ClipSnr(v) => v.len(),
            SweepAxis::SnrY(v) => v.len(),
            SweepAxis::Rt60(v) => v.len(),
            SweepAxis::Volume(v) => v.len(),
            SweepAxis::NoiseRoles(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Whether the axis value is a physical quantity (as opposed to an index).
    pub fn is_numeric(&self) -> bool {
        matches!(self, SweepAxis::SnrX(_) | SweepAxis::SnrY(_) | SweepAxis::Rt60(_) | SweepAxis::ClipSnr(_))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub task: Task,
    #[serde(default = "default_rate")]
    pub sample_rate_hz: u32,
    pub corpus: CorpusConfig,
    /// Catalog that noise-role sweeps pick families from.
    #[serde(default = "default_families")]
    pub noise_families: Vec<NoiseFamily>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rir_pools: Vec<RirPoolConfig>,
    pub obs_spec: CorruptionSpec,
    pub add_spec: CorruptionSpec,
    pub test_spec: CorruptionSpec,
    pub methods: Vec<MethodSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sweeps: Vec<SweepAxis>,
    /// Volume sweeps: the first this-many training items stay clean.
    #[serde(default)]
    pub volume_clean_items: usize,
    pub seeds: Vec<u64>,
    pub model: Architecture,
    pub training: TrainingSettings,
    #[serde(default)]
    pub validation: ValidationSettings,
    /// Add signal-triplet columns to NyTT rows.
    #[serde(default)]
    pub triplet: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

fn one() -> usize {
    1
}

fn default_rate() -> u32 {
    nytt_core::dsp::DEFAULT_SAMPLE_RATE
}

fn default_families() -> Vec<NoiseFamily> {
    standard_families(Partition::Obs).to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisPoint {
    pub axis: String,
    pub label: String,
    pub value: f64,
}

/// One point of the sweep product with its resolved corruption specs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Condition {
    pub key: String,
    pub points: Vec<AxisPoint>,
    pub obs_spec: CorruptionSpec,
    pub add_spec: CorruptionSpec,
    pub volume: Option<VolumeSplit>,
}

impl Condition {
    fn rekey(&mut self) {
        self.key = if self.points.is_empty() {
            "base".to_string()
        } else {
            self.points.iter().map(|p| format!("{}={}", p.axis, p.label)).collect::<Vec<_>>().join(",")
        };
    }

    /// The same condition with a different volume split.
    pub fn with_volume(&self, split: VolumeSplit) -> Condition {
        let mut c = self.clone();
        c.volume = Some(split);
        for p in c.points.iter_mut().filter(|p| p.axis == "volume") {
            p.label = split.name().to_string();
        }
        c.rekey();
        c
    }
}

fn families_of(spec: &CorruptionSpec) -> &[NoiseFamily] {
    match spec {
        CorruptionSpec::AdditiveNoise { noise, .. } => noise,
        _ => &[],
    }
}

fn with_snr(spec: &CorruptionSpec, snr: SnrDist) -> Result<CorruptionSpec> {
    match spec {
        CorruptionSpec::AdditiveNoise { noise, .. } => {
            Ok(CorruptionSpec::AdditiveNoise { noise: noise.clone(), snr_db: snr })
        }
        CorruptionSpec::Clipping { .. } => Ok(CorruptionSpec::Clipping { snr_db: snr }),
        CorruptionSpec::Reverberation { .. } => Err(Error::Config("reverberation has no SNR to sweep".into())),
    }
}

fn with_families(spec: &CorruptionSpec, families: Vec<NoiseFamily>) -> Result<CorruptionSpec> {
    match spec {
        CorruptionSpec::AdditiveNoise { snr_db, .. } => {
            Ok(CorruptionSpec::AdditiveNoise { noise: families, snr_db: snr_db.clone() })
        }
        _ => Err(Error::Config("noise roles apply to additive noise only".into())),
    }
}

fn fmt_num(v: f64) -> String {
    format!("{v}")
}

impl ExperimentConfig {
    pub fn fingerprint(&self) -> String {
        let mut c = self.clone();
        c.output_dir = None;
        fingerprint(&c)
    }

    pub fn pool(&self, name: &str) -> Option<&RirPoolConfig> {
        self.rir_pools.iter().find(|p| p.name == name)
    }

    fn family(&self, id: &str, partition: Partition) -> Result<NoiseFamily> {
        self.noise_families
            .iter()
            .find(|f| f.id == id)
            .map(|f| f.with_partition(partition))
            .ok_or_else(|| Error::Config(format!("unknown noise family {id:?}")))
    }

    fn check_spec(&self, spec: &CorruptionSpec, role: Partition, what: &str) -> Result<()> {
        spec.validate().map_err(|e| Error::Config(format!("{what}: {e}")))?;
        if spec.kind_name() != self.task.spec_kind() {
            return Err(Error::Config(format!(
                "{what}: a {} spec does not fit a {:?} task",
                spec.kind_name(),
                self.task
            )));
        }
        if let Some(f) = families_of(spec).iter().find(|f| f.partition != role) {
            return Err(Error::Config(format!(
                "{what}: family {} comes from the {} partition, expected {}",
                f.id,
                f.partition.name(),
                role.name()
            )));
        }
        if let CorruptionSpec::Reverberation { rir_pool } = spec {
            if rir_pool != IDENTITY_POOL {
                let p = self
                    .pool(rir_pool)
                    .ok_or_else(|| Error::Config(format!("{what}: unknown RIR pool {rir_pool:?}")))?;
                if p.role != role {
                    return Err(Error::Config(format!(
                        "{what}: pool {rir_pool} has role {}, expected {}",
                        p.role.name(),
                        role.name()
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let c = &self.corpus;
        if c.train_items == 0 || c.test_items == 0 || !(c.duration_s > 0.0) {
            return Err(Error::Config("corpus needs training and test items of positive duration".into()));
        }
        if self.seeds.is_empty() || self.methods.is_empty() {
            return Err(Error::Config("at least one seed and one method are required".into()));
        }
        if self.seeds.iter().collect::<BTreeSet<_>>().len() != self.seeds.len() {
            return Err(Error::Config("duplicate seeds".into()));
        }
        if self.methods.iter().map(|m| m.label()).collect::<BTreeSet<_>>().len() != self.methods.len() {
            return Err(Error::Config("method labels must be unique".into()));
        }
        if self.corpus.speech.sample_rate_hz != self.sample_rate_hz {
            return Err(Error::Config("speech and experiment sample rates differ".into()));
        }
        let mut pool_names = BTreeSet::new();
        for p in &self.rir_pools {
            if p.count == 0 || p.name == IDENTITY_POOL || !pool_names.insert(p.name.as_str()) {
                return Err(Error::Config(format!("RIR pool {:?} must be non-empty and uniquely named", p.name)));
            }
        }
        self.check_spec(&self.obs_spec, Partition::Obs, "obs_spec")?;
        self.check_spec(&self.add_spec, Partition::Add, "add_spec")?;
        self.check_spec(&self.test_spec, Partition::Test, "test_spec")?;
        if let Some(v) = &self.validation.spec {
            self.check_spec(v, Partition::Add, "validation spec")?;
        }
        for m in &self.methods {
            let what = format!("method {}", m.label());
            if let Some(s) = &m.add_spec {
                self.check_spec(s, Partition::Add, &what)?;
            }
            for s in &m.later_add_specs {
                self.check_spec(s, Partition::Add, &what)?;
            }
            if m.iterations == 0 || (m.kind != MethodKind::IterNytt && m.iterations != 1) {
                return Err(Error::Config(format!("{what}: only IterNyTT takes more than one iteration")));
            }
            if let Some(l) = &m.loss {
                l.validate().map_err(|e| Error::Config(format!("{what}: {e}")))?;
            }
            if m.kind == MethodKind::Mixit && self.task != Task::Denoise {
                return Err(Error::Config("MixIT applies to denoising only".into()));
            }
            if m.kind == MethodKind::IterNytt && self.validation.targets != ValidationTargets::Matched {
                return Err(Error::Config(
                    "IterNyTT validates on its own retargeted items; use matched validation".into(),
                ));
            }
        }
        if self.corpus.validation_items == 0 {
            return Err(Error::Config("best-epoch selection needs validation items".into()));
        }
        let mut axes = BTreeSet::new();
        for axis in &self.sweeps {
            if axis.is_empty() {
                return Err(Error::Config(format!("sweep axis {} is empty", axis.name())));
            }
            if !axes.insert(axis.name()) {
                return Err(Error::Config(format!("sweep axis {} given twice", axis.name())));
            }
            match axis {
                SweepAxis::SnrX(_) if self.task == Task::Dereverb => {
                    return Err(Error::Config("snr_x needs noise or clipping".into()))
                }
                SweepAxis::SnrY(_) if self.task == Task::Dereverb => {
                    return Err(Error::Config("snr_y needs noise or clipping".into()))
                }
                SweepAxis::ClipSnr(_) if self.task != Task::Declip => {
                    return Err(Error::Config("clip_snr needs a declipping task".into()))
                }
                SweepAxis::Rt60(pools) => {
                    if self.task != Task::Dereverb {
                        return Err(Error::Config("rt60 needs a dereverberation task".into()));
                    }
                    for p in pools {
                        self.check_spec(
                            &CorruptionSpec::Reverberation { rir_pool: p.clone() },
                            Partition::Obs,
                            "rt60 axis",
                        )?;
                    }
                }
                SweepAxis::Volume(_) => {
                    if self.volume_clean_items == 0 || self.volume_clean_items >= self.corpus.train_items {
                        return Err(Error::Config("volume sweeps need 0 < volume_clean_items < train_items".into()));
                    }
                    if self.methods.iter().any(|m| m.kind != MethodKind::Nytt) {
                        return Err(Error::Config("volume sweeps train with the NyTT loop only".into()));
                    }
                }
                SweepAxis::NoiseRoles(roles) => {
                    if self.task != Task::Denoise {
                        return Err(Error::Config("noise roles need a denoising task".into()));
                    }
                    for r in roles {
                        for id in r.obs.iter().chain(&r.add).flatten() {
                            self.family(id, Partition::Obs)?;
                        }
                    }
                }
                _ => {}
            }
        }
        if axes.contains("snr_x") && axes.contains("clip_snr") {
            return Err(Error::Config("snr_x and clip_snr both set the observed SNR".into()));
        }
        self.model.validate().map_err(|e| Error::Config(format!("model: {e}")))?;
        self.conditions().map(|_| ())
    }

    /// The sweep product, first axis outermost.
    pub fn conditions(&self) -> Result<Vec<Condition>> {
        let mut out = vec![Condition {
            key: String::new(),
            points: vec![],
            obs_spec: self.obs_spec.clone(),
            add_spec: self.add_spec.clone(),
            volume: None,
        }];
        for axis in &self.sweeps {
            let mut next = Vec::new();
            for base in &out {
                for i in 0..axis.len() {
                    let mut c = base.clone();
                    let (label, value) = match axis {
                        SweepAxis::SnrX(v) | SweepAxis::ClipSnr(v) => {
                            c.obs_spec = with_snr(&c.obs_spec, SnrDist::fixed(v[i]))?;
                            (fmt_num(v[i]), v[i])
                        }
                        SweepAxis::SnrY(v) => {
                            let [lo, hi] = v[i];
                            c.add_spec = with_snr(&c.add_spec, SnrDist::Uniform(lo, hi))?;
                            (format!("[{},{})", fmt_num(lo), fmt_num(hi)), 0.5 * (lo + hi))
                        }
                        SweepAxis::Rt60(v) => {
                            let b = self
                                .pool(&v[i])
                                .map(|p| p.bucket)
                                .ok_or_else(|| Error::Config(format!("unknown RIR pool {:?}", v[i])))?;
                            c.obs_spec = CorruptionSpec::Reverberation { rir_pool: v[i].clone() };
                            (b.label(), 0.5 * (b.low_s + b.high_s))
                        }
                        SweepAxis::Volume(v) => {
                            c.volume = Some(v[i]);
                            (v[i].name().to_string(), i as f64)
                        }
                        SweepAxis::NoiseRoles(v) => {
                            let r = &v[i];
                            if let Some(ids) = &r.obs {
                                let fams =
                                    ids.iter().map(|id| self.family(id, Partition::Obs)).collect::<Result<_>>()?;
                                c.obs_spec = with_families(&c.obs_spec, fams)?;
                            }
                            if let Some(ids) = &r.add {
                                let fams =
                                    ids.iter().map(|id| self.family(id, Partition::Add)).collect::<Result<_>>()?;
                                c.add_spec = with_families(&c.add_spec, fams)?;
                            }
                            (r.label.clone(), i as f64)
                        }
                    };
                    c.points.push(AxisPoint { axis: axis.name().to_string(), label, value });
                    next.push(c);
                }
            }
            out = next;
        }
        for c in &mut out {
            c.rekey();
        }
        let keys: BTreeSet<&str> = out.iter().map(|c| c.key.as_str()).collect();
        if keys.len() != out.len() {
            return Err(Error::Config("sweep points must have distinct labels".into()));
        }
        Ok(out)
    }

    /// Effective add spec of `method` under `condition`.
    pub fn add_spec_for<'a>(&'a self, method: &'a MethodSpec, condition: &'a Condition) -> &'a CorruptionSpec {
        method.add_spec.as_ref().unwrap_or(&condition.add_spec)
    }

    /// Number of table rows the configuration asks for.
    pub fn expected_rows(&self) -> Result<usize> {
        let per_condition: usize = self.methods.iter().map(|m| m.row_names().len()).sum();
        Ok(self.conditions()?.len() * self.seeds.len() * per_condition)
    }
}

/// Resolves a path in a config file relative to the file's directory.
pub fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

#[cfg(test)]
pub(crate) mod tests;
