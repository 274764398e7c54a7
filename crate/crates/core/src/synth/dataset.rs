//! Seeded corrupted datasets, their manifests, and audited clean references.

use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use super::corrupt::{CorruptionSpec, DrawnParams, SynthesisContext};
use crate::dsp::Waveform;
use crate::error::{Error, Result};
use crate::fingerprint::fingerprint;
use crate::rng::{derive_seed, substream, tag};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestItem {
    pub item_id: String,
    pub index: usize,
    pub seed: u64,
    pub params: DrawnParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clean_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_path: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub global_seed: u64,
    pub spec: CorruptionSpec,
    pub spec_fingerprint: String,
    pub items: Vec<ManifestItem>,
}

pub fn item_id(index: usize) -> String {
    format!("item{index:05}")
}

/// One corrupted target per clean item. Item `i` draws from a stream keyed
/// by `(seed, i)`, so building in any order gives the same targets.
pub fn build_dataset(
    ctx: &SynthesisContext,
    clean: &[Waveform],
    spec: &CorruptionSpec,
    seed: u64,
) -> Result<(Vec<Waveform>, DatasetManifest)> {
    if clean.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    spec.validate()?;
    let mut targets = Vec::with_capacity(clean.len());
    let mut items = Vec::with_capacity(clean.len());
    for (i, s) in clean.iter().enumerate() {
        let item_seed = derive_seed(seed, &[tag("target"), i as u64]);
        let c = ctx.corrupt(s, spec, &mut substream(item_seed, &[]))?;
        targets.push(c.signal);
        items.push(ManifestItem {
            item_id: item_id(i),
            index: i,
            seed: item_seed,
            params: c.params,
            clean_path: None,
            target_path: None,
        });
    }
    let manifest =
        DatasetManifest { global_seed: seed, spec: spec.clone(), spec_fingerprint: fingerprint(spec), items };
    Ok((targets, manifest))
}

/// Rebuilds the targets from recorded draws.
pub fn replay_dataset(ctx: &SynthesisContext, clean: &[Waveform], manifest: &DatasetManifest) -> Result<Vec<Waveform>> {
    if fingerprint(&manifest.spec) != manifest.spec_fingerprint {
        return Err(Error::Config("manifest spec does not match its fingerprint".into()));
    }
    if clean.len() != manifest.items.len() {
        return Err(Error::Shape(format!("{} clean items for {} manifest entries", clean.len(), manifest.items.len())));
    }
    manifest
        .items
        .iter()
        .map(|it| {
            let s = clean.get(it.index).ok_or_else(|| Error::Config("manifest index out of range".into()))?;
            Ok(ctx.replay(s, &manifest.spec, &it.params)?.signal)
        })
        .collect()
}

/// Clean references behind an access audit. While locked (during
/// unsupervised training) every read fails and is counted.
#[derive(Debug, Default)]
pub struct CleanReferences {
    items: Vec<Waveform>,
    locked: AtomicBool,
    reads: AtomicUsize,
    denied: AtomicUsize,
}

pub struct AuditLock<'a>(&'a CleanReferences);

impl Drop for AuditLock<'_> {
    fn drop(&mut self) {
        self.0.locked.store(false, Ordering::SeqCst);
    }
}

impl CleanReferences {
    pub fn new(items: Vec<Waveform>) -> Self {
        CleanReferences { items, ..Default::default() }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Locks the references until the returned guard is dropped.
    pub fn lock(&self) -> AuditLock<'_> {
        self.locked.store(true, Ordering::SeqCst);
        AuditLock(self)
    }

    pub fn is_locked(&self) -> bool {
        self.locked.load(Ordering::SeqCst)
    }

    pub fn get(&self, i: usize) -> Result<&Waveform> {
        Ok(&self.all()?[i])
    }

    pub fn all(&self) -> Result<&[Waveform]> {
        if self.is_locked() {
            self.denied.fetch_add(1, Ordering::SeqCst);
            return Err(Error::Access("clean references are locked during unsupervised training".into()));
        }
        self.reads.fetch_add(1, Ordering::SeqCst);
        Ok(&self.items)
    }

    pub fn reads(&self) -> usize {
        self.reads.load(Ordering::SeqCst)
    }

    pub fn denied(&self) -> usize {
        self.denied.load(Ordering::SeqCst)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::corrupt::{SnrDb, SnrDist};
    use crate::synth::noise::{standard_families, Partition};
    use crate::synth::speech::generate_clean_corpus;

    #[test]
    fn identity_spec_gives_clean_targets() {
        let clean = generate_clean_corpus(3, 0.2, 1).unwrap();
        let ctx = SynthesisContext::new(16_000);
        let (t, m) = build_dataset(&ctx, &clean, &CorruptionSpec::identity(), 5).unwrap();
        assert_eq!(t, clean);
        assert_eq!(m.items.len(), 3);
        assert!(build_dataset(&ctx, &[], &CorruptionSpec::identity(), 5).is_err());
    }

    #[test]
    fn snr_grid_counts() {
        let clean = generate_clean_corpus(400, 0.05, 2).unwrap();
        let ctx = SynthesisContext::new(16_000);
        let spec = CorruptionSpec::additive(
            vec![standard_families(Partition::Obs)[0].clone()],
            SnrDist::grid(&[0.0, 5.0, 10.0, 15.0]),
        );
        let (_, m) = build_dataset(&ctx, &clean, &spec, 9).unwrap();
        for level in [0.0, 5.0, 10.0, 15.0] {
            let n = m
                .items
                .iter()
                .filter(
                    |it| matches!(it.params, DrawnParams::AdditiveNoise { snr_db: SnrDb::Finite(v), .. } if v == level),
                )
                .count();
            assert!((70..=130).contains(&n), "{level}: {n}");
        }
    }

    #[test]
    fn manifest_replay_is_bit_identical() {
        let clean = generate_clean_corpus(5, 0.3, 3).unwrap();
        let ctx = SynthesisContext::new(16_000);
        let spec = CorruptionSpec::additive(standard_families(Partition::Obs).to_vec(), SnrDist::Uniform(0.0, 15.0));
        let (t, m) = build_dataset(&ctx, &clean, &spec, 4).unwrap();
        let json = serde_json::to_string(&m).unwrap();
        let back: DatasetManifest = serde_json::from_str(&json).unwrap();
        assert_eq!(back, m);
        let r = replay_dataset(&ctx, &clean, &back).unwrap();
        for (a, b) in t.iter().zip(&r) {
            assert!(a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        let mut bad = back.clone();
        bad.spec_fingerprint = "0".into();
        assert!(replay_dataset(&ctx, &clean, &bad).is_err());
    }

    #[test]
    fn audit_lock_denies_reads() {
        let refs = CleanReferences::new(generate_clean_corpus(2, 0.1, 0).unwrap());
        assert!(refs.get(0).is_ok());
        {
            let _g = refs.lock();
            assert!(matches!(refs.all(), Err(Error::Access(_))));
        }
        assert!(refs.all().is_ok());
        assert_eq!((refs.reads(), refs.denied()), (2, 1));
    }
}
