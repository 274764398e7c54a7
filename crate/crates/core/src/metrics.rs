//! Reference-based quality metrics and corpus aggregation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dsp::{db_ratio, dot, energy, StftConfig, StftPlan, DB_CAP};
use crate::error::{ensure_same_len, Error, Result};

/// Floor added to magnitudes before taking logs.
pub const LOG_EPS: f64 = 1e-8;

/// Scale-invariant signal-to-distortion ratio in dB.
///
/// The reference is projected onto the estimate's direction; a residual
/// below `1e-20` of the projected energy reports the +100 dB cap.
pub fn si_sdr(estimate: &[f64], reference: &[f64]) -> Result<f64> {
    ensure_same_len(estimate.len(), reference.len(), "si_sdr")?;
    let er = energy(reference);
    if er <= 0.0 {
        return Err(Error::DegenerateInput("SI-SDR reference has zero energy".into()));
    }
    let alpha = dot(estimate, reference) / er;
    let target = alpha * alpha * er;
    let residual: f64 = estimate.iter().zip(reference).map(|(e, r)| (alpha * r - e).powi(2)).sum();
    if residual <= 1e-20 * target {
        return Ok(DB_CAP);
    }
    if target <= 0.0 {
        return Ok(-DB_CAP);
    }
    Ok(db_ratio(target, residual).clamp(-DB_CAP, DB_CAP))
}

/// RMS over frames and bins of the dB difference between magnitude spectra.
pub fn log_spectral_distance(estimate: &[f64], reference: &[f64], cfg: &StftConfig) -> Result<f64> {
    ensure_same_len(estimate.len(), reference.len(), "log_spectral_distance")?;
    cfg.validate()?;
    if estimate.len() < cfg.window_size {
        return Err(Error::Length("signal shorter than one STFT window".into()));
    }
    let plan = StftPlan::cached(cfg);
    let (e, r) = (plan.analysis(estimate), plan.analysis(reference));
    let sq: f64 = e
        .iter()
        .zip(&r)
        .map(|(a, b)| (20.0 * ((a.norm() + LOG_EPS).log10() - (b.norm() + LOG_EPS).log10())).powi(2))
        .sum();
    Ok((sq / e.len() as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    SiSdr,
    LogSpectralDistance,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::SiSdr => "si_sdr",
            Metric::LogSpectralDistance => "lsd",
        }
    }

    pub fn evaluate(self, estimate: &[f64], reference: &[f64]) -> Result<f64> {
        match self {
            Metric::SiSdr => si_sdr(estimate, reference),
            Metric::LogSpectralDistance => log_spectral_distance(estimate, reference, &StftConfig::default()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Sorted by item id.
    pub per_item: Vec<(String, BTreeMap<String, f64>)>,
    pub aggregate: BTreeMap<String, f64>,
    pub count: usize,
}

impl MetricsReport {
    pub fn mean(&self, metric: Metric) -> Option<f64> {
        self.aggregate.get(metric.name()).copied()
    }
}

/// One evaluation pair: `(item_id, estimate, reference)`.
pub type EvalPair<'a> = (&'a str, &'a [f64], &'a [f64]);

pub fn evaluate_corpus(pairs: &[EvalPair<'_>], metrics: &[Metric]) -> Result<MetricsReport> {
    if pairs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut rows: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    for &(id, est, reference) in pairs {
        let mut row = BTreeMap::new();
        for &m in metrics {
            row.insert(m.name().to_string(), m.evaluate(est, reference)?);
        }
        if rows.insert(id.to_string(), row).is_some() {
            return Err(Error::Config(format!("duplicate item id {id:?}")));
        }
    }
    let count = rows.len();
    let aggregate = metrics
        .iter()
        .map(|m| {
            let sum: f64 = rows.values().map(|r| r[m.name()]).sum();
            (m.name().to_string(), sum / count as f64)
        })
        .collect();
    Ok(MetricsReport { per_item: rows.into_iter().collect(), aggregate, count })
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    ensure_same_len(x.len(), y.len(), "spearman")?;
    if x.len() < 2 {
        return Err(Error::Length("rank correlation needs at least two points".into()));
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        return Ok(0.0);
    }
    Ok(cov / (vx * vy).sqrt())
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}
