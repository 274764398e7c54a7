//! Signal-triplet analysis and trend statistics along sweep axes.

use std::collections::BTreeMap;

use nytt_core::dsp::Waveform;
use nytt_core::metrics::{si_sdr, spearman};
use nytt_core::models::EnhancerModel;
use nytt_core::rng::{substream, tag};
use nytt_core::synth::{CleanReferences, CorruptionSpec, SynthesisContext};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::table::{ResultsTable, Trend};

/// SI-SDR (dB) against the clean signal of the noisy target `x`, the more
/// noisy input `y` and the model output `f(y)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Triplet {
    pub x: f64,
    pub y: f64,
    pub fy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripletReport {
    pub per_item: Vec<Triplet>,
    pub mean: Triplet,
}

/// Corrupts each noisy item once more with `add_spec` and scores x, y and
/// f(y) against the clean references.
pub fn analyze_triplet(
    ctx: &SynthesisContext,
    model: &EnhancerModel,
    noisy: &[Waveform],
    clean: &CleanReferences,
    add_spec: &CorruptionSpec,
    seed: u64,
) -> Result<TripletReport> {
    let refs = clean.all()?;
    if refs.is_empty() || refs.len() != noisy.len() {
        return Err(Error::Config(format!("{} clean references for {} noisy items", refs.len(), noisy.len())));
    }
    let mut per_item = Vec::with_capacity(noisy.len());
    for (i, (x, s)) in noisy.iter().zip(refs).enumerate() {
        let y = ctx.corrupt(x, add_spec, &mut substream(seed, &[tag("triplet"), i as u64]))?.signal;
        let fy = model.enhance(&y)?;
        per_item.push(Triplet { x: si_sdr(x, s)?, y: si_sdr(&y, s)?, fy: si_sdr(&fy, s)? });
    }
    let n = per_item.len() as f64;
    let mean = Triplet {
        x: per_item.iter().map(|t| t.x).sum::<f64>() / n,
        y: per_item.iter().map(|t| t.y).sum::<f64>() / n,
        fy: per_item.iter().map(|t| t.fy).sum::<f64>() / n,
    };
    Ok(TripletReport { per_item, mean })
}

/// Least-squares slope of `y` on `x`; zero when `x` is constant.
pub fn slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    if sxx == 0.0 {
        return 0.0;
    }
    x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / sxx
}

fn trend(
    axis: &str,
    metric: &str,
    method: &str,
    group: &str,
    seed: Option<u64>,
    mut points: Vec<[f64; 2]>,
) -> Option<Trend> {
    if points.len() < 2 {
        return None;
    }
    points.sort_by(|a, b| a[0].total_cmp(&b[0]));
    let (x, y): (Vec<f64>, Vec<f64>) = points.iter().map(|p| (p[0], p[1])).unzip();
    let rho = spearman(&x, &y).ok()?;
    Some(Trend {
        axis: axis.to_string(),
        metric: metric.to_string(),
        method: method.to_string(),
        group: group.to_string(),
        seed,
        spearman: rho,
        slope: slope(&x, &y),
        points,
    })
}

/// Per-seed and across-seed-mean trends of `metric` along every numeric axis.
pub fn axis_trends(table: &ResultsTable, metric: &str) -> Vec<Trend> {
    let mut out = Vec::new();
    for axis in table.axes.iter().filter(|a| a.numeric) {
        // (method, group) -> seed -> points
        let mut groups: BTreeMap<(String, String), BTreeMap<u64, Vec<[f64; 2]>>> = BTreeMap::new();
        let mut order: Vec<(String, String)> = Vec::new();
        for r in &table.rows {
            let (Some(p), Some(v)) = (r.point(&axis.name), r.metric(metric)) else { continue };
            let group = r
                .points
                .iter()
                .filter(|q| q.axis != axis.name)
                .map(|q| format!("{}={}", q.axis, q.label))
                .collect::<Vec<_>>()
                .join(",");
            let key = (r.method.clone(), group);
            if !order.contains(&key) {
                order.push(key.clone());
            }
            groups.entry(key).or_default().entry(r.seed).or_default().push([p.value, v]);
        }
        for key in order {
            let per_seed = &groups[&key];
            let mut sums: BTreeMap<u64, (f64, f64, usize)> = BTreeMap::new();
            for seed in table.seeds() {
                let Some(points) = per_seed.get(&seed) else { continue };
                out.extend(trend(&axis.name, metric, &key.0, &key.1, Some(seed), points.clone()));
                for p in points {
                    let e = sums.entry(p[0].to_bits()).or_insert((p[0], 0.0, 0));
                    e.1 += p[1];
                    e.2 += 1;
                }
            }
            let means = sums.values().map(|(x, s, n)| [*x, s / *n as f64]).collect();
            out.extend(trend(&axis.name, metric, &key.0, &key.1, None, means));
        }
    }
    out
}
