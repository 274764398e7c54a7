//! Training objectives and their gradients with respect to the estimate.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dsp::{Complex64, StftConfig, StftPlan, DB_CAP};
use crate::error::{ensure_same_len, Error, Result};

/// Floor inside logarithms of magnitudes.
pub const MAG_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LossValue {
    pub scalar: f64,
    pub breakdown: BTreeMap<String, f64>,
}

impl LossValue {
    fn single(scalar: f64) -> Self {
        LossValue { scalar, breakdown: BTreeMap::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MrStftConfig {
    pub resolutions: Vec<StftConfig>,
    pub w_l1: f64,
    pub w_stft: f64,
}

impl Default for MrStftConfig {
    fn default() -> Self {
        MrStftConfig {
            resolutions: vec![StftConfig::with_fft(512), StftConfig::with_fft(1024), StftConfig::with_fft(2048)],
            w_l1: 10.0,
            w_stft: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum Loss {
    MseTime,
    MseMagspec {
        #[serde(default)]
        stft: StftConfig,
    },
    NegSnr,
    #[serde(rename = "l1_mrstft")]
    L1MrStft {
        #[serde(default, flatten)]
        cfg: MrStftConfig,
    },
}

impl Loss {
    pub const NAMES: [&'static str; 5] = ["mse_time", "mse_magspec", "neg_snr", "l1_mrstft", "mixit"];

    /// Registry lookup with default parameters. `mixit` names a training mode
    /// wrapping a base loss, so it has no standalone instance here.
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "mse_time" => Ok(Loss::MseTime),
            "mse_magspec" => Ok(Loss::MseMagspec { stft: StftConfig::default() }),
            "neg_snr" => Ok(Loss::NegSnr),
            "l1_mrstft" => Ok(Loss::L1MrStft { cfg: MrStftConfig::default() }),
            "mixit" => Err(Error::Config("mixit wraps a base loss; use mixit_loss with one of the others".into())),
            other => Err(Error::Config(format!("unknown loss {other:?}; known: {:?}", Self::NAMES))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Loss::MseTime => "mse_time",
            Loss::MseMagspec { .. } => "mse_magspec",
            Loss::NegSnr => "neg_snr",
            Loss::L1MrStft { .. } => "l1_mrstft",
        }
    }

    /// Smallest value the loss can take.
    pub fn floor(&self) -> f64 {
        match self {
            Loss::NegSnr => -DB_CAP,
            _ => 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Loss::MseMagspec { stft } => stft.validate(),
            Loss::L1MrStft { cfg } => {
                if cfg.resolutions.is_empty() {
                    return Err(Error::Config("multi-resolution loss needs a resolution".into()));
                }
                if !(cfg.w_l1.is_finite() && cfg.w_stft.is_finite()) {
                    return Err(Error::Config("loss weights must be finite".into()));
                }
                cfg.resolutions.iter().try_for_each(StftConfig::validate)
            }
            _ => Ok(()),
        }
    }

    pub fn eval(&self, est: &[f64], tgt: &[f64]) -> Result<LossValue> {
        Ok(self.compute(est, tgt, false)?.0)
    }

    /// Loss and its gradient with respect to `est`.
    pub fn eval_with_grad(&self, est: &[f64], tgt: &[f64]) -> Result<(LossValue, Vec<f64>)> {
        let (v, g) = self.compute(est, tgt, true)?;
        Ok((v, g.expect("gradient requested")))
    }

    fn compute(&self, est: &[f64], tgt: &[f64], grad: bool) -> Result<(LossValue, Option<Vec<f64>>)> {
        ensure_same_len(est.len(), tgt.len(), self.name())?;
        if est.is_empty() {
            return Err(Error::Length("empty signals".into()));
        }
        let n = est.len() as f64;
        match self {
            Loss::MseTime => {
                let v = est.iter().zip(tgt).map(|(e, t)| (e - t).powi(2)).sum::<f64>() / n;
                let g = grad.then(|| est.iter().zip(tgt).map(|(e, t)| 2.0 * (e - t) / n).collect());
                Ok((LossValue::single(v), g))
            }
            Loss::MseMagspec { stft } => {
                let plan = stft_plan(stft, est.len())?;
                let (e, t) = (plan.analysis(est), plan.analysis(tgt));
                let m = e.len() as f64;
                let v = e.iter().zip(&t).map(|(a, b)| (a.norm() - b.norm()).powi(2)).sum::<f64>() / m;
                let g = grad.then(|| {
                    let gs: Vec<Complex64> =
                        e.iter().zip(&t).map(|(a, b)| unit(*a) * (2.0 * (a.norm() - b.norm()) / m)).collect();
                    plan.analysis_adjoint(&gs, est.len())
                });
                Ok((LossValue::single(v), g))
            }
            Loss::NegSnr => {
                let et: f64 = tgt.iter().map(|v| v * v).sum();
                if et <= 0.0 {
                    return Err(Error::DegenerateInput("negative-SNR loss needs a target with energy".into()));
                }
                let r2: f64 = est.iter().zip(tgt).map(|(e, t)| (t - e).powi(2)).sum();
                let floored = r2 <= 1e-20 * et;
                let raw = 10.0 * (r2.max(1e-20 * et) / et).log10();
                let v = raw.clamp(-DB_CAP, DB_CAP);
                let g = grad.then(|| {
                    if floored || raw != v {
                        vec![0.0; est.len()]
                    } else {
                        let c = 20.0 / std::f64::consts::LN_10 / r2;
                        est.iter().zip(tgt).map(|(e, t)| c * (e - t)).collect()
                    }
                });
                Ok((LossValue::single(v), g))
            }
            Loss::L1MrStft { cfg } => {
                if cfg.resolutions.is_empty() {
                    return Err(Error::Config("multi-resolution loss needs a resolution".into()));
                }
                let l1 = est.iter().zip(tgt).map(|(e, t)| (e - t).abs()).sum::<f64>() / n;
                let mut g =
                    grad.then(|| est.iter().zip(tgt).map(|(e, t)| cfg.w_l1 * sign0(e - t) / n).collect::<Vec<f64>>());
                let r = cfg.resolutions.len() as f64;
                let mut stft_part = 0.0;
                for res in &cfg.resolutions {
                    let plan = stft_plan(res, est.len())?;
                    let (e, t) = (plan.analysis(est), plan.analysis(tgt));
                    let m = e.len() as f64;
                    let diff2: f64 = e.iter().zip(&t).map(|(a, b)| (b.norm() - a.norm()).powi(2)).sum();
                    let tn = t.iter().map(|b| b.norm_sqr()).sum::<f64>().sqrt().max(MAG_EPS);
                    let dn = diff2.sqrt();
                    let sc = dn / tn;
                    let lm = e
                        .iter()
                        .zip(&t)
                        .map(|(a, b)| ((b.norm() + MAG_EPS).ln() - (a.norm() + MAG_EPS).ln()).abs())
                        .sum::<f64>()
                        / m;
                    stft_part += (sc + lm) / r;
                    if let Some(g) = g.as_mut() {
                        let w = cfg.w_stft / r;
                        let gs: Vec<Complex64> = e
                            .iter()
                            .zip(&t)
                            .map(|(a, b)| {
                                let (am, bm) = (a.norm(), b.norm());
                                let d_sc = if dn > 0.0 { -(bm - am) / (dn * tn) } else { 0.0 };
                                let d_lm = -sign0((bm + MAG_EPS).ln() - (am + MAG_EPS).ln()) / (m * (am + MAG_EPS));
                                unit(*a) * (w * (d_sc + d_lm))
                            })
                            .collect();
                        for (gi, v) in g.iter_mut().zip(plan.analysis_adjoint(&gs, est.len())) {
                            *gi += v;
                        }
                    }
                }
                let mut breakdown = BTreeMap::new();
                breakdown.insert("l1".to_string(), l1);
                breakdown.insert("mrstft".to_string(), stft_part);
                Ok((LossValue { scalar: cfg.w_l1 * l1 + cfg.w_stft * stft_part, breakdown }, g))
            }
        }
    }
}

fn stft_plan(cfg: &StftConfig, len: usize) -> Result<std::sync::Arc<StftPlan>> {
    cfg.validate()?;
    if len < cfg.window_size {
        return Err(Error::Length(format!("signal of {len} samples shorter than a {}-sample window", cfg.window_size)));
    }
    Ok(StftPlan::cached(cfg))
}

fn unit(z: Complex64) -> Complex64 {
    let m = z.norm();
    if m > 0.0 {
        z / m
    } else {
        Complex64::new(0.0, 0.0)
    }
}

/// Sign with the subgradient choice 0 at 0.
fn sign0(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// The NyTT / CTT / Noise2Noise objective: a base loss between the estimate
/// and whatever the target is.
pub fn pairwise_objective(est: &[f64], tgt: &[f64], base: &Loss) -> Result<LossValue> {
    base.eval(est, tgt)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Assignment {
    /// `u1 + u2 -> x`, `u3 -> n_add`.
    First,
    /// `u1 + u3 -> x`, `u2 -> n_add`.
    Second,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixitOutcome {
    pub value: LossValue,
    pub assignment: Assignment,
    /// Gradients for `u1`, `u2`, `u3` when requested.
    pub grads: Option<[Vec<f64>; 3]>,
}

fn mixit(u: [&[f64]; 3], x: &[f64], n_add: &[f64], base: &Loss, grad: bool) -> Result<MixitOutcome> {
    for s in [u[1], u[2], x, n_add] {
        ensure_same_len(u[0].len(), s.len(), "mixit_loss")?;
    }
    let sum = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p + q).collect::<Vec<f64>>();
    let eval = |e: &[f64], t: &[f64]| -> Result<(LossValue, Option<Vec<f64>>)> {
        if grad {
            base.eval_with_grad(e, t).map(|(v, g)| (v, Some(g)))
        } else {
            base.eval(e, t).map(|v| (v, None))
        }
    };
    let (s12, s13) = (sum(u[0], u[1]), sum(u[0], u[2]));
    let (a_x, a_n) = (eval(&s12, x)?, eval(u[2], n_add)?);
    let (b_x, b_n) = (eval(&s13, x)?, eval(u[1], n_add)?);
    let (la, lb) = (a_x.0.scalar + a_n.0.scalar, b_x.0.scalar + b_n.0.scalar);
    let (assignment, tx, tn) = if la <= lb { (Assignment::First, a_x, a_n) } else { (Assignment::Second, b_x, b_n) };
    let mut breakdown = BTreeMap::new();
    breakdown.insert("mixture".to_string(), tx.0.scalar);
    breakdown.insert("additional_noise".to_string(), tn.0.scalar);
    let grads = match (tx.1, tn.1) {
        (Some(gx), Some(gn)) => Some(match assignment {
            Assignment::First => [gx.clone(), gx, gn],
            Assignment::Second => [gx.clone(), gn, gx],
        }),
        _ => None,
    };
    Ok(MixitOutcome { value: LossValue { scalar: la.min(lb), breakdown }, assignment, grads })
}

/// Minimum over the two ways of assigning three outputs to the noisy target
/// and the additional noise; ties go to the first assignment.
pub fn mixit_loss(
    u1: &[f64],
    u2: &[f64],
    u3: &[f64],
    x: &[f64],
    n_add: &[f64],
    base: &Loss,
) -> Result<(LossValue, Assignment)> {
    let o = mixit([u1, u2, u3], x, n_add, base, false)?;
    Ok((o.value, o.assignment))
}

pub fn mixit_loss_with_grad(u: [&[f64]; 3], x: &[f64], n_add: &[f64], base: &Loss) -> Result<MixitOutcome> {
    mixit(u, x, n_add, base, true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng as _, SeedableRng};

    fn noise(len: usize, seed: u64) -> Vec<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn all_losses() -> Vec<Loss> {
        vec![
            Loss::MseTime,
            Loss::MseMagspec { stft: StftConfig::default() },
            Loss::NegSnr,
            Loss::L1MrStft { cfg: MrStftConfig::default() },
        ]
    }

    #[test]
    fn identical_pairs_sit_at_the_floor() {
        let x = noise(4096, 1);
        for l in all_losses() {
            let v = l.eval(&x, &x).unwrap();
            assert_eq!(v.scalar, l.floor(), "{}", l.name());
            assert!(v.breakdown.values().all(|&b| b == 0.0));
        }
    }

    #[test]
    fn mse_time_examples() {
        let t = noise(300, 2);
        let e: Vec<f64> = t.iter().map(|v| v + 0.1).collect();
        assert!((Loss::MseTime.eval(&e, &t).unwrap().scalar - 0.01).abs() < 1e-12);
        let e = noise(300, 3);
        let mut direct = 0.0;
        for i in 0..300 {
            direct += (e[i] - t[i]) * (e[i] - t[i]);
        }
        assert!((Loss::MseTime.eval(&e, &t).unwrap().scalar - direct / 300.0).abs() < 1e-12);
        assert!(matches!(Loss::MseTime.eval(&e[..2], &t), Err(Error::Shape(_))));
    }

    #[test]
    fn magspec_ignores_sign_and_matches_reference_pipeline() {
        let t = noise(2048, 4);
        let neg: Vec<f64> = t.iter().map(|v| -v).collect();
        let l = Loss::MseMagspec { stft: StftConfig::default() };
        assert!(l.eval(&neg, &t).unwrap().scalar < 1e-20);
        let e = noise(2048, 5);
        let cfg = StftConfig::default();
        let (se, st) = (
            crate::dsp::stft(&crate::dsp::Waveform::new(e.clone(), 16_000).unwrap(), &cfg).unwrap(),
            crate::dsp::stft(&crate::dsp::Waveform::new(t.clone(), 16_000).unwrap(), &cfg).unwrap(),
        );
        let reference: f64 = se.magnitudes().iter().zip(st.magnitudes()).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
            / se.magnitudes().len() as f64;
        assert!((l.eval(&e, &t).unwrap().scalar - reference).abs() < 1e-12 * reference.max(1.0));
    }

    #[test]
    fn neg_snr_examples() {
        let t = vec![1.0, 0.0, 1.0, 0.0];
        assert_eq!(Loss::NegSnr.eval(&t, &t).unwrap().scalar, -100.0);
        assert!(Loss::NegSnr.eval(&[0.0; 4], &t).unwrap().scalar.abs() < 1e-12);
        // Orthogonal residual with a tenth of the target energy.
        let r = (0.1f64).sqrt();
        let e = vec![1.0, r, 1.0, -r];
        assert!((Loss::NegSnr.eval(&e, &t).unwrap().scalar + 10.0).abs() < 1e-9);
        assert!(matches!(Loss::NegSnr.eval(&t, &[0.0; 4]), Err(Error::DegenerateInput(_))));
    }

    #[test]
    fn l1_mrstft_examples() {
        let t = noise(4096, 6);
        let e: Vec<f64> = t.iter().map(|v| v + 0.1).collect();
        let base = Loss::L1MrStft { cfg: MrStftConfig::default() };
        let v = base.eval(&e, &t).unwrap();
        assert!((v.breakdown["l1"] * 10.0 - 1.0).abs() < 1e-9);
        assert!(v.breakdown["mrstft"] >= 0.0);
        assert!((v.scalar - (10.0 * v.breakdown["l1"] + 0.1 * v.breakdown["mrstft"])).abs() < 1e-12);
        let doubled = Loss::L1MrStft { cfg: MrStftConfig { w_l1: 20.0, w_stft: 0.2, ..MrStftConfig::default() } };
        assert!((doubled.eval(&e, &t).unwrap().scalar - 2.0 * v.scalar).abs() < 1e-9);
    }

    #[test]
    fn registry() {
        for name in ["mse_time", "mse_magspec", "neg_snr", "l1_mrstft"] {
            assert_eq!(Loss::from_name(name).unwrap().name(), name);
        }
        assert!(matches!(Loss::from_name("mixit"), Err(Error::Config(_))));
        assert!(matches!(Loss::from_name("psnr"), Err(Error::Config(_))));
        let json = serde_json::to_string(&Loss::from_name("l1_mrstft").unwrap()).unwrap();
        assert_eq!(serde_json::from_str::<Loss>(&json).unwrap(), Loss::from_name("l1_mrstft").unwrap());
        assert_eq!(
            serde_json::from_str::<Loss>(r#"{"name":"mse_magspec"}"#).unwrap(),
            Loss::from_name("mse_magspec").unwrap()
        );
        assert_eq!(
            serde_json::from_str::<Loss>(r#"{"name":"l1_mrstft"}"#).unwrap(),
            Loss::from_name("l1_mrstft").unwrap()
        );
    }

    #[test]
    fn pairwise_delegates() {
        let (e, t) = (noise(2048, 7), noise(2048, 8));
        for l in all_losses() {
            assert_eq!(pairwise_objective(&e, &t, &l).unwrap(), l.eval(&e, &t).unwrap());
        }
        let neg: Vec<f64> = t.iter().map(|v| -v).collect();
        assert!(pairwise_objective(&neg, &t, &Loss::from_name("mse_magspec").unwrap()).unwrap().scalar < 1e-20);
    }

    // Central differences on the estimate, away from the L1 kink.
    fn check_grad(l: &Loss, e: &[f64], t: &[f64]) {
        let (_, g) = l.eval_with_grad(e, t).unwrap();
        let h = 1e-5;
        let mut e2 = e.to_vec();
        for i in (0..e.len()).step_by(e.len() / 17 + 1) {
            if matches!(l, Loss::L1MrStft { .. }) && (e[i] - t[i]).abs() < 1e-6 {
                continue;
            }
            e2[i] = e[i] + h;
            let up = l.eval(&e2, t).unwrap().scalar;
            e2[i] = e[i] - h;
            let dn = l.eval(&e2, t).unwrap().scalar;
            e2[i] = e[i];
            let fd = (up - dn) / (2.0 * h);
            let rel = (fd - g[i]).abs() / fd.abs().max(g[i].abs()).max(1e-8);
            assert!(rel < 1e-4 || (fd - g[i]).abs() < 1e-10, "{} at {i}: fd {fd} vs {}", l.name(), g[i]);
        }
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let e = noise(2048, 9);
        let t = noise(2048, 10);
        for l in all_losses() {
            check_grad(&l, &e, &t);
        }
    }

    #[test]
    fn mixit_examples() {
        let (s, no, na) = (noise(512, 11), noise(512, 12), noise(512, 13));
        let x: Vec<f64> = s.iter().zip(&no).map(|(a, b)| a + b).collect();
        let (v, a) = mixit_loss(&s, &no, &na, &x, &na, &Loss::MseTime).unwrap();
        assert_eq!((v.scalar, a), (0.0, Assignment::First));
        let (v, a) = mixit_loss(&s, &na, &no, &x, &na, &Loss::MseTime).unwrap();
        assert_eq!((v.scalar, a), (0.0, Assignment::Second));
        // Exact tie: u2 = u3.
        let (_, a) = mixit_loss(&s, &no, &no, &x, &na, &Loss::MseTime).unwrap();
        assert_eq!(a, Assignment::First);
    }

    #[test]
    fn mixit_gradients_route_to_the_chosen_assignment() {
        let u: Vec<Vec<f64>> = (0..3).map(|i| noise(256, 20 + i)).collect();
        let (x, na) = (noise(256, 30), noise(256, 31));
        let o = mixit_loss_with_grad([&u[0], &u[1], &u[2]], &x, &na, &Loss::MseTime).unwrap();
        let g = o.grads.unwrap();
        let h = 1e-6;
        for k in 0..3 {
            for i in [0, 100, 255] {
                let mut p = u.clone();
                p[k][i] += h;
                let up = mixit_loss(&p[0], &p[1], &p[2], &x, &na, &Loss::MseTime).unwrap().0.scalar;
                p[k][i] -= 2.0 * h;
                let dn = mixit_loss(&p[0], &p[1], &p[2], &x, &na, &Loss::MseTime).unwrap().0.scalar;
                assert!(((up - dn) / (2.0 * h) - g[k][i]).abs() < 1e-7);
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn mixit_is_the_brute_force_minimum(seed in 0u64..10_000) {
            let v: Vec<Vec<f64>> = (0..5).map(|i| noise(64, seed * 5 + i)).collect();
            for base in [Loss::MseTime, Loss::NegSnr] {
                let (lv, a) = mixit_loss(&v[0], &v[1], &v[2], &v[3], &v[4], &base).unwrap();
                let add = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(a, b)| a + b).collect::<Vec<f64>>();
                let a1 = base.eval(&add(&v[0], &v[1]), &v[3]).unwrap().scalar + base.eval(&v[2], &v[4]).unwrap().scalar;
                let a2 = base.eval(&add(&v[0], &v[2]), &v[3]).unwrap().scalar + base.eval(&v[1], &v[4]).unwrap().scalar;
                prop_assert_eq!(lv.scalar, a1.min(a2));
                prop_assert!(lv.scalar <= a1 && lv.scalar <= a2);
                prop_assert_eq!(a, if a1 <= a2 { Assignment::First } else { Assignment::Second });
            }
        }
    }
}
