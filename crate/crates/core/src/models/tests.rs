use rand::{Rng as _, SeedableRng};

use super::*;
use crate::dsp::{StftPlan, WindowKind};
use crate::losses::Loss;

fn noise(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.random_range(-0.5..0.5)).collect()
}

fn small_stft() -> StftConfig {
    StftConfig::new(64, 16, 64, WindowKind::Hamming).unwrap()
}

fn small_archs() -> Vec<Architecture> {
    let stft = small_stft();
    vec![
        Architecture::ComplexMask { stft, hidden: 4, context: 2, sources: 1 },
        Architecture::RealMask { stft, hidden: 4, context: 2, sources: 1 },
        Architecture::Waveform { kernel: 8, stride: 4, channels: 5, sources: 1, clip_aware: false },
        Architecture::ComplexMask { stft, hidden: 3, context: 1, sources: 3 },
        Architecture::Waveform { kernel: 6, stride: 3, channels: 4, sources: 3, clip_aware: false },
        Architecture::declipper(8, 2, 4),
    ]
}

fn clipped(len: usize, seed: u64) -> Vec<f64> {
    noise(len, seed).iter().map(|v| v.clamp(-0.3, 0.3)).collect()
}

fn randomize(m: &mut EnhancerModel, seed: u64, scale: f64) {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    for p in m.params_mut() {
        *p += rng.random_range(-scale..scale);
    }
}

#[test]
fn identity_initialisation() {
    let y = noise(4000, 1);
    for arch in [Architecture::complex_mask(8), Architecture::real_mask(8)] {
        let m = EnhancerModel::new(arch, 3).unwrap();
        let out = m.enhance(&y).unwrap();
        let err = out.iter().zip(&y).fold(0.0f64, |a, (o, v)| a.max((o - v).abs()));
        assert!(err < 1e-9, "{err}");
    }
    let m = EnhancerModel::new(Architecture::waveform(16, 8, 6), 3).unwrap();
    assert_eq!(m.enhance(&y).unwrap(), y);
    // Three outputs share the input evenly and sum back to it.
    let m = EnhancerModel::new(Architecture::complex_mask(8).with_sources(3), 3).unwrap();
    let outs = m.forward(&y).unwrap();
    for n in (0..y.len()).step_by(97) {
        assert!((outs.iter().map(|o| o[n]).sum::<f64>() - y[n]).abs() < 1e-9);
    }
}

#[test]
fn dead_output_layer() {
    let y = noise(2000, 2);
    let mut m = EnhancerModel::new(Architecture::complex_mask(8), 1).unwrap();
    m.segment_mut("b3").unwrap().iter_mut().for_each(|v| *v = 0.0);
    assert!(m.enhance(&y).unwrap().iter().all(|v| v.abs() < 1e-12));
    let mut m = EnhancerModel::new(Architecture::real_mask(8), 1).unwrap();
    m.segment_mut("b3").unwrap().iter_mut().for_each(|v| *v = -60.0);
    assert!(m.enhance(&y).unwrap().iter().all(|v| v.abs() < 1e-20));
    // Zeroed decoder: pure residual, whatever the rest holds.
    let mut m = EnhancerModel::new(Architecture::waveform(16, 8, 6), 1).unwrap();
    randomize(&mut m, 5, 0.3);
    m.segment_mut("dec_w").unwrap().iter_mut().for_each(|v| *v = 0.0);
    assert_eq!(m.enhance(&y).unwrap(), y);
}

#[test]
fn real_mask_keeps_input_phase() {
    let y = noise(3000, 3);
    let mut m = EnhancerModel::new(Architecture::real_mask(8), 2).unwrap();
    randomize(&mut m, 9, 0.2);
    let (est, mask) = m.forward_mask(&y).unwrap();
    assert!(mask.iter().all(|v| v.im == 0.0 && v.re >= 0.0));
    // Rebuild from |Y|·m and the phase of Y, then invert.
    let plan = StftPlan::new(&StftConfig::default());
    let spec = plan.analysis(&y);
    let rebuilt: Vec<Complex64> =
        spec.iter().zip(&mask).map(|(v, g)| Complex64::from_polar(v.norm() * g.re, v.arg())).collect();
    let oracle = plan.synthesis(&rebuilt, y.len());
    let err = est.iter().zip(&oracle).fold(0.0f64, |a, (p, q)| a.max((p - q).abs()));
    assert!(err < 1e-12, "{err}");
}

#[test]
fn waveform_model_is_causal_and_stride_shift_equivariant() {
    let mut m = EnhancerModel::new(Architecture::waveform(16, 8, 6), 4).unwrap();
    randomize(&mut m, 4, 0.3);
    let x = noise(1000, 4);
    let out = m.enhance(&x).unwrap();
    for k in [8, 24, 64] {
        let mut shifted = vec![0.0; k];
        shifted.extend_from_slice(&x[..x.len() - k]);
        let o2 = m.enhance(&shifted).unwrap();
        // Away from the start, where frames before time zero still add
        // their bias-driven contributions.
        assert_eq!(&o2[k + 16..], &out[16..x.len() - k]);
    }
    let mut bumped = x.clone();
    bumped[500] += 1.0;
    let o3 = m.enhance(&bumped).unwrap();
    assert_eq!(&o3[..500], &out[..500]);
    assert_ne!(o3[500], out[500]);
}

#[test]
fn declipper_only_touches_saturated_samples() {
    let y = clipped(800, 12);
    let mut m = EnhancerModel::new(Architecture::declipper(16, 4, 6), 3).unwrap();
    assert_eq!(m.enhance(&y).unwrap(), y);
    randomize(&mut m, 8, 0.4);
    let out = m.enhance(&y).unwrap();
    let mut changed = 0;
    for n in 0..y.len() {
        let saturated = n > 0 && y[n] == y[n - 1];
        if saturated {
            changed += (out[n] != y[n]) as usize;
        } else {
            assert_eq!(out[n], y[n]);
        }
    }
    assert!(changed > 50, "{changed}");
    // Still causal.
    let mut bumped = y.clone();
    bumped[400] = 0.0;
    assert_eq!(&m.enhance(&bumped).unwrap()[..400], &out[..400]);
}

#[test]
fn gradients_match_finite_differences() {
    let y = clipped(256, 6);
    for (a, arch) in small_archs().into_iter().enumerate() {
        let sources = arch.sources();
        let targets: Vec<Vec<f64>> = (0..sources).map(|s| noise(256, 50 + s as u64)).collect();
        let mut worst = 0.0f64;
        let mut checked = 0;
        for point in 0..20u64 {
            let mut m = EnhancerModel::new(arch.clone(), point).unwrap();
            randomize(&mut m, 1000 * a as u64 + point, 0.5);
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(point);
            let coords: Vec<usize> = (0..6).map(|_| rng.random_range(0..m.param_count())).collect();
            for loss in [Loss::MseTime, Loss::NegSnr] {
                let r = gradient_check(&m, &y, &targets, &loss, &coords, 1e-5, 1e-7).unwrap();
                worst = worst.max(r.max_rel_error);
                checked += r.checked;
            }
        }
        assert!(worst < 1e-4, "{arch:?}: {worst}");
        assert!(checked >= 100, "{checked}");
    }
}

#[test]
fn backward_contract() {
    let y = noise(512, 7);
    let mut m = EnhancerModel::new(Architecture::complex_mask(6), 1).unwrap();
    assert!(matches!(m.backward(&[vec![0.0; 512]]), Err(Error::State(_))));
    // At the identity, est = y; a target equal to y gives a zero gradient.
    let out = m.forward_recorded(&y).unwrap();
    let (_, g) = Loss::MseTime.eval_with_grad(&out[0], &out[0]).unwrap();
    assert!(m.backward(&[g]).unwrap().iter().all(|v| *v == 0.0));
    assert!(matches!(m.backward(&[vec![0.0; 512]]), Err(Error::State(_))));
    // Linearity in the upstream gradient.
    randomize(&mut m, 3, 0.2);
    let t = noise(512, 8);
    let out = m.forward_recorded(&y).unwrap();
    let (_, g) = Loss::MseTime.eval_with_grad(&out[0], &t).unwrap();
    let g1 = m.backward(std::slice::from_ref(&g)).unwrap();
    m.forward_recorded(&y).unwrap();
    let g2 = m.backward(&[g.iter().map(|v| 2.0 * v).collect()]).unwrap();
    for (a, b) in g1.iter().zip(&g2) {
        assert!((2.0 * a - b).abs() <= 1e-12 * b.abs().max(1e-300));
    }
    assert!(m.forward_recorded(&y[..100]).is_err());
}

#[test]
fn serialisation_is_bit_exact() {
    for arch in small_archs() {
        let mut m = EnhancerModel::new(arch, 11).unwrap();
        randomize(&mut m, 12, 0.7);
        m.fit_normalization(&[&noise(300, 1)]).unwrap();
        let json = serde_json::to_string(&m).unwrap();
        let back: EnhancerModel = serde_json::from_str(&json).unwrap();
        assert_eq!(back, m);
        assert!(back.params().iter().zip(m.params()).all(|(a, b)| a.to_bits() == b.to_bits()));
        let ck = Checkpoint::new(m.clone(), Some(OptimizerState::adam(m.param_count(), 1e-4)), 3, "abc".into());
        assert_eq!(Checkpoint::from_json(&ck.to_json()).unwrap(), ck);
    }
    let m = EnhancerModel::new(Architecture::waveform(8, 4, 3), 0).unwrap();
    let mut v: serde_json::Value = serde_json::to_value(&m).unwrap();
    v["params"].as_array_mut().unwrap().pop();
    assert!(serde_json::from_value::<EnhancerModel>(v).is_err());
}

#[test]
fn deterministic_forward() {
    let y = noise(1000, 9);
    for arch in small_archs() {
        let mut m = EnhancerModel::new(arch.clone(), 2).unwrap();
        randomize(&mut m, 2, 0.3);
        assert_eq!(m.forward(&y).unwrap(), m.forward(&y).unwrap());
        assert_eq!(EnhancerModel::new(arch.clone(), 2).unwrap(), EnhancerModel::new(arch, 2).unwrap());
    }
}

#[test]
fn short_inputs_are_rejected() {
    let m = EnhancerModel::new(Architecture::complex_mask(4), 0).unwrap();
    assert!(matches!(m.enhance(&[0.0; 100]), Err(Error::Length(_))));
    let w = EnhancerModel::new(Architecture::waveform(16, 8, 2), 0).unwrap();
    assert!(matches!(w.enhance(&[0.0; 10]), Err(Error::Length(_))));
    assert!(EnhancerModel::new(Architecture::waveform(4, 8, 2), 0).is_err());
}

#[test]
fn single_pair_training_descends() {
    let y = noise(2048, 10);
    let target: Vec<f64> = y.iter().map(|v| 0.5 * v).collect();
    for arch in [Architecture::complex_mask(16), Architecture::real_mask(16)] {
        let mut m = EnhancerModel::new(arch, 0).unwrap();
        m.fit_normalization(&[&y]).unwrap();
        let mut opt = OptimizerState::adam(m.param_count(), 1e-3);
        let mut losses = Vec::new();
        for _ in 0..60 {
            let out = m.forward_recorded(&y).unwrap();
            let (v, g) = Loss::MseTime.eval_with_grad(&out[0], &target).unwrap();
            losses.push(v.scalar);
            let grad = m.backward(&[g]).unwrap();
            let mut p = m.params().to_vec();
            opt.step(&mut p, &grad).unwrap();
            m.set_params(p).unwrap();
        }
        let means: Vec<f64> = losses.chunks(10).map(|c| c.iter().sum::<f64>() / 10.0).collect();
        assert!(means.windows(2).all(|w| w[1] < w[0]), "{means:?}");
    }
}
