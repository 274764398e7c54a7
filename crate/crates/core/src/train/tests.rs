use super::*;
use crate::synth::{generate_clean_corpus, standard_families, Partition, SnrDist};

fn setup(n: usize) -> (SynthesisContext, Vec<Waveform>, CorruptionSpec) {
    let ctx = SynthesisContext::new(16_000);
    let clean = generate_clean_corpus(n, 0.05, 3).unwrap();
    let spec = CorruptionSpec::additive(standard_families(Partition::Add).to_vec(), SnrDist::grid(&[0.0, 5.0]));
    (ctx, clean, spec)
}

fn cfg(mode: TrainMode, spec: CorruptionSpec) -> TrainConfig {
    let mut c = TrainConfig::new(mode, Loss::MseTime, spec);
    c.epochs = 4;
    c.batch_size = 2;
    c.learning_rate = 1e-3;
    c.validation_size = 2;
    c
}

fn wave() -> Architecture {
    Architecture::waveform(16, 8, 4)
}

#[test]
fn zero_learning_rate_keeps_initialisation() {
    let (ctx, clean, spec) = setup(5);
    let mut c = cfg(TrainMode::Nytt, spec);
    c.epochs = 1;
    c.learning_rate = 0.0;
    let m = EnhancerModel::new(wave(), 1).unwrap();
    let r = train(&ctx, m.clone(), &clean, &c).unwrap();
    assert_eq!(r.best_model.params(), m.params());
    assert_eq!(r.best_epoch, 1);
}

#[test]
fn runs_are_reproducible() {
    let (ctx, clean, spec) = setup(6);
    let c = cfg(TrainMode::Nytt, spec);
    let a = train(&ctx, EnhancerModel::new(wave(), 2).unwrap(), &clean, &c).unwrap();
    let b = train(&ctx, EnhancerModel::new(wave(), 2).unwrap(), &clean, &c).unwrap();
    assert_eq!(a, b);
    let mut c2 = c.clone();
    c2.seed = 9;
    let d = train(&ctx, EnhancerModel::new(wave(), 2).unwrap(), &clean, &c2).unwrap();
    assert_ne!(a.train_loss, d.train_loss);
}

#[test]
fn nytt_on_clean_targets_matches_ctt() {
    let (ctx, clean, spec) = setup(5);
    let a = train(&ctx, EnhancerModel::new(wave(), 3).unwrap(), &clean, &cfg(TrainMode::Ctt, spec.clone())).unwrap();
    let b = train(&ctx, EnhancerModel::new(wave(), 3).unwrap(), &clean, &cfg(TrainMode::Nytt, spec)).unwrap();
    assert_eq!(a.best_model, b.best_model);
    assert_eq!(a.val_loss, b.val_loss);
}

#[test]
fn best_epoch_is_first_validation_minimum() {
    let (ctx, clean, spec) = setup(6);
    let mut c = cfg(TrainMode::Nytt, spec);
    c.epochs = 6;
    c.learning_rate = 3e-2;
    let r = train(&ctx, EnhancerModel::new(wave(), 4).unwrap(), &clean, &c).unwrap();
    let min = r.val_loss.iter().map(|v| v.1).fold(f64::INFINITY, f64::min);
    let first = r.val_loss.iter().find(|v| v.1 == min).unwrap().0;
    assert_eq!(r.best_epoch, first);
    // The returned model reproduces the recorded validation loss.
    let pairs = build_validation_pairs(&ctx, &clean[4..], &c).unwrap();
    assert_eq!(validate(&r.best_model, &pairs, &c.loss).unwrap(), min);
}

#[test]
fn validation_cadence_and_patience() {
    let (ctx, clean, spec) = setup(5);
    let mut c = cfg(TrainMode::Nytt, spec);
    c.epochs = 5;
    c.validation_every = 2;
    let r = train(&ctx, EnhancerModel::new(wave(), 5).unwrap(), &clean, &c).unwrap();
    assert_eq!(r.val_loss.iter().map(|v| v.0).collect::<Vec<_>>(), vec![2, 4, 5]);
    c.validation_every = 1;
    c.learning_rate = 0.0;
    c.patience = Some(2);
    let r = train(&ctx, EnhancerModel::new(wave(), 5).unwrap(), &clean, &c).unwrap();
    assert_eq!(r.train_loss.len(), 3);
    assert_eq!(r.best_epoch, 1);
}

#[test]
fn configuration_errors() {
    let (ctx, clean, spec) = setup(3);
    let m = EnhancerModel::new(wave(), 0).unwrap();
    let mut c = cfg(TrainMode::Nytt, spec.clone());
    c.validation_size = 3;
    assert!(matches!(train(&ctx, m.clone(), &clean, &c), Err(Error::Config(_))));
    assert!(matches!(train(&ctx, m.clone(), &[], &c), Err(Error::EmptyCorpus)));
    let c = cfg(TrainMode::Mixit, spec.clone());
    assert!(matches!(run_mixit(&ctx, m.clone(), &clean, &c), Err(Error::Config(_))));
    let mut c = cfg(TrainMode::Nytt, spec);
    c.epochs = 0;
    assert!(train(&ctx, m.clone(), &clean, &c).is_err());
    assert!(matches!(validate(&m, &[], &Loss::MseTime), Err(Error::EmptyCorpus)));
}

#[test]
fn divergence_is_reported() {
    let (ctx, clean, spec) = setup(4);
    let loud: Vec<Waveform> = clean.iter().map(|w| w.scaled(1e5).unwrap()).collect();
    let c = cfg(TrainMode::Nytt, spec);
    let mut m = EnhancerModel::new(wave(), 0).unwrap();
    m.segment_mut("dec_w").unwrap().iter_mut().for_each(|v| *v = 1.0);
    match train(&ctx, m, &loud, &c) {
        Err(Error::Divergence { epoch, step, loss }) => {
            assert_eq!((epoch, step), (1, 1));
            assert!(loss > DIVERGENCE_LIMIT);
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn mixit_trains_three_outputs() {
    let (ctx, clean, spec) = setup(6);
    let c = cfg(TrainMode::Mixit, spec);
    let m = EnhancerModel::new(wave().with_sources(3), 1).unwrap();
    let r = run_mixit(&ctx, m, &clean, &c).unwrap();
    assert_eq!(r.assignments.len(), 4);
    assert!(r.assignments.iter().all(|a| a[0] + a[1] == 4));
    assert!(r.val_loss.iter().all(|v| v.1.is_finite()));
    assert_eq!(enhance(&r.best_model, &clean[0]).unwrap().len(), clean[0].len());
}

#[test]
fn single_iteration_is_plain_nytt() {
    let (ctx, clean, spec) = setup(5);
    let c = cfg(TrainMode::Nytt, spec.clone());
    let plain = train(&ctx, EnhancerModel::new(wave(), 7).unwrap(), &clean, &c).unwrap();
    let ic = IterNyttConfig { train: c, iterations: 1, later_add_specs: vec![spec], warm_start: false };
    let out = run_iternytt(&ctx, &wave(), 7, &clean, &ic, None).unwrap();
    assert!(out.error.is_none());
    assert_eq!(out.states[0].model, plain.best_model);
    assert_eq!(out.final_targets, enhance_all(&plain.best_model, &clean).unwrap());
}

#[test]
fn iterations_always_enhance_the_original_noisy_targets() {
    let (ctx, clean, spec) = setup(5);
    let ic =
        IterNyttConfig { train: cfg(TrainMode::Nytt, spec), iterations: 3, later_add_specs: vec![], warm_start: false };
    let mut seen = Vec::new();
    let mut obs = |s: &IterationState, next: &[Waveform]| {
        seen.push((s.targets_hash.clone(), corpus_hash(next)));
        Ok(BTreeMap::from([("iteration".to_string(), s.iteration as f64)]))
    };
    let out = run_iternytt(&ctx, &wave(), 1, &clean, &ic, Some(&mut obs)).unwrap();
    let x_hash = corpus_hash(&clean);
    assert_eq!(out.states.len(), 3);
    assert!(out.states.iter().all(|s| s.enhancement_input_hash == x_hash));
    assert_eq!(seen[0].0, x_hash);
    for i in 1..3 {
        assert_eq!(seen[i].0, seen[i - 1].1, "iteration {i} trains on the previous output");
    }
    assert_eq!(out.states[2].metrics["iteration"], 3.0);
    assert_ne!(out.states[1].model.params(), out.states[0].model.params());
}

#[test]
fn identity_models_leave_targets_fixed() {
    let (ctx, clean, spec) = setup(4);
    let mut c = cfg(TrainMode::Nytt, spec);
    c.learning_rate = 0.0;
    c.epochs = 1;
    let ic = IterNyttConfig { train: c, iterations: 3, later_add_specs: vec![], warm_start: true };
    let out = run_iternytt(&ctx, &wave(), 0, &clean, &ic, None).unwrap();
    assert_eq!(out.final_targets, clean);
    assert!(out.states.iter().all(|s| s.targets_hash == corpus_hash(&clean)));
}

#[test]
fn failed_iteration_keeps_earlier_states() {
    let (ctx, clean, spec) = setup(4);
    let mut c = cfg(TrainMode::Nytt, spec);
    c.epochs = 1;
    // Iteration 2 asks for a pool the context does not know.
    let bad = CorruptionSpec::Reverberation { rir_pool: "missing".into() };
    let ic = IterNyttConfig { train: c, iterations: 3, later_add_specs: vec![bad], warm_start: false };
    let out = run_iternytt(&ctx, &wave(), 0, &clean, &ic, None).unwrap();
    assert_eq!(out.states.len(), 1);
    assert!(out.error.is_some());
}

#[test]
fn validation_spec_overrides_add_spec() {
    let (ctx, clean, spec) = setup(3);
    let mut c = cfg(TrainMode::Nytt, spec);
    c.validation_spec = Some(CorruptionSpec::identity());
    let pairs = build_validation_pairs(&ctx, &clean, &c).unwrap();
    assert!(pairs.iter().all(|p| p.input == p.target));
    let m = EnhancerModel::new(wave(), 0).unwrap();
    assert_eq!(validate(&m, &pairs, &c.loss).unwrap(), 0.0);
}
