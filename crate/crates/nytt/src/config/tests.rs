use super::*;
use nytt_core::losses::Loss;

/// A denoising experiment small enough to train in well under a second.
pub(crate) fn tiny() -> ExperimentConfig {
    ExperimentConfig {
        name: "tiny".into(),
        task: Task::Denoise,
        sample_rate_hz: 16_000,
        corpus: CorpusConfig {
            train_items: 4,
            validation_items: 2,
            test_items: 2,
            duration_s: 0.2,
            speech: SpeechConfig::default(),
        },
        noise_families: default_families(),
        rir_pools: vec![],
        obs_spec: CorruptionSpec::additive(standard_families(Partition::Obs).to_vec(), SnrDist::fixed(5.0)),
        add_spec: CorruptionSpec::additive(standard_families(Partition::Add).to_vec(), SnrDist::Uniform(-5.0, 5.0)),
        test_spec: CorruptionSpec::additive(standard_families(Partition::Test).to_vec(), SnrDist::grid(&[2.5, 7.5])),
        methods: vec![MethodSpec::new(MethodKind::Nytt)],
        sweeps: vec![],
        volume_clean_items: 0,
        seeds: vec![1],
        model: Architecture::complex_mask(4),
        training: TrainingSettings {
            loss: Loss::MseTime,
            epochs: 2,
            batch_size: 2,
            learning_rate: 1e-3,
            validation_every: 1,
            patience: None,
        },
        validation: ValidationSettings::default(),
        triplet: false,
        output_dir: None,
    }
}

fn err(cfg: &ExperimentConfig) -> String {
    match cfg.validate() {
        Err(Error::Config(m)) => m,
        other => panic!("expected a config error, got {other:?}"),
    }
}

#[test]
fn tiny_config_is_valid_and_has_one_condition() {
    let cfg = tiny();
    cfg.validate().unwrap();
    let c = cfg.conditions().unwrap();
    assert_eq!(c.len(), 1);
    assert_eq!(c[0].key, "base");
    assert_eq!(cfg.expected_rows().unwrap(), 1);
}

#[test]
fn json_round_trip_and_defaults() {
    let cfg = tiny();
    let text = serde_json::to_string(&cfg).unwrap();
    assert_eq!(serde_json::from_str::<ExperimentConfig>(&text).unwrap(), cfg);
    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v.as_object_mut().unwrap().remove("sample_rate_hz");
    v.as_object_mut().unwrap().remove("validation");
    let back: ExperimentConfig = serde_json::from_value(v).unwrap();
    assert_eq!(back, cfg);
}

#[test]
fn fingerprint_ignores_output_dir_only() {
    let a = tiny();
    let mut b = a.clone();
    b.output_dir = Some("elsewhere".into());
    assert_eq!(a.fingerprint(), b.fingerprint());
    b.seeds = vec![2];
    assert_ne!(a.fingerprint(), b.fingerprint());
}

#[test]
fn sweep_product_is_ordered_first_axis_outermost() {
    let mut cfg = tiny();
    cfg.sweeps = vec![SweepAxis::SnrX(vec![0.0, 10.0]), SweepAxis::SnrY(vec![[-5.0, 5.0], [0.0, 10.0]])];
    let c = cfg.conditions().unwrap();
    let keys: Vec<&str> = c.iter().map(|c| c.key.as_str()).collect();
    assert_eq!(
        keys,
        ["snr_x=0,snr_y=[-5,5)", "snr_x=0,snr_y=[0,10)", "snr_x=10,snr_y=[-5,5)", "snr_x=10,snr_y=[0,10)"]
    );
    assert_eq!(c[3].points[1].value, 5.0);
    match &c[2].obs_spec {
        CorruptionSpec::AdditiveNoise { snr_db, .. } => assert_eq!(*snr_db, SnrDist::fixed(10.0)),
        s => panic!("{s:?}"),
    }
    match &c[1].add_spec {
        CorruptionSpec::AdditiveNoise { snr_db, noise } => {
            assert_eq!(*snr_db, SnrDist::Uniform(0.0, 10.0));
            assert!(noise.iter().all(|f| f.partition == Partition::Add));
        }
        s => panic!("{s:?}"),
    }
    cfg.methods.push(MethodSpec { iterations: 3, ..MethodSpec::new(MethodKind::IterNytt) });
    cfg.seeds = vec![1, 2];
    assert_eq!(cfg.expected_rows().unwrap(), 4 * 2 * 4);
}

#[test]
fn noise_roles_pick_families_with_the_right_partition() {
    let mut cfg = tiny();
    cfg.sweeps = vec![SweepAxis::NoiseRoles(vec![
        NoiseRoles { label: "matched".into(), obs: Some(vec!["band".into()]), add: Some(vec!["band".into()]) },
        NoiseRoles { label: "mismatched".into(), obs: Some(vec!["band".into()]), add: Some(vec!["tonal".into()]) },
    ])];
    cfg.validate().unwrap();
    let c = cfg.conditions().unwrap();
    let ids = |s: &CorruptionSpec| families_of(s).iter().map(|f| (f.id.clone(), f.partition)).collect::<Vec<_>>();
    assert_eq!(ids(&c[0].obs_spec), [("band".to_string(), Partition::Obs)]);
    assert_eq!(ids(&c[1].add_spec), [("tonal".to_string(), Partition::Add)]);
    assert_eq!(c[1].points[0].value, 1.0);
    cfg.sweeps =
        vec![SweepAxis::NoiseRoles(vec![NoiseRoles { label: "x".into(), obs: Some(vec!["nope".into()]), add: None }])];
    assert!(err(&cfg).contains("unknown noise family"));
}

#[test]
fn volume_condition_relabels() {
    let mut cfg = tiny();
    cfg.volume_clean_items = 1;
    cfg.sweeps = vec![SweepAxis::Volume(vec![VolumeSplit::CleanNoisy, VolumeSplit::CleanEnhanced])];
    cfg.validate().unwrap();
    let c = cfg.conditions().unwrap();
    let moved = c[1].with_volume(VolumeSplit::CleanOnly);
    assert_eq!(moved.key, "volume=clean_only");
    assert_eq!(moved.volume, Some(VolumeSplit::CleanOnly));
}

#[test]
fn validation_rejects_bad_configs() {
    let mut c = tiny();
    c.seeds = vec![1, 1];
    assert!(err(&c).contains("duplicate seeds"));

    let mut c = tiny();
    c.methods.push(MethodSpec::new(MethodKind::Nytt));
    assert!(err(&c).contains("unique"));

    let mut c = tiny();
    c.obs_spec = CorruptionSpec::additive(standard_families(Partition::Add).to_vec(), SnrDist::fixed(5.0));
    assert!(err(&c).contains("partition"));

    let mut c = tiny();
    c.test_spec = CorruptionSpec::Clipping { snr_db: SnrDist::fixed(3.0) };
    assert!(err(&c).contains("does not fit"));

    let mut c = tiny();
    c.sweeps = vec![SweepAxis::SnrX(vec![])];
    assert!(err(&c).contains("empty"));

    let mut c = tiny();
    c.sweeps = vec![SweepAxis::SnrX(vec![0.0]), SweepAxis::SnrX(vec![5.0])];
    assert!(err(&c).contains("twice"));

    let mut c = tiny();
    c.sweeps = vec![SweepAxis::SnrX(vec![5.0, 5.0])];
    assert!(err(&c).contains("distinct"));

    let mut c = tiny();
    c.sweeps = vec![SweepAxis::Rt60(vec!["p".into()])];
    assert!(err(&c).contains("dereverberation"));

    let mut c = tiny();
    c.sweeps = vec![SweepAxis::Volume(vec![VolumeSplit::CleanOnly])];
    assert!(err(&c).contains("volume_clean_items"));

    let mut c = tiny();
    c.volume_clean_items = 1;
    c.methods = vec![MethodSpec::new(MethodKind::Ctt)];
    c.sweeps = vec![SweepAxis::Volume(vec![VolumeSplit::CleanOnly])];
    assert!(err(&c).contains("NyTT"));

    let mut c = tiny();
    c.methods = vec![MethodSpec { iterations: 2, ..MethodSpec::new(MethodKind::Nytt) }];
    assert!(err(&c).contains("iteration"));

    let mut c = tiny();
    c.methods = vec![MethodSpec { iterations: 2, ..MethodSpec::new(MethodKind::IterNytt) }];
    c.validation.targets = ValidationTargets::Clean;
    assert!(err(&c).contains("matched"));

    let mut c = tiny();
    c.corpus.validation_items = 0;
    assert!(err(&c).contains("validation items"));

    let mut c = tiny();
    c.task = Task::Declip;
    assert!(err(&c).contains("does not fit"));
}

#[test]
fn reverberation_pools_are_checked() {
    let mut c = tiny();
    c.task = Task::Dereverb;
    let pool =
        |name: &str, role| RirPoolConfig { name: name.into(), role, bucket: Rt60Bucket::new(0.2, 0.4), count: 2 };
    c.rir_pools = vec![pool("obs", Partition::Obs), pool("add", Partition::Add), pool("test", Partition::Test)];
    c.obs_spec = CorruptionSpec::Reverberation { rir_pool: "obs".into() };
    c.add_spec = CorruptionSpec::Reverberation { rir_pool: "add".into() };
    c.test_spec = CorruptionSpec::Reverberation { rir_pool: "test".into() };
    c.validate().unwrap();
    c.sweeps = vec![SweepAxis::Rt60(vec!["obs".into()])];
    let cond = c.conditions().unwrap();
    assert_eq!(cond[0].points[0].value, 0.30000000000000004);
    c.sweeps = vec![SweepAxis::Rt60(vec!["add".into()])];
    assert!(err(&c).contains("role"));
    c.sweeps.clear();
    c.add_spec = CorruptionSpec::Reverberation { rir_pool: "missing".into() };
    assert!(err(&c).contains("unknown RIR pool"));
}

#[test]
fn resolve_is_relative_to_the_config() {
    assert_eq!(resolve(Path::new("a/b"), Path::new("c.json")), PathBuf::from("a/b/c.json"));
    assert_eq!(resolve(Path::new("a/b"), Path::new("/c.json")), PathBuf::from("/c.json"));
}
