use harcl::augment::AugmentationConfig;
use harcl::config::RunConfig;
use harcl::datasets::SensorWindow;
use harcl::fe::{build_fe, embed_batch, load_fe, save_fe, train_fe, FeConfig};
use harcl::pipeline::{base_embeddings, normalize_for, prepare_split, pretrain, stream};
use harcl::relation::{classify, load_rm, save_rm, train_rm, ClassifierKind};
use harcl::replay::ReplayBuffer;
use harcl::streaming::make_stream_plan;
use harcl::{seeded_rng, ClassId, Error};
use ndarray::Array2;
use std::collections::BTreeSet;

fn quick() -> RunConfig {
    RunConfig {
        synth_samples_per_class: 900,
        conv_channels: vec![8, 16],
        lstm_hidden: 16,
        embedding_dim: 32,
        fe_epochs: 3,
        rm_epochs: 10,
        ..RunConfig::default()
    }
}

#[test]
fn separable_two_class_training_fits() {
    let windows: Vec<SensorWindow> = (0..40)
        .map(|i| {
            let label = (i % 2) as ClassId;
            let level = if label == 0 { 1.0 } else { -1.0 };
            SensorWindow {
                data: Array2::from_shape_fn((32, 2), |(t, c)| level + 0.3 * ((t * (c + 1) + i) as f64 * 0.7).sin()),
                label,
                subject_id: 0,
                timestamp: i as f64,
                window_seconds: 1.0,
            }
        })
        .collect();
    let cfg = FeConfig {
        input_channels: 2,
        window_len: 32,
        embedding_dim: 16,
        conv_channels: vec![8, 8],
        kernel_sizes: vec![3, 3],
        lstm_hidden: 8,
        n_classes_base: 2,
        epochs: 50,
        batch_size: 20,
        ..FeConfig::default()
    };
    let (fe, report) = train_fe(build_fe(&cfg).unwrap(), &windows, &AugmentationConfig::default()).unwrap();
    assert!(fe.is_frozen());
    assert_eq!(report.epoch_losses.len(), 50);
    assert!(report.train_accuracy >= 0.95, "train accuracy {}", report.train_accuracy);
}

#[test]
fn stream_rerun_is_identical() {
    let cfg = quick();
    let split = prepare_split(&cfg).unwrap();
    let fe = pretrain(&cfg, &split).unwrap().fe;
    let mut seen = Vec::new();
    let a = stream(&cfg, &fe, &split, |m| seen.push(m.batch_index)).unwrap();
    let b = stream(&cfg, &fe, &split, |_| {}).unwrap();
    assert_eq!(a.report.summary(), b.report.summary());
    assert_eq!(a.final_predictions, b.final_predictions);
    assert_eq!(seen, (0..a.report.batches.len()).collect::<Vec<_>>());
    let s = a.report.summary();
    assert!(s.get("base_macro_f1").is_some() && s.get("new_macro_f1").is_some());
    assert!(s.get("batches").is_none());
    // one new-class retrain per introduced class, in batch order
    let new_class_events: Vec<usize> = a
        .report
        .retrain_events
        .iter()
        .filter(|e| e.reason.as_str() == "new_class")
        .map(|e| e.batch_index)
        .collect();
    assert_eq!(new_class_events.len(), 3);
    assert!(new_class_events.windows(2).all(|w| w[0] < w[1]));
    for v in a.report.per_class_f1.values().chain([&a.report.final_accuracy, &a.report.final_macro_f1]) {
        assert!((0.0..=1.0).contains(v));
    }
}

#[test]
fn mlp_variant_and_contrastive_ablation_run() {
    let cfg = RunConfig { use_contrastive: false, classifier: ClassifierKind::Mlp3, ..quick() };
    let split = prepare_split(&cfg).unwrap();
    let out = pretrain(&cfg, &split).unwrap();
    assert!(out.report.con_losses.iter().all(|&l| l == 0.0) || out.report.con_losses.is_empty());
    let outcome = stream(&cfg, &out.fe, &split, |_| {}).unwrap();
    assert_eq!(outcome.report.replay_classes.len(), 8);
    assert_eq!(outcome.final_predictions.len(), outcome.truths.len());
}

#[test]
fn artifacts_round_trip_through_files() {
    let cfg = quick();
    let split = prepare_split(&cfg).unwrap();
    let fe = pretrain(&cfg, &split).unwrap().fe;
    let dir = tempfile::tempdir().unwrap();
    save_fe(&fe, &dir.path().join("fe.bin")).unwrap();
    let loaded = load_fe(&dir.path().join("fe.bin")).unwrap();
    assert_eq!(loaded, fe);

    let norm = normalize_for(&loaded, &split).unwrap();
    let base = base_embeddings(&loaded, &norm.fe_train).unwrap();
    let replay = ReplayBuffer::init_from_base(&base, 20, &mut seeded_rng(1)).unwrap();
    replay.snapshot_save(&dir.path().join("replay.bin")).unwrap();
    let back = ReplayBuffer::snapshot_load(&dir.path().join("replay.bin")).unwrap();
    assert_eq!(back.classes(), replay.classes());

    let rm_cfg = cfg.resolved().unwrap().rm_config();
    let (rm, _) = train_rm(replay.classes(), &rm_cfg).unwrap();
    save_rm(&rm, &dir.path().join("rm.bin")).unwrap();
    let rm2 = load_rm(&dir.path().join("rm.bin")).unwrap();
    let queries = embed_batch(&loaded, &norm.test[..10]).unwrap();
    // weights are stored as f32
    let (a, b) = (classify(&rm, back.classes(), &queries).unwrap(), classify(&rm2, back.classes(), &queries).unwrap());
    assert_eq!(a.labels, b.labels);
    assert!(a.scores.iter().zip(b.scores.iter()).all(|(x, y)| (x - y).abs() < 1e-5));
}

#[test]
fn plan_schedule_for_five_plus_three() {
    let cfg = quick().resolved().unwrap();
    let split = prepare_split(&cfg).unwrap();
    let plan = make_stream_plan(&split, &cfg.stream_config()).unwrap();
    assert_eq!(plan.introductions.len(), 3);
    assert!(plan.introductions.windows(2).all(|w| w[0].1 < w[1].1));
    for &(class, _) in &plan.introductions {
        assert_eq!(plan.n_labeled(class), 20);
    }
    let classes: BTreeSet<ClassId> = plan.unlabeled_windows().map(|w| w.label).collect();
    assert_eq!(classes.len(), 8);
}

#[test]
fn missing_data_dir_is_a_config_error() {
    let cfg = RunConfig::from_toml_str("dataset = \"hapt\"").unwrap();
    assert!(matches!(prepare_split(&cfg), Err(Error::InvalidConfig(_))));
    let cfg = RunConfig::from_toml_str("dataset = \"hapt\"\ndata_dir = \"/nonexistent/hapt\"").unwrap();
    assert!(prepare_split(&cfg).is_err());
}
