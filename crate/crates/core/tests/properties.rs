use harcl::augment::{augment_fourfold, AugmentationConfig};
use harcl::config::RunConfig;
use harcl::datasets::{region_of, scenario_split, ScenarioMode, SensorWindow};
use harcl::fe::{build_fe, embed_batch, supcon_loss, EmbeddingSample, FeConfig, SupConOptions};
use harcl::pipeline::{normalize_for, prepare_split, pretrain};
use harcl::relation::{
    build_rm, classify, rm_loss, sample_episode, ClassSamples, RmConfig, TrainedClassifier,
};
use harcl::replay::ReplayBuffer;
use harcl::streaming::{make_stream_plan, run_stream};
use harcl::{seeded_rng, ClassId};
use ndarray::Array2;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use std::collections::BTreeSet;

fn window(t: usize, c: usize, label: ClassId, subject: u32, seed: u64) -> SensorWindow {
    SensorWindow {
        data: Array2::from_shape_fn((t, c), |(i, j)| ((i * 31 + j * 7) as f64 + seed as f64).sin()),
        label,
        subject_id: subject,
        timestamp: seed as f64,
        window_seconds: 1.0,
    }
}

fn rm_cfg(d: usize) -> RmConfig {
    RmConfig { embedding_dim: d, conv_filters: 2, hidden: 4, support_per_class: 2, ..RmConfig::default() }
}

fn replay_from(vectors: &[Vec<f32>], classes: usize) -> ClassSamples {
    let mut out = ClassSamples::new();
    for (i, v) in vectors.iter().enumerate() {
        let c = (i % classes) as ClassId;
        out.entry(c).or_default().push(EmbeddingSample { vector: v.clone(), label: Some(c), timestamp: i as f64 });
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn split_is_a_partition(
        cells in prop::collection::vec((0u32..4, 0u32..4), 16..80),
        base_mask in 1u8..15,
        new_mask in 1u8..15,
        between in any::<bool>(),
    ) {
        let mut windows: Vec<SensorWindow> = (0..4u32)
            .flat_map(|c| (0..4u32).map(move |s| (c, s)))
            .chain(cells)
            .enumerate()
            .map(|(i, (c, s))| window(4, 1, c, s, i as u64))
            .collect();
        windows.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
        let base: BTreeSet<ClassId> = (0..4).filter(|c| base_mask >> c & 1 == 1).collect();
        let new: BTreeSet<u32> = (0..4).filter(|s| new_mask >> s & 1 == 1).collect();
        let mode = if between { ScenarioMode::BetweenSubject } else { ScenarioMode::WithinSubject };
        let split = scenario_split(&windows, &base, &new, mode).unwrap();
        let count = |r: u8| windows.iter().filter(|w| region_of(w, &base, &new) == r).count();
        prop_assert_eq!(split.fe_train.len(), count(1));
        prop_assert!(split.fe_train.iter().all(|w| base.contains(&w.label) && !new.contains(&w.subject_id)));
        prop_assert_eq!(split.test.len(), count(2) + count(4));
        prop_assert!(split.test.iter().all(|w| new.contains(&w.subject_id)));
        if between {
            prop_assert!(split.rm_train_pool.iter().all(|w| !new.contains(&w.subject_id)));
            prop_assert_eq!(split.rm_train_pool.len(), count(1) + count(3));
        }
    }

    #[test]
    fn augmentation_keeps_shape_and_label(
        t in 4usize..40,
        c in 1usize..4,
        sigmas in prop::array::uniform4(0.0f64..0.5),
        knots in 2usize..6,
        seed in any::<u64>(),
    ) {
        let windows: Vec<SensorWindow> = (0..3).map(|i| window(t, c, i, 0, i as u64)).collect();
        let cfg = AugmentationConfig {
            sigma_jitter: sigmas[0],
            sigma_scale: sigmas[1],
            sigma_mwarp: sigmas[2],
            sigma_twarp: sigmas[3],
            n_knots: knots,
            seed,
        };
        let out = augment_fourfold(&windows, &cfg).unwrap();
        prop_assert_eq!(out.len(), 12);
        for (k, w) in out.iter().enumerate() {
            prop_assert_eq!(w.data.dim(), (t, c));
            prop_assert_eq!(w.label, windows[k / 4].label);
            prop_assert!(w.data.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn supcon_permutation_and_scale_invariant(
        raw in prop::collection::vec(-3.0f64..3.0, 24),
        scales in prop::collection::vec(0.1f64..10.0, 6),
        seed in any::<u64>(),
    ) {
        let e = Array2::from_shape_vec((6, 4), raw).unwrap();
        prop_assume!(e.rows().into_iter().all(|r| r.dot(&r) > 1e-3));
        let labels = [0, 1, 0, 1, 2, 2];
        let opts = SupConOptions::new(0.3);
        let base = supcon_loss(e.view(), &labels, opts).unwrap();
        let mut order: Vec<usize> = (0..6).collect();
        order.shuffle(&mut seeded_rng(seed));
        let permuted = Array2::from_shape_fn((6, 4), |(i, j)| e[[order[i], j]]);
        let plabels: Vec<ClassId> = order.iter().map(|&i| labels[i]).collect();
        let p = supcon_loss(permuted.view(), &plabels, opts).unwrap();
        prop_assert!((p - base).abs() <= 1e-9 * base.abs().max(1.0));
        let scaled = Array2::from_shape_fn((6, 4), |(i, j)| e[[i, j]] * scales[i]);
        let s = supcon_loss(scaled.view(), &labels, opts).unwrap();
        prop_assert!((s - base).abs() <= 1e-9 * base.abs().max(1.0));
    }

    #[test]
    fn classify_ignores_replay_order_and_follows_argmax(
        vectors in prop::collection::vec(prop::collection::vec(-2.0f32..2.0, 4), 9..18),
        queries in prop::collection::vec(prop::collection::vec(-2.0f32..2.0, 4), 1..6),
        seed in any::<u64>(),
    ) {
        let rm = build_rm(&RmConfig { seed, ..rm_cfg(4) }).unwrap();
        let replay = replay_from(&vectors, 3);
        let q: Vec<EmbeddingSample> =
            queries.iter().map(|v| EmbeddingSample { vector: v.clone(), label: None, timestamp: 0.0 }).collect();
        let a = classify(&rm, &replay, &q).unwrap();
        let mut shuffled = replay.clone();
        let mut rng = seeded_rng(seed ^ 1);
        shuffled.values_mut().for_each(|v| v.shuffle(&mut rng));
        let b = classify(&rm, &shuffled, &q).unwrap();
        prop_assert_eq!(&a.labels, &b.labels);
        // a strictly increasing transform of the scores keeps each column's argmax
        for j in 0..q.len() {
            let transformed: Vec<f64> = a.scores.column(j).iter().map(|s| (5.0 * s).exp() + s.powi(3)).collect();
            let mut best = 0;
            for i in 1..transformed.len() {
                if transformed[i] > transformed[best] {
                    best = i;
                }
            }
            prop_assert_eq!(a.classes[best], a.labels[j]);
        }
        prop_assert!(a.scores.iter().all(|&s| s > 0.0 && s < 1.0));
    }

    #[test]
    fn episodes_disjoint_with_exact_support(
        sizes in prop::collection::vec(3usize..12, 1..5),
        support in 1usize..3,
        seed in any::<u64>(),
    ) {
        let mut replay = ClassSamples::new();
        let mut t = 0.0;
        for (c, &n) in sizes.iter().enumerate() {
            let list = (0..n)
                .map(|_| {
                    t += 1.0;
                    EmbeddingSample { vector: vec![t as f32], label: Some(c as ClassId), timestamp: t }
                })
                .collect();
            replay.insert(c as ClassId, list);
        }
        let ep = sample_episode(&replay, support, &mut seeded_rng(seed)).unwrap();
        for (c, samples) in &replay {
            let s: BTreeSet<u64> = ep.support[c].iter().map(|e| e.timestamp.to_bits()).collect();
            let q: BTreeSet<u64> = ep.query[c].iter().map(|e| e.timestamp.to_bits()).collect();
            prop_assert_eq!(ep.support[c].len(), support);
            prop_assert!(s.is_disjoint(&q));
            prop_assert_eq!(s.len() + q.len(), samples.len());
        }
    }

    #[test]
    fn rm_loss_nonnegative_and_zero_only_on_exact_targets(
        scores in prop::collection::vec(0.0f64..1.0, 12),
        weights in prop::collection::vec(-1.0f64..1.0, 0..8),
        lambda in 0.0f64..1.0,
    ) {
        let classes = [0, 1, 2];
        let queries = [0, 2, 2, 1];
        let s = Array2::from_shape_vec((3, 4), scores).unwrap();
        let loss = rm_loss(&s, &classes, &queries, lambda, &weights).unwrap();
        prop_assert!(loss >= 0.0);
        let exact = Array2::from_shape_fn((3, 4), |(i, j)| if classes[i] == queries[j] { 1.0 } else { 0.0 });
        let zero = rm_loss(&exact, &classes, &queries, lambda, &weights).unwrap();
        let penalty_free = lambda == 0.0 || weights.iter().all(|&w| w == 0.0);
        prop_assert_eq!(zero == 0.0, penalty_free);
        if s != exact {
            prop_assert!(loss > 0.0);
        }
    }

    #[test]
    fn replay_accounting_is_monotone(
        updates in prop::collection::vec((0u32..3, 0.0f64..500.0), 1..120),
        capacity in 3usize..8,
    ) {
        let mut buf = ReplayBuffer::new(capacity, 1).unwrap();
        for (class, t) in updates {
            let before = buf.replaced_since_retrain().get(&class).copied().unwrap_or(0);
            let report = buf
                .update(&[EmbeddingSample { vector: vec![0.0], label: Some(class), timestamp: t }])
                .unwrap();
            let after = buf.replaced_since_retrain().get(&class).copied().unwrap_or(0);
            prop_assert_eq!(after, before + report.replaced);
            prop_assert!(buf.classes().values().all(|v| v.len() <= capacity));
            // same state, same answer
            let clone = buf.clone();
            prop_assert_eq!(clone.should_retrain(), buf.should_retrain());
            prop_assert_eq!(buf.should_retrain(), buf.should_retrain());
        }
    }
}

#[test]
fn frozen_extractor_is_unchanged_by_embedding() {
    let cfg = FeConfig {
        input_channels: 2,
        window_len: 16,
        embedding_dim: 8,
        conv_channels: vec![4, 4],
        kernel_sizes: vec![3, 3],
        lstm_hidden: 4,
        n_classes_base: 2,
        ..FeConfig::default()
    };
    let mut fe = build_fe(&cfg).unwrap();
    fe.freeze();
    let before = fe.params().checksum();
    let windows: Vec<SensorWindow> = (0..20).map(|i| window(16, 2, i % 2, 0, i as u64)).collect();
    for _ in 0..5 {
        embed_batch(&fe, &windows).unwrap();
    }
    assert_eq!(fe.params().checksum(), before);
}

#[test]
fn learner_never_reads_unlabeled_truth() {
    let cfg = RunConfig {
        synth_samples_per_class: 900,
        conv_channels: vec![8, 8],
        lstm_hidden: 8,
        embedding_dim: 16,
        fe_epochs: 1,
        rm_epochs: 5,
        ..RunConfig::default()
    }
    .resolved()
    .unwrap();
    let raw = prepare_split(&cfg).unwrap();
    let fe = pretrain(&cfg, &raw).unwrap().fe;
    let split = normalize_for(&fe, &raw).unwrap();
    let plan = make_stream_plan(&split, &cfg.stream_config()).unwrap();
    let mut hidden = plan.clone();
    for b in &mut hidden.batches {
        b.unlabeled.iter_mut().for_each(|w| w.label = 999);
    }
    let rm = cfg.rm_config();
    let run = |plan| {
        let base = harcl::pipeline::base_embeddings(&fe, &split.fe_train).unwrap();
        let replay = ReplayBuffer::init_from_base(&base, 20, &mut seeded_rng(cfg.replay_seed())).unwrap();
        let (initial, _) = TrainedClassifier::train(cfg.classifier, replay.classes(), &rm, None).unwrap();
        run_stream(&fe, &rm, cfg.classifier, replay, initial, plan, |_| {}).unwrap()
    };
    let (a, b) = (run(&plan), run(&hidden));
    assert_eq!(a.final_predictions, b.final_predictions);
    assert_eq!(a.report.retrain_events.len(), b.report.retrain_events.len());
    assert!(b.truths.iter().all(|&t| t == 999));
}
