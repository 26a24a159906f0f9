//! Stream plans, the streaming learner and its metrics.
//!
//! Each batch is embedded with the frozen extractor, its labeled part is
//! offered to the replay buffer, the classifier is retrained when the buffer
//! asks for it, and the unlabeled part is classified with whatever model is
//! current after that step.

mod metrics;

pub use metrics::{accuracy, macro_f1, pca_project, per_class_f1, PcaProjection};

use crate::datasets::{ScenarioMode, ScenarioSplit, SensorWindow};
use crate::fe::{embed_batch, EmbeddingSample, FeModel};
use crate::relation::{ClassifierKind, RmConfig, TrainedClassifier};
use crate::replay::{ReplayBuffer, RetrainReason};
use crate::{derive_seed, seeded_rng, ClassId, Error, Result};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StreamConfig {
    /// Unlabeled windows per batch.
    pub batch_size: usize,
    /// Labeled base-class windows as a fraction of the base-class unlabeled
    /// windows.
    pub base_label_fraction: f64,
    /// Labeled windows per new class over the whole stream.
    pub new_class_budget: usize,
    /// Labeled windows delivered with the batch that introduces a class.
    pub intro_labeled: usize,
    pub seed: u64,
}

impl Default for StreamConfig {
    fn default() -> Self {
        Self { batch_size: 64, base_label_fraction: 0.1, new_class_budget: 20, intro_labeled: 10, seed: 0 }
    }
}

impl StreamConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("stream batch_size must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.base_label_fraction) {
            return Err(Error::InvalidConfig("base_label_fraction must be in [0, 1]".into()));
        }
        if self.intro_labeled < 2 || self.intro_labeled > self.new_class_budget {
            return Err(Error::InvalidConfig(format!(
                "intro_labeled {} must be between 2 and the budget {}",
                self.intro_labeled, self.new_class_budget
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamBatch {
    pub batch_index: usize,
    pub labeled: Vec<SensorWindow>,
    /// Ground truth stays in the windows for scoring; the learner only sees
    /// their embeddings.
    pub unlabeled: Vec<SensorWindow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamPlan {
    pub batches: Vec<StreamBatch>,
    /// `(class, batch index)` of each new class's first labeled batch.
    pub introductions: Vec<(ClassId, usize)>,
    pub base_classes: BTreeSet<ClassId>,
    pub new_classes: BTreeSet<ClassId>,
    pub new_class_budget: usize,
    pub seed: u64,
}

impl StreamPlan {
    pub fn n_labeled(&self, class: ClassId) -> usize {
        self.batches.iter().flat_map(|b| &b.labeled).filter(|w| w.label == class).count()
    }

    pub fn unlabeled_windows(&self) -> impl Iterator<Item = &SensorWindow> {
        self.batches.iter().flat_map(|b| &b.unlabeled)
    }
}

/// Spreads `items` over batches `start..end`, evenly and in order.
fn spread<T>(items: Vec<T>, start: usize, end: usize, out: &mut [Vec<T>]) {
    let n = items.len();
    let span = end - start;
    for (i, item) in items.into_iter().enumerate() {
        out[start + i * span / n.max(1)].push(item);
    }
}

fn split_even<T>(mut items: Vec<T>, parts: usize) -> Vec<Vec<T>> {
    let n = items.len();
    let mut out = Vec::with_capacity(parts);
    for p in (0..parts).rev() {
        let at = n * p / parts;
        out.push(items.split_off(at));
    }
    out.reverse();
    out
}

type ByClass = BTreeMap<ClassId, Vec<SensorWindow>>;

/// Draws `n` labeled windows of `class` from the front of the shuffled pool.
fn take_labeled(pool: &mut ByClass, test: &mut ByClass, within: bool, class: ClassId, n: usize) -> Result<Vec<SensorWindow>> {
    let mut src = pool.remove(&class).unwrap_or_default();
    if src.len() < n {
        return Err(Error::InsufficientData(format!(
            "class {class} has {} labeled candidates, {n} are needed",
            src.len()
        )));
    }
    let rest = src.split_off(n);
    if within {
        // same windows as the test pool; keep them out of it
        let chosen: Vec<(u32, u64)> = src.iter().map(|w| (w.subject_id, w.timestamp.to_bits())).collect();
        if let Some(t) = test.get_mut(&class) {
            t.retain(|w| !chosen.contains(&(w.subject_id, w.timestamp.to_bits())));
        }
    }
    pool.insert(class, rest);
    Ok(src)
}

/// Builds the stream for a scenario split.
///
/// The stream has one phase per new class plus a leading base-only phase.
/// Base-class test windows are spread over all phases; the test windows of
/// the `k`-th new class are spread over phase `k` onwards, never in the batch
/// that introduces the class. Labeled windows come from the split's RM
/// training pool: `intro_labeled` of each new class arrive in its
/// introduction batch and the rest of its budget over the following batches;
/// base-class labeled windows are spread over the whole stream. In the
/// within-subject scenario labeled windows are removed from the unlabeled
/// pool.
pub fn make_stream_plan(split: &ScenarioSplit, cfg: &StreamConfig) -> Result<StreamPlan> {
    cfg.validate()?;
    if split.new_classes.is_empty() {
        return Err(Error::InsufficientData("the split has no new classes".into()));
    }
    let mut rng = seeded_rng(cfg.seed);
    let by_class = |ws: &[SensorWindow]| {
        let mut m = ByClass::new();
        for w in ws {
            m.entry(w.label).or_default().push(w.clone());
        }
        m
    };
    let mut pool = by_class(&split.rm_train_pool);
    let mut test = by_class(&split.test);
    for v in pool.values_mut().chain(test.values_mut()) {
        v.shuffle(&mut rng);
    }
    let within = split.mode == ScenarioMode::WithinSubject;

    let new_classes: Vec<ClassId> = split.new_classes.iter().copied().collect();
    let mut new_labeled = BTreeMap::new();
    for &c in &new_classes {
        new_labeled.insert(c, take_labeled(&mut pool, &mut test, within, c, cfg.new_class_budget)?);
    }
    let base_test_count: usize = split.base_classes.iter().map(|c| test.get(c).map_or(0, Vec::len)).sum();
    let n_base_labeled = (base_test_count as f64 * cfg.base_label_fraction).round() as usize;
    let mut base_labeled = Vec::new();
    let base: Vec<ClassId> = split.base_classes.iter().copied().collect();
    for (i, &c) in base.iter().enumerate() {
        let share = n_base_labeled * (i + 1) / base.len() - n_base_labeled * i / base.len();
        let available = pool.get(&c).map_or(0, Vec::len);
        base_labeled.extend(take_labeled(&mut pool, &mut test, within, c, share.min(available))?);
    }
    base_labeled.shuffle(&mut rng);

    let phases = new_classes.len() + 1;
    let base_unlabeled: Vec<SensorWindow> = base.iter().flat_map(|c| test.remove(c).unwrap_or_default()).collect();
    let mut base_chunks = split_even(shuffle(base_unlabeled, &mut rng), phases);
    let mut new_chunks: Vec<Vec<Vec<SensorWindow>>> = new_classes
        .iter()
        .enumerate()
        .map(|(k, c)| split_even(test.remove(c).unwrap_or_default(), phases - (k + 1)))
        .collect();

    let mut unlabeled_batches: Vec<Vec<SensorWindow>> = Vec::new();
    let mut intro_batch = Vec::new();
    for p in 0..phases {
        let mut others = std::mem::take(&mut base_chunks[p]);
        for k in 0..p.saturating_sub(1) {
            others.append(&mut new_chunks[k][p - (k + 1)]);
        }
        let fresh = if p > 0 { std::mem::take(&mut new_chunks[p - 1][0]) } else { Vec::new() };
        let others = shuffle(others, &mut rng);
        let phase_start = unlabeled_batches.len();
        if p > 0 {
            // the introduction batch carries no windows of the class it introduces
            let head: Vec<SensorWindow> = others.iter().take(cfg.batch_size).cloned().collect();
            let tail: Vec<SensorWindow> = others.into_iter().skip(cfg.batch_size).chain(fresh).collect();
            unlabeled_batches.push(head);
            let tail = shuffle(tail, &mut rng);
            let mut chunks: Vec<Vec<SensorWindow>> = tail.chunks(cfg.batch_size).map(<[_]>::to_vec).collect();
            if chunks.is_empty() {
                chunks.push(Vec::new());
            }
            unlabeled_batches.extend(chunks);
            intro_batch.push(phase_start);
        } else {
            let mut chunks: Vec<Vec<SensorWindow>> = others.chunks(cfg.batch_size).map(<[_]>::to_vec).collect();
            if chunks.is_empty() {
                chunks.push(Vec::new());
            }
            unlabeled_batches.extend(chunks);
        }
    }

    let n_batches = unlabeled_batches.len();
    let mut labeled: Vec<Vec<SensorWindow>> = vec![Vec::new(); n_batches];
    spread(base_labeled, 0, n_batches, &mut labeled);
    let mut introductions = Vec::new();
    for (k, &c) in new_classes.iter().enumerate() {
        let mut ws = new_labeled.remove(&c).expect("drawn above");
        let later = ws.split_off(cfg.intro_labeled);
        let at = intro_batch[k];
        labeled[at].extend(ws);
        if at + 1 < n_batches {
            spread(later, at + 1, n_batches, &mut labeled);
        } else {
            labeled[at].extend(later);
        }
        introductions.push((c, at));
    }

    let batches = unlabeled_batches
        .into_iter()
        .zip(labeled)
        .enumerate()
        .map(|(batch_index, (unlabeled, labeled))| StreamBatch { batch_index, labeled, unlabeled })
        .filter(|b| !b.labeled.is_empty() || !b.unlabeled.is_empty())
        .collect::<Vec<_>>();
    // reindex after dropping empty batches
    let mut remap = BTreeMap::new();
    let batches: Vec<StreamBatch> = batches
        .into_iter()
        .enumerate()
        .map(|(i, b)| {
            remap.insert(b.batch_index, i);
            StreamBatch { batch_index: i, ..b }
        })
        .collect();
    let introductions = introductions.into_iter().map(|(c, b)| (c, remap[&b])).collect();
    Ok(StreamPlan {
        batches,
        introductions,
        base_classes: split.base_classes.clone(),
        new_classes: split.new_classes.clone(),
        new_class_budget: cfg.new_class_budget,
        seed: cfg.seed,
    })
}

fn shuffle<T>(mut v: Vec<T>, rng: &mut crate::SeededRng) -> Vec<T> {
    v.shuffle(rng);
    v
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchMetrics {
    pub batch_index: usize,
    pub n_labeled: usize,
    pub n_unlabeled: usize,
    /// `None` when the batch has no unlabeled windows.
    pub accuracy: Option<f64>,
    pub retrain: bool,
    pub retrain_reason: Option<RetrainReason>,
    pub retrain_seconds: f64,
    /// A trigger fired but some class was still too small to train on.
    pub retrain_deferred: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrainEvent {
    pub batch_index: usize,
    pub reason: RetrainReason,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub batches: Vec<BatchMetrics>,
    /// Accuracy over all unlabeled windows seen up to each batch.
    pub cumulative_accuracy: Vec<f64>,
    /// Scores of the predictions made during the stream.
    pub stream_accuracy: f64,
    pub stream_macro_f1: f64,
    /// Scores of the final classifier on every unlabeled window of the plan.
    pub final_accuracy: f64,
    pub final_macro_f1: f64,
    pub per_class_f1: BTreeMap<ClassId, f64>,
    pub base_macro_f1: f64,
    pub new_macro_f1: f64,
    /// Base-class macro-F1 of the initial classifier on base-class windows.
    pub pre_stream_base_macro_f1: f64,
    /// Same windows, final classifier.
    pub post_stream_base_macro_f1: f64,
    pub retrain_events: Vec<RetrainEvent>,
    pub replay_bytes: usize,
    pub replay_classes: Vec<ClassId>,
}

impl MetricsReport {
    /// The report without wall-clock timings, so that reruns serialize
    /// identically.
    pub fn summary(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("report serializes");
        let obj = v.as_object_mut().expect("object");
        obj.remove("batches");
        let events: Vec<serde_json::Value> = self
            .retrain_events
            .iter()
            .map(|e| serde_json::json!({ "batch_index": e.batch_index, "reason": e.reason }))
            .collect();
        obj.insert("retrain_events".into(), events.into());
        obj.insert("n_batches".into(), self.batches.len().into());
        v
    }
}

#[derive(Debug, Clone)]
pub struct StreamOutcome {
    pub report: MetricsReport,
    /// Predictions for each batch's unlabeled windows, in plan order.
    pub batch_predictions: Vec<Vec<ClassId>>,
    /// Final-classifier predictions for every unlabeled window, in plan order.
    pub final_predictions: Vec<ClassId>,
    /// True labels of the unlabeled windows, in plan order.
    pub truths: Vec<ClassId>,
    pub replay: ReplayBuffer,
    pub classifier: TrainedClassifier,
}

fn strip_labels(mut e: Vec<EmbeddingSample>) -> Vec<EmbeddingSample> {
    e.iter_mut().for_each(|s| s.label = None);
    e
}

fn safe_macro(preds: &[ClassId], truths: &[ClassId], classes: &BTreeSet<ClassId>) -> Result<f64> {
    if preds.is_empty() || classes.is_empty() {
        return Ok(0.0);
    }
    macro_f1(preds, truths, classes)
}

/// Runs the streaming learner over a plan.
///
/// `on_batch` sees every batch's metrics as soon as they are known, so a
/// caller can flush them even if a later retrain fails.
pub fn run_stream(
    fe: &FeModel,
    rm_cfg: &RmConfig,
    kind: ClassifierKind,
    mut replay: ReplayBuffer,
    initial: TrainedClassifier,
    plan: &StreamPlan,
    mut on_batch: impl FnMut(&BatchMetrics),
) -> Result<StreamOutcome> {
    if !fe.is_frozen() {
        return Err(Error::InvalidConfig("streaming needs a frozen feature extractor".into()));
    }
    // embeddings of unlabeled windows carry no label
    let unlabeled_emb: Vec<Vec<EmbeddingSample>> = plan
        .batches
        .iter()
        .map(|b| embed_batch(fe, &b.unlabeled).map(strip_labels))
        .collect::<Result<_>>()?;
    let truths: Vec<Vec<ClassId>> =
        plan.batches.iter().map(|b| b.unlabeled.iter().map(|w| w.label).collect()).collect();
    let all_emb: Vec<EmbeddingSample> = unlabeled_emb.iter().flatten().cloned().collect();
    let all_truth: Vec<ClassId> = truths.iter().flatten().copied().collect();

    let base_idx: Vec<usize> = (0..all_truth.len()).filter(|&i| plan.base_classes.contains(&all_truth[i])).collect();
    let base_emb: Vec<EmbeddingSample> = base_idx.iter().map(|&i| all_emb[i].clone()).collect();
    let base_truth: Vec<ClassId> = base_idx.iter().map(|&i| all_truth[i]).collect();
    let pre_stream_base_macro_f1 = if base_emb.is_empty() {
        0.0
    } else {
        let pred = initial.classify(replay.classes(), &base_emb)?.labels;
        safe_macro(&pred, &base_truth, &plan.base_classes)?
    };

    let mut current = initial;
    let mut batches = Vec::with_capacity(plan.batches.len());
    let mut cumulative_accuracy = Vec::with_capacity(plan.batches.len());
    let mut batch_predictions = Vec::with_capacity(plan.batches.len());
    let mut retrain_events = Vec::new();
    let (mut seen, mut hits) = (0usize, 0usize);
    for (bi, batch) in plan.batches.iter().enumerate() {
        let labeled = embed_batch(fe, &batch.labeled)?;
        replay.update(&labeled)?;
        let mut m = BatchMetrics {
            batch_index: batch.batch_index,
            n_labeled: batch.labeled.len(),
            n_unlabeled: batch.unlabeled.len(),
            accuracy: None,
            retrain: false,
            retrain_reason: None,
            retrain_seconds: 0.0,
            retrain_deferred: false,
        };
        if let Some(reason) = replay.should_retrain() {
            let cfg = RmConfig { seed: derive_seed(rm_cfg.seed, retrain_events.len() as u64 + 1), ..rm_cfg.clone() };
            let started = Instant::now();
            match TrainedClassifier::train(kind, replay.classes(), &cfg, Some(&current)) {
                Ok((model, _)) => {
                    let seconds = started.elapsed().as_secs_f64();
                    current = model;
                    replay.reset_trigger();
                    m.retrain = true;
                    m.retrain_reason = Some(reason);
                    m.retrain_seconds = seconds;
                    retrain_events.push(RetrainEvent { batch_index: batch.batch_index, reason, seconds });
                }
                Err(Error::ClassTooSmall { .. }) => m.retrain_deferred = true,
                Err(e) => return Err(e),
            }
        }
        let preds = if unlabeled_emb[bi].is_empty() {
            Vec::new()
        } else {
            current.classify(replay.classes(), &unlabeled_emb[bi])?.labels
        };
        if !preds.is_empty() {
            m.accuracy = Some(accuracy(&preds, &truths[bi])?);
            seen += preds.len();
            hits += preds.iter().zip(&truths[bi]).filter(|(p, t)| p == t).count();
        }
        cumulative_accuracy.push(if seen == 0 { 0.0 } else { hits as f64 / seen as f64 });
        on_batch(&m);
        batches.push(m);
        batch_predictions.push(preds);
    }

    let scored: BTreeSet<ClassId> = all_truth.iter().copied().collect();
    let stream_preds: Vec<ClassId> = batch_predictions.iter().flatten().copied().collect();
    let (stream_accuracy, stream_macro_f1) = if stream_preds.is_empty() {
        (0.0, 0.0)
    } else {
        (accuracy(&stream_preds, &all_truth)?, macro_f1(&stream_preds, &all_truth, &scored)?)
    };
    let final_predictions =
        if all_emb.is_empty() { Vec::new() } else { current.classify(replay.classes(), &all_emb)?.labels };
    let (final_accuracy, final_macro_f1, per_class) = if final_predictions.is_empty() {
        (0.0, 0.0, BTreeMap::new())
    } else {
        (
            accuracy(&final_predictions, &all_truth)?,
            macro_f1(&final_predictions, &all_truth, &scored)?,
            per_class_f1(&final_predictions, &all_truth, &scored)?,
        )
    };
    let mean_over = |set: &BTreeSet<ClassId>| {
        let v: Vec<f64> = per_class.iter().filter(|(c, _)| set.contains(c)).map(|(_, f)| *f).collect();
        if v.is_empty() {
            0.0
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    };
    let post_base: Vec<ClassId> = base_idx.iter().map(|&i| final_predictions[i]).collect();
    let report = MetricsReport {
        cumulative_accuracy,
        stream_accuracy,
        stream_macro_f1,
        final_accuracy,
        final_macro_f1,
        base_macro_f1: mean_over(&plan.base_classes),
        new_macro_f1: mean_over(&plan.new_classes),
        per_class_f1: per_class,
        pre_stream_base_macro_f1,
        post_stream_base_macro_f1: safe_macro(&post_base, &base_truth, &plan.base_classes)?,
        retrain_events,
        replay_bytes: replay.to_bytes().len(),
        replay_classes: replay.known_classes().into_iter().collect(),
        batches,
    };
    Ok(StreamOutcome { report, batch_predictions, final_predictions, truths: all_truth, replay, classifier: current })
}
