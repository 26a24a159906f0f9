//! End-to-end pre-training and streaming runs driven by a [`RunConfig`].

use crate::augment::{smote_oversample, SmoteOutcome};
use crate::config::{DatasetKind, RunConfig};
use crate::datasets::{
    load_csv_dir, load_dsads, load_hapt, load_pamap2, scenario_split, synth_generate, windows_from_recordings,
    fit_normalizer, normalize, Pamap2Options, RawRecording, ScenarioSplit, SensorWindow,
};
use crate::fe::{build_fe, embed_batch, train_fe, FeModel, FeTrainReport};
use crate::relation::{ClassSamples, TrainedClassifier};
use crate::replay::ReplayBuffer;
use crate::streaming::{
    accuracy, macro_f1, make_stream_plan, pca_project, per_class_f1, run_stream, BatchMetrics, PcaProjection,
    StreamOutcome,
};
use crate::{seeded_rng, ClassId, Error, Result};
use ndarray::Array2;
use serde::Serialize;
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

/// Loads the configured dataset as cleansed recordings.
pub fn load_recordings(cfg: &RunConfig) -> Result<Vec<RawRecording>> {
    let dir = || cfg.data_dir.as_deref().ok_or_else(|| Error::InvalidConfig("data_dir is not set".into()));
    match cfg.dataset {
        DatasetKind::Synthetic => synth_generate(&cfg.synth_spec()),
        DatasetKind::Pamap2 => {
            let keep = if cfg.pamap2_classes.is_empty() { Pamap2Options::default().keep_classes } else { cfg.pamap2_classes.clone() };
            load_pamap2(dir()?, &Pamap2Options { keep_classes: keep, channels: None })
        }
        DatasetKind::Hapt => load_hapt(dir()?),
        DatasetKind::Dsads => load_dsads(dir()?),
        DatasetKind::Csv => load_csv_dir(dir()?, cfg.csv_sample_rate_hz),
    }
}

/// Windows the configured dataset and splits it by scenario. Windows are not
/// normalized.
pub fn prepare_split(cfg: &RunConfig) -> Result<ScenarioSplit> {
    let cfg = cfg.resolved()?;
    let recordings = load_recordings(&cfg)?;
    let windows = windows_from_recordings(&recordings, cfg.window_seconds.unwrap(), cfg.overlap.unwrap())?;
    scenario_split(
        &windows,
        &cfg.base_classes.iter().copied().collect(),
        &cfg.new_subjects.iter().copied().collect(),
        cfg.scenario,
    )
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    /// Frozen, with the training normalizer attached.
    pub fe: FeModel,
    pub report: FeTrainReport,
    pub n_original: usize,
    pub n_synthetic: usize,
}

fn by_class(windows: &[SensorWindow]) -> BTreeMap<ClassId, Vec<SensorWindow>> {
    let mut out: BTreeMap<ClassId, Vec<SensorWindow>> = BTreeMap::new();
    for w in windows {
        out.entry(w.label).or_default().push(w.clone());
    }
    out
}

/// Normalize, balance with SMOTE, augment and train the extractor on the
/// base-class, base-subject windows of `split`.
pub fn pretrain(cfg: &RunConfig, split: &ScenarioSplit) -> Result<PretrainOutcome> {
    let cfg = cfg.resolved()?;
    let first = split.fe_train.first().ok_or_else(|| Error::EmptyInput("no pre-training windows".into()))?;
    let normalizer = fit_normalizer(&split.fe_train)?;
    let normalized = normalize(&split.fe_train, &normalizer)?;
    let SmoteOutcome { windows_by_class, synthetics } = smote_oversample(&by_class(&normalized), &cfg.smote())?;
    let train: Vec<SensorWindow> = windows_by_class.into_values().flatten().collect();
    let fe_cfg = cfg.fe_config(first.n_channels(), first.len(), split.base_classes.len());
    let mut fe = build_fe(&fe_cfg)?;
    fe.set_normalizer(normalizer)?;
    let (fe, report) = train_fe(fe, &train, &cfg.augmentation())?;
    Ok(PretrainOutcome { fe, report, n_original: normalized.len(), n_synthetic: synthetics.len() })
}

/// Embeddings of the pre-training windows grouped by class, used to seed the
/// replay buffer.
pub fn base_embeddings(fe: &FeModel, windows: &[SensorWindow]) -> Result<ClassSamples> {
    let mut out = ClassSamples::new();
    for (class, ws) in by_class(windows) {
        out.insert(class, embed_batch(fe, &ws)?);
    }
    Ok(out)
}

/// Applies the extractor's stored normalizer to every region of a raw split.
pub fn normalize_for(fe: &FeModel, split: &ScenarioSplit) -> Result<ScenarioSplit> {
    let normalizer =
        fe.normalizer().ok_or_else(|| Error::InvalidConfig("feature extractor has no stored normalizer".into()))?;
    split.normalized(normalizer)
}

/// Seeds the replay, trains the initial classifier and streams the plan built
/// from `split` (raw windows).
pub fn stream(
    cfg: &RunConfig,
    fe: &FeModel,
    split: &ScenarioSplit,
    on_batch: impl FnMut(&BatchMetrics),
) -> Result<StreamOutcome> {
    let cfg = cfg.resolved()?;
    let split = normalize_for(fe, split)?;
    let base = base_embeddings(fe, &split.fe_train)?;
    let replay = ReplayBuffer::init_from_base(&base, cfg.replay_size.unwrap(), &mut seeded_rng(cfg.replay_seed()))?;
    let rm_cfg = cfg.rm_config();
    let (initial, _) = TrainedClassifier::train(cfg.classifier, replay.classes(), &rm_cfg, None)?;
    let plan = make_stream_plan(&split, &cfg.stream_config())?;
    run_stream(fe, &rm_cfg, cfg.classifier, replay, initial, &plan, on_batch)
}

/// PCA of the embeddings of `windows` (already normalized).
pub fn embedding_pca(fe: &FeModel, windows: &[SensorWindow]) -> Result<(PcaProjection, Vec<ClassId>)> {
    let emb = embed_batch(fe, windows)?;
    let d = fe.config().embedding_dim;
    let data = Array2::from_shape_fn((emb.len(), d), |(i, j)| emb[i].vector[j] as f64);
    Ok((pca_project(&data, 2)?, windows.iter().map(|w| w.label).collect()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub n: usize,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub per_class_f1: BTreeMap<ClassId, f64>,
}

/// Scores predictions against truths over every class that appears in either.
pub fn evaluate(preds: &[ClassId], truths: &[ClassId]) -> Result<EvalReport> {
    let classes: BTreeSet<ClassId> = preds.iter().chain(truths).copied().collect();
    Ok(EvalReport {
        n: preds.len(),
        accuracy: accuracy(preds, truths)?,
        macro_f1: macro_f1(preds, truths, &classes)?,
        per_class_f1: per_class_f1(preds, truths, &classes)?,
    })
}

/// Reads one class id per line; blank lines are skipped.
pub fn read_label_file(path: &Path) -> Result<Vec<ClassId>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim()
                .parse::<ClassId>()
                .map_err(|_| Error::Parse(format!("{}:{}: not a class id: {:?}", path.display(), i + 1, l.trim())))
        })
        .collect()
}

pub fn write_label_file(path: &Path, labels: &[ClassId]) -> Result<()> {
    let mut text = String::with_capacity(labels.len() * 3);
    for l in labels {
        text.push_str(&l.to_string());
        text.push('\n');
    }
    std::fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eval_worked_example() {
        let r = evaluate(&[0, 1, 1, 1], &[0, 0, 1, 1]).unwrap();
        assert!((r.macro_f1 - 11.0 / 15.0).abs() < 1e-12);
        assert_eq!(r.accuracy, 0.75);
        assert!(matches!(evaluate(&[0], &[0, 1]), Err(Error::LengthMismatch(_))));
    }

    #[test]
    fn label_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("labels.txt");
        write_label_file(&p, &[3, 1, 4]).unwrap();
        assert_eq!(read_label_file(&p).unwrap(), vec![3, 1, 4]);
        std::fs::write(&p, "1\nx\n").unwrap();
        assert!(matches!(read_label_file(&p), Err(Error::Parse(_))));
    }

    #[test]
    fn default_split_shape() {
        let cfg = RunConfig { synth_samples_per_class: 400, ..RunConfig::default() };
        let split = prepare_split(&cfg).unwrap();
        assert_eq!(split.base_classes.len(), 5);
        assert_eq!(split.new_classes.len(), 3);
        assert!(split.fe_train.iter().all(|w| w.subject_id < 2 && w.label < 5));
    }
}
