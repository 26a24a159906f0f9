//! Relation-module classifier over embedding pairs, episodic training on
//! replay data, and the three-layer MLP used as an ablation baseline.
//!
//! A class representative and a query embedding are stacked as a
//! two-channel sequence of length `d`, passed through one convolution, ReLU
//! and global average pooling, then two fully connected layers and a sigmoid.

mod mlp;

pub use mlp::{mlp_baseline_classify, mlp_baseline_train, MlpModel};

use crate::fe::EmbeddingSample;
use crate::nn::{
    accumulate_grad, layer_list, par_map, read_artifact, relu_backward, relu_inplace, write_artifact,
    Adam, Conv1d, Linear, ParamStore,
};
use crate::{derive_seed, seeded_rng, ClassId, Error, Result};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

/// Embeddings grouped by class, the shape of a replay buffer's contents.
pub type ClassSamples = BTreeMap<ClassId, Vec<EmbeddingSample>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RmConfig {
    pub embedding_dim: usize,
    pub support_per_class: usize,
    pub lambda_l2: f64,
    pub lr: f64,
    /// (class representative, query) pairs per optimizer step.
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub conv_filters: usize,
    pub kernel: usize,
    pub hidden: usize,
    /// Continue from the previous model on retrain instead of re-initializing.
    pub warm_start: bool,
}

impl Default for RmConfig {
    fn default() -> Self {
        Self {
            embedding_dim: 128,
            support_per_class: 5,
            lambda_l2: 1e-3,
            lr: 1e-3,
            batch_size: 50,
            epochs: 50,
            seed: 0,
            conv_filters: 16,
            kernel: 3,
            hidden: 64,
            warm_start: false,
        }
    }
}

impl RmConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.embedding_dim == 0 {
            return bad("embedding_dim must be positive");
        }
        if self.support_per_class == 0 {
            return bad("support_per_class must be at least 1");
        }
        if !(self.lambda_l2 >= 0.0) || !self.lambda_l2.is_finite() {
            return bad("lambda_l2 must be finite and >= 0");
        }
        if !(self.lr > 0.0) {
            return bad("lr must be positive");
        }
        if self.batch_size == 0 || self.conv_filters == 0 || self.kernel == 0 || self.hidden == 0 {
            return bad("batch_size, conv_filters, kernel and hidden must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RmModel {
    cfg: RmConfig,
    store: ParamStore,
    conv: Conv1d,
    fc1: Linear,
    fc2: Linear,
}

struct PairTrace {
    input: Vec<f64>,
    conv_act: Vec<f64>,
    pooled: Vec<f64>,
    hidden: Vec<f64>,
    score: f64,
}

const SCORE_EPS: f64 = 1e-15;

fn kind_of(layer: &str) -> &'static str {
    if layer == "conv" {
        "conv1d"
    } else {
        "linear"
    }
}

pub fn build_rm(cfg: &RmConfig) -> Result<RmModel> {
    cfg.validate()?;
    let mut rng = seeded_rng(cfg.seed);
    let mut store = ParamStore::new();
    let conv = Conv1d::new(&mut store, "conv", 2, cfg.conv_filters, cfg.kernel, 1, &mut rng);
    let fc1 = Linear::new(&mut store, "fc1", cfg.conv_filters, cfg.hidden, &mut rng);
    let fc2 = Linear::new(&mut store, "fc2", cfg.hidden, 1, &mut rng);
    Ok(RmModel { cfg: cfg.clone(), store, conv, fc1, fc2 })
}

impl RmModel {
    pub fn config(&self) -> &RmConfig {
        &self.cfg
    }

    /// Width of the concatenated pair the comparator consumes.
    pub fn input_width(&self) -> usize {
        2 * self.cfg.embedding_dim
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn forward_with(&self, p: &[f64], class_rep: &[f64], query: &[f64]) -> PairTrace {
        let d = self.cfg.embedding_dim;
        let mut input = Vec::with_capacity(2 * d);
        for t in 0..d {
            input.push(class_rep[t]);
            input.push(query[t]);
        }
        let mut conv_act = self.conv.forward(p, &input, d);
        relu_inplace(&mut conv_act);
        let f = self.conv.out_channels;
        let t_out = self.conv.out_len(d);
        let mut pooled = vec![0.0; f];
        for s in 0..t_out {
            for k in 0..f {
                pooled[k] += conv_act[s * f + k];
            }
        }
        pooled.iter_mut().for_each(|v| *v /= t_out as f64);
        let mut hidden = self.fc1.forward(p, &pooled);
        relu_inplace(&mut hidden);
        let z = self.fc2.forward(p, &hidden)[0];
        let score = (1.0 / (1.0 + (-z).exp())).clamp(SCORE_EPS, 1.0 - SCORE_EPS);
        PairTrace { input, conv_act, pooled, hidden, score }
    }

    /// Accumulates parameter gradients given `dL/dscore`.
    fn backward_with(&self, p: &[f64], tr: &PairTrace, d_score: f64, g: &mut [f64]) {
        let dz = d_score * tr.score * (1.0 - tr.score);
        let mut dh = self.fc2.backward(p, &tr.hidden, &[dz], g, true).expect("dx requested");
        relu_backward(&tr.hidden, &mut dh);
        let dp = self.fc1.backward(p, &tr.pooled, &dh, g, true).expect("dx requested");
        let f = self.conv.out_channels;
        let t_out = tr.conv_act.len() / f;
        let mut dc = vec![0.0; tr.conv_act.len()];
        for s in 0..t_out {
            for k in 0..f {
                dc[s * f + k] = dp[k] / t_out as f64;
            }
        }
        relu_backward(&tr.conv_act, &mut dc);
        self.conv.backward(p, &tr.input, self.cfg.embedding_dim, &dc, g, false);
    }

    /// Relation score of one (class representative, query) pair.
    pub fn score(&self, class_rep: &[f64], query: &[f64]) -> Result<f64> {
        let d = self.cfg.embedding_dim;
        if class_rep.len() != d || query.len() != d {
            return Err(Error::ShapeMismatch(format!(
                "pair of widths {} and {}, comparator expects {d} each",
                class_rep.len(),
                query.len()
            )));
        }
        Ok(self.forward_with(self.store.values(), class_rep, query).score)
    }

    fn descriptor(&self) -> serde_json::Value {
        serde_json::json!({
            "kind": "relation_module",
            "config": self.cfg,
            "layers": layer_list(&self.store, kind_of),
        })
    }
}

pub fn save_rm(rm: &RmModel, path: &Path) -> Result<()> {
    write_artifact(path, &rm.descriptor(), &rm.store)
}

pub fn load_rm(path: &Path) -> Result<RmModel> {
    let artifact = read_artifact(path)?;
    if artifact.descriptor.get("kind").and_then(|k| k.as_str()) != Some("relation_module") {
        return Err(Error::CorruptArtifact("not a relation module artifact".into()));
    }
    let cfg: RmConfig = serde_json::from_value(artifact.descriptor["config"].clone())
        .map_err(|e| Error::CorruptArtifact(format!("config: {e}")))?;
    let mut rm = build_rm(&cfg).map_err(|e| Error::CorruptArtifact(format!("config: {e}")))?;
    artifact.load_into(&mut rm.store)?;
    Ok(rm)
}

/// Support and query sets for one training epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub classes: Vec<ClassId>,
    pub support: BTreeMap<ClassId, Vec<EmbeddingSample>>,
    pub query: BTreeMap<ClassId, Vec<EmbeddingSample>>,
    /// Replay indices chosen as support, per class.
    pub support_indices: BTreeMap<ClassId, Vec<usize>>,
}

/// Draws `support_per_class` samples per class without replacement; the rest
/// become queries.
pub fn sample_episode<R: Rng + ?Sized>(
    replay: &ClassSamples,
    support_per_class: usize,
    rng: &mut R,
) -> Result<Episode> {
    let mut ep = Episode {
        classes: replay.keys().copied().collect(),
        support: BTreeMap::new(),
        query: BTreeMap::new(),
        support_indices: BTreeMap::new(),
    };
    for (&class, samples) in replay {
        if samples.len() <= support_per_class {
            return Err(Error::ClassTooSmall { class, have: samples.len(), support: support_per_class });
        }
        let mut idx: Vec<usize> = (0..samples.len()).collect();
        idx.partial_shuffle(rng, support_per_class);
        let mut chosen = idx[..support_per_class].to_vec();
        chosen.sort_unstable();
        let mut is_support = vec![false; samples.len()];
        chosen.iter().for_each(|&i| is_support[i] = true);
        ep.support.insert(class, chosen.iter().map(|&i| samples[i].clone()).collect());
        ep.query.insert(
            class,
            (0..samples.len()).filter(|&i| !is_support[i]).map(|i| samples[i].clone()).collect(),
        );
        ep.support_indices.insert(class, chosen);
    }
    Ok(ep)
}

/// Element-wise mean of a class's embeddings.
pub fn class_representative(samples: &[EmbeddingSample]) -> Result<Vec<f64>> {
    let first = samples.first().ok_or(Error::EmptySupport)?;
    let d = first.dim();
    let mut rep = vec![0.0; d];
    for s in samples {
        if s.dim() != d {
            return Err(Error::DimensionMismatch { expected: d, found: s.dim() });
        }
        rep.iter_mut().zip(&s.vector).for_each(|(r, &v)| *r += v as f64);
    }
    rep.iter_mut().for_each(|r| *r /= samples.len() as f64);
    Ok(rep)
}

fn check_rows(rows: &Array2<f64>, d: usize, what: &str) -> Result<()> {
    if rows.ncols() != d {
        return Err(Error::ShapeMismatch(format!("{what} have width {}, expected {d}", rows.ncols())));
    }
    Ok(())
}

/// `[C × Q]` matrix of scores between every class representative and query.
pub fn relation_scores(rm: &RmModel, support_reps: &Array2<f64>, queries: &Array2<f64>) -> Result<Array2<f64>> {
    let d = rm.cfg.embedding_dim;
    check_rows(support_reps, d, "class representatives")?;
    check_rows(queries, d, "queries")?;
    let (c, q) = (support_reps.nrows(), queries.nrows());
    let p = rm.store.values();
    let cells = par_map(c * q, |k| {
        let rep = support_reps.row(k / q).to_vec();
        let qv = queries.row(k % q).to_vec();
        rm.forward_with(p, &rep, &qv).score
    });
    Ok(Array2::from_shape_vec((c, q), cells).expect("c × q cells"))
}

/// `Σ_i Σ_j (r_ij − 1[class_i = label_j])² + λ/(2m) · Σ w²` with `m` the
/// number of classes (rows).
pub fn rm_loss(
    scores: &Array2<f64>,
    class_labels: &[ClassId],
    query_labels: &[ClassId],
    lambda_l2: f64,
    weights: &[f64],
) -> Result<f64> {
    if scores.dim() != (class_labels.len(), query_labels.len()) {
        return Err(Error::ShapeMismatch(format!(
            "scores are {:?} for {} classes and {} queries",
            scores.dim(),
            class_labels.len(),
            query_labels.len()
        )));
    }
    let mut mse = 0.0;
    for (i, &ci) in class_labels.iter().enumerate() {
        for (j, &qj) in query_labels.iter().enumerate() {
            let target = if ci == qj { 1.0 } else { 0.0 };
            mse += (scores[[i, j]] - target).powi(2);
        }
    }
    let m = class_labels.len().max(1) as f64;
    Ok(mse + lambda_l2 / (2.0 * m) * weights.iter().map(|w| w * w).sum::<f64>())
}

/// [`rm_loss`] of the model's own scores, with its gradient over every
/// parameter. λ comes from the model's config.
pub fn rm_loss_and_grad(
    rm: &RmModel,
    support_reps: &Array2<f64>,
    queries: &Array2<f64>,
    class_labels: &[ClassId],
    query_labels: &[ClassId],
) -> Result<(f64, Vec<f64>)> {
    let scores = relation_scores(rm, support_reps, queries)?;
    let lambda = rm.cfg.lambda_l2;
    let loss = rm_loss(&scores, class_labels, query_labels, lambda, &rm.store.decayed_weights())?;
    let p = rm.store.values();
    let q = queries.nrows();
    let mut grad = accumulate_grad(class_labels.len() * q, rm.store.len(), |k, g| {
        let (i, j) = (k / q, k % q);
        let tr = rm.forward_with(p, &support_reps.row(i).to_vec(), &queries.row(j).to_vec());
        let target = if class_labels[i] == query_labels[j] { 1.0 } else { 0.0 };
        rm.backward_with(p, &tr, 2.0 * (tr.score - target), g);
    });
    rm.store.add_decay_grad(&mut grad, lambda / class_labels.len().max(1) as f64);
    Ok((loss, grad))
}

/// Rows of a representative matrix and their class ids, one per class.
fn representatives(groups: &BTreeMap<ClassId, Vec<EmbeddingSample>>, d: usize) -> Result<(Vec<ClassId>, Array2<f64>)> {
    let classes: Vec<ClassId> = groups.keys().copied().collect();
    let mut reps = Array2::zeros((classes.len(), d));
    for (i, samples) in groups.values().enumerate() {
        let rep = class_representative(samples)?;
        if rep.len() != d {
            return Err(Error::DimensionMismatch { expected: d, found: rep.len() });
        }
        reps.row_mut(i).assign(&ndarray::ArrayView1::from(&rep));
    }
    Ok((classes, reps))
}

fn as_matrix(samples: &[&EmbeddingSample], d: usize) -> Result<Array2<f64>> {
    let mut m = Array2::zeros((samples.len(), d));
    for (i, s) in samples.iter().enumerate() {
        if s.dim() != d {
            return Err(Error::DimensionMismatch { expected: d, found: s.dim() });
        }
        m.row_mut(i).iter_mut().zip(&s.vector).for_each(|(a, &b)| *a = b as f64);
    }
    Ok(m)
}

/// Column-wise argmax; ties go to the first (smallest) class.
fn argmax_columns(scores: &Array2<f64>, classes: &[ClassId]) -> Vec<ClassId> {
    (0..scores.ncols())
        .map(|j| {
            let mut best = 0;
            for i in 1..scores.nrows() {
                if scores[[i, j]] > scores[[best, j]] {
                    best = i;
                }
            }
            classes[best]
        })
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RmTrainReport {
    pub epoch_losses: Vec<f64>,
    /// Accuracy on the last episode's queries against its support.
    pub final_episode_accuracy: f64,
}

/// Trains a freshly initialized relation module (or `init` when warm
/// starting) on replay data, drawing a new episode every epoch.
pub fn train_rm(replay: &ClassSamples, cfg: &RmConfig) -> Result<(RmModel, RmTrainReport)> {
    train_rm_from(replay, cfg, None)
}

pub fn train_rm_from(
    replay: &ClassSamples,
    cfg: &RmConfig,
    init: Option<&RmModel>,
) -> Result<(RmModel, RmTrainReport)> {
    let mut rm = match init {
        Some(prev) if cfg.warm_start && prev.cfg.embedding_dim == cfg.embedding_dim => {
            RmModel { cfg: cfg.clone(), ..prev.clone() }
        }
        _ => build_rm(cfg)?,
    };
    if replay.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "relation training needs at least 2 classes, replay has {}",
            replay.len()
        )));
    }
    for (&class, s) in replay {
        if s.len() <= cfg.support_per_class {
            return Err(Error::ClassTooSmall { class, have: s.len(), support: cfg.support_per_class });
        }
    }
    let d = cfg.embedding_dim;
    let n_params = rm.store.len();
    let mut adam = Adam::new(n_params, cfg.lr);
    let mut rng = seeded_rng(derive_seed(cfg.seed, 0x5e1a));
    let mut report = RmTrainReport::default();
    let mut last_episode = None;
    for epoch in 0..cfg.epochs {
        let ep = sample_episode(replay, cfg.support_per_class, &mut rng)?;
        let (classes, reps) = representatives(&ep.support, d)?;
        let m = classes.len();
        let queries: Vec<&EmbeddingSample> = ep.query.values().flatten().collect();
        let q_rows: Vec<Vec<f64>> = queries.iter().map(|s| s.to_f64()).collect();
        let rep_rows: Vec<Vec<f64>> = reps.rows().into_iter().map(|r| r.to_vec()).collect();
        // one training input is one (class representative, query) pair
        let mut pairs: Vec<(usize, usize, f64)> = Vec::with_capacity(m * queries.len());
        for (i, &class) in classes.iter().enumerate() {
            for (j, q) in queries.iter().enumerate() {
                if q.dim() != d {
                    return Err(Error::DimensionMismatch { expected: d, found: q.dim() });
                }
                pairs.push((i, j, if q.label == Some(class) { 1.0 } else { 0.0 }));
            }
        }
        pairs.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (step, batch) in pairs.chunks(cfg.batch_size).enumerate() {
            let p = rm.store.values();
            let traces = par_map(batch.len(), |k| rm.forward_with(p, &rep_rows[batch[k].0], &q_rows[batch[k].1]));
            let sq: f64 = traces.iter().zip(batch).map(|(t, &(_, _, y))| (t.score - y).powi(2)).sum();
            let w = rm.store.decayed_weights();
            let loss = sq + cfg.lambda_l2 / (2.0 * m as f64) * w.iter().map(|v| v * v).sum::<f64>();
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, step, loss });
            }
            let mut grad = accumulate_grad(batch.len(), n_params, |k, g| {
                rm.backward_with(p, &traces[k], 2.0 * (traces[k].score - batch[k].2), g);
            });
            rm.store.add_decay_grad(&mut grad, cfg.lambda_l2 / m as f64);
            adam.step(rm.store.values_mut(), &grad);
            epoch_loss += loss;
        }
        report.epoch_losses.push(epoch_loss);
        last_episode = Some(ep);
    }
    if let Some(ep) = last_episode {
        let (classes, reps) = representatives(&ep.support, d)?;
        let queries: Vec<&EmbeddingSample> = ep.query.values().flatten().collect();
        let qm = as_matrix(&queries, d)?;
        let pred = argmax_columns(&relation_scores(&rm, &reps, &qm)?, &classes);
        let correct = pred.iter().zip(&queries).filter(|(p, q)| Some(**p) == q.label).count();
        report.final_episode_accuracy = correct as f64 / queries.len() as f64;
    }
    Ok((rm, report))
}

/// Predicted labels with the score matrix (rows follow `classes`).
#[derive(Debug, Clone, PartialEq)]
pub struct Classification {
    pub labels: Vec<ClassId>,
    pub classes: Vec<ClassId>,
    pub scores: Array2<f64>,
}

/// Scores queries against representatives built from the full replay.
pub fn classify(rm: &RmModel, replay: &ClassSamples, queries: &[EmbeddingSample]) -> Result<Classification> {
    if replay.values().all(Vec::is_empty) {
        return Err(Error::EmptyReplay);
    }
    let nonempty: ClassSamples = replay.iter().filter(|(_, v)| !v.is_empty()).map(|(k, v)| (*k, v.clone())).collect();
    let d = rm.cfg.embedding_dim;
    let (classes, reps) = representatives(&nonempty, d)?;
    let qm = as_matrix(&queries.iter().collect::<Vec<_>>(), d)?;
    let scores = relation_scores(rm, &reps, &qm)?;
    Ok(Classification { labels: argmax_columns(&scores, &classes), classes, scores })
}

/// Which classifier the streaming learner retrains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierKind {
    #[default]
    Relation,
    Mlp3,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrainedClassifier {
    Relation(RmModel),
    Mlp(MlpModel),
}

impl TrainedClassifier {
    pub fn train(kind: ClassifierKind, replay: &ClassSamples, cfg: &RmConfig, prev: Option<&TrainedClassifier>) -> Result<(Self, Vec<f64>)> {
        match kind {
            ClassifierKind::Relation => {
                let init = match prev {
                    Some(TrainedClassifier::Relation(m)) => Some(m),
                    _ => None,
                };
                let (m, r) = train_rm_from(replay, cfg, init)?;
                Ok((TrainedClassifier::Relation(m), r.epoch_losses))
            }
            ClassifierKind::Mlp3 => {
                let (m, losses) = mlp_baseline_train(replay, cfg)?;
                Ok((TrainedClassifier::Mlp(m), losses))
            }
        }
    }

    pub fn classify(&self, replay: &ClassSamples, queries: &[EmbeddingSample]) -> Result<Classification> {
        match self {
            TrainedClassifier::Relation(m) => classify(m, replay, queries),
            TrainedClassifier::Mlp(m) => mlp_baseline_classify(m, replay, queries),
        }
    }
}
