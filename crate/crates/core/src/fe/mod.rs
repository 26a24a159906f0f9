//! The LSTM-CNN feature extractor.
//!
//! Two strided convolution blocks (conv, ReLU, max-pool 2) feed a single LSTM
//! layer whose outputs are averaged over time. A linear layer maps the result
//! to the embedding, and a linear head maps the embedding to base-class
//! logits. After training the model is frozen and only used through
//! [`embed`].

mod loss;
mod train;

pub use loss::{
    cross_entropy_grad, cross_entropy_loss, softmax, softmax_cross_entropy, supcon_loss,
    supcon_loss_and_grad, total_fe_loss, SupConOptions,
};
pub use train::{train_fe, FeTrainReport};

use crate::datasets::{Normalizer, SensorWindow};
use crate::nn::{
    layer_list, read_artifact, relu_backward, relu_inplace, write_artifact, Conv1d, Linear, Lstm,
    LstmTrace, MaxPool2, ParamStore,
};
use crate::{seeded_rng, ClassId, Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeConfig {
    pub input_channels: usize,
    pub window_len: usize,
    pub embedding_dim: usize,
    pub conv_channels: Vec<usize>,
    pub kernel_sizes: Vec<usize>,
    pub lstm_hidden: usize,
    pub n_classes_base: usize,
    /// Contrastive temperature.
    pub tau: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub supcon_normalize: bool,
    /// Ablation switch for the contrastive term.
    pub use_contrastive: bool,
}

impl Default for FeConfig {
    fn default() -> Self {
        Self {
            input_channels: 3,
            window_len: 128,
            embedding_dim: 128,
            conv_channels: vec![64, 128],
            kernel_sizes: vec![5, 5],
            lstm_hidden: 128,
            n_classes_base: 2,
            tau: 0.1,
            lr: 1e-3,
            batch_size: 50,
            epochs: 50,
            seed: 0,
            supcon_normalize: true,
            use_contrastive: true,
        }
    }
}

const CONV_STRIDE: usize = 2;

impl FeConfig {
    /// Sequence length reaching the LSTM.
    pub fn lstm_steps(&self) -> usize {
        let mut t = self.window_len;
        for &k in &self.kernel_sizes {
            let pad = k / 2;
            t = if t + 2 * pad < k { 0 } else { (t + 2 * pad - k) / CONV_STRIDE + 1 };
            t = MaxPool2::out_len(t);
        }
        t
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.embedding_dim < 2 {
            return bad(format!("embedding_dim {} must be at least 2", self.embedding_dim));
        }
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return bad(format!("tau {} must be positive", self.tau));
        }
        if !(self.lr > 0.0) {
            return bad(format!("lr {} must be positive", self.lr));
        }
        if self.conv_channels.len() != self.kernel_sizes.len() {
            return bad(format!(
                "{} conv channel entries but {} kernel sizes",
                self.conv_channels.len(),
                self.kernel_sizes.len()
            ));
        }
        if self.conv_channels.iter().chain(&self.kernel_sizes).any(|&v| v == 0) {
            return bad("conv channels and kernel sizes must be positive".into());
        }
        if self.input_channels == 0 || self.lstm_hidden == 0 || self.batch_size == 0 {
            return bad("input_channels, lstm_hidden and batch_size must be positive".into());
        }
        if self.n_classes_base < 2 {
            return bad("at least 2 base classes are needed".into());
        }
        if self.lstm_steps() == 0 {
            return bad(format!("window_len {} is too short for the conv stack", self.window_len));
        }
        Ok(())
    }
}

/// One embedded window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingSample {
    pub vector: Vec<f32>,
    /// `None` for unlabeled stream data.
    pub label: Option<ClassId>,
    pub timestamp: f64,
}

impl EmbeddingSample {
    pub fn dim(&self) -> usize {
        self.vector.len()
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.vector.iter().map(|&v| v as f64).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Layers {
    convs: Vec<Conv1d>,
    lstm: Lstm,
    embed: Linear,
    head: Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeModel {
    cfg: FeConfig,
    store: ParamStore,
    layers: Layers,
    frozen: bool,
    /// Head output index to class id.
    head_classes: Vec<ClassId>,
    normalizer: Option<Normalizer>,
}

/// Activations of one forward pass, kept for backpropagation.
pub(crate) struct Trace {
    conv_in: Vec<Vec<f64>>,
    conv_in_len: Vec<usize>,
    conv_act: Vec<Vec<f64>>,
    pool_idx: Vec<Vec<usize>>,
    lstm_in: Vec<f64>,
    lstm: LstmTrace,
    pooled: Vec<f64>,
    pub(crate) embedding: Vec<f64>,
}

fn kind_of(layer: &str) -> &'static str {
    match layer {
        l if l.starts_with("conv") => "conv1d",
        "lstm" => "lstm",
        _ => "linear",
    }
}

/// Builds an untrained extractor with seeded initialization.
pub fn build_fe(cfg: &FeConfig) -> Result<FeModel> {
    cfg.validate()?;
    let mut rng = seeded_rng(cfg.seed);
    let mut store = ParamStore::new();
    let mut convs = Vec::new();
    let mut cin = cfg.input_channels;
    for (i, (&cout, &k)) in cfg.conv_channels.iter().zip(&cfg.kernel_sizes).enumerate() {
        convs.push(Conv1d::new(&mut store, &format!("conv{}", i + 1), cin, cout, k, CONV_STRIDE, &mut rng));
        cin = cout;
    }
    let lstm = Lstm::new(&mut store, "lstm", cin, cfg.lstm_hidden, &mut rng);
    let embed = Linear::new(&mut store, "embed", cfg.lstm_hidden, cfg.embedding_dim, &mut rng);
    let head = Linear::new(&mut store, "head", cfg.embedding_dim, cfg.n_classes_base, &mut rng);
    Ok(FeModel {
        cfg: cfg.clone(),
        store,
        layers: Layers { convs, lstm, embed, head },
        frozen: false,
        head_classes: (0..cfg.n_classes_base as ClassId).collect(),
        normalizer: None,
    })
}

impl FeModel {
    pub fn config(&self) -> &FeConfig {
        &self.cfg
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> Result<&mut ParamStore> {
        if self.frozen {
            return Err(Error::FrozenModel);
        }
        Ok(&mut self.store)
    }

    /// Class id of each logit.
    pub fn head_classes(&self) -> &[ClassId] {
        &self.head_classes
    }

    pub fn set_head_classes(&mut self, classes: Vec<ClassId>) -> Result<()> {
        if self.frozen {
            return Err(Error::FrozenModel);
        }
        if classes.len() != self.cfg.n_classes_base {
            return Err(Error::InvalidConfig(format!(
                "{} head classes for {} logits",
                classes.len(),
                self.cfg.n_classes_base
            )));
        }
        self.head_classes = classes;
        Ok(())
    }

    /// The input normalizer stored with the model. Windows passed to
    /// [`embed`] must already be normalized with it.
    pub fn normalizer(&self) -> Option<&Normalizer> {
        self.normalizer.as_ref()
    }

    pub fn set_normalizer(&mut self, normalizer: Normalizer) -> Result<()> {
        if self.frozen {
            return Err(Error::FrozenModel);
        }
        if normalizer.n_channels() != self.cfg.input_channels {
            return Err(Error::ChannelMismatch {
                expected: self.cfg.input_channels,
                found: normalizer.n_channels(),
            });
        }
        self.normalizer = Some(normalizer);
        Ok(())
    }

    /// Freezes the model. Parameters are rounded to f32 so that the saved
    /// artifact reproduces it exactly.
    pub fn freeze(&mut self) {
        if !self.frozen {
            self.store.round_to_f32();
            self.frozen = true;
        }
    }

    pub(crate) fn check_window(&self, window: &SensorWindow) -> Result<()> {
        if window.len() != self.cfg.window_len || window.n_channels() != self.cfg.input_channels {
            return Err(Error::ShapeMismatch(format!(
                "window is {}×{}, model expects {}×{}",
                window.len(),
                window.n_channels(),
                self.cfg.window_len,
                self.cfg.input_channels
            )));
        }
        Ok(())
    }

    pub(crate) fn forward_with(&self, p: &[f64], window: &SensorWindow) -> Trace {
        let l = &self.layers;
        let mut x = window.flat();
        let mut t = window.len();
        let mut conv_in = Vec::with_capacity(l.convs.len());
        let mut conv_in_len = Vec::with_capacity(l.convs.len());
        let mut conv_act = Vec::with_capacity(l.convs.len());
        let mut pool_idx = Vec::with_capacity(l.convs.len());
        for conv in &l.convs {
            let mut y = conv.forward(p, &x, t);
            relu_inplace(&mut y);
            let t_conv = conv.out_len(t);
            let (pooled, idx) = MaxPool2::forward(&y, t_conv, conv.out_channels);
            conv_in.push(std::mem::replace(&mut x, pooled));
            conv_in_len.push(t);
            conv_act.push(y);
            pool_idx.push(idx);
            t = MaxPool2::out_len(t_conv);
        }
        let lstm = l.lstm.forward(p, &x, t);
        let h = l.lstm.hidden;
        let mut pooled = vec![0.0; h];
        for s in 0..t {
            for k in 0..h {
                pooled[k] += lstm.hidden[s * h + k];
            }
        }
        pooled.iter_mut().for_each(|v| *v /= t as f64);
        let embedding = l.embed.forward(p, &pooled);
        Trace { conv_in, conv_in_len, conv_act, pool_idx, lstm_in: x, lstm, pooled, embedding }
    }

    pub(crate) fn logits_with(&self, p: &[f64], embedding: &[f64]) -> Vec<f64> {
        self.layers.head.forward(p, embedding)
    }

    /// Accumulates parameter gradients for one sample given `dL/dembedding`
    /// and optionally `dL/dlogits`.
    pub(crate) fn backward_with(
        &self,
        p: &[f64],
        trace: &Trace,
        d_embedding: Option<&[f64]>,
        d_logits: Option<&[f64]>,
        g: &mut [f64],
    ) {
        let l = &self.layers;
        let mut d_emb = d_embedding.map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; trace.embedding.len()]);
        if let Some(dl) = d_logits {
            let d = l.head.backward(p, &trace.embedding, dl, g, true).expect("dx requested");
            d_emb.iter_mut().zip(d).for_each(|(a, b)| *a += b);
        }
        let d_pooled = l.embed.backward(p, &trace.pooled, &d_emb, g, true).expect("dx requested");
        let t = trace.lstm.t;
        let h = l.lstm.hidden;
        let mut dh = vec![0.0; t * h];
        for s in 0..t {
            for k in 0..h {
                dh[s * h + k] = d_pooled[k] / t as f64;
            }
        }
        let mut dx = l.lstm.backward(p, &trace.lstm_in, &trace.lstm, &dh, g, true).expect("dx requested");
        for (i, conv) in l.convs.iter().enumerate().rev() {
            let act = &trace.conv_act[i];
            let mut dy = MaxPool2::backward(&dx, &trace.pool_idx[i], act.len());
            relu_backward(act, &mut dy);
            match conv.backward(p, &trace.conv_in[i], trace.conv_in_len[i], &dy, g, i > 0) {
                Some(d) => dx = d,
                None => break,
            }
        }
    }

    /// Head logits for one window.
    pub fn logits(&self, window: &SensorWindow) -> Result<Vec<f64>> {
        self.check_window(window)?;
        let p = self.store.values();
        let trace = self.forward_with(p, window);
        Ok(self.logits_with(p, &trace.embedding))
    }

    /// Base-class prediction from the classification head.
    pub fn predict_base(&self, window: &SensorWindow) -> Result<ClassId> {
        let logits = self.logits(window)?;
        let mut best = 0;
        for (i, &v) in logits.iter().enumerate() {
            if v > logits[best] {
                best = i;
            }
        }
        Ok(self.head_classes[best])
    }

    fn descriptor(&self) -> serde_json::Value {
        serde_json::json!({
            "kind": "feature_extractor",
            "config": self.cfg,
            "head_classes": self.head_classes,
            "normalizer": self.normalizer,
            "layers": layer_list(&self.store, kind_of),
        })
    }
}

/// Penultimate-layer embedding of one window. The label is kept.
pub fn embed(fe: &FeModel, window: &SensorWindow) -> Result<EmbeddingSample> {
    fe.check_window(window)?;
    let trace = fe.forward_with(fe.store.values(), window);
    Ok(EmbeddingSample {
        vector: trace.embedding.iter().map(|&v| v as f32).collect(),
        label: Some(window.label),
        timestamp: window.timestamp,
    })
}

/// Embeds a window whose label the learner must not see.
pub fn embed_unlabeled(fe: &FeModel, window: &SensorWindow) -> Result<EmbeddingSample> {
    embed(fe, window).map(|e| EmbeddingSample { label: None, ..e })
}

/// Order-preserving batch version of [`embed`].
pub fn embed_batch(fe: &FeModel, windows: &[SensorWindow]) -> Result<Vec<EmbeddingSample>> {
    crate::nn::par_map(windows.len(), |i| embed(fe, &windows[i])).into_iter().collect()
}

pub fn save_fe(fe: &FeModel, path: &Path) -> Result<()> {
    write_artifact(path, &fe.descriptor(), &fe.store)
}

/// Loads a saved extractor; the result is frozen.
pub fn load_fe(path: &Path) -> Result<FeModel> {
    let artifact = read_artifact(path)?;
    let corrupt = |m: &str| Error::CorruptArtifact(m.to_string());
    let desc = &artifact.descriptor;
    if desc.get("kind").and_then(|k| k.as_str()) != Some("feature_extractor") {
        return Err(corrupt("not a feature extractor artifact"));
    }
    let cfg: FeConfig = serde_json::from_value(desc["config"].clone())
        .map_err(|e| Error::CorruptArtifact(format!("config: {e}")))?;
    let head_classes: Vec<ClassId> = serde_json::from_value(desc["head_classes"].clone())
        .map_err(|e| Error::CorruptArtifact(format!("head classes: {e}")))?;
    let normalizer: Option<Normalizer> = serde_json::from_value(desc["normalizer"].clone())
        .map_err(|e| Error::CorruptArtifact(format!("normalizer: {e}")))?;
    let mut fe = build_fe(&cfg).map_err(|e| Error::CorruptArtifact(format!("config: {e}")))?;
    if head_classes.len() != cfg.n_classes_base {
        return Err(corrupt("head class list does not match the head size"));
    }
    artifact.load_into(&mut fe.store)?;
    fe.head_classes = head_classes;
    fe.normalizer = normalizer;
    fe.frozen = true;
    Ok(fe)
}
