use super::{Classification, ClassSamples, RmConfig};
use crate::fe::{softmax, softmax_cross_entropy, EmbeddingSample};
use crate::nn::{accumulate_grad, relu_backward, relu_inplace, Adam, Linear, ParamStore};
use crate::{derive_seed, seeded_rng, ClassId, Error, Result};
use ndarray::Array2;
use rand::seq::SliceRandom;

const MLP_HIDDEN: usize = 64;

/// Three fully connected layers from one embedding to class logits.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    store: ParamStore,
    fc1: Linear,
    fc2: Linear,
    fc3: Linear,
    classes: Vec<ClassId>,
}

struct Trace {
    h1: Vec<f64>,
    h2: Vec<f64>,
    logits: Vec<f64>,
}

impl MlpModel {
    fn new(dim: usize, classes: Vec<ClassId>, seed: u64) -> Self {
        let mut rng = seeded_rng(derive_seed(seed, 0x31f));
        let mut store = ParamStore::new();
        let fc1 = Linear::new(&mut store, "fc1", dim, MLP_HIDDEN, &mut rng);
        let fc2 = Linear::new(&mut store, "fc2", MLP_HIDDEN, MLP_HIDDEN, &mut rng);
        let fc3 = Linear::new(&mut store, "fc3", MLP_HIDDEN, classes.len(), &mut rng);
        Self { store, fc1, fc2, fc3, classes }
    }

    pub fn classes(&self) -> &[ClassId] {
        &self.classes
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    fn forward_with(&self, p: &[f64], x: &[f64]) -> Trace {
        let mut h1 = self.fc1.forward(p, x);
        relu_inplace(&mut h1);
        let mut h2 = self.fc2.forward(p, &h1);
        relu_inplace(&mut h2);
        let logits = self.fc3.forward(p, &h2);
        Trace { h1, h2, logits }
    }

    fn backward_with(&self, p: &[f64], x: &[f64], tr: &Trace, d_logits: &[f64], g: &mut [f64]) {
        let mut d2 = self.fc3.backward(p, &tr.h2, d_logits, g, true).expect("dx requested");
        relu_backward(&tr.h2, &mut d2);
        let mut d1 = self.fc2.backward(p, &tr.h1, &d2, g, true).expect("dx requested");
        relu_backward(&tr.h1, &mut d1);
        self.fc1.backward(p, x, &d1, g, false);
    }

    /// Class logits for one embedding.
    pub fn logits(&self, embedding: &[f64]) -> Result<Vec<f64>> {
        if embedding.len() != self.fc1.input {
            return Err(Error::DimensionMismatch { expected: self.fc1.input, found: embedding.len() });
        }
        Ok(self.forward_with(self.store.values(), embedding).logits)
    }
}

/// Trains the MLP with softmax cross-entropy on every replay sample, using the
/// same optimizer, batch size, epochs and L2 penalty as the relation module.
pub fn mlp_baseline_train(replay: &ClassSamples, cfg: &RmConfig) -> Result<(MlpModel, Vec<f64>)> {
    cfg.validate()?;
    if replay.len() < 2 {
        return Err(Error::InsufficientData(format!("MLP training needs at least 2 classes, replay has {}", replay.len())));
    }
    let classes: Vec<ClassId> = replay.keys().copied().collect();
    let d = cfg.embedding_dim;
    let mut data: Vec<(Vec<f64>, usize)> = Vec::new();
    for (ci, samples) in replay.values().enumerate() {
        for s in samples {
            if s.dim() != d {
                return Err(Error::DimensionMismatch { expected: d, found: s.dim() });
            }
            data.push((s.to_f64(), ci));
        }
    }
    let mut model = MlpModel::new(d, classes.clone(), cfg.seed);
    let n_params = model.store.len();
    let m = classes.len() as f64;
    let mut adam = Adam::new(n_params, cfg.lr);
    let mut rng = seeded_rng(derive_seed(cfg.seed, 0x5e1b));
    let mut losses = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (step, batch) in order.chunks(cfg.batch_size).enumerate() {
            let p = model.store.values();
            let traces: Vec<Trace> = batch.iter().map(|&i| model.forward_with(p, &data[i].0)).collect();
            let logits = Array2::from_shape_fn((batch.len(), classes.len()), |(r, c)| traces[r].logits[c]);
            let targets: Vec<usize> = batch.iter().map(|&i| data[i].1).collect();
            let (ce, _, d_logits) = softmax_cross_entropy(logits.view(), &targets)?;
            let w = model.store.decayed_weights();
            let loss = ce + cfg.lambda_l2 / (2.0 * m) * w.iter().map(|v| v * v).sum::<f64>();
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, step, loss });
            }
            let mut grad = accumulate_grad(batch.len(), n_params, |r, g| {
                model.backward_with(p, &data[batch[r]].0, &traces[r], &d_logits.row(r).to_vec(), g);
            });
            model.store.add_decay_grad(&mut grad, cfg.lambda_l2 / m);
            adam.step(model.store.values_mut(), &grad);
            epoch_loss += loss;
        }
        losses.push(epoch_loss);
    }
    Ok((model, losses))
}

/// Argmax over the MLP's softmax; the replay is only checked for emptiness.
pub fn mlp_baseline_classify(model: &MlpModel, replay: &ClassSamples, queries: &[EmbeddingSample]) -> Result<Classification> {
    if replay.values().all(Vec::is_empty) {
        return Err(Error::EmptyReplay);
    }
    let c = model.classes.len();
    let mut logits = Array2::zeros((queries.len(), c));
    for (j, q) in queries.iter().enumerate() {
        let l = model.logits(&q.to_f64())?;
        logits.row_mut(j).iter_mut().zip(l).for_each(|(a, b)| *a = b);
    }
    let scores = softmax(logits.view()).reversed_axes();
    let labels = super::argmax_columns(&scores, &model.classes);
    Ok(Classification { labels, classes: model.classes.clone(), scores })
}

#[cfg(test)]
mod tests {
    use super::super::tests::clusters;
    use super::*;

    #[test]
    fn separable_clusters() {
        let replay = clusters(3, 20, 16, 9);
        let cfg = RmConfig { embedding_dim: 16, epochs: 40, ..RmConfig::default() };
        let (m, losses) = mlp_baseline_train(&replay, &cfg).unwrap();
        assert_eq!(m.logits(&[0.0; 16]).unwrap().len(), 3);
        assert!(losses.last() < losses.first());
        let queries: Vec<EmbeddingSample> = clusters(3, 10, 16, 10).into_values().flatten().collect();
        let out = mlp_baseline_classify(&m, &replay, &queries).unwrap();
        let acc = out.labels.iter().zip(&queries).filter(|(p, q)| Some(**p) == q.label).count() as f64
            / queries.len() as f64;
        assert!(acc >= 0.9, "accuracy {acc}");
        let (m2, _) = mlp_baseline_train(&replay, &cfg).unwrap();
        assert_eq!(m, m2);
    }
}
