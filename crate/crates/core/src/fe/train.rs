use super::loss::{softmax_cross_entropy, supcon_loss_and_grad, total_fe_loss, SupConOptions};
use super::FeModel;
use crate::augment::{augment_fourfold, AugmentationConfig};
use crate::datasets::SensorWindow;
use crate::nn::{accumulate_grad, par_map, Adam};
use crate::{derive_seed, seeded_rng, ClassId, Error, Result};
use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

/// Loss trajectory and final fit of one training run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FeTrainReport {
    /// Total loss of every optimizer step.
    pub step_losses: Vec<f64>,
    pub ce_losses: Vec<f64>,
    pub con_losses: Vec<f64>,
    /// Mean step loss per epoch.
    pub epoch_losses: Vec<f64>,
    /// Head accuracy on the training windows after the last epoch.
    pub train_accuracy: f64,
}

/// Trains the extractor on base-class windows and returns it frozen.
///
/// Each mini-batch draws `batch_size` training windows for the
/// cross-entropy term and uses their four augmented copies for the
/// contrastive term. The head is bound to the sorted distinct labels.
pub fn train_fe(
    mut fe: FeModel,
    windows: &[SensorWindow],
    aug_cfg: &AugmentationConfig,
) -> Result<(FeModel, FeTrainReport)> {
    if fe.is_frozen() {
        return Err(Error::FrozenModel);
    }
    if windows.is_empty() {
        return Err(Error::EmptyInput("no training windows".into()));
    }
    for w in windows {
        fe.check_window(w)?;
    }
    let classes: Vec<ClassId> =
        windows.iter().map(|w| w.label).collect::<BTreeSet<_>>().into_iter().collect();
    if classes.len() != fe.cfg.n_classes_base {
        return Err(Error::InvalidConfig(format!(
            "training data has {} classes, the head has {}",
            classes.len(),
            fe.cfg.n_classes_base
        )));
    }
    fe.set_head_classes(classes.clone())?;
    let targets: Vec<usize> =
        windows.iter().map(|w| classes.binary_search(&w.label).expect("label in class list")).collect();

    let cfg = fe.cfg.clone();
    let augmented = if cfg.use_contrastive && cfg.epochs > 0 {
        augment_fourfold(windows, aug_cfg)?
    } else {
        Vec::new()
    };
    let supcon = SupConOptions { tau: cfg.tau, normalize: cfg.supcon_normalize, skip_lonely_anchors: true };
    let n_params = fe.store.len();
    let mut adam = Adam::new(n_params, cfg.lr);
    let mut report = FeTrainReport::default();
    let mut order: Vec<usize> = (0..windows.len()).collect();

    for epoch in 0..cfg.epochs {
        let mut rng = seeded_rng(derive_seed(cfg.seed, epoch as u64 + 1));
        order.shuffle(&mut rng);
        let mut epoch_sum = 0.0;
        let mut steps = 0;
        for (step, batch) in order.chunks(cfg.batch_size).enumerate() {
            let p = fe.store.values();
            let b = batch.len();
            let orig = par_map(b, |i| fe.forward_with(p, &windows[batch[i]]));
            let logit_rows: Vec<Vec<f64>> = par_map(b, |i| fe.logits_with(p, &orig[i].embedding));
            let logits = Array2::from_shape_fn((b, cfg.n_classes_base), |(r, c)| logit_rows[r][c]);
            let batch_targets: Vec<usize> = batch.iter().map(|&i| targets[i]).collect();
            let (ce, _, d_logits) = softmax_cross_entropy(logits.view(), &batch_targets)?;

            let (con, aug_traces, d_emb) = if cfg.use_contrastive {
                let traces = par_map(4 * b, |j| fe.forward_with(p, &augmented[4 * batch[j / 4] + j % 4]));
                let d = cfg.embedding_dim;
                let emb = Array2::from_shape_fn((4 * b, d), |(r, k)| traces[r].embedding[k]);
                let labels: Vec<ClassId> = (0..4 * b).map(|j| windows[batch[j / 4]].label).collect();
                let (con, grad) = supcon_loss_and_grad(emb.view(), &labels, supcon)?;
                (con, traces, Some(grad))
            } else {
                (0.0, Vec::new(), None)
            };

            let loss = total_fe_loss(ce, con, cfg.use_contrastive);
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, step, loss });
            }
            let grad = accumulate_grad(b + aug_traces.len(), n_params, |i, g| {
                if i < b {
                    let dl = d_logits.row(i).to_vec();
                    fe.backward_with(p, &orig[i], None, Some(&dl), g);
                } else {
                    let de = d_emb.as_ref().expect("contrastive gradient").row(i - b).to_vec();
                    fe.backward_with(p, &aug_traces[i - b], Some(&de), None, g);
                }
            });
            adam.step(fe.store.values_mut(), &grad);

            report.step_losses.push(loss);
            report.ce_losses.push(ce);
            report.con_losses.push(con);
            epoch_sum += loss;
            steps += 1;
        }
        report.epoch_losses.push(epoch_sum / steps as f64);
    }

    fe.freeze();
    let p = fe.store.values();
    let correct = par_map(windows.len(), |i| {
        let tr = fe.forward_with(p, &windows[i]);
        let lg = fe.logits_with(p, &tr.embedding);
        let best = (0..lg.len()).fold(0, |b, k| if lg[k] > lg[b] { k } else { b });
        best == targets[i]
    });
    report.train_accuracy = correct.iter().filter(|&&c| c).count() as f64 / windows.len() as f64;
    Ok((fe, report))
}

#[cfg(test)]
mod tests {
    use super::super::{build_fe, FeConfig};
    use super::*;

    fn two_class(n: usize) -> Vec<SensorWindow> {
        (0..n)
            .map(|i| {
                let label = (i % 2) as ClassId;
                let sign = if label == 0 { 1.0 } else { -1.0 };
                SensorWindow {
                    data: Array2::from_shape_fn((32, 2), |(t, c)| {
                        sign * (0.5 + 0.1 * c as f64) + 0.2 * ((t + i) as f64 * 0.9).sin()
                    }),
                    label,
                    subject_id: 0,
                    timestamp: i as f64,
                    window_seconds: 1.0,
                }
            })
            .collect()
    }

    fn cfg(epochs: usize) -> FeConfig {
        FeConfig {
            input_channels: 2,
            window_len: 32,
            embedding_dim: 8,
            conv_channels: vec![4, 6],
            kernel_sizes: vec![3, 3],
            lstm_hidden: 6,
            n_classes_base: 2,
            batch_size: 10,
            epochs,
            ..FeConfig::default()
        }
    }

    #[test]
    fn zero_epochs_is_frozen_init() {
        let init = build_fe(&cfg(0)).unwrap();
        let (fe, report) = train_fe(init.clone(), &two_class(10), &AugmentationConfig::default()).unwrap();
        assert!(fe.is_frozen());
        let mut expect = init.params().clone();
        expect.round_to_f32();
        assert_eq!(fe.params(), &expect);
        assert!(report.step_losses.is_empty());
    }

    #[test]
    fn loss_decreases_and_is_deterministic() {
        let data = two_class(20);
        let run = || train_fe(build_fe(&cfg(6)).unwrap(), &data, &AugmentationConfig::default()).unwrap();
        let (a, ra) = run();
        let (b, _) = run();
        assert_eq!(a.params().checksum(), b.params().checksum());
        assert!(ra.step_losses.iter().all(|l| l.is_finite()));
        assert!(ra.epoch_losses.last().unwrap() < ra.epoch_losses.first().unwrap());
    }

    #[test]
    fn class_count_must_match_head() {
        let data: Vec<_> = two_class(6).into_iter().map(|w| SensorWindow { label: 0, ..w }).collect();
        assert!(matches!(
            train_fe(build_fe(&cfg(1)).unwrap(), &data, &AugmentationConfig::default()),
            Err(Error::InvalidConfig(_))
        ));
    }
}
