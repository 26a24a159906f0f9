use crate::{ClassId, Error, Result};
use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::Array2;
use std::collections::{BTreeMap, BTreeSet};

fn check_lengths(preds: &[ClassId], truths: &[ClassId]) -> Result<()> {
    if preds.len() != truths.len() {
        return Err(Error::LengthMismatch(format!("{} predictions for {} truths", preds.len(), truths.len())));
    }
    if preds.is_empty() {
        return Err(Error::LengthMismatch("no predictions to score".into()));
    }
    Ok(())
}

/// Fraction of exact matches.
pub fn accuracy(preds: &[ClassId], truths: &[ClassId]) -> Result<f64> {
    check_lengths(preds, truths)?;
    Ok(preds.iter().zip(truths).filter(|(p, t)| p == t).count() as f64 / preds.len() as f64)
}

/// F1 of every class in `class_set` that has at least one true instance.
pub fn per_class_f1(
    preds: &[ClassId],
    truths: &[ClassId],
    class_set: &BTreeSet<ClassId>,
) -> Result<BTreeMap<ClassId, f64>> {
    check_lengths(preds, truths)?;
    let mut out = BTreeMap::new();
    for &c in class_set {
        let mut tp = 0usize;
        let mut fp = 0usize;
        let mut fn_ = 0usize;
        for (&p, &t) in preds.iter().zip(truths) {
            match (p == c, t == c) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                _ => {}
            }
        }
        if tp + fn_ == 0 {
            continue;
        }
        let f1 = if tp == 0 { 0.0 } else { 2.0 * tp as f64 / (2 * tp + fp + fn_) as f64 };
        out.insert(c, f1);
    }
    Ok(out)
}

/// Unweighted mean of per-class F1 over the classes of `class_set` that
/// occur in `truths`.
pub fn macro_f1(preds: &[ClassId], truths: &[ClassId], class_set: &BTreeSet<ClassId>) -> Result<f64> {
    if class_set.is_empty() {
        return Err(Error::EmptyInput("class set is empty".into()));
    }
    let per = per_class_f1(preds, truths, class_set)?;
    if per.is_empty() {
        return Ok(0.0);
    }
    Ok(per.values().sum::<f64>() / per.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaProjection {
    /// `[n × dims]` projected points.
    pub points: Array2<f64>,
    /// Variance along each kept component, descending.
    pub explained_variance: Vec<f64>,
    /// Share of the total variance along each kept component.
    pub explained_ratio: Vec<f64>,
}

/// Projects rows onto the top `dims` eigenvectors of their covariance.
pub fn pca_project(embeddings: &Array2<f64>, dims: usize) -> Result<PcaProjection> {
    let (n, d) = embeddings.dim();
    if n < dims.max(2) {
        return Err(Error::TooFewSamples { context: "PCA input".into(), count: n, need: dims.max(2) });
    }
    if dims == 0 || dims > d {
        return Err(Error::InvalidConfig(format!("cannot keep {dims} components of {d}-dimensional data")));
    }
    let mean = embeddings.mean_axis(ndarray::Axis(0)).expect("n > 0");
    let centered = embeddings - &mean;
    let cov = centered.t().dot(&centered) / (n - 1) as f64;
    let eig = SymmetricEigen::new(DMatrix::from_fn(d, d, |i, j| cov[[i, j]]));
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let total: f64 = eig.eigenvalues.iter().map(|v| v.max(0.0)).sum();
    let mut components = Array2::zeros((d, dims));
    let mut explained_variance = Vec::with_capacity(dims);
    for (k, &idx) in order.iter().take(dims).enumerate() {
        let v = eig.eigenvectors.column(idx);
        // sign convention: largest-magnitude entry positive
        let pivot = (0..d).fold(0, |b, i| if v[i].abs() > v[b].abs() { i } else { b });
        let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..d {
            components[[i, k]] = sign * v[i];
        }
        explained_variance.push(eig.eigenvalues[idx].max(0.0));
    }
    let explained_ratio =
        explained_variance.iter().map(|v| if total > 0.0 { v / total } else { 0.0 }).collect();
    Ok(PcaProjection { points: centered.dot(&components), explained_variance, explained_ratio })
}
