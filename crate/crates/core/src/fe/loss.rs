//! Cross-entropy and supervised contrastive losses with analytic gradients.

use crate::{ClassId, Error, Result};
use ndarray::{Array2, ArrayView2};

/// Mean negative log-likelihood of the true class, `probs` is `[N × C]`
/// post-softmax and `labels` are column indices.
pub fn cross_entropy_loss(probs: ArrayView2<f64>, labels: &[usize]) -> Result<f64> {
    check_ce_shapes(probs, labels)?;
    let n = labels.len() as f64;
    Ok(-labels.iter().enumerate().map(|(r, &c)| probs[[r, c]].ln()).sum::<f64>() / n)
}

/// `dL/dp` of [`cross_entropy_loss`].
pub fn cross_entropy_grad(probs: ArrayView2<f64>, labels: &[usize]) -> Result<Array2<f64>> {
    check_ce_shapes(probs, labels)?;
    let n = labels.len() as f64;
    let mut g = Array2::zeros(probs.dim());
    for (r, &c) in labels.iter().enumerate() {
        g[[r, c]] = -1.0 / (n * probs[[r, c]]);
    }
    Ok(g)
}

fn check_ce_shapes(probs: ArrayView2<f64>, labels: &[usize]) -> Result<()> {
    let (n, c) = probs.dim();
    if n == 0 || n != labels.len() {
        return Err(Error::ShapeMismatch(format!("{n} probability rows for {} labels", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::ShapeMismatch(format!("label index {bad} with {c} classes")));
    }
    Ok(())
}

/// Row-wise softmax.
pub fn softmax(logits: ArrayView2<f64>) -> Array2<f64> {
    let mut out = logits.to_owned();
    for mut row in out.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
    out
}

/// Softmax followed by cross-entropy; returns the loss, the probabilities and
/// `dL/dlogits = (p - y) / N`.
pub fn softmax_cross_entropy(
    logits: ArrayView2<f64>,
    labels: &[usize],
) -> Result<(f64, Array2<f64>, Array2<f64>)> {
    let probs = softmax(logits);
    check_ce_shapes(probs.view(), labels)?;
    let n = labels.len() as f64;
    let mut loss = 0.0;
    let mut grad = probs.clone();
    for (r, &c) in labels.iter().enumerate() {
        // log-sum-exp form keeps this finite even when p underflows
        let row = logits.row(r);
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        loss += lse - logits[[r, c]];
        grad[[r, c]] -= 1.0;
    }
    grad.mapv_inplace(|v| v / n);
    Ok((loss / n, probs, grad))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SupConOptions {
    pub tau: f64,
    /// L2-normalize embeddings before taking dot products.
    pub normalize: bool,
    /// Drop anchors without a positive instead of failing.
    pub skip_lonely_anchors: bool,
}

impl SupConOptions {
    pub fn new(tau: f64) -> Self {
        Self { tau, normalize: true, skip_lonely_anchors: false }
    }
}

/// Supervised contrastive loss summed over anchors.
///
/// For each anchor `a`, the mean over its same-label partners `p` of
/// `-ln(exp(z_a·z_p/τ) / Σ_{j≠a} exp(z_a·z_j/τ))`.
pub fn supcon_loss(embeddings: ArrayView2<f64>, labels: &[ClassId], opts: SupConOptions) -> Result<f64> {
    supcon_loss_and_grad(embeddings, labels, opts).map(|(l, _)| l)
}

fn l2_normalize(e: ArrayView2<f64>) -> (Array2<f64>, Vec<f64>) {
    let mut z = e.to_owned();
    let mut norms = Vec::with_capacity(e.nrows());
    for mut row in z.rows_mut() {
        let n = row.dot(&row).sqrt().max(1e-12);
        row.mapv_inplace(|v| v / n);
        norms.push(n);
    }
    (z, norms)
}

/// [`supcon_loss`] together with `dL/d(embeddings)` of the raw inputs.
pub fn supcon_loss_and_grad(
    embeddings: ArrayView2<f64>,
    labels: &[ClassId],
    opts: SupConOptions,
) -> Result<(f64, Array2<f64>)> {
    let n = embeddings.nrows();
    if n != labels.len() {
        return Err(Error::ShapeMismatch(format!("{n} embeddings for {} labels", labels.len())));
    }
    if n < 2 {
        return Err(Error::ShapeMismatch("contrastive loss needs at least 2 samples".into()));
    }
    if !(opts.tau > 0.0) {
        return Err(Error::InvalidConfig(format!("temperature {} must be positive", opts.tau)));
    }
    let (z, norms) = if opts.normalize {
        l2_normalize(embeddings)
    } else {
        (embeddings.to_owned(), vec![1.0; n])
    };
    let sim = z.dot(&z.t()) / opts.tau;
    // dL/dsim, not symmetric: row = anchor
    let mut dsim = Array2::<f64>::zeros((n, n));
    let mut loss = 0.0;
    let mut prob = vec![0.0; n];
    for a in 0..n {
        let positives: Vec<usize> = (0..n).filter(|&p| p != a && labels[p] == labels[a]).collect();
        if positives.is_empty() {
            if opts.skip_lonely_anchors {
                continue;
            }
            return Err(Error::NoPositive { anchor: a });
        }
        let m = (0..n).filter(|&j| j != a).map(|j| sim[[a, j]]).fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for j in 0..n {
            prob[j] = if j == a { 0.0 } else { (sim[[a, j]] - m).exp() };
            denom += prob[j];
        }
        let lse = m + denom.ln();
        let inv_p = 1.0 / positives.len() as f64;
        for &p in &positives {
            loss += inv_p * (lse - sim[[a, p]]);
        }
        for j in 0..n {
            if j != a {
                dsim[[a, j]] += prob[j] / denom;
            }
        }
        for &p in &positives {
            dsim[[a, p]] -= inv_p;
        }
    }
    // sim = z zᵀ / τ  ⇒  dz = (dsim + dsimᵀ) z / τ
    let dz = (&dsim + &dsim.t()).dot(&z) / opts.tau;
    let grad = if opts.normalize {
        let mut g = dz;
        for (r, mut row) in g.rows_mut().into_iter().enumerate() {
            let zr = z.row(r);
            let proj = row.dot(&zr);
            for (gv, zv) in row.iter_mut().zip(zr.iter()) {
                *gv = (*gv - zv * proj) / norms[r];
            }
        }
        g
    } else {
        dz
    };
    Ok((loss, grad))
}

/// `L_ce + L_con`, or `L_ce` alone when the contrastive term is disabled.
pub fn total_fe_loss(ce: f64, con: f64, use_contrastive: bool) -> f64 {
    if use_contrastive {
        ce + con
    } else {
        ce
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn ce_hand_values() {
        let perfect = array![[1.0, 0.0], [0.0, 1.0]];
        assert_eq!(cross_entropy_loss(perfect.view(), &[0, 1]).unwrap(), 0.0);
        let uniform = Array2::from_elem((3, 4), 0.25);
        let l = cross_entropy_loss(uniform.view(), &[0, 1, 3]).unwrap();
        assert!((l - 4f64.ln()).abs() < 1e-15);
        let p = array![[0.5, 0.5], [0.75, 0.25]];
        let l = cross_entropy_loss(p.view(), &[0, 1]).unwrap();
        assert!((l - (2f64.ln() + 4f64.ln()) / 2.0).abs() < 1e-15);
        assert!((l - 1.0397).abs() < 1e-4);
    }

    #[test]
    fn ce_shape_errors() {
        let p = Array2::from_elem((2, 2), 0.5);
        assert!(matches!(cross_entropy_loss(p.view(), &[0]), Err(Error::ShapeMismatch(_))));
        assert!(matches!(cross_entropy_loss(p.view(), &[0, 2]), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn softmax_ce_matches_two_step() {
        let logits = array![[0.2, -1.0, 3.0], [1.0, 1.0, 1.0]];
        let (l, p, _) = softmax_cross_entropy(logits.view(), &[2, 0]).unwrap();
        let l2 = cross_entropy_loss(p.view(), &[2, 0]).unwrap();
        assert!((l - l2).abs() < 1e-12);
    }

    #[test]
    fn identical_embeddings_closed_form() {
        let e = Array2::from_elem((8, 3), 0.4);
        let labels = [0, 0, 1, 1, 2, 2, 3, 3];
        for tau in [0.05, 0.1, 1.0, 7.0] {
            let l = supcon_loss(e.view(), &labels, SupConOptions::new(tau)).unwrap();
            assert!((l - 8.0 * 7f64.ln()).abs() <= 1e-9 * 8.0 * 7f64.ln());
        }
    }

    #[test]
    fn lonely_anchor() {
        let e = array![[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]];
        assert!(matches!(
            supcon_loss(e.view(), &[0, 0, 1], SupConOptions::new(0.1)),
            Err(Error::NoPositive { anchor: 2 })
        ));
        let skip = SupConOptions { skip_lonely_anchors: true, ..SupConOptions::new(0.1) };
        let l = supcon_loss(e.view(), &[0, 0, 1], skip).unwrap();
        assert!(l.is_finite() && l > 0.0);
    }

    #[test]
    fn additivity_and_ablation() {
        assert_eq!(total_fe_loss(1.5, 2.25, true), 3.75);
        assert_eq!(total_fe_loss(1.5, 2.25, false), 1.5);
        assert_eq!(total_fe_loss(0.0, 0.0, true), 0.0);
    }
}
