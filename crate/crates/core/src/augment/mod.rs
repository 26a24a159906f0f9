//! Class balancing and the four time-series augmentations used to build
//! contrastive pairs: jitter, scaling, magnitude warping and time warping.

mod smote;
mod spline;

pub use smote::{smote_oversample, SmoteConfig, SmoteOutcome, SmoteRecord, SmoteTarget};
pub use spline::{cubic_spline_curve, even_knots, CubicSpline};

use crate::datasets::SensorWindow;
use crate::{seeded_rng, Error, Result};
use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationConfig {
    pub sigma_jitter: f64,
    pub sigma_scale: f64,
    pub sigma_mwarp: f64,
    pub sigma_twarp: f64,
    pub n_knots: usize,
    pub seed: u64,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        Self {
            sigma_jitter: 0.05,
            sigma_scale: 0.1,
            sigma_mwarp: 0.2,
            sigma_twarp: 0.2,
            n_knots: 4,
            seed: 0,
        }
    }
}

impl AugmentationConfig {
    pub fn validate(&self) -> Result<()> {
        let sigmas = [self.sigma_jitter, self.sigma_scale, self.sigma_mwarp, self.sigma_twarp];
        if sigmas.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
            return Err(Error::InvalidConfig("augmentation sigmas must be finite and >= 0".into()));
        }
        if self.n_knots < 2 {
            return Err(Error::InvalidConfig("n_knots must be at least 2".into()));
        }
        Ok(())
    }
}

fn normal(mean: f64, sigma: f64) -> Normal<f64> {
    Normal::new(mean, sigma.max(0.0)).expect("sigma is finite and non-negative")
}

/// Adds i.i.d. `N(0, sigma^2)` noise to every element.
pub fn jitter<R: Rng + ?Sized>(x: &Array2<f64>, sigma: f64, rng: &mut R) -> Array2<f64> {
    let noise = normal(0.0, sigma);
    x.mapv(|v| v + noise.sample(rng))
}

/// Multiplies each channel by one factor drawn from `N(1, sigma^2)`.
pub fn scale<R: Rng + ?Sized>(x: &Array2<f64>, sigma: f64, rng: &mut R) -> Array2<f64> {
    let dist = normal(1.0, sigma);
    let factors: Vec<f64> = (0..x.ncols()).map(|_| dist.sample(rng)).collect();
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        for (v, f) in row.iter_mut().zip(&factors) {
            *v *= f;
        }
    }
    out
}

/// Draws `n_knots` values from `N(1, sigma^2)` for every channel.
pub fn draw_knot_values<R: Rng + ?Sized>(
    channels: usize,
    n_knots: usize,
    sigma: f64,
    rng: &mut R,
) -> Vec<Vec<f64>> {
    let dist = normal(1.0, sigma);
    (0..channels).map(|_| (0..n_knots).map(|_| dist.sample(rng)).collect()).collect()
}

/// Magnitude warp with explicit per-channel knot values at evenly spaced times.
pub fn magnitude_warp_with(x: &Array2<f64>, knot_values: &[Vec<f64>]) -> Result<Array2<f64>> {
    let (w, c) = x.dim();
    if knot_values.len() != c {
        return Err(Error::ShapeMismatch(format!("{} knot rows for {c} channels", knot_values.len())));
    }
    let mut out = x.clone();
    for (ch, values) in knot_values.iter().enumerate() {
        let spline = CubicSpline::natural(&even_knots(w, values.len()), values)?;
        for t in 0..w {
            out[[t, ch]] *= spline.eval(t as f64);
        }
    }
    Ok(out)
}

/// Scales the signal by a smooth random curve per channel.
pub fn magnitude_warp<R: Rng + ?Sized>(
    x: &Array2<f64>,
    sigma: f64,
    n_knots: usize,
    rng: &mut R,
) -> Array2<f64> {
    let knots = draw_knot_values(x.ncols(), n_knots.max(2), sigma, rng);
    magnitude_warp_with(x, &knots).expect("knot rows match channels")
}

/// The warped time axis for one channel: a spline through `(u_j, u_j * delta_j)`,
/// clamped to `[0, len - 1]`.
pub fn warp_path(len: usize, deltas: &[f64]) -> Result<Vec<f64>> {
    let u = even_knots(len, deltas.len());
    let targets: Vec<f64> = u.iter().zip(deltas).map(|(a, d)| a * d).collect();
    let spline = CubicSpline::natural(&u, &targets)?;
    let hi = len.saturating_sub(1) as f64;
    Ok((0..len).map(|t| spline.eval(t as f64).clamp(0.0, hi)).collect())
}

/// Linear interpolation of `series` at fractional index `pos`.
fn sample_at(series: impl Fn(usize) -> f64, len: usize, pos: f64) -> f64 {
    if len == 1 {
        return series(0);
    }
    let i0 = (pos.floor() as usize).min(len - 2);
    let frac = pos - i0 as f64;
    let (a, b) = (series(i0), series(i0 + 1));
    a + frac * (b - a)
}

/// Time warp with explicit per-channel knot multipliers `delta`.
pub fn time_warp_with(x: &Array2<f64>, deltas: &[Vec<f64>]) -> Result<Array2<f64>> {
    let (w, c) = x.dim();
    if deltas.len() != c {
        return Err(Error::ShapeMismatch(format!("{} delta rows for {c} channels", deltas.len())));
    }
    let mut out = x.clone();
    if w == 0 {
        return Ok(out);
    }
    for (ch, d) in deltas.iter().enumerate() {
        let tau = warp_path(w, d)?;
        for t in 0..w {
            out[[t, ch]] = sample_at(|i| x[[i, ch]], w, tau[t]);
        }
    }
    Ok(out)
}

/// Resamples each channel along a smooth random warp of its time axis.
pub fn time_warp<R: Rng + ?Sized>(
    x: &Array2<f64>,
    sigma: f64,
    n_knots: usize,
    rng: &mut R,
) -> Array2<f64> {
    let deltas = draw_knot_values(x.ncols(), n_knots.max(2), sigma, rng);
    time_warp_with(x, &deltas).expect("delta rows match channels")
}

/// Produces four augmented copies of every window, in the order jitter,
/// scale, magnitude warp, time warp. Output index `4 * i + m` derives from
/// input `i`.
pub fn augment_fourfold(windows: &[SensorWindow], cfg: &AugmentationConfig) -> Result<Vec<SensorWindow>> {
    cfg.validate()?;
    if windows.is_empty() {
        return Err(Error::EmptyInput("no windows to augment".into()));
    }
    let mut rng = seeded_rng(cfg.seed);
    let mut out = Vec::with_capacity(windows.len() * 4);
    for w in windows {
        let variants = [
            jitter(&w.data, cfg.sigma_jitter, &mut rng),
            scale(&w.data, cfg.sigma_scale, &mut rng),
            magnitude_warp(&w.data, cfg.sigma_mwarp, cfg.n_knots, &mut rng),
            time_warp(&w.data, cfg.sigma_twarp, cfg.n_knots, &mut rng),
        ];
        for data in variants {
            out.push(SensorWindow { data, ..w.clone() });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeded_rng;

    fn ramp(w: usize, c: usize) -> Array2<f64> {
        Array2::from_shape_fn((w, c), |(t, ch)| (t as f64 * 0.37 + ch as f64).sin() + 0.1 * ch as f64)
    }

    #[test]
    fn zero_sigma_identities() {
        let x = ramp(128, 6);
        let mut rng = seeded_rng(1);
        assert_eq!(jitter(&x, 0.0, &mut rng), x);
        assert_eq!(scale(&x, 0.0, &mut rng), x);
        assert_eq!(magnitude_warp(&x, 0.0, 4, &mut rng), x);
        let tw = time_warp(&x, 0.0, 4, &mut rng);
        let err = (&tw - &x).mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b));
        assert!(err <= 1e-6, "{err}");
    }

    #[test]
    fn shapes_preserved() {
        let x = ramp(128, 6);
        let mut rng = seeded_rng(2);
        assert_eq!(jitter(&x, 0.1, &mut rng).dim(), (128, 6));
        assert_eq!(scale(&x, 0.1, &mut rng).dim(), (128, 6));
        assert_eq!(magnitude_warp(&x, 0.2, 5, &mut rng).dim(), (128, 6));
        assert_eq!(time_warp(&x, 0.2, 5, &mut rng).dim(), (128, 6));
    }

    #[test]
    fn jitter_half_normal_mean() {
        let x = Array2::zeros((1000, 1000));
        let out = jitter(&x, 0.1, &mut seeded_rng(3));
        let mean_abs = out.mapv(f64::abs).mean().unwrap();
        let expected = 0.1 * (2.0 / std::f64::consts::PI).sqrt();
        assert!((mean_abs / expected - 1.0).abs() < 0.01);
    }

    #[test]
    fn scale_is_constant_per_channel() {
        let x = ramp(64, 3) + 2.0;
        let out = scale(&x, 0.3, &mut seeded_rng(4));
        for c in 0..3 {
            let r0 = out[[0, c]] / x[[0, c]];
            for t in 1..64 {
                assert!((out[[t, c]] / x[[t, c]] - r0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn scale_channels_draw_independently() {
        let x = Array2::from_elem((4, 2), 1.0);
        let mut rng = seeded_rng(5);
        let differing = (0..200)
            .filter(|_| {
                let o = scale(&x, 0.1, &mut rng);
                o[[0, 0]] != o[[0, 1]]
            })
            .count();
        assert_eq!(differing, 200);
    }

    #[test]
    fn magnitude_warp_hits_knot_values() {
        // 13 samples and 4 knots put knots on t = 0, 4, 8, 12
        let x = Array2::from_elem((13, 2), 2.0);
        let knots = draw_knot_values(2, 4, 0.3, &mut seeded_rng(6));
        let out = magnitude_warp_with(&x, &knots).unwrap();
        for c in 0..2 {
            for (j, t) in [0, 4, 8, 12].into_iter().enumerate() {
                assert_eq!(out[[t, c]] / x[[t, c]], knots[c][j]);
            }
        }
    }

    #[test]
    fn time_warp_constant_signal_unchanged() {
        let x = Array2::from_elem((50, 2), -1.25);
        assert_eq!(time_warp(&x, 0.5, 4, &mut seeded_rng(7)), x);
    }

    #[test]
    fn time_warp_of_ramp_returns_path() {
        let w = 64;
        let x = Array2::from_shape_fn((w, 1), |(t, _)| t as f64);
        let deltas = vec![vec![1.0, 1.1, 0.95, 0.98]];
        let tau = warp_path(w, &deltas[0]).unwrap();
        assert!(tau.windows(2).all(|p| p[1] >= p[0]), "test path must be monotone");
        let out = time_warp_with(&x, &deltas).unwrap();
        for t in 0..w {
            assert!((out[[t, 0]] - tau[t]).abs() <= 1e-6);
        }
    }

    fn windows(n: usize) -> Vec<SensorWindow> {
        (0..n)
            .map(|i| SensorWindow {
                data: ramp(32, 2) * (i as f64 + 1.0),
                label: (i % 3) as u32,
                subject_id: 0,
                timestamp: i as f64,
                window_seconds: 1.0,
            })
            .collect()
    }

    #[test]
    fn fourfold_cardinality_labels_determinism() {
        let ws = windows(10);
        let cfg = AugmentationConfig::default();
        let a = augment_fourfold(&ws, &cfg).unwrap();
        assert_eq!(a.len(), 40);
        for (k, w) in a.iter().enumerate() {
            assert_eq!(w.label, ws[k / 4].label);
            assert_eq!(w.data.dim(), (32, 2));
        }
        assert_eq!(a, augment_fourfold(&ws, &cfg).unwrap());
    }

    #[test]
    fn fourfold_zero_sigma_copies() {
        let ws = windows(3);
        let cfg = AugmentationConfig {
            sigma_jitter: 0.0,
            sigma_scale: 0.0,
            sigma_mwarp: 0.0,
            sigma_twarp: 0.0,
            ..AugmentationConfig::default()
        };
        let a = augment_fourfold(&ws, &cfg).unwrap();
        for (k, w) in a.iter().enumerate() {
            let src = &ws[k / 4].data;
            let err = (&w.data - src).mapv(f64::abs).fold(0.0f64, |m, &b| m.max(b));
            assert!(err <= 1e-6);
        }
    }
}
