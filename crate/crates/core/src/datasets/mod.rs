//! Raw recordings, cleansing, sliding windows, z-score normalization and the
//! four-region scenario split.

mod loaders;
mod synth;

pub use loaders::{
    load_csv_dir, load_dsads, load_hapt, load_pamap2, read_csv_recording, write_csv_recording,
    Pamap2Options, DSADS_RATE_HZ, HAPT_RATE_HZ, PAMAP2_DEFAULT_CLASSES, PAMAP2_RATE_HZ,
};
pub use synth::{synth_generate, SynthSpec};

use crate::{ClassId, Error, Result, SubjectId};
use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

/// Floor applied to per-channel standard deviations.
pub const STD_FLOOR: f64 = 1e-8;

/// A continuous multichannel recording from one subject.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRecording {
    pub subject_id: SubjectId,
    pub sample_rate_hz: f64,
    /// `[T × C]` sensor values, NaN for missing samples.
    pub channels: Array2<f64>,
    pub labels: Vec<ClassId>,
    /// Seconds, strictly increasing.
    pub timestamps: Vec<f64>,
}

impl RawRecording {
    pub fn new(
        subject_id: SubjectId,
        sample_rate_hz: f64,
        channels: Array2<f64>,
        labels: Vec<ClassId>,
        timestamps: Vec<f64>,
    ) -> Result<Self> {
        let rows = channels.nrows();
        if labels.len() != rows || timestamps.len() != rows {
            return Err(Error::LengthMismatch(format!(
                "{} rows, {} labels, {} timestamps",
                rows,
                labels.len(),
                timestamps.len()
            )));
        }
        if !(sample_rate_hz > 0.0) || !sample_rate_hz.is_finite() {
            return Err(Error::InvalidConfig(format!("sample rate {sample_rate_hz}")));
        }
        if timestamps.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Parse("timestamps are not strictly increasing".into()));
        }
        Ok(Self { subject_id, sample_rate_hz, channels, labels, timestamps })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_channels(&self) -> usize {
        self.channels.ncols()
    }
}

/// A fixed-length segment `[W × C]` cut from a recording.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorWindow {
    pub data: Array2<f64>,
    pub label: ClassId,
    pub subject_id: SubjectId,
    /// Start time of the window in seconds.
    pub timestamp: f64,
    pub window_seconds: f64,
}

impl SensorWindow {
    pub fn len(&self) -> usize {
        self.data.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.data.nrows() == 0
    }

    pub fn n_channels(&self) -> usize {
        self.data.ncols()
    }

    /// Row-major `[W × C]` view of the samples.
    pub fn flat(&self) -> Vec<f64> {
        self.data.iter().copied().collect()
    }
}

/// Fills NaN gaps channel by channel.
///
/// Interior runs are linearly interpolated in sample index between the two
/// neighbouring finite values. Leading and trailing runs copy the nearest
/// finite value.
pub fn interpolate_missing(recording: &RawRecording) -> Result<RawRecording> {
    let mut out = recording.clone();
    for (c, mut column) in out.channels.axis_iter_mut(Axis(1)).enumerate() {
        let finite: Vec<usize> = (0..column.len()).filter(|&i| !column[i].is_nan()).collect();
        let (Some(&first), Some(&last)) = (finite.first(), finite.last()) else {
            return Err(Error::AllMissingChannel { channel: c });
        };
        for i in 0..first {
            column[i] = column[first];
        }
        for i in last + 1..column.len() {
            column[i] = column[last];
        }
        for pair in finite.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            if b - a < 2 {
                continue;
            }
            let (va, vb) = (column[a], column[b]);
            let span = (b - a) as f64;
            for i in a + 1..b {
                let frac = (i - a) as f64 / span;
                column[i] = va + (vb - va) * frac;
            }
        }
    }
    Ok(out)
}

/// Window length in samples for a duration at a sampling rate.
pub fn window_len(window_seconds: f64, sample_rate_hz: f64) -> usize {
    (window_seconds * sample_rate_hz).round() as usize
}

/// Stride for a window length and overlap fraction, rounded half-up and at least 1.
pub fn window_stride(window: usize, overlap_fraction: f64) -> usize {
    let raw = window as f64 * (1.0 - overlap_fraction);
    ((raw + 0.5).floor() as usize).max(1)
}

/// Cuts a cleansed recording into overlapping windows labelled by majority vote.
pub fn segment_windows(
    recording: &RawRecording,
    window_seconds: f64,
    overlap_fraction: f64,
) -> Result<Vec<SensorWindow>> {
    if !(0.0..1.0).contains(&overlap_fraction) {
        return Err(Error::InvalidConfig(format!("overlap {overlap_fraction} not in [0, 1)")));
    }
    let w = window_len(window_seconds, recording.sample_rate_hz);
    if w == 0 {
        return Err(Error::InvalidConfig("window length rounds to zero samples".into()));
    }
    let t = recording.len();
    if w > t {
        return Err(Error::WindowTooLong { window: w, len: t });
    }
    let stride = window_stride(w, overlap_fraction);
    let count = (t - w) / stride + 1;
    let windows = (0..count)
        .map(|k| {
            let start = k * stride;
            SensorWindow {
                data: recording.channels.slice(ndarray::s![start..start + w, ..]).to_owned(),
                label: majority_label(&recording.labels[start..start + w]),
                subject_id: recording.subject_id,
                timestamp: recording.timestamps[start],
                window_seconds,
            }
        })
        .collect();
    Ok(windows)
}

fn majority_label(labels: &[ClassId]) -> ClassId {
    let mut counts: BTreeMap<ClassId, usize> = BTreeMap::new();
    for &l in labels {
        *counts.entry(l).or_default() += 1;
    }
    // BTreeMap iterates in ascending id order; keep the first maximum.
    let mut best = (labels[0], 0usize);
    for (&label, &n) in &counts {
        if n > best.1 {
            best = (label, n);
        }
    }
    best.0
}

/// Per-channel z-score statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    pub fn identity(channels: usize) -> Self {
        Self { mean: vec![0.0; channels], std: vec![1.0; channels] }
    }

    pub fn n_channels(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, window: &SensorWindow) -> Result<SensorWindow> {
        if window.n_channels() != self.n_channels() {
            return Err(Error::ChannelMismatch {
                expected: self.n_channels(),
                found: window.n_channels(),
            });
        }
        let mean = Array1::from(self.mean.clone());
        let std = Array1::from(self.std.clone());
        let mut out = window.clone();
        out.data = (&window.data - &mean) / &std;
        Ok(out)
    }
}

/// Fits population mean and standard deviation per channel over every sample
/// of every window.
pub fn fit_normalizer(windows: &[SensorWindow]) -> Result<Normalizer> {
    let first = windows.first().ok_or_else(|| Error::EmptyInput("no windows".into()))?;
    let c = first.n_channels();
    let mut sum = vec![0.0; c];
    let mut n = 0usize;
    for w in windows {
        if w.n_channels() != c {
            return Err(Error::ChannelMismatch { expected: c, found: w.n_channels() });
        }
        for row in w.data.rows() {
            for (s, v) in sum.iter_mut().zip(row) {
                *s += v;
            }
        }
        n += w.len();
    }
    if n == 0 {
        return Err(Error::EmptyInput("windows contain no samples".into()));
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
    let mut sq = vec![0.0; c];
    for w in windows {
        for row in w.data.rows() {
            for ((s, v), m) in sq.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
    }
    let std = sq.iter().map(|s| (s / n as f64).sqrt().max(STD_FLOOR)).collect();
    Ok(Normalizer { mean, std })
}

pub fn normalize(windows: &[SensorWindow], normalizer: &Normalizer) -> Result<Vec<SensorWindow>> {
    windows.iter().map(|w| normalizer.apply(w)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioMode {
    /// Streaming adaptation and test data come from the new subjects.
    WithinSubject,
    /// Streaming adaptation uses base subjects, tests use the new subjects.
    BetweenSubject,
}

/// Which of the four regions a window falls in.
///
/// Region 1: base class, base subject. Region 2: base class, new subject.
/// Region 3: new class, base subject. Region 4: new class, new subject.
pub fn region_of(
    window: &SensorWindow,
    base_classes: &BTreeSet<ClassId>,
    new_subjects: &BTreeSet<SubjectId>,
) -> u8 {
    match (base_classes.contains(&window.label), new_subjects.contains(&window.subject_id)) {
        (true, false) => 1,
        (true, true) => 2,
        (false, false) => 3,
        (false, true) => 4,
    }
}

#[derive(Debug, Clone)]
pub struct ScenarioSplit {
    pub fe_train: Vec<SensorWindow>,
    pub rm_train_pool: Vec<SensorWindow>,
    pub test: Vec<SensorWindow>,
    pub mode: ScenarioMode,
    pub base_classes: BTreeSet<ClassId>,
    pub new_classes: BTreeSet<ClassId>,
    pub new_subjects: BTreeSet<SubjectId>,
}

impl ScenarioSplit {
    pub fn all_classes(&self) -> BTreeSet<ClassId> {
        self.base_classes.union(&self.new_classes).copied().collect()
    }

    /// Applies a normalizer to every region.
    pub fn normalized(&self, normalizer: &Normalizer) -> Result<ScenarioSplit> {
        Ok(ScenarioSplit {
            fe_train: normalize(&self.fe_train, normalizer)?,
            rm_train_pool: normalize(&self.rm_train_pool, normalizer)?,
            test: normalize(&self.test, normalizer)?,
            ..self.clone()
        })
    }
}

/// Partitions windows into the four regions and assembles them per scenario.
pub fn scenario_split(
    windows: &[SensorWindow],
    base_classes: &BTreeSet<ClassId>,
    new_subjects: &BTreeSet<SubjectId>,
    mode: ScenarioMode,
) -> Result<ScenarioSplit> {
    let all_classes: BTreeSet<ClassId> = windows.iter().map(|w| w.label).collect();
    let all_subjects: BTreeSet<SubjectId> = windows.iter().map(|w| w.subject_id).collect();
    if base_classes.is_empty() || !base_classes.is_subset(&all_classes) || base_classes == &all_classes
    {
        return Err(Error::DegenerateSplit(format!(
            "base classes {base_classes:?} must be a nonempty strict subset of {all_classes:?}"
        )));
    }
    if new_subjects.is_empty()
        || !new_subjects.is_subset(&all_subjects)
        || new_subjects == &all_subjects
    {
        return Err(Error::DegenerateSplit(format!(
            "new subjects {new_subjects:?} must be a nonempty strict subset of {all_subjects:?}"
        )));
    }
    let mut regions: [Vec<SensorWindow>; 4] = Default::default();
    for w in windows {
        let r = region_of(w, base_classes, new_subjects);
        regions[(r - 1) as usize].push(w.clone());
    }
    let required: &[u8] = match mode {
        ScenarioMode::WithinSubject => &[1, 2, 4],
        ScenarioMode::BetweenSubject => &[1, 2, 3, 4],
    };
    for &r in required {
        if regions[(r - 1) as usize].is_empty() {
            return Err(Error::DegenerateSplit(format!("region {r} is empty")));
        }
    }
    let [r1, r2, r3, r4] = regions;
    let test: Vec<SensorWindow> = r2.iter().chain(&r4).cloned().collect();
    let rm_train_pool = match mode {
        ScenarioMode::WithinSubject => test.clone(),
        ScenarioMode::BetweenSubject => r1.iter().chain(&r3).cloned().collect(),
    };
    Ok(ScenarioSplit {
        fe_train: r1,
        rm_train_pool,
        test,
        mode,
        base_classes: base_classes.clone(),
        new_classes: all_classes.difference(base_classes).copied().collect(),
        new_subjects: new_subjects.clone(),
    })
}

/// Cleanses and windows a set of recordings.
pub fn windows_from_recordings(
    recordings: &[RawRecording],
    window_seconds: f64,
    overlap_fraction: f64,
) -> Result<Vec<SensorWindow>> {
    let mut out = Vec::new();
    for rec in recordings {
        let clean = interpolate_missing(rec)?;
        if window_len(window_seconds, clean.sample_rate_hz) > clean.len() {
            // short bouts cannot host a single window
            continue;
        }
        out.extend(segment_windows(&clean, window_seconds, overlap_fraction)?);
    }
    if out.is_empty() {
        return Err(Error::InsufficientData("no recording is long enough for one window".into()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn recording(values: Vec<f64>, labels: Vec<ClassId>) -> RawRecording {
        let n = values.len();
        let ts = (0..n).map(|i| i as f64 * 0.01).collect();
        RawRecording::new(1, 100.0, Array2::from_shape_vec((n, 1), values).unwrap(), labels, ts)
            .unwrap()
    }

    #[test]
    fn interpolates_interior_gap() {
        let r = recording(vec![1.0, f64::NAN, 3.0], vec![0; 3]);
        let out = interpolate_missing(&r).unwrap();
        assert_eq!(out.channels.column(0).to_vec(), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn extends_leading_gap() {
        let r = recording(vec![f64::NAN, 5.0, 5.0], vec![0; 3]);
        let out = interpolate_missing(&r).unwrap();
        assert_eq!(out.channels.column(0).to_vec(), vec![5.0, 5.0, 5.0]);
    }

    #[test]
    fn no_gap_is_identity() {
        let r = recording(vec![0.5, -1.0, 2.0, 7.0], vec![0; 4]);
        assert_eq!(interpolate_missing(&r).unwrap(), r);
    }

    #[test]
    fn all_missing_channel_errors() {
        let r = recording(vec![f64::NAN; 4], vec![0; 4]);
        assert!(matches!(interpolate_missing(&r), Err(Error::AllMissingChannel { channel: 0 })));
    }

    #[test]
    fn pamap2_window_geometry() {
        let w = window_len(5.12, 100.0);
        assert_eq!(w, 512);
        assert_eq!(window_stride(w, 0.78), 113);
    }

    #[test]
    fn window_count_by_hand() {
        let r = recording(vec![0.0; 100], vec![0; 100]);
        let ws = segment_windows(&r, 0.2, 0.5).unwrap();
        assert_eq!(ws.len(), 9);
        assert_eq!(ws[1].timestamp, r.timestamps[10]);
    }

    #[test]
    fn full_length_window() {
        let r = recording(vec![0.0; 50], vec![0; 50]);
        assert_eq!(segment_windows(&r, 0.5, 0.3).unwrap().len(), 1);
        assert!(matches!(segment_windows(&r, 0.51, 0.3), Err(Error::WindowTooLong { .. })));
    }

    #[test]
    fn majority_vote_ties_to_smallest() {
        assert_eq!(majority_label(&[4, 2, 2, 4]), 2);
        assert_eq!(majority_label(&[3, 3, 1]), 3);
    }

    fn window(data: Array2<f64>) -> SensorWindow {
        SensorWindow { data, label: 0, subject_id: 0, timestamp: 0.0, window_seconds: 1.0 }
    }

    #[test]
    fn normalizer_hand_cases() {
        let zero = fit_normalizer(&[window(Array2::zeros((4, 2)))]).unwrap();
        assert_eq!(zero.mean, vec![0.0, 0.0]);
        assert_eq!(zero.std, vec![STD_FLOOR, STD_FLOOR]);

        let pm = fit_normalizer(&[window(array![[-1.0], [1.0]])]).unwrap();
        assert_eq!(pm.mean, vec![0.0]);
        assert_eq!(pm.std, vec![1.0]);

        let seven = fit_normalizer(&[window(Array2::from_elem((3, 1), 7.0))]).unwrap();
        assert_eq!(seven.mean, vec![7.0]);
        assert_eq!(seven.std, vec![STD_FLOOR]);

        assert!(matches!(fit_normalizer(&[]), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn identity_normalizer_and_channel_check() {
        let w = window(array![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]);
        assert_eq!(Normalizer::identity(3).apply(&w).unwrap(), w);
        assert!(matches!(
            Normalizer::identity(4).apply(&w),
            Err(Error::ChannelMismatch { expected: 4, found: 3 })
        ));
    }

    fn labelled(label: ClassId, subject: SubjectId) -> SensorWindow {
        SensorWindow {
            data: Array2::zeros((2, 1)),
            label,
            subject_id: subject,
            timestamp: 0.0,
            window_seconds: 1.0,
        }
    }

    fn grid() -> Vec<SensorWindow> {
        let mut v = Vec::new();
        for c in 0..4 {
            for s in 0..4 {
                v.push(labelled(c, s));
            }
        }
        v
    }

    #[test]
    fn within_subject_split_layout() {
        let base: BTreeSet<_> = [0, 1].into();
        let newsub: BTreeSet<_> = [2, 3].into();
        let split = scenario_split(&grid(), &base, &newsub, ScenarioMode::WithinSubject).unwrap();
        assert!(split.fe_train.iter().all(|w| w.label < 2 && w.subject_id < 2));
        assert_eq!(split.test.len(), 8);
        assert!(split.rm_train_pool.iter().all(|w| split.test.contains(w)));
        assert_eq!(split.new_classes, [2, 3].into());
    }

    #[test]
    fn between_subject_split_is_disjoint_by_subject() {
        let base: BTreeSet<_> = [0, 1].into();
        let newsub: BTreeSet<_> = [3].into();
        let split = scenario_split(&grid(), &base, &newsub, ScenarioMode::BetweenSubject).unwrap();
        let pool: BTreeSet<_> = split.rm_train_pool.iter().map(|w| w.subject_id).collect();
        let test: BTreeSet<_> = split.test.iter().map(|w| w.subject_id).collect();
        assert!(pool.is_disjoint(&test));
    }

    #[test]
    fn degenerate_splits() {
        let all: BTreeSet<_> = [0, 1, 2, 3].into();
        let newsub: BTreeSet<_> = [3].into();
        assert!(matches!(
            scenario_split(&grid(), &all, &newsub, ScenarioMode::WithinSubject),
            Err(Error::DegenerateSplit(_))
        ));
        let only_new: Vec<_> = grid().into_iter().filter(|w| w.subject_id == 3).collect();
        let base: BTreeSet<_> = [0].into();
        assert!(matches!(
            scenario_split(&only_new, &base, &newsub, ScenarioMode::WithinSubject),
            Err(Error::DegenerateSplit(_))
        ));
    }

    proptest! {
        #[test]
        fn window_count_matches_closed_form(t in 1usize..400, w_frac in 0.01f64..1.0, overlap in 0.0f64..0.99) {
            let w = ((t as f64 * w_frac).ceil() as usize).clamp(1, t);
            let r = recording(vec![0.0; t], vec![0; t]);
            let ws = segment_windows(&r, w as f64 / 100.0, overlap).unwrap();
            let stride = window_stride(w, overlap);
            prop_assert_eq!(ws.len(), (t - w) / stride + 1);
            prop_assert!(ws.iter().all(|x| x.len() == w));
        }

        #[test]
        fn interpolation_idempotent_and_preserves_finite(
            raw in proptest::collection::vec(proptest::option::weighted(0.7, -100.0f64..100.0), 1..60)
        ) {
            prop_assume!(raw.iter().any(|v| v.is_some()));
            let values: Vec<f64> = raw.iter().map(|v| v.unwrap_or(f64::NAN)).collect();
            let n = values.len();
            let r = recording(values.clone(), vec![0; n]);
            let once = interpolate_missing(&r).unwrap();
            let twice = interpolate_missing(&once).unwrap();
            prop_assert_eq!(&once, &twice);
            for (i, v) in values.iter().enumerate() {
                prop_assert!(!once.channels[[i, 0]].is_nan());
                if !v.is_nan() {
                    prop_assert_eq!(once.channels[[i, 0]], *v);
                }
            }
        }

        #[test]
        fn normalized_stats(data in proptest::collection::vec(-50.0f64..50.0, 6..120)) {
            let n = data.len() / 3 * 3;
            let w = window(Array2::from_shape_vec((n / 3, 3), data[..n].to_vec()).unwrap());
            let norm = fit_normalizer(std::slice::from_ref(&w)).unwrap();
            prop_assume!(norm.std.iter().all(|&s| s > 1e-3));
            let z = normalize(std::slice::from_ref(&w), &norm).unwrap();
            let again = fit_normalizer(&z).unwrap();
            for c in 0..3 {
                prop_assert!(again.mean[c].abs() <= 1e-6);
                prop_assert!((again.std[c] - 1.0).abs() <= 1e-6);
            }
        }
    }
}
