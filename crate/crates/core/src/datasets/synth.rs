use super::RawRecording;
use crate::{derive_seed, seeded_rng, ClassId, Error, Result, SubjectId};
use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

const HARMONICS: usize = 3;
/// Gap between consecutive activity recordings of one subject, seconds.
const SESSION_GAP_S: f64 = 10.0;

/// Parameters of the desk-scale synthetic activity generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_classes: usize,
    pub n_subjects: usize,
    pub n_channels: usize,
    /// Samples per (subject, class) recording.
    pub samples_per_class: usize,
    pub sample_rate_hz: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_classes: 8,
            n_subjects: 4,
            n_channels: 3,
            samples_per_class: 2500,
            sample_rate_hz: 50.0,
            noise_sigma: 0.4,
            seed: 7,
        }
    }
}

struct ClassWaveform {
    base_hz: f64,
    /// `[channel][harmonic]`
    amplitude: Vec<[f64; HARMONICS]>,
    phase: Vec<[f64; HARMONICS]>,
    offset: Vec<f64>,
}

impl SynthSpec {
    fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(Error::InvalidSpec("n_classes must be at least 2".into()));
        }
        if self.n_subjects == 0 || self.n_channels == 0 || self.samples_per_class == 0 {
            return Err(Error::InvalidSpec("subjects, channels and samples must be positive".into()));
        }
        if !(self.sample_rate_hz > 0.0) || !(self.noise_sigma >= 0.0) {
            return Err(Error::InvalidSpec("sample rate must be positive, noise non-negative".into()));
        }
        Ok(())
    }

    fn waveform(&self, class: ClassId) -> ClassWaveform {
        let mut rng = seeded_rng(derive_seed(self.seed, 0x1000 + class as u64));
        let base_hz = 0.5 + 0.4 * class as f64 + rng.random_range(-0.1..0.1);
        let mut amplitude = Vec::with_capacity(self.n_channels);
        let mut phase = Vec::with_capacity(self.n_channels);
        let mut offset = Vec::with_capacity(self.n_channels);
        for _ in 0..self.n_channels {
            let mut a = [0.0; HARMONICS];
            let mut p = [0.0; HARMONICS];
            for h in 0..HARMONICS {
                a[h] = rng.random_range(0.2..1.0) / (h as f64 + 1.0);
                p[h] = rng.random_range(0.0..TAU);
            }
            amplitude.push(a);
            phase.push(p);
            offset.push(rng.random_range(-0.8..0.8));
        }
        ClassWaveform { base_hz, amplitude, phase, offset }
    }

    /// Fundamental period, in samples, of a class as performed by a subject.
    pub fn period_samples(&self, class: ClassId, subject: SubjectId) -> usize {
        let centre = (self.n_subjects as f64 - 1.0) / 2.0;
        let style = 1.0 + 0.04 * (subject as f64 - centre);
        let hz = self.waveform(class).base_hz * style;
        ((self.sample_rate_hz / hz).round() as usize).max(2)
    }
}

/// Generates one recording per (subject, class).
///
/// Each class is a harmonic mix with its own fundamental, phases and channel
/// offsets; each subject performs it at a slightly shifted tempo. Recordings
/// of one subject are laid out back to back on that subject's clock.
pub fn synth_generate(spec: &SynthSpec) -> Result<Vec<RawRecording>> {
    spec.validate()?;
    let noise = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::InvalidSpec(e.to_string()))?;
    let duration = spec.samples_per_class as f64 / spec.sample_rate_hz;
    let mut out = Vec::with_capacity(spec.n_classes * spec.n_subjects);
    for subject in 0..spec.n_subjects as SubjectId {
        for class in 0..spec.n_classes as ClassId {
            let wave = spec.waveform(class);
            let period = spec.period_samples(class, subject) as f64;
            let gain = 1.0 + 0.05 * (subject as f64 - (spec.n_subjects as f64 - 1.0) / 2.0);
            let mut rng = seeded_rng(derive_seed(
                spec.seed,
                0x2000 + (subject as u64) * 4096 + class as u64,
            ));
            let n = spec.samples_per_class;
            let mut data = Array2::zeros((n, spec.n_channels));
            for i in 0..n {
                let cycle = TAU * (i as f64) / period;
                for c in 0..spec.n_channels {
                    let mut v = wave.offset[c];
                    for h in 0..HARMONICS {
                        v += gain
                            * wave.amplitude[c][h]
                            * ((h as f64 + 1.0) * cycle + wave.phase[c][h]).sin();
                    }
                    data[[i, c]] = v;
                }
            }
            if spec.noise_sigma > 0.0 {
                data.mapv_inplace(|v| v + noise.sample(&mut rng));
            }
            let start = class as f64 * (duration + SESSION_GAP_S);
            let timestamps = (0..n).map(|i| start + i as f64 / spec.sample_rate_hz).collect();
            out.push(RawRecording::new(
                subject,
                spec.sample_rate_hz,
                data,
                vec![class; n],
                timestamps,
            )?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn small() -> SynthSpec {
        SynthSpec { samples_per_class: 300, ..SynthSpec::default() }
    }

    #[test]
    fn deterministic() {
        assert_eq!(synth_generate(&small()).unwrap(), synth_generate(&small()).unwrap());
    }

    #[test]
    fn counts_and_labels() {
        let spec = SynthSpec { n_subjects: 2, ..small() };
        let recs = synth_generate(&spec).unwrap();
        assert_eq!(recs.len(), 16);
        let labels: BTreeSet<_> = recs.iter().flat_map(|r| r.labels.iter().copied()).collect();
        assert_eq!(labels, (0..8).collect());
    }

    #[test]
    fn noiseless_windows_repeat_each_period() {
        let spec = SynthSpec { noise_sigma: 0.0, ..small() };
        let recs = synth_generate(&spec).unwrap();
        let rec = &recs[3];
        let p = spec.period_samples(rec.labels[0], rec.subject_id);
        let w = 40;
        for i in 0..w {
            for c in 0..spec.n_channels {
                let a = rec.channels[[10 + i, c]];
                let b = rec.channels[[10 + p + i, c]];
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn rejects_single_class() {
        let spec = SynthSpec { n_classes: 1, ..small() };
        assert!(matches!(synth_generate(&spec), Err(Error::InvalidSpec(_))));
    }
}
