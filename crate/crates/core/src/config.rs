//! Flat run configuration shared by every command.
//!
//! Every key has a default; keys left unset that depend on the dataset
//! (window length, overlap, replay size, base classes, new subjects) are
//! filled in by [`RunConfig::resolved`].

use crate::augment::{AugmentationConfig, SmoteConfig, SmoteTarget};
use crate::datasets::{ScenarioMode, SynthSpec, PAMAP2_DEFAULT_CLASSES};
use crate::fe::FeConfig;
use crate::relation::{ClassifierKind, RmConfig};
use crate::streaming::StreamConfig;
use crate::{derive_seed, ClassId, Error, Result, SubjectId};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Pamap2,
    Hapt,
    Dsads,
    #[default]
    Synthetic,
    /// A directory of CSV recordings in the interchange format.
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetKind,
    pub data_dir: Option<PathBuf>,
    pub scenario: ScenarioMode,
    /// Empty means the dataset default.
    pub base_classes: Vec<ClassId>,
    /// Empty means the dataset default.
    pub new_subjects: Vec<SubjectId>,
    pub window_seconds: Option<f64>,
    pub overlap: Option<f64>,
    /// PAMAP2 activity ids to keep; empty means the built-in list.
    pub pamap2_classes: Vec<ClassId>,
    /// Sample rate for CSV recordings without a time column.
    pub csv_sample_rate_hz: Option<f64>,

    pub synth_classes: usize,
    pub synth_subjects: usize,
    pub synth_channels: usize,
    pub synth_samples_per_class: usize,
    pub synth_sample_rate_hz: f64,
    pub synth_noise_sigma: f64,

    pub embedding_dim: usize,
    pub conv_channels: Vec<usize>,
    pub kernel_sizes: Vec<usize>,
    pub lstm_hidden: usize,
    pub tau: f64,
    pub fe_lr: f64,
    pub fe_batch_size: usize,
    pub fe_epochs: usize,
    pub supcon_normalize: bool,
    pub use_contrastive: bool,

    pub sigma_jitter: f64,
    pub sigma_scale: f64,
    pub sigma_mwarp: f64,
    pub sigma_twarp: f64,
    pub n_knots: usize,

    pub smote_k: usize,
    pub smote_target: SmoteTarget,

    /// Replay capacity per class; unset means 15 for HAPT and 20 otherwise.
    pub replay_size: Option<usize>,
    pub support_per_class: usize,
    pub lambda_l2: f64,
    pub rm_lr: f64,
    pub rm_batch_size: usize,
    pub rm_epochs: usize,
    pub rm_conv_filters: usize,
    pub rm_kernel: usize,
    pub rm_hidden: usize,
    pub warm_start: bool,
    pub classifier: ClassifierKind,

    pub stream_batch_size: usize,
    pub base_label_fraction: f64,
    pub new_class_budget: usize,
    pub intro_labeled: usize,

    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let fe = FeConfig::default();
        let rm = RmConfig::default();
        let aug = AugmentationConfig::default();
        let smote = SmoteConfig::default();
        let synth = SynthSpec::default();
        let stream = StreamConfig::default();
        Self {
            dataset: DatasetKind::Synthetic,
            data_dir: None,
            scenario: ScenarioMode::WithinSubject,
            base_classes: Vec::new(),
            new_subjects: Vec::new(),
            window_seconds: None,
            overlap: None,
            pamap2_classes: Vec::new(),
            csv_sample_rate_hz: None,
            synth_classes: synth.n_classes,
            synth_subjects: synth.n_subjects,
            synth_channels: synth.n_channels,
            synth_samples_per_class: synth.samples_per_class,
            synth_sample_rate_hz: synth.sample_rate_hz,
            synth_noise_sigma: synth.noise_sigma,
            embedding_dim: fe.embedding_dim,
            conv_channels: fe.conv_channels,
            kernel_sizes: fe.kernel_sizes,
            lstm_hidden: fe.lstm_hidden,
            tau: fe.tau,
            fe_lr: fe.lr,
            fe_batch_size: fe.batch_size,
            fe_epochs: fe.epochs,
            supcon_normalize: fe.supcon_normalize,
            use_contrastive: fe.use_contrastive,
            sigma_jitter: aug.sigma_jitter,
            sigma_scale: aug.sigma_scale,
            sigma_mwarp: aug.sigma_mwarp,
            sigma_twarp: aug.sigma_twarp,
            n_knots: aug.n_knots,
            smote_k: smote.k_neighbors,
            smote_target: smote.target_per_class,
            replay_size: None,
            support_per_class: rm.support_per_class,
            lambda_l2: rm.lambda_l2,
            rm_lr: rm.lr,
            rm_batch_size: rm.batch_size,
            rm_epochs: rm.epochs,
            rm_conv_filters: rm.conv_filters,
            rm_kernel: rm.kernel,
            rm_hidden: rm.hidden,
            warm_start: rm.warm_start,
            classifier: ClassifierKind::Relation,
            stream_batch_size: stream.batch_size,
            base_label_fraction: stream.base_label_fraction,
            new_class_budget: stream.new_class_budget,
            intro_labeled: stream.intro_labeled,
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Fills dataset-dependent defaults and checks the result.
    pub fn resolved(&self) -> Result<Self> {
        let mut c = self.clone();
        let (win, overlap) = match c.dataset {
            DatasetKind::Pamap2 => (5.12, 0.78),
            DatasetKind::Dsads => (5.0, 0.0),
            DatasetKind::Hapt | DatasetKind::Synthetic | DatasetKind::Csv => (2.56, 0.5),
        };
        c.window_seconds.get_or_insert(win);
        c.overlap.get_or_insert(overlap);
        c.replay_size.get_or_insert(if c.dataset == DatasetKind::Hapt { 15 } else { 20 });
        if c.dataset == DatasetKind::Pamap2 && c.pamap2_classes.is_empty() {
            c.pamap2_classes = PAMAP2_DEFAULT_CLASSES.to_vec();
        }
        if c.base_classes.is_empty() {
            c.base_classes = match c.dataset {
                DatasetKind::Pamap2 => c.pamap2_classes[..7].to_vec(),
                DatasetKind::Hapt => (1..=7).collect(),
                DatasetKind::Dsads => (1..=10).collect(),
                DatasetKind::Synthetic => (0..(c.synth_classes as ClassId * 5 / 8).max(1)).collect(),
                DatasetKind::Csv => {
                    return Err(Error::InvalidConfig("base_classes must be set for csv datasets".into()))
                }
            };
        }
        if c.new_subjects.is_empty() {
            c.new_subjects = match c.dataset {
                DatasetKind::Pamap2 => vec![5, 6],
                DatasetKind::Hapt => vec![29, 30],
                DatasetKind::Dsads => vec![7, 8],
                DatasetKind::Synthetic => {
                    let n = c.synth_subjects as SubjectId;
                    ((n / 2).max(1)..n).collect()
                }
                DatasetKind::Csv => {
                    return Err(Error::InvalidConfig("new_subjects must be set for csv datasets".into()))
                }
            };
        }
        if c.dataset != DatasetKind::Synthetic && c.data_dir.is_none() {
            return Err(Error::InvalidConfig(format!("{:?} needs data_dir", c.dataset).to_lowercase()));
        }
        let overlap = c.overlap.expect("filled");
        if !(0.0..1.0).contains(&overlap) {
            return Err(Error::InvalidConfig(format!("overlap {overlap} must be in [0, 1)")));
        }
        if !(c.window_seconds.expect("filled") > 0.0) {
            return Err(Error::InvalidConfig("window_seconds must be positive".into()));
        }
        if c.support_per_class >= c.replay_size.expect("filled") {
            return Err(Error::InvalidConfig(format!(
                "support_per_class {} must be below the replay size {}",
                c.support_per_class,
                c.replay_size.unwrap()
            )));
        }
        c.augmentation().validate()?;
        c.rm_config().validate()?;
        c.stream_config().validate()?;
        Ok(c)
    }

    pub fn synth_spec(&self) -> SynthSpec {
        SynthSpec {
            n_classes: self.synth_classes,
            n_subjects: self.synth_subjects,
            n_channels: self.synth_channels,
            samples_per_class: self.synth_samples_per_class,
            sample_rate_hz: self.synth_sample_rate_hz,
            noise_sigma: self.synth_noise_sigma,
            seed: derive_seed(self.seed, 1),
        }
    }

    /// Extractor config for the given input shape and base-class count.
    pub fn fe_config(&self, input_channels: usize, window_len: usize, n_classes_base: usize) -> FeConfig {
        FeConfig {
            input_channels,
            window_len,
            embedding_dim: self.embedding_dim,
            conv_channels: self.conv_channels.clone(),
            kernel_sizes: self.kernel_sizes.clone(),
            lstm_hidden: self.lstm_hidden,
            n_classes_base,
            tau: self.tau,
            lr: self.fe_lr,
            batch_size: self.fe_batch_size,
            epochs: self.fe_epochs,
            seed: derive_seed(self.seed, 2),
            supcon_normalize: self.supcon_normalize,
            use_contrastive: self.use_contrastive,
        }
    }

    pub fn augmentation(&self) -> AugmentationConfig {
        AugmentationConfig {
            sigma_jitter: self.sigma_jitter,
            sigma_scale: self.sigma_scale,
            sigma_mwarp: self.sigma_mwarp,
            sigma_twarp: self.sigma_twarp,
            n_knots: self.n_knots,
            seed: derive_seed(self.seed, 3),
        }
    }

    pub fn smote(&self) -> SmoteConfig {
        SmoteConfig { k_neighbors: self.smote_k, target_per_class: self.smote_target, seed: derive_seed(self.seed, 4) }
    }

    pub fn rm_config(&self) -> RmConfig {
        RmConfig {
            embedding_dim: self.embedding_dim,
            support_per_class: self.support_per_class,
            lambda_l2: self.lambda_l2,
            lr: self.rm_lr,
            batch_size: self.rm_batch_size,
            epochs: self.rm_epochs,
            seed: derive_seed(self.seed, 5),
            conv_filters: self.rm_conv_filters,
            kernel: self.rm_kernel,
            hidden: self.rm_hidden,
            warm_start: self.warm_start,
        }
    }

    pub fn stream_config(&self) -> StreamConfig {
        StreamConfig {
            batch_size: self.stream_batch_size,
            base_label_fraction: self.base_label_fraction,
            new_class_budget: self.new_class_budget,
            intro_labeled: self.intro_labeled,
            seed: derive_seed(self.seed, 6),
        }
    }

    /// Seed for the initial replay selection.
    pub fn replay_seed(&self) -> u64 {
        derive_seed(self.seed, 7)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_defaults() {
        let c = RunConfig::from_toml_str("").unwrap();
        assert_eq!(c, RunConfig::default());
        let r = c.resolved().unwrap();
        assert_eq!(r.replay_size, Some(20));
        assert_eq!(r.base_classes, vec![0, 1, 2, 3, 4]);
        assert_eq!(r.new_subjects, vec![2, 3]);
        assert_eq!(r.window_seconds, Some(2.56));
        assert_eq!((r.rm_batch_size, r.rm_epochs, r.support_per_class, r.embedding_dim), (50, 50, 5, 128));
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(RunConfig::from_toml_str("bogus = 1"), Err(Error::Parse(_))));
    }

    #[test]
    fn echo_round_trip() {
        let c = RunConfig::from_toml_str("dataset = \"hapt\"\ndata_dir = \"/tmp/x\"\nclassifier = \"mlp3\"\nsmote_target = 40")
            .unwrap()
            .resolved()
            .unwrap();
        assert_eq!(c.replay_size, Some(15));
        let back = RunConfig::from_toml_str(&c.to_toml_string()).unwrap();
        assert_eq!(back, c);
        let json: RunConfig = serde_json::from_value(serde_json::to_value(&c).unwrap()).unwrap();
        assert_eq!(json, c);
    }

    #[test]
    fn real_datasets_need_a_path() {
        let c = RunConfig { dataset: DatasetKind::Pamap2, ..RunConfig::default() };
        assert!(matches!(c.resolved(), Err(Error::InvalidConfig(_))));
    }
}
