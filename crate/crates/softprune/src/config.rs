//! Experiment configuration files.
//!
//! A TOML file with the sections below. Every key is optional except
//! `experiment.method`; unknown sections or keys are rejected, all of them
//! listed in one error.
//!
//! ```toml
//! [experiment]
//! method = "srfp"            # sfp | asfp | srfp | asrfp
//! seed = 0                   # shuffling and flips
//! out = "runs/srfp"
//! checkpoint_every = 0       # write a checkpoint every n epochs; 0 = never
//!
//! [data]
//! source = "synthetic"       # synthetic | idx | csv
//! classes = 10
//! per_class = 200            # synthetic only
//! channels = 1
//! height = 8
//! width = 8
//! noise_sigma = 0.3          # synthetic only
//! seed = 0                   # synthetic only
//! standardize = false        # per-channel statistics of the training set
//! train_images = "train-images.idx"   # idx only, likewise the next three
//! train_labels = "train-labels.idx"
//! test_images = "test-images.idx"
//! test_labels = "test-labels.idx"
//! train_csv = "train.csv"    # csv only, likewise test_csv
//! test_csv = "test.csv"
//! pixel_scale = 1.0          # csv only: divisor that maps pixels into [0, 1]
//!
//! [model]
//! arch = "toy"               # toy | resnet20 | resnet56 | resnet110
//! width = 8                  # toy only
//! init_seed = 0
//!
//! [train]
//! epochs = 30
//! batch_size = 32
//! learning_rate = 0.1
//! milestones = [0.5, 0.75]
//! lr_decay = 0.1
//! momentum = 0.9
//! weight_decay = 5e-4
//! pretrained = false
//! hflip = false
//! finetune_epochs = 0
//! decay_momentum = true
//!
//! [prune]
//! rate = 0.5
//! granularity = "filter"     # filter | weight
//! norm = "l2"                # l2 | l1
//! layers = []                # empty: every prunable conv layer
//!
//! [schedule]
//! decay = "exponential"      # exponential | linear | constant-zero
//! alpha0 = 1.0
//! epsilon = 1e-5
//! zero_floor = 1e-12
//! ramp = "constant"          # constant | exponential-approach
//! tau = 3.75                 # default: epochs / 8
//! ```
//!
//! The method fixes the kinds of decay and ramp: `sfp` is constant-zero
//! with a constant rate, `asfp` constant-zero with the exponential
//! approach, `srfp` exponential or linear decay with a constant rate and
//! `asrfp` exponential or linear decay with the exponential approach.
//! Omitted kinds follow the method.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use softprune_core::arch::{make_resnet_cifar, make_toy_cnn};
use softprune_core::data::{synth_blobs, BlobSpec, Dataset, Split};
use softprune_core::prune::{Granularity, LayerScope, Norm};
use softprune_core::schedule::{DecayKind, DecaySchedule, RampKind, RateRamp};
use softprune_core::train::{Method, TrainConfig};
use softprune_core::ModelGraph;

use crate::dataset;
use crate::error::{Error, Result};

const KEYS: &[(&str, &[&str])] = &[
    ("experiment", &["method", "seed", "out", "checkpoint_every"]),
    (
        "data",
        &[
            "source",
            "classes",
            "per_class",
            "channels",
            "height",
            "width",
            "noise_sigma",
            "seed",
            "standardize",
            "train_images",
            "train_labels",
            "test_images",
            "test_labels",
            "train_csv",
            "test_csv",
            "pixel_scale",
        ],
    ),
    ("model", &["arch", "width", "init_seed"]),
    (
        "train",
        &[
            "epochs",
            "batch_size",
            "learning_rate",
            "milestones",
            "lr_decay",
            "momentum",
            "weight_decay",
            "pretrained",
            "hflip",
            "finetune_epochs",
            "decay_momentum",
        ],
    ),
    ("prune", &["rate", "granularity", "norm", "layers"]),
    ("schedule", &["decay", "alpha0", "epsilon", "zero_floor", "ramp", "tau"]),
];

#[derive(Debug, Clone, Default, Deserialize, PartialEq)]
#[serde(default)]
pub struct ExperimentSection {
    pub method: Option<String>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub checkpoint_every: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize, PartialEq)]
#[serde(default)]
pub struct DataSection {
    pub source: Option<String>,
    pub classes: Option<usize>,
    pub per_class: Option<usize>,
    pub channels: Option<usize>,
    pub height: Option<usize>,
    pub width: Option<usize>,
    pub noise_sigma: Option<f64>,
    pub seed: Option<u64>,
    pub standardize: Option<bool>,
    pub train_images: Option<PathBuf>,
    pub train_labels: Option<PathBuf>,
    pub test_images: Option<PathBuf>,
    pub test_labels: Option<PathBuf>,
    pub train_csv: Option<PathBuf>,
    pub test_csv: Option<PathBuf>,
    pub pixel_scale: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize, PartialEq)]
#[serde(default)]
pub struct ModelSection {
    pub arch: Option<String>,
    pub width: Option<usize>,
    pub init_seed: Option<u64>,
}

#[derive(Debug, Clone, Default, Deserialize, PartialEq)]
#[serde(default)]
pub struct TrainSection {
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub milestones: Option<Vec<f64>>,
    pub lr_decay: Option<f64>,
    pub momentum: Option<f64>,
    pub weight_decay: Option<f64>,
    pub pretrained: Option<bool>,
    pub hflip: Option<bool>,
    pub finetune_epochs: Option<usize>,
    pub decay_momentum: Option<bool>,
}

#[derive(Debug, Clone, Default, Deserialize, PartialEq)]
#[serde(default)]
pub struct PruneSection {
    pub rate: Option<f64>,
    pub granularity: Option<String>,
    pub norm: Option<String>,
    pub layers: Option<Vec<String>>,
}

#[derive(Debug, Clone, Default, Deserialize, PartialEq)]
#[serde(default)]
pub struct ScheduleSection {
    pub decay: Option<String>,
    pub alpha0: Option<f64>,
    pub epsilon: Option<f64>,
    pub zero_floor: Option<f64>,
    pub ramp: Option<String>,
    pub tau: Option<f64>,
}

/// A parsed experiment file. Relative data paths resolve against `base_dir`.
#[derive(Debug, Clone, Default, Deserialize, PartialEq)]
#[serde(default)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub data: DataSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub prune: PruneSection,
    pub schedule: ScheduleSection,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

/// Architectures available by name.
pub const ARCHS: &[&str] = &["toy", "resnet20", "resnet56", "resnet110"];

/// Builds a named architecture with zero parameters. The toy network takes
/// its input shape and class count from the data.
pub fn build_arch(arch: &str, input: [usize; 3], width: usize, classes: usize) -> Result<ModelGraph> {
    Ok(match arch {
        "toy" => make_toy_cnn(input, width, classes)?,
        "resnet20" => make_resnet_cifar(20)?,
        "resnet56" => make_resnet_cifar(56)?,
        "resnet110" => make_resnet_cifar(110)?,
        other => {
            return Err(softprune_core::Error::Input(format!(
                "unknown architecture {other}; expected one of {}",
                ARCHS.join(", ")
            ))
            .into())
        }
    })
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::parse(&text)?;
        config.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(config)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let mut unknown = Vec::new();
        for (section, value) in &table {
            match KEYS.iter().find(|(s, _)| s == section) {
                None => unknown.push(format!("[{section}]")),
                Some((_, keys)) => match value.as_table() {
                    Some(t) => unknown.extend(
                        t.keys()
                            .filter(|k| !keys.contains(&k.as_str()))
                            .map(|k| format!("{section}.{k}")),
                    ),
                    None => unknown.push(format!("{section} (expected a section)")),
                },
            }
        }
        if !unknown.is_empty() {
            return Err(Error::Config(format!("unknown keys: {}", unknown.join(", "))));
        }
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.method()?;
        Ok(config)
    }

    pub fn method(&self) -> Result<Method> {
        let name = self
            .experiment
            .method
            .as_deref()
            .ok_or_else(|| Error::Config("experiment.method is required (sfp, asfp, srfp or asrfp)".into()))?;
        name.parse()
            .map_err(|e: softprune_core::Error| Error::Config(format!("experiment.method: {e}")))
    }

    pub fn seed(&self) -> u64 {
        self.experiment.seed.unwrap_or(0)
    }

    pub fn out_dir(&self) -> PathBuf {
        self.experiment.out.clone().unwrap_or_else(|| PathBuf::from("runs"))
    }

    pub fn arch(&self) -> &str {
        self.model.arch.as_deref().unwrap_or("toy")
    }

    /// The full training configuration, after checking that the schedule
    /// kinds match the method.
    pub fn train_config(&self) -> Result<TrainConfig> {
        let method = self.method()?;
        let t = &self.train;
        let epochs = t.epochs.unwrap_or(30);
        let rate = self.prune.rate.unwrap_or(0.5);
        let mut c = TrainConfig::preset(method, epochs, rate);
        c.seed = self.seed();
        if let Some(v) = t.batch_size {
            c.batch_size = v;
        }
        if let Some(v) = t.learning_rate {
            c.learning_rate = v;
        }
        if let Some(v) = &t.milestones {
            c.milestones = v.clone();
        }
        if let Some(v) = t.lr_decay {
            c.lr_decay = v;
        }
        if let Some(v) = t.momentum {
            c.momentum = v;
        }
        if let Some(v) = t.weight_decay {
            c.weight_decay = v;
        }
        if let Some(v) = t.pretrained {
            c.pretrained = v;
        }
        if let Some(v) = t.hflip {
            c.hflip = v;
        }
        if let Some(v) = t.finetune_epochs {
            c.finetune_epochs = v;
        }
        if let Some(v) = t.decay_momentum {
            c.decay_momentum = v;
        }

        let p = &self.prune;
        c.prune.granularity = match p.granularity.as_deref().unwrap_or("filter") {
            "filter" => Granularity::Filter,
            "weight" => Granularity::Weight,
            other => {
                return Err(Error::Config(format!(
                    "prune.granularity: expected filter or weight, got {other:?}"
                )))
            }
        };
        c.prune.norm = match p.norm.as_deref().unwrap_or("l2") {
            "l2" => Norm::L2,
            "l1" => Norm::L1,
            other => return Err(Error::Config(format!("prune.norm: expected l2 or l1, got {other:?}"))),
        };
        c.prune.scope = match &p.layers {
            Some(names) if !names.is_empty() => LayerScope::Named(names.clone()),
            _ => LayerScope::AllConv,
        };

        let s = &self.schedule;
        if let Some(kind) = s.decay.as_deref() {
            let kind = match kind {
                "exponential" => DecayKind::Exponential,
                "linear" => DecayKind::Linear,
                "constant-zero" => DecayKind::ConstantZero,
                other => {
                    return Err(Error::Config(format!(
                        "schedule.decay: expected exponential, linear or constant-zero, got {other:?}"
                    )))
                }
            };
            c.decay = match kind {
                DecayKind::Exponential => DecaySchedule::exponential(1.0, 1e-5, epochs),
                DecayKind::Linear => DecaySchedule::linear(1.0, epochs),
                DecayKind::ConstantZero => DecaySchedule::constant_zero(epochs),
            };
        }
        if let Some(v) = s.alpha0 {
            c.decay.alpha0 = v;
        }
        if let Some(v) = s.epsilon {
            c.decay.epsilon = v;
        }
        if let Some(v) = s.zero_floor {
            c.decay.zero_floor = v;
        }
        if let Some(kind) = s.ramp.as_deref() {
            c.ramp.kind = match kind {
                "constant" => RampKind::Constant,
                "exponential-approach" => RampKind::ExponentialApproach {
                    tau: RateRamp::default_tau(epochs),
                },
                other => {
                    return Err(Error::Config(format!(
                        "schedule.ramp: expected constant or exponential-approach, got {other:?}"
                    )))
                }
            };
        }
        if let Some(tau) = s.tau {
            match &mut c.ramp.kind {
                RampKind::ExponentialApproach { tau: t } => *t = tau,
                RampKind::Constant => {
                    return Err(Error::Config(
                        "schedule.tau only applies to the exponential-approach ramp".into(),
                    ))
                }
            }
        }
        if !method.admits(&c.decay, &c.ramp) {
            return Err(Error::Config(format!(
                "method {} does not allow schedule.decay = {:?} with schedule.ramp = {:?}",
                method.name(),
                c.decay.kind,
                c.ramp.kind
            )));
        }
        c.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(c)
    }

    fn data_path(&self, key: &str, value: &Option<PathBuf>, source: &str) -> Result<PathBuf> {
        let p = value
            .as_ref()
            .ok_or_else(|| Error::Config(format!("data.{key} is required when data.source = {source:?}")))?;
        Ok(self.base_dir.join(p))
    }

    /// Loads or synthesizes the train and test sets. With `standardize`,
    /// both are rescaled by the training set's channel statistics.
    pub fn datasets(&self) -> Result<(Dataset, Dataset)> {
        let d = &self.data;
        let source = d.source.as_deref().unwrap_or("synthetic");
        let classes = d.classes.unwrap_or(10);
        let shape = [d.channels.unwrap_or(1), d.height.unwrap_or(8), d.width.unwrap_or(8)];
        let keyed = |key: &str, r: Result<Dataset>| r.map_err(|e| Error::Config(format!("data.{key}: {e}")));
        let (mut train, mut test) = match source {
            "synthetic" => synth_blobs(&BlobSpec {
                classes,
                per_class: d.per_class.unwrap_or(200),
                channels: shape[0],
                height: shape[1],
                width: shape[2],
                noise_sigma: d.noise_sigma.unwrap_or(0.3),
                seed: d.seed.unwrap_or(0),
            })?,
            "idx" => {
                let ti = self.data_path("train_images", &d.train_images, source)?;
                let tl = self.data_path("train_labels", &d.train_labels, source)?;
                let vi = self.data_path("test_images", &d.test_images, source)?;
                let vl = self.data_path("test_labels", &d.test_labels, source)?;
                (
                    keyed("train_images", dataset::load_idx(&ti, &tl, d.classes, Split::Train))?,
                    keyed("test_images", dataset::load_idx(&vi, &vl, d.classes, Split::Test))?,
                )
            }
            "csv" => {
                let tr = self.data_path("train_csv", &d.train_csv, source)?;
                let te = self.data_path("test_csv", &d.test_csv, source)?;
                let scale = d.pixel_scale.unwrap_or(1.0);
                (
                    keyed("train_csv", dataset::load_csv(&tr, shape, classes, scale, Split::Train))?,
                    keyed("test_csv", dataset::load_csv(&te, shape, classes, scale, Split::Test))?,
                )
            }
            other => {
                return Err(Error::Config(format!(
                    "data.source: expected synthetic, idx or csv, got {other:?}"
                )))
            }
        };
        if train.classes() != test.classes() {
            let classes = train.classes().max(test.classes());
            train = Dataset::new(
                train.sample_shape().to_vec(),
                train.pixels().to_vec(),
                train.labels().to_vec(),
                classes,
                Split::Train,
            )?;
            test = Dataset::new(
                test.sample_shape().to_vec(),
                test.pixels().to_vec(),
                test.labels().to_vec(),
                classes,
                Split::Test,
            )?;
        }
        if d.standardize.unwrap_or(false) {
            let stats = train.standardize();
            test.apply_standardization(&stats);
        }
        Ok((train, test))
    }

    /// The configured architecture, sized for `data` and He-initialized.
    pub fn model_for(&self, data: &Dataset) -> Result<ModelGraph> {
        let s = data.sample_shape();
        let mut model = build_arch(
            self.arch(),
            [s[0], s[1], s[2]],
            self.model.width.unwrap_or(8),
            data.classes(),
        )?;
        model.init_he(self.model.init_seed.unwrap_or(0));
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lists_every_unknown_key() {
        let err = ExperimentConfig::parse("[experiment]\nmethod='sfp'\nbogus=1\n[train]\nepoch=3\n[extra]\nx=1\n")
            .unwrap_err()
            .to_string();
        for key in ["experiment.bogus", "train.epoch", "[extra]"] {
            assert!(err.contains(key), "{err}");
        }
    }

    #[test]
    fn method_is_required_and_checked() {
        assert!(ExperimentConfig::parse("[train]\nepochs=3\n")
            .unwrap_err()
            .to_string()
            .contains("experiment.method"));
        assert!(ExperimentConfig::parse("[experiment]\nmethod='hfp'\n").is_err());
    }

    #[test]
    fn presets_fix_schedule_kinds() {
        let c = ExperimentConfig::parse("[experiment]\nmethod='srfp'\n[schedule]\ndecay='constant-zero'\n").unwrap();
        assert!(c.train_config().unwrap_err().to_string().contains("srfp"));
        let c = ExperimentConfig::parse("[experiment]\nmethod='asrfp'\n[schedule]\ndecay='linear'\ntau=2.0\n").unwrap();
        let t = c.train_config().unwrap();
        assert_eq!(t.decay.kind, DecayKind::Linear);
        assert_eq!(t.ramp.kind, RampKind::ExponentialApproach { tau: 2.0 });
        let c =
            ExperimentConfig::parse("[experiment]\nmethod='sfp'\n[schedule]\nramp='exponential-approach'\n").unwrap();
        assert!(c.train_config().is_err());
    }

    #[test]
    fn missing_dataset_path_names_the_key() {
        let c =
            ExperimentConfig::parse("[experiment]\nmethod='sfp'\n[data]\nsource='idx'\ntrain_images='a'\n").unwrap();
        let err = c.datasets().unwrap_err().to_string();
        assert!(err.contains("data.train_labels"), "{err}");
    }

    #[test]
    fn wrong_value_type_is_reported() {
        assert!(ExperimentConfig::parse("[experiment]\nmethod='sfp'\n[train]\nepochs='ten'\n").is_err());
    }
}
