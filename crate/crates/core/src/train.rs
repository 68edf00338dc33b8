//! The train–prune loop.
//!
//! Each epoch trains the full model with SGD, then re-selects the
//! lowest-norm filters at the current pruning rate and decays them by the
//! current `alpha`. Pruned filters keep receiving gradient updates, so they
//! can recover before the next selection. After the last epoch the pruned
//! filters are zeroed, the model is compacted and optionally fine-tuned.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{hflip, Dataset};
use crate::error::{Error, Result};
use crate::flops::{count_flops, ChannelRounding, PruneScope};
use crate::graph::ModelGraph;
use crate::optim::Sgd;
use crate::prune::{apply_mask, compact, scale_pruned, select_mask, FilterMask, Granularity, PruneConfig};
use crate::schedule::{DecayKind, DecaySchedule, RateRamp};

/// The four pruning methods: hard-zeroing or softly decaying the pruned
/// filters, at a fixed or gradually increasing rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// Zero pruned filters every epoch, fixed rate.
    Sfp,
    /// Zero pruned filters, rate ramps up to the target.
    Asfp,
    /// Decay pruned filters by a schedule, fixed rate.
    Srfp,
    /// Decay pruned filters by a schedule, ramped rate.
    Asrfp,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Sfp => "sfp",
            Method::Asfp => "asfp",
            Method::Srfp => "srfp",
            Method::Asrfp => "asrfp",
        }
    }

    pub fn soft_decay(self) -> bool {
        matches!(self, Method::Srfp | Method::Asrfp)
    }

    pub fn ramped(self) -> bool {
        matches!(self, Method::Asfp | Method::Asrfp)
    }

    /// Whether a (decay, ramp) pair is the one this method prescribes.
    pub fn admits(self, decay: &DecaySchedule, ramp: &RateRamp) -> bool {
        let decay_ok = match decay.kind {
            DecayKind::ConstantZero => !self.soft_decay(),
            DecayKind::Exponential | DecayKind::Linear => self.soft_decay(),
        };
        let ramp_ok = matches!(ramp.kind, crate::schedule::RampKind::ExponentialApproach { .. }) == self.ramped();
        decay_ok && ramp_ok
    }
}

impl core::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sfp" => Ok(Method::Sfp),
            "asfp" => Ok(Method::Asfp),
            "srfp" => Ok(Method::Srfp),
            "asrfp" => Ok(Method::Asrfp),
            other => Err(Error::Input(format!(
                "unknown method {other}; expected sfp, asfp, srfp or asrfp"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Fractions of `epochs` at which the learning rate is multiplied by
    /// `lr_decay`.
    pub milestones: Vec<f64>,
    pub lr_decay: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Scales the base learning rate by 0.1, for starting from a trained model.
    pub pretrained: bool,
    /// Random horizontal flips of training samples.
    pub hflip: bool,
    pub prune: PruneConfig,
    pub decay: DecaySchedule,
    pub ramp: RateRamp,
    pub finetune_epochs: usize,
    /// Decay the momentum of pruned filters together with their weights.
    pub decay_momentum: bool,
}

impl TrainConfig {
    /// Defaults for `method` at pruning rate `rate` over `epochs` epochs:
    /// exponential decay from 1 to 1e-5 for the soft methods, a ramp time
    /// constant of `epochs / 8` for the asymptotic ones.
    pub fn preset(method: Method, epochs: usize, rate: f64) -> Self {
        let decay = if method.soft_decay() {
            DecaySchedule::exponential(1.0, 1e-5, epochs)
        } else {
            DecaySchedule::constant_zero(epochs)
        };
        let ramp = if method.ramped() {
            RateRamp::exponential_approach(rate, RateRamp::default_tau(epochs))
        } else {
            RateRamp::constant(rate)
        };
        TrainConfig {
            epochs,
            batch_size: 32,
            learning_rate: 0.1,
            milestones: alloc::vec![0.5, 0.75],
            lr_decay: 0.1,
            momentum: 0.9,
            weight_decay: 5e-4,
            seed: 0,
            pretrained: false,
            hflip: false,
            prune: PruneConfig::with_rate(rate),
            decay,
            ramp,
            finetune_epochs: 0,
            decay_momentum: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs < 2 {
            return Err(Error::Config(format!("need at least 2 epochs, got {}", self.epochs)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite())
            || self.lr_decay.is_nan()
            || self.lr_decay <= 0.0
        {
            return Err(Error::Config(
                "learning rate and its decay factor must be positive".into(),
            ));
        }
        if self.milestones.iter().any(|m| !(*m > 0.0 && *m < 1.0)) || self.milestones.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!(
                "milestones must be strictly increasing in (0, 1), got {:?}",
                self.milestones
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) || self.weight_decay.is_nan() || self.weight_decay < 0.0 {
            return Err(Error::Config(
                "momentum must be in [0, 1), weight decay non-negative".into(),
            ));
        }
        self.prune.validate()?;
        self.decay.validate()?;
        self.ramp.validate()?;
        if self.decay.t_max != self.epochs {
            return Err(Error::Config(format!(
                "decay schedule spans {} epochs but training runs {}",
                self.decay.t_max, self.epochs
            )));
        }
        if self.ramp.target != self.prune.rate {
            return Err(Error::Config(format!(
                "ramp target {} differs from prune rate {}",
                self.ramp.target, self.prune.rate
            )));
        }
        Ok(())
    }

    /// Learning rate used during `epoch` of the main phase.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let base = if self.pretrained {
            self.learning_rate * 0.1
        } else {
            self.learning_rate
        };
        let passed = self
            .milestones
            .iter()
            .filter(|&&m| epoch >= libm::floor(m * self.epochs as f64) as usize)
            .count();
        base * libm::pow(self.lr_decay, passed as f64)
    }
}

/// Metrics of one train–prune epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochReport {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_accuracy_before_prune: f64,
    pub test_accuracy_after_prune: f64,
    /// `before − after`.
    pub accuracy_drop: f64,
    pub alpha: f64,
    pub prune_rate: f64,
    /// FLOPs of the model the current mask would compact to.
    pub current_flops: u64,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    /// Compacted (filter granularity) or masked (weight granularity) model
    /// after fine-tuning.
    pub model: ModelGraph,
    /// Full-size model after the last epoch with pruned units zeroed, before
    /// compaction and fine-tuning.
    pub masked_model: ModelGraph,
    pub mask: FilterMask,
    pub reports: Vec<EpochReport>,
    pub finetune_losses: Vec<f64>,
    pub final_accuracy: f64,
}

/// Fraction of samples whose arg-max logit equals the label.
pub fn evaluate(model: &ModelGraph, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Input("cannot evaluate on an empty dataset".into()));
    }
    let mut correct = 0usize;
    for i in 0..data.len() {
        if model.predict(&data.sample(i))?.argmax() == data.label(i) {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Runs the full pipeline. See [`run_with_observer`].
pub fn run(model: ModelGraph, train: &Dataset, test: &Dataset, config: &TrainConfig) -> Result<RunOutcome> {
    run_with_observer(model, train, test, config, &mut |_, _| {})
}

/// Runs the full pipeline, calling `observer` after every main-phase epoch
/// with its report and the softly pruned model.
pub fn run_with_observer(
    mut model: ModelGraph,
    train: &Dataset,
    test: &Dataset,
    config: &TrainConfig,
    observer: &mut dyn FnMut(&EpochReport, &ModelGraph),
) -> Result<RunOutcome> {
    config.validate()?;
    if train.is_empty() || test.is_empty() {
        return Err(Error::Input("training and test sets must be non-empty".into()));
    }
    if train.sample_shape() != model.input_shape() || test.sample_shape() != model.input_shape() {
        return Err(Error::dim(
            "dataset samples vs model input",
            format!("{:?}", model.input_shape()),
            format!("{:?}", train.sample_shape()),
        ));
    }
    if model.output_shape() != [train.classes()] {
        return Err(Error::dim(
            "model logits vs dataset classes",
            format!("[{}]", train.classes()),
            format!("{:?}", model.output_shape()),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut sgd = Sgd::new(&model, config.momentum, config.weight_decay)?;
    let mut reports = Vec::with_capacity(config.epochs);
    let mut mask = FilterMask::empty(config.prune.granularity);

    for epoch in 0..config.epochs {
        let alpha = config.decay.alpha_at(epoch)?;
        let rate = config.ramp.rate_at(epoch, config.epochs)?;

        let train_loss = train_epoch(&mut model, &mut sgd, train, config, config.lr_at(epoch), &mut rng, None)?;
        if !train_loss.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        let before = evaluate(&model, test)?;

        let prune = PruneConfig {
            rate,
            ..config.prune.clone()
        };
        mask = select_mask(&model, &prune)?;
        decay_pruned(&mut model, &mut sgd, &mask, alpha, config.decay_momentum)?;

        let after = evaluate(&model, test)?;
        let flops_rate = match config.prune.granularity {
            Granularity::Filter => rate,
            Granularity::Weight => 0.0,
        };
        let current_flops =
            count_flops(&model, flops_rate, PruneScope::ResidualRestores, ChannelRounding::Floor)?.total;
        let report = EpochReport {
            epoch,
            train_loss,
            test_accuracy_before_prune: before,
            test_accuracy_after_prune: after,
            accuracy_drop: before - after,
            alpha,
            prune_rate: rate,
            current_flops,
        };
        observer(&report, &model);
        reports.push(report);
    }

    decay_pruned(&mut model, &mut sgd, &mask, 0.0, config.decay_momentum)?;
    let masked_model = model.clone();
    let (mut model, hold) = match mask.granularity {
        Granularity::Filter => (compact(&model, &mask)?, None),
        Granularity::Weight => (model, Some(&mask)),
    };

    let mut finetune_losses = Vec::with_capacity(config.finetune_epochs);
    if config.finetune_epochs > 0 {
        let lr = config.lr_at(config.epochs - 1);
        let mut sgd = Sgd::new(&model, config.momentum, config.weight_decay)?;
        for k in 0..config.finetune_epochs {
            let loss = train_epoch(&mut model, &mut sgd, train, config, lr, &mut rng, hold)?;
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    epoch: config.epochs + k,
                });
            }
            finetune_losses.push(loss);
        }
    }
    let final_accuracy = evaluate(&model, test)?;
    Ok(RunOutcome {
        model,
        masked_model,
        mask,
        reports,
        finetune_losses,
        final_accuracy,
    })
}

fn decay_pruned(
    model: &mut ModelGraph,
    sgd: &mut Sgd,
    mask: &FilterMask,
    alpha: f64,
    with_momentum: bool,
) -> Result<()> {
    apply_mask(model, mask, alpha)?;
    if with_momentum {
        for (name, keep) in &mask.layers {
            if let Some(v) = sgd.velocity_mut(name) {
                scale_pruned(&mut v.weight, keep, mask.granularity, alpha)?;
            }
        }
    }
    Ok(())
}

/// One pass of minibatch SGD over `data` in a freshly shuffled order.
/// Returns the mean training loss. With `hold`, pruned units are re-zeroed
/// after every step.
fn train_epoch(
    model: &mut ModelGraph,
    sgd: &mut Sgd,
    data: &Dataset,
    config: &TrainConfig,
    lr: f64,
    rng: &mut ChaCha8Rng,
    hold: Option<&FilterMask>,
) -> Result<f64> {
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(rng);
    let mut total = 0.0;
    for batch in order.chunks(config.batch_size) {
        let samples: Vec<_> = batch
            .iter()
            .map(|&i| {
                let x = data.sample(i);
                let x = if config.hflip && rng.random_bool(0.5) {
                    hflip(&x)
                } else {
                    x
                };
                (x, data.label(i))
            })
            .collect();
        let (loss, grads) = model.loss_and_gradients(samples.iter().map(|(x, l)| (x, *l)))?;
        sgd.step(model, &grads, lr)?;
        if let Some(mask) = hold {
            decay_pruned(model, sgd, mask, 0.0, true)?;
        }
        total += loss * batch.len() as f64;
    }
    Ok(total / data.len() as f64)
}
