//! The subcommands. Each returns the text it prints.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use softprune_core::flops::{count_flops, ChannelRounding, PruneScope};
use softprune_core::prune::{apply_mask, compact, Granularity};
use softprune_core::train::{evaluate, run_with_observer};

use crate::config::{build_arch, ExperimentConfig};
use crate::error::{Error, Result};
use crate::{checkpoint, maskfile, report};

/// Command-line values that replace config entries.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub arch: Option<String>,
    pub rate: Option<f64>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

impl Overrides {
    pub fn apply(&self, config: &mut ExperimentConfig) {
        if let Some(a) = &self.arch {
            config.model.arch = Some(a.clone());
        }
        if let Some(r) = self.rate {
            config.prune.rate = Some(r);
        }
        if let Some(s) = self.seed {
            config.experiment.seed = Some(s);
        }
        if let Some(o) = &self.out {
            config.experiment.out = Some(o.clone());
        }
    }
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Runs the train–prune–fine-tune pipeline and writes, under the output
/// directory: `reports.csv`, `mask.txt`, `masked.ckpt` (full-size model
/// with pruned filters zeroed), `final.ckpt` (compacted, fine-tuned
/// model), `summary.txt`, and `checkpoints/epoch-NNN.ckpt` every
/// `checkpoint_every` epochs.
pub fn cmd_train(config: &ExperimentConfig) -> Result<String> {
    let train_config = config.train_config()?;
    let (train, test) = config.datasets()?;
    let model = config.model_for(&train)?;
    let baseline = count_flops(&model, 0.0, PruneScope::ResidualRestores, ChannelRounding::Floor)?;
    let out = config.out_dir();
    create_dir(&out)?;
    let every = config.experiment.checkpoint_every.unwrap_or(0);
    let ckpt_dir = out.join("checkpoints");
    if every > 0 {
        create_dir(&ckpt_dir)?;
    }

    let mut save_error = None;
    let outcome = run_with_observer(model, &train, &test, &train_config, &mut |r, m| {
        if every > 0 && (r.epoch + 1) % every == 0 && save_error.is_none() {
            save_error = checkpoint::save(m, &ckpt_dir.join(format!("epoch-{:03}.ckpt", r.epoch))).err();
        }
    })?;
    if let Some(e) = save_error {
        return Err(e);
    }

    report::write(&out.join("reports.csv"), &report::reports_csv(&outcome.reports)?)?;
    maskfile::save(&outcome.mask, &out.join("mask.txt"))?;
    checkpoint::save(&outcome.masked_model, &out.join("masked.ckpt"))?;
    checkpoint::save(&outcome.model, &out.join("final.ckpt"))?;

    let final_flops = count_flops(
        &outcome.model,
        0.0,
        PruneScope::ResidualRestores,
        ChannelRounding::Floor,
    )?;
    let mut summary = String::new();
    writeln!(summary, "method {}", config.method()?.name()).unwrap();
    writeln!(summary, "epochs {}", train_config.epochs).unwrap();
    writeln!(summary, "final_accuracy {}", outcome.final_accuracy).unwrap();
    writeln!(summary, "baseline_flops {}", baseline.total).unwrap();
    writeln!(summary, "final_flops {}", final_flops.total).unwrap();
    writeln!(summary, "baseline_params {}", baseline.params_total).unwrap();
    writeln!(summary, "final_params {}", final_flops.params_total).unwrap();
    writeln!(summary, "pruned_units {}", outcome.mask.total_pruned()).unwrap();
    for (i, loss) in outcome.finetune_losses.iter().enumerate() {
        writeln!(summary, "finetune_loss {i} {loss}").unwrap();
    }
    report::write(&out.join("summary.txt"), &summary)?;
    Ok(summary)
}

pub fn parse_rounding(s: &str) -> Result<ChannelRounding> {
    match s {
        "exact" => Ok(ChannelRounding::Exact),
        "floor" => Ok(ChannelRounding::Floor),
        other => Err(softprune_core::Error::Input(format!("rounding must be exact or floor, got {other}")).into()),
    }
}

pub fn parse_scope(s: &str) -> Result<PruneScope> {
    match s {
        "residual-restores" => Ok(PruneScope::ResidualRestores),
        "propagate" => Ok(PruneScope::Propagate),
        other => Err(softprune_core::Error::Input(format!(
            "scope must be residual-restores or propagate, got {other}"
        ))
        .into()),
    }
}

/// FLOPs of `arch` with every prunable conv pruned at `rate`, and the
/// fraction removed relative to the unpruned network. The toy network is
/// sized for 1×8×8 inputs, 8 filters and 10 classes.
pub fn cmd_flops(
    arch: &str,
    rate: f64,
    scope: PruneScope,
    rounding: ChannelRounding,
    per_layer: bool,
) -> Result<String> {
    let model = build_arch(arch, [1, 8, 8], 8, 10)?;
    let base = count_flops(&model, 0.0, scope, rounding)?;
    let pruned = count_flops(&model, rate, scope, rounding)?;
    let mut out = String::new();
    if per_layer {
        for (name, f) in &pruned.per_layer {
            writeln!(out, "layer {name} {f}").unwrap();
        }
    }
    writeln!(out, "arch {arch}").unwrap();
    writeln!(out, "rate {rate}").unwrap();
    writeln!(out, "flops {} ({:.3e})", pruned.total, pruned.total as f64).unwrap();
    writeln!(out, "baseline_flops {} ({:.3e})", base.total, base.total as f64).unwrap();
    writeln!(out, "params {}", pruned.params_total).unwrap();
    writeln!(out, "pruned_flops_percent {:.2}", 100.0 * pruned.pruned_fraction(&base)).unwrap();
    Ok(out)
}

/// Zeroes the masked filters of a checkpoint, removes them and saves the
/// smaller model.
pub fn cmd_compact(checkpoint_path: &Path, mask_path: &Path, out: &Path) -> Result<String> {
    let mut model = checkpoint::load(checkpoint_path)?;
    let mask = maskfile::load(mask_path, &model)?;
    if mask.granularity == Granularity::Weight {
        return Err(softprune_core::Error::Unsupported("weight-level masks cannot be compacted".into()).into());
    }
    let before = model.param_count();
    apply_mask(&mut model, &mask, 0.0)?;
    let small = compact(&model, &mask)?;
    checkpoint::save(&small, out)?;
    Ok(format!(
        "params {before} -> {}\nwrote {}\n",
        small.param_count(),
        out.display()
    ))
}

/// Test accuracy of a checkpoint on the configured dataset, optionally with
/// the masked filters zeroed first.
pub fn cmd_eval(checkpoint_path: &Path, config: &ExperimentConfig, mask_path: Option<&Path>) -> Result<String> {
    let mut model = checkpoint::load(checkpoint_path)?;
    if let Some(m) = mask_path {
        let mask = maskfile::load(m, &model)?;
        apply_mask(&mut model, &mask, 0.0)?;
    }
    let (_, test) = config.datasets()?;
    let acc = evaluate(&model, &test)?;
    Ok(format!("accuracy {acc}\n"))
}

/// The `(t, alpha, rate)` table of the configured schedules, also written
/// to `schedule.csv` in the output directory.
pub fn cmd_schedule(config: &ExperimentConfig) -> Result<String> {
    let c = config.train_config()?;
    let text = report::schedule_csv(&c.decay, &c.ramp)?;
    let out = config.out_dir();
    create_dir(&out)?;
    report::write(&out.join("schedule.csv"), &text)?;
    Ok(text)
}
