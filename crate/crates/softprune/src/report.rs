//! CSV outputs. Each file starts with a `# softprune <kind> v<N>` line that
//! versions the column set, then a header row.

use std::io::Write;
use std::path::Path;

use softprune_core::schedule::{DecaySchedule, RateRamp};
use softprune_core::train::EpochReport;

use crate::error::{Error, Result};

pub const REPORTS_VERSION: u32 = 1;
pub const SCHEDULE_VERSION: u32 = 1;

pub const REPORT_COLUMNS: [&str; 8] = [
    "epoch",
    "train_loss",
    "test_accuracy_before_prune",
    "test_accuracy_after_prune",
    "accuracy_drop",
    "alpha",
    "prune_rate",
    "current_flops",
];

fn table(kind: &str, version: u32, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<String> {
    let mut buf = format!("# softprune {kind} v{version}\n").into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(header)?;
        for row in rows {
            w.write_record(&row)?;
        }
        w.flush().map_err(csv::Error::from)?;
    }
    Ok(String::from_utf8(buf).expect("csv output is UTF-8"))
}

/// Per-epoch metrics; floats use the shortest exact decimal form.
pub fn reports_csv(reports: &[EpochReport]) -> Result<String> {
    table(
        "reports",
        REPORTS_VERSION,
        &REPORT_COLUMNS,
        reports.iter().map(|r| {
            vec![
                r.epoch.to_string(),
                r.train_loss.to_string(),
                r.test_accuracy_before_prune.to_string(),
                r.test_accuracy_after_prune.to_string(),
                r.accuracy_drop.to_string(),
                r.alpha.to_string(),
                r.prune_rate.to_string(),
                r.current_flops.to_string(),
            ]
        }),
    )
}

/// `(t, alpha, rate)` for every epoch of the schedule.
pub fn schedule_csv(decay: &DecaySchedule, ramp: &RateRamp) -> Result<String> {
    let rows = (0..decay.t_max)
        .map(|t| {
            Ok(vec![
                t.to_string(),
                decay.alpha_at(t)?.to_string(),
                ramp.rate_at(t, decay.t_max)?.to_string(),
            ])
        })
        .collect::<Result<Vec<_>, softprune_core::Error>>()?;
    table("schedule", SCHEDULE_VERSION, &["t", "alpha", "rate"], rows)
}

pub fn write(path: &Path, contents: &str) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(contents.as_bytes()).map_err(|e| Error::io(path, e))
}
