//! Per-run artifacts.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::Context;

use mrac_core::{summarize, ExperimentConfig, Summary, TrajectoryLog};

use crate::{ensure_dir, plots};

pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const SUMMARY_FILE: &str = "summary.txt";
pub const CONFIG_FILE: &str = "config.toml";

/// Writes the trajectory, the summary, the effective config and (optionally)
/// the plot panels into `dir`.
pub fn write_run(
    dir: &Path,
    cfg: &ExperimentConfig,
    log: &TrajectoryLog,
    with_plots: bool,
) -> anyhow::Result<Summary> {
    ensure_dir(dir)?;
    let path = dir.join(TRAJECTORY_FILE);
    let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    let mut out = BufWriter::new(file);
    log.write_csv(&mut out)
        .with_context(|| format!("writing {}", path.display()))?;
    out.flush()?;

    let summary = summarize(log);
    let text = format!(
        "# experiment: {}\n{}",
        cfg.name.as_deref().unwrap_or("unnamed"),
        summary.to_toml_string()
    );
    let path = dir.join(SUMMARY_FILE);
    std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    let path = dir.join(CONFIG_FILE);
    std::fs::write(&path, cfg.to_toml_string())
        .with_context(|| format!("writing {}", path.display()))?;

    if with_plots {
        plots::write_panels(dir, log)?;
    }
    Ok(summary)
}
