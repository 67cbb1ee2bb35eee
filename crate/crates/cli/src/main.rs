use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use mrac_core::{ConfigError, ExperimentConfig, HarnessError};

mod output;
mod plots;
mod sweep;

/// Exit status for configuration and grid errors.
const EXIT_INVALID: u8 = 2;
/// Exit status for a run that diverged (its log is still written).
const EXIT_DIVERGED: u8 = 3;

#[derive(Parser)]
#[command(name = "mrac", version, about = "Output-error adaptive control experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one episode and write trajectory.csv, summary.txt and plots.
    Run {
        #[command(flatten)]
        source: Source,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Run every cell of a parameter grid.
    Sweep {
        #[command(flatten)]
        source: Source,
        #[command(flatten)]
        output: OutputArgs,
        /// Grid axis, e.g. `--grid critic_rate=0.25,0.5`. Keys: actor_rate,
        /// critic_rate, dt, period, mode (or their dotted config paths).
        #[arg(long = "grid", value_name = "KEY=V1,V2,...", required = true)]
        grid: Vec<String>,
        /// Worker threads (default: available cores, at most 8).
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Check a configuration and report the first violated invariant.
    Validate {
        #[command(flatten)]
        source: Source,
    },
}

#[derive(Args)]
#[group(required = true, multiple = false, id = "input")]
struct SourceChoice {
    /// Bundled preset: case1 or case2.
    #[arg(long)]
    scenario: Option<String>,
    /// Experiment file (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct Source {
    #[command(flatten)]
    choice: SourceChoice,
    /// Override a config value by dotted path, e.g. `experiment.dt=0.05`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Update law variant.
    #[arg(long, value_parser = ["residual", "as_printed"])]
    mode: Option<String>,
}

impl Source {
    fn overrides(&self) -> Vec<String> {
        let mut all = self.set.clone();
        if let Some(mode) = &self.mode {
            all.push(format!("experiment.mode=\"{mode}\""));
        }
        all
    }

    fn load(&self) -> Result<ExperimentConfig, ConfigError> {
        let overrides = self.overrides();
        match (&self.choice.scenario, &self.choice.config) {
            (Some(name), _) => {
                ExperimentConfig::from_toml_with_overrides(ExperimentConfig::preset_text(name)?, &overrides)
            }
            (None, Some(path)) => ExperimentConfig::load(path, &overrides),
            (None, None) => unreachable!("clap requires one input"),
        }
    }

    fn label(&self) -> String {
        match (&self.choice.scenario, &self.choice.config) {
            (Some(name), _) => name.clone(),
            (None, Some(path)) => path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "experiment".into()),
            (None, None) => unreachable!("clap requires one input"),
        }
    }
}

#[derive(Args)]
struct OutputArgs {
    /// Output directory (default: $MRAC_OUT_DIR/<name>).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Root for default output directories.
    #[arg(long, env = "MRAC_OUT_DIR", default_value = "runs", hide_env_values = true)]
    out_root: PathBuf,
    /// Skip the SVG panels.
    #[arg(long)]
    no_plots: bool,
}

impl OutputArgs {
    fn dir(&self, label: &str) -> PathBuf {
        self.out.clone().unwrap_or_else(|| self.out_root.join(label))
    }
}

fn invalid(err: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {err}");
    ExitCode::from(EXIT_INVALID)
}

fn cmd_run(source: &Source, output: &OutputArgs) -> anyhow::Result<ExitCode> {
    let cfg = match source.load().and_then(|c| c.validate().map(|_| c)) {
        Ok(cfg) => cfg,
        Err(e) => return Ok(invalid(e)),
    };
    let dir = output.dir(&source.label());
    let log = match mrac_core::run_episode(&cfg) {
        Ok(log) => log,
        Err(HarnessError::Config(e)) => return Ok(invalid(e)),
        Err(e) => return Err(e).context("episode failed"),
    };
    let summary = output::write_run(&dir, &cfg, &log, !output.no_plots)?;
    let name = cfg.name.as_deref().unwrap_or("experiment");
    println!("{name}: {} ({} steps) -> {}", log.status, summary.steps, dir.display());
    if let Some(k) = summary.settling_step {
        println!("settling step {k}");
    }
    Ok(if log.status.is_diverged() {
        ExitCode::from(EXIT_DIVERGED)
    } else {
        ExitCode::SUCCESS
    })
}

fn cmd_validate(source: &Source) -> ExitCode {
    match source.load().and_then(|c| c.validate()) {
        Ok(exp) => {
            println!(
                "ok: {} steps of {} s, plant order {}, {} disturbance segment(s)",
                exp.settings.steps,
                exp.settings.dt,
                exp.model.order(),
                exp.schedule.segments().len()
            );
            ExitCode::SUCCESS
        }
        Err(e) => invalid(e),
    }
}

fn default_jobs() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get().min(8))
}

fn cmd_sweep(
    source: &Source,
    output: &OutputArgs,
    grid: &[String],
    jobs: Option<usize>,
) -> anyhow::Result<ExitCode> {
    let axes = match sweep::parse_grid(grid) {
        Ok(axes) => axes,
        Err(e) => return Ok(invalid(e)),
    };
    let base = match source.load() {
        Ok(cfg) => cfg,
        Err(e) => return Ok(invalid(e)),
    };
    let cells = match sweep::expand(&base, &[], &axes) {
        Ok(cells) => cells,
        Err(e) => return Ok(invalid(e)),
    };
    let dir = output.dir(&format!("{}-sweep", source.label()));
    let outcome = sweep::run_cells(&dir, &axes, cells, jobs.unwrap_or_else(default_jobs), !output.no_plots)?;
    println!(
        "{} cells ({} diverged) -> {}",
        outcome.cells,
        outcome.diverged,
        dir.join(sweep::AGGREGATE_FILE).display()
    );
    Ok(if outcome.diverged > 0 {
        ExitCode::from(EXIT_DIVERGED)
    } else {
        ExitCode::SUCCESS
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { source, output } => cmd_run(source, output),
        Command::Sweep {
            source,
            output,
            grid,
            jobs,
        } => cmd_sweep(source, output, grid, *jobs),
        Command::Validate { source } => Ok(cmd_validate(source)),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e:#}");
        ExitCode::FAILURE
    })
}

pub(crate) fn ensure_dir(dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}
