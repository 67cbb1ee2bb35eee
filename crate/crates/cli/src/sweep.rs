//! Parameter grids: parsing, expansion and parallel execution.

use std::fmt;
use std::path::Path;

use anyhow::Context;
use rayon::prelude::*;

use mrac_core::{run_episode, ConfigError, ExperimentConfig};

use crate::{ensure_dir, output};

pub const AGGREGATE_FILE: &str = "aggregate.csv";

/// Sweepable parameters: short name and config path.
const KEYS: [(&str, &str); 5] = [
    ("actor_rate", "experiment.actor_rate"),
    ("critic_rate", "experiment.critic_rate"),
    ("dt", "experiment.dt"),
    ("period", "reference.period"),
    ("mode", "experiment.mode"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct Axis {
    pub name: &'static str,
    pub path: &'static str,
    pub values: Vec<String>,
}

#[derive(Debug)]
pub struct GridError(String);

impl fmt::Display for GridError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "malformed grid: {}", self.0)
    }
}

impl std::error::Error for GridError {}

pub fn parse_grid(specs: &[String]) -> Result<Vec<Axis>, GridError> {
    let mut axes: Vec<Axis> = Vec::new();
    for spec in specs {
        let (key, values) = spec
            .split_once('=')
            .ok_or_else(|| GridError(format!("expected KEY=V1,V2,... in {spec:?}")))?;
        let key = key.trim();
        let &(name, path) = KEYS
            .iter()
            .find(|(n, p)| *n == key || *p == key)
            .ok_or_else(|| {
                let known: Vec<&str> = KEYS.iter().map(|k| k.0).collect();
                GridError(format!("unknown key {key:?} (expected one of {})", known.join(", ")))
            })?;
        let values: Vec<String> = values.split(',').map(|v| v.trim().to_string()).collect();
        if values.iter().any(String::is_empty) {
            return Err(GridError(format!("empty value in {spec:?}")));
        }
        if axes.iter().any(|a| a.name == name) {
            return Err(GridError(format!("{name} appears twice")));
        }
        if name == "mode" {
            if let Some(bad) = values.iter().find(|v| v.parse::<mrac_core::UpdateMode>().is_err()) {
                return Err(GridError(format!("unknown mode {bad:?}")));
            }
        } else if let Some(bad) = values.iter().find(|v| v.parse::<f64>().is_err()) {
            return Err(GridError(format!("{name} value {bad:?} is not a number")));
        }
        axes.push(Axis { name, path, values });
    }
    Ok(axes)
}

pub struct Cell {
    pub index: usize,
    pub values: Vec<String>,
    pub config: ExperimentConfig,
}

fn assignment(axis: &Axis, value: &str) -> String {
    if axis.name == "mode" {
        format!("{}=\"{value}\"", axis.path)
    } else {
        format!("{}={value}", axis.path)
    }
}

/// Cartesian product of the axes (last axis varies fastest), each cell
/// validated before anything runs.
pub fn expand(
    base: &ExperimentConfig,
    overrides: &[String],
    axes: &[Axis],
) -> Result<Vec<Cell>, ConfigError> {
    let text = base.to_toml_string();
    let total: usize = axes.iter().map(|a| a.values.len()).product();
    let mut cells = Vec::with_capacity(total);
    for index in 0..total {
        let mut rest = index;
        let mut values = vec![String::new(); axes.len()];
        for (j, axis) in axes.iter().enumerate().rev() {
            values[j] = axis.values[rest % axis.values.len()].clone();
            rest /= axis.values.len();
        }
        let mut all = overrides.to_vec();
        all.extend(axes.iter().zip(&values).map(|(a, v)| assignment(a, v)));
        let config = ExperimentConfig::from_toml_with_overrides(&text, &all)?;
        config.validate().map_err(|e| {
            let cell: Vec<String> = axes.iter().zip(&values).map(|(a, v)| format!("{}={v}", a.name)).collect();
            ConfigError::Invalid(format!("cell {index} ({}): {e}", cell.join(", ")))
        })?;
        cells.push(Cell {
            index,
            values,
            config,
        });
    }
    Ok(cells)
}

pub fn cell_dir(index: usize) -> String {
    format!("cell-{index:03}")
}

pub struct SweepOutcome {
    pub cells: usize,
    pub diverged: usize,
}

struct Row {
    cell: usize,
    values: Vec<String>,
    status: String,
    steps: usize,
    settling_step: Option<usize>,
    final_mean_abs_error: f64,
    max_abs_control: f64,
    final_mean_abs_residual: f64,
    diverged: bool,
}

pub fn run_cells(
    dir: &Path,
    axes: &[Axis],
    cells: Vec<Cell>,
    jobs: usize,
    with_plots: bool,
) -> anyhow::Result<SweepOutcome> {
    ensure_dir(dir)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .context("building worker pool")?;
    let rows: Vec<Row> = pool.install(|| {
        cells
            .par_iter()
            .map(|cell| -> anyhow::Result<Row> {
                let log = run_episode(&cell.config).with_context(|| format!("cell {}", cell.index))?;
                let summary = output::write_run(&dir.join(cell_dir(cell.index)), &cell.config, &log, with_plots)?;
                Ok(Row {
                    cell: cell.index,
                    values: cell.values.clone(),
                    status: log.status.to_string(),
                    steps: summary.steps,
                    settling_step: summary.settling_step,
                    final_mean_abs_error: summary.final_mean_abs_error,
                    max_abs_control: summary.max_abs_control,
                    final_mean_abs_residual: summary.final_mean_abs_residual,
                    diverged: log.status.is_diverged(),
                })
            })
            .collect::<anyhow::Result<Vec<Row>>>()
    })?;

    let path = dir.join(AGGREGATE_FILE);
    let mut writer = csv::Writer::from_path(&path).with_context(|| format!("creating {}", path.display()))?;
    let mut header = vec!["cell".to_string()];
    header.extend(axes.iter().map(|a| a.name.to_string()));
    header.extend(
        [
            "status",
            "steps",
            "settling_step",
            "final_mean_abs_error",
            "max_abs_control",
            "final_mean_abs_residual",
        ]
        .map(String::from),
    );
    writer.write_record(&header)?;
    for row in &rows {
        let mut record = vec![cell_dir(row.cell)];
        record.extend(row.values.iter().cloned());
        record.extend([
            row.status.clone(),
            row.steps.to_string(),
            row.settling_step.map_or(String::new(), |k| k.to_string()),
            row.final_mean_abs_error.to_string(),
            row.max_abs_control.to_string(),
            row.final_mean_abs_residual.to_string(),
        ]);
        writer.write_record(&record)?;
    }
    writer.flush()?;
    Ok(SweepOutcome {
        cells: rows.len(),
        diverged: rows.iter().filter(|r| r.diverged).count(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(specs: &[&str]) -> Result<Vec<Axis>, GridError> {
        parse_grid(&specs.iter().map(|s| s.to_string()).collect::<Vec<_>>())
    }

    #[test]
    fn parses_aliases_and_paths() {
        let axes = grid(&["critic_rate=0.25,0.5", "experiment.actor_rate=0.1"]).unwrap();
        assert_eq!(axes[0].path, "experiment.critic_rate");
        assert_eq!(axes[1].name, "actor_rate");
        assert_eq!(axes[0].values, vec!["0.25", "0.5"]);
    }

    #[test]
    fn rejects_malformed_axes() {
        for bad in [
            &["critic_rate"][..],
            &["gamma=1,2"],
            &["critic_rate=0.1,"],
            &["dt=fast"],
            &["mode=greedy"],
            &["dt=0.1", "experiment.dt=0.2"],
        ] {
            assert!(grid(bad).is_err(), "{bad:?}");
        }
    }

    #[test]
    fn expansion_order_and_values() {
        let base = ExperimentConfig::preset("case1").unwrap();
        let axes = grid(&["critic_rate=0.25,0.5", "mode=residual,as_printed"]).unwrap();
        let cells = expand(&base, &[], &axes).unwrap();
        assert_eq!(cells.len(), 4);
        assert_eq!(cells[1].values, vec!["0.25", "as_printed"]);
        assert_eq!(cells[1].config.experiment.critic_rate, 0.25);
        assert_eq!(cells[2].config.experiment.mode, mrac_core::UpdateMode::Residual);
    }

    #[test]
    fn invalid_cell_is_reported_before_running() {
        let base = ExperimentConfig::preset("case1").unwrap();
        let axes = grid(&["dt=0.1,0"]).unwrap();
        let err = expand(&base, &[], &axes).err().unwrap();
        assert!(err.to_string().contains("cell 1"));
    }
}
