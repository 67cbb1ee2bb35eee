//! Per-step trajectory records and their CSV form.

use std::fmt;
use std::io::{Read, Write};

use serde::{Serialize, Serializer};
use thiserror::Error;

/// First line of every trajectory CSV.
pub const CSV_SCHEMA_LINE: &str = "# mrac-trajectory v1: t s; y_ref,y,e m/s^2; u elevator; \
k*/greedy_k* control per unit error; value,utility,bellman_residual cost units; \
critic_change Frobenius norm; x* plant states";

const FIXED_COLUMNS: [&str; 16] = [
    "k",
    "t",
    "y_ref",
    "y",
    "e",
    "u",
    "k0",
    "k1",
    "k2",
    "greedy_k0",
    "greedy_k1",
    "greedy_k2",
    "value",
    "utility",
    "bellman_residual",
    "critic_change",
];

#[derive(Debug, Error)]
pub enum LogError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed trajectory csv: {0}")]
    Format(String),
}

/// Everything observed at step `k` (time `t = k dt`).
///
/// `gains` are the actor gains that produced `u`, `greedy_gains` those of
/// the critic in effect at step `k`. `value`, `utility` and
/// `bellman_residual` are evaluated at `(E(k dt), u)` before the update, and
/// `critic_change` is the Frobenius norm of the update made at this step.
/// `state` is the simulated plant state, logged for plotting only.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub k: usize,
    pub t: f64,
    pub y_ref: f64,
    pub y: f64,
    pub e: f64,
    pub u: f64,
    pub gains: [f64; 3],
    pub greedy_gains: [f64; 3],
    pub value: f64,
    pub utility: f64,
    pub bellman_residual: f64,
    pub critic_change: f64,
    pub state: Vec<f64>,
}

impl StepRecord {
    fn numeric_fields(&self) -> impl Iterator<Item = f64> + '_ {
        [self.t, self.y_ref, self.y, self.e, self.u]
            .into_iter()
            .chain(self.gains)
            .chain(self.greedy_gains)
            .chain([
                self.value,
                self.utility,
                self.bellman_residual,
                self.critic_change,
            ])
            .chain(self.state.iter().copied())
    }

    /// Largest magnitude among the logged quantities (NaN propagates as
    /// infinity).
    pub fn max_magnitude(&self) -> f64 {
        self.numeric_fields()
            .map(|v| if v.is_nan() { f64::INFINITY } else { v.abs() })
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TerminalStatus {
    /// The critic converged at this step; later steps ran with frozen gains.
    ConvergedAt(usize),
    MaxSteps,
    Diverged(usize),
}

impl TerminalStatus {
    pub fn is_diverged(&self) -> bool {
        matches!(self, Self::Diverged(_))
    }
}

impl fmt::Display for TerminalStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::ConvergedAt(k) => write!(f, "converged_at({k})"),
            Self::MaxSteps => f.write_str("max_steps"),
            Self::Diverged(k) => write!(f, "diverged({k})"),
        }
    }
}

impl Serialize for TerminalStatus {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

/// Parameters a log needs for its own summary.
#[derive(Debug, Clone, PartialEq)]
pub struct LogMeta {
    pub dt: f64,
    pub window: usize,
    pub tolerance: f64,
    /// Start steps of the disturbance segments (always begins with 0).
    pub segment_starts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryLog {
    pub records: Vec<StepRecord>,
    pub status: TerminalStatus,
    pub meta: LogMeta,
}

impl TrajectoryLog {
    pub fn errors(&self) -> impl Iterator<Item = f64> + '_ {
        self.records.iter().map(|r| r.e)
    }

    /// Writes the schema comment, a header row and one row per record.
    /// Floats use the shortest representation that parses back exactly.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<(), LogError> {
        writeln!(out, "{CSV_SCHEMA_LINE}")?;
        let n_states = self.records.first().map_or(0, |r| r.state.len());
        let mut writer = csv::Writer::from_writer(out);
        let header: Vec<String> = FIXED_COLUMNS
            .iter()
            .map(|s| s.to_string())
            .chain((1..=n_states).map(|i| format!("x{i}")))
            .collect();
        writer.write_record(&header)?;
        for r in &self.records {
            if r.state.len() != n_states {
                return Err(LogError::Format(format!(
                    "record {} has a different state size",
                    r.k
                )));
            }
            let row: Vec<String> = std::iter::once(r.k.to_string())
                .chain(r.numeric_fields().map(|v| v.to_string()))
                .collect();
            writer.write_record(&row)?;
        }
        writer.flush()?;
        Ok(())
    }
}

/// Parses a CSV produced by [`TrajectoryLog::write_csv`].
pub fn read_csv<R: Read>(input: R) -> Result<Vec<StepRecord>, LogError> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(input);
    let header = reader.headers()?.clone();
    if header.len() < FIXED_COLUMNS.len() || header.iter().zip(FIXED_COLUMNS).any(|(a, b)| a != b) {
        return Err(LogError::Format("unexpected header".into()));
    }
    let n_states = header.len() - FIXED_COLUMNS.len();
    let mut records = Vec::new();
    for row in reader.records() {
        let row = row?;
        let num = |i: usize| -> Result<f64, LogError> {
            row.get(i)
                .and_then(|s| s.parse::<f64>().ok())
                .ok_or_else(|| LogError::Format(format!("bad number in column {i}")))
        };
        let k = row
            .get(0)
            .and_then(|s| s.parse::<usize>().ok())
            .ok_or_else(|| LogError::Format("bad step index".into()))?;
        records.push(StepRecord {
            k,
            t: num(1)?,
            y_ref: num(2)?,
            y: num(3)?,
            e: num(4)?,
            u: num(5)?,
            gains: [num(6)?, num(7)?, num(8)?],
            greedy_gains: [num(9)?, num(10)?, num(11)?],
            value: num(12)?,
            utility: num(13)?,
            bellman_residual: num(14)?,
            critic_change: num(15)?,
            state: (0..n_states)
                .map(|i| num(16 + i))
                .collect::<Result<_, _>>()?,
        });
    }
    Ok(records)
}
