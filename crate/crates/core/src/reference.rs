//! Reference trajectories `y_ref(t)` for the tracking loop.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ReferenceError {
    #[error("invalid reference: {0}")]
    Invalid(String),
    #[error("reference sampled backwards in time ({requested} < {last})")]
    Backwards { requested: f64, last: f64 },
    #[error("reading reference table {path}: {source}")]
    Table {
        path: String,
        #[source]
        source: csv::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceKind {
    /// Square wave of +/- amplitude through a first-order lag.
    FilteredSquare,
    /// Filtered square wave plus a sinusoidal distortion.
    DistortedSquare,
    Constant,
    /// Piecewise-linear interpolation of `(t, value)` points.
    Table,
}

fn default_amplitude() -> f64 {
    30.0
}
fn default_period() -> f64 {
    6.0
}
fn default_time_constant() -> f64 {
    0.5
}
fn default_distortion_frequency() -> f64 {
    0.25
}

/// Reference signal description. Units: amplitude in m/s^2, times in s,
/// frequency in Hz.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceSpec {
    pub kind: ReferenceKind,
    #[serde(default = "default_amplitude")]
    pub amplitude: f64,
    #[serde(default = "default_period")]
    pub period: f64,
    #[serde(default = "default_time_constant")]
    pub filter_time_constant: f64,
    /// Distortion amplitude as a fraction of `amplitude`.
    #[serde(default)]
    pub distortion_amplitude_fraction: f64,
    #[serde(default = "default_distortion_frequency")]
    pub distortion_frequency: f64,
    /// Output of the lag filter at `t = 0`.
    #[serde(default)]
    pub initial_value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<Vec<[f64; 2]>>,
    /// Two-column CSV loaded into `table`; relative paths resolve against
    /// the config file's directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table_file: Option<String>,
}

impl ReferenceSpec {
    pub fn filtered_square(amplitude: f64, period: f64, filter_time_constant: f64) -> Self {
        Self {
            kind: ReferenceKind::FilteredSquare,
            amplitude,
            period,
            filter_time_constant,
            distortion_amplitude_fraction: 0.0,
            distortion_frequency: default_distortion_frequency(),
            initial_value: 0.0,
            table: None,
            table_file: None,
        }
    }

    pub fn distorted_square(
        amplitude: f64,
        period: f64,
        filter_time_constant: f64,
        fraction: f64,
        frequency: f64,
    ) -> Self {
        Self {
            kind: ReferenceKind::DistortedSquare,
            distortion_amplitude_fraction: fraction,
            distortion_frequency: frequency,
            ..Self::filtered_square(amplitude, period, filter_time_constant)
        }
    }

    pub fn constant(value: f64) -> Self {
        Self {
            kind: ReferenceKind::Constant,
            ..Self::filtered_square(value, default_period(), 0.0)
        }
    }

    pub fn table(points: Vec<[f64; 2]>) -> Self {
        Self {
            kind: ReferenceKind::Table,
            table: Some(points),
            ..Self::filtered_square(0.0, default_period(), 0.0)
        }
    }

    /// Reads a two-column `t,value` CSV. A header row is allowed.
    pub fn read_table_csv(path: &Path) -> Result<Vec<[f64; 2]>, ReferenceError> {
        let wrap = |source| ReferenceError::Table {
            path: path.display().to_string(),
            source,
        };
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(wrap)?;
        let mut points = Vec::new();
        for (i, record) in reader.records().enumerate() {
            let record = record.map_err(wrap)?;
            let parse = |j: usize| record.get(j).and_then(|s| s.parse::<f64>().ok());
            match (parse(0), parse(1), record.len()) {
                (Some(t), Some(v), 2) => points.push([t, v]),
                _ if i == 0 => continue,
                _ => {
                    return Err(ReferenceError::Invalid(format!(
                        "{}: row {} is not a numeric t,value pair",
                        path.display(),
                        i + 1
                    )))
                }
            }
        }
        Ok(points)
    }

    /// Loads `table_file` into `table`.
    pub fn resolve_table(&mut self, base_dir: &Path) -> Result<(), ReferenceError> {
        if let Some(file) = self.table_file.take() {
            let path = base_dir.join(file);
            self.table = Some(Self::read_table_csv(&path)?);
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ReferenceError> {
        let bad = |msg: String| Err(ReferenceError::Invalid(msg));
        let finite = [
            self.amplitude,
            self.period,
            self.filter_time_constant,
            self.distortion_amplitude_fraction,
            self.distortion_frequency,
            self.initial_value,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return bad("non-finite reference parameter".into());
        }
        if self.amplitude < 0.0 {
            return bad(format!("amplitude must be >= 0, got {}", self.amplitude));
        }
        if self.period <= 0.0 {
            return bad(format!("period must be > 0, got {}", self.period));
        }
        if self.filter_time_constant < 0.0 {
            return bad(format!(
                "filter_time_constant must be >= 0, got {}",
                self.filter_time_constant
            ));
        }
        if self.distortion_amplitude_fraction < 0.0 {
            return bad("distortion_amplitude_fraction must be >= 0".into());
        }
        if self.table_file.is_some() {
            return bad("table_file has not been loaded".into());
        }
        if self.kind == ReferenceKind::Table {
            let table = match &self.table {
                Some(t) if !t.is_empty() => t,
                _ => return bad("table reference needs at least one point".into()),
            };
            if table.iter().flatten().any(|v| !v.is_finite()) {
                return bad("non-finite table entry".into());
            }
            if table.windows(2).any(|w| w[1][0] <= w[0][0]) {
                return bad("table times must be strictly increasing".into());
            }
        }
        Ok(())
    }

    /// Upper bound on `|y_ref|` for the square-wave kinds.
    pub fn bound(&self) -> f64 {
        let distortion = match self.kind {
            ReferenceKind::DistortedSquare => self.distortion_amplitude_fraction,
            _ => 0.0,
        };
        self.amplitude.max(self.initial_value.abs()) * (1.0 + distortion)
    }
}

/// Stateful sampler for a [`ReferenceSpec`].
///
/// The lag filter is advanced exactly: the raw square wave is piecewise
/// constant, so between switches the filter output relaxes as
/// `s + (y - s) exp(-h / tau)`. Filtered kinds must be sampled at
/// non-decreasing times.
#[derive(Debug, Clone)]
pub struct ReferenceSignal {
    spec: ReferenceSpec,
    filtered: f64,
    last_t: f64,
}

impl ReferenceSignal {
    pub fn new(spec: ReferenceSpec) -> Result<Self, ReferenceError> {
        spec.validate()?;
        Ok(Self {
            filtered: spec.initial_value,
            last_t: 0.0,
            spec,
        })
    }

    pub fn spec(&self) -> &ReferenceSpec {
        &self.spec
    }

    fn half_period(&self) -> f64 {
        0.5 * self.spec.period
    }

    fn level_in_half(&self, index: i64) -> f64 {
        if index.rem_euclid(2) == 0 {
            self.spec.amplitude
        } else {
            -self.spec.amplitude
        }
    }

    /// Unfiltered square wave: `+A` in the first half of each period, `-A`
    /// in the second.
    pub fn raw_square(&self, t: f64) -> f64 {
        self.level_in_half((t / self.half_period()).floor() as i64)
    }

    fn advance_filter(&mut self, t: f64) {
        let tau = self.spec.filter_time_constant;
        let half = self.half_period();
        let mut t0 = self.last_t;
        while t0 < t {
            let mut index = (t0 / half).floor() as i64;
            let mut boundary = (index + 1) as f64 * half;
            if boundary <= t0 {
                index += 1;
                boundary = (index + 1) as f64 * half;
            }
            let t1 = boundary.min(t);
            let level = self.level_in_half(index);
            self.filtered = level + (self.filtered - level) * (-(t1 - t0) / tau).exp();
            t0 = t1;
        }
        self.last_t = t;
    }

    fn filtered_square(&mut self, t: f64) -> Result<f64, ReferenceError> {
        if t < self.last_t {
            return Err(ReferenceError::Backwards {
                requested: t,
                last: self.last_t,
            });
        }
        if self.spec.filter_time_constant == 0.0 {
            self.last_t = t;
            self.filtered = self.raw_square(t);
        } else {
            self.advance_filter(t);
        }
        Ok(self.filtered)
    }

    fn interpolate(table: &[[f64; 2]], t: f64) -> f64 {
        let first = table[0];
        let last = table[table.len() - 1];
        if t <= first[0] {
            return first[1];
        }
        if t >= last[0] {
            return last[1];
        }
        let i = table.partition_point(|p| p[0] <= t);
        let (a, b) = (table[i - 1], table[i]);
        a[1] + (b[1] - a[1]) * (t - a[0]) / (b[0] - a[0])
    }

    pub fn sample(&mut self, t: f64) -> Result<f64, ReferenceError> {
        if !(t >= 0.0) {
            return Err(ReferenceError::Invalid(format!(
                "sample time must be >= 0, got {t}"
            )));
        }
        match self.spec.kind {
            ReferenceKind::Constant => Ok(self.spec.amplitude),
            ReferenceKind::Table => Ok(Self::interpolate(
                self.spec.table.as_deref().unwrap_or_default(),
                t,
            )),
            ReferenceKind::FilteredSquare => self.filtered_square(t),
            ReferenceKind::DistortedSquare => {
                let base = self.filtered_square(t)?;
                let s = &self.spec;
                let phase = 2.0 * std::f64::consts::PI * s.distortion_frequency * t;
                Ok(base + s.distortion_amplitude_fraction * s.amplitude * phase.sin())
            }
        }
    }
}
