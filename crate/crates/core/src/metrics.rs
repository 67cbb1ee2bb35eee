//! Scalar summaries of a trajectory log.

use serde::Serialize;

use crate::log::{TerminalStatus, TrajectoryLog};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SegmentSummary {
    pub start_step: usize,
    pub end_step: usize,
    pub mean_abs_error: f64,
    pub max_abs_error: f64,
    /// Mean |e| over the first (up to) 10 steps of the segment.
    pub early_mean_abs_error: f64,
    /// Mean |e| over the last (up to) 10 steps of the segment.
    pub late_mean_abs_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub steps: usize,
    pub status: TerminalStatus,
    /// First step from which every critic change stays within tolerance for
    /// the rest of the log, counted once `window` changes are in.
    pub settling_step: Option<usize>,
    pub final_mean_abs_error: f64,
    pub max_abs_control: f64,
    pub final_mean_abs_residual: f64,
    pub final_gains: [f64; 3],
    pub segments: Vec<SegmentSummary>,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

/// First `k >= window + 1` such that the changes at steps `k - window ..`
/// through the end are all within `tolerance`.
pub fn settling_step(log: &TrajectoryLog) -> Option<usize> {
    let window = log.meta.window;
    let changes: Vec<f64> = log.records.iter().map(|r| r.critic_change).collect();
    let mut first_bad_after = None;
    for (i, c) in changes.iter().enumerate().rev() {
        if !(c.abs() <= log.meta.tolerance) {
            first_bad_after = Some(i);
            break;
        }
    }
    let k = match first_bad_after {
        None => window + 1,
        Some(i) => (i + 1 + window).max(window + 1),
    };
    (k < changes.len()).then_some(k)
}

pub fn summarize(log: &TrajectoryLog) -> Summary {
    let recs = &log.records;
    let n = recs.len();
    let tail = (n / 10).max(1).min(n);
    let final_mean_abs_error = mean(recs[n - tail..].iter().map(|r| r.e.abs()));
    let residual_tail = 20.min(n);
    let final_mean_abs_residual = mean(
        recs[n - residual_tail..]
            .iter()
            .map(|r| r.bellman_residual.abs()),
    );
    let max_abs_control = recs.iter().map(|r| r.u.abs()).fold(0.0, f64::max);

    let mut bounds: Vec<usize> = log
        .meta
        .segment_starts
        .iter()
        .copied()
        .filter(|&s| s < n)
        .collect();
    bounds.push(n);
    let segments = bounds
        .windows(2)
        .map(|w| {
            let seg = &recs[w[0]..w[1]];
            let abs = |r: &crate::log::StepRecord| r.e.abs();
            let m = seg.len().min(10);
            SegmentSummary {
                start_step: w[0],
                end_step: w[1],
                mean_abs_error: mean(seg.iter().map(abs)),
                max_abs_error: seg.iter().map(abs).fold(0.0, f64::max),
                early_mean_abs_error: mean(seg[..m].iter().map(abs)),
                late_mean_abs_error: mean(seg[seg.len() - m..].iter().map(abs)),
            }
        })
        .collect();

    Summary {
        steps: n,
        status: log.status,
        settling_step: settling_step(log),
        final_mean_abs_error,
        max_abs_control,
        final_mean_abs_residual,
        final_gains: recs.last().map_or([f64::NAN; 3], |r| r.gains),
        segments,
    }
}

impl Summary {
    pub fn converged(&self) -> bool {
        matches!(self.status, TerminalStatus::ConvergedAt(_))
    }

    /// TOML rendering used for `summary.txt`.
    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("summary fields are TOML-representable")
    }
}
