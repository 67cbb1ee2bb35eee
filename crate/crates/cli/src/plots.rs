//! The five static SVG panels of a run.

use std::path::Path;

use anyhow::anyhow;
use plotters::prelude::*;

use mrac_core::TrajectoryLog;

pub const PANELS: [&str; 5] = [
    "reference_output.svg",
    "error.svg",
    "states.svg",
    "control.svg",
    "gains.svg",
];

const PALETTE: [RGBColor; 6] = [
    RGBColor(31, 119, 180),
    RGBColor(214, 39, 40),
    RGBColor(44, 160, 44),
    RGBColor(255, 127, 14),
    RGBColor(148, 103, 189),
    RGBColor(140, 86, 75),
];

struct Series {
    name: String,
    points: Vec<(f64, f64)>,
    dashed: bool,
}

fn series(name: impl Into<String>, log: &TrajectoryLog, f: impl Fn(usize) -> f64) -> Series {
    Series {
        name: name.into(),
        points: log
            .records
            .iter()
            .enumerate()
            .map(|(i, r)| (r.t, f(i)))
            .filter(|(_, v)| v.is_finite())
            .collect(),
        dashed: false,
    }
}

fn dashed(mut s: Series) -> Series {
    s.dashed = true;
    s
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    });
    if !lo.is_finite() {
        return (-1.0, 1.0);
    }
    let pad = ((hi - lo) * 0.05).max(1e-9 * (1.0 + hi.abs()));
    (lo - pad, hi + pad)
}

fn panel(path: &Path, title: &str, y_label: &str, data: &[Series]) -> anyhow::Result<()> {
    let root = SVGBackend::new(path, (900, 480)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| anyhow!("{e}"))?;
    let (x0, x1) = range(data.iter().flat_map(|s| s.points.iter().map(|p| p.0)));
    let (y0, y1) = range(data.iter().flat_map(|s| s.points.iter().map(|p| p.1)));
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(70)
        .build_cartesian_2d(x0..x1, y0..y1)
        .map_err(|e| anyhow!("{e}"))?;
    chart
        .configure_mesh()
        .x_desc("t [s]")
        .y_desc(y_label)
        .draw()
        .map_err(|e| anyhow!("{e}"))?;
    for (i, s) in data.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let drawn = if s.dashed {
            chart.draw_series(DashedLineSeries::new(s.points.iter().copied(), 6, 4, color.stroke_width(2)))
        } else {
            chart.draw_series(LineSeries::new(s.points.iter().copied(), color.stroke_width(2)))
        }
        .map_err(|e| anyhow!("{e}"))?;
        drawn
            .label(s.name.clone())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], color.stroke_width(2)));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(|e| anyhow!("{e}"))?;
    root.present().map_err(|e| anyhow!("{e}"))?;
    Ok(())
}

pub fn write_panels(dir: &Path, log: &TrajectoryLog) -> anyhow::Result<()> {
    let r = &log.records;
    panel(
        &dir.join(PANELS[0]),
        "Reference and output",
        "acceleration [m/s^2]",
        &[
            dashed(series("y_ref", log, |i| r[i].y_ref)),
            series("y", log, |i| r[i].y),
        ],
    )?;
    panel(
        &dir.join(PANELS[1]),
        "Tracking error",
        "e [m/s^2]",
        &[series("e = y - y_ref", log, |i| r[i].e)],
    )?;
    let n_states = r.first().map_or(0, |x| x.state.len());
    let states: Vec<Series> = (0..n_states)
        .map(|j| series(format!("x{}", j + 1), log, |i| r[i].state[j]))
        .collect();
    panel(&dir.join(PANELS[2]), "Plant states", "state", &states)?;
    panel(
        &dir.join(PANELS[3]),
        "Control signal",
        "u",
        &[series("u", log, |i| r[i].u)],
    )?;
    let mut gains: Vec<Series> = (0..3)
        .map(|j| series(format!("k{j}"), log, |i| r[i].gains[j]))
        .collect();
    gains.extend((0..3).map(|j| dashed(series(format!("greedy k{j}"), log, |i| r[i].greedy_gains[j]))));
    panel(&dir.join(PANELS[4]), "Control gains", "gain", &gains)?;
    Ok(())
}
