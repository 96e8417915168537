//! Mean edges-over-time curves across campaigns.
//!
//! Each run is resampled onto a shared grid of fixed-width bins. The value
//! at grid point `x` is the unique-edge count of the last tick at or before
//! `x` (zero before the first tick; the final value holds after a run ends).

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;

use crate::engine::{CampaignReport, EngineError};
use crate::stats::{read_plot_data, StatsTick, PLOT_DATA_FILE};

pub const CURVES_CSV: &str = "curves.csv";
pub const REPORT_TXT: &str = "report.txt";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Seconds,
    Execs,
}

impl Axis {
    pub fn of(self, t: &StatsTick) -> f64 {
        match self {
            Axis::Seconds => t.t_seconds,
            Axis::Execs => t.total_execs as f64,
        }
    }

    pub fn default_bin(self) -> f64 {
        match self {
            Axis::Seconds => 1.0,
            Axis::Execs => 1000.0,
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Axis::Seconds => "t_seconds",
            Axis::Execs => "total_execs",
        })
    }
}

impl FromStr for Axis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "time" | "seconds" | "t" => Ok(Axis::Seconds),
            "execs" | "executions" => Ok(Axis::Execs),
            other => Err(format!("unknown axis `{other}` (expected time or execs)")),
        }
    }
}

/// Unique edges at `x`: the last tick with position ≤ `x`.
pub fn value_at(ticks: &[StatsTick], axis: Axis, x: f64) -> f64 {
    let n = ticks.partition_point(|t| axis.of(t) <= x);
    if n == 0 {
        0.0
    } else {
        ticks[n - 1].unique_edges as f64
    }
}

/// Grid points `0, bin, 2·bin, …` up to the first point covering `end`.
pub fn grid(bin: f64, end: f64) -> Vec<f64> {
    let k = (end / bin).ceil().max(0.0) as usize;
    (0..=k).map(|i| i as f64 * bin).collect()
}

pub fn resample(ticks: &[StatsTick], axis: Axis, points: &[f64]) -> Vec<f64> {
    points.iter().map(|&x| value_at(ticks, axis, x)).collect()
}

/// Pointwise mean of every run resampled onto one grid.
pub fn mean_curve(runs: &[&[StatsTick]], axis: Axis, bin: f64) -> Vec<(f64, f64)> {
    let end = runs.iter().filter_map(|r| r.last()).map(|t| axis.of(t)).fold(0.0, f64::max);
    let points = grid(bin, end);
    let mut sums = vec![0.0; points.len()];
    for r in runs {
        for (s, v) in sums.iter_mut().zip(resample(r, axis, &points)) {
            *s += v;
        }
    }
    let n = runs.len().max(1) as f64;
    points.into_iter().zip(sums).map(|(x, s)| (x, s / n)).collect()
}

/// First grid position where the curve reaches `target`.
pub fn first_reaching(curve: &[(f64, f64)], target: f64) -> Option<f64> {
    curve.iter().find(|&&(_, v)| v >= target).map(|&(x, _)| x)
}

#[derive(Debug, Clone)]
pub struct Campaign {
    pub dir: PathBuf,
    pub report: CampaignReport,
    pub ticks: Vec<StatsTick>,
}

pub fn load_campaign(dir: &Path) -> Result<Campaign, EngineError> {
    let report = CampaignReport::read(dir)?;
    let ticks = read_plot_data(&dir.join(PLOT_DATA_FILE))
        .map_err(|e| EngineError::Io(format!("{}: {e}", dir.join(PLOT_DATA_FILE).display())))?;
    Ok(Campaign { dir: dir.to_path_buf(), report, ticks })
}

/// Campaign directories under `root`, found by their report file.
pub fn find_campaigns(root: &Path) -> Vec<PathBuf> {
    let mut found = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        if d.join(crate::engine::campaign::REPORT_FILE).is_file() && d.join(PLOT_DATA_FILE).is_file() {
            found.push(d.clone());
        }
        if let Ok(rd) = fs::read_dir(&d) {
            stack.extend(rd.filter_map(|e| e.ok()).map(|e| e.path()).filter(|p| p.is_dir()));
        }
    }
    found.sort();
    found
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigurationCurve {
    pub label: String,
    pub runs: Vec<String>,
    pub points: Vec<(f64, f64)>,
    pub final_edges: MeanEdges,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanEdges {
    pub mean: f64,
    pub min: usize,
    pub max: usize,
}

/// Groups campaigns by configuration label and averages each group.
pub fn build_curves(campaigns: &[Campaign], axis: Axis, bin: f64) -> Vec<ConfigurationCurve> {
    let mut groups: BTreeMap<&str, Vec<&Campaign>> = BTreeMap::new();
    for c in campaigns {
        groups.entry(c.report.label.as_str()).or_default().push(c);
    }
    groups
        .into_iter()
        .map(|(label, cs)| {
            let series: Vec<&[StatsTick]> = cs.iter().map(|c| c.ticks.as_slice()).collect();
            let finals: Vec<usize> = cs.iter().map(|c| c.report.unique_edges).collect();
            ConfigurationCurve {
                label: label.to_string(),
                runs: cs.iter().map(|c| c.dir.display().to_string()).collect(),
                points: mean_curve(&series, axis, bin),
                final_edges: MeanEdges {
                    mean: finals.iter().sum::<usize>() as f64 / finals.len() as f64,
                    min: finals.iter().copied().min().unwrap_or(0),
                    max: finals.iter().copied().max().unwrap_or(0),
                },
            }
        })
        .collect()
}

#[derive(Serialize)]
struct CurveRow<'a> {
    configuration: &'a str,
    x: f64,
    mean_unique_edges: f64,
    runs: usize,
}

pub fn curves_csv(curves: &[ConfigurationCurve], axis: Axis) -> String {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(["configuration", &axis.to_string(), "mean_unique_edges", "runs"]).expect("in-memory csv");
    for c in curves {
        for &(x, v) in &c.points {
            w.serialize(CurveRow { configuration: &c.label, x, mean_unique_edges: v, runs: c.runs.len() })
                .expect("in-memory csv");
        }
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("csv is utf-8")
}

pub fn report_text(curves: &[ConfigurationCurve], axis: Axis, bin: f64) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "axis: {axis}  bin: {bin}");
    for c in curves {
        let _ = writeln!(out);
        let _ = writeln!(out, "{} ({} runs)", c.label, c.runs.len());
        let _ = writeln!(
            out,
            "  final unique edges: mean {:.2} (min {}, max {})",
            c.final_edges.mean, c.final_edges.min, c.final_edges.max
        );
        let last = c.points.last().map_or(0.0, |p| p.1);
        if let Some(x) = first_reaching(&c.points, 0.8 * last) {
            let _ = writeln!(out, "  mean curve reaches 80% of its final value at {axis} = {x}");
        }
        for r in &c.runs {
            let _ = writeln!(out, "  run: {r}");
        }
    }
    out
}

pub fn write_report(out: &Path, curves: &[ConfigurationCurve], axis: Axis, bin: f64) -> Result<(), EngineError> {
    fs::create_dir_all(out).map_err(|e| EngineError::Io(format!("{}: {e}", out.display())))?;
    for (name, text) in [(CURVES_CSV, curves_csv(curves, axis)), (REPORT_TXT, report_text(curves, axis, bin))] {
        let p = out.join(name);
        fs::write(&p, text).map_err(|e| EngineError::Io(format!("{}: {e}", p.display())))?;
    }
    Ok(())
}
