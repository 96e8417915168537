//! The 2×2 ablation matrix: {coverage, green} minimisation crossed with
//! {baseline, green} fuzzing heuristics, R repetitions each.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{CminMode, SeedInput};
use crate::energy::MeterKind;
use crate::engine::campaign::arm_label;
use crate::engine::{run_campaign_with_seeds, CampaignConfig, CampaignReport, EngineError, FuzzHeuristics};
use crate::par::{map_with, Parallelism};

pub const SUMMARY_CSV: &str = "summary.csv";
pub const SUMMARY_TXT: &str = "summary.txt";
pub const SUMMARY_JSON: &str = "summary.json";

/// Arm order: neither, green-cmin only, green-fuzz only, both.
pub const ARMS: [(CminMode, FuzzHeuristics); 4] = [
    (CminMode::Coverage, FuzzHeuristics::Baseline),
    (CminMode::Green, FuzzHeuristics::Baseline),
    (CminMode::Coverage, FuzzHeuristics::Green),
    (CminMode::Green, FuzzHeuristics::Green),
];

/// Rng seed for repetition `rep`; every arm of a repetition shares it.
pub fn derive_seed(base: u64, rep: u32) -> u64 {
    // splitmix64 finaliser
    let mut z = base.wrapping_add((rep as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone)]
pub struct AblationConfig {
    /// Template; its `cmin`, `heuristics`, `rng_seed` and `output_dir` are
    /// overridden per campaign.
    pub base: CampaignConfig,
    pub repetitions: u32,
    pub parallel: bool,
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanVar {
    pub mean: f64,
    /// Sample variance (n - 1); zero for a single run.
    pub variance: f64,
}

impl MeanVar {
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return MeanVar::default();
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let variance = if n < 2 { 0.0 } else { xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64 };
        MeanVar { mean, variance }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub label: String,
    pub cmin: CminMode,
    pub heuristics: FuzzHeuristics,
    pub runs: usize,
    pub throughput: MeanVar,
    pub energy_kj: MeanVar,
    /// Percent of declared edges when the target declares a total, else edges.
    pub coverage: MeanVar,
    pub coverage_is_pct: bool,
    pub unique_edges: MeanVar,
    pub initial_energy_j: MeanVar,
    pub initial_kept: MeanVar,
    pub best_throughput: bool,
    pub best_energy: bool,
    pub best_coverage: bool,
}

impl ArmSummary {
    pub fn from_reports(cmin: CminMode, heuristics: FuzzHeuristics, reports: &[&CampaignReport]) -> Self {
        let col = |f: &dyn Fn(&CampaignReport) -> f64| MeanVar::of(&reports.iter().map(|r| f(r)).collect::<Vec<_>>());
        let coverage_is_pct = reports.iter().all(|r| r.coverage_pct.is_some()) && !reports.is_empty();
        ArmSummary {
            label: arm_label(cmin, heuristics),
            cmin,
            heuristics,
            runs: reports.len(),
            throughput: col(&|r| r.execs_per_sec),
            energy_kj: col(&|r| r.energy_j / 1000.0),
            coverage: if coverage_is_pct {
                col(&|r| r.coverage_pct.unwrap_or(0.0))
            } else {
                col(&|r| r.unique_edges as f64)
            },
            coverage_is_pct,
            unique_edges: col(&|r| r.unique_edges as f64),
            initial_energy_j: col(&|r| r.initial.energy_j),
            initial_kept: col(&|r| r.initial.kept as f64),
            best_throughput: false,
            best_energy: false,
            best_coverage: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub label: String,
    pub repetition: u32,
    pub rng_seed: u64,
    pub report: CampaignReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationSummary {
    pub target: String,
    pub repetitions: u32,
    pub base_rng_seed: u64,
    pub arms: Vec<ArmSummary>,
    pub runs: Vec<RunRecord>,
}

fn mark_best(arms: &mut [ArmSummary]) {
    let best = |vals: Vec<f64>, hi: bool| -> Vec<bool> {
        let b = vals.iter().copied().fold(if hi { f64::NEG_INFINITY } else { f64::INFINITY }, |a, v| {
            if hi {
                a.max(v)
            } else {
                a.min(v)
            }
        });
        vals.iter().map(|&v| v == b).collect()
    };
    let t = best(arms.iter().map(|a| a.throughput.mean).collect(), true);
    let e = best(arms.iter().map(|a| a.energy_kj.mean).collect(), false);
    let c = best(arms.iter().map(|a| a.coverage.mean).collect(), true);
    for (i, a) in arms.iter_mut().enumerate() {
        a.best_throughput = t[i];
        a.best_energy = e[i];
        a.best_coverage = c[i];
    }
}

/// Builds the summary from per-run reports; the means recompute exactly
/// from `runs`.
pub fn summarise(target: String, repetitions: u32, base_rng_seed: u64, runs: Vec<RunRecord>) -> AblationSummary {
    let mut arms: Vec<ArmSummary> = ARMS
        .iter()
        .map(|&(cmin, h)| {
            let label = arm_label(cmin, h);
            let reports: Vec<&CampaignReport> = runs.iter().filter(|r| r.label == label).map(|r| &r.report).collect();
            ArmSummary::from_reports(cmin, h, &reports)
        })
        .collect();
    mark_best(&mut arms);
    AblationSummary { target, repetitions, base_rng_seed, arms, runs }
}

/// Runs all 4 × R campaigns and writes the summary files when an output
/// directory is set.
pub fn run_ablation(config: &AblationConfig, seeds: &[SeedInput]) -> Result<AblationSummary, EngineError> {
    if config.repetitions < 1 {
        return Err(EngineError::Config("repetitions must be at least 1".into()));
    }
    if config.parallel && config.base.meter != MeterKind::Synthetic {
        return Err(EngineError::Config("parallel campaigns need the synthetic meter".into()));
    }
    config.base.validate()?;

    let jobs: Vec<(u32, CminMode, FuzzHeuristics)> = (0..config.repetitions)
        .flat_map(|rep| ARMS.iter().map(move |&(c, h)| (rep, c, h)))
        .collect();
    let parallelism = if config.parallel { Parallelism::Parallel } else { Parallelism::Sequential };
    let results = map_with(
        parallelism,
        &jobs,
        || (),
        |_, &(rep, cmin, heuristics)| {
            let mut c = config.base.clone();
            c.cmin = cmin;
            c.heuristics = heuristics;
            c.rng_seed = derive_seed(config.base.rng_seed, rep);
            c.output_dir = config.output_dir.as_ref().map(|d| d.join(c.label()).join(format!("rep{rep}")));
            let report = run_campaign_with_seeds(&c, seeds)?;
            Ok::<_, EngineError>(RunRecord { label: c.label(), repetition: rep, rng_seed: c.rng_seed, report })
        },
    );
    let runs = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    let summary = summarise(config.base.target.to_string(), config.repetitions, config.base.rng_seed, runs);
    if let Some(dir) = &config.output_dir {
        write_summary(dir, &summary)?;
    }
    Ok(summary)
}

#[derive(Serialize)]
struct CsvRow<'a> {
    cmin: CminMode,
    fuzz: FuzzHeuristics,
    runs: usize,
    throughput_mean: f64,
    throughput_var: f64,
    energy_kj_mean: f64,
    energy_kj_var: f64,
    coverage_unit: &'a str,
    coverage_mean: f64,
    coverage_var: f64,
    unique_edges_mean: f64,
    initial_energy_j_mean: f64,
    initial_kept_mean: f64,
    best_throughput: bool,
    best_energy: bool,
    best_coverage: bool,
}

pub fn summary_csv(s: &AblationSummary) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for a in &s.arms {
        w.serialize(CsvRow {
            cmin: a.cmin,
            fuzz: a.heuristics,
            runs: a.runs,
            throughput_mean: a.throughput.mean,
            throughput_var: a.throughput.variance,
            energy_kj_mean: a.energy_kj.mean,
            energy_kj_var: a.energy_kj.variance,
            coverage_unit: if a.coverage_is_pct { "pct" } else { "edges" },
            coverage_mean: a.coverage.mean,
            coverage_var: a.coverage.variance,
            unique_edges_mean: a.unique_edges.mean,
            initial_energy_j_mean: a.initial_energy_j.mean,
            initial_kept_mean: a.initial_kept.mean,
            best_throughput: a.best_throughput,
            best_energy: a.best_energy,
            best_coverage: a.best_coverage,
        })
        .expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("csv is utf-8")
}

fn cell(m: &MeanVar, best: bool, prec: usize) -> String {
    format!("{:.prec$} ± {:.prec$}{}", m.mean, m.variance, if best { " *" } else { "" })
}

pub fn summary_text(s: &AblationSummary) -> String {
    let pct = s.arms.first().is_some_and(|a| a.coverage_is_pct);
    let mut out = String::new();
    let _ = writeln!(out, "target: {}  repetitions: {}  base rng seed: {}", s.target, s.repetitions, s.base_rng_seed);
    let _ = writeln!(out, "values are mean ± variance; * marks the best arm per column");
    let _ = writeln!(out);
    let cov = if pct { "coverage (%)" } else { "coverage (edges)" };
    let _ = writeln!(
        out,
        "{:<10} {:<10} {:>26} {:>26} {:>24} {:>18}",
        "cmin", "fuzz", "throughput (exec/s)", "energy (kJ)", cov, "initial corpus (J)"
    );
    for a in &s.arms {
        let _ = writeln!(
            out,
            "{:<10} {:<10} {:>26} {:>26} {:>24} {:>18.6}",
            a.cmin.to_string(),
            a.heuristics.to_string(),
            cell(&a.throughput, a.best_throughput, 1),
            cell(&a.energy_kj, a.best_energy, 6),
            cell(&a.coverage, a.best_coverage, 2),
            a.initial_energy_j.mean,
        );
    }
    out
}

pub fn write_summary(dir: &Path, s: &AblationSummary) -> Result<(), EngineError> {
    fs::create_dir_all(dir).map_err(|e| EngineError::Io(format!("{}: {e}", dir.display())))?;
    let put = |name: &str, text: String| {
        let p = dir.join(name);
        fs::write(&p, text).map_err(|e| EngineError::Io(format!("{}: {e}", p.display())))
    };
    put(SUMMARY_CSV, summary_csv(s))?;
    put(SUMMARY_TXT, summary_text(s))?;
    put(SUMMARY_JSON, serde_json::to_string_pretty(s).expect("summary serialises") + "\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{fixtures, StopCondition, TargetSpec};
    use std::collections::BTreeSet;

    fn seeds(name: &str) -> Vec<SeedInput> {
        fixtures::corpus(name).unwrap().into_iter().map(|(id, bytes)| SeedInput { id, bytes }).collect()
    }

    fn config(reps: u32, parallel: bool) -> AblationConfig {
        let mut base = CampaignConfig::new(TargetSpec::synthetic("keymatch"), "unused");
        base.stop = StopCondition::MaxExecs(1_000);
        base.rng_seed = 3;
        AblationConfig { base, repetitions: reps, parallel, output_dir: None }
    }

    #[test]
    fn mean_and_sample_variance() {
        assert_eq!(MeanVar::of(&[2.0, 4.0, 6.0]), MeanVar { mean: 4.0, variance: 4.0 });
        assert_eq!(MeanVar::of(&[5.0]), MeanVar { mean: 5.0, variance: 0.0 });
    }

    #[test]
    fn derived_seeds_are_distinct() {
        let s: BTreeSet<u64> = (0..100).map(|r| derive_seed(7, r)).collect();
        assert_eq!(s.len(), 100);
        assert_eq!(derive_seed(7, 2), derive_seed(7, 2));
    }

    #[test]
    fn zero_repetitions_rejected() {
        assert!(matches!(run_ablation(&config(0, false), &seeds("keymatch")), Err(EngineError::Config(_))));
    }

    #[test]
    fn parallel_needs_synthetic_meter() {
        let mut c = config(1, true);
        c.base.meter = MeterKind::Rapl;
        assert!(matches!(run_ablation(&c, &seeds("keymatch")), Err(EngineError::Config(_))));
    }

    #[test]
    fn single_repetition_has_zero_variance() {
        let s = run_ablation(&config(1, false), &seeds("keymatch")).unwrap();
        assert_eq!(s.runs.len(), 4);
        for a in &s.arms {
            assert_eq!(a.runs, 1);
            assert_eq!(a.throughput.variance, 0.0);
            assert_eq!(a.energy_kj.variance, 0.0);
            assert_eq!(a.coverage.variance, 0.0);
        }
    }

    #[test]
    fn parallel_matches_sequential() {
        let seq = run_ablation(&config(2, false), &seeds("keymatch")).unwrap();
        let par = run_ablation(&config(2, true), &seeds("keymatch")).unwrap();
        assert_eq!(summary_csv(&seq), summary_csv(&par));
        assert_eq!(seq, par);
    }

    #[test]
    fn arms_share_everything_but_toggles() {
        let s = run_ablation(&config(2, false), &seeds("keymatch")).unwrap();
        assert_eq!(s.runs.len(), 8);
        for rep in 0..2 {
            let digests: BTreeSet<&str> =
                s.runs.iter().filter(|r| r.repetition == rep).map(|r| r.report.base_config_digest.as_str()).collect();
            assert_eq!(digests.len(), 1);
        }
        // Means recompute from the per-run reports.
        for a in &s.arms {
            let e: Vec<f64> =
                s.runs.iter().filter(|r| r.label == a.label).map(|r| r.report.energy_j / 1000.0).collect();
            assert_eq!(MeanVar::of(&e), a.energy_kj);
        }
        assert!(s.arms.iter().any(|a| a.best_energy));
    }

    #[test]
    fn green_cmin_has_cheaper_initial_corpus() {
        let s = run_ablation(&config(1, false), &seeds("keymatch")).unwrap();
        let by = |c: CminMode| s.arms.iter().filter(move |a| a.cmin == c).map(|a| a.initial_energy_j.mean);
        for g in by(CminMode::Green) {
            for c in by(CminMode::Coverage) {
                assert!(g < c, "green {g} vs coverage {c}");
            }
        }
    }

    #[test]
    fn writes_summary_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = config(1, false);
        c.output_dir = Some(dir.path().to_path_buf());
        let s = run_ablation(&c, &seeds("keymatch")).unwrap();
        let csv = fs::read_to_string(dir.path().join(SUMMARY_CSV)).unwrap();
        assert_eq!(csv, summary_csv(&s));
        assert_eq!(csv.lines().count(), 5);
        assert!(dir.path().join("green-cmin_green-fuzz/rep0/report.json").exists());
        let txt = fs::read_to_string(dir.path().join(SUMMARY_TXT)).unwrap();
        assert!(txt.contains("±") && txt.contains('*'));
    }
}
