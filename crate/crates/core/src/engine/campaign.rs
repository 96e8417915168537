//! Campaign orchestration: profile, minimise, then loop cull / skip /
//! fuzz_one until the stop condition, emitting stats ticks on the way.
//!
//! Under the synthetic meter the campaign clock is virtual: it advances by
//! each execution's simulated duration, so reports and plot data are
//! byte-reproducible for a fixed rng seed.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::mutate::{havoc_mutate, splice, DEFAULT_MAX_INPUT_LEN};
use super::target::{execute, ExecResult, ExecStatus, Target, TargetSpec};
use super::EngineError;
use crate::corpus::{load_seed_dir, minimise, profile_corpus, CminMode, CorpusError, SeedInput, SeedRecord};
use crate::coverage::CoverageMap;
use crate::energy::{Meter, MeterKind};
use crate::par::Parallelism;
use crate::scheduler::{skip_probability, HeuristicParams, QueueAverages, QueueEntry, Scheduler};
use crate::stats::{PlotWriter, StatsTick, PLOT_DATA_FILE, TICK_EVERY_EXECS, TICK_EVERY_SECONDS};

pub const REPORT_FILE: &str = "report.json";
pub const SCHEDULE_FILE: &str = "schedule.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FuzzHeuristics {
    Green,
    Baseline,
}

impl FuzzHeuristics {
    pub fn is_green(self) -> bool {
        self == FuzzHeuristics::Green
    }
}

impl fmt::Display for FuzzHeuristics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FuzzHeuristics::Green => "green",
            FuzzHeuristics::Baseline => "baseline",
        })
    }
}

impl FromStr for FuzzHeuristics {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "green" | "on" => Ok(FuzzHeuristics::Green),
            "baseline" | "afl" | "off" => Ok(FuzzHeuristics::Baseline),
            other => Err(format!("unknown fuzz heuristics `{other}` (expected green or baseline)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopCondition {
    /// Fuzzing executions, not counting initial profiling.
    MaxExecs(u64),
    /// Campaign clock, profiling included.
    DurationMs(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HavocParams {
    pub divisor: f64,
    pub min_execs: u32,
    /// Stack sizes are drawn from 2^1 ..= 2^max_stack_pow.
    pub max_stack_pow: u32,
    pub splice_prob: f64,
    pub max_input_len: usize,
}

impl Default for HavocParams {
    fn default() -> Self {
        HavocParams { divisor: 4.0, min_execs: 16, max_stack_pow: 7, splice_prob: 0.1, max_input_len: DEFAULT_MAX_INPUT_LEN }
    }
}

impl HavocParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.divisor.is_finite() && self.divisor > 0.0) {
            return Err("havoc divisor must be positive".into());
        }
        if self.min_execs == 0 {
            return Err("havoc min_execs must be at least 1".into());
        }
        if !(1..=16).contains(&self.max_stack_pow) {
            return Err("havoc max_stack_pow must be in 1..=16".into());
        }
        if !(0.0..=1.0).contains(&self.splice_prob) {
            return Err("splice probability must be in [0, 1]".into());
        }
        if self.max_input_len == 0 {
            return Err("max input length must be at least 1".into());
        }
        Ok(())
    }
}

/// Havoc executions granted to a seed with the given score.
pub fn havoc_exec_count(score: f64, p: &HavocParams) -> u32 {
    let n = (score / p.divisor).round();
    (n.min(u32::MAX as f64) as u32).max(p.min_execs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignConfig {
    pub target: TargetSpec,
    pub corpus_dir: PathBuf,
    pub output_dir: Option<PathBuf>,
    pub meter: MeterKind,
    pub cmin: CminMode,
    pub heuristics: FuzzHeuristics,
    pub stop: StopCondition,
    pub rng_seed: u64,
    pub params: HeuristicParams,
    pub havoc: HavocParams,
    /// Only affects how initial seeds are profiled; results are identical.
    pub profiling: Parallelism,
}

impl CampaignConfig {
    pub fn new(target: TargetSpec, corpus_dir: impl Into<PathBuf>) -> Self {
        CampaignConfig {
            target,
            corpus_dir: corpus_dir.into(),
            output_dir: None,
            meter: MeterKind::Synthetic,
            cmin: CminMode::Green,
            heuristics: FuzzHeuristics::Green,
            stop: StopCondition::MaxExecs(10_000),
            rng_seed: 0,
            params: HeuristicParams::default(),
            havoc: HavocParams::default(),
            profiling: Parallelism::Sequential,
        }
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        self.target.validate()?;
        self.params.validate().map_err(EngineError::Config)?;
        self.havoc.validate().map_err(EngineError::Config)?;
        Ok(())
    }

    /// Short arm name, e.g. `green-cmin_baseline-fuzz`.
    pub fn label(&self) -> String {
        arm_label(self.cmin, self.heuristics)
    }
}

pub fn arm_label(cmin: CminMode, heuristics: FuzzHeuristics) -> String {
    format!("{cmin}-cmin_{heuristics}-fuzz")
}

#[derive(Serialize)]
struct DigestView<'a> {
    target: &'a TargetSpec,
    corpus: &'a str,
    meter: MeterKind,
    stop: StopCondition,
    rng_seed: u64,
    params: &'a HeuristicParams,
    havoc: &'a HavocParams,
    cmin: Option<CminMode>,
    heuristics: Option<FuzzHeuristics>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn corpus_digest(seeds: &[SeedInput]) -> String {
    let mut h = Sha256::new();
    for s in seeds {
        h.update((s.id.len() as u64).to_le_bytes());
        h.update(s.id.as_bytes());
        h.update((s.bytes.len() as u64).to_le_bytes());
        h.update(&s.bytes);
    }
    hex::encode(h.finalize())
}

/// Digest of everything that shapes a campaign. With `toggles = false` the
/// two ablation toggles are left out, so all four arms share it.
pub fn config_digest(config: &CampaignConfig, corpus: &str, toggles: bool) -> String {
    let view = DigestView {
        target: &config.target,
        corpus,
        meter: config.meter,
        stop: config.stop,
        rng_seed: config.rng_seed,
        params: &config.params,
        havoc: &config.havoc,
        cmin: toggles.then_some(config.cmin),
        heuristics: toggles.then_some(config.heuristics),
    };
    sha256_hex(&serde_json::to_vec(&view).expect("config serialises"))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleStep {
    pub entry: usize,
    pub seed_id: String,
    pub havoc_execs: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InitialCorpus {
    pub input_seeds: usize,
    pub rejected: usize,
    pub kept: usize,
    pub kept_ids: Vec<String>,
    pub energy_j: f64,
    pub edges: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CampaignReport {
    pub label: String,
    pub cmin: Option<CminMode>,
    pub heuristics: Option<FuzzHeuristics>,
    pub rng_seed: u64,
    pub target: String,
    pub meter: Option<MeterKind>,
    pub config_digest: String,
    pub base_config_digest: String,
    pub corpus_digest: String,
    pub initial: InitialCorpus,
    pub profiling_execs: u64,
    pub fuzz_execs: u64,
    pub total_execs: u64,
    pub cycles: u64,
    pub elapsed_s: f64,
    pub execs_per_sec: f64,
    pub cpu_j: f64,
    pub ram_j: f64,
    pub energy_j: f64,
    pub unique_edges: usize,
    pub total_edges: Option<usize>,
    pub coverage_pct: Option<f64>,
    pub queue_len: usize,
    pub favoured: usize,
    pub crashes: usize,
    pub timeouts: u64,
    pub energy_reads: u64,
    #[serde(skip)]
    pub schedule: Vec<ScheduleStep>,
    #[serde(skip)]
    pub ticks: Vec<StatsTick>,
}

impl CampaignReport {
    pub fn read(dir: &Path) -> Result<Self, EngineError> {
        let text = fs::read_to_string(dir.join(REPORT_FILE)).map_err(|e| io_err(&dir.join(REPORT_FILE), e))?;
        serde_json::from_str(&text).map_err(|e| EngineError::Io(format!("{}: {e}", dir.display())))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FuzzOneReport {
    pub entry: usize,
    pub planned_execs: u32,
    pub executed: u32,
    pub new_entries: usize,
    pub new_crashes: usize,
}

#[derive(Debug)]
enum Clock {
    Virtual(u64),
    Wall(Instant),
}

impl Clock {
    fn now_us(&self) -> u64 {
        match self {
            Clock::Virtual(us) => *us,
            Clock::Wall(start) => start.elapsed().as_micros() as u64,
        }
    }

    fn advance(&mut self, us: u64) {
        if let Clock::Virtual(t) = self {
            *t += us.max(1);
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> EngineError {
    EngineError::Io(format!("{}: {e}", path.display()))
}

fn csv_err(e: csv::Error) -> EngineError {
    EngineError::Io(e.to_string())
}

fn corpus_err(e: CorpusError) -> EngineError {
    match e {
        CorpusError::Exec(e) => e,
        CorpusError::Config(m) => EngineError::Config(m),
        other => EngineError::Io(other.to_string()),
    }
}

/// Mutable state of one running campaign.
pub struct CampaignState<'a> {
    config: &'a CampaignConfig,
    target: Target,
    meter: Meter,
    rng: ChaCha8Rng,
    map: CoverageMap,
    sched: Scheduler,
    queue: Vec<QueueEntry>,
    champions_dirty: bool,
    pending_favoured: usize,
    crashes: BTreeSet<String>,
    timeouts: u64,
    clock: Clock,
    profiling_execs: u64,
    fuzz_execs: u64,
    cpu_j: f64,
    ram_j: f64,
    cycle: u64,
    ticks: Vec<StatsTick>,
    plot: Option<PlotWriter<fs::File>>,
    schedule: Vec<ScheduleStep>,
    out: Option<PathBuf>,
}

impl CampaignState<'_> {
    pub fn queue(&self) -> &[QueueEntry] {
        &self.queue
    }

    pub fn stopped(&self) -> bool {
        match self.config.stop {
            StopCondition::MaxExecs(n) => self.fuzz_execs >= n,
            StopCondition::DurationMs(ms) => self.clock.now_us() >= ms.saturating_mul(1000),
        }
    }

    fn total_execs(&self) -> u64 {
        self.profiling_execs + self.fuzz_execs
    }

    fn account(&mut self, res: &ExecResult) {
        self.fuzz_execs += 1;
        self.cpu_j += res.energy.cpu_joules;
        self.ram_j += res.energy.ram_joules;
        self.clock.advance(res.exec_time_us);
    }

    fn cull(&mut self) {
        let summary = self.sched.cull(&mut self.queue);
        self.pending_favoured = summary.pending_favoured;
        self.champions_dirty = false;
    }

    fn tick(&mut self, force: bool) -> Result<(), EngineError> {
        let t = self.clock.now_us() as f64 / 1e6;
        let execs = self.total_execs();
        if let Some(last) = self.ticks.last() {
            let due = execs - last.total_execs >= TICK_EVERY_EXECS || t - last.t_seconds >= TICK_EVERY_SECONDS;
            if t <= last.t_seconds || execs == last.total_execs || !(due || force) {
                return Ok(());
            }
        }
        let tick = StatsTick {
            t_seconds: t,
            total_execs: execs,
            unique_edges: self.map.unique_edges(),
            cumulative_cpu_j: self.cpu_j,
            cumulative_ram_j: self.ram_j,
            execs_per_sec: if t > 0.0 { execs as f64 / t } else { 0.0 },
            queue_len: self.queue.len(),
            favoured_count: self.queue.iter().filter(|e| e.favoured).count(),
        };
        if let Some(w) = &mut self.plot {
            w.append(&tick).map_err(csv_err)?;
        }
        self.ticks.push(tick);
        Ok(())
    }

    fn save(&self, sub: &str, name: &str, bytes: &[u8]) -> Result<(), EngineError> {
        if let Some(out) = &self.out {
            let path = out.join(sub).join(name);
            fs::write(&path, bytes).map_err(|e| io_err(&path, e))?;
        }
        Ok(())
    }

    fn enqueue(&mut self, seed: SeedRecord, depth: u32, handicap: u32, file: &str) -> Result<(), EngineError> {
        self.save("queue", file, &seed.bytes)?;
        let idx = self.queue.len();
        self.sched.observe(&seed.energy);
        if !self.sched.update_champions(idx, &seed).is_empty() {
            self.champions_dirty = true;
        }
        self.queue.push(QueueEntry::new(seed, depth, handicap));
        Ok(())
    }
}

/// Fuzzes one queue entry: scores it, runs the granted number of havoc
/// children and queues every child that adds coverage.
pub fn fuzz_one(state: &mut CampaignState<'_>, idx: usize) -> Result<FuzzOneReport, EngineError> {
    let avg = QueueAverages::of(&state.queue);
    let score = state.sched.perf_score(&state.queue[idx], &avg);
    let havoc = state.config.havoc;
    {
        let entry = &mut state.queue[idx];
        entry.perf_score = score;
        entry.handicap = if entry.handicap >= 4 { entry.handicap - 4 } else { entry.handicap.saturating_sub(1) };
    }
    let planned = havoc_exec_count(score, &havoc);
    state.schedule.push(ScheduleStep { entry: idx, seed_id: state.queue[idx].seed.id.clone(), havoc_execs: planned });

    let mut report = FuzzOneReport { entry: idx, planned_execs: planned, executed: 0, new_entries: 0, new_crashes: 0 };
    for _ in 0..planned {
        if state.stopped() {
            break;
        }
        let n = state.queue.len();
        let parent = &state.queue[idx].seed.bytes;
        let base = if n > 1 && state.rng.gen_bool(havoc.splice_prob) {
            let other = (idx + state.rng.gen_range(1..n)) % n;
            splice(parent, &state.queue[other].seed.bytes, &mut state.rng)
        } else {
            parent.clone()
        };
        let stack = 1u32 << (1 + state.rng.gen_range(0..havoc.max_stack_pow));
        let child = havoc_mutate(&base, &mut state.rng, stack, havoc.max_input_len)?;
        let res = execute(&state.target, &child, &mut state.meter)?;
        state.account(&res);
        report.executed += 1;

        match res.status {
            ExecStatus::Ok => {
                if state.map.merge_and_detect(&res.trace)?.is_novel() {
                    let seq = state.queue.len();
                    let name = format!("id_{seq:06}_src{idx:06}");
                    let file = format!("{name}.bin");
                    let seed = SeedRecord {
                        id: name,
                        size_bytes: child.len(),
                        bytes: child,
                        trace: res.trace,
                        energy: res.energy,
                        exec_time_us: res.exec_time_us,
                    };
                    let depth = state.queue[idx].depth + 1;
                    let handicap = state.cycle.saturating_sub(1) as u32;
                    state.enqueue(seed, depth, handicap, &file)?;
                    report.new_entries += 1;
                }
            }
            ExecStatus::Crash(_) => {
                let digest = res.trace.digest();
                if state.crashes.insert(digest.clone()) {
                    state.save("crashes", &format!("{digest}.bin"), &child)?;
                    report.new_crashes += 1;
                }
            }
            ExecStatus::Timeout => state.timeouts += 1,
        }
        state.tick(false)?;
    }

    let entry = &mut state.queue[idx];
    if entry.favoured && !entry.was_fuzzed {
        state.pending_favoured = state.pending_favoured.saturating_sub(1);
    }
    entry.was_fuzzed = true;
    Ok(report)
}

/// Loads the corpus directory and runs the campaign.
pub fn run_campaign(config: &CampaignConfig) -> Result<CampaignReport, EngineError> {
    config.validate()?;
    let seeds = load_seed_dir(&config.corpus_dir).map_err(corpus_err)?;
    if seeds.is_empty() {
        return Err(EngineError::Config(format!("corpus directory {} has no seeds", config.corpus_dir.display())));
    }
    run_campaign_with_seeds(config, &seeds)
}

/// Runs a campaign on seeds already in memory; `config.corpus_dir` is ignored.
pub fn run_campaign_with_seeds(config: &CampaignConfig, seeds: &[SeedInput]) -> Result<CampaignReport, EngineError> {
    config.validate()?;
    if seeds.is_empty() {
        return Err(EngineError::Config("initial corpus is empty".into()));
    }
    let corpus = corpus_digest(seeds);
    let target = config.target.resolve()?;
    let mut meter = Meter::open(config.meter)?;
    let has_ram = meter.capabilities().has_ram;
    let clock = match config.meter {
        MeterKind::Synthetic => Clock::Virtual(0),
        MeterKind::Rapl => Clock::Wall(Instant::now()),
    };

    let profile = profile_corpus(seeds, &target, &mut meter, config.profiling).map_err(corpus_err)?;
    if profile.records.is_empty() {
        return Err(EngineError::Config("every initial seed crashed or timed out".into()));
    }
    let kept = minimise(config.cmin, &profile.records);
    log::info!("{}: kept {}/{} seeds", config.label(), kept.len(), seeds.len());

    let out = config.output_dir.clone();
    let mut plot = None;
    if let Some(dir) = &out {
        for sub in ["queue", "crashes"] {
            let p = dir.join(sub);
            fs::create_dir_all(&p).map_err(|e| io_err(&p, e))?;
        }
        plot = Some(PlotWriter::create(&dir.join(PLOT_DATA_FILE)).map_err(csv_err)?);
    }

    let map_size = target.map_size();
    let mut state = CampaignState {
        config,
        target,
        meter,
        rng: ChaCha8Rng::seed_from_u64(config.rng_seed),
        map: CoverageMap::new(map_size)?,
        sched: Scheduler::new(map_size, config.params, config.heuristics.is_green(), has_ram),
        queue: Vec::with_capacity(kept.len()),
        champions_dirty: true,
        pending_favoured: 0,
        crashes: BTreeSet::new(),
        timeouts: 0,
        clock,
        profiling_execs: profile.execs,
        fuzz_execs: 0,
        cpu_j: profile.energy.cpu_joules,
        ram_j: profile.energy.ram_joules,
        cycle: 0,
        ticks: Vec::new(),
        plot,
        schedule: Vec::new(),
        out,
    };
    state.clock.advance(profile.energy.duration_us);

    let initial = InitialCorpus {
        input_seeds: seeds.len(),
        rejected: profile.rejected.len(),
        kept: kept.len(),
        kept_ids: kept.iter().map(|r| r.id.clone()).collect(),
        energy_j: kept.iter().map(|r| r.energy.total()).sum(),
        edges: 0,
    };
    // Bounds see the whole initial queue before any champion is scored.
    for r in &kept {
        state.map.merge_and_detect(&r.trace)?;
        state.sched.observe(&r.energy);
    }
    for (seq, r) in kept.into_iter().enumerate() {
        let file = format!("id_{seq:06}_orig.bin");
        state.save("queue", &file, &r.bytes)?;
        if !state.sched.update_champions(seq, &r).is_empty() {
            state.champions_dirty = true;
        }
        state.queue.push(QueueEntry::new(r, 0, 0));
    }
    let initial = InitialCorpus { edges: state.map.unique_edges(), ..initial };
    state.cull();
    state.tick(true)?;

    while !state.stopped() {
        state.cycle += 1;
        let n = state.queue.len();
        for idx in 0..n {
            if state.stopped() {
                break;
            }
            if state.champions_dirty {
                state.cull();
            }
            let p = skip_probability(&state.queue[idx], state.pending_favoured);
            if p > 0.0 && state.rng.gen::<f64>() < p {
                continue;
            }
            fuzz_one(&mut state, idx)?;
        }
    }
    if state.champions_dirty {
        state.cull();
    }
    state.tick(true)?;

    let elapsed_s = state.clock.now_us() as f64 / 1e6;
    let total_execs = state.total_execs();
    let unique_edges = state.map.unique_edges();
    let total_edges = config.target.total_edges();
    let report = CampaignReport {
        label: config.label(),
        cmin: Some(config.cmin),
        heuristics: Some(config.heuristics),
        rng_seed: config.rng_seed,
        target: config.target.to_string(),
        meter: Some(config.meter),
        config_digest: config_digest(config, &corpus, true),
        base_config_digest: config_digest(config, &corpus, false),
        corpus_digest: corpus,
        initial,
        profiling_execs: state.profiling_execs,
        fuzz_execs: state.fuzz_execs,
        total_execs,
        cycles: state.cycle,
        elapsed_s,
        execs_per_sec: if elapsed_s > 0.0 { total_execs as f64 / elapsed_s } else { 0.0 },
        cpu_j: state.cpu_j,
        ram_j: state.ram_j,
        energy_j: state.cpu_j + state.ram_j,
        unique_edges,
        total_edges,
        coverage_pct: total_edges.filter(|&t| t > 0).map(|t| 100.0 * unique_edges as f64 / t as f64),
        queue_len: state.queue.len(),
        favoured: state.queue.iter().filter(|e| e.favoured).count(),
        crashes: state.crashes.len(),
        timeouts: state.timeouts,
        energy_reads: state.sched.energy_reads(),
        schedule: std::mem::take(&mut state.schedule),
        ticks: std::mem::take(&mut state.ticks),
    };
    if let Some(dir) = &state.out {
        write_report_files(dir, &report)?;
    }
    Ok(report)
}

fn write_report_files(dir: &Path, report: &CampaignReport) -> Result<(), EngineError> {
    let path = dir.join(REPORT_FILE);
    let json = serde_json::to_string_pretty(report).expect("report serialises");
    fs::write(&path, json + "\n").map_err(|e| io_err(&path, e))?;

    let path = dir.join(SCHEDULE_FILE);
    let mut w = csv::Writer::from_path(&path).map_err(csv_err)?;
    for step in &report.schedule {
        w.serialize(step).map_err(csv_err)?;
    }
    w.flush().map_err(|e| io_err(&path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::fixtures;
    use crate::stats::{check_monotone, read_plot_data};

    fn seeds(model: &str) -> Vec<SeedInput> {
        fixtures::corpus(model)
            .unwrap()
            .into_iter()
            .map(|(id, bytes)| SeedInput { id, bytes })
            .collect()
    }

    fn config(model: &str, execs: u64, rng: u64) -> CampaignConfig {
        let mut c = CampaignConfig::new(TargetSpec::synthetic(model), "unused");
        c.stop = StopCondition::MaxExecs(execs);
        c.rng_seed = rng;
        c
    }

    #[test]
    fn havoc_count_rule() {
        let p = HavocParams::default();
        assert_eq!(havoc_exec_count(100.0, &p), 25);
        assert_eq!(havoc_exec_count(500.0, &p), 125);
        assert_eq!(havoc_exec_count(10.0, &p), 16);
        assert_eq!(havoc_exec_count(1600.0, &p), 400);
    }

    #[test]
    fn labels_and_parsing() {
        assert_eq!(arm_label(CminMode::Green, FuzzHeuristics::Baseline), "green-cmin_baseline-fuzz");
        assert_eq!("afl".parse::<FuzzHeuristics>().unwrap(), FuzzHeuristics::Baseline);
        assert!("maybe".parse::<FuzzHeuristics>().is_err());
    }

    #[test]
    fn campaign_is_deterministic() {
        let c = config("keymatch", 10_000, 7);
        let a = run_campaign_with_seeds(&c, &seeds("keymatch")).unwrap();
        let b = run_campaign_with_seeds(&c, &seeds("keymatch")).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.fuzz_execs, 10_000);
        assert_eq!(a.total_execs, a.profiling_execs + a.fuzz_execs);
    }

    #[test]
    fn execs_are_conserved() {
        let r = run_campaign_with_seeds(&config("fork3", 3_000, 1), &seeds("fork3")).unwrap();
        let fuzzed: u64 = r.schedule.iter().map(|s| s.havoc_execs as u64).sum();
        // The last fuzz_one may be cut short by the stop condition.
        assert!(fuzzed >= r.fuzz_execs);
        assert_eq!(r.ticks.last().unwrap().total_execs, r.total_execs);
        check_monotone(&r.ticks).unwrap();
    }

    #[test]
    fn zero_execs_profiles_only() {
        let r = run_campaign_with_seeds(&config("keymatch", 0, 3), &seeds("keymatch")).unwrap();
        assert_eq!(r.fuzz_execs, 0);
        assert_eq!(r.total_execs, r.profiling_execs);
        assert!(r.schedule.is_empty());
        assert_eq!(r.ticks.len(), 1);
    }

    #[test]
    fn four_arms_share_base_digest() {
        let s = seeds("keymatch");
        let mut digests = BTreeSet::new();
        let mut full = BTreeSet::new();
        for cmin in [CminMode::Coverage, CminMode::Green] {
            for h in [FuzzHeuristics::Baseline, FuzzHeuristics::Green] {
                let mut c = config("keymatch", 500, 11);
                c.cmin = cmin;
                c.heuristics = h;
                let r = run_campaign_with_seeds(&c, &s).unwrap();
                digests.insert(r.base_config_digest);
                full.insert(r.config_digest);
            }
        }
        assert_eq!(digests.len(), 1);
        assert_eq!(full.len(), 4);
    }

    #[test]
    fn baseline_reads_no_energy() {
        let mut c = config("keymatch", 2_000, 5);
        c.heuristics = FuzzHeuristics::Baseline;
        let r = run_campaign_with_seeds(&c, &seeds("keymatch")).unwrap();
        assert_eq!(r.energy_reads, 0);
        c.heuristics = FuzzHeuristics::Green;
        let r = run_campaign_with_seeds(&c, &seeds("keymatch")).unwrap();
        assert!(r.energy_reads > 0);
    }

    #[test]
    fn queued_children_replay_to_same_trace() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = config("nested", 3_000, 9);
        c.output_dir = Some(dir.path().to_path_buf());
        let r = run_campaign_with_seeds(&c, &seeds("nested")).unwrap();
        assert!(r.queue_len > r.initial.kept, "campaign found nothing new");

        let target = c.target.resolve().unwrap();
        let mut meter = Meter::open(MeterKind::Synthetic).unwrap();
        let mut files: Vec<_> = fs::read_dir(dir.path().join("queue")).unwrap().map(|e| e.unwrap().path()).collect();
        files.sort();
        assert_eq!(files.len(), r.queue_len);
        let mut map = CoverageMap::new(target.map_size()).unwrap();
        for f in &files {
            let bytes = fs::read(f).unwrap();
            let a = execute(&target, &bytes, &mut meter).unwrap();
            let b = execute(&target, &bytes, &mut meter).unwrap();
            assert_eq!(a.status, ExecStatus::Ok);
            assert_eq!(a.trace, b.trace);
            map.merge_and_detect(&a.trace).unwrap();
        }
        assert_eq!(map.unique_edges(), r.unique_edges);

        let ticks = read_plot_data(&dir.path().join(PLOT_DATA_FILE)).unwrap();
        assert_eq!(ticks, r.ticks);
        let back = CampaignReport::read(dir.path()).unwrap();
        assert_eq!(back.total_execs, r.total_execs);
        assert_eq!(back.rng_seed, 9);
    }

    #[test]
    fn crashes_are_deduplicated() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = config("keymatch", 20_000, 2);
        c.output_dir = Some(dir.path().to_path_buf());
        let r = run_campaign_with_seeds(&c, &seeds("keymatch")).unwrap();
        let saved = fs::read_dir(dir.path().join("crashes")).unwrap().count();
        assert_eq!(saved, r.crashes);
    }

    #[test]
    fn duration_stop_uses_campaign_clock() {
        let mut c = config("fork3", 0, 4);
        c.stop = StopCondition::DurationMs(200);
        let r = run_campaign_with_seeds(&c, &seeds("fork3")).unwrap();
        assert!(r.elapsed_s >= 0.2 && r.elapsed_s < 0.21, "{}", r.elapsed_s);
    }

    #[test]
    fn empty_corpus_is_fatal() {
        assert!(matches!(
            run_campaign_with_seeds(&config("fork3", 10, 0), &[]),
            Err(EngineError::Config(_))
        ));
        let dir = tempfile::tempdir().unwrap();
        let mut c = config("fork3", 10, 0);
        c.corpus_dir = dir.path().to_path_buf();
        assert!(matches!(run_campaign(&c), Err(EngineError::Config(_))));
    }
}
