//! Energy-guided scheduling heuristics.
//!
//! Two places of the classic AFL loop take an energy signal:
//!
//! * Airtime. A seed's performance score, which sets how many havoc
//!   executions it gets, is multiplied by a factor between 5x (cheapest seed
//!   seen so far) and 1/5x (most expensive). The factor interpolates
//!   geometrically over the seed's energy normalised linearly into the
//!   campaign's `[min, max]` range, separately for CPU and DRAM energy; the
//!   two factors are combined by geometric mean.
//! * Favoured selection. The per-edge champion comparison `exec_us * size`
//!   is multiplied by a factor between 4/5x and 5/4x obtained from the
//!   seed's total energy normalised on a log scale, so cheaper seeds win
//!   edges and become favoured.
//!
//! With degenerate bounds (min == max) both factors are exactly 1 and the
//! scheduler behaves like the coverage-only baseline.

use serde::{Deserialize, Serialize};

use crate::corpus::SeedRecord;
use crate::coverage::EdgeId;
use crate::energy::EnergyReading;

pub const HAVOC_MAX_MULT: f64 = 16.0;

/// Guard for zero readings below meter resolution before taking logs.
pub const ENERGY_EPSILON_J: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeuristicParams {
    pub airtime_min_mult: f64,
    pub airtime_max_mult: f64,
    pub favoured_min_mult: f64,
    pub favoured_max_mult: f64,
    pub havoc_max_mult: f64,
}

impl Default for HeuristicParams {
    fn default() -> Self {
        HeuristicParams {
            airtime_min_mult: 0.2,
            airtime_max_mult: 5.0,
            favoured_min_mult: 0.8,
            favoured_max_mult: 1.25,
            havoc_max_mult: HAVOC_MAX_MULT,
        }
    }
}

impl HeuristicParams {
    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            self.airtime_min_mult,
            self.airtime_max_mult,
            self.favoured_min_mult,
            self.favoured_max_mult,
            self.havoc_max_mult,
        ];
        if positive.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            return Err("heuristic multipliers must be finite and positive".into());
        }
        if self.airtime_min_mult > self.airtime_max_mult || self.favoured_min_mult > self.favoured_max_mult {
            return Err("heuristic multiplier ranges must have min <= max".into());
        }
        Ok(())
    }
}

/// Campaign-global energy extremes. Minima only fall and maxima only rise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyBounds {
    pub min_total_j: f64,
    pub max_total_j: f64,
    pub min_cpu_j: f64,
    pub max_cpu_j: f64,
    pub min_ram_j: f64,
    pub max_ram_j: f64,
    pub observed: u64,
}

impl Default for EnergyBounds {
    fn default() -> Self {
        EnergyBounds {
            min_total_j: f64::INFINITY,
            max_total_j: f64::NEG_INFINITY,
            min_cpu_j: f64::INFINITY,
            max_cpu_j: f64::NEG_INFINITY,
            min_ram_j: f64::INFINITY,
            max_ram_j: f64::NEG_INFINITY,
            observed: 0,
        }
    }
}

impl EnergyBounds {
    pub fn observe(&mut self, e: &EnergyReading) {
        let total = e.total();
        self.min_total_j = self.min_total_j.min(total);
        self.max_total_j = self.max_total_j.max(total);
        self.min_cpu_j = self.min_cpu_j.min(e.cpu_joules);
        self.max_cpu_j = self.max_cpu_j.max(e.cpu_joules);
        self.min_ram_j = self.min_ram_j.min(e.ram_joules);
        self.max_ram_j = self.max_ram_j.max(e.ram_joules);
        self.observed += 1;
    }

    pub fn from_readings<'a>(readings: impl IntoIterator<Item = &'a EnergyReading>) -> Self {
        let mut b = EnergyBounds::default();
        for r in readings {
            b.observe(r);
        }
        b
    }

    pub fn is_initialised(&self) -> bool {
        self.observed > 0
    }
}

/// Geometric interpolation from `at_min` (value at `lo`) to `at_max` (value
/// at `hi`) over `value` normalised linearly into `[lo, hi]`. Degenerate or
/// uninitialised bounds give 1.
fn airtime_factor(value: f64, lo: f64, hi: f64, at_min: f64, at_max: f64) -> f64 {
    if !(hi > lo) || !value.is_finite() {
        return 1.0;
    }
    let s = ((value - lo) / (hi - lo)).clamp(0.0, 1.0);
    let m = at_min * (at_max / at_min).powf(s);
    m.clamp(at_min.min(at_max), at_min.max(at_max))
}

/// Airtime multiplier of a reading's total energy under the default range.
pub fn energy_perf_multiplier(e: &EnergyReading, b: &EnergyBounds) -> f64 {
    energy_perf_multiplier_with(e.total(), b.min_total_j, b.max_total_j, &HeuristicParams::default())
}

pub fn energy_perf_multiplier_with(energy_j: f64, min_j: f64, max_j: f64, p: &HeuristicParams) -> f64 {
    airtime_factor(energy_j, min_j, max_j, p.airtime_max_mult, p.airtime_min_mult)
}

/// Favoured-selection factor of a reading's total energy under the default
/// range.
pub fn favoured_factor(e: &EnergyReading, b: &EnergyBounds) -> f64 {
    favoured_factor_with(e.total(), b, &HeuristicParams::default())
}

pub fn favoured_factor_with(energy_j: f64, b: &EnergyBounds, p: &HeuristicParams) -> f64 {
    if !b.is_initialised() {
        return 1.0;
    }
    let lo = b.min_total_j.max(ENERGY_EPSILON_J);
    let hi = b.max_total_j.max(ENERGY_EPSILON_J);
    if !(hi > lo) {
        return 1.0;
    }
    let e = energy_j.max(ENERGY_EPSILON_J);
    let t = ((e.ln() - lo.ln()) / (hi.ln() - lo.ln())).clamp(0.0, 1.0);
    let f = p.favoured_min_mult * (p.favoured_max_mult / p.favoured_min_mult).powf(t);
    f.clamp(p.favoured_min_mult, p.favoured_max_mult)
}

/// Queue-wide means the base score compares against.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct QueueAverages {
    pub exec_us: f64,
    pub edges: f64,
}

impl QueueAverages {
    pub fn of(queue: &[QueueEntry]) -> Self {
        if queue.is_empty() {
            return QueueAverages::default();
        }
        let n = queue.len() as f64;
        QueueAverages {
            exec_us: queue.iter().map(|q| q.seed.exec_time_us as f64).sum::<f64>() / n,
            edges: queue.iter().map(|q| q.seed.edge_count() as f64).sum::<f64>() / n,
        }
    }
}

#[derive(Debug, Clone)]
pub struct QueueEntry {
    pub seed: SeedRecord,
    pub perf_score: f64,
    pub favoured: bool,
    pub depth: u32,
    pub handicap: u32,
    pub was_fuzzed: bool,
}

impl QueueEntry {
    pub fn new(seed: SeedRecord, depth: u32, handicap: u32) -> Self {
        QueueEntry { seed, perf_score: 0.0, favoured: false, depth, handicap, was_fuzzed: false }
    }
}

fn exec_time_factor(exec_us: f64, avg_us: f64) -> f64 {
    if avg_us <= 0.0 {
        return 1.0;
    }
    let r = exec_us / avg_us;
    if r >= 4.0 {
        0.1
    } else if r >= 3.0 {
        0.25
    } else if r >= 2.0 {
        0.5
    } else if r >= 4.0 / 3.0 {
        0.75
    } else if r <= 0.25 {
        3.0
    } else if r <= 1.0 / 3.0 {
        2.0
    } else if r <= 0.5 {
        1.5
    } else {
        1.0
    }
}

fn trace_size_factor(edges: f64, avg: f64) -> f64 {
    if edges * 0.3 > avg {
        3.0
    } else if edges * 0.5 > avg {
        2.0
    } else if edges * 0.75 > avg {
        1.5
    } else if edges * 3.0 < avg {
        0.25
    } else if edges * 2.0 < avg {
        0.5
    } else if edges * 1.5 < avg {
        0.75
    } else {
        1.0
    }
}

fn handicap_factor(handicap: u32) -> f64 {
    match handicap {
        0 => 1.0,
        1..=3 => 2.0,
        _ => 4.0,
    }
}

fn depth_factor(depth: u32) -> f64 {
    match depth {
        0..=3 => 1.0,
        4..=7 => 2.0,
        8..=13 => 3.0,
        14..=25 => 4.0,
        _ => 5.0,
    }
}

/// AFL-style performance score, clamped to `[1, 100 * havoc_max_mult]`.
pub fn base_perf_score(entry: &QueueEntry, avg: &QueueAverages, p: &HeuristicParams) -> f64 {
    let score = 100.0
        * exec_time_factor(entry.seed.exec_time_us as f64, avg.exec_us)
        * trace_size_factor(entry.seed.edge_count() as f64, avg.edges)
        * handicap_factor(entry.handicap)
        * depth_factor(entry.depth);
    score.clamp(1.0, 100.0 * p.havoc_max_mult)
}

/// Base score times the energy airtime multiplier.
pub fn scaled_perf_score(
    entry: &QueueEntry,
    b: &EnergyBounds,
    avg: &QueueAverages,
    has_ram: bool,
    p: &HeuristicParams,
) -> f64 {
    let e = &entry.seed.energy;
    let cpu = energy_perf_multiplier_with(e.cpu_joules, b.min_cpu_j, b.max_cpu_j, p);
    let mult = if has_ram {
        let ram = energy_perf_multiplier_with(e.ram_joules, b.min_ram_j, b.max_ram_j, p);
        (cpu * ram).sqrt()
    } else {
        cpu
    };
    (base_perf_score(entry, avg, p) * mult).clamp(1.0, 100.0 * p.havoc_max_mult)
}

/// Champion comparison score; lower wins.
pub fn favoured_score(seed: &SeedRecord, b: &EnergyBounds, p: &HeuristicParams) -> f64 {
    seed.exec_time_us as f64 * seed.size_bytes as f64 * favoured_factor_with(seed.energy.total(), b, p)
}

/// Coverage-only champion score.
pub fn baseline_favoured_score(seed: &SeedRecord) -> f64 {
    seed.exec_time_us as f64 * seed.size_bytes as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Champion {
    /// Index into the campaign queue.
    pub entry: usize,
    pub score: f64,
}

/// One champion per edge. Scores are frozen when a seed is evaluated.
#[derive(Debug, Clone, PartialEq)]
pub struct ChampionTable {
    slots: Vec<Option<Champion>>,
}

impl ChampionTable {
    pub fn new(map_size: usize) -> Self {
        ChampionTable { slots: vec![None; map_size] }
    }

    pub fn get(&self, edge: EdgeId) -> Option<Champion> {
        self.slots.get(edge.index()).copied().flatten()
    }

    pub fn iter(&self) -> impl Iterator<Item = (EdgeId, Champion)> + '_ {
        self.slots
            .iter()
            .enumerate()
            .filter_map(|(i, c)| c.map(|c| (EdgeId(i as u32), c)))
    }

    pub fn len(&self) -> usize {
        self.slots.iter().filter(|c| c.is_some()).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Offers `entry` with precomputed `score` for every edge of `seed`.
    /// Strictly lower scores replace; ties keep the incumbent. Returns the
    /// edges whose champion changed.
    pub fn offer(&mut self, entry: usize, seed: &SeedRecord, score: f64) -> Vec<EdgeId> {
        let mut changed = Vec::new();
        for edge in seed.trace.edges() {
            let slot = &mut self.slots[edge.index()];
            let replace = match slot {
                None => true,
                Some(c) => score < c.score,
            };
            if replace {
                *slot = Some(Champion { entry, score });
                changed.push(edge);
            }
        }
        changed
    }
}

/// Offers `seed` to the table under energy-aware scoring.
pub fn update_champions(
    table: &mut ChampionTable,
    entry: usize,
    seed: &SeedRecord,
    b: &EnergyBounds,
    p: &HeuristicParams,
) -> Vec<EdgeId> {
    table.offer(entry, seed, favoured_score(seed, b, p))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CullSummary {
    pub favoured: usize,
    pub pending_favoured: usize,
}

/// Greedy cull: walk edges in index order; an edge not yet covered in this
/// pass makes its champion favoured and covers all of that champion's edges.
pub fn cull_queue(queue: &mut [QueueEntry], table: &ChampionTable) -> CullSummary {
    for q in queue.iter_mut() {
        q.favoured = false;
    }
    let mut covered = vec![false; table.slots.len()];
    for (edge, champ) in table.iter() {
        if covered[edge.index()] {
            continue;
        }
        let q = &mut queue[champ.entry];
        for e in q.seed.trace.edges() {
            if let Some(c) = covered.get_mut(e.index()) {
                *c = true;
            }
        }
        q.favoured = true;
    }
    let favoured = queue.iter().filter(|q| q.favoured).count();
    let pending_favoured = queue.iter().filter(|q| q.favoured && !q.was_fuzzed).count();
    CullSummary { favoured, pending_favoured }
}

/// Probability of skipping `entry` in the current queue pass.
pub fn skip_probability(entry: &QueueEntry, pending_favoured: usize) -> f64 {
    if entry.favoured {
        0.0
    } else if pending_favoured > 0 {
        0.99
    } else if entry.was_fuzzed {
        0.95
    } else {
        0.75
    }
}

/// Scheduler state owned by one campaign loop.
///
/// With heuristics off no energy value is ever read: bounds stay empty,
/// airtime uses the base score and champions compare `exec_us * size`.
#[derive(Debug, Clone)]
pub struct Scheduler {
    pub params: HeuristicParams,
    pub heuristics: bool,
    pub has_ram: bool,
    bounds: EnergyBounds,
    champions: ChampionTable,
    energy_reads: u64,
}

impl Scheduler {
    pub fn new(map_size: usize, params: HeuristicParams, heuristics: bool, has_ram: bool) -> Self {
        Scheduler {
            params,
            heuristics,
            has_ram,
            bounds: EnergyBounds::default(),
            champions: ChampionTable::new(map_size),
            energy_reads: 0,
        }
    }

    pub fn bounds(&self) -> &EnergyBounds {
        &self.bounds
    }

    pub fn champions(&self) -> &ChampionTable {
        &self.champions
    }

    /// How many times scheduling consulted a seed's energy.
    pub fn energy_reads(&self) -> u64 {
        self.energy_reads
    }

    pub fn observe(&mut self, energy: &EnergyReading) {
        if self.heuristics {
            self.energy_reads += 1;
            self.bounds.observe(energy);
        }
    }

    pub fn perf_score(&mut self, entry: &QueueEntry, avg: &QueueAverages) -> f64 {
        if self.heuristics {
            self.energy_reads += 1;
            scaled_perf_score(entry, &self.bounds, avg, self.has_ram, &self.params)
        } else {
            base_perf_score(entry, avg, &self.params)
        }
    }

    pub fn update_champions(&mut self, entry: usize, seed: &SeedRecord) -> Vec<EdgeId> {
        let score = if self.heuristics {
            self.energy_reads += 1;
            favoured_score(seed, &self.bounds, &self.params)
        } else {
            baseline_favoured_score(seed)
        };
        self.champions.offer(entry, seed, score)
    }

    pub fn cull(&self, queue: &mut [QueueEntry]) -> CullSummary {
        cull_queue(queue, &self.champions)
    }
}
