//! Corpus profiling and minimisation.
//!
//! Every seed is executed exactly once to obtain its edge set and energy.
//! Energy-aware minimisation then keeps, for each edge, the seed that reached
//! it with the lowest total energy. The coverage-only baseline performs the
//! classic greedy pass: walk edges in index order and, for each edge not yet
//! covered, keep the smallest (then fastest) seed that hits it.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::coverage::{EdgeId, EdgeTrace};
use crate::energy::{EnergyReading, Meter};
use crate::engine::{execute, EngineError, ExecStatus, Target};
use crate::par::{map_with, Parallelism};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("corpus configuration: {0}")]
    Config(String),
    #[error("corpus i/o: {0}")]
    Io(String),
    #[error(transparent)]
    Exec(#[from] EngineError),
}

/// A seed as read from disk, before it has been executed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeedInput {
    pub id: String,
    pub bytes: Vec<u8>,
}

/// One seed with the trace and energy of its single profiling run.
#[derive(Debug, Clone)]
pub struct SeedRecord {
    pub id: String,
    pub bytes: Vec<u8>,
    pub trace: EdgeTrace,
    pub energy: EnergyReading,
    pub exec_time_us: u64,
    pub size_bytes: usize,
}

impl SeedRecord {
    pub fn edge_count(&self) -> usize {
        self.trace.edge_count()
    }
}

/// A seed excluded from minimisation because its profiling run did not
/// finish normally.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RejectedSeed {
    pub id: String,
    pub status: ExecStatus,
    pub trace_digest: String,
}

#[derive(Debug, Clone, Default)]
pub struct Profile {
    pub records: Vec<SeedRecord>,
    pub rejected: Vec<RejectedSeed>,
    /// Energy of every profiling run, including rejected seeds.
    pub energy: EnergyReading,
    pub execs: u64,
}

/// Reads every regular file in `dir`, sorted by file name. Unreadable files
/// are skipped with a warning.
pub fn load_seed_dir(dir: &Path) -> Result<Vec<SeedInput>, CorpusError> {
    let entries = fs::read_dir(dir)
        .map_err(|e| CorpusError::Config(format!("cannot read corpus dir {}: {e}", dir.display())))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_file())
        .collect();
    paths.sort();
    let mut seeds = Vec::with_capacity(paths.len());
    for path in paths {
        match fs::read(&path) {
            Ok(bytes) => seeds.push(SeedInput {
                id: path.file_name().unwrap().to_string_lossy().into_owned(),
                bytes,
            }),
            Err(e) => log::warn!("skipping unreadable seed {}: {e}", path.display()),
        }
    }
    Ok(seeds)
}

/// Executes every seed once, recording its trace and energy. Records keep
/// input order; crashing and hanging seeds are reported separately.
///
/// Parallel profiling needs a meter that can be forked (synthetic). With a
/// hardware meter the runs are always sequential.
pub fn profile_corpus(
    seeds: &[SeedInput],
    target: &Target,
    meter: &mut Meter,
    parallelism: Parallelism,
) -> Result<Profile, CorpusError> {
    let outcomes = match meter.fork() {
        Some(template) if parallelism.is_effective() => {
            let template = std::sync::Mutex::new(template);
            map_with(
                parallelism,
                seeds,
                || {
                    let meter = template.lock().unwrap().fork().expect("synthetic meters fork");
                    (target.fork(), meter)
                },
                |(target, meter), seed| {
                    let target = target.as_ref().map_err(|e| EngineError::Io(e.to_string()))?;
                    execute(target, &seed.bytes, meter)
                },
            )
        }
        _ => seeds.iter().map(|s| execute(target, &s.bytes, meter)).collect(),
    };

    let mut profile = Profile::default();
    for (seed, outcome) in seeds.iter().zip(outcomes) {
        let result = outcome?;
        profile.execs += 1;
        profile.energy.cpu_joules += result.energy.cpu_joules;
        profile.energy.ram_joules += result.energy.ram_joules;
        profile.energy.duration_us += result.energy.duration_us;
        match result.status {
            ExecStatus::Ok => profile.records.push(SeedRecord {
                id: seed.id.clone(),
                bytes: seed.bytes.clone(),
                trace: result.trace,
                energy: result.energy,
                exec_time_us: result.exec_time_us,
                size_bytes: seed.bytes.len(),
            }),
            status => {
                log::warn!("seed {} excluded from minimisation: {:?}", seed.id, status);
                profile.rejected.push(RejectedSeed {
                    id: seed.id.clone(),
                    status,
                    trace_digest: result.trace.digest(),
                });
            }
        }
    }
    Ok(profile)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CminMode {
    Green,
    Coverage,
    Off,
}

impl fmt::Display for CminMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CminMode::Green => "green",
            CminMode::Coverage => "coverage",
            CminMode::Off => "off",
        })
    }
}

impl FromStr for CminMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "green" => Ok(CminMode::Green),
            "coverage" | "afl" => Ok(CminMode::Coverage),
            "off" | "none" => Ok(CminMode::Off),
            other => Err(format!("unknown cmin mode `{other}` (expected green, coverage or off)")),
        }
    }
}

/// Edge to the id of the seed kept for it.
pub type ChampionAssignment = BTreeMap<EdgeId, String>;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GreenMinimisation {
    pub kept: BTreeSet<String>,
    pub champions: ChampionAssignment,
}

/// Total order used to pick the cheapest seed for an edge: total energy,
/// then size, then execution time, then id.
fn energy_order(a: &SeedRecord, b: &SeedRecord) -> Ordering {
    a.energy
        .total()
        .total_cmp(&b.energy.total())
        .then(a.size_bytes.cmp(&b.size_bytes))
        .then(a.exec_time_us.cmp(&b.exec_time_us))
        .then(a.id.cmp(&b.id))
}

/// Smallest, then fastest, then lowest id.
fn size_order(a: &SeedRecord, b: &SeedRecord) -> Ordering {
    a.size_bytes
        .cmp(&b.size_bytes)
        .then(a.exec_time_us.cmp(&b.exec_time_us))
        .then(a.id.cmp(&b.id))
}

/// Keeps the seed with the smallest record under `order`, warning that the
/// corpus produced no edges at all.
fn fallback<'a>(records: &'a [SeedRecord], order: fn(&SeedRecord, &SeedRecord) -> Ordering) -> Option<&'a SeedRecord> {
    let pick = records.iter().min_by(|a, b| order(a, b))?;
    log::warn!(
        "no seed in the corpus reached any edge; keeping `{}` so the corpus is not empty",
        pick.id
    );
    Some(pick)
}

/// Per-edge minimum-energy champions.
pub fn green_minimise(records: &[SeedRecord]) -> GreenMinimisation {
    let mut best: BTreeMap<EdgeId, usize> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        for edge in r.trace.edges() {
            best.entry(edge)
                .and_modify(|cur| {
                    if energy_order(r, &records[*cur]) == Ordering::Less {
                        *cur = i;
                    }
                })
                .or_insert(i);
        }
    }
    let champions: ChampionAssignment = best.into_iter().map(|(e, i)| (e, records[i].id.clone())).collect();
    let mut kept: BTreeSet<String> = champions.values().cloned().collect();
    if kept.is_empty() {
        if let Some(r) = fallback(records, energy_order) {
            kept.insert(r.id.clone());
        }
    }
    GreenMinimisation { kept, champions }
}

/// Greedy coverage-only minimisation.
pub fn coverage_minimise(records: &[SeedRecord]) -> BTreeSet<String> {
    let mut hitters: BTreeMap<EdgeId, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        for edge in r.trace.edges() {
            hitters.entry(edge).or_default().push(i);
        }
    }
    let mut covered: HashSet<EdgeId> = HashSet::new();
    let mut kept = BTreeSet::new();
    for (edge, candidates) in &hitters {
        if covered.contains(edge) {
            continue;
        }
        let pick = candidates
            .iter()
            .map(|&i| &records[i])
            .min_by(|a, b| size_order(a, b))
            .expect("edge has at least one hitter");
        covered.extend(pick.trace.edges());
        kept.insert(pick.id.clone());
    }
    if kept.is_empty() {
        if let Some(r) = fallback(records, size_order) {
            kept.insert(r.id.clone());
        }
    }
    kept
}

/// Applies `mode` and returns the kept records in their original order.
pub fn minimise(mode: CminMode, records: &[SeedRecord]) -> Vec<SeedRecord> {
    let kept = match mode {
        CminMode::Off => return records.to_vec(),
        CminMode::Green => green_minimise(records).kept,
        CminMode::Coverage => coverage_minimise(records),
    };
    records.iter().filter(|r| kept.contains(&r.id)).cloned().collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub file: String,
    pub edges: usize,
    pub energy_j: f64,
    pub size_bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub mode: CminMode,
    pub input_seeds: usize,
    pub kept: usize,
    pub total_energy_j: f64,
    pub total_size_bytes: usize,
    pub total_edges: usize,
    pub seeds: Vec<ManifestEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

fn stable_name(id: &str) -> String {
    let base = Path::new(id).file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let clean: String = base
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-') { c } else { '_' })
        .collect();
    if clean.is_empty() || clean.chars().all(|c| c == '.') {
        "seed".to_string()
    } else {
        clean
    }
}

/// Copies the kept seeds into `out_dir` and writes `manifest.json` next to
/// them. Names derive from seed ids; collisions get a content-hash suffix.
pub fn write_minimised(
    mode: CminMode,
    input_seeds: usize,
    kept: &[SeedRecord],
    out_dir: &Path,
) -> Result<Manifest, CorpusError> {
    let io = |what: &str, e: std::io::Error| CorpusError::Io(format!("{what} in {}: {e}", out_dir.display()));
    fs::create_dir_all(out_dir).map_err(|e| io("creating output dir", e))?;

    let mut used: HashSet<String> = HashSet::new();
    used.insert(MANIFEST_FILE.to_string());
    let mut entries = Vec::with_capacity(kept.len());
    let mut union: BTreeSet<EdgeId> = BTreeSet::new();
    for r in kept {
        let mut name = stable_name(&r.id);
        if used.contains(&name) {
            let hash = hex::encode(&Sha256::digest(&r.bytes)[..4]);
            let mut candidate = format!("{name}-{hash}");
            let mut n = 1;
            while used.contains(&candidate) {
                candidate = format!("{name}-{hash}-{n}");
                n += 1;
            }
            name = candidate;
        }
        used.insert(name.clone());
        fs::write(out_dir.join(&name), &r.bytes).map_err(|e| io("writing seed", e))?;
        union.extend(r.trace.edges());
        entries.push(ManifestEntry {
            id: r.id.clone(),
            file: name,
            edges: r.edge_count(),
            energy_j: r.energy.total(),
            size_bytes: r.size_bytes,
        });
    }
    let manifest = Manifest {
        mode,
        input_seeds,
        kept: entries.len(),
        total_energy_j: entries.iter().map(|e| e.energy_j).sum(),
        total_size_bytes: entries.iter().map(|e| e.size_bytes).sum(),
        total_edges: union.len(),
        seeds: entries,
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serialises");
    fs::write(out_dir.join(MANIFEST_FILE), json + "\n").map_err(|e| io("writing manifest", e))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::MeterKind;
    use crate::engine::TargetSpec;
    use proptest::prelude::*;

    fn rec(id: &str, edges: &[usize], energy: f64, size: usize) -> SeedRecord {
        SeedRecord {
            id: id.into(),
            bytes: vec![b'x'; size],
            trace: EdgeTrace::from_hits(64, edges.iter().map(|&e| (e, 1))).unwrap(),
            energy: EnergyReading { cpu_joules: energy, ram_joules: 0.0, duration_us: 10 },
            exec_time_us: 10,
            size_bytes: size,
        }
    }

    fn ids(v: &[&str]) -> BTreeSet<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn union_edges<'a>(records: impl IntoIterator<Item = &'a SeedRecord>) -> BTreeSet<EdgeId> {
        records.into_iter().flat_map(|r| r.trace.edges().collect::<Vec<_>>()).collect()
    }

    #[test]
    fn green_picks_cheapest_per_edge() {
        let records = vec![rec("A", &[1, 2], 10.0, 4), rec("B", &[2], 2.0, 4), rec("C", &[3], 5.0, 4)];
        let m = green_minimise(&records);
        assert_eq!(m.kept, ids(&["A", "B", "C"]));
        assert_eq!(m.champions[&EdgeId(1)], "A");
        assert_eq!(m.champions[&EdgeId(2)], "B");
        assert_eq!(m.champions[&EdgeId(3)], "C");

        let records = vec![rec("A", &[1, 2], 10.0, 4), rec("B", &[1, 2], 2.0, 4)];
        assert_eq!(green_minimise(&records).kept, ids(&["B"]));
        assert_eq!(green_minimise(&records[..1]).kept, ids(&["A"]));
    }

    #[test]
    fn green_tie_break_order() {
        let mut a = rec("a", &[1], 1.0, 8);
        let b = rec("b", &[1], 1.0, 4);
        assert_eq!(green_minimise(&[a.clone(), b.clone()]).kept, ids(&["b"]));
        a.size_bytes = 4;
        a.exec_time_us = 5;
        assert_eq!(green_minimise(&[b.clone(), a.clone()]).kept, ids(&["a"]));
        a.exec_time_us = 10;
        assert_eq!(green_minimise(&[b, a]).kept, ids(&["a"]));
    }

    #[test]
    fn green_never_empties_a_corpus() {
        let records = vec![rec("big", &[], 1.0, 9), rec("small", &[], 5.0, 2)];
        assert_eq!(green_minimise(&records).kept, ids(&["big"]));
        assert!(green_minimise(&[]).kept.is_empty());
        assert_eq!(coverage_minimise(&records), ids(&["small"]));
    }

    #[test]
    fn coverage_greedy_examples() {
        let records = vec![rec("A", &[1, 2], 1.0, 10), rec("B", &[2], 1.0, 2)];
        assert_eq!(coverage_minimise(&records), ids(&["A"]));
        let records = vec![rec("A", &[1], 1.0, 10), rec("B", &[2], 1.0, 2), rec("C", &[3], 1.0, 2)];
        assert_eq!(coverage_minimise(&records), ids(&["A", "B", "C"]));
        let records = vec![rec("dup2", &[1, 4], 1.0, 3), rec("dup1", &[1, 4], 1.0, 3)];
        assert_eq!(coverage_minimise(&records), ids(&["dup1"]));
    }

    #[test]
    fn profile_three_seeds_and_a_crash() {
        let target = TargetSpec::synthetic("fork3").resolve().unwrap();
        let mut meter = Meter::open(MeterKind::Synthetic).unwrap();
        let seeds = vec![
            SeedInput { id: "a".into(), bytes: b"ABC".to_vec() },
            SeedInput { id: "boom".into(), bytes: b"!!!".to_vec() },
            SeedInput { id: "c".into(), bytes: b"abc".to_vec() },
        ];
        let p = profile_corpus(&seeds, &target, &mut meter, Parallelism::Sequential).unwrap();
        assert_eq!(p.records.iter().map(|r| r.id.as_str()).collect::<Vec<_>>(), ["a", "c"]);
        assert_eq!(p.rejected.len(), 1);
        assert_eq!(p.rejected[0].status, ExecStatus::Crash(11));
        assert_eq!(p.execs, 3);
        let again = profile_corpus(&seeds, &target, &mut meter, Parallelism::Parallel).unwrap();
        for (x, y) in p.records.iter().zip(&again.records) {
            assert_eq!(x.trace, y.trace);
            assert_eq!(x.energy, y.energy);
        }
        assert_eq!(p.energy, again.energy);

        let empty = profile_corpus(&[], &target, &mut meter, Parallelism::Sequential).unwrap();
        assert!(empty.records.is_empty());
    }

    #[test]
    fn loads_sorted_files() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("b"), b"2").unwrap();
        fs::write(dir.path().join("a"), b"1").unwrap();
        fs::create_dir(dir.path().join("sub")).unwrap();
        let seeds = load_seed_dir(dir.path()).unwrap();
        assert_eq!(seeds.iter().map(|s| s.id.as_str()).collect::<Vec<_>>(), ["a", "b"]);
        assert!(matches!(load_seed_dir(&dir.path().join("missing")), Err(CorpusError::Config(_))));
    }

    #[test]
    fn writes_manifest_with_unique_names() {
        let dir = tempfile::tempdir().unwrap();
        let mut a = rec("x/seed", &[1], 1.0, 2);
        let mut b = rec("y/seed", &[2], 2.0, 3);
        a.bytes = b"aa".to_vec();
        b.bytes = b"bbb".to_vec();
        let c = rec("odd name?", &[3], 0.5, 1);
        let m = write_minimised(CminMode::Green, 5, &[a, b, c], dir.path()).unwrap();
        assert_eq!(m.kept, 3);
        assert_eq!(m.total_edges, 3);
        let names: HashSet<_> = m.seeds.iter().map(|e| e.file.clone()).collect();
        assert_eq!(names.len(), 3);
        assert_eq!(m.seeds[0].file, "seed");
        assert!(m.seeds[1].file.starts_with("seed-"));
        assert_eq!(m.seeds[2].file, "odd_name_");
        assert_eq!(fs::read(dir.path().join(&m.seeds[1].file)).unwrap(), b"bbb");
        let text = fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap();
        let back: Manifest = serde_json::from_str(&text).unwrap();
        assert_eq!(back, m);
        assert!(text.find("\"mode\"").unwrap() < text.find("\"seeds\"").unwrap());

        let empty = tempfile::tempdir().unwrap();
        let m = write_minimised(CminMode::Coverage, 0, &[], empty.path()).unwrap();
        assert_eq!(m.kept, 0);
        assert_eq!(fs::read_dir(empty.path()).unwrap().count(), 1);
    }

    #[test]
    fn unwritable_output_is_fatal() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("plain-file");
        fs::write(&file, b"").unwrap();
        assert!(matches!(
            write_minimised(CminMode::Green, 0, &[], &file.join("out")),
            Err(CorpusError::Io(_))
        ));
    }

    fn arb_records() -> impl Strategy<Value = Vec<SeedRecord>> {
        proptest::collection::vec(
            (proptest::collection::btree_set(0usize..16, 0..6), 0u32..8, 1usize..6),
            1..9,
        )
        .prop_map(|v| {
            v.into_iter()
                .enumerate()
                .map(|(i, (edges, e, size))| {
                    rec(&format!("s{i}"), &edges.into_iter().collect::<Vec<_>>(), e as f64, size)
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn minimisers_preserve_coverage(records in arb_records()) {
            let all = union_edges(&records);
            for mode in [CminMode::Green, CminMode::Coverage] {
                let kept = minimise(mode, &records);
                prop_assert_eq!(union_edges(&kept), all.clone());
                prop_assert!(!kept.is_empty());
            }
        }

        #[test]
        fn green_is_order_independent(records in arb_records(), rot in 0usize..9) {
            let mut shuffled = records.clone();
            let n = shuffled.len();
            shuffled.rotate_left(rot % n);
            shuffled.reverse();
            prop_assert_eq!(green_minimise(&records), green_minimise(&shuffled));
        }

        #[test]
        fn champions_are_minimal(records in arb_records()) {
            let m = green_minimise(&records);
            let by_id: BTreeMap<_, _> = records.iter().map(|r| (r.id.clone(), r)).collect();
            for (edge, id) in &m.champions {
                let champ = by_id[id];
                prop_assert!(champ.trace.hits(*edge));
                for r in records.iter().filter(|r| r.trace.hits(*edge)) {
                    prop_assert!(champ.energy.total() <= r.energy.total());
                }
            }
        }
    }
}
