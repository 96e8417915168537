//! Edge coverage: per-execution traces, AFL hit-count classes and the
//! campaign-global virgin map used for novelty detection.

use std::fmt;
use std::str::FromStr;

use sha2::{Digest, Sha256};
use thiserror::Error;

/// Default number of edge slots in a coverage map.
pub const MAP_SIZE_DEFAULT: usize = 1 << 16;

/// The nine hit-count classes a trace slot may hold.
pub const HIT_CLASSES: [u8; 9] = [0, 1, 2, 3, 4, 8, 16, 32, 128];

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CoverageError {
    #[error("coverage map size {0} is not a nonzero power of two")]
    BadMapSize(usize),
    #[error("trace has {trace} slots but the map has {map}")]
    SizeMismatch { map: usize, trace: usize },
    #[error("edge {edge} is outside a map of {map_size} slots")]
    EdgeOutOfRange { edge: usize, map_size: usize },
    #[error("showmap line {line}: {reason}")]
    Showmap { line: usize, reason: String },
}

pub fn check_map_size(map_size: usize) -> Result<(), CoverageError> {
    if map_size == 0 || !map_size.is_power_of_two() {
        return Err(CoverageError::BadMapSize(map_size));
    }
    Ok(())
}

/// Index of one instrumented edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EdgeId(pub u32);

impl EdgeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for EdgeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "e{}", self.0)
    }
}

/// Bucket a raw hit count into its class.
pub fn classify_count(count: u32) -> u8 {
    match count {
        0 => 0,
        1 => 1,
        2 => 2,
        3 => 3,
        4..=7 => 4,
        8..=15 => 8,
        16..=31 => 16,
        32..=127 => 32,
        _ => 128,
    }
}

/// Classified hit counts of a single execution. Immutable once built.
#[derive(Clone, PartialEq, Eq)]
pub struct EdgeTrace {
    buckets: Box<[u8]>,
}

impl fmt::Debug for EdgeTrace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EdgeTrace")
            .field("map_size", &self.buckets.len())
            .field("hits", &self.iter_hits().collect::<Vec<_>>())
            .finish()
    }
}

impl EdgeTrace {
    pub fn empty(map_size: usize) -> Self {
        EdgeTrace { buckets: vec![0; map_size].into_boxed_slice() }
    }

    /// Builds a trace from `(edge, raw count)` pairs; counts for the same
    /// edge accumulate before classification.
    pub fn from_hits<I>(map_size: usize, hits: I) -> Result<Self, CoverageError>
    where
        I: IntoIterator<Item = (usize, u32)>,
    {
        let mut raw = vec![0u32; map_size];
        for (edge, count) in hits {
            let slot = raw
                .get_mut(edge)
                .ok_or(CoverageError::EdgeOutOfRange { edge, map_size })?;
            *slot = slot.saturating_add(count);
        }
        Ok(classify_counts(&raw))
    }

    pub fn map_size(&self) -> usize {
        self.buckets.len()
    }

    pub fn buckets(&self) -> &[u8] {
        &self.buckets
    }

    pub fn class_of(&self, edge: EdgeId) -> u8 {
        self.buckets.get(edge.index()).copied().unwrap_or(0)
    }

    pub fn hits(&self, edge: EdgeId) -> bool {
        self.class_of(edge) != 0
    }

    /// Nonzero `(edge, class)` pairs in index order.
    pub fn iter_hits(&self) -> impl Iterator<Item = (EdgeId, u8)> + '_ {
        self.buckets
            .iter()
            .enumerate()
            .filter(|(_, &c)| c != 0)
            .map(|(i, &c)| (EdgeId(i as u32), c))
    }

    pub fn edges(&self) -> impl Iterator<Item = EdgeId> + '_ {
        self.iter_hits().map(|(e, _)| e)
    }

    /// Number of edges hit.
    pub fn edge_count(&self) -> usize {
        self.buckets.iter().filter(|&&c| c != 0).count()
    }

    /// Hex digest of the classified buckets; used as crash dedup key.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        for (edge, class) in self.iter_hits() {
            hasher.update(edge.0.to_le_bytes());
            hasher.update([class]);
        }
        hex::encode(&hasher.finalize()[..8])
    }

    /// Renders the trace in showmap format: `edge:class` per line.
    pub fn to_showmap(&self) -> String {
        let mut out = String::new();
        for (edge, class) in self.iter_hits() {
            out.push_str(&format!("{}:{}\n", edge.0, class));
        }
        out
    }

    /// Parses showmap lines. Values may be raw counts or classes; both are
    /// classified. Blank lines are ignored and repeated edges accumulate.
    pub fn parse_showmap(text: &str, map_size: usize) -> Result<Self, CoverageError> {
        let mut hits = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let bad = |reason: &str| CoverageError::Showmap { line: n + 1, reason: reason.to_string() };
            let (edge, count) = line.split_once(':').ok_or_else(|| bad("expected `edge:count`"))?;
            let edge = usize::from_str(edge.trim()).map_err(|_| bad("edge is not a decimal integer"))?;
            let count = u32::from_str(count.trim()).map_err(|_| bad("count is not a decimal integer"))?;
            if edge >= map_size {
                return Err(CoverageError::EdgeOutOfRange { edge, map_size });
            }
            hits.push((edge, count));
        }
        EdgeTrace::from_hits(map_size, hits)
    }
}

/// Classify every slot of a raw hit-count array.
pub fn classify_counts(raw: &[u32]) -> EdgeTrace {
    EdgeTrace {
        buckets: raw.iter().map(|&c| classify_count(c)).collect(),
    }
}

/// Edges with a nonzero class, in index order.
pub fn edges_of(trace: &EdgeTrace) -> Vec<EdgeId> {
    trace.edges().collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct NoveltyReport {
    /// Edges never seen before this trace.
    pub new_edges: usize,
    /// Previously seen edges that gained an unseen hit class.
    pub new_classes: usize,
}

impl NoveltyReport {
    pub fn is_novel(&self) -> bool {
        self.new_edges > 0 || self.new_classes > 0
    }
}

/// Campaign-global union of observed hit classes.
///
/// Single writer; readers only between merges.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoverageMap {
    virgin: Box<[u8]>,
    unique_edges: usize,
}

impl CoverageMap {
    pub fn new(map_size: usize) -> Result<Self, CoverageError> {
        check_map_size(map_size)?;
        Ok(CoverageMap { virgin: vec![0; map_size].into_boxed_slice(), unique_edges: 0 })
    }

    pub fn map_size(&self) -> usize {
        self.virgin.len()
    }

    pub fn unique_edges(&self) -> usize {
        self.unique_edges
    }

    pub fn seen(&self, edge: EdgeId) -> u8 {
        self.virgin.get(edge.index()).copied().unwrap_or(0)
    }

    /// Novelty of `trace` against the map, without modifying it.
    pub fn novelty(&self, trace: &EdgeTrace) -> Result<NoveltyReport, CoverageError> {
        self.check(trace)?;
        let mut report = NoveltyReport::default();
        for (edge, class) in trace.iter_hits() {
            let seen = self.virgin[edge.index()];
            if seen == 0 {
                report.new_edges += 1;
            } else if seen & class != class {
                report.new_classes += 1;
            }
        }
        Ok(report)
    }

    /// ORs the trace's classes into the map and reports what was new.
    pub fn merge_and_detect(&mut self, trace: &EdgeTrace) -> Result<NoveltyReport, CoverageError> {
        let report = self.novelty(trace)?;
        for (edge, class) in trace.iter_hits() {
            self.virgin[edge.index()] |= class;
        }
        self.unique_edges += report.new_edges;
        Ok(report)
    }

    fn check(&self, trace: &EdgeTrace) -> Result<(), CoverageError> {
        if trace.map_size() != self.map_size() {
            return Err(CoverageError::SizeMismatch { map: self.map_size(), trace: trace.map_size() });
        }
        Ok(())
    }
}
