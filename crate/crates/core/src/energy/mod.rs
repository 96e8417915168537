//! Energy measurement of single target executions.
//!
//! A measurement brackets one execution: snapshot the counters, run, snapshot
//! again and attribute the whole delta to that execution. Two backends exist:
//! Intel RAPL through the powercap sysfs tree, and a deterministic synthetic
//! meter that reports the cost charged by synthetic targets.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub mod rapl;
pub mod synthetic;

pub use rapl::{counter_delta, rapl_read, RaplDomain, RaplDomainKind, RaplMeter, POWERCAP_ROOT};
pub use synthetic::{synthetic_cost, CostModel, HitRecorder, ProgramExit, SyntheticMeter, SyntheticProgram, SyntheticTarget};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EnergyError {
    #[error("energy meter unavailable: {0}")]
    MeterUnavailable(String),
    #[error("permission denied reading {path}: {hint}")]
    PermissionDenied { path: String, hint: String },
    #[error("energy meter fault: {0}")]
    MeterFault(String),
    #[error("the RAPL meter is already owned by another worker")]
    Busy,
}

/// Energy attributed to one measured interval.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyReading {
    /// Package domain.
    pub cpu_joules: f64,
    /// DRAM domain, 0 when the meter has no DRAM counter.
    pub ram_joules: f64,
    pub duration_us: u64,
}

impl EnergyReading {
    pub fn new(cpu_joules: f64, ram_joules: f64, duration_us: u64) -> Result<Self, EnergyError> {
        for (name, v) in [("cpu", cpu_joules), ("ram", ram_joules)] {
            if !v.is_finite() || v < 0.0 {
                return Err(EnergyError::MeterFault(format!("{name} energy {v} is not a finite nonnegative value")));
            }
        }
        Ok(EnergyReading { cpu_joules, ram_joules, duration_us })
    }

    pub fn total(&self) -> f64 {
        self.cpu_joules + self.ram_joules
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MeterCapabilities {
    pub has_cpu: bool,
    pub has_ram: bool,
    pub resolution_uj: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeterKind {
    Rapl,
    Synthetic,
}

impl fmt::Display for MeterKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MeterKind::Rapl => "rapl",
            MeterKind::Synthetic => "synthetic",
        })
    }
}

impl FromStr for MeterKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "rapl" => Ok(MeterKind::Rapl),
            "synthetic" => Ok(MeterKind::Synthetic),
            other => Err(format!("unknown meter `{other}` (expected rapl or synthetic)")),
        }
    }
}

/// Work charged by a synthetic target during one execution.
///
/// Hardware meters ignore it; the synthetic meter reports it verbatim.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct WorkSink {
    pub cpu_joules: f64,
    pub ram_joules: f64,
    pub time_us: u64,
}

impl WorkSink {
    pub fn charge(&mut self, cost: &EnergyReading) {
        self.cpu_joules += cost.cpu_joules;
        self.ram_joules += cost.ram_joules;
        self.time_us += cost.duration_us;
    }
}

/// An exclusive energy meter. `&mut self` on [`Meter::measure_around`]
/// guarantees at most one measurement in flight per meter.
#[derive(Debug)]
pub enum Meter {
    Synthetic(SyntheticMeter),
    Rapl(RaplMeter),
}

impl Meter {
    /// Opens a meter of the given kind with default settings.
    pub fn open(kind: MeterKind) -> Result<Self, EnergyError> {
        match kind {
            MeterKind::Synthetic => Ok(Meter::Synthetic(SyntheticMeter::default())),
            MeterKind::Rapl => Ok(Meter::Rapl(RaplMeter::open(POWERCAP_ROOT)?)),
        }
    }

    pub fn kind(&self) -> MeterKind {
        match self {
            Meter::Synthetic(_) => MeterKind::Synthetic,
            Meter::Rapl(_) => MeterKind::Rapl,
        }
    }

    pub fn capabilities(&self) -> MeterCapabilities {
        match self {
            Meter::Synthetic(m) => m.capabilities(),
            Meter::Rapl(m) => m.capabilities(),
        }
    }

    /// A fresh, independent instance for a parallel worker. Only synthetic
    /// meters can be forked; RAPL is a single system-wide resource.
    pub fn fork(&self) -> Option<Meter> {
        match self {
            Meter::Synthetic(m) => Some(Meter::Synthetic(m.clone())),
            Meter::Rapl(_) => None,
        }
    }

    /// Runs `exec`, attributing the energy of the bracketed interval to it.
    pub fn measure_around<T>(
        &mut self,
        exec: impl FnOnce(&mut WorkSink) -> T,
    ) -> Result<(T, EnergyReading), EnergyError> {
        match self {
            Meter::Synthetic(m) => m.measure_around(exec),
            Meter::Rapl(m) => m.measure_around(exec),
        }
    }
}
