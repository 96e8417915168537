//! TOML configuration file and its merge with command-line flags.
//!
//! Every key has a flag of the same name (dashes for underscores).
//! Precedence: flag, then `GREENFUZZ_METER` (meter only), then the file,
//! then built-in defaults.
//!
//! ```toml
//! target = "synthetic:keymatch"   # or "exec:./harness @@"
//! corpus_dir = "seeds"
//! output_dir = "out"
//! meter = "synthetic"             # or "rapl"
//! cmin = "green"                  # green | coverage | off
//! heuristics = "green"            # green | baseline
//! max_execs = 50000               # or: duration = "10m"
//! rng_seed = 7
//! timeout_ms = 1000
//! total_edges = 183
//! map_size = 65536
//! parallel_profiling = false
//!
//! [scheduler]
//! airtime_min_mult = 0.2
//! airtime_max_mult = 5.0
//! favoured_min_mult = 0.8
//! favoured_max_mult = 1.25
//! havoc_max_mult = 16.0
//!
//! [havoc]
//! divisor = 4.0
//! min_execs = 16
//! max_stack_pow = 7
//! splice_prob = 0.1
//! max_input_len = 1048576
//!
//! [ablate]
//! repetitions = 3
//! parallel = false
//! ```

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::CminMode;
use crate::energy::MeterKind;
use crate::engine::{CampaignConfig, FuzzHeuristics, HavocParams, StopCondition, TargetSpec};
use crate::par::Parallelism;
use crate::scheduler::HeuristicParams;

pub const METER_ENV: &str = "GREENFUZZ_METER";
pub const DEFAULT_MAX_EXECS: u64 = 10_000;

#[derive(Debug, Error, PartialEq, Eq)]
#[error("{0}")]
pub struct ConfigError(pub String);

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchedulerSection {
    pub airtime_min_mult: Option<f64>,
    pub airtime_max_mult: Option<f64>,
    pub favoured_min_mult: Option<f64>,
    pub favoured_max_mult: Option<f64>,
    pub havoc_max_mult: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HavocSection {
    pub divisor: Option<f64>,
    pub min_execs: Option<u32>,
    pub max_stack_pow: Option<u32>,
    pub splice_prob: Option<f64>,
    pub max_input_len: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblateSection {
    pub repetitions: Option<u32>,
    pub parallel: Option<bool>,
}

/// Every setting is optional; missing ones fall back to defaults. Command
/// line flags produce the same structure and are layered on top.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    pub target: Option<String>,
    pub corpus_dir: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub meter: Option<String>,
    pub cmin: Option<String>,
    pub heuristics: Option<String>,
    pub max_execs: Option<u64>,
    pub duration: Option<String>,
    pub rng_seed: Option<u64>,
    pub timeout_ms: Option<u64>,
    pub total_edges: Option<usize>,
    pub map_size: Option<usize>,
    pub parallel_profiling: Option<bool>,
    pub scheduler: SchedulerSection,
    pub havoc: HavocSection,
    pub ablate: AblateSection,
}

fn pick<T>(top: Option<T>, bottom: Option<T>) -> Option<T> {
    top.or(bottom)
}

impl Settings {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError(format!("invalid config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| ConfigError(format!("{}: {}", path.display(), e.0)))
    }

    /// `self` wins wherever it has a value.
    pub fn over(self, base: Settings) -> Settings {
        let s = self.scheduler;
        let b = base.scheduler;
        let h = self.havoc;
        let hb = base.havoc;
        Settings {
            target: pick(self.target, base.target),
            corpus_dir: pick(self.corpus_dir, base.corpus_dir),
            output_dir: pick(self.output_dir, base.output_dir),
            meter: pick(self.meter, base.meter),
            cmin: pick(self.cmin, base.cmin),
            heuristics: pick(self.heuristics, base.heuristics),
            // A stop condition given at one level replaces both at the lower.
            max_execs: if self.max_execs.is_some() || self.duration.is_some() { self.max_execs } else { base.max_execs },
            duration: if self.max_execs.is_some() || self.duration.is_some() { self.duration } else { base.duration },
            rng_seed: pick(self.rng_seed, base.rng_seed),
            timeout_ms: pick(self.timeout_ms, base.timeout_ms),
            total_edges: pick(self.total_edges, base.total_edges),
            map_size: pick(self.map_size, base.map_size),
            parallel_profiling: pick(self.parallel_profiling, base.parallel_profiling),
            scheduler: SchedulerSection {
                airtime_min_mult: pick(s.airtime_min_mult, b.airtime_min_mult),
                airtime_max_mult: pick(s.airtime_max_mult, b.airtime_max_mult),
                favoured_min_mult: pick(s.favoured_min_mult, b.favoured_min_mult),
                favoured_max_mult: pick(s.favoured_max_mult, b.favoured_max_mult),
                havoc_max_mult: pick(s.havoc_max_mult, b.havoc_max_mult),
            },
            havoc: HavocSection {
                divisor: pick(h.divisor, hb.divisor),
                min_execs: pick(h.min_execs, hb.min_execs),
                max_stack_pow: pick(h.max_stack_pow, hb.max_stack_pow),
                splice_prob: pick(h.splice_prob, hb.splice_prob),
                max_input_len: pick(h.max_input_len, hb.max_input_len),
            },
            ablate: AblateSection {
                repetitions: pick(self.ablate.repetitions, base.ablate.repetitions),
                parallel: pick(self.ablate.parallel, base.ablate.parallel),
            },
        }
    }

    /// Builds a campaign config around an already resolved meter.
    pub fn to_campaign(&self, meter: MeterKind) -> Result<CampaignConfig, ConfigError> {
        let target = self.target.as_deref().ok_or_else(|| ConfigError("no target given (--target)".into()))?;
        let mut spec: TargetSpec = target.parse().map_err(|e: crate::engine::EngineError| ConfigError(e.to_string()))?;
        if let Some(t) = self.timeout_ms {
            spec.timeout_ms = t;
        }
        if self.total_edges.is_some() {
            spec.total_edges_declared = self.total_edges;
        }
        if let Some(m) = self.map_size {
            spec.map_size = m;
        }
        let corpus_dir =
            self.corpus_dir.clone().ok_or_else(|| ConfigError("no corpus directory given (--corpus)".into()))?;
        let stop = match (self.max_execs, &self.duration) {
            (Some(_), Some(_)) => {
                return Err(ConfigError("give either max_execs or duration, not both".into()));
            }
            (Some(n), None) => StopCondition::MaxExecs(n),
            (None, Some(d)) => StopCondition::DurationMs(parse_duration(d)?.as_millis() as u64),
            (None, None) => StopCondition::MaxExecs(DEFAULT_MAX_EXECS),
        };

        let d = HeuristicParams::default();
        let s = &self.scheduler;
        let params = HeuristicParams {
            airtime_min_mult: s.airtime_min_mult.unwrap_or(d.airtime_min_mult),
            airtime_max_mult: s.airtime_max_mult.unwrap_or(d.airtime_max_mult),
            favoured_min_mult: s.favoured_min_mult.unwrap_or(d.favoured_min_mult),
            favoured_max_mult: s.favoured_max_mult.unwrap_or(d.favoured_max_mult),
            havoc_max_mult: s.havoc_max_mult.unwrap_or(d.havoc_max_mult),
        };
        let hd = HavocParams::default();
        let h = &self.havoc;
        let havoc = HavocParams {
            divisor: h.divisor.unwrap_or(hd.divisor),
            min_execs: h.min_execs.unwrap_or(hd.min_execs),
            max_stack_pow: h.max_stack_pow.unwrap_or(hd.max_stack_pow),
            splice_prob: h.splice_prob.unwrap_or(hd.splice_prob),
            max_input_len: h.max_input_len.unwrap_or(hd.max_input_len),
        };

        let mut c = CampaignConfig::new(spec, corpus_dir);
        c.output_dir = self.output_dir.clone();
        c.meter = meter;
        c.cmin = parse_opt(self.cmin.as_deref(), CminMode::Green)?;
        c.heuristics = parse_opt(self.heuristics.as_deref(), FuzzHeuristics::Green)?;
        c.stop = stop;
        c.rng_seed = self.rng_seed.unwrap_or(0);
        c.params = params;
        c.havoc = havoc;
        c.profiling =
            if self.parallel_profiling.unwrap_or(false) { Parallelism::Parallel } else { Parallelism::Sequential };
        c.validate().map_err(|e| ConfigError(e.to_string()))?;
        Ok(c)
    }
}

fn parse_opt<T: std::str::FromStr<Err = String>>(v: Option<&str>, default: T) -> Result<T, ConfigError> {
    v.map_or(Ok(default), |s| s.parse().map_err(ConfigError))
}

fn parse_meter(v: Option<&str>, env: Option<&str>) -> Result<MeterKind, ConfigError> {
    match v.or(env) {
        Some(s) => s.parse().map_err(ConfigError),
        None => Ok(MeterKind::Synthetic),
    }
}

/// Meter precedence: flag, then the environment, then the file, then the
/// synthetic default.
pub fn resolve_meter(flag: Option<&str>, env: Option<&str>, file: Option<&str>) -> Result<MeterKind, ConfigError> {
    parse_meter(flag.or(env), file)
}

/// Parses `500ms`, `10s`, `5m`, `2h` or a bare number of seconds.
pub fn parse_duration(s: &str) -> Result<Duration, ConfigError> {
    let s = s.trim();
    let split = s.find(|c: char| !(c.is_ascii_digit() || c == '.')).unwrap_or(s.len());
    let (num, unit) = s.split_at(split);
    let v: f64 = num.parse().map_err(|_| ConfigError(format!("invalid duration `{s}`")))?;
    let secs = match unit.trim() {
        "" | "s" => v,
        "ms" => v / 1000.0,
        "m" | "min" => v * 60.0,
        "h" => v * 3600.0,
        other => return Err(ConfigError(format!("unknown duration unit `{other}` in `{s}`"))),
    };
    if !(secs.is_finite() && secs > 0.0) {
        return Err(ConfigError(format!("duration must be positive: `{s}`")));
    }
    Ok(Duration::from_secs_f64(secs))
}

#[cfg(test)]
mod tests {
    use super::*;

    const FULL: &str = r#"
target = "synthetic:keymatch"
corpus_dir = "seeds"
output_dir = "out"
meter = "synthetic"
cmin = "coverage"
heuristics = "baseline"
max_execs = 500
rng_seed = 7
timeout_ms = 250
total_edges = 40
parallel_profiling = true

[scheduler]
airtime_max_mult = 4.0

[havoc]
divisor = 8.0
min_execs = 4

[ablate]
repetitions = 2
"#;

    #[test]
    fn full_file_builds_campaign() {
        let s = Settings::from_toml(FULL).unwrap();
        let c = s.to_campaign(resolve_meter(None, None, s.meter.as_deref()).unwrap()).unwrap();
        assert_eq!(c.cmin, CminMode::Coverage);
        assert_eq!(c.heuristics, FuzzHeuristics::Baseline);
        assert_eq!(c.stop, StopCondition::MaxExecs(500));
        assert_eq!(c.rng_seed, 7);
        assert_eq!(c.target.timeout_ms, 250);
        assert_eq!(c.target.total_edges_declared, Some(40));
        assert_eq!(c.params.airtime_max_mult, 4.0);
        assert_eq!(c.params.airtime_min_mult, 0.2);
        assert_eq!(c.havoc.divisor, 8.0);
        assert_eq!(c.havoc.min_execs, 4);
        assert_eq!(c.profiling, Parallelism::Parallel);
        assert_eq!(s.ablate.repetitions, Some(2));
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(Settings::from_toml("colour = \"green\"").is_err());
        assert!(Settings::from_toml("[havoc]\nspeed = 1").is_err());
    }

    #[test]
    fn flags_override_file() {
        let file = Settings::from_toml(FULL).unwrap();
        let flags = Settings { cmin: Some("green".into()), rng_seed: Some(9), ..Default::default() };
        let s = flags.over(file);
        let c = s.to_campaign(MeterKind::Synthetic).unwrap();
        assert_eq!(c.cmin, CminMode::Green);
        assert_eq!(c.rng_seed, 9);
        assert_eq!(c.heuristics, FuzzHeuristics::Baseline);
    }

    #[test]
    fn flag_stop_condition_replaces_file_one() {
        let file = Settings::from_toml(FULL).unwrap();
        let flags = Settings { duration: Some("2s".into()), ..Default::default() };
        let c = flags.over(file).to_campaign(MeterKind::Synthetic).unwrap();
        assert_eq!(c.stop, StopCondition::DurationMs(2000));
    }

    #[test]
    fn both_stop_conditions_rejected() {
        let s = Settings { max_execs: Some(5), duration: Some("1s".into()), ..Settings::from_toml(FULL).unwrap() };
        assert!(s.to_campaign(MeterKind::Synthetic).is_err());
    }

    #[test]
    fn meter_precedence() {
        assert_eq!(resolve_meter(Some("synthetic"), Some("rapl"), Some("rapl")).unwrap(), MeterKind::Synthetic);
        assert_eq!(resolve_meter(None, Some("rapl"), Some("synthetic")).unwrap(), MeterKind::Rapl);
        assert_eq!(resolve_meter(None, None, Some("rapl")).unwrap(), MeterKind::Rapl);
        assert_eq!(resolve_meter(None, None, None).unwrap(), MeterKind::Synthetic);
        assert!(resolve_meter(None, Some("joulemeter"), None).is_err());
    }

    #[test]
    fn durations() {
        assert_eq!(parse_duration("10s").unwrap(), Duration::from_secs(10));
        assert_eq!(parse_duration("250ms").unwrap(), Duration::from_millis(250));
        assert_eq!(parse_duration("2m").unwrap(), Duration::from_secs(120));
        assert_eq!(parse_duration("1h").unwrap(), Duration::from_secs(3600));
        assert_eq!(parse_duration("3").unwrap(), Duration::from_secs(3));
        assert!(parse_duration("0s").is_err());
        assert!(parse_duration("5 parsecs").is_err());
    }

    #[test]
    fn missing_target_or_corpus() {
        assert!(Settings::default().to_campaign(MeterKind::Synthetic).is_err());
        let s = Settings { target: Some("synthetic:fork3".into()), ..Default::default() };
        assert!(s.to_campaign(MeterKind::Synthetic).is_err());
        let s = Settings { target: Some("synthetic:nope".into()), corpus_dir: Some("x".into()), ..Default::default() };
        assert!(s.to_campaign(MeterKind::Synthetic).is_err());
    }
}
