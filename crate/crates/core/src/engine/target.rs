//! Target descriptions and single measured executions.

use std::fmt;
use std::fs::{self, File};
use std::io::ErrorKind;
use std::os::unix::process::ExitStatusExt;
use std::path::PathBuf;
use std::process::{Command, Stdio};
use std::str::FromStr;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::coverage::{check_map_size, EdgeTrace, MAP_SIZE_DEFAULT};
use crate::energy::{EnergyReading, Meter, ProgramExit, SyntheticTarget};

use super::{fixtures, EngineError};

/// Environment variable naming the file an external target writes its
/// showmap-format trace to.
pub const TRACE_ENV: &str = "GREENFUZZ_TRACE";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InputMode {
    Stdin,
    /// The input path replaces `@@` in the argument list.
    FileArg,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum TargetKind {
    Synthetic { model: String },
    External { argv: Vec<String>, input_mode: InputMode },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetSpec {
    pub kind: TargetKind,
    pub timeout_ms: u64,
    pub total_edges_declared: Option<usize>,
    pub map_size: usize,
}

impl TargetSpec {
    pub fn synthetic(model: &str) -> Self {
        TargetSpec {
            kind: TargetKind::Synthetic { model: model.to_string() },
            timeout_ms: 1000,
            total_edges_declared: None,
            map_size: MAP_SIZE_DEFAULT,
        }
    }

    pub fn external(argv: Vec<String>) -> Self {
        let input_mode = if argv.iter().any(|a| a.contains("@@")) { InputMode::FileArg } else { InputMode::Stdin };
        TargetSpec {
            kind: TargetKind::External { argv, input_mode },
            timeout_ms: 1000,
            total_edges_declared: None,
            map_size: MAP_SIZE_DEFAULT,
        }
    }

    pub fn with_timeout_ms(mut self, timeout_ms: u64) -> Self {
        self.timeout_ms = timeout_ms;
        self
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        if self.timeout_ms == 0 {
            return Err(EngineError::Config("timeout_ms must be positive".into()));
        }
        check_map_size(self.map_size).map_err(|e| EngineError::Config(e.to_string()))?;
        match &self.kind {
            TargetKind::Synthetic { model } if fixtures::lookup(model).is_none() => {
                Err(EngineError::UnknownModel(model.clone()))
            }
            TargetKind::External { argv, .. } if argv.is_empty() => {
                Err(EngineError::Config("external target has an empty command".into()))
            }
            _ => Ok(()),
        }
    }

    /// Resolves the spec into something executable.
    pub fn resolve(&self) -> Result<Target, EngineError> {
        self.validate()?;
        match &self.kind {
            TargetKind::Synthetic { model } => {
                let target = fixtures::lookup(model).ok_or_else(|| EngineError::UnknownModel(model.clone()))?;
                Ok(Target::Synthetic(target))
            }
            TargetKind::External { argv, input_mode } => {
                let scratch = tempfile::Builder::new()
                    .prefix("greenfuzz-exec-")
                    .tempdir()
                    .map_err(|e| EngineError::Io(format!("scratch dir: {e}")))?;
                Ok(Target::External(ExternalTarget {
                    argv: argv.clone(),
                    input_mode: *input_mode,
                    timeout: Duration::from_millis(self.timeout_ms),
                    map_size: self.map_size,
                    scratch,
                }))
            }
        }
    }

    /// Declared edge total, falling back to what a synthetic model knows.
    pub fn total_edges(&self) -> Option<usize> {
        self.total_edges_declared.or_else(|| match &self.kind {
            TargetKind::Synthetic { model } => fixtures::lookup(model).and_then(|t| t.program.total_edges()),
            TargetKind::External { .. } => None,
        })
    }
}

impl fmt::Display for TargetSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            TargetKind::Synthetic { model } => write!(f, "synthetic:{model}"),
            TargetKind::External { argv, .. } => write!(f, "exec:{}", argv.join(" ")),
        }
    }
}

impl FromStr for TargetSpec {
    type Err = EngineError;

    /// `synthetic:<model>` or `exec:<command> [args...]` (whitespace split;
    /// `@@` marks the input file argument, otherwise input goes to stdin).
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(model) = s.strip_prefix("synthetic:") {
            return Ok(TargetSpec::synthetic(model.trim()));
        }
        if let Some(cmd) = s.strip_prefix("exec:") {
            let argv: Vec<String> = cmd.split_whitespace().map(str::to_string).collect();
            if argv.is_empty() {
                return Err(EngineError::Config("`exec:` needs a command".into()));
            }
            return Ok(TargetSpec::external(argv));
        }
        Err(EngineError::Config(format!(
            "target `{s}` must look like synthetic:<model> or exec:<command>"
        )))
    }
}

#[derive(Debug)]
pub struct ExternalTarget {
    argv: Vec<String>,
    input_mode: InputMode,
    timeout: Duration,
    map_size: usize,
    scratch: tempfile::TempDir,
}

/// A resolved, executable target.
#[derive(Debug)]
pub enum Target {
    Synthetic(SyntheticTarget),
    External(ExternalTarget),
}

impl Target {
    pub fn map_size(&self) -> usize {
        match self {
            Target::Synthetic(t) => t.program.map_size(),
            Target::External(t) => t.map_size,
        }
    }

    /// Independent instance for a parallel worker.
    pub fn fork(&self) -> Result<Target, EngineError> {
        match self {
            Target::Synthetic(t) => Ok(Target::Synthetic(t.clone())),
            Target::External(t) => {
                let scratch = tempfile::Builder::new()
                    .prefix("greenfuzz-exec-")
                    .tempdir()
                    .map_err(|e| EngineError::Io(format!("scratch dir: {e}")))?;
                Ok(Target::External(ExternalTarget {
                    argv: t.argv.clone(),
                    input_mode: t.input_mode,
                    timeout: t.timeout,
                    map_size: t.map_size,
                    scratch,
                }))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExecStatus {
    Ok,
    Crash(i32),
    Timeout,
}

#[derive(Debug, Clone)]
pub struct ExecResult {
    pub status: ExecStatus,
    pub trace: EdgeTrace,
    pub energy: EnergyReading,
    pub exec_time_us: u64,
}

/// Runs `input` once on `target` with its energy measured by `meter`.
pub fn execute(target: &Target, input: &[u8], meter: &mut Meter) -> Result<ExecResult, EngineError> {
    match target {
        Target::Synthetic(t) => {
            let (run, energy) = meter.measure_around(|sink| {
                let run = t.run(input);
                sink.charge(&run.cost);
                run
            })?;
            let status = match run.exit {
                ProgramExit::Ok => ExecStatus::Ok,
                ProgramExit::Crash(sig) => ExecStatus::Crash(sig),
                ProgramExit::Hang => ExecStatus::Timeout,
            };
            let trace = if status == ExecStatus::Timeout { EdgeTrace::empty(run.trace.map_size()) } else { run.trace };
            Ok(ExecResult { status, trace, energy, exec_time_us: energy.duration_us })
        }
        Target::External(t) => execute_external(t, input, meter),
    }
}

fn execute_external(t: &ExternalTarget, input: &[u8], meter: &mut Meter) -> Result<ExecResult, EngineError> {
    let input_path = t.scratch.path().join("cur_input");
    let trace_path = t.scratch.path().join("trace");
    fs::write(&input_path, input).map_err(|e| EngineError::Io(format!("writing input: {e}")))?;
    match fs::remove_file(&trace_path) {
        Ok(()) => {}
        Err(e) if e.kind() == ErrorKind::NotFound => {}
        Err(e) => return Err(EngineError::Io(format!("clearing trace file: {e}"))),
    }

    let mut cmd = Command::new(&t.argv[0]);
    for arg in &t.argv[1..] {
        cmd.arg(arg.replace("@@", &input_path.to_string_lossy()));
    }
    cmd.env(TRACE_ENV, &trace_path).stdout(Stdio::null()).stderr(Stdio::null());
    match t.input_mode {
        InputMode::Stdin => {
            let f = File::open(&input_path).map_err(|e| EngineError::Io(format!("reopening input: {e}")))?;
            cmd.stdin(Stdio::from(f));
        }
        InputMode::FileArg => {
            cmd.stdin(Stdio::null());
        }
    }

    let (outcome, energy) = meter.measure_around(|_| -> Result<(ExecStatus, u64), EngineError> {
        let start = Instant::now();
        let mut child = cmd
            .spawn()
            .map_err(|e| EngineError::Spawn(format!("{}: {e}", t.argv[0])))?;
        let mut nap = Duration::from_micros(50);
        let status = loop {
            if let Some(status) = child.try_wait().map_err(|e| EngineError::Io(e.to_string()))? {
                break Some(status);
            }
            if start.elapsed() >= t.timeout {
                let _ = child.kill();
                let _ = child.wait();
                break None;
            }
            std::thread::sleep(nap);
            nap = (nap * 2).min(Duration::from_millis(5));
        };
        let elapsed = start.elapsed().as_micros() as u64;
        let status = match status {
            None => ExecStatus::Timeout,
            Some(s) => match s.signal() {
                Some(sig) => ExecStatus::Crash(sig),
                None => ExecStatus::Ok,
            },
        };
        Ok((status, elapsed))
    })?;
    let (status, exec_time_us) = outcome?;

    let trace = match fs::read_to_string(&trace_path) {
        Ok(text) => match EdgeTrace::parse_showmap(&text, t.map_size) {
            Ok(trace) => trace,
            Err(e) if status == ExecStatus::Timeout => {
                log::debug!("discarding partial trace of timed-out run: {e}");
                EdgeTrace::empty(t.map_size)
            }
            Err(e) => return Err(EngineError::Trace(e.to_string())),
        },
        Err(e) if e.kind() == ErrorKind::NotFound => EdgeTrace::empty(t.map_size),
        Err(e) => return Err(EngineError::Io(format!("reading trace: {e}"))),
    };
    Ok(ExecResult { status, trace, energy, exec_time_us })
}

/// Scratch directory of an external target, for tests and diagnostics.
pub fn scratch_dir(target: &Target) -> Option<PathBuf> {
    match target {
        Target::External(t) => Some(t.scratch.path().to_path_buf()),
        Target::Synthetic(_) => None,
    }
}
