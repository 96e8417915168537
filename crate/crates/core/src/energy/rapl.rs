//! Intel RAPL counters via the Linux powercap sysfs interface.

use std::collections::HashSet;
use std::fs;
use std::io::ErrorKind;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use super::{EnergyError, EnergyReading, MeterCapabilities, WorkSink};

pub const POWERCAP_ROOT: &str = "/sys/class/powercap";

/// Powercap roots currently owned by an open meter.
static OWNED_ROOTS: Mutex<Option<HashSet<PathBuf>>> = Mutex::new(None);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RaplDomainKind {
    Package,
    Dram,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RaplDomain {
    pub kind: RaplDomainKind,
    pub zone: String,
    pub energy_path: PathBuf,
    pub max_range_uj: u64,
}

/// Reads one `energy_uj`-style file: ASCII decimal, newline terminated.
pub fn read_counter_file(path: &Path) -> Result<u64, EnergyError> {
    let text = fs::read_to_string(path).map_err(|e| match e.kind() {
        ErrorKind::NotFound => EnergyError::MeterUnavailable(format!("{} does not exist", path.display())),
        ErrorKind::PermissionDenied => EnergyError::PermissionDenied {
            path: path.display().to_string(),
            hint: "energy_uj is root-only on recent kernels; run as root or \
                   `chmod o+r /sys/class/powercap/intel-rapl:*/energy_uj`"
                .to_string(),
        },
        _ => EnergyError::MeterFault(format!("reading {}: {e}", path.display())),
    })?;
    text.trim()
        .parse::<u64>()
        .map_err(|_| EnergyError::MeterFault(format!("{} holds {:?}, not a counter value", path.display(), text)))
}

/// Current raw counter of one domain, in microjoules.
pub fn rapl_read(domain: &RaplDomain) -> Result<u64, EnergyError> {
    read_counter_file(&domain.energy_path)
}

/// Wraparound-corrected counter difference: `(after - before) mod range`.
///
/// Values at or above `range` cannot come from a counter that wraps at
/// `range`, so they are reported as faults rather than clamped.
pub fn counter_delta(before: u64, after: u64, range: u64) -> Result<u64, EnergyError> {
    if range == 0 {
        return Err(EnergyError::MeterFault("max_energy_range_uj is zero".into()));
    }
    if before >= range || after >= range {
        return Err(EnergyError::MeterFault(format!(
            "counter sample ({before} -> {after}) outside range {range}"
        )));
    }
    if after >= before {
        Ok(after - before)
    } else {
        Ok(range - before + after)
    }
}

fn discover(root: &Path) -> Result<Vec<RaplDomain>, EnergyError> {
    let entries = fs::read_dir(root)
        .map_err(|e| EnergyError::MeterUnavailable(format!("cannot list {}: {e}", root.display())))?;
    let mut zones: Vec<PathBuf> = entries
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("intel-rapl:"))
        })
        .collect();
    zones.sort();

    let mut domains = Vec::new();
    for zone in zones {
        let Ok(name) = fs::read_to_string(zone.join("name")) else { continue };
        let name = name.trim();
        let kind = if name.starts_with("package") {
            RaplDomainKind::Package
        } else if name == "dram" {
            RaplDomainKind::Dram
        } else {
            continue;
        };
        let max_range_uj = read_counter_file(&zone.join("max_energy_range_uj"))?;
        domains.push(RaplDomain {
            kind,
            zone: zone.file_name().unwrap().to_string_lossy().into_owned(),
            energy_path: zone.join("energy_uj"),
            max_range_uj,
        });
    }
    Ok(domains)
}

/// Sums package (and DRAM, when present) counters across sockets.
#[derive(Debug)]
pub struct RaplMeter {
    root: PathBuf,
    packages: Vec<RaplDomain>,
    dram: Vec<RaplDomain>,
}

impl RaplMeter {
    /// Probes `root` and claims it. Fails if no package domain is readable
    /// or another meter already owns the same root.
    pub fn open(root: impl AsRef<Path>) -> Result<Self, EnergyError> {
        let root = root.as_ref().to_path_buf();
        let domains = discover(&root)?;
        let (packages, dram): (Vec<_>, Vec<_>) =
            domains.into_iter().partition(|d| d.kind == RaplDomainKind::Package);
        if packages.is_empty() {
            return Err(EnergyError::MeterUnavailable(format!("no RAPL package domain under {}", root.display())));
        }
        for d in &packages {
            rapl_read(d)?;
        }
        let dram = dram
            .into_iter()
            .filter(|d| match rapl_read(d) {
                Ok(_) => true,
                Err(e) => {
                    log::warn!("RAPL dram domain {} unusable ({e}); measuring package only", d.zone);
                    false
                }
            })
            .collect::<Vec<_>>();
        if dram.is_empty() {
            log::warn!("no RAPL dram domain; ram energy will read 0");
        }

        let mut owned = OWNED_ROOTS.lock().unwrap();
        let owned = owned.get_or_insert_with(HashSet::new);
        if !owned.insert(root.clone()) {
            return Err(EnergyError::Busy);
        }
        Ok(RaplMeter { root, packages, dram })
    }

    pub fn capabilities(&self) -> MeterCapabilities {
        MeterCapabilities { has_cpu: true, has_ram: !self.dram.is_empty(), resolution_uj: 1 }
    }

    pub fn domains(&self) -> impl Iterator<Item = &RaplDomain> {
        self.packages.iter().chain(self.dram.iter())
    }

    fn sample(&self) -> Result<(Vec<u64>, Vec<u64>), EnergyError> {
        let p = self.packages.iter().map(rapl_read).collect::<Result<_, _>>()?;
        let d = self.dram.iter().map(rapl_read).collect::<Result<_, _>>()?;
        Ok((p, d))
    }

    fn sum_delta(domains: &[RaplDomain], before: &[u64], after: &[u64]) -> Result<u64, EnergyError> {
        let mut total = 0u64;
        for ((d, &b), &a) in domains.iter().zip(before).zip(after) {
            total += counter_delta(b, a, d.max_range_uj)?;
        }
        Ok(total)
    }

    pub fn measure_around<T>(
        &mut self,
        exec: impl FnOnce(&mut WorkSink) -> T,
    ) -> Result<(T, EnergyReading), EnergyError> {
        let (pkg_before, dram_before) = self.sample()?;
        let start = Instant::now();
        let mut sink = WorkSink::default();
        let out = exec(&mut sink);
        let duration_us = start.elapsed().as_micros() as u64;
        let (pkg_after, dram_after) = self.sample()?;

        let cpu_uj = Self::sum_delta(&self.packages, &pkg_before, &pkg_after)?;
        let ram_uj = Self::sum_delta(&self.dram, &dram_before, &dram_after)?;
        let reading = EnergyReading::new(cpu_uj as f64 / 1e6, ram_uj as f64 / 1e6, duration_us)?;
        Ok((out, reading))
    }
}

impl Drop for RaplMeter {
    fn drop(&mut self) {
        if let Ok(mut owned) = OWNED_ROOTS.lock() {
            if let Some(owned) = owned.as_mut() {
                owned.remove(&self.root);
            }
        }
    }
}
