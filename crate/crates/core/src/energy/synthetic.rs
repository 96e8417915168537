//! Deterministic synthetic energy: in-process programs that report edge hits,
//! a cost model pricing those hits, and a meter that reports the priced cost.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use crate::coverage::{classify_counts, EdgeTrace};

use super::{EnergyError, EnergyReading, MeterCapabilities, WorkSink};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProgramExit {
    Ok,
    /// Simulated fatal signal.
    Crash(i32),
    /// Simulated hang; reported as a timeout by the executor.
    Hang,
}

/// Raw hit counts collected while a synthetic program runs.
#[derive(Debug, Clone)]
pub struct HitRecorder {
    raw: Vec<u32>,
    touched: Vec<usize>,
    mask: usize,
}

impl HitRecorder {
    pub fn new(map_size: usize) -> Self {
        debug_assert!(map_size.is_power_of_two());
        HitRecorder { raw: vec![0; map_size], touched: Vec::new(), mask: map_size - 1 }
    }

    pub fn hit(&mut self, edge: usize) {
        self.hit_n(edge, 1);
    }

    /// Records `n` executions of `edge`. Edge ids wrap modulo the map size.
    pub fn hit_n(&mut self, edge: usize, n: u32) {
        if n == 0 {
            return;
        }
        let slot = edge & self.mask;
        if self.raw[slot] == 0 {
            self.touched.push(slot);
        }
        self.raw[slot] = self.raw[slot].saturating_add(n);
    }

    /// `(edge, raw count)` for every touched edge, in index order.
    pub fn counts(&self) -> Vec<(usize, u32)> {
        let mut touched = self.touched.clone();
        touched.sort_unstable();
        touched.into_iter().map(|e| (e, self.raw[e])).collect()
    }

    pub fn trace(&self) -> EdgeTrace {
        classify_counts(&self.raw)
    }
}

/// A deterministic in-process target.
pub trait SyntheticProgram: Send + Sync {
    fn name(&self) -> &str;
    fn map_size(&self) -> usize;
    /// Number of edges the program can reach at all, when known.
    fn total_edges(&self) -> Option<usize> {
        None
    }
    fn run(&self, input: &[u8], hits: &mut HitRecorder) -> ProgramExit;
}

/// Prices a run: per-edge-hit costs, per-byte costs and a simulated
/// execution time.
#[derive(Debug, Clone, PartialEq)]
pub struct CostModel {
    pub edge_cpu_j: f64,
    pub edge_ram_j: f64,
    /// Per-edge `(cpu, ram)` overrides of the default hit cost.
    pub edge_costs: BTreeMap<usize, (f64, f64)>,
    pub byte_cpu_j: f64,
    pub byte_ram_j: f64,
    pub time_base_us: f64,
    pub time_per_byte_us: f64,
    /// Charged once per distinct edge, not per hit.
    pub time_per_edge_us: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel {
            edge_cpu_j: 0.0,
            edge_ram_j: 0.0,
            edge_costs: BTreeMap::new(),
            byte_cpu_j: 0.0,
            byte_ram_j: 0.0,
            time_base_us: 1.0,
            time_per_byte_us: 0.0,
            time_per_edge_us: 0.0,
        }
    }
}

impl CostModel {
    pub fn with_edge_cost(mut self, edge: usize, cpu_j: f64, ram_j: f64) -> Self {
        self.edge_costs.insert(edge, (cpu_j, ram_j));
        self
    }

    fn edge_cost(&self, edge: usize) -> (f64, f64) {
        self.edge_costs.get(&edge).copied().unwrap_or((self.edge_cpu_j, self.edge_ram_j))
    }

    /// Cost of a run that produced `counts` on an input of `input_len` bytes.
    pub fn price(&self, counts: &[(usize, u32)], input_len: usize) -> EnergyReading {
        let mut cpu = 0.0;
        let mut ram = 0.0;
        for &(edge, n) in counts {
            let (c, r) = self.edge_cost(edge);
            cpu += c * n as f64;
            ram += r * n as f64;
        }
        cpu += self.byte_cpu_j * input_len as f64;
        ram += self.byte_ram_j * input_len as f64;
        let time = self.time_base_us
            + self.time_per_byte_us * input_len as f64
            + self.time_per_edge_us * counts.len() as f64;
        EnergyReading {
            cpu_joules: cpu,
            ram_joules: ram,
            duration_us: time.round().max(1.0) as u64,
        }
    }
}

/// Outcome of one synthetic run.
#[derive(Debug, Clone)]
pub struct SyntheticRun {
    pub exit: ProgramExit,
    pub trace: EdgeTrace,
    pub cost: EnergyReading,
}

/// A synthetic program together with the cost model that prices it.
#[derive(Clone)]
pub struct SyntheticTarget {
    pub program: Arc<dyn SyntheticProgram>,
    pub costs: CostModel,
}

impl fmt::Debug for SyntheticTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SyntheticTarget")
            .field("program", &self.program.name())
            .field("costs", &self.costs)
            .finish()
    }
}

impl SyntheticTarget {
    pub fn new(program: Arc<dyn SyntheticProgram>, costs: CostModel) -> Self {
        SyntheticTarget { program, costs }
    }

    pub fn name(&self) -> &str {
        self.program.name()
    }

    pub fn run(&self, input: &[u8]) -> SyntheticRun {
        let mut hits = HitRecorder::new(self.program.map_size());
        let exit = self.program.run(input, &mut hits);
        let counts = hits.counts();
        SyntheticRun {
            exit,
            trace: hits.trace(),
            cost: self.costs.price(&counts, input.len()),
        }
    }
}

/// Modelled energy of running `input` on `target`. Pure.
pub fn synthetic_cost(input: &[u8], target: &SyntheticTarget) -> EnergyReading {
    target.run(input).cost
}

/// Reports exactly the work charged during the bracketed call plus a fixed
/// per-execution overhead.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticMeter {
    pub overhead: EnergyReading,
    pub has_ram: bool,
}

impl Default for SyntheticMeter {
    fn default() -> Self {
        SyntheticMeter { overhead: EnergyReading::default(), has_ram: true }
    }
}

impl SyntheticMeter {
    pub fn with_overhead(cpu_joules: f64, ram_joules: f64) -> Self {
        SyntheticMeter {
            overhead: EnergyReading { cpu_joules, ram_joules, duration_us: 0 },
            has_ram: true,
        }
    }

    pub fn cpu_only(mut self) -> Self {
        self.has_ram = false;
        self
    }

    pub fn capabilities(&self) -> MeterCapabilities {
        MeterCapabilities { has_cpu: true, has_ram: self.has_ram, resolution_uj: 1 }
    }

    pub fn measure_around<T>(
        &mut self,
        exec: impl FnOnce(&mut WorkSink) -> T,
    ) -> Result<(T, EnergyReading), EnergyError> {
        let mut sink = WorkSink::default();
        let out = exec(&mut sink);
        let ram = if self.has_ram { sink.ram_joules + self.overhead.ram_joules } else { 0.0 };
        let reading = EnergyReading::new(
            sink.cpu_joules + self.overhead.cpu_joules,
            ram,
            sink.time_us + self.overhead.duration_us,
        )?;
        Ok((out, reading))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Hits edge `b` once for every byte value `b` in the input.
    struct ByteEdges;

    impl SyntheticProgram for ByteEdges {
        fn name(&self) -> &str {
            "byte-edges"
        }
        fn map_size(&self) -> usize {
            256
        }
        fn run(&self, input: &[u8], hits: &mut HitRecorder) -> ProgramExit {
            for &b in input {
                hits.hit(b as usize);
            }
            ProgramExit::Ok
        }
    }

    fn target(costs: CostModel) -> SyntheticTarget {
        SyntheticTarget::new(Arc::new(ByteEdges), costs)
    }

    #[test]
    fn cost_sums_edge_costs() {
        let t = target(CostModel::default().with_edge_cost(1, 2.0, 0.0).with_edge_cost(2, 3.0, 0.0));
        assert_eq!(synthetic_cost(&[1, 2], &t).cpu_joules, 5.0);
    }

    #[test]
    fn empty_input_costs_nothing() {
        let t = target(CostModel { edge_cpu_j: 1.0, byte_cpu_j: 0.5, ..CostModel::default() });
        let c = synthetic_cost(&[], &t);
        assert_eq!((c.cpu_joules, c.ram_joules), (0.0, 0.0));
    }

    #[test]
    fn byte_cost_and_time() {
        let costs = CostModel {
            edge_cpu_j: 1.0,
            edge_ram_j: 0.25,
            byte_cpu_j: 0.5,
            time_base_us: 10.0,
            time_per_byte_us: 2.0,
            time_per_edge_us: 3.0,
            ..CostModel::default()
        };
        let c = synthetic_cost(&[7, 7, 9], &target(costs));
        assert_eq!(c.cpu_joules, 3.0 + 1.5);
        assert_eq!(c.ram_joules, 0.75);
        assert_eq!(c.duration_us, 10 + 6 + 6);
    }

    #[test]
    fn meter_reports_charged_work() {
        let mut meter = SyntheticMeter::default();
        let cost = EnergyReading { cpu_joules: 12.0, ram_joules: 1.5, duration_us: 40 };
        let ((), r) = meter.measure_around(|sink| sink.charge(&cost)).unwrap();
        assert_eq!(r, cost);

        let ((), zero) = meter.measure_around(|_| ()).unwrap();
        assert_eq!((zero.cpu_joules, zero.ram_joules), (0.0, 0.0));

        let mut meter = SyntheticMeter::with_overhead(0.5, 0.25).cpu_only();
        let ((), r) = meter.measure_around(|sink| sink.charge(&cost)).unwrap();
        assert_eq!((r.cpu_joules, r.ram_joules), (12.5, 0.0));
    }

    #[test]
    fn meter_surfaces_invalid_charges() {
        let mut meter = SyntheticMeter::default();
        let bad = EnergyReading { cpu_joules: -1.0, ram_joules: 0.0, duration_us: 0 };
        assert!(meter.measure_around(|sink| sink.charge(&bad)).is_err());
    }

    #[test]
    fn recorder_wraps_and_accumulates() {
        let mut h = HitRecorder::new(8);
        h.hit(3);
        h.hit_n(11, 4);
        h.hit_n(5, 0);
        assert_eq!(h.counts(), vec![(3, 5)]);
        assert_eq!(h.trace().buckets()[3], 4);
    }

    proptest::proptest! {
        #[test]
        fn cost_is_deterministic_and_additive(a in proptest::collection::vec(0u8..32, 0..40),
                                              b in proptest::collection::vec(32u8..64, 0..40)) {
            let costs = CostModel { edge_cpu_j: 0.125, edge_ram_j: 0.0625, ..CostModel::default() };
            let t = target(costs);
            let ca = synthetic_cost(&a, &t);
            let cb = synthetic_cost(&b, &t);
            let joined: Vec<u8> = a.iter().chain(&b).copied().collect();
            let cj = synthetic_cost(&joined, &t);
            proptest::prop_assert_eq!(ca, synthetic_cost(&a, &t));
            // Dyadic costs keep the sums exact.
            proptest::prop_assert_eq!(cj.cpu_joules, ca.cpu_joules + cb.cpu_joules);
            proptest::prop_assert_eq!(cj.ram_joules, ca.ram_joules + cb.ram_joules);
        }
    }
}
