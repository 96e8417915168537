//! Campaign statistics ticks and the `plot_data.csv` format.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

pub const PLOT_DATA_FILE: &str = "plot_data.csv";

/// Emit a tick after this many executions or this much campaign time.
pub const TICK_EVERY_EXECS: u64 = 100;
pub const TICK_EVERY_SECONDS: f64 = 1.0;

const FIELDS: [&str; 8] = [
    "t_seconds",
    "total_execs",
    "unique_edges",
    "cumulative_cpu_j",
    "cumulative_ram_j",
    "execs_per_sec",
    "queue_len",
    "favoured_count",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatsTick {
    pub t_seconds: f64,
    pub total_execs: u64,
    pub unique_edges: usize,
    pub cumulative_cpu_j: f64,
    pub cumulative_ram_j: f64,
    pub execs_per_sec: f64,
    pub queue_len: usize,
    pub favoured_count: usize,
}

impl StatsTick {
    pub fn cumulative_energy_j(&self) -> f64 {
        self.cumulative_cpu_j + self.cumulative_ram_j
    }
}

/// Checks time strictly increasing, executions, edges and energy nondecreasing.
pub fn check_monotone(ticks: &[StatsTick]) -> Result<(), String> {
    for (i, w) in ticks.windows(2).enumerate() {
        let (a, b) = (&w[0], &w[1]);
        if b.t_seconds <= a.t_seconds {
            return Err(format!("tick {}: time {} not after {}", i + 1, b.t_seconds, a.t_seconds));
        }
        if b.total_execs < a.total_execs {
            return Err(format!("tick {}: executions decreased", i + 1));
        }
        if b.unique_edges < a.unique_edges {
            return Err(format!("tick {}: unique edges decreased", i + 1));
        }
        if b.cumulative_cpu_j < a.cumulative_cpu_j || b.cumulative_ram_j < a.cumulative_ram_j {
            return Err(format!("tick {}: cumulative energy decreased", i + 1));
        }
    }
    Ok(())
}

/// Append-only writer; every row is flushed as soon as it is written.
pub struct PlotWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl PlotWriter<File> {
    pub fn create(path: &Path) -> Result<Self, csv::Error> {
        PlotWriter::new(File::create(path)?)
    }
}

impl<W: Write> PlotWriter<W> {
    pub fn new(w: W) -> Result<Self, csv::Error> {
        let mut inner = csv::WriterBuilder::new().has_headers(false).from_writer(w);
        inner.write_record(FIELDS)?;
        inner.flush()?;
        Ok(PlotWriter { inner })
    }

    pub fn append(&mut self, tick: &StatsTick) -> Result<(), csv::Error> {
        self.inner.serialize(tick)?;
        self.inner.flush()?;
        Ok(())
    }

    pub fn into_inner(self) -> Result<W, csv::Error> {
        self.inner.into_inner().map_err(|e| csv::Error::from(e.into_error()))
    }
}

pub fn plot_data_to_string(ticks: &[StatsTick]) -> String {
    let mut w = PlotWriter::new(Vec::new()).expect("in-memory write");
    for t in ticks {
        w.append(t).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory write")).expect("csv is utf-8")
}

pub fn parse_plot_data(r: impl Read) -> Result<Vec<StatsTick>, csv::Error> {
    let mut reader = csv::Reader::from_reader(r);
    let headers = reader.headers()?.clone();
    if headers.iter().ne(FIELDS.iter().copied()) {
        return Err(csv::Error::from(std::io::Error::new(
            std::io::ErrorKind::InvalidData,
            format!("unexpected plot_data header: {}", headers.iter().collect::<Vec<_>>().join(",")),
        )));
    }
    reader.deserialize().collect()
}

pub fn read_plot_data(path: &Path) -> Result<Vec<StatsTick>, csv::Error> {
    parse_plot_data(File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tick(t: f64, execs: u64, edges: usize) -> StatsTick {
        StatsTick {
            t_seconds: t,
            total_execs: execs,
            unique_edges: edges,
            cumulative_cpu_j: execs as f64 * 0.1,
            cumulative_ram_j: 0.0,
            execs_per_sec: execs as f64 / t,
            queue_len: edges,
            favoured_count: 1,
        }
    }

    #[test]
    fn header_names_fields() {
        let s = plot_data_to_string(&[tick(0.5, 10, 3)]);
        assert!(s.starts_with("t_seconds,total_execs,unique_edges,"));
        assert_eq!(s.lines().count(), 2);
    }

    #[test]
    fn empty_series_still_has_header() {
        let s = plot_data_to_string(&[]);
        assert_eq!(parse_plot_data(s.as_bytes()).unwrap(), vec![]);
    }

    #[test]
    fn rejects_foreign_header() {
        assert!(parse_plot_data("a,b\n1,2\n".as_bytes()).is_err());
    }

    #[test]
    fn monotonicity_checks() {
        assert!(check_monotone(&[tick(1.0, 10, 2), tick(2.0, 20, 3)]).is_ok());
        assert!(check_monotone(&[tick(1.0, 10, 2), tick(1.0, 20, 3)]).is_err());
        assert!(check_monotone(&[tick(1.0, 10, 3), tick(2.0, 20, 2)]).is_err());
        assert!(check_monotone(&[tick(1.0, 20, 3), tick(2.0, 10, 3)]).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_is_lossless(rows in proptest::collection::vec(
            (any::<f64>(), any::<u64>(), any::<u32>(), any::<f64>(), any::<f64>(), any::<f64>(), any::<u32>(), any::<u32>()), 0..20)) {
            let ticks: Vec<StatsTick> = rows.into_iter()
                .filter(|r| [r.0, r.3, r.4, r.5].iter().all(|v| v.is_finite()))
                .map(|r| StatsTick {
                    t_seconds: r.0, total_execs: r.1, unique_edges: r.2 as usize,
                    cumulative_cpu_j: r.3, cumulative_ram_j: r.4, execs_per_sec: r.5,
                    queue_len: r.6 as usize, favoured_count: r.7 as usize,
                }).collect();
            let text = plot_data_to_string(&ticks);
            let back = parse_plot_data(text.as_bytes()).unwrap();
            prop_assert_eq!(back.len(), ticks.len());
            for (a, b) in back.iter().zip(&ticks) {
                prop_assert_eq!(a.t_seconds.to_bits(), b.t_seconds.to_bits());
                prop_assert_eq!(a.cumulative_cpu_j.to_bits(), b.cumulative_cpu_j.to_bits());
                prop_assert_eq!(a.cumulative_ram_j.to_bits(), b.cumulative_ram_j.to_bits());
                prop_assert_eq!(a.execs_per_sec.to_bits(), b.execs_per_sec.to_bits());
                prop_assert_eq!((a.total_execs, a.unique_edges, a.queue_len, a.favoured_count),
                                (b.total_execs, b.unique_edges, b.queue_len, b.favoured_count));
            }
        }
    }
}
