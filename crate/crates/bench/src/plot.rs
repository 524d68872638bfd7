//! Run CSV (`time_s,thr_ops,mode`) and gnuplot data files.

use std::io::{Read, Write};

use adaptivepq::classify::Mode;
use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use crate::run::RunResult;

pub const RUN_CSV_HEADER: &str = "time_s,thr_ops,mode";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub time_s: f64,
    pub thr_ops: f64,
    /// `numa-oblivious` or `numa-aware`.
    pub mode: String,
}

pub fn write_run_csv<W: Write>(w: W, result: &RunResult) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for s in &result.samples {
        out.serialize(RunRow {
            time_s: s.time_s,
            thr_ops: s.ops_per_sec,
            mode: s.mode.name().to_string(),
        })?;
    }
    if result.samples.is_empty() {
        out.write_record(RUN_CSV_HEADER.split(','))?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_run_csv<R: Read>(r: R) -> Result<Vec<RunRow>> {
    let mut rd = csv::Reader::from_reader(r);
    let header: Vec<&str> = rd.headers()?.iter().collect();
    if header.join(",") != RUN_CSV_HEADER {
        bail!("expected header `{RUN_CSV_HEADER}`, found `{}`", header.join(","));
    }
    rd.deserialize()
        .enumerate()
        .map(|(i, r)| r.with_context(|| format!("line {}", i + 2)))
        .collect()
}

fn mode_code(name: &str) -> Option<u8> {
    Mode::ALL.into_iter().find(|m| m.name() == name).map(Mode::code)
}

/// Writes gnuplot data: one whitespace-separated block per input, blocks
/// separated by two blank lines (select them with `index`). Columns are
/// time in seconds, throughput in Mops/s and the mode code.
pub fn write_gnuplot<W: Write>(mut w: W, runs: &[(String, Vec<RunRow>)]) -> Result<()> {
    writeln!(w, "# time_s thr_mops mode (1 = numa-oblivious, 2 = numa-aware)")?;
    for (i, (name, rows)) in runs.iter().enumerate() {
        if i > 0 {
            writeln!(w, "\n")?;
        }
        writeln!(w, "# {name}")?;
        for r in rows {
            let code = mode_code(&r.mode).with_context(|| format!("{name}: unknown mode `{}`", r.mode))?;
            writeln!(w, "{:.3} {:.6} {code}", r.time_s, r.thr_ops / 1e6)?;
        }
    }
    Ok(())
}
