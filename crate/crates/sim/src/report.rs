//! Aggregation over runs and CSV output.
//!
//! Floats are written with six decimals so repeated runs with the same seed
//! produce byte-identical files.

use std::io::Write;

use serde::Serialize;

use crate::engine::RunReport;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScenarioReport {
    pub name: String,
    pub runs: Vec<RunReport>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

impl ScenarioReport {
    /// Mean over runs of the per-run mean native coverage.
    pub fn native_coverage(&self) -> Option<f64> {
        mean(self.runs.iter().filter_map(|r| r.native_coverage))
    }

    pub fn web_coverage(&self) -> Option<f64> {
        mean(self.runs.iter().filter_map(|r| r.web_coverage))
    }

    pub fn message_count(&self) -> usize {
        self.runs.iter().map(|r| r.messages.len()).sum()
    }
}

fn num(v: f64) -> String {
    format!("{v:.6}")
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

pub const SUMMARY_HEADER: [&str; 12] = [
    "scenario",
    "run",
    "seed",
    "messages",
    "native_nodes",
    "web_nodes",
    "native_coverage",
    "web_coverage",
    "bytes_transferred",
    "transfers_completed",
    "transfers_aborted",
    "latency_p50_median",
];

/// One row per run of every scenario.
pub fn write_summary_csv<W: Write>(out: W, reports: &[ScenarioReport]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SUMMARY_HEADER)?;
    for rep in reports {
        for (i, run) in rep.runs.iter().enumerate() {
            let mut p50: Vec<f64> = run.messages.iter().filter_map(|m| m.latency_p50).collect();
            p50.sort_by(f64::total_cmp);
            let median = (!p50.is_empty()).then(|| p50[(p50.len() + 1) / 2 - 1]);
            w.write_record([
                rep.name.clone(),
                i.to_string(),
                run.seed.to_string(),
                run.messages.len().to_string(),
                run.native_nodes.to_string(),
                run.web_nodes.to_string(),
                opt(run.native_coverage),
                opt(run.web_coverage),
                run.bytes_transferred.to_string(),
                run.transfers_completed.to_string(),
                run.transfers_aborted.to_string(),
                opt(median),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub const MESSAGE_HEADER: [&str; 12] = [
    "scenario",
    "run",
    "message",
    "created_at",
    "size",
    "origin",
    "native_reached",
    "native_coverage",
    "web_reached",
    "web_coverage",
    "latency_p50",
    "latency_p90",
];

/// One row per message of every run.
pub fn write_messages_csv<W: Write>(out: W, reports: &[ScenarioReport]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(MESSAGE_HEADER)?;
    for rep in reports {
        for (i, run) in rep.runs.iter().enumerate() {
            for s in &run.messages {
                w.write_record([
                    rep.name.clone(),
                    i.to_string(),
                    s.message.index.to_string(),
                    num(s.message.created_at),
                    s.message.size.to_string(),
                    s.message.origin.to_string(),
                    s.native_reached.to_string(),
                    num(s.native_coverage),
                    s.web_reached.to_string(),
                    opt(s.web_coverage),
                    opt(s.latency_p50),
                    opt(s.latency_p90),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// The transfer log of one run: step, from, to, message.
pub fn write_transfers_csv<W: Write>(out: W, run: &RunReport) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["step", "from", "to", "message"])?;
    for t in &run.transfers {
        w.write_record([t.step.to_string(), t.from.to_string(), t.to.to_string(), t.message.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
