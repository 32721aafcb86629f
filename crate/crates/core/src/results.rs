//! Result files: summary, per-flow rate series, trace, comparisons and sweeps.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::domain::Mode;
use crate::engine::RunOutput;
use crate::handoff::HandoffKind;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Format {
    Csv,
    Summary,
    #[default]
    All,
}

impl Format {
    fn csv(self) -> bool {
        matches!(self, Format::Csv | Format::All)
    }

    fn summary(self) -> bool {
        matches!(self, Format::Summary | Format::All)
    }
}

impl std::str::FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(Format::Csv),
            "summary" => Ok(Format::Summary),
            "all" => Ok(Format::All),
            other => Err(format!("unknown format {other:?} (expected csv, summary or all)")),
        }
    }
}

#[derive(Debug, thiserror::Error)]
#[error("cannot write {path}: {source}")]
pub struct EmitError {
    pub path: PathBuf,
    #[source]
    pub source: io::Error,
}

fn write(path: PathBuf, text: &str) -> Result<PathBuf, EmitError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|source| EmitError { path: dir.to_path_buf(), source })?;
    }
    fs::write(&path, text).map_err(|source| EmitError { path: path.clone(), source })?;
    Ok(path)
}

#[derive(Serialize)]
struct Summary<'a> {
    scenario: &'a str,
    scenario_hash: &'a str,
    seed: u64,
    mode: Mode,
    throughput: ThroughputSection,
    counts: Counts,
    flows: BTreeMap<String, FlowSummary>,
}

#[derive(Serialize)]
struct ThroughputSection {
    average_bps: f64,
    window_start_s: f64,
    window_s: f64,
    node_count: usize,
    received_bits: BTreeMap<String, f64>,
}

#[derive(Serialize)]
struct Counts {
    events: u64,
    joins: u64,
    join_failures: u64,
    soft_handoffs: u64,
    hard_handoffs: u64,
    orphans: u64,
    link_breaks: u64,
    floods: u64,
    flood_duplicates: u64,
    discovery_requests: u64,
    discovery_forwards: u64,
    discovery_duplicates: u64,
    services_not_found: u64,
    rediscoveries: u64,
    control_frames: u64,
    rate_solves: u64,
    dropped_bits: f64,
}

#[derive(Serialize)]
struct FlowSummary {
    average_bps: f64,
    delivered_bits: f64,
    dropped_bits: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    final_hops: Option<usize>,
}

/// The summary document for one run.
pub fn summary_text(out: &RunOutput) -> String {
    let st = &out.stats;
    let flows = out
        .flows
        .iter()
        .map(|f| {
            (
                f.spec.id.to_string(),
                FlowSummary {
                    average_bps: out.report.flow_rates.get(&f.spec.id).copied().unwrap_or(0.0),
                    delivered_bits: f.delivered_bits,
                    dropped_bits: f.dropped_bits,
                    final_hops: f.hops(),
                },
            )
        })
        .collect();
    let s = Summary {
        scenario: &out.scenario_name,
        scenario_hash: &out.scenario_hash,
        seed: out.seed,
        mode: out.mode,
        throughput: ThroughputSection {
            average_bps: out.report.average_bps,
            window_start_s: out.report.window_start_s,
            window_s: out.report.window_s,
            node_count: out.report.node_count,
            received_bits: out.report.received_bits.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        },
        counts: Counts {
            events: st.events,
            joins: st.joins,
            join_failures: st.join_failures,
            soft_handoffs: st.soft_handoffs,
            hard_handoffs: st.hard_handoffs,
            orphans: st.orphans,
            link_breaks: st.link_breaks,
            floods: st.floods,
            flood_duplicates: st.flood_duplicates,
            discovery_requests: st.discovery_requests,
            discovery_forwards: st.discovery_forwards,
            discovery_duplicates: st.discovery_duplicates,
            services_not_found: st.services_not_found,
            rediscoveries: st.rediscoveries,
            control_frames: st.control_frames,
            rate_solves: st.rate_solves,
            dropped_bits: st.dropped_bits,
        },
        flows,
    };
    toml::to_string(&s).expect("summary serializes")
}

pub fn flows_csv(out: &RunOutput) -> String {
    let mut s = String::from("time_s,flow_id,rate_bps\n");
    for x in &out.samples {
        let _ = writeln!(s, "{},{},{}", x.time_s, x.flow, x.rate_bps);
    }
    s
}

pub fn trace_text(out: &RunOutput) -> String {
    let mut s = String::new();
    for line in &out.trace {
        s.push_str(line);
        s.push('\n');
    }
    s
}

pub fn handoffs_csv(out: &RunOutput) -> String {
    let mut s = String::from("node,kind,from,to,started_s,completed_s,cascaded\n");
    for h in &out.handoffs {
        let kind = match h.kind {
            HandoffKind::Soft => "soft",
            HandoffKind::Hard => "hard",
        };
        let from = h.from.map(|f| f.to_string()).unwrap_or_default();
        let done = h.completed_s.map(|t| t.to_string()).unwrap_or_default();
        let _ = writeln!(s, "{},{kind},{from},{},{},{done},{}", h.node, h.to, h.started_s, h.cascaded);
    }
    s
}

/// Writes the files of one run under `dir` and returns their paths.
pub fn write_run(dir: &Path, out: &RunOutput, format: Format) -> Result<Vec<PathBuf>, EmitError> {
    let mut written = Vec::new();
    if format.summary() {
        written.push(write(dir.join("summary.toml"), &summary_text(out))?);
    }
    if format.csv() {
        written.push(write(dir.join("flows.csv"), &flows_csv(out))?);
        written.push(write(dir.join("handoffs.csv"), &handoffs_csv(out))?);
    }
    if format == Format::All {
        written.push(write(dir.join("trace.log"), &trace_text(out))?);
    }
    Ok(written)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonRow {
    pub case: String,
    pub dual_avg_bps: f64,
    pub single_avg_bps: f64,
}

impl ComparisonRow {
    /// dual / single; infinite when the single-band run delivered nothing.
    pub fn ratio(&self) -> f64 {
        if self.single_avg_bps > 0.0 {
            self.dual_avg_bps / self.single_avg_bps
        } else if self.dual_avg_bps > 0.0 {
            f64::INFINITY
        } else {
            f64::NAN
        }
    }
}

pub fn comparison_csv(rows: &[ComparisonRow]) -> String {
    let mut s = String::from("case,dual_avg_bps,single_avg_bps,ratio\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{}", r.case, r.dual_avg_bps, r.single_avg_bps, r.ratio());
    }
    s
}

pub const PLOT_SCRIPT: &str = r#"#!/usr/bin/env python3
"""Grouped bar chart of dual-band vs single-band average throughput per case."""
import csv
import pathlib
import sys

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

here = pathlib.Path(__file__).resolve().parent
src = pathlib.Path(sys.argv[1]) if len(sys.argv) > 1 else here / "comparison.csv"
rows = list(csv.DictReader(src.open()))
cases = [r["case"] for r in rows]
dual = [float(r["dual_avg_bps"]) / 1e6 for r in rows]
single = [float(r["single_avg_bps"]) / 1e6 for r in rows]
x = range(len(cases))
w = 0.38
fig, ax = plt.subplots(figsize=(max(4, 1.6 * len(cases)), 3.6))
ax.bar([i - w / 2 for i in x], dual, w, label="dual band")
ax.bar([i + w / 2 for i in x], single, w, label="single band")
ax.set_xticks(list(x))
ax.set_xticklabels(cases)
ax.set_ylabel("average throughput (Mbps)")
ax.legend()
fig.tight_layout()
fig.savefig(src.with_name("comparison.png"), dpi=150)
"#;

/// Writes `comparison.csv` and the plot script that reads it.
pub fn write_comparison(dir: &Path, rows: &[ComparisonRow]) -> Result<Vec<PathBuf>, EmitError> {
    Ok(vec![write(dir.join("comparison.csv"), &comparison_csv(rows))?, write(dir.join("plot_comparison.py"), PLOT_SCRIPT)?])
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub value: String,
    pub dual_avg_bps: f64,
    pub single_avg_bps: Option<f64>,
}

pub fn sweep_csv(parameter: &str, rows: &[SweepRow]) -> String {
    let mut s = String::from("parameter,value,dual_avg_bps,single_avg_bps\n");
    for r in rows {
        let single = r.single_avg_bps.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(s, "{parameter},{},{},{single}", r.value, r.dual_avg_bps);
    }
    s
}

pub fn write_sweep(dir: &Path, parameter: &str, rows: &[SweepRow]) -> Result<PathBuf, EmitError> {
    write(dir.join("sweep.csv"), &sweep_csv(parameter, rows))
}
