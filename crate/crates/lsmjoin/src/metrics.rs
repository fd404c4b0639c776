//! Run metrics and their JSON-lines form: one object per sample, then a
//! summary object carrying `"final": true`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use lsmjoin_core::lsm::BackendCounters;
use serde::{Deserialize, Serialize};

use crate::pipeline::EngineMode;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    /// Wall-clock milliseconds since the first event.
    pub t_ms: u64,
    pub events: u64,
    /// Cumulative output rows.
    pub outputs: u64,
    pub per_stream: BTreeMap<String, BackendCounters>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Summary {
    #[serde(rename = "final")]
    pub is_final: bool,
    pub mode: EngineMode,
    pub events: u64,
    pub outputs: u64,
    pub rejected: u64,
    /// Rows materialized between joins; always 0 outside bjt mode.
    pub intermediate_rows: u64,
    /// Only capped_hash runs abort.
    pub aborted: bool,
    pub elapsed_ms: u64,
    /// Estimated state size reached by a capped_hash run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state_bytes: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cap_bytes: Option<u64>,
    /// Keyed by stream alias, or by `<join id>/left|right` in bjt mode.
    pub per_stream: BTreeMap<String, BackendCounters>,
    pub total: BackendCounters,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MetricsReport {
    pub samples: Vec<Sample>,
    pub summary: Summary,
}

impl MetricsReport {
    /// The same report with every wall-clock field zeroed.
    pub fn without_wall_clock(&self) -> MetricsReport {
        let mut r = self.clone();
        r.samples.iter_mut().for_each(|s| s.t_ms = 0);
        r.summary.elapsed_ms = 0;
        r
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for s in &self.samples {
            out += &serde_json::to_string(s).expect("sample serializes");
            out.push('\n');
        }
        out += &serde_json::to_string(&self.summary).expect("summary serializes");
        out.push('\n');
        out
    }

    pub fn parse_jsonl(text: &str) -> Result<MetricsReport> {
        let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
        let Some((last, samples)) = lines.split_last() else { bail!("empty metrics file") };
        let samples = samples
            .iter()
            .enumerate()
            .map(|(i, l)| serde_json::from_str(l).with_context(|| format!("metrics line {}", i + 1)))
            .collect::<Result<Vec<Sample>>>()?;
        let summary: Summary = serde_json::from_str(last).context("metrics summary line")?;
        if !summary.is_final {
            bail!("last metrics line is not the final summary");
        }
        Ok(MetricsReport { samples, summary })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_jsonl()).with_context(|| format!("writing {}", path.display()))
    }

    pub fn read(path: &Path) -> Result<MetricsReport> {
        Self::parse_jsonl(&fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?)
    }

    /// Cumulative outputs never decrease and end at the summary total; only
    /// capped_hash runs abort.
    pub fn check(&self) -> Result<()> {
        let mut last = 0;
        for s in &self.samples {
            if s.outputs < last {
                bail!("outputs decrease from {last} to {} at event {}", s.outputs, s.events);
            }
            last = s.outputs;
        }
        if last > self.summary.outputs {
            bail!("samples report {last} outputs, summary {}", self.summary.outputs);
        }
        if self.summary.aborted && self.summary.mode != EngineMode::CappedHash {
            bail!("{} run reports an abort", self.summary.mode);
        }
        Ok(())
    }
}
