//! Per-update metrics stream and its JSON-lines encoding.
//!
//! A record file is one `{"header": …}` line, one object per parameter
//! update, and a closing `{"summary": …}` line.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordEntry {
    pub iter: u64,
    pub epoch: usize,
    pub n_workers: usize,
    pub batch_size: usize,
    pub effective_lr: f64,
    pub gamma: f64,
    /// Mini-batch loss at the weights the update was computed from.
    pub loss: f64,
    /// Norm of the mean gradient (weight decay included) driving the update.
    pub grad_norm: f64,
    pub strategy: String,
    /// Loss on the fixed probe set, when configured.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probe_loss: Option<f64>,
    /// Final, shorter batch of an epoch.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub short: bool,
    /// Sample ids consumed by this update, when the sample ledger is enabled.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<Vec<usize>>,
}

impl RecordEntry {
    /// Loss used for trend and spike analysis: the probe loss if recorded.
    pub fn tracked_loss(&self) -> f64 {
        self.probe_loss.unwrap_or(self.loss)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Divergence { iter: u64, loss: f64 },
    IdleWorkers { iter: u64, workers: usize, batch_size: usize },
    /// An iteration was abandoned and re-planned under a new roster.
    Restart { iter: u64, old_workers: usize, new_workers: usize },
    /// Every worker was lost; the run waited for new ones.
    Paused { iter: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub config: Value,
    /// Worker count per epoch as planned by the schedule.
    pub schedule_trace: Vec<usize>,
    pub lr_form: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    /// Loss over the whole dataset (or one epoch of a stream) at the final weights.
    pub final_loss: f64,
    pub min_grad_norm: f64,
    pub diverged: bool,
    pub updates: u64,
    #[serde(default)]
    pub events: Vec<Event>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub header: Header,
    pub entries: Vec<RecordEntry>,
    pub summary: Summary,
}

#[derive(Serialize, Deserialize)]
struct HeaderLine {
    header: Header,
}

#[derive(Serialize, Deserialize)]
struct SummaryLine {
    summary: Summary,
}

impl RunRecord {
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        serde_json::to_writer(
            &mut out,
            &HeaderLine {
                header: self.header.clone(),
            },
        )?;
        out.write_all(b"\n")?;
        for e in &self.entries {
            serde_json::to_writer(&mut out, e)?;
            out.write_all(b"\n")?;
        }
        serde_json::to_writer(
            &mut out,
            &SummaryLine {
                summary: self.summary.clone(),
            },
        )?;
        out.write_all(b"\n")?;
        out.flush()?;
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("json is utf-8")
    }

    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let first = lines.next().ok_or_else(|| Error::invalid("empty record"))??;
        let header = serde_json::from_str::<HeaderLine>(&first)?.header;
        let mut entries = Vec::new();
        let mut summary = None;
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            if summary.is_some() {
                return Err(Error::invalid("content after summary line"));
            }
            if line.starts_with("{\"summary\"") {
                summary = Some(serde_json::from_str::<SummaryLine>(&line)?.summary);
            } else {
                entries.push(serde_json::from_str(&line)?);
            }
        }
        let summary = summary.ok_or_else(|| Error::invalid("record has no summary line"))?;
        Ok(Self {
            header,
            entries,
            summary,
        })
    }
}
