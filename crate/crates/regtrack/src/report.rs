//! `report.json`, per-frame CSV, summary table and `manifest.json`.
//!
//! JSON numbers are rounded to six decimals; CSV numbers are written with
//! exactly six decimals (`{:.6}`), so outputs diff cleanly.

use std::fmt::Write as _;
use std::path::PathBuf;

use regtrack_core::sim::{TrackMode, TrackReport};
use serde::{Deserialize, Serialize};

use crate::io::fixed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub frame: usize,
    pub predicted: [f64; 7],
    pub ground_truth: [f64; 7],
    pub iou: f64,
    pub center_error: f64,
    pub confidence: f64,
    pub coasted: bool,
    pub used_registration: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub sequence: String,
    pub mode: String,
    pub success: f64,
    pub precision: f64,
    pub frames: Vec<FrameRecord>,
}

impl ReportFile {
    pub fn new(sequence: &str, mode: TrackMode, report: &TrackReport) -> Self {
        let frames = report
            .frames
            .iter()
            .enumerate()
            .map(|(t, f)| FrameRecord {
                frame: t,
                predicted: f.predicted.to_array().map(fixed),
                ground_truth: f.ground_truth.to_array().map(fixed),
                iou: fixed(f.iou),
                center_error: fixed(f.center_error),
                confidence: fixed(f.confidence),
                coasted: f.coasted,
                used_registration: f.used_registration,
            })
            .collect();
        Self {
            sequence: sequence.to_string(),
            mode: mode.as_str().to_string(),
            success: fixed(report.success),
            precision: fixed(report.precision),
            frames,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain data serialises") + "\n"
    }
}

const BOX_COLUMNS: [&str; 7] = ["x", "y", "z", "l", "w", "h", "theta"];

/// One CSV row per frame: predicted box, ground-truth box and scores.
pub fn frames_csv(report: &TrackReport) -> String {
    let mut out = String::from("frame");
    for prefix in ["pred", "gt"] {
        for c in BOX_COLUMNS {
            let _ = write!(out, ",{prefix}_{c}");
        }
    }
    out.push_str(",iou,center_error,confidence,coasted,used_registration\n");
    for (t, f) in report.frames.iter().enumerate() {
        let _ = write!(out, "{t}");
        for v in f
            .predicted
            .to_array()
            .iter()
            .chain(f.ground_truth.to_array().iter())
        {
            let _ = write!(out, ",{v:.6}");
        }
        let _ = writeln!(
            out,
            ",{:.6},{:.6},{:.6},{},{}",
            f.iou,
            f.center_error,
            f.confidence,
            u8::from(f.coasted),
            u8::from(f.used_registration)
        );
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub mode: String,
    pub sequences: usize,
    pub success: f64,
    pub precision: f64,
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::from("mode,sequences,success,precision\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{:.6},{:.6}",
            r.mode, r.sequences, r.success, r.precision
        );
    }
    out
}

pub fn summary_table(rows: &[SummaryRow]) -> String {
    let mut out = format!(
        "{:<10} {:>9} {:>9} {:>9}\n",
        "mode", "sequences", "success", "precision"
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{:<10} {:>9} {:>9.2} {:>9.2}",
            r.mode, r.sequences, r.success, r.precision
        );
    }
    out
}

/// Everything needed to replay a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// Positional inputs as given.
    pub inputs: Vec<PathBuf>,
    /// Subcommand options other than configuration keys.
    pub options: Vec<(String, String)>,
    /// Every configuration key with its resolved value.
    pub config: Vec<(String, String)>,
    pub seeds: Seeds,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Seeds {
    pub seed: u64,
    pub weight_seed: u64,
    /// Seeds of the sequences that were read or written, in order.
    pub sequences: Vec<u64>,
}

impl Manifest {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain data serialises") + "\n"
    }
}
