//! Output files: JSON reports, aligned text tables and the run manifest.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::{ExperimentConfig, RcapReport, SegmentationReport, SelectionReport, Stat};
use crate::dataset::StackSplit;
use crate::error::Result;

pub const QUEUE_FILE: &str = "queue.json";
pub const MANIFEST_FILE: &str = "run_manifest.json";

/// Everything about a run that is not a result. The timestamp lives here so
/// that result files stay byte-identical across runs.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub started_unix_ms: u128,
    pub workers: usize,
    pub config: ExperimentConfig,
    pub split: StackSplit,
    pub dropped: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, cfg: &ExperimentConfig, split: &StackSplit, dropped: &[String]) -> Self {
        Self {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            started_unix_ms: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_millis())
                .unwrap_or(0),
            workers: rayon::current_num_threads(),
            config: cfg.clone(),
            split: split.clone(),
            dropped: dropped.to_vec(),
        }
    }
}

/// Writes files into one output directory.
pub struct OutputWriter {
    dir: PathBuf,
}

impl OutputWriter {
    pub fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn json<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.text(name, &text)
    }

    pub fn jsonl<T: Serialize>(&self, name: &str, rows: &[T]) -> Result<()> {
        let mut out = std::io::BufWriter::new(fs::File::create(self.path(name))?);
        for row in rows {
            serde_json::to_writer(&mut out, row)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn text(&self, name: &str, text: &str) -> Result<()> {
        fs::write(self.path(name), text)?;
        Ok(())
    }

    pub fn manifest(&self, manifest: &RunManifest) -> Result<()> {
        self.json(MANIFEST_FILE, manifest)
    }
}

fn cell(s: Stat) -> String {
    format!("{:.3} ({:.3})", s.mean, s.std)
}

fn render(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in rows {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.len());
        }
    }
    let mut out = String::new();
    let line = |out: &mut String, cells: Vec<&str>| {
        let padded: Vec<String> = cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect();
        let _ = writeln!(out, "{}", padded.join("  ").trim_end());
    };
    line(&mut out, header.to_vec());
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    line(&mut out, rule.iter().map(String::as_str).collect());
    for row in rows {
        line(&mut out, row.iter().map(String::as_str).collect());
    }
    out
}

pub fn segmentation_table(r: &SegmentationReport) -> String {
    let rows: Vec<Vec<String>> = r
        .rows
        .iter()
        .map(|row| {
            vec![
                row.label.clone(),
                row.proposal.clone(),
                cell(row.dc),
                cell(row.iou),
                cell(row.sen),
                cell(row.spec),
                cell(row.acc),
            ]
        })
        .collect();
    format!(
        "model {} trained on {}, {} test images, mean (std)\n\n{}",
        r.model.name(),
        r.train_label,
        r.test_images,
        render(&["label", "rp", "DC", "IOU", "SEN", "SPEC", "ACC"], &rows)
    )
}

pub fn rcap_table(r: &RcapReport) -> String {
    let rows: Vec<Vec<String>> = r
        .per_kappa
        .iter()
        .map(|s| {
            vec![
                s.kappa.to_string(),
                format!("{:.3} ({:.3})", s.mean_accuracy, s.std_accuracy),
                format!("{:.3}", s.frac_correct),
                format!("{:.3}", s.frac_wrong),
                format!("{:.3}", s.frac_manual),
                format!("{:.3}", s.mean_not_fooled),
            ]
        })
        .collect();
    format!(
        "model {} true label {}, w = {}, {} repetitions x {} test images\n\
         accuracy = correct / (correct + wrong); not_fooled = (correct + manual) / trials\n\n{}",
        r.model.name(),
        r.true_label,
        r.w,
        r.repetitions,
        r.test_images,
        render(
            &["kappa", "accuracy", "correct", "wrong", "manual", "not_fooled"],
            &rows
        )
    )
}

pub fn selection_table(r: &SelectionReport) -> String {
    let s = &r.summary;
    let mut out = format!(
        "model {}, {} test images\n\n{}",
        r.model.name(),
        s.images,
        render(
            &["G1", "G2", "manual"],
            &[vec![
                format!("{:.3}", s.frac_g1),
                format!("{:.3}", s.frac_g2),
                format!("{:.3}", s.frac_manual),
            ]]
        )
    );
    if let (Some(m), Some(sd)) = (s.mean_accuracy, s.std_accuracy) {
        let _ = writeln!(out, "\naccuracy against ground truth: {m:.3} ({sd:.3})");
    }
    let rows: Vec<Vec<String>> = r
        .branch_counts
        .iter()
        .map(|(b, n)| vec![b.clone(), n.to_string()])
        .collect();
    let _ = write!(out, "\n{}", render(&["branch", "images"], &rows));
    out
}
