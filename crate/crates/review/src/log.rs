use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use crate::queue::{QueueStore, ReviewDecision};
use crate::Result;

pub const LOG_FILE: &str = "review_log.jsonl";

/// Append-only JSON-lines record of reviewer decisions.
pub struct DecisionLog {
    path: PathBuf,
    file: File,
}

impl DecisionLog {
    /// Opens (or creates) the log. A torn final line left by an interrupted
    /// write is cut off so new records start on a fresh line.
    pub fn open(path: &Path) -> Result<Self> {
        if let Ok(bytes) = std::fs::read(path) {
            let keep = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
            if keep < bytes.len() {
                OpenOptions::new().write(true).open(path)?.set_len(keep as u64)?;
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            path: path.to_path_buf(),
            file,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Appends one decision and syncs it to disk before returning.
    pub fn append(&mut self, decision: &ReviewDecision) -> Result<()> {
        let mut line = serde_json::to_vec(decision)?;
        line.push(b'\n');
        self.file.write_all(&line)?;
        self.file.sync_data()?;
        Ok(())
    }

    /// Applies every logged decision to `store`, in log order. Entries for
    /// ids not in the queue are skipped and counted.
    pub fn replay(&self, store: &mut QueueStore) -> Result<usize> {
        let mut skipped = 0;
        for decision in read_log(&self.path)? {
            if store.apply(decision).is_err() {
                skipped += 1;
            }
        }
        Ok(skipped)
    }
}

/// Reads all decisions in a log file; a missing file is an empty log. A torn
/// final line from an interrupted write is ignored.
pub fn read_log(path: &Path) -> Result<Vec<ReviewDecision>> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e.into()),
    };
    let lines: Vec<String> = BufReader::new(file).lines().collect::<std::io::Result<_>>()?;
    let last = lines.len().saturating_sub(1);
    let mut out = Vec::with_capacity(lines.len());
    for (n, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(line) {
            Ok(d) => out.push(d),
            Err(_) if n == last => break,
            Err(e) => return Err(e.into()),
        }
    }
    Ok(out)
}
