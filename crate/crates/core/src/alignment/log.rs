use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};

/// One epoch of any training phase.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StageRow {
    /// `warmup`, the 1-based alignment stage, or `fusion`.
    pub stage: String,
    pub epoch: usize,
    /// `probe`, `llm`, `total` or `ce`.
    pub phase: String,
    pub active_size: usize,
    pub train_loss: f64,
    pub pend_loss: Option<f64>,
    pub tau: f64,
    pub lr: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct StageLog {
    pub rows: Vec<StageRow>,
}

pub const CSV_HEADER: &str = "stage,epoch,phase,active_size,train_loss,pend_loss,tau,lr";

impl StageLog {
    pub fn push(&mut self, row: StageRow) {
        log::debug!(
            "stage {} epoch {} {} n={} loss {:.5} tau {:.4} lr {:.3e}",
            row.stage,
            row.epoch,
            row.phase,
            row.active_size,
            row.train_loss,
            row.tau,
            row.lr
        );
        self.rows.push(row);
    }

    pub fn extend(&mut self, other: StageLog) {
        self.rows.extend(other.rows);
    }

    pub fn to_csv(&self, header_comment: &str) -> String {
        let mut out = format!("# {header_comment}\n{CSV_HEADER}\n");
        for r in &self.rows {
            let pend = r.pend_loss.map(|p| format!("{p:.6}")).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{},{:.6},{},{:.6},{}",
                r.stage, r.epoch, r.phase, r.active_size, r.train_loss, pend, r.tau, r.lr
            );
        }
        out
    }

    /// Appends rows to `path`, writing the header when the file is new.
    pub fn append_csv(&self, path: &Path, header_comment: &str) -> Result<()> {
        use std::io::Write;
        let text = if path.exists() {
            let full = self.to_csv(header_comment);
            full.splitn(3, '\n').nth(2).unwrap_or_default().to_string()
        } else {
            self.to_csv(header_comment)
        };
        std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .and_then(|mut f| f.write_all(text.as_bytes()))
            .map_err(|e| Error::io(path, e))
    }
}
