//! Fixed CSV headers of every driver output, and a checker for them.

use std::fs;
use std::path::Path;

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CsvSchema {
    pub columns: &'static [&'static str],
    /// Columns that hold labels; every other column must parse as a number.
    pub text_columns: &'static [&'static str],
}

pub const RESULTS: CsvSchema = CsvSchema {
    columns: &["query_id", "rank", "db_id", "distance"],
    text_columns: &[],
};

pub const SUMMARY: CsvSchema = CsvSchema {
    columns: &[
        "config",
        "R",
        "recall",
        "recall_std",
        "scan_ms",
        "rerank_ms",
    ],
    text_columns: &["config"],
};

pub const SWEEP: CsvSchema = CsvSchema {
    columns: &[
        "config",
        "L",
        "R",
        "recall",
        "recall_std",
        "scan_ms",
        "rerank_ms",
    ],
    text_columns: &["config"],
};

pub const PRELIM: CsvSchema = CsvSchema {
    columns: &["ntrain", "encoder", "decoder", "train_mse", "val_mse"],
    text_columns: &["encoder", "decoder"],
};

pub const HISTORY: CsvSchema = CsvSchema {
    columns: &["epoch", "train_mse", "val_mse", "lr"],
    text_columns: &[],
};

pub const SENSITIVITY: CsvSchema = CsvSchema {
    columns: &[
        "factor",
        "value",
        "epochs",
        "final_train_mse",
        "final_val_mse",
        "best_val_mse",
        "natural_val_mse",
        "epochs_to_beat_natural",
        "diverged_at",
    ],
    // the last two are empty when the event never happened
    text_columns: &["factor", "value", "epochs_to_beat_natural", "diverged_at"],
};

impl CsvSchema {
    pub fn header(&self) -> String {
        self.columns.join(",")
    }

    /// Checks the header and every row; returns the number of data rows.
    pub fn check_text(&self, text: &str) -> Result<usize> {
        let fail = |msg: String| Err(CliError::Schema(msg));
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h == self.header() => {}
            Some(h) => return fail(format!("header {h:?}, expected {:?}", self.header())),
            None => return fail("empty file".into()),
        }
        let mut rows = 0;
        for (i, line) in lines.enumerate() {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != self.columns.len() {
                return fail(format!(
                    "line {}: {} fields, expected {}",
                    i + 2,
                    fields.len(),
                    self.columns.len()
                ));
            }
            for (col, field) in self.columns.iter().zip(&fields) {
                if !self.text_columns.contains(col) && field.parse::<f64>().is_err() {
                    return fail(format!("line {}: {col} = {field:?} is not a number", i + 2));
                }
            }
            rows += 1;
        }
        Ok(rows)
    }

    pub fn check_file(&self, path: &Path) -> Result<usize> {
        self.check_text(&fs::read_to_string(path)?)
            .map_err(|e| CliError::Schema(format!("{}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use qdec_core::search::{RESULTS_HEADER, SUMMARY_HEADER};

    #[test]
    fn headers_match_core_writers() {
        assert_eq!(RESULTS.header(), RESULTS_HEADER);
        assert_eq!(SUMMARY.header(), SUMMARY_HEADER);
        assert_eq!(HISTORY.header(), "epoch,train_mse,val_mse,lr");
    }

    #[test]
    fn accepts_and_rejects() {
        let ok = "ntrain,encoder,decoder,train_mse,val_mse\n100,pq2x8,nn,0.5,0.6\n";
        assert_eq!(PRELIM.check_text(ok).unwrap(), 1);
        assert!(PRELIM.check_text("ntrain,encoder\n").is_err());
        assert!(PRELIM
            .check_text("ntrain,encoder,decoder,train_mse,val_mse\n1,a,b,x,2\n")
            .is_err());
        assert!(PRELIM
            .check_text("ntrain,encoder,decoder,train_mse,val_mse\n1,a,b,2\n")
            .is_err());
        assert!(PRELIM.check_text("").is_err());
    }
}
