//! Prediction-error reporting: percentile tables of the normalized absolute
//! error and sequence-averaged error distributions, plus the provenance CSV
//! writer the command-line tools share.

use crate::rng::{Purpose, RngStream};
use std::io::{BufWriter, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("no records to report on")]
    EmptyInput,
    #[error("label at index {0} is not positive; use absolute mode")]
    NonPositiveLabel(usize),
    #[error("window of {n_seq} exceeds the {len} available records")]
    WindowTooLong { n_seq: usize, len: usize },
    #[error("labels and predictions differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Sorted (error value, percentile rank in percent) pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct PercentileTable {
    pub rows: Vec<(f64, f64)>,
}

impl PercentileTable {
    fn from_errors(mut errors: Vec<f64>) -> Self {
        errors.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = errors.len() as f64;
        let rows = errors
            .into_iter()
            .enumerate()
            .map(|(i, e)| (e, 100.0 * (i + 1) as f64 / n))
            .collect();
        Self { rows }
    }

    /// Smallest error value whose percentile rank reaches `p` (0..100).
    pub fn value_at(&self, p: f64) -> f64 {
        for &(e, rank) in &self.rows {
            if rank >= p {
                return e;
            }
        }
        self.rows.last().map(|r| r.0).unwrap_or(f64::NAN)
    }

    /// Percentile rank of a threshold: percent of errors <= x.
    pub fn rank_of(&self, x: f64) -> f64 {
        let count = self.rows.iter().take_while(|&&(e, _)| e <= x).count();
        100.0 * count as f64 / self.rows.len() as f64
    }
}

/// Per-record prediction errors: `|pred - label| / label`, or plain
/// `|pred - label|` in absolute mode.
pub fn prediction_errors(
    labels: &[f64],
    preds: &[f64],
    absolute: bool,
) -> Result<Vec<f64>, ReportError> {
    if labels.len() != preds.len() {
        return Err(ReportError::LengthMismatch(labels.len(), preds.len()));
    }
    if labels.is_empty() {
        return Err(ReportError::EmptyInput);
    }
    labels
        .iter()
        .zip(preds.iter())
        .enumerate()
        .map(|(i, (&t, &p))| {
            if absolute {
                Ok((p - t).abs())
            } else if t <= 0.0 {
                Err(ReportError::NonPositiveLabel(i))
            } else {
                Ok((p - t).abs() / t)
            }
        })
        .collect()
}

/// Percentile table of the per-record prediction errors.
pub fn error_percentiles(
    labels: &[f64],
    preds: &[f64],
    absolute: bool,
) -> Result<PercentileTable, ReportError> {
    Ok(PercentileTable::from_errors(prediction_errors(labels, preds, absolute)?))
}

/// Percentile table of the sequence-averaged error
/// `|sum_k (pred_k - label_k)| / sum_k label_k` over `n_draws` contiguous
/// windows of length `n_seq` with seeded random starts.
pub fn sequence_error_percentiles(
    labels: &[f64],
    preds: &[f64],
    n_seq: usize,
    n_draws: usize,
    rng: &RngStream,
) -> Result<PercentileTable, ReportError> {
    if labels.len() != preds.len() {
        return Err(ReportError::LengthMismatch(labels.len(), preds.len()));
    }
    if labels.is_empty() || n_draws == 0 {
        return Err(ReportError::EmptyInput);
    }
    if n_seq == 0 || n_seq > labels.len() {
        return Err(ReportError::WindowTooLong { n_seq, len: labels.len() });
    }
    let mut wrng = rng.substream(Purpose::Shuffle, n_seq as u64);
    let errors: Vec<f64> = (0..n_draws)
        .map(|_| {
            let start = wrng.below(labels.len() - n_seq + 1);
            let mut num = 0.0;
            let mut den = 0.0;
            for k in start..start + n_seq {
                num += preds[k] - labels[k];
                den += labels[k];
            }
            num.abs() / den.max(1e-30)
        })
        .collect();
    Ok(PercentileTable::from_errors(errors))
}

/// Write a CSV with a leading provenance comment line (`# config-hash: ...`),
/// a header row, and the given rows.
pub fn write_csv_with_provenance<P: AsRef<Path>>(
    path: P,
    config_hash: &str,
    header: &[&str],
    rows: &[Vec<String>],
) -> Result<(), ReportError> {
    let mut f = BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "# config-hash: {config_hash}")?;
    writeln!(f, "{}", header.join(","))?;
    for row in rows {
        writeln!(f, "{}", row.join(","))?;
    }
    f.flush()?;
    Ok(())
}

/// Save a percentile table as `error,percentile` CSV.
pub fn save_percentiles<P: AsRef<Path>>(
    table: &PercentileTable,
    path: P,
    config_hash: &str,
) -> Result<(), ReportError> {
    let rows: Vec<Vec<String>> = table
        .rows
        .iter()
        .map(|&(e, p)| vec![format!("{e}"), format!("{p}")])
        .collect();
    write_csv_with_provenance(path, config_hash, &["error", "percentile"], &rows)
}
