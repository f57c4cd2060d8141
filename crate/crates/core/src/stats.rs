//! Solve-time statistics in a four-column table (mean, std, max, min in ms).

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("no solve-time samples")]
    Empty,
    #[error("malformed statistics table: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveStats {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub max: f64,
    pub min: f64,
    pub count: usize,
}

impl SolveStats {
    pub fn from_samples(samples: &[f64]) -> Result<Self, StatsError> {
        if samples.is_empty() {
            return Err(StatsError::Empty);
        }
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;
        Ok(Self {
            mean,
            std: var.sqrt(),
            max: samples.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            min: samples.iter().copied().fold(f64::INFINITY, f64::min),
            count: samples.len(),
        })
    }
}

const HEADER: [&str; 5] = ["task", "mean (ms)", "std (ms)", "max (ms)", "min (ms)"];

/// Markdown table with one row per task.
pub fn render_table(rows: &[(String, SolveStats)]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "| {} |", HEADER.join(" | "));
    let _ = writeln!(out, "|{}", "---|".repeat(HEADER.len()));
    for (task, s) in rows {
        let _ = writeln!(out, "| {task} | {:.2} | {:.2} | {:.2} | {:.2} |", s.mean, s.std, s.max, s.min);
    }
    out
}

/// Parse a table written by [`render_table`]. Sample counts are not part of
/// the table and come back as zero.
pub fn parse_table(text: &str) -> Result<Vec<(String, SolveStats)>, StatsError> {
    let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
    let cells = |line: &str| -> Vec<String> {
        line.trim_matches('|').split('|').map(|c| c.trim().to_string()).collect()
    };
    let header = lines.next().ok_or_else(|| StatsError::Malformed("empty input".into()))?;
    if cells(header) != HEADER {
        return Err(StatsError::Malformed(format!("unexpected header {header:?}")));
    }
    lines.next().ok_or_else(|| StatsError::Malformed("missing separator".into()))?;
    lines
        .map(|line| {
            let c = cells(line);
            if c.len() != HEADER.len() {
                return Err(StatsError::Malformed(format!("row {line:?}")));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| StatsError::Malformed(format!("number {s:?}")));
            Ok((
                c[0].clone(),
                SolveStats {
                    mean: num(&c[1])?,
                    std: num(&c[2])?,
                    max: num(&c[3])?,
                    min: num(&c[4])?,
                    count: 0,
                },
            ))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_samples() {
        let s = SolveStats::from_samples(&[5.0, 5.0, 5.0]).unwrap();
        assert_eq!((s.mean, s.std, s.max, s.min, s.count), (5.0, 0.0, 5.0, 5.0, 3));
        assert_eq!(SolveStats::from_samples(&[]), Err(StatsError::Empty));
    }

    #[test]
    fn table_round_trip() {
        let row = SolveStats {
            mean: 5.64,
            std: 2.3,
            max: 14.12,
            min: 3.27,
            count: 0,
        };
        let text = render_table(&[("run-jump-run".to_string(), row)]);
        assert!(text.contains("| run-jump-run | 5.64 | 2.30 | 14.12 | 3.27 |"));
        assert_eq!(parse_table(&text).unwrap(), vec![("run-jump-run".to_string(), row)]);
        assert!(parse_table("| a | b |\n|---|").is_err());
    }
}
