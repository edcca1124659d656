//! CSV and JSON artifact writers (and the readers the CLI needs).
//!
//! Floats are written in exponent notation, which round-trips and is
//! deterministic for identical bit patterns. The records file carries a
//! `fit_wall_ms` column; experiment runs write it as 0 so outputs stay
//! byte-identical across repeated runs, and the measured times go to
//! `timings.csv` instead.

use super::experiment::{ExperimentReport, RecordRow};
use crate::error::{Error, Result};
use crate::select::{RecordSummary, SelectionPath};
use std::io::Write;
use std::path::Path;

pub const RECORDS_HEADER: &str =
    "trial,id,tree_hash,ranks,L,complexity,emp_risk,risk,excess_risk,seed,fit_wall_ms";

pub fn write_records_csv(path: &Path, rows: &[RecordRow], deterministic: bool) -> Result<()> {
    let mut out = String::new();
    out.push_str(RECORDS_HEADER);
    out.push('\n');
    for r in rows {
        let l = r
            .resolution
            .map(|l| l.to_string())
            .unwrap_or_default();
        let wall = if deterministic { 0 } else { r.wall_ms };
        out.push_str(&format!(
            "{},{},{},{},{},{},{:e},{:e},{:e},{},{}\n",
            r.trial,
            r.id,
            r.tree_hash,
            r.ranks,
            l,
            r.complexity,
            r.emp_risk,
            r.risk,
            r.excess_risk,
            r.seed,
            wall
        ));
    }
    write_atomic(path, out.as_bytes())
}

pub fn write_timings_csv(path: &Path, rows: &[RecordRow]) -> Result<()> {
    let mut out = String::from("trial,id,fit_wall_ms\n");
    for r in rows {
        out.push_str(&format!("{},{},{}\n", r.trial, r.id, r.wall_ms));
    }
    write_atomic(path, out.as_bytes())
}

pub fn write_path_csv(
    path: &Path,
    paths: &[(usize, SelectionPath)],
    rows: &[RecordRow],
) -> Result<()> {
    let mut out = String::from("trial,lambda_break,chosen_id,complexity\n");
    for (trial, p) in paths {
        for (i, &id) in p.chosen.iter().enumerate() {
            let lambda = if i == 0 { 0.0 } else { p.breakpoints[i - 1] };
            let complexity = p.complexities[i];
            debug_assert!(rows
                .iter()
                .any(|r| r.trial == *trial && r.id == id && r.complexity == complexity));
            out.push_str(&format!("{},{:e},{},{}\n", trial, lambda, id, complexity));
        }
    }
    write_atomic(path, out.as_bytes())
}

pub fn write_selection_json(path: &Path, report: &ExperimentReport) -> Result<()> {
    let per_trial: Vec<serde_json::Value> = report
        .outcomes
        .iter()
        .map(|o| {
            serde_json::json!({
                "trial": o.trial,
                "lambda_cj": o.lambda_cj,
                "two_lambda_cj": o.lambda_cj.map(|l| 2.0 * l),
                "fallback": o.fallback,
                "selected": {
                    "id": o.selected_id,
                    "complexity": o.selected_complexity,
                    "emp_risk": o.selected_emp_risk,
                    "risk": o.selected_risk,
                    "excess_risk": o.selected_excess,
                },
                "oracle": {
                    "id": o.oracle_id,
                    "complexity": o.oracle_complexity,
                    "risk": o.oracle_risk,
                    "excess_risk": o.oracle_excess,
                },
                "runner_up_id": o.runner_up_id,
            })
        })
        .collect();
    let failures: Vec<serde_json::Value> = report
        .failures
        .iter()
        .map(|(t, e)| serde_json::json!({ "trial": t, "error": e }))
        .collect();
    let doc = serde_json::json!({
        "trials": per_trial,
        "failures": failures,
        "aggregates": {
            "trials": report.aggregates.trials,
            "failed_trials": report.aggregates.failed_trials,
            "mean_selected_complexity": report.aggregates.mean_selected_complexity,
            "mean_oracle_complexity": report.aggregates.mean_oracle_complexity,
            "mean_selected_risk": report.aggregates.mean_selected_risk,
            "mean_oracle_risk": report.aggregates.mean_oracle_risk,
            "mean_selected_excess": report.aggregates.mean_selected_excess,
            "mean_oracle_excess": report.aggregates.mean_oracle_excess,
        },
    });
    let text =
        serde_json::to_string_pretty(&doc).map_err(|e| Error::Parse(e.to_string()))?;
    write_atomic(path, text.as_bytes())
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(bytes)?;
    Ok(())
}

/// Minimal row shape read back from a records file.
#[derive(Clone, Debug)]
pub struct ParsedRecord {
    pub trial: usize,
    pub summary: RecordSummary,
    pub risk: f64,
    pub excess_risk: f64,
    pub resolution: Option<usize>,
}

/// Parse a records CSV produced by [`write_records_csv`].
pub fn read_records_csv(path: &Path) -> Result<Vec<ParsedRecord>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse("empty records file".into()))?;
    let cols: Vec<&str> = header.split(',').collect();
    let col = |name: &str| -> Result<usize> {
        cols.iter()
            .position(|c| *c == name)
            .ok_or_else(|| Error::Parse(format!("missing column {name}")))
    };
    let (c_trial, c_id, c_ranks, c_l, c_cm, c_risk) = (
        col("trial")?,
        col("id")?,
        col("ranks")?,
        col("L")?,
        col("complexity")?,
        col("emp_risk")?,
    );
    let c_test = col("risk").ok();
    let c_excess = col("excess_risk").ok();
    let mut out = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let get = |i: usize| -> Result<&str> {
            fields
                .get(i)
                .copied()
                .ok_or_else(|| Error::Parse(format!("short row at line {}", lineno + 2)))
        };
        let parse_f = |s: &str| -> Result<f64> {
            s.parse()
                .map_err(|_| Error::Parse(format!("bad float {s:?} at line {}", lineno + 2)))
        };
        let tree_size = get(c_ranks)?.split('|').count();
        out.push(ParsedRecord {
            trial: get(c_trial)?
                .parse()
                .map_err(|_| Error::Parse("bad trial".into()))?,
            summary: RecordSummary::new(
                get(c_id)?.parse().map_err(|_| Error::Parse("bad id".into()))?,
                get(c_cm)?
                    .parse()
                    .map_err(|_| Error::Parse("bad complexity".into()))?,
                parse_f(get(c_risk)?)?,
                tree_size,
            ),
            risk: c_test.map(|i| get(i).and_then(|s| parse_f(s))).transpose()?.unwrap_or(f64::NAN),
            excess_risk: c_excess
                .map(|i| get(i).and_then(|s| parse_f(s)))
                .transpose()?
                .unwrap_or(f64::NAN),
            resolution: {
                let s = get(c_l)?;
                if s.is_empty() {
                    None
                } else {
                    Some(s.parse().map_err(|_| Error::Parse("bad L".into()))?)
                }
            },
        });
    }
    Ok(out)
}
