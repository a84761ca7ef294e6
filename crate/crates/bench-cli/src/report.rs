//! Report serialization.
//!
//! JSON is a single object mirroring [`Report`]'s fields. CSV is one data
//! row per query record under a `step,ts,relative_error,sketch_rows`
//! header, followed by a `# aggregates` block of `key,value` lines (values
//! empty when the run produced no queries or timing was off). Floats are
//! printed in Rust's shortest round-trip form, so replays with the same
//! seed are byte-identical.

use std::fs;
use std::path::Path;

use winsketch::{Error, Result};

use crate::run::Report;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

/// Renders a report to its textual form.
pub fn render_report(report: &Report, format: Format) -> Result<String> {
    match format {
        Format::Json => {
            let mut s = serde_json::to_string_pretty(report)
                .map_err(|e| Error::Numerical(format!("report serialization failed: {e}")))?;
            s.push('\n');
            Ok(s)
        }
        Format::Csv => Ok(render_csv(report)),
    }
}

fn render_csv(report: &Report) -> String {
    let mut out = String::from("step,ts,relative_error,sketch_rows\n");
    for r in &report.records {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.step, r.ts, r.relative_error, r.sketch_rows
        ));
    }
    out.push_str("# aggregates\n");
    let (max_rows, avg_err, max_err, upd, qry) = match &report.aggregates {
        Some(a) => (
            a.max_sketch_rows.to_string(),
            a.avg_relative_error.to_string(),
            a.max_relative_error.to_string(),
            a.mean_update_time_s.map_or(String::new(), |v| v.to_string()),
            a.mean_query_time_s.map_or(String::new(), |v| v.to_string()),
        ),
        None => Default::default(),
    };
    out.push_str(&format!("max_sketch_rows,{max_rows}\n"));
    out.push_str(&format!("avg_relative_error,{avg_err}\n"));
    out.push_str(&format!("max_relative_error,{max_err}\n"));
    out.push_str(&format!("mean_update_time_s,{upd}\n"));
    out.push_str(&format!("mean_query_time_s,{qry}\n"));
    out.push_str(&format!("coverage_incomplete,{}\n", report.coverage_incomplete));
    out
}

/// Writes the rendered report to `path`.
pub fn emit_report(report: &Report, path: &Path, format: Format) -> Result<()> {
    fs::write(path, render_report(report, format)?)?;
    Ok(())
}
