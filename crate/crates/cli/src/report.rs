//! Cross-run comparison tables.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use labelattn_core::metrics::MetricsReport;
use serde::Serialize;

use crate::error::{CliError, Result};
use crate::pipeline::{read_manifest, MANIFEST_FILE};

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Json,
    Csv,
    Md,
}

/// One row of a comparison table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Row {
    pub name: String,
    pub head: String,
    pub init: String,
    pub best_epoch: usize,
    pub threshold: f64,
    pub macro_auc: Option<f64>,
    pub micro_auc: Option<f64>,
    pub macro_f1: f64,
    pub micro_f1: f64,
    pub p_at_5: f64,
    pub p_at_8: f64,
    pub p_at_15: f64,
}

impl Row {
    pub fn new(name: &str, head: &str, init: &str, best_epoch: usize, r: &MetricsReport) -> Self {
        Self {
            name: name.to_string(),
            head: head.to_string(),
            init: init.to_string(),
            best_epoch,
            threshold: r.threshold,
            macro_auc: r.macro_auc,
            micro_auc: r.micro_auc,
            macro_f1: r.macro_f1,
            micro_f1: r.micro_f1,
            p_at_5: r.p_at_5,
            p_at_8: r.p_at_8,
            p_at_15: r.p_at_15,
        }
    }
}

/// Run directories named on the command line; a directory without a
/// manifest is searched one level deep (an ablation output directory).
pub fn collect_runs(dirs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for dir in dirs {
        if dir.join(MANIFEST_FILE).exists() {
            out.push(dir.clone());
            continue;
        }
        let mut children: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(CliError::io(dir))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.join(MANIFEST_FILE).exists())
            .collect();
        if children.is_empty() {
            return Err(CliError::Io {
                path: dir.join(MANIFEST_FILE),
                source: std::io::Error::new(std::io::ErrorKind::NotFound, "no run manifest found"),
            });
        }
        children.sort();
        out.extend(children);
    }
    Ok(out)
}

pub fn rows_from_runs(runs: &[PathBuf]) -> Result<Vec<Row>> {
    runs.iter()
        .map(|run| {
            let m = read_manifest(run)?;
            let name = run.file_name().map_or_else(|| run.display().to_string(), |n| n.to_string_lossy().into_owned());
            Ok(Row::new(&name, m.config.head.kind.name(), &m.init, m.best_epoch, &m.report))
        })
        .collect()
}

fn pct(x: Option<f64>) -> String {
    x.map_or_else(|| "n/a".into(), |v| format!("{:.1}", 100.0 * v))
}

fn num(x: Option<f64>) -> String {
    x.map_or_else(String::new, |v| format!("{v}"))
}

const CSV_HEADER: [&str; 12] = [
    "run", "head", "init", "best_epoch", "threshold", "macro_auc", "micro_auc", "macro_f1", "micro_f1", "p_at_5",
    "p_at_8", "p_at_15",
];

/// RFC-4180: CRLF record ends, fields quoted only when needed, missing
/// AUCs left empty.
pub fn to_csv(rows: &[Row]) -> String {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::CRLF)
        .from_writer(Vec::new());
    w.write_record(CSV_HEADER).expect("in-memory write");
    for r in rows {
        w.write_record([
            r.name.clone(),
            r.head.clone(),
            r.init.clone(),
            r.best_epoch.to_string(),
            r.threshold.to_string(),
            num(r.macro_auc),
            num(r.micro_auc),
            r.macro_f1.to_string(),
            r.micro_f1.to_string(),
            r.p_at_5.to_string(),
            r.p_at_8.to_string(),
            r.p_at_15.to_string(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
}

/// Markdown table with grouped AUC / F1 / precision columns, scores in
/// percent.
pub fn to_markdown(rows: &[Row]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "| Model | AUC Macro | AUC Micro | F1 Macro | F1 Micro | P@5 | P@8 | P@15 |");
    let _ = writeln!(s, "|---|---:|---:|---:|---:|---:|---:|---:|");
    for r in rows {
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} | {} | {} | {} | {} |",
            r.name.replace('|', "\\|"),
            pct(r.macro_auc),
            pct(r.micro_auc),
            pct(Some(r.macro_f1)),
            pct(Some(r.micro_f1)),
            pct(Some(r.p_at_5)),
            pct(Some(r.p_at_8)),
            pct(Some(r.p_at_15)),
        );
    }
    s
}

pub fn render(rows: &[Row], format: Format) -> String {
    match format {
        Format::Json => serde_json::to_string_pretty(rows).expect("rows serialize") + "\n",
        Format::Csv => to_csv(rows),
        Format::Md => to_markdown(rows),
    }
}

/// `report` command.
pub fn run_report(dirs: &[PathBuf], format: Format, out: Option<&Path>) -> Result<String> {
    let rows = rows_from_runs(&collect_runs(dirs)?)?;
    let text = render(&rows, format);
    if let Some(path) = out {
        crate::pipeline::write_atomic(path, text.as_bytes())?;
    }
    Ok(text)
}
