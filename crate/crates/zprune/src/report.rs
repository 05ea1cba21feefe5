//! Canonical text renderings of sweep tables and per-layer pruning reports.
//!
//! Scalars use fixed six-decimal formatting and fields appear in a fixed
//! order, so equal inputs always give byte-identical output.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use zprune_core::eval::{EvalResult, SweepTable};
use zprune_core::pruning::LayerReport;

use crate::error::{Result, ZpruneError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ReportFormat {
    Json,
    Csv,
}

impl ReportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Json => "json",
            ReportFormat::Csv => "csv",
        }
    }
}

/// Run metadata embedded in every report row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    pub engine_version: String,
    /// SHA-256 of the dense checkpoint file.
    pub fixture_hash: String,
    pub seed: u64,
    /// Perplexity window length (non-overlapping windows).
    pub ppl_stride: usize,
}

pub const COLUMNS: [&str; 12] = [
    "model_tag",
    "method",
    "rho",
    "ppl",
    "accuracy",
    "tokens_evaluated",
    "wall_millis",
    "clamped_probs",
    "ppl_stride",
    "engine_version",
    "fixture_hash",
    "seed",
];

fn fixed(v: f64) -> String {
    format!("{v:.6}")
}

fn json_str(s: &str) -> String {
    serde_json::to_string(s).expect("string serializes")
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn json_row(r: &EvalResult, p: &Provenance) -> String {
    let accuracy = r.accuracy.map_or_else(|| "null".to_string(), fixed);
    format!(
        "{{\"model_tag\":{},\"method\":{},\"rho\":{},\"ppl\":{},\"accuracy\":{},\"tokens_evaluated\":{},\"wall_millis\":{},\"clamped_probs\":{},\"ppl_stride\":{},\"engine_version\":{},\"fixture_hash\":{},\"seed\":{}}}",
        json_str(&r.model_tag),
        json_str(r.method_name()),
        fixed(r.rho),
        fixed(r.ppl),
        accuracy,
        r.tokens_evaluated,
        r.wall_millis,
        r.clamped,
        p.ppl_stride,
        json_str(&p.engine_version),
        json_str(&p.fixture_hash),
        p.seed,
    )
}

pub fn render_json(table: &SweepTable, p: &Provenance) -> String {
    let rows: Vec<String> = table.rows.iter().map(|r| json_row(r, p)).collect();
    format!("[\n{}\n]\n", rows.join(",\n"))
}

pub fn render_csv(table: &SweepTable, p: &Provenance) -> String {
    let mut out = COLUMNS.join(",");
    out.push('\n');
    for r in &table.rows {
        let fields = [
            csv_field(&r.model_tag),
            r.method_name().to_string(),
            fixed(r.rho),
            fixed(r.ppl),
            r.accuracy.map(fixed).unwrap_or_default(),
            r.tokens_evaluated.to_string(),
            r.wall_millis.to_string(),
            r.clamped.to_string(),
            p.ppl_stride.to_string(),
            csv_field(&p.engine_version),
            csv_field(&p.fixture_hash),
            p.seed.to_string(),
        ];
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

pub fn render_report(table: &SweepTable, p: &Provenance, format: ReportFormat) -> Result<String> {
    if table.rows.is_empty() {
        return Err(ZpruneError::InvalidArchive("cannot emit an empty report".into()));
    }
    Ok(match format {
        ReportFormat::Json => render_json(table, p),
        ReportFormat::Csv => render_csv(table, p),
    })
}

pub fn emit_report(table: &SweepTable, path: &Path, format: ReportFormat, p: &Provenance) -> Result<()> {
    let text = render_report(table, p, format)?;
    fs::write(path, text).map_err(|e| ZpruneError::io(path, e))
}

/// One JSON object per line:
/// `{layer_id, method, rho, mode, kept, dropped, sparsity, millis}`.
pub fn render_layer_reports(reports: &[LayerReport]) -> String {
    let mut out = String::new();
    for r in reports {
        writeln!(
            out,
            "{{\"layer_id\":{},\"method\":{},\"rho\":{},\"mode\":{},\"kept\":{},\"dropped\":{},\"sparsity\":{},\"millis\":{}}}",
            json_str(&r.layer_id),
            json_str(r.method.as_str()),
            fixed(r.rho),
            json_str(r.mode.as_str()),
            r.kept,
            r.dropped,
            fixed(r.sparsity),
            r.millis,
        )
        .expect("writing to a String");
    }
    out
}
