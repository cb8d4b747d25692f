//! Run reports and their renderings.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{CardError, Result};

/// Columns every rendering starts with, in this order.
pub const STABLE_COLUMNS: [&str; 5] = ["detector", "avg_chunk_size", "dimension", "dcr", "total_time_s"];

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimings {
    pub chunking: f64,
    pub feature: f64,
    pub train: f64,
    pub lookup: f64,
    pub delta: f64,
}

impl PhaseTimings {
    pub fn total(&self) -> f64 {
        self.chunking + self.feature + self.train + self.lookup + self.delta
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DedupReport {
    pub detector: String,
    pub avg_chunk_size: usize,
    /// Context-aware feature dimension (0 for detectors without one).
    pub dimension: usize,
    pub bytes_before: u64,
    /// Unique chunk bytes + patch bytes + metadata bytes.
    pub bytes_after: u64,
    pub unique_bytes: u64,
    pub patch_bytes: u64,
    pub metadata_bytes: u64,
    pub dcr: f64,
    /// `bytes_before / (unique_bytes + patch_bytes)`.
    pub dcr_no_metadata: f64,
    pub chunk_count: u64,
    pub duplicate_count: u64,
    pub similar_count: u64,
    pub unique_count: u64,
    pub phase_timings: PhaseTimings,
}

impl DedupReport {
    pub fn total_time_s(&self) -> f64 {
        self.phase_timings.total()
    }
}

/// `bytes_before / bytes_after`.
pub fn compute_dcr(bytes_before: u64, bytes_after: u64) -> Result<f64> {
    if bytes_after == 0 {
        return Err(CardError::param("bytes_after must be positive"));
    }
    Ok(bytes_before as f64 / bytes_after as f64)
}

/// Signed percentage change from `baseline` to `variant`, two decimals.
pub fn format_relative_delta(baseline: f64, variant: f64) -> String {
    let pct = (variant - baseline) / baseline * 100.0;
    let s = format!("{:.2}", pct.abs());
    if s == "0.00" {
        "0.00%".to_string()
    } else if pct > 0.0 {
        format!("+{s}%")
    } else {
        format!("-{s}%")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReportFormat {
    Table,
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = CardError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "table" => Ok(ReportFormat::Table),
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            _ => Err(CardError::param(format!("unknown report format {s:?}"))),
        }
    }
}

/// Flat CSV row: stable columns first, then everything else.
#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    detector: String,
    avg_chunk_size: usize,
    dimension: usize,
    dcr: f64,
    total_time_s: f64,
    dcr_no_metadata: f64,
    bytes_before: u64,
    bytes_after: u64,
    unique_bytes: u64,
    patch_bytes: u64,
    metadata_bytes: u64,
    chunk_count: u64,
    duplicate_count: u64,
    similar_count: u64,
    unique_count: u64,
    chunking_s: f64,
    feature_s: f64,
    train_s: f64,
    lookup_s: f64,
    delta_s: f64,
}

const CSV_HEADER: &str = "detector,avg_chunk_size,dimension,dcr,total_time_s,dcr_no_metadata,bytes_before,bytes_after,unique_bytes,patch_bytes,metadata_bytes,chunk_count,duplicate_count,similar_count,unique_count,chunking_s,feature_s,train_s,lookup_s,delta_s";

impl From<&DedupReport> for CsvRow {
    fn from(r: &DedupReport) -> Self {
        let t = r.phase_timings;
        CsvRow {
            detector: r.detector.clone(),
            avg_chunk_size: r.avg_chunk_size,
            dimension: r.dimension,
            dcr: r.dcr,
            total_time_s: r.total_time_s(),
            dcr_no_metadata: r.dcr_no_metadata,
            bytes_before: r.bytes_before,
            bytes_after: r.bytes_after,
            unique_bytes: r.unique_bytes,
            patch_bytes: r.patch_bytes,
            metadata_bytes: r.metadata_bytes,
            chunk_count: r.chunk_count,
            duplicate_count: r.duplicate_count,
            similar_count: r.similar_count,
            unique_count: r.unique_count,
            chunking_s: t.chunking,
            feature_s: t.feature,
            train_s: t.train,
            lookup_s: t.lookup,
            delta_s: t.delta,
        }
    }
}

impl From<CsvRow> for DedupReport {
    fn from(r: CsvRow) -> Self {
        DedupReport {
            detector: r.detector,
            avg_chunk_size: r.avg_chunk_size,
            dimension: r.dimension,
            bytes_before: r.bytes_before,
            bytes_after: r.bytes_after,
            unique_bytes: r.unique_bytes,
            patch_bytes: r.patch_bytes,
            metadata_bytes: r.metadata_bytes,
            dcr: r.dcr,
            dcr_no_metadata: r.dcr_no_metadata,
            chunk_count: r.chunk_count,
            duplicate_count: r.duplicate_count,
            similar_count: r.similar_count,
            unique_count: r.unique_count,
            phase_timings: PhaseTimings {
                chunking: r.chunking_s,
                feature: r.feature_s,
                train: r.train_s,
                lookup: r.lookup_s,
                delta: r.delta_s,
            },
        }
    }
}

pub fn render(reports: &[DedupReport], format: ReportFormat) -> Result<String> {
    match format {
        ReportFormat::Table => Ok(render_table(reports)),
        ReportFormat::Csv => render_csv(reports),
        ReportFormat::Json => Ok(serde_json::to_string_pretty(reports)? + "\n"),
    }
}

/// Aligned text table. DCR has two decimals; the last column compares each
/// row's DCR with the first row's.
pub fn render_table(reports: &[DedupReport]) -> String {
    let mut rows: Vec<[String; 6]> = vec![[
        "detector".into(),
        "avg_chunk_size".into(),
        "dimension".into(),
        "dcr".into(),
        "total_time_s".into(),
        "dcr_vs_first".into(),
    ]];
    for r in reports {
        let first = reports[0].dcr;
        rows.push([
            r.detector.clone(),
            r.avg_chunk_size.to_string(),
            r.dimension.to_string(),
            format!("{:.2}", r.dcr),
            format!("{:.3}", r.total_time_s()),
            format_relative_delta(first, r.dcr),
        ]);
    }
    let widths: Vec<usize> = (0..6).map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0)).collect();
    let mut out = String::new();
    for r in &rows {
        let line: Vec<String> = r
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(c, (cell, w))| if c == 0 { format!("{cell:<w$}") } else { format!("{cell:>w$}") })
            .collect();
        let _ = writeln!(out, "{}", line.join("  ").trim_end());
    }
    out
}

pub fn render_csv(reports: &[DedupReport]) -> Result<String> {
    if reports.is_empty() {
        return Ok(format!("{CSV_HEADER}\n"));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in reports {
        w.serialize(CsvRow::from(r))?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| CardError::param(format!("csv flush failed: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

pub fn parse_csv(text: &str) -> Result<Vec<DedupReport>> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header.join(",") != CSV_HEADER {
        return Err(CardError::Format {
            offset: 0,
            reason: "unexpected CSV header".into(),
        });
    }
    rdr.deserialize::<CsvRow>()
        .map(|row| Ok(DedupReport::from(row?)))
        .collect()
}

pub fn parse_json(text: &str) -> Result<Vec<DedupReport>> {
    Ok(serde_json::from_str(text)?)
}
