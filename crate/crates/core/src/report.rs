//! CSV, SVG and binary exports.

use std::fmt::Write as _;
use std::io::Read;

use serde::Deserialize;
use thiserror::Error;

use crate::attribution::{RankedIndices, ScoreVector};
use crate::brittleness::{BrittlenessReport, SupportMode, SupportResult, WinRate};
use crate::lds::{LdsResult, SubsetMask};
use crate::store::EmbeddingSet;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Parse(String),
}

pub const RANKING_HEADER: &str = "target_id,rank,train_index,train_id,score";
pub const SUPPORT_HEADER: &str = "target_id,mode,support";

/// Appends one block of ranking rows (1-based rank).
pub fn write_ranking(
    out: &mut String,
    set: &EmbeddingSet,
    scores: &ScoreVector,
    ranked: &RankedIndices,
) {
    for (pos, &i) in ranked.indices.iter().enumerate() {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            scores.target_id,
            pos + 1,
            i,
            set.ids()[i],
            scores.scores[i]
        );
    }
}

#[derive(Debug, Deserialize)]
struct RankingRow {
    target_id: u64,
    rank: usize,
    train_index: usize,
    #[allow(dead_code)]
    train_id: u64,
    #[allow(dead_code)]
    score: String,
}

/// Parses a ranking CSV into per-target index lists, in file order.
pub fn read_ranking(reader: impl Read) -> Result<Vec<(u64, Vec<usize>)>, ReportError> {
    let mut out: Vec<(u64, Vec<usize>)> = Vec::new();
    for row in csv::Reader::from_reader(reader).deserialize() {
        let row: RankingRow = row?;
        match out.last_mut() {
            Some((id, list)) if *id == row.target_id => {
                if row.rank != list.len() + 1 {
                    return Err(ReportError::Parse(format!(
                        "target {}: rank {} out of sequence",
                        row.target_id, row.rank
                    )));
                }
                list.push(row.train_index);
            }
            _ => {
                if row.rank != 1 {
                    return Err(ReportError::Parse(format!(
                        "target {}: block does not start at rank 1",
                        row.target_id
                    )));
                }
                out.push((row.target_id, vec![row.train_index]));
            }
        }
    }
    Ok(out)
}

/// A support row as read back from CSV; `None` support marks an error row.
#[derive(Debug, Clone, PartialEq)]
pub struct SupportRow {
    pub target_id: u64,
    pub mode: SupportMode,
    pub support: Option<i64>,
}

pub fn support_row(r: &SupportResult) -> String {
    format!("{},{},{}", r.target_id, r.mode, r.signed_support())
}

pub fn support_error_row(target_id: u64, mode: SupportMode) -> String {
    format!("{target_id},{mode},error")
}

pub fn read_support(reader: impl Read) -> Result<Vec<SupportRow>, ReportError> {
    let mut out = Vec::new();
    for rec in csv::Reader::from_reader(reader).records() {
        let rec = rec?;
        if rec.len() != 3 {
            return Err(ReportError::Parse(format!(
                "expected 3 fields, got {}",
                rec.len()
            )));
        }
        let target_id = rec[0]
            .parse()
            .map_err(|_| ReportError::Parse(format!("bad target id '{}'", &rec[0])))?;
        let mode = rec[1].parse().map_err(ReportError::Parse)?;
        let support = match &rec[2] {
            "error" => None,
            s => Some(
                s.parse::<i64>()
                    .map_err(|_| ReportError::Parse(format!("bad support '{s}'")))?,
            ),
        };
        out.push(SupportRow {
            target_id,
            mode,
            support,
        });
    }
    Ok(out)
}

/// CDF points followed by an `auc,<value>` summary line.
pub fn cdf_csv(report: &BrittlenessReport) -> String {
    let mut out = String::from("x,fraction\n");
    for (x, f) in &report.cdf {
        let _ = writeln!(out, "{x},{f}");
    }
    let _ = writeln!(out, "auc,{}", report.auc);
    out
}

pub fn win_rate_csv(w: &WinRate) -> String {
    format!(
        "smaller,equal,larger\n{},{},{}\n",
        w.smaller, w.equal, w.larger
    )
}

pub fn lds_csv(result: &LdsResult) -> String {
    let mut out = String::from("target_id,rho\n");
    for (id, rho) in result.target_ids.iter().zip(&result.per_target_rho) {
        let _ = writeln!(out, "{id},{rho}");
    }
    let _ = writeln!(out, "mean,{}", result.mean_rho);
    out
}

/// Bit-packed subset masks: `"ATRM" | version u32 = 1 | n u64 | m u64`, then
/// per mask `subset_seed u64` and `ceil(n/8)` bytes, least significant bit
/// first. Little-endian throughout.
pub fn masks_to_bytes(masks: &[SubsetMask]) -> Vec<u8> {
    let n = masks.first().map_or(0, |m| m.mask.len());
    let mut out = Vec::new();
    out.extend_from_slice(b"ATRM");
    out.extend_from_slice(&1u32.to_le_bytes());
    out.extend_from_slice(&(n as u64).to_le_bytes());
    out.extend_from_slice(&(masks.len() as u64).to_le_bytes());
    for m in masks {
        out.extend_from_slice(&m.subset_seed.to_le_bytes());
        let mut bytes = vec![0u8; n.div_ceil(8)];
        for (i, &bit) in m.mask.iter().enumerate() {
            if bit {
                bytes[i / 8] |= 1 << (i % 8);
            }
        }
        out.extend_from_slice(&bytes);
    }
    out
}

pub fn masks_from_bytes(bytes: &[u8]) -> Result<Vec<SubsetMask>, ReportError> {
    let bad = |msg: &str| ReportError::Parse(format!("mask file: {msg}"));
    if bytes.len() < 24 || &bytes[..4] != b"ATRM" {
        return Err(bad("missing ATRM header"));
    }
    if u32::from_le_bytes(bytes[4..8].try_into().unwrap()) != 1 {
        return Err(bad("unsupported version"));
    }
    let n = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let m = u64::from_le_bytes(bytes[16..24].try_into().unwrap()) as usize;
    let stride = 8 + n.div_ceil(8);
    if bytes.len() != 24 + m * stride {
        return Err(bad("length does not match header"));
    }
    Ok(bytes[24..]
        .chunks_exact(stride)
        .map(|chunk| SubsetMask {
            subset_seed: u64::from_le_bytes(chunk[..8].try_into().unwrap()),
            mask: (0..n)
                .map(|i| chunk[8 + i / 8] >> (i % 8) & 1 == 1)
                .collect(),
        })
        .collect())
}

/// Step-function line plot of one or more CDFs.
pub fn cdf_svg(series: &[(&str, &BrittlenessReport)]) -> String {
    const W: f64 = 480.0;
    const H: f64 = 320.0;
    const PAD: f64 = 40.0;
    const COLORS: [&str; 6] = [
        "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b",
    ];
    let k = series.iter().map(|(_, r)| r.k).max().unwrap_or(1).max(1) as f64;
    let sx = |x: f64| PAD + x / k * (W - 2.0 * PAD);
    let sy = |y: f64| H - PAD - y * (H - 2.0 * PAD);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = writeln!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<path d="M{x0},{y0} L{x1},{y0} M{x0},{y0} L{x0},{y1}" stroke="black" fill="none"/>"#,
        x0 = sx(0.0),
        y0 = sy(0.0),
        x1 = sx(k),
        y1 = sy(1.0)
    );
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">subset size (k = {k})</text>"#,
        W / 2.0,
        H - 8.0
    );
    for (idx, (name, report)) in series.iter().enumerate() {
        let color = COLORS[idx % COLORS.len()];
        let mut d = String::new();
        let mut prev: Option<f64> = None;
        for &(x, f) in &report.cdf {
            let (px, py) = (sx(x as f64), sy(f));
            match prev {
                None => {
                    let _ = write!(d, "M{px:.2},{py:.2}");
                }
                Some(last) => {
                    let _ = write!(d, " L{px:.2},{:.2} L{px:.2},{py:.2}", sy(last));
                }
            }
            prev = Some(f);
        }
        let _ = writeln!(
            svg,
            r#"<path d="{d}" stroke="{color}" stroke-width="2" fill="none"/>"#
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" font-size="12" fill="{color}">{name} (AUC {:.3})</text>"#,
            PAD + 8.0,
            PAD + 14.0 * (idx as f64 + 1.0),
            report.auc
        );
    }
    svg.push_str("</svg>\n");
    svg
}
