//! Deterministic SVG heatmaps and the per-slot concept table.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::attention::AttentionMap;
use super::eg::AttributionReport;
use crate::encoder::{Channel, SlotGrid};
use crate::error::{Error, Result};
use crate::journey::vocab::{CLS, PAD, SEP};
use crate::journey::{CodeChannel, Vocabulary};

const CELL: usize = 18;
const MARGIN: usize = 90;
const MIN_OPACITY: f64 = 0.05;

/// A labelled matrix of non-negative values.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub title: String,
    pub row_labels: Vec<String>,
    pub col_labels: Vec<String>,
    /// Row-major, `row_labels.len() × col_labels.len()`.
    pub values: Vec<f64>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

impl Heatmap {
    pub fn to_svg(&self) -> Result<String> {
        let (rows, cols) = (self.row_labels.len(), self.col_labels.len());
        if self.values.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!("{} values for {rows}×{cols} cells", self.values.len())));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::DomainError("heatmap values must be finite".into()));
        }
        let max = self.values.iter().map(|v| v.abs()).fold(0.0, f64::max);
        let width = MARGIN + cols * CELL + 20;
        let height = MARGIN + rows * CELL + 50;
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="monospace" font-size="9">"#
        );
        let _ = writeln!(s, r#"<text x="4" y="14" font-size="12">{}</text>"#, escape(&self.title));
        for (j, l) in self.col_labels.iter().enumerate() {
            let x = MARGIN + j * CELL + CELL / 2;
            let _ = writeln!(
                s,
                r#"<text x="{x}" y="{}" transform="rotate(-60 {x} {})">{}</text>"#,
                MARGIN - 4,
                MARGIN - 4,
                escape(l)
            );
        }
        for (i, l) in self.row_labels.iter().enumerate() {
            let y = MARGIN + i * CELL;
            let _ = writeln!(s, r#"<text x="4" y="{}">{}</text>"#, y + CELL - 5, escape(l));
            for j in 0..cols {
                let v = self.values[i * cols + j].abs();
                let o = if max > 0.0 { MIN_OPACITY + (1.0 - MIN_OPACITY) * v / max } else { MIN_OPACITY };
                let _ = writeln!(
                    s,
                    r##"<rect x="{}" y="{y}" width="{CELL}" height="{CELL}" fill="#b2182b" fill-opacity="{o:.4}" stroke="#dddddd"/>"##,
                    MARGIN + j * CELL
                );
            }
        }
        let ly = MARGIN + rows * CELL + 20;
        for (k, frac) in [0.0, 0.25, 0.5, 0.75, 1.0].iter().enumerate() {
            let o = MIN_OPACITY + (1.0 - MIN_OPACITY) * frac;
            let x = MARGIN + k * 50;
            let _ = writeln!(
                s,
                r##"<rect x="{x}" y="{ly}" width="{CELL}" height="{CELL}" fill="#b2182b" fill-opacity="{o:.4}"/><text x="{}" y="{}">{:.3e}</text>"##,
                x + CELL + 2,
                ly + CELL - 5,
                frac * max
            );
        }
        s.push_str("</svg>\n");
        Ok(s)
    }

    pub fn write_svg(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_svg()?)?;
        Ok(())
    }
}

/// Readable label of every grid column, using the diagnosis row.
pub fn column_labels(grid: &SlotGrid, vocab: &Vocabulary) -> Vec<String> {
    grid.diag_row
        .iter()
        .map(|&t| vocab.label(CodeChannel::Diagnosis, t))
        .collect()
}

/// Heatmap of an attention map restricted to the unmasked columns; `head = None` uses the head mean.
pub fn attention_heatmap(map: &AttentionMap, grid: &SlotGrid, vocab: &Vocabulary, head: Option<usize>) -> Heatmap {
    let active: Vec<usize> = (0..map.m).filter(|&j| map.mask[j]).collect();
    let labels: Vec<String> = column_labels(grid, vocab);
    let src = head.map_or(&map.mean, |h| &map.heads[h]);
    let mut values = Vec::with_capacity(active.len() * active.len());
    for &i in &active {
        for &j in &active {
            values.push(src[i * map.m + j]);
        }
    }
    let picked: Vec<String> = active.iter().map(|&j| labels[j].clone()).collect();
    Heatmap {
        title: match head {
            Some(h) => format!("layer {} head {h}", map.layer),
            None => format!("layer {} mean over heads", map.layer),
        },
        row_labels: picked.clone(),
        col_labels: picked,
        values,
    }
}

/// Channel × column heatmap of per-slot attribution totals.
pub fn attribution_heatmap(report: &AttributionReport, grid: &SlotGrid, vocab: &Vocabulary) -> Heatmap {
    let labels = column_labels(grid, vocab);
    let mut values = Vec::with_capacity(Channel::ALL.len() * report.width);
    for c in Channel::ALL {
        for j in 0..report.width {
            values.push(report.slot_value(c, j));
        }
    }
    Heatmap {
        title: format!("expected gradients, patient {}", report.patient_id),
        row_labels: Channel::ALL.iter().map(|c| c.name().to_string()).collect(),
        col_labels: labels[..report.width].to_vec(),
        values,
    }
}

fn codes_at(rows: &[Vec<u32>], col: usize, vocab: &Vocabulary, channel: CodeChannel) -> String {
    let v: Vec<String> = rows
        .iter()
        .map(|r| r[col])
        .filter(|&t| t != PAD)
        .map(|t| vocab.label(channel, t))
        .collect();
    if v.is_empty() {
        "-".into()
    } else {
        v.join(", ")
    }
}

/// One line per diagnosis slot: slot number, visit, diagnosis, procedures and labs stacked under it,
/// and the attribution per channel when a report is given.
pub fn slot_table_csv(grid: &SlotGrid, vocab: &Vocabulary, report: Option<&AttributionReport>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["slot", "column", "visit", "diagnosis", "procedures", "labs"]
        .into_iter()
        .map(String::from)
        .collect::<Vec<_>>();
    if report.is_some() {
        header.extend(Channel::ALL.iter().map(|c| format!("attr_{}", c.name())));
    }
    w.write_record(&header)?;
    let mut slot = 0;
    for col in 0..grid.m {
        let t = grid.diag_row[col];
        if t == PAD || t == CLS || t == SEP {
            continue;
        }
        slot += 1;
        let mut rec = vec![
            slot.to_string(),
            col.to_string(),
            grid.column_visit[col].map_or(String::new(), |v| (v + 1).to_string()),
            vocab.label(CodeChannel::Diagnosis, t),
            codes_at(&grid.proc_rows, col, vocab, CodeChannel::Procedure),
            codes_at(&grid.lab_rows, col, vocab, CodeChannel::Lab),
        ];
        if let Some(r) = report {
            rec.extend(Channel::ALL.iter().map(|c| format!("{:.6e}", r.slot_value(*c, col))));
        }
        w.write_record(&rec)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}
