//! Patient embeddings, linear reduction, density clustering and cluster analytics.

mod analytics;
mod density;
mod reduce;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

pub use analytics::{
    cancer_free, cancer_journey_fraction, cluster_analytics, median, subtype_stats, ClusterReport, ClusterSummary,
    ConceptFrequency, PatientAssignment, SubtypeStats, CANCER_PREFIX, FREQUENCY_MARGIN, TOP_CONCEPTS,
};
pub use density::{density_cluster, knee_epsilon, DensityParams, KNEE_MIN_BEND, NOISE};
pub use reduce::{extract_embeddings, reduce, EmbeddingMatrix, ReduceParams, Reduced};

use crate::error::{Error, Result};
use crate::journey::PatientJourney;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterConfig {
    /// Dimension clustered on.
    pub cluster_dim: usize,
    pub reduce: ReduceParams,
    pub density: DensityParams,
    pub seed: u64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            cluster_dim: 10,
            reduce: ReduceParams::default(),
            density: DensityParams {
                min_cluster_size: 1000,
                min_samples: 10,
                epsilon: None,
            },
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterRun {
    pub assignments: Vec<i64>,
    pub report: ClusterReport,
}

/// Reduce, cluster and describe; the 2D view comes from a separate reduction of the same embeddings.
pub fn cluster_embeddings(
    embeddings: &EmbeddingMatrix,
    journeys: &[PatientJourney],
    cfg: &ClusterConfig,
) -> Result<ClusterRun> {
    if embeddings.rows() != journeys.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} embeddings for {} journeys",
            embeddings.rows(),
            journeys.len()
        )));
    }
    if !embeddings.is_finite() {
        return Err(Error::DomainError("embeddings contain non-finite values".into()));
    }
    let dim = cfg.cluster_dim.min(embeddings.cols);
    let reduced = reduce(embeddings, dim, &cfg.reduce, cfg.seed)?;
    let assignments = density_cluster(&reduced.matrix, &cfg.density);
    let view = reduce(embeddings, 2.min(embeddings.cols), &cfg.reduce, cfg.seed)?;
    let coords = (view.matrix.cols == 2).then_some(&view.matrix);
    let report = cluster_analytics(&assignments, journeys, coords)?;
    Ok(ClusterRun { assignments, report })
}

/// Second pass restricted to one cluster; the members form the cohort of the nested analytics.
pub fn subcluster(
    embeddings: &EmbeddingMatrix,
    journeys: &[PatientJourney],
    assignments: &[i64],
    cluster_id: i64,
    cfg: &ClusterConfig,
) -> Result<ClusterRun> {
    let members: Vec<usize> = (0..assignments.len()).filter(|&i| assignments[i] == cluster_id).collect();
    if cluster_id == NOISE || members.is_empty() {
        return Err(Error::UnknownCluster(cluster_id));
    }
    let sub: Vec<PatientJourney> = members.iter().map(|&i| journeys[i].clone()).collect();
    cluster_embeddings(&embeddings.select(&members), &sub, cfg)
}

const PALETTE: [&str; 12] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#17becf", "#bcbd22", "#393b79",
    "#637939", "#843c39",
];

/// 2D scatter with one colour per cluster and noise in grey.
pub fn scatter_svg(report: &ClusterReport) -> String {
    let (w, h, pad) = (640.0, 480.0, 30.0);
    let xs = report.patients.iter().map(|p| p.x);
    let ys = report.patients.iter().map(|p| p.y);
    let (x0, x1) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let (y0, y1) = ys.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let sx = |v: f64| if x1 > x0 { pad + (v - x0) / (x1 - x0) * (w - 2.0 * pad) } else { w / 2.0 };
    let sy = |v: f64| if y1 > y0 { h - pad - (v - y0) / (y1 - y0) * (h - 2.0 * pad) } else { h / 2.0 };
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="monospace" font-size="10">"#);
    for p in &report.patients {
        let colour = if p.cluster < 0 { "#bbbbbb" } else { PALETTE[p.cluster as usize % PALETTE.len()] };
        let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="2" fill="{colour}" fill-opacity="0.6"/>"#, sx(p.x), sy(p.y));
    }
    for (k, c) in report.clusters.iter().enumerate() {
        let y = 14 + 12 * k;
        let colour = PALETTE[c.cluster as usize % PALETTE.len()];
        let label = c.modal_diagnosis.as_deref().unwrap_or("-");
        let _ = writeln!(
            s,
            r#"<rect x="4" y="{}" width="8" height="8" fill="{colour}"/><text x="16" y="{y}">{} {label} (n={})</text>"#,
            y - 8,
            c.cluster,
            c.size
        );
    }
    s.push_str("</svg>\n");
    s
}
