use serde::{Deserialize, Serialize};

use super::reduce::EmbeddingMatrix;

pub const NOISE: i64 = -1;

/// Density-clustering settings named after their hierarchical counterparts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensityParams {
    /// Clusters with fewer members are relabelled as noise.
    pub min_cluster_size: usize,
    /// Neighbours (self included) needed for a core point; also the k of the k-distance curve.
    pub min_samples: usize,
    /// Fixed neighbourhood radius; `None` picks the knee of the k-distance curve.
    pub epsilon: Option<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn distances(m: &EmbeddingMatrix) -> Vec<f64> {
    let n = m.rows();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let v = sq_dist(m.row(i), m.row(j)).sqrt();
            d[i * n + j] = v;
            d[j * n + i] = v;
        }
    }
    d
}

/// Smallest distance below the chord, in unit-square coordinates, that counts as a knee.
pub const KNEE_MIN_BEND: f64 = 0.5;

/// Knee of the sorted distances to each point's k-th nearest neighbour (self excluded):
/// the point farthest from the chord joining the curve's ends. A curve that never bends
/// by `KNEE_MIN_BEND` has no outlier tail and yields its largest distance.
pub fn knee_epsilon(m: &EmbeddingMatrix, k: usize) -> f64 {
    knee_from(&distances(m), m.rows(), k)
}

fn knee_from(dist: &[f64], n: usize, k: usize) -> f64 {
    if n < 2 {
        return 0.0;
    }
    let k = k.clamp(1, n - 1);
    let mut kd: Vec<f64> = (0..n)
        .map(|i| {
            let mut row: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| dist[i * n + j]).collect();
            row.select_nth_unstable_by(k - 1, f64::total_cmp);
            row[k - 1]
        })
        .collect();
    kd.sort_by(f64::total_cmp);
    let (first, last) = (kd[0], kd[n - 1]);
    if last - first <= 0.0 {
        return last;
    }
    let span = (n - 1) as f64;
    let mut best = (0, f64::NEG_INFINITY);
    for (i, &v) in kd.iter().enumerate() {
        // both axes scaled to [0, 1]; distance below the chord
        let x = i as f64 / span;
        let y = (v - first) / (last - first);
        let gap = x - y;
        if gap > best.1 {
            best = (i, gap);
        }
    }
    if best.1 < KNEE_MIN_BEND {
        return last;
    }
    kd[best.0]
}

/// DBSCAN labels (`-1` for noise), numbered 0.. in order of each cluster's first member.
pub fn density_cluster(m: &EmbeddingMatrix, params: &DensityParams) -> Vec<i64> {
    let n = m.rows();
    if n == 0 {
        return Vec::new();
    }
    let dist = distances(m);
    let eps = params.epsilon.unwrap_or_else(|| knee_from(&dist, n, params.min_samples));
    let neighbours: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..n).filter(|&j| dist[i * n + j] <= eps).collect())
        .collect();
    let core: Vec<bool> = neighbours.iter().map(|nb| nb.len() >= params.min_samples.max(1)).collect();

    let mut labels = vec![NOISE; n];
    let mut next = 0i64;
    for start in 0..n {
        if labels[start] != NOISE || !core[start] {
            continue;
        }
        labels[start] = next;
        let mut stack = vec![start];
        while let Some(p) = stack.pop() {
            for &q in &neighbours[p] {
                if labels[q] == NOISE {
                    labels[q] = next;
                    if core[q] {
                        stack.push(q);
                    }
                }
            }
        }
        next += 1;
    }

    let mut sizes = vec![0usize; next as usize];
    for &l in &labels {
        if l >= 0 {
            sizes[l as usize] += 1;
        }
    }
    let mut remap = vec![NOISE; next as usize];
    let mut id = 0;
    for l in &mut labels {
        if *l < 0 {
            continue;
        }
        let old = *l as usize;
        if sizes[old] < params.min_cluster_size {
            *l = NOISE;
            continue;
        }
        if remap[old] == NOISE {
            remap[old] = id;
            id += 1;
        }
        *l = remap[old];
    }
    labels
}
