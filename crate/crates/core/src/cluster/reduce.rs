use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoder::{encode, EncoderConfig};
use crate::error::{Error, Result};
use crate::journey::{PatientJourney, Vocabulary};
use crate::nn::model::cls_embedding;
use crate::nn::ModelParams;

/// Row-major patient × feature matrix with the patient id of each row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingMatrix {
    pub ids: Vec<String>,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl EmbeddingMatrix {
    pub fn new(ids: Vec<String>, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != ids.len() * cols {
            return Err(Error::ShapeMismatch(format!("{} values for {} rows of {cols}", data.len(), ids.len())));
        }
        Ok(Self { ids, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.ids.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// Sub-matrix of the given rows, in the given order.
    pub fn select(&self, rows: &[usize]) -> Self {
        let mut data = Vec::with_capacity(rows.len() * self.cols);
        for &r in rows {
            data.extend_from_slice(self.row(r));
        }
        Self {
            ids: rows.iter().map(|&r| self.ids[r].clone()).collect(),
            cols: self.cols,
            data,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Hidden state at the CLS column for each full journey.
pub fn extract_embeddings(
    params: &ModelParams,
    journeys: &[PatientJourney],
    vocab: &Vocabulary,
    encoder: &EncoderConfig,
) -> Result<EmbeddingMatrix> {
    let rows: Vec<Vec<f64>> = journeys
        .par_iter()
        .map(|j| cls_embedding(params, &encode(j, vocab, encoder)?))
        .collect::<Result<_>>()?;
    EmbeddingMatrix::new(
        journeys.iter().map(|j| j.patient_id.clone()).collect(),
        params.config.d_model,
        rows.concat(),
    )
}

/// Neighbourhood settings of a manifold reducer; the linear reference reducer ignores them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReduceParams {
    pub n_neighbors: usize,
    pub min_dist: f64,
}

impl Default for ReduceParams {
    fn default() -> Self {
        Self {
            n_neighbors: 100,
            min_dist: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reduced {
    pub matrix: EmbeddingMatrix,
    /// Variance captured by each output component, non-increasing.
    pub explained_variance: Vec<f64>,
}

/// Principal-component projection onto `target_dim` axes.
///
/// Components are ordered by eigenvalue; each axis is flipped so its largest-magnitude
/// loading is positive. Components without variance are emitted as zero columns.
pub fn reduce(matrix: &EmbeddingMatrix, target_dim: usize, _params: &ReduceParams, _seed: u64) -> Result<Reduced> {
    let (n, d) = (matrix.rows(), matrix.cols);
    if target_dim == 0 || target_dim > d {
        return Err(Error::ShapeMismatch(format!("cannot reduce {d} columns to {target_dim}")));
    }
    if n == 0 {
        return Err(Error::EmptyCohort("no rows to reduce".into()));
    }
    let mut mean = vec![0.0; d];
    for i in 0..n {
        for (m, v) in mean.iter_mut().zip(matrix.row(i)) {
            *m += v / n as f64;
        }
    }
    let centered = DMatrix::from_fn(n, d, |i, j| matrix.row(i)[j] - mean[j]);
    let cov = centered.transpose() * &centered / (n.max(2) - 1) as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let top = eig.eigenvalues[order[0]].max(0.0);
    let tol = top * 1e-12 * d as f64;

    let mut out = vec![0.0; n * target_dim];
    let mut explained = Vec::with_capacity(target_dim);
    for (c, &k) in order.iter().take(target_dim).enumerate() {
        let lambda = eig.eigenvalues[k];
        if lambda <= tol {
            explained.push(0.0);
            continue;
        }
        explained.push(lambda);
        let mut axis: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
        let lead = axis
            .iter()
            .enumerate()
            .fold(0, |best, (i, v)| if v.abs() > axis[best].abs() { i } else { best });
        if axis[lead] < 0.0 {
            axis.iter_mut().for_each(|v| *v = -*v);
        }
        for i in 0..n {
            out[i * target_dim + c] = centered.row(i).iter().zip(&axis).map(|(a, b)| a * b).sum();
        }
    }
    Ok(Reduced {
        matrix: EmbeddingMatrix::new(matrix.ids.clone(), target_dim, out)?,
        explained_variance: explained,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn matrix(rows: Vec<Vec<f64>>) -> EmbeddingMatrix {
        let cols = rows[0].len();
        EmbeddingMatrix::new((0..rows.len()).map(|i| i.to_string()).collect(), cols, rows.concat()).unwrap()
    }

    #[test]
    fn exact_low_rank_is_reconstructed() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let basis: Vec<Vec<f64>> = (0..2).map(|_| (0..6).map(|_| rng.random::<f64>() - 0.5).collect()).collect();
        let rows: Vec<Vec<f64>> = (0..40)
            .map(|_| {
                let (a, b) = (rng.random::<f64>(), rng.random::<f64>());
                (0..6).map(|j| a * basis[0][j] + b * basis[1][j]).collect()
            })
            .collect();
        let m = matrix(rows);
        let r = reduce(&m, 4, &ReduceParams::default(), 0).unwrap();
        assert!(r.explained_variance.windows(2).all(|w| w[0] >= w[1]));
        assert_eq!(&r.explained_variance[2..], &[0.0, 0.0]);
        // distances are preserved exactly by a rank-2 projection
        let dist = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        for (i, j) in [(0, 1), (3, 17), (5, 39)] {
            assert!((dist(m.row(i), m.row(j)) - dist(r.matrix.row(i), r.matrix.row(j))).abs() < 1e-9);
        }
    }

    #[test]
    fn sign_rule_is_applied() {
        let m = matrix(vec![vec![-2.0, 0.1], vec![0.0, 0.0], vec![2.0, -0.1]]);
        let r = reduce(&m, 1, &ReduceParams::default(), 0).unwrap();
        assert!(r.matrix.row(2)[0] > 0.0);
        assert!(reduce(&m, 3, &ReduceParams::default(), 0).is_err());
    }
}
