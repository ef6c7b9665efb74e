use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::famd::FamdProjection;
use crate::error::{invalid, Error, Result};
use crate::model::Dataset;

/// Covariate distance used by the nearest-neighbor and matching engines.
///
/// Every metric is realised as a linear (or affine) embedding followed by
/// plain Euclidean distance, so all pairing code scans one representation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Metric {
    /// Euclidean distance on the numeric feature encoding, optionally with
    /// per-feature weights on the squared differences.
    Euclidean { weights: Option<Vec<f64>> },
    /// `sqrt((x - y)' S^-1 (x - y))` with `S` the ridged sample covariance.
    Mahalanobis {
        dim: usize,
        /// Row-major inverse of the lower Cholesky factor of `S`.
        whitening: Vec<f64>,
        /// Row-major `S^-1`, kept for inspection.
        inverse_covariance: Vec<f64>,
    },
    /// Euclidean distance in a mixed-data factor space.
    LatentEuclidean { projection: FamdProjection },
}

/// Points mapped into the metric's Euclidean representation.
#[derive(Debug, Clone)]
pub struct Embedding {
    data: Vec<f64>,
    dim: usize,
}

impl Embedding {
    pub fn new(data: Vec<f64>, dim: usize) -> Self {
        debug_assert!(dim == 0 || data.len() % dim == 0);
        Embedding { data, dim }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.data.len() / self.dim
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    pub fn dist2(&self, i: usize, j: usize) -> f64 {
        self.row(i)
            .iter()
            .zip(self.row(j))
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }
}

impl Metric {
    pub fn euclidean() -> Self {
        Metric::Euclidean { weights: None }
    }

    pub fn weighted_euclidean(weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return invalid("feature weights must be finite and non-negative");
        }
        Ok(Metric::Euclidean {
            weights: Some(weights),
        })
    }

    /// Build a Mahalanobis metric from an explicit row-major covariance.
    pub fn mahalanobis_from_covariance(cov: &[f64], dim: usize) -> Result<Self> {
        if cov.len() != dim * dim || dim == 0 {
            return invalid("covariance must be a non-empty square matrix");
        }
        let s = DMatrix::from_row_slice(dim, dim, cov);
        if (&s - s.transpose()).amax() > 1e-12 * s.amax().max(1.0) {
            return invalid("covariance must be symmetric");
        }
        let chol = s
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Numerical("covariance is not positive definite".into()))?;
        let l = chol.l();
        let l_inv = l
            .solve_lower_triangular(&DMatrix::identity(dim, dim))
            .ok_or_else(|| Error::Numerical("singular Cholesky factor".into()))?;
        let inv = l_inv.transpose() * &l_inv;
        Ok(Metric::Mahalanobis {
            dim,
            whitening: row_major(&l_inv),
            inverse_covariance: row_major(&inv),
        })
    }

    /// Sample-covariance Mahalanobis metric on the numeric feature encoding.
    pub fn embed(&self, d: &Dataset) -> Result<Embedding> {
        let n = d.n();
        let q = d.n_features();
        match self {
            Metric::Euclidean { weights } => {
                let mut data = d.feature_matrix().to_vec();
                if let Some(w) = weights {
                    if w.len() != q {
                        return invalid(format!("{} feature weights for {q} features", w.len()));
                    }
                    let sw: Vec<f64> = w.iter().map(|v| v.sqrt()).collect();
                    for row in data.chunks_mut(q.max(1)) {
                        for (x, s) in row.iter_mut().zip(&sw) {
                            *x *= s;
                        }
                    }
                }
                Ok(Embedding::new(data, q))
            }
            Metric::Mahalanobis { dim, whitening, .. } => {
                if *dim != q {
                    return invalid(format!("metric fitted on {dim} features, dataset has {q}"));
                }
                let mut data = vec![0.0; n * q];
                for i in 0..n {
                    let x = d.features(i);
                    let out = &mut data[i * q..(i + 1) * q];
                    for (r, o) in out.iter_mut().enumerate() {
                        let w = &whitening[r * q..r * q + r + 1];
                        *o = w.iter().zip(&x[..=r]).map(|(a, b)| a * b).sum();
                    }
                }
                Ok(Embedding::new(data, q))
            }
            Metric::LatentEuclidean { projection } => {
                let scores = projection.apply(d)?;
                Ok(Embedding::new(scores, projection.retained()))
            }
        }
    }

    /// Distance between units `i` and `j` of `d`.
    pub fn distance(&self, d: &Dataset, i: usize, j: usize) -> Result<f64> {
        let sub = d.subset(&[i, j])?;
        Ok(self.embed(&sub)?.dist2(0, 1).sqrt())
    }
}

/// Mahalanobis metric from the sample covariance of `d`'s features.
///
/// The covariance is regularised with `ridge * trace(S) / p` on the diagonal
/// so it stays positive definite under collinearity (e.g. full one-hot
/// encodings).
pub fn mahalanobis_metric(d: &Dataset, ridge: f64) -> Result<Metric> {
    let n = d.n();
    let q = d.n_features();
    if n < 2 {
        return invalid("Mahalanobis metric needs at least 2 units");
    }
    if q == 0 {
        return invalid("Mahalanobis metric needs at least one covariate");
    }
    if !(ridge >= 0.0) {
        return invalid("ridge must be non-negative");
    }
    let x = DMatrix::from_row_slice(n, q, d.feature_matrix());
    let mean: DVector<f64> = x.row_mean().transpose();
    let mut centered = x;
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let mut s = centered.transpose() * &centered / (n as f64 - 1.0);
    let scale = s.trace() / q as f64;
    let scale = if scale > 0.0 { scale } else { 1.0 };
    for k in 0..q {
        s[(k, k)] += ridge * scale;
    }
    // Symmetrize against round-off before factorizing.
    let s = (&s + s.transpose()) * 0.5;
    Metric::mahalanobis_from_covariance(&row_major(&s), q)
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.len());
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            out.push(m[(r, c)]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_data(n: usize, p: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..p).map(|j| rng.random::<f64>() * (j + 1) as f64 + (i % 3) as f64 * j as f64).collect())
            .collect();
        let t = (0..n).map(|i| (i % 2) as u8).collect();
        Dataset::from_numeric(&x, t, vec![vec![0.0]; n]).unwrap()
    }

    #[test]
    fn identity_covariance_is_euclidean() {
        let m = Metric::mahalanobis_from_covariance(&[1.0, 0.0, 0.0, 1.0], 2).unwrap();
        let d = Dataset::from_numeric(&[vec![0.0, 0.0], vec![3.0, 4.0]], vec![0, 1], vec![vec![0.0]; 2])
            .unwrap();
        assert!((m.distance(&d, 0, 1).unwrap() - 5.0).abs() < 1e-12);
        assert!((Metric::euclidean().distance(&d, 0, 1).unwrap() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn diagonal_covariance_scales_coordinates() {
        let m = Metric::mahalanobis_from_covariance(&[4.0, 0.0, 0.0, 1.0], 2).unwrap();
        let d = Dataset::from_numeric(
            &[vec![0.0, 0.0], vec![2.0, 0.0], vec![0.0, 2.0]],
            vec![0, 1, 1],
            vec![vec![0.0]; 3],
        )
        .unwrap();
        assert!((m.distance(&d, 0, 1).unwrap() - 1.0).abs() < 1e-12);
        assert!((m.distance(&d, 0, 2).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn sample_mahalanobis_matches_quadratic_form() {
        let d = random_data(20, 3, 11);
        let m = mahalanobis_metric(&d, 1e-6).unwrap();
        let Metric::Mahalanobis { inverse_covariance, .. } = &m else { panic!() };
        // Direct oracle: (x - y)' S^-1 (x - y) with S^-1 from the stored matrix,
        // and S^-1 itself checked against an independent inversion.
        let n = d.n();
        let mut mean = [0.0; 3];
        for i in 0..n {
            for k in 0..3 {
                mean[k] += d.features(i)[k] / n as f64;
            }
        }
        let mut s = [[0.0; 3]; 3];
        for i in 0..n {
            for a in 0..3 {
                for b in 0..3 {
                    s[a][b] += (d.features(i)[a] - mean[a]) * (d.features(i)[b] - mean[b]) / (n - 1) as f64;
                }
            }
        }
        let tr = (s[0][0] + s[1][1] + s[2][2]) / 3.0;
        for (k, row) in s.iter_mut().enumerate() {
            row[k] += 1e-6 * tr;
        }
        // S * S^-1 = I
        for a in 0..3 {
            for b in 0..3 {
                let v: f64 = (0..3).map(|k| s[a][k] * inverse_covariance[k * 3 + b]).sum();
                assert!((v - if a == b { 1.0 } else { 0.0 }).abs() < 1e-9);
            }
        }
        for &(i, j) in &[(0, 1), (3, 17), (5, 6)] {
            let diff: Vec<f64> = (0..3).map(|k| d.features(i)[k] - d.features(j)[k]).collect();
            let mut qf = 0.0;
            for a in 0..3 {
                for b in 0..3 {
                    qf += diff[a] * inverse_covariance[a * 3 + b] * diff[b];
                }
            }
            let got = m.distance(&d, i, j).unwrap();
            assert!((got - qf.sqrt()).abs() < 1e-9 * qf.sqrt().max(1.0));
        }
    }

    #[test]
    fn one_hot_collinearity_stays_positive_definite() {
        use crate::model::Column;
        let cols = vec![Column::categorical("g", &["a", "b", "a", "c", "b", "a"])];
        let d = Dataset::new(cols, vec![0, 1, 0, 1, 0, 1], vec![vec![0.0]; 6]).unwrap();
        let m = mahalanobis_metric(&d, 1e-6).unwrap();
        let dist = m.distance(&d, 0, 1).unwrap();
        assert!(dist.is_finite() && dist > 0.0);
        assert_eq!(m.distance(&d, 0, 2).unwrap(), 0.0);
    }

    #[test]
    fn metric_axioms_on_random_points() {
        let d = random_data(12, 3, 5);
        let metrics = [Metric::euclidean(), mahalanobis_metric(&d, 1e-6).unwrap()];
        for m in &metrics {
            let e = m.embed(&d).unwrap();
            for i in 0..d.n() {
                assert_eq!(e.dist2(i, i), 0.0);
                for j in 0..d.n() {
                    assert!(e.dist2(i, j) >= 0.0);
                    assert_eq!(e.dist2(i, j), e.dist2(j, i));
                }
            }
        }
    }
}
