//! Factor analysis of mixed data, reduced to its core: standardized numeric
//! columns, frequency-scaled centered indicators for categorical columns, and
//! a principal component analysis of the result.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::{ColumnData, Dataset};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Preprocess {
    Numeric { name: String, mean: f64, sd: f64 },
    Categorical { name: String, levels: Vec<String>, freqs: Vec<f64> },
}

impl Preprocess {
    fn width(&self) -> usize {
        match self {
            Preprocess::Numeric { .. } => 1,
            Preprocess::Categorical { levels, .. } => levels.len(),
        }
    }
}

/// Fitted mixed-data projection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamdProjection {
    columns: Vec<Preprocess>,
    width: usize,
    /// Row-major `width x retained` matrix of principal axes.
    axes: Vec<f64>,
    eigenvalues: Vec<f64>,
    cumulative_explained: Vec<f64>,
    retained: usize,
    variance_kept: f64,
}

impl FamdProjection {
    pub fn retained(&self) -> usize {
        self.retained
    }

    /// All eigenvalues of the preprocessed covariance, descending.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn cumulative_explained(&self) -> &[f64] {
        &self.cumulative_explained
    }

    pub fn variance_kept(&self) -> f64 {
        self.variance_kept
    }

    /// Preprocessed (standardized / indicator-scaled) matrix, row-major.
    pub fn preprocess(&self, d: &Dataset) -> Result<Vec<f64>> {
        let n = d.n();
        let mut z = vec![0.0; n * self.width];
        let mut offset = 0;
        for pre in &self.columns {
            match pre {
                Preprocess::Numeric { name, mean, sd } => {
                    let col = d.column(name)?;
                    let ColumnData::Numeric(v) = &col.data else {
                        return invalid(format!("column '{name}' was numeric when fitted"));
                    };
                    for i in 0..n {
                        z[i * self.width + offset] = (v[i] - mean) / sd;
                    }
                }
                Preprocess::Categorical { name, levels, freqs } => {
                    let col = d.column(name)?;
                    let ColumnData::Categorical { levels: lv, codes } = &col.data else {
                        return invalid(format!("column '{name}' was categorical when fitted"));
                    };
                    // Map this dataset's codes to fitted level positions; unused
                    // levels in the schema are fine, observed unseen ones are not.
                    let mut map = vec![None; lv.len()];
                    for (code, label) in lv.iter().enumerate() {
                        map[code] = levels.iter().position(|l| l == label);
                    }
                    for i in 0..n {
                        let code = codes[i] as usize;
                        let pos = map[code].ok_or_else(|| {
                            Error::InvalidInput(format!(
                                "unseen level '{}' in categorical column '{name}'",
                                lv[code]
                            ))
                        })?;
                        let row = &mut z[i * self.width + offset..i * self.width + offset + levels.len()];
                        for (k, f) in freqs.iter().enumerate() {
                            let ind = if k == pos { 1.0 } else { 0.0 };
                            row[k] = (ind - f) / f.sqrt();
                        }
                    }
                }
            }
            offset += pre.width();
        }
        Ok(z)
    }

    /// Scores of `d` on the retained axes, row-major `n x retained`.
    pub fn apply(&self, d: &Dataset) -> Result<Vec<f64>> {
        let z = self.preprocess(d)?;
        let n = d.n();
        let r = self.retained;
        let mut scores = vec![0.0; n * r];
        for i in 0..n {
            let zi = &z[i * self.width..(i + 1) * self.width];
            for c in 0..r {
                scores[i * r + c] = zi
                    .iter()
                    .enumerate()
                    .map(|(k, v)| v * self.axes[k * r + c])
                    .sum();
            }
        }
        Ok(scores)
    }
}

/// Fit the projection, keeping the smallest number of components whose
/// cumulative explained variance reaches `variance_kept`.
pub fn famd_fit(d: &Dataset, variance_kept: f64) -> Result<FamdProjection> {
    if d.columns().is_empty() {
        return invalid("FAMD needs at least one covariate column");
    }
    if !(variance_kept > 0.0 && variance_kept <= 1.0) {
        return invalid(format!("variance_kept must lie in (0, 1], got {variance_kept}"));
    }
    let n = d.n() as f64;
    let mut columns = Vec::with_capacity(d.columns().len());
    for col in d.columns() {
        match &col.data {
            ColumnData::Numeric(v) => {
                let mean = v.iter().sum::<f64>() / n;
                let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
                let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
                columns.push(Preprocess::Numeric {
                    name: col.name.clone(),
                    mean,
                    sd,
                });
            }
            ColumnData::Categorical { levels, codes } => {
                let mut counts = vec![0usize; levels.len()];
                for &c in codes {
                    counts[c as usize] += 1;
                }
                let (lv, fr): (Vec<String>, Vec<f64>) = levels
                    .iter()
                    .zip(&counts)
                    .filter(|(_, &c)| c > 0)
                    .map(|(l, &c)| (l.clone(), c as f64 / n))
                    .unzip();
                columns.push(Preprocess::Categorical {
                    name: col.name.clone(),
                    levels: lv,
                    freqs: fr,
                });
            }
        }
    }
    let width: usize = columns.iter().map(Preprocess::width).sum();
    let mut proj = FamdProjection {
        columns,
        width,
        axes: Vec::new(),
        eigenvalues: Vec::new(),
        cumulative_explained: Vec::new(),
        retained: 0,
        variance_kept,
    };
    let z = proj.preprocess(d)?;
    let zm = DMatrix::from_row_slice(d.n(), width, &z);
    let cov = zm.transpose() * &zm / n;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..width).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let eigenvalues: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k].max(0.0)).collect();
    let total: f64 = eigenvalues.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Degenerate("covariates have no variance".into()));
    }
    let mut cum = 0.0;
    let cumulative: Vec<f64> = eigenvalues
        .iter()
        .map(|l| {
            cum += l / total;
            cum
        })
        .collect();
    let retained = cumulative
        .iter()
        .position(|&c| c >= variance_kept - 1e-12)
        .map_or(width, |p| p + 1);

    let mut axes = vec![0.0; width * retained];
    for (c, &k) in order.iter().take(retained).enumerate() {
        let v = eig.eigenvectors.column(k);
        // Deterministic sign: largest-magnitude loading is positive.
        let pivot = (0..width)
            .max_by(|&a, &b| v[a].abs().total_cmp(&v[b].abs()).then(b.cmp(&a)))
            .unwrap_or(0);
        let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
        for r in 0..width {
            axes[r * retained + c] = sign * v[r];
        }
    }
    proj.axes = axes;
    proj.eigenvalues = eigenvalues;
    proj.cumulative_explained = cumulative;
    proj.retained = retained;
    Ok(proj)
}

/// Apply a fitted projection.
pub fn famd_apply(p: &FamdProjection, d: &Dataset) -> Result<Vec<f64>> {
    p.apply(d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Column;

    #[test]
    fn rejects_bad_threshold() {
        let d = Dataset::from_numeric(&[vec![1.0], vec![2.0]], vec![0, 1], vec![vec![0.0]; 2]).unwrap();
        assert!(famd_fit(&d, 0.0).is_err());
        assert!(famd_fit(&d, 1.5).is_err());
    }

    #[test]
    fn single_binary_column_has_one_axis() {
        let cols = vec![Column::categorical("sex", &["m", "f", "m", "m", "f", "m"])];
        let d = Dataset::new(cols, vec![0, 1, 0, 1, 0, 1], vec![vec![0.0]; 6]).unwrap();
        let p = famd_fit(&d, 0.999).unwrap();
        assert_eq!(p.retained(), 1);
        assert!(p.eigenvalues()[1] < 1e-12);
    }

    #[test]
    fn unseen_level_is_named() {
        let cols = vec![Column::categorical("site", &["a", "b", "a", "b"])];
        let d = Dataset::new(cols, vec![0, 1, 0, 1], vec![vec![0.0]; 4]).unwrap();
        let p = famd_fit(&d, 0.95).unwrap();
        let cols = vec![Column::categorical("site", &["a", "zz", "a"])];
        let other = Dataset::new(cols, vec![0, 1, 0], vec![vec![0.0]; 3]).unwrap();
        match famd_apply(&p, &other) {
            Err(Error::InvalidInput(msg)) => assert!(msg.contains("zz")),
            other => panic!("expected unseen-level error, got {other:?}"),
        }
    }

    #[test]
    fn training_scores_reproduce() {
        let cols = vec![
            Column::numeric("a", vec![1.0, 2.0, 4.0, 3.0, 0.5]),
            Column::categorical("g", &["x", "y", "x", "z", "y"]),
        ];
        let d = Dataset::new(cols, vec![0, 1, 0, 1, 1], vec![vec![0.0]; 5]).unwrap();
        let p = famd_fit(&d, 0.8).unwrap();
        assert!(p.cumulative_explained()[p.retained() - 1] >= 0.8);
        if p.retained() > 1 {
            assert!(p.cumulative_explained()[p.retained() - 2] < 0.8);
        }
        assert_eq!(famd_apply(&p, &d).unwrap(), p.apply(&d).unwrap());
    }
}
