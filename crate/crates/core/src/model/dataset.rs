use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Treatment arm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    Control,
    Treated,
}

impl Arm {
    pub fn from_flag(t: u8) -> Arm {
        if t == 0 {
            Arm::Control
        } else {
            Arm::Treated
        }
    }

    pub fn flag(self) -> u8 {
        match self {
            Arm::Control => 0,
            Arm::Treated => 1,
        }
    }

    pub fn other(self) -> Arm {
        match self {
            Arm::Control => Arm::Treated,
            Arm::Treated => Arm::Control,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ColumnData {
    Numeric(Vec<f64>),
    /// Level labels plus one code per unit indexing into `levels`.
    Categorical { levels: Vec<String>, codes: Vec<u32> },
}

/// One covariate column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub data: ColumnData,
}

impl Column {
    pub fn numeric(name: impl Into<String>, values: Vec<f64>) -> Self {
        Column {
            name: name.into(),
            data: ColumnData::Numeric(values),
        }
    }

    /// Build a categorical column from raw labels; levels are kept in order of
    /// first appearance.
    pub fn categorical<S: AsRef<str>>(name: impl Into<String>, labels: &[S]) -> Self {
        let mut levels: Vec<String> = Vec::new();
        let codes = labels
            .iter()
            .map(|l| {
                let l = l.as_ref();
                match levels.iter().position(|x| x == l) {
                    Some(pos) => pos as u32,
                    None => {
                        levels.push(l.to_string());
                        (levels.len() - 1) as u32
                    }
                }
            })
            .collect();
        Column {
            name: name.into(),
            data: ColumnData::Categorical { levels, codes },
        }
    }

    pub fn len(&self) -> usize {
        match &self.data {
            ColumnData::Numeric(v) => v.len(),
            ColumnData::Categorical { codes, .. } => codes.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of numeric features this column expands to.
    fn width(&self) -> usize {
        match &self.data {
            ColumnData::Numeric(_) => 1,
            ColumnData::Categorical { levels, .. } => levels.len(),
        }
    }

    fn select(&self, rows: &[usize]) -> Column {
        let data = match &self.data {
            ColumnData::Numeric(v) => ColumnData::Numeric(rows.iter().map(|&i| v[i]).collect()),
            ColumnData::Categorical { levels, codes } => ColumnData::Categorical {
                levels: levels.clone(),
                codes: rows.iter().map(|&i| codes[i]).collect(),
            },
        };
        Column {
            name: self.name.clone(),
            data,
        }
    }
}

/// Observed sample: covariates, binary treatment and outcome matrix.
///
/// Covariates are also kept as a dense numeric feature matrix in which every
/// categorical column is expanded into one indicator per level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    columns: Vec<Column>,
    treatment: Vec<u8>,
    outcomes: Vec<f64>,
    d: usize,
    features: Vec<f64>,
    q: usize,
}

impl Dataset {
    pub fn new(columns: Vec<Column>, treatment: Vec<u8>, outcomes: Vec<Vec<f64>>) -> Result<Self> {
        let n = treatment.len();
        if n < 2 {
            return invalid(format!("dataset needs at least 2 units, got {n}"));
        }
        if outcomes.len() != n {
            return invalid(format!(
                "outcome rows ({}) do not match treatment length ({n})",
                outcomes.len()
            ));
        }
        let d = outcomes[0].len();
        if d == 0 {
            return invalid("outcomes must have at least one coordinate");
        }
        let mut flat = Vec::with_capacity(n * d);
        for (i, row) in outcomes.iter().enumerate() {
            if row.len() != d {
                return invalid(format!("outcome row {i} has {} values, expected {d}", row.len()));
            }
            if let Some(k) = row.iter().position(|v| !v.is_finite()) {
                return invalid(format!("missing or non-finite outcome at row {i}, coordinate {k}"));
            }
            flat.extend_from_slice(row);
        }
        Self::from_parts(columns, treatment, flat, d)
    }

    /// Convenience constructor for purely numeric covariates.
    pub fn from_numeric(x: &[Vec<f64>], treatment: Vec<u8>, outcomes: Vec<Vec<f64>>) -> Result<Self> {
        let p = x.first().map_or(0, |r| r.len());
        if x.len() != treatment.len() {
            return invalid(format!(
                "covariate rows ({}) do not match treatment length ({})",
                x.len(),
                treatment.len()
            ));
        }
        let mut columns = Vec::with_capacity(p);
        for j in 0..p {
            let mut col = Vec::with_capacity(x.len());
            for (i, row) in x.iter().enumerate() {
                if row.len() != p {
                    return invalid(format!("covariate row {i} has {} values, expected {p}", row.len()));
                }
                col.push(row[j]);
            }
            columns.push(Column::numeric(format!("x{}", j + 1), col));
        }
        Self::new(columns, treatment, outcomes)
    }

    fn from_parts(columns: Vec<Column>, treatment: Vec<u8>, outcomes: Vec<f64>, d: usize) -> Result<Self> {
        let n = treatment.len();
        if let Some(i) = treatment.iter().position(|&t| t > 1) {
            return invalid(format!("treatment at row {i} is {}, expected 0 or 1", treatment[i]));
        }
        for col in &columns {
            if col.len() != n {
                return invalid(format!(
                    "covariate column '{}' has {} values, expected {n}",
                    col.name,
                    col.len()
                ));
            }
            match &col.data {
                ColumnData::Numeric(v) => {
                    if let Some(i) = v.iter().position(|x| !x.is_finite()) {
                        return invalid(format!(
                            "missing or non-finite value in column '{}' at row {i}",
                            col.name
                        ));
                    }
                }
                ColumnData::Categorical { levels, codes } => {
                    if let Some(i) = codes.iter().position(|&c| c as usize >= levels.len()) {
                        return invalid(format!(
                            "categorical code out of range in column '{}' at row {i}",
                            col.name
                        ));
                    }
                }
            }
        }
        let q: usize = columns.iter().map(Column::width).sum();
        let mut features = vec![0.0; n * q];
        let mut offset = 0;
        for col in &columns {
            match &col.data {
                ColumnData::Numeric(v) => {
                    for i in 0..n {
                        features[i * q + offset] = v[i];
                    }
                }
                ColumnData::Categorical { codes, .. } => {
                    for i in 0..n {
                        features[i * q + offset + codes[i] as usize] = 1.0;
                    }
                }
            }
            offset += col.width();
        }
        Ok(Dataset {
            columns,
            treatment,
            outcomes,
            d,
            features,
            q,
        })
    }

    pub fn n(&self) -> usize {
        self.treatment.len()
    }

    /// Outcome dimension.
    pub fn d(&self) -> usize {
        self.d
    }

    /// Width of the numeric feature encoding.
    pub fn n_features(&self) -> usize {
        self.q
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn column(&self, name: &str) -> Result<&Column> {
        self.columns
            .iter()
            .find(|c| c.name == name)
            .ok_or_else(|| Error::InvalidInput(format!("unknown covariate column '{name}'")))
    }

    pub fn treatment(&self) -> &[u8] {
        &self.treatment
    }

    #[inline]
    pub fn arm(&self, i: usize) -> Arm {
        Arm::from_flag(self.treatment[i])
    }

    #[inline]
    pub fn is_treated(&self, i: usize) -> bool {
        self.treatment[i] == 1
    }

    #[inline]
    pub fn outcome(&self, i: usize) -> &[f64] {
        &self.outcomes[i * self.d..(i + 1) * self.d]
    }

    /// Row-major `n x d` outcome matrix.
    pub fn outcomes(&self) -> &[f64] {
        &self.outcomes
    }

    #[inline]
    pub fn features(&self, i: usize) -> &[f64] {
        &self.features[i * self.q..(i + 1) * self.q]
    }

    /// Row-major `n x n_features` numeric covariate matrix.
    pub fn feature_matrix(&self) -> &[f64] {
        &self.features
    }

    pub fn feature_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.q);
        for col in &self.columns {
            match &col.data {
                ColumnData::Numeric(_) => names.push(col.name.clone()),
                ColumnData::Categorical { levels, .. } => {
                    names.extend(levels.iter().map(|l| format!("{}={}", col.name, l)))
                }
            }
        }
        names
    }

    pub fn indices_of(&self, arm: Arm) -> Vec<usize> {
        let flag = arm.flag();
        (0..self.n()).filter(|&i| self.treatment[i] == flag).collect()
    }

    pub fn control_indices(&self) -> Vec<usize> {
        self.indices_of(Arm::Control)
    }

    pub fn treated_indices(&self) -> Vec<usize> {
        self.indices_of(Arm::Treated)
    }

    pub fn n_treated(&self) -> usize {
        self.treatment.iter().filter(|&&t| t == 1).count()
    }

    pub fn n_control(&self) -> usize {
        self.n() - self.n_treated()
    }

    /// Fails unless both arms have at least one unit.
    pub fn require_both_arms(&self) -> Result<()> {
        let n1 = self.n_treated();
        if n1 == 0 || n1 == self.n() {
            return Err(Error::Degenerate(format!(
                "both treatment arms must be non-empty (n0 = {}, n1 = {n1})",
                self.n() - n1
            )));
        }
        Ok(())
    }

    /// Dataset restricted to `rows` (in the given order, duplicates allowed).
    pub fn subset(&self, rows: &[usize]) -> Result<Dataset> {
        if let Some(&bad) = rows.iter().find(|&&i| i >= self.n()) {
            return invalid(format!("row index {bad} out of range for n = {}", self.n()));
        }
        if rows.len() < 2 {
            return invalid(format!("subset needs at least 2 rows, got {}", rows.len()));
        }
        let columns = self.columns.iter().map(|c| c.select(rows)).collect();
        let treatment = rows.iter().map(|&i| self.treatment[i]).collect();
        let mut outcomes = Vec::with_capacity(rows.len() * self.d);
        let mut features = Vec::with_capacity(rows.len() * self.q);
        for &i in rows {
            outcomes.extend_from_slice(self.outcome(i));
            features.extend_from_slice(self.features(i));
        }
        Ok(Dataset {
            columns,
            treatment,
            outcomes,
            d: self.d,
            features,
            q: self.q,
        })
    }

    /// True when every outcome coordinate is 0 or 1.
    pub fn outcomes_binary(&self) -> bool {
        self.outcomes.iter().all(|&v| v == 0.0 || v == 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn categorical_expands_to_indicators() {
        let cols = vec![
            Column::numeric("age", vec![30.0, 40.0, 50.0]),
            Column::categorical("sex", &["m", "f", "m"]),
        ];
        let d = Dataset::new(cols, vec![0, 1, 1], vec![vec![1.0], vec![0.0], vec![1.0]]).unwrap();
        assert_eq!(d.n_features(), 3);
        assert_eq!(d.features(1), &[40.0, 0.0, 1.0]);
        assert_eq!(d.feature_names(), vec!["age", "sex=m", "sex=f"]);
        assert_eq!(d.control_indices(), vec![0]);
        assert_eq!(d.treated_indices(), vec![1, 2]);
    }

    #[test]
    fn rejects_missing_values_and_bad_treatment() {
        let x = vec![vec![1.0], vec![f64::NAN]];
        assert!(Dataset::from_numeric(&x, vec![0, 1], vec![vec![0.0], vec![1.0]]).is_err());
        let x = vec![vec![1.0], vec![2.0]];
        assert!(Dataset::from_numeric(&x, vec![0, 2], vec![vec![0.0], vec![1.0]]).is_err());
        assert!(Dataset::from_numeric(&x, vec![0, 1], vec![vec![0.0], vec![f64::NAN]]).is_err());
        assert!(Dataset::from_numeric(&x[..1], vec![0], vec![vec![0.0]]).is_err());
    }

    #[test]
    fn subset_keeps_schema() {
        let cols = vec![Column::categorical("g", &["a", "b", "c", "a"])];
        let d = Dataset::new(cols, vec![0, 1, 0, 1], vec![vec![0.0]; 4]).unwrap();
        let s = d.subset(&[3, 3, 1]).unwrap();
        assert_eq!(s.n(), 3);
        assert_eq!(s.n_features(), 3);
        assert_eq!(s.features(2), &[0.0, 1.0, 0.0]);
        assert!(d.subset(&[0, 9]).is_err());
    }

    #[test]
    fn one_arm_dataset_is_degenerate() {
        let x = vec![vec![1.0], vec![2.0]];
        let d = Dataset::from_numeric(&x, vec![1, 1], vec![vec![0.0], vec![1.0]]).unwrap();
        assert!(matches!(d.require_both_arms(), Err(Error::Degenerate(_))));
    }
}
