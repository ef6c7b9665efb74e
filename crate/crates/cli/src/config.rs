//! Run configuration: column roles, hierarchy, estimator and interval.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use winratio::estimators::{DistRegSpec, EstimatorSpec, Method, MetricSpec, PropensitySpec, SplitSpec};
use winratio::inference::{CiMethod, CiSpec};
use winratio::model::{Direction, HierarchySpec, Level, TiePolicy};
use winratio::nuisance::DEFAULT_CLIP;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("config field {field}: {message}")]
    Field { field: String, message: String },
}

fn field(name: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Field {
        field: name.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodName {
    Complete,
    Stratified,
    Knn,
    OptimalMatch,
    IpwNn,
    Distreg,
    Aipw,
}

impl std::str::FromStr for MethodName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "complete" => MethodName::Complete,
            "stratified" => MethodName::Stratified,
            "knn" => MethodName::Knn,
            "optimal_match" => MethodName::OptimalMatch,
            "ipw_nn" | "ipw" => MethodName::IpwNn,
            "distreg" => MethodName::Distreg,
            "aipw" => MethodName::Aipw,
            other => {
                return Err(format!(
                    "unknown method '{other}' (complete, stratified, knn, optimal_match, ipw_nn, distreg, aipw)"
                ))
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelConfig {
    /// Outcome column name.
    pub outcome: String,
    pub direction: Direction,
    #[serde(default)]
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierarchyConfig {
    #[serde(default = "half_win")]
    pub tie_policy: TiePolicy,
    /// Highest priority first.
    pub levels: Vec<LevelConfig>,
}

fn half_win() -> TiePolicy {
    TiePolicy::HalfWin
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratifyConfig {
    pub column: String,
    pub quantiles: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub method: MethodName,
    #[serde(default = "one")]
    pub k: usize,
    #[serde(default)]
    pub metric: MetricSpec,
    #[serde(default = "default_clip")]
    pub clip: (f64, f64),
    #[serde(default)]
    pub split: SplitSpec,
    #[serde(default)]
    pub stratify: Option<StratifyConfig>,
}

fn one() -> usize {
    1
}

fn default_clip() -> (f64, f64) {
    DEFAULT_CLIP
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CiConfig {
    pub method: CiMethod,
    #[serde(default = "default_level")]
    pub level: f64,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    /// Defaults to the run seed.
    #[serde(default)]
    pub seed: Option<u64>,
}

fn default_level() -> f64 {
    0.95
}

fn default_replicates() -> usize {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(default)]
    pub input: Option<PathBuf>,
    pub treatment: String,
    /// Covariate columns; empty means every column not used elsewhere.
    #[serde(default)]
    pub covariates: Vec<String>,
    /// Covariates read as category labels instead of numbers.
    #[serde(default)]
    pub categorical: Vec<String>,
    pub hierarchy: HierarchyConfig,
    pub estimator: EstimatorConfig,
    #[serde(default)]
    pub propensity: Option<PropensitySpec>,
    #[serde(default)]
    pub distreg: Option<DistRegSpec>,
    /// JSON file of previously fitted nuisance models (see `winratio fit`).
    #[serde(default)]
    pub models: Option<PathBuf>,
    #[serde(default)]
    pub ci: Option<CiConfig>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

pub fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    toml::from_str(&text).map_err(|e| ConfigError::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let mut cfg: RunConfig = read_toml(path)?;
        // Relative paths inside the file are relative to the file.
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.input, &mut cfg.models, &mut cfg.output].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    /// Outcome columns in hierarchy order.
    pub fn outcome_columns(&self) -> Vec<String> {
        self.hierarchy.levels.iter().map(|l| l.outcome.clone()).collect()
    }

    pub fn hierarchy_spec(&self) -> Result<HierarchySpec, ConfigError> {
        if self.hierarchy.levels.is_empty() {
            return Err(field("hierarchy.levels", "at least one level is required"));
        }
        let levels = self
            .hierarchy
            .levels
            .iter()
            .enumerate()
            .map(|(i, l)| Level::new(i, l.direction).with_tolerance(l.tolerance))
            .collect();
        HierarchySpec::new(levels, self.hierarchy.tie_policy).map_err(|e| field("hierarchy", e.to_string()))
    }

    pub fn estimator_spec(&self) -> Result<EstimatorSpec, ConfigError> {
        let e = &self.estimator;
        let propensity = || {
            self.propensity
                .clone()
                .ok_or_else(|| field("propensity", format!("method {:?} needs a [propensity] table", e.method)))
        };
        let distreg = || {
            self.distreg
                .clone()
                .ok_or_else(|| field("distreg", format!("method {:?} needs a [distreg] table", e.method)))
        };
        let method = match e.method {
            MethodName::Complete => Method::Complete,
            MethodName::Stratified => {
                let s = e
                    .stratify
                    .as_ref()
                    .ok_or_else(|| field("estimator.stratify", "stratified pairing needs column and quantiles"))?;
                Method::Stratified {
                    column: s.column.clone(),
                    quantiles: s.quantiles,
                }
            }
            MethodName::Knn => Method::Knn { k: e.k },
            MethodName::OptimalMatch => Method::OptimalMatch,
            MethodName::IpwNn => Method::IpwNn {
                k: e.k,
                propensity: propensity()?,
            },
            MethodName::Distreg => Method::Distreg { distreg: distreg()? },
            MethodName::Aipw => Method::Aipw {
                k: e.k,
                propensity: propensity()?,
                distreg: distreg()?,
            },
        };
        let spec = EstimatorSpec {
            name: None,
            method,
            metric: e.metric.clone(),
            clip: e.clip,
            split: e.split,
        };
        spec.check().map_err(|err| field("estimator", err.to_string()))?;
        Ok(spec)
    }

    pub fn ci_spec(&self) -> Result<Option<CiSpec>, ConfigError> {
        let Some(c) = &self.ci else {
            return Ok(None);
        };
        let spec = CiSpec {
            method: c.method,
            level: c.level,
            replicates: c.replicates,
            seed: c.seed.unwrap_or(self.seed),
        };
        spec.check().map_err(|e| field("ci", e.to_string()))?;
        Ok(Some(spec))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASIC: &str = r#"
treatment = "t"
[hierarchy]
levels = [{ outcome = "death", direction = "lower_better" }, { outcome = "score", direction = "higher_better" }]
[estimator]
method = "aipw"
"#;

    #[test]
    fn missing_nuisance_tables_are_named() {
        let cfg: RunConfig = toml::from_str(BASIC).unwrap();
        let err = cfg.estimator_spec().unwrap_err().to_string();
        assert!(err.contains("propensity"), "{err}");
        assert_eq!(cfg.outcome_columns(), vec!["death", "score"]);
        assert_eq!(cfg.hierarchy_spec().unwrap().levels().len(), 2);
    }

    #[test]
    fn method_names_parse() {
        assert_eq!("ipw".parse::<MethodName>().unwrap(), MethodName::IpwNn);
        assert!("magic".parse::<MethodName>().is_err());
    }
}
