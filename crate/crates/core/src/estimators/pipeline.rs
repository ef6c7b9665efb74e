//! Declarative estimator selection: pairing or nuisance fitting, estimation,
//! and an optional confidence interval, driven by one serializable spec.

use serde::{Deserialize, Serialize};

use super::{
    estimate_aipw, estimate_distreg, estimate_ipw_nn, estimate_traditional, AipwConfig, EstimateReport, SampleSplit,
};
use crate::error::{invalid, Error, Result};
use crate::inference::{bootstrap_ci, ci_report_from_tau, ci_report_from_wr, gaussian_wr_ci, CiMethod, CiSpec};
use crate::model::{Dataset, HierarchySpec};
use crate::nuisance::{
    fit_distreg_forest, fit_distreg_logistic_with, fit_propensity_forest, fit_propensity_logistic_with, Constraint,
    DistRegModel, FeatureMap, ForestConfig, PropensityModel, DEFAULT_CLIP,
};
use crate::pairing::{
    complete_pairs, famd_fit, knn_pairs, mahalanobis_metric, optimal_match_pairs, quantile_strata, stratified_pairs,
    Metric,
};
use crate::rng::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MetricSpec {
    Euclidean,
    Mahalanobis {
        #[serde(default = "default_ridge")]
        ridge: f64,
    },
    Famd {
        #[serde(default = "default_variance_kept")]
        variance_kept: f64,
    },
}

fn default_ridge() -> f64 {
    1e-6
}

fn default_variance_kept() -> f64 {
    0.9
}

impl Default for MetricSpec {
    fn default() -> Self {
        MetricSpec::Mahalanobis { ridge: default_ridge() }
    }
}

impl MetricSpec {
    pub fn build(&self, d: &Dataset) -> Result<Metric> {
        match self {
            MetricSpec::Euclidean => Ok(Metric::euclidean()),
            MetricSpec::Mahalanobis { ridge } => mahalanobis_metric(d, *ridge),
            MetricSpec::Famd { variance_kept } => Ok(Metric::LatentEuclidean {
                projection: famd_fit(d, *variance_kept)?,
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PropensitySpec {
    /// Constant `n_1 / n` of the data being estimated on.
    TreatedFraction,
    Constant {
        pi: f64,
    },
    Logistic {
        #[serde(default)]
        features: FeatureMap,
    },
    Forest {
        #[serde(default)]
        forest: ForestConfig,
    },
    /// Supplied by the caller through [`Oracles`].
    Oracle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DistRegSpec {
    Logistic {
        #[serde(default)]
        constraint: Constraint,
        #[serde(default)]
        features: FeatureMap,
    },
    Forest {
        #[serde(default)]
        forest: ForestConfig,
    },
    Oracle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum Method {
    Complete,
    Stratified {
        column: String,
        quantiles: usize,
    },
    Knn {
        #[serde(default = "one")]
        k: usize,
    },
    OptimalMatch,
    IpwNn {
        #[serde(default = "one")]
        k: usize,
        propensity: PropensitySpec,
    },
    Distreg {
        distreg: DistRegSpec,
    },
    Aipw {
        #[serde(default = "one")]
        k: usize,
        propensity: PropensitySpec,
        distreg: DistRegSpec,
    },
}

fn one() -> usize {
    1
}

/// Sample split used by the regression-based methods. The holdout only
/// feeds the arm-balance weight of the doubly robust estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    #[serde(default = "default_holdout_fraction")]
    pub holdout_fraction: f64,
}

fn default_train_fraction() -> f64 {
    0.5
}

fn default_holdout_fraction() -> f64 {
    0.2
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train_fraction: default_train_fraction(),
            holdout_fraction: default_holdout_fraction(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSpec {
    /// Label used in study tables; defaults to the method name.
    #[serde(default)]
    pub name: Option<String>,
    #[serde(flatten)]
    pub method: Method,
    #[serde(default)]
    pub metric: MetricSpec,
    #[serde(default = "default_clip")]
    pub clip: (f64, f64),
    #[serde(default)]
    pub split: SplitSpec,
}

fn default_clip() -> (f64, f64) {
    DEFAULT_CLIP
}

impl EstimatorSpec {
    pub fn new(method: Method) -> Self {
        EstimatorSpec {
            name: None,
            method,
            metric: MetricSpec::default(),
            clip: DEFAULT_CLIP,
            split: SplitSpec::default(),
        }
    }

    pub fn named(mut self, name: impl Into<String>) -> Self {
        self.name = Some(name.into());
        self
    }

    pub fn with_metric(mut self, metric: MetricSpec) -> Self {
        self.metric = metric;
        self
    }

    pub fn label(&self) -> String {
        self.name.clone().unwrap_or_else(|| self.method_name().to_string())
    }

    pub fn method_name(&self) -> &'static str {
        match self.method {
            Method::Complete => "complete",
            Method::Stratified { .. } => "stratified",
            Method::Knn { .. } => "knn",
            Method::OptimalMatch => "optimal_match",
            Method::IpwNn { .. } => "ipw_nn",
            Method::Distreg { .. } => "distreg",
            Method::Aipw { .. } => "aipw",
        }
    }

    /// Whether the Gaussian count interval applies (pair-based methods).
    pub fn has_counts(&self) -> bool {
        matches!(
            self.method,
            Method::Complete | Method::Stratified { .. } | Method::Knn { .. } | Method::OptimalMatch
        )
    }

    pub fn check(&self) -> Result<()> {
        let k_ok = |k: usize| if k == 0 { invalid("k must be at least 1") } else { Ok(()) };
        match &self.method {
            Method::Stratified { quantiles, .. } if *quantiles < 2 => {
                return invalid("stratified pairing needs at least 2 quantile strata")
            }
            Method::Knn { k } | Method::IpwNn { k, .. } | Method::Aipw { k, .. } => k_ok(*k)?,
            _ => {}
        }
        for f in [self.split.train_fraction, self.split.holdout_fraction] {
            if !(0.0..1.0).contains(&f) {
                return invalid(format!("split fractions must lie in [0, 1), got {f}"));
            }
        }
        if matches!(self.method, Method::Aipw { .. }) && self.split.holdout_fraction == 0.0 {
            return invalid("aipw needs split.holdout_fraction > 0 to estimate lambda");
        }
        Ok(())
    }
}

/// Externally supplied nuisances, e.g. the true propensity of a simulator.
#[derive(Debug, Clone, Default)]
pub struct Oracles {
    pub propensity: Option<PropensityModel>,
    pub distreg: Option<DistRegModel>,
}

fn forest_with_seed(cfg: &ForestConfig, seed: u64) -> ForestConfig {
    ForestConfig {
        seed: derive_seed(seed, &[cfg.seed]),
        ..*cfg
    }
}

fn build_propensity(
    spec: &PropensitySpec,
    d: &Dataset,
    clip: (f64, f64),
    seed: u64,
    oracles: &Oracles,
) -> Result<PropensityModel> {
    match spec {
        PropensitySpec::TreatedFraction => PropensityModel::treated_fraction(d, clip),
        PropensitySpec::Constant { pi } => PropensityModel::constant(*pi, clip),
        PropensitySpec::Logistic { features } => fit_propensity_logistic_with(d, clip, *features),
        PropensitySpec::Forest { forest } => fit_propensity_forest(d, &forest_with_seed(forest, seed), clip),
        PropensitySpec::Oracle => oracles
            .propensity
            .clone()
            .ok_or_else(|| Error::InvalidInput("propensity kind oracle needs a supplied propensity".into())),
    }
}

/// Fits on the rows `train` of `d`; oracles ignore them.
fn build_distreg(spec: &DistRegSpec, d: &Dataset, train: &[usize], seed: u64, oracles: &Oracles) -> Result<DistRegModel> {
    match spec {
        DistRegSpec::Logistic { constraint, features } => {
            fit_distreg_logistic_with(&d.subset(train)?, *constraint, *features)
        }
        DistRegSpec::Forest { forest } => fit_distreg_forest(&d.subset(train)?, &forest_with_seed(forest, seed)),
        DistRegSpec::Oracle => oracles
            .distreg
            .clone()
            .ok_or_else(|| Error::InvalidInput("distreg kind oracle needs a supplied model".into())),
    }
}

/// Fit whatever `spec` needs on `d` and return the point estimate.
///
/// Sub-seeds for tie-breaking, splitting and forests derive from `seed`, so
/// one seed reproduces the whole run.
pub fn run_estimator(
    d: &Dataset,
    h: &HierarchySpec,
    spec: &EstimatorSpec,
    seed: u64,
    oracles: &Oracles,
) -> Result<EstimateReport> {
    spec.check()?;
    d.require_both_arms()?;
    let knn_seed = derive_seed(seed, &[1]);
    let split_seed = derive_seed(seed, &[2]);
    let mut report = match &spec.method {
        Method::Complete => estimate_traditional(d, &complete_pairs(d)?, h)?,
        Method::Stratified { column, quantiles } => {
            let strata = quantile_strata(d, column, *quantiles)?;
            let st = stratified_pairs(d, &strata.labels)?;
            let mut r = estimate_traditional(d, &st.pairs, h)?;
            r.warnings.extend(strata.warnings);
            if !st.degenerate_strata.is_empty() {
                r.warnings
                    .push(format!("{} strata lack one arm and were skipped", st.degenerate_strata.len()));
            }
            r
        }
        Method::Knn { k } => estimate_traditional(d, &knn_pairs(d, &spec.metric.build(d)?, *k, knn_seed)?, h)?,
        Method::OptimalMatch => estimate_traditional(d, &optimal_match_pairs(d, &spec.metric.build(d)?)?, h)?,
        Method::IpwNn { k, propensity } => {
            let pm = build_propensity(propensity, d, spec.clip, derive_seed(seed, &[3]), oracles)?;
            estimate_ipw_nn(d, h, &pm, &spec.metric.build(d)?, *k, knn_seed)?
        }
        Method::Distreg { distreg } => {
            let split = if matches!(distreg, DistRegSpec::Oracle) {
                SampleSplit::all_inference(d.n())
            } else {
                SampleSplit::random(d.n(), 0.0, spec.split.train_fraction, split_seed)?
            };
            let m = build_distreg(distreg, d, &split.train, derive_seed(seed, &[4]), oracles)?;
            estimate_distreg(d, h, &m, &split)?
        }
        Method::Aipw { k, propensity, distreg } => {
            let split = SampleSplit::random(
                d.n(),
                spec.split.holdout_fraction,
                spec.split.train_fraction,
                split_seed,
            )?;
            let pm = match propensity {
                PropensitySpec::Oracle => build_propensity(propensity, d, spec.clip, 0, oracles)?,
                _ => build_propensity(
                    propensity,
                    &d.subset(&split.train)?,
                    spec.clip,
                    derive_seed(seed, &[3]),
                    oracles,
                )?,
            };
            let m = build_distreg(distreg, d, &split.train, derive_seed(seed, &[4]), oracles)?;
            let cfg = AipwConfig::from_holdout(d, &split)?;
            let metric = spec.metric.build(&d.subset(&split.inference)?)?;
            estimate_aipw(d, h, &m, &pm, &split, &cfg, &metric, *k, knn_seed)?
        }
    };
    report.meta.seed = Some(seed);
    Ok(report)
}

/// [`run_estimator`] followed by the requested interval.
pub fn run_with_ci(
    d: &Dataset,
    h: &HierarchySpec,
    spec: &EstimatorSpec,
    ci: Option<&CiSpec>,
    seed: u64,
    oracles: &Oracles,
) -> Result<EstimateReport> {
    let mut report = run_estimator(d, h, spec, seed, oracles)?;
    let Some(ci) = ci else {
        return Ok(report);
    };
    ci.check()?;
    report.ci = Some(match ci.method {
        CiMethod::GaussianCounts => {
            let stats = report.win_stats.as_ref().ok_or_else(|| {
                Error::Unsupported(format!(
                    "gaussian_counts intervals need win/loss counts; method {} has none, use the bootstrap",
                    spec.method_name()
                ))
            })?;
            let (lo, hi) = gaussian_wr_ci(stats, ci.level)?;
            ci_report_from_wr(lo, hi, ci.level)
        }
        CiMethod::BootstrapPercentile => {
            let boot = bootstrap_ci(
                |sample, s| run_estimator(sample, h, spec, s, oracles).map(|r| r.tau_hat),
                d,
                ci,
            )?;
            if boot.redraws > 0 {
                report
                    .warnings
                    .push(format!("{} bootstrap resamples were degenerate and redrawn", boot.redraws));
            }
            ci_report_from_tau(boot.lo, boot.hi, ci)?
        }
    });
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Column, Direction, TiePolicy};

    fn example1() -> (Dataset, HierarchySpec) {
        let cols = vec![Column::numeric("x", vec![0.0, 0.0, 0.0, 0.0, 1.0, 1.0])];
        let y = vec![vec![2.0], vec![1.0], vec![2.0], vec![1.0], vec![0.0], vec![3.0]];
        let d = Dataset::new(cols, vec![1, 0, 1, 0, 1, 0], y).unwrap();
        let h = HierarchySpec::lexicographic(1, Direction::HigherBetter, TiePolicy::HalfWin).unwrap();
        (d, h)
    }

    #[test]
    fn pair_methods_on_example1() {
        let (d, h) = example1();
        let none = Oracles::default();
        let complete = run_estimator(&d, &h, &EstimatorSpec::new(Method::Complete), 0, &none).unwrap();
        assert_eq!(complete.tau_hat, 4.0 / 9.0);
        let knn = run_estimator(&d, &h, &EstimatorSpec::new(Method::Knn { k: 1 }), 0, &none).unwrap();
        assert_eq!(knn.tau_hat, 2.0 / 3.0);
        let om = run_estimator(&d, &h, &EstimatorSpec::new(Method::OptimalMatch), 0, &none).unwrap();
        assert_eq!(om.tau_hat, 2.0 / 3.0);
        let ipw = EstimatorSpec::new(Method::IpwNn {
            k: 1,
            propensity: PropensitySpec::TreatedFraction,
        });
        assert_eq!(run_estimator(&d, &h, &ipw, 0, &none).unwrap().tau_hat, 2.0 / 3.0);
    }

    #[test]
    fn oracle_without_supply_is_config_error() {
        let (d, h) = example1();
        let spec = EstimatorSpec::new(Method::IpwNn {
            k: 1,
            propensity: PropensitySpec::Oracle,
        });
        let err = run_estimator(&d, &h, &spec, 0, &Oracles::default()).unwrap_err();
        assert!(matches!(err, Error::InvalidInput(_)));
    }

    #[test]
    fn gaussian_ci_only_for_counts() {
        let (d, _) = example1();
        let h = HierarchySpec::lexicographic(1, Direction::HigherBetter, TiePolicy::Loss).unwrap();
        let ci = CiSpec {
            method: CiMethod::GaussianCounts,
            ..Default::default()
        };
        let r = run_with_ci(&d, &h, &EstimatorSpec::new(Method::Complete), Some(&ci), 0, &Oracles::default()).unwrap();
        let c = r.ci.unwrap();
        assert!(c.wr.0 <= r.wr_hat && r.wr_hat <= c.wr.1);
        let spec = EstimatorSpec::new(Method::Distreg {
            distreg: DistRegSpec::Oracle,
        });
        let oracles = Oracles {
            distreg: Some(DistRegModel::plugin(|_, _, _, _| 0.5)),
            ..Default::default()
        };
        let got = run_with_ci(&d, &h, &spec, Some(&ci), 0, &oracles);
        assert!(matches!(got, Err(Error::Unsupported(_))), "{got:?}");
    }

    #[test]
    fn spec_parses_from_json() {
        let spec: EstimatorSpec = serde_json::from_str(
            r#"{"method": "aipw", "k": 2,
                "propensity": {"kind": "forest", "forest": {"trees": 10, "min_leaf": 5, "sample_fraction": 0.5, "mtry": null, "seed": 1}},
                "distreg": {"kind": "logistic", "constraint": "fully_shared_across_coordinates"}}"#,
        )
        .unwrap();
        assert_eq!(spec.method_name(), "aipw");
        assert_eq!(spec.metric, MetricSpec::default());
        assert_eq!(spec.split, SplitSpec::default());
        let missing = serde_json::from_str::<EstimatorSpec>(r#"{"method": "aipw", "distreg": {"kind": "oracle"}}"#);
        assert!(missing.unwrap_err().to_string().contains("propensity"));
        let mut bad = spec.clone();
        bad.split.holdout_fraction = 0.0;
        assert!(bad.check().is_err());
    }
}
