//! Nuisance functions: propensity scores and conditional outcome laws.

mod distreg;
mod forest;
mod logistic;
mod propensity;

pub use distreg::{
    evaluate_q, fit_distreg_forest, fit_distreg_logistic, fit_distreg_logistic_with, Constraint, DistRegFn,
    DistRegKind, DistRegModel, ForestWeights, LogisticDistRegParams,
};
pub(crate) use distreg::bernoulli_win;
pub use forest::{ForestConfig, RegressionForest};
pub use logistic::{dot, expit, FeatureMap};
pub use propensity::{
    fit_propensity_forest, fit_propensity_logistic, fit_propensity_logistic_with, PropensityFn, PropensityKind,
    PropensityModel, DEFAULT_CLIP,
};
