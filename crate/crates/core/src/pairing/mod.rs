//! Pair construction: complete, stratified, nearest-neighbor and optimal
//! matching, plus the covariate metrics they use.

mod assignment;
mod famd;
mod metric;
mod pairs;

pub use assignment::min_cost_assignment;
pub use famd::{famd_apply, famd_fit, FamdProjection};
pub use metric::{mahalanobis_metric, Embedding, Metric};
pub use pairs::{
    complete_pairs, knn_pairs, nearest_neighbors, optimal_match_pairs, pair_cost, quantile_strata,
    quantile_type7, stratified_pairs, QuantileStrata, StratifiedPairs,
};
