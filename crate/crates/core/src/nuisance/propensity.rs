use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::forest::{ForestConfig, RegressionForest};
use super::logistic::{dot, expit, fit_binomial, FeatureMap};
use crate::error::{invalid, Result};
use crate::model::Dataset;

pub const DEFAULT_CLIP: (f64, f64) = (0.01, 0.99);

/// User-supplied `x -> pi(x)` (features in the dataset's numeric encoding).
#[derive(Clone)]
pub struct PropensityFn(pub Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>);

impl fmt::Debug for PropensityFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("PropensityFn(..)")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PropensityKind {
    LogisticLinear {
        feature_map: FeatureMap,
        coefficients: Vec<f64>,
        n_features: usize,
    },
    ForestProbability {
        forest: RegressionForest,
        treatment: Vec<f64>,
    },
    ConstantOracle {
        pi: f64,
        /// `(n_1, n)` when `pi` is the observed treated fraction.
        exact: Option<(u64, u64)>,
    },
    #[serde(skip)]
    Plugin(PropensityFn),
}

/// A fitted or supplied propensity score with clipping to `[lo, hi]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PropensityModel {
    pub kind: PropensityKind,
    pub clip: (f64, f64),
    #[serde(default)]
    pub warnings: Vec<String>,
}

fn check_clip(clip: (f64, f64)) -> Result<()> {
    if !(clip.0 > 0.0 && clip.0 < clip.1 && clip.1 < 1.0) {
        return invalid(format!("clip bounds must satisfy 0 < lo < hi < 1, got {clip:?}"));
    }
    Ok(())
}

impl PropensityModel {
    pub fn constant(pi: f64, clip: (f64, f64)) -> Result<Self> {
        check_clip(clip)?;
        if !(pi > 0.0 && pi < 1.0) {
            return invalid(format!("constant propensity must lie in (0, 1), got {pi}"));
        }
        Ok(PropensityModel {
            kind: PropensityKind::ConstantOracle { pi, exact: None },
            clip,
            warnings: Vec::new(),
        })
    }

    /// Constant propensity equal to the treated fraction of `d`.
    pub fn treated_fraction(d: &Dataset, clip: (f64, f64)) -> Result<Self> {
        d.require_both_arms()?;
        let (n1, n) = (d.n_treated() as u64, d.n() as u64);
        let mut m = PropensityModel::constant(n1 as f64 / n as f64, clip)?;
        m.kind = PropensityKind::ConstantOracle {
            pi: n1 as f64 / n as f64,
            exact: Some((n1, n)),
        };
        Ok(m)
    }

    pub fn plugin<F>(f: F, clip: (f64, f64)) -> Result<Self>
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        check_clip(clip)?;
        Ok(PropensityModel {
            kind: PropensityKind::Plugin(PropensityFn(Arc::new(f))),
            clip,
            warnings: Vec::new(),
        })
    }

    fn raw(&self, x: &[f64]) -> Result<f64> {
        Ok(match &self.kind {
            PropensityKind::LogisticLinear {
                feature_map,
                coefficients,
                n_features,
            } => {
                if x.len() != *n_features {
                    return invalid(format!("query has {} features, model expects {n_features}", x.len()));
                }
                expit(dot(coefficients, &feature_map.expand(x)))
            }
            PropensityKind::ForestProbability { forest, treatment } => forest
                .weights(x)?
                .iter()
                .map(|&(i, w)| w * treatment[i])
                .sum(),
            PropensityKind::ConstantOracle { pi, .. } => *pi,
            PropensityKind::Plugin(f) => (f.0)(x),
        })
    }

    /// Clipped `pi_hat(x)`.
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        let v = self.raw(x)?;
        if v.is_nan() {
            return invalid("propensity evaluated to NaN");
        }
        Ok(v.clamp(self.clip.0, self.clip.1))
    }

    pub fn predict_all(&self, d: &Dataset) -> Result<Vec<f64>> {
        (0..d.n()).map(|i| self.predict(d.features(i))).collect()
    }

    /// `(n_1, n)` when this is an unclipped constant treated fraction.
    pub fn exact_constant(&self) -> Option<(u64, u64)> {
        match &self.kind {
            PropensityKind::ConstantOracle { pi, exact: Some(e) }
                if *pi >= self.clip.0 && *pi <= self.clip.1 =>
            {
                Some(*e)
            }
            _ => None,
        }
    }
}

/// Logistic regression of `T` on `(1, X)`.
pub fn fit_propensity_logistic(d: &Dataset, clip: (f64, f64)) -> Result<PropensityModel> {
    fit_propensity_logistic_with(d, clip, FeatureMap::Linear)
}

pub fn fit_propensity_logistic_with(
    d: &Dataset,
    clip: (f64, f64),
    feature_map: FeatureMap,
) -> Result<PropensityModel> {
    check_clip(clip)?;
    d.require_both_arms()?;
    let p = d.n_features();
    let design = feature_map.design(d.feature_matrix(), d.n(), p);
    let t: Vec<f64> = d.treatment().iter().map(|&v| v as f64).collect();
    let fit = fit_binomial(&design, &t, &vec![1.0; d.n()])?;
    let mut warnings = Vec::new();
    if !fit.converged {
        warnings.push(format!("propensity fit did not converge in {} iterations", fit.iterations));
    }
    let eta = &design * nalgebra::DVector::from_column_slice(&fit.coefficients);
    let max_control = (0..d.n()).filter(|&i| t[i] == 0.0).map(|i| eta[i]).fold(f64::NEG_INFINITY, f64::max);
    let min_treated = (0..d.n()).filter(|&i| t[i] == 1.0).map(|i| eta[i]).fold(f64::INFINITY, f64::min);
    if max_control < min_treated {
        warnings.push("treatment is perfectly separated by the covariates; propensities rely on clipping".into());
    }
    Ok(PropensityModel {
        kind: PropensityKind::LogisticLinear {
            feature_map,
            coefficients: fit.coefficients,
            n_features: p,
        },
        clip,
        warnings,
    })
}

/// Bagged regression trees on the treatment indicator; predictions are the
/// forest-weighted treated fraction.
pub fn fit_propensity_forest(d: &Dataset, cfg: &ForestConfig, clip: (f64, f64)) -> Result<PropensityModel> {
    check_clip(clip)?;
    d.require_both_arms()?;
    if d.n_features() == 0 {
        return invalid("propensity forest needs at least one covariate");
    }
    let t: Vec<f64> = d.treatment().iter().map(|&v| v as f64).collect();
    let forest = RegressionForest::fit(d.feature_matrix(), d.n_features(), &t, 1, cfg)?;
    Ok(PropensityModel {
        kind: PropensityKind::ForestProbability { forest, treatment: t },
        clip,
        warnings: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn draw(n: usize, seed: u64, pi: impl Fn(&[f64]) -> f64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)]).collect();
        let t = x.iter().map(|r| (rng.random::<f64>() < pi(r)) as u8).collect();
        Dataset::from_numeric(&x, t, vec![vec![0.0]; n]).unwrap()
    }

    #[test]
    fn independent_treatment_gives_flat_fit() {
        let d = draw(2000, 1, |_| 0.3);
        let m = fit_propensity_logistic(&d, DEFAULT_CLIP).unwrap();
        let mean_t = d.n_treated() as f64 / d.n() as f64;
        let avg: f64 = m.predict_all(&d).unwrap().iter().sum::<f64>() / d.n() as f64;
        assert!((avg - mean_t).abs() < 1e-6);
        assert!((m.predict(&[0.0, 0.0]).unwrap() - mean_t).abs() < 0.02);
    }

    #[test]
    fn recovers_logit_slope() {
        let d = draw(10000, 2, |x| expit(x[0]));
        let m = fit_propensity_logistic(&d, DEFAULT_CLIP).unwrap();
        let PropensityKind::LogisticLinear { coefficients, .. } = &m.kind else { panic!() };
        assert!((0.85..=1.15).contains(&coefficients[1]), "{coefficients:?}");
    }

    #[test]
    fn constant_treatment_is_rejected() {
        let x = vec![vec![0.0], vec![1.0], vec![2.0]];
        let d = Dataset::from_numeric(&x, vec![1, 1, 1], vec![vec![0.0]; 3]).unwrap();
        assert!(fit_propensity_logistic(&d, DEFAULT_CLIP).is_err());
        assert!(fit_propensity_forest(&d, &ForestConfig::default(), DEFAULT_CLIP).is_err());
    }

    #[test]
    fn separation_warns_and_clips() {
        let x = vec![vec![-2.0], vec![-1.0], vec![1.0], vec![2.0]];
        let d = Dataset::from_numeric(&x, vec![0, 0, 1, 1], vec![vec![0.0]; 4]).unwrap();
        let m = fit_propensity_logistic(&d, DEFAULT_CLIP).unwrap();
        assert!(!m.warnings.is_empty());
        assert_eq!(m.predict(&[10.0]).unwrap(), 0.99);
        assert_eq!(m.predict(&[-10.0]).unwrap(), 0.01);
    }

    #[test]
    fn forest_tracks_constant_and_step_propensities() {
        let cfg = ForestConfig {
            trees: 200,
            min_leaf: 50,
            seed: 3,
            ..Default::default()
        };
        let d = draw(5000, 4, |_| 0.4);
        let m = fit_propensity_forest(&d, &cfg, DEFAULT_CLIP).unwrap();
        for a in [-1.5, -0.5, 0.5, 1.5] {
            for b in [-1.5, 0.0, 1.5] {
                assert!((m.predict(&[a, b]).unwrap() - 0.4).abs() < 0.05);
            }
        }
        let d = draw(10000, 5, |x| 0.2 + 0.6 * (x[0] > 0.0) as u8 as f64);
        let m = fit_propensity_forest(&d, &cfg, DEFAULT_CLIP).unwrap();
        for a in [-1.5, -0.75, 0.75, 1.5] {
            for b in [-1.0, 0.0, 1.0] {
                let truth = if a > 0.0 { 0.8 } else { 0.2 };
                assert!((m.predict(&[a, b]).unwrap() - truth).abs() < 0.05);
            }
        }
    }

    #[test]
    fn clip_bounds_hold() {
        let d = draw(500, 6, |x| expit(4.0 * x[0]));
        let cfg = ForestConfig {
            trees: 30,
            ..Default::default()
        };
        let clip = (0.1, 0.9);
        let models = [
            fit_propensity_logistic(&d, clip).unwrap(),
            fit_propensity_forest(&d, &cfg, clip).unwrap(),
            PropensityModel::plugin(|x| expit(10.0 * x[0]), clip).unwrap(),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for m in &models {
            for _ in 0..500 {
                let q = [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)];
                let v = m.predict(&q).unwrap();
                assert!((0.1..=0.9).contains(&v));
            }
        }
        assert!(PropensityModel::constant(0.5, (0.5, 0.4)).is_err());
    }

    #[test]
    fn serde_round_trip() {
        let d = draw(200, 7, |_| 0.5);
        let m = fit_propensity_logistic(&d, DEFAULT_CLIP).unwrap();
        let s = serde_json::to_string(&m).unwrap();
        let back: PropensityModel = serde_json::from_str(&s).unwrap();
        assert_eq!(back.predict(&[0.3, 0.1]).unwrap(), m.predict(&[0.3, 0.1]).unwrap());
    }
}
