use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::forest::{ForestConfig, RegressionForest};
use super::logistic::{dot, expit, fit_binomial, FeatureMap};
use crate::error::{invalid, Error, Result};
use crate::model::{Arm, Contrast, Dataset, HierarchySpec, Level, TiePolicy, WinValue};
use crate::rng::derive_seed;

/// Coefficient sharing across outcome coordinates within an arm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Constraint {
    #[default]
    Free,
    /// One coefficient vector per arm, fitted on the pooled coordinates.
    FullySharedAcrossCoordinates,
}

/// Per-arm, per-coordinate logistic models `P(Y_k = 1 | x, t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticDistRegParams {
    pub constraint: Constraint,
    pub feature_map: FeatureMap,
    pub n_features: usize,
    pub d: usize,
    /// `coefficients[arm flag][k]`.
    pub coefficients: [Vec<Vec<f64>>; 2],
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl LogisticDistRegParams {
    /// `P(Y_k = 1 | x, arm)` for every coordinate.
    pub fn probabilities(&self, arm: Arm, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n_features {
            return invalid(format!("query has {} features, model expects {}", x.len(), self.n_features));
        }
        let z = self.feature_map.expand(x);
        Ok(self.coefficients[arm.flag() as usize]
            .iter()
            .map(|u| expit(dot(u, &z)))
            .collect())
    }
}

/// Per-arm forests and the training outcomes their weights refer to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestWeights {
    forests: [RegressionForest; 2],
    outcomes: [Vec<f64>; 2],
    d: usize,
}

impl ForestWeights {
    /// `omega_i(x, arm)` over the training units of `arm`, indexed within
    /// that arm.
    pub fn weights(&self, x: &[f64], arm: Arm) -> Result<Vec<(usize, f64)>> {
        self.forests[arm.flag() as usize].weights(x)
    }

    pub fn outcome(&self, arm: Arm, i: usize) -> &[f64] {
        &self.outcomes[arm.flag() as usize][i * self.d..(i + 1) * self.d]
    }

    pub fn n_trees(&self) -> usize {
        self.forests[0].n_trees()
    }
}

/// User-supplied `(arm, contrast, x, y) -> q`.
#[derive(Clone)]
pub struct DistRegFn(pub Arc<dyn Fn(Arm, Contrast, &[f64], &[f64]) -> f64 + Send + Sync>);

impl fmt::Debug for DistRegFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("DistRegFn(..)")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DistRegKind {
    Logistic(LogisticDistRegParams),
    Forest(ForestWeights),
    #[serde(skip)]
    Plugin(DistRegFn),
}

/// Fitted conditional outcome laws, evaluated as
/// `q_1(x, y) = E[w(Y(1) | y) | x]` and `q_0(x, y) = E[w(y | Y(0)) | x]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DistRegModel {
    pub kind: DistRegKind,
}

fn check_policy(h: &HierarchySpec) -> Result<()> {
    if h.tie_policy() == TiePolicy::Drop {
        return invalid("tie policy 'drop' leaves the win function undefined on ties; use half_win or loss");
    }
    Ok(())
}

fn tie_value(h: &HierarchySpec) -> f64 {
    match h.tie_policy() {
        TiePolicy::HalfWin => 0.5,
        _ => 0.0,
    }
}

/// Exact `E[w]` for coordinates that are independent across the hierarchy.
/// `level_probs` gives `(P(win), P(tie))` at each level.
fn prefix_expectation(h: &HierarchySpec, mut level_probs: impl FnMut(&Level) -> (f64, f64)) -> f64 {
    let mut alive = 1.0;
    let mut acc = 0.0;
    for level in h.levels() {
        let (win, tie) = level_probs(level);
        acc += alive * win;
        alive *= tie;
    }
    acc + alive * tie_value(h)
}

/// `E[w(A | B)]` for independent binary vectors with `P(A_k = 1) = pa[k]`
/// and `P(B_k = 1) = pb[k]`.
pub(crate) fn bernoulli_win(h: &HierarchySpec, pa: &[f64], pb: &[f64]) -> f64 {
    prefix_expectation(h, |level| {
        let k = level.outcome;
        let mut out = (0.0, 0.0);
        for (a, qa) in [(1.0, pa[k]), (0.0, 1.0 - pa[k])] {
            for (b, qb) in [(1.0, pb[k]), (0.0, 1.0 - pb[k])] {
                let (w, t) = outcome_of(level.compare_values(a, b));
                out.0 += qa * qb * w;
                out.1 += qa * qb * t;
            }
        }
        out
    })
}

fn outcome_of(v: WinValue) -> (f64, f64) {
    match v {
        WinValue::Win => (1.0, 0.0),
        WinValue::Tie => (0.0, 1.0),
        WinValue::Loss => (0.0, 0.0),
    }
}

impl DistRegModel {
    pub fn plugin<F>(f: F) -> Self
    where
        F: Fn(Arm, Contrast, &[f64], &[f64]) -> f64 + Send + Sync + 'static,
    {
        DistRegModel {
            kind: DistRegKind::Plugin(DistRegFn(Arc::new(f))),
        }
    }

    pub fn outcome_dim(&self) -> Option<usize> {
        match &self.kind {
            DistRegKind::Logistic(p) => Some(p.d),
            DistRegKind::Forest(f) => Some(f.d),
            DistRegKind::Plugin(_) => None,
        }
    }

    pub fn warnings(&self) -> &[String] {
        match &self.kind {
            DistRegKind::Logistic(p) => &p.warnings,
            _ => &[],
        }
    }

    fn check(&self, h: &HierarchySpec, y_len: usize) -> Result<()> {
        check_policy(h)?;
        if let Some(d) = self.outcome_dim() {
            if y_len != d {
                return invalid(format!("outcome has {y_len} coordinates, model expects {d}"));
            }
        }
        h.check_dimension(y_len)
    }

    /// `q_arm(x, y)` for the chosen contrast. The random outcome takes the
    /// first argument of the contrast for the treated arm and the second for
    /// the control arm.
    pub fn q(&self, h: &HierarchySpec, contrast: Contrast, arm: Arm, x: &[f64], y: &[f64]) -> Result<f64> {
        self.check(h, y.len())?;
        let random_first = arm == Arm::Treated;
        let v = match &self.kind {
            DistRegKind::Logistic(params) => {
                if y.iter().any(|&v| v != 0.0 && v != 1.0) {
                    return invalid("logistic distributional regression needs binary query outcomes");
                }
                let probs = params.probabilities(arm, x)?;
                let swap = random_first != (contrast == Contrast::Loss);
                prefix_expectation(h, |level| {
                    let k = level.outcome;
                    let mut out = (0.0, 0.0);
                    for (v, pv) in [(1.0, probs[k]), (0.0, 1.0 - probs[k])] {
                        let cmp = if swap {
                            level.compare_values(v, y[k])
                        } else {
                            level.compare_values(y[k], v)
                        };
                        let (w, t) = outcome_of(cmp);
                        out.0 += pv * w;
                        out.1 += pv * t;
                    }
                    out
                })
            }
            DistRegKind::Forest(fw) => fw
                .weights(x, arm)?
                .iter()
                .map(|&(i, w)| {
                    let yi = fw.outcome(arm, i);
                    let val = if random_first {
                        h.contrast_unchecked(contrast, yi, y)
                    } else {
                        h.contrast_unchecked(contrast, y, yi)
                    };
                    w * val.unwrap_or(0.0)
                })
                .sum(),
            DistRegKind::Plugin(f) => (f.0)(arm, contrast, x, y),
        };
        if !(0.0..=1.0 + 1e-12).contains(&v) {
            return Err(Error::Numerical(format!("q evaluated outside [0, 1]: {v}")));
        }
        Ok(v.min(1.0))
    }

    /// `E[w(Y(1) | Y(0)) | x] - E[w(Y(0) | Y(1)) | x]` with the potential
    /// outcomes drawn independently from the two fitted arm laws.
    pub fn conditional_contrast(&self, h: &HierarchySpec, x: &[f64]) -> Result<f64> {
        check_policy(h)?;
        match &self.kind {
            DistRegKind::Logistic(params) => {
                h.check_dimension(params.d)?;
                let p1 = params.probabilities(Arm::Treated, x)?;
                let p0 = params.probabilities(Arm::Control, x)?;
                Ok(bernoulli_win(h, &p1, &p0) - bernoulli_win(h, &p0, &p1))
            }
            DistRegKind::Forest(fw) => {
                h.check_dimension(fw.d)?;
                let w1 = fw.weights(x, Arm::Treated)?;
                let w0 = fw.weights(x, Arm::Control)?;
                let mut delta = 0.0;
                for &(i, a) in &w1 {
                    let yi = fw.outcome(Arm::Treated, i);
                    for &(j, b) in &w0 {
                        let yj = fw.outcome(Arm::Control, j);
                        let win = h.win_unchecked(yi, yj).unwrap_or(0.0);
                        let loss = h.win_unchecked(yj, yi).unwrap_or(0.0);
                        delta += a * b * (win - loss);
                    }
                }
                Ok(delta.clamp(-1.0, 1.0))
            }
            DistRegKind::Plugin(_) => Err(Error::Unsupported(
                "plug-in models do not expose both arm laws; the treatment rule needs a fitted model".into(),
            )),
        }
    }
}

/// `q_t(x, y)` for the declared win function.
pub fn evaluate_q(m: &DistRegModel, h: &HierarchySpec, arm: Arm, x: &[f64], y: &[f64]) -> Result<f64> {
    m.q(h, Contrast::Win, arm, x, y)
}

pub fn fit_distreg_logistic(d: &Dataset, constraint: Constraint) -> Result<DistRegModel> {
    fit_distreg_logistic_with(d, constraint, FeatureMap::Linear)
}

/// Per-arm logistic fits of each binary outcome coordinate on the expanded
/// covariates.
pub fn fit_distreg_logistic_with(d: &Dataset, constraint: Constraint, feature_map: FeatureMap) -> Result<DistRegModel> {
    d.require_both_arms()?;
    if !d.outcomes_binary() {
        return invalid("logistic distributional regression needs outcomes coded 0/1");
    }
    let p = d.n_features();
    let dim = d.d();
    let mut warnings = Vec::new();
    let mut coefficients: [Vec<Vec<f64>>; 2] = [Vec::new(), Vec::new()];
    for arm in [Arm::Control, Arm::Treated] {
        let idx = d.indices_of(arm);
        let mut x = Vec::with_capacity(idx.len() * p);
        for &i in &idx {
            x.extend_from_slice(d.features(i));
        }
        let design = feature_map.design(&x, idx.len(), p);
        let mut fit_one = |s: Vec<f64>, m: Vec<f64>, label: String| -> Result<Vec<f64>> {
            let fit = fit_binomial(&design, &s, &m)?;
            if !fit.converged {
                warnings.push(format!("{label} did not converge in {} iterations", fit.iterations));
            }
            Ok(fit.coefficients)
        };
        let arm_name = if arm == Arm::Treated { "treated" } else { "control" };
        let coefs = match constraint {
            Constraint::Free => (0..dim)
                .map(|k| {
                    let s = idx.iter().map(|&i| d.outcome(i)[k]).collect();
                    fit_one(s, vec![1.0; idx.len()], format!("{arm_name} arm, outcome {k}"))
                })
                .collect::<Result<Vec<_>>>()?,
            Constraint::FullySharedAcrossCoordinates => {
                let s = idx.iter().map(|&i| d.outcome(i).iter().sum()).collect();
                let u = fit_one(s, vec![dim as f64; idx.len()], format!("{arm_name} arm, shared"))?;
                vec![u; dim]
            }
        };
        coefficients[arm.flag() as usize] = coefs;
    }
    Ok(DistRegModel {
        kind: DistRegKind::Logistic(LogisticDistRegParams {
            constraint,
            feature_map,
            n_features: p,
            d: dim,
            coefficients,
            warnings,
        }),
    })
}

/// Per-arm forests of multi-output regression trees on the outcomes.
pub fn fit_distreg_forest(d_train: &Dataset, cfg: &ForestConfig) -> Result<DistRegModel> {
    cfg.check()?;
    d_train.require_both_arms()?;
    let p = d_train.n_features();
    if p == 0 {
        return invalid("forest distributional regression needs at least one covariate");
    }
    let dim = d_train.d();
    let fit_arm = |arm: Arm| -> Result<(RegressionForest, Vec<f64>)> {
        let idx = d_train.indices_of(arm);
        if idx.len() < cfg.min_leaf {
            return invalid(format!(
                "arm with {} training units is smaller than min_leaf = {}",
                idx.len(),
                cfg.min_leaf
            ));
        }
        let mut x = Vec::with_capacity(idx.len() * p);
        let mut y = Vec::with_capacity(idx.len() * dim);
        for &i in &idx {
            x.extend_from_slice(d_train.features(i));
            y.extend_from_slice(d_train.outcome(i));
        }
        let arm_cfg = ForestConfig {
            seed: derive_seed(cfg.seed, &[arm.flag() as u64]),
            ..*cfg
        };
        Ok((RegressionForest::fit(&x, p, &y, dim, &arm_cfg)?, y))
    };
    let (f0, y0) = fit_arm(Arm::Control)?;
    let (f1, y1) = fit_arm(Arm::Treated)?;
    Ok(DistRegModel {
        kind: DistRegKind::Forest(ForestWeights {
            forests: [f0, f1],
            outcomes: [y0, y1],
            d: dim,
        }),
    })
}
