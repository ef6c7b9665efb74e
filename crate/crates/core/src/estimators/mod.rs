//! Estimators of the win proportion under pairing, weighting, regression and
//! doubly robust schemes, plus the pointwise treatment rule.

mod pipeline;
mod report;
mod split;

use rayon::prelude::*;

pub use pipeline::{
    run_estimator, run_with_ci, DistRegSpec, EstimatorSpec, Method, MetricSpec, Oracles, PropensitySpec, SplitSpec,
};
pub use report::{nb_from_tau, real, wr_from_tau, CiReport, EstimandKind, EstimateReport, ReportMeta};
pub use split::{AipwConfig, SampleSplit};

use crate::error::{invalid, Result};
use crate::model::{summary_from_stats, win_stats, Arm, Contrast, Dataset, HierarchySpec, PairSet, Provenance, TiePolicy};
use crate::nuisance::{DistRegKind, DistRegModel, PropensityKind, PropensityModel};
use crate::pairing::{nearest_neighbors, Metric};

fn provenance_name(p: Provenance) -> &'static str {
    match p {
        Provenance::Complete => "complete",
        Provenance::Stratified => "stratified",
        Provenance::Knn => "knn",
        Provenance::OptimalMatch => "optimal_match",
    }
}

pub fn propensity_name(pm: &PropensityModel) -> &'static str {
    match pm.kind {
        PropensityKind::LogisticLinear { .. } => "logistic",
        PropensityKind::ForestProbability { .. } => "forest",
        PropensityKind::ConstantOracle { .. } => "constant",
        PropensityKind::Plugin(_) => "plugin",
    }
}

pub fn distreg_name(m: &DistRegModel) -> &'static str {
    match m.kind {
        DistRegKind::Logistic(_) => "logistic",
        DistRegKind::Forest(_) => "forest",
        DistRegKind::Plugin(_) => "plugin",
    }
}

fn base_meta(d: &Dataset) -> ReportMeta {
    ReportMeta {
        n: d.n(),
        n_control: d.n_control(),
        n_treated: d.n_treated(),
        ..Default::default()
    }
}

fn require_defined_ties(h: &HierarchySpec) -> Result<()> {
    if h.tie_policy() == TiePolicy::Drop {
        return invalid("this estimator needs every pair scored; use tie policy half_win or loss");
    }
    Ok(())
}

/// `tau_win / tau_loss`; `+inf` when `tau_loss = 0`.
pub fn wr_from_two_taus(tau_win: f64, tau_loss: f64) -> Result<f64> {
    if !(tau_win >= 0.0) || !(tau_loss >= 0.0) || !tau_win.is_finite() || !tau_loss.is_finite() {
        return invalid(format!("win ratio needs finite non-negative estimates, got {tau_win} / {tau_loss}"));
    }
    Ok(if tau_loss == 0.0 {
        f64::INFINITY
    } else {
        tau_win / tau_loss
    })
}

/// Win proportion over a pair set. Complete pairings estimate the
/// population estimand, nearest-neighbor pairings the individual one.
pub fn estimate_traditional(d: &Dataset, pairs: &PairSet, h: &HierarchySpec) -> Result<EstimateReport> {
    let stats = win_stats(d, pairs, h)?;
    let summary = summary_from_stats(&stats)?;
    let estimand = match pairs.provenance() {
        Provenance::Complete => Some(EstimandKind::TauPop),
        Provenance::Knn => Some(EstimandKind::TauStar),
        _ => None,
    };
    let mut meta = base_meta(d);
    meta.pairing = Some(provenance_name(pairs.provenance()).to_string());
    meta.n_pairs = Some(stats.n_pairs);
    let mut report = EstimateReport::from_tau(provenance_name(pairs.provenance()), estimand, summary.p_w, meta);
    report.wr_hat = summary.wr;
    report.nb_hat = summary.nb;
    let total = stats.n_wins + stats.n_losses;
    let loss_mass = if h.tie_policy() == TiePolicy::Loss {
        pairs
            .iter()
            .map(|(c, t)| h.contrast_unchecked(Contrast::Loss, d.outcome(t), d.outcome(c)).unwrap_or(0.0))
            .sum::<f64>()
    } else {
        stats.n_losses
    };
    report = report.with_loss(loss_mass / total);
    if summary.degenerate {
        report.warnings.push("no losses observed: win ratio is infinite".into());
    }
    report.win_stats = Some(stats);
    Ok(report)
}

/// Inverse-propensity-weighted nearest-neighbor estimator:
/// `(1/n) sum_{controls} mean_j w(Y_{sigma_j(i)} | Y_i) / (1 - pi(X_i))`.
pub fn estimate_ipw_nn(
    d: &Dataset,
    h: &HierarchySpec,
    pm: &PropensityModel,
    metric: &Metric,
    k: usize,
    seed: u64,
) -> Result<EstimateReport> {
    require_defined_ties(h)?;
    h.check_dimension(d.d())?;
    let emb = metric.embed(d)?;
    let nn = nearest_neighbors(d, &emb, Arm::Control, k, seed)?;
    let sums: Vec<(f64, f64)> = nn
        .iter()
        .map(|(c, ts)| {
            ts.iter().fold((0.0, 0.0), |acc, &t| {
                let (yt, yc) = (d.outcome(t), d.outcome(*c));
                (
                    acc.0 + h.contrast_unchecked(Contrast::Win, yt, yc).unwrap_or(0.0),
                    acc.1 + h.contrast_unchecked(Contrast::Loss, yt, yc).unwrap_or(0.0),
                )
            })
        })
        .collect();
    let n = d.n() as f64;
    let kf = k as f64;
    let exact = pm.exact_constant().and_then(|(n1, nn_total)| {
        let denom = kf * n * (nn_total - n1) as f64;
        (denom < 9.0e15 && nn_total > n1).then_some((nn_total as f64, denom))
    });
    let (tau, tau_loss) = match exact {
        // Constant propensity n1'/n': one correctly rounded division of exact
        // integers, so n1'/n' = n1/n reproduces the unweighted mean bit for bit.
        Some((scale, denom)) => {
            let s: f64 = sums.iter().map(|v| v.0).sum();
            let l: f64 = sums.iter().map(|v| v.1).sum();
            (s * scale / denom, l * scale / denom)
        }
        None => {
            let mut acc = (0.0, 0.0);
            for ((c, _), (s, l)) in nn.iter().zip(&sums) {
                let w = 1.0 / (1.0 - pm.predict(d.features(*c))?);
                acc.0 += s / kf * w;
                acc.1 += l / kf * w;
            }
            (acc.0 / n, acc.1 / n)
        }
    };
    let mut meta = base_meta(d);
    meta.pairing = Some("knn".into());
    meta.propensity = Some(propensity_name(pm).into());
    meta.k = Some(k);
    meta.seed = Some(seed);
    meta.n_pairs = Some(nn.len() * k);
    let mut report = EstimateReport::from_tau("ipw_nn", Some(EstimandKind::TauStar), tau, meta).with_loss(tau_loss);
    report.warnings.extend(pm.warnings.iter().cloned());
    Ok(report)
}

/// Plug-in distributional regression estimator over the inference units:
/// controls contribute `q_1(X, Y)`, treated units `q_0(X, Y)`.
pub fn estimate_distreg(d: &Dataset, h: &HierarchySpec, m: &DistRegModel, split: &SampleSplit) -> Result<EstimateReport> {
    split.check(d.n())?;
    let terms: Vec<(f64, f64)> = split
        .inference
        .par_iter()
        .map(|&i| {
            let arm = d.arm(i).other();
            let (x, y) = (d.features(i), d.outcome(i));
            Ok((m.q(h, Contrast::Win, arm, x, y)?, m.q(h, Contrast::Loss, arm, x, y)?))
        })
        .collect::<Result<_>>()?;
    let size = terms.len() as f64;
    let tau = terms.iter().map(|v| v.0).sum::<f64>() / size;
    let tau_loss = terms.iter().map(|v| v.1).sum::<f64>() / size;
    let mut meta = base_meta(d);
    meta.distreg = Some(distreg_name(m).into());
    meta.n_inference = Some(split.inference.len());
    let mut report = EstimateReport::from_tau("distreg", Some(EstimandKind::TauStar), tau, meta).with_loss(tau_loss);
    report.warnings.extend(m.warnings().iter().cloned());
    Ok(report)
}

/// Doubly robust estimator on the inference units, with nearest-neighbor
/// maps control -> treated and treated -> control computed within them.
#[allow(clippy::too_many_arguments)]
pub fn estimate_aipw(
    d: &Dataset,
    h: &HierarchySpec,
    m: &DistRegModel,
    pm: &PropensityModel,
    split: &SampleSplit,
    cfg: &AipwConfig,
    metric: &Metric,
    k: usize,
    seed: u64,
) -> Result<EstimateReport> {
    require_defined_ties(h)?;
    split.check(d.n())?;
    AipwConfig::new(cfg.lambda)?;
    let sub = d.subset(&split.inference)?;
    sub.require_both_arms()?;
    h.check_dimension(sub.d())?;
    let emb = metric.embed(&sub)?;
    let mut matches: Vec<Vec<usize>> = vec![Vec::new(); sub.n()];
    for arm in [Arm::Control, Arm::Treated] {
        for (i, js) in nearest_neighbors(&sub, &emb, arm, k, seed)? {
            matches[i] = js;
        }
    }
    let lambda = cfg.lambda;
    let kf = k as f64;
    let terms: Vec<(f64, f64)> = (0..sub.n())
        .into_par_iter()
        .map(|i| {
            let (x, y) = (sub.features(i), sub.outcome(i));
            let pi = pm.predict(x)?;
            let mut out = [0.0; 2];
            for (slot, c) in [Contrast::Win, Contrast::Loss].into_iter().enumerate() {
                out[slot] = if sub.is_treated(i) {
                    let q0 = m.q(h, c, Arm::Control, x, y)?;
                    let wbar = matches[i]
                        .iter()
                        .map(|&j| h.contrast_unchecked(c, y, sub.outcome(j)).unwrap_or(0.0))
                        .sum::<f64>()
                        / kf;
                    q0 - (1.0 - lambda) * (q0 - wbar) / pi
                } else {
                    let q1 = m.q(h, c, Arm::Treated, x, y)?;
                    let wbar = matches[i]
                        .iter()
                        .map(|&j| h.contrast_unchecked(c, sub.outcome(j), y).unwrap_or(0.0))
                        .sum::<f64>()
                        / kf;
                    q1 - lambda * (q1 - wbar) / (1.0 - pi)
                };
            }
            Ok((out[0], out[1]))
        })
        .collect::<Result<_>>()?;
    let size = sub.n() as f64;
    let tau = terms.iter().map(|v| v.0).sum::<f64>() / size;
    let tau_loss = terms.iter().map(|v| v.1).sum::<f64>() / size;
    let mut meta = base_meta(d);
    meta.pairing = Some("knn".into());
    meta.propensity = Some(propensity_name(pm).into());
    meta.distreg = Some(distreg_name(m).into());
    meta.n_inference = Some(sub.n());
    meta.k = Some(k);
    meta.lambda = Some(lambda);
    meta.seed = Some(seed);
    let mut report = EstimateReport::from_tau("aipw", Some(EstimandKind::TauStar), tau, meta);
    if tau_loss >= 0.0 {
        report = report.with_loss(tau_loss);
    } else {
        report.tau_loss_hat = Some(tau_loss);
    }
    report.warnings.extend(pm.warnings.iter().cloned());
    report.warnings.extend(m.warnings().iter().cloned());
    Ok(report)
}

/// `E[w(Y(1) | Y(0)) | x] - E[w(Y(0) | Y(1)) | x]` from a fitted model; treat
/// when positive.
pub fn estimate_otr_delta(m: &DistRegModel, x: &[f64], h: &HierarchySpec) -> Result<f64> {
    m.conditional_contrast(h, x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Column, Direction};
    use crate::pairing::{complete_pairs, knn_pairs};

    fn example1() -> (Dataset, HierarchySpec) {
        let (y0, y1, y0p, y1p) = (1.0, 2.0, 3.0, 0.0);
        let cols = vec![Column::numeric("x", vec![0.0, 0.0, 0.0, 0.0, 1.0, 1.0])];
        let t = vec![1, 0, 1, 0, 1, 0];
        let y = vec![vec![y1], vec![y0], vec![y1], vec![y0], vec![y1p], vec![y0p]];
        let d = Dataset::new(cols, t, y).unwrap();
        let h = HierarchySpec::lexicographic(1, Direction::HigherBetter, TiePolicy::HalfWin).unwrap();
        (d, h)
    }

    #[test]
    fn example_one_complete_and_knn() {
        let (d, h) = example1();
        let c = estimate_traditional(&d, &complete_pairs(&d).unwrap(), &h).unwrap();
        assert_eq!(c.tau_hat, 4.0 / 9.0);
        assert_eq!(c.estimand, Some(EstimandKind::TauPop));
        let k = estimate_traditional(&d, &knn_pairs(&d, &Metric::euclidean(), 1, 0).unwrap(), &h).unwrap();
        assert_eq!(k.tau_hat, 2.0 / 3.0);
        assert_eq!(k.estimand, Some(EstimandKind::TauStar));
        assert!((k.wr_ratio_hat.unwrap() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn all_ties_are_neutral() {
        let x: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64]).collect();
        let d = Dataset::from_numeric(&x, vec![0, 1, 0, 1, 0, 1], vec![vec![1.0]; 6]).unwrap();
        let h = HierarchySpec::lexicographic(1, Direction::HigherBetter, TiePolicy::HalfWin).unwrap();
        let r = estimate_traditional(&d, &complete_pairs(&d).unwrap(), &h).unwrap();
        assert_eq!((r.tau_hat, r.wr_hat, r.nb_hat), (0.5, 1.0, 0.0));
    }

    #[test]
    fn two_tau_ratio() {
        assert_eq!(wr_from_two_taus(0.5, 0.5).unwrap(), 1.0);
        assert_eq!(wr_from_two_taus(0.6, 0.3).unwrap(), 2.0);
        assert_eq!(wr_from_two_taus(0.6, 0.0).unwrap(), f64::INFINITY);
        assert!(wr_from_two_taus(0.6, -0.1).is_err());
    }

    #[test]
    fn constant_propensity_reduces_to_nn_mean() {
        let (d, h) = example1();
        let pm = PropensityModel::treated_fraction(&d, (0.01, 0.99)).unwrap();
        let ipw = estimate_ipw_nn(&d, &h, &pm, &Metric::euclidean(), 1, 0).unwrap();
        let nn = estimate_traditional(&d, &knn_pairs(&d, &Metric::euclidean(), 1, 0).unwrap(), &h).unwrap();
        assert_eq!(ipw.tau_hat.to_bits(), nn.tau_hat.to_bits());
    }

    #[test]
    fn constant_distreg_gives_half() {
        let (d, h) = example1();
        let m = DistRegModel::plugin(|_, _, _, _| 0.5);
        let r = estimate_distreg(&d, &h, &m, &SampleSplit::all_inference(d.n())).unwrap();
        assert_eq!(r.tau_hat, 0.5);
        let single = SampleSplit {
            train: vec![],
            inference: vec![0],
            holdout: vec![],
        };
        let m = DistRegModel::plugin(|arm, _, _, _| if arm == Arm::Control { 0.3 } else { 0.9 });
        assert_eq!(estimate_distreg(&d, &h, &m, &single).unwrap().tau_hat, 0.3);
    }

    #[test]
    fn aipw_zero_residual_equals_regression() {
        // q equal to the matched win value for every unit: corrections vanish.
        let (d, h) = example1();
        // Men match within sex (treated 2 beats control 1); the woman's match loses (0 vs 3).
        let knn_w = |y: f64, arm: Arm| -> f64 {
            match arm {
                Arm::Treated => (y == 1.0) as u8 as f64,
                Arm::Control => (y == 2.0) as u8 as f64,
            }
        };
        let m = DistRegModel::plugin(move |arm, _, _, y| knn_w(y[0], arm));
        let pm = PropensityModel::constant(0.5, (0.01, 0.99)).unwrap();
        let split = SampleSplit::all_inference(d.n());
        let reg = estimate_distreg(&d, &h, &m, &split).unwrap();
        let aipw = estimate_aipw(&d, &h, &m, &pm, &split, &AipwConfig::new(0.5).unwrap(), &Metric::euclidean(), 1, 0)
            .unwrap();
        assert_eq!(aipw.tau_hat, reg.tau_hat);
    }

    #[test]
    fn drop_policy_rejected_for_weighted_estimators() {
        let (d, h) = example1();
        let h = h.with_tie_policy(TiePolicy::Drop);
        let pm = PropensityModel::constant(0.5, (0.01, 0.99)).unwrap();
        assert!(estimate_ipw_nn(&d, &h, &pm, &Metric::euclidean(), 1, 0).is_err());
    }
}
