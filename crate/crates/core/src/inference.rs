//! Confidence intervals: arm-stratified percentile bootstrap and the
//! count-based Gaussian interval for the win ratio.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{degenerate, invalid, Error, Result};
use crate::estimators::CiReport;
use crate::model::{Dataset, WinStats};
use crate::pairing::quantile_type7;
use crate::rng::{derive_seed, substream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CiMethod {
    BootstrapPercentile,
    GaussianCounts,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CiSpec {
    pub method: CiMethod,
    #[serde(default = "default_level")]
    pub level: f64,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_level() -> f64 {
    0.95
}

fn default_replicates() -> usize {
    1000
}

impl Default for CiSpec {
    fn default() -> Self {
        CiSpec {
            method: CiMethod::BootstrapPercentile,
            level: default_level(),
            replicates: default_replicates(),
            seed: 0,
        }
    }
}

impl CiSpec {
    pub fn check(&self) -> Result<()> {
        if !(self.level > 0.0 && self.level < 1.0) {
            return invalid(format!("confidence level must lie in (0, 1), got {}", self.level));
        }
        if self.method == CiMethod::BootstrapPercentile && self.replicates < 100 {
            return invalid(format!("percentile bootstrap needs at least 100 replicates, got {}", self.replicates));
        }
        Ok(())
    }
}

/// Percentile interval and the replicate estimates behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapResult {
    pub lo: f64,
    pub hi: f64,
    /// In replicate order.
    pub estimates: Vec<f64>,
    /// Resamples discarded because the estimator reported a degenerate input.
    pub redraws: usize,
}

/// Resample units with replacement within each arm, `spec.replicates` times,
/// and take type-7 percentiles of the estimates. The estimator receives the
/// resample and a seed derived from the replicate index. Resamples on which
/// it fails with a degenerate-input error are redrawn, at most `10 * B`
/// times in total.
pub fn bootstrap_ci<F>(estimator: F, d: &Dataset, spec: &CiSpec) -> Result<BootstrapResult>
where
    F: Fn(&Dataset, u64) -> Result<f64> + Sync,
{
    spec.check()?;
    if spec.method != CiMethod::BootstrapPercentile {
        return invalid("bootstrap_ci needs method bootstrap_percentile");
    }
    d.require_both_arms()?;
    let controls = d.control_indices();
    let treated = d.treated_indices();
    let b = spec.replicates;
    let budget = 10 * b;
    let outcomes: Vec<(f64, usize)> = (0..b)
        .into_par_iter()
        .map(|r| {
            let mut attempt = 0usize;
            loop {
                let mut rng = substream(spec.seed, &[r as u64, attempt as u64]);
                let mut rows = Vec::with_capacity(d.n());
                rows.extend((0..controls.len()).map(|_| controls[rng.random_range(0..controls.len())]));
                rows.extend((0..treated.len()).map(|_| treated[rng.random_range(0..treated.len())]));
                let sample = d.subset(&rows)?;
                match estimator(&sample, derive_seed(spec.seed, &[r as u64, attempt as u64, 1])) {
                    Ok(v) => return Ok((v, attempt)),
                    Err(Error::Degenerate(msg)) => {
                        attempt += 1;
                        if attempt > budget {
                            return degenerate(format!("bootstrap redraw budget exhausted: {msg}"));
                        }
                    }
                    Err(e) => return Err(e),
                }
            }
        })
        .collect::<Result<_>>()?;
    let redraws: usize = outcomes.iter().map(|o| o.1).sum();
    if redraws > budget {
        return degenerate(format!("bootstrap needed {redraws} redraws, more than 10 x {b}"));
    }
    let estimates: Vec<f64> = outcomes.iter().map(|o| o.0).collect();
    if estimates.iter().any(|v| v.is_nan()) {
        return Err(Error::Numerical("estimator returned NaN on a bootstrap resample".into()));
    }
    let mut sorted = estimates.clone();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let alpha = (1.0 - spec.level) / 2.0;
    Ok(BootstrapResult {
        lo: percentile(&sorted, alpha),
        hi: percentile(&sorted, 1.0 - alpha),
        estimates,
        redraws,
    })
}

fn percentile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let h = (n - 1) as f64 * p;
    let (lo, hi) = (h.floor() as usize, (h.ceil() as usize).min(n - 1));
    if sorted[lo] == sorted[hi] {
        sorted[lo]
    } else {
        quantile_type7(sorted, p)
    }
}

/// Two-sided standard normal quantile for `level`.
pub fn z_for_level(level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return invalid(format!("confidence level must lie in (0, 1), got {level}"));
    }
    let normal = Normal::standard();
    Ok(normal.inverse_cdf(1.0 - (1.0 - level) / 2.0))
}

/// Count-based interval for `W / L`:
/// `((W - z sqrt W) / (L + z sqrt L), (W + z sqrt W) / (L - z sqrt L))`,
/// with `+inf` as the upper end once `L - z sqrt L <= 0`.
pub fn gaussian_wr_ci(s: &WinStats, level: f64) -> Result<(f64, f64)> {
    gaussian_wr_ci_z(s, z_for_level(level)?)
}

pub fn gaussian_wr_ci_z(s: &WinStats, z: f64) -> Result<(f64, f64)> {
    if s.n_wins.fract() != 0.0 || s.n_losses.fract() != 0.0 {
        return invalid(
            "Gaussian win-ratio interval needs integer win/loss counts (tie policy loss or drop); \
             use the bootstrap with half-win ties",
        );
    }
    if !(z >= 0.0) {
        return invalid("z must be non-negative");
    }
    let (w, l) = (s.n_wins, s.n_losses);
    if l == 0.0 {
        return degenerate("no losses: the win-ratio interval is undefined");
    }
    let lo = ((w - z * w.sqrt()) / (l + z * l.sqrt())).max(0.0);
    let den = l - z * l.sqrt();
    let hi = if den <= 0.0 {
        f64::INFINITY
    } else {
        (w + z * w.sqrt()) / den
    };
    Ok((lo, hi))
}

/// Images of a win-proportion interval on the win-ratio and net-benefit
/// scales.
pub fn transform_ci(lo: f64, hi: f64) -> Result<((f64, f64), (f64, f64))> {
    if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
        return invalid(format!("win-proportion interval must satisfy 0 <= lo <= hi <= 1, got ({lo}, {hi})"));
    }
    let wr = |t: f64| if t >= 1.0 { f64::INFINITY } else { t / (1.0 - t) };
    Ok(((wr(lo), wr(hi)), (2.0 * lo - 1.0, 2.0 * hi - 1.0)))
}

/// Report entry for a win-proportion interval. Endpoints outside `[0, 1]`
/// (possible for weighted estimators) are clamped before transforming.
pub fn ci_report_from_tau(lo: f64, hi: f64, spec: &CiSpec) -> Result<CiReport> {
    let (wr, nb) = transform_ci(lo.clamp(0.0, 1.0), hi.clamp(0.0, 1.0))?;
    Ok(CiReport {
        method: "bootstrap_percentile".into(),
        level: spec.level,
        lo,
        hi,
        wr,
        nb,
        replicates: Some(spec.replicates),
        seed: Some(spec.seed),
    })
}

/// Report entry for a count-based win-ratio interval, mapped back to the
/// win-proportion scale by `wr / (1 + wr)`.
pub fn ci_report_from_wr(wr_lo: f64, wr_hi: f64, level: f64) -> CiReport {
    let tau = |r: f64| if r.is_infinite() { 1.0 } else { r / (1.0 + r) };
    let (lo, hi) = (tau(wr_lo), tau(wr_hi));
    CiReport {
        method: "gaussian_counts".into(),
        level,
        lo,
        hi,
        wr: (wr_lo, wr_hi),
        nb: (2.0 * lo - 1.0, 2.0 * hi - 1.0),
        replicates: None,
        seed: None,
    }
}
