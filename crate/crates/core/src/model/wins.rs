use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Dataset, HierarchySpec};
use crate::error::{degenerate, invalid, Result};

/// How a pair set was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Complete,
    Stratified,
    Knn,
    OptimalMatch,
}

#[derive(Debug, Clone, PartialEq)]
enum Storage {
    /// Cartesian product, enumerated control-major.
    Product { controls: Vec<u32>, treated: Vec<u32> },
    Explicit(Vec<(u32, u32)>),
}

/// Ordered `(control, treated)` index pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct PairSet {
    storage: Storage,
    provenance: Provenance,
}

impl PairSet {
    /// Build and validate an explicit pair list against `d`.
    pub fn new(d: &Dataset, pairs: Vec<(usize, usize)>, provenance: Provenance) -> Result<Self> {
        for &(c, t) in &pairs {
            if c >= d.n() || t >= d.n() {
                return invalid(format!("pair ({c}, {t}) out of range for n = {}", d.n()));
            }
            if d.is_treated(c) || !d.is_treated(t) {
                return invalid(format!("pair ({c}, {t}) is not a (control, treated) pair"));
            }
        }
        let set = PairSet::explicit(pairs, provenance);
        if provenance == Provenance::Complete && set.len() != d.n_control() * d.n_treated() {
            return invalid("complete pair set must contain every (control, treated) pair");
        }
        if provenance == Provenance::OptimalMatch {
            let mut cs: Vec<usize> = set.iter().map(|p| p.0).collect();
            let mut ts: Vec<usize> = set.iter().map(|p| p.1).collect();
            cs.sort_unstable();
            ts.sort_unstable();
            if cs.windows(2).any(|w| w[0] == w[1]) || ts.windows(2).any(|w| w[0] == w[1]) {
                return invalid("optimal matching pairs must be injective");
            }
        }
        Ok(set)
    }

    pub(crate) fn explicit(pairs: Vec<(usize, usize)>, provenance: Provenance) -> Self {
        PairSet {
            storage: Storage::Explicit(pairs.into_iter().map(|(c, t)| (c as u32, t as u32)).collect()),
            provenance,
        }
    }

    pub(crate) fn product(controls: &[usize], treated: &[usize]) -> Self {
        PairSet {
            storage: Storage::Product {
                controls: controls.iter().map(|&i| i as u32).collect(),
                treated: treated.iter().map(|&i| i as u32).collect(),
            },
            provenance: Provenance::Complete,
        }
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn len(&self) -> usize {
        match &self.storage {
            Storage::Product { controls, treated } => controls.len() * treated.len(),
            Storage::Explicit(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Pairs in their canonical order.
    pub fn iter(&self) -> Box<dyn Iterator<Item = (usize, usize)> + '_> {
        match &self.storage {
            Storage::Product { controls, treated } => Box::new(
                controls
                    .iter()
                    .flat_map(move |&c| treated.iter().map(move |&t| (c as usize, t as usize))),
            ),
            Storage::Explicit(v) => Box::new(v.iter().map(|&(c, t)| (c as usize, t as usize))),
        }
    }

    pub fn to_vec(&self) -> Vec<(usize, usize)> {
        self.iter().collect()
    }
}

/// Win/loss tallies over a pair set.
///
/// `n_pairs` counts the pairs that were scored; pairs dropped under
/// [`super::TiePolicy::Drop`] are only counted in `n_dropped`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WinStats {
    pub n_wins: f64,
    pub n_losses: f64,
    pub n_dropped: usize,
    pub n_pairs: usize,
}

impl WinStats {
    /// Win proportion as a reduced fraction, exact for half-integer tallies.
    pub fn exact_proportion(&self) -> Option<(u64, u64)> {
        let num2 = self.n_wins * 2.0;
        let den2 = (self.n_wins + self.n_losses) * 2.0;
        if num2.fract() != 0.0 || den2.fract() != 0.0 || den2 == 0.0 {
            return None;
        }
        let (a, b) = (num2 as u64, den2 as u64);
        let g = gcd(a, b);
        Some((a / g, b / g))
    }
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a.max(1)
}

/// Win proportion, win ratio and net benefit of a tally.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WinSummary {
    pub p_w: f64,
    /// `+inf` when there are no losses.
    pub wr: f64,
    pub nb: f64,
    /// Set when `wr` is the infinite sentinel.
    pub degenerate: bool,
}

/// Tally `w(Y_treated | Y_control)` over `pairs`.
pub fn win_stats(d: &Dataset, pairs: &PairSet, h: &HierarchySpec) -> Result<WinStats> {
    if pairs.is_empty() {
        return degenerate("pair set is empty");
    }
    h.check_dimension(d.d())?;
    let policy = h.tie_policy();
    let score = |c: usize, t: usize| h.compare_unchecked(d.outcome(t), d.outcome(c)).numeric(policy);
    // Tallies are sums of halves, exact in f64, so the reduction order is irrelevant.
    let (wins, dropped) = match &pairs.storage {
        Storage::Product { controls, treated } => controls
            .par_iter()
            .map(|&c| {
                let mut acc = (0.0, 0usize);
                for &t in treated {
                    match score(c as usize, t as usize) {
                        Some(v) => acc.0 += v,
                        None => acc.1 += 1,
                    }
                }
                acc
            })
            .reduce(|| (0.0, 0), |a, b| (a.0 + b.0, a.1 + b.1)),
        Storage::Explicit(v) => v
            .par_chunks(4096)
            .map(|chunk| {
                let mut acc = (0.0, 0usize);
                for &(c, t) in chunk {
                    match score(c as usize, t as usize) {
                        Some(v) => acc.0 += v,
                        None => acc.1 += 1,
                    }
                }
                acc
            })
            .reduce(|| (0.0, 0), |a, b| (a.0 + b.0, a.1 + b.1)),
    };
    let n_pairs = pairs.len() - dropped;
    Ok(WinStats {
        n_wins: wins,
        n_losses: n_pairs as f64 - wins,
        n_dropped: dropped,
        n_pairs,
    })
}

pub fn summary_from_stats(s: &WinStats) -> Result<WinSummary> {
    let total = s.n_wins + s.n_losses;
    if !(total > 0.0) {
        return degenerate("no scored pairs: win proportion undefined");
    }
    let p_w = s.n_wins / total;
    let (wr, degenerate) = if s.n_losses > 0.0 {
        (s.n_wins / s.n_losses, false)
    } else {
        (f64::INFINITY, true)
    };
    Ok(WinSummary {
        p_w,
        wr,
        nb: (s.n_wins - s.n_losses) / total,
        degenerate,
    })
}
