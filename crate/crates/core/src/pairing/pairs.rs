use std::collections::HashMap;
use std::fmt::Debug;
use std::hash::Hash;

use rand::Rng;
use rayon::prelude::*;

use super::assignment::min_cost_assignment;
use super::metric::{Embedding, Metric};
use crate::error::{degenerate, invalid, Result};
use crate::model::{Arm, ColumnData, Dataset, PairSet, Provenance};
use crate::rng::substream;

/// Every `(control, treated)` pair, control-major.
pub fn complete_pairs(d: &Dataset) -> Result<PairSet> {
    d.require_both_arms()?;
    Ok(PairSet::product(&d.control_indices(), &d.treated_indices()))
}

/// For each unit of arm `from`, its `k` nearest units of the other arm.
///
/// Exact distance ties at the k-th position are broken uniformly at random
/// from a generator keyed by `(seed, from arm, unit index)`, so the result
/// does not depend on scheduling. Returns one list per unit of `from`, in
/// index order.
pub fn nearest_neighbors(
    d: &Dataset,
    emb: &Embedding,
    from: Arm,
    k: usize,
    seed: u64,
) -> Result<Vec<(usize, Vec<usize>)>> {
    d.require_both_arms()?;
    let sources = d.indices_of(from);
    let targets = d.indices_of(from.other());
    if k == 0 {
        return invalid("k must be at least 1");
    }
    if k > targets.len() {
        return invalid(format!(
            "k = {k} exceeds the {} units available in the matched arm",
            targets.len()
        ));
    }
    let tag = from.flag() as u64;
    Ok(sources
        .par_iter()
        .map(|&i| {
            let dists: Vec<f64> = targets.iter().map(|&j| emb.dist2(i, j)).collect();
            let chosen = select_k(&dists, k, || substream(seed, &[tag, i as u64]));
            (i, chosen.into_iter().map(|p| targets[p]).collect())
        })
        .collect())
}

/// Positions of the `k` smallest distances; ties at the boundary are sampled
/// uniformly without replacement.
fn select_k<R: Rng, F: FnOnce() -> R>(dists: &[f64], k: usize, make_rng: F) -> Vec<usize> {
    let kth = if k == 1 {
        dists.iter().copied().fold(f64::INFINITY, f64::min)
    } else {
        let mut sorted = dists.to_vec();
        sorted.select_nth_unstable_by(k - 1, |a, b| a.total_cmp(b));
        sorted[k - 1]
    };
    let mut below: Vec<usize> = (0..dists.len()).filter(|&p| dists[p] < kth).collect();
    below.sort_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(a.cmp(&b)));
    let mut boundary: Vec<usize> = (0..dists.len()).filter(|&p| dists[p] == kth).collect();
    let need = k - below.len();
    if boundary.len() > need {
        let mut rng = make_rng();
        for s in 0..need {
            let r = rng.random_range(s..boundary.len());
            boundary.swap(s, r);
        }
    }
    below.extend_from_slice(&boundary[..need]);
    below
}

/// Each control paired with its `k` nearest treated units (with replacement).
pub fn knn_pairs(d: &Dataset, metric: &Metric, k: usize, seed: u64) -> Result<PairSet> {
    let emb = metric.embed(d)?;
    knn_pairs_embedded(d, &emb, k, seed)
}

pub(crate) fn knn_pairs_embedded(d: &Dataset, emb: &Embedding, k: usize, seed: u64) -> Result<PairSet> {
    let nn = nearest_neighbors(d, emb, Arm::Control, k, seed)?;
    let pairs = nn
        .into_iter()
        .flat_map(|(c, ts)| ts.into_iter().map(move |t| (c, t)))
        .collect();
    Ok(PairSet::explicit(pairs, Provenance::Knn))
}

/// Pairs restricted to units sharing a stratum label.
#[derive(Debug, Clone)]
pub struct StratifiedPairs<L> {
    pub pairs: PairSet,
    /// Strata (in order of first appearance) lacking one of the arms.
    pub degenerate_strata: Vec<L>,
}

/// Union over strata of (controls in stratum) x (treated in stratum),
/// enumerated control-major.
pub fn stratified_pairs<L>(d: &Dataset, labels: &[L]) -> Result<StratifiedPairs<L>>
where
    L: Eq + Hash + Clone + Debug,
{
    if labels.len() != d.n() {
        return invalid(format!("{} stratum labels for {} units", labels.len(), d.n()));
    }
    let mut order: Vec<L> = Vec::new();
    let mut treated_by: HashMap<&L, Vec<usize>> = HashMap::new();
    let mut has_control: HashMap<&L, bool> = HashMap::new();
    for (i, l) in labels.iter().enumerate() {
        if !treated_by.contains_key(l) {
            order.push(l.clone());
            treated_by.insert(l, Vec::new());
            has_control.insert(l, false);
        }
        if d.is_treated(i) {
            treated_by.get_mut(l).unwrap().push(i);
        } else {
            has_control.insert(l, true);
        }
    }
    let degenerate_strata: Vec<L> = order
        .iter()
        .filter(|l| treated_by[l].is_empty() || !has_control[l])
        .cloned()
        .collect();
    let mut pairs = Vec::new();
    for (i, l) in labels.iter().enumerate() {
        if !d.is_treated(i) {
            pairs.extend(treated_by[l].iter().map(|&t| (i, t)));
        }
    }
    if pairs.is_empty() {
        return degenerate("no stratum contains both treated and control units");
    }
    Ok(StratifiedPairs {
        pairs: PairSet::explicit(pairs, Provenance::Stratified),
        degenerate_strata,
    })
}

/// Stratum labels from quantile bins of a numeric covariate.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileStrata {
    pub labels: Vec<usize>,
    pub cutpoints: Vec<f64>,
    pub warnings: Vec<String>,
}

/// Label each unit by the number of `q`-quantile cutpoints (type-7
/// interpolation) its value strictly exceeds; `q = 2` is a median split.
pub fn quantile_strata(d: &Dataset, column: &str, q: usize) -> Result<QuantileStrata> {
    if q < 2 {
        return invalid(format!("q must be at least 2, got {q}"));
    }
    let col = d.column(column)?;
    let ColumnData::Numeric(values) = &col.data else {
        return invalid(format!("column '{column}' is not numeric"));
    };
    let mut sorted = values.clone();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let cutpoints: Vec<f64> = (1..q).map(|k| quantile_type7(&sorted, k as f64 / q as f64)).collect();
    let labels: Vec<usize> = values
        .iter()
        .map(|&v| cutpoints.iter().filter(|&&c| v > c).count())
        .collect();
    let mut warnings = Vec::new();
    if sorted.first() == sorted.last() {
        warnings.push(format!("column '{column}' is constant: single stratum"));
    }
    Ok(QuantileStrata {
        labels,
        cutpoints,
        warnings,
    })
}

/// Type-7 (linear interpolation) quantile of sorted data.
pub fn quantile_type7(sorted: &[f64], prob: f64) -> f64 {
    let n = sorted.len();
    if n == 0 {
        return f64::NAN;
    }
    let h = (n - 1) as f64 * prob.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Injective matching of the smaller arm into the larger one minimizing the
/// total squared metric distance.
pub fn optimal_match_pairs(d: &Dataset, metric: &Metric) -> Result<PairSet> {
    d.require_both_arms()?;
    let emb = metric.embed(d)?;
    let controls = d.control_indices();
    let treated = d.treated_indices();
    let controls_smaller = controls.len() <= treated.len();
    let (rows, cols) = if controls_smaller {
        (&controls, &treated)
    } else {
        (&treated, &controls)
    };
    let m = cols.len();
    let mut cost = vec![0.0; rows.len() * m];
    cost.par_chunks_mut(m).zip(rows.par_iter()).for_each(|(out, &r)| {
        for (o, &c) in out.iter_mut().zip(cols.iter()) {
            *o = emb.dist2(r, c);
        }
    });
    let assignment = min_cost_assignment(&cost, rows.len(), m)?;
    let pairs = rows
        .iter()
        .zip(assignment)
        .map(|(&r, a)| if controls_smaller { (r, cols[a]) } else { (cols[a], r) })
        .collect();
    Ok(PairSet::explicit(pairs, Provenance::OptimalMatch))
}

/// Total squared metric distance over a pair set.
pub fn pair_cost(d: &Dataset, metric: &Metric, pairs: &PairSet) -> Result<f64> {
    let emb = metric.embed(d)?;
    Ok(pairs.iter().map(|(c, t)| emb.dist2(c, t)).sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Column;

    fn line_data() -> Dataset {
        // controls at 0, 1.1, 2.2, 5, 9; treated at 1, 4, 8
        let x = [0.0, 1.1, 2.2, 5.0, 9.0, 1.0, 4.0, 8.0];
        let t = vec![0, 0, 0, 0, 0, 1, 1, 1];
        let rows: Vec<Vec<f64>> = x.iter().map(|&v| vec![v]).collect();
        Dataset::from_numeric(&rows, t, vec![vec![0.0]; 8]).unwrap()
    }

    #[test]
    fn complete_pair_counts() {
        let d = line_data();
        let p = complete_pairs(&d).unwrap();
        assert_eq!(p.len(), 15);
        assert_eq!(p.iter().next(), Some((0, 5)));
        let one = Dataset::from_numeric(&[vec![0.0], vec![1.0]], vec![0, 1], vec![vec![0.0]; 2]).unwrap();
        assert_eq!(complete_pairs(&one).unwrap().len(), 1);
        let none = Dataset::from_numeric(&[vec![0.0], vec![1.0]], vec![1, 1], vec![vec![0.0]; 2]).unwrap();
        assert!(complete_pairs(&none).is_err());
    }

    #[test]
    fn knn_matches_exhaustive_scan() {
        let d = line_data();
        let pairs = knn_pairs(&d, &Metric::euclidean(), 1, 0).unwrap().to_vec();
        // Oracle: nearest treated by direct scan on the raw values.
        let treated = d.treated_indices();
        for &(c, t) in &pairs {
            let xc = d.features(c)[0];
            let best = treated
                .iter()
                .map(|&j| (d.features(j)[0] - xc).abs())
                .fold(f64::INFINITY, f64::min);
            assert_eq!((d.features(t)[0] - xc).abs(), best);
        }
        assert_eq!(pairs.len(), 5);
        assert_eq!(pairs, vec![(0, 5), (1, 5), (2, 5), (3, 6), (4, 7)]);
    }

    #[test]
    fn knn_k_too_large() {
        let d = line_data();
        assert!(knn_pairs(&d, &Metric::euclidean(), 4, 0).is_err());
        assert!(knn_pairs(&d, &Metric::euclidean(), 0, 0).is_err());
        assert_eq!(knn_pairs(&d, &Metric::euclidean(), 3, 0).unwrap().len(), 15);
    }

    #[test]
    fn total_ties_are_reproducible_and_spread() {
        let n = 200;
        let x = vec![vec![1.0]; n];
        let t = (0..n).map(|i| (i % 2) as u8).collect();
        let d = Dataset::from_numeric(&x, t, vec![vec![0.0]; n]).unwrap();
        let a = knn_pairs(&d, &Metric::euclidean(), 1, 42).unwrap().to_vec();
        let b = knn_pairs(&d, &Metric::euclidean(), 1, 42).unwrap().to_vec();
        let c = knn_pairs(&d, &Metric::euclidean(), 1, 43).unwrap().to_vec();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let mut used: Vec<usize> = a.iter().map(|p| p.1).collect();
        used.sort_unstable();
        used.dedup();
        assert!(used.len() > 40, "uniform tie-breaking should spread matches, got {}", used.len());
    }

    #[test]
    fn select_k_breaks_boundary_ties_only() {
        use rand::SeedableRng;
        let dists = [3.0, 1.0, 2.0, 2.0, 2.0, 0.5];
        for s in 0..20 {
            let got = select_k(&dists, 3, || rand_chacha::ChaCha8Rng::seed_from_u64(s));
            assert_eq!(&got[..2], &[5, 1]);
            assert!([2, 3, 4].contains(&got[2]));
        }
    }

    #[test]
    fn stratified_by_label() {
        let d = line_data();
        let labels = vec![0, 0, 1, 1, 2, 0, 1, 3];
        let s = stratified_pairs(&d, &labels).unwrap();
        assert_eq!(s.pairs.to_vec(), vec![(0, 5), (1, 5), (2, 6), (3, 6)]);
        assert_eq!(s.degenerate_strata, vec![2, 3]);

        let one = stratified_pairs(&d, &vec!["all"; 8]).unwrap();
        assert_eq!(one.pairs.to_vec(), complete_pairs(&d).unwrap().to_vec());

        let bad = stratified_pairs(&d, &[0, 0, 0, 0, 0, 1, 1, 1]);
        assert!(bad.is_err());
    }

    #[test]
    fn quantile_bins() {
        let cols = vec![Column::numeric("v", vec![1.0, 2.0, 3.0, 4.0])];
        let d = Dataset::new(cols, vec![0, 1, 0, 1], vec![vec![0.0]; 4]).unwrap();
        assert_eq!(quantile_strata(&d, "v", 2).unwrap().labels, vec![0, 0, 1, 1]);

        let cols = vec![Column::numeric("v", vec![7.0; 4])];
        let d = Dataset::new(cols, vec![0, 1, 0, 1], vec![vec![0.0]; 4]).unwrap();
        let s = quantile_strata(&d, "v", 3).unwrap();
        assert_eq!(s.labels, vec![0; 4]);
        assert_eq!(s.warnings.len(), 1);
        assert!(quantile_strata(&d, "v", 1).is_err());
        assert!(quantile_strata(&d, "nope", 2).is_err());
    }

    #[test]
    fn quantile_bins_match_rank_oracle() {
        let vals = vec![0.3, -1.0, 5.5, 2.0, 9.1, 4.4, -3.3, 1.2];
        let cols = vec![Column::numeric("v", vals.clone())];
        let d = Dataset::new(cols, vec![0, 1, 0, 1, 0, 1, 0, 1], vec![vec![0.0]; 8]).unwrap();
        let got = quantile_strata(&d, "v", 4).unwrap().labels;
        // Rank oracle: floor(rank * q / n) for distinct values.
        for (i, v) in vals.iter().enumerate() {
            let rank = vals.iter().filter(|&&w| w < *v).count();
            assert_eq!(got[i], rank * 4 / 8);
        }
    }

    #[test]
    fn optimal_single_treated_takes_nearest() {
        let rows = vec![vec![0.0], vec![3.0], vec![10.0], vec![2.6]];
        let d = Dataset::from_numeric(&rows, vec![0, 0, 0, 1], vec![vec![0.0]; 4]).unwrap();
        let p = optimal_match_pairs(&d, &Metric::euclidean()).unwrap();
        assert_eq!(p.to_vec(), vec![(1, 3)]);
    }
}
