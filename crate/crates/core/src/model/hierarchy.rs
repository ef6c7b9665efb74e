//! Outcome hierarchies and the lexicographic win function.
//!
//! Convention: `w(first | second)` is the favorability of `first` over
//! `second`. Pair estimators always evaluate `w(Y_treated | Y_control)`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Orientation of one outcome level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    HigherBetter,
    LowerBetter,
}

/// How a tie on every level is scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TiePolicy {
    /// Ties count as half a win.
    HalfWin,
    /// Ties count as losses (`w = 0`).
    Loss,
    /// Tied pairs are discarded from both numerator and denominator.
    Drop,
}

/// One prioritized level of the hierarchy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Level {
    pub outcome: usize,
    pub direction: Direction,
    /// Absolute difference at or below which two values are considered equal.
    #[serde(default)]
    pub tolerance: f64,
}

impl Level {
    pub fn new(outcome: usize, direction: Direction) -> Self {
        Level {
            outcome,
            direction,
            tolerance: 0.0,
        }
    }

    pub fn with_tolerance(mut self, tolerance: f64) -> Self {
        self.tolerance = tolerance;
        self
    }

    /// Compare `a` against `b` on this level alone.
    #[inline]
    pub fn compare_values(&self, a: f64, b: f64) -> WinValue {
        let diff = a - b;
        if diff.abs() <= self.tolerance {
            return WinValue::Tie;
        }
        let a_better = match self.direction {
            Direction::HigherBetter => diff > 0.0,
            Direction::LowerBetter => diff < 0.0,
        };
        if a_better {
            WinValue::Win
        } else {
            WinValue::Loss
        }
    }
}

/// Outcome of comparing two outcome vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum WinValue {
    Win,
    Tie,
    Loss,
}

impl WinValue {
    /// Numeric value of the win function; `None` means the pair is dropped.
    #[inline]
    pub fn numeric(self, policy: TiePolicy) -> Option<f64> {
        match (self, policy) {
            (WinValue::Win, _) => Some(1.0),
            (WinValue::Loss, _) => Some(0.0),
            (WinValue::Tie, TiePolicy::HalfWin) => Some(0.5),
            (WinValue::Tie, TiePolicy::Loss) => Some(0.0),
            (WinValue::Tie, TiePolicy::Drop) => None,
        }
    }

    /// The value seen from the other side of the comparison.
    pub fn reversed(self) -> WinValue {
        match self {
            WinValue::Win => WinValue::Loss,
            WinValue::Loss => WinValue::Win,
            WinValue::Tie => WinValue::Tie,
        }
    }
}

/// Which side of the comparison is being scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Contrast {
    /// `w(y | y')` as declared.
    #[default]
    Win,
    /// `w_loss(y | y') = w_win(y' | y)`.
    Loss,
}

/// Declarative prioritized outcome hierarchy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierarchySpec {
    levels: Vec<Level>,
    tie_policy: TiePolicy,
}

impl HierarchySpec {
    pub fn new(levels: Vec<Level>, tie_policy: TiePolicy) -> Result<Self> {
        let spec = HierarchySpec { levels, tie_policy };
        spec.check()?;
        Ok(spec)
    }

    /// All `d` coordinates in order with a common direction.
    pub fn lexicographic(d: usize, direction: Direction, tie_policy: TiePolicy) -> Result<Self> {
        Self::new((0..d).map(|k| Level::new(k, direction)).collect(), tie_policy)
    }

    /// Re-validate, e.g. after deserialization.
    pub fn check(&self) -> Result<()> {
        if self.levels.is_empty() {
            return invalid("hierarchy must have at least one level");
        }
        let mut seen = std::collections::HashSet::new();
        for level in &self.levels {
            if !seen.insert(level.outcome) {
                return invalid(format!(
                    "outcome index {} appears twice in the hierarchy",
                    level.outcome
                ));
            }
            if !(level.tolerance >= 0.0) || !level.tolerance.is_finite() {
                return invalid(format!(
                    "tolerance for outcome {} must be finite and non-negative",
                    level.outcome
                ));
            }
        }
        Ok(())
    }

    pub fn levels(&self) -> &[Level] {
        &self.levels
    }

    pub fn tie_policy(&self) -> TiePolicy {
        self.tie_policy
    }

    pub fn with_tie_policy(&self, tie_policy: TiePolicy) -> Self {
        HierarchySpec {
            levels: self.levels.clone(),
            tie_policy,
        }
    }

    /// Smallest outcome dimension this hierarchy can be evaluated on.
    pub fn min_dimension(&self) -> usize {
        self.levels.iter().map(|l| l.outcome).max().map_or(0, |m| m + 1)
    }

    pub fn check_dimension(&self, d: usize) -> Result<()> {
        if d < self.min_dimension() {
            return invalid(format!(
                "outcome dimension {d} does not cover hierarchy index {}",
                self.min_dimension() - 1
            ));
        }
        Ok(())
    }

    /// Lexicographic comparison without dimension checks.
    #[inline]
    pub fn compare_unchecked(&self, y: &[f64], y2: &[f64]) -> WinValue {
        for level in &self.levels {
            match level.compare_values(y[level.outcome], y2[level.outcome]) {
                WinValue::Tie => continue,
                decided => return decided,
            }
        }
        WinValue::Tie
    }

    /// Win function value `w(y | y2)`; `None` for a dropped tie.
    #[inline]
    pub fn win_unchecked(&self, y: &[f64], y2: &[f64]) -> Option<f64> {
        self.compare_unchecked(y, y2).numeric(self.tie_policy)
    }

    /// Win function under a contrast; the loss contrast swaps arguments.
    #[inline]
    pub fn contrast_unchecked(&self, contrast: Contrast, y: &[f64], y2: &[f64]) -> Option<f64> {
        match contrast {
            Contrast::Win => self.win_unchecked(y, y2),
            Contrast::Loss => self.win_unchecked(y2, y),
        }
    }
}

/// Compare two outcome vectors under a hierarchy.
pub fn compare(h: &HierarchySpec, y: &[f64], y2: &[f64]) -> Result<WinValue> {
    if y.len() != y2.len() {
        return invalid(format!(
            "outcome vectors have different dimensions ({} vs {})",
            y.len(),
            y2.len()
        ));
    }
    h.check_dimension(y.len())?;
    Ok(h.compare_unchecked(y, y2))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lower2() -> HierarchySpec {
        HierarchySpec::lexicographic(2, Direction::LowerBetter, TiePolicy::HalfWin).unwrap()
    }

    #[test]
    fn first_level_dominates() {
        assert_eq!(compare(&lower2(), &[0.0, 3.0], &[1.0, 0.0]).unwrap(), WinValue::Win);
    }

    #[test]
    fn identical_vectors_tie() {
        assert_eq!(compare(&lower2(), &[1.0, 1.0], &[1.0, 1.0]).unwrap(), WinValue::Tie);
    }

    #[test]
    fn second_level_breaks_first_level_tie() {
        assert_eq!(compare(&lower2(), &[1.0, 2.0], &[1.0, 5.0]).unwrap(), WinValue::Win);
    }

    // Brute force over a small grid: the result must equal the first-difference
    // rule computed independently.
    #[test]
    fn matches_first_difference_rule_on_grid() {
        let h = lower2();
        let vals = [0.0, 1.0, 2.0];
        for &a0 in &vals {
            for &a1 in &vals {
                for &b0 in &vals {
                    for &b1 in &vals {
                        let expected = if a0 != b0 {
                            if a0 < b0 { WinValue::Win } else { WinValue::Loss }
                        } else if a1 != b1 {
                            if a1 < b1 { WinValue::Win } else { WinValue::Loss }
                        } else {
                            WinValue::Tie
                        };
                        assert_eq!(compare(&h, &[a0, a1], &[b0, b1]).unwrap(), expected);
                    }
                }
            }
        }
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let h = lower2();
        assert!(matches!(compare(&h, &[1.0], &[1.0]), Err(crate::Error::InvalidInput(_))));
        assert!(matches!(compare(&h, &[1.0, 2.0], &[1.0]), Err(crate::Error::InvalidInput(_))));
    }

    #[test]
    fn invalid_hierarchies() {
        assert!(HierarchySpec::new(vec![], TiePolicy::Loss).is_err());
        let dup = vec![Level::new(0, Direction::HigherBetter), Level::new(0, Direction::LowerBetter)];
        assert!(HierarchySpec::new(dup, TiePolicy::Loss).is_err());
    }

    #[test]
    fn tolerance_creates_ties() {
        let h = HierarchySpec::new(
            vec![Level::new(0, Direction::HigherBetter).with_tolerance(0.5)],
            TiePolicy::HalfWin,
        )
        .unwrap();
        assert_eq!(h.compare_unchecked(&[1.2], &[1.0]), WinValue::Tie);
        assert_eq!(h.compare_unchecked(&[1.6], &[1.0]), WinValue::Win);
    }

    #[test]
    fn numeric_values_per_policy() {
        assert_eq!(WinValue::Tie.numeric(TiePolicy::HalfWin), Some(0.5));
        assert_eq!(WinValue::Tie.numeric(TiePolicy::Loss), Some(0.0));
        assert_eq!(WinValue::Tie.numeric(TiePolicy::Drop), None);
        assert_eq!(WinValue::Win.numeric(TiePolicy::Drop), Some(1.0));
        assert_eq!(WinValue::Loss.numeric(TiePolicy::HalfWin), Some(0.0));
    }
}
