use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{degenerate, invalid, Result};
use crate::model::Dataset;
use crate::rng::substream;

/// Disjoint unit index sets: nuisance training, estimation, and a holdout
/// used only for the arm-balance weight of the doubly robust estimator.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SampleSplit {
    pub train: Vec<usize>,
    pub inference: Vec<usize>,
    #[serde(default)]
    pub holdout: Vec<usize>,
}

impl SampleSplit {
    /// Random split: `holdout_fraction` of the units go to the holdout, then
    /// `train_fraction` of the rest to training and the remainder to
    /// inference. Each part is sorted.
    pub fn random(n: usize, holdout_fraction: f64, train_fraction: f64, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&holdout_fraction) || !(0.0..1.0).contains(&train_fraction) {
            return invalid("split fractions must lie in [0, 1)");
        }
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut substream(seed, &[0x5_1177]));
        let n_hold = (holdout_fraction * n as f64).round() as usize;
        let rest = n - n_hold;
        let n_train = (train_fraction * rest as f64).round() as usize;
        let mut holdout = idx[..n_hold].to_vec();
        let mut train = idx[n_hold..n_hold + n_train].to_vec();
        let mut inference = idx[n_hold + n_train..].to_vec();
        holdout.sort_unstable();
        train.sort_unstable();
        inference.sort_unstable();
        let split = SampleSplit {
            train,
            inference,
            holdout,
        };
        split.check(n)?;
        Ok(split)
    }

    /// Every unit used for estimation (oracle or externally fitted nuisances).
    pub fn all_inference(n: usize) -> Self {
        SampleSplit {
            train: Vec::new(),
            inference: (0..n).collect(),
            holdout: Vec::new(),
        }
    }

    pub fn check(&self, n: usize) -> Result<()> {
        if self.inference.is_empty() {
            return invalid("inference split is empty");
        }
        let mut owner = vec![0u8; n];
        for (tag, part) in [(1u8, &self.train), (2, &self.inference), (3, &self.holdout)] {
            for &i in part.iter() {
                if i >= n {
                    return invalid(format!("split index {i} out of range for n = {n}"));
                }
                if owner[i] != 0 {
                    return invalid(format!("unit {i} appears in more than one split (or twice)"));
                }
                owner[i] = tag;
            }
        }
        Ok(())
    }
}

/// Arm-balance weight of the doubly robust estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AipwConfig {
    /// Estimated `P(T = 0)`, from data independent of the estimation sample.
    pub lambda: f64,
}

impl AipwConfig {
    pub fn new(lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda < 1.0) {
            return invalid(format!("lambda must lie in (0, 1), got {lambda}"));
        }
        Ok(AipwConfig { lambda })
    }

    /// Control fraction over the holdout units of `split`.
    pub fn from_holdout(d: &Dataset, split: &SampleSplit) -> Result<Self> {
        split.check(d.n())?;
        if split.holdout.is_empty() {
            return invalid("lambda needs a non-empty holdout split");
        }
        let controls = split.holdout.iter().filter(|&&i| !d.is_treated(i)).count();
        let lambda = controls as f64 / split.holdout.len() as f64;
        if lambda == 0.0 || lambda == 1.0 {
            return degenerate("holdout split contains a single arm; lambda would leave (0, 1)");
        }
        Ok(AipwConfig { lambda })
    }
}
