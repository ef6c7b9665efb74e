//! Synthetic observational data with known estimands.
//!
//! Covariates are standard Gaussian (or a two-valued group label), treatment
//! and every binary outcome coordinate are Bernoulli with a linked index.
//! Potential outcomes of the two arms are drawn independently given the
//! covariates, so the individual estimand coincides with `tau_star` for every
//! generator here; the oracles still report all three.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{invalid, Error, Result};
use crate::estimators::{run_estimator, EstimatorSpec, Oracles};
use crate::model::{Arm, Contrast, Dataset, HierarchySpec, TiePolicy};
use crate::nuisance::{bernoulli_win, dot, expit, DistRegModel, PropensityModel};
use crate::rng::{derive_seed, substream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Link {
    /// Standard normal CDF.
    #[default]
    Probit,
    Logit,
}

impl Link {
    pub fn apply(self, s: f64) -> f64 {
        match self {
            Link::Probit => 0.5 * erfc(-s / std::f64::consts::SQRT_2),
            Link::Logit => expit(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TreatmentModel {
    Constant { pi: f64 },
    /// `P(T = 1 | x) = link(<x, v>)`.
    LogitLinear { v: Vec<f64> },
    /// `P(T = 1 | x) = link(x_1 x_2)`.
    NonlinearProduct,
}

/// Outcome values of the two-group design: group 0 has `Y(1) = y1 > y0 =
/// Y(0)`, group 1 has `Y(1) = y1_alt < y0_alt = Y(0)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoGroupValues {
    pub y0: f64,
    pub y1: f64,
    pub y0_alt: f64,
    pub y1_alt: f64,
}

impl Default for TwoGroupValues {
    fn default() -> Self {
        TwoGroupValues {
            y0: 1.0,
            y1: 2.0,
            y0_alt: 3.0,
            y1_alt: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OutcomeModel {
    /// Every coordinate of arm `t` has index `<x, u_t>`.
    Correlated { u0: Vec<f64>, u1: Vec<f64> },
    /// Coordinate `k` of arm `t` has index `<x, u_t[k]>`.
    Uncorrelated { u0: Vec<Vec<f64>>, u1: Vec<Vec<f64>> },
    /// Treated coordinates have mean `link((x_1 - x_2)^2)`, control ones
    /// `link((x_1 + x_2)^2)`.
    NonlinearQuadratic,
    /// Scalar covariate `x = 1` (group 1) with probability `alpha`, else 0;
    /// deterministic univariate outcomes per group.
    TwoGroup {
        alpha: f64,
        #[serde(default)]
        values: TwoGroupValues,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub n: usize,
    pub p: usize,
    pub d: usize,
    pub treatment: TreatmentModel,
    pub outcome: OutcomeModel,
    #[serde(default)]
    pub link: Link,
    /// Added to every treated outcome index (not used by the two-group
    /// design). Zero keeps both arms symmetric around `tau = 1/2`.
    #[serde(default)]
    pub treated_shift: f64,
    #[serde(default)]
    pub seed: u64,
}

fn unit_vector(rng: &mut ChaCha8Rng, p: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..p).map(|_| rng.sample(StandardNormal)).collect();
        let norm = dot(&v, &v).sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|a| a / norm).collect();
        }
    }
}

fn check_unit(v: &[f64], p: usize, what: &str) -> Result<()> {
    if v.len() != p {
        return invalid(format!("{what} has length {}, expected p = {p}", v.len()));
    }
    if (dot(v, v).sqrt() - 1.0).abs() > 1e-9 {
        return invalid(format!("{what} must have unit norm"));
    }
    Ok(())
}

impl GenConfig {
    /// Correlated design with random unit `v`, `u0`, `u1` drawn from `seed`.
    pub fn correlated(n: usize, p: usize, d: usize, seed: u64) -> Self {
        let mut rng = substream(seed, &[0xc0ef]);
        let v = unit_vector(&mut rng, p);
        let u0 = unit_vector(&mut rng, p);
        let u1 = unit_vector(&mut rng, p);
        GenConfig {
            n,
            p,
            d,
            treatment: TreatmentModel::LogitLinear { v },
            outcome: OutcomeModel::Correlated { u0, u1 },
            link: Link::Probit,
            treated_shift: 0.0,
            seed,
        }
    }

    /// Uncorrelated design: one random unit vector per arm and coordinate.
    pub fn uncorrelated(n: usize, p: usize, d: usize, seed: u64) -> Self {
        let mut rng = substream(seed, &[0xc0ef]);
        let v = unit_vector(&mut rng, p);
        let u0 = (0..d).map(|_| unit_vector(&mut rng, p)).collect();
        let u1 = (0..d).map(|_| unit_vector(&mut rng, p)).collect();
        GenConfig {
            n,
            p,
            d,
            treatment: TreatmentModel::LogitLinear { v },
            outcome: OutcomeModel::Uncorrelated { u0, u1 },
            link: Link::Probit,
            treated_shift: 0.0,
            seed,
        }
    }

    /// Nonlinear treatment and outcome means (needs `p >= 2`).
    pub fn nonlinear(n: usize, p: usize, d: usize, seed: u64) -> Self {
        GenConfig {
            n,
            p,
            d,
            treatment: TreatmentModel::NonlinearProduct,
            outcome: OutcomeModel::NonlinearQuadratic,
            link: Link::Probit,
            treated_shift: 0.0,
            seed,
        }
    }

    /// Randomized two-group design with treatment probability `pi`.
    pub fn two_group(n: usize, alpha: f64, pi: f64, seed: u64) -> Self {
        GenConfig {
            n,
            p: 1,
            d: 1,
            treatment: TreatmentModel::Constant { pi },
            outcome: OutcomeModel::TwoGroup {
                alpha,
                values: TwoGroupValues::default(),
            },
            link: Link::Probit,
            treated_shift: 0.0,
            seed,
        }
    }

    pub fn with_link(mut self, link: Link) -> Self {
        self.link = link;
        self
    }

    pub fn with_treated_shift(mut self, shift: f64) -> Self {
        self.treated_shift = shift;
        self
    }

    pub fn with_treatment(mut self, treatment: TreatmentModel) -> Self {
        self.treatment = treatment;
        self
    }

    pub fn with_n(mut self, n: usize) -> Self {
        self.n = n;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn check(&self) -> Result<()> {
        if self.p == 0 || self.d == 0 {
            return invalid("p and d must be at least 1");
        }
        if !self.treated_shift.is_finite() {
            return invalid("treated_shift must be finite");
        }
        match &self.treatment {
            TreatmentModel::Constant { pi } if !(*pi > 0.0 && *pi < 1.0) => {
                return invalid(format!("constant treatment probability must lie in (0, 1), got {pi}"))
            }
            TreatmentModel::LogitLinear { v } => check_unit(v, self.p, "treatment vector v")?,
            TreatmentModel::NonlinearProduct if self.p < 2 => return invalid("nonlinear treatment needs p >= 2"),
            _ => {}
        }
        match &self.outcome {
            OutcomeModel::Correlated { u0, u1 } => {
                check_unit(u0, self.p, "u0")?;
                check_unit(u1, self.p, "u1")?;
            }
            OutcomeModel::Uncorrelated { u0, u1 } => {
                if u0.len() != self.d || u1.len() != self.d {
                    return invalid(format!("uncorrelated design needs d = {} vectors per arm", self.d));
                }
                for u in u0.iter().chain(u1) {
                    check_unit(u, self.p, "outcome vector")?;
                }
            }
            OutcomeModel::NonlinearQuadratic if self.p < 2 => return invalid("nonlinear outcomes need p >= 2"),
            OutcomeModel::TwoGroup { alpha, values } => {
                if self.p != 1 || self.d != 1 {
                    return invalid("two-group design has p = d = 1");
                }
                if !(0.0..=1.0).contains(alpha) {
                    return invalid(format!("alpha must lie in [0, 1], got {alpha}"));
                }
                let v = values;
                if !(v.y0_alt > v.y1 && v.y1 > v.y0 && v.y0 > v.y1_alt) {
                    return invalid("two-group values must satisfy y0_alt > y1 > y0 > y1_alt");
                }
            }
            _ => {}
        }
        Ok(())
    }

    pub fn treatment_probability(&self, x: &[f64]) -> f64 {
        match &self.treatment {
            TreatmentModel::Constant { pi } => *pi,
            TreatmentModel::LogitLinear { v } => self.link.apply(dot(x, v)),
            TreatmentModel::NonlinearProduct => self.link.apply(x[0] * x[1]),
        }
    }

    /// Per-coordinate `P(Y_k(arm) = 1 | x)`; `None` for the two-group design.
    pub fn outcome_probabilities(&self, arm: Arm, x: &[f64]) -> Option<Vec<f64>> {
        let shift = if arm == Arm::Treated { self.treated_shift } else { 0.0 };
        let link = |s: f64| self.link.apply(s + shift);
        match &self.outcome {
            OutcomeModel::Correlated { u0, u1 } => {
                let u = if arm == Arm::Treated { u1 } else { u0 };
                Some(vec![link(dot(x, u)); self.d])
            }
            OutcomeModel::Uncorrelated { u0, u1 } => {
                let us = if arm == Arm::Treated { u1 } else { u0 };
                Some(us.iter().map(|u| link(dot(x, u))).collect())
            }
            OutcomeModel::NonlinearQuadratic => {
                let s = if arm == Arm::Treated { x[0] - x[1] } else { x[0] + x[1] };
                Some(vec![link(s * s); self.d])
            }
            OutcomeModel::TwoGroup { .. } => None,
        }
    }

    fn two_group_value(&self, arm: Arm, x: &[f64]) -> Option<f64> {
        match &self.outcome {
            OutcomeModel::TwoGroup { values: v, .. } => Some(match (x[0] != 0.0, arm) {
                (false, Arm::Treated) => v.y1,
                (false, Arm::Control) => v.y0,
                (true, Arm::Treated) => v.y1_alt,
                (true, Arm::Control) => v.y0_alt,
            }),
            _ => None,
        }
    }

    fn draw_x(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        match &self.outcome {
            OutcomeModel::TwoGroup { alpha, .. } => vec![if rng.random::<f64>() < *alpha { 1.0 } else { 0.0 }],
            _ => (0..self.p).map(|_| rng.sample(StandardNormal)).collect(),
        }
    }

    fn draw_outcome(&self, arm: Arm, x: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
        match self.outcome_probabilities(arm, x) {
            Some(probs) => probs
                .iter()
                .map(|&q| if rng.random::<f64>() < q { 1.0 } else { 0.0 })
                .collect(),
            None => vec![self.two_group_value(arm, x).unwrap_or(f64::NAN)],
        }
    }

    /// The true propensity as a plug-in model.
    pub fn propensity_oracle(&self, clip: (f64, f64)) -> Result<PropensityModel> {
        let cfg = self.clone();
        PropensityModel::plugin(move |x| cfg.treatment_probability(x), clip)
    }

    /// The true `q` functions for hierarchy `h` as a plug-in model.
    pub fn distreg_oracle(&self, h: &HierarchySpec) -> Result<DistRegModel> {
        self.check()?;
        h.check_dimension(self.d)?;
        let (cfg, h) = (self.clone(), h.clone());
        Ok(DistRegModel::plugin(move |arm, contrast, x, y| {
            // The random outcome is the first argument for the treated arm.
            let random_first = (arm == Arm::Treated) != (contrast == Contrast::Loss);
            match cfg.outcome_probabilities(arm, x) {
                Some(probs) => {
                    if random_first {
                        bernoulli_win(&h, &probs, y)
                    } else {
                        bernoulli_win(&h, y, &probs)
                    }
                }
                None => {
                    let v = [cfg.two_group_value(arm, x).unwrap_or(f64::NAN)];
                    let w = if random_first {
                        h.win_unchecked(&v, y)
                    } else {
                        h.win_unchecked(y, &v)
                    };
                    w.unwrap_or(0.0)
                }
            }
        }))
    }
}

/// A generated dataset with the potential outcomes and propensities behind it.
#[derive(Debug, Clone)]
pub struct Simulated {
    pub data: Dataset,
    pub y0: Vec<Vec<f64>>,
    pub y1: Vec<Vec<f64>>,
    pub propensity: Vec<f64>,
}

impl Simulated {
    /// Observed outcome equals the potential outcome of the received arm.
    pub fn consistent(&self) -> bool {
        (0..self.data.n()).all(|i| {
            let y = if self.data.is_treated(i) { &self.y1[i] } else { &self.y0[i] };
            self.data.outcome(i) == y.as_slice()
        })
    }
}

/// Draw `cfg.n` i.i.d. units.
pub fn generate(cfg: &GenConfig) -> Result<Simulated> {
    cfg.check()?;
    let mut rng = substream(cfg.seed, &[0xda7a]);
    let mut x = Vec::with_capacity(cfg.n);
    let mut t = Vec::with_capacity(cfg.n);
    let mut y = Vec::with_capacity(cfg.n);
    let (mut y0, mut y1, mut pis) = (Vec::new(), Vec::new(), Vec::new());
    for _ in 0..cfg.n {
        let xi = cfg.draw_x(&mut rng);
        let pi = cfg.treatment_probability(&xi);
        let ti = u8::from(rng.random::<f64>() < pi);
        let a = cfg.draw_outcome(Arm::Control, &xi, &mut rng);
        let b = cfg.draw_outcome(Arm::Treated, &xi, &mut rng);
        y.push(if ti == 1 { b.clone() } else { a.clone() });
        x.push(xi);
        t.push(ti);
        y0.push(a);
        y1.push(b);
        pis.push(pi);
    }
    Ok(Simulated {
        data: Dataset::from_numeric(&x, t, y)?,
        y0,
        y1,
        propensity: pis,
    })
}

/// Two-group data with given group labels and assignments.
pub fn generate_fixed(cfg: &GenConfig, groups: &[u8], treatment: &[u8]) -> Result<Simulated> {
    cfg.check()?;
    if !matches!(cfg.outcome, OutcomeModel::TwoGroup { .. }) {
        return invalid("fixed assignments need the two-group design");
    }
    if groups.len() != treatment.len() {
        return invalid("groups and treatment differ in length");
    }
    let x: Vec<Vec<f64>> = groups.iter().map(|&g| vec![f64::from(g.min(1))]).collect();
    let y0: Vec<Vec<f64>> = x.iter().map(|xi| cfg.draw_outcome_fixed(Arm::Control, xi)).collect();
    let y1: Vec<Vec<f64>> = x.iter().map(|xi| cfg.draw_outcome_fixed(Arm::Treated, xi)).collect();
    let y = (0..x.len())
        .map(|i| if treatment[i] == 1 { y1[i].clone() } else { y0[i].clone() })
        .collect();
    let propensity = x.iter().map(|xi| cfg.treatment_probability(xi)).collect();
    Ok(Simulated {
        data: Dataset::from_numeric(&x, treatment.to_vec(), y)?,
        y0,
        y1,
        propensity,
    })
}

impl GenConfig {
    fn draw_outcome_fixed(&self, arm: Arm, x: &[f64]) -> Vec<f64> {
        vec![self.two_group_value(arm, x).unwrap_or(f64::NAN)]
    }
}

/// The six-patient table: four men (group 0) who benefit from treatment, two
/// women (group 1) who are harmed, odd-numbered patients treated.
pub fn example1() -> Simulated {
    let cfg = GenConfig::two_group(6, 1.0 / 3.0, 0.5, 0);
    generate_fixed(&cfg, &[0, 0, 0, 0, 1, 1], &[1, 0, 1, 0, 1, 0]).expect("valid fixed design")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OracleMethod {
    ClosedForm,
    MonteCarlo { samples: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleStandardErrors {
    pub tau_indiv: f64,
    pub tau_star: f64,
    pub tau_pop: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub tau_indiv: f64,
    pub tau_star: f64,
    pub tau_pop: f64,
    pub method: OracleMethod,
    pub mc_standard_error: Option<OracleStandardErrors>,
}

pub const DEFAULT_ORACLE_SAMPLES: usize = 1_000_000;

fn oracle_hierarchy(cfg: &GenConfig, h: &HierarchySpec) -> Result<()> {
    cfg.check()?;
    h.check_dimension(cfg.d)?;
    if h.tie_policy() == TiePolicy::Drop {
        return invalid("oracles need every comparison scored; tie policy drop has no expectation form");
    }
    Ok(())
}

/// Group probabilities and per-group values of the two-group design.
fn two_group_support(cfg: &GenConfig) -> Option<[(f64, [f64; 2]); 2]> {
    match &cfg.outcome {
        OutcomeModel::TwoGroup { alpha, values: v } => {
            Some([(1.0 - alpha, [v.y0, v.y1]), (*alpha, [v.y0_alt, v.y1_alt])])
        }
        _ => None,
    }
}

/// `tau_indiv`, `tau_star` and `tau_pop` under hierarchy `h`.
///
/// The two-group design is solved exactly. Otherwise covariates are sampled
/// `samples` times (at least 10^4) and the conditional win probabilities are
/// integrated exactly given the covariates: same-unit draws for the two
/// individual estimands, independent units for the population one.
pub fn oracle_taus(cfg: &GenConfig, h: &HierarchySpec, samples: usize) -> Result<OracleResult> {
    oracle_hierarchy(cfg, h)?;
    if let Some(groups) = two_group_support(cfg) {
        let w = |a: f64, b: f64| h.win_unchecked(&[a], &[b]).unwrap_or(0.0);
        let star: f64 = groups.iter().map(|(pg, v)| pg * w(v[1], v[0])).sum();
        let pop: f64 = groups
            .iter()
            .flat_map(|(p1, v1)| groups.iter().map(move |(p0, v0)| p1 * p0 * w(v1[1], v0[0])))
            .sum();
        return Ok(OracleResult {
            tau_indiv: star,
            tau_star: star,
            tau_pop: pop,
            method: OracleMethod::ClosedForm,
            mc_standard_error: None,
        });
    }
    if samples < 10_000 {
        return invalid(format!("Monte-Carlo oracle needs at least 10^4 samples, got {samples}"));
    }
    const CHUNK: usize = 8192;
    let chunks = samples.div_ceil(CHUNK);
    let parts: Vec<[f64; 4]> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = substream(cfg.seed, &[0x0ac1e, c as u64]);
            let mut acc = [0.0; 4];
            for _ in 0..CHUNK.min(samples - c * CHUNK) {
                let x = cfg.draw_x(&mut rng);
                let x2 = cfg.draw_x(&mut rng);
                let p0 = cfg.outcome_probabilities(Arm::Control, &x).unwrap_or_default();
                let p1 = cfg.outcome_probabilities(Arm::Treated, &x).unwrap_or_default();
                let p1_other = cfg.outcome_probabilities(Arm::Treated, &x2).unwrap_or_default();
                let s = bernoulli_win(h, &p1, &p0);
                let q = bernoulli_win(h, &p1_other, &p0);
                acc[0] += s;
                acc[1] += s * s;
                acc[2] += q;
                acc[3] += q * q;
            }
            acc
        })
        .collect();
    let mut tot = [0.0; 4];
    for part in &parts {
        for (t, v) in tot.iter_mut().zip(part) {
            *t += v;
        }
    }
    let r = samples as f64;
    let se = |sum: f64, sq: f64| ((sq / r - (sum / r).powi(2)).max(0.0) * r / (r - 1.0) / r).sqrt();
    let (star, pop) = (tot[0] / r, tot[2] / r);
    let (se_star, se_pop) = (se(tot[0], tot[1]), se(tot[2], tot[3]));
    Ok(OracleResult {
        tau_indiv: star,
        tau_star: star,
        tau_pop: pop,
        method: OracleMethod::MonteCarlo { samples },
        mc_standard_error: Some(OracleStandardErrors {
            tau_indiv: se_star,
            tau_star: se_star,
            tau_pop: se_pop,
        }),
    })
}

/// Total-variation distances between the individual coupling of
/// `(Y(1), Y(0))` and its two proxies, with the estimand gaps they bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TvProxyBounds {
    /// TV between the same-covariate independent coupling and the joint law.
    pub bound_star: f64,
    /// TV between the independent-units coupling and the joint law.
    pub bound_pop: f64,
    pub tau_indiv: f64,
    pub tau_star: f64,
    pub tau_pop: f64,
}

impl TvProxyBounds {
    pub fn holds(&self) -> bool {
        const SLACK: f64 = 1e-12;
        (self.tau_star - self.tau_indiv).abs() <= self.bound_star + SLACK
            && (self.tau_pop - self.tau_indiv).abs() <= self.bound_pop + SLACK
    }
}

fn tv_from_laws(laws: &[(f64, f64, f64)]) -> (f64, f64) {
    // (joint, proxy, weight) per support cell -> (TV, gap)
    let tv = 0.5 * laws.iter().map(|(a, b, _)| (a - b).abs()).sum::<f64>();
    let gap = laws.iter().map(|(a, b, w)| (a - b) * w).sum::<f64>();
    (tv, gap)
}

/// Enumerate the discrete joint laws of `(Y(1), Y(0))` under the generator's
/// coupling and under both proxy couplings. The two-group design is exact;
/// binary designs (`d <= 12`) average the conditional laws over `samples`
/// covariate draws.
pub fn tv_proxy_bounds(cfg: &GenConfig, h: &HierarchySpec, samples: usize) -> Result<TvProxyBounds> {
    oracle_hierarchy(cfg, h)?;
    if let Some(groups) = two_group_support(cfg) {
        // Cells indexed by (group of Y(1), group of Y(0)), merged by value.
        let mut cells: Vec<([f64; 2], f64, f64, f64)> = Vec::new();
        for (g1, (p1, v1)) in groups.iter().enumerate() {
            for (g0, (p0, v0)) in groups.iter().enumerate() {
                let key = [v1[1], v0[0]];
                let joint = if g1 == g0 { *p1 } else { 0.0 };
                let pop = p1 * p0;
                match cells.iter_mut().find(|c| c.0 == key) {
                    Some(c) => {
                        c.1 += joint;
                        c.2 += pop;
                    }
                    None => cells.push((key, joint, pop, h.win_unchecked(&[key[0]], &[key[1]]).unwrap_or(0.0))),
                }
            }
        }
        let tau_indiv: f64 = cells.iter().map(|c| c.1 * c.3).sum();
        let pop_laws: Vec<_> = cells.iter().map(|c| (c.2, c.1, c.3)).collect();
        let (bound_pop, gap_pop) = tv_from_laws(&pop_laws);
        return Ok(TvProxyBounds {
            bound_star: 0.0,
            bound_pop,
            tau_indiv,
            tau_star: tau_indiv,
            tau_pop: tau_indiv + gap_pop,
        });
    }
    if cfg.d > 12 {
        return Err(Error::Unsupported(format!(
            "exact enumeration supports d <= 12, got {}",
            cfg.d
        )));
    }
    if samples == 0 {
        return invalid("need at least one covariate sample");
    }
    let m = 1usize << cfg.d;
    let cell_law = |probs: &[f64]| -> Vec<f64> {
        (0..m)
            .map(|a| {
                (0..cfg.d)
                    .map(|k| if a >> k & 1 == 1 { probs[k] } else { 1.0 - probs[k] })
                    .product()
            })
            .collect()
    };
    let chunks = (4_194_304 / (m * m)).clamp(1, 64).min(samples);
    let per = samples.div_ceil(chunks);
    let parts: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = substream(cfg.seed, &[0x7e, c as u64]);
            let (mut joint, mut m1, mut m0) = (vec![0.0; m * m], vec![0.0; m], vec![0.0; m]);
            for _ in 0..per.min(samples.saturating_sub(c * per)) {
                let x = cfg.draw_x(&mut rng);
                let l1 = cell_law(&cfg.outcome_probabilities(Arm::Treated, &x).unwrap_or_default());
                let l0 = cell_law(&cfg.outcome_probabilities(Arm::Control, &x).unwrap_or_default());
                for a in 0..m {
                    m1[a] += l1[a];
                    m0[a] += l0[a];
                    for b in 0..m {
                        joint[a * m + b] += l1[a] * l0[b];
                    }
                }
            }
            (joint, m1, m0)
        })
        .collect();
    let (mut joint, mut m1, mut m0) = (vec![0.0; m * m], vec![0.0; m], vec![0.0; m]);
    for (j, a, b) in &parts {
        joint.iter_mut().zip(j).for_each(|(t, v)| *t += v);
        m1.iter_mut().zip(a).for_each(|(t, v)| *t += v);
        m0.iter_mut().zip(b).for_each(|(t, v)| *t += v);
    }
    let r = samples as f64;
    let bits = |a: usize| -> Vec<f64> { (0..cfg.d).map(|k| (a >> k & 1) as f64).collect() };
    let mut star_laws = Vec::with_capacity(m * m);
    let mut pop_laws = Vec::with_capacity(m * m);
    let mut tau_indiv = 0.0;
    for a in 0..m {
        for b in 0..m {
            let w = h.win_unchecked(&bits(a), &bits(b)).unwrap_or(0.0);
            let j = joint[a * m + b] / r;
            // Conditional independence: the same-covariate proxy has the
            // generator's joint law.
            star_laws.push((j, j, w));
            pop_laws.push((m1[a] / r * m0[b] / r, j, w));
            tau_indiv += j * w;
        }
    }
    let (bound_star, gap_star) = tv_from_laws(&star_laws);
    let (bound_pop, gap_pop) = tv_from_laws(&pop_laws);
    Ok(TvProxyBounds {
        bound_star,
        bound_pop,
        tau_indiv,
        tau_star: tau_indiv + gap_star,
        tau_pop: tau_indiv + gap_pop,
    })
}

/// Repeated-sampling study over a grid of sample sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    /// `generator.n` is ignored; sizes come from `n_grid`.
    pub generator: GenConfig,
    pub hierarchy: HierarchySpec,
    pub estimators: Vec<EstimatorSpec>,
    pub n_grid: Vec<usize>,
    pub reps: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_oracle_samples")]
    pub oracle_samples: usize,
}

fn default_oracle_samples() -> usize {
    DEFAULT_ORACLE_SAMPLES
}

impl StudyConfig {
    pub fn check(&self) -> Result<()> {
        if self.reps == 0 {
            return invalid("reps must be at least 1");
        }
        if self.n_grid.is_empty() || self.n_grid.iter().any(|&n| n < 2) {
            return invalid("n_grid must list sizes of at least 2");
        }
        if self.estimators.is_empty() {
            return invalid("study needs at least one estimator");
        }
        for e in &self.estimators {
            e.check()?;
        }
        self.hierarchy.check()?;
        self.generator.check()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub estimator: String,
    pub n: usize,
    pub rep: usize,
    pub tau_hat: f64,
    pub oracle_tau_star: f64,
    pub oracle_tau_pop: f64,
    /// Generator seed of the replicate; the estimator seed is
    /// `derive_seed(seed, [estimator index])`.
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyTable {
    pub oracle: OracleResult,
    pub rows: Vec<StudyRow>,
}

/// Run every estimator on `reps` fresh datasets per sample size. Rows come
/// out ordered by size, replicate, then estimator, independent of threading.
pub fn run_study(study: &StudyConfig) -> Result<StudyTable> {
    study.check()?;
    let oracle_cfg = study.generator.clone().with_seed(derive_seed(study.seed, &[0x0ac1e]));
    let oracle = oracle_taus(&oracle_cfg, &study.hierarchy, study.oracle_samples)?;
    let distreg_oracle = study.generator.distreg_oracle(&study.hierarchy)?;
    let cells: Vec<(usize, usize)> = study
        .n_grid
        .iter()
        .flat_map(|&n| (0..study.reps).map(move |r| (n, r)))
        .collect();
    let rows: Vec<Vec<StudyRow>> = cells
        .par_iter()
        .map(|&(n, rep)| {
            let data_seed = derive_seed(study.seed, &[n as u64, rep as u64]);
            let sim = generate(&study.generator.clone().with_n(n).with_seed(data_seed))?;
            study
                .estimators
                .iter()
                .enumerate()
                .map(|(k, spec)| {
                    let oracles = Oracles {
                        propensity: Some(study.generator.propensity_oracle(spec.clip)?),
                        distreg: Some(distreg_oracle.clone()),
                    };
                    let seed = derive_seed(data_seed, &[k as u64]);
                    let report = run_estimator(&sim.data, &study.hierarchy, spec, seed, &oracles).map_err(|e| {
                        Error::InvalidInput(format!("estimator {} at n = {n}, rep {rep}: {e}", spec.label()))
                    })?;
                    Ok(StudyRow {
                        estimator: spec.label(),
                        n,
                        rep,
                        tau_hat: report.tau_hat,
                        oracle_tau_star: oracle.tau_star,
                        oracle_tau_pop: oracle.tau_pop,
                        seed: data_seed,
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(StudyTable {
        oracle,
        rows: rows.into_iter().flatten().collect(),
    })
}
