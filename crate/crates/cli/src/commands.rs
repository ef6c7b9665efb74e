//! Subcommand implementations. Each returns what it wrote so tests can
//! inspect results without parsing stdout.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use winratio::estimators::{
    run_estimator, run_with_ci, DistRegSpec, EstimateReport, EstimatorSpec, Method, Oracles, PropensitySpec,
};
use winratio::inference::CiMethod;
use winratio::model::{Dataset, Direction, HierarchySpec, TiePolicy};
use winratio::nuisance::{
    fit_distreg_forest, fit_distreg_logistic_with, fit_propensity_forest, fit_propensity_logistic_with,
    DistRegModel, PropensityModel,
};
use winratio::simulate::{generate, run_study, GenConfig, StudyConfig};

use crate::config::{read_toml, CiConfig, MethodName, RunConfig};
use crate::data::{ingest_csv, Roles};

/// Command-line overrides applied on top of a [`RunConfig`].
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub input: Option<PathBuf>,
    pub method: Option<MethodName>,
    /// `Some(None)` disables the interval.
    pub ci: Option<Option<CiMethod>>,
    pub boot: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut RunConfig) {
        if let Some(p) = &self.input {
            cfg.input = Some(p.clone());
        }
        if let Some(m) = self.method {
            cfg.estimator.method = m;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        match self.ci {
            Some(None) => cfg.ci = None,
            Some(Some(method)) => {
                let ci = cfg.ci.get_or_insert(CiConfig {
                    method,
                    level: 0.95,
                    replicates: 1000,
                    seed: None,
                });
                ci.method = method;
            }
            None => {}
        }
        if let (Some(b), Some(ci)) = (self.boot, cfg.ci.as_mut()) {
            ci.replicates = b;
        }
        if let Some(p) = &self.out {
            cfg.output = Some(p.clone());
        }
    }
}

/// Nuisance models written by `fit` and read back through `models = ...`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct FittedModels {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub propensity: Option<PropensityModel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distreg: Option<DistRegModel>,
}

/// The JSON record written by `estimate`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: RunConfig,
    pub report: EstimateReport,
    pub summary: String,
}

fn roles(cfg: &RunConfig) -> Roles {
    Roles {
        treatment: cfg.treatment.clone(),
        covariates: cfg.covariates.clone(),
        categorical: cfg.categorical.clone(),
        outcomes: cfg.outcome_columns(),
    }
}

pub fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    let input = cfg.input.as_ref().context("no input file: set `input` in the config or pass --input")?;
    Ok(ingest_csv(input, &roles(cfg))?)
}

fn load_models(path: &Path) -> Result<FittedModels> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read models file {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("models file {}", path.display()))
}

/// Swap fitted nuisances from a models file in as oracles.
fn use_models(spec: &mut EstimatorSpec, models: FittedModels) -> Result<Oracles> {
    let has_p = models.propensity.is_some();
    let has_q = models.distreg.is_some();
    match &mut spec.method {
        Method::IpwNn { propensity, .. } if has_p => *propensity = PropensitySpec::Oracle,
        Method::Distreg { distreg } if has_q => *distreg = DistRegSpec::Oracle,
        Method::Aipw { propensity, distreg, .. } => {
            if has_p {
                *propensity = PropensitySpec::Oracle;
            }
            if has_q {
                *distreg = DistRegSpec::Oracle;
            }
        }
        _ => {}
    }
    Ok(Oracles {
        propensity: models.propensity,
        distreg: models.distreg,
    })
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("cannot write {}", path.display()))
}

/// Run the configured estimator. Writes the record to `cfg.output` when set.
pub fn cmd_estimate(mut cfg: RunConfig) -> Result<RunRecord> {
    let h = cfg.hierarchy_spec()?;
    let mut spec = cfg.estimator_spec()?;
    let ci = cfg.ci_spec()?;
    let d = load_dataset(&cfg)?;
    let oracles = match &cfg.models {
        Some(path) => use_models(&mut spec, load_models(path)?)?,
        None => Oracles::default(),
    };
    let report = run_with_ci(&d, &h, &spec, ci.as_ref(), cfg.seed, &oracles)?;
    if let (Some(c), Some(s)) = (cfg.ci.as_mut(), ci.as_ref()) {
        c.seed = Some(s.seed);
    }
    let record = RunRecord {
        summary: report.summary_line(),
        config: cfg,
        report,
    };
    if let Some(out) = &record.config.output {
        write_json(&record, out)?;
    }
    Ok(record)
}

/// Fit the configured propensity and distreg models on the whole input.
pub fn cmd_fit(cfg: &RunConfig) -> Result<FittedModels> {
    let d = load_dataset(cfg)?;
    let clip = cfg.estimator.clip;
    let propensity = match &cfg.propensity {
        None => None,
        Some(PropensitySpec::TreatedFraction) => Some(PropensityModel::treated_fraction(&d, clip)?),
        Some(PropensitySpec::Constant { pi }) => Some(PropensityModel::constant(*pi, clip)?),
        Some(PropensitySpec::Logistic { features }) => Some(fit_propensity_logistic_with(&d, clip, *features)?),
        Some(PropensitySpec::Forest { forest }) => Some(fit_propensity_forest(&d, forest, clip)?),
        Some(PropensitySpec::Oracle) => bail!("config field propensity: kind oracle cannot be fitted"),
    };
    let distreg = match &cfg.distreg {
        None => None,
        Some(DistRegSpec::Logistic { constraint, features }) => {
            Some(fit_distreg_logistic_with(&d, *constraint, *features)?)
        }
        Some(DistRegSpec::Forest { forest }) => Some(fit_distreg_forest(&d, forest)?),
        Some(DistRegSpec::Oracle) => bail!("config field distreg: kind oracle cannot be fitted"),
    };
    if propensity.is_none() && distreg.is_none() {
        bail!("config has neither a [propensity] nor a [distreg] table; nothing to fit");
    }
    let models = FittedModels { propensity, distreg };
    if let Some(out) = &cfg.output {
        write_json(&models, out)?;
    }
    Ok(models)
}

/// Run a simulation study and write its rows as CSV.
pub fn cmd_simulate(config: &Path, out: &Path) -> Result<StudyConfig> {
    let study: StudyConfig = read_toml(config)?;
    let table = run_study(&study).with_context(|| format!("study {}", config.display()))?;
    let mut w = csv::Writer::from_path(out).with_context(|| format!("cannot write {}", out.display()))?;
    for row in &table.rows {
        w.serialize(row)?;
    }
    w.flush()?;
    eprintln!(
        "oracle tau_star = {:.4}, tau_pop = {:.4} ({:?}); {} rows written to {}",
        table.oracle.tau_star,
        table.oracle.tau_pop,
        table.oracle.method,
        table.rows.len(),
        out.display()
    );
    Ok(study)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub estimator: String,
    pub n: usize,
    pub median_seconds: f64,
    pub min_seconds: f64,
    pub repeats: usize,
    /// `non_monotone` when the median is below that of a smaller n.
    pub flag: String,
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Time each estimator on correlated-design data (p = d = 3) of each size.
pub fn cmd_bench(sizes: &[usize], estimators: &[MethodName], repeats: usize, seed: u64) -> Result<Vec<BenchRow>> {
    if sizes.is_empty() {
        bail!("--sizes: at least one sample size is required");
    }
    if estimators.is_empty() {
        bail!("--estimators: at least one estimator is required");
    }
    if repeats == 0 {
        bail!("--repeats must be at least 1");
    }
    let h = HierarchySpec::lexicographic(3, Direction::HigherBetter, TiePolicy::HalfWin)?;
    let mut rows = Vec::new();
    for &name in estimators {
        let spec = bench_spec(name);
        let mut best_prev: Option<f64> = None;
        for &n in sizes {
            let sim = generate(&GenConfig::correlated(n, 3, 3, seed))?;
            let mut times = Vec::with_capacity(repeats);
            for r in 0..repeats {
                let start = Instant::now();
                run_estimator(&sim.data, &h, &spec, seed.wrapping_add(r as u64), &Oracles::default())
                    .with_context(|| format!("bench {} at n = {n}", spec.method_name()))?;
                times.push(start.elapsed().as_secs_f64());
            }
            let min = times.iter().copied().fold(f64::INFINITY, f64::min);
            let med = median(&mut times);
            let flag = match best_prev {
                Some(prev) if med < prev => "non_monotone",
                _ => "",
            };
            best_prev = Some(best_prev.map_or(med, |p| p.max(med)));
            rows.push(BenchRow {
                estimator: spec.method_name().to_string(),
                n,
                median_seconds: med,
                min_seconds: min,
                repeats,
                flag: flag.to_string(),
            });
        }
    }
    Ok(rows)
}

fn bench_spec(name: MethodName) -> EstimatorSpec {
    let method = match name {
        MethodName::Complete => Method::Complete,
        MethodName::Stratified => Method::Stratified {
            column: "x1".into(),
            quantiles: 5,
        },
        MethodName::Knn => Method::Knn { k: 1 },
        MethodName::OptimalMatch => Method::OptimalMatch,
        MethodName::IpwNn => Method::IpwNn {
            k: 1,
            propensity: PropensitySpec::Logistic {
                features: Default::default(),
            },
        },
        MethodName::Distreg => Method::Distreg {
            distreg: DistRegSpec::Logistic {
                constraint: Default::default(),
                features: Default::default(),
            },
        },
        MethodName::Aipw => Method::Aipw {
            k: 1,
            propensity: PropensitySpec::Forest {
                forest: Default::default(),
            },
            distreg: DistRegSpec::Forest {
                forest: Default::default(),
            },
        },
    };
    EstimatorSpec::new(method)
}

pub fn write_bench(rows: &[BenchRow], out: Option<&Path>) -> Result<()> {
    let mut w = match out {
        Some(p) => csv::Writer::from_writer(
            Box::new(std::fs::File::create(p).with_context(|| format!("cannot write {}", p.display()))?)
                as Box<dyn std::io::Write>,
        ),
        None => csv::Writer::from_writer(Box::new(std::io::stdout()) as Box<dyn std::io::Write>),
    };
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
