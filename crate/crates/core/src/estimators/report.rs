use serde::{Deserialize, Serialize};

use crate::model::WinStats;

/// Which population quantity a report estimates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimandKind {
    TauStar,
    TauPop,
    /// Not identifiable from observed data; only simulators produce it.
    TauIndivOracleOnly,
}

/// Confidence interval on the win proportion and its WR / NB images.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CiReport {
    pub method: String,
    pub level: f64,
    #[serde(with = "real")]
    pub lo: f64,
    #[serde(with = "real")]
    pub hi: f64,
    #[serde(with = "real_pair")]
    pub wr: (f64, f64),
    pub nb: (f64, f64),
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replicates: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub n: usize,
    pub n_control: usize,
    pub n_treated: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_inference: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_pairs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pairing: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub propensity: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distreg: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

/// Result of one estimator run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub method: String,
    pub estimand: Option<EstimandKind>,
    pub tau_hat: f64,
    /// `tau / (1 - tau)`.
    #[serde(with = "real")]
    pub wr_hat: f64,
    /// `2 tau - 1`.
    pub nb_hat: f64,
    /// Estimate under the loss contrast `w(y' | y)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_loss_hat: Option<f64>,
    /// `tau_win / tau_loss`.
    #[serde(default, with = "opt_real", skip_serializing_if = "Option::is_none")]
    pub wr_ratio_hat: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub win_stats: Option<WinStats>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ci: Option<CiReport>,
    pub meta: ReportMeta,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// `tau / (1 - tau)`, `+inf` at `tau = 1`.
pub fn wr_from_tau(tau: f64) -> f64 {
    if tau >= 1.0 {
        f64::INFINITY
    } else {
        tau / (1.0 - tau)
    }
}

pub fn nb_from_tau(tau: f64) -> f64 {
    2.0 * tau - 1.0
}

impl EstimateReport {
    pub fn from_tau(method: &str, estimand: Option<EstimandKind>, tau: f64, meta: ReportMeta) -> Self {
        EstimateReport {
            method: method.to_string(),
            estimand,
            tau_hat: tau,
            wr_hat: wr_from_tau(tau),
            nb_hat: nb_from_tau(tau),
            tau_loss_hat: None,
            wr_ratio_hat: None,
            win_stats: None,
            ci: None,
            meta,
            warnings: Vec::new(),
        }
    }

    pub(crate) fn with_loss(mut self, tau_loss: f64) -> Self {
        self.tau_loss_hat = Some(tau_loss);
        self.wr_ratio_hat = super::wr_from_two_taus(self.tau_hat, tau_loss).ok();
        self
    }

    /// One-line human summary.
    pub fn summary_line(&self) -> String {
        let mut s = format!(
            "{}: tau={:.4} WR={} NB={:.4}",
            self.method,
            self.tau_hat,
            fmt_real(self.wr_hat),
            self.nb_hat
        );
        if let Some(r) = self.wr_ratio_hat {
            s.push_str(&format!(" WR(win/loss)={}", fmt_real(r)));
        }
        if let Some(ci) = &self.ci {
            s.push_str(&format!(
                " {:.0}% CI tau [{:.4}, {:.4}] WR [{}, {}] ({})",
                ci.level * 100.0,
                ci.lo,
                ci.hi,
                fmt_real(ci.wr.0),
                fmt_real(ci.wr.1),
                ci.method
            ));
        }
        s
    }
}

fn fmt_real(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.4}")
    } else {
        real::label(v).to_string()
    }
}

/// Serializes non-finite floats as the strings `"inf"`, `"-inf"`, `"nan"`.
pub mod real {
    use serde::{Deserialize, Deserializer, Serializer};

    pub(crate) fn label(v: f64) -> &'static str {
        if v.is_nan() {
            "nan"
        } else if v > 0.0 {
            "inf"
        } else {
            "-inf"
        }
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_str(label(*v))
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    pub(crate) enum Repr {
        Num(f64),
        Str(String),
    }

    impl Repr {
        pub(crate) fn value<E: serde::de::Error>(self) -> Result<f64, E> {
            match self {
                Repr::Num(v) => Ok(v),
                Repr::Str(s) => match s.as_str() {
                    "inf" | "+inf" | "infinity" => Ok(f64::INFINITY),
                    "-inf" | "-infinity" => Ok(f64::NEG_INFINITY),
                    "nan" => Ok(f64::NAN),
                    other => Err(E::custom(format!("expected a number, got '{other}'"))),
                },
            }
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Repr::deserialize(d)?.value()
    }
}

pub mod opt_real {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(v) => super::real::serialize(v, s),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        Option::<super::real::Repr>::deserialize(d)?
            .map(|r| r.value())
            .transpose()
    }
}

pub mod real_pair {
    use serde::ser::SerializeTuple;
    use serde::{Deserialize, Deserializer, Serializer};

    struct Wrap(f64);

    impl serde::Serialize for Wrap {
        fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
            super::real::serialize(&self.0, s)
        }
    }

    pub fn serialize<S: Serializer>(v: &(f64, f64), s: S) -> Result<S::Ok, S::Error> {
        let mut t = s.serialize_tuple(2)?;
        t.serialize_element(&Wrap(v.0))?;
        t.serialize_element(&Wrap(v.1))?;
        t.end()
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<(f64, f64), D::Error> {
        let (a, b) = <(super::real::Repr, super::real::Repr)>::deserialize(d)?;
        Ok((a.value()?, b.value()?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn infinite_ratio_round_trips() {
        let mut r = EstimateReport::from_tau("knn", Some(EstimandKind::TauStar), 1.0, ReportMeta::default());
        r.wr_ratio_hat = Some(f64::INFINITY);
        let s = serde_json::to_string(&r).unwrap();
        assert!(s.contains("\"wr_hat\":\"inf\""));
        let back: EstimateReport = serde_json::from_str(&s).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn transforms() {
        assert_eq!(wr_from_tau(0.5), 1.0);
        assert_eq!(nb_from_tau(0.5), 0.0);
        assert_eq!(wr_from_tau(1.0), f64::INFINITY);
        assert!((wr_from_tau(2.0 / 3.0) - 2.0).abs() < 1e-15);
    }
}
