//! The three substantive analysis models and their reported parameters.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Outcome model: random-intercept LMM for `napz` at waves 3/5/7 with the
/// lagged exposure `dep`, `wave`, baseline confounders and one extra term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AnalysisModel {
    /// `dep x wave` interaction.
    Model1,
    /// `dep x ses` interaction.
    Model2,
    /// Quadratic `dep^2`.
    Model3,
}

/// How the model's extra term is obtained from a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExtraTerm {
    /// Recompute from the parents (`dep*wave`, `dep*ses`, `dep^2`).
    Computed,
    /// Read a stored derived column as-is (JAV imputations).
    Stored,
}

pub const CONFOUNDERS: [&str; 4] = ["napz1", "sex", "ses", "age"];

impl AnalysisModel {
    pub const ALL: [AnalysisModel; 3] = [AnalysisModel::Model1, AnalysisModel::Model2, AnalysisModel::Model3];

    pub fn number(self) -> u8 {
        match self {
            AnalysisModel::Model1 => 1,
            AnalysisModel::Model2 => 2,
            AnalysisModel::Model3 => 3,
        }
    }

    pub fn true_beta1(self) -> f64 {
        match self {
            AnalysisModel::Model1 => -0.07,
            AnalysisModel::Model2 | AnalysisModel::Model3 => -0.024,
        }
    }

    pub fn true_beta3(self) -> f64 {
        match self {
            AnalysisModel::Model1 => 0.013,
            AnalysisModel::Model2 => 0.023,
            AnalysisModel::Model3 => -0.009,
        }
    }

    /// Value of the extra term given the exposure, wave and SES.
    pub fn extra(self, dep: f64, wave: f64, ses: f64) -> f64 {
        match self {
            AnalysisModel::Model1 => dep * wave,
            AnalysisModel::Model2 => dep * ses,
            AnalysisModel::Model3 => dep * dep,
        }
    }

    /// Name of the stored JAV column in long format, if the model has one.
    pub fn jav_base(self) -> Option<&'static str> {
        match self {
            AnalysisModel::Model1 => None,
            AnalysisModel::Model2 => Some("depses"),
            AnalysisModel::Model3 => Some("depsq"),
        }
    }

    pub fn extra_label(self) -> &'static str {
        match self {
            AnalysisModel::Model1 => "dep:wave",
            AnalysisModel::Model2 => "dep:ses",
            AnalysisModel::Model3 => "dep^2",
        }
    }

    /// True values of every reported parameter, in report order.
    pub fn truths(self) -> Vec<(Parameter, f64)> {
        let vc = crate::dgp::ParamSet::reference(self).true_variance_components();
        vec![
            (Parameter::Beta1, self.true_beta1()),
            (Parameter::Beta3, self.true_beta3()),
            (Parameter::Vc3, vc[0]),
            (Parameter::Vc2, vc[1]),
            (Parameter::Vc1, vc[2]),
        ]
    }
}

impl fmt::Display for AnalysisModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "model{}", self.number())
    }
}

impl FromStr for AnalysisModel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "1" | "model1" => Ok(AnalysisModel::Model1),
            "2" | "model2" => Ok(AnalysisModel::Model2),
            "3" | "model3" => Ok(AnalysisModel::Model3),
            other => Err(Error::Config(format!("unknown analysis model `{other}`"))),
        }
    }
}

/// Parameters reported per replication.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Parameter {
    Beta1,
    Beta3,
    Vc3,
    Vc2,
    Vc1,
}

impl Parameter {
    pub const ALL: [Parameter; 5] = [Parameter::Beta1, Parameter::Beta3, Parameter::Vc3, Parameter::Vc2, Parameter::Vc1];

    pub fn is_variance_component(self) -> bool {
        matches!(self, Parameter::Vc3 | Parameter::Vc2 | Parameter::Vc1)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Parameter::Beta1 => "beta1",
            Parameter::Beta3 => "beta3",
            Parameter::Vc3 => "vc3",
            Parameter::Vc2 => "vc2",
            Parameter::Vc1 => "vc1",
        }
    }
}

impl fmt::Display for Parameter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Parameter {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Parameter::ALL
            .into_iter()
            .find(|p| p.as_str() == s.trim())
            .ok_or_else(|| Error::Config(format!("unknown parameter `{s}`")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn truths_per_model() {
        assert_eq!(AnalysisModel::Model1.true_beta1(), -0.07);
        assert_eq!(AnalysisModel::Model1.true_beta3(), 0.013);
        assert_eq!(AnalysisModel::Model2.true_beta3(), 0.023);
        assert_eq!(AnalysisModel::Model3.true_beta3(), -0.009);
        let t = AnalysisModel::Model2.truths();
        assert!((t[2].1 - 0.04).abs() < 1e-12 && (t[3].1 - 0.49).abs() < 1e-12 && (t[4].1 - 0.49).abs() < 1e-12);
    }

    #[test]
    fn names_round_trip() {
        for m in AnalysisModel::ALL {
            assert_eq!(m.to_string().parse::<AnalysisModel>().unwrap(), m);
        }
        for p in Parameter::ALL {
            assert_eq!(p.as_str().parse::<Parameter>().unwrap(), p);
        }
    }
}
