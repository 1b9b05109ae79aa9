use std::fmt;
use std::str::FromStr;

use crate::data::{reshape_long, reshape_wide, LongDataset};
use crate::error::{Error, Result};
use crate::impute::{
    derive_jav_columns, impute_fcs_1l_di_wide, impute_fcs_2l_wide, impute_jm_1l_di_wide, impute_jm_2l_wide,
    passive_predictor_plan, ImputationConfig, ImputedSet, SamplerDiagnostics, Variant,
};
use crate::model::{AnalysisModel, ExtraTerm};
use crate::pooling::{analyse_completed, RepEstimate};
use crate::smc::{impute_smc_jm_2l_di, impute_smc_jm_3l, impute_smc_sm_2l_di};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Family {
    Jm1lDi,
    Fcs1lDi,
    Jm2l,
    Fcs2l,
    SmcJm2lDi,
    SmcSm2lDi,
    SmcJm3l,
}

impl Family {
    fn base_label(self) -> &'static str {
        match self {
            Family::Jm1lDi => "JM-1L-DI-wide",
            Family::Fcs1lDi => "FCS-1L-DI-wide",
            Family::Jm2l => "JM-2L-wide",
            Family::Fcs2l => "FCS-2L-wide",
            Family::SmcJm2lDi => "SMC-JM-2L-DI",
            Family::SmcSm2lDi => "SMC-SM-2L-DI",
            Family::SmcJm3l => "SMC-JM-3L",
        }
    }

    pub fn is_smc(self) -> bool {
        matches!(self, Family::SmcJm2lDi | Family::SmcSm2lDi | Family::SmcJm3l)
    }

    fn is_fcs(self) -> bool {
        matches!(self, Family::Fcs1lDi | Family::Fcs2l)
    }
}

/// An imputation method: a family plus its JAV or passive variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Method {
    pub family: Family,
    pub variant: Variant,
}

const FAMILIES: [Family; 7] = [
    Family::Jm1lDi,
    Family::Fcs1lDi,
    Family::Jm2l,
    Family::Fcs2l,
    Family::SmcJm2lDi,
    Family::SmcSm2lDi,
    Family::SmcJm3l,
];

impl Method {
    pub const fn new(family: Family, variant: Variant) -> Self {
        Self { family, variant }
    }

    pub fn label(&self) -> String {
        let suffix = match self.variant {
            Variant::Plain => "",
            Variant::Jav => "-JAV",
            Variant::PassiveC => "-passive_c",
            Variant::PassiveAll => "-passive_all",
            Variant::Passive => "-passive",
        };
        format!("{}{suffix}", self.family.base_label())
    }

    /// The methods compared for each analysis model, in report order.
    pub fn for_model(model: AnalysisModel) -> Vec<Method> {
        use Family::*;
        use Variant::*;
        let smc = [Method::new(SmcJm2lDi, Plain), Method::new(SmcSm2lDi, Plain), Method::new(SmcJm3l, Plain)];
        let mut out = match model {
            AnalysisModel::Model1 => vec![
                Method::new(Jm1lDi, Plain),
                Method::new(Fcs1lDi, Plain),
                Method::new(Jm2l, Plain),
                Method::new(Fcs2l, Plain),
            ],
            AnalysisModel::Model2 => vec![
                Method::new(Jm1lDi, Plain),
                Method::new(Jm1lDi, Jav),
                Method::new(Fcs1lDi, Plain),
                Method::new(Fcs1lDi, PassiveC),
                Method::new(Fcs1lDi, PassiveAll),
                Method::new(Jm2l, Jav),
                Method::new(Fcs2l, PassiveC),
                Method::new(Fcs2l, PassiveAll),
            ],
            AnalysisModel::Model3 => vec![
                Method::new(Jm1lDi, Plain),
                Method::new(Jm1lDi, Jav),
                Method::new(Fcs1lDi, Plain),
                Method::new(Fcs1lDi, Passive),
                Method::new(Jm2l, Jav),
                Method::new(Fcs2l, Passive),
            ],
        };
        out.extend(smc);
        out
    }

    /// Reject variant and model combinations that have no meaning.
    pub fn check(&self, model: AnalysisModel) -> Result<()> {
        let ok = match (self.variant, model) {
            (Variant::Plain, _) => true,
            (Variant::Jav, m) => !self.family.is_fcs() && !self.family.is_smc() && m != AnalysisModel::Model1,
            (Variant::PassiveC | Variant::PassiveAll, m) => self.family.is_fcs() && m == AnalysisModel::Model2,
            (Variant::Passive, m) => self.family.is_fcs() && m == AnalysisModel::Model3,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::MethodModelMismatch { method: self.label(), model: model.to_string() })
        }
    }

    /// How the analysis obtains the model's extra term.
    pub fn extra_term(&self) -> ExtraTerm {
        if self.variant == Variant::Jav {
            ExtraTerm::Stored
        } else {
            ExtraTerm::Computed
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        for family in FAMILIES {
            let Some(rest) = s.strip_prefix(family.base_label()) else { continue };
            let variant = match rest {
                "" => Variant::Plain,
                "-JAV" => Variant::Jav,
                "-passive_c" => Variant::PassiveC,
                "-passive_all" => Variant::PassiveAll,
                "-passive" => Variant::Passive,
                _ => continue,
            };
            return Ok(Method::new(family, variant));
        }
        Err(Error::UnknownMethod(s.to_string()))
    }
}

/// Iteration settings per method family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Preset {
    /// Reduced settings for desk-top runs.
    Desk,
    /// Full-length settings.
    Paper,
}

impl Preset {
    pub fn m(self) -> usize {
        match self {
            Preset::Desk => 10,
            Preset::Paper => 20,
        }
    }

    pub fn replications(self) -> usize {
        match self {
            Preset::Desk => 200,
            Preset::Paper => 1000,
        }
    }

    /// (burn-in or cycles, between-imputation iterations) for a family.
    pub fn iterations(self, family: Family) -> (usize, usize) {
        use Family::*;
        match (self, family) {
            (Preset::Paper, Jm1lDi | Jm2l) => (1000, 100),
            (Preset::Paper, Fcs1lDi | Fcs2l) => (10, 1),
            (Preset::Paper, SmcJm2lDi) => (500, 10),
            (Preset::Paper, SmcSm2lDi) => (1000, 100),
            (Preset::Paper, SmcJm3l) => (2500, 100),
            (Preset::Desk, Jm1lDi | Jm2l) => (500, 50),
            (Preset::Desk, Fcs1lDi | Fcs2l) => (5, 1),
            (Preset::Desk, SmcJm2lDi) => (250, 5),
            (Preset::Desk, SmcSm2lDi) => (500, 50),
            (Preset::Desk, SmcJm3l) => (500, 20),
        }
    }

    pub fn config(self, method: &Method, seed: u64) -> ImputationConfig {
        let (burn_in, between) = self.iterations(method.family);
        ImputationConfig::new(self.m(), burn_in, between, seed).with_variant(method.variant)
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::Desk => "desk",
            Preset::Paper => "paper",
        })
    }
}

impl FromStr for Preset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "desk" => Ok(Preset::Desk),
            "paper" | "full" => Ok(Preset::Paper),
            other => Err(Error::Config(format!("unknown preset `{other}`"))),
        }
    }
}

/// Impute with `method` and return the completed long datasets.
pub fn impute(
    method: &Method,
    model: AnalysisModel,
    incomplete: &LongDataset,
    cfg: &ImputationConfig,
) -> Result<ImputedSet<LongDataset>> {
    method.check(model)?;
    if method.family.is_smc() {
        return match method.family {
            Family::SmcJm2lDi => impute_smc_jm_2l_di(incomplete, model, cfg),
            Family::SmcSm2lDi => impute_smc_sm_2l_di(incomplete, model, cfg),
            _ => impute_smc_jm_3l(incomplete, model, cfg),
        };
    }
    let mut wide = reshape_wide(incomplete)?;
    if method.variant == Variant::Jav {
        wide = derive_jav_columns(&wide, model)?;
    }
    let set = match method.family {
        Family::Jm1lDi => impute_jm_1l_di_wide(&wide, cfg)?,
        Family::Jm2l => impute_jm_2l_wide(&wide, cfg)?,
        family => {
            let plan = passive_predictor_plan(&wide, model, method.variant)?;
            if family == Family::Fcs1lDi {
                impute_fcs_1l_di_wide(&wide, cfg, &plan)?
            } else {
                impute_fcs_2l_wide(&wide, cfg, &plan)?
            }
        }
    };
    let datasets = set.datasets.iter().map(reshape_long).collect::<Result<Vec<_>>>()?;
    Ok(ImputedSet { datasets, diagnostics: set.diagnostics })
}

/// Impute, fit the analysis model to every completed dataset and pool.
pub fn impute_and_analyse(
    method: &Method,
    model: AnalysisModel,
    incomplete: &LongDataset,
    cfg: &ImputationConfig,
) -> Result<(RepEstimate, SamplerDiagnostics)> {
    let set = impute(method, model, incomplete, cfg)?;
    let est = analyse_completed(model, method.extra_term(), &set.datasets)?;
    Ok((est, set.diagnostics))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_round_trip_and_counts() {
        let counts = [7, 11, 9];
        for (model, n) in AnalysisModel::ALL.into_iter().zip(counts) {
            let ms = Method::for_model(model);
            assert_eq!(ms.len(), n, "{model}");
            for m in ms {
                assert_eq!(m.label().parse::<Method>().unwrap(), m);
                m.check(model).unwrap();
            }
        }
        assert_eq!(Method::for_model(AnalysisModel::Model2)[3].label(), "FCS-1L-DI-wide-passive_c");
        assert!("FCS-3L".parse::<Method>().is_err());
        assert!("JM-1L-DI-wide-JAV".parse::<Method>().unwrap().check(AnalysisModel::Model1).is_err());
        assert!("FCS-2L-wide-passive".parse::<Method>().unwrap().check(AnalysisModel::Model2).is_err());
    }

    #[test]
    fn presets() {
        assert_eq!(Preset::Desk.iterations(Family::SmcJm3l), (500, 20));
        assert_eq!(Preset::Paper.iterations(Family::Jm2l), (1000, 100));
        assert_eq!(Preset::Paper.config(&"FCS-2L-wide".parse().unwrap(), 1).burn_in, 10);
        assert_eq!("paper".parse::<Preset>().unwrap(), Preset::Paper);
    }
}
