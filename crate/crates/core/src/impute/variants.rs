use std::collections::BTreeMap;

use crate::data::{Cell, ColumnMeta, Derivation, Frame, Level, Role, WideDataset};
use crate::error::{Error, Result};
use crate::model::AnalysisModel;

use super::Variant;

/// Extra predictors per imputation target (wide column names), recomputed
/// from current values at every visit.
pub type PassivePlan = BTreeMap<String, Vec<Derivation>>;

fn mismatch(method: &str, model: AnalysisModel) -> Error {
    Error::MethodModelMismatch { method: method.to_string(), model: model.to_string() }
}

fn wide(data: &WideDataset, base: &str, wave: u8) -> Result<String> {
    data.wide_name(base, wave).ok_or_else(|| Error::UnknownColumn(base.to_string()))
}

/// Append the just-another-variable columns (`depses` or `depsq` per
/// exposure wave), observed where all parents are observed.
pub fn derive_jav_columns(data: &WideDataset, model: AnalysisModel) -> Result<WideDataset> {
    let base = model.jav_base().ok_or_else(|| mismatch("JAV", model))?;
    let dep_meta = data
        .time_varying()
        .iter()
        .find(|m| m.name == "dep")
        .ok_or_else(|| Error::UnknownColumn("dep".into()))?;
    let derivation = match model {
        AnalysisModel::Model2 => Derivation::Product("dep".into(), "ses".into()),
        _ => Derivation::Square("dep".into()),
    };
    let meta = ColumnMeta::new(base, Role::Derived, Level::Occasion).lagged(dep_meta.wave_offset).derived(derivation);
    let ses = data.cells("ses")?;
    let mut per_wave = Vec::new();
    for &w in data.waves() {
        let dep = data.cells(&wide(data, "dep", w)?)?;
        let values: Vec<Cell> = match model {
            AnalysisModel::Model2 => dep.iter().zip(ses.iter()).map(|(d, s)| Some((*d)? * (*s)?)).collect(),
            _ => dep.iter().map(|d| d.map(|d| d * d)).collect(),
        };
        per_wave.push(values);
    }
    data.with_time_varying(meta, per_wave)
}

/// Passive terms for the FCS imputers. Plain and JAV variants have none.
pub fn passive_predictor_plan(data: &WideDataset, model: AnalysisModel, variant: Variant) -> Result<PassivePlan> {
    let mut plan = PassivePlan::new();
    let pairs: Vec<(String, String)> = data
        .waves()
        .iter()
        .map(|&w| Ok((wide(data, "dep", w)?, wide(data, "napz", w)?)))
        .collect::<Result<_>>()?;
    match (model, variant) {
        (_, Variant::Plain | Variant::Jav) => {}
        (AnalysisModel::Model2, Variant::PassiveC | Variant::PassiveAll) => {
            for (dep, napz) in &pairs {
                let terms = if variant == Variant::PassiveC {
                    vec![Derivation::Product(napz.clone(), "ses".into())]
                } else {
                    pairs.iter().map(|(_, n)| Derivation::Product(n.clone(), "ses".into())).collect()
                };
                plan.insert(dep.clone(), terms);
            }
            plan.insert(
                "ses".into(),
                pairs.iter().map(|(d, n)| Derivation::Product(n.clone(), d.clone())).collect(),
            );
        }
        (AnalysisModel::Model3, Variant::Passive) => {
            for (dep, _) in &pairs {
                let others = pairs.iter().filter(|(d, _)| d != dep).map(|(d, _)| Derivation::Square(d.clone()));
                plan.insert(dep.clone(), others.collect());
            }
            plan.insert("ses".into(), pairs.iter().map(|(d, _)| Derivation::Square(d.clone())).collect());
        }
        (m, v) => return Err(mismatch(&format!("FCS-{v}"), m)),
    }
    Ok(plan)
}
