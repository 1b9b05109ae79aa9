use crate::data::LongDataset;
use crate::dgp::{simulate, Mechanism, ParamSet, ScenarioConfig, Simulated};
use crate::model::AnalysisModel;
use crate::rng::stream;

pub(crate) fn simulated(model: AnalysisModel, schools: usize, size: usize, seed: u64) -> Simulated {
    let cfg = ScenarioConfig::new("test", schools, size, model, Mechanism::MarCats);
    simulate(&cfg, &ParamSet::reference(model), &mut stream(seed)).unwrap()
}

/// A small incomplete dataset: 10 schools of 12 children.
pub(crate) fn small_incomplete(model: AnalysisModel, seed: u64) -> LongDataset {
    simulated(model, 10, 12, seed).incomplete
}
