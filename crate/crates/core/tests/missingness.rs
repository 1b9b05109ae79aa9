use mlmi::data::Frame;
use mlmi::dgp::{simulate, Mechanism, ParamSet, ScenarioConfig};
use mlmi::model::AnalysisModel;
use mlmi::rng::{replication_seed, stream};

fn average_missing(mechanism: Mechanism, model: AnalysisModel) -> Vec<(u8, f64, f64)> {
    let cfg = ScenarioConfig::new("calib", 20, 15, model, mechanism);
    let params = ParamSet::reference(model);
    let draws = 500;
    let mut totals = [0.0; 3];
    let mut ses_total = 0.0;
    for i in 0..draws {
        let sim = simulate(&cfg, &params, &mut stream(replication_seed(11, i))).unwrap();
        let dep = sim.incomplete.cells("dep").unwrap();
        let ses = sim.incomplete.cells("ses").unwrap();
        let waves = sim.incomplete.complete("wave").unwrap();
        for (k, w) in [3.0, 5.0, 7.0].into_iter().enumerate() {
            let rows: Vec<usize> = (0..dep.len()).filter(|&r| waves[r] == w).collect();
            totals[k] += rows.iter().filter(|&&r| dep[r].is_none()).count() as f64 / rows.len() as f64;
        }
        ses_total += ses.iter().filter(|c| c.is_none()).count() as f64 / ses.len() as f64;
    }
    let mut out: Vec<(u8, f64, f64)> = cfg
        .target_missing
        .iter()
        .zip(totals)
        .map(|((w, t), s)| (*w, *t, s / draws as f64))
        .collect();
    out.push((0, cfg.ses_mcar_rate, ses_total / draws as f64));
    out
}

#[test]
fn missingness_hits_targets_on_average() {
    for mechanism in [Mechanism::MarCats, Mechanism::MarInflated] {
        for (wave, target, got) in average_missing(mechanism, AnalysisModel::Model2) {
            assert!((got - target).abs() < 0.02, "{mechanism} wave {wave}: target {target}, got {got:.4}");
        }
    }
}
