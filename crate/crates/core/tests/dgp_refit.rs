use mlmi::data::{Column, ColumnMeta, Frame, Level, Role};
use mlmi::dgp::{generate_complete, Mechanism, ParamSet, ScenarioConfig};
use mlmi::lmm::{fit_lmm, LmmSpec, RandomIntercepts, Term};
use mlmi::model::AnalysisModel;
use mlmi::pooling::fit_substantive;
use mlmi::model::ExtraTerm;
use mlmi::rng::{replication_seed, stream};

#[test]
fn exposure_equation_recovered_by_refit() {
    let model = AnalysisModel::Model1;
    let params = ParamSet::reference(model);
    let cfg = ScenarioConfig::new("refit", 40, 30, model, Mechanism::MarCats);
    let spec = LmmSpec::new(
        "dep",
        ["age", "sex", "napz1", "ses", "dwave"].iter().fold(vec![Term::Intercept], |mut v, t| {
            v.push(Term::main(t));
            v
        }),
        RandomIntercepts::SCHOOL_CHILD,
    );
    let reps = 200;
    let mut est = vec![Vec::with_capacity(reps); 6];
    for i in 0..reps {
        let d = generate_complete(&cfg, &params, &mut stream(replication_seed(77, i))).unwrap();
        let dwave = d.index().iter().map(|h| Some(f64::from(h.wave.unwrap() - 1))).collect();
        let d = d.with_column(Column::new(ColumnMeta::new("dwave", Role::Time, Level::Occasion), dwave)).unwrap();
        let fit = fit_lmm(&spec, &d).unwrap();
        assert!(fit.converged);
        for k in 0..6 {
            est[k].push(fit.beta[k]);
        }
    }
    for (k, truth) in params.delta.iter().enumerate() {
        let m = mlmi::scalar::mean(&est[k]);
        let mcse = mlmi::scalar::sample_variance(&est[k]).sqrt() / (reps as f64).sqrt();
        assert!((m - truth).abs() < 3.0 * mcse, "delta{k}: mean {m} truth {truth} mcse {mcse}");
    }
}

#[test]
fn complete_data_analysis_is_near_truth() {
    // 10 complete datasets of 3600 rows each (36000 rows in aggregate)
    for model in AnalysisModel::ALL {
        let params = ParamSet::reference(model);
        let cfg = ScenarioConfig::new("complete", 40, 30, model, Mechanism::MarCats);
        let mut b1 = Vec::new();
        let mut b3 = Vec::new();
        for i in 0..10 {
            let d = generate_complete(&cfg, &params, &mut stream(replication_seed(5, i))).unwrap();
            let f = fit_substantive(model, ExtraTerm::Computed, &d).unwrap();
            assert!(f.vc.iter().all(|v| *v >= 0.0));
            b1.push(f.beta1.0);
            b3.push(f.beta3.0);
        }
        let (m1, m3) = (mlmi::scalar::mean(&b1), mlmi::scalar::mean(&b3));
        let s1 = mlmi::scalar::sample_variance(&b1).sqrt() / 10f64.sqrt();
        let s3 = mlmi::scalar::sample_variance(&b3).sqrt() / 10f64.sqrt();
        assert!((m1 - model.true_beta1()).abs() < 4.0 * s1, "{model}: beta1 {m1} (mcse {s1})");
        assert!((m3 - model.true_beta3()).abs() < 4.0 * s3, "{model}: beta3 {m3} (mcse {s3})");
    }
}
