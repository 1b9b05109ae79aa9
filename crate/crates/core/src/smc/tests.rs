use rand::{Rng, SeedableRng};

use super::*;
use crate::impute::testutil::simulated;
use crate::linalg::std_normal;
use crate::rng::stream;
use crate::scalar::{mean, sample_variance};

#[test]
fn mh_step_uses_one_uniform() {
    let mut a = stream(1);
    let mut b = stream(1);
    let _ = mh_step(0.0, 1.0, |x| -x * x, &mut a);
    let _: f64 = b.random();
    assert_eq!(a.random::<u64>(), b.random::<u64>());
    let _ = mh_step(0.0, f64::NAN, |x| -x * x, &mut a);
    let _: f64 = b.random();
    assert_eq!(a.random::<u64>(), b.random::<u64>());
}

#[test]
fn mh_step_non_finite_handling() {
    let mut rng = stream(2);
    assert_eq!(mh_step(0.5, f64::INFINITY, |_| 0.0, &mut rng), (0.5, false));
    assert_eq!(mh_step(0.5, 1.0, |x| if x > 0.9 { f64::NAN } else { 0.0 }, &mut rng), (0.5, false));
    assert_eq!(mh_step(f64::NAN, 1.0, |_| 0.0, &mut rng), (1.0, true));
    // an equal-likelihood proposal is always accepted
    assert_eq!(mh_step(0.0, 2.0, |_| -3.0, &mut rng), (2.0, true));
}

/// Independence sampler with a N(0, 1) proposal and likelihood N(1, 0.5)
/// targets the conjugate posterior N(2/3, 1/3).
#[test]
fn independence_sampler_reaches_conjugate_posterior() {
    let mut rng = stream(3);
    let mut x = 0.0;
    let mut draws = Vec::with_capacity(200_000);
    for _ in 0..200_000 {
        let prop = std_normal(&mut rng);
        x = mh_step(x, prop, |v| -(v - 1.0) * (v - 1.0) / (2.0 * 0.5), &mut rng).0;
        draws.push(x);
    }
    assert!((mean(&draws) - 2.0 / 3.0).abs() < 0.01, "{}", mean(&draws));
    assert!((sample_variance(&draws) - 1.0 / 3.0).abs() < 0.01, "{}", sample_variance(&draws));
}

/// On five states the empirical transition matrix satisfies detailed
/// balance with respect to the target proportional to proposal times
/// likelihood.
#[test]
fn five_state_detailed_balance() {
    let q = [0.1, 0.3, 0.2, 0.25, 0.15];
    let like = [1.0f64, 0.2, 2.0, 0.7, 1.3];
    let z: f64 = q.iter().zip(&like).map(|(a, b)| a * b).sum();
    let pi: Vec<f64> = q.iter().zip(&like).map(|(a, b)| a * b / z).collect();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
    let mut counts = [[0usize; 5]; 5];
    let mut state = 0usize;
    let n = 400_000;
    for _ in 0..n {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut prop = 4;
        for (k, p) in q.iter().enumerate() {
            acc += p;
            if u < acc {
                prop = k;
                break;
            }
        }
        let next = mh_step(state as f64, prop as f64, |v| like[v as usize].ln(), &mut rng).0 as usize;
        counts[state][next] += 1;
        state = next;
    }
    for i in 0..5 {
        let freq = counts[i].iter().sum::<usize>() as f64 / n as f64;
        assert!((freq - pi[i]).abs() < 0.01, "state {i}: {freq} vs {}", pi[i]);
        for j in 0..5 {
            if i != j {
                let fij = counts[i][j] as f64 / n as f64;
                let fji = counts[j][i] as f64 / n as f64;
                assert!((fij - fji).abs() < 0.004, "flow {i}->{j} {fij} vs {fji}");
            }
        }
    }
}

#[test]
fn psr_cases() {
    let r = psr(&[vec![1.0, 2.0, 3.0], vec![2.0, 3.0, 4.0]]).unwrap();
    assert!((r - (7.0f64 / 6.0).sqrt()).abs() < 1e-12, "{r}");
    assert_eq!(psr(&[vec![1.0; 4], vec![1.0; 4]]).unwrap(), 1.0);
    assert_eq!(psr(&[vec![1.0; 4], vec![2.0; 4]]).unwrap(), f64::INFINITY);
    assert!(psr(&[vec![1.0, 2.0]]).is_err());
    assert!(psr(&[vec![1.0, 2.0], vec![1.0]]).is_err());
    let mut rng = stream(5);
    let chains: Vec<Vec<f64>> = (0..4).map(|_| (0..5000).map(|_| std_normal(&mut rng)).collect()).collect();
    let r = psr(&chains).unwrap();
    assert!((r - 1.0).abs() < 0.01, "{r}");
}

#[test]
fn update_orders() {
    assert_eq!(CovariateModelPlan::JointTwoLevelDi.update_order(), ["dep", "ses"]);
    assert_eq!(CovariateModelPlan::SequentialTwoLevelDi.update_order(), ["ses", "dep"]);
}

type Imputer = fn(&LongDataset, AnalysisModel, &ImputationConfig) -> Result<ImputedSet<LongDataset>>;

fn samplers() -> [(&'static str, Imputer); 3] {
    [("jm2l", impute_smc_jm_2l_di), ("sm2l", impute_smc_sm_2l_di), ("jm3l", impute_smc_jm_3l)]
}

#[test]
fn samplers_fill_missing_and_keep_observed() {
    for model in AnalysisModel::ALL {
        let sim = simulated(model, 8, 10, 11 + model.number() as u64);
        let inc = &sim.incomplete;
        let cfg = ImputationConfig::new(4, 20, 3, 7);
        for (name, f) in samplers() {
            let set = f(inc, model, &cfg).unwrap();
            assert_eq!(set.datasets.len(), 4, "{name}");
            for d in &set.datasets {
                d.check_levels().unwrap();
                for col in ["dep", "ses"] {
                    let a = inc.cells(col).unwrap();
                    let b = d.complete(col).unwrap();
                    for (x, y) in a.iter().zip(&b) {
                        assert!(y.is_finite());
                        if let Some(x) = x {
                            assert_eq!(x, y, "{name}: observed {col} changed");
                        }
                    }
                }
                assert_eq!(d.cells("napz").unwrap(), inc.cells("napz").unwrap());
            }
            for (t, rate) in &set.diagnostics.acceptance {
                assert!(*rate > 0.0 && *rate <= 1.0, "{name} {t} acceptance {rate}");
            }
        }
    }
}

#[test]
fn three_level_sampler_reports_psr_for_two_chains() {
    let sim = simulated(AnalysisModel::Model1, 8, 10, 21);
    let set = impute_smc_jm_3l(&sim.incomplete, AnalysisModel::Model1, &ImputationConfig::new(4, 40, 5, 3)).unwrap();
    assert_eq!(set.diagnostics.traces.len(), 2);
    assert!(set.diagnostics.psr.iter().any(|(l, _)| l == "dep"));
    assert!(set.diagnostics.psr.iter().all(|(_, r)| r.is_finite() && *r > 0.5));
    let mut manifest = ImputationConfig::new(2, 10, 2, 3);
    manifest.cluster_means = crate::impute::ClusterMeans::Manifest;
    assert_eq!(impute_smc_jm_3l(&sim.incomplete, AnalysisModel::Model1, &manifest).unwrap().datasets.len(), 2);
}

#[test]
fn samplers_are_deterministic() {
    let sim = simulated(AnalysisModel::Model2, 6, 8, 31);
    let cfg = ImputationConfig::new(2, 5, 2, 99);
    for (name, f) in samplers() {
        let a = f(&sim.incomplete, AnalysisModel::Model2, &cfg).unwrap();
        let b = f(&sim.incomplete, AnalysisModel::Model2, &cfg).unwrap();
        assert_eq!(a.datasets, b.datasets, "{name}");
    }
}

/// With no missing data the samplers return the input unchanged.
#[test]
fn complete_input_unchanged() {
    let sim = simulated(AnalysisModel::Model3, 5, 6, 41);
    for (name, f) in samplers() {
        let set = f(&sim.complete, AnalysisModel::Model3, &ImputationConfig::new(2, 4, 1, 1)).unwrap();
        assert!(set.datasets.iter().all(|d| *d == sim.complete), "{name}");
    }
}
