use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::model::Parameter;
use crate::scalar::{mean, sample_variance, Real};

use super::ResultRecord;

/// Simulation performance of one method for one parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics<T> {
    pub n: usize,
    pub average: T,
    pub bias: T,
    /// Percent of the true value.
    pub relative_bias: T,
    /// Standard deviation of the estimates across replications.
    pub emp_se: T,
    /// Average pooled standard error.
    pub model_se: Option<T>,
    /// Percent of intervals containing the true value.
    pub coverage: Option<T>,
    /// Monte Carlo standard error of the average.
    pub mc_se: T,
}

/// Metrics of `estimates` against `truth`. `ses` and `covered` may be empty
/// (variance components have neither).
pub fn compute_metrics<T: Real>(estimates: &[T], ses: &[T], covered: &[bool], truth: T) -> Result<Metrics<T>> {
    let n = estimates.len();
    if n == 0 {
        return Err(Error::InvalidArgument("no estimates to summarise".into()));
    }
    if (!ses.is_empty() && ses.len() != n) || (!covered.is_empty() && covered.len() != n) {
        return Err(Error::InvalidArgument("estimates, standard errors and coverage differ in length".into()));
    }
    let average = mean(estimates);
    let bias = average - truth;
    let emp_se = if n > 1 { sample_variance(estimates).sqrt() } else { T::nan() };
    let hundred = T::lit(100.0);
    Ok(Metrics {
        n,
        average,
        bias,
        relative_bias: hundred * bias / truth,
        emp_se,
        model_se: (!ses.is_empty()).then(|| mean(ses)),
        coverage: (!covered.is_empty())
            .then(|| hundred * T::from_usize_lossy(covered.iter().filter(|&&c| c).count()) / T::from_usize_lossy(n)),
        mc_se: emp_se / T::from_usize_lossy(n).sqrt(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub model: String,
    pub mechanism: String,
    pub cluster_scenario: String,
    pub method: String,
    pub parameter: Parameter,
    pub truth: f64,
    pub metrics: Metrics<f64>,
    /// Replications without a usable estimate.
    pub failures: usize,
}

/// Group result records by (model, mechanism, cluster scenario, method,
/// parameter) and compute metrics. `truth` supplies the true value for a
/// record; groups without one are skipped.
pub fn summarise(records: &[ResultRecord], truth: impl Fn(&ResultRecord) -> Option<f64>) -> Result<Vec<SummaryRow>> {
    type Key = (String, String, String, String, Parameter);
    let mut groups: BTreeMap<Key, (f64, Vec<&ResultRecord>)> = BTreeMap::new();
    let mut order: Vec<Key> = Vec::new();
    for r in records {
        let Some(t) = truth(r) else { continue };
        let key = (r.model.clone(), r.mechanism.clone(), r.cluster_scenario.clone(), r.method.clone(), r.parameter);
        groups
            .entry(key.clone())
            .or_insert_with(|| {
                order.push(key);
                (t, Vec::new())
            })
            .1
            .push(r);
    }
    let mut out = Vec::new();
    for key in order {
        let (t, recs) = &groups[&key];
        let ok: Vec<&&ResultRecord> = recs.iter().filter(|r| r.error.is_none() && r.estimate.is_finite()).collect();
        if ok.is_empty() {
            continue;
        }
        let est: Vec<f64> = ok.iter().map(|r| r.estimate).collect();
        let (ses, cov): (Vec<f64>, Vec<bool>) = if key.4.is_variance_component() {
            (Vec::new(), Vec::new())
        } else {
            ok.iter().map(|r| (r.se, r.covers(*t).unwrap_or(false))).unzip()
        };
        out.push(SummaryRow {
            model: key.0.clone(),
            mechanism: key.1.clone(),
            cluster_scenario: key.2.clone(),
            method: key.3.clone(),
            parameter: key.4,
            truth: *t,
            metrics: compute_metrics(&est, &ses, &cov, *t)?,
            failures: recs.len() - ok.len(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hand_worked_metrics() {
        let m = compute_metrics(&[1.0, 2.0, 3.0, 6.0], &[0.5, 0.5, 1.0, 1.0], &[true, true, false, true], 2.0).unwrap();
        assert_eq!(m.average, 3.0);
        assert_eq!(m.bias, 1.0);
        assert_eq!(m.relative_bias, 50.0);
        assert!((m.emp_se - (14.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert_eq!(m.model_se, Some(0.75));
        assert_eq!(m.coverage, Some(75.0));
        assert!((m.mc_se - m.emp_se / 2.0).abs() < 1e-15);
    }

    #[test]
    fn variance_component_metrics_have_no_coverage() {
        let m = compute_metrics(&[0.5f32, 0.4], &[], &[], 0.49).unwrap();
        assert!(m.model_se.is_none() && m.coverage.is_none());
        assert!((m.relative_bias - (0.45 - 0.49) / 0.49 * 100.0).abs() < 1e-4);
        assert!(compute_metrics::<f64>(&[], &[], &[], 1.0).is_err());
        assert!(compute_metrics(&[1.0], &[1.0, 2.0], &[], 1.0).is_err());
    }

    proptest! {
        #[test]
        fn shift_moves_bias_not_spread(est in proptest::collection::vec(-5.0f64..5.0, 2..40), shift in -3.0f64..3.0) {
            let a = compute_metrics(&est, &[], &[], 1.5).unwrap();
            let shifted: Vec<f64> = est.iter().map(|e| e + shift).collect();
            let b = compute_metrics(&shifted, &[], &[], 1.5).unwrap();
            prop_assert!((b.bias - a.bias - shift).abs() < 1e-9);
            prop_assert!((b.emp_se - a.emp_se).abs() < 1e-9);
        }
    }
}
