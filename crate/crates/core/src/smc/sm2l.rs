use crate::data::LongDataset;
use crate::error::Result;
use crate::impute::{ImputationConfig, ImputedSet};
use crate::linalg::{cholesky_jittered, draw_precision_normal, inv_gamma, normal_logpdf, std_normal, Chol, DesignMatrix};
use crate::model::AnalysisModel;
use crate::rng::Stream;

use super::jm2l::xty;
use super::{mh_step, run_sampler, Counters, CovariateModelPlan, Regression, Sampler, SmcData, Substantive, VAGUE};

/// Sequential covariate model: `ses` on baseline covariates, then a
/// two-level exposure model with `ses` as a predictor.
struct Sequential {
    sub: Substantive,
    w: DesignMatrix,
    chol_w: Chol,
    gamma: Vec<f64>,
    sigma2_ses: f64,
    dep_model: Regression,
}

impl Sequential {
    fn new(d: &SmcData, model: AnalysisModel) -> Result<Self> {
        let w = d.child_design(&["napz1", "sex", "age", "sdq.child"], true)?;
        let chol_w = cholesky_jittered(&w.gram(), 10, "SES model cross-product")?;
        let z = d.row_design(&["wave", "napz1", "sex", "age", "sdq", "sdq.child"], true)?;
        let nest = d.nest.clone();
        let dep_model = Regression::new(z, vec!["ses".into()], nest, false, true, crate::scalar::sample_variance(&d.dep));
        Ok(Self {
            sub: Substantive::new(d, model, true, false)?,
            gamma: chol_w.solve(&xty(&w, &d.ses)).as_slice().to_vec(),
            sigma2_ses: crate::scalar::sample_variance(&d.ses),
            w,
            chol_w,
            dep_model,
        })
    }

    fn dep_loglik(&self, r: usize, dep: f64, ses: f64) -> f64 {
        normal_logpdf(dep, self.dep_model.mean_with(r, &[ses]), self.dep_model.re.sigma2)
    }
}

impl Sampler for Sequential {
    fn iterate(&mut self, d: &mut SmcData, acc: &mut Counters, rng: &mut Stream) -> Result<()> {
        self.sub.update(d, rng)?;

        let mean = self.chol_w.solve(&xty(&self.w, &d.ses));
        self.gamma = draw_precision_normal(&self.chol_w, &mean, self.sigma2_ses, rng).as_slice().to_vec();
        let nc = d.n_children();
        let rss: f64 = (0..nc).map(|c| (d.ses[c] - crate::linalg::dot(self.w.row(c), &self.gamma)).powi(2)).sum();
        self.sigma2_ses = inv_gamma(VAGUE.0 + nc as f64 / 2.0, VAGUE.1 + rss / 2.0, rng);

        for r in 0..d.n_rows() {
            self.dep_model.design.var.row_mut(r)[0] = d.ses_row(r);
        }
        self.dep_model.update(&d.dep, None, rng)?;

        for target in CovariateModelPlan::SequentialTwoLevelDi.update_order() {
            if target == "ses" {
                for i in 0..d.ses_missing.len() {
                    let c = d.ses_missing[i];
                    let prop = crate::linalg::dot(self.w.row(c), &self.gamma) + self.sigma2_ses.sqrt() * std_normal(rng);
                    let ll = |x: f64| {
                        self.sub.loglik_child(d, c, x)
                            + d.child_rows(c).iter().map(|&r| self.dep_loglik(r, d.dep[r], x)).sum::<f64>()
                    };
                    let (v, ok) = mh_step(d.ses[c], prop, ll, rng);
                    d.ses[c] = v;
                    acc.ses.record(ok);
                }
            } else {
                let sd = self.dep_model.re.sigma2.sqrt();
                for i in 0..d.dep_missing.len() {
                    let r = d.dep_missing[i];
                    let ses = d.ses_row(r);
                    let prop = self.dep_model.mean_with(r, &[ses]) + sd * std_normal(rng);
                    let (v, ok) = mh_step(d.dep[r], prop, |x| self.sub.loglik_row(d, r, x, ses), rng);
                    d.dep[r] = v;
                    acc.dep.record(ok);
                }
            }
        }
        Ok(())
    }

    fn monitor(&self) -> Vec<(String, f64)> {
        self.sub.monitor()
    }
}

/// SMC imputation with a sequential (SES, then exposure) covariate model
/// and school dummy indicators. One chain.
pub fn impute_smc_sm_2l_di(data: &LongDataset, model: AnalysisModel, cfg: &ImputationConfig) -> Result<ImputedSet<LongDataset>> {
    run_sampler(data, cfg, 1, "smc-sm-2l-di", |d, _| Sequential::new(d, model))
}
