use crate::data::LongDataset;
use crate::error::Result;
use crate::impute::ri::Nesting;
use crate::impute::{ClusterMeans, ImputationConfig, ImputedSet};
use crate::linalg::{cholesky_jittered, draw_precision_normal, normal_logpdf, std_normal, Chol, DesignMatrix};
use crate::model::AnalysisModel;
use crate::rng::Stream;

use super::jm2l::xty;
use super::{mh_step, run_sampler, Counters, CovariateModelPlan, Regression, Sampler, SmcData, Substantive};

/// Three-level covariate model: `dep = z k + g + h + e` with school and
/// child intercepts, and `ses = w a + l m + s + u` where `m` is the child
/// mean of the exposure (the latent `h`, or the manifest average).
struct ThreeLevel {
    sub: Substantive,
    means: ClusterMeans,
    z: DesignMatrix,
    chol_z: Chol,
    kappa: Vec<f64>,
    dep_re: crate::impute::ri::RandomEffects,
    ses_model: Regression,
}

impl ThreeLevel {
    fn new(d: &SmcData, model: AnalysisModel, means: ClusterMeans) -> Result<Self> {
        let z = d.row_design(&["wave", "napz1", "sex", "age", "sdq", "sdq.child", "sdq.school"], false)?;
        let chol_z = cholesky_jittered(&z.gram(), 10, "exposure model cross-product")?;
        let w = d.child_design(&["napz1", "sex", "age", "sdq.child", "sdq.school"], false)?;
        let child_nest = Nesting::new(d.nest_index(), &d.child_row);
        let label = match means {
            ClusterMeans::Latent => "child effect of dep",
            ClusterMeans::Manifest => "child mean of dep",
        };
        let ses_model = Regression::new(w, vec![label.into()], child_nest, true, false, crate::scalar::sample_variance(&d.ses));
        let mut dep_re = crate::impute::ri::RandomEffects::new(&d.nest, true, true, super::VAGUE, crate::scalar::sample_variance(&d.dep));
        dep_re.tau_school = 0.1 * dep_re.sigma2;
        dep_re.tau_child = 0.5 * dep_re.sigma2;
        Ok(Self {
            sub: Substantive::new(d, model, false, true)?,
            means,
            kappa: chol_z.solve(&xty(&z, &d.dep)).as_slice().to_vec(),
            z,
            chol_z,
            dep_re,
            ses_model,
        })
    }

    fn child_mean(&self, d: &SmcData, c: usize) -> f64 {
        match self.means {
            ClusterMeans::Latent => self.dep_re.child.as_ref().unwrap()[c],
            ClusterMeans::Manifest => {
                let rows = d.child_rows(c);
                rows.iter().map(|&r| d.dep[r]).sum::<f64>() / rows.len() as f64
            }
        }
    }

    fn ses_loglik(&self, c: usize, ses: f64, child_mean: f64) -> f64 {
        normal_logpdf(ses, self.ses_model.mean_with(c, &[child_mean]), self.ses_model.re.sigma2)
    }
}

impl Sampler for ThreeLevel {
    fn iterate(&mut self, d: &mut SmcData, acc: &mut Counters, rng: &mut Stream) -> Result<()> {
        self.sub.update(d, rng)?;

        let n = d.n_rows();
        let adj: Vec<f64> = (0..n).map(|r| d.dep[r] - self.dep_re.offset(&d.nest, r)).collect();
        let mean = self.chol_z.solve(&xty(&self.z, &adj));
        self.kappa = draw_precision_normal(&self.chol_z, &mean, self.dep_re.sigma2, rng).as_slice().to_vec();
        let zeta: Vec<f64> = (0..n).map(|r| crate::linalg::dot(self.z.row(r), &self.kappa)).collect();
        let resid: Vec<f64> = (0..n).map(|r| d.dep[r] - zeta[r]).collect();
        let extra: Option<Vec<(f64, f64)>> = (self.means == ClusterMeans::Latent).then(|| {
            let f = self.ses_model.design.n_fixed();
            let lambda = self.ses_model.beta[f];
            let s2 = self.ses_model.re.sigma2;
            (0..d.n_children())
                .map(|c| {
                    let partial = d.ses[c] - self.ses_model.mean_with(c, &[0.0]);
                    (lambda * lambda / s2, lambda * partial / s2)
                })
                .collect()
        });
        self.dep_re.draw_effects_with(&d.nest, &resid, extra.as_deref(), rng);
        self.dep_re.draw_variances(&d.nest, &resid, rng);

        for c in 0..d.n_children() {
            self.ses_model.design.var.row_mut(c)[0] = self.child_mean(d, c);
        }
        self.ses_model.update(&d.ses, None, rng)?;

        for target in CovariateModelPlan::JointThreeLevel(self.means).update_order() {
            if target == "ses" {
                let sd = self.ses_model.re.sigma2.sqrt();
                for i in 0..d.ses_missing.len() {
                    let c = d.ses_missing[i];
                    let prop = self.ses_model.mean_with(c, &[self.child_mean(d, c)]) + sd * std_normal(rng);
                    let (v, ok) = mh_step(d.ses[c], prop, |x| self.sub.loglik_child(d, c, x), rng);
                    d.ses[c] = v;
                    acc.ses.record(ok);
                }
            } else {
                let sd = self.dep_re.sigma2.sqrt();
                for i in 0..d.dep_missing.len() {
                    let r = d.dep_missing[i];
                    let c = d.nest.child_of[r];
                    let ses = d.ses[c];
                    let prop = zeta[r] + self.dep_re.offset(&d.nest, r) + sd * std_normal(rng);
                    let (v, ok) = match self.means {
                        ClusterMeans::Latent => mh_step(d.dep[r], prop, |x| self.sub.loglik_row(d, r, x, ses), rng),
                        ClusterMeans::Manifest => {
                            let rows = d.child_rows(c);
                            let others: f64 = rows.iter().filter(|&&q| q != r).map(|&q| d.dep[q]).sum();
                            let k = rows.len() as f64;
                            let ll = |x: f64| self.sub.loglik_row(d, r, x, ses) + self.ses_loglik(c, ses, (others + x) / k);
                            mh_step(d.dep[r], prop, ll, rng)
                        }
                    };
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

/// SMC imputation with a joint three-level covariate model. Two chains;
/// the potential scale reduction over the second half of burn-in is
/// reported and imputations are split between the chains.
pub fn impute_smc_jm_3l(data: &LongDataset, model: AnalysisModel, cfg: &ImputationConfig) -> Result<ImputedSet<LongDataset>> {
    let means = cfg.cluster_means;
    run_sampler(data, cfg, 2, "smc-jm-3l", |d, _| ThreeLevel::new(d, model, means))
}
