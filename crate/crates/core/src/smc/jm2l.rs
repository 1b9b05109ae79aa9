use nalgebra::{DMatrix, DVector};

use crate::data::LongDataset;
use crate::error::Result;
use crate::impute::{ImputationConfig, ImputedSet};
use crate::linalg::{cholesky_jittered, draw_precision_normal, inv_gamma, inverse_wishart, std_normal, Chol, DesignMatrix};
use crate::model::AnalysisModel;
use crate::rng::Stream;

use super::{mh_step, run_sampler, Counters, CovariateModelPlan, Sampler, SmcData, Substantive, VAGUE};

/// Joint covariate model: `dep = z a + c + e` per occasion and
/// `ses = w b + s` per child, with `(c, s)` bivariate normal.
struct JointTwoLevel {
    sub: Substantive,
    z: DesignMatrix,
    chol_z: Chol,
    alpha: Vec<f64>,
    sigma2: f64,
    c: Vec<f64>,
    w: DesignMatrix,
    chol_w: Chol,
    gamma: Vec<f64>,
    omega: DMatrix<f64>,
}

impl JointTwoLevel {
    fn new(d: &SmcData, model: AnalysisModel) -> Result<Self> {
        let z = d.row_design(&["wave", "napz1", "sex", "age", "sdq", "sdq.child"], true)?;
        let w = d.child_design(&["napz1", "sex", "age", "sdq.child"], true)?;
        let chol_z = cholesky_jittered(&z.gram(), 10, "exposure model cross-product")?;
        let chol_w = cholesky_jittered(&w.gram(), 10, "SES model cross-product")?;
        let gamma = chol_w.solve(&xty(&w, &d.ses)).as_slice().to_vec();
        let alpha = chol_z.solve(&xty(&z, &d.dep)).as_slice().to_vec();
        Ok(Self {
            sub: Substantive::new(d, model, true, false)?,
            alpha,
            gamma,
            sigma2: crate::scalar::sample_variance(&d.dep),
            c: vec![0.0; d.n_children()],
            omega: DMatrix::identity(2, 2),
            z,
            chol_z,
            w,
            chol_w,
        })
    }

    fn ses_residual(&self, d: &SmcData, c: usize) -> f64 {
        d.ses[c] - crate::linalg::dot(self.w.row(c), &self.gamma)
    }
}

pub(crate) fn xty(x: &DesignMatrix, y: &[f64]) -> DVector<f64> {
    let mut out = DVector::zeros(x.cols());
    for (r, &yr) in y.iter().enumerate() {
        for (a, v) in x.row(r).iter().enumerate() {
            out[a] += v * yr;
        }
    }
    out
}

impl Sampler for JointTwoLevel {
    fn iterate(&mut self, d: &mut SmcData, acc: &mut Counters, rng: &mut Stream) -> Result<()> {
        self.sub.update(d, rng)?;

        let n = d.n_rows();
        let adj: Vec<f64> = (0..n).map(|r| d.dep[r] - self.c[d.nest.child_of[r]]).collect();
        let mean = self.chol_z.solve(&xty(&self.z, &adj));
        self.alpha = draw_precision_normal(&self.chol_z, &mean, self.sigma2, rng).as_slice().to_vec();
        let zeta: Vec<f64> = (0..n).map(|r| crate::linalg::dot(self.z.row(r), &self.alpha)).collect();
        let rss: f64 = (0..n).map(|r| (d.dep[r] - zeta[r] - self.c[d.nest.child_of[r]]).powi(2)).sum();
        self.sigma2 = inv_gamma(VAGUE.0 + n as f64 / 2.0, VAGUE.1 + rss / 2.0, rng);

        let (o11, o12, o22) = (self.omega[(0, 0)], self.omega[(0, 1)], self.omega[(1, 1)]);
        let (k_cs, v_c) = (o12 / o22, o11 - o12 * o12 / o22);
        for c in 0..d.n_children() {
            let rows = d.child_rows(c);
            let sum: f64 = rows.iter().map(|&r| d.dep[r] - zeta[r]).sum();
            let prec = 1.0 / v_c + rows.len() as f64 / self.sigma2;
            let m = (k_cs * self.ses_residual(d, c) / v_c + sum / self.sigma2) / prec;
            self.c[c] = m + std_normal(rng) / prec.sqrt();
        }

        let (k_sc, v_s) = (o12 / o11, o22 - o12 * o12 / o11);
        let ys: Vec<f64> = (0..d.n_children()).map(|c| d.ses[c] - k_sc * self.c[c]).collect();
        let mean = self.chol_w.solve(&xty(&self.w, &ys));
        self.gamma = draw_precision_normal(&self.chol_w, &mean, v_s, rng).as_slice().to_vec();
        let mut scatter = DMatrix::identity(2, 2);
        for c in 0..d.n_children() {
            let v = [self.c[c], self.ses_residual(d, c)];
            for a in 0..2 {
                for b in 0..2 {
                    scatter[(a, b)] += v[a] * v[b];
                }
            }
        }
        self.omega = inverse_wishart((3 + d.n_children()) as f64, &scatter, rng)?;

        let (o11, o12, o22) = (self.omega[(0, 0)], self.omega[(0, 1)], self.omega[(1, 1)]);
        let (k_sc, v_s) = (o12 / o11, o22 - o12 * o12 / o11);
        for target in CovariateModelPlan::JointTwoLevelDi.update_order() {
            if target == "dep" {
                for i in 0..d.dep_missing.len() {
                    let r = d.dep_missing[i];
                    let prop = zeta[r] + self.c[d.nest.child_of[r]] + self.sigma2.sqrt() * std_normal(rng);
                    let ses = d.ses_row(r);
                    let (v, ok) = mh_step(d.dep[r], prop, |x| self.sub.loglik_row(d, r, x, ses), rng);
                    d.dep[r] = v;
                    acc.dep.record(ok);
                }
            } else {
                for i in 0..d.ses_missing.len() {
                    let c = d.ses_missing[i];
                    let m = crate::linalg::dot(self.w.row(c), &self.gamma) + k_sc * self.c[c];
                    let prop = m + v_s.sqrt() * std_normal(rng);
                    let (v, ok) = mh_step(d.ses[c], prop, |x| self.sub.loglik_child(d, c, x), rng);
                    d.ses[c] = v;
                    acc.ses.record(ok);
                }
            }
        }
        Ok(())
    }

    fn monitor(&self) -> Vec<(String, f64)> {
        self.sub.monitor()
    }
}

/// SMC imputation with a joint two-level covariate model and school dummy
/// indicators in every model. One chain.
pub fn impute_smc_jm_2l_di(data: &LongDataset, model: AnalysisModel, cfg: &ImputationConfig) -> Result<ImputedSet<LongDataset>> {
    run_sampler(data, cfg, 1, "smc-jm-2l-di", |d, _| JointTwoLevel::new(d, model))
}
