//! Substantive-model-compatible imputation: each incomplete covariate is
//! drawn by Metropolis-Hastings with its covariate-model conditional as an
//! independence proposal and the analysis-model likelihood as the
//! acceptance ratio.

mod jm2l;
mod jm3l;
mod sm2l;

pub use jm2l::impute_smc_jm_2l_di;
pub use jm3l::impute_smc_jm_3l;
pub use sm2l::impute_smc_sm_2l_di;

use rand::Rng;

use crate::data::{build_dummy_indicators, Frame, LongDataset};
use crate::error::{Error, Result};
use crate::impute::ri::{Nesting, RandomEffects};
use crate::impute::{ClusterMeans, ImputationConfig, ImputedSet, PartitionedDesign, SamplerDiagnostics};
use crate::linalg::{cholesky_jittered, draw_precision_normal, normal_logpdf, DesignMatrix};
use crate::model::AnalysisModel;
use crate::rng::{substream, Stream};

/// Vague inverse-gamma prior on scalar variances.
pub(crate) const VAGUE: (f64, f64) = (0.001, 0.001);
const PSR_WARN: f64 = 1.10;
const LOW_ACCEPTANCE: f64 = 0.01;
const ACCEPTANCE_WINDOW: usize = 200;

/// One independence Metropolis-Hastings update. Consumes exactly one
/// uniform. A non-finite proposal is rejected; a non-finite current state
/// is always left.
pub fn mh_step<R: Rng + ?Sized>(current: f64, proposal: f64, mut loglik: impl FnMut(f64) -> f64, rng: &mut R) -> (f64, bool) {
    let u: f64 = rng.random();
    let lp = loglik(proposal);
    if !proposal.is_finite() || !lp.is_finite() {
        return (current, false);
    }
    let lc = loglik(current);
    if !current.is_finite() || !lc.is_finite() {
        return (proposal, true);
    }
    if u.ln() < lp - lc {
        (proposal, true)
    } else {
        (current, false)
    }
}

/// Potential scale reduction factor of equal-length chains.
pub fn psr(chains: &[Vec<f64>]) -> Result<f64> {
    if chains.len() < 2 {
        return Err(Error::InvalidArgument("PSR needs at least two chains".into()));
    }
    let n = chains[0].len();
    if n < 2 || chains.iter().any(|c| c.len() != n) {
        return Err(Error::InvalidArgument("PSR needs equal-length chains of at least two draws".into()));
    }
    let means: Vec<f64> = chains.iter().map(|c| crate::scalar::mean(c)).collect();
    let w = crate::scalar::mean(&chains.iter().map(|c| crate::scalar::sample_variance(c)).collect::<Vec<_>>());
    let b = n as f64 * crate::scalar::sample_variance(&means);
    if w == 0.0 {
        return Ok(if b == 0.0 { 1.0 } else { f64::INFINITY });
    }
    let nf = n as f64;
    Ok((((nf - 1.0) / nf * w + b / nf) / w).sqrt())
}

/// Factorisation of the covariate model used by an SMC sampler.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CovariateModelPlan {
    /// Joint two-level model for exposure and SES, school dummy indicators.
    JointTwoLevelDi,
    /// SES model, then an exposure model conditional on SES.
    SequentialTwoLevelDi,
    /// Joint three-level model with child means of the exposure.
    JointThreeLevel(ClusterMeans),
}

impl CovariateModelPlan {
    /// Order in which incomplete variables are updated within an iteration.
    pub fn update_order(&self) -> [&'static str; 2] {
        match self {
            CovariateModelPlan::JointTwoLevelDi => ["dep", "ses"],
            _ => ["ses", "dep"],
        }
    }
}

/// Current completed values and fixed covariates, in long row order.
pub(crate) struct SmcData<'a> {
    source: &'a LongDataset,
    pub nest: Nesting,
    pub y: Vec<f64>,
    pub wave: Vec<f64>,
    pub sdq: Vec<f64>,
    /// Child and school means of `sdq`, per row.
    pub sdq_child: Vec<f64>,
    pub sdq_school: Vec<f64>,
    pub napz1: Vec<f64>,
    pub sex: Vec<f64>,
    pub age: Vec<f64>,
    pub dep: Vec<f64>,
    pub dep_missing: Vec<usize>,
    /// Per child.
    pub ses: Vec<f64>,
    pub ses_missing: Vec<usize>,
    /// First long row of each child.
    pub child_row: Vec<usize>,
}

impl<'a> SmcData<'a> {
    pub fn new<R: Rng + ?Sized>(source: &'a LongDataset, rng: &mut R) -> Result<Self> {
        let nest = Nesting::all(source.index());
        let child_row: Vec<usize> = nest.child_rows.iter().map(|rows| rows[0]).collect();
        let dep_cells = source.cells("dep")?;
        let ses_rows = source.cells("ses")?;
        let ses_cells: Vec<Option<f64>> = child_row.iter().map(|&r| ses_rows[r]).collect();
        let sdq = source.complete("sdq")?;
        let group_mean = |groups: &[Vec<usize>], of: &[usize]| -> Vec<f64> {
            let means: Vec<f64> =
                groups.iter().map(|rows| rows.iter().map(|&r| sdq[r]).sum::<f64>() / rows.len() as f64).collect();
            of.iter().map(|&g| means[g]).collect()
        };
        let school_rows: Vec<Vec<usize>> = nest
            .school_children
            .iter()
            .map(|cs| cs.iter().flat_map(|&c| nest.child_rows[c].iter().copied()).collect())
            .collect();
        let sdq_child = group_mean(&nest.child_rows, &nest.child_of);
        let sdq_school = group_mean(&school_rows, &nest.school_of);
        Ok(Self {
            y: source.complete("napz")?,
            wave: source.complete("wave")?,
            sdq,
            sdq_child,
            sdq_school,
            napz1: source.complete("napz1")?,
            sex: source.complete("sex")?,
            age: source.complete("age")?,
            dep_missing: (0..dep_cells.len()).filter(|&r| dep_cells[r].is_none()).collect(),
            dep: crate::impute::initial_fill(&dep_cells, rng)?,
            ses_missing: (0..ses_cells.len()).filter(|&c| ses_cells[c].is_none()).collect(),
            ses: crate::impute::initial_fill(&ses_cells, rng)?,
            child_row,
            nest,
            source,
        })
    }

    pub fn nest_index(&self) -> &[crate::data::HierIndex] {
        self.source.index()
    }

    #[inline]
    pub fn ses_row(&self, r: usize) -> f64 {
        self.ses[self.nest.child_of[r]]
    }

    pub fn n_rows(&self) -> usize {
        self.y.len()
    }

    pub fn n_children(&self) -> usize {
        self.ses.len()
    }

    pub fn child_rows(&self, c: usize) -> &[usize] {
        &self.nest.child_rows[c]
    }

    fn completed(&self) -> Result<LongDataset> {
        let ses: Vec<Option<f64>> = (0..self.n_rows()).map(|r| Some(self.ses_row(r))).collect();
        let out = self
            .source
            .with_values("dep", self.dep.iter().map(|v| Some(*v)).collect())?
            .with_values("ses", ses)?;
        out.check_levels()?;
        Ok(out)
    }

    /// Row-level design: intercept, the named row covariates, then optional
    /// school dummy indicators.
    pub fn row_design(&self, covariates: &[&str], dummies: bool) -> Result<DesignMatrix> {
        let cols: Vec<&[f64]> = covariates.iter().map(|c| self.row_covariate(c)).collect::<Result<_>>()?;
        let rows: Vec<usize> = (0..self.n_rows()).collect();
        Ok(self.design(&rows, covariates, &cols, dummies))
    }

    /// Child-level design over each child's first row.
    pub fn child_design(&self, covariates: &[&str], dummies: bool) -> Result<DesignMatrix> {
        let cols: Vec<&[f64]> = covariates.iter().map(|c| self.row_covariate(c)).collect::<Result<_>>()?;
        Ok(self.design(&self.child_row, covariates, &cols, dummies))
    }

    fn row_covariate(&self, name: &str) -> Result<&[f64]> {
        Ok(match name {
            "wave" => &self.wave,
            "sdq" => &self.sdq,
            "sdq.child" => &self.sdq_child,
            "sdq.school" => &self.sdq_school,
            "napz1" => &self.napz1,
            "sex" => &self.sex,
            "age" => &self.age,
            other => return Err(Error::UnknownColumn(other.to_string())),
        })
    }

    fn design(&self, rows: &[usize], names: &[&str], cols: &[&[f64]], dummies: bool) -> DesignMatrix {
        let schools: Vec<u32> = rows.iter().map(|&r| self.source.index()[r].school).collect();
        let di = dummies.then(|| build_dummy_indicators(&schools));
        let mut labels = vec!["(Intercept)".to_string()];
        labels.extend(names.iter().map(|s| s.to_string()));
        if let Some(d) = &di {
            labels.extend(d.labels.iter().cloned());
        }
        let mut x = DesignMatrix::zeros(rows.len(), labels);
        for (k, &r) in rows.iter().enumerate() {
            let row = x.row_mut(k);
            row[0] = 1.0;
            for (j, c) in cols.iter().enumerate() {
                row[1 + j] = c[r];
            }
            if let Some(d) = &di {
                row[1 + cols.len()..].copy_from_slice(d.row(k));
            }
        }
        x
    }
}

/// Normal regression block with fixed-part partitioned design and random
/// intercepts: draws coefficients, effects and variances in turn.
pub(crate) struct Regression {
    pub design: PartitionedDesign,
    pub nest: Nesting,
    pub re: RandomEffects,
    pub beta: Vec<f64>,
    pub fixed_eta: Vec<f64>,
}

impl Regression {
    pub fn new(fixed: DesignMatrix, var_labels: Vec<String>, nest: Nesting, school: bool, child: bool, init_var: f64) -> Self {
        let re = RandomEffects::new(&nest, school, child, VAGUE, init_var);
        let design = PartitionedDesign::new(fixed, var_labels);
        let beta = vec![0.0; design.cols()];
        let fixed_eta = vec![0.0; design.rows()];
        Self { design, nest, re, beta, fixed_eta }
    }

    /// One Gibbs sweep given the response and (already filled) variable
    /// columns. `child_extra` adds information on child effects.
    pub fn update(&mut self, y: &[f64], child_extra: Option<&[(f64, f64)]>, rng: &mut Stream) -> Result<()> {
        let chol = cholesky_jittered(&self.design.gram(), 10, "regression cross-product")?;
        let adj: Vec<f64> = (0..y.len()).map(|k| y[k] - self.re.offset(&self.nest, k)).collect();
        let mean = chol.solve(&self.design.xty(&adj));
        self.beta = draw_precision_normal(&chol, &mean, self.re.sigma2, rng).as_slice().to_vec();
        let resid: Vec<f64> = (0..y.len()).map(|k| y[k] - self.design.row_dot(k, &self.beta)).collect();
        self.re.draw_effects_with(&self.nest, &resid, child_extra, rng);
        self.re.draw_variances(&self.nest, &resid, rng);
        self.fixed_eta = self.design.fixed_eta(&self.beta);
        Ok(())
    }

    /// Linear predictor of row `k` with the variable columns given, plus
    /// random intercepts.
    #[inline]
    pub fn mean_with(&self, k: usize, var: &[f64]) -> f64 {
        let f = self.design.n_fixed();
        self.fixed_eta[k] + crate::linalg::dot(var, &self.beta[f..]) + self.re.offset(&self.nest, k)
    }
}

/// The analysis model as used inside the samplers. Variable columns are
/// `dep`, the model's extra term and `ses`.
pub(crate) struct Substantive {
    model: AnalysisModel,
    pub reg: Regression,
}

impl Substantive {
    pub fn new(d: &SmcData, model: AnalysisModel, dummies: bool, school: bool) -> Result<Self> {
        let fixed = d.row_design(&["wave", "napz1", "sex", "age"], dummies)?;
        let var = vec!["dep".to_string(), model.extra_label().to_string(), "ses".to_string()];
        let init = crate::scalar::sample_variance(&d.y);
        let nest = d.nest.clone();
        Ok(Self { model, reg: Regression::new(fixed, var, nest, school, true, init) })
    }

    pub fn update(&mut self, d: &SmcData, rng: &mut Stream) -> Result<()> {
        for r in 0..d.n_rows() {
            let ses = d.ses_row(r);
            let row = self.reg.design.var.row_mut(r);
            row[0] = d.dep[r];
            row[1] = self.model.extra(d.dep[r], d.wave[r], ses);
            row[2] = ses;
        }
        self.reg.update(&d.y, None, rng)
    }

    #[inline]
    pub fn loglik_row(&self, d: &SmcData, r: usize, dep: f64, ses: f64) -> f64 {
        let var = [dep, self.model.extra(dep, d.wave[r], ses), ses];
        normal_logpdf(d.y[r], self.reg.mean_with(r, &var), self.reg.re.sigma2)
    }

    /// Analysis-model log-likelihood of all rows of child `c` with SES `ses`.
    pub fn loglik_child(&self, d: &SmcData, c: usize, ses: f64) -> f64 {
        d.child_rows(c).iter().map(|&r| self.loglik_row(d, r, d.dep[r], ses)).sum()
    }

    /// Fixed effects (excluding dummy indicators) and variances to monitor.
    pub fn monitor(&self) -> Vec<(String, f64)> {
        let labels = self.reg.design.labels();
        let mut out: Vec<(String, f64)> = labels
            .iter()
            .zip(&self.reg.beta)
            .filter(|(l, _)| !l.starts_with("school_"))
            .map(|(l, b)| (l.clone(), *b))
            .collect();
        if self.reg.re.school.is_some() {
            out.push(("var(school)".into(), self.reg.re.tau_school));
        }
        out.push(("var(child)".into(), self.reg.re.tau_child));
        out.push(("var(residual)".into(), self.reg.re.sigma2));
        out
    }
}

/// Accepted/proposed counts for one target with a rolling low-acceptance
/// check.
#[derive(Debug, Clone, Default)]
pub(crate) struct Acceptance {
    pub accepted: usize,
    pub proposed: usize,
    window: (usize, usize, usize),
    pub low_windows: usize,
}

impl Acceptance {
    pub fn record(&mut self, accepted: bool) {
        self.proposed += 1;
        self.window.1 += 1;
        if accepted {
            self.accepted += 1;
            self.window.0 += 1;
        }
    }

    fn end_iteration(&mut self) {
        self.window.2 += 1;
        if self.window.2 == ACCEPTANCE_WINDOW {
            if self.window.1 > 0 && (self.window.0 as f64 / self.window.1 as f64) < LOW_ACCEPTANCE {
                self.low_windows += 1;
            }
            self.window = (0, 0, 0);
        }
    }

    pub fn rate(&self) -> f64 {
        if self.proposed == 0 {
            f64::NAN
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }
}

pub(crate) struct Counters {
    pub dep: Acceptance,
    pub ses: Acceptance,
}

pub(crate) trait Sampler {
    fn iterate(&mut self, d: &mut SmcData, acc: &mut Counters, rng: &mut Stream) -> Result<()>;
    fn monitor(&self) -> Vec<(String, f64)>;
}

pub(crate) struct ChainOutput {
    pub datasets: Vec<LongDataset>,
    pub traces: Vec<(String, Vec<f64>)>,
    pub monitor_labels: Vec<String>,
    /// Per monitored parameter, its value at every burn-in iteration.
    pub burn_in_draws: Vec<Vec<f64>>,
    pub counters: Counters,
}

/// Run one chain: `burn_in` iterations, then save a completed dataset and
/// repeat every `between` iterations until `saves` datasets exist.
pub(crate) fn run_chain<S: Sampler>(
    sampler: &mut S,
    d: &mut SmcData,
    burn_in: usize,
    between: usize,
    saves: usize,
    rng: &mut Stream,
) -> Result<ChainOutput> {
    let total = burn_in + saves.saturating_sub(1) * between;
    let mut counters = Counters { dep: Acceptance::default(), ses: Acceptance::default() };
    let mut datasets = Vec::with_capacity(saves);
    let mut dep_trace = Vec::with_capacity(total);
    let mut ses_trace = Vec::with_capacity(total);
    let mut monitor_labels = Vec::new();
    let mut burn_in_draws: Vec<Vec<f64>> = Vec::new();
    let avg = |v: &[f64], idx: &[usize]| if idx.is_empty() { f64::NAN } else { idx.iter().map(|&i| v[i]).sum::<f64>() / idx.len() as f64 };
    for it in 1..=total {
        sampler.iterate(d, &mut counters, rng)?;
        counters.dep.end_iteration();
        counters.ses.end_iteration();
        dep_trace.push(avg(&d.dep, &d.dep_missing));
        ses_trace.push(avg(&d.ses, &d.ses_missing));
        if it <= burn_in {
            let mon = sampler.monitor();
            if burn_in_draws.is_empty() {
                monitor_labels = mon.iter().map(|(l, _)| l.clone()).collect();
                burn_in_draws = vec![Vec::with_capacity(burn_in); mon.len()];
            }
            for (k, (_, v)) in mon.into_iter().enumerate() {
                burn_in_draws[k].push(v);
            }
        }
        if saves > 0 && it >= burn_in && (it - burn_in) % between == 0 {
            datasets.push(d.completed()?);
        }
    }
    Ok(ChainOutput {
        datasets,
        traces: vec![("dep".into(), dep_trace), ("ses".into(), ses_trace)],
        monitor_labels,
        burn_in_draws,
        counters,
    })
}

/// Run `chains` chains splitting `cfg.m` imputations between them, and
/// assemble diagnostics (PSR over the second half of burn-in when more
/// than one chain is run).
pub(crate) fn run_sampler<S: Sampler>(
    source: &LongDataset,
    cfg: &ImputationConfig,
    chains: usize,
    tag: &str,
    mut make: impl FnMut(&SmcData, &mut Stream) -> Result<S>,
) -> Result<ImputedSet<LongDataset>> {
    cfg.validate()?;
    let mut datasets = Vec::with_capacity(cfg.m);
    let mut diagnostics = SamplerDiagnostics::default();
    let mut outputs = Vec::with_capacity(chains);
    let (mut dep_acc, mut ses_acc) = (Acceptance::default(), Acceptance::default());
    for chain in 0..chains {
        let saves = cfg.m / chains + usize::from(chain < cfg.m % chains);
        let mut rng = substream(cfg.seed, &format!("{tag}/chain/{chain}"));
        let mut d = SmcData::new(source, &mut rng)?;
        let mut sampler = make(&d, &mut rng)?;
        let out = run_chain(&mut sampler, &mut d, cfg.burn_in, cfg.between, saves, &mut rng)?;
        for (name, a) in [("dep", &out.counters.dep), ("ses", &out.counters.ses)] {
            if a.low_windows > 0 {
                diagnostics.warnings.push(format!(
                    "chain {chain}: acceptance for {name} below {LOW_ACCEPTANCE} over {} window(s) of {ACCEPTANCE_WINDOW} iterations",
                    a.low_windows
                ));
            }
        }
        dep_acc.accepted += out.counters.dep.accepted;
        dep_acc.proposed += out.counters.dep.proposed;
        ses_acc.accepted += out.counters.ses.accepted;
        ses_acc.proposed += out.counters.ses.proposed;
        outputs.push(out);
    }
    diagnostics.acceptance = vec![("dep".into(), dep_acc.rate()), ("ses".into(), ses_acc.rate())];
    if chains > 1 {
        let half = cfg.burn_in / 2;
        for (k, label) in outputs[0].monitor_labels.iter().enumerate() {
            let series: Vec<Vec<f64>> = outputs.iter().map(|o| o.burn_in_draws[k][half..].to_vec()).collect();
            if let Ok(r) = psr(&series) {
                if r >= PSR_WARN {
                    diagnostics.warnings.push(format!("PSR for {label} is {r:.3}"));
                }
                diagnostics.psr.push((label.clone(), r));
            }
        }
    }
    for out in outputs {
        diagnostics.traces.push(out.traces);
        datasets.extend(out.datasets);
    }
    Ok(ImputedSet { datasets, diagnostics })
}


#[cfg(test)]
mod tests;
