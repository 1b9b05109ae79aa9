//! Chained equations: each incomplete column is imputed in turn from a
//! normal regression on every other column (single-level with school dummy
//! indicators, or with a school random intercept).

use std::collections::HashMap;

use crate::data::{Derivation, Frame, WideDataset};
use crate::error::{Error, Result};
use crate::linalg::{chi_squared, cholesky_jittered, draw_precision_normal, std_normal, DesignMatrix};
use crate::rng::{substream, Stream};

use super::ri::{Nesting, RandomEffects};
use super::{
    column_name, complete_wide, initial_fill, ImputationConfig, ImputedSet, PartitionedDesign, PassivePlan,
    SamplerDiagnostics, WideTask,
};

/// Inner Gibbs iterations of the two-level target model per visit.
const INNER_ITERATIONS: usize = 25;
const RIDGE: f64 = 1e-5;
/// Inverse-Wishart(2, 1) on a scalar variance, as an inverse gamma.
const TWO_LEVEL_PRIOR: (f64, f64) = (1.0, 0.5);

/// Where a conditional-model predictor takes its values from.
#[derive(Debug, Clone)]
enum Source {
    Target(usize),
    Fixed(usize),
}

#[derive(Debug, Clone)]
enum VarTerm {
    Column(Source),
    Derived(Derivation, Source, Option<Source>),
}

struct TargetModel {
    target: usize,
    obs: Vec<usize>,
    miss: Vec<usize>,
    y_obs: Vec<f64>,
    terms: Vec<VarTerm>,
    design: PartitionedDesign,
    miss_fixed: DesignMatrix,
    nest: Option<Nesting>,
}

struct Engine<'a> {
    data: &'a WideDataset,
    fixed_values: Vec<Vec<f64>>,
    models: Vec<TargetModel>,
    order: Vec<usize>,
    names: Vec<String>,
    n_targets: usize,
    two_level: bool,
}

impl Engine<'_> {
    fn value(&self, src: &Source, values: &[Vec<f64>], r: usize) -> f64 {
        match src {
            Source::Target(t) => values[*t][r],
            Source::Fixed(k) => self.fixed_values[*k][r],
        }
    }

    fn term_value(&self, term: &VarTerm, values: &[Vec<f64>], r: usize) -> f64 {
        match term {
            VarTerm::Column(s) => self.value(s, values, r),
            VarTerm::Derived(d, a, b) => {
                let va = self.value(a, values, r);
                let vb = b.as_ref().map_or(va, |b| self.value(b, values, r));
                d.apply(va, vb)
            }
        }
    }
}

fn build<'a>(data: &'a WideDataset, plan: &PassivePlan, two_level: bool) -> Result<Engine<'a>> {
    let task = WideTask::new(data);
    let fixed = task.predictor_design(data, !two_level)?;
    let names: Vec<String> = task.targets.iter().map(|&k| column_name(data, k)).collect();
    let pred_names: Vec<String> = task.predictors.iter().map(|&k| column_name(data, k)).collect();
    let fixed_values = task.predictors.iter().map(|&k| data.complete(&column_name(data, k))).collect::<Result<_>>()?;
    let resolve = |name: &str| -> Result<Source> {
        if let Some(t) = names.iter().position(|n| n == name) {
            return Ok(Source::Target(t));
        }
        if let Some(k) = pred_names.iter().position(|n| n == name) {
            return Ok(Source::Fixed(k));
        }
        Err(Error::UnknownColumn(name.to_string()))
    };
    for key in plan.keys() {
        if !names.contains(key) && !pred_names.contains(key) {
            return Err(Error::UnknownColumn(key.clone()));
        }
    }

    let mut models = Vec::new();
    for (t, &col) in task.targets.iter().enumerate() {
        let cells = &data.columns()[col].values;
        let obs: Vec<usize> = (0..cells.len()).filter(|&r| cells[r].is_some()).collect();
        let miss = task.missing[t].clone();
        let mut terms: Vec<VarTerm> = (0..names.len()).filter(|&u| u != t).map(|u| VarTerm::Column(Source::Target(u))).collect();
        let mut labels: Vec<String> = names.iter().enumerate().filter(|&(u, _)| u != t).map(|(_, n)| n.clone()).collect();
        for d in plan.get(&names[t]).map(Vec::as_slice).unwrap_or(&[]) {
            let (a, b) = match d {
                Derivation::Product(a, b) => (resolve(a)?, Some(resolve(b)?)),
                Derivation::Square(a) => (resolve(a)?, None),
            };
            terms.push(VarTerm::Derived(d.clone(), a, b));
            labels.push(d.to_string());
        }
        let sub = |rows: &[usize]| {
            let mut m = DesignMatrix::zeros(rows.len(), fixed.labels.clone());
            for (k, &r) in rows.iter().enumerate() {
                m.row_mut(k).copy_from_slice(fixed.row(r));
            }
            m
        };
        let design = PartitionedDesign::new(sub(&obs), labels);
        let nest = two_level.then(|| Nesting::new(data.index(), &obs));
        models.push(TargetModel {
            target: t,
            y_obs: obs.iter().map(|&r| cells[r].unwrap()).collect(),
            miss_fixed: sub(&miss),
            obs,
            miss,
            terms,
            design,
            nest,
        });
    }
    let mut order: Vec<usize> = (0..names.len()).collect();
    order.sort_by_key(|&t| models[t].miss.len());
    Ok(Engine { data, fixed_values, models, order, n_targets: names.len(), names, two_level })
}

/// Per-target state of the two-level conditional model, kept across cycles.
struct TwoLevelState {
    beta: Vec<f64>,
    re: RandomEffects,
}

fn visit(
    eng: &Engine,
    model: &mut TargetModel,
    state: Option<&mut TwoLevelState>,
    values: &mut [Vec<f64>],
    rng: &mut Stream,
) -> Result<()> {
    for (k, &r) in model.obs.iter().enumerate() {
        for (j, term) in model.terms.iter().enumerate() {
            model.design.var.row_mut(k)[j] = eng.term_value(term, values, r);
        }
    }
    let mut gram = model.design.gram();
    if gram.iter().any(|v| !v.is_finite()) {
        return Err(Error::Diverged(format!("conditional model for {}", eng.names[model.target])));
    }
    let p = gram.nrows();
    for i in 0..p {
        gram[(i, i)] += RIDGE * gram[(i, i)].max(1e-12);
    }
    let chol = cholesky_jittered(&gram, 10, "conditional model cross-product")?;
    let f = model.design.n_fixed();
    let miss_var: Vec<Vec<f64>> = model
        .miss
        .iter()
        .map(|&r| model.terms.iter().map(|t| eng.term_value(t, values, r)).collect())
        .collect();
    let predict = |beta: &[f64], k: usize| {
        crate::linalg::dot(model.miss_fixed.row(k), &beta[..f]) + crate::linalg::dot(&miss_var[k], &beta[f..])
    };

    let t = model.target;
    match state {
        None => {
            let beta_hat = chol.solve(&model.design.xty(&model.y_obs));
            let rss: f64 = (0..model.obs.len())
                .map(|k| (model.y_obs[k] - model.design.row_dot(k, beta_hat.as_slice())).powi(2))
                .sum();
            let df = model.obs.len().saturating_sub(p).max(1) as f64;
            let sigma2 = rss / chi_squared(df, rng);
            let beta = draw_precision_normal(&chol, &beta_hat, sigma2, rng);
            for (k, &r) in model.miss.iter().enumerate() {
                values[t][r] = predict(beta.as_slice(), k) + sigma2.sqrt() * std_normal(rng);
            }
        }
        Some(st) => {
            let nest = model.nest.as_ref().expect("two-level nesting");
            let n = model.obs.len();
            let mut resid = vec![0.0; n];
            for _ in 0..INNER_ITERATIONS {
                let adj: Vec<f64> = (0..n).map(|k| model.y_obs[k] - st.re.offset(nest, k)).collect();
                let mean = chol.solve(&model.design.xty(&adj));
                st.beta = draw_precision_normal(&chol, &mean, st.re.sigma2, rng).as_slice().to_vec();
                for k in 0..n {
                    resid[k] = model.y_obs[k] - model.design.row_dot(k, &st.beta);
                }
                st.re.draw_effects(nest, &resid, rng);
                st.re.draw_variances(nest, &resid, rng);
            }
            let school_effect: HashMap<u32, f64> = model
                .obs
                .iter()
                .enumerate()
                .map(|(k, &r)| (eng.data.index()[r].school, st.re.school.as_ref().unwrap()[nest.school_of[k]]))
                .collect();
            for (k, &r) in model.miss.iter().enumerate() {
                let school = eng.data.index()[r].school;
                let u = match school_effect.get(&school) {
                    Some(u) => *u,
                    None => st.re.tau_school.sqrt() * std_normal(rng),
                };
                values[t][r] = predict(&st.beta, k) + u + st.re.sigma2.sqrt() * std_normal(rng);
            }
        }
    }
    Ok(())
}

fn run(data: &WideDataset, cfg: &ImputationConfig, plan: &PassivePlan, two_level: bool) -> Result<ImputedSet<WideDataset>> {
    cfg.validate()?;
    let mut eng = build(data, plan, two_level)?;
    let mut datasets = Vec::with_capacity(cfg.m);
    let mut diagnostics = SamplerDiagnostics::default();
    let targets: Vec<usize> = WideTask::new(data).targets;
    for chain in 0..cfg.m {
        let mut rng = substream(cfg.seed, &format!("fcs/chain/{chain}"));
        let mut values: Vec<Vec<f64>> =
            targets.iter().map(|&k| initial_fill(&data.columns()[k].values, &mut rng)).collect::<Result<_>>()?;
        let mut states: Vec<Option<TwoLevelState>> = eng
            .models
            .iter()
            .map(|m| {
                eng.two_level.then(|| TwoLevelState {
                    beta: vec![0.0; m.design.cols()],
                    re: RandomEffects::new(m.nest.as_ref().unwrap(), true, false, TWO_LEVEL_PRIOR, 1.0),
                })
            })
            .collect();
        let mut traces: Vec<Vec<f64>> = vec![Vec::with_capacity(cfg.burn_in); eng.n_targets];
        let mut models = std::mem::take(&mut eng.models);
        for _ in 0..cfg.burn_in {
            for &t in &eng.order {
                visit(&eng, &mut models[t], states[t].as_mut(), &mut values, &mut rng)?;
            }
            for (t, m) in models.iter().enumerate() {
                traces[t].push(m.miss.iter().map(|&r| values[t][r]).sum::<f64>() / m.miss.len() as f64);
            }
        }
        eng.models = models;
        diagnostics.traces.push(eng.names.iter().cloned().zip(traces).collect());
        datasets.push(complete_wide(data, &targets, &values)?);
    }
    Ok(ImputedSet { datasets, diagnostics })
}

/// FCS with single-level normal conditionals and school dummy indicators.
/// `cfg.burn_in` is the number of cycles per chain; each imputation comes
/// from an independent chain.
pub fn impute_fcs_1l_di_wide(data: &WideDataset, cfg: &ImputationConfig, plan: &PassivePlan) -> Result<ImputedSet<WideDataset>> {
    run(data, cfg, plan, false)
}

/// FCS with two-level (school random intercept) normal conditionals.
pub fn impute_fcs_2l_wide(data: &WideDataset, cfg: &ImputationConfig, plan: &PassivePlan) -> Result<ImputedSet<WideDataset>> {
    run(data, cfg, plan, true)
}
