//! Conventional imputers working on the wide layout: single-level and
//! two-level joint modelling (JM) and chained equations (FCS), plus the JAV
//! and passive variants.

mod design;
mod fcs;
mod jm;
pub(crate) mod ri;
mod variants;

pub(crate) use design::PartitionedDesign;
pub use fcs::{impute_fcs_1l_di_wide, impute_fcs_2l_wide};
pub use jm::{impute_jm_1l_di_wide, impute_jm_2l_wide};
pub use variants::{derive_jav_columns, passive_predictor_plan, PassivePlan};

use std::fmt;

use rand::Rng;

use crate::data::{Cell, Column, Frame, WideDataset};
use crate::error::{Error, Result};
use crate::linalg::{collinear_columns, DesignMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    Plain,
    Jav,
    /// Product of each exposure wave with SES, in that wave's model only.
    PassiveC,
    /// All exposure-by-SES products in every exposure model.
    PassiveAll,
    /// Squared exposure terms.
    Passive,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Plain => "plain",
            Variant::Jav => "jav",
            Variant::PassiveC => "passive_c",
            Variant::PassiveAll => "passive_all",
            Variant::Passive => "passive",
        })
    }
}

/// How the three-level SMC sampler represents child means of the
/// exposure in the SES model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ClusterMeans {
    /// Sampled child random effect of the exposure model.
    Latent,
    /// Arithmetic mean of the child's current exposure values.
    Manifest,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImputationConfig {
    pub m: usize,
    pub burn_in: usize,
    /// Iterations between saved imputations (single-chain samplers).
    pub between: usize,
    pub seed: u64,
    pub variant: Variant,
    pub cluster_means: ClusterMeans,
}

impl ImputationConfig {
    pub fn new(m: usize, burn_in: usize, between: usize, seed: u64) -> Self {
        Self { m, burn_in, between, seed, variant: Variant::Plain, cluster_means: ClusterMeans::Latent }
    }

    pub fn jm_default(seed: u64) -> Self {
        Self::new(20, 1000, 100, seed)
    }

    pub fn fcs_default(seed: u64) -> Self {
        Self::new(20, 10, 1, seed)
    }

    pub fn with_variant(mut self, v: Variant) -> Self {
        self.variant = v;
        self
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if self.m < 2 {
            return Err(Error::InvalidArgument(format!("m must be at least 2, got {}", self.m)));
        }
        if self.burn_in == 0 {
            return Err(Error::InvalidArgument("at least one burn-in iteration is required".into()));
        }
        if self.between == 0 {
            return Err(Error::InvalidArgument("between-imputation spacing must be positive".into()));
        }
        Ok(())
    }
}

/// Per-run sampler summaries.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SamplerDiagnostics {
    /// Per chain, per target: mean of the target's imputed cells at each iteration.
    pub traces: Vec<Vec<(String, Vec<f64>)>>,
    /// Metropolis-Hastings acceptance rate per target column.
    pub acceptance: Vec<(String, f64)>,
    /// Potential scale reduction per monitored parameter.
    pub psr: Vec<(String, f64)>,
    pub warnings: Vec<String>,
}

impl SamplerDiagnostics {
    pub fn worst_psr(&self) -> Option<f64> {
        self.psr.iter().map(|(_, v)| *v).fold(None, |a, v| Some(a.map_or(v, |a: f64| a.max(v))))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImputedSet<D> {
    pub datasets: Vec<D>,
    pub diagnostics: SamplerDiagnostics,
}

/// Incomplete columns (imputation targets) and the complete predictors of
/// a wide dataset.
#[derive(Debug, Clone)]
pub(crate) struct WideTask {
    pub targets: Vec<usize>,
    pub predictors: Vec<usize>,
    /// Per target: rows where the target is missing.
    pub missing: Vec<Vec<usize>>,
}

impl WideTask {
    pub fn new(data: &WideDataset) -> Self {
        let mut targets = Vec::new();
        let mut predictors = Vec::new();
        let mut missing = Vec::new();
        for (k, c) in data.columns().iter().enumerate() {
            let miss: Vec<usize> = c.values.iter().enumerate().filter(|(_, v)| v.is_none()).map(|(r, _)| r).collect();
            if miss.is_empty() {
                predictors.push(k);
            } else {
                targets.push(k);
                missing.push(miss);
            }
        }
        Self { targets, predictors, missing }
    }

    /// Complete-predictor design: intercept, predictor columns, then the
    /// optional school dummy indicators.
    pub fn predictor_design(&self, data: &WideDataset, with_dummies: bool) -> Result<DesignMatrix> {
        let n = data.n_rows();
        let cols = data.columns();
        let mut labels = vec!["(Intercept)".to_string()];
        labels.extend(self.predictors.iter().map(|&k| cols[k].meta.name.clone()));
        let dummies = with_dummies.then(|| crate::data::build_dummy_indicators(&data.school_ids()));
        if let Some(d) = &dummies {
            labels.extend(d.labels.iter().cloned());
        }
        let mut x = DesignMatrix::zeros(n, labels);
        for r in 0..n {
            let row = x.row_mut(r);
            row[0] = 1.0;
            for (j, &k) in self.predictors.iter().enumerate() {
                row[1 + j] = cols[k].values[r].expect("complete predictor");
            }
            if let Some(d) = &dummies {
                row[1 + self.predictors.len()..].copy_from_slice(d.row(r));
            }
        }
        let bad = collinear_columns(&x.gram(), &x.labels);
        if !bad.is_empty() {
            return Err(Error::Collinear { columns: bad });
        }
        Ok(x)
    }
}

/// Fill each missing cell with a random draw from the column's observed values.
pub(crate) fn initial_fill<R: Rng + ?Sized>(values: &[Cell], rng: &mut R) -> Result<Vec<f64>> {
    let observed: Vec<f64> = values.iter().flatten().copied().collect();
    if observed.is_empty() {
        return Err(Error::InvalidArgument("cannot impute a column with no observed values".into()));
    }
    Ok(values.iter().map(|v| v.unwrap_or_else(|| observed[rng.random_range(0..observed.len())])).collect())
}

/// Copy a wide dataset, replacing target columns by completed values.
pub(crate) fn complete_wide(data: &WideDataset, targets: &[usize], values: &[Vec<f64>]) -> Result<WideDataset> {
    let mut out = data.clone();
    for (t, &k) in targets.iter().enumerate() {
        let name = data.columns()[k].meta.name.clone();
        out.set_values(&name, values[t].iter().map(|v| Some(*v)).collect())?;
    }
    Ok(out)
}

pub(crate) fn column_name(data: &impl Frame, k: usize) -> String {
    let c: &Column = &data.columns()[k];
    c.meta.name.clone()
}

#[cfg(test)]
pub(crate) mod testutil;
