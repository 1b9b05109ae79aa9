//! Fitting the three-level analysis model to completed datasets and
//! combining the results with Rubin's rules.

use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::data::LongDataset;
use crate::error::{Error, Result};
use crate::lmm::{fit_lmm, LmmSpec, RandomIntercepts, Term};
use crate::model::{AnalysisModel, ExtraTerm};
use crate::scalar::{mean, sample_variance, Real};

/// Fixed terms in coefficient order: intercept, dep, wave, extra, napz1,
/// sex, ses, age.
pub fn substantive_spec(model: AnalysisModel, extra: ExtraTerm) -> LmmSpec {
    let extra_term = match (extra, model) {
        (ExtraTerm::Stored, m) if m.jav_base().is_some() => Term::main(m.jav_base().unwrap()),
        (_, AnalysisModel::Model1) => Term::product("dep", "wave"),
        (_, AnalysisModel::Model2) => Term::product("dep", "ses"),
        (_, AnalysisModel::Model3) => Term::square("dep"),
    };
    LmmSpec::new(
        "napz",
        vec![
            Term::Intercept,
            Term::main("dep"),
            Term::main("wave"),
            extra_term,
            Term::main("napz1"),
            Term::main("sex"),
            Term::main("ses"),
            Term::main("age"),
        ],
        RandomIntercepts::SCHOOL_CHILD,
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubstantiveFit {
    /// (estimate, SE) of the exposure main effect.
    pub beta1: (f64, f64),
    /// (estimate, SE) of the interaction or quadratic term.
    pub beta3: (f64, f64),
    pub vc: [f64; 3],
    pub df_com: f64,
    pub converged: bool,
}

pub fn fit_substantive(model: AnalysisModel, extra: ExtraTerm, data: &LongDataset) -> Result<SubstantiveFit> {
    let fit = fit_lmm(&substantive_spec(model, extra), data)?;
    Ok(SubstantiveFit {
        beta1: (fit.beta[1], fit.se[1]),
        beta3: (fit.beta[3], fit.se[3]),
        vc: fit.vc,
        df_com: fit.df_residual() as f64,
        converged: fit.converged,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pooled<T> {
    pub m: usize,
    pub qbar: T,
    pub wbar: T,
    pub b: T,
    pub t: T,
    pub df: T,
    pub lower: T,
    pub upper: T,
}

impl<T: Real> Pooled<T> {
    pub fn se(&self) -> T {
        self.t.sqrt()
    }

    pub fn covers(&self, truth: T) -> bool {
        self.lower <= truth && truth <= self.upper
    }
}

/// Rubin's rules with the Barnard-Rubin small-sample degrees of freedom.
/// `estimates` holds (point estimate, standard error) per imputation.
pub fn rubin_pool<T: Real>(estimates: &[(T, T)], df_com: T) -> Result<Pooled<T>> {
    let m = estimates.len();
    if m < 2 {
        return Err(Error::InvalidArgument(format!("pooling needs at least 2 imputations, got {m}")));
    }
    let q: Vec<T> = estimates.iter().map(|e| e.0).collect();
    let w: Vec<T> = estimates.iter().map(|e| e.1 * e.1).collect();
    let qbar = mean(&q);
    let wbar = mean(&w);
    let b = sample_variance(&q);
    let inflate = T::one() + T::one() / T::from_usize_lossy(m);
    let t = wbar + inflate * b;

    let nu_obs_factor = |lambda: T| (df_com + T::one()) / (df_com + T::lit(3.0)) * df_com * (T::one() - lambda);
    let df = if b <= T::zero() || t <= T::zero() {
        nu_obs_factor(T::zero())
    } else {
        let lambda = inflate * b / t;
        let nu_old = T::from_usize_lossy(m - 1) / (lambda * lambda);
        let nu_obs = nu_obs_factor(lambda);
        nu_old * nu_obs / (nu_old + nu_obs)
    };
    let crit = T::lit(t_quantile_975(df.as_f64()));
    let half = crit * t.sqrt();
    Ok(Pooled { m, qbar, wbar, b, t, df, lower: qbar - half, upper: qbar + half })
}

fn t_quantile_975(df: f64) -> f64 {
    if !df.is_finite() || df > 1e7 {
        return 1.959_963_984_540_054;
    }
    StudentsT::new(0.0, 1.0, df.max(1e-3)).map(|d| d.inverse_cdf(0.975)).unwrap_or(f64::NAN)
}

/// Component-wise mean of variance-component triples.
pub fn pool_variance_components<T: Real>(triples: &[[T; 3]]) -> Result<[T; 3]> {
    if triples.is_empty() {
        return Err(Error::InvalidArgument("no variance components to pool".into()));
    }
    let col = |k: usize| mean(&triples.iter().map(|t| t[k]).collect::<Vec<_>>());
    Ok([col(0), col(1), col(2)])
}

/// Pooled result of analysing one replication's completed datasets.
#[derive(Debug, Clone, PartialEq)]
pub struct RepEstimate {
    pub beta1: Pooled<f64>,
    pub beta3: Pooled<f64>,
    pub vc: [f64; 3],
    pub all_converged: bool,
}

pub fn analyse_completed(model: AnalysisModel, extra: ExtraTerm, completed: &[LongDataset]) -> Result<RepEstimate> {
    let fits = completed.iter().map(|d| fit_substantive(model, extra, d)).collect::<Result<Vec<_>>>()?;
    let df_com = fits[0].df_com;
    let b1: Vec<(f64, f64)> = fits.iter().map(|f| f.beta1).collect();
    let b3: Vec<(f64, f64)> = fits.iter().map(|f| f.beta3).collect();
    let vcs: Vec<[f64; 3]> = fits.iter().map(|f| f.vc).collect();
    Ok(RepEstimate {
        beta1: rubin_pool(&b1, df_com)?,
        beta3: rubin_pool(&b3, df_com)?,
        vc: pool_variance_components(&vcs)?,
        all_converged: fits.iter().all(|f| f.converged),
    })
}
