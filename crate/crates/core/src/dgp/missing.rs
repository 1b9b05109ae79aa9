use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;

use super::ScenarioConfig;
use crate::data::{Frame, LongDataset};
use crate::error::{Error, Result};
use crate::linalg::expit;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mechanism {
    MarCats,
    MarInflated,
}

impl fmt::Display for Mechanism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mechanism::MarCats => "MAR-CATS",
            Mechanism::MarInflated => "MAR-inflated",
        })
    }
}

impl FromStr for Mechanism {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "mar_cats" => Ok(Mechanism::MarCats),
            "mar_inflated" => Ok(Mechanism::MarInflated),
            other => Err(Error::Config(format!("unknown missingness mechanism `{other}`"))),
        }
    }
}

/// Response model for the exposure measured at wave `w`:
/// `logit P(observed) = zeta0[w] + zeta1 * napz_{w+1} + zeta2 * sdq_w`.
#[derive(Debug, Clone, PartialEq)]
pub struct MissingnessSpec {
    pub zeta1: f64,
    pub zeta2: f64,
    pub zeta0: BTreeMap<u8, f64>,
}

impl MissingnessSpec {
    pub fn for_mechanism(m: Mechanism) -> Self {
        let (zeta1, zeta2) = match m {
            Mechanism::MarCats => (1.5, 2.0),
            Mechanism::MarInflated => (3.0, 4.0),
        };
        Self { zeta1, zeta2, zeta0: BTreeMap::new() }
    }
}

/// Realized response indicators per long row (`true` = observed).
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseIndicators {
    pub dep: Vec<bool>,
    pub ses: Vec<bool>,
}

/// Linear predictor without intercept for every long row whose exposure
/// was measured at `exposure_wave`.
fn slopes_part(data: &LongDataset, spec: &MissingnessSpec, exposure_wave: u8) -> Result<Vec<(usize, f64)>> {
    let napz = data.complete("napz")?;
    let sdq = data.complete("sdq")?;
    Ok(data
        .index()
        .iter()
        .enumerate()
        .filter(|(_, h)| h.wave == Some(exposure_wave + 1))
        .map(|(r, _)| (r, spec.zeta1 * napz[r] + spec.zeta2 * sdq[r]))
        .collect())
}

fn missing_fraction(z0: f64, lp: &[(usize, f64)]) -> f64 {
    lp.iter().map(|(_, b)| 1.0 - expit(z0 + b)).sum::<f64>() / lp.len() as f64
}

/// Solve for each wave's intercept so the expected missing fraction equals
/// the target. Bisection starts on `[-20, 20]` and widens the bracket when
/// the predictors' scale puts the root outside it. A zero target returns
/// `+inf` (never missing).
pub fn calibrate_missingness_intercepts(
    data: &LongDataset,
    spec: &MissingnessSpec,
    targets: &BTreeMap<u8, f64>,
) -> Result<BTreeMap<u8, f64>> {
    let mut out = BTreeMap::new();
    for (&wave, &target) in targets {
        if !(0.0..1.0).contains(&target) {
            return Err(Error::InvalidArgument(format!("missingness target {target} outside [0, 1)")));
        }
        if target == 0.0 {
            out.insert(wave, f64::INFINITY);
            continue;
        }
        let lp = slopes_part(data, spec, wave)?;
        if lp.is_empty() {
            return Err(Error::InvalidArgument(format!("no rows for exposure wave {wave}")));
        }
        let f = |z: f64| missing_fraction(z, &lp) - target;
        let (mut lo, mut hi) = (-20.0, 20.0);
        while f(lo) < 0.0 && lo > -1e6 {
            lo *= 2.0;
        }
        while f(hi) > 0.0 && hi < 1e6 {
            hi *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let v = f(mid);
            if v > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-12 || v.abs() < 1e-12 {
                break;
            }
        }
        out.insert(wave, 0.5 * (lo + hi));
    }
    Ok(out)
}

/// Delete exposure cells by the logistic response model and SES for a
/// simple random sample of children. Other columns are untouched.
pub fn impose_missingness<R: Rng + ?Sized>(
    data: &LongDataset,
    spec: &MissingnessSpec,
    cfg: &ScenarioConfig,
    rng: &mut R,
) -> Result<(LongDataset, ResponseIndicators)> {
    let n = data.n_rows();
    let mut dep = data.cells("dep")?.into_owned();
    let mut dep_obs = vec![true; n];
    for (&wave, &z0) in &spec.zeta0 {
        for (r, b) in slopes_part(data, spec, wave)? {
            let p_miss = 1.0 - expit(z0 + b);
            if rng.random::<f64>() < p_miss {
                dep[r] = None;
                dep_obs[r] = false;
            }
        }
    }

    let mut ses = data.cells("ses")?.into_owned();
    let mut ses_obs = vec![true; n];
    let children = data.child_rows();
    let k = (cfg.ses_mcar_rate * children.len() as f64).round() as usize;
    for c in rand::seq::index::sample(rng, children.len(), k.min(children.len())) {
        for &r in &children[c].1 {
            ses[r] = None;
            ses_obs[r] = false;
        }
    }

    let mut out = data.with_values("dep", dep)?;
    out.set_values("ses", ses)?;
    Ok((out, ResponseIndicators { dep: dep_obs, ses: ses_obs }))
}
