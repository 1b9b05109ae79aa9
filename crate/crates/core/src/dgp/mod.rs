//! Complete-data generation for the three-level school/child/wave design
//! and the MAR/MCAR missingness processes.

mod missing;

pub use missing::{
    calibrate_missingness_intercepts, impose_missingness, Mechanism, MissingnessSpec, ResponseIndicators,
};

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::config::{read_sections, Section};
use crate::data::{Column, ColumnMeta, HierIndex, Level, LongDataset, Role};
use crate::error::{Error, Result};
use crate::model::AnalysisModel;

/// Exposure measurement waves and the analysis waves they feed.
pub const EXPOSURE_WAVES: [u8; 3] = [2, 4, 6];
pub const ANALYSIS_WAVES: [u8; 3] = [3, 5, 7];

/// Generator coefficients and standard deviations.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    pub age_lower: f64,
    pub age_upper: f64,
    pub female_prop: f64,
    /// Baseline NAPLAN: intercept, sex, age, SES.
    pub eta: [f64; 4],
    pub sigma_psi: f64,
    /// Depression: intercept, age, sex, napz1, SES, wave.
    pub delta: [f64; 6],
    pub sigma_u3: f64,
    pub sigma_u2: f64,
    pub sigma_phi: f64,
    /// Outcome: intercept, dep, wave, extra term, napz1, sex, SES, age.
    pub beta: [f64; 8],
    pub sigma3: f64,
    pub sigma2: f64,
    pub sigma1: f64,
    /// SDQ: intercept, dep, wave.
    pub gamma: [f64; 3],
    pub sigma_v3: f64,
    pub sigma_v2: f64,
    pub sigma_eps: f64,
}

impl ParamSet {
    pub fn reference(model: AnalysisModel) -> Self {
        Self {
            age_lower: 7.0,
            age_upper: 10.0,
            female_prop: 0.5,
            eta: [-0.74, 0.23, 0.07, 0.22],
            sigma_psi: 1.0,
            delta: [-0.7, 0.1, -0.46, -0.01, -0.22, 0.02],
            sigma_u3: 0.1,
            sigma_u2: 0.9,
            sigma_phi: 1.5,
            beta: [2.0, model.true_beta1(), -0.01, model.true_beta3(), 0.71, 0.14, -0.01, -0.20],
            sigma3: 0.2,
            sigma2: 0.7,
            sigma1: 0.7,
            gamma: [16.2, 2.5, -0.1],
            sigma_v3: 0.6,
            sigma_v2: 4.1,
            sigma_eps: 2.8,
        }
    }

    /// Outcome variance components (school, child, residual).
    pub fn true_variance_components(&self) -> [f64; 3] {
        [self.sigma3 * self.sigma3, self.sigma2 * self.sigma2, self.sigma1 * self.sigma1]
    }

    pub fn validate(&self) -> Result<()> {
        let sds = [
            self.sigma_psi,
            self.sigma_u3,
            self.sigma_u2,
            self.sigma_phi,
            self.sigma3,
            self.sigma2,
            self.sigma1,
            self.sigma_v3,
            self.sigma_v2,
            self.sigma_eps,
        ];
        if sds.iter().any(|s| !(*s >= 0.0)) {
            return Err(Error::InvalidArgument("standard deviations must be non-negative".into()));
        }
        if !(self.age_lower < self.age_upper) {
            return Err(Error::InvalidArgument("age bounds must satisfy a < b".into()));
        }
        if !(0.0..=1.0).contains(&self.female_prop) {
            return Err(Error::InvalidArgument("female proportion must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub name: String,
    pub n_schools: usize,
    pub school_size: usize,
    pub model: AnalysisModel,
    pub mechanism: Mechanism,
    /// Exposure measurement wave -> target missing proportion.
    pub target_missing: BTreeMap<u8, f64>,
    pub ses_mcar_rate: f64,
    pub seed: u64,
}

impl ScenarioConfig {
    pub fn new(name: &str, n_schools: usize, school_size: usize, model: AnalysisModel, mechanism: Mechanism) -> Self {
        Self {
            name: name.to_string(),
            n_schools,
            school_size,
            model,
            mechanism,
            target_missing: default_targets(),
            ses_mcar_rate: 0.10,
            seed: 20_240_501,
        }
    }

    pub fn n_children(&self) -> usize {
        self.n_schools * self.school_size
    }

    pub fn cluster_label(&self) -> String {
        format!("{} clusters", self.n_schools)
    }

    fn from_section(s: &Section) -> Result<Self> {
        let req = |k: &str| s.get(k).ok_or_else(|| Error::Config(format!("[{}] missing key `{k}`", s.name)));
        let model: AnalysisModel = req("model")?.parse()?;
        let mechanism: Mechanism = s.get("mechanism").unwrap_or("MAR_CATS").parse()?;
        let mut cfg = ScenarioConfig::new(
            &s.name,
            s.parse("n_schools")?.unwrap_or(40),
            s.parse("school_size")?.unwrap_or(30),
            model,
            mechanism,
        );
        if let Some(t) = s.get("target_missing") {
            cfg.target_missing = parse_targets(t)?;
        }
        if let Some(r) = s.parse("ses_mcar_rate")? {
            cfg.ses_mcar_rate = r;
        }
        if let Some(seed) = s.parse("seed")? {
            cfg.seed = seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_schools == 0 || self.school_size == 0 {
            return Err(Error::InvalidArgument("cluster counts must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.ses_mcar_rate) {
            return Err(Error::InvalidArgument("ses_mcar_rate must lie in [0, 1]".into()));
        }
        for (w, p) in &self.target_missing {
            if !EXPOSURE_WAVES.contains(w) || !(0.0..1.0).contains(p) {
                return Err(Error::InvalidArgument(format!("bad missingness target {w}:{p}")));
            }
        }
        Ok(())
    }
}

pub fn default_targets() -> BTreeMap<u8, f64> {
    BTreeMap::from([(2, 0.15), (4, 0.20), (6, 0.30)])
}

fn parse_targets(s: &str) -> Result<BTreeMap<u8, f64>> {
    s.split(',')
        .map(|item| {
            let (w, p) = item
                .split_once(':')
                .ok_or_else(|| Error::Config(format!("target `{item}` must be wave:proportion")))?;
            let w = w.trim().parse().map_err(|_| Error::Config(format!("bad wave `{w}`")))?;
            let p = p.trim().parse().map_err(|_| Error::Config(format!("bad proportion `{p}`")))?;
            Ok((w, p))
        })
        .collect()
}

/// Read every scenario section of a configuration file.
pub fn load_scenarios(path: &Path) -> Result<Vec<ScenarioConfig>> {
    read_sections(path)?.iter().filter(|s| !s.name.is_empty()).map(ScenarioConfig::from_section).collect()
}

pub fn parse_scenarios(text: &str) -> Result<Vec<ScenarioConfig>> {
    crate::config::parse_sections(text)?
        .iter()
        .filter(|s| !s.name.is_empty())
        .map(ScenarioConfig::from_section)
        .collect()
}

fn normal(sd: f64) -> Normal<f64> {
    Normal::new(0.0, sd).expect("validated standard deviation")
}

/// Simulate one complete long dataset (3 analysis-wave rows per child).
///
/// Columns: `napz` (outcome at wave k), `dep` and `sdq` (measured at k-1),
/// and the child-level `napz1`, `sex` (1 = female), `ses`, `age`.
pub fn generate_complete<R: Rng + ?Sized>(
    cfg: &ScenarioConfig,
    params: &ParamSet,
    rng: &mut R,
) -> Result<LongDataset> {
    cfg.validate()?;
    params.validate()?;
    let p = params;
    let n = cfg.n_children();

    let ages = Uniform::new(p.age_lower, p.age_upper).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let age: Vec<f64> = (0..n).map(|_| ages.sample(rng)).collect();

    let n_female = (p.female_prop * n as f64).floor() as usize;
    let mut sex = vec![0.0; n];
    sex[..n_female].iter_mut().for_each(|s| *s = 1.0);
    sex.shuffle(rng);

    let std = normal(1.0);
    let ses: Vec<f64> = (0..n).map(|_| std.sample(rng)).collect();
    let psi = normal(p.sigma_psi);
    let napz1: Vec<f64> = (0..n)
        .map(|c| p.eta[0] + p.eta[1] * sex[c] + p.eta[2] * age[c] + p.eta[3] * ses[c] + psi.sample(rng))
        .collect();

    let school_of = |c: usize| c / cfg.school_size;
    let u3: Vec<f64> = (0..cfg.n_schools).map(|_| normal(p.sigma_u3).sample(rng)).collect();
    let u2: Vec<f64> = (0..n).map(|_| normal(p.sigma_u2).sample(rng)).collect();
    let phi = normal(p.sigma_phi);
    let mut dep = vec![[0.0; 3]; n];
    for c in 0..n {
        for (k, &w) in EXPOSURE_WAVES.iter().enumerate() {
            dep[c][k] = p.delta[0]
                + p.delta[1] * age[c]
                + p.delta[2] * sex[c]
                + p.delta[3] * napz1[c]
                + p.delta[4] * ses[c]
                + p.delta[5] * w as f64
                + u3[school_of(c)]
                + u2[c]
                + phi.sample(rng);
        }
    }

    let a3: Vec<f64> = (0..cfg.n_schools).map(|_| normal(p.sigma3).sample(rng)).collect();
    let a2: Vec<f64> = (0..n).map(|_| normal(p.sigma2).sample(rng)).collect();
    let eps = normal(p.sigma1);
    let mut napz = vec![[0.0; 3]; n];
    for c in 0..n {
        for (k, &w) in ANALYSIS_WAVES.iter().enumerate() {
            let d = dep[c][k];
            let wave = w as f64;
            napz[c][k] = p.beta[0]
                + p.beta[1] * d
                + p.beta[2] * wave
                + p.beta[3] * cfg.model.extra(d, wave, ses[c])
                + p.beta[4] * napz1[c]
                + p.beta[5] * sex[c]
                + p.beta[6] * ses[c]
                + p.beta[7] * age[c]
                + a3[school_of(c)]
                + a2[c]
                + eps.sample(rng);
        }
    }

    let v3: Vec<f64> = (0..cfg.n_schools).map(|_| normal(p.sigma_v3).sample(rng)).collect();
    let v2: Vec<f64> = (0..n).map(|_| normal(p.sigma_v2).sample(rng)).collect();
    let e = normal(p.sigma_eps);
    let mut sdq = vec![[0.0; 3]; n];
    for c in 0..n {
        for (k, &w) in EXPOSURE_WAVES.iter().enumerate() {
            sdq[c][k] = p.gamma[0]
                + p.gamma[1] * dep[c][k]
                + p.gamma[2] * w as f64
                + v3[school_of(c)]
                + v2[c]
                + e.sample(rng);
        }
    }

    let rows = 3 * n;
    let mut index = Vec::with_capacity(rows);
    for c in 0..n {
        for &w in &ANALYSIS_WAVES {
            index.push(HierIndex {
                school: (school_of(c) + 1) as u32,
                child: (c % cfg.school_size + 1) as u32,
                wave: Some(w),
            });
        }
    }
    let per_row = |m: &[[f64; 3]]| -> Vec<Option<f64>> { m.iter().flat_map(|r| r.iter().map(|v| Some(*v))).collect() };
    let per_child = |v: &[f64]| -> Vec<Option<f64>> { v.iter().flat_map(|x| [Some(*x); 3]).collect() };
    let columns = vec![
        Column::new(ColumnMeta::new("napz", Role::Outcome, Level::Occasion), per_row(&napz)),
        Column::new(ColumnMeta::new("dep", Role::Exposure, Level::Occasion).lagged(-1), per_row(&dep)),
        Column::new(ColumnMeta::new("sdq", Role::Auxiliary, Level::Occasion).lagged(-1), per_row(&sdq)),
        Column::new(ColumnMeta::new("napz1", Role::Confounder, Level::Child), per_child(&napz1)),
        Column::new(ColumnMeta::new("sex", Role::Confounder, Level::Child), per_child(&sex)),
        Column::new(ColumnMeta::new("ses", Role::Confounder, Level::Child), per_child(&ses)),
        Column::new(ColumnMeta::new("age", Role::Confounder, Level::Child), per_child(&age)),
    ];
    LongDataset::new(index, columns)
}

/// A generated replication: complete data, its incomplete copy and the
/// calibrated intercepts.
#[derive(Debug, Clone)]
pub struct Simulated {
    pub complete: LongDataset,
    pub incomplete: LongDataset,
    pub spec: MissingnessSpec,
    pub response: ResponseIndicators,
}

/// Generate, calibrate the missingness intercepts on this dataset, and
/// impose missingness.
pub fn simulate<R: Rng + ?Sized>(cfg: &ScenarioConfig, params: &ParamSet, rng: &mut R) -> Result<Simulated> {
    let complete = generate_complete(cfg, params, rng)?;
    let mut spec = MissingnessSpec::for_mechanism(cfg.mechanism);
    spec.zeta0 = calibrate_missingness_intercepts(&complete, &spec, &cfg.target_missing)?;
    let (incomplete, response) = impose_missingness(&complete, &spec, cfg, rng)?;
    Ok(Simulated { complete, incomplete, spec, response })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Frame;
    use crate::rng::stream;

    fn cfg() -> ScenarioConfig {
        ScenarioConfig::new("t", 40, 30, AnalysisModel::Model1, Mechanism::MarCats)
    }

    #[test]
    fn exact_female_count() {
        let d = generate_complete(&cfg(), &ParamSet::reference(AnalysisModel::Model1), &mut stream(1)).unwrap();
        let sex = d.complete("sex").unwrap();
        let females: f64 = sex.iter().step_by(3).sum();
        assert_eq!(females, 600.0);
        assert_eq!(d.n_rows(), 3600);
    }

    #[test]
    fn zero_noise_depression_equals_linear_predictor() {
        let mut p = ParamSet::reference(AnalysisModel::Model2);
        p.sigma_psi = 0.0;
        p.sigma_phi = 0.0;
        p.sigma_u2 = 0.0;
        p.sigma_u3 = 0.0;
        let d = generate_complete(&cfg(), &p, &mut stream(2)).unwrap();
        let dep = d.complete("dep").unwrap();
        let (age, sex, napz1, ses) =
            (d.complete("age").unwrap(), d.complete("sex").unwrap(), d.complete("napz1").unwrap(), d.complete("ses").unwrap());
        for (r, h) in d.index().iter().enumerate() {
            let w = (h.wave.unwrap() - 1) as f64;
            let lp = p.delta[0] + p.delta[1] * age[r] + p.delta[2] * sex[r] + p.delta[3] * napz1[r] + p.delta[4] * ses[r] + p.delta[5] * w;
            assert!((dep[r] - lp).abs() < 1e-12);
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let p = ParamSet::reference(AnalysisModel::Model3);
        let a = generate_complete(&cfg(), &p, &mut stream(9)).unwrap();
        let b = generate_complete(&cfg(), &p, &mut stream(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn school_effect_variance_of_exposure() {
        // School means of the exposure residual (after the fixed part) have
        // variance near sigma_u3^2 + (sigma_u2^2 + sigma_phi^2 / 3) / 30.
        let mut p = ParamSet::reference(AnalysisModel::Model1);
        p.sigma_u3 = 0.8;
        let c = ScenarioConfig::new("t", 400, 30, AnalysisModel::Model1, Mechanism::MarCats);
        let d = generate_complete(&c, &p, &mut stream(3)).unwrap();
        let dep = d.complete("dep").unwrap();
        let (age, sex, napz1, ses) =
            (d.complete("age").unwrap(), d.complete("sex").unwrap(), d.complete("napz1").unwrap(), d.complete("ses").unwrap());
        let mut sums = vec![0.0; 400];
        for (r, h) in d.index().iter().enumerate() {
            let w = (h.wave.unwrap() - 1) as f64;
            let lp = p.delta[0] + p.delta[1] * age[r] + p.delta[2] * sex[r] + p.delta[3] * napz1[r] + p.delta[4] * ses[r] + p.delta[5] * w;
            sums[h.school as usize - 1] += (dep[r] - lp) / 90.0;
        }
        let v = crate::scalar::sample_variance(&sums);
        let expect = 0.64 + (0.81 + 2.25 / 3.0) / 30.0;
        // sampling SD of a variance estimate from 400 groups ~ expect * sqrt(2/399)
        assert!((v - expect).abs() < 3.0 * expect * (2.0f64 / 399.0).sqrt(), "{v} vs {expect}");
    }

    #[test]
    fn config_sections_parse() {
        let text = "[m2_c10_inflated]\nmodel = model2\nn_schools = 10\nschool_size = 120\nmechanism = MAR_inflated\ntarget_missing = 2:0.1, 4:0.2, 6:0.3\nseed = 7\n";
        let s = parse_scenarios(text).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].model, AnalysisModel::Model2);
        assert_eq!(s[0].mechanism, Mechanism::MarInflated);
        assert_eq!(s[0].n_children(), 1200);
        assert_eq!(s[0].target_missing[&2], 0.1);
        assert_eq!(s[0].seed, 7);
        assert!(parse_scenarios("[x]\nn_schools = 3\n").is_err());
    }

    #[test]
    fn invalid_inputs_rejected() {
        let mut c = cfg();
        c.n_schools = 0;
        assert!(generate_complete(&c, &ParamSet::reference(AnalysisModel::Model1), &mut stream(1)).is_err());
        let mut p = ParamSet::reference(AnalysisModel::Model1);
        p.sigma1 = -1.0;
        assert!(generate_complete(&cfg(), &p, &mut stream(1)).is_err());
    }
}
