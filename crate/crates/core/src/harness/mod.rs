//! Simulation harness: replications of a scenario across methods, result
//! files, performance metrics, tables and plots.

mod methods;
mod metrics;
mod output;

pub use methods::{impute, impute_and_analyse, Family, Method, Preset};
pub use metrics::{compute_metrics, summarise, Metrics, SummaryRow};
pub use output::{
    emit_plots, emit_tables, parse_table, read_results, write_manifest, ResultsWriter, TableRow, DIAGNOSTICS_FILE,
    MANIFEST_FILE, RESULTS_FILE,
};

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::time::Instant;

use rayon::prelude::*;

use crate::data::Frame;
use crate::dgp::{simulate, ParamSet, ScenarioConfig};
use crate::error::{Error, Result};
use crate::impute::SamplerDiagnostics;
use crate::model::Parameter;
use crate::pooling::RepEstimate;
use crate::rng::{derive_seed, replication_seed, substream};

/// One pooled estimate of one parameter for one replication and method.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRecord {
    pub scenario: String,
    pub cluster_scenario: String,
    pub mechanism: String,
    pub model: String,
    pub method: String,
    pub replication: usize,
    pub rep_seed: u64,
    pub method_seed: u64,
    pub parameter: Parameter,
    pub estimate: f64,
    /// Pooled standard error; NaN for variance components.
    pub se: f64,
    pub lower: f64,
    pub upper: f64,
    pub df: f64,
    pub converged: bool,
    /// Seed of the failed first attempt when the method was retried.
    pub retry_of: Option<u64>,
    pub error: Option<String>,
}

impl ResultRecord {
    pub fn covers(&self, truth: f64) -> Option<bool> {
        (self.lower.is_finite() && self.upper.is_finite()).then(|| self.lower <= truth && truth <= self.upper)
    }
}

/// Per-replication diagnostic value (missingness, acceptance, PSR, ...).
#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticRecord {
    pub scenario: String,
    pub replication: usize,
    pub method: String,
    pub key: String,
    pub value: String,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub scenario: ScenarioConfig,
    pub methods: Vec<Method>,
    pub replications: usize,
    pub preset: Preset,
    pub out_dir: PathBuf,
    pub workers: usize,
    /// Replications processed between appends to the results file.
    pub batch: usize,
}

impl RunConfig {
    pub fn new(scenario: ScenarioConfig, preset: Preset, out_dir: PathBuf) -> Self {
        let methods = Method::for_model(scenario.model);
        Self { scenario, methods, replications: preset.replications(), preset, out_dir, workers: 1, batch: 8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub replications_run: usize,
    pub replications_skipped: usize,
    pub failures: usize,
    pub seconds: f64,
}

pub struct Replication {
    pub results: Vec<ResultRecord>,
    pub diagnostics: Vec<DiagnosticRecord>,
}

fn records(
    cfg: &ScenarioConfig,
    method: &Method,
    replication: usize,
    rep_seed: u64,
    method_seed: u64,
    outcome: std::result::Result<&RepEstimate, &str>,
    retry_of: Option<u64>,
) -> Vec<ResultRecord> {
    let base = |parameter: Parameter| ResultRecord {
        scenario: cfg.name.clone(),
        cluster_scenario: cfg.cluster_label(),
        mechanism: cfg.mechanism.to_string(),
        model: cfg.model.to_string(),
        method: method.label(),
        replication,
        rep_seed,
        method_seed,
        parameter,
        estimate: f64::NAN,
        se: f64::NAN,
        lower: f64::NAN,
        upper: f64::NAN,
        df: f64::NAN,
        converged: false,
        retry_of,
        error: None,
    };
    Parameter::ALL
        .into_iter()
        .map(|p| {
            let mut r = base(p);
            match outcome {
                Ok(est) => {
                    r.converged = est.all_converged;
                    let pooled = match p {
                        Parameter::Beta1 => Some(&est.beta1),
                        Parameter::Beta3 => Some(&est.beta3),
                        _ => None,
                    };
                    match pooled {
                        Some(q) => {
                            r.estimate = q.qbar;
                            r.se = q.se();
                            r.lower = q.lower;
                            r.upper = q.upper;
                            r.df = q.df;
                        }
                        None => {
                            r.estimate = est.vc[match p {
                                Parameter::Vc3 => 0,
                                Parameter::Vc2 => 1,
                                _ => 2,
                            }];
                        }
                    }
                }
                Err(e) => r.error = Some(e.to_string()),
            }
            r
        })
        .collect()
}

fn diagnostic_records(cfg: &ScenarioConfig, replication: usize, method: &str, d: &SamplerDiagnostics) -> Vec<DiagnosticRecord> {
    let rec = |key: String, value: String| DiagnosticRecord {
        scenario: cfg.name.clone(),
        replication,
        method: method.to_string(),
        key,
        value,
    };
    let mut out: Vec<DiagnosticRecord> =
        d.acceptance.iter().map(|(t, v)| rec(format!("acceptance.{t}"), format!("{v:.4}"))).collect();
    if let Some(w) = d.worst_psr() {
        out.push(rec("psr.max".into(), format!("{w:.4}")));
    }
    out.extend(d.warnings.iter().map(|w| rec("warning".into(), w.clone())));
    out
}

/// Simulate replication `replication` of a scenario and run every method.
/// A failing method is retried once with a fresh seed; if the retry also
/// fails the error is recorded and the other methods proceed.
pub fn run_replication(cfg: &ScenarioConfig, methods: &[Method], preset: Preset, replication: usize) -> Result<Replication> {
    let params = ParamSet::reference(cfg.model);
    let rep_seed = replication_seed(cfg.seed, replication);
    let sim = simulate(cfg, &params, &mut substream(rep_seed, "data"))?;
    let mut results = Vec::new();
    let mut diagnostics = Vec::new();
    let diag = |key: &str, value: String| DiagnosticRecord {
        scenario: cfg.name.clone(),
        replication,
        method: String::new(),
        key: key.to_string(),
        value,
    };
    for (w, z) in &sim.spec.zeta0 {
        diagnostics.push(diag(&format!("zeta0.wave{w}"), format!("{z:.6}")));
    }
    let dep = sim.incomplete.cells("dep")?;
    let waves: Vec<f64> = sim.incomplete.complete("wave")?;
    for w in crate::dgp::ANALYSIS_WAVES {
        let rows: Vec<usize> = (0..dep.len()).filter(|&r| waves[r] == f64::from(w)).collect();
        let miss = rows.iter().filter(|&&r| dep[r].is_none()).count() as f64 / rows.len() as f64;
        diagnostics.push(diag(&format!("missing.dep{}", w - 1), format!("{miss:.4}")));
    }
    for method in methods {
        let label = method.label();
        let method_seed = derive_seed(rep_seed, &label);
        let attempt = |seed: u64| impute_and_analyse(method, cfg.model, &sim.incomplete, &preset.config(method, seed));
        let (outcome, used_seed, retry_of) = match attempt(method_seed) {
            Ok(v) => (Ok(v), method_seed, None),
            Err(first) => {
                let fresh = derive_seed(method_seed, "retry");
                diagnostics.push(DiagnosticRecord {
                    scenario: cfg.name.clone(),
                    replication,
                    method: label.clone(),
                    key: "retry".into(),
                    value: format!("seed {method_seed} failed ({first}); retried with seed {fresh}"),
                });
                (attempt(fresh).map_err(|e| e.to_string()), fresh, Some(method_seed))
            }
        };
        match &outcome {
            Ok((est, d)) => {
                results.extend(records(cfg, method, replication, rep_seed, used_seed, Ok(est), retry_of));
                diagnostics.extend(diagnostic_records(cfg, replication, &label, d));
            }
            Err(e) => results.extend(records(cfg, method, replication, rep_seed, used_seed, Err(e), retry_of)),
        }
    }
    Ok(Replication { results, diagnostics })
}

/// Run (or resume) a scenario: replications already present in the results
/// file are skipped, new ones are appended in replication order.
pub fn run_scenario(run: &RunConfig) -> Result<RunSummary> {
    run.scenario.validate()?;
    for m in &run.methods {
        m.check(run.scenario.model)?;
    }
    if run.workers == 0 {
        return Err(Error::InvalidArgument("workers must be positive".into()));
    }
    std::fs::create_dir_all(&run.out_dir)?;
    let started = Instant::now();
    let results_path = run.out_dir.join(RESULTS_FILE);
    let done: BTreeSet<usize> = if results_path.exists() {
        let labels: BTreeSet<String> = run.methods.iter().map(Method::label).collect();
        let existing = read_results(&results_path)?;
        let mut per_rep: std::collections::BTreeMap<usize, BTreeSet<String>> = Default::default();
        for r in existing.iter().filter(|r| r.scenario == run.scenario.name) {
            per_rep.entry(r.replication).or_default().insert(r.method.clone());
        }
        per_rep.into_iter().filter(|(_, m)| labels.is_subset(m)).map(|(k, _)| k).collect()
    } else {
        BTreeSet::new()
    };
    write_manifest(run)?;
    let mut writer = ResultsWriter::open(&run.out_dir)?;
    let todo: Vec<usize> = (0..run.replications).filter(|r| !done.contains(r)).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(run.workers)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    let mut failures = 0;
    for chunk in todo.chunks(run.batch.max(1)) {
        let reps: Vec<Result<Replication>> = pool.install(|| {
            chunk.par_iter().map(|&i| run_replication(&run.scenario, &run.methods, run.preset, i)).collect()
        });
        for rep in reps {
            let rep = rep?;
            failures += rep.results.iter().filter(|r| r.error.is_some() && r.parameter == Parameter::Beta1).count();
            writer.append(&rep)?;
        }
    }
    Ok(RunSummary {
        replications_run: todo.len(),
        replications_skipped: done.len(),
        failures,
        seconds: started.elapsed().as_secs_f64(),
    })
}

/// True value of a record's parameter under the reference parameter set.
pub fn reference_truth(r: &ResultRecord) -> Option<f64> {
    let model: crate::model::AnalysisModel = r.model.parse().ok()?;
    model.truths().into_iter().find(|(p, _)| *p == r.parameter).map(|(_, v)| v)
}

/// Read every results file in `dir` and its immediate subdirectories.
pub fn collect_results(dir: &std::path::Path) -> Result<Vec<ResultRecord>> {
    let mut paths = vec![dir.join(RESULTS_FILE)];
    let mut subdirs: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    subdirs.sort();
    paths.extend(subdirs.into_iter().map(|d| d.join(RESULTS_FILE)));
    let mut out = Vec::new();
    for p in paths.into_iter().filter(|p| p.is_file()) {
        out.extend(read_results(&p)?);
    }
    Ok(out)
}
