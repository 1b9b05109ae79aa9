use std::collections::HashMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use mlmi::dgp::load_scenarios;
use mlmi::harness::{
    collect_results, emit_plots, emit_tables, reference_truth, run_scenario, summarise, Method, Preset, ResultRecord,
    RunConfig,
};
use mlmi::model::Parameter;

#[derive(Parser)]
#[command(name = "mlmi", version, about = "Multilevel multiple imputation simulation harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate replications of one or more scenarios and append results.
    Run {
        /// Scenario configuration file.
        #[arg(long)]
        config: PathBuf,
        /// Scenario names, comma separated, or `all`.
        #[arg(long, default_value = "all")]
        scenario: String,
        /// Method labels, comma separated, or `all` for every method of the model.
        #[arg(long, default_value = "all")]
        methods: String,
        /// Number of replications (default: the preset's).
        #[arg(long)]
        reps: Option<usize>,
        /// Output directory; each scenario writes to a subdirectory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "desk")]
        preset: String,
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Summarise results into per-parameter metric tables.
    Metrics {
        /// Directory holding results (searched one level deep).
        #[arg(long = "in")]
        input: PathBuf,
        /// `reference`, or a CSV with columns model,parameter,value.
        #[arg(long, default_value = "reference")]
        truth: String,
        /// Table directory parent (default: the input directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Draw box plots of the estimates.
    Plot {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value = "reference")]
        truth: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

type TruthTable = HashMap<(String, Parameter), f64>;

fn load_truth(spec: &str) -> Result<Option<TruthTable>> {
    if spec == "reference" {
        return Ok(None);
    }
    let mut rdr = csv::Reader::from_path(spec).with_context(|| format!("reading truth file {spec}"))?;
    let mut table = HashMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        if rec.len() != 3 {
            bail!("truth file rows must be model,parameter,value");
        }
        let model: mlmi::model::AnalysisModel = rec[0].parse()?;
        let value: f64 = rec[2].trim().parse().with_context(|| format!("bad value `{}`", &rec[2]))?;
        table.insert((model.to_string(), rec[1].parse()?), value);
    }
    Ok(Some(table))
}

fn truth_fn(table: Option<TruthTable>) -> impl Fn(&ResultRecord) -> Option<f64> {
    move |r| match &table {
        None => reference_truth(r),
        Some(t) => t.get(&(r.model.clone(), r.parameter)).copied(),
    }
}

fn run(
    config: &Path,
    scenario: &str,
    methods: &str,
    reps: Option<usize>,
    out: &Path,
    preset: &str,
    workers: usize,
) -> Result<()> {
    let preset: Preset = preset.parse()?;
    let all = load_scenarios(config)?;
    let chosen: Vec<_> = if scenario == "all" {
        all
    } else {
        let names: Vec<&str> = scenario.split(',').map(str::trim).collect();
        for n in &names {
            if !all.iter().any(|s| s.name == *n) {
                bail!("scenario `{n}` not found in {}", config.display());
            }
        }
        all.into_iter().filter(|s| names.contains(&s.name.as_str())).collect()
    };
    for sc in chosen {
        let name = sc.name.clone();
        let mut cfg = RunConfig::new(sc, preset, out.join(&name));
        if methods != "all" {
            cfg.methods = methods.split(',').map(str::parse).collect::<mlmi::Result<Vec<Method>>>()?;
        }
        if let Some(r) = reps {
            cfg.replications = r;
        }
        cfg.workers = workers;
        let s = run_scenario(&cfg)?;
        println!(
            "{name}: ran {} replications, skipped {}, {} method failures, {:.1}s",
            s.replications_run, s.replications_skipped, s.failures, s.seconds
        );
    }
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run { config, scenario, methods, reps, out, preset, workers } => {
            run(&config, &scenario, &methods, reps, &out, &preset, workers)
        }
        Command::Metrics { input, truth, out } => {
            let records = collect_results(&input)?;
            if records.is_empty() {
                bail!("no results found under {}", input.display());
            }
            let rows = summarise(&records, truth_fn(load_truth(&truth)?))?;
            for path in emit_tables(&rows, out.as_deref().unwrap_or(&input))? {
                println!("{}", path.display());
            }
            Ok(())
        }
        Command::Plot { input, truth, out } => {
            let records = collect_results(&input)?;
            for path in emit_plots(&records, truth_fn(load_truth(&truth)?), out.as_deref().unwrap_or(&input))? {
                println!("{}", path.display());
            }
            Ok(())
        }
    }
}
